"""Weighted overall-performance maximization.

Alternates closed-form receiver updates with a log-barrier interior-point
pass over the transmit beams.  The transmit subproblem is scalarized as

    weight_sens * (weighted sensing MSEs)
  + weight_comp * (weighted computation MSEs)
  + weight_comm * (rate-weighted comm MSEs)

subject to one power constraint per sensor, and is solved by cyclic
per-beam Newton steps on the barrier-augmented objective: for fixed
receivers and fixed other beams, each beam sees an exact convex quadratic
plus its sensor's barrier term.  The three objective scales are normalized
by single-objective optima so the mixing weights are comparable.
"""

from dataclasses import dataclass, field
import logging
import math

import numpy as np

from . import metrics
from .metrics import Responses, RxBeams, TxBeams, responses
from .numerics import hermitian_solve
from .receivers import LN2, ReceiverRule, update_receivers
from .scenario import ChannelSet, SystemConfig, generate_channels

log = logging.getLogger("iscc")

_ARMIJO_C = 1e-4
_MAX_BACKTRACKS = 60


class InfeasibleStart(RuntimeError):
    """Initial beams violate a per-sensor power budget."""


@dataclass
class WopmOptions:
    alpha: np.ndarray = field(default_factory=lambda: np.full(3, 1.0 / 3.0))
    barrier_init: float = 1.0
    barrier_scale: float = 10.0
    barrier_gap_tol: float = 1e-9
    newton_tol: float = 1e-10
    max_newton_iter: int = 40
    max_sweeps: int = 30
    sweep_tol: float = 1e-11
    max_outer_iter: int = 20
    outer_tol: float = 1e-4
    receiver_rule: ReceiverRule = ReceiverRule.MMSE
    subspace_provider: object = None   # callable(ch, tx, rx) -> {(kind,k,s): basis}
    normalize: bool = True

    def __post_init__(self):
        self.alpha = np.asarray(self.alpha, dtype=float)
        if self.alpha.shape != (3,) or np.any(self.alpha < 0):
            raise ValueError("alpha must be three nonnegative weights")
        if abs(self.alpha.sum() - 1.0) > 1e-12:
            raise ValueError("alpha must sum to 1")


@dataclass
class EffectiveWeights:
    """Per-metric coefficients of the scalarized transmit objective."""

    sens: np.ndarray   # (I,)
    comp: np.ndarray   # (L,) already divided by K^2
    comm: np.ndarray   # (K, J) includes the rate weights omega


def effective_weights(cfg: SystemConfig, rx: RxBeams, alpha_tilde):
    K = cfg.n_sensors
    return EffectiveWeights(
        sens=alpha_tilde[0] * cfg.weight_sens,
        comp=alpha_tilde[1] * cfg.weight_comp / K**2,
        comm=alpha_tilde[2] * cfg.weight_comm * rx.omega,
    )


def scalarized_objective(ch: ChannelSet, tx: TxBeams, rx: RxBeams,
                         w: EffectiveWeights, resp: Responses | None = None):
    r = resp if resp is not None else responses(ch, tx)
    xi = metrics.interference_covariance(ch, tx, r)
    total = 0.0
    for i in range(ch.n_targets):
        total += w.sens[i] * metrics.sensing_mse(ch, tx, rx.v[i], i, r)
    for l in range(tx.b.shape[1]):
        # weights already carry the 1/K^2 of the computation MSE
        total += w.comp[l] * ch.n_sensors**2 * metrics.computing_mse(ch, tx, rx.z[l], l, r)
    for k in range(ch.n_sensors):
        for j in range(tx.c.shape[1]):
            total += w.comm[k, j] * metrics.comm_mse_at(ch, tx, rx.u[k, j], k, j, xi, r)
    return total


# --- per-beam quadratic restriction ----------------------------------------

def _beam(tx: TxBeams, kind, k, s):
    return {"a": tx.a, "b": tx.b, "c": tx.c}[kind][k, s]


def _set_beam(tx: TxBeams, kind, k, s, value, resp: Responses, ch: ChannelSet):
    {"a": tx.a, "b": tx.b, "c": tx.c}[kind][k, s] = value
    # refresh only this beam's response rows
    if kind == "a":
        resp.ga[k, s] = ch.G[k, s] @ value
        resp.fa[k, :, s] = np.einsum("onm,m->on", ch.F[k], value)
    elif kind == "b":
        resp.hb[k, s] = ch.H[k] @ value
    else:
        resp.hc[k, s] = ch.H[k] @ value


def beam_quadratic(ch: ChannelSet, tx: TxBeams, rx: RxBeams, w: EffectiveWeights,
                   resp: Responses, kind, k, s):
    """Exact restriction of the scalarized objective to one beam.

    Returns (Q, q) with objective x^H Q x - 2 Re(q^H x) + const.
    """
    M = ch.n_sensor_antennas
    Q = np.zeros((M, M), dtype=np.complex128)
    q = np.zeros(M, dtype=np.complex128)

    if kind == "a":
        paths = [("target", float(ch.rms_target[s]) * ch.G[k, s])]
        paths += [("clutter", float(ch.rms_clutter[o]) * ch.F[k, o])
                  for o in range(ch.n_clutters)]
    else:
        paths = [("direct", ch.H[k])]

    recvs = []
    for i in range(ch.n_targets):
        recvs.append(("sens", i, None, rx.v[i], float(w.sens[i])))
    for l in range(tx.b.shape[1]):
        recvs.append(("comp", l, None, rx.z[l], float(w.comp[l])))
    for kk in range(ch.n_sensors):
        for j in range(tx.c.shape[1]):
            recvs.append(("comm", kk, j, rx.u[kk, j], float(w.comm[kk, j])))

    for ftype, ia, ib, rv, wt in recvs:
        if wt == 0.0:
            continue
        for ptype, P in paths:
            p = P.conj().T @ rv
            d = 0.0
            if kind == "a" and ptype == "target" and ftype == "sens" and ia == s:
                # own-target echo combines coherently across sensors
                rest = np.vdot(rv, resp.ga[:, s, :].sum(axis=0) - resp.ga[k, s])
                d = float(ch.rms_target[s]) * (1.0 - rest)
            elif kind == "b" and ftype == "comp" and ia == s:
                d = 1.0
            elif kind == "c" and ftype == "comm" and ia == k and ib == s:
                d = 1.0
            Q += wt * np.outer(p, p.conj())
            q += wt * d * p
    return 0.5 * (Q + Q.conj().T), q


# --- barrier Newton on one beam --------------------------------------------

def _real_hessian(Q):
    return 2.0 * np.block([[Q.real, -Q.imag], [Q.imag, Q.real]])


def _split(x):
    return np.concatenate([x.real, x.imag])


def _join(r):
    m = r.size // 2
    return r[:m] + 1j * r[m:]


def _barrier_value(eps, Q, q, cap, x):
    s = float(np.vdot(x, Q @ x).real) - 2.0 * float(np.vdot(q, x).real)
    slack = cap - float(np.vdot(x, x).real)
    if slack <= 0:
        return math.inf
    return eps * s - math.log(slack)


def beam_newton(eps, Q, q, cap, x0, tol, max_iter, basis=None):
    """Minimize eps*(x^H Q x - 2 Re q^H x) - log(cap - |x|^2) from x0.

    With a basis (orthonormal columns), the search is restricted to its
    span; x0 must lie in the span.
    """
    if basis is not None:
        Q = basis.conj().T @ Q @ basis
        q = basis.conj().T @ q
        x = basis.conj().T @ x0
    else:
        x = x0.copy()
    Hq = _real_hessian(Q)
    dim = x.size
    eye = np.eye(2 * dim)
    for _ in range(max_iter):
        r = _split(x)
        f = float(r @ r) - cap
        grad = eps * 2.0 * _split(Q @ x - q) - (2.0 / f) * r
        hess = eps * Hq - (2.0 / f) * eye + (4.0 / f**2) * np.outer(r, r)
        step = hermitian_solve(hess, -grad).real
        decrement = float(-grad @ step)
        if decrement <= tol:
            break
        phi0 = _barrier_value(eps, Q, q, cap, x)
        eta = 1.0
        for _ in range(_MAX_BACKTRACKS):
            cand = _join(r + eta * step)
            if _barrier_value(eps, Q, q, cap, cand) <= phi0 - _ARMIJO_C * eta * decrement:
                break
            eta *= 0.5
        else:
            break
        x = _join(r + eta * step)
    return basis @ x if basis is not None else x


# --- inner transmit solve ---------------------------------------------------

def _beam_list(ch: ChannelSet, tx: TxBeams):
    beams = []
    for k in range(ch.n_sensors):
        beams += [("a", k, i) for i in range(tx.a.shape[1])]
        beams += [("b", k, l) for l in range(tx.b.shape[1])]
        beams += [("c", k, j) for j in range(tx.c.shape[1])]
    return beams


def solve_transmit(ch: ChannelSet, tx: TxBeams, rx: RxBeams, w: EffectiveWeights,
                   power_budget, opt: WopmOptions, subspace=None):
    """Barrier interior-point minimization of the scalarized objective in place."""
    K = ch.n_sensors
    for k in range(K):
        if metrics.per_sensor_power(tx, k) >= power_budget:
            raise InfeasibleStart(f"sensor {k} starts at or above the power budget")
    resp = responses(ch, tx)
    beams = _beam_list(ch, tx)
    eps = opt.barrier_init
    while True:
        for _ in range(opt.max_sweeps):
            before = scalarized_objective(ch, tx, rx, w, resp)
            for kind, k, s in beams:
                Q, q = beam_quadratic(ch, tx, rx, w, resp, kind, k, s)
                x0 = _beam(tx, kind, k, s)
                cap = power_budget - (metrics.per_sensor_power(tx, k)
                                      - float(np.vdot(x0, x0).real))
                basis = subspace.get((kind, k, s)) if subspace else None
                x = beam_newton(eps, Q, q, cap, x0, opt.newton_tol,
                                opt.max_newton_iter, basis)
                _set_beam(tx, kind, k, s, x, resp, ch)
            after = scalarized_objective(ch, tx, rx, w, resp)
            if before - after <= opt.sweep_tol * max(1.0, abs(after)):
                break
        if K / eps <= opt.barrier_gap_tol:
            break
        eps *= opt.barrier_scale
    return tx


# --- outer alternating loop -------------------------------------------------

@dataclass
class WopmResult:
    tx: TxBeams
    rx: RxBeams
    report: metrics.PerformanceReport
    objective_trace: list        # surrogate objective per outer iteration
    psi_trace: list              # normalized deviation objective per iteration
    limits: np.ndarray           # single-objective optima (F1*, F2*, F3*)
    n_outer: int
    converged: bool


def raw_objectives(cfg: SystemConfig, ch: ChannelSet, tx: TxBeams, rx: RxBeams):
    """(F1, F2, F3): weighted sensing MSE, computation MSE, and sum rate."""
    r = responses(ch, tx)
    xi = metrics.interference_covariance(ch, tx, r)
    f1 = sum(cfg.weight_sens[i] * metrics.sensing_mse(ch, tx, rx.v[i], i, r)
             for i in range(cfg.n_targets))
    f2 = sum(cfg.weight_comp[l] * metrics.computing_mse(ch, tx, rx.z[l], l, r)
             for l in range(cfg.n_model_params))
    f3 = 0.0
    for k in range(cfg.n_sensors):
        for j in range(cfg.n_comm_streams):
            e, _ = metrics.comm_mmse(ch, tx, k, j, xi, r)
            f3 += cfg.weight_comm[k, j] * math.log2(1.0 / e)
    return float(f1), float(f2), float(f3)


def _alternate(cfg: SystemConfig, ch: ChannelSet, alpha_tilde, opt: WopmOptions,
               frozen_rx=None, norm=None):
    """Run the alternating loop at fixed effective alphas.

    With `norm = (alpha, limits, scale)` the per-iteration trade-off
    objective (weighted normalized deviation from the single-objective
    optima) is tracked and used for the stopping test; otherwise the raw
    scalarized objective is tracked.  Returns
    (tx, rx, surrogate_trace, psi_trace, converged, n_outer).
    """
    P = cfg.tx_power_budget_w
    tx = TxBeams.algorithm_init(cfg.n_sensors, cfg.n_targets, cfg.n_model_params,
                                cfg.n_comm_streams, cfg.n_sensor_antennas, P)
    trace = []
    psi_trace = []
    converged = False
    rx = None
    n_outer = 0
    for it in range(opt.max_outer_iter):
        n_outer = it + 1
        rule = opt.receiver_rule
        if rule is ReceiverRule.FIXED_MMSE and frozen_rx is None:
            rule = ReceiverRule.MMSE
        rx = update_receivers(ch, tx, rule, frozen_rx)
        if rule is not opt.receiver_rule:
            frozen_rx = rx
        subspace = (opt.subspace_provider(ch, tx, rx)
                    if opt.subspace_provider is not None else None)
        w = effective_weights(cfg, rx, alpha_tilde)
        solve_transmit(ch, tx, rx, w, P, opt, subspace)
        trace.append(_surrogate_value(cfg, ch, tx, rx, alpha_tilde))
        if norm is not None:
            alpha, limits, scale = norm
            psi_trace.append(_psi_objective(cfg, ch, tx, rx, alpha, limits, scale))
            watched = psi_trace
        else:
            watched = trace
        # the watched objective is dimensionless, so the relative test gets a
        # unit floor; near-zero deviations would otherwise never terminate
        if it > 0 and abs(watched[-2] - watched[-1]) \
                <= opt.outer_tol * max(1.0, abs(watched[-1])):
            converged = True
            break
    return tx, rx, trace, psi_trace, converged, n_outer


def _surrogate_value(cfg, ch, tx, rx, alpha_tilde):
    """Descent surrogate: weighted MSEs minus the concave rate lower bound."""
    r = responses(ch, tx)
    xi = metrics.interference_covariance(ch, tx, r)
    total = 0.0
    for i in range(cfg.n_targets):
        total += alpha_tilde[0] * cfg.weight_sens[i] \
            * metrics.sensing_mse(ch, tx, rx.v[i], i, r)
    for l in range(cfg.n_model_params):
        total += alpha_tilde[1] * cfg.weight_comp[l] \
            * metrics.computing_mse(ch, tx, rx.z[l], l, r)
    for k in range(cfg.n_sensors):
        for j in range(cfg.n_comm_streams):
            e = metrics.comm_mse_at(ch, tx, rx.u[k, j], k, j, xi, r)
            om = rx.omega[k, j]
            bound = math.log2(om * LN2) + (1.0 - om * e * LN2) / LN2
            total -= alpha_tilde[2] * cfg.weight_comm[k, j] * bound
    return total


def _psi_objective(cfg, ch, tx, rx, alpha, limits, scale):
    """Weighted normalized deviation from the single-objective optima."""
    f = np.array(raw_objectives(cfg, ch, tx, rx))
    psi = (f - limits) / scale
    psi[2] = -psi[2]
    return float(alpha @ psi)


def compute_limits(cfg: SystemConfig, ch: ChannelSet, opt: WopmOptions | None = None):
    """Single-objective optima (F1*, F2*, F3*) used to normalize the trade-off.

    Each limit comes from the full alternating machinery with all the weight
    on one objective.  A first pass estimates the objective's magnitude and a
    second pass reruns with the weight rescaled by it, so the stopping test
    resolves the optimum to the same relative accuracy for every objective
    regardless of its natural scale.  Returns (limits, converged_flags).
    """
    opt = opt or WopmOptions()
    limits = np.zeros(3)
    flags = np.zeros(3, dtype=bool)
    for p in range(3):
        alpha = np.zeros(3)
        alpha[p] = 1.0
        tx, rx, _, _, ok, _ = _alternate(cfg, ch, alpha, opt)
        rough = abs(raw_objectives(cfg, ch, tx, rx)[p])
        if not 0.1 <= rough <= 10.0:
            scale = max(rough, 1e-30)
            tx, rx, _, _, ok, _ = _alternate(cfg, ch, alpha / scale, opt)
        limits[p] = raw_objectives(cfg, ch, tx, rx)[p]
        flags[p] = ok
        if not ok:
            log.warning("single-objective run %d hit the outer iteration cap; "
                        "using the best value found", p)
    return limits, flags


def solve(cfg: SystemConfig, ch: ChannelSet | None = None, seed: int = 0,
          opt: WopmOptions | None = None, limits=None) -> WopmResult:
    """Full weighted overall-performance maximization for one channel draw."""
    opt = opt or WopmOptions()
    if ch is None:
        ch = generate_channels(cfg, seed)
    if opt.normalize:
        if limits is None:
            limits, _ = compute_limits(cfg, ch, opt)
        limits = np.asarray(limits, dtype=float)
        scale = np.maximum(np.abs(limits), 1e-30)
    else:
        limits = np.zeros(3)
        scale = np.ones(3)
    alpha_tilde = opt.alpha / scale
    # the trade-off objective sums normalized deviations from the ideals;
    # the rate (index 2) is a maximization target so its deviation flips sign
    norm = (opt.alpha, limits, scale)
    tx, rx, trace, psi_trace, converged, n_outer = _alternate(
        cfg, ch, alpha_tilde, opt, norm=norm)
    report = metrics.evaluate(ch, tx, rx)
    return WopmResult(tx=tx, rx=rx, report=report, objective_trace=trace,
                      psi_trace=psi_trace, limits=limits,
                      n_outer=n_outer, converged=converged)
