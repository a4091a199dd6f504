"""Closed-form performance metrics and a signal-level Monte-Carlo oracle.

The analytic expressions (per-target sensing MSE, per-parameter computation
MSE, per-stream SINR/rate/MMSE, transmit power) are evaluated exactly from
the channel realization and the beamformers.  `monte_carlo_report`
independently synthesizes received signals draw by draw and estimates the
same quantities empirically; the test suite uses it as the master oracle
for the analytic forms.

Signal model used by the synthesis: sensing probing symbols are
deterministic unit pilots (their echo is coherently combined across
sensors, which is what makes the desired sensing term take its
coherent-sum form), while computing and communication symbols are i.i.d.
zero-mean unit-variance real Gaussians.  Reflection coefficients are drawn
per draw as zero-mean complex Gaussians with the configured RMS.
"""

from dataclasses import dataclass
from enum import Enum
import json
import math

import numpy as np

from .numerics import NotPositiveDefinite, hermitian_solve
from .scenario import ChannelSet, link_rng


class DimensionMismatch(ValueError):
    pass


class SingularCovariance(ValueError):
    pass


class InterferenceVariant(Enum):
    """Which comm streams count as interference for stream (k, j).

    APPENDIX_A excludes only the desired (k, j) stream, which is the set
    implied by the MMSE covariance and makes the 1 + SINR = 1/MMSE identity
    exact.  LITERAL excludes every stream sharing the sensor index k or the
    stream index j, as the displayed SINR expression reads.
    """

    APPENDIX_A = "appendix_a"
    LITERAL = "literal"


@dataclass
class TxBeams:
    """Transmit beamformers: a (K,I,M) sensing, b (K,L,M) computing, c (K,J,M) comm."""

    a: np.ndarray
    b: np.ndarray
    c: np.ndarray

    def __post_init__(self):
        self.a = np.asarray(self.a, dtype=np.complex128)
        self.b = np.asarray(self.b, dtype=np.complex128)
        self.c = np.asarray(self.c, dtype=np.complex128)
        if not (self.a.ndim == self.b.ndim == self.c.ndim == 3):
            raise DimensionMismatch("beam arrays must be (K, streams, M)")
        if len({self.a.shape[0], self.b.shape[0], self.c.shape[0]}) != 1:
            raise DimensionMismatch("inconsistent sensor counts across beam arrays")
        if len({self.a.shape[2], self.b.shape[2], self.c.shape[2]}) != 1:
            raise DimensionMismatch("inconsistent antenna counts across beam arrays")

    @classmethod
    def zeros(cls, K, I, L, J, M):
        return cls(np.zeros((K, I, M), complex), np.zeros((K, L, M), complex),
                   np.zeros((K, J, M), complex))

    @classmethod
    def algorithm_init(cls, K, I, L, J, M, power_budget):
        """First-antenna initialization with the budget split across 3M slots."""
        amp = math.sqrt(power_budget / (3.0 * M))
        tx = cls.zeros(K, I, L, J, M)
        tx.a[:, :, 0] = amp
        tx.b[:, :, 0] = amp
        tx.c[:, :, 0] = amp
        return tx

    def copy(self):
        return TxBeams(self.a.copy(), self.b.copy(), self.c.copy())


@dataclass
class RxBeams:
    """Receive beamformers v (I,N), z (L,N), u (K,J,N) and comm weights omega (K,J)."""

    v: np.ndarray
    z: np.ndarray
    u: np.ndarray
    omega: np.ndarray

    @classmethod
    def zeros(cls, K, I, L, J, N):
        return cls(np.zeros((I, N), complex), np.zeros((L, N), complex),
                   np.zeros((K, J, N), complex), np.ones((K, J)))

    def copy(self):
        return RxBeams(self.v.copy(), self.z.copy(), self.u.copy(), self.omega.copy())


@dataclass
class Responses:
    """BS-side responses of every transmit beam through its channels."""

    ga: np.ndarray   # (K, I, N)    G_{k,i} a_{k,i}
    fa: np.ndarray   # (K, O, I, N) F_{k,o} a_{k,m}
    hb: np.ndarray   # (K, L, N)    H_k b_{k,l}
    hc: np.ndarray   # (K, J, N)    H_k c_{k,j}


def responses(ch: ChannelSet, tx: TxBeams) -> Responses:
    _check_dims(ch, tx)
    ga = np.einsum("kinm,kim->kin", ch.G, tx.a)
    fa = np.einsum("konm,kim->koin", ch.F, tx.a)
    hb = np.einsum("knm,klm->kln", ch.H, tx.b)
    hc = np.einsum("knm,kjm->kjn", ch.H, tx.c)
    return Responses(ga=ga, fa=fa, hb=hb, hc=hc)


def _check_dims(ch: ChannelSet, tx: TxBeams):
    K, M = ch.n_sensors, ch.n_sensor_antennas
    if tx.a.shape[0] != K or tx.a.shape[2] != M:
        raise DimensionMismatch(
            f"beams for {tx.a.shape[0]} sensors x {tx.a.shape[2]} antennas, "
            f"channels for {K} x {M}")
    if tx.a.shape[1] != ch.n_targets:
        raise DimensionMismatch("sensing beam count != number of targets")


def sensing_mse(ch: ChannelSet, tx: TxBeams, v_i, i, resp: Responses | None = None):
    """Mean squared error of the reflection-coefficient estimate for target i."""
    r = resp if resp is not None else responses(ch, tx)
    v = np.asarray(v_i, dtype=np.complex128)
    if v.shape != (ch.n_bs_antennas,):
        raise DimensionMismatch("receiver length != N")
    R2t = ch.rms_target**2
    R2c = ch.rms_clutter**2
    desired = R2t[i] * abs(np.vdot(v, r.ga[:, i, :].sum(axis=0)) - 1.0) ** 2
    proj_ga = r.ga.conj() @ v                       # (K, I)
    cross = float(np.einsum("m,km->", R2t, np.abs(proj_ga) ** 2)
                  - R2t[i] * np.sum(np.abs(proj_ga[:, i]) ** 2))
    proj_fa = r.fa.conj() @ v                       # (K, O, I)
    clutter = float(np.einsum("o,kom->", R2c, np.abs(proj_fa) ** 2))
    leak = float(np.sum(np.abs(r.hb.conj() @ v) ** 2)
                 + np.sum(np.abs(r.hc.conj() @ v) ** 2))
    noise = ch.noise_power_w * float(np.vdot(v, v).real)
    return float(desired + cross + clutter + leak + noise)


def computing_mse(ch: ChannelSet, tx: TxBeams, z_l, l, resp: Responses | None = None):
    """Distortion of the over-the-air aggregate for model parameter l."""
    r = resp if resp is not None else responses(ch, tx)
    z = np.asarray(z_l, dtype=np.complex128)
    if z.shape != (ch.n_bs_antennas,):
        raise DimensionMismatch("receiver length != N")
    K = ch.n_sensors
    proj_hb = r.hb.conj() @ z                       # (K, L)
    desired = float(np.sum(np.abs(proj_hb[:, l] - 1.0) ** 2))
    cross = float(np.sum(np.abs(proj_hb) ** 2) - np.sum(np.abs(proj_hb[:, l]) ** 2))
    proj_ga = r.ga.conj() @ z
    sens = float(np.einsum("i,ki->", ch.rms_target**2, np.abs(proj_ga) ** 2))
    proj_fa = r.fa.conj() @ z
    clutter = float(np.einsum("o,kom->", ch.rms_clutter**2, np.abs(proj_fa) ** 2))
    comm = float(np.sum(np.abs(r.hc.conj() @ z) ** 2))
    noise = ch.noise_power_w * float(np.vdot(z, z).real)
    return (desired + cross + sens + clutter + comm + noise) / K**2


def comm_interference_x(ch: ChannelSet, tx: TxBeams, u, resp: Responses | None = None):
    """Non-comm interference power at receiver u: compute + target echo + clutter echo."""
    r = resp if resp is not None else responses(ch, tx)
    u = np.asarray(u, dtype=np.complex128)
    comp = float(np.sum(np.abs(r.hb.conj() @ u) ** 2))
    sens = float(np.einsum("i,ki->", ch.rms_target**2, np.abs(r.ga.conj() @ u) ** 2))
    clut = float(np.einsum("o,kom->", ch.rms_clutter**2, np.abs(r.fa.conj() @ u) ** 2))
    return comp + sens + clut


def comm_sinr(ch: ChannelSet, tx: TxBeams, u_kj, k, j,
              variant: InterferenceVariant = InterferenceVariant.APPENDIX_A,
              resp: Responses | None = None):
    """Received SINR of comm stream (k, j); zero when the desired power is zero."""
    r = resp if resp is not None else responses(ch, tx)
    u = np.asarray(u_kj, dtype=np.complex128)
    proj_hc = np.abs(r.hc.conj() @ u) ** 2          # (K, J)
    num = float(proj_hc[k, j])
    if num == 0.0:
        return 0.0
    if variant is InterferenceVariant.APPENDIX_A:
        comm_int = float(proj_hc.sum() - proj_hc[k, j])
    else:
        mask = np.ones_like(proj_hc, dtype=bool)
        mask[k, :] = False
        mask[:, j] = False
        comm_int = float(proj_hc[mask].sum())
    den = comm_int + comm_interference_x(ch, tx, u, r) \
        + ch.noise_power_w * float(np.vdot(u, u).real)
    return num / den


def interference_covariance(ch: ChannelSet, tx: TxBeams,
                            resp: Responses | None = None):
    """Full received-signal covariance (all beams plus noise); Hermitian PD."""
    r = resp if resp is not None else responses(ch, tx)
    N = ch.n_bs_antennas
    xi = np.zeros((N, N), dtype=np.complex128)
    hc = r.hc.reshape(-1, N)
    xi += hc.T @ hc.conj()
    hb = r.hb.reshape(-1, N)
    xi += hb.T @ hb.conj()
    ga = (r.ga * ch.rms_target[None, :, None]).reshape(-1, N)
    xi += ga.T @ ga.conj()
    fa = (r.fa * ch.rms_clutter[None, :, None, None]).reshape(-1, N)
    xi += fa.T @ fa.conj()
    xi += ch.noise_power_w * np.eye(N)
    return 0.5 * (xi + xi.conj().T)


def comm_mse_at(ch: ChannelSet, tx: TxBeams, u, k, j, xi=None,
                resp: Responses | None = None):
    """Comm MSE of stream (k, j) at an arbitrary receiver u."""
    r = resp if resp is not None else responses(ch, tx)
    if xi is None:
        xi = interference_covariance(ch, tx, r)
    u = np.asarray(u, dtype=np.complex128)
    quad = float(np.vdot(u, xi @ u).real)
    lin = float(np.vdot(u, r.hc[k, j]).real)
    return quad - 2.0 * lin + 1.0


def comm_mmse(ch: ChannelSet, tx: TxBeams, k, j, xi=None,
              resp: Responses | None = None):
    """Minimum comm MSE e_{k,j} and its receiver u = Xi^-1 H_k c_{k,j}."""
    r = resp if resp is not None else responses(ch, tx)
    if xi is None:
        xi = interference_covariance(ch, tx, r)
    try:
        u = hermitian_solve(xi, r.hc[k, j])
    except NotPositiveDefinite as exc:
        # the covariance is positive definite in exact arithmetic (it includes
        # noise * I), but extreme beam powers can push its condition number
        # past what Cholesky tolerates; fall back to a floored eigensolve
        w, V = np.linalg.eigh(xi)
        if not np.isfinite(w).all() or w.max(initial=0.0) <= 0.0:
            raise SingularCovariance(str(exc)) from exc
        w = np.maximum(w, np.finfo(float).eps * w[-1])
        u = (V * (1.0 / w)) @ (V.conj().T @ r.hc[k, j])
    e = 1.0 - float(np.vdot(r.hc[k, j], u).real)
    return min(max(e, 0.0), 1.0), u


def per_sensor_power(tx: TxBeams, k):
    return float(np.sum(np.abs(tx.a[k]) ** 2) + np.sum(np.abs(tx.b[k]) ** 2)
                 + np.sum(np.abs(tx.c[k]) ** 2))


def total_power(tx: TxBeams):
    return float(np.sum(np.abs(tx.a) ** 2) + np.sum(np.abs(tx.b) ** 2)
                 + np.sum(np.abs(tx.c) ** 2))


@dataclass
class PerformanceReport:
    """All closed-form metrics of one (channels, beams) operating point."""

    mse_sens: np.ndarray       # (I,)
    mse_comp: np.ndarray       # (L,)
    sinr: np.ndarray           # (K, J)
    rate: np.ndarray           # (K, J) bits per channel use
    mse_comm: np.ndarray       # (K, J) at the given receivers
    mmse_comm: np.ndarray      # (K, J) minimum over receivers
    interference_x: np.ndarray  # (K, J)
    per_sensor_power_w: np.ndarray  # (K,)
    total_power_w: float

    def to_json_dict(self):
        return {
            "mse_sens": self.mse_sens.tolist(),
            "mse_comp": self.mse_comp.tolist(),
            "sinr": self.sinr.tolist(),
            "rate": self.rate.tolist(),
            "mse_comm": self.mse_comm.tolist(),
            "mmse_comm": self.mmse_comm.tolist(),
            "interference_x": self.interference_x.tolist(),
            "per_sensor_power_w": self.per_sensor_power_w.tolist(),
            "total_power_w": self.total_power_w,
        }

    def to_json(self):
        return json.dumps(self.to_json_dict(), sort_keys=True)

    def csv_rows(self):
        """One row per entity: entity_kind, index_a, index_b, metric, value."""
        rows = []
        for i, val in enumerate(self.mse_sens):
            rows.append(("target", i, "", "mse_sens", float(val)))
        for l, val in enumerate(self.mse_comp):
            rows.append(("model_param", l, "", "mse_comp", float(val)))
        K, J = self.sinr.shape
        for k in range(K):
            for j in range(J):
                rows.append(("stream", k, j, "sinr", float(self.sinr[k, j])))
                rows.append(("stream", k, j, "rate", float(self.rate[k, j])))
                rows.append(("stream", k, j, "mse_comm", float(self.mse_comm[k, j])))
                rows.append(("stream", k, j, "mmse_comm", float(self.mmse_comm[k, j])))
        for k in range(K):
            rows.append(("sensor", k, "", "power_w", float(self.per_sensor_power_w[k])))
        rows.append(("system", "", "", "total_power_w", float(self.total_power_w)))
        return rows


def evaluate(ch: ChannelSet, tx: TxBeams, rx: RxBeams,
             variant: InterferenceVariant = InterferenceVariant.APPENDIX_A):
    """Closed-form PerformanceReport at the given transmit/receive beams."""
    r = responses(ch, tx)
    xi = interference_covariance(ch, tx, r)
    I, L = ch.n_targets, rx.z.shape[0]
    K, J = rx.u.shape[0], rx.u.shape[1]
    mse_s = np.array([sensing_mse(ch, tx, rx.v[i], i, r) for i in range(I)])
    mse_c = np.array([computing_mse(ch, tx, rx.z[l], l, r) for l in range(L)])
    sinr = np.zeros((K, J))
    msec = np.zeros((K, J))
    mmse = np.zeros((K, J))
    xkj = np.zeros((K, J))
    for k in range(K):
        for j in range(J):
            sinr[k, j] = comm_sinr(ch, tx, rx.u[k, j], k, j, variant, r)
            msec[k, j] = comm_mse_at(ch, tx, rx.u[k, j], k, j, xi, r)
            mmse[k, j], _ = comm_mmse(ch, tx, k, j, xi, r)
            xkj[k, j] = comm_interference_x(ch, tx, rx.u[k, j], r)
    psp = np.array([per_sensor_power(tx, k) for k in range(ch.n_sensors)])
    return PerformanceReport(mse_sens=mse_s, mse_comp=mse_c, sinr=sinr,
                             rate=np.log2(1.0 + sinr), mse_comm=msec,
                             mmse_comm=mmse, interference_x=xkj,
                             per_sensor_power_w=psp, total_power_w=float(psp.sum()))


# --- Monte-Carlo signal-level oracle ---------------------------------------

@dataclass
class SignalBatch:
    """Per-draw symbols, reflection coefficients, and noise for the synthesis."""

    s_sens: np.ndarray     # (n, K, I) unit pilots
    s_comp: np.ndarray     # (n, K, L) real N(0, 1)
    s_comm: np.ndarray     # (n, K, J) real N(0, 1)
    r_target: np.ndarray   # (n, I) complex, E|r|^2 = R_i^2
    r_clutter: np.ndarray  # (n, O) complex, E|r|^2 = R_o^2
    noise: np.ndarray      # (n, N) complex, E|n|^2 = sigma_n^2 per entry

    @property
    def n_draws(self):
        return self.s_sens.shape[0]


def draw_signal_batch(ch: ChannelSet, n_draws, seed, n_model_params, n_comm_streams):
    K, I, O = ch.n_sensors, ch.n_targets, ch.n_clutters
    N = ch.n_bs_antennas
    rng = link_rng(seed, "signals")
    rrng = link_rng(seed, "reflect")
    # sensing pilots are deterministic; comp/comm symbols are N(0,1)
    s_sens = np.ones((n_draws, K, I))
    s_comp = rng.standard_normal((n_draws, K, n_model_params))
    s_comm = rng.standard_normal((n_draws, K, n_comm_streams))
    r_t = (rrng.standard_normal((n_draws, I)) + 1j * rrng.standard_normal((n_draws, I))) \
        * (ch.rms_target / math.sqrt(2.0))
    r_c = (rrng.standard_normal((n_draws, O)) + 1j * rrng.standard_normal((n_draws, O))) \
        * ((ch.rms_clutter / math.sqrt(2.0)) if O else 1.0)
    noise = (rng.standard_normal((n_draws, N)) + 1j * rng.standard_normal((n_draws, N))) \
        * math.sqrt(ch.noise_power_w / 2.0)
    return SignalBatch(s_sens=s_sens, s_comp=s_comp, s_comm=s_comm,
                       r_target=r_t, r_clutter=r_c, noise=noise)


def synthesize(ch: ChannelSet, tx: TxBeams, batch: SignalBatch):
    """Received-signal draws y (n, N) from the superposition model."""
    r = responses(ch, tx)
    y = np.einsum("di,dki,kin->dn", batch.r_target, batch.s_sens, r.ga, optimize=True)
    if ch.n_clutters:
        y = y + np.einsum("do,dkm,komn->dn", batch.r_clutter, batch.s_sens, r.fa,
                          optimize=True)
    y = y + np.einsum("dkl,kln->dn", batch.s_comp, r.hb, optimize=True)
    y = y + np.einsum("dkj,kjn->dn", batch.s_comm, r.hc, optimize=True)
    return y + batch.noise


@dataclass
class EmpiricalReport:
    """Monte-Carlo estimates with standard errors."""

    mse_sens: np.ndarray
    se_sens: np.ndarray
    mse_comp: np.ndarray
    se_comp: np.ndarray
    mse_comm: np.ndarray
    se_comm: np.ndarray
    sinr: np.ndarray
    n_draws: int


def _mean_se(sq):
    return float(sq.mean()), float(sq.std(ddof=1) / math.sqrt(sq.size))


def monte_carlo_report(ch: ChannelSet, tx: TxBeams, rx: RxBeams,
                       batch: SignalBatch) -> EmpiricalReport:
    """Empirical metrics from the signal-level synthesis."""
    if batch.s_comp.shape[1] != ch.n_sensors:
        raise DimensionMismatch("batch drawn for a different sensor count")
    y = synthesize(ch, tx, batch)
    r = responses(ch, tx)
    K = ch.n_sensors
    I, L, J = ch.n_targets, rx.z.shape[0], rx.u.shape[1]

    mse_s, se_s = np.zeros(I), np.zeros(I)
    for i in range(I):
        est = y @ rx.v[i].conj()
        mse_s[i], se_s[i] = _mean_se(np.abs(est - batch.r_target[:, i]) ** 2)

    mse_c, se_c = np.zeros(L), np.zeros(L)
    for l in range(L):
        est = (y @ rx.z[l].conj()) / K
        target = batch.s_comp[:, :, l].mean(axis=1)
        mse_c[l], se_c[l] = _mean_se(np.abs(est - target) ** 2)

    mse_u, se_u = np.zeros((K, J)), np.zeros((K, J))
    sinr = np.zeros((K, J))
    for k in range(K):
        for j in range(J):
            est = y @ rx.u[k, j].conj()
            mse_u[k, j], se_u[k, j] = _mean_se(np.abs(est - batch.s_comm[:, k, j]) ** 2)
            gain = np.vdot(rx.u[k, j], r.hc[k, j])
            resid = np.abs(est - gain * batch.s_comm[:, k, j]) ** 2
            denom = resid.mean()
            sinr[k, j] = abs(gain) ** 2 / denom if denom > 0 else 0.0

    return EmpiricalReport(mse_sens=mse_s, se_sens=se_s, mse_comp=mse_c,
                           se_comp=se_c, mse_comm=mse_u, se_comm=se_u,
                           sinr=sinr, n_draws=batch.n_draws)
