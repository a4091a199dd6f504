"""Total transmit-power minimization under QoS constraints.

Alternates closed-form receiver updates with a convex transmit subproblem:
for fixed receivers, sensing and computation beams stay plain vectors
(their constraints are convex quadratics) while each comm beam is lifted
to a Hermitian PSD matrix, which turns the SINR constraint into a linear
one.  The subproblem is solved by a log-barrier interior-point method with
exact gradients and Hessians; comm beams are recovered from the lifted
matrices by eigendecomposition, which is essentially rank-one at the
optimum.
"""

from dataclasses import dataclass, field
import logging
import math

import numpy as np

from . import metrics
from .metrics import InterferenceVariant, RxBeams, TxBeams, responses
from .numerics import NotPositiveDefinite, hermitian_eig, hermitian_solve
from .receivers import ReceiverRule, update_receivers
from .scenario import ChannelSet, SystemConfig, generate_channels

log = logging.getLogger("iscc")

_ARMIJO_C = 1e-4
_MAX_BACKTRACKS = 60
# normalized slack below which a warm start is not trusted as interior
_STRICT_MARGIN = 1e-8


class Infeasible(RuntimeError):
    """No transmit beams satisfy the requested QoS under these receivers."""


@dataclass
class QosSpec:
    """Per-target sensing MSE caps, per-parameter computation MSE caps,
    and per-stream SINR floors in dB."""

    delta: np.ndarray = field(default=0.9)
    chi: np.ndarray = field(default=0.05)
    gamma_db: np.ndarray = field(default=0.1)

    def resolved(self, cfg: SystemConfig):
        from .scenario import _broadcast
        delta = _broadcast(self.delta, cfg.n_targets, "delta")
        chi = _broadcast(self.chi, cfg.n_model_params, "chi")
        g = np.asarray(self.gamma_db, dtype=float)
        if g.size == 1:
            g = np.full((cfg.n_sensors, cfg.n_comm_streams), float(g.reshape(-1)[0]))
        g = g.reshape(cfg.n_sensors, cfg.n_comm_streams)
        if np.any(delta <= 0) or np.any(chi <= 0):
            raise ValueError("MSE caps must be positive")
        return delta, chi, g


@dataclass
class TtpmOptions:
    barrier_init: float = 1.0
    # after the first alternating iteration the previous beams already sit
    # near the constraint boundary, like a high-t central point; raising this
    # restarts the barrier schedule higher on warm iterations, skipping the
    # retreat to the interior (faster on large profiles, but the extra
    # centering at low t measurably improves solution quality, so the
    # default keeps the full schedule)
    barrier_warm_init: float = 1.0
    barrier_scale: float = 100.0
    barrier_gap_tol: float = 1e-9
    newton_tol: float = 1e-12
    max_newton_iter: int = 200
    max_outer_iter: int = 10
    # the alternating loop's tail improvement decays by roughly 0.75x per
    # iteration; 3% relative power change is where desk instances settle
    # within the ten-iteration budget
    outer_tol: float = 3e-2
    rank_tol: float = 1e-4
    receiver_rule: ReceiverRule = ReceiverRule.MMSE
    subspace_provider: object = None


@dataclass
class TtpmResult:
    tx: TxBeams
    rx: RxBeams
    report: metrics.PerformanceReport
    power_trace: list
    n_outer: int
    converged: bool
    rank_violations: list        # (k, j, lambda2/lambda1) for non-rank-one lifts


# --- Hermitian parameterization ---------------------------------------------

def herm_basis(m):
    """Real basis of m x m Hermitian matrices (m^2 elements)."""
    mats = []
    for i in range(m):
        E = np.zeros((m, m), complex)
        E[i, i] = 1.0
        mats.append(E)
    for i in range(m):
        for j in range(i + 1, m):
            E = np.zeros((m, m), complex)
            E[i, j] = E[j, i] = 1.0
            mats.append(E)
            E = np.zeros((m, m), complex)
            E[i, j] = 1j
            E[j, i] = -1j
            mats.append(E)
    return mats


def herm_pack(C):
    m = C.shape[0]
    y = [C[i, i].real for i in range(m)]
    for i in range(m):
        for j in range(i + 1, m):
            y += [C[i, j].real, C[i, j].imag]
    return np.array(y)


def herm_unpack(y, m):
    C = np.zeros((m, m), complex)
    idx = m
    for i in range(m):
        C[i, i] = y[i]
    for i in range(m):
        for j in range(i + 1, m):
            C[i, j] = y[idx] + 1j * y[idx + 1]
            C[j, i] = y[idx] - 1j * y[idx + 1]
            idx += 2
    return C


def herm_inner(S):
    """Vector s with tr(S C).real = s . herm_pack(C) for Hermitian S."""
    m = S.shape[0]
    s = [S[i, i].real for i in range(m)]
    for i in range(m):
        for j in range(i + 1, m):
            s += [2.0 * S[i, j].real, 2.0 * S[i, j].imag]
    return np.array(s)


# --- subproblem assembly -----------------------------------------------------

@dataclass
class _Constraint:
    P: np.ndarray          # (R, xi_dim) complex quadratic rows
    d: np.ndarray          # (R,)
    S: list                # per C block: (mb, mb) Hermitian or None
    const: float

    def finalize(self):
        scale = max(
            float(np.max(np.abs(self.P) ** 2)) if self.P.size else 0.0,
            max((float(np.max(np.abs(S))) for S in self.S if S is not None),
                default=0.0),
            abs(self.const), 1e-30)
        self.norm = scale
        self.P = self.P / math.sqrt(scale)
        self.d = self.d / math.sqrt(scale)
        self.S = [None if S is None else S / scale for S in self.S]
        self.const /= scale
        # precompute constant pieces
        self.hess_xi = _realify_psd(2.0 * (self.P.conj().T @ self.P))
        self.s_lin = [None if S is None else herm_inner(S) for S in self.S]
        return self

    def value(self, xi, Cs):
        resid = self.P @ xi - self.d
        g = float(np.vdot(resid, resid).real) + self.const
        for S, C in zip(self.S, Cs):
            if S is not None:
                g += float(np.trace(S @ C).real)
        return g

    def grad_xi(self, xi):
        r = self.P.conj().T @ (self.P @ xi - self.d)
        return 2.0 * np.concatenate([r.real, r.imag])


def _realify_psd(Q):
    return np.block([[Q.real, -Q.imag], [Q.imag, Q.real]])


class ConvexSubproblem:
    """Power minimization over (sensing/computing vectors, lifted comm matrices)
    for fixed receivers, solved by a barrier interior-point method.

    The physical beam magnitudes needed to meet the three QoS families differ
    by many orders of magnitude (sensing runs over a doubly attenuated
    cascaded channel), so each beam gets its own coordinate scale: the
    magnitude at which a unit coordinate produces an order-one contribution
    to that beam's own QoS row.  All constraint algebra happens in the scaled
    coordinates, which keeps the Newton systems well conditioned."""

    def __init__(self, ch: ChannelSet, rx: RxBeams, delta, chi, gamma_db,
                 subspace=None, power_ref=None):
        self.ch = ch
        self.rx = rx
        M = ch.n_sensor_antennas
        K, I, O = ch.n_sensors, ch.n_targets, ch.n_clutters
        L, J = rx.z.shape[0], rx.u.shape[1]
        self.K, self.I, self.L, self.J, self.O, self.M = K, I, L, J, O, M
        self.gamma = 10.0 ** (np.asarray(gamma_db, float) / 10.0)

        def basis_for(kind, k, s):
            if subspace is None:
                return None
            return subspace.get((kind, k, s))

        self.scale = {}
        for k in range(K):
            for i in range(I):
                r = float(ch.rms_target[i]) * np.linalg.norm(
                    ch.G[k, i].conj().T @ rx.v[i])
                self.scale[("a", k, i)] = 1.0 / max(r, 1e-300)
            for l in range(L):
                r = np.linalg.norm(ch.H[k].conj().T @ rx.z[l])
                self.scale[("b", k, l)] = 1.0 / max(r, 1e-300)
            for j in range(J):
                u = rx.u[k, j]
                r = np.linalg.norm(ch.H[k].conj().T @ u)
                need = math.sqrt(float(self.gamma[k, j]) * ch.noise_power_w) \
                    * np.linalg.norm(u)
                self.scale[("c", k, j)] = max(need, 1e-300) / max(r, 1e-300)

        # xi layout: all a beams, then all b beams, reduced by bases
        self.xi_beams = []
        offset = 0
        for k in range(K):
            for i in range(I):
                B = basis_for("a", k, i)
                m = M if B is None else B.shape[1]
                self.xi_beams.append(("a", k, i, B, offset, m))
                offset += m
        for k in range(K):
            for l in range(L):
                B = basis_for("b", k, l)
                m = M if B is None else B.shape[1]
                self.xi_beams.append(("b", k, l, B, offset, m))
                offset += m
        self.xi_dim = offset
        self.c_blocks = []
        for k in range(K):
            for j in range(J):
                B = basis_for("c", k, j)
                m = M if B is None else B.shape[1]
                self.c_blocks.append((k, j, B, m))
        self.block_params = [m * m for (_, _, _, m) in self.c_blocks]
        self.n_params = 2 * self.xi_dim + sum(self.block_params)
        self.herm_bases = {m: herm_basis(m)
                           for m in {mb for (_, _, _, mb) in self.c_blocks}}

        # power objective in scaled coordinates, normalized so it is order one
        # at the expected optimum; the duality-gap termination is measured in
        # these units, so the reference must track the actual power level
        w = np.zeros(self.xi_dim)
        for kind, k, s, B, off, m in self.xi_beams:
            w[off:off + m] = self.scale[(kind, k, s)] ** 2
        cw = np.array([self.scale[("c", k, j)] ** 2
                       for (k, j, B, m) in self.c_blocks])
        if power_ref is None:
            power_ref = float(w.max(initial=0.0) + cw.max(initial=0.0))
        self.power_norm = max(float(power_ref), 1e-300)
        self.xi_weight = w / self.power_norm
        self.c_weight = cw / self.power_norm

        self.constraints = self._build(delta, chi)
        # barrier "dimension": inequality count plus logdet block sizes
        self.gap_units = len(self.constraints) + sum(
            m for (_, _, _, m) in self.c_blocks)

        # stacked constraint data so the line search evaluates every
        # constraint in one batched pass
        lens = [con.P.shape[0] for con in self.constraints]
        self._con_bounds = np.concatenate([[0], np.cumsum(lens)]).astype(int)
        self._con_rows = (np.vstack([con.P for con in self.constraints])
                          if self._con_bounds[-1]
                          else np.zeros((0, self.xi_dim), complex))
        self._con_d = (np.concatenate([con.d for con in self.constraints])
                       if self._con_bounds[-1] else np.zeros(0, complex))
        block_dim = sum(self.block_params)
        slin = np.zeros((len(self.constraints), block_dim))
        for ci, con in enumerate(self.constraints):
            off = 0
            for s_lin, m2 in zip(con.s_lin, self.block_params):
                if s_lin is not None:
                    slin[ci, off:off + m2] = s_lin
                off += m2
        self._con_slin = slin
        self._con_const = np.array([con.const for con in self.constraints])
        # feasibility-phase weights: violations measured relative to each
        # constraint's physical cap, so no constraint can hide a huge
        # absolute violation behind a large coefficient normalization
        self._p1w = np.array([con.norm / max(con.cap, 1e-300)
                              for con in self.constraints])
        # linear maps from packed Hermitian coordinates to flattened matrices
        self._unpack_maps = {m: np.array([herm_unpack(e, m).ravel()
                                          for e in np.eye(m * m)]).T
                             for m in self.herm_bases}
        # stacked per-constraint curvature and size-grouped block coordinate
        # indices, so Newton assembly runs as a few dense batched products
        self._hess_xi_stack = (
            np.stack([con.hess_xi for con in self.constraints])
            if self.constraints
            else np.zeros((0, 2 * self.xi_dim, 2 * self.xi_dim)))
        groups = {}
        off = 2 * self.xi_dim
        for m2, (_, _, _, m) in zip(self.block_params, self.c_blocks):
            groups.setdefault(m, []).append(off)
            off += m2
        self._block_groups = [
            (m, np.asarray(offs)[:, None] + np.arange(m * m))
            for m, offs in groups.items()]
        # power as an explicit quadratic-plus-linear form of the parameters
        # (packed diagonal coordinates come first within each block)
        quad = np.zeros(self.n_params)
        quad[:2 * self.xi_dim] = np.concatenate([self.xi_weight,
                                                 self.xi_weight])
        lin = np.zeros(self.n_params)
        off = 2 * self.xi_dim
        for wc, m2, (_, _, _, m) in zip(self.c_weight, self.block_params,
                                        self.c_blocks):
            lin[off:off + m] = wc
            off += m2
        self._power_quad = quad
        self._power_lin = lin

    # -- row helpers
    def _slot(self, kind, k, s):
        for kk, (knd, sk, ss, B, off, m) in enumerate(self.xi_beams):
            if (knd, sk, ss) == (kind, k, s):
                return B, off, m
        raise KeyError((kind, k, s))

    def _put(self, row, kind, k, s, vec):
        """Add the coefficients of a term vec^H x to a constraint row.

        Rows are stored conjugated so that row @ xi evaluates vec^H x in the
        scaled coordinates."""
        B, off, m = self._slot(kind, k, s)
        v = vec if B is None else B.conj().T @ vec
        row[off:off + m] += self.scale[(kind, k, s)] * v.conj()

    def _new_row(self):
        return np.zeros(self.xi_dim, complex)

    def _comm_S(self, rv):
        """Per-block coefficient of tr(S C) for leakage |rv^H H_k c|^2."""
        out = []
        for (k, j, B, m) in self.c_blocks:
            h = self.ch.H[k].conj().T @ rv
            if B is not None:
                h = B.conj().T @ h
            out.append(self.scale[("c", k, j)] ** 2 * np.outer(h, h.conj()))
        return out

    def _build(self, delta, chi):
        ch, rx = self.ch, self.rx
        K, I, L, J, O = self.K, self.I, self.L, self.J, self.O
        cons = []

        for i in range(I):
            v = rx.v[i]
            rows, ds = [], []
            row = self._new_row()
            for k in range(K):
                self._put(row, "a", k, i, float(ch.rms_target[i])
                          * (ch.G[k, i].conj().T @ v))
            rows.append(row)
            ds.append(float(ch.rms_target[i]))
            for k in range(K):
                for m in range(I):
                    if m == i:
                        continue
                    row = self._new_row()
                    self._put(row, "a", k, m, float(ch.rms_target[m])
                              * (ch.G[k, m].conj().T @ v))
                    rows.append(row)
                    ds.append(0.0)
                for o in range(O):
                    for m in range(I):
                        row = self._new_row()
                        self._put(row, "a", k, m, float(ch.rms_clutter[o])
                                  * (ch.F[k, o].conj().T @ v))
                        rows.append(row)
                        ds.append(0.0)
                for l in range(L):
                    row = self._new_row()
                    self._put(row, "b", k, l, ch.H[k].conj().T @ v)
                    rows.append(row)
                    ds.append(0.0)
            const = ch.noise_power_w * float(np.vdot(v, v).real) - float(delta[i])
            con = _Constraint(np.array(rows), np.array(ds, complex),
                              self._comm_S(v), const).finalize()
            con.cap = float(delta[i])
            cons.append(con)

        for l in range(L):
            z = rx.z[l]
            rows, ds = [], []
            inv_k = 1.0 / K
            for k in range(K):
                row = self._new_row()
                self._put(row, "b", k, l, inv_k * (ch.H[k].conj().T @ z))
                rows.append(row)
                ds.append(inv_k)
                for m in range(L):
                    if m == l:
                        continue
                    row = self._new_row()
                    self._put(row, "b", k, m, inv_k * (ch.H[k].conj().T @ z))
                    rows.append(row)
                    ds.append(0.0)
                for i in range(I):
                    row = self._new_row()
                    self._put(row, "a", k, i, inv_k * float(ch.rms_target[i])
                              * (ch.G[k, i].conj().T @ z))
                    rows.append(row)
                    ds.append(0.0)
                for o in range(O):
                    for m in range(I):
                        row = self._new_row()
                        self._put(row, "a", k, m, inv_k * float(ch.rms_clutter[o])
                                  * (ch.F[k, o].conj().T @ z))
                        rows.append(row)
                        ds.append(0.0)
            S = [Sb / K**2 for Sb in self._comm_S(z)]
            const = ch.noise_power_w * float(np.vdot(z, z).real) / K**2 - float(chi[l])
            con = _Constraint(np.array(rows), np.array(ds, complex),
                              S, const).finalize()
            con.cap = float(chi[l])
            cons.append(con)

        for bi, (k, j, B, m) in enumerate(self.c_blocks):
            u = rx.u[k, j]
            rows, ds = [], []
            for kk in range(K):
                for l in range(L):
                    row = self._new_row()
                    self._put(row, "b", kk, l, ch.H[kk].conj().T @ u)
                    rows.append(row)
                    ds.append(0.0)
                for i in range(I):
                    row = self._new_row()
                    self._put(row, "a", kk, i, float(ch.rms_target[i])
                              * (ch.G[kk, i].conj().T @ u))
                    rows.append(row)
                    ds.append(0.0)
                for o in range(O):
                    for i in range(I):
                        row = self._new_row()
                        self._put(row, "a", kk, i, float(ch.rms_clutter[o])
                                  * (ch.F[kk, o].conj().T @ u))
                        rows.append(row)
                        ds.append(0.0)
            S = self._comm_S(u)
            S[bi] = -S[bi] / float(self.gamma[k, j])
            const = ch.noise_power_w * float(np.vdot(u, u).real)
            con = _Constraint(np.array(rows), np.array(ds, complex),
                              S, const).finalize()
            con.cap = const
            cons.append(con)
        return cons

    # -- parameter packing
    def pack(self, tx: TxBeams, ridge_frac=1e-6):
        """Scaled parameter vector from physical beams; lifted comm blocks get
        a PD ridge so the log-det barrier starts well inside the cone."""
        xi = np.zeros(self.xi_dim, complex)
        for kind, k, s, B, off, m in self.xi_beams:
            x = {"a": tx.a, "b": tx.b}[kind][k, s] / self.scale[(kind, k, s)]
            xi[off:off + m] = x if B is None else B.conj().T @ x
        ys = []
        for (k, j, B, m) in self.c_blocks:
            c = tx.c[k, j] / self.scale[("c", k, j)]
            if B is not None:
                c = B.conj().T @ c
            C = np.outer(c, c.conj())
            # unit floor: solutions are order one in scaled coordinates
            tau = max(ridge_frac * float(np.trace(C).real) / m, 1e-6)
            ys.append(herm_pack(C + tau * np.eye(m)))
        return np.concatenate([xi.real, xi.imag] + ys)

    def split(self, theta):
        P = self.xi_dim
        xi = theta[:P] + 1j * theta[P:2 * P]
        Cs, off = [], 2 * P
        for (m2, (_, _, _, m)) in zip(self.block_params, self.c_blocks):
            Cs.append(herm_unpack(theta[off:off + m2], m))
            off += m2
        return xi, Cs

    def unpack(self, theta):
        """Physical beams from a scaled parameter vector.

        Comm beams come from the dominant eigenpair of each lifted block;
        returns (tx-arrays, rank ratios lambda2/lambda1 per block)."""
        xi, Cs = self.split(theta)
        K, I, L, J, M = self.K, self.I, self.L, self.J, self.M
        a = np.zeros((K, I, M), complex)
        b = np.zeros((K, L, M), complex)
        c = np.zeros((K, J, M), complex)
        for kind, k, s, B, off, m in self.xi_beams:
            x = xi[off:off + m]
            x = x if B is None else B @ x
            {"a": a, "b": b}[kind][k, s] = self.scale[(kind, k, s)] * x
        ratios = np.zeros((K, J))
        for C, (k, j, B, m) in zip(Cs, self.c_blocks):
            vals, vecs = hermitian_eig(C)
            lead = max(vals[0], 0.0)
            ratios[k, j] = (max(vals[1], 0.0) / lead) if (m > 1 and lead > 0) else 0.0
            vec = vecs[:, 0] if B is None else B @ vecs[:, 0]
            c[k, j] = self.scale[("c", k, j)] * math.sqrt(lead) * vec
        return TxBeams(a, b, c), ratios

    # -- barrier machinery
    def power(self, theta):
        """Physical total transmit power at a scaled parameter vector."""
        return self._objective(theta) * self.power_norm

    def _objective(self, theta):
        """Normalized power used as the barrier objective (order one)."""
        return float(self._power_quad @ (theta * theta)
                     + self._power_lin @ theta)

    def _con_values(self, theta):
        """All constraint values g_i(theta) in one batched evaluation."""
        P = self.xi_dim
        xi = theta[:P] + 1j * theta[P:2 * P]
        resid = self._con_rows @ xi - self._con_d
        sq = resid.real ** 2 + resid.imag ** 2
        csum = np.concatenate([[0.0], np.cumsum(sq)])
        quad = csum[self._con_bounds[1:]] - csum[self._con_bounds[:-1]]
        return quad + self._con_slin @ theta[2 * P:] + self._con_const

    def _barrier_terms(self, theta, slack=None):
        """(sum of -log(-g) and -logdet terms, or inf if outside the domain)."""
        g = self._con_values(theta)
        if slack is not None:
            g = g * self._p1w - slack
        if g.size and g.max() >= 0:
            return math.inf
        total = -float(np.sum(np.log(-g)))
        for m, idx in self._block_groups:
            Cmat = (theta[idx] @ self._unpack_maps[m].T).reshape(-1, m, m)
            try:
                chol = np.linalg.cholesky(Cmat)
            except np.linalg.LinAlgError:
                return math.inf
            diag = np.einsum('bii->bi', chol).real
            if not np.all(diag > 0):
                return math.inf
            total -= 2.0 * float(np.sum(np.log(diag)))
        return total

    def _grad_hess(self, t, theta, phase1_slack=None):
        """Gradient and Hessian of t*f0 + barriers at theta.

        In phase I (phase1_slack given) the objective is the slack variable
        itself, appended as the last coordinate of theta by the caller."""
        n = self.n_params
        P = self.xi_dim
        xi = theta[:P] + 1j * theta[P:2 * P]
        phase1 = phase1_slack is not None
        dim = n + 1 if phase1 else n
        grad = np.zeros(dim)
        hess = np.zeros((dim, dim))

        if phase1:
            grad[-1] += t
        else:
            w2 = np.concatenate([self.xi_weight, self.xi_weight])
            grad[:2 * P] += t * 2.0 * w2 * theta[:2 * P]
            hess[:2 * P, :2 * P] += np.diag(t * 2.0 * w2)
            grad[2 * P:n] += t * self._power_lin[2 * P:]

        n_con = len(self.constraints)
        w1 = self._p1w if phase1 else np.ones(n_con)
        g = self._con_values(theta) * w1
        if phase1:
            g -= phase1_slack
        resid = self._con_rows @ xi - self._con_d
        halves = np.add.reduceat(self._con_rows.conj() * resid[:, None],
                                 self._con_bounds[:-1], axis=0)
        G = np.empty((n_con, dim))
        G[:, :P] = 2.0 * halves.real
        G[:, P:2 * P] = 2.0 * halves.imag
        G[:, 2 * P:n] = self._con_slin
        G *= w1[:, None]
        if phase1:
            G[:, -1] = -1.0
        inv_g = 1.0 / (-g)
        grad += G.T @ inv_g
        hess += (G * (inv_g ** 2)[:, None]).T @ G
        hess[:2 * P, :2 * P] += np.tensordot(w1 * inv_g, self._hess_xi_stack,
                                             axes=1)

        for m, idx in self._block_groups:
            U = self._unpack_maps[m]
            Cmat = (theta[idx] @ U.T).reshape(-1, m, m)
            Cmat = 0.5 * (Cmat + Cmat.conj().transpose(0, 2, 1))
            try:
                Li = np.linalg.inv(np.linalg.cholesky(Cmat))
                Cinv = Li.conj().transpose(0, 2, 1) @ Li
            except np.linalg.LinAlgError:
                # blocks approach rank one along the central path, so the
                # factorization can fail; floor the spectrum instead
                cw, cV = np.linalg.eigh(Cmat)
                cw = np.maximum(cw, 1e-14 * np.maximum(cw[:, -1:], 1e-300))
                Cinv = (cV * (1.0 / cw)[:, None, :]) \
                    @ cV.conj().transpose(0, 2, 1)
            Cinv = 0.5 * (Cinv + Cinv.conj().transpose(0, 2, 1))
            ginner = (Cinv.reshape(-1, m * m).conj() @ U).real
            # tr(Cinv E_p Cinv E_q) for all Hermitian basis pairs at once:
            # vec(E_q)^H (Cinv kron Cinv^T) vec(E_p), built by broadcasting
            CinvT = Cinv.transpose(0, 2, 1)
            Kb = (Cinv[:, :, None, :, None] * CinvT[:, None, :, None, :]) \
                .reshape(-1, m * m, m * m)
            Hb = (U.conj().T @ (Kb @ U)).real
            Hb = 0.5 * (Hb + Hb.transpose(0, 2, 1))
            for bi in range(idx.shape[0]):
                off = int(idx[bi, 0])
                grad[off:off + m * m] += -ginner[bi]
                hess[off:off + m * m, off:off + m * m] += Hb[bi]
        return grad, hess

    def _segment_sums(self, values):
        csum = np.concatenate([[0.0], np.cumsum(values)])
        return csum[self._con_bounds[1:]] - csum[self._con_bounds[:-1]]

    def _max_feasible_step(self, theta, step, phase1):
        """Largest step multiple keeping every barrier term in its domain.

        Constraint values are quadratic along a ray and the lifted blocks
        leave the cone at a generalized eigenvalue, so the boundary is exact
        and the line search can start just inside it."""
        if phase1:
            core, dcore = theta[:-1], step[:-1]
            s0, ds = theta[-1], step[-1]
        else:
            core, dcore = theta, step
        P = self.xi_dim
        xi = core[:P] + 1j * core[P:2 * P]
        dxi = dcore[:P] + 1j * dcore[P:2 * P]
        r0 = self._con_rows @ xi - self._con_d
        r1 = self._con_rows @ dxi
        A = self._segment_sums(r1.real ** 2 + r1.imag ** 2)
        B = 2.0 * self._segment_sums(r0.real * r1.real + r0.imag * r1.imag)
        B = B + self._con_slin @ dcore[2 * P:]
        C0 = self._con_values(core)
        if phase1:
            A = A * self._p1w
            B = B * self._p1w - ds
            C0 = C0 * self._p1w - s0
        eta = math.inf
        for a, b, c in zip(A, B, C0):
            if a <= 0.0:
                if b > 0.0 and c < 0.0:
                    eta = min(eta, -c / b)
                continue
            disc = max(b * b - 4.0 * a * c, 0.0)
            root = (-b + math.sqrt(disc)) / (2.0 * a)
            if root > 0.0:
                eta = min(eta, root)
        for m, idx in self._block_groups:
            U = self._unpack_maps[m]
            Cmat = (core[idx] @ U.T).reshape(-1, m, m)
            Dmat = (dcore[idx] @ U.T).reshape(-1, m, m)
            try:
                Li = np.linalg.inv(np.linalg.cholesky(Cmat))
            except np.linalg.LinAlgError:
                # a block already outside the cone has no boundary crossing
                # along the ray; fall back to one block at a time
                for bi in range(idx.shape[0]):
                    try:
                        L1 = np.linalg.cholesky(Cmat[bi])
                    except np.linalg.LinAlgError:
                        continue
                    Li1 = np.linalg.inv(L1)
                    w = np.linalg.eigvalsh(Li1 @ Dmat[bi] @ Li1.conj().T)
                    if w[0] < 0.0:
                        eta = min(eta, -1.0 / w[0])
                continue
            W = np.linalg.eigvalsh(Li @ Dmat @ Li.conj().transpose(0, 2, 1))
            wmin = W[:, 0]
            neg = wmin < 0.0
            if np.any(neg):
                eta = min(eta, float(np.min(-1.0 / wmin[neg])))
        return eta

    def _center(self, t, theta, opt: TtpmOptions, phase1=False,
                stop_when=None):
        """Newton iterations at fixed barrier weight t (damped, backtracking)."""
        # the decrement measures progress in phi = t*f0 + barrier units, so
        # the stop threshold must scale with t: a centering error of dec/(2t)
        # in objective units is what the duality-gap bound actually needs
        tol = opt.newton_tol * max(1.0, t)
        for _ in range(opt.max_newton_iter):
            slack = theta[-1] if phase1 else None
            core = theta[:-1] if phase1 else theta
            grad, hess = self._grad_hess(t, core, slack if phase1 else None)
            # a constraint sitting numerically on its boundary overflows the
            # barrier derivatives; no direction computed from them is usable
            if not (np.isfinite(grad).all() and np.isfinite(hess).all()):
                break
            # Jacobi preconditioning keeps the solve stable across the wide
            # dynamic range of the constraint curvatures; eigenvalue clipping
            # stops near-singular directions from injecting noise
            d = 1.0 / np.sqrt(np.maximum(np.diag(hess), 1e-300))
            hs = hess * np.outer(d, d)
            gs = grad * d
            try:
                w, Q = np.linalg.eigh(0.5 * (hs + hs.T))
            except np.linalg.LinAlgError:
                break
            w = np.maximum(w, 1e-13 * max(w[-1], 1e-300))
            newton = d * (Q @ ((Q.T @ -gs) / w))
            if float(-grad @ newton) <= tol:
                break
            phi0 = self._phi(t, theta, phase1)
            moved = False
            # preconditioned gradient fallback when the Newton direction is
            # too noisy to make progress
            for step in (newton, -d * gs / max(np.linalg.norm(gs), 1e-300)):
                dec = float(-grad @ step)
                if dec <= 0.0:
                    continue
                # start the search just inside the barrier domain boundary
                eta = min(1.0, 0.99 * self._max_feasible_step(theta, step,
                                                              phase1))
                if eta <= 0.0:
                    continue
                for _ in range(_MAX_BACKTRACKS):
                    cand = theta + eta * step
                    phi1 = self._phi(t, cand, phase1)
                    if phi1 <= phi0 - _ARMIJO_C * eta * dec:
                        moved = True
                        break
                    eta *= 0.5
                if moved:
                    break
            if not moved:
                break
            theta = theta + eta * step
            # once the achievable phi decrease falls below floating-point
            # resolution the iteration can only tread water
            if phi0 - phi1 <= 1e-14 * abs(phi0):
                break
            if stop_when is not None and stop_when(theta):
                break
        return theta

    def _phi(self, t, theta, phase1):
        if phase1:
            core, s = theta[:-1], theta[-1]
            bar = self._barrier_terms(core, slack=s)
            return t * s + bar
        return t * self._objective(theta) + self._barrier_terms(theta)

    def strictly_feasible(self, theta, margin=_STRICT_MARGIN):
        return self._barrier_terms(theta) < math.inf and self._max_g(theta) < -margin

    def _max_g(self, theta):
        return float(self._con_values(theta).max())

    def phase1(self, theta0, opt: TtpmOptions):
        """Drive the maximum constraint violation down by a slack-variable
        barrier pass; returns (theta, final max violation).

        A nonnegative final violation means no beams satisfy the QoS under
        the current receivers; the returned point is then the minimax
        compromise."""
        g0 = float((self._con_values(theta0) * self._p1w).max())
        s = g0 + 0.5 * (1.0 + abs(g0))
        theta = np.concatenate([theta0, [s]])
        t = opt.barrier_init
        target = -10.0 * _STRICT_MARGIN

        def interior(th):
            return th[-1] < target and self._max_g(th[:-1]) < target

        while True:
            theta = self._center(t, theta, opt, phase1=True, stop_when=interior)
            if interior(theta):
                break
            if (self.gap_units + 1) / t <= opt.barrier_gap_tol:
                break
            t *= opt.barrier_scale
        return theta[:-1], self._max_g(theta[:-1])

    def minimize(self, theta, opt: TtpmOptions, t_start=None):
        t = opt.barrier_init if t_start is None else t_start
        extra = 0
        while True:
            theta = self._center(t, theta, opt)
            if self.gap_units / t <= opt.barrier_gap_tol:
                # the second eigenvalue of a lifted block decays like 1/t, so
                # when a block is not yet numerically rank one a few more
                # barrier rungs sharpen it at marginal cost
                _, ratios = self.unpack(theta)
                if ratios.max(initial=0.0) <= 0.1 * opt.rank_tol or extra >= 3:
                    return theta
                extra += 1
            t *= opt.barrier_scale


def solve_convex(prob: ConvexSubproblem, tx_init: TxBeams,
                 opt: TtpmOptions | None = None):
    """Solve one fixed-receiver subproblem from the given starting beams.

    Returns (tx, ratios, power): the extracted physical beams, the
    lambda2/lambda1 ratio of each lifted comm block, and the achieved total
    transmit power in watts."""
    opt = opt or TtpmOptions()
    theta = prob.pack(tx_init)
    if not prob.strictly_feasible(theta):
        theta, violation = prob.phase1(theta, opt)
        if violation >= 0:
            raise Infeasible(
                f"subproblem infeasible: max constraint violation "
                f"{violation:.3e}")
    theta = prob.minimize(theta, opt)
    tx, ratios = prob.unpack(theta)
    return tx, ratios, prob.power(theta)


# --- outer alternating loop --------------------------------------------------

def _trim_sinr(ch, tx, rx, gamma, margin=1e-3):
    """Scale comm beams down to just above their SINR floors.

    A receiver refresh can leave the comm beams hugely oversized (the new
    receivers reject far more interference), and oversized beams leak into
    every other constraint, which would make the next subproblem start far
    from its optimum.  Shrinking a beam only helps the other constraints,
    so one pass is enough."""
    for k in range(ch.n_sensors):
        for j in range(tx.c.shape[1]):
            got = metrics.comm_sinr(ch, tx, rx.u[k, j], k, j,
                                    InterferenceVariant.APPENDIX_A)
            need = float(gamma[k, j]) * (1.0 + margin)
            if got > need:
                tx.c[k, j] *= math.sqrt(need / got)


def _restore_sinr(ch, tx, rx, gamma, max_passes=5):
    """Scale extracted comm beams up until every SINR floor holds again."""
    for _ in range(max_passes):
        worst = 1.0
        for k in range(ch.n_sensors):
            for j in range(tx.c.shape[1]):
                got = metrics.comm_sinr(ch, tx, rx.u[k, j], k, j,
                                        InterferenceVariant.APPENDIX_A)
                need = float(gamma[k, j])
                if got < need * (1.0 - 1e-12) and got > 0:
                    factor = math.sqrt(need / got)
                    tx.c[k, j] *= factor
                    worst = max(worst, factor)
        if worst <= 1.0 + 1e-12:
            return
    log.warning("SINR restoration did not settle after %d passes", max_passes)


def _scale_up_init(ch: ChannelSet, tx: TxBeams, delta, chi, gamma):
    """Scale the initial beams so each signal path roughly meets its own QoS.

    There is no power budget here, and with vanishing beams the first MMSE
    receivers are interference-blind, which can leave the first subproblem
    without any feasible beams.  Bringing every own-path response to the
    level its QoS target implies puts the first receivers near the final
    operating point."""
    s2 = ch.noise_power_w
    K = ch.n_sensors
    for k in range(K):
        for i in range(tx.a.shape[1]):
            # coherent echo SNR of roughly 2/delta keeps the MSE near delta/2
            want = math.sqrt(max(2.0 / float(delta[i]), 2.0) * s2 / K)
            r = float(ch.rms_target[i]) * np.linalg.norm(ch.G[k, i] @ tx.a[k, i])
            tx.a[k, i] *= want / max(r, 1e-300)
        for l in range(tx.b.shape[1]):
            want = math.sqrt(4.0 / float(chi[l]) * s2) / K
            r = np.linalg.norm(ch.H[k] @ tx.b[k, l])
            tx.b[k, l] *= want / max(r, 1e-300)
        for j in range(tx.c.shape[1]):
            want = math.sqrt(4.0 * float(gamma[k, j]) * s2)
            r = np.linalg.norm(ch.H[k] @ tx.c[k, j])
            tx.c[k, j] *= want / max(r, 1e-300)


def solve(cfg: SystemConfig, qos: QosSpec | None = None,
          ch: ChannelSet | None = None, seed: int = 0,
          opt: TtpmOptions | None = None) -> TtpmResult:
    """Minimize total transmit power subject to the QoS triple."""
    qos = qos or QosSpec()
    opt = opt or TtpmOptions()
    if ch is None:
        ch = generate_channels(cfg, seed)
    delta, chi, gamma_db = qos.resolved(cfg)
    gamma = 10.0 ** (gamma_db / 10.0)

    tx = TxBeams.algorithm_init(cfg.n_sensors, cfg.n_targets, cfg.n_model_params,
                                cfg.n_comm_streams, cfg.n_sensor_antennas,
                                cfg.tx_power_budget_w)
    _scale_up_init(ch, tx, delta, chi, gamma)
    frozen = None
    power_trace = []
    rank_violations = []
    converged = False
    n_outer = 0
    last_violation = math.inf
    rx = None
    for it in range(opt.max_outer_iter):
        rule = opt.receiver_rule
        if rule is ReceiverRule.FIXED_MMSE and frozen is None:
            rule = ReceiverRule.MMSE
        rx = update_receivers(ch, tx, rule, frozen)
        if frozen is None:
            frozen = rx
        _trim_sinr(ch, tx, rx, gamma)
        subspace = (opt.subspace_provider(ch, tx, rx)
                    if opt.subspace_provider is not None else None)
        prob = ConvexSubproblem(ch, rx, delta, chi, gamma_db, subspace,
                                power_ref=metrics.total_power(tx))
        theta = prob.pack(tx)
        if not prob.strictly_feasible(theta):
            theta, violation = prob.phase1(theta, opt)
            if violation >= 0:
                # no beams satisfy the QoS under the current receivers; take
                # the minimax compromise, refresh the receivers, and retry
                # (extended phase I across receiver updates)
                last_violation = violation
                tx, _ = prob.unpack(theta)
                continue
        t_start = opt.barrier_init if n_outer == 0 else opt.barrier_warm_init
        theta = prob.minimize(theta, opt, t_start)
        tx, ratios = prob.unpack(theta)
        n_outer += 1
        for (k, j, _, m) in prob.c_blocks:
            if m > 1 and ratios[k, j] > opt.rank_tol:
                rank_violations.append((n_outer, k, j, float(ratios[k, j])))
                log.warning("lifted comm block (%d,%d) not rank one: "
                            "lambda2/lambda1 = %.2e", k, j, ratios[k, j])
        _restore_sinr(ch, tx, rx, gamma)
        power = metrics.total_power(tx)
        power_trace.append(power)
        best = (TxBeams(tx.a.copy(), tx.b.copy(), tx.c.copy()), rx)
        if len(power_trace) > 1 and abs(power_trace[-2] - power) \
                <= opt.outer_tol * max(power, 1e-30):
            converged = True
            break
    if not power_trace:
        raise Infeasible(
            f"phase I stalled at max constraint violation {last_violation:.3e}")
    # a trailing feasibility-phase iteration can leave compromise beams in
    # tx; report the last iterate that actually met the QoS
    tx, rx = best
    report = metrics.evaluate(ch, tx, rx)
    return TtpmResult(tx=tx, rx=rx, report=report, power_trace=power_trace,
                      n_outer=n_outer, converged=converged,
                      rank_violations=rank_violations)


def constraint_slacks(cfg: SystemConfig, ch: ChannelSet, result: TtpmResult,
                      qos: QosSpec):
    """Relative QoS margins at a solution; nonnegative means satisfied."""
    delta, chi, gamma_db = qos.resolved(cfg)
    gamma = 10.0 ** (gamma_db / 10.0)
    rep = metrics.evaluate(ch, result.tx, result.rx)
    sens = (delta - rep.mse_sens) / delta
    comp = (chi - rep.mse_comp) / chi
    comm = (rep.sinr - gamma) / gamma
    return sens, comp, comm
