"""Shared test utilities.

Everything here is deliberately naive: metric values are accumulated with
plain Python loops straight from the channel matrices, derivatives come
from central finite differences, and the lifted power-minimization oracle
is a first-order method assembled independently of the package's own
interior-point solver.  The test suite uses these as ground truth for the
vectorized implementations.
"""

import math

import numpy as np
import scipy.optimize

from iscc.metrics import TxBeams
from iscc.scenario import desk_config


def tiny_config(**overrides):
    """Smallest interesting instance: 2 sensors, 2 antennas each, 4 at the BS."""
    base = dict(n_bs_antennas=4, n_sensor_antennas=2, n_sensors=2)
    base.update(overrides)
    return desk_config(**base)


def random_beams(cfg, ch, seed):
    """Random beams scaled so each primary response has about unit norm.

    The raw channels carry double path loss, so unscaled random beams would
    produce metrics indistinguishable from the zero-beam values; this scaling
    gives every term of every metric a nontrivial contribution.
    """
    rng = np.random.default_rng(seed)
    K, M = cfg.n_sensors, cfg.n_sensor_antennas
    tx = TxBeams.zeros(K, cfg.n_targets, cfg.n_model_params,
                       cfg.n_comm_streams, M)

    def draw():
        return rng.standard_normal(M) + 1j * rng.standard_normal(M)

    for k in range(K):
        for i in range(cfg.n_targets):
            x = draw()
            r = float(ch.rms_target[i]) * np.linalg.norm(ch.G[k, i] @ x)
            tx.a[k, i] = x / max(K * r, 1e-300)
        for l in range(cfg.n_model_params):
            x = draw()
            tx.b[k, l] = x / max(K * np.linalg.norm(ch.H[k] @ x), 1e-300)
        for j in range(cfg.n_comm_streams):
            x = draw()
            tx.c[k, j] = x / max(np.linalg.norm(ch.H[k] @ x), 1e-300)
    return tx


# --- naive metric accumulation ----------------------------------------------

def naive_sensing_mse(ch, tx, v, i):
    K, I = ch.n_sensors, ch.n_targets
    L, J = tx.b.shape[1], tx.c.shape[1]
    R2t = ch.rms_target ** 2
    R2c = ch.rms_clutter ** 2
    s = sum(np.vdot(v, ch.G[k, i] @ tx.a[k, i]) for k in range(K))
    out = R2t[i] * abs(s - 1.0) ** 2
    for k in range(K):
        for m in range(I):
            if m != i:
                out += R2t[m] * abs(np.vdot(v, ch.G[k, m] @ tx.a[k, m])) ** 2
        for o in range(ch.n_clutters):
            for m in range(I):
                out += R2c[o] * abs(np.vdot(v, ch.F[k, o] @ tx.a[k, m])) ** 2
        for l in range(L):
            out += abs(np.vdot(v, ch.H[k] @ tx.b[k, l])) ** 2
        for j in range(J):
            out += abs(np.vdot(v, ch.H[k] @ tx.c[k, j])) ** 2
    return float(out + ch.noise_power_w * np.vdot(v, v).real)


def naive_computing_mse(ch, tx, z, l):
    K, I = ch.n_sensors, ch.n_targets
    L, J = tx.b.shape[1], tx.c.shape[1]
    out = 0.0
    for k in range(K):
        out += abs(np.vdot(z, ch.H[k] @ tx.b[k, l]) - 1.0) ** 2
        for m in range(L):
            if m != l:
                out += abs(np.vdot(z, ch.H[k] @ tx.b[k, m])) ** 2
        for i in range(I):
            out += ch.rms_target[i] ** 2 \
                * abs(np.vdot(z, ch.G[k, i] @ tx.a[k, i])) ** 2
        for o in range(ch.n_clutters):
            for m in range(I):
                out += ch.rms_clutter[o] ** 2 \
                    * abs(np.vdot(z, ch.F[k, o] @ tx.a[k, m])) ** 2
        for j in range(J):
            out += abs(np.vdot(z, ch.H[k] @ tx.c[k, j])) ** 2
    out += ch.noise_power_w * np.vdot(z, z).real
    return float(out) / K ** 2


def naive_interference_x(ch, tx, u):
    K, I = ch.n_sensors, ch.n_targets
    out = 0.0
    for k in range(K):
        for l in range(tx.b.shape[1]):
            out += abs(np.vdot(u, ch.H[k] @ tx.b[k, l])) ** 2
        for i in range(I):
            out += ch.rms_target[i] ** 2 \
                * abs(np.vdot(u, ch.G[k, i] @ tx.a[k, i])) ** 2
        for o in range(ch.n_clutters):
            for m in range(I):
                out += ch.rms_clutter[o] ** 2 \
                    * abs(np.vdot(u, ch.F[k, o] @ tx.a[k, m])) ** 2
    return float(out)


def naive_comm_sinr(ch, tx, u, k, j):
    """SINR with every other comm stream counted as interference."""
    K, J = ch.n_sensors, tx.c.shape[1]
    num = abs(np.vdot(u, ch.H[k] @ tx.c[k, j])) ** 2
    if num == 0.0:
        return 0.0
    den = 0.0
    for kk in range(K):
        for jj in range(J):
            if (kk, jj) != (k, j):
                den += abs(np.vdot(u, ch.H[kk] @ tx.c[kk, jj])) ** 2
    den += naive_interference_x(ch, tx, u)
    den += ch.noise_power_w * float(np.vdot(u, u).real)
    return float(num / den)


def naive_covariance(ch, tx):
    N = ch.n_bs_antennas
    xi = ch.noise_power_w * np.eye(N, dtype=complex)
    for k in range(ch.n_sensors):
        for j in range(tx.c.shape[1]):
            h = ch.H[k] @ tx.c[k, j]
            xi += np.outer(h, h.conj())
        for l in range(tx.b.shape[1]):
            h = ch.H[k] @ tx.b[k, l]
            xi += np.outer(h, h.conj())
        for i in range(ch.n_targets):
            h = ch.rms_target[i] * (ch.G[k, i] @ tx.a[k, i])
            xi += np.outer(h, h.conj())
        for o in range(ch.n_clutters):
            for m in range(ch.n_targets):
                h = ch.rms_clutter[o] * (ch.F[k, o] @ tx.a[k, m])
                xi += np.outer(h, h.conj())
    return xi


# --- finite differences ------------------------------------------------------

def fd_complex_grad(f, x, h=None):
    """Central-difference gradient of a real function of a complex vector,
    returned over the stacked (real, imag) parameterization."""
    x = np.asarray(x, dtype=complex)
    if h is None:
        h = 1e-6 * (1.0 + np.linalg.norm(x))
    g = np.zeros(2 * x.size)
    for t in range(x.size):
        for unit, slot in ((1.0, t), (1j, x.size + t)):
            e = np.zeros(x.size, complex)
            e[t] = unit
            g[slot] = (f(x + h * e) - f(x - h * e)) / (2.0 * h)
    return g


def fd_second_directional(f, x, d, h):
    """Second central difference of f along complex direction d."""
    return (f(x + h * d) - 2.0 * f(x) + f(x - h * d)) / h ** 2


# --- independent lifted power-minimization oracle ---------------------------

_SQRT2 = math.sqrt(2.0)


def _pack_herm(C):
    """Isometric real coordinates of a Hermitian matrix.

    Off-diagonal parts carry a sqrt(2) factor so the Euclidean norm of the
    coordinates equals the Frobenius norm of the matrix; eigenvalue clipping
    of the unpacked matrix is then the exact projection onto the PSD cone in
    these coordinates.
    """
    m = C.shape[0]
    y = [C[i, i].real for i in range(m)]
    for i in range(m):
        for j in range(i + 1, m):
            y += [_SQRT2 * C[i, j].real, _SQRT2 * C[i, j].imag]
    return np.array(y)


def _unpack_herm(y, m):
    C = np.zeros((m, m), complex)
    idx = m
    for i in range(m):
        C[i, i] = y[i]
    for i in range(m):
        for j in range(i + 1, m):
            C[i, j] = (y[idx] + 1j * y[idx + 1]) / _SQRT2
            C[j, i] = (y[idx] - 1j * y[idx + 1]) / _SQRT2
            idx += 2
    return C


class LiftedPowerOracle:
    """First-order reference solver for the fixed-receiver subproblem.

    Minimizes total transmit power over (a, b) vectors and lifted Hermitian
    PSD comm blocks C subject to the sensing/computation MSE caps and the
    per-stream SINR floors, using projected gradient steps on a quadratic
    penalty function with multiplier updates.  Assembled with plain loops
    directly from the channel matrices; shares no code with the package's
    interior-point solver.
    """

    def __init__(self, ch, rx, delta, chi, gamma):
        self.ch = ch
        self.M = ch.n_sensor_antennas
        K, I = ch.n_sensors, ch.n_targets
        L, J = rx.z.shape[0], rx.u.shape[1]
        self.K, self.I, self.L, self.J = K, I, L, J
        s2 = ch.noise_power_w

        # variable layout: per-beam scaled coordinates so the optimizer works
        # on order-one numbers despite the doubly attenuated channels
        self.vec_beams = [("a", k, i) for k in range(K) for i in range(I)] \
            + [("b", k, l) for k in range(K) for l in range(L)]
        self.blocks = [(k, j) for k in range(K) for j in range(J)]
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
                need = math.sqrt(float(gamma[k, j]) * s2) * np.linalg.norm(u)
                self.scale[("c", k, j)] = max(need, 1e-300) / max(r, 1e-300)

        M = self.M
        self.nv = len(self.vec_beams) * M
        self.nh = M * M
        self.dim = 2 * self.nv + len(self.blocks) * self.nh

        def coeff(kind, k, s, vec):
            """Scaled-coordinate coefficient row for a term vec^H x."""
            return self.scale[(kind, k, s)] * np.asarray(vec, complex).conj()

        # each constraint: (rows, offsets, trace coefficient per block, const,
        # cap); g = sum |row . xi_part - d|^2 + sum tr(S C) + const <= 0
        cons = []
        for i in range(I):
            v = rx.v[i]
            rows, ds = [], []
            row = {}
            for k in range(K):
                row[("a", k, i)] = coeff("a", k, i, float(ch.rms_target[i])
                                         * (ch.G[k, i].conj().T @ v))
            rows.append(row)
            ds.append(float(ch.rms_target[i]))
            for k in range(K):
                for m in range(I):
                    if m == i:
                        continue
                    rows.append({("a", k, m): coeff(
                        "a", k, m, float(ch.rms_target[m])
                        * (ch.G[k, m].conj().T @ v))})
                    ds.append(0.0)
                for o in range(ch.n_clutters):
                    for m in range(I):
                        rows.append({("a", k, m): coeff(
                            "a", k, m, float(ch.rms_clutter[o])
                            * (ch.F[k, o].conj().T @ v))})
                        ds.append(0.0)
                for l in range(L):
                    rows.append({("b", k, l): coeff(
                        "b", k, l, ch.H[k].conj().T @ v)})
                    ds.append(0.0)
            S = self._trace_coeffs(v)
            const = s2 * float(np.vdot(v, v).real) - float(delta[i])
            cons.append((rows, ds, S, const, float(delta[i])))

        for l in range(L):
            z = rx.z[l]
            rows, ds = [], []
            for k in range(K):
                rows.append({("b", k, l): coeff(
                    "b", k, l, (ch.H[k].conj().T @ z) / K)})
                ds.append(1.0 / K)
                for m in range(L):
                    if m == l:
                        continue
                    rows.append({("b", k, m): coeff(
                        "b", k, m, (ch.H[k].conj().T @ z) / K)})
                    ds.append(0.0)
                for i in range(I):
                    rows.append({("a", k, i): coeff(
                        "a", k, i, float(ch.rms_target[i])
                        * (ch.G[k, i].conj().T @ z) / K)})
                    ds.append(0.0)
                for o in range(ch.n_clutters):
                    for m in range(I):
                        rows.append({("a", k, m): coeff(
                            "a", k, m, float(ch.rms_clutter[o])
                            * (ch.F[k, o].conj().T @ z) / K)})
                        ds.append(0.0)
            S = [Sb / K ** 2 for Sb in self._trace_coeffs(z)]
            const = s2 * float(np.vdot(z, z).real) / K ** 2 - float(chi[l])
            cons.append((rows, ds, S, const, float(chi[l])))

        for bi, (k, j) in enumerate(self.blocks):
            u = rx.u[k, j]
            rows, ds = [], []
            for kk in range(K):
                for l in range(L):
                    rows.append({("b", kk, l): coeff(
                        "b", kk, l, ch.H[kk].conj().T @ u)})
                    ds.append(0.0)
                for i in range(I):
                    rows.append({("a", kk, i): coeff(
                        "a", kk, i, float(ch.rms_target[i])
                        * (ch.G[kk, i].conj().T @ u))})
                    ds.append(0.0)
                for o in range(ch.n_clutters):
                    for i in range(I):
                        rows.append({("a", kk, i): coeff(
                            "a", kk, i, float(ch.rms_clutter[o])
                            * (ch.F[kk, o].conj().T @ u))})
                        ds.append(0.0)
            S = self._trace_coeffs(u)
            S[bi] = -S[bi] / float(gamma[k, j])
            const = s2 * float(np.vdot(u, u).real)
            cons.append((rows, ds, S, const, max(const, 1e-300)))
        self._finalize(cons)

    def _trace_coeffs(self, rv):
        out = []
        for (k, j) in self.blocks:
            h = self.ch.H[k].conj().T @ rv
            out.append(self.scale[("c", k, j)] ** 2 * np.outer(h, h.conj()))
        return out

    def _finalize(self, cons):
        """Dense per-constraint data in the stacked real parameterization."""
        M = self.M
        slot = {bk: t * M for t, bk in enumerate(self.vec_beams)}
        self.cons = []
        for rows, ds, S, const, cap in cons:
            P = np.zeros((len(rows), self.nv), complex)
            for r, row in enumerate(rows):
                for bk, vec in row.items():
                    P[r, slot[bk]:slot[bk] + M] = vec
            svecs = [np.array([np.trace(Sb @ _unpack_herm(e, M)).real
                               for e in np.eye(self.nh)]) for Sb in S]
            self.cons.append((P, np.array(ds, complex),
                              np.concatenate(svecs), const, cap))
        w = np.array([self.scale[bk] ** 2 for bk in self.vec_beams])
        self.pw_vec = np.repeat(w, M)
        cw = np.array([self.scale[("c", k, j)] ** 2 for (k, j) in self.blocks])
        # trace of a packed Hermitian block is the sum of its first M entries
        tr_mask = np.zeros(self.nh)
        tr_mask[:M] = 1.0
        self.pw_tr = np.concatenate([c * tr_mask for c in cw])
        self.pref = float(max(self.pw_vec.max(initial=0.0),
                              self.pw_tr.max(initial=0.0), 1e-300))

    # -- value/gradient in the stacked real vector x
    def _parts(self, x):
        xi = x[:self.nv] + 1j * x[self.nv:2 * self.nv]
        y = x[2 * self.nv:]
        return xi, y

    def power(self, x):
        xi, y = self._parts(x)
        return float(self.pw_vec @ (np.abs(xi) ** 2) + self.pw_tr @ y)

    def power_grad(self, x):
        xi, y = self._parts(x)
        gx = 2.0 * self.pw_vec * xi
        return np.concatenate([gx.real, gx.imag, self.pw_tr])

    def con_values(self, x):
        xi, y = self._parts(x)
        out = []
        for P, d, svec, const, cap in self.cons:
            r = P @ xi - d
            out.append(float(np.vdot(r, r).real + svec @ y + const))
        return np.array(out)

    def con_grad(self, x, c):
        xi, y = self._parts(x)
        P, d, svec, const, cap = self.cons[c]
        g = 2.0 * (P.conj().T @ (P @ xi - d))
        return np.concatenate([g.real, g.imag, svec])

    def project(self, x):
        """Clip every lifted block onto the PSD cone."""
        x = x.copy()
        M = self.M
        for t in range(len(self.blocks)):
            sl = slice(2 * self.nv + t * self.nh, 2 * self.nv + (t + 1) * self.nh)
            C = _unpack_herm(x[sl], M)
            w, V = np.linalg.eigh(C)
            if w[0] < 0.0:
                C = (V * np.maximum(w, 0.0)) @ V.conj().T
                x[sl] = _pack_herm(C)
        return x

    def _psd_dist_grad(self, x):
        """Squared distance of the lifted blocks to the PSD cone, with grad.

        The gradient is 2 (C - proj(C)) per block, i.e. twice the negative
        eigenvalue part, expressed in the packed real coordinates.
        """
        M = self.M
        val = 0.0
        g = np.zeros_like(x)
        for t in range(len(self.blocks)):
            sl = slice(2 * self.nv + t * self.nh, 2 * self.nv + (t + 1) * self.nh)
            C = _unpack_herm(x[sl], M)
            w, V = np.linalg.eigh(C)
            neg = np.minimum(w, 0.0)
            if neg[0] < 0.0:
                val += float(neg @ neg)
                g[sl] = 2.0 * _pack_herm((V * neg) @ V.conj().T)
        return val, g

    def solve(self, max_rounds=40):
        """First-order penalty/multiplier minimization; returns total power.

        Quadratic penalty on the cap-normalized constraint violations with
        multiplier updates between rounds; the PSD cone enters through the
        squared projection distance of the lifted blocks.  Each round's
        smooth merit is minimized by a limited-memory quasi-Newton descent,
        which handles the wide curvature spread between the power-heavy and
        power-light coordinates.
        """
        caps = np.array([c[4] for c in self.cons])
        lam = np.zeros(len(self.cons))
        rho = 1e2
        rho_psd = 1e2
        x = self.project(np.ones(self.dim))
        viol_prev = math.inf
        for _ in range(max_rounds):
            def merit(x, lam=lam, rho=rho, rho_psd=rho_psd):
                g = self.con_values(x) / caps
                act = np.maximum(lam + rho * g, 0.0)
                f = self.power(x) / self.pref \
                    + float(act @ act - lam @ lam) / (2.0 * rho)
                gr = self.power_grad(x) / self.pref
                for c, a in enumerate(act):
                    if a > 0.0:
                        gr = gr + (a / caps[c]) * self.con_grad(x, c)
                dist, dgrad = self._psd_dist_grad(x)
                return f + 0.5 * rho_psd * dist, gr + 0.5 * rho_psd * dgrad

            r = scipy.optimize.minimize(
                merit, x, jac=True, method="L-BFGS-B",
                options=dict(maxiter=20000, maxcor=60, ftol=1e-18, gtol=1e-12))
            x = r.x
            g = self.con_values(x) / caps
            lam = np.maximum(lam + rho * g, 0.0)
            dist, _ = self._psd_dist_grad(x)
            viol = max(g.max(initial=0.0), math.sqrt(dist))
            if viol <= 1e-10 and viol_prev <= 1e-10:
                break
            if viol > 0.25 * viol_prev:
                rho = min(rho * 5.0, 1e7)
                rho_psd = min(rho_psd * 5.0, 1e9)
            viol_prev = viol
        x = self.project(x)
        return self.power(x), x
