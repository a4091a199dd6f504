"""Reference schemes the optimized designs are compared against.

Each baseline is a configuration of the two solvers rather than a separate
algorithm: frozen MMSE receivers, matched-filter receivers, or a
zero-forcing restriction of the transmit beams.  Zero forcing confines
every beam to the null space of the receive-projected channels of the
other streams of the same sensor, so each sensor's streams do not
interfere with one another.
"""

import numpy as np

from . import ttpm, wopm
from .metrics import RxBeams, TxBeams
from .receivers import ReceiverRule
from .scenario import ChannelSet, ConfigError, SystemConfig

_NULL_TOL = 1e-10


def _null_basis(rows, M):
    """Orthonormal basis of the joint null space of the given row vectors."""
    A = np.array(rows, dtype=np.complex128).reshape(-1, M)
    if A.size == 0:
        return np.eye(M, dtype=np.complex128)
    _, s, vh = np.linalg.svd(A)
    rank = int(np.sum(s > _NULL_TOL * max(s[0], 1e-300)))
    if rank >= M:
        raise ConfigError(
            f"zero-forcing needs more sensor antennas: {rank} rows to null "
            f"with only M = {M}")
    return vh[rank:].conj().T


def zf_subspace(ch: ChannelSet, tx: TxBeams, rx: RxBeams):
    """Per-beam zero-forcing bases for the current receivers."""
    M = ch.n_sensor_antennas
    I, L, J = tx.a.shape[1], tx.b.shape[1], tx.c.shape[1]
    out = {}
    for k in range(ch.n_sensors):
        for i in range(I):
            rows = [ch.G[k, i].conj().T @ rx.z[l] for l in range(L)]
            rows += [ch.G[k, i].conj().T @ rx.u[k, j] for j in range(J)]
            out[("a", k, i)] = _null_basis(rows, M)
        for l in range(L):
            rows = [ch.H[k].conj().T @ rx.v[i] for i in range(I)]
            rows += [ch.H[k].conj().T @ rx.u[k, j] for j in range(J)]
            out[("b", k, l)] = _null_basis(rows, M)
        for j in range(J):
            rows = [ch.H[k].conj().T @ rx.v[i] for i in range(I)]
            rows += [ch.H[k].conj().T @ rx.z[l] for l in range(L)]
            out[("c", k, j)] = _null_basis(rows, M)
    return out


_RULES = {
    "fmmse": dict(receiver_rule=ReceiverRule.FIXED_MMSE, subspace_provider=None),
    "mfbf": dict(receiver_rule=ReceiverRule.MATCHED, subspace_provider=None),
    "zfbf": dict(receiver_rule=ReceiverRule.MMSE, subspace_provider=zf_subspace),
}

BASELINE_NAMES = tuple(_RULES)


def _apply(opt, name):
    if name not in _RULES:
        raise ValueError(f"unknown baseline {name!r}; expected one of {BASELINE_NAMES}")
    for attr, value in _RULES[name].items():
        setattr(opt, attr, value)
    return opt


def wopm_baseline(name, cfg: SystemConfig, ch=None, seed=0,
                  opt: wopm.WopmOptions | None = None,
                  limits=None) -> wopm.WopmResult:
    return wopm.solve(cfg, ch, seed, _apply(opt or wopm.WopmOptions(), name),
                      limits=limits)


def ttpm_baseline(name, cfg: SystemConfig, qos=None, ch=None, seed=0,
                  opt: ttpm.TtpmOptions | None = None) -> ttpm.TtpmResult:
    return ttpm.solve(cfg, qos, ch, seed, _apply(opt or ttpm.TtpmOptions(), name))
