"""Receive-beamformer update rules.

The MMSE rules are the closed-form minimizers of the per-target,
per-parameter, and per-stream MSEs for fixed transmit beams; they are what
the alternating optimizers use.  The matched and frozen rules exist as
degraded baselines for comparison runs.
"""

from enum import Enum
import logging
import math

import numpy as np

from . import metrics
from .metrics import RxBeams, TxBeams, interference_covariance, responses
from .numerics import hermitian_solve
from .scenario import ChannelSet

log = logging.getLogger("iscc")

# Comm MSE below this is treated as degenerate when forming rate weights.
MSE_FLOOR = 1e-12
LN2 = math.log(2.0)


class ReceiverRule(Enum):
    MMSE = "mmse"
    MATCHED = "matched"
    FIXED_MMSE = "fixed_mmse"


def sensing_receiver_mmse(ch: ChannelSet, tx: TxBeams, i, xi=None, resp=None):
    """MSE-optimal receiver for target i; zero when no sensing beam is active."""
    r = resp if resp is not None else responses(ch, tx)
    if xi is None:
        xi = interference_covariance(ch, tx, r)
    R2 = float(ch.rms_target[i] ** 2)
    h = r.ga[:, i, :].sum(axis=0)
    ga_i = r.ga[:, i, :]
    # The own-target echo combines coherently across sensors, so its
    # covariance contribution is R^2 h h^H rather than the per-sensor sum
    # that the full covariance carries.
    A = xi - R2 * (ga_i.T @ ga_i.conj()) + R2 * np.outer(h, h.conj())
    A = 0.5 * (A + A.conj().T)
    return hermitian_solve(A, R2 * h)


def computing_receiver_mmse(ch: ChannelSet, tx: TxBeams, l, xi=None, resp=None):
    """MSE-optimal aggregation receiver for model parameter l."""
    r = resp if resp is not None else responses(ch, tx)
    if xi is None:
        xi = interference_covariance(ch, tx, r)
    return hermitian_solve(xi, r.hb[:, l, :].sum(axis=0))


def comm_receiver_mmse(ch: ChannelSet, tx: TxBeams, k, j, xi=None, resp=None):
    e, u = metrics.comm_mmse(ch, tx, k, j, xi, resp)
    return u, e


def rate_weight(mse):
    """Weight attached to a comm stream's MSE in the rate-equivalent objective."""
    if mse < MSE_FLOOR:
        log.warning("comm MSE %.3e below floor %.1e; clamping weight", mse, MSE_FLOOR)
        mse = MSE_FLOOR
    return 1.0 / (LN2 * mse)


def _normalized(vec):
    nrm = np.linalg.norm(vec)
    return vec / nrm if nrm > 0 else vec


def update_receivers(ch: ChannelSet, tx: TxBeams,
                     rule: ReceiverRule = ReceiverRule.MMSE,
                     frozen: RxBeams | None = None) -> RxBeams:
    """All receive beams plus comm weights for the current transmit beams.

    MMSE recomputes every receiver in closed form.  MATCHED points each
    receiver at its desired response with unit norm.  FIXED_MMSE keeps the
    supplied receivers and only refreshes the comm weights.
    """
    r = responses(ch, tx)
    xi = interference_covariance(ch, tx, r)
    K, N = ch.n_sensors, ch.n_bs_antennas
    I, L, J = ch.n_targets, tx.b.shape[1], tx.c.shape[1]
    rx = RxBeams.zeros(K, I, L, J, N)

    if rule is ReceiverRule.FIXED_MMSE:
        if frozen is None:
            raise ValueError("FIXED_MMSE requires the frozen receivers")
        rx.v = frozen.v.copy()
        rx.z = frozen.z.copy()
        rx.u = frozen.u.copy()
    elif rule is ReceiverRule.MATCHED:
        for i in range(I):
            rx.v[i] = _normalized(r.ga[:, i, :].sum(axis=0))
        for l in range(L):
            rx.z[l] = _normalized(r.hb[:, l, :].sum(axis=0))
        for k in range(K):
            for j in range(J):
                rx.u[k, j] = _normalized(r.hc[k, j])
    else:
        for i in range(I):
            rx.v[i] = sensing_receiver_mmse(ch, tx, i, xi, r)
        for l in range(L):
            rx.z[l] = computing_receiver_mmse(ch, tx, l, xi, r)
        for k in range(K):
            for j in range(J):
                rx.u[k, j], _ = comm_receiver_mmse(ch, tx, k, j, xi, r)

    for k in range(K):
        for j in range(J):
            mse = metrics.comm_mse_at(ch, tx, rx.u[k, j], k, j, xi, r)
            rx.omega[k, j] = rate_weight(mse)
    return rx
