"""NumPy fallback for the selective-scan kernels.

Same signatures and layouts as the compiled extension. What the forward sweep
saves for the reverse sweep is backend-specific and opaque to callers. The recurrence is a
Python loop over the sequence axis, vectorized over batch, channel and state.
"""

import numpy as np

SERIES_EPS = 1e-4
CHI_EPS = 1e-3


def _psi(z, dt):
    with np.errstate(invalid="ignore", divide="ignore"):
        exact = np.expm1(z) / z * dt
    series = dt * (1.0 + z * (0.5 + z / 6.0))
    return np.where(np.abs(z) < SERIES_EPS, series, exact)


def _chi(z):
    with np.errstate(invalid="ignore", divide="ignore"):
        exact = (z * np.exp(z) - np.expm1(z)) / (z * z)
    series = 0.5 + z * (1.0 / 3.0 + z * (0.125 + z * (1.0 / 30.0 + z / 144.0)))
    return np.where(np.abs(z) < CHI_EPS, series, exact)


def _discretized(delta, A):
    bt = delta.shape[0]
    ag = np.repeat(A.astype(np.float64), bt // A.shape[0], axis=0)  # (Bt, D, N)
    dt = delta.astype(np.float64)[..., None]  # (Bt, L, D, 1)
    z = dt * ag[:, None]  # (Bt, L, D, N)
    return ag, dt, z


def scan_forward(x, delta, A, Bm, Cm, Dskip, save_states):
    bt, L, d = x.shape
    n = A.shape[2]
    per = bt // A.shape[0]
    _, dt, z = _discretized(delta, A)
    abar = np.exp(z)
    bx = _psi(z, dt) * Bm.astype(np.float64)[:, :, None, :] * x.astype(np.float64)[..., None]
    h = np.zeros((bt, d, n))
    states = np.empty((bt, d, L, n)) if save_states else None
    y = np.empty((bt, L, d))
    for t in range(L):
        h = abar[:, t] * h + bx[:, t]
        y[:, t] = np.einsum("bdn,bn->bd", h, Cm[:, t])
        if save_states:
            states[:, :, t] = h
    y += np.repeat(Dskip, per, axis=0)[:, None, :] * x
    y = y.astype(x.dtype, copy=False)
    return y, (states.astype(x.dtype, copy=False) if save_states else None)


def scan_backward(gy, x, delta, A, Bm, Cm, Dskip, saved):
    states = saved
    bt, L, d = x.shape
    g_count, _, n = A.shape
    per = bt // g_count
    ag, dt, z = _discretized(delta, A)
    ea = np.exp(z)
    psi = _psi(z, dt)
    chi = _chi(z)
    st = states.astype(np.float64)
    bm = Bm.astype(np.float64)
    xv = x.astype(np.float64)
    gyv = gy.astype(np.float64)

    dC = np.einsum("btd,bdtn->btn", gyv, st)
    gh = np.zeros((bt, d, n))
    ght_all = np.empty((bt, L, d, n))
    for t in range(L - 1, -1, -1):
        ght = gyv[:, t, :, None] * Cm[:, t, None, :] + gh
        ght_all[:, t] = ght
        gh = ea[:, t] * ght
    hprev = np.zeros_like(st)
    hprev[:, :, 1:] = st[:, :, :-1]
    hprev = hprev.transpose(0, 2, 1, 3)  # (Bt, L, D, N)
    dabar = ght_all * hprev
    dbbar = ght_all * xv[..., None]
    bmb = bm[:, :, None, :]
    dx = gyv * np.repeat(Dskip, per, axis=0)[:, None, :] + (ght_all * psi * bmb).sum(-1)
    ddelta = (dabar * ag[:, None] * ea + dbbar * bmb * ea).sum(-1)
    dA_b = (dabar * dt * ea + dbbar * bmb * dt * dt * chi).sum(1)  # (Bt, D, N)
    dA = dA_b.reshape(g_count, per, d, n).sum(1)
    dB = (dbbar * psi).sum(2)
    dD = (gyv * xv).sum(1).reshape(g_count, per, d).sum(1)
    dtype = x.dtype
    return tuple(a.astype(dtype, copy=False) for a in (dx, ddelta, dA, dB, dC, dD))
