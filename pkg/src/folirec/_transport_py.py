"""Pure-numpy ordered exponential product.

Reference implementation of the transport hot kernel. The compiled module
`folirec._transport` implements the same contract; `folirec.kernels` picks
one at import time.
"""

import numpy as np
from scipy.linalg import expm

# Below this |s2| the closed-form 2x2 exponential switches to the series for
# cosh(s)/sinhc(s); keeps the s -> 0 limit stable.
_SERIES_CUTOFF = 1e-8


def _expm2_batch(mats):
    """Exponentials of a (n, 2, 2) batch via the closed form.

    exp(A) = exp(mu) * (c(s2) I + sc(s2) B) with mu = tr(A)/2, B = A - mu I,
    s2 = B00^2 + B01*B10 (B^2 = s2 I). c/sc are cosh/sinhc for s2 > 0 and
    cos/sinc for s2 < 0; a shared series covers the neighborhood of 0.
    """
    mats = np.asarray(mats, dtype=np.float64)
    n = mats.shape[0]
    mu = 0.5 * (mats[:, 0, 0] + mats[:, 1, 1])
    b00 = mats[:, 0, 0] - mu
    s2 = b00 * b00 + mats[:, 0, 1] * mats[:, 1, 0]

    c = np.empty(n)
    sc = np.empty(n)
    small = np.abs(s2) < _SERIES_CUTOFF
    if np.any(small):
        z = s2[small]
        c[small] = 1.0 + z / 2.0 + z * z / 24.0
        sc[small] = 1.0 + z / 6.0 + z * z / 120.0
    pos = (~small) & (s2 > 0)
    if np.any(pos):
        s = np.sqrt(s2[pos])
        c[pos] = np.cosh(s)
        sc[pos] = np.sinh(s) / s
    neg = (~small) & (s2 < 0)
    if np.any(neg):
        w = np.sqrt(-s2[neg])
        c[neg] = np.cos(w)
        sc[neg] = np.sin(w) / w

    scale = np.exp(mu)
    out = sc[:, None, None] * (mats - mu[:, None, None] * np.eye(2))
    out[:, 0, 0] += c
    out[:, 1, 1] += c
    return scale[:, None, None] * out


def ordered_exp_product(omegas, dts):
    """Path-ordered product of exp(-omega_i * dt_i), first factor applied first.

    omegas: (n, k, k) samples along the path, dts: (n,) signed substep lengths.
    Returns the k x k transport matrix P with P = E_n ... E_2 E_1.
    """
    omegas = np.asarray(omegas, dtype=np.float64)
    dts = np.asarray(dts, dtype=np.float64)
    n, k, _ = omegas.shape
    if n == 0:
        return np.eye(k)

    if k == 1:
        # Scalars commute; keep the sequential order anyway so both backends
        # agree factor by factor.
        e = np.exp(-omegas[:, 0, 0] * dts)
        return np.array([[np.multiply.reduce(e)]])

    if k == 2:
        factors = _expm2_batch(-omegas * dts[:, None, None])
        p = factors[0]
        for i in range(1, n):
            p = factors[i] @ p
        return p

    p = np.eye(k)
    for i in range(n):
        p = expm(-omegas[i] * dts[i]) @ p
    return p
