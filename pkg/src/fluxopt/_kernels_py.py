"""Pure-NumPy versions of the face-wise proximal kernels.

Both functions mirror ``_kernels.pyx`` exactly in what they compute; the
compiled module only differs in speed.
"""

from __future__ import annotations

import numpy as np
from numpy.typing import NDArray

NEWTON_RTOL = 1e-14
NEWTON_MAXITER = 100


def prox_power(v: NDArray[np.float64], t: float, a: float) -> NDArray[np.float64]:
    """Face-wise ``argmin_y |y|^a / a + (y - v)^2 / (2 t)`` for ``1 < a < inf``.

    The magnitude ``u`` solves ``u + t u^(a-1) = |v|``. For ``a >= 2`` Newton
    runs on that equation; for ``a < 2`` on the substituted equation in
    ``s = u^(a-1)``. Both are convex and increasing, so Newton started to the
    right of the root decreases monotonically onto it. The start is the
    smaller of the two one-term solutions, both of which bound the root.
    """
    v = np.asarray(v, dtype=float)
    mag = np.abs(v)
    out = np.zeros_like(v)
    nz = mag > 0
    m = mag[nz]
    if a == 2.0:
        out[nz] = m / (1.0 + t)
    elif a > 2.0:
        u = np.minimum(m, (m / t) ** (1.0 / (a - 1.0)))
        active = np.ones(u.shape, dtype=bool)
        for _ in range(NEWTON_MAXITER):
            ua = u[active]
            p = ua ** (a - 2.0)
            g = ua + t * p * ua - m[active]
            dg = 1.0 + t * (a - 1.0) * p
            step = g / dg
            u[active] = np.maximum(ua - step, 0.0)
            done = np.abs(step) <= NEWTON_RTOL * u[active]
            idx = np.flatnonzero(active)
            active[idx[done]] = False
            if not active.any():
                break
        out[nz] = u
    else:
        b = 1.0 / (a - 1.0)
        s = np.minimum(m / t, m ** (a - 1.0))
        active = np.ones(s.shape, dtype=bool)
        for _ in range(NEWTON_MAXITER):
            sa = s[active]
            q = sa ** (b - 1.0)
            h = q * sa + t * sa - m[active]
            dh = b * q + t
            step = h / dh
            s[active] = np.maximum(sa - step, 0.0)
            done = np.abs(step) <= NEWTON_RTOL * s[active]
            idx = np.flatnonzero(active)
            active[idx[done]] = False
            if not active.any():
                break
        out[nz] = s**b
    return np.copysign(out, v)


def l1_threshold(u: NDArray[np.float64], weights: NDArray[np.float64], radius: float) -> float:
    """Threshold ``theta`` with ``sum(weights * max(|u| - theta, 0)) = radius``.

    Returns 0 when ``u`` already lies in the weighted l1 ball.
    """
    mag = np.abs(u)
    if np.dot(weights, mag) <= radius:
        return 0.0
    order = np.argsort(-mag, kind="stable")
    m = mag[order]
    wt = weights[order]
    cum_wm = np.cumsum(wt * m)
    cum_w = np.cumsum(wt)
    theta = (cum_wm - radius) / cum_w
    # largest prefix whose smallest entry still exceeds its threshold
    k = np.flatnonzero(m > theta)[-1]
    return float(theta[k])


def prox_linf(v: NDArray[np.float64], t: float, weights: NDArray[np.float64]) -> NDArray[np.float64]:
    """Prox of ``t * max|y|`` in the ``weights``-weighted inner product.

    Moreau decomposition: ``v - t * P(v / t)`` with ``P`` the weighted
    projection onto ``{g : sum(weights * |g|) <= 1}``, which is a uniform
    soft threshold.
    """
    v = np.asarray(v, dtype=float)
    theta = l1_threshold(v / t, weights, 1.0)
    if theta == 0.0:
        return np.zeros_like(v)
    # v - t * soft(v / t, theta) is a clip at t * theta
    return np.clip(v, -t * theta, t * theta)
