"""Principal branch of the Lambert W function and the optimal-rate map built on it."""

import math

import numpy as np

_INV_E = math.exp(-1.0)
_LN2 = math.log(2.0)


def lambert_w0(x):
    """Principal-branch Lambert W: the ``w >= -1`` solving ``w * exp(w) = x``.

    Halley iteration started from the branch-point series near ``-1/e``, a
    rational guess on the middle range and ``log x - log log x`` for large
    ``x``. Accepts scalars or arrays.

    Raises
    ------
    ValueError
        If any ``x < -1/e`` beyond rounding noise.
    """
    x_in = np.asarray(x, dtype=float)
    x = x_in.astype(float).reshape(-1)
    if np.any(np.isnan(x)):
        raise ValueError("lambert_w0 got NaN")
    if np.any(x < -_INV_E - 1e-15):
        raise ValueError("lambert_w0 is real only for x >= -1/e")
    x = np.maximum(x, -_INV_E)

    # e*x + 1 measured from the branch point
    q = np.maximum(math.e * x + 1.0, 0.0)
    p = np.sqrt(2.0 * q)
    w = np.empty_like(x)

    near = x < -0.25
    w[near] = -1.0 + p[near] - p[near] ** 2 / 3.0 + 11.0 / 72.0 * p[near] ** 3
    mid = ~near & (x < 3.0)
    xm = x[mid]
    w[mid] = xm * (1.0 + 4.0 / 3.0 * xm) / (1.0 + 7.0 / 3.0 * xm + 5.0 / 6.0 * xm * xm)
    far = ~near & ~mid
    lx = np.log(x[far])
    llx = np.log(lx)
    w[far] = lx - llx + llx / lx

    # the series is already exact to rounding this close to -1/e
    todo = ~(p < 1e-5) & np.isfinite(x)
    for _ in range(50):
        if not todo.any():
            break
        wt, xt = w[todo], x[todo]
        ew = np.exp(wt)
        r = wt * ew - xt
        wp1 = wt + 1.0
        step = r / (ew * wp1 - (wt + 2.0) * r / (2.0 * wp1))
        w[todo] = wt - step
        done = np.abs(step) <= 4e-16 * (1.0 + np.abs(wt))
        idx = np.flatnonzero(todo)
        todo[idx[done]] = False
    w = np.where(np.isposinf(x), np.inf, w)
    w = np.maximum(w, -1.0)
    return float(w[0]) if x_in.ndim == 0 else w.reshape(x_in.shape)


# G(u) = sum_{n>=2} (n-1)/n! u^n, free of cancellation for small u
_G_COEF = np.array([(n - 1) / math.factorial(n) for n in range(2, 20)])


def _small_u(y, p):
    u = p * (1.0 - p / 3.0 + 11.0 / 72.0 * p**2)
    for _ in range(6):
        pw = u[:, None] ** np.arange(2, 20)
        G = pw @ _G_COEF
        u = u - (G - y) / np.where(u > 0, u * np.exp(u), 1.0)
    return np.where(y > 0, u, 0.0)


def tilde_f(y, B):
    """Rate solving ``f(r) - r f'(r) = -y`` for ``f(r) = 2**(r/B) - 1``.

    This is the optimal transmission rate when the per-second value of time
    and the per-joule price of energy have ratio ``y`` (times channel gain).
    Zero at ``y = 0`` and strictly increasing.
    """
    y = np.asarray(y, dtype=float)
    if np.any(y < 0) or np.any(np.isnan(y)):
        raise ValueError("tilde_f needs y >= 0")
    # Near y = 0 forming W and then adding 1 cancels most digits, so solve
    # directly for u = W + 1 from G(u) = y with G(u) = (u - 1) e^u + 1.
    p = np.sqrt(2.0 * y)
    small = p < 0.3
    wp1 = np.empty_like(p)
    wp1[small] = _small_u(y[small], p[small])
    wp1[~small] = lambert_w0((y[~small] - 1.0) * _INV_E) + 1.0
    out = B / _LN2 * wp1
    return float(out) if out.ndim == 0 else out
