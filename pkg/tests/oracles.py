"""Independent reference computations used by the tests.

Nothing here imports the code under test except where a sampler or model is
the thing being fed to the oracle.
"""

from __future__ import annotations

import math

import mpmath
import numpy as np
from scipy import integrate, special


def naive_matmul(a, b):
    a, b = np.asarray(a), np.asarray(b)
    n, k = a.shape
    m = b.shape[1]
    out = np.zeros((n, m))
    for i in range(n):
        for j in range(m):
            s = 0.0
            for t in range(k):
                s += a[i, t] * b[t, j]
            out[i, j] = s
    return out


def central_diff(f, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    for i in range(x.size):
        old = x.flat[i]
        x.flat[i] = old + h
        fp = f(x)
        x.flat[i] = old - h
        fm = f(x)
        x.flat[i] = old
        g.flat[i] = (fp - fm) / (2 * h)
    return g


def rel_err(a, b) -> np.ndarray:
    a, b = np.asarray(a), np.asarray(b)
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-8)


def logistic_loss_scalar(w, x, y) -> float:
    """Mean log(1 + exp(-y w.x)) written out one sample at a time."""
    total = 0.0
    for xi, yi in zip(x, y):
        s = sum(wj * xj for wj, xj in zip(w, xi))
        m = -yi * s
        total += m + math.log1p(math.exp(-m)) if m > 0 else math.log1p(math.exp(m))
    return total / len(y)


def phi_quad(z: float) -> float:
    """Normal CDF by adaptive quadrature of the density (tail half-line plus [0, z])."""
    density = lambda t: math.exp(-t * t / 2) / math.sqrt(2 * math.pi)  # noqa: E731
    if z <= 0:
        return integrate.quad(density, -np.inf, z, epsabs=1e-15, epsrel=1e-13)[0]
    return 0.5 + integrate.quad(density, 0.0, z, epsabs=1e-15, epsrel=1e-13)[0]


# --- theory oracles ---------------------------------------------------------------

def mp_accuracy_excess(w, p, mean_shift, n, dps=30):
    """``u(w) - p`` in multi-precision, written with tail probabilities.

    Near the optimum ``u`` sits within 1e-80 of ``p`` for some specs, so the
    oracle works on the excess; mpmath keeps full relative precision there.
    """
    with mpmath.workdps(dps):
        w, p, m = mpmath.mpf(w), mpmath.mpf(p), mpmath.mpf(mean_shift) * n
        s = mpmath.sqrt(n)
        return (1 - p) * mpmath.ncdf((-w + m) / s) - p * mpmath.ncdf(-(w + m) / s)


def golden_max(f, a, b, tol=1e-10, dps=30):
    """Golden-section search for the maximiser of a unimodal ``f`` on ``[a, b]``."""
    with mpmath.workdps(dps):
        invphi = (mpmath.sqrt(5) - 1) / 2
        a, b = mpmath.mpf(a), mpmath.mpf(b)
        c, d = b - invphi * (b - a), a + invphi * (b - a)
        fc, fd = f(c), f(d)
        while b - a > tol:
            if fc > fd:
                b, d, fd = d, c, fc
                c = b - invphi * (b - a)
                fc = f(c)
            else:
                a, c, fc = c, d, fd
                d = a + invphi * (b - a)
                fd = f(d)
        return float((a + b) / 2)


def argmax_accuracy(p, mean_shift, n, w_hi=100.0, points=201):
    """Scan then golden-section refine; no closed form involved."""
    f = lambda w: mp_accuracy_excess(w, p, mean_shift, n)  # noqa: E731
    grid = np.linspace(0.0, w_hi, points)
    vals = [f(w) for w in grid]
    i = int(np.argmax(vals))
    lo, hi = grid[max(i - 1, 0)], grid[min(i + 1, points - 1)]
    return golden_max(f, lo, hi)


def brute_force_sam(p, eta, n, eps, w_lo, w_hi, w_points=100_000, d_points=1000, chunk=2000):
    """argmax_w min_{|d|<=eps} u(w + d) on grids (endpoints always included)."""
    s = math.sqrt(n)
    m = eta * n
    ws = np.linspace(w_lo, w_hi, w_points)
    ds = np.unique(np.concatenate([np.linspace(-eps, eps, d_points), [-eps, 0.0, eps]]))
    best = np.empty_like(ws)
    for i in range(0, w_points, chunk):
        v = ws[i:i + chunk, None] + ds[None, :]
        u = p * special.ndtr((v + m) / s) + (1 - p) * special.ndtr((-v + m) / s)
        best[i:i + chunk] = u.min(axis=1)
    j = int(np.argmax(best))
    return ws[j], ws[1] - ws[0]


def empirical_linear_accuracy(w1, dataset, shift=0.0):
    """Accuracy of sign(w1 x1 + sum x_i - shift * y * n) on a sampled dataset."""
    x, y = dataset.x, dataset.y
    n = x.shape[1] - 1
    score = w1 * x[:, 0] + x[:, 1:].sum(axis=1) - shift * y * n
    return np.mean(np.where(score > 0, 1, -1) == y)
