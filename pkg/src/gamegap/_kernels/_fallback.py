"""NumPy implementations of the hot kernels.

Selected when the compiled extension is unavailable or disabled via the
environment variable GAMEGAP_PURE_PYTHON=1.  Semantics are identical to
``gamegap._kernels._core``; see benchmarks/bench_kernels.py for speed.
"""

import numpy as np


def em_simulate(gain, offset, x0, noise, dt):
    """Euler-Maruyama paths of dX = -(X gain(t)^T + offset(t)) dt + dNoise.

    Parameters
    ----------
    gain : (steps, n, n) feedback gain at the left node of each step
    offset : (steps, n) per-column affine offset (zeros for pure feedback)
    x0 : (m, n) initial rows (m = paths, or paths*d with d folded into rows)
    noise : (steps, m, n) pre-scaled noise increments
    dt : step size

    Returns
    -------
    (steps+1, m, n) states at the grid nodes.
    """
    steps = gain.shape[0]
    out = np.empty((steps + 1,) + x0.shape)
    out[0] = x0
    x = x0
    for k in range(steps):
        x = x - (x @ gain[k].T + offset[k]) * dt + noise[k]
        out[k + 1] = x
    return out


def w1d_pow_sum(xa, wa, xb, wb, r):
    """Integral of |q_a(u) - q_b(u)|^r du over the monotone coupling.

    Atoms must be sorted ascending with positive weights; the two total
    masses must agree (up to the caller's tolerance).  Returns W_r^r.
    """
    ca = np.cumsum(wa)
    cb = np.cumsum(wb)
    edges = np.concatenate([ca, cb])
    edges.sort(kind="mergesort")
    seg = np.diff(edges, prepend=0.0)
    mid = edges - seg / 2
    ia = np.minimum(np.searchsorted(ca, mid, side="left"), len(xa) - 1)
    ib = np.minimum(np.searchsorted(cb, mid, side="left"), len(xb) - 1)
    return float(np.sum(seg * np.abs(xa[ia] - xb[ib]) ** r))
