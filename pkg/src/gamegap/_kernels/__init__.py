"""Kernel implementation chooser.

Prefers the compiled Cython extension; falls back to NumPy when the
extension is missing or GAMEGAP_PURE_PYTHON=1 is set.  ``IMPL`` records
which implementation is active.
"""

import os

from . import _fallback

if os.environ.get("GAMEGAP_PURE_PYTHON"):
    _impl = _fallback
    IMPL = "numpy"
else:
    try:
        from . import _core as _impl
        IMPL = "cython"
    except ImportError:
        _impl = _fallback
        IMPL = "numpy"


def em_simulate(gain, offset, x0, noise, dt):
    return _impl.em_simulate(gain, offset, x0, noise, dt)


def w1d_pow_sum(xa, wa, xb, wb, r):
    return _impl.w1d_pow_sum(xa, wa, xb, wb, r)


em_simulate.__doc__ = _fallback.em_simulate.__doc__
w1d_pow_sum.__doc__ = _fallback.w1d_pow_sum.__doc__
