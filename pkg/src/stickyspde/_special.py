"""Scalar special functions for numba kernels.

Kernels call these instead of scipy so that they stay cacheable on disk.
`ndtri` is Wichura's AS241 (PPND16), relative accuracy about 1e-16; the test
suite compares it against scipy.special.ndtri.
"""
import math

import numba
import numpy as np

TWO_M53 = 2.0 ** -53
_HALF_RANGE = np.uint64(1 << 52)
_TOP = np.uint64((1 << 53) - 1)
_SHIFT = np.uint64(11)

_A = (3.387132872796366608, 133.14166789178437745, 1971.5909503065514427,
      13731.693765509461125, 45921.953931549871457, 67265.770927008700853,
      33430.575583588128105, 2509.0809287301226727)
_B = (1.0, 42.313330701600911252, 687.1870074920579083, 5394.1960214247511077,
      21213.794301586595867, 39307.89580009271061, 28729.085735721942674,
      5226.495278852545925)
_C = (1.42343711074968357734, 4.6303378461565452959, 5.7694972214606914055,
      3.64784832476320460504, 1.27045825245236838258, 0.24178072517745061177,
      0.0227238449892691845833, 7.7454501427834140764e-4)
_D = (1.0, 2.05319162663775882187, 1.6763848301838038494, 0.68976733498510000455,
      0.14810397642748007459, 0.0151986665636164571966,
      5.475938084995344946e-4, 1.05075007164441684324e-9)
_E = (6.6579046435011037772, 5.4637849111641143699, 1.7848265399172913358,
      0.29656057182850489123, 0.026532189526576123093, 0.0012426609473880784386,
      2.71155556874348757815e-5, 2.01033439929228813265e-7)
_F = (1.0, 0.59983220655588793769, 0.13692988092273580531, 0.0148753612908506148525,
      7.868691311456132591e-4, 1.8463183175100546818e-5,
      1.4215117583164458887e-7, 2.04426310338993978564e-15)


@numba.njit(cache=True, inline="always")
def _poly(c, x):
    return ((((((c[7] * x + c[6]) * x + c[5]) * x + c[4]) * x + c[3]) * x + c[2]) * x + c[1]) * x + c[0]


@numba.njit(cache=True)
def ndtri(p):
    if p <= 0.0:
        return -np.inf
    if p >= 1.0:
        return np.inf
    q = p - 0.5
    if abs(q) <= 0.425:
        r = 0.180625 - q * q
        return q * _poly(_A, r) / _poly(_B, r)
    r = p if q < 0.0 else 1.0 - p
    r = math.sqrt(-math.log(r))
    if r <= 5.0:
        r -= 1.6
        val = _poly(_C, r) / _poly(_D, r)
    else:
        r -= 5.0
        val = _poly(_E, r) / _poly(_F, r)
    return -val if q < 0.0 else val


@numba.njit(cache=True, inline="always")
def norm_sf(x):
    return 0.5 * math.erfc(x / math.sqrt(2.0))


@numba.njit(cache=True)
def raw_to_normal(r):
    """Map one raw 64-bit draw to a standard normal through its top 53 bits.

    The two halves are mapped symmetrically so no draw can round to 0 or 1.
    """
    k = r >> _SHIFT
    if k < _HALF_RANGE:
        return ndtri((k + 0.5) * TWO_M53)
    return -ndtri(((_TOP - k) + 0.5) * TWO_M53)


@numba.njit(cache=True)
def raw_to_normal_array(raw):
    out = np.empty(raw.shape[0])
    for i in range(raw.shape[0]):
        out[i] = raw_to_normal(raw[i])
    return out
