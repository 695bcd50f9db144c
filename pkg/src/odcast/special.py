"""Scalar special functions used by the likelihood code.

Hand-rolled so the probability heads do not depend on library internals:
``lgamma`` is a Lanczos approximation (g = 7, 9 terms, double precision),
``digamma`` is the classic recurrence-plus-asymptotic-series evaluation.
Both accept scalars or ndarrays and operate elementwise on strictly
positive input.
"""

from __future__ import annotations

import numpy as np

__all__ = ["lgamma", "digamma"]

_LN_SQRT_2PI = 0.9189385332046727417803297364056176

# Godfrey's Lanczos coefficients for g = 7.
_LANCZOS_G = 7.0
_LANCZOS_COEF = np.array(
    [
        0.99999999999980993,
        676.5203681218851,
        -1259.1392167224028,
        771.32342877765313,
        -176.61502916214059,
        12.507343278686905,
        -0.13857109526572012,
        9.9843695780195716e-6,
        1.5056327351493116e-7,
    ]
)

# Asymptotic tail of psi(x): ln x - 1/(2x) - sum B_2n / (2n x^2n).
_DIGAMMA_TAIL = np.array(
    [
        1.0 / 12.0,
        -1.0 / 120.0,
        1.0 / 252.0,
        -1.0 / 240.0,
        1.0 / 132.0,
        -691.0 / 32760.0,
        1.0 / 12.0,
    ]
)


def _lanczos_positive(x: np.ndarray) -> np.ndarray:
    """Lanczos sum for x >= 0.5, elementwise."""
    z = x - 1.0
    acc = np.full_like(z, _LANCZOS_COEF[0])
    for i in range(1, len(_LANCZOS_COEF)):
        acc += _LANCZOS_COEF[i] / (z + i)
    t = z + _LANCZOS_G + 0.5
    return _LN_SQRT_2PI + (z + 0.5) * np.log(t) - t + np.log(acc)


def lgamma(x):
    """Log of the Gamma function for strictly positive x, elementwise.

    Raises ValueError on any entry <= 0 or NaN.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.size and not np.all(x > 0.0):
        raise ValueError("lgamma requires strictly positive input")
    out = np.empty_like(x)
    small = x < 0.5
    if np.any(small):
        # Reflection: lgamma(x) = log(pi / sin(pi x)) - lgamma(1 - x).
        xs = x[small]
        out[small] = np.log(np.pi / np.sin(np.pi * xs)) - _lanczos_positive(1.0 - xs)
    big = ~small
    if np.any(big):
        out[big] = _lanczos_positive(x[big])
    return out


def digamma(x):
    """Derivative of lgamma for strictly positive x, elementwise.

    Shifts the argument above 10 with psi(x) = psi(x + 1) - 1/x, then
    applies the asymptotic series.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.size and not np.all(x > 0.0):
        raise ValueError("digamma requires strictly positive input")
    x = x.copy()
    acc = np.zeros_like(x)
    for _ in range(10):
        low = x < 10.0
        if not np.any(low):
            break
        acc[low] -= 1.0 / x[low]
        x[low] += 1.0
    inv2 = 1.0 / (x * x)
    tail = np.zeros_like(x)
    power = inv2.copy()
    for coef in _DIGAMMA_TAIL:
        tail += coef * power
        power *= inv2
    return acc + np.log(x) - 0.5 / x - tail
