"""Digamma and low-order polygamma functions for real positive arguments.

Recurrence shifts the argument above ``_SHIFT`` and the asymptotic
Bernoulli series finishes the job; double-precision accurate for x > 0.
"""
from __future__ import annotations

import math

import numpy as np

from .errors import ParameterError

# B_2, B_4, ..., B_20
_BERNOULLI_EVEN = (
    1 / 6, -1 / 30, 1 / 42, -1 / 30, 5 / 66,
    -691 / 2730, 7 / 6, -3617 / 510, 43867 / 798, -174611 / 330,
)
_SHIFT = 20.0


def polygamma(n: int, x):
    """Polygamma function of order ``n`` (0 = digamma) for ``x > 0``."""
    if n < 0 or int(n) != n:
        raise ParameterError("order must be a non-negative integer")
    n = int(n)
    x = np.asarray(x, dtype=np.float64)
    if np.any(~(x > 0)):
        raise ParameterError("polygamma is implemented for x > 0 only")

    sign = -1.0 if n % 2 == 0 else 1.0  # (-1)**(n + 1)
    fact_n = math.factorial(n)
    acc = np.zeros_like(x)
    x = x.copy()
    # psi^(n)(x) = psi^(n)(x + 1) - (-1)**n n! / x**(n + 1)
    while np.any(small := x < _SHIFT):
        acc[small] += sign * fact_n / x[small] ** (n + 1)
        x[small] += 1.0

    if n == 0:
        series = np.log(x) - 0.5 / x
        for k, b in enumerate(_BERNOULLI_EVEN, start=1):
            series -= b / (2 * k * x ** (2 * k))
        res = series + acc
        return res if res.ndim else float(res)

    series = math.factorial(n - 1) / x ** n + fact_n / (2 * x ** (n + 1))
    for k, b in enumerate(_BERNOULLI_EVEN, start=1):
        series += b * math.factorial(2 * k + n - 1) / (math.factorial(2 * k) * x ** (2 * k + n))
    res = sign * series + acc
    return res if res.ndim else float(res)


def digamma(x):
    return polygamma(0, x)


def trigamma(x):
    return polygamma(1, x)
