"""Boys function F_m(T) = int_0^1 t^(2m) exp(-T t^2) dt in double precision.

Three regimes, chosen per argument:

* ``T < SERIES_LIMIT``: the positive-term series for the highest order
  followed by downward recursion (both stable).
* ``SERIES_LIMIT <= T < ASYMPTOTIC_LIMIT``: F_0 from ``erf`` and upward
  recursion, stable once 2T exceeds the requested order.
* ``T >= ASYMPTOTIC_LIMIT``: as above with erf(sqrt(T)) = 1, which holds
  to double precision there. The exp(-T) term is kept in the recursion:
  dropping it costs relative accuracy at high orders.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.special import erf

SERIES_LIMIT = 30.0
ASYMPTOTIC_LIMIT = 40.0


def _series_top(m: int, T: np.ndarray) -> np.ndarray:
    """F_m(T) = exp(-T) * sum_k (2T)^k / ((2m+1)(2m+3)...(2m+2k+1))."""
    term = np.full_like(T, 1.0 / (2 * m + 1))
    total = term.copy()
    two_t = 2.0 * T
    k = 0
    while True:
        k += 1
        term = term * two_t / (2 * m + 2 * k + 1)
        total += term
        if k % 8 == 0 and np.all(term <= 1e-17 * total):
            break
    return total * np.exp(-T)


def boys_array(m_max: int, T) -> np.ndarray:
    """Vectorized Boys values, shape ``(m_max + 1,) + T.shape``."""
    if m_max < 0:
        raise ValueError("m_max must be non-negative")
    T = np.asarray(T, dtype=float)
    if np.any(T < 0) or not np.all(np.isfinite(T)):
        raise ValueError("Boys argument must be finite and non-negative")
    shape = T.shape
    T = T.ravel()
    out = np.empty((m_max + 1, T.size))
    exp_t = np.exp(-T)

    # series branch also covers large T when the order outruns 2T
    low = (T < SERIES_LIMIT) | (2.0 * T < 2 * m_max + 1)
    if np.any(low):
        t = T[low]
        e = exp_t[low]
        f = _series_top(m_max, t)
        out[m_max, low] = f
        for m in range(m_max - 1, -1, -1):
            f = (2.0 * t * f + e) / (2 * m + 1)
            out[m, low] = f

    mid = ~low & (T < ASYMPTOTIC_LIMIT)
    if np.any(mid):
        t = T[mid]
        e = exp_t[mid]
        f = 0.5 * np.sqrt(math.pi / t) * erf(np.sqrt(t))
        out[0, mid] = f
        for m in range(m_max):
            f = ((2 * m + 1) * f - e) / (2.0 * t)
            out[m + 1, mid] = f

    high = ~low & ~mid
    if np.any(high):
        t = T[high]
        e = exp_t[high]
        f = 0.5 * np.sqrt(math.pi / t)
        out[0, high] = f
        for m in range(m_max):
            f = ((2 * m + 1) * f - e) / (2.0 * t)
            out[m + 1, high] = f

    return out.reshape((m_max + 1,) + shape)


def boys(m_max: int, T: float) -> np.ndarray:
    """F_0(T) .. F_{m_max}(T) for a scalar argument.

    >>> boys(3, 0.0).tolist()
    [1.0, 0.3333333333333333, 0.2, 0.14285714285714285]
    """
    if T < 0:
        raise ValueError("Boys argument must be non-negative")
    return boys_array(m_max, np.array([float(T)]))[:, 0]
