"""Kummer's confluent hypergeometric function and log-Gamma."""

from __future__ import annotations

import math

from .errors import DomainError, NumericError

SERIES_TOL = 1e-14
MAX_TERMS = 100_000
ASYMPTOTIC_THRESHOLD = 50.0


def log_gamma(x: float) -> float:
    """``ln |Gamma(x)|``; thin wrapper over the C library ``lgamma``."""
    if x <= 0 and x == math.floor(x):
        raise DomainError(f"Gamma has a pole at {x}")
    return math.lgamma(x)


def gamma_sign(x: float) -> float:
    if x > 0:
        return 1.0
    return -1.0 if math.floor(-x) % 2 == 0 else 1.0


def _is_nonpositive_int(v: float) -> bool:
    return v <= 0 and v == math.floor(v)


def _series(a: float, b: float, z: float) -> float:
    term = 1.0
    total = 1.0
    for n in range(MAX_TERMS):
        term *= (a + n) / (b + n) * z / (n + 1)
        total += term
        if term == 0.0:
            return total
        if abs(term) <= SERIES_TOL * abs(total) and n > abs(z):
            return total
    raise NumericError(f"M({a}, {b}, {z}) series did not converge in {MAX_TERMS} terms")


def _asymptotic_sum(p: float, s: float, w: float) -> float | None:
    """``sum_n (p)_n (s)_n / (n! w^n)``, or None if it never gets small enough."""
    term = 1.0
    total = 1.0
    prev = math.inf
    for n in range(200):
        term *= (p + n) * (s + n) / ((n + 1) * w)
        if abs(term) > prev:
            return None
        total += term
        prev = abs(term)
        if abs(term) <= 1e-16 * abs(total):
            return total
    return None


def _large_positive(a: float, b: float, z: float) -> float:
    """M(a, b, z) for large positive z, dropping the O(z^-a) companion term."""
    s = _asymptotic_sum(b - a, 1.0 - a, z)
    if s is None:
        return math.exp(z) * _scaled_series(a, b, z)
    log_pref = log_gamma(b) - log_gamma(a) + z + (a - b) * math.log(z)
    return gamma_sign(b) * gamma_sign(a) * math.exp(log_pref) * s


def _scaled_series(a: float, b: float, z: float) -> float:
    """``exp(-z) M(a, b, z)`` summed with running rescaling to avoid overflow."""
    log_scale = 0.0
    term = 1.0
    total = 1.0
    for n in range(MAX_TERMS):
        term *= (a + n) / (b + n) * z / (n + 1)
        total += term
        if abs(total) > 1e250:
            log_scale += math.log(abs(total))
            term /= abs(total)
            total /= abs(total)
        if term == 0.0 or (abs(term) <= SERIES_TOL * abs(total) and n > abs(z)):
            return total * math.exp(log_scale - z)
    raise NumericError(f"M({a}, {b}, {z}) series did not converge in {MAX_TERMS} terms")


def kummer_m(a: float, b: float, z: float) -> float:
    """Kummer's function ``M(a, b, z) = sum_n (a)_n / (b)_n z^n / n!``.

    Moderate arguments use the power series (after Kummer's transformation
    ``M(a, b, z) = e^z M(b - a, b, -z)`` when ``z < 0`` so the terms keep one
    sign).  For ``|z| > 50`` the leading asymptotic expansion is used.
    """
    a, b, z = float(a), float(b), float(z)
    if _is_nonpositive_int(b):
        raise DomainError(f"M(a, b, z) undefined for b = {b}")
    if z == 0.0 or a == 0.0:
        return 1.0
    if _is_nonpositive_int(a):
        return _series(a, b, z)  # terminating polynomial
    if z > 0:
        if z <= ASYMPTOTIC_THRESHOLD:
            return _series(a, b, z)
        return _large_positive(a, b, z)
    w = -z
    c = b - a
    if _is_nonpositive_int(c):
        return math.exp(z) * _series(c, b, w)
    if w <= ASYMPTOTIC_THRESHOLD:
        return math.exp(z) * _series(c, b, w)
    s = _asymptotic_sum(a, 1.0 - c, w)
    if s is None:
        return _scaled_series(c, b, w)
    log_pref = log_gamma(b) - log_gamma(c) - a * math.log(w)
    return gamma_sign(b) * gamma_sign(c) * math.exp(log_pref) * s


def kummer_dm(a: float, b: float, z: float, order: int = 1) -> float:
    """``d^k/dz^k M(a, b, z) = (a)_k / (b)_k M(a + k, b + k, z)``."""
    coef = 1.0
    for k in range(order):
        coef *= (a + k) / (b + k)
    return coef * kummer_m(a + order, b + order, z)
