"""Pricing quadruples, eigenpairs and the eigen-measure decomposition chain.

A pricing problem is a quadruple ``(b, sigma, r, h)`` on an open interval:
the diffusion ``dX = b(X) dt + sigma(X) dB``, a discount rate ``r`` and a
payoff ``h``.  Given a positive eigenpair ``(lam, phi)`` of the generator

    L f = 0.5 sigma^2 f'' + b f' - r f,     L phi = -lam phi,

the price factors as ``p_T = phi(xi) exp(-lam T) f(T, xi)``.  The remainder
``f`` and its state derivatives solve pricing problems of their own, which
is what :func:`build_chain` constructs.

Fields are either symbolic (a sympy expression in :data:`X`, which gives
exact derivatives of any order) or plain vectorised callables with
optional analytic derivatives and a central-difference fallback.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import sympy as sp
from scipy import integrate

from .errors import ContractError, DomainError, InvariantError, QuadratureError

X = sp.Symbol("x", positive=True)

D1_REL_STEP = 1e-6
# second differences lose sqrt(eps)/h^2 to rounding; 1e-4 balances that
D2_REL_STEP = 1e-4

Array = np.ndarray
Fn = Callable[[Array], Array]


def _lambdify(expr: sp.Expr) -> Fn:
    f = sp.lambdify(X, expr, modules="numpy")

    def g(x):
        x = np.asarray(x, dtype=float)
        return np.asarray(f(x), dtype=float) + np.zeros_like(x)

    return g


def central_difference(f: Fn, x, order: int = 1, step: float | None = None):
    """Second-order central difference of ``f`` at ``x``.

    The default step is relative, ``rel * max(1, |x|)``, with ``rel`` equal
    to :data:`D1_REL_STEP` or :data:`D2_REL_STEP`.
    """
    x = np.asarray(x, dtype=float)
    if step is None:
        rel = D1_REL_STEP if order == 1 else D2_REL_STEP
        h = rel * np.maximum(1.0, np.abs(x))
    else:
        h = np.full_like(x, step)
    if order == 1:
        return (f(x + h) - f(x - h)) / (2.0 * h)
    if order == 2:
        return (f(x + h) - 2.0 * f(x) + f(x - h)) / (h * h)
    raise ContractError(f"central_difference supports order 1 or 2, got {order}")


@dataclass(frozen=True, eq=False)
class ScalarField:
    """A real function on the state space with optional derivatives."""

    value: Fn
    d1: Fn | None = None
    d2: Fn | None = None
    expr: sp.Expr | None = None
    label: str = ""

    @classmethod
    def symbolic(cls, expr, label: str = "") -> "ScalarField":
        expr = sp.sympify(expr)
        e1 = sp.diff(expr, X)
        e2 = sp.diff(e1, X)
        return cls(_lambdify(expr), _lambdify(e1), _lambdify(e2), expr, label or str(expr))

    @classmethod
    def constant(cls, c: float) -> "ScalarField":
        return cls.symbolic(sp.Float(c) if not isinstance(c, sp.Expr) else c)

    @classmethod
    def from_callable(cls, value: Fn, d1: Fn | None = None, d2: Fn | None = None,
                      label: str = "") -> "ScalarField":
        return cls(value, d1, d2, None, label)

    @property
    def is_symbolic(self) -> bool:
        return self.expr is not None

    @property
    def has_derivatives(self) -> bool:
        return self.d1 is not None and self.d2 is not None

    def __call__(self, x):
        return np.asarray(self.value(np.asarray(x, dtype=float)), dtype=float)

    def first(self, x):
        if self.d1 is not None:
            return np.asarray(self.d1(np.asarray(x, dtype=float)), dtype=float)
        return central_difference(self.value, x, 1)

    def second(self, x):
        if self.d2 is not None:
            return np.asarray(self.d2(np.asarray(x, dtype=float)), dtype=float)
        return central_difference(self.value, x, 2)

    def derivative(self) -> "ScalarField":
        """The field ``x -> f'(x)``; exact for symbolic fields."""
        if self.expr is not None:
            return ScalarField.symbolic(sp.diff(self.expr, X), f"d({self.label})")
        return ScalarField(self.first, self.d2, None, None, f"d({self.label})")

    # algebra: symbolic when both operands are, product/quotient rules otherwise

    def _coerce(self, other) -> "ScalarField":
        if isinstance(other, ScalarField):
            return other
        return ScalarField.constant(float(other))

    def __add__(self, other):
        o = self._coerce(other)
        if self.expr is not None and o.expr is not None:
            return ScalarField.symbolic(self.expr + o.expr)
        return ScalarField(lambda x: self(x) + o(x), lambda x: self.first(x) + o.first(x),
                           lambda x: self.second(x) + o.second(x))

    __radd__ = __add__

    def __neg__(self):
        if self.expr is not None:
            return ScalarField.symbolic(-self.expr)
        return ScalarField(lambda x: -self(x), lambda x: -self.first(x), lambda x: -self.second(x))

    def __sub__(self, other):
        return self + (-self._coerce(other))

    def __rsub__(self, other):
        return self._coerce(other) - self

    def __mul__(self, other):
        o = self._coerce(other)
        if self.expr is not None and o.expr is not None:
            return ScalarField.symbolic(self.expr * o.expr)
        return ScalarField(
            lambda x: self(x) * o(x),
            lambda x: self.first(x) * o(x) + self(x) * o.first(x),
            lambda x: self.second(x) * o(x) + 2.0 * self.first(x) * o.first(x) + self(x) * o.second(x),
        )

    __rmul__ = __mul__

    def __truediv__(self, other):
        o = self._coerce(other)
        if self.expr is not None and o.expr is not None:
            return ScalarField.symbolic(self.expr / o.expr)

        def v(x):
            return self(x) / o(x)

        def d1(x):
            g = o(x)
            return (self.first(x) - v(x) * o.first(x)) / g

        def d2(x):
            g = o(x)
            return (self.second(x) - 2.0 * d1(x) * o.first(x) - v(x) * o.second(x)) / g

        return ScalarField(v, d1, d2)

    def __rtruediv__(self, other):
        return self._coerce(other) / self


@dataclass(frozen=True)
class StateInterval:
    """Open interval ``(lower, upper)``; infinite endpoints are ``+-inf``."""

    lower: float = -math.inf
    upper: float = math.inf

    def __post_init__(self):
        if not self.lower < self.upper:
            raise ContractError(f"empty state interval ({self.lower}, {self.upper})")

    def contains(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return (x > self.lower) & (x < self.upper) & np.isfinite(x)

    def require_interior(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if not np.all(self.contains(x)):
            raise DomainError(f"state outside open interval ({self.lower}, {self.upper})")
        return x


POSITIVE_HALF_LINE = StateInterval(0.0, math.inf)
REAL_LINE = StateInterval()


@dataclass(frozen=True)
class Quadruple:
    """Drift, diffusion, discount rate and payoff on a state interval.

    ``sqrt_process = (level, speed, vol[, power])`` optionally declares that
    ``X = Z^power`` where ``dZ = (level - speed Z) dt + vol sqrt(Z) dB``, so
    that the exact CIR transition can be used for simulation.  ``power``
    defaults to 1.
    """

    drift: ScalarField
    sigma: ScalarField
    rate: ScalarField
    payoff: ScalarField
    domain: StateInterval = POSITIVE_HALF_LINE
    sqrt_process: tuple | None = None

    def validate(self, grid) -> None:
        grid = self.domain.require_interior(grid)
        s = self.sigma(grid)
        if not np.all(np.isfinite(s)) or np.any(s <= 0):
            raise InvariantError("diffusion coefficient must be positive on the domain")
        for name in ("drift", "rate", "payoff"):
            if not np.all(np.isfinite(getattr(self, name)(grid))):
                raise InvariantError(f"{name} is not finite on the grid")


@dataclass(frozen=True)
class Eigenpair:
    lam: float
    phi: ScalarField
    positive: bool = True


def apply_generator(q: Quadruple, f: ScalarField, x):
    """``0.5 sigma^2 f'' + b f' - r f`` at interior state(s) ``x``."""
    x = q.domain.require_interior(x)
    if not f.has_derivatives:
        raise ContractError("apply_generator needs a field with first and second derivatives")
    s = q.sigma(x)
    return 0.5 * s * s * f.second(x) + q.drift(x) * f.first(x) - q.rate(x) * f(x)


def eigen_residual(q: Quadruple, e: Eigenpair, grid) -> float:
    """Largest normalised violation of ``L phi + lam phi = 0`` on ``grid``."""
    grid = np.asarray(grid, dtype=float)
    if grid.size == 0:
        raise ContractError("eigen_residual needs a non-empty grid")
    phi = e.phi(grid)
    res = np.abs(apply_generator(q, e.phi, grid) + e.lam * phi) / np.maximum(1.0, np.abs(phi))
    return float(np.max(res))


def speed_density(drift: ScalarField, sigma: ScalarField, domain: StateInterval,
                  n: int = 40001):
    """Unnormalised stationary density of ``dX = drift dt + sigma dB`` on a grid.

    Returns ``(x, weights)`` where the weights integrate the density against
    the grid spacing, so ``cumsum(weights)`` is the CDF up to normalisation.
    """
    if domain.lower >= 0.0:
        lo = max(domain.lower, 1e-12)
        hi = min(domain.upper, 1e12)
        u = np.linspace(math.log(lo), math.log(hi), n)
        x = np.exp(u)
        jac = x
    else:
        lo = max(domain.lower, -1e4)
        hi = min(domain.upper, 1e4)
        u = np.linspace(lo, hi, n)
        x = u
        jac = np.ones_like(x)
    with np.errstate(all="ignore"):
        s2 = sigma(x) ** 2
        g = 2.0 * drift(x) / s2 * jac
    ok = np.isfinite(g) & (s2 > 0)
    g = np.where(ok, g, 0.0)
    du = np.diff(u)
    # integrate outwards from the middle of the grid; anchoring at an end
    # loses everything to cancellation when the scale density blows up there
    inc = 0.5 * (g[1:] + g[:-1]) * du
    mid = n // 2
    S = np.zeros(n)
    S[mid + 1:] = np.cumsum(inc[mid:])
    S[:mid] = -np.cumsum(inc[:mid][::-1])[::-1]
    with np.errstate(all="ignore"):
        logm = S - np.log(s2) + np.log(jac)
    logm = np.where(ok & np.isfinite(logm), logm, -np.inf)
    w = np.exp(logm - np.max(logm))
    cdf = np.concatenate([[0.0], np.cumsum(0.5 * (w[1:] + w[:-1]) * du)])
    return x, cdf / cdf[-1]


def stationary_quantiles(drift: ScalarField, sigma: ScalarField, domain: StateInterval,
                         probs=(0.001, 0.999)) -> np.ndarray:
    """Quantiles of the stationary law of ``dX = drift dt + sigma dB``."""
    x, cdf = speed_density(drift, sigma, domain)
    keep = np.concatenate([[True], np.diff(cdf) > 0])
    return np.interp(np.asarray(probs, dtype=float), cdf[keep], x[keep])


def residual_grid(drift: ScalarField, sigma: ScalarField, domain: StateInterval,
                  n: int = 200, probs=(0.001, 0.999)) -> np.ndarray:
    """Grid spanning the bulk of the stationary law, log-spaced on half-lines."""
    lo, hi = stationary_quantiles(drift, sigma, domain, probs)
    if domain.lower >= 0.0:
        return np.geomspace(lo, hi, n)
    return np.linspace(lo, hi, n)


@dataclass(frozen=True)
class DecompositionChain:
    """The three pricing problems governing ``f``, ``f_x`` and ``f_xx``."""

    base: Quadruple
    pair0: Eigenpair
    kappa: ScalarField
    hatted: Quadruple
    pair1: Eigenpair
    gamma: ScalarField
    tilde: Quadruple
    pair2: Eigenpair
    grid: np.ndarray = field(repr=False)
    residuals: tuple[float, float, float] = (0.0, 0.0, 0.0)
    eigen_sqrt_process: tuple | None = None

    @property
    def eigen_quadruple(self) -> Quadruple:
        """Dynamics under the eigen-measure with payoff ``h / phi`` and no discounting."""
        return Quadruple(self.kappa, self.base.sigma, ScalarField.constant(0.0),
                         self.base.payoff / self.pair0.phi, self.base.domain,
                         self.eigen_sqrt_process)

    def log_phi_derivs(self, x):
        """``((ln phi)', (ln phi)'', (ln phi_hat)')`` at ``x``."""
        p0, p1 = self.pair0.phi, self.pair1.phi
        r1 = p0.first(x) / p0(x)
        r2 = p0.second(x) / p0(x) - r1 * r1
        return r1, r2, p1.first(x) / p1(x)


def _require_positive(pair: Eigenpair, grid, name: str) -> None:
    expr = pair.phi.expr
    if expr is not None:
        # through the logarithm so that exp(-large) counts as positive
        log_phi = _lambdify(sp.expand_log(sp.log(expr), force=True))
        with np.errstate(all="ignore"):
            ok = np.all(np.isfinite(log_phi(grid)))
    else:
        v = pair.phi(grid)
        ok = np.all(np.isfinite(v)) and np.all(v > 0)
    if not ok:
        raise InvariantError(f"{name} eigenfunction is not positive on the sampled grid")


def build_chain(q: Quadruple, pair0: Eigenpair, pair1: Eigenpair, pair2: Eigenpair,
                grid=None, tol: float = 1e-9) -> DecompositionChain:
    """Assemble the base, hatted and tilde problems and check their eigenpairs."""
    phi = pair0.phi
    kappa = q.drift + q.sigma * q.sigma * (phi.derivative() / phi)
    if grid is None:
        grid = residual_grid(kappa, q.sigma, q.domain)
    grid = q.domain.require_interior(grid)
    for pair, name in ((pair0, "base"), (pair1, "hatted"), (pair2, "tilde")):
        _require_positive(pair, grid, name)

    sig_sig = q.sigma.derivative() * q.sigma
    ratio = q.payoff / phi
    hatted = Quadruple(kappa + sig_sig, q.sigma, -kappa.derivative(), ratio.derivative(), q.domain)
    phi1 = pair1.phi
    gamma = hatted.drift + q.sigma * q.sigma * (phi1.derivative() / phi1)
    tilde = Quadruple(gamma + sig_sig, q.sigma, -gamma.derivative(),
                      (ratio.derivative() / phi1).derivative(), q.domain)

    res = (eigen_residual(q, pair0, grid), eigen_residual(hatted, pair1, grid),
           eigen_residual(tilde, pair2, grid))
    if max(res) > tol:
        raise InvariantError(f"eigen residuals {res} exceed tolerance {tol}")
    return DecompositionChain(q, pair0, kappa, hatted, pair1, gamma, tilde, pair2, grid, res)


def martingale_criterion(kappa: ScalarField, sigma: ScalarField, domain: StateInterval,
                         x0: float, trunc: tuple[float, float]) -> tuple[float, float]:
    """Truncated double integrals testing whether the boundaries are reached.

    With ``S(x) = int_{x0}^x 2 kappa / sigma^2``::

        left  = int_a^{x0} sigma(x)^-2 int_x^{x0} exp(S(y) - S(x)) dy dx
        right = int_{x0}^b sigma(x)^-2 int_{x0}^x exp(S(y) - S(x)) dy dx

    Both diverge as the truncation widens when the eigen-measure process
    never reaches either end of the interval.  The inner integral times
    ``exp(-S)`` obeys ``H' = -(2 kappa / sigma^2) H -+ 1``, so each side is an
    adaptive ODE solve from ``x0`` outward (log coordinates on half-lines).
    """
    a, b = trunc
    domain.require_interior([a, b, x0])
    if not a < x0 < b:
        raise ContractError("truncation must bracket x0")
    log_scale = a > 0.0

    def to_x(u):
        return math.exp(u) if log_scale else u

    def rhs(sign):
        def f(u, y):
            x = to_x(u)
            jac = x if log_scale else 1.0
            s2 = float(sigma(np.array([x]))[0]) ** 2
            g = 2.0 * float(kappa(np.array([x]))[0]) / s2
            return [jac * (-g * y[0] + sign), sign * jac * y[0] / s2]
        return f

    def side(end, sign):
        u0 = math.log(x0) if log_scale else x0
        u1 = math.log(end) if log_scale else end
        with np.errstate(over="raise", invalid="raise"):
            try:
                sol = integrate.solve_ivp(rhs(sign), (u0, u1), [0.0, 0.0], method="DOP853",
                                          rtol=1e-11, atol=1e-8)
            except FloatingPointError as exc:
                raise QuadratureError(f"integrand overflow on ({a}, {b}): {exc}") from exc
        if not sol.success:
            raise QuadratureError(f"quadrature failed on ({a}, {b}): {sol.message}")
        val = float(sol.y[1, -1])
        if not math.isfinite(val):
            raise QuadratureError(f"non-integrable singularity inside ({a}, {b})")
        return val

    return side(a, -1.0), side(b, 1.0)
