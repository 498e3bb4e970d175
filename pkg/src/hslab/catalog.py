"""Closed-form eigen-decompositions for the CIR, 3/2 and CEV model families.

Every model is a quadruple ``(b, sigma, r, h)`` on ``(0, inf)`` with discount
rate linear in a power of the state.  The base eigenpair gives the long-run
level, the hatted and tilde eigenvalues give the convergence rates of the
first and second state sensitivities.

Closed forms exist for the constant payoff ``h = 1`` (and, for CIR, the
linear payoff ``h(x) = x``); they are returned as :class:`ClosedForm`
records holding ``p_T`` and its first two logarithmic ``xi``-derivatives.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Union

import numpy as np
import sympy as sp

from .core import (X, DecompositionChain, Eigenpair, Quadruple, ScalarField,
                   build_chain)
from .errors import DomainError, ParameterError
from .special import kummer_m, log_gamma

PAYOFFS = ("one", "linear")


@dataclass(frozen=True)
class CirParams:
    """``dX = (b - a X) dt + sigma sqrt(X) dB`` discounted at ``r(x) = q x``."""

    a: float
    b: float
    sigma: float
    q: float
    xi: float = 1.0

    names = ("a", "b", "sigma", "q", "xi")

    def __post_init__(self):
        if not self.a > 0:
            raise ParameterError(f"CIR mean reversion a must be positive, got {self.a}", "domain-violation")
        if self.sigma == 0:
            raise ParameterError("CIR volatility must be nonzero", "domain-violation")
        if not 2.0 * self.b > self.sigma ** 2:
            raise ParameterError(f"Feller condition 2b > sigma^2 fails: b={self.b}, sigma={self.sigma}",
                                 "feller-violation")
        if not self.q > 0:
            raise ParameterError(f"discount slope q must be positive, got {self.q}", "domain-violation")
        if not self.xi > 0:
            raise ParameterError(f"initial state must be positive, got {self.xi}", "domain-violation")

    @property
    def alpha(self) -> float:
        return math.sqrt(self.a ** 2 + 2.0 * self.q * self.sigma ** 2)

    @property
    def eta(self) -> float:
        # (alpha - a) / sigma^2 without cancellation for small q
        return 2.0 * self.q / (self.alpha + self.a)

    @property
    def lam(self) -> float:
        return self.b * self.eta


@dataclass(frozen=True)
class ThreeHalvesParams:
    """``dX = (b - a X) X dt + sigma X^{3/2} dB`` discounted at ``r(x) = q x``."""

    a: float
    b: float
    sigma: float
    q: float
    xi: float = 1.0

    names = ("a", "b", "sigma", "q", "xi")

    def __post_init__(self):
        if not self.b > 0:
            raise ParameterError(f"3/2 level b must be positive, got {self.b}", "domain-violation")
        if not self.sigma > 0:
            raise ParameterError(f"3/2 volatility must be positive, got {self.sigma}", "domain-violation")
        if not self.a > -0.5 * self.sigma ** 2:
            raise ParameterError(f"3/2 requires a > -sigma^2/2, got a={self.a}", "domain-violation")
        if not self.q > 0:
            raise ParameterError(f"discount slope q must be positive, got {self.q}", "domain-violation")
        if not self.xi > 0:
            raise ParameterError(f"initial state must be positive, got {self.xi}", "domain-violation")

    @property
    def c(self) -> float:
        return self.a + 0.5 * self.sigma ** 2

    @property
    def root(self) -> float:
        return math.sqrt(self.c ** 2 + 2.0 * self.q * self.sigma ** 2)

    @property
    def eta(self) -> float:
        return 2.0 * self.q / (self.root + self.c)

    @property
    def alpha(self) -> float:
        return self.a + self.sigma ** 2 * self.eta

    @property
    def lam(self) -> float:
        return self.b * self.eta


@dataclass(frozen=True)
class CevParams:
    """``dX / X = (mu - theta X^{2 beta}) dt + sigma X^beta dB``.

    Variant ``"I"`` discounts at ``q x^{-2 beta}``, variant ``"II"`` at
    ``q x^{2 beta}``.
    """

    mu: float
    theta: float
    sigma: float
    beta: float
    q: float
    xi: float = 1.0
    variant: str = "I"

    names = ("mu", "theta", "sigma", "beta", "q", "xi")

    def __post_init__(self):
        if self.variant not in ("I", "II"):
            raise ParameterError(f"unknown CEV variant {self.variant!r}")
        for name in ("mu", "beta", "q", "xi"):
            if not getattr(self, name) > 0:
                raise ParameterError(f"CEV {name} must be positive", "domain-violation")
        if self.theta < 0:
            raise ParameterError("CEV theta must be nonnegative", "domain-violation")
        if self.sigma == 0:
            raise ParameterError("CEV volatility must be nonzero", "domain-violation")
        cev_reduce(self)

    @property
    def lam(self) -> float:
        return cev_reduce(self).reduced.lam


ModelParams = Union[CirParams, ThreeHalvesParams, CevParams]


@dataclass(frozen=True)
class Reduction:
    """Reduced model for ``Y = X^{-+2 beta}`` plus ``dY0/dxi`` and ``d2Y0/dxi2``."""

    reduced: Union[CirParams, ThreeHalvesParams]
    y0: float
    dy: float
    d2y: float
    exponent: float
    state_map: str


def cev_reduce(p: CevParams) -> Reduction:
    """Map a CEV model to CIR (variant I) or 3/2 (variant II) in ``Y = X^e``."""
    beta, s = p.beta, p.sigma
    if p.variant == "I":
        e = -2.0 * beta
        b = 2.0 * beta * p.theta + beta * (2.0 * beta + 1.0) * s * s
        reduced = CirParams(a=2.0 * beta * p.mu, b=b, sigma=-2.0 * beta * s, q=p.q, xi=p.xi ** e)
        desc = f"Y = X^{e:g} (CIR)"
    else:
        e = 2.0 * beta
        a = 2.0 * beta * p.theta - beta * (2.0 * beta - 1.0) * s * s
        reduced = ThreeHalvesParams(a=a, b=2.0 * beta * p.mu, sigma=2.0 * beta * abs(s), q=p.q,
                                    xi=p.xi ** e)
        desc = f"Y = X^{e:g} (3/2)"
    xi = p.xi
    return Reduction(reduced, xi ** e, e * xi ** (e - 1.0), e * (e - 1.0) * xi ** (e - 2.0), e, desc)


# -- quadruples and chains ---------------------------------------------------

def _payoff_field(payoff) -> ScalarField:
    if isinstance(payoff, ScalarField):
        return payoff
    if payoff in (None, "one"):
        return ScalarField.constant(1.0)
    if payoff == "linear":
        return ScalarField.symbolic(X)
    raise ParameterError(f"unknown payoff {payoff!r}")


def _f(v: float) -> sp.Float:
    return sp.Float(v, 17)


def cir_quadruple(p: CirParams, payoff=None) -> Quadruple:
    s = abs(p.sigma)
    return Quadruple(ScalarField.symbolic(_f(p.b) - _f(p.a) * X),
                     ScalarField.symbolic(_f(s) * sp.sqrt(X)),
                     ScalarField.symbolic(_f(p.q) * X),
                     _payoff_field(payoff), sqrt_process=(p.b, p.a, s))


def power_sqrt_process(drift: ScalarField, vol: float, beta: float) -> tuple | None:
    """Square-root representation of ``dX = (M - Theta X^{2 beta}) X dt + vol X^{beta+1} dB``.

    ``Z = X^{-2 beta}`` solves ``dZ = (2 beta Theta + beta (2 beta + 1) vol^2
    - 2 beta M Z) dt - 2 beta vol sqrt(Z) dB``.  ``M`` and ``Theta`` are read
    off the drift field; None is returned when the drift is not of this form
    or the level is not positive.
    """
    k = 2.0 * beta
    pts = np.array([0.5, 1.0, 2.0])
    g = drift(pts) / pts
    theta = (g[1] - g[2]) / (2.0 ** k - 1.0)
    m = g[1] + theta
    if abs(m - theta * 0.5 ** k - g[0]) > 1e-10 * max(1.0, abs(g[0])):
        return None
    level = k * theta + beta * (k + 1.0) * vol * vol
    if not level > 0:
        return None
    return (level, k * m, k * abs(vol), -1.0 / k)


def three_halves_quadruple(p: ThreeHalvesParams, payoff=None) -> Quadruple:
    drift = ScalarField.symbolic((_f(p.b) - _f(p.a) * X) * X)
    return Quadruple(drift,
                     ScalarField.symbolic(_f(p.sigma) * X ** sp.Rational(3, 2)),
                     ScalarField.symbolic(_f(p.q) * X),
                     _payoff_field(payoff), sqrt_process=power_sqrt_process(drift, p.sigma, 0.5))


def cev_quadruple(p: CevParams, payoff=None) -> Quadruple:
    e = _f(2.0 * p.beta)
    rate = X ** (-e) if p.variant == "I" else X ** e
    drift = ScalarField.symbolic((_f(p.mu) - _f(p.theta) * X ** e) * X)
    return Quadruple(drift,
                     ScalarField.symbolic(_f(abs(p.sigma)) * X ** (_f(p.beta) + 1)),
                     ScalarField.symbolic(_f(p.q) * rate),
                     _payoff_field(payoff), sqrt_process=power_sqrt_process(drift, p.sigma, p.beta))


def _with_power_sqrt(chain: DecompositionChain, vol: float, beta: float) -> DecompositionChain:
    return replace(chain,
                   hatted=replace(chain.hatted, sqrt_process=power_sqrt_process(chain.hatted.drift, vol, beta)),
                   tilde=replace(chain.tilde, sqrt_process=power_sqrt_process(chain.tilde.drift, vol, beta)),
                   eigen_sqrt_process=power_sqrt_process(chain.kappa, vol, beta))


def cir_chain(p: CirParams, payoff=None) -> DecompositionChain:
    """CIR: ``(lam, phi) = (b eta, e^{-eta x})`` and ``lam_hat = lam_tilde = alpha``."""
    q = cir_quadruple(p, payoff)
    one = ScalarField.constant(1.0)
    chain = build_chain(q, Eigenpair(p.lam, ScalarField.symbolic(sp.exp(-_f(p.eta) * X))),
                        Eigenpair(p.alpha, one), Eigenpair(p.alpha, one))
    s = abs(p.sigma)
    return replace(chain,
                   hatted=replace(chain.hatted, sqrt_process=(p.b + 0.5 * s * s, p.alpha, s)),
                   tilde=replace(chain.tilde, sqrt_process=(p.b + s * s, p.alpha, s)),
                   eigen_sqrt_process=(p.b, p.alpha, s))


def three_halves_chain(p: ThreeHalvesParams, payoff=None) -> DecompositionChain:
    """3/2: ``(lam, phi) = (b eta, x^{-eta})`` and ``(lam_hat, phi_hat) = (b, x^{-2})``."""
    q = three_halves_quadruple(p, payoff)
    inv_sq = ScalarField.symbolic(X ** -2)
    chain = build_chain(q, Eigenpair(p.lam, ScalarField.symbolic(X ** (-_f(p.eta)))),
                        Eigenpair(p.b, inv_sq), Eigenpair(p.b, inv_sq))
    return _with_power_sqrt(chain, p.sigma, 0.5)


def cev_chain(p: CevParams, payoff=None) -> DecompositionChain:
    """CEV chain in the native coordinate.

    The base eigenfunction is the reduced one composed with ``y = x^e``.  The
    hatted and tilde problems govern ``x``-derivatives, so their
    eigenfunctions carry the factor ``y'(x)``, which is ``x^{-2 beta - 1}`` for
    both variants.
    """
    red = cev_reduce(p)
    r = red.reduced
    e = _f(red.exponent)
    jac = ScalarField.symbolic(X ** (-_f(2.0 * p.beta) - 1))
    if p.variant == "I":
        phi = sp.exp(-_f(r.eta) * X ** e)
        rate1 = r.alpha
    else:
        phi = X ** (-_f(r.eta) * e)
        rate1 = r.b
    chain = build_chain(cev_quadruple(p, payoff), Eigenpair(r.lam, ScalarField.symbolic(phi)),
                        Eigenpair(rate1, jac), Eigenpair(rate1, jac))
    return _with_power_sqrt(chain, p.sigma, p.beta)


def model_chain(p: ModelParams, payoff=None) -> DecompositionChain:
    if isinstance(p, CirParams):
        return cir_chain(p, payoff)
    if isinstance(p, ThreeHalvesParams):
        return three_halves_chain(p, payoff)
    return cev_chain(p, payoff)


# -- CIR closed forms --------------------------------------------------------

def cir_c(alpha: float, sigma: float, T):
    return sigma * sigma * -np.expm1(-alpha * np.asarray(T, dtype=float)) / (2.0 * alpha)


def cir_mgf(bhat: float, alpha: float, sigma: float, beta: float, T, x):
    """``E[exp(beta X_T)]`` for ``dX = (bhat - alpha X) dt + sigma sqrt(X) dB``, ``X_0 = x``."""
    if beta >= 2.0 * alpha / sigma ** 2:
        raise DomainError(f"beta={beta} >= 2 alpha / sigma^2: the transform explodes")
    T = np.asarray(T, dtype=float)
    if np.any(T < 0):
        raise DomainError("negative horizon")
    c = cir_c(alpha, sigma, T)
    d = 1.0 - beta * c
    out = d ** (-2.0 * bhat / sigma ** 2) * np.exp(beta * np.asarray(x, dtype=float) * np.exp(-alpha * T) / d)
    return out if out.ndim else float(out)


def cir_remainder(p: CirParams, T, x=None):
    """``f(T, x) = E^hat[e^{eta X_T}]`` for ``h = 1``."""
    x = p.xi if x is None else x
    return cir_mgf(p.b, p.alpha, p.sigma, p.eta, T, x)


def cir_price_closed(p: CirParams, T):
    """``p_T = e^{-eta xi} e^{-b eta T} E^hat[e^{eta X_T}]`` for ``h = 1``."""
    return np.exp(-p.eta * p.xi - p.lam * np.asarray(T, dtype=float)) * cir_remainder(p, T)


def cir_fx_closed(p: CirParams, T, x=None):
    """``f_x(T, x) = eta E[e^{eta Xhat_T}] e^{-alpha T}`` under the hatted dynamics."""
    x = p.xi if x is None else x
    s2 = p.sigma ** 2
    return p.eta * cir_mgf(p.b + 0.5 * s2, p.alpha, p.sigma, p.eta, T, x) * np.exp(-p.alpha * np.asarray(T, dtype=float))


def cir_fxx_closed(p: CirParams, T, x=None):
    x = p.xi if x is None else x
    T = np.asarray(T, dtype=float)
    r1 = p.eta * np.exp(-p.alpha * T) / (1.0 - p.eta * cir_c(p.alpha, p.sigma, T))
    return cir_remainder(p, T, x) * r1 * r1


@dataclass(frozen=True)
class ClosedForm:
    """``p_T`` with ``d/dxi ln p_T`` and ``d2/dxi2 ln p_T``."""

    T: float
    price: float
    dlog: float
    d2log: float

    @property
    def delta(self) -> float:
        return self.dlog

    @property
    def gamma(self) -> float:
        return self.d2log + self.dlog ** 2


def cir_closed(p: CirParams, T: float, payoff: str = "one") -> ClosedForm:
    """Price and log-derivatives for ``h = 1`` or ``h(x) = x``."""
    T = float(T)
    eta, al, s2 = p.eta, p.alpha, p.sigma ** 2
    c = float(cir_c(al, p.sigma, T))
    d = 1.0 - eta * c
    decay = math.exp(-al * T)
    m1 = eta * decay / d
    log_mgf = -(2.0 * p.b / s2) * math.log(d) + eta * p.xi * decay / d
    log_p = -eta * p.xi - p.lam * T + log_mgf
    if payoff == "one":
        return ClosedForm(T, math.exp(log_p), -eta + m1, 0.0)
    if payoff == "linear":
        # E[X e^{beta X}] = d/dbeta MGF at beta = eta
        L = (2.0 * p.b / s2) * c / d + p.xi * decay / (d * d)
        dL = decay / (d * d)
        return ClosedForm(T, math.exp(log_p) * L, -eta + m1 + dL / L, -(dL / L) ** 2)
    raise ParameterError(f"unknown payoff {payoff!r}")


# -- 3/2 closed forms --------------------------------------------------------

def _three_halves_args(alpha, b, sigma, A, T, x):
    B = 2.0 * alpha / sigma ** 2 + 2.0
    if not A < B:
        raise DomainError(f"moment order A={A} must be below 2 alpha / sigma^2 + 2 = {B}")
    s2 = sigma * sigma
    K = (2.0 * b / s2) / math.expm1(b * T)
    return B, K, -K / x


def three_halves_moment(alpha: float, b: float, sigma: float, A: float, T: float, x: float) -> float:
    """``E[X_T^A]`` for ``dX = (b - alpha X) X dt + sigma X^{3/2} dB``, ``X_0 = x``."""
    if T < 0:
        raise DomainError("negative horizon")
    if T == 0:
        return float(x) ** A
    B, K, z = _three_halves_args(alpha, b, sigma, A, T, x)
    scale = 2.0 * b / (sigma * sigma * -math.expm1(-b * T))
    log_pref = log_gamma(B - A) - log_gamma(B) + A * math.log(scale)
    return math.exp(log_pref) * kummer_m(A, B, z)


def three_halves_moment_limit(alpha: float, b: float, sigma: float, A: float) -> float:
    B = 2.0 * alpha / sigma ** 2 + 2.0
    return math.exp(log_gamma(B - A) - log_gamma(B) + A * math.log(2.0 * b / sigma ** 2))


def three_halves_price_closed(p: ThreeHalvesParams, T: float) -> float:
    """``p_T = xi^{-eta} e^{-b eta T} E^hat[X_T^eta]`` for ``h = 1``."""
    return p.xi ** -p.eta * math.exp(-p.lam * T) * three_halves_moment(p.alpha, p.b, p.sigma, p.eta, T, p.xi)


def three_halves_closed(p: ThreeHalvesParams, T: float) -> ClosedForm:
    T = float(T)
    if T <= 0:
        return ClosedForm(T, 1.0, 0.0, 0.0)
    eta, xi = p.eta, p.xi
    B, K, z = _three_halves_args(p.alpha, p.b, p.sigma, eta, T, xi)
    m0 = kummer_m(eta, B, z)
    m1 = eta / B * kummer_m(eta + 1, B + 1, z) / m0
    m2 = eta * (eta + 1) / (B * (B + 1)) * kummer_m(eta + 2, B + 2, z) / m0
    dz = K / xi ** 2
    d2z = -2.0 * K / xi ** 3
    L1 = m1 * dz
    L2 = m2 * dz * dz + m1 * d2z - L1 * L1
    return ClosedForm(T, three_halves_price_closed(p, T), -eta / xi + L1, eta / xi ** 2 + L2)


# -- CEV through the reduction -------------------------------------------------

def cev_closed(p: CevParams, T: float) -> ClosedForm:
    red = cev_reduce(p)
    inner = closed_form(red.reduced, T)
    dlog = inner.dlog * red.dy
    d2log = inner.d2log * red.dy ** 2 + inner.dlog * red.d2y
    return ClosedForm(float(T), inner.price, dlog, d2log)


def closed_form(p: ModelParams, T: float, payoff: str = "one") -> ClosedForm:
    if isinstance(p, CirParams):
        return cir_closed(p, T, payoff)
    if payoff != "one":
        raise ParameterError("closed forms beyond h = 1 exist only for CIR")
    if isinstance(p, ThreeHalvesParams):
        return three_halves_closed(p, T)
    return cev_closed(p, T)


def price_closed(p: ModelParams, T: float, payoff: str = "one") -> float:
    return closed_form(p, T, payoff).price


# -- long-run limits -----------------------------------------------------------

@dataclass(frozen=True)
class SensitivityLimits:
    """Long-maturity targets.

    ``param_limits`` holds ``-d lam / d param``, the limit of
    ``(1/T) d ln p_T / d param``.  Parameters listed in ``bounded_only``
    have ``d ln p_T / d param`` bounded rather than growing linearly.
    """

    delta_limit: float
    gamma_limit: float
    delta_rate: float
    gamma_combo_rate: float
    param_limits: dict = field(default_factory=dict)
    bounded_only: tuple = ()

    @property
    def lambda_gradient(self) -> dict:
        return {k: -v for k, v in self.param_limits.items()}


def lambda_of(p: ModelParams) -> float:
    return p.lam


def _cir_grad(a, b, s, q):
    al = math.sqrt(a * a + 2 * q * s * s)
    eta = 2 * q / (al + a)
    return {
        "a": b / s ** 2 * (a / al - 1.0),
        "b": eta,
        "sigma": 2.0 * b * (q / (al * s) - (al - a) / s ** 3),
        "q": b / al,
    }


def _three_halves_grad(a, b, s, q):
    c = a + 0.5 * s * s
    R = math.sqrt(c * c + 2 * q * s * s)
    eta = (R - c) / s ** 2
    return {
        "a": -b / s ** 2 * (R - c) / R,
        "b": eta,
        "sigma": b * ((c + 2 * q - R) / (s * R) - 2.0 * (R - c) / s ** 3),
        "q": b / R,
    }


def lambda_gradient(p: ModelParams) -> dict:
    """Analytic ``d lam / d param`` for every model parameter."""
    if isinstance(p, CirParams):
        g = _cir_grad(p.a, p.b, abs(p.sigma), p.q)
        g["sigma"] *= math.copysign(1.0, p.sigma)
        return g
    if isinstance(p, ThreeHalvesParams):
        return _three_halves_grad(p.a, p.b, p.sigma, p.q)
    mu, th, s, be, q = p.mu, p.theta, p.sigma, p.beta, p.q
    if p.variant == "I":
        R = math.sqrt(mu * mu + 2 * q * s * s)
        k = th / s ** 2 + be + 0.5
        return {
            "mu": k * (mu / R - 1.0),
            "theta": (R - mu) / s ** 2,
            "sigma": ((2 * be + 1) * q * s ** 4 - 2 * th * (mu * mu + q * s * s)) / (s ** 3 * R)
            + 2 * th * mu / s ** 3,
            "beta": R - mu,
            "q": k * s * s / R,
        }
    g = _three_halves_grad(th, mu, abs(s), q)
    return {"mu": g["b"], "theta": g["a"], "sigma": g["sigma"] * math.copysign(1.0, s),
            "beta": 0.0, "q": g["q"]}


def sensitivity_limits(p: ModelParams, payoff=None) -> SensitivityLimits:
    chain = model_chain(p, payoff)
    xi = np.array([p.xi])
    phi = chain.pair0.phi
    delta = float(phi.first(xi)[0] / phi(xi)[0])
    gamma = float(phi.second(xi)[0] / phi(xi)[0])
    lam1, lam2 = chain.pair1.lam, chain.pair2.lam
    grad = lambda_gradient(p)
    bounded = ("beta",) if isinstance(p, CevParams) and p.variant == "II" else ()
    limits = {k: -v for k, v in grad.items() if k not in bounded}
    return SensitivityLimits(delta, gamma, lam1, lam1 + min(lam1, lam2), limits, bounded)


def model_params_from(kind: str, **kw) -> ModelParams:
    kind = kind.lower()
    if kind == "cir":
        return CirParams(**kw)
    if kind == "three_halves":
        return ThreeHalvesParams(**kw)
    if kind in ("cev1", "cev2"):
        return CevParams(variant="I" if kind == "cev1" else "II", **kw)
    raise ParameterError(f"unknown model kind {kind!r}")


def model_kind(p: ModelParams) -> str:
    if isinstance(p, CirParams):
        return "cir"
    if isinstance(p, ThreeHalvesParams):
        return "three_halves"
    return "cev1" if p.variant == "I" else "cev2"
