"""Front ends that turn portfolio and bond problems into pricing quadruples.

Each map returns an :class:`AppResult`: the quadruple (and catalog record
when it lands in one), the scalar wrapper ``u_T = p_T e^{c T}`` and the outer
composition of the application (``u^{1-nu}/nu`` for power utility,
``(1/nu) ln u`` for entropic risk, the identity for bonds).

Direct Monte Carlo estimators of the original expectations are provided so
that the wrappers can be checked against an independent computation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Callable

import numpy as np
import sympy as sp

from .catalog import (CevParams, CirParams, ModelParams, ThreeHalvesParams, cev_reduce,
                      model_chain, price_closed)
from .core import X, Quadruple, ScalarField
from .errors import ContractError, ParameterError
from .montecarlo import BLOCK, Estimate, PathConfig, block_rng

ENTROPIC_KINDS = ("affine-cp", "threehalves-cp1", "threehalves-cp2")


@dataclass(frozen=True)
class FactorSpec:
    """One-factor market: ``dX = k dt + v dZ``, one stock with price of risk ``theta``.

    ``Z = rho W + sqrt(1 - rho^2) W_perp`` where ``W`` drives the stock, so
    ``v . theta = rho v theta`` and ``|theta|^2 = theta^2``.
    """

    k: ScalarField
    v: ScalarField
    theta: ScalarField
    r: ScalarField
    nu: float
    rho: float = 1.0

    def __post_init__(self):
        if not -1.0 <= self.rho <= 1.0:
            raise ContractError("correlation must lie in [-1, 1]")
        for name in ("k", "v", "theta", "r"):
            if not getattr(self, name).is_symbolic:
                raise ContractError(f"factor field {name} must be symbolic")


@dataclass(frozen=True)
class AppResult:
    quadruple: Quadruple
    params: ModelParams | None
    scalar_wrap: str
    growth_limit: float | None
    wrap_rate: float = 0.0  # u_T = p_T * exp(wrap_rate * T)
    outer: Callable[[float], float] = staticmethod(lambda u: u)

    def u_T(self, p_T: float, T: float) -> float:
        return p_T * math.exp(self.wrap_rate * T)

    def value(self, p_T: float, T: float) -> float:
        return self.outer(self.u_T(p_T, T))

    def u_T_closed(self, T: float) -> float:
        if self.params is None:
            raise ContractError("no catalog record; price the quadruple by Monte Carlo or PDE")
        return self.u_T(price_closed(self.params, T), T)


def _sym(c: float) -> sp.Float:
    return sp.Float(c, 17)


def _const(expr) -> float | None:
    """Float value of ``expr`` if it does not depend on ``x``."""
    expr = sp.simplify(expr) if expr.has(X) else expr
    if expr.has(X):
        return None
    return float(expr)


def recognize(q: Quadruple) -> ModelParams | None:
    """Identify a CIR or 3/2 quadruple with payoff 1 and return its catalog record."""
    drift, sig, rate = (sp.expand(f.expr) for f in (q.drift, q.sigma, q.rate))
    if q.payoff.expr is None or _const(q.payoff.expr) != 1.0:
        return None
    qc = _const(rate / X)
    if qc is None or qc <= 0:
        return None
    s2 = sp.expand(sig ** 2)
    c = _const(s2 / X)
    poly = sp.Poly(drift, X) if drift.is_polynomial(X) else None
    if c is not None and poly is not None and poly.degree() <= 1:
        b, a = float(poly.coeff_monomial(1)), -float(poly.coeff_monomial(X))
        return CirParams(a=a, b=b, sigma=math.sqrt(c), q=qc)
    c = _const(s2 / X ** 3)
    if c is not None and poly is not None and poly.degree() <= 2 and float(poly.coeff_monomial(1)) == 0.0:
        b, a = float(poly.coeff_monomial(X)), -float(poly.coeff_monomial(X ** 2))
        return ThreeHalvesParams(a=a, b=b, sigma=math.sqrt(c), q=qc)
    return None


def _utility_outer(nu: float) -> Callable[[float], float]:
    return lambda u: u ** (1.0 - nu) / nu


def utility_factor_map(spec: FactorSpec) -> AppResult:
    """Power utility ``x^nu / nu`` with ``nu < 0``.

    The optimal expected utility is ``u_T^{1-nu}/nu`` with ``u_T`` the price
    of the quadruple ``(k - (nu/(nu-1)) rho v theta, |v|, r_u, 1)`` where
    ``r_u = -(nu/(2(nu-1)^2)) theta^2 + (nu/(nu-1)) r``.
    """
    nu = spec.nu
    if not nu < 0:
        raise ParameterError("power utility needs nu < 0", "branch-violation")
    w = nu / (nu - 1.0)
    drift = spec.k.expr - _sym(w * spec.rho) * spec.v.expr * spec.theta.expr
    rate = -_sym(nu / (2.0 * (nu - 1.0) ** 2)) * spec.theta.expr ** 2 + _sym(w) * spec.r.expr
    rate = sp.expand(rate)
    # a constant part of the rate is pulled out into the wrapper
    const = rate.subs(X, 0) if rate.is_polynomial(X) else sp.Integer(0)
    try:
        c = float(const)
    except TypeError:
        c = 0.0
    q = Quadruple(ScalarField.symbolic(sp.expand(drift)), ScalarField.symbolic(sp.Abs(spec.v.expr)),
                  ScalarField.symbolic(sp.expand(rate - const)), ScalarField.constant(1.0))
    params = recognize(q)
    growth = None if params is None else -params.lam - c
    return AppResult(q, params, "u_T = p_T exp(-c T); value = u_T^(1-nu)/nu", growth, -c,
                     _utility_outer(nu))


def heston_spec(k: float, m: float, v: float, rho: float, mu: float, nu: float,
                r: float = 0.0) -> FactorSpec:
    """Heston variance factor with stock excess return ``mu X``."""
    return FactorSpec(ScalarField.symbolic(_sym(k) * (_sym(m) - X)),
                      ScalarField.symbolic(_sym(v) * sp.sqrt(X)),
                      ScalarField.symbolic(_sym(mu) * sp.sqrt(X)),
                      ScalarField.constant(r), nu, rho)


def three_halves_spec(k: float, m: float, v: float, rho: float, mu: float, nu: float,
                      r: float = 0.0) -> FactorSpec:
    """3/2 variance factor ``dX = k X (m - X) dt + v X^{3/2} dZ``."""
    return FactorSpec(ScalarField.symbolic(_sym(k) * X * (_sym(m) - X)),
                      ScalarField.symbolic(_sym(v) * X ** sp.Rational(3, 2)),
                      ScalarField.symbolic(_sym(mu) * sp.sqrt(X)),
                      ScalarField.constant(r), nu, rho)


def utility_cev_map(k: float, r: float, sigma: float, beta: float, nu: float,
                    xi: float = 1.0) -> AppResult:
    """Local-volatility stock ``dS/S = k dt + sigma S^beta dB`` under power utility.

    Maps to CEV-I with ``mu = (nu r - k)/(nu - 1)``, ``theta = 0`` and
    ``q = -(k - r)^2 nu / (2 sigma^2 (nu - 1)^2)``; the constant part of the
    rate gives ``u_T = p_T e^{-(nu r/(nu - 1)) T}``.
    """
    if not nu < 0:
        raise ParameterError("power utility needs nu < 0", "branch-violation")
    mu = (nu * r - k) / (nu - 1.0)
    q = -(k - r) ** 2 * nu / (2.0 * sigma ** 2 * (nu - 1.0) ** 2)
    if not q > 0:
        raise ParameterError("k = r gives a zero market price of risk (q = 0)", "domain-violation")
    params = CevParams(mu=mu, theta=0.0, sigma=sigma, beta=beta, q=q, xi=xi, variant="I")
    cev_reduce(params)
    c = nu * r / (nu - 1.0)
    quad = model_chain(params).base
    return AppResult(quad, params, "u_T = p_T exp(-(nu r/(nu-1)) T); value = u_T^(1-nu)/nu",
                     -params.lam - c, -c, _utility_outer(nu))


def _entropic_outer(nu: float) -> Callable[[float], float]:
    return lambda u: math.log(u) / nu


def entropic_map(kind: str, **params) -> AppResult:
    """Entropic risk ``(1/nu) ln E[exp(-nu Pi_T)]`` of constant-proportion portfolios.

    ``affine-cp``
        CIR factor ``dX = k(m - X) dt + v sqrt(X) dW``, asset return
        ``gamma X dt + sqrt(vs X) dW``, holding ``eta_bar`` (keys k, m, v,
        eta_bar, gamma, vs, nu).
    ``threehalves-cp1``
        3/2 asset ``dS = k S (m - S) dt + v S^{3/2} dW`` with ``pi S^2 =
        eta_bar``; ``X = 1/S`` is CIR.
    ``threehalves-cp2``
        the same asset with ``pi S = eta_bar``.
    """
    if kind not in ENTROPIC_KINDS:
        raise ContractError(f"unknown entropic kind {kind!r}")
    nu = params["nu"]
    if not nu > 0:
        raise ParameterError("entropic risk needs nu > 0", "branch-violation")
    k, m, v, eb = params["k"], params["m"], params["v"], params["eta_bar"]
    xi = params.get("xi", 1.0)
    if eb == 0:
        raise ParameterError("empty portfolio: q = 0 and the risk is 0", "portfolio-range")
    if kind == "affine-cp":
        gam, vs = params.get("gamma", 1.0), params.get("vs", 1.0)
        rec = CirParams(a=k + nu * v * math.sqrt(vs) * eb, b=m * k, sigma=v,
                        q=nu * (eb * gam - 0.5 * nu * (eb * math.sqrt(vs)) ** 2), xi=xi)
        wrap, note = 0.0, "u_T = p_T; risk = ln(u_T)/nu"
    elif kind == "threehalves-cp1":
        if not 0 < eb < k * m / (nu * v * v):
            raise ParameterError("CP-I needs 0 < eta_bar < k m / (nu v^2)", "portfolio-range")
        rec = CirParams(a=k * m - nu * v * v * eb, b=k + v * v, sigma=-v,
                        q=nu * eb * k * m - 0.5 * (nu * eb * v) ** 2, xi=1.0 / xi)
        wrap, note = nu * k * eb, "u_T = p_T exp(nu k eta_bar T); risk = ln(u_T)/nu"
    else:
        if not -k / (nu * v * v) < eb < 0:
            raise ParameterError("CP-II needs -k/(nu v^2) < eta_bar < 0", "portfolio-range")
        rec = ThreeHalvesParams(a=k + nu * v * v * eb, b=k * m, sigma=v,
                                q=-nu * eb * (k + 0.5 * nu * v * v * eb), xi=xi)
        wrap, note = -nu * m * k * eb, "u_T = p_T exp(-nu m k eta_bar T); risk = ln(u_T)/nu"
    if not rec.q > 0:
        raise ParameterError("mapped discount slope is not positive", "portfolio-range")
    return AppResult(model_chain(rec).base, rec, note, -rec.lam + wrap, wrap, _entropic_outer(nu))


def bond_map(model: CirParams | ThreeHalvesParams) -> AppResult:
    """Zero-coupon bond with short rate ``r = X``; the growth limit is minus the long yield."""
    if not isinstance(model, (CirParams, ThreeHalvesParams)):
        raise ContractError("bond_map takes a CIR or 3/2 short-rate model")
    rec = replace(model, q=1.0)
    return AppResult(model_chain(rec).base, rec, "bond price = p_T", -rec.lam)


def long_yield(result: AppResult) -> float:
    return -result.growth_limit


# -- direct Monte Carlo of the original expectations ------------------------------

def _joint_paths(drift, vol, rho, x0, cfg: PathConfig, log_a, log_b, log_euler=False) -> Estimate:
    """``E[exp(int a(X) dt + int b(X) dW)]`` with ``dX = drift dt + vol (rho dW + rho' dW_perp)``.

    Euler full truncation (or Euler on ``ln X``), Ito sums for the stochastic
    integral.  Blocks use the same Philox streams as the path engine.
    """
    dt = cfg.T / cfg.n_steps
    sdt = math.sqrt(dt)
    rho_p = math.sqrt(max(0.0, 1.0 - rho * rho))
    parts = []
    for block, start in enumerate(range(0, cfg.n_paths, BLOCK)):
        n = min(BLOCK, cfg.n_paths - start)
        rng = block_rng(cfg.seed, block)
        x = np.full(n, float(x0))
        logw = np.zeros(n)
        with np.errstate(all="ignore"):
            for _ in range(cfg.n_steps):
                dw = rng.standard_normal(n) * sdt
                dz = rho * dw + rho_p * rng.standard_normal(n) * sdt
                xc = np.maximum(x, 1e-300)
                logw += log_a(xc) * dt + log_b(xc) * dw
                if log_euler:
                    s = vol(xc) / xc
                    x = xc * np.exp((drift(xc) / xc - 0.5 * s * s) * dt + s * dz)
                else:
                    x = x + drift(xc) * dt + vol(xc) * dz
        parts.append(np.exp(logw))
    vals = np.concatenate(parts)
    ok = np.isfinite(vals)
    v = vals[ok]
    return Estimate(float(v.mean()), float(v.std(ddof=1) / math.sqrt(v.size)), int(v.size),
                    "P", cfg.seed, int((~ok).sum()))


def utility_direct_mc(spec: FactorSpec, x0: float, cfg: PathConfig) -> Estimate:
    """``u_T = E[zeta_T^{nu/(nu-1)}]`` with ``zeta`` the state-price density."""
    w = spec.nu / (spec.nu - 1.0)
    th, r = spec.theta, spec.r
    return _joint_paths(spec.k, spec.v, spec.rho, x0, cfg,
                        lambda x: -0.5 * w * th(x) ** 2 - w * r(x),
                        lambda x: -w * th(x))


def entropic_direct_mc(kind: str, cfg: PathConfig, **params) -> Estimate:
    """``E[exp(-nu Pi_T)]`` simulated from the factor and portfolio dynamics."""
    nu, k, m, v, eb = (params[n] for n in ("nu", "k", "m", "v", "eta_bar"))
    xi = params.get("xi", 1.0)
    if kind == "affine-cp":
        gam, vs = params.get("gamma", 1.0), params.get("vs", 1.0)
        return _joint_paths(lambda x: k * (m - x), lambda x: v * np.sqrt(x), 1.0, xi, cfg,
                            lambda x: -nu * eb * gam * x, lambda x: -nu * eb * np.sqrt(vs * x))
    drift = lambda s: k * s * (m - s)  # noqa: E731
    vol = lambda s: v * s ** 1.5  # noqa: E731
    if kind == "threehalves-cp1":
        # pi = eta_bar / S^2: dPi = eta_bar (k (m - S)/S dt + v S^{-1/2} dW)
        return _joint_paths(drift, vol, 1.0, xi, cfg,
                            lambda s: -nu * eb * k * (m - s) / s, lambda s: -nu * eb * v / np.sqrt(s),
                            log_euler=True)
    if kind == "threehalves-cp2":
        return _joint_paths(drift, vol, 1.0, xi, cfg,
                            lambda s: -nu * eb * k * (m - s), lambda s: -nu * eb * v * np.sqrt(s),
                            log_euler=True)
    raise ContractError(f"unknown entropic kind {kind!r}")
