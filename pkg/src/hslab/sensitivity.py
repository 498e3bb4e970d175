"""Sensitivity curves over maturity grids, rate fits and representation estimators.

A curve is a list of :class:`CurvePoint` records, one per maturity.  Three
methods produce the same quantities:

``closed``
    analytic log-derivatives of the closed-form price;
``mc``
    common-random-number bumps of the state on simulated paths;
``pde``
    ``(ln phi)' + f_x / f`` from the two Crank–Nicolson solves.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, replace
from typing import Callable, Sequence

import numpy as np

from . import pde
from .catalog import (CirParams, ModelParams, cir_fx_closed, cir_fxx_closed, cir_remainder,
                      closed_form, model_chain, price_closed, sensitivity_limits)
from .errors import ContractError, NumericError
from .montecarlo import (Estimate, PathConfig, log_bump_estimate, price_samples,
                         simulate_terminal)

METHODS = ("closed", "mc", "pde")
STATISTICS = ("gamma", "combo")
CLOSED_BUMP = 1e-5
MC_BUMP = 1e-3
DEFAULT_WINDOW = (2.0, 12.0)
COMBO_WINDOW = (2.0, 8.0)


@dataclass(frozen=True)
class CurvePoint:
    T: float
    value: float
    std_error: float | None = None
    method: str = "closed"

    def __post_init__(self):
        if not self.T > 0:
            raise ContractError("curve maturities must be positive")
        if self.method not in METHODS:
            raise ContractError(f"unknown method {self.method!r}")
        if (self.std_error is not None) != (self.method == "mc"):
            raise ContractError("std_error is present exactly for Monte Carlo points")


@dataclass(frozen=True)
class RateFit:
    rate: float
    intercept: float
    r_squared: float
    window: tuple
    n_points: int = 0
    low_confidence: bool = False


@dataclass(frozen=True)
class BoundednessStat:
    sup: float
    trend_slope: float
    bounded: bool


@dataclass(frozen=True)
class LogDerivs:
    """``d/dxi ln p_T`` and ``d2/dxi2 ln p_T`` with optional standard errors."""

    dlog: float
    d2log: float
    dlog_se: float | None = None
    d2log_se: float | None = None


# -- per-maturity log-derivatives ----------------------------------------------

def default_path_config(model: ModelParams, T: float, **kw) -> PathConfig:
    """Exact (power-of-CIR) transitions; every catalog model admits them."""
    kw.setdefault("scheme", "cir-exact")
    return PathConfig.default(T, **kw)


def _mc_derivs(model: ModelParams, T: float, payoff, cfg: PathConfig | None,
               second: bool) -> LogDerivs:
    cfg = cfg if cfg is not None else default_path_config(model, T)
    # keep the configured step density (n_steps per unit time) at every maturity
    n_steps = cfg.n_steps * T / cfg.T if cfg.T > 0 else cfg.n_steps
    cfg = replace(cfg, T=T, n_steps=max(1, int(round(n_steps))))
    q = model_chain(model, payoff).base

    def sampler(v, c):
        return price_samples(q, v, c)

    d1 = log_bump_estimate(sampler, model.xi, MC_BUMP, cfg, order=1)
    if not second:
        return LogDerivs(d1.mean, math.nan, d1.std_error, None)
    d2 = log_bump_estimate(sampler, model.xi, MC_BUMP, cfg, order=2)
    # ln-derivative from the ratio estimates: (ln p)'' = p''/p - (p'/p)^2
    return LogDerivs(d1.mean, d2.mean - d1.mean ** 2, d1.std_error,
                     math.hypot(d2.std_error, 2.0 * abs(d1.mean) * d1.std_error))


@dataclass(frozen=True)
class PdeSolution:
    """Remainder and f_x surfaces for one model at one horizon."""

    remainder: pde.PdeSurface
    fx: pde.PdeSurface
    chain: object

    def derivs(self, xi: float) -> LogDerivs:
        f = self.remainder.at(xi)
        fx = self.fx.at(xi)
        u = self.fx.u
        h = u[1] - u[0]
        # f_xx from the f_x surface by a central difference on the interpolant
        if self.fx.coordinate == "log":
            up, dn = xi * math.exp(h), xi * math.exp(-h)
        else:
            up, dn = xi + h, xi - h
        fxx = (self.fx.at(up) - self.fx.at(dn)) / (up - dn)
        d1, d2, _ = self.chain.log_phi_derivs(np.array([xi]))
        r = fx / f
        return LogDerivs(float(d1[0]) + r, float(d2[0]) + fxx / f - r * r)


def pde_solution(model: ModelParams, T: float, payoff=None, n_x: int = 400, n_t: int = 400,
                 coordinate: str | None = None) -> PdeSolution:
    chain = model_chain(model, payoff)
    eq = chain.eigen_quadruple
    g0 = pde.chain_grid(chain, "remainder", n_x, n_t, coordinate, model.xi)
    g1 = pde.chain_grid(chain, "fx", n_x, n_t, coordinate, model.xi)
    rem = pde.solve_remainder(chain.kappa, chain.base.sigma, eq.payoff, g0, T)
    fx = pde.solve_fx(chain.hatted, chain.hatted.payoff, g1, T)
    return PdeSolution(rem, fx, chain)


def log_derivs(model: ModelParams, T: float, method: str = "closed", payoff=None,
               cfg: PathConfig | None = None, second: bool = False,
               pde_size: tuple = (400, 400)) -> LogDerivs:
    if method == "closed":
        c = closed_form(model, T, payoff or "one")
        return LogDerivs(c.dlog, c.d2log)
    if method == "mc":
        return _mc_derivs(model, T, payoff, cfg, second)
    if method == "pde":
        return pde_solution(model, T, payoff, *pde_size).derivs(model.xi)
    raise ContractError(f"unknown method {method!r}")


# -- curves ---------------------------------------------------------------------

def _point(T, value, se, method):
    return CurvePoint(float(T), float(value), None if method != "mc" else float(se), method)


def delta_curve(model: ModelParams, T_grid: Sequence[float], method: str = "closed", payoff=None,
                cfg: PathConfig | None = None, **kw) -> list[CurvePoint]:
    """``d/dxi p_T / p_T`` at each maturity.

    For ``method="mc"`` the step density ``cfg.n_steps / cfg.T`` is kept at
    every maturity of the grid.
    """
    out = []
    for T in T_grid:
        d = log_derivs(model, T, method, payoff, cfg, second=False, **kw)
        out.append(_point(T, d.dlog, d.dlog_se, method))
    return out


def combo_statistic(chain, xi: float, dlog: float, d2log: float) -> float:
    """``(ln p)'' - (ln phi)'' - (ln phi_hat)' ((ln p)' - (ln phi)')``.

    It vanishes in the long-maturity limit at the doubled rate
    ``lam_hat + min(lam_hat, lam_tilde)``.  For CIR ``phi_hat = 1`` and it is
    ``(ln p)''``; for 3/2 it reads ``(ln p)'' + (2/xi)(ln p)' + eta/xi^2``.
    """
    d1, d2, dh = (float(v[0]) for v in chain.log_phi_derivs(np.array([xi])))
    return d2log - d2 - dh * (dlog - d1)


def gamma_curve(model: ModelParams, T_grid: Sequence[float], method: str = "closed",
                payoff=None, cfg: PathConfig | None = None, statistic: str = "gamma",
                **kw) -> list[CurvePoint]:
    """``d2/dxi2 p_T / p_T`` (``statistic="gamma"``) or the combo statistic."""
    if statistic not in STATISTICS:
        raise ContractError(f"unknown statistic {statistic!r}")
    if method == "mc":
        n = (cfg.n_paths if cfg is not None else 100_000)
        if n < 1_000_000:
            warnings.warn("Monte Carlo gamma with fewer than 1e6 paths is noisy", RuntimeWarning,
                          stacklevel=2)
    chain = model_chain(model, payoff) if statistic == "combo" else None
    out = []
    for T in T_grid:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            d = log_derivs(model, T, method, payoff, cfg, second=True, **kw)
        if statistic == "gamma":
            value = d.d2log + d.dlog ** 2
            se = None if d.d2log_se is None else math.hypot(d.d2log_se, 2 * abs(d.dlog) * d.dlog_se)
        else:
            value = combo_statistic(chain, model.xi, d.dlog, d.d2log)
            se = d.d2log_se
        out.append(_point(T, value, se, method))
    return out


def _bumped(model: ModelParams, name: str, value: float) -> ModelParams:
    return replace(model, **{name: value})


def param_curve(model: ModelParams, param_id: str, T_grid: Sequence[float],
                rel_bump: float = CLOSED_BUMP,
                pricer: Callable[[ModelParams, float], float] | None = None) -> list[CurvePoint]:
    """``(1/T) d/dparam ln p_T`` by a central bump of the closed-form price."""
    if param_id not in model.names or param_id == "xi":
        raise ContractError(f"{type(model).__name__} has no parameter {param_id!r}")
    pricer = pricer or price_closed
    p0 = getattr(model, param_id)
    h = rel_bump * abs(p0) if p0 != 0 else rel_bump
    up, dn = _bumped(model, param_id, p0 + h), _bumped(model, param_id, p0 - h)
    out = []
    for T in T_grid:
        lp, ln_ = pricer(up, T), pricer(dn, T)
        if not (lp > 0 and ln_ > 0):
            raise NumericError(f"nonpositive price at T={T}")
        out.append(CurvePoint(float(T), (math.log(lp) - math.log(ln_)) / (2 * h) / T, None, "closed"))
    return out


# -- fits -------------------------------------------------------------------------

def rate_fit(errors: Sequence[tuple], window: tuple = DEFAULT_WINDOW) -> RateFit:
    """Least squares of ``ln e`` on ``T`` inside ``window``; ``rate = -slope``."""
    pts = [(float(T), float(e)) for T, e in errors if window[0] <= T <= window[1]]
    if any(e <= 0 for _, e in pts):
        raise ContractError("rate_fit needs strictly positive errors")
    if len(pts) < 4:
        raise ContractError("rate_fit needs at least 4 points inside the window")
    T = np.array([p[0] for p in pts])
    y = np.log([p[1] for p in pts])
    slope, intercept = np.polyfit(T, y, 1)
    resid = y - (slope * T + intercept)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid ** 2)) / ss_tot if ss_tot > 0 else 1.0
    r2 = min(1.0, max(0.0, r2))
    return RateFit(float(-slope), float(intercept), r2, tuple(window), len(pts), r2 < 0.9)


def curve_errors(curve: Sequence[CurvePoint], limit: float) -> list[tuple]:
    return [(p.T, abs(p.value - limit)) for p in curve]


def boundedness_stat(values: Sequence[tuple], limit: float = 0.0,
                     tol: float = 0.02) -> BoundednessStat:
    """``sup_T T |v(T) - limit|`` and the slope of its tail regression.

    The tail is the upper half of the maturity range.  A slope above ``tol``
    flags growth, i.e. a violation of the ``c/T`` bound.
    """
    if len(values) < 4:
        raise ContractError("boundedness_stat needs at least 4 points")
    pts = sorted((float(T), float(v)) for T, v in values)
    T = np.array([p[0] for p in pts])
    s = T * np.abs(np.array([p[1] for p in pts]) - limit)
    tail = T >= 0.5 * (T[0] + T[-1])
    if tail.sum() < 2:
        tail[-2:] = True
    slope = float(np.polyfit(T[tail], s[tail], 1)[0])
    sup = float(np.max(s))
    return BoundednessStat(sup, slope, bool(np.isfinite(sup) and slope <= tol))


def fitted_envelope(errors: Sequence[tuple], rate: float) -> float:
    """Smallest ``c`` with ``e(T) <= c e^{-rate T}`` on the given points."""
    return max(e * math.exp(rate * T) for T, e in errors)


# -- perturbation representations (CIR, h = 1) ----------------------------------

def _eigen_config(p: CirParams, T: float, cfg: PathConfig | None) -> PathConfig:
    cfg = cfg if cfg is not None else PathConfig.default(T, scheme="cir-exact", n_steps=max(1, int(20 * T)))
    return replace(cfg, T=T)


def _eigen_paths(p: CirParams, T: float, cfg: PathConfig, rho_tx):
    chain = model_chain(p)
    eq = chain.eigen_quadruple
    return simulate_terminal(eq.drift, eq.sigma, p.xi, None, cfg, eq.domain, eq.sqrt_process,
                             rho_tx=rho_tx)


def _mean_estimate(v: np.ndarray, rejected: np.ndarray, cfg: PathConfig) -> Estimate:
    v = v[~rejected]
    return Estimate(float(np.mean(v)), float(np.std(v, ddof=1) / math.sqrt(v.size)), int(v.size),
                    "P-hat", cfg.seed, int(rejected.sum()))


def feps_representation(model: CirParams, T: float, cfg: PathConfig | None = None) -> Estimate:
    """``f_b(T, xi) = E^hat[int_0^T f_x(T - s, X_s) ds]`` along eigen-measure paths.

    Perturbing ``b`` shifts the eigen-measure drift by ``l = 1`` and leaves
    ``phi`` unchanged, so only the time integral contributes.
    """
    if not isinstance(model, CirParams):
        raise ContractError("the f_b representation is implemented for CIR only")
    if T == 0:
        return Estimate(0.0, 0.0, 0, "P-hat", cfg.seed if cfg else 0)
    cfg = _eigen_config(model, T, cfg)
    s = _eigen_paths(model, T, cfg, lambda t, x: cir_fx_closed(model, max(T - t, 0.0), x))
    return _mean_estimate(s.integral, s.rejected, cfg)


def fsigma_representation(model: CirParams, T: float, cfg: PathConfig | None = None) -> Estimate:
    """``d/dsigma f(T, xi)`` for CIR with ``h = 1``.

    Differentiating the remainder problem in ``sigma`` gives a terminal term
    from the payoff ``e^{eta x}`` and a source
    ``sigma x f_xx - (d alpha / d sigma) x f_x`` integrated along paths.
    """
    if not isinstance(model, CirParams):
        raise ContractError("the sigma representation is implemented for CIR only")
    s_ = abs(model.sigma)
    al, eta = model.alpha, model.eta
    dal = 2.0 * model.q * s_ / al
    deta = -eta * dal / (al + model.a)
    if T == 0:
        return Estimate(deta * model.xi * math.exp(eta * model.xi), 0.0, 0, "P-hat")
    cfg = _eigen_config(model, T, cfg)

    def source(t, x):
        tau = max(T - t, 0.0)
        return s_ * x * cir_fxx_closed(model, tau, x) - dal * x * cir_fx_closed(model, tau, x)

    s = _eigen_paths(model, T, cfg, source)
    v = s.integral + deta * s.x_T * np.exp(eta * s.x_T)
    return _mean_estimate(v, s.rejected, cfg)


def remainder_bump(model: CirParams, name: str, T: float, rel_bump: float = CLOSED_BUMP) -> float:
    """Central bump of the closed-form remainder ``f(T, xi)`` in one parameter."""
    p0 = getattr(model, name)
    h = rel_bump * abs(p0)
    up = cir_remainder(_bumped(model, name, p0 + h), T)
    dn = cir_remainder(_bumped(model, name, p0 - h), T)
    return (up - dn) / (2 * h)


def pde_delta_rate(model: ModelParams, T_max: float = 4.0, t_window: tuple = (1.0, 4.0),
                   n_x: int = 400, n_t: int = 400) -> RateFit:
    """Fit ``ln |f_x(t, xi)|`` over ``t_window`` from one f_x solve."""
    chain = model_chain(model)
    g = pde.chain_grid(chain, "fx", n_x, n_t, include=model.xi)
    surf = pde.solve_fx(chain.hatted, chain.hatted.payoff, g, T_max)
    t, v = surf.series(model.xi)
    pts = [(ti, abs(vi)) for ti, vi in zip(t, v) if t_window[0] <= ti <= t_window[1]]
    return rate_fit(pts, t_window)

