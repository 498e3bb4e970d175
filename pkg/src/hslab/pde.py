"""Crank–Nicolson solver for the remainder function and its state derivative.

Solves the forward-in-time convection-diffusion-reaction problem

    u_t = 0.5 sigma^2 u_xx + drift u_x + potential u,    u(0, x) = u0(x)

on a truncated interval, either in ``x`` or in ``y = ln x``.  The remainder
``f`` uses the eigen-measure drift and no potential; ``f_x`` uses the hatted
drift with potential ``kappa'``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .core import DecompositionChain, Quadruple, ScalarField, StateInterval, stationary_quantiles
from .errors import ContractError, NumericError

GROWTH_LIMIT = 10.0


@dataclass(frozen=True)
class PdeGrid:
    x_min: float
    x_max: float
    n_x: int = 400
    n_t: int = 400
    coordinate: str = "native"

    def __post_init__(self):
        if not self.x_min < self.x_max:
            raise ContractError("x_min must be below x_max")
        if self.n_x < 50 or self.n_t < 50:
            raise ContractError("PDE grids need at least 50 points in space and time")
        if self.coordinate not in ("native", "log"):
            raise ContractError(f"unknown coordinate {self.coordinate!r}")
        if self.coordinate == "log" and self.x_min <= 0:
            raise ContractError("log coordinate needs x_min > 0")

    def nodes(self) -> tuple[np.ndarray, np.ndarray]:
        """``(u, x)``: computational and state-space nodes."""
        if self.coordinate == "log":
            u = np.linspace(math.log(self.x_min), math.log(self.x_max), self.n_x)
            return u, np.exp(u)
        u = np.linspace(self.x_min, self.x_max, self.n_x)
        return u, u

    def refined(self, factor: int = 2) -> "PdeGrid":
        return PdeGrid(self.x_min, self.x_max, self.n_x * factor, self.n_t * factor, self.coordinate)


def default_grid(drift: ScalarField, sigma: ScalarField, domain: StateInterval, n_x: int = 400,
                 n_t: int = 400, coordinate: str | None = None,
                 include: float | None = None) -> PdeGrid:
    """Stationary quantiles [0.0005, 0.9995] of the dynamics, widened by 25%.

    The widening is applied in the computational coordinate.  By default
    the log coordinate is used on ``(0, inf)``, where square-root and power
    diffusions degenerate at the origin.
    """
    if coordinate is None:
        coordinate = "log" if domain.lower == 0.0 and math.isinf(domain.upper) else "native"
    lo, hi = (float(v) for v in stationary_quantiles(drift, sigma, domain, (0.0005, 0.9995)))
    if include is not None:
        # keep the query state well inside the truncated interval
        if coordinate == "log":
            lo, hi = min(lo, include * math.exp(-0.5)), max(hi, include * math.exp(0.5))
        else:
            w = max(hi - lo, abs(include))
            lo, hi = min(lo, include - 0.25 * w), max(hi, include + 0.25 * w)
    if coordinate == "log":
        a, b = math.log(lo), math.log(hi)
        pad = 0.125 * (b - a)
        return PdeGrid(math.exp(a - pad), math.exp(b + pad), n_x, n_t, coordinate)
    pad = 0.125 * (hi - lo)
    x_min = lo - pad
    if x_min <= domain.lower:
        x_min = domain.lower + 0.5 * (lo - domain.lower)
    x_max = min(hi + pad, 0.5 * (hi + domain.upper) if math.isfinite(domain.upper) else math.inf)
    return PdeGrid(x_min, x_max, n_x, n_t, coordinate)


@dataclass(frozen=True)
class PdeSurface:
    t: np.ndarray
    x: np.ndarray
    u: np.ndarray
    values: np.ndarray  # shape (len(t), len(x))
    coordinate: str

    def at(self, x: float, t_index: int = -1) -> float:
        """Cubic Lagrange interpolation in the computational coordinate."""
        uq = math.log(x) if self.coordinate == "log" else x
        u = self.u
        if not u[0] <= uq <= u[-1]:
            raise ContractError(f"{x} lies outside the PDE grid")
        j = int(np.clip(np.searchsorted(u, uq) - 2, 0, u.size - 4))
        nodes = u[j:j + 4]
        vals = self.values[t_index, j:j + 4]
        out = 0.0
        for k in range(4):
            w = 1.0
            for m in range(4):
                if m != k:
                    w *= (uq - nodes[m]) / (nodes[k] - nodes[m])
            out += w * vals[k]
        return float(out)

    def series(self, x: float) -> tuple[np.ndarray, np.ndarray]:
        return self.t, np.array([self.at(x, i) for i in range(self.t.size)])

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "x", "value"])
            for i, t in enumerate(self.t):
                for xj, v in zip(self.x, self.values[i]):
                    w.writerow([repr(float(t)), repr(float(xj)), repr(float(v))])


def thomas_factor(lower, diag, upper):
    """Forward-sweep factors of a tridiagonal matrix (no pivoting)."""
    n = diag.size
    cp = np.empty(n)
    denom = np.empty(n)
    denom[0] = diag[0]
    cp[0] = upper[0] / denom[0]
    for i in range(1, n):
        denom[i] = diag[i] - lower[i] * cp[i - 1]
        cp[i] = upper[i] / denom[i] if i < n - 1 else 0.0
    return cp, denom


def thomas_solve(lower, factors, rhs):
    cp, denom = factors
    n = rhs.size
    dp = np.empty(n)
    dp[0] = rhs[0] / denom[0]
    for i in range(1, n):
        dp[i] = (rhs[i] - lower[i] * dp[i - 1]) / denom[i]
    out = np.empty(n)
    out[-1] = dp[-1]
    for i in range(n - 2, -1, -1):
        out[i] = dp[i] - cp[i] * out[i + 1]
    return out


def _operator(drift, sigma, potential, grid: PdeGrid):
    """Tridiagonal bands of the spatial operator on interior nodes.

    The boundary values obey ``u_0 = 2 u_1 - u_2`` (zero curvature), which
    is folded into the first and last interior rows.
    """
    u, x = grid.nodes()
    h = u[1] - u[0]
    xi = x[1:-1]
    s2 = sigma(xi) ** 2
    mu = drift(xi)
    if grid.coordinate == "log":
        diff = 0.5 * s2 / xi ** 2
        mu = mu / xi - diff
    else:
        diff = 0.5 * s2
    c = potential(xi) if potential is not None else np.zeros_like(xi)
    lo = diff / h ** 2
    di = -2.0 * diff / h ** 2 + c
    up = diff / h ** 2.0
    peclet = np.abs(mu) * h / np.maximum(diff, 1e-300)
    upwind = peclet > 2.0
    central = ~upwind
    lo = lo - np.where(central, mu / (2 * h), 0.0)
    up = up + np.where(central, mu / (2 * h), 0.0)
    pos = upwind & (mu > 0)
    neg = upwind & (mu <= 0)
    up = up + np.where(pos, mu / h, 0.0)
    di = di - np.where(pos, mu / h, 0.0)
    di = di + np.where(neg, mu / h, 0.0)
    lo = lo - np.where(neg, mu / h, 0.0)
    # fold u_0 = 2 u_1 - u_2 and u_{n-1} = 2 u_{n-2} - u_{n-3}
    di[0] += 2.0 * lo[0]
    up[0] -= lo[0]
    di[-1] += 2.0 * up[-1]
    lo[-1] -= up[-1]
    lo = lo.copy()
    up = up.copy()
    lo[0] = 0.0
    up[-1] = 0.0
    return lo, di, up


def _apply(lo, di, up, v):
    out = di * v
    out[1:] += lo[1:] * v[:-1]
    out[:-1] += up[:-1] * v[1:]
    return out


def solve(drift: ScalarField, sigma: ScalarField, potential: ScalarField | None,
          initial: ScalarField, grid: PdeGrid, T: float) -> PdeSurface:
    """Crank–Nicolson for ``u_t = 0.5 sigma^2 u_xx + drift u_x + potential u``."""
    u_nodes, x = grid.nodes()
    lo, di, up = _operator(drift, sigma, potential, grid)
    dt = T / grid.n_t
    a_lo, a_di, a_up = -0.5 * dt * lo, 1.0 - 0.5 * dt * di, -0.5 * dt * up
    factors = thomas_factor(a_lo, a_di, a_up)
    b_lo, b_di, b_up = 0.5 * dt * lo, 1.0 + 0.5 * dt * di, 0.5 * dt * up

    v = np.asarray(initial(x), dtype=float)
    if not np.all(np.isfinite(v)):
        raise ContractError("initial data not finite on the grid")
    scale = max(np.max(np.abs(v)), 1e-300)
    out = np.empty((grid.n_t + 1, grid.n_x))
    out[0] = v
    inner = v[1:-1].copy()
    for k in range(1, grid.n_t + 1):
        inner = thomas_solve(a_lo, factors, _apply(b_lo, b_di, b_up, inner))
        full = np.empty(grid.n_x)
        full[1:-1] = inner
        full[0] = 2.0 * inner[0] - inner[1]
        full[-1] = 2.0 * inner[-1] - inner[-2]
        if not np.all(np.isfinite(full)) or np.max(np.abs(full)) > GROWTH_LIMIT * scale:
            raise NumericError(f"Crank-Nicolson solution grew beyond {GROWTH_LIMIT}x its initial size "
                               f"at step {k}; use a finer grid")
        out[k] = full
    t = np.linspace(0.0, T, grid.n_t + 1)
    return PdeSurface(t, x, u_nodes, out, grid.coordinate)


def solve_remainder(kappa: ScalarField, sigma: ScalarField, initial: ScalarField,
                    grid: PdeGrid, T: float) -> PdeSurface:
    """``-f_t + 0.5 sigma^2 f_xx + kappa f_x = 0`` with ``f(0, .) = initial``."""
    return solve(kappa, sigma, None, initial, grid, T)


def solve_fx(hatted: Quadruple, initial: ScalarField, grid: PdeGrid, T: float) -> PdeSurface:
    """The hatted problem: drift ``kappa + sigma' sigma``, potential ``kappa' = -r_hat``."""
    return solve(hatted.drift, hatted.sigma, -hatted.rate, initial, grid, T)


def chain_grid(chain: DecompositionChain, problem: str = "remainder", n_x: int = 400,
               n_t: int = 400, coordinate: str | None = None,
               include: float | None = None) -> PdeGrid:
    """Default grid for the remainder (eigen-measure law) or f_x (hatted law) problem."""
    if problem not in ("remainder", "fx"):
        raise ContractError(f"unknown problem {problem!r}")
    drift = chain.kappa if problem == "remainder" else chain.hatted.drift
    return default_grid(drift, chain.base.sigma, chain.base.domain, n_x, n_t, coordinate, include)


def observed_order(values) -> float:
    """Richardson order ``log2(|v1 - v2| / |v2 - v3|)`` from three halvings."""
    v1, v2, v3 = values[-3:]
    d1, d2 = abs(v1 - v2), abs(v2 - v3)
    if d2 == 0.0:
        raise NumericError("successive refinements agree exactly; order undefined")
    return math.log2(d1 / d2)
