import math

import numpy as np
import pytest
import sympy as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from hslab.catalog import CirParams, ThreeHalvesParams, cir_chain, three_halves_chain
from hslab.core import (POSITIVE_HALF_LINE, REAL_LINE, X, Eigenpair, Quadruple, ScalarField,
                        StateInterval, apply_generator, build_chain, central_difference,
                        eigen_residual, martingale_criterion, residual_grid)
from hslab.errors import ContractError, DomainError, InvariantError

SQRT3 = math.sqrt(3.0)


def one(values) -> float:
    return float(np.asarray(values).reshape(-1)[0])


def cir_quad(a=1.0, b=1.0, s=1.0, q=1.0, payoff=1.0):
    return Quadruple(ScalarField.symbolic(b - a * X), ScalarField.symbolic(s * sp.sqrt(X)),
                     ScalarField.symbolic(q * X), ScalarField.symbolic(payoff))


# -- ScalarField -------------------------------------------------------------------

@settings(max_examples=30, deadline=None)
@given(c=st.floats(0.2, 2.0), x=st.floats(0.3, 3.0))
def test_central_differences_converge_at_order_two(c, x):
    f = ScalarField.symbolic(sp.sin(c * X) + sp.exp(c * X / 2))
    exact = one(f.first(np.array([x])))
    errs = [abs(one(central_difference(f.value, np.array([x]), 1, step=h)) - exact)
            for h in (0.04, 0.02)]
    assert math.log2(errs[0] / errs[1]) == pytest.approx(2.0, abs=0.2)


def test_fields_without_derivatives_fall_back_to_differences():
    f = ScalarField.from_callable(lambda x: np.exp(2 * x))
    x = np.array([0.5])
    assert one(f.first(x)) == pytest.approx(2 * math.exp(1.0), rel=1e-8)
    assert one(f.second(x)) == pytest.approx(4 * math.exp(1.0), rel=1e-5)


def test_field_algebra_stays_symbolic():
    f = ScalarField.symbolic(X ** 2)
    g = (f * 3 - 1) / f
    assert g.is_symbolic
    assert one(g(np.array([2.0]))) == pytest.approx(11 / 4)
    assert one(g.first(np.array([2.0]))) == pytest.approx(2 / 8)


def test_state_interval_rejects_empty_and_boundary():
    with pytest.raises(ContractError):
        StateInterval(1.0, 1.0)
    with pytest.raises(DomainError):
        POSITIVE_HALF_LINE.require_interior([0.0])
    assert REAL_LINE.contains(-5.0)


# -- generator and residuals --------------------------------------------------------

def test_generator_on_constant_is_minus_rate():
    q = Quadruple(ScalarField.symbolic(1 - X), ScalarField.symbolic(sp.sqrt(X)),
                  ScalarField.symbolic(X), ScalarField.constant(1.0))
    assert one(apply_generator(q, ScalarField.constant(1.0), np.array([2.0]))) == pytest.approx(-2.0)


def test_generator_on_eigenfunction():
    eta = SQRT3 - 1
    phi = ScalarField.symbolic(sp.exp(-sp.Float(eta, 17) * X))
    got = one(apply_generator(cir_quad(), phi, np.array([1.0])))
    assert got == pytest.approx(-eta * math.exp(-eta), rel=1e-12)
    assert got == pytest.approx(-0.352062, abs=5e-6)


def test_generator_on_linear_function():
    q = Quadruple(ScalarField.symbolic(0.7 - 0.3 * X), ScalarField.symbolic(2 * sp.sqrt(X)),
                  ScalarField.constant(0.0), ScalarField.constant(1.0))
    assert one(apply_generator(q, ScalarField.symbolic(X), np.array([1.5]))) == pytest.approx(0.25)


def test_generator_contracts():
    f = ScalarField(lambda x: x)
    with pytest.raises(ContractError):
        apply_generator(cir_quad(), f, np.array([1.0]))
    with pytest.raises(DomainError):
        apply_generator(cir_quad(), ScalarField.constant(1.0), np.array([-1.0]))


def test_eigen_residual_examples():
    chain = cir_chain(CirParams(1, 1, 1, 1))
    grid = np.geomspace(0.01, 10, 200)
    assert eigen_residual(chain.base, chain.pair0, grid) <= 1e-9
    wrong = Eigenpair(chain.pair0.lam + 0.1, chain.pair0.phi)
    assert eigen_residual(chain.base, wrong, grid) == pytest.approx(0.1, rel=1e-2)
    with pytest.raises(ContractError):
        eigen_residual(chain.base, chain.pair0, [])


def test_three_halves_eigenpair_residual():
    chain = three_halves_chain(ThreeHalvesParams(1, 1, 1, 1))
    assert eigen_residual(chain.base, chain.pair0, chain.grid) <= 1e-9


# -- chain ------------------------------------------------------------------------------

def test_cir_chain_fields():
    chain = cir_chain(CirParams(1, 1, 1, 1))
    x = np.linspace(0.1, 5, 50)
    np.testing.assert_allclose(chain.kappa(x), 1 - SQRT3 * x, atol=1e-12)
    np.testing.assert_allclose(chain.hatted.drift(x), 1.5 - SQRT3 * x, atol=1e-12)
    np.testing.assert_allclose(chain.hatted.rate(x), SQRT3, atol=1e-12)
    np.testing.assert_allclose(chain.tilde.drift(x), 2 - SQRT3 * x, atol=1e-12)
    np.testing.assert_allclose(chain.tilde.rate(x), SQRT3, atol=1e-12)


@pytest.mark.parametrize("make", [lambda: cir_chain(CirParams(0.7, 1.3, 0.9, 0.4, 1.2)),
                                  lambda: three_halves_chain(ThreeHalvesParams(0.4, 1.5, 0.8, 0.6, 0.9))])
def test_kappa_recomputation_is_idempotent(make):
    chain = make()
    x = chain.grid
    q, phi = chain.base, chain.pair0.phi
    kappa = q.drift(x) + q.sigma(x) ** 2 * phi.first(x) / phi(x)
    np.testing.assert_allclose(chain.kappa(x), kappa, rtol=0, atol=1e-12)
    phi1 = chain.pair1.phi
    gamma = chain.hatted.drift(x) + q.sigma(x) ** 2 * phi1.first(x) / phi1(x)
    np.testing.assert_allclose(chain.gamma(x), gamma, rtol=0, atol=1e-12)


def test_eigenfunction_payoff_has_zero_hatted_payoff():
    p = CirParams(1, 1, 1, 1)
    phi = sp.exp(-sp.Float(p.eta, 17) * X)
    chain = cir_chain(p, ScalarField.symbolic(phi))
    np.testing.assert_allclose(chain.hatted.payoff(chain.grid), 0.0, atol=1e-12)


def test_build_chain_rejects_nonpositive_eigenfunction():
    chain = cir_chain(CirParams(1, 1, 1, 1))
    bad = Eigenpair(chain.pair0.lam, ScalarField.symbolic(1 - X))
    with pytest.raises(InvariantError):
        build_chain(chain.base, bad, chain.pair1, chain.pair2, grid=np.geomspace(0.1, 5, 50))


def test_build_chain_rejects_wrong_eigenvalue():
    chain = cir_chain(CirParams(1, 1, 1, 1))
    bad = Eigenpair(chain.pair1.lam + 0.5, chain.pair1.phi)
    with pytest.raises(InvariantError):
        build_chain(chain.base, chain.pair0, bad, chain.pair2)


def test_residual_grid_is_log_spaced_on_half_line():
    chain = cir_chain(CirParams(1, 1, 1, 1))
    g = residual_grid(chain.kappa, chain.base.sigma, chain.base.domain, 200)
    assert g.size == 200 and g[0] > 0
    np.testing.assert_allclose(np.diff(np.log(g)), np.log(g[1] / g[0]), rtol=1e-9)


# -- martingale criterion ---------------------------------------------------------------

def test_martingale_criterion_brownian():
    left, right = martingale_criterion(ScalarField.constant(0.0), ScalarField.constant(math.sqrt(2)),
                                       REAL_LINE, 0.0, (-10.0, 10.0))
    assert left == pytest.approx(25.0, rel=1e-8)
    assert right == pytest.approx(25.0, rel=1e-8)


def test_martingale_criterion_cir_eigen_measure_grows():
    kappa = ScalarField.symbolic(1 - SQRT3 * X)
    sigma = ScalarField.symbolic(sp.sqrt(X))
    l1, r1 = martingale_criterion(kappa, sigma, POSITIVE_HALF_LINE, 1.0, (1e-6, 50.0))
    l2, r2 = martingale_criterion(kappa, sigma, POSITIVE_HALF_LINE, 1.0, (1e-8, 100.0))
    assert l1 > 1e3 and r1 > 1e3
    assert l2 > l1 and r2 > r1


@settings(max_examples=15, deadline=None)
@given(lo=st.floats(-5.0, -0.5), hi=st.floats(0.5, 5.0), widen=st.floats(0.1, 3.0))
def test_martingale_criterion_monotone_under_widening(lo, hi, widen):
    kappa = ScalarField.symbolic(-0.5 * X)
    sigma = ScalarField.constant(1.0)
    l1, r1 = martingale_criterion(kappa, sigma, REAL_LINE, 0.0, (lo, hi))
    l2, r2 = martingale_criterion(kappa, sigma, REAL_LINE, 0.0, (lo - widen, hi + widen))
    assert 0 <= l1 <= l2 and 0 <= r1 <= r2


def test_martingale_criterion_contracts():
    with pytest.raises(ContractError):
        martingale_criterion(ScalarField.constant(0.0), ScalarField.constant(1.0), REAL_LINE, 0.0,
                             (1.0, 2.0))
