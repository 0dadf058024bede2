import math

import numpy as np
import pytest

from exceptions import BoundaryError, DomainError, InfeasibleError, PreconditionError
from geometry import sample_regular
from hamiltonian import ModelParams, Potentials, Truncation, build_basis
from services.functionals import (
    DensityPair,
    Ensemble,
    MagnetizationSolver,
    aufbau_index,
    boundary_slopes,
    density_pair,
    ensemble_fit,
    energy,
    fll_constrained_search,
    fll_curve,
    fll_fl_gap,
    inverse_map,
    legendre_transform,
    lieb_functional,
    trial_state,
    zero_coupling_fll,
)
from services.spectral import converge_cutoff


def closed_form(sigma, xi, tunneling=1.0, modes=1):
    return modes + xi * xi - tunneling * math.sqrt(1.0 - sigma * sigma)


# -------------------------
# Density pairs and closed forms
# -------------------------

def test_density_pair_validation():
    with pytest.raises(DomainError):
        DensityPair([1.5], [0.0])
    with pytest.raises(DomainError):
        DensityPair([0.1], [math.nan])
    pair = DensityPair([0.3], [0.4])
    assert pair.distance(DensityPair([0.3], [0.0])) == pytest.approx(0.4)


def test_zero_coupling_closed_form(decoupled):
    assert zero_coupling_fll(decoupled, DensityPair([0.6], [0.5])) == pytest.approx(1.0 + 0.25 - 0.8)
    assert zero_coupling_fll(decoupled, DensityPair([1.0], [0.0])) == pytest.approx(1.0)


def test_closed_form_needs_zero_coupling(rabi):
    with pytest.raises(PreconditionError):
        zero_coupling_fll(rabi, DensityPair([0.0], [0.0]))


def test_trial_state_reproduces_target(two_spins):
    target = DensityPair([0.4, -0.7], [0.5])
    basis = build_basis(two_spins, Truncation(30))
    achieved = density_pair(trial_state(target, basis))
    assert achieved.distance(target) < 1e-10


def test_energy_returns_ground_density(rabi):
    value, density, spectral = energy(rabi, Potentials([0.2], [0.1]))
    assert value == spectral.ground_energy
    assert density.sigma.size == 1 and density.xi.size == 1


# -------------------------
# Inverse map and the Lieb functional
# -------------------------

@pytest.mark.parametrize("sigma, xi", [(0.0, 0.0), (0.6, -0.3), (-0.95, 0.8)])
def test_inverse_map_at_zero_coupling_is_analytic(decoupled, sigma, xi):
    result = inverse_map(decoupled, DensityPair([sigma], [xi]))
    assert result.potentials.v[0] == pytest.approx(-sigma / math.sqrt(1 - sigma ** 2), abs=1e-8)
    assert result.potentials.j[0] == pytest.approx(-2.0 * xi)
    assert result.misfit <= 1e-10


def test_inverse_map_reproduces_density(two_spins):
    target = DensityPair([0.4, -0.2], [0.1])
    result = inverse_map(two_spins, target)
    assert result.density.distance(target) < 1e-8
    np.testing.assert_allclose(result.potentials.j,
                               -(two_spins.coupling @ target.sigma + 2.0 * target.xi))


@pytest.mark.parametrize("sigma", [1.0, -1.0])
def test_inverse_map_rejects_the_boundary(rabi, sigma):
    with pytest.raises(BoundaryError):
        inverse_map(rabi, DensityPair([sigma], [0.0]))


@pytest.mark.parametrize("sigma, xi", [(0.0, 0.0), (0.5, 0.2), (-0.8, -0.4)])
def test_lieb_matches_closed_form_at_zero_coupling(decoupled, sigma, xi):
    result = lieb_functional(decoupled, DensityPair([sigma], [xi]))
    assert result.value == pytest.approx(closed_form(sigma, xi), abs=1e-9)
    assert result.converged and result.representable
    assert result.method == "legendre"


def test_lieb_is_even(rabi):
    plus = lieb_functional(rabi, DensityPair([0.4], [0.3])).value
    minus = lieb_functional(rabi, DensityPair([-0.4], [-0.3])).value
    assert plus == pytest.approx(minus, abs=1e-9)


def test_lieb_at_boundary_is_clamped(rabi):
    result = lieb_functional(rabi, DensityPair([1.0], [0.0]))
    assert not result.representable
    assert result.residuals["clamp_shift"] == pytest.approx(1e-6)
    assert math.isfinite(result.value)


def test_lieb_residuals_are_small(rabi):
    result = lieb_functional(rabi, DensityPair([0.3], [0.2]))
    assert result.residuals["density_misfit"] < 1e-8
    assert result.residuals["force_balance"] < 1e-8
    assert result.residuals["schrodinger"] < 1e-8
    assert result.metadata["degeneracy"] == 1


def test_legendre_transform_agrees_with_force_balance_route(rabi):
    target = DensityPair([0.3], [0.2])
    direct = legendre_transform(rabi, target)
    lieb = lieb_functional(rabi, target)
    assert direct.value == pytest.approx(lieb.value, abs=1e-7)


def test_boundary_slopes_grow(decoupled):
    sigmas, slopes = boundary_slopes(decoupled, exponents=range(3, 11))
    assert sigmas.size == 8
    assert np.all(np.diff(slopes) > 0)
    assert slopes[-1] > 10.0


def test_boundary_slopes_single_spin_only(two_spins):
    with pytest.raises(PreconditionError):
        boundary_slopes(two_spins)


# -------------------------
# Constrained search
# -------------------------

def test_fll_matches_lieb_for_rabi(rabi):
    target = DensityPair([0.3], [0.2])
    levy = fll_constrained_search(rabi, target, tol=1e-8)
    lieb = lieb_functional(rabi, target)
    assert levy.value == pytest.approx(lieb.value, abs=1e-6)
    assert levy.converged
    assert levy.metadata["certified"]
    assert levy.residuals["schrodinger"] <= 1e-7


def test_fll_at_zero_coupling_two_spins():
    params = ModelParams(2, 1, [[0.0, 0.0]], [1.0, 0.6])
    target = DensityPair([0.3, -0.5], [0.4])
    result = fll_constrained_search(params, target, tol=1e-8)
    expected = 1.0 + 0.16 - math.sqrt(1 - 0.09) - 0.6 * math.sqrt(1 - 0.25)
    assert result.value == pytest.approx(expected, abs=1e-7)
    assert density_pair(result.optimizer).distance(target) < 1e-7


def test_aufbau_index_of_rabi_optimizer(rabi):
    result = fll_constrained_search(rabi, DensityPair([0.3], [0.0]), tol=1e-8)
    assert aufbau_index(rabi, result.multipliers, result.optimizer) == 0


def test_aufbau_index_needs_finite_multipliers(decoupled):
    result = fll_constrained_search(decoupled, DensityPair([1.0], [0.2]), tol=1e-8)
    with pytest.raises(PreconditionError):
        aufbau_index(decoupled, result.multipliers, result.optimizer)


def test_gap_between_functionals_vanishes(rabi):
    assert abs(fll_fl_gap(rabi, DensityPair([-0.4], [0.1]))) <= 1e-6


# -------------------------
# Ensembles
# -------------------------

def _degenerate_spectrum():
    # the second spin has no tunneling, so the ground space is spanned by its two sigma_z states
    params = ModelParams(2, 1, [[0.0, 0.0]], [1.0, 0.0])
    return converge_cutoff(params, Potentials.zeros(params), tol=1e-12, k=3)


def test_ensemble_fit_on_degenerate_ground_space():
    spectral = _degenerate_spectrum()
    ensemble = ensemble_fit(spectral, DensityPair([0.0, 0.4], [0.0]))
    np.testing.assert_allclose(ensemble.weights, [0.7, 0.3], atol=1e-8)
    assert density_pair(ensemble).distance(DensityPair([0.0, 0.4], [0.0])) < 1e-8


def test_ensemble_fit_rejects_unreachable_target():
    spectral = _degenerate_spectrum()
    with pytest.raises(InfeasibleError) as info:
        ensemble_fit(spectral, DensityPair([0.5, 0.0], [0.0]))
    assert info.value.distance > 0.1


def test_ensemble_validation(rabi):
    basis = build_basis(rabi, Truncation(3))
    psi = trial_state(DensityPair([0.0], [0.0]), basis)
    with pytest.raises(DomainError):
        Ensemble([0.5, 0.5], [psi, psi])
    with pytest.raises(DomainError):
        Ensemble([0.7], [psi])


# -------------------------
# Curves
# -------------------------

def test_zero_coupling_curve_is_closed_form(decoupled):
    sigmas = np.linspace(-0.9, 0.9, 7)
    rows = fll_curve(decoupled, [0.0], sigmas)
    values = np.array([row["F"] for row in rows])
    np.testing.assert_allclose(values, 1.0 - np.sqrt(1.0 - sigmas ** 2), atol=1e-9)
    np.testing.assert_allclose(values, values[::-1], atol=1e-9)
    assert np.all(np.diff(values, 2) > 0)


def test_curve_rows_follow_lambda_then_sigma(rabi):
    rows = fll_curve(rabi, [0.0, 1.0], [-0.5, 0.5], threads=2)
    assert [(row["lambda"], float(row["sigma"][0])) for row in rows] == [
        (0.0, -0.5), (0.0, 0.5), (1.0, -0.5), (1.0, 0.5)]
    assert all(row["converged"] for row in rows)
    # coupling lowers F below the decoupled value
    assert rows[2]["F"] < rows[0]["F"]


# -------------------------
# Exact properties on random targets
# -------------------------

def _random_pair(rng, params, bound=0.6):
    return DensityPair(rng.uniform(-bound, bound, params.n_spins),
                       rng.uniform(-0.4, 0.4, params.n_modes))


def _shifted(pair, zeta):
    return DensityPair(pair.sigma, pair.xi + zeta)


def _displacement_gain(params, pair, zeta):
    return float(2.0 * zeta @ pair.xi + zeta @ (params.coupling @ pair.sigma) + zeta @ zeta)


@pytest.mark.parametrize("seed", [0, 1])
def test_lieb_displacement_rule(two_spins, seed):
    rng = np.random.default_rng(seed)
    pair = _random_pair(rng, two_spins)
    zeta = rng.uniform(-0.5, 0.5, two_spins.n_modes)
    difference = (lieb_functional(two_spins, _shifted(pair, zeta)).value
                  - lieb_functional(two_spins, pair).value)
    assert difference == pytest.approx(_displacement_gain(two_spins, pair, zeta), abs=1e-8)


@pytest.mark.parametrize("seed", [0, 1])
def test_levy_lieb_displacement_rule(two_spins, seed):
    rng = np.random.default_rng(seed)
    pair = _random_pair(rng, two_spins)
    zeta = rng.uniform(-0.5, 0.5, two_spins.n_modes)
    difference = (fll_constrained_search(two_spins, _shifted(pair, zeta), tol=1e-8).value
                  - fll_constrained_search(two_spins, pair, tol=1e-8).value)
    assert difference == pytest.approx(_displacement_gain(two_spins, pair, zeta), abs=1e-6)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_lieb_is_midpoint_convex(rabi, seed):
    rng = np.random.default_rng(seed)
    a, b = _random_pair(rng, rabi, 0.9), _random_pair(rng, rabi, 0.9)
    middle = DensityPair(0.5 * (a.sigma + b.sigma), 0.5 * (a.xi + b.xi))
    mean = 0.5 * (lieb_functional(rabi, a).value + lieb_functional(rabi, b).value)
    assert lieb_functional(rabi, middle).value <= mean + 1e-9


def test_lieb_is_midpoint_convex_for_two_spins(two_spins):
    rng = np.random.default_rng(7)
    a, b = _random_pair(rng, two_spins), _random_pair(rng, two_spins)
    middle = DensityPair(0.5 * (a.sigma + b.sigma), 0.5 * (a.xi + b.xi))
    mean = 0.5 * (lieb_functional(two_spins, a).value + lieb_functional(two_spins, b).value)
    assert lieb_functional(two_spins, middle).value <= mean + 1e-9


def test_levy_lieb_sign_flip_for_rabi(rabi):
    plus = fll_constrained_search(rabi, DensityPair([0.45], [0.3]), tol=1e-8).value
    minus = fll_constrained_search(rabi, DensityPair([-0.45], [-0.3]), tol=1e-8).value
    assert plus == pytest.approx(minus, abs=1e-8)


def test_levy_lieb_sign_flip_for_two_spins(two_spins):
    pair = _random_pair(np.random.default_rng(3), two_spins)
    flipped = DensityPair(-pair.sigma, -pair.xi)
    plus = fll_constrained_search(two_spins, pair, tol=1e-8).value
    minus = fll_constrained_search(two_spins, flipped, tol=1e-8).value
    assert plus == pytest.approx(minus, abs=1e-7)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_levy_lieb_equals_lieb_on_regular_targets(two_spins, seed):
    rng = np.random.default_rng(seed)
    sigma = sample_regular(2, rng) * 0.8
    target = DensityPair(sigma, rng.uniform(-0.4, 0.4, 1))
    levy = fll_constrained_search(two_spins, target, tol=1e-8, seed=seed)
    lieb = lieb_functional(two_spins, target)
    assert levy.value == pytest.approx(lieb.value, abs=1e-6)


# -------------------------
# Two modes
# -------------------------

def test_levy_lieb_at_zero_coupling_with_two_modes():
    params = ModelParams(1, 2, [[0.0], [0.0]], [1.0])
    target = DensityPair([0.5], [0.3, -0.2])
    result = fll_constrained_search(params, target, tol=1e-8)
    expected = closed_form(0.5, 0.0, modes=2) + 0.09 + 0.04
    assert result.value == pytest.approx(expected, abs=1e-7)


def test_lieb_at_zero_coupling_three_spins_two_modes():
    params = ModelParams(3, 2, np.zeros((2, 3)), [1.0, 0.8, 0.5])
    target = DensityPair([0.2, -0.6, 0.4], [0.1, 0.05])
    result = lieb_functional(params, target)
    assert result.value == pytest.approx(zero_coupling_fll(params, target), abs=1e-9)


def test_functionals_agree_with_two_modes():
    params = ModelParams(1, 2, [[0.7], [0.4]], [1.0])
    target = DensityPair([0.35], [0.1, -0.15])
    levy = fll_constrained_search(params, target, tol=1e-8)
    lieb = lieb_functional(params, target)
    assert levy.value == pytest.approx(lieb.value, abs=1e-6)


# -------------------------
# Curves and boundary behaviour over the coupling range
# -------------------------

def test_boundary_slopes_grow_for_rabi():
    sigmas, slopes = boundary_slopes(ModelParams.rabi(1.0, 1.0), exponents=range(3, 12))
    assert sigmas.size == 9
    assert np.all(np.diff(slopes) > 0)
    assert slopes[-1] > 30.0


def test_curves_are_even_and_convex(rabi):
    lambdas = [0.0, 0.5, 1.0, 2.0]
    sigmas = np.linspace(-0.99, 0.99, 41)
    rows = fll_curve(rabi, lambdas, sigmas, threads=4)
    for index, lam in enumerate(lambdas):
        values = np.array([row["F"] for row in rows[41 * index:41 * (index + 1)]])
        assert all(row["lambda"] == lam for row in rows[41 * index:41 * (index + 1)])
        np.testing.assert_allclose(values, values[::-1], atol=1e-8)
        assert np.all(np.diff(values, 2) >= -1e-9), lam


def test_magnetization_solver_newton_for_two_spins(two_spins):
    target = DensityPair([0.4, -0.2], [0.1])
    j = -(two_spins.coupling @ target.sigma + 2.0 * target.xi)
    solver = MagnetizationSolver(two_spins, build_basis(two_spins, Truncation(20)), target.sigma, j)
    jacobian = solver._jacobian(np.zeros(2))
    # the magnetization of each spin falls as its own potential rises
    assert np.all(np.diag(jacobian) < 0)
    start = -two_spins.tunneling * target.sigma / np.sqrt(1.0 - target.sigma ** 2)
    v, method = solver.solve(start, 1e-10)
    assert method == "newton"
    assert np.max(np.abs(solver.residual(v))) <= 1e-10
