import math

import numpy as np
import pytest

from exceptions import ConvergenceError
from hamiltonian import Truncation, build_basis
from services.constrained_search import ConstrainedSearch, SearchSettings
from services.functionals import DensityPair, density_pair, fll_constrained_search, trial_state


def test_decoupled_search_is_certified(decoupled):
    target = DensityPair([0.3], [0.2])
    basis = build_basis(decoupled, Truncation(14))
    search = ConstrainedSearch(decoupled, basis, target.sigma, target.xi)
    outcome = search.solve(trial_state(target, basis))
    assert outcome.value == pytest.approx(1.0 + 0.04 - math.sqrt(0.91), abs=1e-8)
    assert outcome.violation <= 1e-8
    assert outcome.certified
    # the trial state already is the optimizer at zero coupling
    assert outcome.restarts_used == 1
    assert outcome.v[0] == pytest.approx(-0.3 / math.sqrt(0.91), abs=1e-6)
    assert outcome.j[0] == pytest.approx(-0.4, abs=1e-6)


def test_multipliers_solve_the_stationarity_equation(rabi):
    target = DensityPair([-0.2], [0.3])
    basis = build_basis(rabi, Truncation(16))
    search = ConstrainedSearch(rabi, basis, target.sigma, target.xi)
    outcome = search.solve(trial_state(target, basis), seed=3)
    assert outcome.schrodinger_residual < 1e-7
    assert density_pair(outcome.psi).distance(target) < 1e-8


def test_frozen_spin_at_the_boundary(decoupled):
    result = fll_constrained_search(decoupled, DensityPair([1.0], [0.2]), tol=1e-8)
    assert result.value == pytest.approx(1.04, abs=1e-8)
    assert math.isnan(result.multipliers.v[0])
    assert result.representing_potentials is None
    assert not result.representable
    assert result.metadata["frozen_spins"] == [0]


def test_frozen_spin_keeps_coupling_energy(rabi):
    # spin pinned up: 2(n + 1/2) + lambda x with <x> = xi gives 1 + xi^2 + lambda xi
    result = fll_constrained_search(rabi, DensityPair([1.0], [0.2]), tol=1e-8)
    assert result.value == pytest.approx(1.0 + 0.04 + 0.2, abs=1e-8)


def test_unreachable_displacement_raises(decoupled):
    settings = SearchSettings(restarts=1, max_outer=5)
    with pytest.raises(ConvergenceError) as info:
        fll_constrained_search(decoupled, DensityPair([0.0], [10.0]), tol=1e-8, cutoff=4,
                               verify_cutoff=False, settings=settings)
    assert info.value.best.violation > 1.0


def test_restarts_are_reproducible(two_spins):
    target = DensityPair([0.2, -0.4], [0.1])
    first = fll_constrained_search(two_spins, target, tol=1e-8, seed=7, verify_cutoff=False)
    second = fll_constrained_search(two_spins, target, tol=1e-8, seed=7, verify_cutoff=False)
    assert first.value == second.value
    np.testing.assert_array_equal(first.optimizer.coefficients, second.optimizer.coefficients)
