import math

import numpy as np
import pytest

from exceptions import DomainError
from hamiltonian import ModelParams
from services.adiabatic import (
    ac_consistency,
    ac_integrand,
    coupling_concavity,
    g_lambda,
    gauss_legendre_nodes,
)
from services.functionals import DensityPair, fll_constrained_search, lieb_functional


def test_composite_nodes_integrate_polynomials():
    nodes, weights = gauss_legendre_nodes(4)
    assert nodes.size == 32
    assert np.all((nodes > 0) & (nodes < 1))
    assert weights.sum() == pytest.approx(1.0, abs=1e-14)
    assert weights @ nodes ** 15 == pytest.approx(1.0 / 16.0, abs=1e-14)
    assert weights @ np.cos(nodes) == pytest.approx(math.sin(1.0), abs=1e-14)


def test_decoupled_path_has_no_correlation(decoupled):
    trace = g_lambda(decoupled, [0.3], xi=[0.2])
    assert trace.G_value == pytest.approx(0.0, abs=1e-12)
    assert trace.G_direct == pytest.approx(0.0, abs=1e-12)
    assert trace.F_reconstructed == pytest.approx(1.0 + 0.04 - math.sqrt(0.91), abs=1e-12)
    assert trace.panels == 4
    assert [entry["nodes"] for entry in trace.history] == [16, 32]


def test_integrand_vanishes_without_coupling(rabi):
    assert ac_integrand(rabi, [0.3], 0.0) == pytest.approx(0.0, abs=1e-9)
    with pytest.raises(DomainError):
        ac_integrand(rabi, [0.3], 1.5)
    with pytest.raises(DomainError):
        ac_integrand(rabi, [0.3, 0.1], 0.5)


def test_routes_agree_for_rabi():
    params = ModelParams.rabi(0.5, 1.0)
    assert ac_consistency(params, [0.3]) <= 2e-6


def test_reconstruction_matches_lieb(rabi):
    trace = g_lambda(rabi, [0.3], xi=[0.2])
    lieb = lieb_functional(rabi, DensityPair([0.3], [0.2]))
    assert trace.F_reconstructed == pytest.approx(lieb.value, abs=1e-5)
    assert trace.consistency <= 1e-5
    assert trace.monotone
    assert not trace.kinks
    assert np.max(np.abs(trace.virial_residuals)) < 1e-7
    assert trace.to_dict()["nodes"] == trace.s_nodes.size


def test_correlation_does_not_depend_on_displacement(rabi):
    plain = g_lambda(rabi, [-0.4])
    shifted = g_lambda(rabi, [-0.4], xi=[0.7])
    assert shifted.G_value == pytest.approx(plain.G_value, abs=1e-9)
    assert shifted.F_reconstructed - plain.F_reconstructed == pytest.approx(0.49 - 0.7 * 0.4, abs=1e-9)


def test_constrained_route_for_two_spins(two_spins):
    sigma = [0.4, -0.3]
    trace = g_lambda(two_spins, sigma, quad_tol=1e-5)
    search = fll_constrained_search(two_spins, DensityPair(sigma, [0.0]), tol=1e-8)
    assert trace.consistency <= 1e-4
    assert trace.F_reconstructed == pytest.approx(search.value, abs=1e-4)


def test_coupling_path_is_concave(rabi):
    residuals = coupling_concavity(rabi, DensityPair([0.2], [0.1]), [0.0, 0.5, 1.0, 1.5])
    assert residuals.size == 3
    assert np.all(residuals >= -1e-8)
    with pytest.raises(DomainError):
        coupling_concavity(rabi, DensityPair([0.2], [0.1]), [1.0])


@pytest.mark.parametrize("coupling", [0.5, 1.0])
@pytest.mark.parametrize("sigma", [0.0, 0.3, 0.6])
def test_reconstruction_over_coupling_and_magnetization(coupling, sigma):
    params = ModelParams.rabi(coupling, 1.0)
    trace = g_lambda(params, [sigma])
    search = fll_constrained_search(params, DensityPair([sigma], [0.0]), tol=1e-8)
    assert trace.F_reconstructed == pytest.approx(search.value, abs=1e-5)
    assert trace.consistency <= 1e-5


def test_reconstruction_with_two_modes():
    params = ModelParams(1, 2, [[0.7], [0.4]], [1.0])
    trace = g_lambda(params, [0.3])
    lieb = lieb_functional(params, DensityPair([0.3], [0.0, 0.0]))
    assert trace.F_reconstructed == pytest.approx(lieb.value, abs=1e-5)
    assert trace.consistency <= 1e-5
