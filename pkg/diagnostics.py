"""
Residual checks for the exact identities of the Dicke model.

Each check returns ResidualReport objects (lhs, rhs, |lhs - rhs|,
tolerance, passed). run_battery evaluates the whole set over the default
parameters and reduces the reports in declaration order.
"""

import math
from dataclasses import dataclass, field
from typing import Any, Dict, List

import numpy as np
import scipy.linalg
import scipy.optimize
from scipy.spatial.distance import pdist, squareform

from exceptions import DomainError, PreconditionError
from geometry import is_regular
from hamiltonian import ModelParams, Potentials, build_coupling, build_h
from services.functionals import (
    DensityPair,
    Ensemble,
    Multipliers,
    aufbau_index,
    density_pair,
    fll_constrained_search,
    inverse_map,
    lieb_functional,
)
from services.spectral import converge_cutoff, hellmann_feynman_gradient
from utils import gather_ordered, get_logger

logger = get_logger("diagnostics")

SOLVER_TOL = 1e-10
GROUND_STATE_TOL = 1e-6
SECOND_ORDER_SLACK = 1e-8
DENSE_PROJECTION_LIMIT = 1500


def default_tolerance(solver_tol: float = SOLVER_TOL) -> float:
    return max(1e-6, 100.0 * solver_tol)


@dataclass
class ResidualReport:
    name: str
    lhs: float
    rhs: float
    residual: float
    tolerance: float
    passed: bool
    context: Dict[str, Any] = field(default_factory=dict)

    @classmethod
    def compare(cls, name, lhs, rhs, tolerance, **context) -> "ResidualReport":
        lhs, rhs = float(lhs), float(rhs)
        residual = abs(lhs - rhs)
        return cls(name, lhs, rhs, residual, tolerance, bool(residual <= tolerance), context)

    def row(self):
        return [self.name, self.lhs, self.rhs, self.residual, self.tolerance, self.passed]

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "lhs": self.lhs,
            "rhs": self.rhs,
            "residual": self.residual,
            "tolerance": self.tolerance,
            "passed": self.passed,
            "context": dict(self.context),
        }


@dataclass
class HKScanReport:
    densities: np.ndarray
    min_distance: float
    collisions: List[Dict[str, Any]]
    skipped: List[int]
    tolerance: float
    by_point: List[Any] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.collisions

    def as_residual(self) -> ResidualReport:
        return ResidualReport(
            "hk_injectivity", self.min_distance, 10.0 * self.tolerance,
            float(len(self.collisions)), 0.0, self.passed,
            {"points": int(len(self.densities)), "skipped": list(self.skipped)})

    def to_dict(self) -> dict:
        return {
            "points": int(len(self.densities)),
            "min_distance": self.min_distance,
            "collisions": len(self.collisions),
            "collision_pairs": list(self.collisions),
            "skipped": list(self.skipped),
            "passed": self.passed,
        }


# -------------------------
# Helpers
# -------------------------

def _states(state):
    """(weights, wave functions) of a state or ensemble."""
    if isinstance(state, Ensemble):
        return state.weights, state.states
    return np.ones(1), [state]


def _gradient_moments(params: ModelParams, psi) -> Dict[str, float]:
    """||grad psi||^2, ||x psi||^2, <x . Lambda sigma_z> and <x> of one state."""
    ops = psi.basis.operators
    u = np.asarray(psi.coefficients)
    kinetic = sum(float(np.linalg.norm(D @ u) ** 2) for D in ops.derivative)
    potential = sum(float(np.linalg.norm(X @ u) ** 2) for X in ops.position)
    coupling = float(np.real(np.vdot(u, build_coupling(params, psi.basis).matrix @ u)))
    xi = np.array([float(np.real(np.vdot(u, X @ u))) for X in ops.position])
    return {"kinetic": kinetic, "potential": potential, "coupling": coupling, "xi": xi}


def _require_ground_state(params: ModelParams, pots: Potentials, psi):
    H = build_h(params, pots, psi.basis)
    u = np.asarray(psi.coefficients)
    hu = H.apply(u)
    energy = float(np.real(np.vdot(u, hu)))
    residual = float(np.linalg.norm(hu - energy * u))
    if residual > GROUND_STATE_TOL:
        raise PreconditionError(
            f"state is not an eigenstate of H(v, j): residual {residual:.3e}")
    return energy


# -------------------------
# Identities
# -------------------------

def virial_ground(params: ModelParams, pots: Potentials, psi,
                  tolerance: float = None) -> List[ResidualReport]:
    """
    Both virial theorems for an eigenstate of H(v, j):
    ||grad psi||^2 = ||x psi||^2 + <x . Lambda sigma_z>/2 + j . xi / 2 and
    <t . sigma_x> = -(2/M) Re <psi, (t . sigma_x)(x . grad) psi>.
    """
    tolerance = tolerance or default_tolerance()
    _require_ground_state(params, pots, psi)
    moments = _gradient_moments(params, psi)
    first = ResidualReport.compare(
        "virial_kinetic", moments["kinetic"],
        moments["potential"] + 0.5 * moments["coupling"] + 0.5 * float(pots.j @ moments["xi"]),
        tolerance, cutoff=psi.basis.fock_cutoff)

    ops = psi.basis.operators
    u = np.asarray(psi.coefficients)
    dilation = sum(X @ (D @ u) for X, D in zip(ops.position, ops.derivative))
    flip = sum(t_n * (S @ u) for t_n, S in zip(params.tunneling, ops.sigma_x))
    tunneling = float(np.real(np.vdot(u, flip)))
    second = ResidualReport.compare(
        "virial_tunneling", tunneling,
        -2.0 / params.n_modes * float(np.real(np.vdot(flip, dilation))),
        tolerance, cutoff=psi.basis.fock_cutoff)
    return [first, second]


def virial_ensemble(params: ModelParams, optimizer, pots: Potentials = None,
                    tolerance: float = None) -> ResidualReport:
    """||grad||^2 - ||x||^2 = <x . Lambda sigma_z>/2 + j . xi / 2 averaged over an ensemble."""
    tolerance = tolerance or default_tolerance()
    weights, states = _states(optimizer)
    lhs = rhs = 0.0
    for weight, psi in zip(weights, states):
        moments = _gradient_moments(params, psi)
        lhs += weight * (moments["kinetic"] - moments["potential"])
        rhs += weight * 0.5 * moments["coupling"]
        if pots is not None:
            rhs += weight * 0.5 * float(pots.j @ moments["xi"])
    return ResidualReport.compare("virial_ensemble", lhs, rhs, tolerance, members=len(states))


def rabi_identities(params: ModelParams, target: DensityPair, psi,
                    tolerance: float = None) -> List[ResidualReport]:
    """
    Single spin, single mode identities of the F_LL optimizer with
    a = <psi+, x psi+>, b = <psi-, x psi->:

    - ||psi'||^2 - ||x psi||^2 = lambda a - lambda xi (1 + sigma)/2 - xi^2
    - a = -b + xi
    - a = -t <psi-, psi+'> - lambda (1 - sigma^2)/4 + xi (1 + sigma)/2
    - (1 + sigma^2)/4 >= t <psi-, psi+''>   (reported as a margin)
    """
    if params.n_spins != 1 or params.n_modes != 1:
        raise PreconditionError("rabi_identities needs one spin and one mode")
    tolerance = tolerance or default_tolerance()
    achieved = density_pair(psi)
    if achieved.distance(target) > GROUND_STATE_TOL:
        raise PreconditionError(
            f"state has density {achieved.to_dict()}, expected {target.to_dict()}")

    lam = float(params.coupling[0, 0])
    t = float(params.tunneling[0])
    sigma = float(target.sigma[0])
    xi = float(target.xi[0])

    ops = psi.basis.operators
    # Fock-space blocks of the '+' slot
    position = ops.position[0][0::2, 0::2]
    derivative = ops.derivative[0][0::2, 0::2]
    plus, minus = np.real(psi.spinor(0)), np.real(psi.spinor(1))
    a = float(plus @ (position @ plus))
    b = float(minus @ (position @ minus))
    first_derivative = float(minus @ (derivative @ plus))
    second_derivative = float(minus @ (derivative @ (derivative @ plus)))

    moments = _gradient_moments(params, psi)
    context = {"sigma": sigma, "xi": xi, "lambda": lam, "t": t}
    reports = [
        ResidualReport.compare("rabi_virial", moments["kinetic"] - moments["potential"],
                               lam * a - 0.5 * lam * xi * (1.0 + sigma) - xi * xi,
                               tolerance, **context),
        ResidualReport.compare("rabi_moment_sum", a, -b + xi, tolerance, **context),
        ResidualReport.compare("rabi_moment", a,
                               -t * first_derivative - 0.25 * lam * (1.0 - sigma * sigma)
                               + 0.5 * xi * (1.0 + sigma),
                               tolerance, **context),
    ]
    bound = 0.25 * (1.0 + sigma * sigma)
    margin = bound - t * second_derivative
    reports.append(ResidualReport(
        "rabi_curvature_bound", bound, t * second_derivative, max(0.0, -margin), tolerance,
        bool(margin >= -tolerance), dict(context, margin=margin)))
    return reports


def zero_momentum(state, tolerance: float = None) -> ResidualReport:
    """max_m |<-i d_m>|; exactly zero for real states."""
    tolerance = tolerance or default_tolerance()
    weights, states = _states(state)
    ops = states[0].basis.operators
    momenta = np.zeros(len(ops.derivative))
    for weight, psi in zip(weights, states):
        u = np.asarray(psi.coefficients)
        for m, D in enumerate(ops.derivative):
            momenta[m] += weight * float(np.real(-1j * np.vdot(u, D @ u)))
    return ResidualReport.compare("zero_momentum", float(np.max(np.abs(momenta))), 0.0, tolerance,
                                  momenta=momenta.tolist())


def force_balance(params: ModelParams, pots: Potentials, density: DensityPair,
                  tolerance: float = 1e-8) -> ResidualReport:
    """||j + Lambda sigma + 2 xi|| for ground-state data of H(v, j)."""
    pots.check(params)
    balance = pots.j + params.coupling @ density.sigma + 2.0 * density.xi
    return ResidualReport.compare("force_balance", float(np.linalg.norm(balance)), 0.0, tolerance,
                                  per_mode=balance.tolist())


def hellmann_feynman(params: ModelParams, pots: Potentials, step: float = 1e-4,
                     tolerance: float = None) -> ResidualReport:
    """Finite-difference dE/d(v, j) against the ground-state (sigma, xi)."""
    tolerance = tolerance or default_tolerance()
    gradient, expectations = hellmann_feynman_gradient(params, pots, step=step)
    gap = np.abs(gradient - expectations)
    worst = int(np.argmax(gap))
    return ResidualReport("hellmann_feynman", float(gradient[worst]), float(expectations[worst]),
                          float(gap[worst]), tolerance, bool(gap[worst] <= tolerance),
                          {"component": worst, "step": step})


def legendre_roundtrip(params: ModelParams, pots: Potentials, tolerance: float = None,
                       xi_bound: float = 10.0) -> ResidualReport:
    """
    E(v, j) against min over (sigma, xi) of F_L(sigma, xi) + v.sigma + j.xi.

    The minimization starts at the zero density pair and uses the
    representing potentials as gradient: d F_L / d(sigma, xi) = -(v*, j*).
    """
    tolerance = tolerance or default_tolerance()
    energy = converge_cutoff(params, pots, SOLVER_TOL).ground_energy
    n_spins = params.n_spins
    shift = pots.as_vector()

    def objective(x):
        result = lieb_functional(params, DensityPair(x[:n_spins], x[n_spins:]))
        slope = -result.representing_potentials.as_vector()
        return result.value + shift @ x, slope + shift

    bounds = [(-1.0 + 1e-3, 1.0 - 1e-3)] * n_spins + [(-xi_bound, xi_bound)] * params.n_modes
    result = scipy.optimize.minimize(objective, np.zeros(n_spins + params.n_modes), jac=True,
                                     method="L-BFGS-B", bounds=bounds,
                                     options={"ftol": 1e-15, "gtol": 1e-10, "maxiter": 200})
    return ResidualReport.compare("legendre_roundtrip", energy, float(result.fun), tolerance,
                                  minimizer=result.x.tolist(), iterations=int(result.nit))


# -------------------------
# Scans and optimality
# -------------------------

def hk_scan(params: ModelParams, grid, tol: float = 1e-7, threads: int = 1) -> HKScanReport:
    """
    Ground-state density pairs over a grid of potentials; distinct potentials
    must give densities more than 10 tol apart. Degenerate points are skipped.
    """
    grid = list(grid)
    if len(grid) < 2:
        raise DomainError("hk_scan needs at least two potentials")

    def ground(pots):
        spectral = converge_cutoff(params, pots, SOLVER_TOL, k=2)
        if spectral.degenerate_flag:
            return None
        return density_pair(spectral.ground_state).as_vector()

    densities = gather_ordered(ground, grid, threads)
    skipped = [i for i, d in enumerate(densities) if d is None]
    for i in skipped:
        logger.warning("hk_scan: degenerate ground state at grid point %d skipped", i)
    kept = [i for i, d in enumerate(densities) if d is not None]
    table = np.array([densities[i] for i in kept])

    collisions = []
    min_distance = math.inf
    if len(kept) >= 2:
        distances = squareform(pdist(table))
        np.fill_diagonal(distances, np.inf)
        min_distance = float(distances.min())
        for a, b in zip(*np.nonzero(np.triu(distances <= 10.0 * tol, k=1))):
            sigma = table[a][:params.n_spins]
            collisions.append({
                "first": kept[a],
                "second": kept[b],
                "distance": float(distances[a, b]),
                "regular": bool(is_regular(sigma)) if params.n_spins <= 4 else None,
            })
    return HKScanReport(table, min_distance, collisions, skipped, tol, densities)


def second_order_check(params: ModelParams, multipliers: Multipliers, psi_star,
                       n_dirs: int = 200, seed: int = 0) -> ResidualReport:
    """
    <chi, H(v, j) chi> >= E ||chi||^2 for random chi orthogonal to
    psi, sigma_z^n psi and x_m psi.
    """
    if not multipliers.finite:
        raise PreconditionError("second-order check needs finite multipliers")
    basis = psi_star.basis
    ops = basis.operators
    u = np.real(np.asarray(psi_star.coefficients))
    H = build_h(params, multipliers.potentials, basis).matrix
    border = np.column_stack([u] + [S @ u for S in ops.sigma_z] + [X @ u for X in ops.position])
    q, r = np.linalg.qr(border)
    rank = int(np.sum(np.abs(np.diag(r)) > 1e-10))
    if rank < border.shape[1]:
        logger.warning("tangent projection is rank deficient (%d < %d); check skipped",
                       rank, border.shape[1])
        return ResidualReport("second_order", math.nan, multipliers.energy, 0.0,
                              SECOND_ORDER_SLACK, True, {"skipped": True, "rank": rank})

    rng = np.random.default_rng(seed)
    directions = rng.standard_normal((basis.dimension, n_dirs))
    directions -= q @ (q.T @ directions)
    directions /= np.linalg.norm(directions, axis=0)
    quotients = np.einsum("ij,ij->j", directions, H @ directions)
    lowest = float(quotients.min())
    context = {"directions": n_dirs, "seed": seed}
    if basis.dimension <= DENSE_PROJECTION_LIMIT:
        complement = scipy.linalg.null_space(border.T)
        projected = complement.T @ (H @ complement) - multipliers.energy * np.eye(complement.shape[1])
        context["projected_min_eigenvalue"] = float(scipy.linalg.eigvalsh(projected)[0])

    deficit = max(0.0, multipliers.energy - lowest)
    return ResidualReport("second_order", lowest, multipliers.energy, deficit,
                          SECOND_ORDER_SLACK, bool(deficit <= SECOND_ORDER_SLACK), context)


# -------------------------
# Battery
# -------------------------

@dataclass
class BatteryReport:
    reports: List[ResidualReport]

    @property
    def passed(self) -> bool:
        return all(report.passed for report in self.reports)

    def rows(self):
        return [report.row() for report in self.reports]

    def to_dict(self) -> dict:
        return {"passed": self.passed, "reports": [r.to_dict() for r in self.reports]}


def _battery_checks(params: ModelParams, tolerance: float, seed: int):
    rng = np.random.default_rng(seed)
    v, j = rng.uniform(-1.0, 1.0, params.n_spins), rng.uniform(-1.0, 1.0, params.n_modes)
    pots = Potentials(v, j)
    sigma = np.full(params.n_spins, 0.5) if params.n_spins == 1 else np.linspace(0.4, -0.3, params.n_spins)
    target = DensityPair(sigma, np.full(params.n_modes, 0.1))

    def ground_state_checks():
        spectral = converge_cutoff(params, pots, SOLVER_TOL)
        psi = spectral.ground_state
        return virial_ground(params, pots, psi, tolerance) + [
            force_balance(params, pots, density_pair(psi))]

    def lieb_checks():
        result = lieb_functional(params, target)
        return [zero_momentum(result.optimizer, tolerance),
                virial_ensemble(params, result.optimizer, result.representing_potentials, tolerance)]

    def rabi_checks():
        if params.n_spins != 1 or params.n_modes != 1:
            return []
        psi = inverse_map(params, target).spectral.ground_state
        return rabi_identities(params, target, psi, tolerance)

    def search_checks():
        result = fll_constrained_search(params, target, tol=1e-8, seed=seed)
        index = aufbau_index(params, result.multipliers, result.optimizer)
        bound = params.n_spins + params.n_modes
        return [
            second_order_check(params, result.multipliers, result.optimizer, seed=seed),
            ResidualReport("aufbau_index", float(index), float(bound), float(max(0, index - bound)),
                           0.0, index <= bound, {}),
            ResidualReport.compare("schrodinger", result.residuals["schrodinger"], 0.0, 1e-7),
        ]

    def hk_checks():
        axis = np.linspace(-1.0, 1.0, 5)
        grid = [Potentials(np.full(params.n_spins, a), np.full(params.n_modes, b))
                for a in axis for b in axis]
        return [hk_scan(params, grid).as_residual()]

    def response_checks():
        return [hellmann_feynman(params, pots, tolerance=tolerance),
                legendre_roundtrip(params, pots, tolerance)]

    return [ground_state_checks, lieb_checks, rabi_checks, search_checks, hk_checks,
            response_checks]


def run_battery(params: ModelParams = None, tolerance: float = None, seed: int = 0,
                threads: int = 1) -> BatteryReport:
    """All identity checks over the default (or given) model, in declaration order."""
    params = params or ModelParams.rabi(1.0, 1.0)
    tolerance = tolerance or default_tolerance()
    checks = _battery_checks(params, tolerance, seed)
    logger.info("running %d diagnostic groups", len(checks))
    results = gather_ordered(lambda check: check(), checks, threads)
    reports = [report for group in results for report in group]
    battery = BatteryReport(reports)
    for report in reports:
        if not report.passed:
            logger.warning("%s failed: residual %.3e > %.1e", report.name, report.residual,
                           report.tolerance)
    return battery
