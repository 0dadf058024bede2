"""
Density Functionals Service

Ground-state energy E(v, j), the potential <-> density inverse map, and the
two universal functionals of the Dicke model:

- Lieb functional F_L: Legendre transform of E,
      F_L(sigma, xi) = sup_{v,j} E(v, j) - v.sigma - j.xi
  evaluated at the representing potentials from inverse_map (the photon
  potential is fixed analytically by force balance j = -(Lambda sigma + 2 xi))
- Levy-Lieb functional F_LL: constrained search over pure states
  (services/constrained_search.py)

plus the zero-coupling closed form, the trial state that proves
N-representability, ensemble fitting on degenerate ground spaces and the
aufbau index of a constrained-search optimizer.
"""

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.optimize

from exceptions import (
    AufbauError,
    BoundaryError,
    ConvergenceError,
    DomainError,
    IdentificationError,
    InfeasibleError,
    PreconditionError,
    SizingError,
)
from hamiltonian import (
    DEFAULT_DIMENSION_CAP,
    ModelParams,
    Potentials,
    TruncatedBasis,
    Truncation,
    WaveFunction,
    build_basis,
    build_h,
)
from services.constrained_search import ConstrainedSearch, SearchSettings
from services.spectral import (
    DEFAULT_START_CUTOFF,
    SpectralResult,
    converge_cutoff,
    default_degeneracy_tol,
    eigensolve,
    ground_degeneracy,
    next_cutoff,
)
from utils import gather_ordered, get_logger

logger = get_logger("functionals")

EPSILON_BOUNDARY = 1e-6
DENSITY_TOL = 1e-12
TRIAL_TAIL_TOL = 1e-8
CUTOFF_TOL = 1e-12
OVERLAP_THRESHOLD = 0.99
MAX_CUTOFF_ROUNDS = 6
MAX_BRACKET_STEPS = 60
MAX_NEWTON_STEPS = 60


# ==============================================================================
# Types
# ==============================================================================

@dataclass(frozen=True, eq=False)
class DensityPair:
    """Magnetization sigma in [-1, 1]^N and displacement xi in R^M."""
    sigma: np.ndarray
    xi: np.ndarray

    def __post_init__(self):
        sigma = np.array(self.sigma, dtype=float).reshape(-1)
        xi = np.array(self.xi, dtype=float).reshape(-1)
        if not np.all(np.isfinite(sigma)) or not np.all(np.isfinite(xi)):
            raise DomainError("density pair must be finite")
        if np.any(np.abs(sigma) > 1.0 + DENSITY_TOL):
            raise DomainError(f"magnetization {sigma.tolist()} outside [-1, 1]^N")
        sigma.setflags(write=False)
        xi.setflags(write=False)
        object.__setattr__(self, "sigma", sigma)
        object.__setattr__(self, "xi", xi)

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.sigma, self.xi])

    def distance(self, other: "DensityPair") -> float:
        return float(np.linalg.norm(self.as_vector() - other.as_vector()))

    def to_dict(self) -> dict:
        return {"sigma": self.sigma.tolist(), "xi": self.xi.tolist()}


@dataclass(frozen=True, eq=False)
class Multipliers:
    """Lagrange multipliers (E, v, j); v_n is nan for spins frozen at the boundary."""
    energy: float
    v: np.ndarray
    j: np.ndarray

    @property
    def finite(self) -> bool:
        return bool(np.all(np.isfinite(self.v)) and np.all(np.isfinite(self.j)))

    @property
    def potentials(self) -> Potentials:
        return Potentials(self.v, self.j)

    def to_dict(self) -> dict:
        return {"energy": self.energy, "v": self.v.tolist(), "j": self.j.tolist()}


@dataclass(eq=False)
class Ensemble:
    """Convex mixture of orthonormal states."""
    weights: np.ndarray
    states: list

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        if len(self.weights) != len(self.states) or not self.states:
            raise DomainError("ensemble needs one weight per state")
        if np.any(self.weights < 0.0) or abs(self.weights.sum() - 1.0) > 1e-12:
            raise DomainError("ensemble weights must be nonnegative and sum to 1")
        for a in range(len(self.states)):
            for b in range(a + 1, len(self.states)):
                overlap = abs(np.vdot(self.states[a].coefficients, self.states[b].coefficients))
                if overlap > 1e-10:
                    raise DomainError(f"ensemble states {a} and {b} overlap by {overlap:.2e}")

    @property
    def basis(self) -> TruncatedBasis:
        return self.states[0].basis

    def expectation(self, op):
        return sum(w * state.expectation(op) for w, state in zip(self.weights, self.states))

    def to_dict(self) -> dict:
        return {"weights": self.weights.tolist(), "cutoff": self.basis.fock_cutoff}


@dataclass(eq=False)
class FunctionalResult:
    """Value of F_L or F_LL with its representing data and convergence record."""
    value: float
    representing_potentials: Potentials = None
    multipliers: Multipliers = None
    optimizer: object = None
    converged: bool = False
    residuals: dict = field(default_factory=dict)
    cutoff_used: int = 0
    representable: bool = True
    method: str = ""
    metadata: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "value": self.value,
            "method": self.method,
            "converged": self.converged,
            "representable": self.representable,
            "cutoff_used": self.cutoff_used,
            "potentials": self.representing_potentials.to_dict() if self.representing_potentials else None,
            "multipliers": self.multipliers.to_dict() if self.multipliers else None,
            "residuals": dict(self.residuals),
            "metadata": dict(self.metadata),
        }


@dataclass(eq=False)
class InverseResult:
    """Representing potentials of a density pair and the ground state they produce."""
    potentials: Potentials
    multipliers: Multipliers
    spectral: SpectralResult
    density: DensityPair
    misfit: float
    iterations: int
    method: str


# ==============================================================================
# Densities, closed forms, trial states
# ==============================================================================

def _check_target(params: ModelParams, target: DensityPair):
    if target.sigma.size != params.n_spins or target.xi.size != params.n_modes:
        raise DomainError(
            f"density pair has shape ({target.sigma.size}, {target.xi.size}), "
            f"model needs ({params.n_spins}, {params.n_modes})")


def density_pair(state) -> DensityPair:
    """(<sigma_z^n>, <x_m>) of a wave function or ensemble."""
    basis = state.basis
    ops = basis.operators
    sigma = [np.real(state.expectation(op)) for op in ops.sigma_z]
    xi = [np.real(state.expectation(op)) for op in ops.position]
    return DensityPair(np.clip(sigma, -1.0, 1.0), xi)


def zero_coupling_fll(params: ModelParams, target: DensityPair) -> float:
    """M + |xi|^2 - sum_n t_n sqrt(1 - sigma_n^2), valid for Lambda = 0."""
    if not params.is_decoupled:
        raise PreconditionError("zero_coupling_fll requires a vanishing coupling matrix")
    _check_target(params, target)
    roots = np.sqrt(np.clip(1.0 - target.sigma ** 2, 0.0, None))
    return float(params.n_modes + target.xi @ target.xi - params.tunneling @ roots)


def coherent_amplitudes(alpha: float, cutoff: int) -> np.ndarray:
    """Fock amplitudes e^{-alpha^2/2} alpha^n / sqrt(n!) of a real coherent state."""
    amplitudes = np.empty(cutoff)
    amplitudes[0] = math.exp(-0.5 * alpha * alpha)
    for n in range(1, cutoff):
        amplitudes[n] = amplitudes[n - 1] * alpha / math.sqrt(n)
    return amplitudes


def trial_state(target: DensityPair, basis: TruncatedBasis) -> WaveFunction:
    """
    Displaced Gaussian times a product spin state with the target densities.

    The Gaussian centred at xi_m is the coherent state with alpha = xi_m / sqrt(2);
    spin n carries amplitudes (sqrt((1+sigma_n)/2), sqrt((1-sigma_n)/2)).
    A warning is logged when truncation drops more than 1e-8 of the norm.
    """
    if target.sigma.size != basis.n_spins or target.xi.size != basis.n_modes:
        raise DomainError("density pair does not match the basis")
    photon = np.ones(1)
    for xi_m in target.xi:
        photon = np.kron(photon, coherent_amplitudes(xi_m / math.sqrt(2.0), basis.fock_cutoff))
    spin = np.ones(1)
    for sigma_n in target.sigma:
        up = math.sqrt(max(0.0, 0.5 * (1.0 + sigma_n)))
        down = math.sqrt(max(0.0, 0.5 * (1.0 - sigma_n)))
        spin = np.kron(spin, np.array([up, down]))
    vector = np.kron(photon, spin)
    tail = 1.0 - float(vector @ vector)
    if tail > TRIAL_TAIL_TOL:
        logger.warning("trial state loses %.2e of its norm at K=%d; raise the cutoff",
                       tail, basis.fock_cutoff)
    return WaveFunction.from_vector(vector, basis)


def default_cutoff(params: ModelParams, target: DensityPair = None) -> int:
    """Starting cutoff that keeps displaced Gaussians well inside the basis."""
    shift = 0.5 * float(np.max(np.abs(params.coupling)))
    if target is not None and target.xi.size:
        shift += float(np.max(np.abs(target.xi)))
    return max(DEFAULT_START_CUTOFF, int(math.ceil(DEFAULT_START_CUTOFF + 4.0 * shift * shift)))


def _spectrum_size(params: ModelParams) -> int:
    return 2 if params.n_spins == 1 else params.n_spins + params.n_modes + 2


# ==============================================================================
# Energy and the inverse map
# ==============================================================================

def energy(params: ModelParams, pots: Potentials, tol: float = 1e-10,
           cutoff: int = DEFAULT_START_CUTOFF, k: int = 2):
    """
    Converged ground energy E(v, j) and its ground-state density pair.

    Returns:
        (E, DensityPair, SpectralResult)
    """
    spectral = converge_cutoff(params, pots, tol, k=k, start_cutoff=cutoff)
    return spectral.ground_energy, density_pair(spectral.ground_state), spectral


class MagnetizationSolver:
    """
    Solves <sigma_z>_ground(v, j) = sigma for v at fixed j on one basis.

    N = 1 uses a bracketed root search (sigma(v) is non-increasing because
    E is concave in v); N > 1 uses damped Newton with a finite-difference
    Jacobian and falls back to BFGS ascent on the concave dual
    v -> E(v, j) - v.sigma.
    """

    def __init__(self, params: ModelParams, basis: TruncatedBasis, sigma, j):
        self.params = params
        self.basis = basis
        self.sigma = np.asarray(sigma, dtype=float)
        self.j = np.asarray(j, dtype=float)
        self.evaluations = 0

    def ground(self, v):
        self.evaluations += 1
        spectral = eigensolve(build_h(self.params, Potentials(v, self.j), self.basis), 1)
        psi = spectral.ground_state
        sigma = np.array([psi.expectation(op) for op in self.basis.operators.sigma_z])
        return spectral.ground_energy, sigma

    def residual(self, v) -> np.ndarray:
        return self.ground(v)[1] - self.sigma

    def solve(self, v0, tol: float):
        if self.params.n_spins == 1:
            return self._bracketed(float(v0[0]), tol), "bisection"
        return self._newton(np.asarray(v0, dtype=float), tol)

    def _bracketed(self, v0: float, tol: float) -> np.ndarray:
        def f(v):
            return float(self.residual([v])[0])

        value = f(v0)
        if abs(value) <= 0.01 * tol:
            return np.array([v0])
        step = 1.0 + abs(v0)
        # sigma(v) decreases with v: a positive residual needs a larger v
        direction = 1.0 if value > 0 else -1.0
        near, far = v0, v0 + direction * step
        far_value = f(far)
        for _ in range(MAX_BRACKET_STEPS):
            if far_value == 0.0 or np.sign(far_value) != np.sign(value):
                break
            near = far
            step *= 2.0
            far = near + direction * step
            far_value = f(far)
        else:
            raise ConvergenceError(f"could not bracket v for sigma={self.sigma.tolist()}")
        if far_value == 0.0:
            return np.array([far])
        lo, hi = sorted((near, far))
        root = scipy.optimize.brentq(f, lo, hi, xtol=1e-14, rtol=4.0 * np.finfo(float).eps,
                                     maxiter=500)
        return np.array([root])

    def _jacobian(self, v):
        size = v.size
        jac = np.empty((size, size))
        for n in range(size):
            h = 1e-5 * (1.0 + abs(v[n]))
            forward, backward = v.copy(), v.copy()
            forward[n] += h
            backward[n] -= h
            jac[:, n] = (self.residual(forward) - self.residual(backward)) / (2.0 * h)
        return jac

    def _newton(self, v, tol):
        r = self.residual(v)
        norm = float(np.max(np.abs(r)))
        for _ in range(MAX_NEWTON_STEPS):
            if norm <= tol:
                return v, "newton"
            step = -np.linalg.lstsq(self._jacobian(v), r, rcond=None)[0]
            alpha = 1.0
            for _ in range(30):
                trial = v + alpha * step
                trial_r = self.residual(trial)
                trial_norm = float(np.max(np.abs(trial_r)))
                if trial_norm < (1.0 - 1e-4 * alpha) * norm:
                    break
                alpha *= 0.5
            else:
                break
            v, r, norm = trial, trial_r, trial_norm
        if norm <= tol:
            return v, "newton"

        logger.info("Newton stalled at residual %.2e; switching to dual ascent", norm)

        def negative_dual(x):
            energy_value, sigma = self.ground(x)
            return -(energy_value - x @ self.sigma), -(sigma - self.sigma)

        result = scipy.optimize.minimize(negative_dual, v, jac=True, method="BFGS",
                                         options={"gtol": tol, "maxiter": 500})
        return result.x, "dual-ascent"


def inverse_map(params: ModelParams, target: DensityPair, tol: float = 1e-10, *,
                epsilon: float = EPSILON_BOUNDARY, cutoff: int = None,
                cutoff_tol: float = CUTOFF_TOL,
                dimension_cap: int = DEFAULT_DIMENSION_CAP) -> InverseResult:
    """
    Potentials (v, j) whose ground state has the density pair `target`.

    j = -(Lambda sigma + 2 xi) by force balance; v is solved on a fixed basis,
    then re-checked at a larger cutoff and re-solved there if the
    magnetization moved by more than tol.

    Raises:
        BoundaryError: some |sigma_n| > 1 - epsilon (not v-representable).
        ConvergenceError: the magnetization misfit stays above tol; .best
            holds the last InverseResult.
    """
    _check_target(params, target)
    sigma, xi = target.sigma, target.xi
    if np.any(np.abs(sigma) > 1.0 - epsilon):
        raise BoundaryError(
            f"magnetization {sigma.tolist()} within {epsilon:g} of the cube boundary "
            "is not v-representable")

    j = -(params.coupling @ sigma + 2.0 * xi)
    v = -params.tunneling * sigma / np.sqrt(1.0 - sigma ** 2)
    k = _spectrum_size(params)
    start = cutoff or default_cutoff(params, target)
    cutoff_now = converge_cutoff(params, Potentials(v, j), cutoff_tol, k=1,
                                 start_cutoff=start, dimension_cap=dimension_cap).cutoff_used

    result = None
    iterations = 0
    for _ in range(MAX_CUTOFF_ROUNDS):
        basis = build_basis(params, Truncation(cutoff_now), dimension_cap)
        solver = MagnetizationSolver(params, basis, sigma, j)
        v, method = solver.solve(v, tol)
        iterations += solver.evaluations

        pots = Potentials(v, j)
        try:
            check = converge_cutoff(params, pots, cutoff_tol, k=k, start_cutoff=cutoff_now,
                                    dimension_cap=dimension_cap)
        except ConvergenceError as err:
            check = err.best
        density = density_pair(check.ground_state)
        misfit = float(np.max(np.abs(density.sigma - sigma)))
        multipliers = Multipliers(check.ground_energy, pots.v, pots.j)
        result = InverseResult(pots, multipliers, check, density, misfit, iterations, method)
        if misfit <= tol:
            return result
        if check.cutoff_used == cutoff_now:
            break
        cutoff_now = check.cutoff_used

    raise ConvergenceError(
        f"inverse map misfit {result.misfit:.3e} above {tol:g} for sigma={sigma.tolist()}",
        best=result)


# ==============================================================================
# Lieb functional
# ==============================================================================

def lieb_functional(params: ModelParams, target: DensityPair, tol: float = 1e-10, *,
                    epsilon: float = EPSILON_BOUNDARY, cutoff: int = None,
                    cutoff_tol: float = CUTOFF_TOL) -> FunctionalResult:
    """
    F_L(sigma, xi) = E(v*, j*) - v*.sigma - j*.xi at the representing potentials.

    Boundary magnetizations are clamped to |sigma_n| = 1 - epsilon; the
    result then carries the limiting value with representable=False.
    A degenerate ground space is resolved into an Ensemble by ensemble_fit.
    """
    _check_target(params, target)
    clamped = np.clip(target.sigma, -1.0 + epsilon, 1.0 - epsilon)
    representable = bool(np.array_equal(clamped, target.sigma))
    work = DensityPair(clamped, target.xi) if not representable else target
    if not representable:
        logger.warning("sigma=%s clamped to the representable interior", target.sigma.tolist())

    try:
        inverse = inverse_map(params, work, tol, epsilon=epsilon, cutoff=cutoff,
                              cutoff_tol=cutoff_tol)
        converged = True
    except ConvergenceError as err:
        if err.best is None:
            raise
        inverse = err.best
        converged = False

    pots = inverse.potentials
    spectral = inverse.spectral
    value = spectral.ground_energy - pots.v @ work.sigma - pots.j @ work.xi

    degeneracy = ground_degeneracy(spectral) if len(spectral.eigenvalues) >= 2 else 1
    if degeneracy >= 2:
        try:
            optimizer = ensemble_fit(spectral, work, tol=max(tol, 1e-8))
        except InfeasibleError as err:
            logger.warning("ensemble fit failed: %s", err)
            optimizer = spectral.ground_state
            converged = False
    else:
        optimizer = spectral.ground_state

    achieved = density_pair(optimizer)
    balance = pots.j + params.coupling @ achieved.sigma + 2.0 * achieved.xi
    residuals = {
        "density_misfit": float(achieved.distance(work)),
        "force_balance": float(np.linalg.norm(balance)),
        "schrodinger": spectral.residual,
        "clamp_shift": float(np.max(np.abs(target.sigma - clamped))),
    }
    return FunctionalResult(
        value=float(value),
        representing_potentials=pots,
        multipliers=inverse.multipliers,
        optimizer=optimizer,
        converged=converged,
        residuals=residuals,
        cutoff_used=spectral.cutoff_used,
        representable=representable,
        method="legendre",
        metadata={"degeneracy": degeneracy, "gap": spectral.gap, "inverse_method": inverse.method,
                  "eigensolves": inverse.iterations},
    )


def legendre_transform(params: ModelParams, target: DensityPair, tol: float = 1e-9, *,
                       cutoff: int = None) -> FunctionalResult:
    """
    F_L by direct BFGS maximization of E(v, j) - v.sigma - j.xi over (v, j).

    Independent of the force-balance elimination; used to cross-check
    lieb_functional. The cutoff is converged at the starting potentials and
    then held fixed.
    """
    _check_target(params, target)
    sigma = np.clip(target.sigma, -1.0 + EPSILON_BOUNDARY, 1.0 - EPSILON_BOUNDARY)
    xi = target.xi
    start = np.concatenate([-params.tunneling * sigma / np.sqrt(1.0 - sigma ** 2),
                            -(params.coupling @ sigma + 2.0 * xi)])
    n_spins = params.n_spins
    spectral = converge_cutoff(params, Potentials(start[:n_spins], start[n_spins:]), CUTOFF_TOL,
                               start_cutoff=cutoff or default_cutoff(params, target))
    basis = spectral.basis
    ops = basis.operators
    goal = np.concatenate([sigma, xi])

    def negative_dual(x):
        result = eigensolve(build_h(params, Potentials(x[:n_spins], x[n_spins:]), basis), 1)
        psi = result.ground_state
        density = np.array([psi.expectation(op) for op in ops.sigma_z + ops.position])
        return -(result.ground_energy - x @ goal), -(density - goal)

    result = scipy.optimize.minimize(negative_dual, start, jac=True, method="BFGS",
                                     options={"gtol": tol, "maxiter": 1000})
    pots = Potentials(result.x[:n_spins], result.x[n_spins:])
    return FunctionalResult(
        value=float(-result.fun),
        representing_potentials=pots,
        converged=bool(result.success),
        residuals={"gradient": float(np.max(np.abs(result.jac)))},
        cutoff_used=basis.fock_cutoff,
        method="dual-bfgs",
    )


# ==============================================================================
# Ensembles
# ==============================================================================

def _mixed_fit(blocks, goal, dimension):
    """Density matrix nearest to I/d with the target expectations (no positivity)."""
    rows = np.array([block.reshape(-1) for block in blocks] + [np.eye(dimension).reshape(-1)])
    rhs = np.append(goal, 1.0)
    base = np.eye(dimension).reshape(-1) / dimension
    delta = np.linalg.lstsq(rows, rhs - rows @ base, rcond=None)[0]
    rho = (base + delta).reshape(dimension, dimension)
    rho = 0.5 * (rho + rho.T)
    misfit = float(np.linalg.norm(rows[:-1] @ rho.reshape(-1) - goal))
    return rho, misfit


def _cholesky_fit(blocks, goal, dimension, seed=0):
    """Positive density matrix L L^T / tr(L L^T) minimizing the expectation misfit."""
    def objective(flat):
        lower = flat.reshape(dimension, dimension)
        gram = lower @ lower.T
        trace = np.trace(gram)
        rho = gram / trace
        misfit = np.array([np.sum(block * rho) for block in blocks]) - goal
        outer = sum(2.0 * r * block for r, block in zip(misfit, blocks))
        d_gram = (outer - np.sum(outer * rho) * np.eye(dimension)) / trace
        return float(misfit @ misfit), (2.0 * d_gram @ lower).reshape(-1)

    rng = np.random.default_rng(seed)
    starts = [np.eye(dimension)] + [rng.standard_normal((dimension, dimension)) for _ in range(4)]
    best = None
    for start in starts:
        result = scipy.optimize.minimize(objective, start.reshape(-1), jac=True, method="BFGS",
                                         options={"gtol": 1e-14, "maxiter": 2000})
        if best is None or result.fun < best.fun:
            best = result
    lower = best.x.reshape(dimension, dimension)
    gram = lower @ lower.T
    return gram / np.trace(gram), math.sqrt(max(best.fun, 0.0))


def ensemble_fit(spectral: SpectralResult, target: DensityPair, tol: float = 1e-8) -> Ensemble:
    """
    Mixture of the degenerate ground states with density pair `target`.

    Among exact fits the one closest to the maximally mixed state is taken;
    weights come out in descending order.

    Raises:
        InfeasibleError: the target lies outside the pairs reachable from the
            ground space (distance attached).
    """
    degeneracy = ground_degeneracy(spectral) if len(spectral.eigenvalues) >= 2 else 1
    states = spectral.eigenvectors[:degeneracy]
    if degeneracy == 1:
        return Ensemble(np.ones(1), states)

    basis = states[0].basis
    ops = basis.operators
    frame = np.column_stack([np.real(state.coefficients) for state in states])
    blocks = []
    for op in ops.sigma_z + ops.position:
        block = frame.T @ (op @ frame)
        blocks.append(0.5 * (block + block.T))
    goal = target.as_vector()

    rho, misfit = _mixed_fit(blocks, goal, degeneracy)
    if misfit > tol or np.min(np.linalg.eigvalsh(rho)) < -tol:
        rho, misfit = _cholesky_fit(blocks, goal, degeneracy)
    if misfit > tol:
        raise InfeasibleError(
            f"target {target.to_dict()} is {misfit:.3e} away from the reachable ensembles",
            distance=misfit)

    weights, rotation = np.linalg.eigh(rho)
    order = np.argsort(-weights, kind="stable")
    weights = np.clip(weights[order], 0.0, None)
    rotation = rotation[:, order]
    keep = weights > 1e-15
    weights = weights[keep] / weights[keep].sum()
    mixed = [WaveFunction.from_vector(frame @ rotation[:, i], basis) for i in np.flatnonzero(keep)]
    return Ensemble(weights, mixed)


# ==============================================================================
# Levy-Lieb functional
# ==============================================================================

def _search_at(params, basis, target, tol, seed, settings, warm_start):
    search = ConstrainedSearch(params, basis, target.sigma, target.xi, settings)
    outcome = search.solve(trial_state(target, basis), seed=seed, warm_start=warm_start, tol=tol)
    return search, outcome


def fll_constrained_search(params: ModelParams, target: DensityPair, tol: float = 1e-8,
                           seed: int = 0, *, cutoff: int = None, verify_cutoff: bool = None,
                           settings: SearchSettings = None, warm_start: WaveFunction = None,
                           dimension_cap: int = DEFAULT_DIMENSION_CAP) -> FunctionalResult:
    """
    F_LL(sigma, xi) = min <psi, H0 psi> over real unit psi with the target densities.

    With verify_cutoff (default: tol <= 1e-8) the search is repeated at
    ceil(1.5 K), warm-started from the previous optimizer, until the value
    moves by less than tol.

    Raises:
        ConvergenceError: no start satisfied the constraints within tol.
    """
    _check_target(params, target)
    settings = settings or SearchSettings(outer_tol=min(1e-8, tol))
    if verify_cutoff is None:
        verify_cutoff = tol <= 1e-8

    cutoff_now = cutoff or default_cutoff(params, target)
    basis = build_basis(params, Truncation(cutoff_now), dimension_cap)
    search, outcome = _search_at(params, basis, target, tol, seed, settings, warm_start)
    drift = math.nan
    verified = not verify_cutoff

    if verify_cutoff:
        for _ in range(MAX_CUTOFF_ROUNDS):
            cutoff_now = next_cutoff(cutoff_now)
            try:
                basis = build_basis(params, Truncation(cutoff_now), dimension_cap)
            except SizingError:
                logger.warning("cutoff verification stopped at the dimension cap")
                break
            search, refined = _search_at(params, basis, target, tol, seed, settings, outcome.psi)
            drift = abs(refined.value - outcome.value)
            outcome = refined
            if drift < tol:
                verified = True
                break

    multipliers = Multipliers(outcome.energy, outcome.v, outcome.j)
    free = search.free_spins
    identity_gap = outcome.value - (
        outcome.energy - outcome.v[free] @ target.sigma[free] - outcome.j @ target.xi)
    residuals = {
        "constraint": outcome.violation,
        "schrodinger": outcome.schrodinger_residual,
        "legendre_identity": float(abs(identity_gap)),
        "cutoff_drift": drift,
    }
    return FunctionalResult(
        value=outcome.value,
        representing_potentials=multipliers.potentials if multipliers.finite else None,
        multipliers=multipliers,
        optimizer=outcome.psi,
        converged=bool(outcome.violation <= tol and verified),
        residuals=residuals,
        cutoff_used=basis.fock_cutoff,
        representable=multipliers.finite,
        method="constrained-search",
        metadata={"certified": outcome.certified, "restarts_used": outcome.restarts_used,
                  "frozen_spins": sorted(search.frozen)},
    )


def fll_fl_gap(params: ModelParams, target: DensityPair, tol: float = 1e-6, seed: int = 0,
               **search_options) -> float:
    """
    F_LL - F_L at a cube-interior target.

    Raises:
        ConvergenceError: F_LL came out below F_L by more than tol, which
            means the constrained search missed its minimum.
    """
    lieb = lieb_functional(params, target, tol=min(tol, 1e-10))
    levy = fll_constrained_search(params, target, tol=min(tol, 1e-8), seed=seed, **search_options)
    gap = levy.value - lieb.value
    if gap < -tol:
        raise ConvergenceError(f"F_LL - F_L = {gap:.3e} is below -{tol:g}", best=gap)
    return float(gap)


def aufbau_index(params: ModelParams, multipliers: Multipliers, psi_star: WaveFunction,
                 tol: float = 1e-8) -> int:
    """
    Position of psi_star in the spectrum of H(v, j), by overlap > 0.99 with
    an eigenvector (or a degenerate eigenspace).

    Raises:
        PreconditionError: multipliers undefined (boundary magnetization).
        IdentificationError: no eigenspace among the lowest N+M+5 overlaps enough.
        AufbauError: the index exceeds N + M.
    """
    if not multipliers.finite:
        raise PreconditionError("aufbau index is undefined at the cube boundary")
    basis = psi_star.basis
    bound = params.n_spins + params.n_modes
    k = min(basis.dimension, bound + 5)
    spectrum = eigensolve(build_h(params, multipliers.potentials, basis), k)
    overlaps = np.array([abs(np.vdot(phi.coefficients, psi_star.coefficients)) ** 2
                         for phi in spectrum.eigenvectors])

    cluster_tol = max(tol, default_degeneracy_tol(spectrum.ground_energy))
    start = 0
    while start < k:
        stop = start + 1
        while stop < k and spectrum.eigenvalues[stop] - spectrum.eigenvalues[start] <= cluster_tol:
            stop += 1
        if overlaps[start:stop].sum() > OVERLAP_THRESHOLD:
            if start > bound:
                raise AufbauError(f"optimizer is eigenstate {start}, above the bound N+M={bound}")
            return start
        start = stop
    raise IdentificationError(
        f"no eigenspace of H(v, j) overlaps the optimizer above {OVERLAP_THRESHOLD} "
        f"(largest overlap {overlaps.max():.3f})")


# ==============================================================================
# Scans
# ==============================================================================

def boundary_slopes(params: ModelParams, exponents=range(3, 13), xi: float = 0.0):
    """
    Forward differences of sigma -> F_L(sigma, xi) on sigma_k = 1 - 2^-k (N = 1).

    Returns:
        (sigmas, slopes): slopes[i] is the difference quotient between
        sigmas[i] and sigmas[i + 1].
    """
    if params.n_spins != 1:
        raise PreconditionError("boundary_slopes is defined for a single spin")
    sigmas = np.array([1.0 - 2.0 ** (-k) for k in exponents])
    xis = np.full(params.n_modes, xi)
    values = np.array([lieb_functional(params, DensityPair([s], xis)).value for s in sigmas])
    return sigmas, np.diff(values) / np.diff(sigmas)


def fll_curve(params: ModelParams, lambdas, sigmas, xi=None, direction=None, method: str = "lieb",
              tol: float = 1e-10, seed: int = 0, threads: int = 1) -> list:
    """
    F(sigma, xi) along sigma = s * direction for every coupling scale lambda.

    Couplings are lambda * Lambda with Lambda taken from params. Rows are
    dicts in (lambda, sigma) order.
    """
    xi = np.zeros(params.n_modes) if xi is None else np.asarray(xi, dtype=float)
    if direction is None:
        direction = np.eye(params.n_spins)[0]
    direction = np.asarray(direction, dtype=float)
    jobs = [(float(lam), float(s)) for lam in lambdas for s in sigmas]

    def evaluate(job):
        lam, s = job
        model = params.scaled(lam)
        target = DensityPair(s * direction, xi)
        if method == "constrained":
            result = fll_constrained_search(model, target, tol=max(tol, 1e-8), seed=seed)
            gap = math.nan
        else:
            result = lieb_functional(model, target, tol=tol)
            gap = result.metadata.get("gap", math.nan)
        v = result.multipliers.v if result.multipliers else np.full(params.n_spins, math.nan)
        j = result.multipliers.j if result.multipliers else np.full(params.n_modes, math.nan)
        return {
            "lambda": lam,
            "sigma": target.sigma,
            "xi": target.xi,
            "F": result.value,
            "v": v,
            "j": j,
            "gap": gap,
            "cutoff": result.cutoff_used,
            "converged": result.converged and result.representable,
        }

    return gather_ordered(evaluate, jobs, threads)
