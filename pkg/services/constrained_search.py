"""
Constrained Search Engine

Minimizes <psi, H0 psi> over real unit vectors psi with prescribed
magnetization <sigma_z^n> = sigma_n and displacement <x_m> = xi_m.

Each candidate goes through three stages:
1. Augmented Lagrangian: L-BFGS on the unit sphere (gradients projected
   orthogonally to psi) of <H0> + mu . c + rho/2 |c|^2, multiplier update
   mu <- mu + rho c, penalty growth when the violation stalls
2. Newton polish on the Lagrange system H(v, j) psi = E psi plus the
   constraints; its correction is confined to the tangent space spanned
   orthogonally to {psi, sigma_z^n psi, x_m psi} by the bordered matrix
3. Multiplier recovery by least squares on H0 psi = E psi - v.sigma_z psi - j.x psi
   and a global-optimality certificate: if <psi, H(v,j) psi> equals the
   lowest eigenvalue of H(v, j), no other state with the same density
   pair has lower internal energy

Magnetizations at the cube boundary (|sigma_n| = 1) freeze spin n: the
spinor components with the opposite spin vanish, the search runs on the
remaining coordinates and v_n is undefined.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.optimize
import scipy.sparse as sp
import scipy.sparse.linalg

from exceptions import ConvergenceError
from hamiltonian import TruncatedBasis, WaveFunction, build_h0, embed_state, fix_phase
from utils import get_logger

logger = get_logger("constrained_search")

FREEZE_TOL = 1e-12
DENSE_KKT_LIMIT = 1200
DENSE_EIGEN_LIMIT = 1500


@dataclass(frozen=True)
class SearchSettings:
    """Augmented-Lagrangian and restart controls."""
    penalty_start: float = 10.0
    penalty_growth: float = 10.0
    penalty_max: float = 1e6
    inner_tol: float = 1e-10
    outer_tol: float = 1e-8
    restarts: int = 5
    max_outer: int = 40
    max_inner: int = 5000
    perturbation: float = 0.3
    polish_steps: int = 25
    certificate_tol: float = 1e-9

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass(eq=False)
class Candidate:
    """Outcome of one start of the search (vectors live on the active coordinates)."""
    vector: np.ndarray
    value: float
    violation: float
    energy: float
    free_multipliers: np.ndarray
    schrodinger_residual: float
    certified: bool
    start: str
    outer_iterations: int = 0
    penalty: float = 0.0


@dataclass(eq=False)
class SearchOutcome:
    psi: WaveFunction
    value: float
    violation: float
    energy: float
    v: np.ndarray
    j: np.ndarray
    schrodinger_residual: float
    certified: bool
    candidates: list = field(default_factory=list)

    @property
    def restarts_used(self) -> int:
        return len(self.candidates)


class ConstrainedSearch:
    """
    Levy-Lieb constrained search on one truncated basis.

    Attributes:
        frozen (dict): spin index -> +1/-1 for boundary magnetizations
        active (ndarray): basis indices left free by the frozen spins
    """

    def __init__(self, params, basis: TruncatedBasis, sigma, xi, settings: SearchSettings = None):
        self.params = params
        self.basis = basis
        self.settings = settings or SearchSettings()
        self.sigma = np.asarray(sigma, dtype=float)
        self.xi = np.asarray(xi, dtype=float)

        self.frozen = {}
        mask = np.ones(basis.dimension, dtype=bool)
        for n, value in enumerate(self.sigma):
            if abs(value) >= 1.0 - FREEZE_TOL:
                sign = 1 if value > 0 else -1
                self.frozen[n] = sign
                mask &= basis.spin_values(n) == sign
        self.active = np.flatnonzero(mask)
        self.free_spins = [n for n in range(params.n_spins) if n not in self.frozen]

        ops = basis.operators
        self.h0 = self._restrict(build_h0(params, basis).matrix)
        self.constraint_ops = (
            [self._restrict(ops.sigma_z[n]) for n in self.free_spins]
            + [self._restrict(ops.position[m]) for m in range(params.n_modes)]
        )
        self.targets = np.concatenate([self.sigma[self.free_spins], self.xi])
        self.identity = sp.identity(self.active.size, format="csr")

    def _restrict(self, matrix):
        return matrix[self.active][:, self.active].tocsr()

    # --------------------------------------------------------------
    # Pieces of the Lagrangian
    # --------------------------------------------------------------

    def constraints(self, u: np.ndarray) -> np.ndarray:
        return np.array([u @ (A @ u) for A in self.constraint_ops]) - self.targets

    def internal_energy(self, u: np.ndarray) -> float:
        return float(u @ (self.h0 @ u))

    def _augmented(self, y, mu, rho):
        norm = np.linalg.norm(y)
        u = y / norm
        hu = self.h0 @ u
        images = [A @ u for A in self.constraint_ops]
        c = np.array([u @ image for image in images]) - self.targets
        weights = mu + rho * c
        value = u @ hu + mu @ c + 0.5 * rho * (c @ c)
        grad = 2.0 * hu
        for weight, image in zip(weights, images):
            grad += 2.0 * weight * image
        grad -= (u @ grad) * u
        return float(value), grad / norm

    def multipliers(self, u: np.ndarray):
        """
        Least-squares (E, v_free, j) from H0 psi = E psi - v.sigma_z psi - j.x psi.

        Returns:
            (theta, residual): theta = [E, v_free..., j...] and the norm of
            H(v, j) psi - E psi.
        """
        columns = np.column_stack([-u] + [A @ u for A in self.constraint_ops])
        rhs = -(self.h0 @ u)
        theta = np.linalg.lstsq(columns, rhs, rcond=None)[0]
        residual = float(np.linalg.norm(columns @ theta - rhs))
        return theta, residual

    def _hamiltonian(self, theta):
        matrix = self.h0
        for weight, A in zip(theta[1:], self.constraint_ops):
            matrix = matrix + weight * A
        return matrix.tocsr()

    # --------------------------------------------------------------
    # Stages
    # --------------------------------------------------------------

    def _augmented_lagrangian(self, u, mu):
        s = self.settings
        rho = s.penalty_start
        previous = np.inf
        outer = 0
        for outer in range(1, s.max_outer + 1):
            result = scipy.optimize.minimize(
                self._augmented, u, args=(mu, rho), jac=True, method="L-BFGS-B",
                options={"gtol": s.inner_tol, "ftol": 1e-15, "maxiter": s.max_inner, "maxcor": 20})
            u = result.x / np.linalg.norm(result.x)
            c = self.constraints(u)
            violation = float(np.max(np.abs(c)))
            if violation <= s.outer_tol:
                break
            mu = mu + rho * c
            if violation > 0.25 * previous:
                rho = min(rho * s.penalty_growth, s.penalty_max)
            previous = violation
        return u, mu, outer, rho

    def _merit(self, u, theta):
        matrix = self._hamiltonian(theta)
        r1 = matrix @ u - theta[0] * u
        return float(np.linalg.norm(r1)) + float(np.max(np.abs(self.constraints(u)))) \
            + abs(float(u @ u) - 1.0)

    def _kkt_step(self, u, theta):
        matrix = self._hamiltonian(theta) - theta[0] * self.identity
        border = np.column_stack([-u] + [A @ u for A in self.constraint_ops])
        r1 = matrix @ u
        r2 = np.concatenate([[-0.5 * (u @ u - 1.0)], 0.5 * self.constraints(u)])
        rhs = -np.concatenate([r1, r2])
        size = u.size + border.shape[1]

        if size <= DENSE_KKT_LIMIT:
            kkt = np.zeros((size, size))
            kkt[:u.size, :u.size] = matrix.toarray()
            kkt[:u.size, u.size:] = border
            kkt[u.size:, :u.size] = border.T
            try:
                step = scipy.linalg.solve(kkt, rhs, assume_a="sym")
            except (scipy.linalg.LinAlgError, ValueError):
                step = np.linalg.lstsq(kkt, rhs, rcond=None)[0]
        else:
            kkt = sp.bmat([[matrix, sp.csr_matrix(border)],
                           [sp.csr_matrix(border.T), None]], format="csc")
            step = scipy.sparse.linalg.spsolve(kkt, rhs)
            if not np.all(np.isfinite(step)):
                step = scipy.sparse.linalg.lsqr(kkt, rhs, atol=1e-14, btol=1e-14)[0]
        return step[:u.size], step[u.size:]

    def _polish(self, u, theta):
        merit = self._merit(u, theta)
        for _ in range(self.settings.polish_steps):
            if merit < 1e-13:
                break
            du, dtheta = self._kkt_step(u, theta)
            if not np.all(np.isfinite(du)):
                break
            trial_u = u + du
            trial_u = trial_u / np.linalg.norm(trial_u)
            trial_theta = theta + dtheta
            trial_merit = self._merit(trial_u, trial_theta)
            if trial_merit >= merit:
                break
            u, theta, merit = trial_u, trial_theta, trial_merit
        return u, theta

    def _lowest_eigenvalue(self, theta) -> float:
        matrix = self._hamiltonian(theta)
        if matrix.shape[0] <= DENSE_EIGEN_LIMIT:
            return float(scipy.linalg.eigh(matrix.toarray(), eigvals_only=True,
                                           subset_by_index=[0, 0])[0])
        return float(scipy.sparse.linalg.eigsh(matrix, k=1, which="SA", tol=0.0,
                                               return_eigenvectors=False)[0])

    def _run(self, u0, label) -> Candidate:
        u0 = u0 / np.linalg.norm(u0)
        theta0, _ = self.multipliers(u0)
        u, _, outer, rho = self._augmented_lagrangian(u0, theta0[1:].copy())

        theta, _ = self.multipliers(u)
        polished, polished_theta = self._polish(u, theta)
        if self.internal_energy(polished) <= self.internal_energy(u) + self.settings.outer_tol \
                or np.max(np.abs(self.constraints(u))) > self.settings.outer_tol:
            u = polished

        u = fix_phase(u)
        theta, residual = self.multipliers(u)
        value = self.internal_energy(u)
        violation = float(np.max(np.abs(self.constraints(u))))

        represented = value + float(theta[1:] @ self.targets)
        lowest = self._lowest_eigenvalue(theta)
        certified = represented - lowest <= self.settings.certificate_tol * (1.0 + abs(lowest))

        logger.debug("start %s: F=%.12f violation=%.2e residual=%.2e certified=%s",
                     label, value, violation, residual, certified)
        return Candidate(
            vector=u, value=value, violation=violation, energy=float(theta[0]),
            free_multipliers=theta[1:], schrodinger_residual=residual,
            certified=bool(certified), start=label, outer_iterations=outer, penalty=rho)

    # --------------------------------------------------------------
    # Driver
    # --------------------------------------------------------------

    def restrict_state(self, psi: WaveFunction) -> np.ndarray:
        if psi.basis.fock_cutoff != self.basis.fock_cutoff:
            psi = embed_state(psi, self.basis)
        vector = np.real(np.asarray(psi.coefficients))[self.active]
        return vector

    def solve(self, start: WaveFunction, seed: int = 0, warm_start: WaveFunction = None,
              tol: float = 1e-8) -> SearchOutcome:
        """
        Run starts until one is certified globally optimal or restarts run out.

        Starts: the warm start (if any), then `start`, then `start` plus
        seeded Gaussian perturbations.

        Raises:
            ConvergenceError: no start reached constraint violation <= tol;
                .best holds the least-violating candidate.
        """
        s = self.settings
        base = self.restrict_state(start)
        starts = []
        if warm_start is not None:
            starts.append(("warm", self.restrict_state(warm_start)))
        starts.append(("trial", base))

        streams = np.random.SeedSequence(seed).spawn(max(s.restarts, 1))
        candidates = []
        for index in range(max(s.restarts, 1)):
            if index < len(starts):
                label, u0 = starts[index]
            else:
                rng = np.random.default_rng(streams[index])
                noise = rng.standard_normal(base.size)
                u0 = base + s.perturbation * noise / np.linalg.norm(noise)
                label = f"perturbed-{index}"
            candidate = self._run(u0, label)
            candidates.append(candidate)
            if candidate.certified and candidate.violation <= tol:
                break

        feasible = [c for c in candidates if c.violation <= tol]
        if not feasible:
            best = min(candidates, key=lambda c: c.violation)
            raise ConvergenceError(
                f"constraint violation {best.violation:.3e} above {tol:g} after "
                f"{len(candidates)} starts", best=self._outcome(best, candidates))
        best = min(feasible, key=lambda c: c.value)
        return self._outcome(best, candidates)

    def _outcome(self, candidate: Candidate, candidates) -> SearchOutcome:
        vector = np.zeros(self.basis.dimension)
        vector[self.active] = candidate.vector
        v = np.full(self.params.n_spins, np.nan)
        v[self.free_spins] = candidate.free_multipliers[:len(self.free_spins)]
        j = candidate.free_multipliers[len(self.free_spins):].copy()
        return SearchOutcome(
            psi=WaveFunction.from_vector(vector, self.basis),
            value=candidate.value,
            violation=candidate.violation,
            energy=candidate.energy,
            v=v,
            j=j,
            schrodinger_residual=candidate.schrodinger_residual,
            certified=candidate.certified,
            candidates=list(candidates),
        )
