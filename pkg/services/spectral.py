"""
Spectral Service

Low-lying eigenpairs of truncated Hamiltonians:
- eigensolve: dense LAPACK (scipy.linalg.eigh) up to DENSE_LIMIT, ARPACK
  Lanczos (scipy.sparse.linalg.eigsh) above
- converge_cutoff: grow the Fock cutoff by 1.5x until the requested
  eigenvalues settle
- ground_degeneracy: count eigenvalues in the lowest cluster

Eigenvectors are phase-fixed (largest-magnitude coefficient real positive)
so repeated runs return identical vectors.
"""

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.sparse.linalg

from exceptions import ConvergenceError, PreconditionError, SizingError, SolverError
from hamiltonian import (
    DEFAULT_DIMENSION_CAP,
    ModelParams,
    OperatorMatrix,
    Potentials,
    Truncation,
    WaveFunction,
    build_basis,
    build_h,
    fix_phase,
)
from utils import get_logger

logger = get_logger("spectral")

DENSE_LIMIT = 4096
DEFAULT_START_CUTOFF = 12
GROWTH_FACTOR = 1.5
RESIDUAL_SCALE = 1e-9
MAX_LANCZOS_ITERATIONS = 20000


def default_degeneracy_tol(ground_energy: float) -> float:
    return 1e-9 * (1.0 + abs(ground_energy))


@dataclass(eq=False)
class SpectralResult:
    """Lowest k eigenpairs of one Hamiltonian, ascending."""
    eigenvalues: np.ndarray
    eigenvectors: list
    gap: float
    degenerate_flag: bool
    cutoff_used: int
    residual: float
    passes: list = field(default_factory=list)

    @property
    def ground_energy(self) -> float:
        return float(self.eigenvalues[0])

    @property
    def ground_state(self) -> WaveFunction:
        return self.eigenvectors[0]

    @property
    def basis(self):
        return self.eigenvectors[0].basis

    def to_dict(self) -> dict:
        return {
            "eigenvalues": self.eigenvalues.tolist(),
            "gap": self.gap,
            "degenerate": self.degenerate_flag,
            "cutoff_used": self.cutoff_used,
            "residual": self.residual,
            "passes": list(self.passes),
        }


def eigensolve(H: OperatorMatrix, k: int = 1) -> SpectralResult:
    """
    Lowest k eigenpairs of H.

    Raises:
        SolverError: Lanczos did not converge, or a residual ||H psi - E psi||
            exceeds 1e-9 (1 + |E|).
    """
    dim = H.dimension
    if not 1 <= k <= dim:
        raise PreconditionError(f"k must lie in 1..{dim}, got {k}")

    if dim <= DENSE_LIMIT or k >= dim - 1:
        values, vectors = scipy.linalg.eigh(H.dense(), subset_by_index=[0, k - 1])
    else:
        try:
            values, vectors = scipy.sparse.linalg.eigsh(
                H.matrix, k=k, which="SA", tol=0.0, maxiter=MAX_LANCZOS_ITERATIONS)
        except scipy.sparse.linalg.ArpackNoConvergence as err:
            raise SolverError(
                f"Lanczos did not converge for k={k}, D={dim} "
                f"({len(err.eigenvalues)} of {k} eigenpairs found)") from err
        order = np.argsort(values)
        values, vectors = values[order], vectors[:, order]

    states = []
    residual = 0.0
    for index in range(k):
        vector = fix_phase(vectors[:, index])
        vector = vector / np.linalg.norm(vector)
        misfit = float(np.linalg.norm(H.apply(vector) - values[index] * vector))
        if misfit > RESIDUAL_SCALE * (1.0 + abs(values[index])):
            raise SolverError(
                f"eigenpair {index} residual {misfit:.3e} above tolerance", residual=misfit)
        residual = max(residual, misfit)
        states.append(WaveFunction(vector, H.basis))

    values = np.asarray(values, dtype=float)
    gap = float(values[1] - values[0]) if k >= 2 else math.nan
    degenerate = k >= 2 and gap <= default_degeneracy_tol(values[0])
    return SpectralResult(
        eigenvalues=values,
        eigenvectors=states,
        gap=gap,
        degenerate_flag=bool(degenerate),
        cutoff_used=H.basis.fock_cutoff,
        residual=residual,
    )


def next_cutoff(cutoff: int) -> int:
    return int(math.ceil(GROWTH_FACTOR * cutoff))


def converge_cutoff(params: ModelParams, pots: Potentials, tol: float = 1e-10, k: int = 1,
                    start_cutoff: int = DEFAULT_START_CUTOFF,
                    dimension_cap: int = DEFAULT_DIMENSION_CAP) -> SpectralResult:
    """
    Eigensolve with K <- ceil(1.5 K) until all k eigenvalues move by < tol.

    A decoupled model without photon potential is diagonal in the oscillator
    basis, so its first pass is already exact. tol = inf (or None) also
    returns the first pass.

    Raises:
        ConvergenceError: the next cutoff would exceed dimension_cap; the
            error carries the last completed result as .best.
    """
    pots.check(params)
    cutoff = max(2, int(start_cutoff))
    basis = build_basis(params, Truncation(cutoff), dimension_cap)
    k = min(k, basis.dimension)
    result = eigensolve(build_h(params, pots, basis), k)
    result.passes.append(cutoff)

    exact = params.is_decoupled and not np.any(pots.j)
    if tol is None or math.isinf(tol) or exact:
        return result

    while True:
        cutoff = next_cutoff(cutoff)
        try:
            basis = build_basis(params, Truncation(cutoff), dimension_cap)
        except SizingError as err:
            raise ConvergenceError(
                f"cutoff convergence to {tol:g} not reached before the dimension cap "
                f"(last K={result.cutoff_used})", best=result) from err
        refined = eigensolve(build_h(params, pots, basis), k)
        refined.passes = result.passes + [cutoff]
        change = float(np.max(np.abs(refined.eigenvalues - result.eigenvalues)))
        logger.debug("cutoff %d -> %d: eigenvalue change %.3e", result.cutoff_used, cutoff, change)
        if change < tol:
            return refined
        result = refined


def ground_degeneracy(result: SpectralResult, tol_deg: float = None) -> int:
    """Number of eigenvalues within tol_deg of the lowest."""
    if len(result.eigenvalues) < 2:
        raise PreconditionError("ground_degeneracy needs at least two eigenvalues")
    if tol_deg is None:
        tol_deg = default_degeneracy_tol(result.ground_energy)
    return int(np.count_nonzero(result.eigenvalues - result.eigenvalues[0] <= tol_deg))


def hellmann_feynman_gradient(params: ModelParams, pots: Potentials, step: float = 1e-4,
                              tol: float = 1e-12, start_cutoff: int = DEFAULT_START_CUTOFF):
    """
    Central finite differences of E0 with respect to every v_n and j_m.

    The cutoff is converged once at pots and then held fixed so the
    differences are not polluted by cutoff jumps.

    Returns:
        (gradient, expectations): two arrays of length N + M; the second holds
        the ground-state <sigma_z^n> and <x_m> at pots.
    """
    reference = converge_cutoff(params, pots, tol, k=2, start_cutoff=start_cutoff)
    basis = reference.basis
    ops = basis.operators
    psi = reference.ground_state
    expectations = np.array([psi.expectation(op) for op in ops.sigma_z + ops.position])

    base = pots.as_vector()
    gradient = np.empty_like(base)
    for index in range(base.size):
        shifted = []
        for sign in (1.0, -1.0):
            vector = base.copy()
            vector[index] += sign * step
            trial = Potentials(vector[:params.n_spins], vector[params.n_spins:])
            shifted.append(eigensolve(build_h(params, trial, basis), 1).ground_energy)
        gradient[index] = (shifted[0] - shifted[1]) / (2.0 * step)
    return gradient, expectations
