"""
Dicke Model Operators

Finite matrix representation of the multi-mode Dicke Hamiltonian

    H0     = sum_m 2(n_m + 1/2) + sum_{m,n} Lambda_mn x_m sigma_z^n - sum_n t_n sigma_x^n
    H(v,j) = H0 + v . sigma_z + j . x

on the truncated space Fock(K)^M (x) C^(2^N).

Basis ordering (stable; serialized wave functions rely on it):
- tensor order is mode_1 ... mode_M, spin_1 ... spin_N
- the spin index varies fastest; spin 1 is the most significant bit and
  '+' (sigma_z = +1) is bit 0
- mode occupations are lexicographic with the last mode fastest

so the coefficient of |n_1 .. n_M> (x) |alpha> sits at

    index = (sum_m n_m K^(M-1-m)) * 2^N + alpha

Position and derivative use the ladder form x = (a + a^dagger)/sqrt(2),
d/dx = (a - a^dagger)/sqrt(2), truncated at occupation K-1 with no coupling
out of the basis. Everything is stored as scipy.sparse CSR; dense copies are
made on demand by the spectral layer.
"""

import itertools
from dataclasses import dataclass
from enum import Enum
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from exceptions import ConfigError, DomainError, SizingError
from utils import get_logger

logger = get_logger("hamiltonian")

DEFAULT_DIMENSION_CAP = 2_000_000
HERMITIAN_TOL = 1e-13
NORM_TOL = 1e-10
EMBED_LOSS_TOL = 1e-12

PAULI = {
    "x": np.array([[0.0, 1.0], [1.0, 0.0]]),
    "y": np.array([[0.0, -1j], [1j, 0.0]]),
    "z": np.array([[1.0, 0.0], [0.0, -1.0]]),
}


# ==============================================================================
# Parameters
# ==============================================================================

@dataclass(frozen=True, eq=False)
class ModelParams:
    """
    Physical model: N spins, M modes, coupling Lambda (M x N), tunneling t (N).

    Arrays are copied and frozen on construction. A coupling given as a flat
    sequence is read row-major.
    """
    n_spins: int
    n_modes: int
    coupling: np.ndarray
    tunneling: np.ndarray

    def __post_init__(self):
        n_spins, n_modes = int(self.n_spins), int(self.n_modes)
        if n_spins < 1 or n_modes < 1:
            raise ConfigError(f"n_spins and n_modes must be positive, got {n_spins}, {n_modes}")

        coupling = np.array(self.coupling, dtype=float)
        if coupling.size != n_modes * n_spins:
            raise ConfigError(
                f"coupling needs {n_modes}x{n_spins} = {n_modes * n_spins} entries, got {coupling.size}")
        coupling = coupling.reshape(n_modes, n_spins)

        tunneling = np.array(self.tunneling, dtype=float).reshape(-1)
        if tunneling.size != n_spins:
            raise ConfigError(f"tunneling needs {n_spins} entries, got {tunneling.size}")

        if not np.all(np.isfinite(coupling)) or not np.all(np.isfinite(tunneling)):
            raise ConfigError("coupling and tunneling must be finite")
        if not np.any(tunneling != 0.0):
            raise ConfigError("tunneling vector must not be identically zero")

        coupling.setflags(write=False)
        tunneling.setflags(write=False)
        object.__setattr__(self, "n_spins", n_spins)
        object.__setattr__(self, "n_modes", n_modes)
        object.__setattr__(self, "coupling", coupling)
        object.__setattr__(self, "tunneling", tunneling)

    @classmethod
    def rabi(cls, coupling: float = 1.0, tunneling: float = 1.0) -> "ModelParams":
        """Quantum Rabi model (N = M = 1)."""
        return cls(1, 1, [[coupling]], [tunneling])

    @property
    def is_decoupled(self) -> bool:
        return not np.any(self.coupling)

    def scaled(self, s: float) -> "ModelParams":
        """Same model at coupling s * Lambda."""
        return ModelParams(self.n_spins, self.n_modes, float(s) * self.coupling, self.tunneling)

    def to_dict(self) -> dict:
        return {
            "n_spins": self.n_spins,
            "n_modes": self.n_modes,
            "coupling": self.coupling.reshape(-1).tolist(),
            "tunneling": self.tunneling.tolist(),
        }


@dataclass(frozen=True)
class Truncation:
    """Number of oscillator levels kept per mode (occupations 0..K-1)."""
    fock_cutoff: int

    def __post_init__(self):
        if int(self.fock_cutoff) < 2:
            raise ConfigError(f"fock_cutoff must be at least 2, got {self.fock_cutoff}")
        object.__setattr__(self, "fock_cutoff", int(self.fock_cutoff))

    def dimension(self, params: ModelParams) -> int:
        return 2 ** params.n_spins * self.fock_cutoff ** params.n_modes


@dataclass(frozen=True, eq=False)
class Potentials:
    """External potentials: v couples to sigma_z (length N), j to x (length M)."""
    v: np.ndarray
    j: np.ndarray

    def __post_init__(self):
        v = np.array(self.v, dtype=float).reshape(-1)
        j = np.array(self.j, dtype=float).reshape(-1)
        if not np.all(np.isfinite(v)) or not np.all(np.isfinite(j)):
            raise DomainError("potentials must be finite")
        v.setflags(write=False)
        j.setflags(write=False)
        object.__setattr__(self, "v", v)
        object.__setattr__(self, "j", j)

    @classmethod
    def zeros(cls, params: ModelParams) -> "Potentials":
        return cls(np.zeros(params.n_spins), np.zeros(params.n_modes))

    def check(self, params: ModelParams) -> "Potentials":
        if self.v.size != params.n_spins or self.j.size != params.n_modes:
            raise DomainError(
                f"potentials have shape ({self.v.size}, {self.j.size}), "
                f"model needs ({params.n_spins}, {params.n_modes})")
        return self

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.v, self.j])

    def to_dict(self) -> dict:
        return {"v": self.v.tolist(), "j": self.j.tolist()}


# ==============================================================================
# Basis and operators
# ==============================================================================

class Structure(str, Enum):
    DIAGONAL = "diagonal"
    TRIDIAGONAL_IN_MODE = "tridiagonal-in-mode"
    SPIN_FLIP = "spin-flip"
    GENERAL = "general"


@dataclass(frozen=True)
class OperatorSet:
    """Single-slot operators of one basis, lifted to the full space."""
    position: tuple
    derivative: tuple
    number: tuple
    sigma_x: tuple
    sigma_y: tuple
    sigma_z: tuple


@dataclass(frozen=True, eq=False)
class TruncatedBasis:
    """Labels and lifted operators of Fock(K)^M (x) C^(2^N) for one model."""
    params: ModelParams
    fock_cutoff: int

    @property
    def n_spins(self) -> int:
        return self.params.n_spins

    @property
    def n_modes(self) -> int:
        return self.params.n_modes

    @property
    def spin_dimension(self) -> int:
        return 2 ** self.n_spins

    @property
    def fock_dimension(self) -> int:
        return self.fock_cutoff ** self.n_modes

    @property
    def dimension(self) -> int:
        return self.spin_dimension * self.fock_dimension

    @cached_property
    def occupations(self) -> np.ndarray:
        """(K^M, M) occupation table, last mode fastest."""
        table = list(itertools.product(range(self.fock_cutoff), repeat=self.n_modes))
        return np.array(table, dtype=np.int64).reshape(-1, self.n_modes)

    @cached_property
    def spin_configurations(self) -> np.ndarray:
        """(2^N, N) table of sigma_z eigenvalues, '+' first, spin 1 slowest."""
        table = list(itertools.product((1, -1), repeat=self.n_spins))
        return np.array(table, dtype=np.int64).reshape(-1, self.n_spins)

    def labels(self):
        """Yield (occupations, spins) per basis index, in storage order."""
        for occupation in self.occupations:
            for spins in self.spin_configurations:
                yield tuple(int(n) for n in occupation), tuple(int(s) for s in spins)

    def index(self, occupations, spin_index: int) -> int:
        weights = self.fock_cutoff ** np.arange(self.n_modes - 1, -1, -1)
        return int(np.dot(np.asarray(occupations), weights)) * self.spin_dimension + int(spin_index)

    def spin_values(self, n: int) -> np.ndarray:
        """sigma_z^n eigenvalue at every basis index."""
        return np.tile(self.spin_configurations[:, n], self.fock_dimension)

    @cached_property
    def operators(self) -> OperatorSet:
        return _build_operator_set(self.n_modes, self.n_spins, self.fock_cutoff)

    @cached_property
    def family(self) -> "HamiltonianFamily":
        return HamiltonianFamily(self.params, self)


def _ladder_blocks(cutoff: int):
    levels = np.arange(1, cutoff)
    off = np.sqrt(levels / 2.0)
    position = sp.diags([off, off], [1, -1], shape=(cutoff, cutoff), format="csr")
    derivative = sp.diags([off, -off], [1, -1], shape=(cutoff, cutoff), format="csr")
    number = sp.diags(np.arange(cutoff, dtype=float), 0, shape=(cutoff, cutoff), format="csr")
    return position, derivative, number


def _lift_mode(block, m: int, n_modes: int, cutoff: int, spin_dimension: int):
    left = sp.identity(cutoff ** m, format="csr")
    right = sp.identity(cutoff ** (n_modes - 1 - m) * spin_dimension, format="csr")
    return sp.kron(sp.kron(left, block, format="csr"), right, format="csr")


def _lift_spin(pauli, n: int, n_spins: int, fock_dimension: int):
    left = sp.identity(fock_dimension * 2 ** n, format="csr")
    right = sp.identity(2 ** (n_spins - 1 - n), format="csr")
    return sp.kron(sp.kron(left, sp.csr_matrix(pauli), format="csr"), right, format="csr")


def _build_operator_set(n_modes: int, n_spins: int, cutoff: int) -> OperatorSet:
    position, derivative, number = _ladder_blocks(cutoff)
    spin_dimension = 2 ** n_spins
    fock_dimension = cutoff ** n_modes

    def modes(block):
        return tuple(_lift_mode(block, m, n_modes, cutoff, spin_dimension) for m in range(n_modes))

    def spins(axis):
        return tuple(_lift_spin(PAULI[axis], n, n_spins, fock_dimension) for n in range(n_spins))

    return OperatorSet(
        position=modes(position),
        derivative=modes(derivative),
        number=modes(number),
        sigma_x=spins("x"),
        sigma_y=spins("y"),
        sigma_z=spins("z"),
    )


@dataclass(frozen=True, eq=False)
class OperatorMatrix:
    """
    Sparse operator on a truncated basis.

    Hermitian within HERMITIAN_TOL, except derivative operators which are
    flagged antihermitian (real antisymmetric).
    """
    matrix: sp.csr_matrix
    structure: Structure
    basis: TruncatedBasis
    antihermitian: bool = False

    def __post_init__(self):
        matrix = sp.csr_matrix(self.matrix)
        dim = self.basis.dimension
        if matrix.shape != (dim, dim):
            raise DomainError(f"operator shape {matrix.shape} does not match basis dimension {dim}")
        adjoint = matrix.conj().transpose()
        deviation = matrix + adjoint if self.antihermitian else matrix - adjoint
        worst = abs(deviation).max() if deviation.nnz else 0.0
        if worst > HERMITIAN_TOL:
            kind = "antihermitian" if self.antihermitian else "Hermitian"
            raise DomainError(f"operator is not {kind} (deviation {worst:.3e})")
        object.__setattr__(self, "matrix", matrix)

    @property
    def dimension(self) -> int:
        return self.matrix.shape[0]

    @property
    def is_real(self) -> bool:
        return not np.iscomplexobj(self.matrix.data)

    def dense(self) -> np.ndarray:
        return self.matrix.toarray()

    def apply(self, vector: np.ndarray) -> np.ndarray:
        return self.matrix @ vector

    def expectation(self, vector: np.ndarray):
        value = np.vdot(vector, self.matrix @ vector)
        if self.is_real and not np.iscomplexobj(vector):
            return float(np.real(value))
        return complex(value)

    def commutator(self, other: "OperatorMatrix") -> sp.csr_matrix:
        return (self.matrix @ other.matrix - other.matrix @ self.matrix).tocsr()


class HamiltonianFamily:
    """
    H0 and the potential couplings of one basis, built once.

    at(pots) assembles H(v, j) by adding only the nonzero potential terms,
    so at(zero potentials) is H0 itself.
    """

    def __init__(self, params: ModelParams, basis: TruncatedBasis):
        self.params = params
        self.basis = basis
        self.h0 = _assemble_h0(params, basis)

    def at(self, pots: Potentials) -> OperatorMatrix:
        pots.check(self.params)
        ops = self.basis.operators
        matrix = self.h0.matrix
        touched = False
        for n, value in enumerate(pots.v):
            if value != 0.0:
                matrix = matrix + value * ops.sigma_z[n]
                touched = True
        for m, value in enumerate(pots.j):
            if value != 0.0:
                matrix = matrix + value * ops.position[m]
                touched = True
        if not touched:
            return self.h0
        return OperatorMatrix(matrix.tocsr(), Structure.GENERAL, self.basis)


def _assemble_h0(params: ModelParams, basis: TruncatedBasis) -> OperatorMatrix:
    ops = basis.operators
    diagonal = np.full(basis.dimension, float(params.n_modes))
    for number in ops.number:
        diagonal += 2.0 * number.diagonal()
    matrix = sp.diags(diagonal, 0, format="csr")
    matrix = matrix + _coupling_matrix(params, basis)
    for n, t_n in enumerate(params.tunneling):
        if t_n != 0.0:
            matrix = matrix - t_n * ops.sigma_x[n]
    return OperatorMatrix(matrix.tocsr(), Structure.GENERAL, basis)


def _coupling_matrix(params: ModelParams, basis: TruncatedBasis) -> sp.csr_matrix:
    ops = basis.operators
    total = sp.csr_matrix((basis.dimension, basis.dimension))
    for m in range(params.n_modes):
        spin_part = sp.csr_matrix((basis.dimension, basis.dimension))
        for n in range(params.n_spins):
            if params.coupling[m, n] != 0.0:
                spin_part = spin_part + params.coupling[m, n] * ops.sigma_z[n]
        if spin_part.nnz:
            total = total + ops.position[m] @ spin_part
    return total.tocsr()


# ==============================================================================
# Public builders
# ==============================================================================

def build_basis(params: ModelParams, trunc: Truncation,
                dimension_cap: int = DEFAULT_DIMENSION_CAP) -> TruncatedBasis:
    """
    Enumerate the truncated basis.

    Raises:
        SizingError: if 2^N * K^M exceeds dimension_cap.
    """
    dimension = trunc.dimension(params)
    if dimension > dimension_cap:
        raise SizingError(
            f"basis dimension {dimension} (N={params.n_spins}, M={params.n_modes}, "
            f"K={trunc.fock_cutoff}) exceeds cap {dimension_cap}")
    return TruncatedBasis(params, trunc.fock_cutoff)


def _check_mode(m: int, basis: TruncatedBasis):
    if not 0 <= m < basis.n_modes:
        raise DomainError(f"mode index {m} outside 0..{basis.n_modes - 1}")


def _check_spin(n: int, basis: TruncatedBasis):
    if not 0 <= n < basis.n_spins:
        raise DomainError(f"spin index {n} outside 0..{basis.n_spins - 1}")


def build_position(m: int, basis: TruncatedBasis) -> OperatorMatrix:
    """x_m: tridiagonal in occupation m with elements sqrt(n/2)."""
    _check_mode(m, basis)
    return OperatorMatrix(basis.operators.position[m], Structure.TRIDIAGONAL_IN_MODE, basis)


def build_derivative(m: int, basis: TruncatedBasis) -> OperatorMatrix:
    """d/dx_m: real antisymmetric, tridiagonal in occupation m."""
    _check_mode(m, basis)
    return OperatorMatrix(basis.operators.derivative[m], Structure.TRIDIAGONAL_IN_MODE,
                          basis, antihermitian=True)


def build_number(m: int, basis: TruncatedBasis) -> OperatorMatrix:
    _check_mode(m, basis)
    return OperatorMatrix(basis.operators.number[m], Structure.DIAGONAL, basis)


def build_spin(axis: str, n: int, basis: TruncatedBasis) -> OperatorMatrix:
    """Pauli matrix sigma_axis at spin slot n, identity elsewhere."""
    _check_spin(n, basis)
    if axis not in PAULI:
        raise DomainError(f"unknown spin axis {axis!r}, expected one of x, y, z")
    matrix = getattr(basis.operators, f"sigma_{axis}")[n]
    structure = Structure.DIAGONAL if axis == "z" else Structure.SPIN_FLIP
    return OperatorMatrix(matrix, structure, basis)


def build_coupling(params: ModelParams, basis: TruncatedBasis) -> OperatorMatrix:
    """x . Lambda sigma_z."""
    return OperatorMatrix(_coupling_matrix(params, basis), Structure.TRIDIAGONAL_IN_MODE, basis)


def build_h0(params: ModelParams, basis: TruncatedBasis) -> OperatorMatrix:
    if params is basis.params:
        return basis.family.h0
    return _assemble_h0(params, basis)


def build_h(params: ModelParams, pots: Potentials, basis: TruncatedBasis) -> OperatorMatrix:
    if params is basis.params:
        return basis.family.at(pots)
    return HamiltonianFamily(params, basis).at(pots)


def h0_lower_bound(params: ModelParams) -> float:
    """-(||t||_inf + ||Lambda^T Lambda||_2 / 4), a lower bound on <psi, H0 psi>."""
    gram = params.coupling.T @ params.coupling
    return -(float(np.max(np.abs(params.tunneling))) + 0.25 * float(np.linalg.norm(gram, 2)))


# ==============================================================================
# States
# ==============================================================================

def fix_phase(vector: np.ndarray) -> np.ndarray:
    """Rotate so the largest-magnitude coefficient is real and positive."""
    pivot = vector[int(np.argmax(np.abs(vector)))]
    if pivot == 0:
        return vector
    phase = np.conj(pivot) / abs(pivot)
    rotated = vector * phase
    if np.iscomplexobj(rotated) and np.allclose(rotated.imag, 0.0, atol=0.0):
        rotated = rotated.real.copy()
    return rotated


@dataclass(frozen=True, eq=False)
class WaveFunction:
    """Normalized coefficient vector over a truncated basis."""
    coefficients: np.ndarray
    basis: TruncatedBasis

    def __post_init__(self):
        coefficients = np.array(self.coefficients).reshape(-1)
        if coefficients.size != self.basis.dimension:
            raise DomainError(
                f"wave function has {coefficients.size} coefficients, basis has {self.basis.dimension}")
        norm = np.linalg.norm(coefficients)
        if abs(norm - 1.0) > NORM_TOL:
            raise DomainError(f"wave function is not normalized (norm {norm:.12f})")
        coefficients.setflags(write=False)
        object.__setattr__(self, "coefficients", coefficients)

    @classmethod
    def from_vector(cls, vector, basis: TruncatedBasis) -> "WaveFunction":
        vector = np.asarray(vector)
        norm = np.linalg.norm(vector)
        if norm == 0:
            raise DomainError("cannot normalize the zero vector")
        return cls(vector / norm, basis)

    @property
    def is_real(self) -> bool:
        return not np.iscomplexobj(self.coefficients)

    def expectation(self, op):
        matrix = op.matrix if isinstance(op, OperatorMatrix) else op
        value = np.vdot(self.coefficients, matrix @ self.coefficients)
        if self.is_real and not np.iscomplexobj(matrix.data if sp.issparse(matrix) else matrix):
            return float(np.real(value))
        return complex(value)

    def spinor(self, alpha: int) -> np.ndarray:
        """Fock-space component psi^alpha of spin configuration alpha."""
        return self.coefficients.reshape(self.basis.fock_dimension, self.basis.spin_dimension)[:, alpha]


def embed_state(psi: WaveFunction, basis: TruncatedBasis) -> WaveFunction:
    """
    Copy psi into a basis with a different cutoff (same N and M).

    Levels above the target cutoff are dropped; if they carried more than
    EMBED_LOSS_TOL of the norm the result is renormalized with a warning.
    """
    source = psi.basis
    if source.n_spins != basis.n_spins or source.n_modes != basis.n_modes:
        raise DomainError("embed_state needs bases with equal N and M")
    if source.fock_cutoff == basis.fock_cutoff:
        return psi

    occupations = source.occupations
    keep = np.all(occupations < basis.fock_cutoff, axis=1)
    weights = basis.fock_cutoff ** np.arange(basis.n_modes - 1, -1, -1)
    target_rows = occupations[keep] @ weights

    blocks = psi.coefficients.reshape(source.fock_dimension, source.spin_dimension)
    out = np.zeros((basis.fock_dimension, basis.spin_dimension), dtype=blocks.dtype)
    out[target_rows] = blocks[keep]

    lost = float(np.linalg.norm(blocks[~keep]))
    if lost > EMBED_LOSS_TOL:
        logger.warning("embedding K=%d -> K=%d drops norm %.3e; renormalizing",
                       source.fock_cutoff, basis.fock_cutoff, lost)
    return WaveFunction.from_vector(out.reshape(-1), basis)
