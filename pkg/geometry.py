"""
Regular-Set Geometry

A magnetization sigma in [-1, 1]^N is regular when every spin-weight
distribution producing it has support whose cube vertices affinely span
R^N. The irregular set is the union of the affine hulls of the maximally
irregular vertex sets (affine dimension N - 1), so the regular set is the
open cube minus a finite hyperplane arrangement; its connected components
are the arrangement cells.

Two arrangements are available:
- "vertex": every affine hull of N cube vertices with affine dimension
  N - 1 (the definition; for N = 3 this adds the eight planes
  +-s1 +- s2 +- s3 = 1 to the coordinate diagonals)
- "diagonal": only the coordinate diagonals s_i = +-s_j and the cube faces
  (the picture usually drawn for N = 3)
"""

import itertools
from dataclasses import dataclass
from enum import Enum
from functools import lru_cache

import numpy as np
import scipy.linalg

from exceptions import DomainError, SizingError, StatisticalError
from utils import gather_ordered, get_logger

logger = get_logger("geometry")

MAX_SPINS = 4
MEMBERSHIP_TOL = 1e-12
SAMPLE_TOL = 1e-9
SAMPLE_CHUNK = 100_000
MIN_ACCEPTANCE = 0.5


class Arrangement(str, Enum):
    VERTEX = "vertex"
    DIAGONAL = "diagonal"


class Side(Enum):
    """Position of a point relative to a hyperplane."""
    BELOW = -1
    ON = 0
    ABOVE = 1


@dataclass(frozen=True, eq=False)
class Hyperplane:
    """Points s with normal . s = offset; unit normal, first nonzero entry positive."""
    normal: np.ndarray
    offset: float

    def signed_distance(self, sigma) -> float:
        return float(np.dot(self.normal, sigma) - self.offset)

    def side(self, sigma, tol: float = MEMBERSHIP_TOL) -> Side:
        distance = self.signed_distance(sigma)
        if abs(distance) <= tol:
            return Side.ON
        return Side.ABOVE if distance > 0 else Side.BELOW

    def to_dict(self) -> dict:
        return {"normal": self.normal.tolist(), "offset": self.offset}


def cube_vertices(n_spins: int) -> np.ndarray:
    """Omega columns: (2^N, N) sign table in basis order ('+' first)."""
    return np.array(list(itertools.product((1, -1), repeat=n_spins)), dtype=float)


def affine_dimension(points: np.ndarray) -> int:
    points = np.atleast_2d(points)
    if len(points) == 1:
        return 0
    return int(np.linalg.matrix_rank(points[1:] - points[0], tol=1e-9))


def _canonical(normal: np.ndarray, offset: float):
    normal = normal / np.linalg.norm(normal)
    pivot = normal[np.flatnonzero(np.abs(normal) > 1e-12)[0]]
    if pivot < 0:
        normal, offset = -normal, -offset
    normal = np.where(np.abs(normal) < 1e-15, 0.0, normal)
    # -0.0 would print as "-0" in the equation column
    return normal, float(offset) + 0.0


def _hull_hyperplane(points: np.ndarray):
    """Hyperplane through N points of affine dimension N - 1."""
    if len(points) == 1:
        normal = np.ones(1)
    else:
        normal = scipy.linalg.null_space(points[1:] - points[0])[:, 0]
    return _canonical(normal, float(np.dot(normal, points[0]) / np.linalg.norm(normal)))


def _check_spins(n_spins: int):
    if n_spins < 1:
        raise DomainError(f"need at least one spin, got {n_spins}")
    if n_spins > MAX_SPINS:
        raise SizingError(f"hyperplane enumeration is capped at N={MAX_SPINS}, got N={n_spins}")


@lru_cache(maxsize=None)
def _hyperplane_table(n_spins: int, arrangement: Arrangement) -> tuple:
    vertices = cube_vertices(n_spins)
    found = {}

    if arrangement is Arrangement.VERTEX:
        # every hyperplane spanned by cube vertices is spanned by N of them
        for subset in itertools.combinations(range(len(vertices)), n_spins):
            points = vertices[list(subset)]
            if affine_dimension(points) != n_spins - 1:
                continue
            normal, offset = _hull_hyperplane(points)
            key = tuple(np.round(np.append(normal, offset), 10))
            found.setdefault(key, (normal, offset))
    else:
        for n in range(n_spins):
            normal = np.zeros(n_spins)
            normal[n] = 1.0
            for offset in (1.0, -1.0):
                found[tuple(np.append(normal, offset))] = (normal.copy(), offset)
        for a, b in itertools.combinations(range(n_spins), 2):
            for sign in (1.0, -1.0):
                normal = np.zeros(n_spins)
                normal[a], normal[b] = 1.0, -sign
                normal, offset = _canonical(normal, 0.0)
                found[tuple(np.round(np.append(normal, offset), 10))] = (normal, offset)

    planes = []
    for key in sorted(found, reverse=True):
        normal, offset = found[key]
        normal = normal.copy()
        normal.setflags(write=False)
        planes.append(Hyperplane(normal, offset))
    return tuple(planes)


def irregular_hyperplanes(n_spins: int, arrangement: str = "vertex") -> list:
    """
    Canonical hyperplanes whose union (with the cube faces) is the irregular set.

    Raises:
        SizingError: n_spins above MAX_SPINS.
    """
    _check_spins(n_spins)
    return list(_hyperplane_table(n_spins, Arrangement(arrangement)))


def _arrangement_arrays(n_spins: int, arrangement: str):
    planes = irregular_hyperplanes(n_spins, arrangement)
    normals = np.array([plane.normal for plane in planes])
    offsets = np.array([plane.offset for plane in planes])
    return normals, offsets


def is_regular(sigma, tol: float = MEMBERSHIP_TOL, arrangement: str = "vertex") -> bool:
    """
    True iff sigma is strictly inside the cube and farther than tol from
    every irregular hyperplane.

    Raises:
        DomainError: sigma outside [-1, 1]^N by more than tol.
    """
    sigma = np.asarray(sigma, dtype=float).reshape(-1)
    _check_spins(sigma.size)
    if np.any(np.abs(sigma) > 1.0 + tol):
        raise DomainError(f"magnetization {sigma.tolist()} lies outside the cube")
    if np.any(np.abs(sigma) >= 1.0 - tol):
        return False
    normals, offsets = _arrangement_arrays(sigma.size, arrangement)
    return bool(np.all(np.abs(normals @ sigma - offsets) > tol))


def component_signature(sigma, arrangement: str = "vertex") -> tuple:
    """Sign vector of sigma against the arrangement; labels the cell it lies in."""
    sigma = np.asarray(sigma, dtype=float).reshape(-1)
    normals, offsets = _arrangement_arrays(sigma.size, arrangement)
    return tuple(int(s) for s in np.sign(normals @ sigma - offsets))


def _chunk_signatures(job):
    seed_sequence, count, n_spins, arrangement, tol = job
    rng = np.random.default_rng(seed_sequence)
    normals, offsets = _arrangement_arrays(n_spins, arrangement)
    points = rng.uniform(-1.0, 1.0, size=(count, n_spins))
    distances = points @ normals.T - offsets
    accepted = np.all(np.abs(distances) > tol, axis=1)
    signs = np.unique(distances[accepted] > 0, axis=0)
    return int(np.count_nonzero(accepted)), {tuple(row) for row in signs}


def count_components(n_spins: int, samples: int = 100_000, seed: int = 0,
                     arrangement: str = "vertex", tol: float = SAMPLE_TOL,
                     threads: int = 1) -> int:
    """
    Monte-Carlo count of regular-set components as distinct sign vectors.

    Samples are drawn in chunks, each from its own generator spawned from
    SeedSequence(seed), so the count does not depend on threads.

    Raises:
        StatisticalError: fewer than half of the samples were accepted.
    """
    _check_spins(n_spins)
    chunks = max(1, -(-int(samples) // SAMPLE_CHUNK))
    sizes = [SAMPLE_CHUNK] * (chunks - 1) + [int(samples) - SAMPLE_CHUNK * (chunks - 1)]
    seeds = np.random.SeedSequence(seed).spawn(chunks)
    jobs = [(seeds[i], sizes[i], n_spins, arrangement, tol) for i in range(chunks)]

    accepted = 0
    signatures = set()
    for count, found in gather_ordered(_chunk_signatures, jobs, threads):
        accepted += count
        signatures |= found

    if accepted < MIN_ACCEPTANCE * samples:
        raise StatisticalError(f"only {accepted} of {samples} samples accepted")
    logger.debug("N=%d %s arrangement: %d cells from %d samples",
                 n_spins, arrangement, len(signatures), accepted)
    return len(signatures)


def sample_regular(n_spins: int, seed=0, arrangement: str = "vertex") -> np.ndarray:
    """Uniform regular magnetization by rejection (the irregular set has measure zero)."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    _check_spins(n_spins)
    while True:
        sigma = rng.uniform(-1.0, 1.0, size=n_spins)
        if is_regular(sigma, arrangement=arrangement):
            return sigma
