"""
Adiabatic Connection Service

Rebuilds F_LL at full coupling Lambda from the decoupled closed form by
integrating along the coupling path s Lambda, s in [0, 1], at xi = 0:

    F_LL^Lambda(sigma, xi) = M + |xi|^2 - sum_n t_n sqrt(1 - sigma_n^2)
                             + xi . Lambda sigma + G(sigma)

G(sigma) is evaluated by two routes on the same quadrature nodes:
- direct: the coupling derivative <x . Lambda sigma_z> in the optimizer psi_s
- identity: (s/2)(|Lambda sigma|^2 - ||Lambda sigma_z psi_s||^2)
            - <t.sigma_x psi_s, sum_m d_m sum_n Lambda_mn (sigma_z^n - sigma_n) psi_s>
Both integrands agree node by node for an exact optimizer; the integrals
are compared by ac_consistency.

Optimizers psi_s come from inverse_map + ground state for a single spin
and mode (the F_LL optimizer is the ground state there) and from the
constrained search, warm-started along s, otherwise.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from exceptions import DomainError, RefinementError
from hamiltonian import ModelParams, Truncation, WaveFunction, build_basis
from services.functionals import (
    DensityPair,
    default_cutoff,
    fll_constrained_search,
    inverse_map,
    zero_coupling_fll,
)
from utils import gather_ordered, get_logger

logger = get_logger("adiabatic")

GAUSS_ORDER = 8
START_PANELS = 2
MAX_NODES = 256
KINK_FACTOR = 10.0
MONOTONE_TOL = 1e-6


@dataclass(eq=False)
class NodeEvaluation:
    """Integrands and checks at one coupling strength s."""
    s: float
    integrand: float
    identity: float
    virial_residual: float
    optimizer: WaveFunction


@dataclass(eq=False)
class AdiabaticTrace:
    """Quadrature record of G(sigma) and the reconstructed F_LL."""
    s_nodes: np.ndarray
    integrand_values: np.ndarray
    identity_values: np.ndarray
    optimizers: list
    G_value: float
    G_direct: float
    F_reconstructed: float
    virial_residuals: np.ndarray
    panels: int
    kinks: list = field(default_factory=list)
    monotone: bool = True
    history: list = field(default_factory=list)

    @property
    def consistency(self) -> float:
        return abs(self.G_value - self.G_direct)

    def rows(self):
        for s, value, identity, virial in zip(self.s_nodes, self.integrand_values,
                                              self.identity_values, self.virial_residuals):
            yield s, value, identity, virial

    def to_dict(self) -> dict:
        return {
            "G_value": self.G_value,
            "G_direct": self.G_direct,
            "F_reconstructed": self.F_reconstructed,
            "residual": self.consistency,
            "nodes": int(self.s_nodes.size),
            "panels": self.panels,
            "monotone": self.monotone,
            "kinks": [float(s) for s in self.kinks],
            "max_virial_residual": float(np.max(np.abs(self.virial_residuals))),
            "history": list(self.history),
        }


def _uses_inverse_route(params: ModelParams, sigma: np.ndarray) -> bool:
    return params.n_spins == 1 and params.n_modes == 1 and bool(np.all(np.abs(sigma) < 1.0))


def _check_sigma(params: ModelParams, sigma) -> np.ndarray:
    sigma = np.asarray(sigma, dtype=float).reshape(-1)
    if sigma.size != params.n_spins:
        raise DomainError(f"magnetization has {sigma.size} entries, model has {params.n_spins} spins")
    if np.any(np.abs(sigma) > 1.0):
        raise DomainError(f"magnetization {sigma.tolist()} outside [-1, 1]^N")
    return sigma


def _node_optimizer(params, sigma, s, tol, seed, cutoff, warm_start):
    """Real optimizer of F_LL^{s Lambda}(sigma, 0)."""
    model = params.scaled(s)
    target = DensityPair(sigma, np.zeros(params.n_modes))
    if _uses_inverse_route(params, sigma):
        return inverse_map(model, target, tol=min(tol, 1e-10), cutoff=cutoff).spectral.ground_state
    result = fll_constrained_search(model, target, tol=max(tol, 1e-8), seed=seed, cutoff=cutoff,
                                    verify_cutoff=False, warm_start=warm_start)
    return result.optimizer


def _evaluate_node(params: ModelParams, sigma: np.ndarray, s: float,
                   psi: WaveFunction) -> NodeEvaluation:
    basis = psi.basis
    ops = basis.operators
    u = np.asarray(psi.coefficients)

    # Lambda sigma_z psi, one image per mode
    coupled = [sum(params.coupling[m, n] * (ops.sigma_z[n] @ u) for n in range(params.n_spins))
               for m in range(params.n_modes)]
    coupling_term = sum(float(u @ (ops.position[m] @ image)) for m, image in enumerate(coupled))

    lam_sigma = params.coupling @ sigma
    spread = sum(float(image @ image) for image in coupled)
    shifted = [image - lam_sigma[m] * u for m, image in enumerate(coupled)]
    flux = sum(ops.derivative[m] @ image for m, image in enumerate(shifted))
    tunneling = sum(params.tunneling[n] * (ops.sigma_x[n] @ u) for n in range(params.n_spins))
    identity = 0.5 * s * (float(lam_sigma @ lam_sigma) - spread) - float(tunneling @ flux)

    kinetic = sum(float(np.linalg.norm(ops.derivative[m] @ u) ** 2) for m in range(params.n_modes))
    potential = sum(float(np.linalg.norm(ops.position[m] @ u) ** 2) for m in range(params.n_modes))
    virial = kinetic - potential - 0.5 * s * coupling_term

    return NodeEvaluation(s=s, integrand=coupling_term, identity=identity,
                          virial_residual=virial, optimizer=psi)


def ac_integrand(params: ModelParams, sigma, s: float, tol: float = 1e-10, seed: int = 0,
                 cutoff: int = None, warm_start: WaveFunction = None) -> float:
    """<x . Lambda sigma_z> in the optimizer of F_LL^{s Lambda}(sigma, 0)."""
    sigma = _check_sigma(params, sigma)
    if not 0.0 <= s <= 1.0:
        raise DomainError(f"coupling strength s={s} outside [0, 1]")
    cutoff = cutoff or default_cutoff(params)
    psi = _node_optimizer(params, sigma, s, tol, seed, cutoff, warm_start)
    return _evaluate_node(params, sigma, s, psi).integrand


def gauss_legendre_nodes(panels: int, order: int = GAUSS_ORDER):
    """Composite Gauss-Legendre nodes and weights on [0, 1] with equal panels."""
    x, w = np.polynomial.legendre.leggauss(order)
    edges = np.linspace(0.0, 1.0, panels + 1)
    half = 0.5 * (edges[1:] - edges[:-1])
    centre = 0.5 * (edges[1:] + edges[:-1])
    nodes = (centre[:, None] + half[:, None] * x[None, :]).reshape(-1)
    weights = (half[:, None] * w[None, :]).reshape(-1)
    return nodes, weights


def _kinks(nodes, values) -> list:
    jumps = np.abs(np.diff(values))
    if jumps.size < 2:
        return []
    scale = np.median(jumps)
    if scale == 0.0:
        return []
    return [float(0.5 * (nodes[i] + nodes[i + 1]))
            for i in np.flatnonzero(jumps > KINK_FACTOR * scale)]


def g_lambda(params: ModelParams, sigma, quad_tol: float = 1e-6, xi=None, *,
             tol: float = 1e-10, seed: int = 0, cutoff: int = None, chained: bool = True,
             threads: int = 1) -> AdiabaticTrace:
    """
    G(sigma) by composite Gauss-Legendre quadrature over s in [0, 1].

    Panels double (2 panels of 8 nodes to start) until G moves by less than
    quad_tol. With chained=True the constrained search is warm-started from
    the previous node, so nodes run in ascending s; chained=False evaluates
    nodes independently across `threads`.

    Raises:
        RefinementError: MAX_NODES reached before convergence; .trace holds
            the (nodes, G) history.
    """
    sigma = _check_sigma(params, sigma)
    xi = np.zeros(params.n_modes) if xi is None else np.asarray(xi, dtype=float).reshape(-1)
    cutoff = cutoff or default_cutoff(params, DensityPair(sigma, np.zeros(params.n_modes)))
    if not _uses_inverse_route(params, sigma):
        # one basis for the whole path, sized for the full coupling
        build_basis(params, Truncation(cutoff))
    free = zero_coupling_fll(params.scaled(0.0), DensityPair(sigma, xi))
    explicit = float(xi @ params.coupling @ sigma)

    cache = {}

    def evaluate(nodes):
        missing = [s for s in np.sort(nodes) if s not in cache]
        if chained:
            warm = None
            for s in missing:
                psi = _node_optimizer(params, sigma, s, tol, seed, cutoff, warm)
                cache[s] = _evaluate_node(params, sigma, s, psi)
                warm = psi
        else:
            def run(s):
                psi = _node_optimizer(params, sigma, s, tol, seed, cutoff, None)
                return _evaluate_node(params, sigma, s, psi)
            for s, node in zip(missing, gather_ordered(run, missing, threads)):
                cache[s] = node
        return [cache[s] for s in nodes]

    history = []
    panels = START_PANELS
    previous = None
    while True:
        nodes, weights = gauss_legendre_nodes(panels)
        evaluations = evaluate(nodes)
        identity = np.array([node.identity for node in evaluations])
        value = float(weights @ identity)
        history.append({"nodes": int(nodes.size), "G": value})
        logger.debug("adiabatic quadrature: %d nodes, G=%.12f", nodes.size, value)
        if previous is not None and abs(value - previous) < quad_tol:
            break
        if 2 * nodes.size > MAX_NODES:
            raise RefinementError(
                f"adiabatic quadrature not converged to {quad_tol:g} with {nodes.size} nodes",
                trace=history)
        previous = value
        panels *= 2

    direct = np.array([node.integrand for node in evaluations])
    if not np.all(np.isfinite(direct)) or not np.all(np.isfinite(identity)):
        raise RefinementError("adiabatic integrand is not finite at every node", trace=history)
    g_direct = float(weights @ direct)
    monotone = bool(np.all(np.diff(direct) <= MONOTONE_TOL))
    kinks = _kinks(nodes, direct)
    if kinks:
        logger.warning("integrand jumps near s=%s; optimizer may be non-unique there", kinks)
    if not monotone:
        logger.warning("coupling derivative increases along s for sigma=%s", sigma.tolist())

    return AdiabaticTrace(
        s_nodes=nodes,
        integrand_values=direct,
        identity_values=identity,
        optimizers=[node.optimizer for node in evaluations],
        G_value=value,
        G_direct=g_direct,
        F_reconstructed=free + explicit + value,
        virial_residuals=np.array([node.virial_residual for node in evaluations]),
        panels=panels,
        kinks=kinks,
        monotone=monotone,
        history=history,
    )


def ac_consistency(params: ModelParams, sigma, quad_tol: float = 1e-6, **options) -> float:
    """|G by the identity integrand - G by the direct integrand|."""
    trace = g_lambda(params, sigma, quad_tol, **options)
    return trace.consistency


def coupling_concavity(params: ModelParams, target: DensityPair, s_values, tol: float = 1e-10,
                       seed: int = 0, cutoff: int = None) -> np.ndarray:
    """
    Midpoint concavity residuals F(mid) - (F(a) + F(b)) / 2 of s -> F_LL^{s Lambda}
    for consecutive pairs a < b of s_values; all entries are >= 0 up to
    solver tolerance for a concave map.
    """
    s_values = np.sort(np.asarray(s_values, dtype=float))
    if s_values.size < 2:
        raise DomainError("coupling_concavity needs at least two coupling strengths")
    cutoff = cutoff or default_cutoff(params, target)

    def functional(s):
        model = params.scaled(float(s))
        if _uses_inverse_route(params, target.sigma):
            inverse = inverse_map(model, target, tol=tol, cutoff=cutoff)
            return inverse.spectral.ground_energy - inverse.potentials.v @ target.sigma \
                - inverse.potentials.j @ target.xi
        return fll_constrained_search(model, target, tol=max(tol, 1e-8), seed=seed,
                                      cutoff=cutoff, verify_cutoff=False).value

    ends = np.array([functional(s) for s in s_values])
    mids = np.array([functional(0.5 * (a + b)) for a, b in zip(s_values[:-1], s_values[1:])])
    residuals = mids - 0.5 * (ends[:-1] + ends[1:])
    if np.any(residuals < -math.sqrt(tol)):
        logger.warning("coupling path fails midpoint concavity by %.3e", -residuals.min())
    return residuals
