"""
Computation Runner Service

Executes one subcommand over a validated RunConfig and returns a result
dictionary; the command-line layer (app.py) writes the files and archives
the run.

Result dictionaries:
    success (bool): False when a toolkit error stopped the computation
    tables (dict): name -> (header, rows) for CSV output
    summary (dict): JSON summary (no timings, so it is reproducible)
    plots (dict): name -> SVG text
    exit_code (int): 0, or the failing error's exit code
    error (str): message when success is False
    execution_log (list): step messages, copied into sidecars
"""

import importlib.metadata
import math
import os
import platform
import time

import numpy as np
import scipy

from config import RunConfig
from diagnostics import default_tolerance, hk_scan, run_battery
from exceptions import DickeDFTError
from formats.tables import (
    DIAGNOSE_HEADER,
    adiabatic_header,
    curve_header,
    functional_header,
    hk_scan_header,
    hyperplane_header,
    regular_grid_header,
    spectrum_header,
)
from geometry import component_signature, count_components, irregular_hyperplanes, is_regular
from hamiltonian import Potentials
from services.adiabatic import g_lambda
from services.functionals import (
    DensityPair,
    aufbau_index,
    default_cutoff,
    density_pair,
    fll_constrained_search,
    fll_curve,
    lieb_functional,
)
from services.spectral import converge_cutoff, default_degeneracy_tol
from svgplot import Series, render_line_plot
from utils import gather_ordered, get_logger, render_csv, render_json

logger = get_logger("runner")

ARRANGEMENTS = ("vertex", "diagonal")
COMMANDS = ("spectrum", "curve", "functional", "adiabatic", "regular-set", "diagnose", "hk-scan")


def versions() -> dict:
    def installed(name):
        try:
            return importlib.metadata.version(name)
        except importlib.metadata.PackageNotFoundError:
            return None

    return {
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "flask": installed("flask"),
        "flask_sqlalchemy": installed("flask-sqlalchemy"),
        "matplotlib": installed("matplotlib"),
    }


class ComputationRunner:
    """
    Runs the computational subcommands for one configuration.

    Attributes:
        config (RunConfig): validated configuration
        seed (int): seed for every stochastic step
        threads (int): worker count for independent evaluations
        execution_log (list): running log of the run
    """

    def __init__(self, config: RunConfig, seed: int = 0, threads: int = 1):
        self.config = config
        self.seed = int(seed)
        self.threads = max(1, int(threads))
        self.params = config.params()
        self.execution_log = []

    def _log(self, message: str):
        logger.info(message)
        self.execution_log.append(message)

    def _warn(self, message: str):
        logger.warning(message)
        self.execution_log.append(f"WARNING: {message}")

    def run(self, command: str) -> dict:
        """Dispatch a subcommand; toolkit errors become failed results."""
        handler = getattr(self, command.replace("-", "_"))
        self.execution_log = []
        self._log(f"{command}: N={self.params.n_spins}, M={self.params.n_modes}, "
                  f"seed={self.seed}, threads={self.threads}")
        try:
            result = handler()
        except DickeDFTError as err:
            self._log(f"{command} failed: {type(err).__name__}: {err}")
            return {
                "success": False,
                "error": f"{type(err).__name__}: {err}",
                "exit_code": err.exit_code,
                "tables": {},
                "summary": {},
                "plots": {},
                "execution_log": list(self.execution_log),
            }
        result.setdefault("plots", {})
        result.setdefault("exit_code", 0)
        result["success"] = True
        result["execution_log"] = list(self.execution_log)
        return result

    @property
    def _cutoff(self) -> int:
        return self.config.truncation.fock_cutoff

    # ==============================================================================
    # Subcommands
    # ==============================================================================

    def spectrum(self) -> dict:
        cfg = self.config
        pots = cfg.spectrum_potentials(self.params)
        spectral = converge_cutoff(self.params, pots, cfg.truncation.auto_converge_tol,
                                   k=cfg.spectrum.k, start_cutoff=self._cutoff,
                                   dimension_cap=cfg.truncation.cap())
        self._log(f"E0 = {spectral.ground_energy:.12f} at K={spectral.cutoff_used} "
                  f"(cutoffs tried: {spectral.passes})")
        ground = spectral.ground_energy
        tol_deg = default_degeneracy_tol(ground)
        rows = [[i, e, e - ground, spectral.cutoff_used, bool(e - ground <= tol_deg)]
                for i, e in enumerate(spectral.eigenvalues)]
        density = density_pair(spectral.ground_state)
        summary = {
            "model": self.params.to_dict(),
            "potentials": pots.to_dict(),
            "spectrum": spectral.to_dict(),
            "ground_density": density.to_dict(),
        }
        return {"tables": {"spectrum": (spectrum_header(), rows)}, "summary": summary}

    def curve(self) -> dict:
        cfg = self.config.curve
        p = self.params
        sigmas = np.linspace(cfg.sigma_min, cfg.sigma_max, cfg.points)
        if np.any(np.abs(sigmas) >= 1.0):
            self._warn("curve grid touches the cube boundary; those points are clamped")
        xi = np.array(cfg.xi if cfg.xi is not None else np.zeros(p.n_modes), dtype=float)
        rows = fll_curve(p, cfg.lambdas, sigmas, xi=xi, direction=cfg.direction, method=cfg.method,
                         tol=cfg.tol, seed=self.seed, threads=self.threads)
        self._log(f"evaluated {len(rows)} curve points over {len(cfg.lambdas)} coupling values")

        table = []
        series = []
        per_lambda = []
        for lam in cfg.lambdas:
            block = [r for r in rows if r["lambda"] == float(lam)]
            values = np.array([r["F"] for r in block])
            table.extend([[r["lambda"], *r["sigma"], *r["xi"], r["F"], *r["v"], *r["j"],
                           r["gap"], r["cutoff"], r["converged"]] for r in block])
            series.append(Series(f"lambda = {lam:g}", list(sigmas), list(values)))
            second = np.diff(values, 2) if values.size >= 3 else np.zeros(0)
            entry = {
                "lambda": float(lam),
                "min_second_difference": float(second.min()) if second.size else None,
                "F_at_center": float(values[int(np.argmin(np.abs(sigmas)))]),
                "converged": all(r["converged"] for r in block),
            }
            if np.allclose(sigmas, -sigmas[::-1]):
                entry["even_residual"] = float(np.max(np.abs(values - values[::-1])))
            per_lambda.append(entry)

        summary = {"model": p.to_dict(), "method": cfg.method, "points": int(sigmas.size),
                   "curves": per_lambda}
        svg = render_line_plot(series, "F(sigma, xi)", "sigma", "F")
        return {"tables": {"curve": (curve_header(p.n_spins, p.n_modes), table)},
                "summary": summary, "plots": {"curve": svg}}

    def functional(self) -> dict:
        cfg = self.config.functional
        p = self.params
        targets = [DensityPair(sigma, xi) for sigma, xi in self.config.functional_targets(p)]
        jobs = [(i, target, method) for i, target in enumerate(targets) for method in cfg.methods]

        def evaluate(job):
            _, target, method = job
            if method == "lieb":
                result = lieb_functional(p, target, tol=min(cfg.tol, 1e-10),
                                         cutoff=self._cutoff)
                index = 0 if result.metadata.get("degeneracy", 1) == 1 else None
            else:
                cutoff = max(self._cutoff, default_cutoff(p, target))
                result = fll_constrained_search(p, target, tol=cfg.tol, seed=self.seed,
                                                cutoff=cutoff)
                index = None
                if cfg.aufbau and result.multipliers.finite:
                    index = aufbau_index(p, result.multipliers, result.optimizer)
            return result, index

        outcomes = gather_ordered(evaluate, jobs, self.threads)
        rows = []
        entries = []
        for (i, target, method), (result, index) in zip(jobs, outcomes):
            v = result.multipliers.v if result.multipliers else np.full(p.n_spins, math.nan)
            j = result.multipliers.j if result.multipliers else np.full(p.n_modes, math.nan)
            rows.append([method, *target.sigma, *target.xi, result.value, *v, *j,
                         result.cutoff_used, result.converged, result.representable,
                         index if index is not None else ""])
            entries.append({"target": i, "density": target.to_dict(), "aufbau_index": index,
                            **result.to_dict()})
            self._log(f"target {i} {method}: F = {result.value:.12f}")
            if not result.converged:
                self._warn(f"target {i} {method} did not meet its tolerance")

        gaps = []
        if set(cfg.methods) >= {"lieb", "constrained"}:
            for i in range(len(targets)):
                values = {e["method"]: e["value"] for e in entries if e["target"] == i}
                gaps.append({"target": i,
                             "fll_minus_fl": values["constrained-search"] - values["legendre"]})
        summary = {"model": p.to_dict(), "results": entries, "gaps": gaps}
        return {"tables": {"functional": (functional_header(p.n_spins, p.n_modes), rows)},
                "summary": summary}

    def adiabatic(self) -> dict:
        cfg = self.config.adiabatic
        p = self.params
        sigmas = self.config.adiabatic_sigmas(p)
        xi = np.array(cfg.xi, dtype=float) if cfg.xi is not None else None

        def evaluate(sigma, threads=1):
            return g_lambda(p, sigma, cfg.quad_tol, xi, tol=cfg.tol, seed=self.seed,
                            chained=cfg.chained, threads=threads)

        if cfg.chained:
            traces = gather_ordered(evaluate, sigmas, self.threads)
        else:
            traces = [evaluate(sigma, self.threads) for sigma in sigmas]

        rows = []
        entries = []
        for i, (sigma, trace) in enumerate(zip(sigmas, traces)):
            rows.extend([[i + 1, s, value, identity, virial]
                         for s, value, identity, virial in trace.rows()])
            entries.append({"sigma": sigma.tolist(),
                            "xi": (xi if xi is not None else np.zeros(p.n_modes)).tolist(),
                            **trace.to_dict()})
            self._log(f"sigma={sigma.tolist()}: G = {trace.G_value:.10f}, "
                      f"consistency {trace.consistency:.2e}, {trace.s_nodes.size} nodes")
            for s in trace.kinks:
                self._warn(f"sigma={sigma.tolist()}: integrand jump near s={s:.4f}")
        summary = {"model": p.to_dict(), "quad_tol": cfg.quad_tol, "targets": entries}
        return {"tables": {"adiabatic": (adiabatic_header(), rows)}, "summary": summary}

    def regular_set(self) -> dict:
        cfg = self.config.regular_set
        n = cfg.n_spins or self.params.n_spins
        planes = irregular_hyperplanes(n, cfg.arrangement)
        rows = [[*plane.normal, plane.offset, _equation(plane)] for plane in planes]
        # both counts are reported; the diagonal one is the usual N = 3 picture
        counts = {name: count_components(n, cfg.samples, self.seed, name, threads=self.threads)
                  for name in ARRANGEMENTS}
        count = counts[cfg.arrangement]
        self._log(f"N={n} {cfg.arrangement} arrangement: {len(planes)} hyperplanes, "
                  f"{count} regular components (vertex {counts['vertex']}, "
                  f"diagonal {counts['diagonal']})")
        tables = {"regular_set": (hyperplane_header(n), rows)}

        if cfg.grid and n == 2:
            axis = np.linspace(-1.0, 1.0, cfg.grid)
            labels = {}
            grid_rows = []
            for a in axis:
                for b in axis:
                    point = np.array([a, b])
                    regular = is_regular(point, arrangement=cfg.arrangement)
                    label = ""
                    if regular:
                        signature = component_signature(point, cfg.arrangement)
                        label = labels.setdefault(signature, len(labels) + 1)
                    grid_rows.append([a, b, regular, label])
            tables["regular_set_grid"] = (regular_grid_header(), grid_rows)

        summary = {"n_spins": n, "arrangement": cfg.arrangement, "hyperplanes": len(planes),
                   "components": count, "components_by_arrangement": counts,
                   "samples": cfg.samples, "seed": self.seed,
                   "planes": [plane.to_dict() for plane in planes]}
        return {"tables": tables, "summary": summary}

    def diagnose(self) -> dict:
        cfg = self.config.diagnose
        tolerance = cfg.tolerance or default_tolerance(cfg.solver_tol)
        battery = run_battery(self.params, tolerance, self.seed, self.threads)
        failed = [r.name for r in battery.reports if not r.passed]
        self._log(f"{len(battery.reports)} checks, {len(failed)} failed")
        for name in failed:
            self._warn(f"check {name} failed")
        return {"tables": {"diagnose": (DIAGNOSE_HEADER, battery.rows())},
                "summary": {"model": self.params.to_dict(), "tolerance": tolerance,
                            **battery.to_dict()},
                "exit_code": 0 if battery.passed else 1}

    def hk_scan(self) -> dict:
        cfg = self.config.hk_scan
        p = self.params
        grid = [Potentials(np.full(p.n_spins, a), np.full(p.n_modes, b))
                for a in cfg.v_values for b in cfg.j_values]
        report = hk_scan(p, grid, cfg.tol, self.threads)
        rows = []
        for i, (pots, density) in enumerate(zip(grid, report.by_point)):
            if density is None:
                density = np.full(p.n_spins + p.n_modes, math.nan)
            rows.append([i, *pots.v, *pots.j, *density, i in report.skipped])
        self._log(f"{len(grid)} potentials, {len(report.collisions)} collisions, "
                  f"min separation {report.min_distance:.3e}")
        return {"tables": {"hk_scan": (hk_scan_header(p.n_spins, p.n_modes), rows)},
                "summary": {"model": p.to_dict(), "tol": cfg.tol, **report.to_dict()},
                "exit_code": 0 if report.passed else 1}


def _equation(plane) -> str:
    terms = [f"{c:+.6g}*sigma_{i + 1}" for i, c in enumerate(plane.normal) if c != 0.0]
    return f"{' '.join(terms)} = {plane.offset:.6g}"


# ==============================================================================
# Output files
# ==============================================================================

def write_outputs(command: str, result: dict, out_dir: str, fmt: str, sidecar: dict) -> list:
    """
    Write tables, summary and plots of a successful run.

    Returns:
        [(path, kind), ...] in write order, sidecars included.
    """
    os.makedirs(out_dir, exist_ok=True)
    stem = command.replace("-", "_")
    documents = []
    if fmt in ("csv", "svg"):
        for name, (header, rows) in result["tables"].items():
            documents.append((f"{name}.csv", "csv", render_csv(header, rows)))
    documents.append((f"{stem}.json", "json", render_json(result["summary"])))
    if fmt == "svg":
        for name, svg in result.get("plots", {}).items():
            documents.append((f"{name}.svg", "svg", svg))

    written = []
    for filename, kind, text in documents:
        path = os.path.join(out_dir, filename)
        with open(path, "w", encoding="utf-8", newline="\n") as handle:
            handle.write(text)
        meta_path = f"{path}.meta.json"
        with open(meta_path, "w", encoding="utf-8", newline="\n") as handle:
            handle.write(render_json(sidecar))
        written.extend([(path, kind), (meta_path, "meta")])
    return written


def sidecar(config: RunConfig, seed: int, started: float, execution_log: list) -> dict:
    return {
        "config": config.to_dict(),
        "seed": seed,
        "versions": versions(),
        "wall_time_s": time.perf_counter() - started,
        "execution_log": list(execution_log),
    }
