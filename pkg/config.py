"""
Run Configuration

JSON run configs are parsed into a tree of dataclasses. Every section and
key is checked against the dataclass fields; unknown keys, wrong types and
invalid model parameters raise ConfigError before anything is computed or
written. RunConfig.to_dict() returns a document load_run_config accepts,
which is what the output sidecars echo.

Process-wide settings come from the environment (a .env file is loaded
through python-dotenv):
- DICKE_DFT_THREADS: default worker count
- DICKE_DFT_DIMENSION_CAP: default basis dimension cap
- DICKE_DFT_DATABASE_URI: run archive location (read by create_app)
- DICKE_DFT_LOG_LEVEL: package log level (read by create_app)
"""

import json
import os
from dataclasses import MISSING, dataclass, field, fields
from typing import List, Optional

import numpy as np
from dotenv import load_dotenv

from exceptions import ConfigError
from hamiltonian import DEFAULT_DIMENSION_CAP, ModelParams, Potentials

load_dotenv()

OUTPUT_FORMATS = ("csv", "json", "svg")
FUNCTIONAL_METHODS = ("lieb", "constrained")


def env_threads() -> int:
    raw = os.getenv("DICKE_DFT_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError as err:
        raise ConfigError(f"DICKE_DFT_THREADS must be an integer, got {raw!r}") from err


def env_dimension_cap() -> int:
    raw = os.getenv("DICKE_DFT_DIMENSION_CAP")
    if raw is None:
        return DEFAULT_DIMENSION_CAP
    try:
        return int(float(raw))
    except ValueError as err:
        raise ConfigError(f"DICKE_DFT_DIMENSION_CAP must be a number, got {raw!r}") from err


def default_sigma(n_spins: int) -> np.ndarray:
    """Regular interior magnetization used when a config names none."""
    if n_spins == 1:
        return np.array([0.3])
    return np.linspace(0.4, -0.3, n_spins)


# ==============================================================================
# Sections
# ==============================================================================

@dataclass
class ModelConfig:
    n_spins: int = 1
    n_modes: int = 1
    coupling: List = field(default_factory=lambda: [1.0])
    tunneling: List[float] = field(default_factory=lambda: [1.0])

    def to_params(self) -> ModelParams:
        return ModelParams(self.n_spins, self.n_modes, self.coupling, self.tunneling)


@dataclass
class TruncationConfig:
    fock_cutoff: int = 12
    auto_converge_tol: Optional[float] = 1e-10
    dimension_cap: Optional[int] = None

    def cap(self) -> int:
        return self.dimension_cap if self.dimension_cap is not None else env_dimension_cap()


@dataclass
class SpectrumConfig:
    v: Optional[List[float]] = None
    j: Optional[List[float]] = None
    k: int = 1


@dataclass
class CurveConfig:
    lambdas: List[float] = field(default_factory=lambda: [0.0, 0.5, 1.0, 2.0])
    sigma_min: float = -0.99
    sigma_max: float = 0.99
    points: int = 41
    xi: Optional[List[float]] = None
    direction: Optional[List[float]] = None
    method: str = "lieb"
    tol: float = 1e-10


@dataclass
class TargetConfig:
    sigma: List[float] = field(default_factory=lambda: [0.5])
    xi: List[float] = field(default_factory=lambda: [0.0])


@dataclass
class FunctionalConfig:
    targets: List[TargetConfig] = field(default_factory=list)
    methods: List[str] = field(default_factory=lambda: ["lieb", "constrained"])
    tol: float = 1e-8
    aufbau: bool = True


@dataclass
class AdiabaticConfig:
    sigmas: List[List[float]] = field(default_factory=list)
    xi: Optional[List[float]] = None
    quad_tol: float = 1e-6
    tol: float = 1e-10
    chained: bool = True


@dataclass
class RegularSetConfig:
    n_spins: Optional[int] = None
    samples: int = 100_000
    arrangement: str = "vertex"
    grid: int = 0


@dataclass
class DiagnoseConfig:
    tolerance: Optional[float] = None
    solver_tol: float = 1e-10


@dataclass
class HKScanConfig:
    v_values: List[float] = field(default_factory=lambda: [-1.0, -0.5, 0.0, 0.5, 1.0])
    j_values: List[float] = field(default_factory=lambda: [-1.0, -0.5, 0.0, 0.5, 1.0])
    tol: float = 1e-7


@dataclass
class OutputConfig:
    out: Optional[str] = None
    format: Optional[str] = None
    seed: Optional[int] = None
    threads: Optional[int] = None


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    truncation: TruncationConfig = field(default_factory=TruncationConfig)
    spectrum: SpectrumConfig = field(default_factory=SpectrumConfig)
    curve: CurveConfig = field(default_factory=CurveConfig)
    functional: FunctionalConfig = field(default_factory=FunctionalConfig)
    adiabatic: AdiabaticConfig = field(default_factory=AdiabaticConfig)
    regular_set: RegularSetConfig = field(default_factory=RegularSetConfig)
    diagnose: DiagnoseConfig = field(default_factory=DiagnoseConfig)
    hk_scan: HKScanConfig = field(default_factory=HKScanConfig)
    output: OutputConfig = field(default_factory=OutputConfig)

    def params(self) -> ModelParams:
        return self.model.to_params()

    def to_dict(self) -> dict:
        return _dump(self)

    def functional_targets(self, params: ModelParams) -> list:
        """(sigma, xi) pairs; a single interior target when none are configured."""
        if self.functional.targets:
            return [(np.array(t.sigma, dtype=float), np.array(t.xi, dtype=float))
                    for t in self.functional.targets]
        return [(default_sigma(params.n_spins), np.zeros(params.n_modes))]

    def adiabatic_sigmas(self, params: ModelParams) -> list:
        if self.adiabatic.sigmas:
            return [np.array(sigma, dtype=float) for sigma in self.adiabatic.sigmas]
        return [default_sigma(params.n_spins)]

    def spectrum_potentials(self, params: ModelParams) -> Potentials:
        v = self.spectrum.v if self.spectrum.v is not None else np.zeros(params.n_spins)
        j = self.spectrum.j if self.spectrum.j is not None else np.zeros(params.n_modes)
        try:
            return Potentials(v, j).check(params)
        except Exception as err:
            raise ConfigError(f"spectrum potentials: {err}") from err


SECTION_TYPES = {
    "targets": TargetConfig,
}


# ==============================================================================
# Parsing
# ==============================================================================

def _dump(obj):
    if hasattr(obj, "__dataclass_fields__"):
        return {f.name: _dump(getattr(obj, f.name)) for f in fields(obj)}
    if isinstance(obj, list):
        return [_dump(item) for item in obj]
    return obj


def _check_value(path: str, value, default):
    if value is None:
        return value
    if isinstance(default, bool) and not isinstance(value, bool):
        raise ConfigError(f"{path} must be true or false")
    if isinstance(default, int) and not isinstance(default, bool):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{path} must be an integer")
    if isinstance(default, float) and (isinstance(value, bool) or not isinstance(value, (int, float))):
        raise ConfigError(f"{path} must be a number")
    if isinstance(default, str) and not isinstance(value, str):
        raise ConfigError(f"{path} must be a string")
    if isinstance(default, list) and not isinstance(value, list):
        raise ConfigError(f"{path} must be a list")
    return float(value) if isinstance(default, float) else value


def _build(cls, data, path: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{path or 'config'} must be an object")
    known = {f.name: f for f in fields(cls)}
    unknown = sorted(set(data) - set(known))
    if unknown:
        raise ConfigError(f"unknown key(s) in {path or 'config'}: {', '.join(unknown)}")

    instance = cls()
    for name, value in data.items():
        key = f"{path}.{name}" if path else name
        default = getattr(instance, name)
        if hasattr(default, "__dataclass_fields__"):
            value = _build(type(default), value, key)
        elif name in SECTION_TYPES:
            if not isinstance(value, list):
                raise ConfigError(f"{key} must be a list")
            value = [_build(SECTION_TYPES[name], item, f"{key}[{i}]") for i, item in enumerate(value)]
        else:
            value = _check_value(key, value, default)
        setattr(instance, name, value)
    return instance


def _validate(config: RunConfig):
    try:
        params = config.params()
    except ConfigError:
        raise
    except Exception as err:
        raise ConfigError(f"model: {err}") from err

    if config.truncation.fock_cutoff < 2:
        raise ConfigError("truncation.fock_cutoff must be at least 2")
    if config.output.format is not None and config.output.format not in OUTPUT_FORMATS:
        raise ConfigError(f"output.format must be one of {', '.join(OUTPUT_FORMATS)}")
    if config.output.threads is not None and config.output.threads < 1:
        raise ConfigError("output.threads must be positive")
    if config.curve.method not in FUNCTIONAL_METHODS:
        raise ConfigError(f"curve.method must be one of {', '.join(FUNCTIONAL_METHODS)}")
    if config.curve.points < 2:
        raise ConfigError("curve.points must be at least 2")
    for method in config.functional.methods:
        if method not in FUNCTIONAL_METHODS:
            raise ConfigError(f"functional.methods: unknown method {method!r}")
    for i, target in enumerate(config.functional.targets):
        if len(target.sigma) != params.n_spins or len(target.xi) != params.n_modes:
            raise ConfigError(f"functional.targets[{i}] does not match the model size")
    for i, sigma in enumerate(config.adiabatic.sigmas):
        if len(sigma) != params.n_spins:
            raise ConfigError(f"adiabatic.sigmas[{i}] does not match the model size")
    if config.regular_set.arrangement not in ("vertex", "diagonal"):
        raise ConfigError("regular_set.arrangement must be 'vertex' or 'diagonal'")
    config.spectrum_potentials(params)
    return config


def parse_run_config(data: dict) -> RunConfig:
    """Build and validate a RunConfig from a decoded JSON document."""
    return _validate(_build(RunConfig, data, ""))


def load_run_config(path: Optional[str]) -> RunConfig:
    """
    Read a JSON run config; None gives the defaults (single spin and mode, lambda = t = 1).

    Raises:
        ConfigError: unreadable file, invalid JSON, unknown keys or bad values.
    """
    if path is None:
        return _validate(RunConfig())
    try:
        with open(path, "r", encoding="utf-8") as handle:
            data = json.load(handle)
    except OSError as err:
        raise ConfigError(f"cannot read config {path}: {err}") from err
    except json.JSONDecodeError as err:
        raise ConfigError(f"config {path} is not valid JSON: {err}") from err
    return parse_run_config(data)
