"""Flat ``key = value`` experiment configuration.

A config file holds one ``key = value`` pair per line; ``#`` starts a comment.
Command-line overrides are applied on top and always win. Every validation
error names the offending key and, for file input, the source line.
"""

from __future__ import annotations

import dataclasses
import enum
import math
import os
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Mapping, Optional, Tuple

from ..dynamics import ModelParams
from ..spin_algebra import validate_spin

__all__ = [
    "Scenario",
    "OutputFormat",
    "ConfigError",
    "ExperimentConfig",
    "parse_config_text",
    "load_config",
    "load_profile",
    "available_profiles",
    "build_config",
    "WORKERS_ENV",
]

WORKERS_ENV = "SPINFILTER_WORKERS"


class Scenario(str, enum.Enum):
    QCR_SWEEP = "qcr-sweep"
    PF_SWEEP = "pf-sweep"
    KALMAN = "kalman"
    QFUNCTION = "qfunction"
    TRAJECTORY = "trajectory"


class OutputFormat(str, enum.Enum):
    CSV = "csv"
    JSON = "json"


class ConfigError(ValueError):
    """Invalid configuration; ``key`` and ``line`` locate the problem when known."""

    def __init__(self, message: str, key: Optional[str] = None, line: Optional[int] = None,
                 source: Optional[str] = None):
        self.key, self.line, self.source = key, line, source
        where = []
        if source is not None:
            where.append(f"{source}:{line}" if line is not None else source)
        elif line is not None:
            where.append(f"line {line}")
        if key is not None:
            where.append(f"key {key!r}")
        super().__init__(f"{', '.join(where)}: {message}" if where else message)


def _f_list(text: str) -> Tuple[float, ...]:
    items = [s for s in text.replace(" ", "").split(",") if s]
    if not items:
        raise ValueError("F_list must not be empty")
    return tuple(validate_spin(float(s)) for s in items)


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _int(text: str) -> int:
    v = float(text)
    if v != int(v):
        raise ValueError(f"not an integer: {text!r}")
    return int(v)


@dataclass(frozen=True)
class ExperimentConfig:
    """Validated experiment settings.

    Physics defaults are the reference desk-scale values: ``M = 10``,
    ``K = 6e-4``, ``dt = 1e-5``, ``t_final = 0.1``, ``deltaB = 5e-4`` and a
    ``Normal(0, 10)`` field prior. ``theta_var`` is the initial Kalman angle
    variance; ``None`` means the coherent-state value ``1/(2F)``.
    ``baseline_single_pass`` reruns sweeps with ``K = 0`` on the same seeds.
    ``batch_size`` groups trajectories into jobs; it is part of the numerical
    recipe and must stay fixed for reproducible output, while ``workers`` never
    changes the numbers.
    """

    scenario: Scenario = Scenario.QCR_SWEEP
    F_list: Tuple[float, ...] = (10.0, 20.0, 30.0, 40.0, 50.0, 60.0)
    M: float = 10.0
    K: float = 6e-4
    B: float = 0.0
    gamma: float = 1.0
    dt: float = 1e-5
    t_final: float = 0.1
    deltaB: float = 5e-4
    n_trajectories: int = 20
    n_particles: int = 200
    prior_mean: float = 0.0
    prior_var: float = 10.0
    base_seed: int = 0
    workers: int = 1
    output_path: Optional[str] = None
    output_format: OutputFormat = OutputFormat.CSV
    baseline_single_pass: bool = False
    weight_scheme: str = "euler"
    theta_var: Optional[float] = None
    stride: int = 100
    batch_size: int = 10
    n_theta: int = 100
    n_phi: int = 200
    dump_state: bool = False

    def __post_init__(self):
        # accept plain strings and lists from Python callers
        for key, kind in (("scenario", Scenario), ("output_format", OutputFormat)):
            try:
                object.__setattr__(self, key, kind(getattr(self, key)))
            except ValueError as exc:
                raise ConfigError(str(exc), key=key) from None
        object.__setattr__(self, "F_list", tuple(float(F) for F in self.F_list))
        _validate(self)

    def model(self, F: float, K: Optional[float] = None) -> ModelParams:
        return ModelParams(F=F, M=self.M, K=self.K if K is None else K, B=self.B, gamma=self.gamma,
                           dt=self.dt, t_final=self.t_final)

    @property
    def output(self) -> Path:
        if self.output_path:
            return Path(self.output_path)
        return Path("results") / f"{self.scenario.value}.{self.output_format.value}"

    def as_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["scenario"] = self.scenario.value
        d["output_format"] = self.output_format.value
        d["F_list"] = list(self.F_list)
        return d


_PARSERS = {
    "scenario": Scenario,
    "F_list": _f_list,
    "M": float,
    "K": float,
    "B": float,
    "gamma": float,
    "dt": float,
    "t_final": float,
    "deltaB": float,
    "n_trajectories": _int,
    "n_particles": _int,
    "prior_mean": float,
    "prior_var": float,
    "base_seed": _int,
    "workers": _int,
    "output_path": str,
    "output_format": OutputFormat,
    "baseline_single_pass": _bool,
    "weight_scheme": str,
    "theta_var": lambda s: None if s.strip().lower() in ("", "none") else float(s),
    "stride": _int,
    "batch_size": _int,
    "n_theta": _int,
    "n_phi": _int,
    "dump_state": _bool,
}


def _validate(c: ExperimentConfig) -> None:
    def need(ok, key, msg):
        if not ok:
            raise ConfigError(msg, key=key)

    for key in ("M", "K", "B", "gamma", "dt", "t_final", "deltaB", "prior_mean", "prior_var"):
        need(math.isfinite(getattr(c, key)), key, "must be finite")
    need(c.M >= 0, "M", "rate must be >= 0")
    need(c.K >= 0, "K", "rate must be >= 0")
    need(c.dt > 0, "dt", "must be > 0")
    need(c.t_final > 0, "t_final", "must be > 0")
    need(round(c.t_final / c.dt) >= 1, "t_final", "shorter than one step")
    need(c.deltaB > 0, "deltaB", "must be > 0")
    need(c.prior_var > 0, "prior_var", "must be > 0")
    need(len(c.F_list) > 0, "F_list", "must not be empty")
    for F in c.F_list:
        try:
            validate_spin(F)
        except ValueError as exc:
            raise ConfigError(str(exc), key="F_list") from None
    need(c.n_trajectories >= 1, "n_trajectories", "must be >= 1")
    need(c.n_particles >= 1, "n_particles", "must be >= 1")
    need(c.base_seed >= 0, "base_seed", "must be >= 0")
    need(c.workers >= 1, "workers", "must be >= 1")
    need(c.stride >= 1, "stride", "must be >= 1")
    need(c.batch_size >= 1, "batch_size", "must be >= 1")
    need(c.n_theta >= 2 and c.n_phi >= 2, "n_theta", "grid needs at least 2x2 nodes")
    need(c.weight_scheme in ("euler", "likelihood"), "weight_scheme", "must be 'euler' or 'likelihood'")
    need(c.theta_var is None or c.theta_var >= 0, "theta_var", "must be >= 0")
    if c.scenario in (Scenario.QCR_SWEEP, Scenario.PF_SWEEP):
        need(c.n_trajectories >= 2, "n_trajectories", "sweeps need at least 2 trajectories")


def _convert(key: str, raw: str, line=None, source=None):
    if key not in _PARSERS:
        raise ConfigError("unknown key", key=key, line=line, source=source)
    try:
        return _PARSERS[key](raw.strip())
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"bad value {raw.strip()!r} ({exc})", key=key, line=line, source=source) from None


def parse_config_text(text: str, source: str = "<config>") -> dict:
    """Parse ``key = value`` lines into typed values, keyed by field name."""
    out, seen = {}, {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError("expected 'key = value'", line=lineno, source=source)
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ConfigError("missing key", line=lineno, source=source)
        if key in seen:
            raise ConfigError(f"duplicate key (first set on line {seen[key]})", key=key, line=lineno, source=source)
        seen[key] = lineno
        out[key] = _convert(key, value, lineno, source)
    return out


def load_config(path) -> dict:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}", source=str(path)) from None
    return parse_config_text(text, str(path))


def available_profiles():
    root = resources.files(__package__) / "profiles"
    return sorted(p.name[:-4] for p in root.iterdir() if p.name.endswith(".cfg"))


def load_profile(name: str) -> dict:
    """Values from a shipped profile such as ``desk-qcr`` or ``full-pf``."""
    res = resources.files(__package__) / "profiles" / f"{name}.cfg"
    if not res.is_file():
        raise ConfigError(f"unknown profile {name!r}; available: {', '.join(available_profiles())}")
    return parse_config_text(res.read_text(), f"profile:{name}")


def build_config(file_values: Optional[Mapping] = None, overrides: Optional[Mapping] = None,
                 env: Optional[Mapping[str, str]] = None) -> ExperimentConfig:
    """Merge defaults, file values, the worker env fallback and overrides (in rising priority).

    Override values may be strings (parsed like file values) or typed values.
    """
    values = dict(file_values or {})
    env = os.environ if env is None else env
    if "workers" not in values and env.get(WORKERS_ENV):
        values["workers"] = _convert("workers", env[WORKERS_ENV], source=f"${WORKERS_ENV}")
    for key, v in (overrides or {}).items():
        if v is None:
            continue
        values[key] = _convert(key, v, source="command line") if isinstance(v, str) else v
    unknown = set(values) - set(_PARSERS)
    if unknown:
        raise ConfigError("unknown key", key=sorted(unknown)[0])
    return ExperimentConfig(**values)
