"""
Experiment configuration.

An experiment is described by a YAML document (keys in
``docs/workflow/configuration.md``). Every key can be overridden with a dotted
``key=value`` string whose value is parsed as a YAML scalar, e.g.
``scene.angular_noise_deg=5`` or ``algorithms=[wvwv]``.
"""

import copy
import hashlib
import json
import logging
import os
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Dict, Iterable, Optional, Tuple, Union

import yaml

from .errors import ConfigError, ReportIoError
from .meanshift import MeanShiftConfig
from .pose import POSE_WEIGHTINGS
from .synth import SceneConfig

logger = logging.getLogger(__name__)

ALGORITHMS = ("wvwv", "meanshift")
SWEEP_AXES = ("angular_noise_deg", "occlusion_fraction", "outlier_fraction")
REPORT_FORMATS = ("csv", "structured")
THREADS_ENV = "VOTECRAFT_THREADS"
FINGERPRINT_LENGTH = 16


@dataclass(frozen=True)
class OutputConfig:
    """Report destinations; ``None`` skips that format."""

    csv: Optional[str] = None
    structured: Optional[str] = None


@dataclass(frozen=True)
class ExperimentConfig:
    """
    A complete benchmark experiment.

    Parameters
    ----------
    scene : SceneConfig
        Scene parameters; its ``seed`` is replaced by ``master_seed``.
    algorithms : tuple of str
        Any of ``"wvwv"`` and ``"meanshift"``.
    trials : int
        Trials per cell, >= 1.
    timing_repetitions : int
        Repetitions per timed stage, >= 3; the median is reported.
    master_seed : int
        Seed of every random stream in the experiment.
    meanshift : dict
        Overrides for :class:`MeanShiftConfig`; the bandwidth defaults to 5% of
        the object diameter.
    pose_weighting : str
        ``"uniform"`` or ``"weight_mass"``.
    rank_tolerance : float
        Relative singular-value cut-off of the voting pseudoinverse.
    benchmark_mode : bool
        Serialize timed regions across concurrently running trials.
    threads : int, optional
        Trial worker threads; not part of the fingerprint.
    output : OutputConfig
        Report destinations; not part of the fingerprint.
    """

    scene: SceneConfig = field(default_factory=SceneConfig)
    algorithms: Tuple[str, ...] = ALGORITHMS
    trials: int = 20
    timing_repetitions: int = 5
    master_seed: int = 0
    meanshift: Dict[str, Any] = field(default_factory=dict)
    pose_weighting: str = "uniform"
    rank_tolerance: float = 1e-9
    benchmark_mode: bool = True
    threads: Optional[int] = None
    output: OutputConfig = field(default_factory=OutputConfig)

    def __post_init__(self):
        algorithms = (self.algorithms,) if isinstance(self.algorithms, str) else tuple(self.algorithms)
        if not algorithms:
            raise ConfigError("at least one algorithm is required")
        for name in algorithms:
            if name not in ALGORITHMS:
                raise ConfigError(f"unknown algorithm '{name}', expected one of {ALGORITHMS}")
        if len(set(algorithms)) != len(algorithms):
            raise ConfigError(f"algorithms listed twice: {algorithms}")
        object.__setattr__(self, "algorithms", algorithms)
        if self.trials < 1:
            raise ConfigError(f"trials must be >= 1, got {self.trials}")
        if self.timing_repetitions < 3:
            raise ConfigError(f"timing_repetitions must be >= 3, got {self.timing_repetitions}")
        if self.pose_weighting not in POSE_WEIGHTINGS:
            raise ConfigError(
                f"pose_weighting must be one of {POSE_WEIGHTINGS}, got '{self.pose_weighting}'"
            )
        if not self.rank_tolerance > 0:
            raise ConfigError(f"rank_tolerance must be positive, got {self.rank_tolerance}")
        if self.threads is not None and self.threads < 1:
            raise ConfigError(f"threads must be >= 1, got {self.threads}")
        unknown = set(self.meanshift) - {f.name for f in fields(MeanShiftConfig)}
        if unknown:
            raise ConfigError(f"unknown meanshift keys: {sorted(unknown)}")
        if self.scene.seed != self.master_seed:
            object.__setattr__(self, "scene", replace(self.scene, seed=self.master_seed))

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "ExperimentConfig":
        """Build from plain data, e.g. a parsed YAML document."""
        if not isinstance(data, dict):
            raise ConfigError(f"experiment config must be a mapping, got {type(data).__name__}")
        data = copy.deepcopy(data)
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            scene = data.pop("scene", None) or {}
            output = data.pop("output", None) or {}
            return cls(scene=SceneConfig(**scene), output=OutputConfig(**output), **data)
        except TypeError as e:
            raise ConfigError(f"invalid config: {e}") from e

    @classmethod
    def from_file(cls, path: Union[str, Path],
                  overrides: Iterable[str] = ()) -> "ExperimentConfig":
        """
        Read a YAML experiment file and apply ``key=value`` overrides.

        Raises
        ------
        ReportIoError
            If the file cannot be read.
        ConfigError
            If the document or an override is invalid.
        """
        try:
            with open(path) as f:
                data = yaml.safe_load(f)
        except OSError as e:
            raise ReportIoError(f"cannot read config '{path}': {e}") from e
        except yaml.YAMLError as e:
            raise ConfigError(f"config '{path}' is not valid YAML: {e}") from e
        data = apply_overrides(data or {}, overrides)
        config = cls.from_dict(data)
        logger.info("loaded experiment config %s (fingerprint %s)", path, config.fingerprint())
        return config

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data["algorithms"] = list(self.algorithms)
        return data

    def fingerprint(self) -> str:
        """
        Short SHA-256 of the configuration, ignoring outputs and thread count.

        Two configs that produce the same non-timing results share a fingerprint.
        """
        data = self.to_dict()
        data.pop("output")
        data.pop("threads")
        canonical = json.dumps(data, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:FINGERPRINT_LENGTH]

    def with_overrides(self, overrides: Iterable[str]) -> "ExperimentConfig":
        return ExperimentConfig.from_dict(apply_overrides(self.to_dict(), overrides))

    def meanshift_config(self, diameter: float) -> MeanShiftConfig:
        """MeanShift settings for an object, defaults scaled to its diameter."""
        settings = dict(self.meanshift)
        bandwidth = settings.pop("bandwidth", None)
        try:
            if bandwidth is None:
                return MeanShiftConfig.for_diameter(diameter, **settings)
            return MeanShiftConfig(bandwidth=bandwidth, **settings)
        except TypeError as e:
            raise ConfigError(f"invalid meanshift settings: {e}") from e


def parse_override(text: str) -> Tuple[Tuple[str, ...], Any]:
    """Split ``a.b=value`` into ``(("a", "b"), value)`` with a YAML-parsed value."""
    key, sep, raw = text.partition("=")
    key = key.strip().lstrip("-")
    if not sep or not key:
        raise ConfigError(f"override must look like key=value, got '{text}'")
    try:
        value = yaml.safe_load(raw) if raw.strip() else None
    except yaml.YAMLError as e:
        raise ConfigError(f"cannot parse override value in '{text}': {e}") from e
    return tuple(key.split(".")), value


def apply_overrides(data: Dict[str, Any], overrides: Iterable[str]) -> Dict[str, Any]:
    """Copy of ``data`` with each dotted override applied in order."""
    result = copy.deepcopy(data)
    for text in overrides:
        path, value = parse_override(text)
        node = result
        for part in path[:-1]:
            child = node.setdefault(part, {})
            if not isinstance(child, dict):
                raise ConfigError(f"override '{text}': '{part}' is not a section")
            node = child
        node[path[-1]] = value
    return result


def resolve_threads(cli_threads: Optional[int] = None,
                    config_threads: Optional[int] = None) -> int:
    """
    Worker thread count: the CLI flag, then ``VOTECRAFT_THREADS``, then the config,
    then the machine's CPU count.
    """
    if cli_threads is not None:
        threads = cli_threads
    elif os.environ.get(THREADS_ENV):
        try:
            threads = int(os.environ[THREADS_ENV])
        except ValueError as e:
            raise ConfigError(f"{THREADS_ENV} must be an integer, got '{os.environ[THREADS_ENV]}'") from e
    elif config_threads is not None:
        threads = config_threads
    else:
        threads = os.cpu_count() or 1
    if threads < 1:
        raise ConfigError(f"thread count must be >= 1, got {threads}")
    return threads
