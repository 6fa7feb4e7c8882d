"""
Benchmark harness: closed-form voting against the MeanShift baseline.

Each trial generates one scene and runs every configured algorithm on that same
scene object through a small pipeline board::

    scene --vote--> keypoints --fit--> pose --evaluate--> errors

``vote`` and ``fit`` are timed separately (median of ``timing_repetitions``
runs); scene generation happens before any timed region. Reports are sorted by
trial id and algorithm before they are written, so results do not depend on how
trials were scheduled.
"""

import csv
import logging
import statistics
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any, Dict, List, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np
import yaml

from .board import PipelineBoard
from .config import ALGORITHMS, REPORT_FORMATS, SWEEP_AXES, ExperimentConfig
from .errors import (
    DegenerateGeometry,
    DegenerateProblem,
    DegenerateScene,
    InvalidInput,
    ReportIoError,
    TooFewCorrespondences,
)
from .geometry import RigidTransform
from .meanshift import MeanShiftConfig, cluster_all_keypoints
from .metrics import (
    PoseError,
    add_0_1d_accuracy,
    auc,
    evaluate_pose,
    keypoint_errors,
)
from .oracles import SelftestReport
from .oracles import selftest as _oracle_selftest
from .pose import estimate_pose, keypoint_weights
from .stage import Stage
from .synth import SyntheticScene, build_object, generate_scene
from .voting import Frame, KeypointSet, vote_all_keypoints

logger = logging.getLogger(__name__)

CSV_COLUMNS = ("trial", "algorithm", "kp_rmse_m", "add_m", "adds_m",
               "vote_time_ns", "fit_time_ns", "rank_flags")
BASELINE = "meanshift"
DEGENERATE_FLAG = "x"
NO_RANK_FLAG = "-"
REPORT_FORMAT_TAG = "votecraft-report"

# Failures that make a trial degenerate rather than abort the experiment.
TRIAL_FAILURES = (DegenerateProblem, DegenerateScene, DegenerateGeometry, TooFewCorrespondences)


@dataclass(frozen=True)
class TrialReport:
    """
    Outcome of one algorithm on one trial.

    Errors are in metres and times in nanoseconds. A degenerate trial has
    ``degenerate=True``, a ``failure`` message and no errors or times.
    ``ranks`` holds the normal-matrix rank per keypoint for voting and is
    ``None`` for MeanShift.
    """

    trial: int
    algorithm: str
    kp_rmse_m: Optional[float] = None
    keypoint_errors_m: Tuple[float, ...] = ()
    add_m: Optional[float] = None
    adds_m: Optional[float] = None
    vote_time_ns: Optional[int] = None
    fit_time_ns: Optional[int] = None
    ranks: Optional[Tuple[int, ...]] = None
    degenerate: bool = False
    failure: str = ""
    config_fingerprint: str = ""
    diameter_m: float = 0.0
    symmetric: bool = False

    @property
    def pose_error_m(self) -> Optional[float]:
        """ADD-S for symmetric objects, ADD otherwise."""
        return self.adds_m if self.symmetric else self.add_m

    @property
    def rank_flags(self) -> str:
        if self.degenerate:
            return DEGENERATE_FLAG
        if self.ranks is None:
            return NO_RANK_FLAG
        return "|".join(str(r) for r in self.ranks)


class VoteResult(NamedTuple):
    keypoints: KeypointSet
    ranks: Optional[Tuple[int, ...]]
    pose_weights: np.ndarray


class Evaluation(NamedTuple):
    pose_error: PoseError
    keypoint_errors: np.ndarray


def make_vote_comp(algorithm: str, config: ExperimentConfig,
                   meanshift_config: Optional[MeanShiftConfig]):
    """The ``vote`` stage computation for an algorithm."""
    if algorithm == "wvwv":
        def vote(scene: SyntheticScene) -> VoteResult:
            estimates = vote_all_keypoints(scene.problem, config.rank_tolerance)
            return VoteResult(KeypointSet.from_estimates(estimates),
                              tuple(e.normal_matrix_rank for e in estimates),
                              keypoint_weights(estimates, config.pose_weighting))
        return vote
    if algorithm == "meanshift":
        def cluster(scene: SyntheticScene) -> VoteResult:
            results = cluster_all_keypoints(scene.problem, scene.offsets, meanshift_config)
            modes = np.stack([r.mode for r in results])
            return VoteResult(KeypointSet(modes, Frame.CAMERA), None, np.ones(len(results)))
        return cluster
    raise InvalidInput(f"unknown algorithm '{algorithm}', expected one of {ALGORITHMS}")


def _fit(vote: VoteResult, scene: SyntheticScene) -> RigidTransform:
    return estimate_pose(vote.keypoints, scene.model_keypoints, vote.pose_weights)


def _evaluate(pose: RigidTransform, vote: VoteResult, scene: SyntheticScene) -> Evaluation:
    return Evaluation(
        evaluate_pose(scene.model, pose, scene.truth_pose,
                      vote.keypoints, scene.truth_keypoints_camera),
        keypoint_errors(vote.keypoints, scene.truth_keypoints_camera),
    )


def build_trial_board(algorithm: str, config: ExperimentConfig,
                      meanshift_config: Optional[MeanShiftConfig] = None,
                      timing_lock: Optional[threading.Lock] = None) -> PipelineBoard:
    """
    Pipeline board for one algorithm; set the ``scene`` slot, then solve.

    Parameters
    ----------
    algorithm : str
        ``"wvwv"`` or ``"meanshift"``.
    config : ExperimentConfig
        Supplies repetitions, rank tolerance and pose weighting.
    meanshift_config : MeanShiftConfig, optional
        Required for ``"meanshift"``.
    timing_lock : threading.Lock, optional
        Shared lock serializing timed stages across threads.
    """
    if algorithm == "meanshift" and meanshift_config is None:
        raise InvalidInput("meanshift needs a MeanShiftConfig")
    repetitions = config.timing_repetitions
    board = PipelineBoard(name=f"trial_{algorithm}", timing_lock=timing_lock)
    for slot in ("scene", "keypoints", "pose", "errors"):
        board.add_slot(slot)
    board.add_stage(Stage("vote", ["scene"], "keypoints",
                          make_vote_comp(algorithm, config, meanshift_config),
                          repetitions=repetitions, exclusive=True))
    board.add_stage(Stage("fit", ["keypoints", "scene"], "pose", _fit,
                          repetitions=repetitions, exclusive=True))
    board.add_stage(Stage("evaluate", ["pose", "keypoints", "scene"], "errors", _evaluate))
    board.finalize_model()
    return board


def run_trial_algorithm(scene: SyntheticScene, algorithm: str, config: ExperimentConfig,
                        meanshift_config: Optional[MeanShiftConfig] = None,
                        timing_lock: Optional[threading.Lock] = None) -> TrialReport:
    """Run one algorithm on an already generated scene."""
    common = dict(trial=scene.trial_index, algorithm=algorithm,
                  config_fingerprint=config.fingerprint(),
                  diameter_m=scene.model.diameter, symmetric=scene.model.symmetric)
    board = build_trial_board(algorithm, config, meanshift_config, timing_lock)
    board.set_slot("scene", scene)
    try:
        board.solve()
    except TRIAL_FAILURES as e:
        logger.warning("trial %d (%s) degenerate: %s", scene.trial_index, algorithm, e)
        return TrialReport(degenerate=True, failure=str(e), **common)

    vote: VoteResult = board.get("keypoints")
    evaluation: Evaluation = board.get("errors")
    return TrialReport(
        kp_rmse_m=evaluation.pose_error.keypoint_rmse,
        keypoint_errors_m=tuple(float(e) for e in evaluation.keypoint_errors),
        add_m=evaluation.pose_error.add,
        adds_m=evaluation.pose_error.add_s,
        vote_time_ns=board.timings_ns["vote"],
        fit_time_ns=board.timings_ns["fit"],
        ranks=vote.ranks,
        **common,
    )


def run_experiment(config: ExperimentConfig) -> List[TrialReport]:
    """
    Run every trial of an experiment.

    Trials run on ``config.threads`` worker threads (sequentially when unset);
    within a trial the algorithms share one scene object.

    Returns
    -------
    List[TrialReport]
        Sorted by trial id, then wvwv before meanshift.
    """
    model, model_keypoints = build_object(config.scene)
    meanshift_config = None
    if "meanshift" in config.algorithms:
        meanshift_config = config.meanshift_config(model.diameter)
    timing_lock = threading.Lock() if config.benchmark_mode else None
    fingerprint = config.fingerprint()

    def run_trial(trial: int) -> List[TrialReport]:
        try:
            scene = generate_scene(config.scene, trial, (model, model_keypoints))
        except DegenerateScene as e:
            logger.warning("trial %d: %s", trial, e)
            return [TrialReport(trial=trial, algorithm=a, degenerate=True, failure=str(e),
                                config_fingerprint=fingerprint, diameter_m=model.diameter,
                                symmetric=model.symmetric)
                    for a in config.algorithms]
        return [run_trial_algorithm(scene, a, config, meanshift_config, timing_lock)
                for a in config.algorithms]

    threads = config.threads or 1
    logger.info("running %d trials x %s on %d thread(s), fingerprint %s",
                config.trials, list(config.algorithms), threads, fingerprint)
    if threads == 1:
        per_trial = [run_trial(t) for t in range(config.trials)]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            per_trial = list(pool.map(run_trial, range(config.trials)))

    return _sorted([r for trial_reports in per_trial for r in trial_reports])


# Reports

def _format_number(value: Optional[Union[float, int]]) -> str:
    if value is None:
        return ""
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return format(float(value), ".17g")


def _provenance(reports: Sequence[TrialReport]) -> Dict[str, Any]:
    fingerprints = {r.config_fingerprint for r in reports}
    if len(fingerprints) != 1:
        raise InvalidInput(f"reports come from different configs: {sorted(fingerprints)}")
    first = reports[0]
    return {"config_fingerprint": first.config_fingerprint,
            "diameter_m": first.diameter_m,
            "symmetric": first.symmetric}


def _algorithm_rank(name: str) -> int:
    return ALGORITHMS.index(name) if name in ALGORITHMS else len(ALGORITHMS)


def _sorted(reports: Sequence[TrialReport]) -> List[TrialReport]:
    return sorted(reports, key=lambda r: (r.trial, _algorithm_rank(r.algorithm), r.algorithm))


def write_csv_report(reports: Sequence[TrialReport], path: Union[str, Path]) -> None:
    provenance = _provenance(reports)
    with open(path, "w", newline="") as f:
        f.write(f"# config_fingerprint={provenance['config_fingerprint']}\n")
        f.write(f"# diameter_m={_format_number(provenance['diameter_m'])}\n")
        f.write(f"# symmetric={str(provenance['symmetric']).lower()}\n")
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for r in reports:
            writer.writerow([r.trial, r.algorithm, _format_number(r.kp_rmse_m),
                             _format_number(r.add_m), _format_number(r.adds_m),
                             _format_number(r.vote_time_ns), _format_number(r.fit_time_ns),
                             r.rank_flags])


def report_document(reports: Sequence[TrialReport]) -> Dict[str, Any]:
    """Plain-data structured report, as written in the ``structured`` format."""
    document: Dict[str, Any] = {"format": REPORT_FORMAT_TAG, "version": 1}
    document.update(_provenance(reports))
    document["reports"] = [
        {
            "trial": r.trial,
            "algorithm": r.algorithm,
            "degenerate": r.degenerate,
            "failure": r.failure,
            "kp_rmse_m": r.kp_rmse_m,
            "keypoint_errors_m": list(r.keypoint_errors_m),
            "add_m": r.add_m,
            "adds_m": r.adds_m,
            "vote_time_ns": r.vote_time_ns,
            "fit_time_ns": r.fit_time_ns,
            "ranks": None if r.ranks is None else list(r.ranks),
        }
        for r in reports
    ]
    return document


def emit_report(reports: Sequence[TrialReport], fmt: str, path: Union[str, Path]) -> Path:
    """
    Write reports as ``"csv"`` or ``"structured"`` (YAML).

    Both formats carry the config fingerprint. Reports are sorted by trial id
    first.

    Raises
    ------
    InvalidInput
        If ``reports`` is empty, mixes configs or ``fmt`` is unknown.
    ReportIoError
        If the file cannot be written.
    """
    if not reports:
        raise InvalidInput("no reports to emit")
    if fmt not in REPORT_FORMATS:
        raise InvalidInput(f"report format must be one of {REPORT_FORMATS}, got '{fmt}'")
    reports = _sorted(reports)
    path = Path(path)
    try:
        if fmt == "csv":
            write_csv_report(reports, path)
        else:
            with open(path, "w") as f:
                yaml.safe_dump(report_document(reports), f, sort_keys=False)
    except OSError as e:
        raise ReportIoError(f"cannot write report '{path}': {e}") from e
    logger.info("wrote %d reports to %s", len(reports), path)
    return path


def _parse_optional(text: str, kind=float):
    return kind(text) if text != "" else None


def _parse_ranks(flags: str) -> Tuple[Optional[Tuple[int, ...]], bool]:
    if flags == DEGENERATE_FLAG:
        return None, True
    if flags == NO_RANK_FLAG:
        return None, False
    return tuple(int(r) for r in flags.split("|")), False


def read_csv_report(path: Union[str, Path]) -> List[TrialReport]:
    provenance: Dict[str, str] = {}
    with open(path, newline="") as f:
        lines = f.read().splitlines()
    body = []
    for line in lines:
        if line.startswith("#"):
            key, _, value = line[1:].strip().partition("=")
            provenance[key.strip()] = value.strip()
        elif line:
            body.append(line)
    rows = list(csv.reader(body))
    if not rows or tuple(rows[0]) != CSV_COLUMNS:
        raise InvalidInput(f"'{path}' does not have the report columns {CSV_COLUMNS}")

    common = dict(config_fingerprint=provenance.get("config_fingerprint", ""),
                  diameter_m=float(provenance.get("diameter_m", 0.0)),
                  symmetric=provenance.get("symmetric", "false") == "true")
    reports = []
    for row in rows[1:]:
        record = dict(zip(CSV_COLUMNS, row))
        ranks, degenerate = _parse_ranks(record["rank_flags"])
        reports.append(TrialReport(
            trial=int(record["trial"]),
            algorithm=record["algorithm"],
            kp_rmse_m=_parse_optional(record["kp_rmse_m"]),
            add_m=_parse_optional(record["add_m"]),
            adds_m=_parse_optional(record["adds_m"]),
            vote_time_ns=_parse_optional(record["vote_time_ns"], int),
            fit_time_ns=_parse_optional(record["fit_time_ns"], int),
            ranks=ranks,
            degenerate=degenerate,
            failure="degenerate" if degenerate else "",
            **common,
        ))
    return reports


def read_structured_report(path: Union[str, Path]) -> List[TrialReport]:
    with open(path) as f:
        document = yaml.safe_load(f)
    if not isinstance(document, dict) or document.get("format") != REPORT_FORMAT_TAG:
        raise InvalidInput(f"'{path}' is not a structured votecraft report")
    common = dict(config_fingerprint=document["config_fingerprint"],
                  diameter_m=float(document["diameter_m"]),
                  symmetric=bool(document["symmetric"]))
    reports = []
    for entry in document["reports"]:
        ranks = entry.get("ranks")
        reports.append(TrialReport(
            trial=int(entry["trial"]),
            algorithm=entry["algorithm"],
            kp_rmse_m=entry.get("kp_rmse_m"),
            keypoint_errors_m=tuple(entry.get("keypoint_errors_m") or ()),
            add_m=entry.get("add_m"),
            adds_m=entry.get("adds_m"),
            vote_time_ns=entry.get("vote_time_ns"),
            fit_time_ns=entry.get("fit_time_ns"),
            ranks=None if ranks is None else tuple(ranks),
            degenerate=bool(entry.get("degenerate", False)),
            failure=entry.get("failure", ""),
            **common,
        ))
    return reports


def read_report(path: Union[str, Path]) -> List[TrialReport]:
    """
    Parse a CSV or structured report written by :func:`emit_report`.

    The format is taken from the extension (``.yaml``/``.yml`` are structured).
    CSV reports carry no per-keypoint errors.

    Raises
    ------
    ReportIoError
        If the file cannot be read.
    InvalidInput
        If it is not a votecraft report.
    """
    path = Path(path)
    try:
        if path.suffix.lower() in (".yaml", ".yml"):
            return read_structured_report(path)
        return read_csv_report(path)
    except OSError as e:
        raise ReportIoError(f"cannot read report '{path}': {e}") from e
    except (KeyError, ValueError, yaml.YAMLError) as e:
        if isinstance(e, InvalidInput):
            raise
        raise InvalidInput(f"malformed report '{path}': {e}") from e


# Summaries

@dataclass(frozen=True)
class AlgorithmSummary:
    """
    Aggregates of one algorithm's trials.

    Failed trials count as misses in ``auc_add`` and ``add_0_1d``; the error and
    time aggregates cover the successful trials and are ``None`` when there are
    none. ``speedup`` is the baseline median voting time over this algorithm's,
    present only for ``wvwv`` when the baseline ran too.
    """

    algorithm: str
    trials: int
    failures: int
    mean_kp_rmse_m: Optional[float]
    median_kp_rmse_m: Optional[float]
    auc_add: float
    add_0_1d: float
    median_vote_time_ns: Optional[float]
    median_fit_time_ns: Optional[float]
    speedup: Optional[float] = None

    @property
    def failure_rate(self) -> float:
        return self.failures / self.trials


@dataclass(frozen=True)
class Summary:
    config_fingerprint: str
    rows: Tuple[AlgorithmSummary, ...]

    @property
    def has_speedup(self) -> bool:
        return any(row.speedup is not None for row in self.rows)

    def row(self, algorithm: str) -> AlgorithmSummary:
        for row in self.rows:
            if row.algorithm == algorithm:
                return row
        raise KeyError(algorithm)


def _median(values: List[float]) -> Optional[float]:
    return float(statistics.median(values)) if values else None


def _summarize_algorithm(algorithm: str, reports: List[TrialReport]) -> AlgorithmSummary:
    ok = [r for r in reports if not r.degenerate]
    kp = [r.kp_rmse_m for r in ok]
    pose_errors = [r.pose_error_m if not r.degenerate else np.inf for r in reports]
    return AlgorithmSummary(
        algorithm=algorithm,
        trials=len(reports),
        failures=len(reports) - len(ok),
        mean_kp_rmse_m=float(np.mean(kp)) if kp else None,
        median_kp_rmse_m=_median(kp),
        auc_add=auc(pose_errors),
        add_0_1d=add_0_1d_accuracy(pose_errors, reports[0].diameter_m),
        median_vote_time_ns=_median([r.vote_time_ns for r in ok]),
        median_fit_time_ns=_median([r.fit_time_ns for r in ok]),
    )


def summarize(reports: Sequence[TrialReport], baseline: str = BASELINE) -> Summary:
    """
    Per-algorithm aggregates of an experiment.

    Raises
    ------
    InvalidInput
        If ``reports`` is empty or mixes config fingerprints.
    """
    if not reports:
        raise InvalidInput("no reports to summarize")
    fingerprint = _provenance(reports)["config_fingerprint"]
    by_algorithm: Dict[str, List[TrialReport]] = {}
    for r in _sorted(reports):
        by_algorithm.setdefault(r.algorithm, []).append(r)
    rows = {name: _summarize_algorithm(name, group) for name, group in by_algorithm.items()}

    if baseline in rows and "wvwv" in rows:
        base_time = rows[baseline].median_vote_time_ns
        own_time = rows["wvwv"].median_vote_time_ns
        if base_time is not None and own_time:
            rows["wvwv"] = replace(rows["wvwv"], speedup=base_time / own_time)

    order = sorted(rows, key=_algorithm_rank)
    return Summary(fingerprint, tuple(rows[n] for n in order))


SUMMARY_COLUMNS = ("algorithm", "trials", "failure_rate", "mean_kp_rmse_m", "median_kp_rmse_m",
                   "auc_add", "add_0_1d", "median_vote_time_ns", "median_fit_time_ns")


def summary_rows(summary: Summary) -> List[Dict[str, Any]]:
    """Summary as dicts; the ``speedup`` key appears only when some row has one."""
    rows = []
    for row in summary.rows:
        values = {
            "algorithm": row.algorithm,
            "trials": row.trials,
            "failure_rate": row.failure_rate,
            "mean_kp_rmse_m": row.mean_kp_rmse_m,
            "median_kp_rmse_m": row.median_kp_rmse_m,
            "auc_add": row.auc_add,
            "add_0_1d": row.add_0_1d,
            "median_vote_time_ns": row.median_vote_time_ns,
            "median_fit_time_ns": row.median_fit_time_ns,
        }
        if summary.has_speedup:
            values["speedup"] = row.speedup
        rows.append(values)
    return rows


def format_summary(summary: Summary) -> str:
    """Fixed-width text table of a summary; missing values print as ``-``."""
    rows = summary_rows(summary)
    columns = list(rows[0])
    cells = [[_cell(row[c]) for c in columns] for row in rows]
    widths = [max(len(c), *(len(r[i]) for r in cells)) for i, c in enumerate(columns)]
    lines = [f"config {summary.config_fingerprint}",
             "  ".join(c.ljust(w) for c, w in zip(columns, widths))]
    lines += ["  ".join(v.ljust(w) for v, w in zip(r, widths)) for r in cells]
    return "\n".join(lines)


def _cell(value: Any) -> str:
    if value is None:
        return "-"
    if isinstance(value, float):
        return f"{value:.6g}"
    return str(value)


# Sweeps

@dataclass(frozen=True)
class SweepRow:
    axis: str
    level: float
    summary: AlgorithmSummary


def run_sweep(config: ExperimentConfig, axis: str,
              levels: Sequence[float]) -> List[SweepRow]:
    """
    Run one experiment per level of a scene axis.

    Parameters
    ----------
    config : ExperimentConfig
        Base experiment; every level shares its seed.
    axis : str
        ``"angular_noise_deg"``, ``"occlusion_fraction"`` or ``"outlier_fraction"``.
    levels : Sequence[float]
        Values of the axis, in output order.

    Returns
    -------
    List[SweepRow]
        One row per (level, algorithm).
    """
    if axis not in SWEEP_AXES:
        raise InvalidInput(f"sweep axis must be one of {SWEEP_AXES}, got '{axis}'")
    if not levels:
        raise InvalidInput("sweep needs at least one level")
    rows = []
    for level in levels:
        level_config = replace(config, scene=replace(config.scene, **{axis: level}))
        logger.info("sweep %s=%s", axis, level)
        summary = summarize(run_experiment(level_config))
        rows.extend(SweepRow(axis, float(level), row) for row in summary.rows)
    return rows


SWEEP_COLUMNS = ("axis", "level", "algorithm", "trials", "failure_rate", "mean_kp_rmse_m",
                 "auc_add", "add_0_1d", "median_vote_time_ns", "speedup")


def write_sweep(rows: Sequence[SweepRow], path: Union[str, Path]) -> Path:
    """Write sweep rows as CSV, one line per (level, algorithm)."""
    path = Path(path)
    try:
        with open(path, "w", newline="") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(SWEEP_COLUMNS)
            for row in rows:
                s = row.summary
                writer.writerow([row.axis, _format_number(row.level), s.algorithm, s.trials,
                                 _format_number(s.failure_rate), _format_number(s.mean_kp_rmse_m),
                                 _format_number(s.auc_add), _format_number(s.add_0_1d),
                                 _format_number(s.median_vote_time_ns),
                                 _format_number(s.speedup)])
    except OSError as e:
        raise ReportIoError(f"cannot write sweep '{path}': {e}") from e
    return path


def selftest(instances: int = 100, seed: int = 0) -> SelftestReport:
    """Oracle-equivalence suite; see :func:`votecraft.oracles.selftest`."""
    return _oracle_selftest(instances, seed)
