"""
Brute-force reference solvers and the self-test built on them.

The voting oracle never forms the normal system: it evaluates the objective
``D(k)`` point by point, starts from the best node of a coarse grid over the
bounding box, and refines by line minimization along the coordinate axes plus one
pattern direction per sweep. On a convex quadratic this converges to the same
minimizer the closed-form solve returns.
"""

import logging
from dataclasses import dataclass, field
from typing import List

import numpy as np
from numpy.typing import ArrayLike
from scipy.spatial.transform import Rotation

from .errors import InvalidInput
from .geometry import RigidTransform, apply_transform
from .metrics import add_s_metric
from .pose import CorrespondenceSet, fit_rigid_transform
from .synth import perturb_directions
from .voting import VectorVoteProblem, vote_keypoint, vote_objective

logger = logging.getLogger(__name__)

GRID_NODES = 11
MAX_SWEEPS = 500
STEP_TOLERANCE = 1e-14

OBJECTIVE_SLACK = 1e-8
POSITION_SLACK = 1e-6
POSE_SLACK = 1e-9
METRIC_SLACK = 1e-12


def _line_minimum(objective, origin: np.ndarray, direction: np.ndarray, scale: float) -> np.ndarray:
    # exact for a quadratic: fit the parabola through three samples
    f_minus = objective(origin - scale * direction)
    f_zero = objective(origin)
    f_plus = objective(origin + scale * direction)
    curvature = (f_plus + f_minus - 2.0 * f_zero) / (2.0 * scale * scale)
    if curvature <= 0:
        return origin
    slope = (f_plus - f_minus) / (2.0 * scale)
    step = -slope / (2.0 * curvature)
    candidate = origin + step * direction
    return candidate if objective(candidate) <= f_zero else origin


def brute_force_keypoint(points: ArrayLike, vectors: ArrayLike, weights: ArrayLike) -> np.ndarray:
    """
    Minimizer of the voting objective by grid search and line refinement.

    Parameters
    ----------
    points, vectors : array_like
        (M, 3) points and their unit directions.
    weights : array_like
        (M,) non-negative weights.

    Returns
    -------
    np.ndarray
        The (3,) minimizer found.
    """
    points = np.asarray(points, dtype=np.float64)
    vectors = np.asarray(vectors, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)

    def objective(k: np.ndarray) -> float:
        return float(vote_objective(points, vectors, weights, k))

    low, high = points.min(axis=0), points.max(axis=0)
    margin = 0.5 * max(float(np.max(high - low)), 1.0)
    axes = [np.linspace(lo - margin, hi + margin, GRID_NODES) for lo, hi in zip(low, high)]
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 3)
    values = vote_objective(points, vectors, weights, grid)
    position = grid[int(np.argmin(values))]

    scale = 2.0 * margin
    directions: List[np.ndarray] = list(np.eye(3))
    for _ in range(MAX_SWEEPS):
        start = position
        for direction in directions:
            position = _line_minimum(objective, position, direction, scale)
        pattern = position - start
        length = float(np.linalg.norm(pattern))
        if length < STEP_TOLERANCE:
            break
        position = _line_minimum(objective, position, pattern / length, scale)
        directions = directions[1:] + [pattern / length]
    return position


@dataclass
class SelftestReport:
    """Outcome of :func:`selftest`; ``failures`` lists one message per failed check."""

    instances: int
    max_objective_gap: float = 0.0
    max_position_gap: float = 0.0
    max_pose_error: float = 0.0
    max_metric_gap: float = 0.0
    failures: List[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.failures


def random_vote_instance(rng: np.random.Generator, noise_deg: float = 1.0) -> VectorVoteProblem:
    """Single-keypoint problem with 3 to 200 noisy rays aimed at a random point."""
    count = int(rng.integers(3, 201))
    keypoint = rng.uniform(-0.5, 0.5, 3)
    points = keypoint + rng.uniform(-1.0, 1.0, (count, 3))
    directions = keypoint - points
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    directions = perturb_directions(directions, noise_deg, rng)
    weights = rng.uniform(0.05, 1.0, count)
    return VectorVoteProblem(points, directions[None], weights)


def selftest(instances: int = 100, seed: int = 0) -> SelftestReport:
    """
    Check the closed-form solvers against brute-force references.

    On each seeded random instance:

    * the voted keypoint's objective is at most the oracle's plus 1e-8, and both
      positions agree to 1e-6 m;
    * a random rigid transform is recovered from 3 to 16 correspondences to 1e-9;
    * the k-d tree ADD-S equals the brute-force ADD-S to 1e-12.
    """
    if instances < 1:
        raise InvalidInput(f"instances must be >= 1, got {instances}")
    rng = np.random.default_rng(seed)
    report = SelftestReport(instances=instances)

    for i in range(instances):
        problem = random_vote_instance(rng)
        vectors = problem.vector_fields[0]
        estimate = vote_keypoint(problem, 0)
        oracle = brute_force_keypoint(problem.points, vectors, problem.weights)
        closed = float(vote_objective(problem.points, vectors, problem.weights, estimate.position))
        brute = float(vote_objective(problem.points, vectors, problem.weights, oracle))
        objective_gap = closed - brute
        position_gap = float(np.linalg.norm(estimate.position - oracle))
        report.max_objective_gap = max(report.max_objective_gap, objective_gap)
        report.max_position_gap = max(report.max_position_gap, position_gap)
        if objective_gap > OBJECTIVE_SLACK or position_gap > POSITION_SLACK:
            report.failures.append(
                f"instance {i}: voting objective gap {objective_gap:.3e}, "
                f"position gap {position_gap:.3e} m"
            )

        truth = RigidTransform(Rotation.random(random_state=rng).as_matrix(), rng.normal(0, 1, 3))
        model_points = rng.uniform(-1.0, 1.0, (int(rng.integers(3, 17)), 3))
        fit = fit_rigid_transform(CorrespondenceSet(model_points, apply_transform(truth, model_points)))
        pose_error = max(float(np.max(np.abs(fit.transform.rotation - truth.rotation))),
                         float(np.linalg.norm(fit.transform.translation - truth.translation)))
        report.max_pose_error = max(report.max_pose_error, pose_error)
        if pose_error > POSE_SLACK:
            report.failures.append(f"instance {i}: rigid fit error {pose_error:.3e}")

        cloud = rng.normal(0.0, 0.05, (500, 3))
        estimated = RigidTransform(Rotation.random(random_state=rng).as_matrix(),
                                   rng.normal(0.0, 0.01, 3))
        metric_gap = abs(add_s_metric(cloud, estimated, truth, method="tree")
                         - add_s_metric(cloud, estimated, truth, method="brute"))
        report.max_metric_gap = max(report.max_metric_gap, metric_gap)
        if metric_gap > METRIC_SLACK:
            report.failures.append(f"instance {i}: ADD-S tree/brute gap {metric_gap:.3e}")

    logger.info("selftest: %d instances, %d failures", instances, len(report.failures))
    return report

