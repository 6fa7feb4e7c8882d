"""
Pose accuracy metrics: ADD, ADD-S, accuracy-threshold AUC, ADD-0.1d and keypoint
localization error.
"""

import logging
from dataclasses import dataclass
from typing import Union

import numpy as np
from numpy.typing import ArrayLike
from scipy.spatial import ConvexHull, QhullError, cKDTree
from scipy.spatial.distance import cdist, pdist

from .errors import InvalidInput, InvalidModel, ShapeError
from .geometry import RigidTransform, apply_transform
from .voting import KeypointSet

logger = logging.getLogger(__name__)

DEFAULT_AUC_MAX_THRESHOLD = 0.10
EXACT_DIAMETER_MAX_POINTS = 5000
BRUTE_FORCE_MAX_POINTS = 2048
DIAMETER_TOLERANCE = 1e-9


def _sampled_diameter(points: np.ndarray) -> float:
    rng = np.random.default_rng(0)
    sample = points[rng.choice(points.shape[0], EXACT_DIAMETER_MAX_POINTS, replace=False)]
    return float(pdist(sample).max())


def compute_diameter(points: ArrayLike) -> float:
    """
    Largest pairwise distance of a point set.

    Exact by brute force up to 5000 points and over the convex-hull vertices above
    that; a flat or degenerate large cloud falls back to a sampled lower bound.
    """
    points = _as_model_points(points)
    if points.shape[0] == 1:
        return 0.0
    if points.shape[0] <= EXACT_DIAMETER_MAX_POINTS:
        return float(pdist(points).max())
    try:
        hull = ConvexHull(points)
    except QhullError:
        logger.warning("convex hull failed for %d points; using a sampled diameter",
                       points.shape[0])
        return _sampled_diameter(points)
    return float(pdist(points[hull.vertices]).max())


def _as_model_points(points: ArrayLike) -> np.ndarray:
    values = np.asarray(points, dtype=np.float64)
    if values.ndim != 2 or values.shape[1] != 3:
        raise InvalidModel(f"model points must have shape (N, 3), got {values.shape}")
    if values.shape[0] == 0:
        raise InvalidModel("model has no points")
    if not np.all(np.isfinite(values)):
        raise InvalidModel("model has non-finite points")
    return values


@dataclass(frozen=True, eq=False)
class ObjectModel:
    """
    Object point model used by the pose metrics.

    Parameters
    ----------
    points : array_like
        (N, 3) object-frame points in metres.
    diameter : float
        Largest pairwise distance of ``points``.
    symmetric : bool
        Whether the object is symmetric (ADD-S instead of ADD).

    Raises
    ------
    InvalidModel
        If the points are empty or the diameter does not match them.
    """

    points: np.ndarray
    diameter: float
    symmetric: bool = False

    def __post_init__(self):
        points = _as_model_points(self.points).copy()
        points.flags.writeable = False
        object.__setattr__(self, "points", points)
        if not self.diameter > 0:
            raise InvalidModel(f"diameter must be positive, got {self.diameter}")

        if points.shape[0] <= EXACT_DIAMETER_MAX_POINTS:
            actual = float(pdist(points).max())
            if abs(actual - self.diameter) > DIAMETER_TOLERANCE:
                raise InvalidModel(
                    f"diameter {self.diameter} does not match the points ({actual})"
                )
        elif self.diameter + DIAMETER_TOLERANCE < _sampled_diameter(points):
            raise InvalidModel(f"diameter {self.diameter} is below a sampled lower bound")

    @classmethod
    def from_points(cls, points: ArrayLike, symmetric: bool = False) -> "ObjectModel":
        return cls(points=points, diameter=compute_diameter(points), symmetric=symmetric)

    @property
    def point_count(self) -> int:
        return self.points.shape[0]


ModelLike = Union[ObjectModel, ArrayLike]


def _points_of(model: ModelLike) -> np.ndarray:
    if isinstance(model, ObjectModel):
        return model.points
    return _as_model_points(model)


@dataclass(frozen=True)
class PoseError:
    """ADD, ADD-S and keypoint RMSE of one estimate, in metres."""

    add: float
    add_s: float
    keypoint_rmse: float


def add_metric(model: ModelLike, estimated: RigidTransform, truth: RigidTransform) -> float:
    """
    Average distance of model points under the estimated and true poses.

    Parameters
    ----------
    model : ObjectModel or array_like
        The model, or its (N, 3) points.
    estimated, truth : RigidTransform
        Poses to compare.

    Returns
    -------
    float
        ``mean_p ||(R p + t) - (R* p + t*)||``.
    """
    points = _points_of(model)
    diff = apply_transform(estimated, points) - apply_transform(truth, points)
    return float(np.mean(np.linalg.norm(diff, axis=1)))


def add_s_metric(model: ModelLike, estimated: RigidTransform, truth: RigidTransform,
                 method: str = "auto") -> float:
    """
    Average closest-point distance, for symmetric objects.

    Parameters
    ----------
    model : ObjectModel or array_like
        The model, or its (N, 3) points.
    estimated, truth : RigidTransform
        Poses to compare.
    method : str, optional
        ``"brute"`` (all pairs), ``"tree"`` (k-d tree nearest neighbour) or
        ``"auto"``, which uses brute force up to 2048 points.

    Returns
    -------
    float
        ``mean_p1 min_p2 ||(R p1 + t) - (R* p2 + t*)||``.
    """
    points = _points_of(model)
    if method == "auto":
        method = "brute" if points.shape[0] <= BRUTE_FORCE_MAX_POINTS else "tree"
    estimated_points = apply_transform(estimated, points)
    true_points = apply_transform(truth, points)
    if method == "brute":
        nearest = cdist(estimated_points, true_points).min(axis=1)
    elif method == "tree":
        nearest, _ = cKDTree(true_points).query(estimated_points, k=1)
    else:
        raise InvalidInput(f"method must be 'auto', 'brute' or 'tree', got '{method}'")
    return float(np.mean(nearest))


def add_or_add_s(model: ObjectModel, estimated: RigidTransform, truth: RigidTransform) -> float:
    """ADD-S for symmetric models, ADD otherwise."""
    if model.symmetric:
        return add_s_metric(model, estimated, truth)
    return add_metric(model, estimated, truth)


def _as_errors(errors: ArrayLike) -> np.ndarray:
    values = np.asarray(errors, dtype=np.float64).ravel()
    if values.size == 0:
        raise InvalidInput("error list is empty")
    if np.any(np.isnan(values)) or np.any(values < 0):
        raise InvalidInput("errors must be non-negative")
    return values


def auc(errors: ArrayLike, max_threshold: float = DEFAULT_AUC_MAX_THRESHOLD) -> float:
    """
    Area under the accuracy-threshold curve, normalized to [0, 1].

    The accuracy at threshold tau is the fraction of errors below tau; its integral
    over (0, max_threshold] is taken exactly, which for a step function reduces to
    ``mean(clip((max_threshold - e) / max_threshold, 0, 1))``.

    Parameters
    ----------
    errors : array_like
        Non-negative errors (``inf`` is allowed and counts as a miss).
    max_threshold : float, optional
        Upper end of the threshold range, 0.10 m by default.
    """
    values = _as_errors(errors)
    if not max_threshold > 0:
        raise InvalidInput(f"max_threshold must be positive, got {max_threshold}")
    contributions = np.clip((max_threshold - values) / max_threshold, 0.0, 1.0)
    return float(np.mean(contributions))


def add_0_1d_accuracy(errors: ArrayLike, diameter: float) -> float:
    """Fraction of errors strictly below a tenth of the object diameter."""
    values = _as_errors(errors)
    if not diameter > 0:
        raise InvalidInput(f"diameter must be positive, got {diameter}")
    return float(np.mean(values < diameter / 10.0))


def keypoint_rmse(estimated: Union[KeypointSet, ArrayLike],
                  truth: Union[KeypointSet, ArrayLike]) -> float:
    """Root-mean-square Euclidean keypoint error in metres."""
    errors = keypoint_errors(estimated, truth)
    return float(np.sqrt(np.mean(errors * errors)))


def keypoint_errors(estimated: Union[KeypointSet, ArrayLike],
                    truth: Union[KeypointSet, ArrayLike]) -> np.ndarray:
    """Per-keypoint Euclidean errors in metres."""
    estimated = estimated.keypoints if isinstance(estimated, KeypointSet) else np.asarray(estimated)
    truth = truth.keypoints if isinstance(truth, KeypointSet) else np.asarray(truth)
    if estimated.shape != truth.shape:
        raise ShapeError(f"keypoint sets differ in shape: {estimated.shape} vs {truth.shape}")
    return np.linalg.norm(estimated - truth, axis=1)


def evaluate_pose(model: ObjectModel,
                  estimated: RigidTransform,
                  truth: RigidTransform,
                  estimated_keypoints: KeypointSet,
                  true_keypoints: KeypointSet) -> PoseError:
    """ADD, ADD-S and keypoint RMSE of one estimate."""
    return PoseError(
        add=add_metric(model, estimated, truth),
        add_s=add_s_metric(model, estimated, truth),
        keypoint_rmse=keypoint_rmse(estimated_keypoints, true_keypoints),
    )
