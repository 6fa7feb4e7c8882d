"""
Rigid pose from keypoint correspondences.

A weighted Umeyama fit without scale: centroids, weighted cross-covariance, SVD,
and a determinant-sign correction so the result is always a proper rotation.
"""

import logging
from dataclasses import dataclass
from typing import NamedTuple, Optional, Sequence

import numpy as np
from numpy.typing import ArrayLike

from .errors import (
    DegenerateGeometry,
    InvalidInput,
    ShapeError,
    TooFewCorrespondences,
)
from .geometry import RigidTransform, apply_transform, as_point_cloud
from .voting import Frame, KeypointEstimate, KeypointSet

logger = logging.getLogger(__name__)

MIN_CORRESPONDENCES = 3
COLLINEAR_TOLERANCE = 1e-9
POSE_WEIGHTINGS = ("uniform", "weight_mass")


@dataclass(frozen=True, eq=False)
class CorrespondenceSet:
    """
    Ordered model/observed keypoint pairs.

    Parameters
    ----------
    model_points : array_like
        (K, 3) object-frame keypoints.
    observed_points : array_like
        (K, 3) camera-frame keypoints, same order.
    weights : array_like, optional
        (K,) non-negative weights; ones by default.
    """

    model_points: np.ndarray
    observed_points: np.ndarray
    weights: Optional[np.ndarray] = None

    def __post_init__(self):
        model = as_point_cloud(self.model_points)
        observed = as_point_cloud(self.observed_points)
        if model.shape != observed.shape:
            raise ShapeError(
                f"model and observed points differ in shape: {model.shape} vs {observed.shape}"
            )
        if model.shape[0] < MIN_CORRESPONDENCES:
            raise TooFewCorrespondences(
                f"need at least {MIN_CORRESPONDENCES} correspondences, got {model.shape[0]}"
            )
        if self.weights is None:
            weights = np.ones(model.shape[0])
        else:
            weights = np.asarray(self.weights, dtype=np.float64)
        if weights.shape != (model.shape[0],):
            raise ShapeError(f"weights must have shape ({model.shape[0]},), got {weights.shape}")
        if not np.all(np.isfinite(weights)) or np.any(weights < 0):
            raise InvalidInput("correspondence weights must be finite and non-negative")
        if np.count_nonzero(weights) < MIN_CORRESPONDENCES:
            raise TooFewCorrespondences(
                f"need at least {MIN_CORRESPONDENCES} positively weighted correspondences, "
                f"got {np.count_nonzero(weights)}"
            )
        object.__setattr__(self, "model_points", model)
        object.__setattr__(self, "observed_points", observed)
        object.__setattr__(self, "weights", weights)


class RigidFit(NamedTuple):
    transform: RigidTransform
    rms_residual: float


def fit_rigid_transform(correspondences: CorrespondenceSet) -> RigidFit:
    """
    Least-squares rigid transform taking model points onto observed points.

    Minimizes ``sum_j w_j ||R k*_j + t - k_j||^2`` over proper rotations R and
    translations t.

    Parameters
    ----------
    correspondences : CorrespondenceSet
        Model and observed keypoints with weights.

    Returns
    -------
    RigidFit
        The transform and the weighted RMS residual.

    Raises
    ------
    DegenerateGeometry
        If the positively weighted model points are collinear or coincident.
    """
    used = correspondences.weights > 0
    model = correspondences.model_points[used]
    observed = correspondences.observed_points[used]
    weights = correspondences.weights[used]
    weights = weights / weights.sum()

    model_centroid = weights @ model
    observed_centroid = weights @ observed
    model_centered = model - model_centroid
    observed_centered = observed - observed_centroid

    spread = np.linalg.svd((model_centered * weights[:, None]).T @ model_centered,
                           compute_uv=False)
    if spread[0] == 0.0 or spread[1] < COLLINEAR_TOLERANCE * spread[0]:
        raise DegenerateGeometry("model keypoints are collinear; rotation is not unique")

    covariance = (observed_centered * weights[:, None]).T @ model_centered
    u, _, vt = np.linalg.svd(covariance)
    sign = np.diag([1.0, 1.0, np.sign(np.linalg.det(u) * np.linalg.det(vt))])
    rotation = u @ sign @ vt
    translation = observed_centroid - rotation @ model_centroid
    transform = RigidTransform(rotation, translation)

    errors = apply_transform(transform, model) - observed
    rms = float(np.sqrt(weights @ np.einsum("ij,ij->i", errors, errors)))
    return RigidFit(transform, rms)


def estimate_pose(predicted: KeypointSet,
                  model: KeypointSet,
                  weights: Optional[ArrayLike] = None) -> RigidTransform:
    """
    Pose of an object from its predicted camera-frame keypoints.

    Parameters
    ----------
    predicted : KeypointSet
        Camera-frame keypoints from voting.
    model : KeypointSet
        Object-frame keypoints, same order.
    weights : array_like, optional
        Per-keypoint weights, e.g. from :func:`keypoint_weights`; uniform when
        omitted.

    Returns
    -------
    RigidTransform
        Object-to-camera transform.
    """
    if predicted.frame is not Frame.CAMERA or model.frame is not Frame.OBJECT:
        raise InvalidInput(
            f"expected camera-frame predictions and an object-frame model, "
            f"got {predicted.frame.value} and {model.frame.value}"
        )
    fit = fit_rigid_transform(CorrespondenceSet(model.keypoints, predicted.keypoints, weights))
    logger.debug("pose fit rms residual %.3e m", fit.rms_residual)
    return fit.transform


def keypoint_weights(estimates: Sequence[KeypointEstimate], weighting: str = "uniform") -> np.ndarray:
    """
    Per-keypoint fit weights from voting results.

    ``"uniform"`` gives ones; ``"weight_mass"`` gives each keypoint's vote weight
    mass, zeroed for rank-deficient keypoints.
    """
    if weighting not in POSE_WEIGHTINGS:
        raise InvalidInput(f"weighting must be one of {POSE_WEIGHTINGS}, got '{weighting}'")
    if weighting == "uniform":
        return np.ones(len(estimates))
    return np.array([e.weight_mass if e.is_full_rank else 0.0 for e in estimates])
