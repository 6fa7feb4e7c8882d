"""
votecraft - closed-form weighted vector-wise 3D keypoint voting.

Each scene point votes for a keypoint with a ray along a predicted unit vector and
a confidence weight; the keypoint is the point closest (in the weighted
least-squares sense) to all rays, found in one 3×3 pseudoinverse solve. The
package also carries the pose pipeline around it (rigid fit, ADD/ADD-S metrics),
the MeanShift clustering baseline, the training losses, a numpy reference of the
colour/geometry fusion block, a synthetic scene generator and a benchmark CLI.
"""

__version__ = "0.1.1"

from typing import Tuple

from numpy.typing import ArrayLike

from .errors import (
    ConfigError,
    DegenerateGeometry,
    DegenerateProblem,
    DegenerateScene,
    DomainError,
    InvalidInput,
    InvalidMatrix,
    InvalidModel,
    PipelineError,
    ReportIoError,
    ShapeError,
    TooFewCorrespondences,
    VotecraftError,
)
from .geometry import RigidTransform, apply_transform, compose, pseudoinverse_3x3
from .voting import (
    Frame,
    KeypointEstimate,
    KeypointSet,
    VectorVoteProblem,
    accumulate_normal_system,
    solve_keypoint,
    vote_all_keypoints,
)
from .meanshift import MeanShiftConfig, cluster_all_keypoints, mean_shift_mode
from .pose import estimate_pose, fit_rigid_transform, keypoint_weights
from .metrics import ObjectModel, add_metric, add_s_metric, auc, add_0_1d_accuracy, keypoint_rmse
from .synth import SceneConfig, SyntheticScene, generate_scene
from .board import PipelineBoard
from .stage import Stage

__all__ = [
    "__version__",
    "VotecraftError", "ShapeError", "InvalidInput", "InvalidMatrix", "DomainError",
    "InvalidModel", "DegenerateProblem", "TooFewCorrespondences", "DegenerateGeometry",
    "DegenerateScene", "ConfigError", "PipelineError", "ReportIoError",
    "RigidTransform", "apply_transform", "compose", "pseudoinverse_3x3",
    "Frame", "KeypointEstimate", "KeypointSet", "VectorVoteProblem",
    "accumulate_normal_system", "solve_keypoint", "vote_all_keypoints",
    "MeanShiftConfig", "cluster_all_keypoints", "mean_shift_mode",
    "estimate_pose", "fit_rigid_transform", "keypoint_weights",
    "ObjectModel", "add_metric", "add_s_metric", "auc", "add_0_1d_accuracy", "keypoint_rmse",
    "SceneConfig", "SyntheticScene", "generate_scene",
    "PipelineBoard", "Stage",
    "estimate_pose_from_votes",
]


def estimate_pose_from_votes(points: ArrayLike,
                             vector_fields: ArrayLike,
                             weights: ArrayLike,
                             model_keypoints: ArrayLike,
                             weighting: str = "uniform",
                             rank_tolerance: float = 1e-9,
                             ) -> Tuple[RigidTransform, KeypointSet]:
    """
    Vote for every keypoint and fit the object pose in one call.

    Parameters
    ----------
    points : array_like
        (M, 3) camera-frame points.
    vector_fields : array_like
        (K, M, 3) per-keypoint directions from each point.
    weights : array_like
        (M,) non-negative point confidences.
    model_keypoints : array_like
        (K, 3) object-frame keypoints in the same row order.
    weighting : str, optional
        ``"uniform"`` or ``"weight_mass"`` keypoint weights for the rigid fit.
    rank_tolerance : float, optional
        Relative singular-value cut-off of the voting pseudoinverse.

    Returns
    -------
    Tuple[RigidTransform, KeypointSet]
        The object-to-camera pose and the voted camera-frame keypoints.

    Examples
    --------
    >>> pose, keypoints = estimate_pose_from_votes(points, fields, weights, model_kps)
    >>> pose.translation
    """
    problem = VectorVoteProblem(points, vector_fields, weights)
    estimates = vote_all_keypoints(problem, rank_tolerance)
    voted = KeypointSet.from_estimates(estimates)
    model = KeypointSet(model_keypoints, Frame.OBJECT)
    pose = estimate_pose(voted, model, keypoint_weights(estimates, weighting))
    return pose, voted

