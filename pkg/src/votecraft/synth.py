"""
Deterministic synthetic voting scenes with known ground truth.

A scene is an object model with farthest-point-sampled keypoints, a random pose,
an observed (and possibly occluded) set of surface points in the camera frame, and
per-keypoint vector fields and offsets corrupted by angular noise and outliers.
Offsets also carry one length error per keypoint, scaled by the object diameter,
which the unit directions do not see.

Every random draw comes from a stream derived from ``(seed, trial_index,
purpose)``, so a scene depends only on its config and trial index and never on
the order in which scenes are generated.
"""

import hashlib
import logging
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional, Tuple, Union

import numpy as np
import yaml
from numpy.typing import ArrayLike

from .errors import ConfigError, DegenerateScene, InvalidModel, ReportIoError
from .geometry import (
    RigidTransform,
    apply_transform,
    as_point_cloud,
    farthest_point_indices,
    random_rotation,
)
from .metrics import ObjectModel
from .voting import Frame, KeypointSet, VectorVoteProblem

logger = logging.getLogger(__name__)

SHAPES = ("sphere", "box", "cylinder", "loaded")
WEIGHT_MODELS = ("uniform", "oracle", "random")
SYMMETRIC_SHAPES = ("sphere", "cylinder")

OUTLIER_ORACLE_WEIGHT = 0.01
NOISE_CLIP_SIGMAS = 3.0
OFFSET_LENGTH_NOISE_PER_DEGREE = 0.004
TRANSLATION_HALF_RANGE = 0.25
NOMINAL_DEPTH = 1.0
# Box edge ratios; distinct so the box has no rotational symmetry.
BOX_PROPORTIONS = (1.0, 0.7, 0.4)
CYLINDER_RADIUS_RATIO = 0.3

_SEED_MASK = (1 << 64) - 1


@dataclass(frozen=True)
class SceneConfig:
    """
    Parameters of a synthetic scene.

    Parameters
    ----------
    seed : int
        Master seed (64-bit).
    point_count : int
        Observed points M before occlusion, 12800 by default.
    keypoint_count : int
        Keypoints K, 8 by default.
    shape : str
        ``"sphere"``, ``"box"``, ``"cylinder"`` or ``"loaded"`` (needs
        ``model_path``).
    angular_noise_deg : float
        Standard deviation of the direction noise, degrees.
    outlier_fraction : float
        Share of points whose directions are replaced by random ones, in [0, 1).
    occlusion_fraction : float
        Share of points removed by a spherical cap, in [0, 1).
    weight_model : str
        ``"uniform"``, ``"oracle"`` (1 for inliers, 0.01 for outliers) or
        ``"random"``.
    object_size : float
        Scale of a generated shape in metres (see the shape samplers).
    model_point_count : int
        Points of the generated object model used for keypoints and metrics.
    symmetric : bool, optional
        Whether the metrics treat the object as symmetric; by default the sphere
        and the cylinder are.
    model_path : str, optional
        ASCII point cloud for ``shape="loaded"``.
    offset_length_noise : float, optional
        Std of a length error shared by all offsets towards one keypoint, as a
        fraction of the object diameter. Unset, it follows the angular noise at
        ``OFFSET_LENGTH_NOISE_PER_DEGREE`` per degree. Only the MeanShift offsets
        carry it; unit vectors have no length to get wrong.
    """

    seed: int = 0
    point_count: int = 12800
    keypoint_count: int = 8
    shape: str = "box"
    angular_noise_deg: float = 0.0
    outlier_fraction: float = 0.0
    occlusion_fraction: float = 0.0
    weight_model: str = "uniform"
    object_size: float = 0.1
    model_point_count: int = 2000
    symmetric: Optional[bool] = None
    model_path: Optional[str] = None
    offset_length_noise: Optional[float] = None

    @property
    def offset_length_sigma(self) -> float:
        """Effective offset length noise, as a fraction of the object diameter."""
        if self.offset_length_noise is None:
            return OFFSET_LENGTH_NOISE_PER_DEGREE * self.angular_noise_deg
        return self.offset_length_noise

    def __post_init__(self):
        if self.symmetric is None:
            object.__setattr__(self, "symmetric", self.shape in SYMMETRIC_SHAPES)
        if not 0 <= self.seed <= _SEED_MASK:
            raise ConfigError(f"seed must be a non-negative 64-bit integer, got {self.seed}")
        if self.point_count < 1:
            raise ConfigError(f"point_count must be >= 1, got {self.point_count}")
        if self.keypoint_count < 1:
            raise ConfigError(f"keypoint_count must be >= 1, got {self.keypoint_count}")
        if self.shape not in SHAPES:
            raise ConfigError(f"shape must be one of {SHAPES}, got '{self.shape}'")
        if self.shape == "loaded" and not self.model_path:
            raise ConfigError("shape 'loaded' needs a model_path")
        if self.weight_model not in WEIGHT_MODELS:
            raise ConfigError(
                f"weight_model must be one of {WEIGHT_MODELS}, got '{self.weight_model}'"
            )
        if not (np.isfinite(self.angular_noise_deg) and self.angular_noise_deg >= 0):
            raise ConfigError(f"angular_noise_deg must be >= 0, got {self.angular_noise_deg}")
        if self.offset_length_noise is not None and not (
                np.isfinite(self.offset_length_noise) and self.offset_length_noise >= 0):
            raise ConfigError(
                f"offset_length_noise must be >= 0, got {self.offset_length_noise}")
        for name in ("outlier_fraction", "occlusion_fraction"):
            value = getattr(self, name)
            if not 0 <= value < 1:
                raise ConfigError(f"{name} must lie in [0, 1), got {value}")
        if not self.object_size > 0:
            raise ConfigError(f"object_size must be positive, got {self.object_size}")
        if self.model_point_count < self.keypoint_count:
            raise ConfigError(
                f"model_point_count ({self.model_point_count}) must be at least "
                f"keypoint_count ({self.keypoint_count})"
            )


@dataclass(frozen=True, eq=False)
class SyntheticScene:
    """
    A generated scene and its ground truth.

    ``truth_keypoints_camera`` is ``truth_pose`` applied to ``model_keypoints``;
    ``offsets[j, i]`` is the (corrupted) vector from point ``i`` to keypoint ``j``.
    """

    config: SceneConfig
    trial_index: int
    model: ObjectModel
    model_keypoints: KeypointSet
    truth_pose: RigidTransform
    truth_keypoints_camera: KeypointSet
    problem: VectorVoteProblem
    offsets: np.ndarray
    outlier_mask: np.ndarray


def _purpose_tag(purpose: str) -> int:
    return int.from_bytes(hashlib.sha256(purpose.encode("utf-8")).digest()[:8], "little")


def trial_rng(master_seed: int, trial_index: int, purpose: str) -> np.random.Generator:
    """
    Independent random stream for one purpose of one trial.

    The stream is seeded from ``(master_seed, trial_index, sha256(purpose))`` so it
    does not depend on any other draw.
    """
    entropy = [int(master_seed) & _SEED_MASK, int(trial_index), _purpose_tag(purpose)]
    return np.random.default_rng(np.random.SeedSequence(entropy))


def random_unit_vectors(rng: np.random.Generator, count: int) -> np.ndarray:
    """``count`` directions uniform on the unit sphere."""
    vectors = rng.standard_normal((count, 3))
    norms = np.linalg.norm(vectors, axis=1, keepdims=True)
    # guard the zero draw
    vectors[norms[:, 0] == 0.0] = (1.0, 0.0, 0.0)
    norms[norms == 0.0] = 1.0
    return vectors / norms


# Shape samplers. Each returns ``count`` points uniform over the surface, centred
# at the origin; ``size`` is the sphere diameter, the long box edge and the
# cylinder diagonal.

def sample_sphere(rng: np.random.Generator, count: int, size: float) -> np.ndarray:
    return 0.5 * size * random_unit_vectors(rng, count)


def sample_box(rng: np.random.Generator, count: int, size: float) -> np.ndarray:
    extents = size * np.asarray(BOX_PROPORTIONS)
    half = 0.5 * extents
    # faces come in pairs orthogonal to each axis; pick a face by area
    areas = np.array([extents[1] * extents[2], extents[0] * extents[2], extents[0] * extents[1]])
    axis = rng.choice(3, size=count, p=areas / areas.sum())
    side = rng.choice((-1.0, 1.0), size=count)
    points = rng.uniform(-half, half, size=(count, 3))
    points[np.arange(count), axis] = side * half[axis]
    return points


def sample_cylinder(rng: np.random.Generator, count: int, size: float) -> np.ndarray:
    radius = CYLINDER_RADIUS_RATIO * size
    height = np.sqrt(size ** 2 - (2 * radius) ** 2)
    side_area = 2 * np.pi * radius * height
    cap_area = np.pi * radius ** 2
    on_side = rng.random(count) < side_area / (side_area + 2 * cap_area)

    angle = rng.uniform(0.0, 2 * np.pi, count)
    # sqrt keeps cap points uniform in area
    r = np.where(on_side, radius, radius * np.sqrt(rng.random(count)))
    z = np.where(on_side, rng.uniform(-height / 2, height / 2, count),
                 rng.choice((-height / 2, height / 2), size=count))
    return np.column_stack([r * np.cos(angle), r * np.sin(angle), z])


_SAMPLERS = {"sphere": sample_sphere, "box": sample_box, "cylinder": sample_cylinder}


def load_point_cloud(path: Union[str, Path]) -> np.ndarray:
    """
    Read an ASCII point cloud: one ``x y z`` triple per line in metres, lines
    starting with ``#`` ignored.

    Raises
    ------
    ReportIoError
        If the file cannot be read.
    InvalidModel
        If a line is malformed or there are no points.
    """
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise ReportIoError(f"cannot read point cloud '{path}': {e}") from e

    rows = []
    for line_no, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        fields = stripped.split()
        if len(fields) != 3:
            raise InvalidModel(f"{path}:{line_no}: expected 'x y z', got '{stripped}'")
        try:
            rows.append([float(v) for v in fields])
        except ValueError as e:
            raise InvalidModel(f"{path}:{line_no}: {e}") from e
    if not rows:
        raise InvalidModel(f"point cloud '{path}' holds no points")
    points = np.array(rows)
    if not np.all(np.isfinite(points)):
        raise InvalidModel(f"point cloud '{path}' has non-finite coordinates")
    return points


def load_object_model(path: Union[str, Path], symmetric: bool = False) -> ObjectModel:
    """Object model from an ASCII point cloud, diameter computed on load."""
    model = ObjectModel.from_points(load_point_cloud(path), symmetric=symmetric)
    logger.info("loaded %d model points from %s (diameter %.4f m)",
                model.point_count, path, model.diameter)
    return model


def farthest_point_sample(cloud: ArrayLike, k: int, seed: int) -> KeypointSet:
    """
    Object-frame keypoints by greedy farthest point sampling.

    The first keypoint is a point drawn with ``seed``; each next one is the point
    farthest from those already chosen.

    Raises
    ------
    InvalidInput
        If ``k`` exceeds the cloud size.
    """
    cloud = as_point_cloud(cloud)
    start = int(np.random.default_rng(seed).integers(cloud.shape[0]))
    indices = farthest_point_indices(cloud, k, start=start)
    return KeypointSet(cloud[indices], Frame.OBJECT)


def build_object(config: SceneConfig) -> Tuple[ObjectModel, KeypointSet]:
    """
    Object model and its keypoints for a config.

    These depend on the seed but not on the trial index, so all trials of an
    experiment share one object.
    """
    rng = trial_rng(config.seed, 0, "model")
    if config.shape == "loaded":
        points = load_point_cloud(config.model_path)
    else:
        points = _SAMPLERS[config.shape](rng, config.model_point_count, config.object_size)
    model = ObjectModel.from_points(points, symmetric=config.symmetric)
    keypoint_seed = int(rng.integers(0, 2 ** 63))
    keypoints = farthest_point_sample(model.points, config.keypoint_count, keypoint_seed)
    return model, keypoints


def _observed_points(config: SceneConfig, model: ObjectModel,
                     rng: np.random.Generator) -> np.ndarray:
    if config.shape == "loaded":
        indices = rng.choice(model.point_count, config.point_count,
                             replace=config.point_count > model.point_count)
        return model.points[indices]
    return _SAMPLERS[config.shape](rng, config.point_count, config.object_size)


def occlude(points: np.ndarray, fraction: float, rng: np.random.Generator) -> np.ndarray:
    """
    Indices (ascending) of the points that survive a spherical-cap occlusion.

    A random direction is drawn and the ``fraction`` of points projecting farthest
    along it is removed, leaving ``round((1 - fraction) M)`` points.

    Raises
    ------
    DegenerateScene
        If no point survives.
    """
    count = points.shape[0]
    keep = int(round((1.0 - fraction) * count))
    if keep == 0:
        raise DegenerateScene(
            f"occlusion fraction {fraction} leaves no points out of {count}"
        )
    direction = random_unit_vectors(rng, 1)[0]
    projection = (points - points.mean(axis=0)) @ direction
    order = np.argsort(projection, kind="stable")
    return np.sort(order[:keep])


def perturb_directions(directions: np.ndarray, sigma_deg: float,
                       rng: np.random.Generator) -> np.ndarray:
    """
    Rotate each unit vector about a random axis perpendicular to it.

    The angle is ``|N(0, sigma)|`` clipped at three sigma.
    """
    if sigma_deg == 0:
        return directions.copy()
    shape = directions.shape
    flat = directions.reshape(-1, 3)
    sigma = np.deg2rad(sigma_deg)
    angles = np.minimum(np.abs(rng.normal(0.0, sigma, flat.shape[0])), NOISE_CLIP_SIGMAS * sigma)

    axes = random_unit_vectors(rng, flat.shape[0])
    axes -= np.einsum("ij,ij->i", axes, flat)[:, None] * flat
    norms = np.linalg.norm(axes, axis=1)
    # an axis drawn parallel to v has no perpendicular part; use any perpendicular
    parallel = norms < 1e-12
    if np.any(parallel):
        fallback = np.cross(flat[parallel], (1.0, 0.0, 0.0))
        weak = np.linalg.norm(fallback, axis=1) < 1e-6
        fallback[weak] = np.cross(flat[parallel][weak], (0.0, 1.0, 0.0))
        axes[parallel] = fallback
        norms[parallel] = np.linalg.norm(fallback, axis=1)
    axes /= norms[:, None]

    # Rodrigues with axis perpendicular to v
    rotated = (flat * np.cos(angles)[:, None]
               + np.cross(axes, flat) * np.sin(angles)[:, None])
    return rotated.reshape(shape)


def _point_weights(config: SceneConfig, outlier_mask: np.ndarray,
                   rng: np.random.Generator) -> np.ndarray:
    if config.weight_model == "uniform":
        return np.ones(outlier_mask.size)
    if config.weight_model == "oracle":
        return np.where(outlier_mask, OUTLIER_ORACLE_WEIGHT, 1.0)
    return 1.0 - rng.random(outlier_mask.size)


def generate_scene(config: SceneConfig, trial_index: int = 0,
                   obj: Optional[Tuple[ObjectModel, KeypointSet]] = None) -> SyntheticScene:
    """
    Generate one scene.

    Parameters
    ----------
    config : SceneConfig
        Scene parameters, including the master seed.
    trial_index : int, optional
        Selects the per-trial random streams.
    obj : tuple, optional
        ``(model, keypoints)`` from :func:`build_object` for this config, to avoid
        rebuilding the object for every trial.

    Returns
    -------
    SyntheticScene

    Raises
    ------
    DegenerateScene
        If occlusion removes every point.
    """
    model, model_keypoints = obj if obj is not None else build_object(config)

    def stream(purpose: str) -> np.random.Generator:
        return trial_rng(config.seed, trial_index, purpose)

    pose_rng = stream("pose")
    rotation = random_rotation(pose_rng)
    offset = pose_rng.uniform(-TRANSLATION_HALF_RANGE, TRANSLATION_HALF_RANGE, 3)
    truth_pose = RigidTransform(rotation, offset + np.array([0.0, 0.0, NOMINAL_DEPTH]))

    object_points = _observed_points(config, model, stream("points"))
    kept = occlude(object_points, config.occlusion_fraction, stream("occlusion"))
    points = apply_transform(truth_pose, object_points[kept])
    keypoints = apply_transform(truth_pose, model_keypoints.keypoints)
    count = points.shape[0]

    true_offsets = keypoints[:, None, :] - points[None, :, :]
    distances = np.linalg.norm(true_offsets, axis=2)
    coincident = distances == 0.0
    directions = np.empty_like(true_offsets)
    directions[~coincident] = true_offsets[~coincident] / distances[~coincident, None]
    # any ray through a point lying on the keypoint passes through the keypoint
    directions[coincident] = random_unit_vectors(stream("coincident"), int(coincident.sum()))

    directions = perturb_directions(directions, config.angular_noise_deg, stream("noise"))

    outlier_rng = stream("outliers")
    outlier_count = int(round(config.outlier_fraction * count))
    outlier_mask = np.zeros(count, dtype=bool)
    outlier_mask[outlier_rng.choice(count, outlier_count, replace=False)] = True
    if outlier_count:
        k = model_keypoints.keypoints.shape[0]
        directions[:, outlier_mask] = random_unit_vectors(
            outlier_rng, k * outlier_count).reshape(k, outlier_count, 3)

    lengths = distances
    if config.offset_length_sigma > 0:
        scale = config.offset_length_sigma * model.diameter
        length_errors = stream("offset_length").normal(0.0, scale, keypoints.shape[0])
        lengths = np.maximum(distances + length_errors[:, None], 0.0)
    offsets = lengths[:, :, None] * directions
    weights = _point_weights(config, outlier_mask, stream("weights"))
    problem = VectorVoteProblem(points, directions, weights)

    logger.debug("scene seed=%d trial=%d: %d points, %d outliers",
                 config.seed, trial_index, count, outlier_count)
    return SyntheticScene(
        config=config,
        trial_index=trial_index,
        model=model,
        model_keypoints=model_keypoints,
        truth_pose=truth_pose,
        truth_keypoints_camera=KeypointSet(keypoints, Frame.CAMERA),
        problem=problem,
        offsets=offsets,
        outlier_mask=outlier_mask,
    )


def _pose_document(pose: RigidTransform) -> dict:
    return {"quaternion_xyzw": pose.as_quaternion().tolist(),
            "translation": pose.translation.tolist(),
            "rotation": pose.rotation.tolist()}


def scene_document(scene: SyntheticScene) -> dict:
    """Plain-data view of a scene, as written by :func:`dump_scene`."""
    return {
        "format": "votecraft-scene",
        "version": 1,
        "config": asdict(scene.config),
        "trial_index": scene.trial_index,
        "model": {
            "diameter": scene.model.diameter,
            "symmetric": scene.model.symmetric,
            "points": scene.model.points.tolist(),
            "keypoints": scene.model_keypoints.keypoints.tolist(),
        },
        "truth_pose": _pose_document(scene.truth_pose),
        "truth_keypoints_camera": scene.truth_keypoints_camera.keypoints.tolist(),
        "problem": {
            "points": scene.problem.points.tolist(),
            "weights": scene.problem.weights.tolist(),
            "vector_fields": scene.problem.vector_fields.tolist(),
        },
        "offsets": scene.offsets.tolist(),
        "outlier_mask": scene.outlier_mask.tolist(),
    }


def dump_scene(scene: SyntheticScene, path: Union[str, Path]) -> None:
    """
    Write a scene as a YAML document, schema in ``docs/formats/scene_dump.md``.

    Raises
    ------
    ReportIoError
        If the file cannot be written.
    """
    try:
        with open(path, "w") as f:
            yaml.safe_dump(scene_document(scene), f, sort_keys=False, default_flow_style=None)
    except OSError as e:
        raise ReportIoError(f"cannot write scene dump '{path}': {e}") from e
