"""
Geometric value types and small-matrix routines.

Points, unit vectors and 3×3 matrices are plain float64 numpy arrays checked by
the constructors below; the only class is :class:`RigidTransform`, the pose
``[R, t]`` mapping object coordinates into the camera frame.
"""

from dataclasses import dataclass
from typing import Tuple

import numpy as np
from numpy.typing import ArrayLike
from scipy.spatial.transform import Rotation

from .errors import InvalidInput, InvalidMatrix, ShapeError

DEFAULT_RANK_TOLERANCE = 1e-9
ORTHONORMAL_TOLERANCE = 1e-9
_REORTHONORMALIZE_DRIFT = 1e-12


def as_point(value: ArrayLike) -> np.ndarray:
    """Return ``value`` as a finite float64 array of shape (3,)."""
    point = np.asarray(value, dtype=np.float64)
    if point.shape != (3,):
        raise ShapeError(f"Point3 must have shape (3,), got {point.shape}")
    if not np.all(np.isfinite(point)):
        raise InvalidInput(f"Point3 has non-finite components: {point}")
    return point


def as_point_cloud(value: ArrayLike, allow_empty: bool = False) -> np.ndarray:
    """
    Return ``value`` as a finite float64 point cloud of shape (M, 3).

    Parameters
    ----------
    value : array_like
        Points, one per row.
    allow_empty : bool, optional
        Accept M = 0. Point clouds are non-empty by default.
    """
    cloud = np.asarray(value, dtype=np.float64)
    if cloud.ndim != 2 or cloud.shape[1] != 3:
        raise ShapeError(f"PointCloud must have shape (M, 3), got {cloud.shape}")
    if cloud.shape[0] == 0 and not allow_empty:
        raise ShapeError("PointCloud must hold at least one point")
    if not np.all(np.isfinite(cloud)):
        raise InvalidInput("PointCloud has non-finite coordinates")
    return cloud


def unit_vector(value: ArrayLike) -> np.ndarray:
    """Normalize a single 3-vector; zero-length input is an error."""
    vector = as_point(value)
    norm = np.linalg.norm(vector)
    if norm == 0.0:
        raise InvalidInput("UnitVector3 cannot be built from a zero-length vector")
    return vector / norm


def normalize_rows(values: ArrayLike) -> np.ndarray:
    """Normalize every row of an (..., 3) array; any zero-length row is an error."""
    vectors = np.asarray(values, dtype=np.float64)
    if vectors.shape[-1] != 3:
        raise ShapeError(f"Vectors must have a trailing dimension of 3, got {vectors.shape}")
    if not np.all(np.isfinite(vectors)):
        raise InvalidInput("Vectors have non-finite components")
    norms = np.linalg.norm(vectors, axis=-1, keepdims=True)
    if np.any(norms == 0.0):
        raise InvalidInput("UnitVector3 cannot be built from a zero-length vector")
    return vectors / norms


def as_mat3(value: ArrayLike) -> np.ndarray:
    """Return ``value`` as a finite (3, 3) float64 matrix."""
    matrix = np.asarray(value, dtype=np.float64)
    if matrix.shape != (3, 3):
        raise ShapeError(f"Mat3 must have shape (3, 3), got {matrix.shape}")
    if not np.all(np.isfinite(matrix)):
        raise InvalidMatrix("Mat3 has non-finite entries")
    return matrix


def pseudoinverse_3x3(m: ArrayLike,
                      rank_tolerance: float = DEFAULT_RANK_TOLERANCE) -> Tuple[np.ndarray, int]:
    """
    Moore–Penrose pseudoinverse of a 3×3 matrix.

    Parameters
    ----------
    m : array_like
        The (3, 3) matrix.
    rank_tolerance : float, optional
        Relative cut-off; singular values below ``rank_tolerance`` times the largest
        singular value are treated as zero.

    Returns
    -------
    Tuple[np.ndarray, int]
        The pseudoinverse and the number of retained singular values.

    Raises
    ------
    InvalidMatrix
        If ``m`` has non-finite entries.
    InvalidInput
        If ``rank_tolerance`` is not positive.
    """
    matrix = as_mat3(m)
    if not rank_tolerance > 0:
        raise InvalidInput(f"rank_tolerance must be positive, got {rank_tolerance}")

    u, s, vt = np.linalg.svd(matrix)
    if s[0] == 0.0:
        return np.zeros((3, 3)), 0

    keep = s > rank_tolerance * s[0]
    s_inv = np.zeros(3)
    s_inv[keep] = 1.0 / s[keep]
    return (vt.T * s_inv) @ u.T, int(np.count_nonzero(keep))


def orthonormalize(rotation: ArrayLike) -> np.ndarray:
    """Nearest proper rotation (Frobenius sense) to a 3×3 matrix."""
    u, _, vt = np.linalg.svd(as_mat3(rotation))
    correction = np.diag([1.0, 1.0, np.sign(np.linalg.det(u @ vt))])
    return u @ correction @ vt


@dataclass(frozen=True, eq=False)
class RigidTransform:
    """
    A proper rigid motion ``p -> R p + t``.

    Parameters
    ----------
    rotation : array_like
        (3, 3) orthonormal matrix with determinant +1.
    translation : array_like
        (3,) translation in metres.
    """

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        rotation = as_mat3(self.rotation).copy()
        translation = as_point(self.translation).copy()

        drift = np.max(np.abs(rotation.T @ rotation - np.eye(3)))
        if drift > ORTHONORMAL_TOLERANCE:
            raise InvalidMatrix(f"rotation is not orthonormal (max deviation {drift:.3e})")
        det = np.linalg.det(rotation)
        if abs(det - 1.0) > ORTHONORMAL_TOLERANCE:
            raise InvalidMatrix(f"rotation must have determinant +1, got {det:.12f}")

        rotation.flags.writeable = False
        translation.flags.writeable = False
        object.__setattr__(self, "rotation", rotation)
        object.__setattr__(self, "translation", translation)

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_quaternion(cls, quaternion: ArrayLike, translation: ArrayLike) -> "RigidTransform":
        """Build a transform from a scalar-last (x, y, z, w) quaternion."""
        quat = np.asarray(quaternion, dtype=np.float64)
        if quat.shape != (4,) or not np.all(np.isfinite(quat)) or not np.any(quat):
            raise InvalidInput(f"quaternion must be a finite non-zero 4-vector, got {quat}")
        return cls(Rotation.from_quat(quat).as_matrix(), translation)

    @classmethod
    def from_matrix(cls, matrix: ArrayLike) -> "RigidTransform":
        """Build a transform from a homogeneous 4×4 matrix."""
        homogeneous = np.asarray(matrix, dtype=np.float64)
        if homogeneous.shape != (4, 4):
            raise ShapeError(f"homogeneous matrix must be (4, 4), got {homogeneous.shape}")
        return cls(homogeneous[:3, :3], homogeneous[:3, 3])

    def as_quaternion(self) -> np.ndarray:
        """Scalar-last (x, y, z, w) quaternion with w >= 0."""
        quat = Rotation.from_matrix(self.rotation).as_quat()
        return -quat if quat[3] < 0 else quat

    def as_matrix(self) -> np.ndarray:
        """Homogeneous 4×4 view, for export."""
        matrix = np.eye(4)
        matrix[:3, :3] = self.rotation
        matrix[:3, 3] = self.translation
        return matrix

    def inverse(self) -> "RigidTransform":
        rotation_t = self.rotation.T
        return RigidTransform(rotation_t, -rotation_t @ self.translation)

    def __matmul__(self, other: "RigidTransform") -> "RigidTransform":
        return compose(self, other)

    def __repr__(self) -> str:
        quat = np.array2string(self.as_quaternion(), precision=6)
        trans = np.array2string(self.translation, precision=6)
        return f"RigidTransform(q={quat}, t={trans})"


def apply_transform(transform: RigidTransform, points: ArrayLike) -> np.ndarray:
    """
    Apply ``R p + t`` to one point (shape (3,)) or a cloud (shape (N, 3)).
    """
    values = np.asarray(points, dtype=np.float64)
    if values.shape == (3,):
        return transform.rotation @ values + transform.translation
    if values.ndim == 2 and values.shape[1] == 3:
        return values @ transform.rotation.T + transform.translation
    raise ShapeError(f"points must have shape (3,) or (N, 3), got {values.shape}")


def compose(first: RigidTransform, second: RigidTransform) -> RigidTransform:
    """
    Compose two transforms; the result applies ``second`` then ``first``.

    The product rotation is projected back onto SO(3) when its drift from
    orthonormality exceeds 1e-12.
    """
    rotation = first.rotation @ second.rotation
    if np.max(np.abs(rotation.T @ rotation - np.eye(3))) > _REORTHONORMALIZE_DRIFT:
        rotation = orthonormalize(rotation)
    translation = first.rotation @ second.translation + first.translation
    return RigidTransform(rotation, translation)


def farthest_point_indices(points: ArrayLike, k: int, start: int = 0) -> np.ndarray:
    """
    Greedy farthest point sampling.

    Parameters
    ----------
    points : array_like
        (N, 3) cloud.
    k : int
        Number of indices to select, 1 <= k <= N.
    start : int, optional
        Index of the first selected point.

    Returns
    -------
    np.ndarray
        ``k`` distinct indices; each next index maximizes the distance to the
        already selected set (first index wins ties).
    """
    cloud = as_point_cloud(points)
    count = cloud.shape[0]
    if not 1 <= k <= count:
        raise InvalidInput(f"cannot sample {k} points from a cloud of {count}")
    if not 0 <= start < count:
        raise InvalidInput(f"start index {start} outside [0, {count})")

    selected = np.empty(k, dtype=np.int64)
    selected[0] = start
    nearest = np.linalg.norm(cloud - cloud[start], axis=1)
    nearest[start] = -1.0
    for i in range(1, k):
        index = int(np.argmax(nearest))
        selected[i] = index
        nearest = np.minimum(nearest, np.linalg.norm(cloud - cloud[index], axis=1))
        nearest[index] = -1.0
    return selected


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    """Rotation matrix drawn uniformly from SO(3)."""
    return Rotation.random(random_state=rng).as_matrix()
