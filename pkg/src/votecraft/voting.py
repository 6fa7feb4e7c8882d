"""
Weighted vector-wise keypoint voting.

Each scene point ``p_i`` votes for keypoint ``k_j`` with a ray along the unit vector
``v_ij``. The keypoint is the point minimizing the weighted sum of squared
perpendicular distances to all rays,

    D(k) = sum_i c_i (p_i - k)^T (I - v_i v_i^T) (p_i - k),

whose stationarity condition is the 3×3 normal system ``A k = b`` with
``A = sum_i c_i (I - v_i v_i^T)`` and ``b = sum_i c_i (I - v_i v_i^T) p_i``. The
system is solved once with the Moore–Penrose pseudoinverse, so there is no
iteration and rank-deficient ray bundles still return the minimum-norm solution.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import Enum
from typing import List, Optional, Sequence

import numpy as np
from numpy.typing import ArrayLike

from .errors import DegenerateProblem, InvalidInput, ShapeError
from .geometry import (
    DEFAULT_RANK_TOLERANCE,
    as_mat3,
    as_point,
    as_point_cloud,
    normalize_rows,
    pseudoinverse_3x3,
)

logger = logging.getLogger(__name__)

# Above this many points the sums are carried in extended precision.
COMPENSATED_MIN_POINTS = 10_000
UNIT_LENGTH_TOLERANCE = 1e-6


class Frame(str, Enum):
    """Coordinate frame a keypoint set is expressed in."""

    OBJECT = "object"
    CAMERA = "camera"


@dataclass(frozen=True, eq=False)
class KeypointSet:
    """
    Ordered 3D keypoints.

    Parameters
    ----------
    keypoints : array_like
        (K, 3) positions in metres; row order matches the vector-field rows.
    frame : Frame or str
        ``"object"`` for model keypoints, ``"camera"`` for observed ones.
    """

    keypoints: np.ndarray
    frame: Frame = Frame.CAMERA

    def __post_init__(self):
        keypoints = as_point_cloud(self.keypoints).copy()
        keypoints.flags.writeable = False
        object.__setattr__(self, "keypoints", keypoints)
        object.__setattr__(self, "frame", Frame(self.frame))

    def __len__(self) -> int:
        return self.keypoints.shape[0]

    @classmethod
    def from_estimates(cls, estimates: Sequence["KeypointEstimate"]) -> "KeypointSet":
        """Camera-frame keypoint set from voting results, in row order."""
        return cls(np.stack([e.position for e in estimates]), Frame.CAMERA)


@dataclass(frozen=True)
class KeypointEstimate:
    """
    Result of voting for a single keypoint.

    Attributes
    ----------
    position : np.ndarray
        Minimum-norm least-squares solution ``A^+ b``.
    normal_matrix_rank : int
        Rank of ``A`` retained by the pseudoinverse (3 for a unique solution).
    residual : float
        Objective ``D`` at the solution.
    weight_mass : float
        Sum of the point weights.
    """

    position: np.ndarray
    normal_matrix_rank: int
    residual: float
    weight_mass: float

    @property
    def is_full_rank(self) -> bool:
        return self.normal_matrix_rank == 3


@dataclass(frozen=True, eq=False)
class NormalSystem:
    """
    The accumulated normal equations of one keypoint.

    ``constant`` is ``sum_i c_i p_i^T (I - v_i v_i^T) p_i`` so that
    ``D(k) = k^T A k - 2 b^T k + constant`` can be evaluated without revisiting
    the points.
    """

    A: np.ndarray
    b: np.ndarray
    constant: float
    weight_mass: float


@dataclass(frozen=True, eq=False)
class VectorVoteProblem:
    """
    Points, per-keypoint unit-vector fields and per-point weights.

    Parameters
    ----------
    points : array_like
        (M, 3) camera-frame points.
    vector_fields : array_like
        (K, M, 3) directions; every row is normalized on construction.
    weights : array_like
        (M,) non-negative confidences, at least one positive.

    Raises
    ------
    ShapeError
        If the arrays do not line up.
    InvalidInput
        If a weight is negative or non-finite.
    DegenerateProblem
        If there are no points or every weight is zero.
    """

    points: np.ndarray
    vector_fields: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        points = as_point_cloud(self.points, allow_empty=True)
        fields = np.asarray(self.vector_fields, dtype=np.float64)
        weights = np.asarray(self.weights, dtype=np.float64)

        if fields.ndim != 3 or fields.shape[1:] != points.shape or fields.shape[0] < 1:
            raise ShapeError(
                f"vector_fields must have shape (K, {points.shape[0]}, 3) with K >= 1, "
                f"got {fields.shape}"
            )
        _check_weights(weights, points.shape[0])
        if points.shape[0] == 0:
            raise DegenerateProblem("voting problem has no points")

        fields = normalize_rows(fields)
        for array in (points, fields, weights):
            array.flags.writeable = False
        object.__setattr__(self, "points", points)
        object.__setattr__(self, "vector_fields", fields)
        object.__setattr__(self, "weights", weights)

    @property
    def keypoint_count(self) -> int:
        return self.vector_fields.shape[0]

    @property
    def point_count(self) -> int:
        return self.points.shape[0]

    def with_weights(self, weights: ArrayLike) -> "VectorVoteProblem":
        """Same geometry, different point weights."""
        return VectorVoteProblem(self.points, self.vector_fields, weights)


def _check_weights(weights: np.ndarray, count: int) -> None:
    if weights.shape != (count,):
        raise ShapeError(f"weights must have shape ({count},), got {weights.shape}")
    if not np.all(np.isfinite(weights)):
        raise InvalidInput("weights must be finite")
    if np.any(weights < 0):
        raise InvalidInput("weights must be non-negative")
    if count and not np.any(weights > 0):
        raise DegenerateProblem("every point weight is zero")


def accumulate_normal_system(points: ArrayLike,
                             vectors: ArrayLike,
                             weights: ArrayLike,
                             compensated: Optional[bool] = None) -> NormalSystem:
    """
    Build ``A = sum c_i (I - v_i v_i^T)`` and ``b = sum c_i (I - v_i v_i^T) p_i``.

    Parameters
    ----------
    points : array_like
        (M, 3) points.
    vectors : array_like
        (M, 3) unit vectors, one per point.
    weights : array_like
        (M,) non-negative weights.
    compensated : bool, optional
        Sum in extended precision. Defaults to on for M >= 10 000.

    Returns
    -------
    NormalSystem
        ``A`` (symmetric PSD), ``b``, the constant term and the weight mass.

    Raises
    ------
    ShapeError
        If the lengths differ or M = 0.
    InvalidInput
        If a vector is non-finite or not of unit length (to 1e-6), or a weight
        is negative or non-finite.
    DegenerateProblem
        If every weight is zero.
    """
    points = as_point_cloud(points)
    vectors = np.asarray(vectors, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    if vectors.shape != points.shape:
        raise ShapeError(f"vectors must have shape {points.shape}, got {vectors.shape}")
    if not np.all(np.isfinite(vectors)):
        raise InvalidInput("vectors must be finite")
    lengths = np.linalg.norm(vectors, axis=1)
    if np.any(np.abs(lengths - 1.0) > UNIT_LENGTH_TOLERANCE):
        worst = float(np.max(np.abs(lengths - 1.0)))
        raise InvalidInput(f"vectors must have unit length (off by up to {worst:.3g})")
    _check_weights(weights, points.shape[0])
    if compensated is None:
        compensated = points.shape[0] >= COMPENSATED_MIN_POINTS

    along = np.einsum("ij,ij->i", vectors, points)
    weighted_vectors = weights[:, None] * vectors
    outer_terms = weighted_vectors[:, :, None] * vectors[:, None, :]
    b_terms = weights[:, None] * points - weighted_vectors * along[:, None]
    constant_terms = weights * (np.einsum("ij,ij->i", points, points) - along * along)

    accumulator = np.longdouble if compensated else np.float64
    mass = np.sum(weights.astype(accumulator))
    outer_sum = np.sum(outer_terms.astype(accumulator), axis=0)
    b = np.sum(b_terms.astype(accumulator), axis=0).astype(np.float64)
    constant = float(np.sum(constant_terms.astype(accumulator)))

    A = (mass * np.eye(3, dtype=accumulator) - outer_sum).astype(np.float64)
    A = 0.5 * (A + A.T)
    return NormalSystem(A=A, b=b, constant=constant, weight_mass=float(mass))


def solve_keypoint(A: ArrayLike,
                   b: ArrayLike,
                   rank_tolerance: float = DEFAULT_RANK_TOLERANCE,
                   constant: float = 0.0) -> KeypointEstimate:
    """
    Solve ``A k = b`` with the pseudoinverse.

    Parameters
    ----------
    A : array_like
        Symmetric PSD normal matrix.
    b : array_like
        Right-hand side.
    rank_tolerance : float, optional
        Relative singular-value cut-off.
    constant : float, optional
        Constant term ``sum c_i |(I - v_i v_i^T) p_i|^2`` of the objective. The
        reported residual is ``D(k)`` at the solution only when this is supplied;
        with the default 0 it is ``D(k)`` minus the constant, which is never
        positive, and is reported as 0. Use :func:`solve_normal_system` to carry
        the constant automatically.

    Returns
    -------
    KeypointEstimate

    Raises
    ------
    InvalidInput
        If ``A`` or ``b`` are non-finite.
    """
    A = as_mat3(A)
    b = as_point(b)

    pinv, rank = pseudoinverse_3x3(A, rank_tolerance)
    position = pinv @ b
    residual = constant - 2.0 * float(b @ position) + float(position @ A @ position)
    # A = sum c_i (I - v v^T) has trace 2 * sum c_i.
    weight_mass = 0.5 * float(np.trace(A))
    return KeypointEstimate(
        position=position,
        normal_matrix_rank=rank,
        residual=max(residual, 0.0),
        weight_mass=weight_mass,
    )


def solve_normal_system(system: NormalSystem,
                        rank_tolerance: float = DEFAULT_RANK_TOLERANCE) -> KeypointEstimate:
    """Solve an accumulated system, carrying its constant term and weight mass."""
    estimate = solve_keypoint(system.A, system.b, rank_tolerance, constant=system.constant)
    return KeypointEstimate(
        position=estimate.position,
        normal_matrix_rank=estimate.normal_matrix_rank,
        residual=estimate.residual,
        weight_mass=system.weight_mass,
    )


def vote_keypoint(problem: VectorVoteProblem,
                  index: int,
                  rank_tolerance: float = DEFAULT_RANK_TOLERANCE) -> KeypointEstimate:
    """Vote for keypoint row ``index`` of ``problem``."""
    try:
        system = accumulate_normal_system(
            problem.points, problem.vector_fields[index], problem.weights
        )
    except DegenerateProblem as e:
        raise DegenerateProblem(str(e), keypoint_index=index) from e
    estimate = solve_normal_system(system, rank_tolerance)
    if not estimate.is_full_rank:
        logger.warning("keypoint %d: normal matrix has rank %d, returning minimum-norm solution",
                       index, estimate.normal_matrix_rank)
    return estimate


def vote_all_keypoints(problem: VectorVoteProblem,
                       rank_tolerance: float = DEFAULT_RANK_TOLERANCE,
                       max_workers: Optional[int] = None) -> List[KeypointEstimate]:
    """
    Vote for every keypoint of ``problem``.

    Parameters
    ----------
    problem : VectorVoteProblem
        Shared points and weights with K vector-field rows.
    rank_tolerance : float, optional
        Relative singular-value cut-off.
    max_workers : int, optional
        Evaluate keypoints on a thread pool of this size. Output order and values
        do not depend on it.

    Returns
    -------
    List[KeypointEstimate]
        One estimate per row, in row order.

    Raises
    ------
    DegenerateProblem
        Annotated with the failing keypoint index.
    """
    indices = range(problem.keypoint_count)
    if max_workers is None or max_workers <= 1 or problem.keypoint_count == 1:
        return [vote_keypoint(problem, j, rank_tolerance) for j in indices]
    with ThreadPoolExecutor(max_workers=max_workers) as pool:
        return list(pool.map(lambda j: vote_keypoint(problem, j, rank_tolerance), indices))


def vote_objective(points: ArrayLike,
                   vectors: ArrayLike,
                   weights: ArrayLike,
                   keypoint: ArrayLike) -> np.ndarray:
    """
    Evaluate ``D(k)`` directly.

    ``keypoint`` may be a single (3,) point, giving a scalar, or a (G, 3) batch of
    candidates, giving G values.
    """
    points = np.asarray(points, dtype=np.float64)
    vectors = np.asarray(vectors, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    candidates = np.atleast_2d(np.asarray(keypoint, dtype=np.float64))

    diff = points[None, :, :] - candidates[:, None, :]
    along = np.einsum("gij,ij->gi", diff, vectors)
    perpendicular = diff - along[:, :, None] * vectors[None, :, :]
    values = np.einsum("gij,gij,i->g", perpendicular, perpendicular, weights)
    return values[0] if np.ndim(keypoint) == 1 else values
