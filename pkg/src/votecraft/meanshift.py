"""
MeanShift mode seeking over candidate keypoint positions.

This is the iterative clustering baseline: every scene point proposes a candidate
``p_i + offset_i`` for a keypoint, and the keypoint is the densest mode of the
weighted candidates.

Kernels are evaluated only inside a bandwidth neighbourhood found with a k-d tree:
the flat kernel is exactly zero outside its radius and the gaussian kernel is
truncated at ``GAUSSIAN_CUTOFF`` bandwidths.
"""

import itertools
import logging
from dataclasses import dataclass, field
from functools import cached_property
from typing import List, NamedTuple, Optional, Tuple

import numpy as np
from numpy.typing import ArrayLike
from scipy.spatial import cKDTree

from .errors import ConfigError, DegenerateProblem, InvalidInput, ShapeError
from .geometry import as_point_cloud, farthest_point_indices
from .voting import VectorVoteProblem

logger = logging.getLogger(__name__)

KERNELS = ("gaussian", "flat")
BANDWIDTH_PER_DIAMETER = 0.05
GAUSSIAN_CUTOFF = 3.0


@dataclass(frozen=True)
class MeanShiftConfig:
    """
    MeanShift hyperparameters.

    Parameters
    ----------
    bandwidth : float
        Kernel bandwidth in metres (gaussian sigma, or flat radius).
    kernel : str
        ``"gaussian"`` or ``"flat"``.
    max_iterations : int
        Iteration cap per seed.
    shift_tolerance : float
        A seed has converged once its update moves it less than this.
    merge_radius : float, optional
        Modes closer than this are merged; defaults to ``bandwidth / 2``.
    max_seeds : int
        Upper bound on the number of seeds.
    bin_seeding : bool
        Seed from the weighted centroids of the heaviest bandwidth-sized grid
        cells. When false, every candidate is a seed, or ``max_seeds`` of them
        chosen by farthest point sampling.
    """

    bandwidth: float
    kernel: str = "gaussian"
    max_iterations: int = 100
    shift_tolerance: float = 1e-5
    merge_radius: Optional[float] = None
    max_seeds: int = 8
    bin_seeding: bool = True

    def __post_init__(self):
        if self.merge_radius is None:
            object.__setattr__(self, "merge_radius", self.bandwidth / 2)
        if self.kernel not in KERNELS:
            raise ConfigError(f"kernel must be one of {KERNELS}, got '{self.kernel}'")
        for name in ("bandwidth", "shift_tolerance", "merge_radius"):
            value = getattr(self, name)
            if not (np.isfinite(value) and value > 0):
                raise ConfigError(f"{name} must be positive, got {value}")
        if self.max_iterations < 1:
            raise ConfigError(f"max_iterations must be >= 1, got {self.max_iterations}")
        if self.max_seeds < 1:
            raise ConfigError(f"max_seeds must be >= 1, got {self.max_seeds}")
        if self.merge_radius > self.bandwidth:
            raise ConfigError(
                f"merge_radius ({self.merge_radius}) must not exceed bandwidth ({self.bandwidth})"
            )

    @property
    def support_radius(self) -> float:
        """Distance beyond which the kernel is zero."""
        if self.kernel == "gaussian":
            return GAUSSIAN_CUTOFF * self.bandwidth
        return self.bandwidth

    @classmethod
    def for_diameter(cls, diameter: float, **overrides) -> "MeanShiftConfig":
        """Default configuration with the bandwidth scaled to an object diameter."""
        if not diameter > 0:
            raise ConfigError(f"diameter must be positive, got {diameter}")
        return cls(bandwidth=BANDWIDTH_PER_DIAMETER * diameter, **overrides)


@dataclass(frozen=True, eq=False)
class CandidateSet:
    """Weighted candidate positions for one keypoint."""

    candidates: np.ndarray
    weights: np.ndarray = field(default=None)

    def __post_init__(self):
        candidates = as_point_cloud(self.candidates, allow_empty=True)
        if self.weights is None:
            weights = np.ones(candidates.shape[0])
        else:
            weights = np.asarray(self.weights, dtype=np.float64)
        if weights.shape != (candidates.shape[0],):
            raise ShapeError(
                f"weights must have shape ({candidates.shape[0]},), got {weights.shape}"
            )
        if not np.all(np.isfinite(weights)) or np.any(weights < 0):
            raise InvalidInput("candidate weights must be finite and non-negative")
        object.__setattr__(self, "candidates", candidates)
        object.__setattr__(self, "weights", weights)

    def __len__(self) -> int:
        return self.candidates.shape[0]

    @cached_property
    def tree(self) -> cKDTree:
        return cKDTree(self.candidates)


class MeanShiftResult(NamedTuple):
    mode: np.ndarray
    iterations_used: int
    support: float


class _Neighbourhood(NamedTuple):
    rows: np.ndarray
    cols: np.ndarray
    kernel: np.ndarray


def _neighbourhood(positions: np.ndarray, candidate_set: CandidateSet,
                   config: MeanShiftConfig) -> _Neighbourhood:
    """(position, candidate) pairs within the kernel support, with weighted kernel values."""
    lists = candidate_set.tree.query_ball_point(positions, config.support_radius)
    counts = np.fromiter((len(c) for c in lists), dtype=np.intp, count=len(lists))
    rows = np.repeat(np.arange(len(lists)), counts)
    cols = np.fromiter(itertools.chain.from_iterable(lists), dtype=np.intp,
                       count=int(counts.sum()))
    squared = np.sum((candidate_set.candidates[cols] - positions[rows]) ** 2, axis=1)
    if config.kernel == "gaussian":
        kernel = np.exp(-0.5 * squared / config.bandwidth ** 2)
    else:
        kernel = np.ones(cols.size)
    return _Neighbourhood(rows, cols, kernel * candidate_set.weights[cols])


def kernel_density(positions: ArrayLike, candidate_set: CandidateSet,
                   config: MeanShiftConfig) -> np.ndarray:
    """Weighted kernel density (unnormalized) at each of the (S, 3) positions."""
    positions = np.atleast_2d(np.asarray(positions, dtype=np.float64))
    pairs = _neighbourhood(positions, candidate_set, config)
    return np.bincount(pairs.rows, weights=pairs.kernel, minlength=positions.shape[0])


def shift_points(positions: ArrayLike, candidate_set: CandidateSet,
                 config: MeanShiftConfig) -> Tuple[np.ndarray, np.ndarray]:
    """
    One weighted kernel-mean update.

    Returns
    -------
    Tuple[np.ndarray, np.ndarray]
        Updated (S, 3) positions and the kernel weight mass behind each; positions
        with no mass stay where they were.
    """
    positions = np.atleast_2d(np.asarray(positions, dtype=np.float64))
    count = positions.shape[0]
    pairs = _neighbourhood(positions, candidate_set, config)
    mass = np.bincount(pairs.rows, weights=pairs.kernel, minlength=count)
    neighbours = candidate_set.candidates[pairs.cols]
    sums = np.stack([np.bincount(pairs.rows, weights=pairs.kernel * neighbours[:, axis],
                                 minlength=count) for axis in range(3)], axis=1)
    updated = positions.copy()
    has_mass = mass > 0
    updated[has_mass] = sums[has_mass] / mass[has_mass, None]
    return updated, mass


def _bin_seeds(candidate_set: CandidateSet, config: MeanShiftConfig) -> np.ndarray:
    cells = np.floor(candidate_set.candidates / config.bandwidth).astype(np.int64)
    keys, inverse = np.unique(cells, axis=0, return_inverse=True)
    inverse = inverse.reshape(-1)
    mass = np.bincount(inverse, weights=candidate_set.weights, minlength=keys.shape[0])
    centroids = np.stack([
        np.bincount(inverse, weights=candidate_set.weights * candidate_set.candidates[:, axis],
                    minlength=keys.shape[0]) for axis in range(3)], axis=1)
    occupied = np.flatnonzero(mass > 0)
    # heaviest cells first; ties by cell index
    order = occupied[np.lexsort((keys[occupied, 2], keys[occupied, 1], keys[occupied, 0],
                                 -mass[occupied]))]
    chosen = order[:config.max_seeds]
    return centroids[chosen] / mass[chosen, None]


def select_seeds(candidate_set: CandidateSet, config: MeanShiftConfig) -> np.ndarray:
    """
    Starting positions for mode seeking.

    With ``bin_seeding`` these are the weighted centroids of the ``max_seeds``
    heaviest grid cells of side ``bandwidth``; otherwise all candidates, or
    ``max_seeds`` of them by farthest point sampling.
    """
    if config.bin_seeding:
        return _bin_seeds(candidate_set, config)
    if len(candidate_set) <= config.max_seeds:
        return candidate_set.candidates.copy()
    indices = farthest_point_indices(candidate_set.candidates, config.max_seeds, start=0)
    return candidate_set.candidates[np.sort(indices)]


def merge_modes(positions: np.ndarray, support: np.ndarray,
                merge_radius: float) -> Tuple[np.ndarray, np.ndarray]:
    """
    Merge converged seeds into distinct modes.

    Seeds are visited by descending support, ties broken by lexicographic position,
    and a seed within ``merge_radius`` of an earlier mode is absorbed by it.
    """
    order = np.lexsort((positions[:, 2], positions[:, 1], positions[:, 0], -support))
    modes: List[int] = []
    for index in order:
        if all(np.linalg.norm(positions[index] - positions[m]) > merge_radius for m in modes):
            modes.append(int(index))
    return positions[modes], support[modes]


def mean_shift_mode(candidate_set: CandidateSet, config: MeanShiftConfig) -> MeanShiftResult:
    """
    Densest weighted mode of a candidate set.

    Parameters
    ----------
    candidate_set : CandidateSet
        Candidates and their weights.
    config : MeanShiftConfig
        Kernel and convergence settings.

    Returns
    -------
    MeanShiftResult
        The mode with the greatest kernel-weighted support, the largest number of
        iterations any seed needed, and that support.

    Raises
    ------
    DegenerateProblem
        If there are no candidates or no positive weight.
    """
    if len(candidate_set) == 0:
        raise DegenerateProblem("no candidates to cluster")
    if not np.any(candidate_set.weights > 0):
        raise DegenerateProblem("every candidate weight is zero")

    positions = select_seeds(candidate_set, config)
    active = np.ones(positions.shape[0], dtype=bool)
    iterations = np.zeros(positions.shape[0], dtype=np.int64)

    for _ in range(config.max_iterations):
        indices = np.flatnonzero(active)
        if indices.size == 0:
            break
        updated, mass = shift_points(positions[indices], candidate_set, config)
        moved = np.linalg.norm(updated - positions[indices], axis=1)
        positions[indices] = updated
        iterations[indices] += 1
        active[indices[(moved < config.shift_tolerance) | (mass == 0)]] = False

    if np.any(active):
        logger.debug("%d of %d seeds hit max_iterations=%d",
                     int(active.sum()), active.size, config.max_iterations)

    support = kernel_density(positions, candidate_set, config)
    modes, mode_support = merge_modes(positions, support, config.merge_radius)
    return MeanShiftResult(
        mode=modes[0].copy(),
        iterations_used=int(iterations.max()),
        support=float(mode_support[0]),
    )


def cluster_all_keypoints(problem: VectorVoteProblem,
                          offsets: ArrayLike,
                          config: MeanShiftConfig,
                          masks: Optional[ArrayLike] = None) -> List[MeanShiftResult]:
    """
    Run MeanShift for every keypoint of a voting problem.

    Parameters
    ----------
    problem : VectorVoteProblem
        Supplies the points and weights.
    offsets : array_like
        (K, M, 3) predicted offsets; the candidates of keypoint j are
        ``points + offsets[j]``.
    config : MeanShiftConfig
        MeanShift settings shared by all keypoints.
    masks : array_like, optional
        (K, M) booleans selecting the candidates that vote for each keypoint.

    Returns
    -------
    List[MeanShiftResult]
        One result per keypoint, in row order; ``[r.mode for r in ...]`` gives the
        keypoint positions.

    Raises
    ------
    ShapeError
        If ``offsets`` or ``masks`` do not match the problem.
    DegenerateProblem
        Annotated with the keypoint index when a keypoint has no candidates.
    """
    offsets = np.asarray(offsets, dtype=np.float64)
    expected = (problem.keypoint_count, problem.point_count, 3)
    if offsets.shape != expected:
        raise ShapeError(f"offsets must have shape {expected}, got {offsets.shape}")
    if masks is None:
        masks = np.ones(expected[:2], dtype=bool)
    else:
        masks = np.asarray(masks, dtype=bool)
        if masks.shape != expected[:2]:
            raise ShapeError(f"masks must have shape {expected[:2]}, got {masks.shape}")

    results = []
    for j in range(problem.keypoint_count):
        selected = masks[j]
        candidates = CandidateSet(problem.points[selected] + offsets[j][selected],
                                  problem.weights[selected])
        try:
            results.append(mean_shift_mode(candidates, config))
        except DegenerateProblem as e:
            raise DegenerateProblem(str(e), keypoint_index=j) from e
    return results

