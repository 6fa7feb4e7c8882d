"""
Multi-task training losses with analytic gradients.

``L = lambda_seg * L_seg + lambda_vecf * L_vecf`` where the segmentation term is a
focal loss and the vector-field term weighs a per-point L1 direction loss by a
learned confidence ``c_i`` with a ``-w log c_i`` regularizer.
"""

from dataclasses import dataclass
from typing import List, NamedTuple, Sequence, Tuple

import numpy as np
from numpy.typing import ArrayLike

from .errors import ConfigError, DomainError
from .geometry import unit_vector

DEFAULT_W_BALANCE = 0.015


@dataclass(frozen=True)
class LossConfig:
    """
    Loss weights and focal-loss shape.

    Parameters
    ----------
    lambda_seg, lambda_vecf : float
        Task weights, both 1.0 by default.
    w_balance : float
        Confidence regularizer weight ``w``, 0.015 by default.
    focal_gamma : float
        Focusing exponent, >= 0.
    focal_alpha : float
        Class balance factor in (0, 1].
    """

    lambda_seg: float = 1.0
    lambda_vecf: float = 1.0
    w_balance: float = DEFAULT_W_BALANCE
    focal_gamma: float = 2.0
    focal_alpha: float = 0.25

    def __post_init__(self):
        for name in ("lambda_seg", "lambda_vecf", "w_balance", "focal_gamma", "focal_alpha"):
            if not np.isfinite(getattr(self, name)):
                raise ConfigError(f"{name} must be finite, got {getattr(self, name)}")
        if not self.w_balance > 0:
            raise ConfigError(f"w_balance must be positive, got {self.w_balance}")
        if self.focal_gamma < 0:
            raise ConfigError(f"focal_gamma must be >= 0, got {self.focal_gamma}")
        if not 0 < self.focal_alpha <= 1:
            raise ConfigError(f"focal_alpha must lie in (0, 1], got {self.focal_alpha}")


@dataclass(frozen=True, eq=False)
class VecfSample:
    """One point's predicted and target directions with its confidence."""

    predicted_vector: np.ndarray
    target_vector: np.ndarray
    confidence: float

    def __post_init__(self):
        object.__setattr__(self, "predicted_vector", unit_vector(self.predicted_vector))
        object.__setattr__(self, "target_vector", unit_vector(self.target_vector))
        if not (np.isfinite(self.confidence) and 0 < self.confidence <= 1):
            raise DomainError(f"confidence must lie in (0, 1], got {self.confidence}")


class LossValue(NamedTuple):
    loss: float
    gradient: np.ndarray


def focal_loss(predicted_prob: float, is_positive: bool, config: LossConfig) -> Tuple[float, float]:
    """
    Focal loss ``-alpha (1 - p_t)^gamma log(p_t)`` and its derivative in ``p``.

    ``p_t`` is ``p`` for a positive label and ``1 - p`` otherwise; ``alpha`` weighs
    both classes, so ``gamma = 0, alpha = 1`` is plain cross entropy.

    Raises
    ------
    DomainError
        If ``predicted_prob`` is not strictly inside (0, 1).
    """
    p = float(predicted_prob)
    if not 0.0 < p < 1.0:
        raise DomainError(f"predicted probability must lie in (0, 1), got {predicted_prob}")
    alpha, gamma = config.focal_alpha, config.focal_gamma

    p_t = p if is_positive else 1.0 - p
    miss = 1.0 - p_t
    log_p_t = np.log(p_t)
    loss = -alpha * miss ** gamma * log_p_t

    # d/dp_t, then chain through dp_t/dp = +-1
    focus = gamma * miss ** (gamma - 1.0) * log_p_t if gamma > 0 else 0.0
    d_loss_d_pt = alpha * (focus - miss ** gamma / p_t)
    d_loss_d_prob = d_loss_d_pt if is_positive else -d_loss_d_pt
    return float(loss), float(d_loss_d_prob)


def kps_l1_loss(predicted: ArrayLike, target: ArrayLike) -> LossValue:
    """
    Component-wise L1 distance between two unit vectors.

    The gradient is with respect to ``predicted``; it is the sign of the difference
    and 0 where the components agree.
    """
    diff = unit_vector(predicted) - unit_vector(target)
    return LossValue(float(np.sum(np.abs(diff))), np.sign(diff))


def vecf_loss(samples: Sequence[VecfSample], config: LossConfig) -> LossValue:
    """
    Confidence-weighted vector-field loss ``mean_i(l_i c_i - w log c_i)``.

    Returns
    -------
    LossValue
        The loss and its gradient ``(l_i - w / c_i) / M`` with respect to each
        confidence.

    Raises
    ------
    DomainError
        If there are no samples.
    """
    if len(samples) == 0:
        raise DomainError("vecf_loss needs at least one sample")
    l1 = np.array([kps_l1_loss(s.predicted_vector, s.target_vector).loss for s in samples])
    confidence = np.array([s.confidence for s in samples])
    return vecf_loss_from_terms(l1, confidence, config)


def vecf_loss_from_terms(l1: ArrayLike, confidence: ArrayLike, config: LossConfig) -> LossValue:
    """:func:`vecf_loss` on precomputed per-point L1 losses."""
    l1 = np.asarray(l1, dtype=np.float64)
    confidence = np.asarray(confidence, dtype=np.float64)
    if l1.size == 0 or l1.shape != confidence.shape:
        raise DomainError(f"need matching non-empty terms, got {l1.shape} and {confidence.shape}")
    if np.any(~np.isfinite(confidence)) or np.any(confidence <= 0) or np.any(confidence > 1):
        raise DomainError("confidences must lie in (0, 1]")
    count = l1.size
    w = config.w_balance
    loss = float(np.sum(l1 * confidence - w * np.log(confidence)) / count)
    return LossValue(loss, (l1 - w / confidence) / count)


def optimal_confidence(l1: float, config: LossConfig) -> float:
    """Minimizer ``w / l`` of ``l c - w log c``, clipped to the confidence domain."""
    if l1 <= 0:
        return 1.0
    return min(1.0, config.w_balance / l1)


def total_loss(seg_loss: float, vecf: float, config: LossConfig) -> float:
    """``lambda_seg * seg_loss + lambda_vecf * vecf``."""
    return config.lambda_seg * float(seg_loss) + config.lambda_vecf * float(vecf)


def focal_loss_batch(probabilities: ArrayLike, labels: ArrayLike,
                     config: LossConfig) -> List[Tuple[float, float]]:
    """:func:`focal_loss` over matching sequences of probabilities and labels."""
    return [focal_loss(p, bool(y), config) for p, y in zip(probabilities, labels)]
