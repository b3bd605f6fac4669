"""Axial target construction, the visibility-weighted BCE loss, and decoding.

The tracker is supervised with a pair of 1D vectors per frame, one along
each image axis, instead of a dense 2D map. Targets come in three kinds:
one-hot for visible or partially occluded balls, a truncation-normalized
Gaussian for fully occluded ones, and all-zero when the ball is out of
frame. Predictions are decoded back to pixel coordinates by per-axis
argmax with a confidence gate.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np
import torch

from occutrack.core import (
    BallAnnotation,
    ContractViolation,
    LossWeights,
    PipelineConfig,
    Visibility,
)

ArrayLike = Union[np.ndarray, torch.Tensor]

DEFAULT_EPSILON = 1e-6


class TargetKind(enum.Enum):
    ONE_HOT = "one_hot"
    GAUSSIAN = "gaussian"
    NO_TARGET = "no_target"


@dataclass
class AxialTargets:
    """Supervision pair: t_x over image width, t_y over image height."""

    t_x: np.ndarray
    t_y: np.ndarray
    kind: TargetKind

    def validate(self) -> None:
        for v in (self.t_x, self.t_y):
            if np.any(v < 0):
                raise ContractViolation("axial target has negative entries")
            if self.kind == TargetKind.ONE_HOT:
                if np.count_nonzero(v) != 1 or v.max() != 1.0:
                    raise ContractViolation("one-hot target must have a single 1")
            elif self.kind == TargetKind.GAUSSIAN:
                if abs(float(v.sum()) - 1.0) > 1e-6:
                    raise ContractViolation("gaussian target must sum to 1")
            else:
                if np.any(v != 0):
                    raise ContractViolation("no-target vectors must be all zero")


@dataclass
class AxialPrediction:
    """Activated per-axis score vectors, tagged with their activation mode."""

    p_x: ArrayLike
    p_y: ArrayLike
    activation_mode: str = "softmax-axial"

    def numpy(self) -> "AxialPrediction":
        return AxialPrediction(_as_numpy(self.p_x), _as_numpy(self.p_y),
                               self.activation_mode)


@dataclass(frozen=True)
class DecodedBall:
    """Pixel position recovered from an axial prediction."""

    x: int
    y: int
    confidence: float


def _as_numpy(v: ArrayLike) -> np.ndarray:
    if isinstance(v, torch.Tensor):
        return v.detach().cpu().numpy()
    return np.asarray(v)


def _round_index(coord: float, extent: int) -> int:
    # Banker's rounding, then clamp so coords just below the upper edge
    # (e.g. extent - 0.5 on an even grid) stay on the grid.
    idx = int(np.rint(coord))
    return min(max(idx, 0), extent - 1)


def make_onehot(t_x: float, t_y: float, w: int, h: int) -> AxialTargets:
    """One-hot pair with the 1 at the rounded coordinate on each axis."""
    if not (0 <= t_x < w) or not (0 <= t_y < h):
        raise ContractViolation(f"coordinates ({t_x}, {t_y}) outside {w}x{h} grid")
    vx = np.zeros(w, dtype=np.float32)
    vy = np.zeros(h, dtype=np.float32)
    vx[_round_index(t_x, w)] = 1.0
    vy[_round_index(t_y, h)] = 1.0
    return AxialTargets(vx, vy, TargetKind.ONE_HOT)


def make_gaussian(t_x: float, t_y: float, sigma: float, w: int, h: int) -> AxialTargets:
    """Gaussian pair centered on (t_x, t_y), each vector normalized to sum 1.

    Normalizing by the on-grid sum (not the analytic integral) keeps the
    sum-to-one property exact even when the center sits near a border and
    the tail is truncated.
    """
    if sigma <= 0:
        raise ContractViolation(f"sigma must be > 0, got {sigma}")
    if not (0 <= t_x < w) or not (0 <= t_y < h):
        raise ContractViolation(f"coordinates ({t_x}, {t_y}) outside {w}x{h} grid")

    def axis(center: float, extent: int) -> np.ndarray:
        grid = np.arange(extent, dtype=np.float64)
        g = np.exp(-((grid - center) ** 2) / (2.0 * sigma * sigma))
        return (g / g.sum()).astype(np.float32)

    return AxialTargets(axis(t_x, w), axis(t_y, h), TargetKind.GAUSSIAN)


def make_no_target(w: int, h: int) -> AxialTargets:
    return AxialTargets(np.zeros(w, dtype=np.float32),
                        np.zeros(h, dtype=np.float32),
                        TargetKind.NO_TARGET)


def build_target(ann: BallAnnotation, config: PipelineConfig) -> AxialTargets:
    """Pick the target kind an annotation's visibility calls for."""
    if ann.visibility == Visibility.OUT_OF_FRAME:
        return make_no_target(config.width, config.height)
    x, y = ann.position()
    if ann.visibility == Visibility.FULLY_OCCLUDED:
        return make_gaussian(x, y, config.sigma, config.width, config.height)
    return make_onehot(x, y, config.width, config.height)


def activate(scores_x: torch.Tensor, scores_y: torch.Tensor,
             mode: str = "softmax-axial") -> AxialPrediction:
    """Turn raw per-axis scores into probabilities.

    softmax-axial normalizes each vector to a distribution over its axis;
    sigmoid-axial squashes entries independently, which is the only mode
    where an all-zero no-target supervision signal is attainable.
    """
    if mode == "softmax-axial":
        return AxialPrediction(torch.softmax(scores_x, dim=-1),
                               torch.softmax(scores_y, dim=-1), mode)
    if mode == "sigmoid-axial":
        return AxialPrediction(torch.sigmoid(scores_x),
                               torch.sigmoid(scores_y), mode)
    raise ContractViolation(f"unknown activation mode {mode!r}")


def _bce_vec(p: torch.Tensor, t: torch.Tensor, eps: float) -> torch.Tensor:
    p = p.clamp(eps, 1.0 - eps)
    return -(t * torch.log(p) + (1.0 - t) * torch.log1p(-p)).mean(dim=-1)


def weighted_bce_loss(pred: AxialPrediction, target: AxialTargets,
                      visibility: Visibility, weights: LossWeights,
                      epsilon: float = DEFAULT_EPSILON) -> torch.Tensor:
    """w_v * (BCE(p_x, t_x) + BCE(p_y, t_y)) with mean-reduced BCE.

    Predictions are clamped to [epsilon, 1 - epsilon] before the logs, so
    the value is finite and differentiable for any input in [0, 1].
    """
    if not (0 < epsilon < 0.5):
        raise ContractViolation(f"epsilon must be in (0, 0.5), got {epsilon}")
    p_x = torch.as_tensor(pred.p_x)
    p_y = torch.as_tensor(pred.p_y)
    t_x = torch.as_tensor(target.t_x, dtype=p_x.dtype, device=p_x.device)
    t_y = torch.as_tensor(target.t_y, dtype=p_y.dtype, device=p_y.device)
    if p_x.shape != t_x.shape or p_y.shape != t_y.shape:
        raise ContractViolation(
            f"pred/target length mismatch: x {tuple(p_x.shape)} vs "
            f"{tuple(t_x.shape)}, y {tuple(p_y.shape)} vs {tuple(t_y.shape)}"
        )
    w = weights[visibility]
    return w * (_bce_vec(p_x, t_x, epsilon) + _bce_vec(p_y, t_y, epsilon))


def batch_loss(preds: Sequence[AxialPrediction], targets: Sequence[AxialTargets],
               visibilities: Sequence[Visibility], weights: LossWeights,
               epsilon: float = DEFAULT_EPSILON) -> torch.Tensor:
    """Mean of per-sample weighted losses.

    Zero-weight samples contribute 0 to the numerator but still count in
    the denominator, so the value does not jump when their share of a
    batch changes.
    """
    if len(preds) == 0:
        raise ContractViolation("batch_loss on an empty batch")
    if not (len(preds) == len(targets) == len(visibilities)):
        raise ContractViolation("preds/targets/visibilities length mismatch")
    total = None
    for pred, target, vis in zip(preds, targets, visibilities):
        term = weighted_bce_loss(pred, target, vis, weights, epsilon)
        total = term if total is None else total + term
    return total / len(preds)


def batch_loss_tensors(p_x: torch.Tensor, p_y: torch.Tensor,
                       t_x: torch.Tensor, t_y: torch.Tensor,
                       sample_weights: torch.Tensor,
                       epsilon: float = DEFAULT_EPSILON) -> torch.Tensor:
    """Vectorized batch loss over (B, W)/(B, H) stacks; training hot path.

    Matches batch_loss on the same data: per-sample mean-reduced BCE per
    axis, weighted, then averaged over the batch.
    """
    if p_x.shape != t_x.shape or p_y.shape != t_y.shape:
        raise ContractViolation("pred/target shape mismatch in batch loss")
    if p_x.shape[0] == 0:
        raise ContractViolation("batch_loss_tensors on an empty batch")
    per_sample = _bce_vec(p_x, t_x, epsilon) + _bce_vec(p_y, t_y, epsilon)
    return (sample_weights * per_sample).mean()


def decode(pred: AxialPrediction, tau: float) -> Optional[DecodedBall]:
    """Argmax each axis; gate on the weaker of the two peak values.

    Returns None (no ball) when min(max p_x, max p_y) falls below tau.
    Ties resolve toward the lowest index.
    """
    p_x = _as_numpy(pred.p_x)
    p_y = _as_numpy(pred.p_y)
    ix = int(np.argmax(p_x))
    iy = int(np.argmax(p_y))
    confidence = float(min(p_x[ix], p_y[iy]))
    if confidence < tau:
        return None
    return DecodedBall(x=ix, y=iy, confidence=confidence)
