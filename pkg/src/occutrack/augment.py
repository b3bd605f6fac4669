"""Training-time augmentation with exact coordinate bookkeeping.

Two families live here. The occlusion family hides the ball in the target
frame behind a mean-filled shape (label untouched, so the network must
look at neighboring frames) and plants mean-filled decoy patches in the
context frames. The standard family is flips, random crop+resize, and
color jitter, all applied identically to every frame and every annotation
of a window.

Every op returns a new window; inputs are never mutated.
"""

from __future__ import annotations

import logging
from typing import Callable, NamedTuple, Optional, Sequence

import cv2
import numpy as np

from occutrack.core import (
    BallAnnotation,
    ContractViolation,
    FrameWindow,
    PipelineConfig,
    Visibility,
)

log = logging.getLogger(__name__)

_INTERP = {"linear": cv2.INTER_LINEAR, "nearest": cv2.INTER_NEAREST}

# windows skipped by occlude_target because the target ball was already
# invisible; exposed for monitoring
_occlude_skips = 0


def occlude_skip_count() -> int:
    return _occlude_skips


def _copy_window(window: FrameWindow, frames: Optional[np.ndarray] = None,
                 annotations: Optional[list] = None) -> FrameWindow:
    meta = dict(window.meta)
    return FrameWindow(
        frames=window.frames.copy() if frames is None else frames,
        annotations=list(window.annotations) if annotations is None else annotations,
        target_index=window.target_index,
        source_id=window.source_id,
        original_resolution=window.original_resolution,
        meta=meta,
    )


def _shape_mask(h: int, w: int, shape: str, cx: float, cy: float,
                half_w: float, half_h: float) -> np.ndarray:
    ys, xs = np.ogrid[0:h, 0:w]
    if shape == "rectangle":
        return (np.abs(xs - cx) <= half_w) & (np.abs(ys - cy) <= half_h)
    if shape == "ellipse":
        return ((xs - cx) / half_w) ** 2 + ((ys - cy) / half_h) ** 2 <= 1.0
    raise ContractViolation(f"unknown shape {shape!r}")


def occlude_target(window: FrameWindow, rng: np.random.Generator,
                   size_range: tuple = (6.0, 18.0),
                   shapes: Sequence[str] = ("rectangle", "ellipse"),
                   ring_margin: int = 4) -> FrameWindow:
    """Hide the target-frame ball behind a shape filled with its ring mean.

    The fill value is the per-channel mean of a ring around the shape (the
    shape dilated by ring_margin, minus the shape itself), so the patch
    blends with its local surroundings. The annotation keeps its original
    visibility and position: supervision persists, only the evidence in
    the target frame is gone.
    """
    global _occlude_skips
    ann = window.target
    if ann.visibility not in (Visibility.VISIBLE, Visibility.PARTIALLY_OCCLUDED):
        _occlude_skips += 1
        log.debug("occlude_target skipped on %s: target is %s",
                  window.source_id, ann.visibility.name)
        return window
    t, h, w = window.shape
    cx, cy = ann.position()
    half_w = rng.uniform(*size_range) / 2.0
    half_h = rng.uniform(*size_range) / 2.0
    shape = str(rng.choice(list(shapes)))
    mask = _shape_mask(h, w, shape, cx, cy, half_w, half_h)
    outer = _shape_mask(h, w, shape, cx, cy, half_w + ring_margin,
                        half_h + ring_margin)
    ring = outer & ~mask
    frame = window.frames[window.target_index]
    if ring.any():
        fill = frame[ring].mean(axis=0)
    else:
        fill = frame.reshape(-1, 3).mean(axis=0)
    frames = window.frames.copy()
    frames[window.target_index][mask] = fill
    out = _copy_window(window, frames=frames)
    out.meta["occluded_shape"] = {
        "shape": shape, "cx": float(cx), "cy": float(cy),
        "half_w": float(half_w), "half_h": float(half_h),
        "fill": [float(v) for v in fill],
    }
    return out


def _patch_touches_ball(cx, cy, half_w, half_h, bx, by, radius) -> bool:
    # nearest point of the patch bounding box to the ball center
    nx = min(max(bx, cx - half_w), cx + half_w)
    ny = min(max(by, cy - half_h), cy + half_h)
    return (nx - bx) ** 2 + (ny - by) ** 2 <= (radius + 1.0) ** 2


def add_decoy_patches(window: FrameWindow, rng: np.random.Generator,
                      count_range: tuple = (0, 3),
                      size_range: tuple = (6.0, 18.0),
                      ball_radius: float = 3.0,
                      shapes: Sequence[str] = ("rectangle", "ellipse"),
                      max_tries: int = 30) -> FrameWindow:
    """Fill random self-mean patches into the context frames.

    The target frame is never touched. In context frames, placements whose
    bounding box would reach the ball disc are resampled, so decoys only
    ever imitate occluders without hiding real evidence.
    """
    t, h, w = window.shape
    frames = window.frames.copy()
    placed = []
    for i in range(t):
        if i == window.target_index:
            continue
        ann = window.annotations[i]
        ball = ann.position() if ann.has_position() else None
        count = int(rng.integers(count_range[0], count_range[1] + 1))
        for _ in range(count):
            for _ in range(max_tries):
                half_w = rng.uniform(*size_range) / 2.0
                half_h = rng.uniform(*size_range) / 2.0
                cx = rng.uniform(0, w - 1)
                cy = rng.uniform(0, h - 1)
                if ball is None or not _patch_touches_ball(
                        cx, cy, half_w, half_h, ball[0], ball[1], ball_radius):
                    break
            else:
                continue
            shape = str(rng.choice(list(shapes)))
            mask = _shape_mask(h, w, shape, cx, cy, half_w, half_h)
            if not mask.any():
                continue
            frames[i][mask] = frames[i][mask].mean(axis=0)
            placed.append({"frame": i, "shape": shape, "cx": float(cx),
                           "cy": float(cy)})
    out = _copy_window(window, frames=frames)
    out.meta["decoy_patches"] = placed
    return out


# --- geometric family ------------------------------------------------------

def _map_annotations(window: FrameWindow, fn) -> list[BallAnnotation]:
    """Apply a coordinate map; positions that leave the frame become
    out-of-frame sentinels."""
    t, h, w = window.shape
    out = []
    for ann in window.annotations:
        if not ann.has_position():
            out.append(ann)
            continue
        x, y = fn(ann.x, ann.y)
        if 0 <= x < w and 0 <= y < h:
            out.append(BallAnnotation(ann.frame_index, x, y, ann.visibility))
        else:
            out.append(BallAnnotation(ann.frame_index, -1.0, -1.0,
                                      Visibility.OUT_OF_FRAME))
    return out


def hflip_window(window: FrameWindow) -> FrameWindow:
    t, h, w = window.shape
    frames = np.ascontiguousarray(window.frames[:, :, ::-1])
    anns = _map_annotations(window, lambda x, y: (w - 1 - x, y))
    return _copy_window(window, frames=frames, annotations=anns)


def vflip_window(window: FrameWindow) -> FrameWindow:
    t, h, w = window.shape
    frames = np.ascontiguousarray(window.frames[:, ::-1])
    anns = _map_annotations(window, lambda x, y: (x, h - 1 - y))
    return _copy_window(window, frames=frames, annotations=anns)


def crop_resize_window(window: FrameWindow, top: int, left: int,
                       box_h: int, box_w: int,
                       interpolation: str = "linear") -> FrameWindow:
    """Crop the given box from every frame and resize back to (H, W).

    Coordinate map: x' = (x - left) * W / box_w, y' = (y - top) * H / box_h.
    """
    t, h, w = window.shape
    if not (0 <= top and top + box_h <= h and 0 <= left and left + box_w <= w):
        raise ContractViolation(
            f"crop box ({top},{left},{box_h},{box_w}) outside {w}x{h} frame")
    if box_h < 2 or box_w < 2:
        raise ContractViolation("crop box too small")
    interp = _INTERP[interpolation]
    frames = np.stack([
        cv2.resize(f[top:top + box_h, left:left + box_w], (w, h),
                   interpolation=interp)
        for f in window.frames
    ])
    sx = w / box_w
    sy = h / box_h
    anns = _map_annotations(window, lambda x, y: ((x - left) * sx, (y - top) * sy))
    return _copy_window(window, frames=frames, annotations=anns)


def random_crop_resize(window: FrameWindow, rng: np.random.Generator,
                       scale_range: tuple = (0.7, 1.0), max_tries: int = 30,
                       interpolation: str = "linear") -> FrameWindow:
    """Sample a crop that keeps the target-frame ball; give up after
    max_tries and return the window unchanged."""
    t, h, w = window.shape
    target = window.target
    for _ in range(max_tries):
        scale = rng.uniform(*scale_range)
        box_h = max(int(round(h * scale)), 2)
        box_w = max(int(round(w * scale)), 2)
        top = int(rng.integers(0, h - box_h + 1))
        left = int(rng.integers(0, w - box_w + 1))
        if target.has_position():
            x, y = target.position()
            margin = 2.0
            if not (left + margin <= x < left + box_w - margin
                    and top + margin <= y < top + box_h - margin):
                continue
        return crop_resize_window(window, top, left, box_h, box_w, interpolation)
    return window


def color_jitter_window(window: FrameWindow, rng: np.random.Generator,
                        strength: float = 0.2) -> FrameWindow:
    """Brightness/contrast/channel-gain jitter; coordinates untouched."""
    brightness = 1.0 + rng.uniform(-strength, strength)
    contrast = 1.0 + rng.uniform(-strength, strength)
    gains = 1.0 + rng.uniform(-strength / 2, strength / 2, size=3)
    frames = (window.frames - 0.5) * contrast + 0.5
    frames = frames * (brightness * gains.astype(np.float32))
    np.clip(frames, 0.0, 1.0, out=frames)
    return _copy_window(window, frames=frames.astype(np.float32))


def geometric_augment(window: FrameWindow, rng: np.random.Generator,
                      config: PipelineConfig) -> FrameWindow:
    """Flips and crop+resize, each gated by its configured probability."""
    out = window
    fired = []
    if rng.random() < config.hflip_prob:
        out = hflip_window(out)
        fired.append("hflip")
    if rng.random() < config.vflip_prob:
        out = vflip_window(out)
        fired.append("vflip")
    if rng.random() < config.crop_prob:
        out = random_crop_resize(out, rng, config.crop_scale_range)
        fired.append("crop_resize")
    if fired:
        out = _copy_window(out, frames=out.frames, annotations=out.annotations)
        out.meta["geometric_fired"] = fired
    return out


# --- pipeline composition ---------------------------------------------------

class AugmentOp(NamedTuple):
    name: str
    prob: float
    fn: Callable[[FrameWindow, np.random.Generator], FrameWindow]


def compose(pipeline: Sequence[AugmentOp], window: FrameWindow,
            rng: np.random.Generator) -> FrameWindow:
    """Run ops in order, each gated by an independent Bernoulli draw.

    The names of ops that fired land in window.meta["augment_fired"].
    """
    fired = []
    out = window
    for op in pipeline:
        if not (0.0 <= op.prob <= 1.0):
            raise ContractViolation(f"op {op.name}: probability {op.prob}")
        if rng.random() < op.prob:
            out = op.fn(out, rng)
            fired.append(op.name)
    if out is window:
        out = _copy_window(window)
    out.meta["augment_fired"] = fired
    return out


def build_pipeline(config: PipelineConfig) -> list[AugmentOp]:
    """The training pipeline: geometric, then photometric, then occlusion,
    then decoys, honoring the config toggles."""
    ops: list[AugmentOp] = []
    if config.use_std_aug:
        ops.append(AugmentOp(
            "geometric", 1.0,
            lambda win, rng: geometric_augment(win, rng, config)))
        ops.append(AugmentOp(
            "color_jitter", config.jitter_prob,
            lambda win, rng: color_jitter_window(win, rng, config.jitter_strength)))
    if config.use_occlusion_aug:
        ops.append(AugmentOp(
            "occlude_target", config.occlusion_prob,
            lambda win, rng: occlude_target(
                win, rng, config.occlusion_size_range,
                config.occlusion_shapes, config.ring_margin)))
        ops.append(AugmentOp(
            "decoy_patches", 1.0,
            lambda win, rng: add_decoy_patches(
                win, rng, config.decoy_count_range, config.decoy_size_range,
                config.ball_radius_px, config.occlusion_shapes)))
    return ops
