"""Optical flow providers for motion-aware tracking.

Flow enters the network as two extra channels on the first encoder stage.
Three providers are available: a pyramidal block-matching estimator (the
shipping default, no learned weights), an oracle that reads exact motion
out of a synthetic scene, and a zero provider for ablations.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import cv2
import numpy as np

from occutrack.core import ContractViolation, PipelineConfig
from occutrack.synth import SynthClip, _occluder_alpha, _disc_alpha, _patch_bounds, _states_at


@dataclass
class FlowField:
    """Per-pixel displacements between consecutive frames.

    vectors[i, y, x] = (dx, dy) taking frame i to frame i+1, in pixels at
    the frame resolution; shape (T-1, H, W, 2).
    """

    vectors: np.ndarray

    def __post_init__(self):
        v = self.vectors
        if v.ndim != 4 or v.shape[3] != 2:
            raise ContractViolation(f"flow must be (T-1, H, W, 2), got {v.shape}")
        if not np.isfinite(v).all():
            raise ContractViolation("flow field has non-finite entries")

    def padded_to(self, t: int) -> np.ndarray:
        """(T, H, W, 2) with the last field repeated, aligning flow to frames."""
        v = self.vectors
        if v.shape[0] != t - 1:
            raise ContractViolation(f"flow has {v.shape[0]} fields for {t} frames")
        return np.concatenate([v, v[-1:]], axis=0)


FlowProvider = Callable[[np.ndarray], FlowField]


def compute_flow(frames: np.ndarray, provider: FlowProvider) -> FlowField:
    """Run a provider over a (T, H, W, 3) frame stack. Needs T >= 2."""
    if frames.ndim != 4 or frames.shape[0] < 2:
        raise ContractViolation(
            f"flow needs at least 2 frames of shape (T, H, W, 3), got {frames.shape}")
    flow = provider(frames)
    t, h, w = frames.shape[:3]
    if flow.vectors.shape != (t - 1, h, w, 2):
        raise ContractViolation(
            f"provider returned {flow.vectors.shape}, expected {(t - 1, h, w, 2)}")
    return flow


def zero_flow(frames: np.ndarray) -> FlowField:
    t, h, w = frames.shape[:3]
    return FlowField(np.zeros((t - 1, h, w, 2), dtype=np.float32))


def _to_gray(frame: np.ndarray) -> np.ndarray:
    f = frame.astype(np.float32)
    if f.max() > 1.5:
        f = f / 255.0
    return f.mean(axis=2)


def _level_displacement(a: np.ndarray, b: np.ndarray, radius: int,
                        agg: int, prior: np.ndarray,
                        penalty: float) -> np.ndarray:
    """One pyramid level of block matching.

    b is pre-warped by the prior, then every integer displacement within
    the search radius is scored by box-aggregated squared difference plus
    a small magnitude penalty (so textureless regions settle on zero flow
    instead of noise); a parabola fit refines to subpixel.
    """
    h, w = a.shape
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float32)
    warped = cv2.remap(b, xs + prior[..., 0], ys + prior[..., 1],
                       cv2.INTER_LINEAR, borderMode=cv2.BORDER_REPLICATE)
    n = 2 * radius + 1
    costs = np.empty((n, n, h, w), dtype=np.float32)
    for iy, dy in enumerate(range(-radius, radius + 1)):
        for ix, dx in enumerate(range(-radius, radius + 1)):
            shifted = cv2.remap(warped, xs + dx, ys + dy, cv2.INTER_LINEAR,
                                borderMode=cv2.BORDER_REPLICATE)
            diff = (a - shifted) ** 2
            costs[iy, ix] = cv2.boxFilter(diff, -1, (agg, agg),
                                          borderType=cv2.BORDER_REPLICATE)
            costs[iy, ix] += penalty * ((prior[..., 0] + dx) ** 2
                                        + (prior[..., 1] + dy) ** 2)
    flat = costs.reshape(n * n, h, w)
    best = flat.argmin(axis=0)
    by, bx = np.unravel_index(best, (n, n))
    iy, ix = np.mgrid[0:h, 0:w]

    def parabola(idx_grid, along_y):
        # quadratic fit through the cost and its two neighbors on one axis
        lo = np.clip(idx_grid - 1, 0, n - 1)
        hi = np.clip(idx_grid + 1, 0, n - 1)
        if along_y:
            c0, c1, c2 = costs[lo, bx, iy, ix], costs[idx_grid, bx, iy, ix], \
                costs[hi, bx, iy, ix]
        else:
            c0, c1, c2 = costs[by, lo, iy, ix], costs[by, idx_grid, iy, ix], \
                costs[by, hi, iy, ix]
        denom = c0 - 2 * c1 + c2
        # refine only strict minima; a perfect match (c1 == 0) is already
        # the answer and the vertex formula would drag it off-center
        valid = (denom > 1e-12) & (c1 > 1e-12)
        safe = np.where(valid, denom, 1.0)
        offset = np.where(valid, 0.5 * (c0 - c2) / safe, 0.0)
        return np.clip(offset, -0.5, 0.5)

    sub_y = parabola(by, True)
    sub_x = parabola(bx, False)
    disp = np.stack([(bx - radius) + sub_x, (by - radius) + sub_y], axis=-1)
    return prior + disp.astype(np.float32)


class BlockMatchingFlow:
    """Coarse-to-fine block matching; no training, CPU-only.

    downscale reduces working resolution before the pyramid (the network
    only needs coarse motion hints); radius is the per-level search range.
    """

    def __init__(self, downscale: int = 2, radius: int = 3, agg: int = 3,
                 min_side: int = 24, penalty: float = 1e-5,
                 texture_floor: float = 5e-3):
        if downscale < 1 or radius < 1:
            raise ContractViolation("downscale and radius must be >= 1")
        self.downscale = downscale
        self.radius = radius
        self.agg = agg
        self.min_side = min_side
        self.penalty = penalty
        self.texture_floor = texture_floor

    def _pair(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        h, w = a.shape
        levels = [(a, b)]
        while min(levels[-1][0].shape) >= 2 * self.min_side:
            pa, pb = levels[-1]
            levels.append((cv2.resize(pa, (pa.shape[1] // 2, pa.shape[0] // 2),
                                      interpolation=cv2.INTER_AREA),
                           cv2.resize(pb, (pb.shape[1] // 2, pb.shape[0] // 2),
                                      interpolation=cv2.INTER_AREA)))
        flow = np.zeros((*levels[-1][0].shape, 2), dtype=np.float32)
        for la, lb in reversed(levels):
            lh, lw = la.shape
            if flow.shape[:2] != (lh, lw):
                flow = cv2.resize(flow * 2.0, (lw, lh),
                                  interpolation=cv2.INTER_LINEAR)
            flow = _level_displacement(la, lb, self.radius, self.agg, flow,
                                       self.penalty)
        if self.texture_floor > 0:
            # suppress estimates where the source has nothing to match on;
            # sensor noise otherwise turns flat regions into flow speckle
            gy, gx = np.gradient(a)
            tex = cv2.boxFilter(gx * gx + gy * gy, -1, (self.agg, self.agg),
                                borderType=cv2.BORDER_REPLICATE)
            flow[tex < self.texture_floor] = 0.0
        return flow

    def __call__(self, frames: np.ndarray) -> FlowField:
        t, h, w = frames.shape[:3]
        ds = self.downscale
        out = np.empty((t - 1, h, w, 2), dtype=np.float32)
        for i in range(t - 1):
            a = _to_gray(frames[i])
            b = _to_gray(frames[i + 1])
            if ds > 1:
                a = cv2.resize(a, (w // ds, h // ds), interpolation=cv2.INTER_AREA)
                b = cv2.resize(b, (w // ds, h // ds), interpolation=cv2.INTER_AREA)
            flow = self._pair(a, b)
            if ds > 1:
                flow = cv2.resize(flow * ds, (w, h), interpolation=cv2.INTER_LINEAR)
            out[i] = flow
        return FlowField(out)


class SyntheticOracleFlow:
    """Exact motion read straight from a synthetic scene.

    Background pixels get zero; ball pixels get the trajectory delta;
    occluder pixels get their track delta, painted over the ball in draw
    order just like the renderer does.
    """

    def __init__(self, clip: SynthClip, start: int = 0):
        self.clip = clip
        self.start = start

    def __call__(self, frames: np.ndarray) -> FlowField:
        t = frames.shape[0]
        spec = self.clip.spec
        if frames.shape[1] != spec.height or frames.shape[2] != spec.width:
            raise ContractViolation("oracle flow needs frames at scene resolution")
        out = np.zeros((t - 1, spec.height, spec.width, 2), dtype=np.float32)
        for i in range(t - 1):
            g0 = self.start + i
            pos0 = self.clip.true_positions[g0]
            pos1 = self.clip.true_positions[g0 + 1]
            x0, x1, y0, y1 = _patch_bounds(spec.height, spec.width,
                                           pos0[0], pos0[1],
                                           spec.ball_radius, spec.ball_radius)
            if x1 > x0 and y1 > y0:
                alpha = _disc_alpha(x0, x1, y0, y1, pos0[0], pos0[1],
                                    spec.ball_radius)
                mask = alpha > 0.5
                out[i, y0:y1, x0:x1][mask] = (pos1 - pos0).astype(np.float32)
            for track in self.clip.tracks:
                s0 = track.state_at(g0)
                if s0 is None:
                    continue
                s1 = track.state_at(g0 + 1)
                delta = (s1.x - s0.x, s1.y - s0.y) if s1 is not None else (0.0, 0.0)
                ox0, ox1, oy0, oy1 = _patch_bounds(spec.height, spec.width,
                                                   s0.x, s0.y,
                                                   s0.half_w, s0.half_h)
                if ox1 > ox0 and oy1 > oy0:
                    alpha = _occluder_alpha(s0, ox0, ox1, oy0, oy1)
                    mask = alpha > 0.5
                    out[i, oy0:oy1, ox0:ox1][mask] = np.asarray(delta, dtype=np.float32)
        return FlowField(out)


def make_provider(config: PipelineConfig) -> FlowProvider:
    if config.flow_provider == "zero":
        return zero_flow
    if config.flow_provider == "block_matching":
        return BlockMatchingFlow(downscale=config.flow_downscale)
    raise ContractViolation(f"unknown flow provider {config.flow_provider!r}")
