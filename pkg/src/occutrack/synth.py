"""Synthetic bouncing-ball clips with scripted occluders.

Each clip is a single bright ball on a textured background, moving under
gravity and bouncing on a table line, while solid moving shapes sweep
across it. Occlusion events are scheduled against the pre-computed
trajectory until the clip hits its target occlusion rate, but every
visibility label is measured from the actual rendered geometry, never
assumed from the schedule. All randomness derives from the scene seed, so
a spec renders bit-identically every time.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import cv2
import numpy as np

from occutrack.core import (
    BallAnnotation,
    ContractViolation,
    Visibility,
    validate_annotation,
    write_annotation_csv,
)
from occutrack.ingest import ClipManifest, save_manifest_index

log = logging.getLogger(__name__)

BALL_COLOR = (1.0, 0.85, 0.35)

_NOISE_STREAM = 0x9E3779B9
_TEXTURE_STREAM = 0x51ED2701
_OCCLUDER_STREAM = 0x7F4A7C15


@dataclass(frozen=True)
class OccluderState:
    """One occluder's instantaneous pose."""

    shape: str
    x: float
    y: float
    half_w: float
    half_h: float
    fill: tuple


@dataclass(frozen=True)
class OccluderTrack:
    """A solid shape moving on a straight line over a frame range."""

    shape: str
    half_w: float
    half_h: float
    x0: float
    y0: float
    vx: float
    vy: float
    t0: int
    t1: int
    fill: tuple

    def state_at(self, t: int) -> Optional[OccluderState]:
        if not (self.t0 <= t < self.t1):
            return None
        dt = t - self.t0
        return OccluderState(self.shape, self.x0 + self.vx * dt,
                             self.y0 + self.vy * dt,
                             self.half_w, self.half_h, self.fill)


@dataclass
class SceneSpec:
    """Everything needed to render one clip deterministically."""

    height: int = 144
    width: int = 256
    clip_length: int = 64
    ball_radius: float = 3.0
    ball_start: tuple = (40.0, 50.0)
    ball_velocity: tuple = (3.0, 0.5)
    gravity: float = 0.35
    restitution: float = 0.92
    table_y: Optional[float] = None
    side_walls: bool = True
    target_occlusion_rate: float = 0.25
    occluder_half_size_range: tuple = (5.0, 11.0)
    occluder_speed_range: tuple = (4.0, 9.0)
    occluder_shapes: tuple = ("rectangle", "ellipse")
    ambient_occluders: int = 2
    max_hidden_run: int = 2
    full_cover_fraction: float = 0.9
    noise_level: float = 0.02
    texture_blobs: int = 6
    seed: int = 0
    split: str = "train"
    clip_id: Optional[str] = None

    def __post_init__(self):
        if self.ball_radius < 1:
            raise ContractViolation(f"ball_radius must be >= 1, got {self.ball_radius}")
        if self.clip_length < 1:
            raise ContractViolation(f"clip_length must be >= 1, got {self.clip_length}")
        if not (0 <= self.restitution <= 1):
            raise ContractViolation(f"restitution must be in [0, 1], got {self.restitution}")
        if not (0 <= self.target_occlusion_rate < 1):
            raise ContractViolation(
                f"target_occlusion_rate must be in [0, 1), got {self.target_occlusion_rate}")
        if self.max_hidden_run < 1:
            raise ContractViolation(
                f"max_hidden_run must be >= 1, got {self.max_hidden_run}")
        if self.height < 16 or self.width < 16:
            raise ContractViolation(f"scene {self.width}x{self.height} too small")
        if self.seed < 0:
            raise ContractViolation("seed must be nonnegative")
        if self.clip_id is None:
            self.clip_id = f"synth-{self.seed:08d}"

    @property
    def table_line(self) -> float:
        return self.table_y if self.table_y is not None else self.height * 0.78


# --- trajectory -----------------------------------------------------------

def _time_to_table(y: float, vy: float, g: float, table: float) -> Optional[float]:
    """Earliest s > 0 with y(s) = table and downward motion, else None."""
    c = y - table
    if g == 0.0:
        if vy <= 0 or c >= 0:
            return None
        return -c / vy
    # 0.5 g s^2 + vy s + c = 0
    disc = vy * vy - 2.0 * g * c
    if disc < 0:
        return None
    root = np.sqrt(disc)
    candidates = [(-vy - root) / g, (-vy + root) / g]
    best = None
    for s in candidates:
        if s > 1e-12 and vy + g * s > 0:
            if best is None or s < best:
                best = s
    return best


def _advance_frame(x, y, vx, vy, spec: SceneSpec):
    """Integrate one frame of ballistic motion with sub-frame bounces."""
    g = spec.gravity
    table = spec.table_line
    remaining = 1.0
    for _ in range(8):
        s = _time_to_table(y, vy, g, table)
        if s is None or s > remaining + 1e-12:
            break
        x += vx * s
        y = table
        vy = -spec.restitution * (vy + g * s)
        remaining -= s
        if remaining <= 1e-12:
            remaining = 0.0
            break
    else:
        # bounce cascade exhausted; the ball has effectively settled
        return x + vx * remaining, table, vx, 0.0
    x += vx * remaining
    y = y + vy * remaining + 0.5 * g * remaining * remaining
    vy = vy + g * remaining

    if spec.side_walls:
        lo = spec.ball_radius
        hi = spec.width - 1 - spec.ball_radius
        for _ in range(4):
            if x < lo:
                x = 2 * lo - x
                vx = -vx
            elif x > hi:
                x = 2 * hi - x
                vx = -vx
            else:
                break
    return x, y, vx, vy


def gen_trajectory(spec: SceneSpec) -> np.ndarray:
    """Per-frame ball centers, (clip_length, 2) float64.

    Closed-form parabolic flight between table contacts; a bounce inside a
    frame step is resolved at its exact sub-frame time so restitution
    scaling is applied to the true impact velocity.
    """
    for v in (*spec.ball_start, *spec.ball_velocity, spec.gravity):
        if not np.isfinite(v):
            raise ContractViolation(f"non-finite physics parameter {v}")
    x, y = spec.ball_start
    vx, vy = spec.ball_velocity
    pts = np.empty((spec.clip_length, 2), dtype=np.float64)
    pts[0] = (x, y)
    for t in range(1, spec.clip_length):
        x, y, vx, vy = _advance_frame(x, y, vx, vy, spec)
        pts[t] = (x, y)
    return pts


# --- rasterization --------------------------------------------------------

def _patch_bounds(h, w, cx, cy, ex, ey):
    x0 = max(int(np.floor(cx - ex)) - 1, 0)
    x1 = min(int(np.ceil(cx + ex)) + 2, w)
    y0 = max(int(np.floor(cy - ey)) - 1, 0)
    y1 = min(int(np.ceil(cy + ey)) + 2, h)
    return x0, x1, y0, y1


def _disc_alpha(x0, x1, y0, y1, cx, cy, r, ss=4):
    """Supersampled pixel coverage of a disc over a patch, (ny, nx)."""
    off = (np.arange(ss) + 0.5) / ss - 0.5
    px = np.arange(x0, x1, dtype=np.float64)[:, None] + off[None, :]
    py = np.arange(y0, y1, dtype=np.float64)[:, None] + off[None, :]
    dx2 = (px - cx) ** 2
    dy2 = (py - cy) ** 2
    inside = dy2[:, None, :, None] + dx2[None, :, None, :] <= r * r
    return inside.mean(axis=(2, 3)).astype(np.float32)


def _ellipse_alpha(x0, x1, y0, y1, cx, cy, a, b, ss=4):
    off = (np.arange(ss) + 0.5) / ss - 0.5
    px = np.arange(x0, x1, dtype=np.float64)[:, None] + off[None, :]
    py = np.arange(y0, y1, dtype=np.float64)[:, None] + off[None, :]
    nx2 = ((px - cx) / a) ** 2
    ny2 = ((py - cy) / b) ** 2
    inside = ny2[:, None, :, None] + nx2[None, :, None, :] <= 1.0
    return inside.mean(axis=(2, 3)).astype(np.float32)


def _rect_alpha(x0, x1, y0, y1, cx, cy, hw, hh):
    """Exact pixel coverage of an axis-aligned rectangle over a patch."""
    px = np.arange(x0, x1, dtype=np.float64)
    py = np.arange(y0, y1, dtype=np.float64)
    cov_x = np.clip(np.minimum(cx + hw, px + 0.5) - np.maximum(cx - hw, px - 0.5), 0.0, 1.0)
    cov_y = np.clip(np.minimum(cy + hh, py + 0.5) - np.maximum(cy - hh, py - 0.5), 0.0, 1.0)
    return (cov_y[:, None] * cov_x[None, :]).astype(np.float32)


def _occluder_alpha(state: OccluderState, x0, x1, y0, y1) -> np.ndarray:
    if state.shape == "rectangle":
        return _rect_alpha(x0, x1, y0, y1, state.x, state.y,
                           state.half_w, state.half_h)
    if state.shape == "ellipse":
        return _ellipse_alpha(x0, x1, y0, y1, state.x, state.y,
                              state.half_w, state.half_h)
    raise ContractViolation(f"unknown occluder shape {state.shape!r}")


def _composite(img: np.ndarray, alpha: np.ndarray, color, x0, x1, y0, y1):
    if x1 <= x0 or y1 <= y0:
        return
    region = img[y0:y1, x0:x1]
    a = alpha[..., None]
    region *= 1.0 - a
    region += np.asarray(color, dtype=np.float32) * a


def make_background(spec: SceneSpec) -> np.ndarray:
    """Static per-clip backdrop: gradient, soft color blobs, table band."""
    rng = np.random.default_rng((spec.seed, _TEXTURE_STREAM))
    h, w = spec.height, spec.width
    rows = np.linspace(0.38, 0.52, h, dtype=np.float32)
    img = np.repeat(rows[:, None, None], w, axis=1) * np.ones(3, dtype=np.float32)
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float32)
    for _ in range(spec.texture_blobs):
        cx = rng.uniform(0, w)
        cy = rng.uniform(0, h)
        sig = rng.uniform(10, 45)
        tint = rng.uniform(-0.12, 0.12, size=3).astype(np.float32)
        blob = np.exp(-((xs - cx) ** 2 + (ys - cy) ** 2) / (2 * sig * sig))
        img += blob[..., None] * tint
    table = int(round(spec.table_line))
    if 0 <= table < h:
        img[max(table - 1, 0):min(table + 1, h)] -= 0.16
        img[min(table + 1, h):] *= 0.92
    return np.clip(img, 0.0, 1.0)


def ball_coverage(spec: SceneSpec, ball_pos, occluders: Sequence[OccluderState]) -> float:
    """Fraction of the in-frame ball disc covered by occluder pixels."""
    bx, by = ball_pos
    r = spec.ball_radius
    x0, x1, y0, y1 = _patch_bounds(spec.height, spec.width, bx, by, r, r)
    if x1 <= x0 or y1 <= y0:
        return 0.0
    disc = _disc_alpha(x0, x1, y0, y1, bx, by, r)
    total = float(disc.sum())
    if total == 0.0:
        return 0.0
    cover = np.zeros_like(disc)
    for state in occluders:
        np.maximum(cover, _occluder_alpha(state, x0, x1, y0, y1), out=cover)
    return float((disc * cover).sum()) / total


def classify_visibility(spec: SceneSpec, ball_pos,
                        occluders: Sequence[OccluderState]) -> Visibility:
    bx, by = ball_pos
    if not (0 <= bx < spec.width and 0 <= by < spec.height):
        return Visibility.OUT_OF_FRAME
    f = ball_coverage(spec, ball_pos, occluders)
    if f == 0.0:
        return Visibility.VISIBLE
    if f >= spec.full_cover_fraction:
        return Visibility.FULLY_OCCLUDED
    return Visibility.PARTIALLY_OCCLUDED


def render_frame(spec: SceneSpec, ball_pos, occluders: Sequence[OccluderState],
                 frame_index: int = 0, background: Optional[np.ndarray] = None,
                 draw_ball: bool = True) -> tuple[np.ndarray, Visibility]:
    """Render one frame (uint8 RGB) and measure the ball's visibility.

    Noise is keyed on (seed, frame_index), independent of everything else,
    so a frame re-renders identically in isolation.
    """
    img = (make_background(spec) if background is None else background).copy()
    h, w = spec.height, spec.width
    bx, by = ball_pos
    if draw_ball:
        x0, x1, y0, y1 = _patch_bounds(h, w, bx, by, spec.ball_radius, spec.ball_radius)
        if x1 > x0 and y1 > y0:
            alpha = _disc_alpha(x0, x1, y0, y1, bx, by, spec.ball_radius)
            _composite(img, alpha, BALL_COLOR, x0, x1, y0, y1)
    for state in occluders:
        x0, x1, y0, y1 = _patch_bounds(h, w, state.x, state.y,
                                       state.half_w, state.half_h)
        if x1 > x0 and y1 > y0:
            alpha = _occluder_alpha(state, x0, x1, y0, y1)
            _composite(img, alpha, state.fill, x0, x1, y0, y1)
    if spec.noise_level > 0:
        noise_rng = np.random.default_rng((spec.seed, _NOISE_STREAM, frame_index))
        img += spec.noise_level * noise_rng.standard_normal(img.shape).astype(np.float32)
        np.clip(img, 0.0, 1.0, out=img)
    frame = np.round(img * 255.0).astype(np.uint8)
    return frame, classify_visibility(spec, ball_pos, occluders)


# --- occluder scheduling --------------------------------------------------

def _states_at(tracks: Sequence[OccluderTrack], t: int) -> list[OccluderState]:
    return [s for s in (tr.state_at(t) for tr in tracks) if s is not None]


def _count_occluded(spec: SceneSpec, traj: np.ndarray,
                    tracks: Sequence[OccluderTrack]) -> int:
    n = 0
    for t in range(spec.clip_length):
        vis = classify_visibility(spec, traj[t], _states_at(tracks, t))
        if vis in (Visibility.PARTIALLY_OCCLUDED, Visibility.FULLY_OCCLUDED):
            n += 1
    return n


def _longest_hidden_run(spec: SceneSpec, traj: np.ndarray,
                        tracks: Sequence[OccluderTrack]) -> int:
    """Longest stretch of consecutive fully hidden frames."""
    run = worst = 0
    for t in range(spec.clip_length):
        vis = classify_visibility(spec, traj[t], _states_at(tracks, t))
        if vis == Visibility.FULLY_OCCLUDED:
            run += 1
            worst = max(worst, run)
        else:
            run = 0
    return worst


def _random_fill(rng) -> tuple:
    return tuple(float(v) for v in rng.uniform(0.08, 0.72, size=3))


def _ambient_tracks(spec: SceneSpec, traj: np.ndarray, rng,
                    budget: int) -> list[OccluderTrack]:
    """Free-roaming shapes; regenerated if they already eat the event budget."""
    for _ in range(10):
        tracks = []
        for _ in range(spec.ambient_occluders):
            hw = rng.uniform(*spec.occluder_half_size_range)
            hh = rng.uniform(*spec.occluder_half_size_range)
            speed = rng.uniform(1.0, 3.0)
            angle = rng.uniform(0, 2 * np.pi)
            tracks.append(OccluderTrack(
                shape=str(rng.choice(spec.occluder_shapes)),
                half_w=hw, half_h=hh,
                x0=rng.uniform(0, spec.width), y0=rng.uniform(0, spec.height),
                vx=speed * np.cos(angle), vy=speed * np.sin(angle),
                t0=0, t1=spec.clip_length,
                fill=_random_fill(rng),
            ))
        if (_count_occluded(spec, traj, tracks) <= max(budget // 3, 1)
                and _longest_hidden_run(spec, traj, tracks)
                <= spec.max_hidden_run):
            return tracks
    return []


def schedule_occluders(spec: SceneSpec, traj: np.ndarray) -> list[OccluderTrack]:
    """Script occluder sweeps until the measured occlusion rate hits target.

    Each event anchors a shape on the ball at its middle frame and gives it
    enough crossing speed relative to the ball to clear within a frame or
    two, producing partial labels on the flanks and full ones at the core.
    Any candidate that would hide the ball for more than max_hidden_run
    consecutive frames is redrawn, so every fully hidden frame keeps an
    informative neighbor within one frame.
    """
    rng = np.random.default_rng((spec.seed, _OCCLUDER_STREAM))
    target = int(round(spec.target_occlusion_rate * spec.clip_length))
    tracks = _ambient_tracks(spec, traj, rng, target)
    if target == 0:
        return tracks

    used_mids: list[int] = []
    for _ in range(200):
        if _count_occluded(spec, traj, tracks) >= target:
            break
        candidates = [t for t in range(2, spec.clip_length - 2)
                      if all(abs(t - m) > 4 for m in used_mids)
                      and 0 <= traj[t, 0] < spec.width
                      and 0 <= traj[t, 1] < spec.height]
        if not candidates:
            break
        mid = int(rng.choice(candidates))
        used_mids.append(mid)
        bx, by = traj[mid]
        ball_v = traj[min(mid + 1, spec.clip_length - 1)] - traj[mid]
        lo, hi = spec.occluder_half_size_range
        span = 3
        for _ in range(8):
            hw = rng.uniform(max(lo, spec.ball_radius + 1.5), hi)
            hh = rng.uniform(max(lo, spec.ball_radius + 1.5), hi)
            for _ in range(20):
                speed = rng.uniform(*spec.occluder_speed_range)
                angle = rng.uniform(0, 2 * np.pi)
                v = np.array([speed * np.cos(angle), speed * np.sin(angle)])
                if np.linalg.norm(v - ball_v) >= 3.0:
                    break
            tracks.append(OccluderTrack(
                shape=str(rng.choice(spec.occluder_shapes)),
                half_w=float(hw), half_h=float(hh),
                x0=float(bx - v[0] * span), y0=float(by - v[1] * span),
                vx=float(v[0]), vy=float(v[1]),
                t0=max(mid - span, 0),
                t1=min(mid + span + 1, spec.clip_length),
                fill=_random_fill(rng),
            ))
            if _longest_hidden_run(spec, traj, tracks) <= spec.max_hidden_run:
                break
            tracks.pop()
    return tracks


# --- clip and dataset generation ------------------------------------------

@dataclass
class SynthClip:
    """A rendered clip plus its measured labels and scene internals.

    ``true_positions`` keeps the exact ball center for every frame, even
    when the emitted annotation is an out-of-frame sentinel; the flow
    oracle and tests need it.
    """

    spec: SceneSpec
    frames: np.ndarray
    annotations: list[BallAnnotation]
    true_positions: np.ndarray
    tracks: list[OccluderTrack]
    coverage: np.ndarray

    def histogram(self) -> dict[Visibility, int]:
        counts = {v: 0 for v in Visibility}
        for ann in self.annotations:
            counts[ann.visibility] += 1
        return counts

    def occlusion_rate(self) -> float:
        h = self.histogram()
        return (h[Visibility.PARTIALLY_OCCLUDED]
                + h[Visibility.FULLY_OCCLUDED]) / len(self.annotations)


def gen_clip(spec: SceneSpec) -> SynthClip:
    """Trajectory, occluder schedule, and full render for one scene."""
    traj = gen_trajectory(spec)
    tracks = schedule_occluders(spec, traj)
    background = make_background(spec)
    frames = np.empty((spec.clip_length, spec.height, spec.width, 3), dtype=np.uint8)
    annotations = []
    coverage = np.empty(spec.clip_length, dtype=np.float64)
    for t in range(spec.clip_length):
        states = _states_at(tracks, t)
        frame, vis = render_frame(spec, traj[t], states, frame_index=t,
                                  background=background)
        frames[t] = frame
        coverage[t] = ball_coverage(spec, traj[t], states)
        if vis == Visibility.OUT_OF_FRAME:
            ann = BallAnnotation(t, -1.0, -1.0, Visibility.OUT_OF_FRAME)
        else:
            ann = BallAnnotation(t, float(traj[t, 0]), float(traj[t, 1]), vis)
        annotations.append(validate_annotation(ann, (spec.height, spec.width)))
    return SynthClip(spec=spec, frames=frames, annotations=annotations,
                     true_positions=traj, tracks=tracks, coverage=coverage)


def benchmark_family(n_clips: int, height: int = 144, width: int = 256,
                     clip_length: int = 64, occlusion_rate: float = 0.25,
                     ball_radius: float = 3.0, seed: int = 0,
                     val_fraction: float = 0.2,
                     test_fraction: float = 0.0) -> list[SceneSpec]:
    """Randomized scene family with deterministic per-clip seeds and splits."""
    if n_clips < 1:
        raise ContractViolation("n_clips must be >= 1")
    n_val = int(round(n_clips * val_fraction))
    n_test = int(round(n_clips * test_fraction))
    specs = []
    for i in range(n_clips):
        rng = np.random.default_rng((seed, 0x5EEDFA11, i))
        vx = rng.uniform(2.0, 4.5) * (1 if rng.random() < 0.5 else -1)
        start_x = width * (0.2 + 0.6 * rng.random())
        start_y = height * rng.uniform(0.2, 0.5)
        if i < n_clips - n_val - n_test:
            split = "train"
        elif i < n_clips - n_test:
            split = "val"
        else:
            split = "test"
        specs.append(SceneSpec(
            height=height, width=width, clip_length=clip_length,
            ball_radius=ball_radius,
            ball_start=(float(start_x), float(start_y)),
            ball_velocity=(float(vx), float(rng.uniform(-1.5, 1.5))),
            gravity=float(rng.uniform(0.25, 0.45)),
            restitution=float(rng.uniform(0.85, 0.96)),
            target_occlusion_rate=occlusion_rate,
            seed=int(seed * 1_000_003 + i),
            split=split,
            clip_id=f"synth-{seed}-{i:04d}",
        ))
    return specs


def gen_dataset(specs: Sequence[SceneSpec], out_dir) -> list[ClipManifest]:
    """Render a spec family to disk in the ingest layout.

    Writes numbered PNG frames, one annotation CSV per clip, a manifest
    index, and a generation_stats.json with the visibility histogram.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifests = []
    totals = {v.name: 0 for v in Visibility}
    for spec in specs:
        clip = gen_clip(spec)
        clip_dir = out / spec.clip_id
        try:
            clip_dir.mkdir(exist_ok=True)
            for t in range(spec.clip_length):
                path = clip_dir / f"{t:06d}.png"
                if not cv2.imwrite(str(path), cv2.cvtColor(clip.frames[t],
                                                           cv2.COLOR_RGB2BGR)):
                    raise OSError(f"imwrite refused {path}")
            csv_path = out / f"{spec.clip_id}.csv"
            write_annotation_csv(clip.annotations, csv_path)
        except OSError as exc:
            raise IOError(f"while writing clip {spec.clip_id} under {out}: {exc}") from exc
        for vis, count in clip.histogram().items():
            totals[vis.name] += count
        manifests.append(ClipManifest(
            clip_id=spec.clip_id,
            media_path=str(clip_dir),
            annotation_path=str(csv_path),
            original_resolution=(spec.height, spec.width),
            split=spec.split,
        ))
    save_manifest_index(manifests, out)
    occluded = totals["PARTIALLY_OCCLUDED"] + totals["FULLY_OCCLUDED"]
    grand = sum(totals.values())
    stats = {"histogram": totals,
             "occlusion_fraction": occluded / grand if grand else 0.0}
    (out / "generation_stats.json").write_text(json.dumps(stats, indent=2))
    log.info("generated %d clips under %s; visibility histogram %s",
             len(specs), out, totals)
    return manifests
