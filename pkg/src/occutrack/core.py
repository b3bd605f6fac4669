"""Domain types, pipeline configuration, and the annotation CSV format.

Everything downstream (ingest, synthesis, augmentation, training, eval)
shares the types defined here. All types are immutable after construction
and safe to share across threads.
"""

from __future__ import annotations

import csv
import dataclasses
import enum
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import yaml


class ConfigError(ValueError):
    """Raised when a configuration file cannot be parsed or validated."""


class AnnotationError(ValueError):
    """Raised when an annotation violates its invariants."""


class IngestError(ValueError):
    """Raised when clip media or annotation files cannot be loaded."""


class ContractViolation(ValueError):
    """Raised when an operation is called outside its stated contract."""


class CheckpointError(ValueError):
    """Raised when a checkpoint archive is missing, corrupt, or incompatible."""


# Sentinel coordinates for out-of-frame annotations. Loss and metric code
# must never read coordinates off an OutOfFrame annotation.
OUT_OF_FRAME_XY = (-1.0, -1.0)


class Visibility(enum.IntEnum):
    """4-level ball visibility label. Integer codes are fixed on disk."""

    OUT_OF_FRAME = 0
    VISIBLE = 1
    PARTIALLY_OCCLUDED = 2
    FULLY_OCCLUDED = 3


@dataclass(frozen=True)
class BallAnnotation:
    """Ground-truth ball position for one frame, in working-resolution pixels."""

    frame_index: int
    x: float
    y: float
    visibility: Visibility

    def has_position(self) -> bool:
        return self.visibility != Visibility.OUT_OF_FRAME

    def position(self) -> tuple[float, float]:
        """Coordinates of an in-frame annotation; forbidden for OutOfFrame."""
        if not self.has_position():
            raise ContractViolation(
                f"frame {self.frame_index}: coordinates of an OutOfFrame "
                f"annotation must not be read"
            )
        return (self.x, self.y)


def validate_annotation(ann: BallAnnotation, resolution: tuple[int, int]) -> BallAnnotation:
    """Check an annotation against a (height, width) working resolution.

    Returns the annotation unchanged when its invariants hold. OutOfFrame
    annotations carry sentinel coordinates and always pass.
    """
    if ann.frame_index < 0:
        raise AnnotationError(f"frame {ann.frame_index}: negative frame index")
    if not isinstance(ann.visibility, Visibility):
        raise AnnotationError(f"frame {ann.frame_index}: bad visibility {ann.visibility!r}")
    if ann.visibility == Visibility.OUT_OF_FRAME:
        return ann
    h, w = resolution
    if not (0 <= ann.x < w) or not (0 <= ann.y < h):
        raise AnnotationError(
            f"frame {ann.frame_index}: coordinates ({ann.x}, {ann.y}) outside "
            f"{w}x{h} working resolution for visibility {ann.visibility.name}"
        )
    return ann


@dataclass
class FrameWindow:
    """A fixed-length run of consecutive frames plus their annotations.

    ``frames`` is a (T, H, W, 3) float32 array with values in [0, 1] at the
    working resolution; ``annotations[i]`` corresponds to ``frames[i]``. The
    frame at ``target_index`` is the one the tracker supervises and reports.
    Treated as immutable; augmentations return new windows.
    """

    frames: np.ndarray
    annotations: list[BallAnnotation]
    target_index: int
    source_id: str
    original_resolution: tuple[int, int]
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        t = self.frames.shape[0]
        if len(self.annotations) != t:
            raise ContractViolation(
                f"window {self.source_id}: {len(self.annotations)} annotations "
                f"for {t} frames"
            )
        if not (0 <= self.target_index < t):
            raise ContractViolation(
                f"window {self.source_id}: target_index {self.target_index} "
                f"outside [0, {t})"
            )

    @property
    def target(self) -> BallAnnotation:
        return self.annotations[self.target_index]

    @property
    def shape(self) -> tuple[int, int, int]:
        """(T, H, W) of the frame stack."""
        return self.frames.shape[0], self.frames.shape[1], self.frames.shape[2]


@dataclass(frozen=True)
class LossWeights:
    """Per-visibility loss weights, indexed by Visibility code."""

    w: tuple[float, float, float, float]

    def __post_init__(self):
        if len(self.w) != 4:
            raise ConfigError(f"loss_weights needs 4 entries, got {len(self.w)}")
        if any(v < 0 for v in self.w):
            raise ConfigError(f"loss_weights must be nonnegative, got {list(self.w)}")
        if all(v == 0 for v in self.w):
            raise ConfigError("loss_weights must not all be zero")

    def __getitem__(self, visibility: Visibility) -> float:
        return self.w[int(visibility)]

    @classmethod
    def uniform_supervised(cls) -> "LossWeights":
        """Equal weight on every in-frame level, none on out-of-frame."""
        return cls((0.0, 1.0, 1.0, 1.0))


_ACTIVATION_MODES = ("softmax-axial", "sigmoid-axial")
_SCHEDULES = ("cosine", "constant")
_FLOW_PROVIDERS = ("block_matching", "zero")
_SHAPES = ("rectangle", "ellipse")


@dataclass(eq=True)
class PipelineConfig:
    """Every tunable of the pipeline, with working defaults.

    Serialized as a flat YAML document whose keys match the field names.
    ``target_index`` defaults to the middle frame (t // 2).
    """

    # window / resolution
    t: int = 5
    height: int = 288
    width: int = 512
    target_index: Optional[int] = None
    # supervision targets
    sigma: float = 3.0
    loss_weights: tuple = (0.0, 1.0, 2.0, 4.0)
    activation_mode: str = "softmax-axial"
    confidence_threshold: float = 0.05
    # ablation toggles
    use_weighted_bce: bool = True
    use_occlusion_aug: bool = True
    use_flow: bool = False
    use_std_aug: bool = True
    # dataset handling
    exclude_out_of_frame: bool = True
    train_stride: int = 1
    eval_stride: Optional[int] = None
    supervise_all_frames: bool = False
    # occlusion augmentation
    occlusion_prob: float = 0.5
    occlusion_size_range: tuple = (6.0, 18.0)
    occlusion_shapes: tuple = ("rectangle", "ellipse")
    ring_margin: int = 4
    decoy_count_range: tuple = (0, 3)
    decoy_size_range: tuple = (6.0, 18.0)
    ball_radius_px: float = 3.0
    # standard augmentation
    hflip_prob: float = 0.5
    vflip_prob: float = 0.25
    crop_prob: float = 0.3
    crop_scale_range: tuple = (0.7, 1.0)
    jitter_prob: float = 0.5
    jitter_strength: float = 0.2
    # network stage plan
    stage_channels: tuple = (32, 64, 128)
    bottleneck_channels: int = 256
    spatial_kernels: tuple = (5, 3, 3)
    temporal_kernels: tuple = (3, 3, 1)
    spatial_pools: tuple = (2, 2, 2)
    temporal_pools: Optional[tuple] = None
    bottleneck_spatial_layers: int = 2
    # optical flow
    flow_provider: str = "block_matching"
    flow_downscale: int = 2
    # optimizer / training loop
    lr: float = 1e-3
    weight_decay: float = 1e-2
    batch_size: int = 8
    epochs: int = 30
    grad_clip: float = 1.0
    schedule: str = "cosine"
    early_stop_patience: int = 5
    seed: int = 0

    def __post_init__(self):
        for name in ("loss_weights", "occlusion_size_range", "occlusion_shapes",
                     "decoy_count_range", "decoy_size_range", "crop_scale_range",
                     "stage_channels", "spatial_kernels", "temporal_kernels",
                     "spatial_pools"):
            setattr(self, name, tuple(getattr(self, name)))
        if self.temporal_pools is not None:
            self.temporal_pools = tuple(self.temporal_pools)
        if self.target_index is None:
            self.target_index = self.t // 2
        if self.eval_stride is None:
            self.eval_stride = self.t
        self._validate()

    def _validate(self):
        def bad(key, why):
            raise ConfigError(f"invalid value for '{key}': {why}")

        if self.t < 1:
            bad("t", f"window length must be >= 1, got {self.t}")
        if self.height < 8 or self.width < 8:
            bad("height/width", f"resolution {self.height}x{self.width} too small")
        if not (0 <= self.target_index < self.t):
            bad("target_index", f"{self.target_index} outside [0, {self.t})")
        if self.sigma <= 0:
            bad("sigma", f"must be > 0, got {self.sigma}")
        # 1.0 is a valid reject-everything threshold (peak confidence of a
        # softmax over more than one bin never reaches it)
        if not (0 < self.confidence_threshold <= 1):
            bad("confidence_threshold", f"must be in (0, 1], got {self.confidence_threshold}")
        LossWeights(tuple(float(v) for v in self.loss_weights))
        if self.activation_mode not in _ACTIVATION_MODES:
            bad("activation_mode", f"expected one of {_ACTIVATION_MODES}")
        if self.schedule not in _SCHEDULES:
            bad("schedule", f"expected one of {_SCHEDULES}")
        if self.flow_provider not in _FLOW_PROVIDERS:
            bad("flow_provider", f"expected one of {_FLOW_PROVIDERS}")
        for key in ("occlusion_prob", "hflip_prob", "vflip_prob", "crop_prob", "jitter_prob"):
            p = getattr(self, key)
            if not (0 <= p <= 1):
                bad(key, f"probability outside [0, 1]: {p}")
        for key in ("occlusion_size_range", "decoy_size_range"):
            lo, hi = getattr(self, key)
            if not (0 < lo <= hi):
                bad(key, f"needs 0 < lo <= hi, got ({lo}, {hi})")
        lo, hi = self.crop_scale_range
        if not (0 < lo <= hi <= 1):
            bad("crop_scale_range", f"needs 0 < lo <= hi <= 1, got ({lo}, {hi})")
        lo, hi = self.decoy_count_range
        if not (0 <= lo <= hi):
            bad("decoy_count_range", f"needs 0 <= lo <= hi, got ({lo}, {hi})")
        for s in self.occlusion_shapes:
            if s not in _SHAPES:
                bad("occlusion_shapes", f"unknown shape {s!r}")
        if self.ball_radius_px <= 0:
            bad("ball_radius_px", f"must be > 0, got {self.ball_radius_px}")
        n = len(self.stage_channels)
        for key in ("spatial_kernels", "temporal_kernels", "spatial_pools"):
            if len(getattr(self, key)) != n:
                bad(key, f"needs {n} entries to match stage_channels")
        if self.temporal_pools is not None and len(self.temporal_pools) != n:
            bad("temporal_pools", f"needs {n} entries to match stage_channels")
        if self.bottleneck_spatial_layers < 1:
            bad("bottleneck_spatial_layers", "must be >= 1")
        if self.train_stride < 1 or self.eval_stride < 1:
            bad("train_stride/eval_stride", "strides must be >= 1")
        if self.flow_downscale < 1:
            bad("flow_downscale", f"must be >= 1, got {self.flow_downscale}")
        for key in ("lr", "weight_decay", "grad_clip"):
            if getattr(self, key) < 0:
                bad(key, "must be nonnegative")
        if self.batch_size < 1 or self.epochs < 0:
            bad("batch_size/epochs", "batch_size >= 1 and epochs >= 0 required")
        if self.early_stop_patience < 0:
            bad("early_stop_patience", "must be >= 0 (0 disables early stopping)")

    @property
    def resolution(self) -> tuple[int, int]:
        return (self.height, self.width)

    @property
    def weights(self) -> LossWeights:
        return LossWeights(tuple(float(v) for v in self.loss_weights))

    def effective_weights(self) -> LossWeights:
        """Weights the training loss actually uses, honoring the WBCE toggle."""
        if self.use_weighted_bce:
            return self.weights
        return LossWeights.uniform_supervised()

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        for k, v in d.items():
            if isinstance(v, tuple):
                d[k] = list(v)
        return d

    @classmethod
    def from_dict(cls, raw: dict) -> "PipelineConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        clean = {}
        for key, value in raw.items():
            key = str(key).lower()
            if key not in known:
                raise ConfigError(f"unknown configuration key: '{key}'")
            clean[key] = value
        try:
            return cls(**clean)
        except TypeError as exc:
            raise ConfigError(f"bad configuration value: {exc}") from exc


def load_config(path) -> PipelineConfig:
    """Load a PipelineConfig from a YAML key/value file.

    An empty file yields all defaults. Unknown keys and invariant violations
    raise ConfigError naming the offending key.
    """
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse config file {path}: {exc}") from exc
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError(f"config file {path} must hold a key/value mapping")
    return PipelineConfig.from_dict(raw)


def save_config(config: PipelineConfig, path) -> None:
    """Write a config as YAML; load_config(save_config(c)) == c."""
    path = Path(path)
    path.write_text(yaml.safe_dump(config.to_dict(), sort_keys=True))


# --- annotation CSV interchange format -----------------------------------
#
# One file per clip, header row `frame,visibility,x,y`. Coordinates are in
# the clip's original resolution; OutOfFrame rows carry -1,-1.

CSV_HEADER = ["frame", "visibility", "x", "y"]


def read_annotation_csv(path) -> list[BallAnnotation]:
    """Parse a clip annotation CSV. Row errors report the 1-based line number."""
    path = Path(path)
    rows: list[BallAnnotation] = []
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise IngestError(f"{path}: empty annotation file") from None
        if [h.strip().lower() for h in header] != CSV_HEADER:
            raise IngestError(f"{path}: expected header {','.join(CSV_HEADER)}, got {','.join(header)}")
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 4:
                raise IngestError(f"{path}:{lineno}: expected 4 columns, got {len(row)}")
            try:
                frame = int(row[0])
                vis_code = int(row[1])
                x = float(row[2])
                y = float(row[3])
            except ValueError as exc:
                raise IngestError(f"{path}:{lineno}: {exc}") from exc
            try:
                vis = Visibility(vis_code)
            except ValueError:
                raise IngestError(
                    f"{path}:{lineno}: visibility code {vis_code} outside 0-3"
                ) from None
            if vis == Visibility.OUT_OF_FRAME:
                x, y = OUT_OF_FRAME_XY
            rows.append(BallAnnotation(frame_index=frame, x=x, y=y, visibility=vis))
    return rows


def write_annotation_csv(annotations: Sequence[BallAnnotation], path) -> None:
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_HEADER)
        for ann in annotations:
            if ann.visibility == Visibility.OUT_OF_FRAME:
                x, y = OUT_OF_FRAME_XY
            else:
                x, y = ann.x, ann.y
            writer.writerow([ann.frame_index, int(ann.visibility), f"{x:.4f}", f"{y:.4f}"])
