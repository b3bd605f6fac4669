"""Clip loading, rescaling to working resolution, and window extraction.

A dataset on disk is a manifest index plus, per clip, a directory of
numbered frames (or a video file) and an annotation CSV in the core
format. Loading resizes frames to the configured resolution and scales
coordinates with independent per-axis factors, then fixed-length windows
are cut without ever crossing clip boundaries.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Optional, Sequence

import cv2
import numpy as np

from occutrack.core import (
    BallAnnotation,
    FrameWindow,
    IngestError,
    PipelineConfig,
    Visibility,
    read_annotation_csv,
    validate_annotation,
)

log = logging.getLogger(__name__)

_VIDEO_SUFFIXES = {".mp4", ".avi", ".mov", ".mkv"}
_IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg")

MANIFEST_INDEX_NAME = "manifest.json"


@dataclass
class ClipManifest:
    """Locates one clip's media and labels and tags its split."""

    clip_id: str
    media_path: str
    annotation_path: str
    original_resolution: tuple[int, int]
    split: str = "train"
    fps: float = 120.0

    def __post_init__(self):
        if self.split not in ("train", "val", "test"):
            raise IngestError(f"clip {self.clip_id}: unknown split {self.split!r}")
        self.original_resolution = tuple(self.original_resolution)

    def is_video(self) -> bool:
        return Path(self.media_path).suffix.lower() in _VIDEO_SUFFIXES

    def to_dict(self) -> dict:
        return {
            "clip_id": self.clip_id,
            "media_path": self.media_path,
            "annotation_path": self.annotation_path,
            "original_resolution": list(self.original_resolution),
            "split": self.split,
            "fps": self.fps,
        }


def save_manifest_index(manifests: Sequence[ClipManifest], directory) -> Path:
    path = Path(directory) / MANIFEST_INDEX_NAME
    path.write_text(json.dumps({"clips": [m.to_dict() for m in manifests]}, indent=2))
    return path


def load_manifest_index(directory) -> list[ClipManifest]:
    path = Path(directory)
    if path.is_dir():
        path = path / MANIFEST_INDEX_NAME
    try:
        raw = json.loads(path.read_text())
    except OSError as exc:
        raise IngestError(f"cannot read manifest index {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise IngestError(f"manifest index {path} is not valid JSON: {exc}") from exc
    clips = raw.get("clips")
    if not isinstance(clips, list):
        raise IngestError(f"manifest index {path} has no 'clips' list")
    out = []
    for entry in clips:
        try:
            out.append(ClipManifest(
                clip_id=entry["clip_id"],
                media_path=entry["media_path"],
                annotation_path=entry["annotation_path"],
                original_resolution=tuple(entry["original_resolution"]),
                split=entry.get("split", "train"),
                fps=entry.get("fps", 120.0),
            ))
        except KeyError as exc:
            raise IngestError(f"manifest entry missing field {exc}") from exc
    return out


@dataclass
class LoadedClip:
    """A clip resident in memory at working resolution.

    ``frames`` is (L, H, W, 3) float32 in [0, 1]; ``annotations[i]`` labels
    ``frames[i]`` and its coordinates are already scaled to (H, W).
    """

    clip_id: str
    frames: np.ndarray
    annotations: list[BallAnnotation]
    split: str
    original_resolution: tuple[int, int]
    meta: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return self.frames.shape[0]

    def pairs(self) -> Iterator[tuple[np.ndarray, BallAnnotation]]:
        return zip(self.frames, self.annotations)


def scale_annotation(ann: BallAnnotation, original: tuple[int, int],
                     target: tuple[int, int]) -> BallAnnotation:
    """Rescale coordinates with independent per-axis factors."""
    if ann.visibility == Visibility.OUT_OF_FRAME:
        return ann
    h0, w0 = original
    h1, w1 = target
    return BallAnnotation(
        frame_index=ann.frame_index,
        x=ann.x * (w1 / w0),
        y=ann.y * (h1 / h0),
        visibility=ann.visibility,
    )


def _read_frame_dir(directory: Path) -> np.ndarray:
    files = sorted(p for p in directory.iterdir()
                   if p.suffix.lower() in _IMAGE_SUFFIXES)
    if not files:
        raise IngestError(f"{directory}: no frame images found")
    indices = []
    for p in files:
        try:
            indices.append(int(p.stem))
        except ValueError:
            raise IngestError(f"{directory}: frame file {p.name} is not numbered") from None
    expected = list(range(len(files)))
    if sorted(indices) != expected:
        missing = sorted(set(expected) - set(indices))
        raise IngestError(f"{directory}: missing frame indices {missing[:10]}")
    frames = []
    for p in sorted(files, key=lambda q: int(q.stem)):
        img = cv2.imread(str(p), cv2.IMREAD_COLOR)
        if img is None:
            raise IngestError(f"cannot decode frame image {p}")
        frames.append(cv2.cvtColor(img, cv2.COLOR_BGR2RGB))
    return np.stack(frames)


def _read_video(path: Path) -> np.ndarray:
    cap = cv2.VideoCapture(str(path))
    if not cap.isOpened():
        raise IngestError(f"cannot open video {path}")
    frames = []
    try:
        while True:
            ok, img = cap.read()
            if not ok:
                break
            frames.append(cv2.cvtColor(img, cv2.COLOR_BGR2RGB))
    finally:
        cap.release()
    if not frames:
        raise IngestError(f"video {path} decoded to zero frames")
    return np.stack(frames)


def _to_working_resolution(raw: np.ndarray, config: PipelineConfig) -> np.ndarray:
    """uint8 (L, H0, W0, 3) -> float32 (L, H, W, 3) in [0, 1]."""
    h0, w0 = raw.shape[1], raw.shape[2]
    if (h0, w0) == (config.height, config.width):
        resized = raw
    else:
        interp = cv2.INTER_AREA if (config.height < h0 or config.width < w0) \
            else cv2.INTER_LINEAR
        resized = np.stack([
            cv2.resize(f, (config.width, config.height), interpolation=interp)
            for f in raw
        ])
    return resized.astype(np.float32) / 255.0


def load_media_clip(path, config: PipelineConfig,
                    clip_id: Optional[str] = None) -> LoadedClip:
    """Read a frame directory or video that has no labels, for inference.

    The returned clip carries an empty annotation list; anything that
    scores against labels must not receive it.
    """
    media = Path(path)
    if not media.exists():
        raise IngestError(f"media path {media} does not exist")
    raw = _read_frame_dir(media) if media.is_dir() else _read_video(media)
    return LoadedClip(
        clip_id=clip_id or media.stem,
        frames=_to_working_resolution(raw, config),
        annotations=[],
        split="infer",
        original_resolution=(raw.shape[1], raw.shape[2]),
    )


def load_clip(manifest: ClipManifest, config: PipelineConfig) -> LoadedClip:
    """Load media + labels, resize to (config.height, config.width).

    Annotation frame indices must all exist in the media; gaps are
    reported with the missing indices.
    """
    media = Path(manifest.media_path)
    raw = _read_video(media) if manifest.is_video() else _read_frame_dir(media)
    h0, w0 = raw.shape[1], raw.shape[2]
    if (h0, w0) != tuple(manifest.original_resolution):
        raise IngestError(
            f"clip {manifest.clip_id}: media is {w0}x{h0} but manifest says "
            f"{manifest.original_resolution[1]}x{manifest.original_resolution[0]}"
        )

    annotations = read_annotation_csv(manifest.annotation_path)
    missing = sorted(a.frame_index for a in annotations
                     if not (0 <= a.frame_index < raw.shape[0]))
    if missing:
        raise IngestError(
            f"clip {manifest.clip_id}: annotated frames {missing[:10]} "
            f"not present in media of length {raw.shape[0]}"
        )
    by_frame = {a.frame_index: a for a in annotations}
    if len(by_frame) != raw.shape[0]:
        unlabeled = [i for i in range(raw.shape[0]) if i not in by_frame]
        raise IngestError(
            f"clip {manifest.clip_id}: frames {unlabeled[:10]} have no annotation"
        )

    target = (config.height, config.width)
    for ann in annotations:
        validate_annotation(ann, (h0, w0))
    scaled = [scale_annotation(by_frame[i], (h0, w0), target)
              for i in range(raw.shape[0])]
    for ann in scaled:
        validate_annotation(ann, target)

    frames = _to_working_resolution(raw, config)
    return LoadedClip(
        clip_id=manifest.clip_id,
        frames=frames,
        annotations=scaled,
        split=manifest.split,
        original_resolution=(h0, w0),
    )


def clip_from_arrays(clip_id: str, frames: np.ndarray,
                     annotations: Sequence[BallAnnotation], config: PipelineConfig,
                     split: str = "train") -> LoadedClip:
    """Build a LoadedClip from in-memory arrays, resizing if needed.

    Accepts uint8 [0, 255] or float32 [0, 1] frames; follows the same
    rescale path as disk loading so synthetic clips stay interchangeable
    with loaded ones.
    """
    if frames.ndim != 4 or frames.shape[3] != 3:
        raise IngestError(f"frames must be (L, H, W, 3), got {frames.shape}")
    h0, w0 = frames.shape[1], frames.shape[2]
    target = (config.height, config.width)
    anns = [scale_annotation(a, (h0, w0), target) for a in annotations]
    for ann in anns:
        validate_annotation(ann, target)
    if (h0, w0) != target:
        interp = cv2.INTER_AREA if (config.height < h0 or config.width < w0) \
            else cv2.INTER_LINEAR
        frames = np.stack([
            cv2.resize(f, (config.width, config.height), interpolation=interp)
            for f in frames
        ])
    if frames.dtype == np.uint8:
        frames = frames.astype(np.float32) / 255.0
    elif frames.dtype != np.float32:
        frames = frames.astype(np.float32)
    return LoadedClip(clip_id=clip_id, frames=frames, annotations=list(anns),
                      split=split, original_resolution=(h0, w0))


def build_windows(clip: LoadedClip, config: PipelineConfig,
                  stride: int) -> list[FrameWindow]:
    """Cut length-T windows at the given stride; never pads across clip ends.

    Window frames are views into the clip array, so a stride-1 sweep costs
    no extra memory. A clip shorter than T yields an empty list plus a
    warning record.
    """
    if stride < 1:
        raise IngestError(f"stride must be >= 1, got {stride}")
    t = config.t
    length = len(clip)
    if length < t:
        log.warning("clip %s has %d frames, shorter than window length %d; "
                    "no windows emitted", clip.clip_id, length, t)
        return []
    windows = []
    for start in range(0, length - t + 1, stride):
        windows.append(FrameWindow(
            frames=clip.frames[start:start + t],
            annotations=clip.annotations[start:start + t],
            target_index=config.target_index,
            source_id=f"{clip.clip_id}:{start}",
            original_resolution=clip.original_resolution,
            meta={"split": clip.split, "start": start},
        ))
    return windows


def map_binary_visibility(code: int, has_coords: bool) -> Visibility:
    """Adapt datasets that only mark visible / not-visible.

    A "not visible" ball that still has coordinates is treated as fully
    occluded; without coordinates there is nothing to supervise, so it
    maps to out-of-frame.
    """
    if code not in (0, 1):
        raise IngestError(f"binary visibility code must be 0 or 1, got {code}")
    if code == 1:
        return Visibility.VISIBLE
    return Visibility.FULLY_OCCLUDED if has_coords else Visibility.OUT_OF_FRAME


def filter_training_samples(windows: Sequence[FrameWindow],
                            config: PipelineConfig) -> list[FrameWindow]:
    """Drop windows whose target frame is out-of-frame (training only).

    Controlled by config.exclude_out_of_frame; evaluation streams must not
    pass through here.
    """
    if not config.exclude_out_of_frame:
        return list(windows)
    kept = [w for w in windows
            if w.target.visibility != Visibility.OUT_OF_FRAME]
    if windows and not kept:
        log.warning("all %d windows had out-of-frame targets; training "
                    "stream is empty", len(windows))
    return kept
