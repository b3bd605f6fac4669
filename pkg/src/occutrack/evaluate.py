"""Distance metrics, per-visibility scoring, reports, and inference helpers.

A prediction is judged against its label by Euclidean distance with an
inclusive per-visibility threshold (5 px for visible and partially occluded
targets, 10 px for fully occluded ones). Out-of-frame labels are scored by
whether the tracker reported no ball at all. Aggregation groups records by
visibility and reports RMSE over recorded distances plus plain accuracy.
"""

from __future__ import annotations

import csv
import json
import math
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import cv2
import numpy as np
import torch

from occutrack.core import (
    BallAnnotation,
    ContractViolation,
    PipelineConfig,
    Visibility,
)
from occutrack.flow import compute_flow, make_provider
from occutrack.heatmap import DecodedBall, activate, decode
from occutrack.model import TrackerNet, count_parameters

THRESHOLDS = {
    Visibility.VISIBLE: 5.0,
    Visibility.PARTIALLY_OCCLUDED: 5.0,
    Visibility.FULLY_OCCLUDED: 10.0,
}


def distance(pred: Tuple[float, float], label: Tuple[float, float]) -> float:
    if not all(math.isfinite(v) for v in (*pred, *label)):
        raise ContractViolation(f"non-finite coordinates: {pred} vs {label}")
    return math.hypot(pred[0] - label[0], pred[1] - label[1])


@dataclass(frozen=True)
class EvalRecord:
    sample_id: str
    visibility: Visibility
    dist: Optional[float]
    no_ball: bool
    correct: bool

    def __post_init__(self):
        if self.dist is not None:
            if self.dist < 0:
                raise ContractViolation(f"negative distance {self.dist}")
            if self.correct and self.dist > THRESHOLDS[self.visibility]:
                raise ContractViolation(
                    f"correct record with dist {self.dist} beyond "
                    f"{THRESHOLDS[self.visibility]}")
        elif self.correct and not (
                self.visibility == Visibility.OUT_OF_FRAME and self.no_ball):
            raise ContractViolation(
                "distance-free record can only be correct as a no-ball "
                "match on an out-of-frame label")

    def to_dict(self) -> dict:
        return {
            "sample_id": self.sample_id,
            "visibility": self.visibility.name.lower(),
            "dist": self.dist,
            "no_ball": self.no_ball,
            "correct": self.correct,
        }


def judge(pred: Optional[DecodedBall], label: BallAnnotation,
          sample_id: str = "") -> EvalRecord:
    if label.visibility == Visibility.OUT_OF_FRAME:
        return EvalRecord(sample_id, label.visibility, dist=None,
                          no_ball=pred is None, correct=pred is None)
    if pred is None:
        return EvalRecord(sample_id, label.visibility, dist=None,
                          no_ball=True, correct=False)
    d = distance((pred.x, pred.y), label.position())
    return EvalRecord(sample_id, label.visibility, dist=d, no_ball=False,
                      correct=d <= THRESHOLDS[label.visibility])


def aggregate(records: Sequence[EvalRecord]) -> Dict[str, dict]:
    """Per-visibility {rmse, accuracy, count} plus an overall row.

    Visibility levels with no records are absent from the result; rmse is
    None for groups where no prediction carried a distance.
    """
    out: Dict[str, dict] = {}
    groups: Dict[Visibility, List[EvalRecord]] = {}
    for r in records:
        groups.setdefault(r.visibility, []).append(r)
    for vis in Visibility:
        if vis not in groups:
            continue
        out[vis.name.lower()] = _summarize(groups[vis])
    if records:
        out["overall"] = _summarize(list(records))
    return out


def _summarize(records: List[EvalRecord]) -> dict:
    dists = [r.dist for r in records if r.dist is not None]
    rmse = math.sqrt(sum(d * d for d in dists) / len(dists)) if dists else None
    accuracy = sum(r.correct for r in records) / len(records)
    return {"rmse": rmse, "accuracy": accuracy, "count": len(records)}


# ---------------------------------------------------------------------------
# full-clip inference

def _window_plan(length: int, t: int, target_index: int) -> List[Tuple[int, int]]:
    """(window_start, frame_offset) so every frame has exactly one source.

    Interior frames use the window centered on them; frames too close to
    either end reuse the nearest valid window at a shifted offset, since
    the network emits predictions for all T frames.
    """
    plan = []
    for f in range(length):
        start = min(max(f - target_index, 0), length - t)
        plan.append((start, f - start))
    return plan


@dataclass
class TrajectoryRow:
    frame: int
    ball: Optional[DecodedBall]
    confidence: float


def predict_clip(model: TrackerNet, clip, config: PipelineConfig,
                 batch_size: Optional[int] = None) -> List[TrajectoryRow]:
    """Run the tracker over every frame of a loaded clip."""
    frames = clip.frames
    t = config.t
    if len(frames) < t:
        raise ContractViolation(
            f"clip of {len(frames)} frames is shorter than the window ({t})")
    plan = _window_plan(len(frames), t, config.target_index)
    starts = sorted({s for s, _ in plan})
    provider = make_provider(config) if config.use_flow else None
    bs = batch_size or config.batch_size

    model.eval()
    scores: Dict[int, Tuple[torch.Tensor, torch.Tensor]] = {}
    for i in range(0, len(starts), bs):
        chunk = starts[i:i + bs]
        stack = np.stack([frames[s:s + t] for s in chunk])
        batch = torch.from_numpy(stack).permute(0, 1, 4, 2, 3)
        flow = None
        if provider is not None:
            flow = [compute_flow(frames[s:s + t], provider) for s in chunk]
        with torch.no_grad():
            sx, sy = model.forward_scores(batch, flow)
        for j, s in enumerate(chunk):
            scores[s] = (sx[j], sy[j])

    rows = []
    for f, (start, offset) in enumerate(plan):
        sx, sy = scores[start]
        act = activate(sx[offset], sy[offset], config.activation_mode)
        conf = float(min(act.p_x.max(), act.p_y.max()))
        ball = decode(act, tau=config.confidence_threshold)
        rows.append(TrajectoryRow(frame=f, ball=ball, confidence=conf))
    return rows


def evaluate_clip(model: TrackerNet, clip, config: PipelineConfig,
                  batch_size: Optional[int] = None) -> List[EvalRecord]:
    rows = predict_clip(model, clip, config, batch_size)
    clip_id = getattr(clip, "clip_id", "clip")
    return [
        judge(row.ball, ann, sample_id=f"{clip_id}:{ann.frame_index}")
        for row, ann in zip(rows, clip.annotations)
    ]


TRAJECTORY_HEADER = ["frame", "x", "y", "confidence", "no_ball"]


def write_trajectory_csv(rows: Sequence[TrajectoryRow], path) -> None:
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(TRAJECTORY_HEADER)
        for row in rows:
            if row.ball is None:
                writer.writerow([row.frame, "", "", f"{row.confidence:.4f}", 1])
            else:
                writer.writerow([row.frame, row.ball.x, row.ball.y,
                                 f"{row.confidence:.4f}", 0])


# ---------------------------------------------------------------------------
# reports

def format_report(summary: Dict[str, dict]) -> str:
    headers = ["group", "count", "rmse", "accuracy"]
    rows = []
    for name, stats in summary.items():
        rmse = "-" if stats["rmse"] is None else f"{stats['rmse']:.2f}"
        rows.append([name, str(stats["count"]), rmse,
                     f"{stats['accuracy']:.3f}"])
    widths = [max(len(h), *(len(r[i]) for r in rows)) if rows else len(h)
              for i, h in enumerate(headers)]
    lines = ["  ".join(h.ljust(w) for h, w in zip(headers, widths))]
    lines.append("  ".join("-" * w for w in widths))
    for r in rows:
        lines.append("  ".join(c.ljust(w) for c, w in zip(r, widths)))
    return "\n".join(lines) + "\n"


def write_report(records: Sequence[EvalRecord], out_dir) -> Dict[str, dict]:
    """Text table, per-sample records, summary CSV, and bar-chart figures."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    summary = aggregate(records)

    (out / "report.txt").write_text(format_report(summary))
    with (out / "records.jsonl").open("w") as fh:
        for r in records:
            fh.write(json.dumps(r.to_dict()) + "\n")
    with (out / "summary.csv").open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["group", "count", "rmse", "accuracy"])
        for name, stats in summary.items():
            writer.writerow([name, stats["count"],
                             "" if stats["rmse"] is None else f"{stats['rmse']:.4f}",
                             f"{stats['accuracy']:.4f}"])
    _render_summary_figures(summary, out)
    return summary


def _render_summary_figures(summary: Dict[str, dict], out: Path) -> None:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    groups = [k for k in summary if k != "overall"]
    if not groups:
        return
    for metric, fname, ylabel in (
            ("accuracy", "accuracy_by_visibility.png", "accuracy"),
            ("rmse", "rmse_by_visibility.png", "RMSE (px)")):
        values = [(g, summary[g][metric]) for g in groups
                  if summary[g][metric] is not None]
        if not values:
            continue
        fig, ax = plt.subplots(figsize=(6, 3.5))
        ax.bar([v[0] for v in values], [v[1] for v in values],
               color="#4878d0")
        ax.set_ylabel(ylabel)
        ax.set_xlabel("visibility")
        ax.tick_params(axis="x", labelrotation=20)
        fig.tight_layout()
        fig.savefig(out / fname, dpi=110)
        plt.close(fig)


# ---------------------------------------------------------------------------
# overlays

def render_overlays(frames: np.ndarray, rows: Sequence[TrajectoryRow],
                    out_dir, labels: Optional[Sequence[BallAnnotation]] = None
                    ) -> List[Path]:
    if len(rows) != len(frames):
        raise ContractViolation(
            f"{len(rows)} predictions for {len(frames)} frames")
    if labels is not None and len(labels) != len(frames):
        raise ContractViolation(
            f"{len(labels)} labels for {len(frames)} frames")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for i, (frame, row) in enumerate(zip(frames, rows)):
        img = frame
        if img.dtype != np.uint8:
            img = np.clip(img * 255.0, 0, 255).astype(np.uint8)
        canvas = cv2.cvtColor(img.copy(), cv2.COLOR_RGB2BGR)
        if row.ball is None:
            cv2.putText(canvas, "no ball", (8, 18), cv2.FONT_HERSHEY_SIMPLEX,
                        0.5, (0, 0, 255), 1, cv2.LINE_AA)
        else:
            cv2.circle(canvas, (row.ball.x, row.ball.y), 6, (0, 255, 255), 1,
                       cv2.LINE_AA)
        if labels is not None:
            ann = labels[i]
            if ann.has_position():
                x, y = ann.position()
                cv2.drawMarker(canvas, (int(round(x)), int(round(y))),
                               (0, 255, 0), cv2.MARKER_CROSS, 9, 1)
            cv2.putText(canvas, ann.visibility.name.lower(),
                        (8, canvas.shape[0] - 8), cv2.FONT_HERSHEY_SIMPLEX,
                        0.4, (255, 255, 0), 1, cv2.LINE_AA)
        path = out / f"{i:06d}.png"
        if not cv2.imwrite(str(path), canvas):
            raise IOError(f"could not write {path}")
        paths.append(path)
    return paths


# ---------------------------------------------------------------------------
# throughput

def benchmark_throughput(model: TrackerNet, config: PipelineConfig,
                         n_windows: int) -> Dict[str, float]:
    if n_windows < 1:
        raise ContractViolation("throughput benchmark needs n_windows >= 1")
    gen = torch.Generator().manual_seed(config.seed)
    windows = torch.rand(
        (n_windows, config.t, 3, config.height, config.width), generator=gen)
    flow = None
    if config.use_flow:
        flow = [compute_flow(w.permute(0, 2, 3, 1).numpy(),
                             make_provider(config)) for w in windows]
    model.eval()
    with torch.no_grad():
        model.forward_scores(windows[:1],
                             None if flow is None else flow[:1])  # warm-up
        start = time.perf_counter()
        for i in range(n_windows):
            model.forward_scores(windows[i:i + 1],
                                 None if flow is None else flow[i:i + 1])
        elapsed = time.perf_counter() - start
    wps = n_windows / elapsed
    return {
        "params_millions": count_parameters(model) / 1e6,
        "windows_per_second": wps,
        "frames_per_second": wps * config.t,
    }
