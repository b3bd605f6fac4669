"""Seeded training loop with checkpointing, early stopping, and metrics logs.

Batches are shuffled with a per-epoch generator derived from (seed, epoch),
so resuming from epoch k replays exactly the batches a fresh run would have
seen. Augmentation runs per sample behind the config toggles, flow (when
enabled) is computed after augmentation, and the loss is the visibility-
weighted axial BCE. Validation metrics are appended per epoch to a JSONL
log; the best-validation checkpoint is kept alongside the last, written
atomically. Training-curve figures are rendered next to the log.
"""

from __future__ import annotations

import json
import math
import os
import tempfile
import time
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np
import torch
from torch import nn

from occutrack.augment import build_pipeline, compose
from occutrack.core import (
    CheckpointError,
    ContractViolation,
    FrameWindow,
    IngestError,
    PipelineConfig,
)
from occutrack.evaluate import aggregate, judge
from occutrack.flow import compute_flow, make_provider
from occutrack.heatmap import activate, batch_loss_tensors, build_target, decode
from occutrack.ingest import (
    ClipManifest,
    build_windows,
    clip_from_arrays,
    filter_training_samples,
    load_clip,
)
from occutrack.model import StagePlan, TrackerNet, build_model

FORMAT_VERSION = 1


class TrainingDiverged(RuntimeError):
    """Raised when the loss goes non-finite; diagnostics are on disk."""


# ---------------------------------------------------------------------------
# checkpoints

def save_checkpoint(state: dict, path) -> Path:
    """Write atomically: serialize to a sibling temp file, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            torch.save(state, fh)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


_REQUIRED_SECTIONS = ("format_version", "model_state", "optimizer_state",
                      "epoch", "config", "plan")


def load_checkpoint(path) -> dict:
    path = Path(path)
    try:
        state = torch.load(path, map_location="cpu", weights_only=True)
    except Exception as exc:
        raise CheckpointError(f"unreadable archive {path}: {exc}") from exc
    if not isinstance(state, dict):
        raise CheckpointError(f"archive {path} is not a state dictionary")
    for section in _REQUIRED_SECTIONS:
        if section not in state:
            raise CheckpointError(f"archive {path} missing section {section!r}")
    if state["format_version"] != FORMAT_VERSION:
        raise CheckpointError(
            f"archive {path} has format version {state['format_version']}, "
            f"expected {FORMAT_VERSION}")
    return state


def make_checkpoint(model: TrackerNet, optimizer: torch.optim.Optimizer,
                    config: PipelineConfig, epoch: int,
                    best_metric: Optional[float]) -> dict:
    plan = model.plan
    return {
        "format_version": FORMAT_VERSION,
        "model_state": model.state_dict(),
        "optimizer_state": optimizer.state_dict(),
        "epoch": epoch,
        "best_metric": best_metric,
        "config": config.to_dict(),
        "plan": {
            "channels": plan.channels,
            "spatial_kernels": plan.spatial_kernels,
            "temporal_kernels": plan.temporal_kernels,
            "spatial_pools": plan.spatial_pools,
            "temporal_pools": plan.temporal_pools,
            "bottleneck_channels": plan.bottleneck_channels,
            "bottleneck_spatial_layers": plan.bottleneck_spatial_layers,
        },
    }


def restore_model(state: dict) -> Tuple[TrackerNet, PipelineConfig]:
    config = PipelineConfig.from_dict(state["config"])
    plan = StagePlan(**{k: tuple(v) if isinstance(v, (list, tuple)) else v
                        for k, v in state["plan"].items()})
    model = TrackerNet(plan, config.t,
                       activation_mode=config.activation_mode,
                       use_flow=config.use_flow)
    try:
        model.load_state_dict(state["model_state"])
    except RuntimeError as exc:
        raise CheckpointError(f"model_state does not fit the plan: {exc}") from exc
    return model, config


# ---------------------------------------------------------------------------
# optimizer

def make_optimizer(model: nn.Module, config: PipelineConfig) -> torch.optim.Optimizer:
    """AdamW so the decay multiplies weights directly instead of entering
    the gradient; the toggle grid relies on losses staying comparable."""
    return torch.optim.AdamW(model.parameters(), lr=config.lr,
                             weight_decay=config.weight_decay)


def make_scheduler(optimizer: torch.optim.Optimizer,
                   config: PipelineConfig):
    if config.schedule == "cosine" and config.epochs > 0:
        return torch.optim.lr_scheduler.CosineAnnealingLR(
            optimizer, T_max=config.epochs)
    return None


# ---------------------------------------------------------------------------
# data plumbing

def _as_loaded_clip(clip, config: PipelineConfig, split: str):
    if isinstance(clip, ClipManifest):
        return load_clip(clip, config)
    if hasattr(clip, "spec") and hasattr(clip, "true_positions"):
        return clip_from_arrays(clip.spec.clip_id, clip.frames,
                                clip.annotations, config,
                                split=getattr(clip.spec, "split", split))
    return clip


def prepare_windows(clips: Sequence, config: PipelineConfig,
                    training: bool) -> List[FrameWindow]:
    stride = config.train_stride if training else config.eval_stride
    windows: List[FrameWindow] = []
    for clip in clips:
        loaded = _as_loaded_clip(clip, config, "train" if training else "val")
        windows.extend(build_windows(loaded, config, stride=stride))
    if training:
        windows = filter_training_samples(windows, config)
    return windows


def _window_tensors(windows: Sequence[FrameWindow], config: PipelineConfig,
                    pipeline, rng, provider):
    """Augment, build supervision, and stack one batch."""
    frames, tx, ty, sw, flows = [], [], [], [], []
    weights = config.effective_weights()
    for window in windows:
        w = compose(pipeline, window, rng) if pipeline else window
        if provider is not None:
            flows.append(compute_flow(w.frames, provider))
        indices = (range(config.t) if config.supervise_all_frames
                   else [config.target_index])
        for j in indices:
            ann = w.annotations[j]
            target = build_target(ann, config)
            tx.append(torch.from_numpy(target.t_x))
            ty.append(torch.from_numpy(target.t_y))
            sw.append(weights[ann.visibility])
        frames.append(torch.from_numpy(np.ascontiguousarray(w.frames)))
    batch = torch.stack(frames).permute(0, 1, 4, 2, 3)
    return (batch, torch.stack(tx), torch.stack(ty),
            torch.tensor(sw, dtype=torch.float32),
            flows if provider is not None else None)


def batch_forward_loss(model: TrackerNet, windows: Sequence[FrameWindow],
                       config: PipelineConfig, pipeline=None, rng=None,
                       provider=None) -> torch.Tensor:
    """Loss of one batch under the config's toggles; differentiable."""
    batch, tx, ty, sw, flows = _window_tensors(
        windows, config, pipeline, rng, provider)
    sx, sy = model.forward_scores(batch, flows)
    if config.supervise_all_frames:
        sx = sx.reshape(-1, sx.shape[-1])
        sy = sy.reshape(-1, sy.shape[-1])
    else:
        sx = sx[:, config.target_index]
        sy = sy[:, config.target_index]
    act = activate(sx, sy, config.activation_mode)
    return batch_loss_tensors(act.p_x, act.p_y, tx, ty, sw)


def evaluate_windows(model: TrackerNet, windows: Sequence[FrameWindow],
                     config: PipelineConfig,
                     flows_cache: Optional[List] = None) -> Tuple[float, dict]:
    """Mean loss plus per-visibility summary over fixed windows.

    Scores only each window's target frame, with no augmentation; pass
    flows_cache (one field per window) when the model consumes flow.
    """
    model.eval()
    losses, records = [], []
    bs = config.batch_size
    with torch.no_grad():
        for i in range(0, len(windows), bs):
            chunk = windows[i:i + bs]
            batch, tx, ty, sw, _ = _window_tensors(
                chunk, config, None, None, None)
            flows = (flows_cache[i:i + bs] if flows_cache is not None
                     else None)
            sx, sy = model.forward_scores(batch, flows)
            if config.supervise_all_frames:
                fx = sx.reshape(-1, sx.shape[-1])
                fy = sy.reshape(-1, sy.shape[-1])
            else:
                fx = sx[:, config.target_index]
                fy = sy[:, config.target_index]
            act = activate(fx, fy, config.activation_mode)
            losses.append(float(batch_loss_tensors(act.p_x, act.p_y,
                                                   tx, ty, sw)))
            for j, window in enumerate(chunk):
                one = activate(sx[j, config.target_index],
                               sy[j, config.target_index],
                               config.activation_mode)
                ball = decode(one, tau=config.confidence_threshold)
                records.append(judge(ball, window.target,
                                     sample_id=window.source_id))
    summary = aggregate(records)
    return float(np.mean(losses)) if losses else math.nan, summary


@dataclass
class TrainResult:
    model: TrackerNet
    config: PipelineConfig
    best_path: Optional[Path]
    last_path: Optional[Path]
    metrics_path: Path
    epochs_run: int
    best_metric: float
    history: List[dict] = field(default_factory=list)


def _append_metrics(path: Path, record: dict) -> None:
    with path.open("a") as fh:
        fh.write(json.dumps(record) + "\n")


def train(config: PipelineConfig, train_clips: Sequence,
          val_clips: Sequence, out_dir,
          resume: Optional[str] = None) -> TrainResult:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    metrics_path = out / "metrics.jsonl"

    windows = prepare_windows(train_clips, config, training=True)
    if not windows:
        raise IngestError("no training windows after filtering")
    val_windows = prepare_windows(val_clips, config, training=False)

    torch.manual_seed(config.seed)
    model = build_model(config)
    optimizer = make_optimizer(model, config)
    scheduler = make_scheduler(optimizer, config)

    start_epoch = 0
    best_metric = -math.inf
    if resume is not None:
        state = load_checkpoint(resume)
        restored, _ = restore_model(state)
        model.load_state_dict(restored.state_dict())
        optimizer.load_state_dict(state["optimizer_state"])
        start_epoch = state["epoch"]
        if state.get("best_metric") is not None:
            best_metric = state["best_metric"]
        if scheduler is not None:
            # fast-forward past completed epochs; the step-before-optimizer
            # warning does not apply when replaying a schedule
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                for _ in range(start_epoch):
                    scheduler.step()

    pipeline = build_pipeline(config)
    provider = make_provider(config) if config.use_flow else None
    # validation windows never change, so their flow fields are computed once
    val_flows = ([compute_flow(w.frames, provider) for w in val_windows]
                 if provider is not None else None)
    best_path = out / "best.pt"
    last_path = out / "last.pt"
    history: List[dict] = []
    loss_history: List[float] = []
    epochs_without_improvement = 0
    epochs_run = 0

    for epoch in range(start_epoch, config.epochs):
        tic = time.perf_counter()
        rng = np.random.default_rng((config.seed, epoch))
        order = rng.permutation(len(windows))
        model.train()
        epoch_losses = []
        for i in range(0, len(order), config.batch_size):
            chunk = [windows[k] for k in order[i:i + config.batch_size]]
            loss = batch_forward_loss(model, chunk, config,
                                      pipeline=pipeline, rng=rng,
                                      provider=provider)
            value = loss.detach().item()
            if not math.isfinite(value):
                diagnostic = {
                    "epoch": epoch,
                    "batch_ids": [w.source_id for w in chunk],
                    "loss_history": loss_history[-50:],
                }
                (out / "divergence.json").write_text(
                    json.dumps(diagnostic, indent=2))
                raise TrainingDiverged(
                    f"non-finite loss at epoch {epoch}; "
                    f"diagnostics in {out / 'divergence.json'}")
            optimizer.zero_grad()
            loss.backward()
            if config.grad_clip > 0:
                nn.utils.clip_grad_norm_(model.parameters(), config.grad_clip)
            optimizer.step()
            epoch_losses.append(value)
            loss_history.append(value)
        if scheduler is not None:
            scheduler.step()

        train_record = {
            "epoch": epoch,
            "split": "train",
            "loss": float(np.mean(epoch_losses)),
            "wall_time_s": time.perf_counter() - tic,
        }
        _append_metrics(metrics_path, train_record)
        history.append(train_record)

        tic = time.perf_counter()
        metric = 0.0
        if val_windows:
            val_loss, summary = evaluate_windows(model, val_windows, config,
                                                 flows_cache=val_flows)
            val_record = {
                "epoch": epoch,
                "split": "val",
                "loss": val_loss,
                "rmse": {g: s["rmse"] for g, s in summary.items()},
                "accuracy": {g: s["accuracy"] for g, s in summary.items()},
                "wall_time_s": time.perf_counter() - tic,
            }
            _append_metrics(metrics_path, val_record)
            history.append(val_record)
            metric = summary.get("visible", {}).get("accuracy", 0.0)

        epochs_run += 1
        improved = metric > best_metric or not val_windows
        if improved:
            best_metric = metric if val_windows else 0.0
            epochs_without_improvement = 0
        else:
            epochs_without_improvement += 1
        checkpoint = make_checkpoint(model, optimizer, config, epoch + 1,
                                     best_metric)
        save_checkpoint(checkpoint, last_path)
        if improved:
            save_checkpoint(checkpoint, best_path)
        elif (config.early_stop_patience > 0
                and epochs_without_improvement >= config.early_stop_patience):
            break

    if history:
        _render_training_curves(history, out)
    return TrainResult(
        model=model, config=config,
        best_path=best_path if best_path.exists() else None,
        last_path=last_path if last_path.exists() else None,
        metrics_path=metrics_path, epochs_run=epochs_run,
        best_metric=best_metric if best_metric != -math.inf else 0.0,
        history=history)


def _render_training_curves(history: List[dict], out: Path) -> None:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    train_rows = [r for r in history if r["split"] == "train"]
    val_rows = [r for r in history if r["split"] == "val"]
    fig, axes = plt.subplots(1, 2, figsize=(10, 3.6))
    axes[0].plot([r["epoch"] for r in train_rows],
                 [r["loss"] for r in train_rows], label="train")
    if val_rows:
        axes[0].plot([r["epoch"] for r in val_rows],
                     [r["loss"] for r in val_rows], label="val")
    axes[0].set_xlabel("epoch")
    axes[0].set_ylabel("loss")
    axes[0].legend()
    points = [(r["epoch"], r["accuracy"].get("visible")) for r in val_rows]
    points = [(e, a) for e, a in points if a is not None]
    if points:
        axes[1].plot([e for e, _ in points], [a for _, a in points],
                     color="#d65f5f")
    axes[1].set_xlabel("epoch")
    axes[1].set_ylabel("visible accuracy@5px")
    axes[1].set_ylim(0, 1)
    fig.tight_layout()
    fig.savefig(out / "training_curves.png", dpi=110)
    plt.close(fig)


def overfit_single_window(config: PipelineConfig, window: FrameWindow,
                          steps: int = 200) -> List[float]:
    """Drive the loss down on one window; returns the per-step loss curve."""
    if steps < 1:
        raise ContractViolation("need at least one step")
    torch.manual_seed(config.seed)
    model = build_model(config)
    optimizer = make_optimizer(model, config)
    provider = make_provider(config) if config.use_flow else None
    model.train()
    losses = []
    for _ in range(steps):
        loss = batch_forward_loss(model, [window], config, provider=provider)
        optimizer.zero_grad()
        loss.backward()
        if config.grad_clip > 0:
            nn.utils.clip_grad_norm_(model.parameters(), config.grad_clip)
        optimizer.step()
        losses.append(loss.detach().item())
    return losses
