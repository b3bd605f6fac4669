"""Command line interface for the full pipeline.

One executable, five subcommands: synth renders labeled clip families,
train fits a tracker on an ingested dataset, eval scores a checkpoint
per visibility level, infer emits a trajectory CSV (plus overlays), and
bench measures inference throughput.

Every flag can also be set through an environment variable prefixed
OCCUTRACK_<COMMAND>_<FLAG>. Exit codes: 0 success, 1 usage error,
2 data error (unreadable or inconsistent inputs), 3 runtime error.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click
import torch
import yaml

from occutrack.core import (
    AnnotationError,
    CheckpointError,
    ConfigError,
    ContractViolation,
    IngestError,
    PipelineConfig,
    load_config,
    save_config,
)
from occutrack.evaluate import (
    benchmark_throughput,
    evaluate_clip,
    format_report,
    predict_clip,
    render_overlays,
    write_report,
    write_trajectory_csv,
)
from occutrack.ingest import load_clip, load_manifest_index, load_media_clip
from occutrack.model import build_model
from occutrack.synth import SceneSpec, benchmark_family, gen_dataset
from occutrack.train import (
    TrainingDiverged,
    load_checkpoint,
    restore_model,
    train as run_training,
)

ENV_PREFIX = "OCCUTRACK"

_SETTINGS = {
    "help_option_names": ["-h", "--help"],
    "auto_envvar_prefix": ENV_PREFIX,
    "show_default": True,
}

_ABLATION_TOKENS = {
    "wbce": "use_weighted_bce",
    "aug": "use_occlusion_aug",
    "of": "use_flow",
}


def apply_ablation(config: PipelineConfig, raw: str) -> PipelineConfig:
    """Override the three study toggles from a comma list.

    Tokens present are switched on, absent ones off; the empty string is
    the all-off baseline. Everything else in the config stays untouched.
    """
    chosen = set()
    for token in raw.split(","):
        token = token.strip().lower()
        if not token:
            continue
        if token not in _ABLATION_TOKENS:
            raise click.BadParameter(
                f"unknown ablation token {token!r}; valid tokens: "
                f"{', '.join(sorted(_ABLATION_TOKENS))}",
                param_hint="--ablation")
        chosen.add(token)
    d = config.to_dict()
    for token, field in _ABLATION_TOKENS.items():
        d[field] = token in chosen
    return PipelineConfig.from_dict(d)


def _override(config: PipelineConfig, **fields) -> PipelineConfig:
    changed = {k: v for k, v in fields.items() if v is not None}
    if not changed:
        return config
    return PipelineConfig.from_dict({**config.to_dict(), **changed})


@click.group(context_settings=_SETTINGS)
def cli():
    """Occlusion-robust ball tracking: synthesis, training, evaluation."""


@cli.command()
@click.option("--out", "out_dir", required=True,
              type=click.Path(file_okay=False), help="dataset directory")
@click.option("--clips", default=12, type=int, help="number of clips")
@click.option("--height", default=144, type=int, help="frame height")
@click.option("--width", default=256, type=int, help="frame width")
@click.option("--clip-length", default=64, type=int, help="frames per clip")
@click.option("--occlusion-rate", default=0.25, type=float,
              help="target fraction of frames with the ball covered")
@click.option("--ball-radius", default=3.0, type=float, help="ball radius, px")
@click.option("--seed", default=0, type=int, help="family seed")
@click.option("--val-fraction", default=0.2, type=float,
              help="fraction of clips labeled val")
@click.option("--test-fraction", default=0.0, type=float,
              help="fraction of clips labeled test")
@click.option("--scenes", "scenes_path", default=None,
              type=click.Path(dir_okay=False),
              help="YAML list of explicit scene definitions, replacing the "
                   "generated family")
def synth(out_dir, clips, height, width, clip_length, occlusion_rate,
          ball_radius, seed, val_fraction, test_fraction, scenes_path):
    """Render a synthetic labeled clip family to disk."""
    if scenes_path is not None:
        specs = _read_scene_file(scenes_path)
    else:
        specs = benchmark_family(
            clips, height=height, width=width, clip_length=clip_length,
            occlusion_rate=occlusion_rate, ball_radius=ball_radius,
            seed=seed, val_fraction=val_fraction,
            test_fraction=test_fraction)
    manifests = gen_dataset(specs, out_dir)
    stats = json.loads(
        (Path(out_dir) / "generation_stats.json").read_text())
    click.echo(f"wrote {len(manifests)} clips under {out_dir}")
    click.echo(f"visibility histogram: {stats['histogram']}")
    click.echo(f"occlusion fraction: {stats['occlusion_fraction']:.3f}")


def _read_scene_file(path) -> list:
    try:
        raw = yaml.safe_load(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read scene file {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse scene file {path}: {exc}") from exc
    if not isinstance(raw, list) or not raw:
        raise ConfigError(f"scene file {path} must hold a non-empty list")
    specs = []
    for i, entry in enumerate(raw):
        if not isinstance(entry, dict):
            raise ConfigError(f"scene entry {i} in {path} is not a mapping")
        try:
            specs.append(SceneSpec(**{str(k): v for k, v in entry.items()}))
        except (TypeError, ContractViolation) as exc:
            raise ConfigError(f"scene entry {i} in {path}: {exc}") from exc
    return specs


@cli.command(name="train")
@click.option("--config", "config_path", default=None,
              type=click.Path(dir_okay=False),
              help="YAML config; defaults apply when omitted")
@click.option("--data", "data_dir", required=True, type=click.Path(),
              help="dataset directory holding a manifest index")
@click.option("--out", "out_dir", required=True,
              type=click.Path(file_okay=False),
              help="checkpoints and logs land here")
@click.option("--ablation", default=None,
              help="comma list of toggles to enable (wbce,aug,of); the "
                   "empty string turns all three off")
@click.option("--epochs", default=None, type=int, help="override epoch count")
@click.option("--seed", default=None, type=int, help="override config seed")
@click.option("--resume", "resume_path", default=None,
              type=click.Path(dir_okay=False),
              help="checkpoint to continue from")
def train_cmd(config_path, data_dir, out_dir, ablation, epochs, seed,
              resume_path):
    """Train a tracker on an ingested dataset."""
    config = load_config(config_path) if config_path else PipelineConfig()
    if ablation is not None:
        config = apply_ablation(config, ablation)
    config = _override(config, epochs=epochs, seed=seed)
    manifests = load_manifest_index(data_dir)
    train_clips = [m for m in manifests if m.split == "train"]
    val_clips = [m for m in manifests if m.split == "val"]
    if not train_clips:
        raise IngestError(f"no clips with split 'train' under {data_dir}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_config(config, out / "config.yaml")
    result = run_training(config, train_clips, val_clips, out,
                          resume=resume_path)
    click.echo(f"trained {result.epochs_run} epochs; best visible "
               f"accuracy@5px {result.best_metric:.4f}")
    for label, path in (("best", result.best_path),
                        ("last", result.last_path)):
        if path is not None:
            click.echo(f"{label} checkpoint: {path}")
    click.echo(f"metrics log: {result.metrics_path}")


@cli.command(name="eval")
@click.option("--checkpoint", required=True, type=click.Path(dir_okay=False),
              help="trained model archive")
@click.option("--data", "data_dir", required=True, type=click.Path(),
              help="dataset directory holding a manifest index")
@click.option("--split", default="test", help="manifest split to score")
@click.option("--out", "out_dir", required=True,
              type=click.Path(file_okay=False),
              help="report files land here")
@click.option("--records", "records_path", default=None,
              type=click.Path(dir_okay=False),
              help="also write per-sample records to this path")
@click.option("--tau", default=None, type=float,
              help="override decode confidence threshold")
def eval_cmd(checkpoint, data_dir, split, out_dir, records_path, tau):
    """Score a checkpoint per visibility level and write a report."""
    model, config = restore_model(load_checkpoint(checkpoint))
    config = _override(config, confidence_threshold=tau)
    manifests = [m for m in load_manifest_index(data_dir)
                 if m.split == split]
    if not manifests:
        raise IngestError(f"no clips with split {split!r} under {data_dir}")
    records = []
    for manifest in manifests:
        clip = load_clip(manifest, config)
        records.extend(evaluate_clip(model, clip, config))
    summary = write_report(records, out_dir)
    click.echo(format_report(summary))
    if records_path is not None:
        with open(records_path, "w") as fh:
            for record in records:
                fh.write(json.dumps(record.to_dict()) + "\n")
        click.echo(f"records: {records_path}")
    click.echo(f"report: {Path(out_dir) / 'report.txt'}")


@cli.command()
@click.option("--checkpoint", required=True, type=click.Path(dir_okay=False),
              help="trained model archive")
@click.option("--clip", "clip_path", required=True, type=click.Path(),
              help="frame directory or video file")
@click.option("--out", "out_dir", required=True,
              type=click.Path(file_okay=False),
              help="trajectory and overlays land here")
@click.option("--tau", default=None, type=float,
              help="override decode confidence threshold")
@click.option("--overlay", is_flag=True, default=False,
              help="write annotated frames next to the trajectory")
def infer(checkpoint, clip_path, out_dir, tau, overlay):
    """Track the ball through one clip; writes trajectory.csv."""
    model, config = restore_model(load_checkpoint(checkpoint))
    config = _override(config, confidence_threshold=tau)
    clip = load_media_clip(clip_path, config)
    rows = predict_clip(model, clip, config)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    csv_path = out / "trajectory.csv"
    write_trajectory_csv(rows, csv_path)
    missing = sum(1 for r in rows if r.ball is None)
    click.echo(f"trajectory: {csv_path} ({len(rows)} rows, "
               f"{missing} flagged no-ball)")
    if overlay:
        paths = render_overlays(clip.frames, rows, out / "overlays")
        click.echo(f"overlays: {out / 'overlays'} ({len(paths)} frames)")


@cli.command()
@click.option("--checkpoint", default=None, type=click.Path(dir_okay=False),
              help="trained model archive")
@click.option("--config", "config_path", default=None,
              type=click.Path(dir_okay=False),
              help="YAML config for an untrained model")
@click.option("--windows", default=16, type=int,
              help="timed forward passes")
@click.option("--out", "out_path", default=None,
              type=click.Path(dir_okay=False),
              help="also write the numbers as JSON")
def bench(checkpoint, config_path, windows, out_path):
    """Measure single-process inference throughput."""
    if (checkpoint is None) == (config_path is None):
        raise click.UsageError("pass exactly one of --checkpoint or --config")
    if checkpoint is not None:
        model, config = restore_model(load_checkpoint(checkpoint))
    else:
        config = load_config(config_path)
        torch.manual_seed(config.seed)
        model = build_model(config)
    report = benchmark_throughput(model, config, n_windows=windows)
    for key in ("params_millions", "windows_per_second",
                "frames_per_second"):
        click.echo(f"{key}: {report[key]:.3f}")
    if out_path is not None:
        Path(out_path).write_text(json.dumps(report, indent=2))
        click.echo(f"wrote {out_path}")


def main(argv=None) -> int:
    """Entry point with the documented exit-code contract."""
    try:
        rv = cli.main(args=argv, standalone_mode=False)
        return rv if isinstance(rv, int) else 0
    except click.exceptions.Exit as exc:
        return int(exc.exit_code)
    except click.exceptions.Abort:
        click.echo("aborted", err=True)
        return 1
    except click.exceptions.NoArgsIsHelpError as exc:
        click.echo(exc.format_message())
        return 0
    except click.UsageError as exc:
        hint = ""
        if exc.ctx is not None:
            hint = exc.ctx.get_usage() + "\n"
        click.echo(f"{hint}usage error: {exc.format_message()}", err=True)
        return 1
    except click.ClickException as exc:
        click.echo(f"error: {exc.format_message()}", err=True)
        return 1
    except (IngestError, AnnotationError, ConfigError,
            FileNotFoundError) as exc:
        click.echo(f"data error: {exc}", err=True)
        return 2
    except (CheckpointError, ContractViolation, TrainingDiverged,
            RuntimeError, OSError) as exc:
        click.echo(f"runtime error: {exc}", err=True)
        return 3


if __name__ == "__main__":
    sys.exit(main())
