"""Occlusion-robust ball tracking for desk-scale experiments.

A spatio-temporal tracker trained on axial position heatmaps with
visibility-weighted supervision, plus a synthetic occlusion benchmark
to measure how well it holds the ball through occluders.
"""

from occutrack.core import (
    AnnotationError,
    BallAnnotation,
    CheckpointError,
    ConfigError,
    ContractViolation,
    FrameWindow,
    IngestError,
    LossWeights,
    PipelineConfig,
    Visibility,
    load_config,
    save_config,
)

__version__ = "0.1.0"

__all__ = [
    "AnnotationError",
    "BallAnnotation",
    "CheckpointError",
    "ConfigError",
    "ContractViolation",
    "FrameWindow",
    "IngestError",
    "LossWeights",
    "PipelineConfig",
    "Visibility",
    "load_config",
    "save_config",
    "__version__",
]
