"""Spatio-temporal U-Net that maps a frame window to axial score vectors.

Every stage runs a per-frame spatial convolution and a temporal convolution
with a residual add between the two branches; the encoder shrinks both the
spatial grid and the temporal extent until the bottleneck sees a single
fused frame, and the decoder mirrors the path with trilinear upsampling and
dual skip connections (the spatial branch feeds the decoder's spatial conv,
the temporal branch feeds its temporal conv). Optical flow, when enabled,
enters as two extra channels on the first encoder stage only.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
import torch
from torch import nn

from occutrack.core import ConfigError, ContractViolation, PipelineConfig
from occutrack.flow import FlowField
from occutrack.heatmap import AxialPrediction, activate

# displacements run an order of magnitude larger than [0, 1] intensities;
# scaled down so both input families train at comparable rates from step one
FLOW_INPUT_SCALE = 1.0 / 16.0


def auto_temporal_pools(t: int, stages: int) -> Tuple[int, ...]:
    """Greedy factor-2 schedule reducing t to exactly 1 within the stages."""
    pools = []
    extent = t
    for _ in range(stages):
        if extent > 1:
            pools.append(2)
            extent = extent // 2
        else:
            pools.append(1)
    if extent != 1:
        raise ConfigError(
            f"cannot reduce temporal extent {t} to 1 in {stages} stages")
    return tuple(pools)


@dataclass(frozen=True)
class StagePlan:
    """Per-stage layout of the network, validated against the window length."""

    channels: Tuple[int, ...]
    spatial_kernels: Tuple[int, ...]
    temporal_kernels: Tuple[int, ...]
    spatial_pools: Tuple[int, ...]
    temporal_pools: Tuple[int, ...]
    bottleneck_channels: int
    bottleneck_spatial_layers: int

    def __post_init__(self):
        n = len(self.channels)
        for name in ("spatial_kernels", "temporal_kernels",
                     "spatial_pools", "temporal_pools"):
            if len(getattr(self, name)) != n:
                raise ConfigError(
                    f"{name} has {len(getattr(self, name))} entries "
                    f"for {n} stages")
        for name in ("spatial_kernels", "temporal_kernels"):
            ks = getattr(self, name)
            if any(b > a for a, b in zip(ks, ks[1:])):
                raise ConfigError(f"{name} must be non-increasing, got {ks}")
        if any(k < 1 or k % 2 == 0 for k in self.spatial_kernels):
            raise ConfigError("spatial kernels must be odd and positive")
        if any(k < 1 for k in self.temporal_kernels):
            raise ConfigError("temporal kernels must be positive")
        if self.bottleneck_spatial_layers < 1:
            raise ConfigError("bottleneck needs at least one spatial layer")

    @property
    def stages(self) -> int:
        return len(self.channels)

    def temporal_trace(self, t: int) -> List[int]:
        """Temporal extents after each encoder stage, floor pooling."""
        extents = []
        extent = t
        for pool in self.temporal_pools:
            extent = extent // pool
            if extent < 1:
                raise ConfigError(
                    f"temporal extent hits {extent} for window length {t} "
                    f"with pools {self.temporal_pools}")
            extents.append(extent)
        return extents

    def validate_window(self, t: int) -> None:
        if self.temporal_trace(t)[-1] != 1:
            raise ConfigError(
                f"temporal pools {self.temporal_pools} leave extent "
                f"{self.temporal_trace(t)[-1]} != 1 for window length {t}")

    @classmethod
    def from_config(cls, config: PipelineConfig) -> "StagePlan":
        stages = len(config.stage_channels)
        temporal = config.temporal_pools
        if temporal is None:
            temporal = auto_temporal_pools(config.t, stages)
        plan = cls(
            channels=tuple(config.stage_channels),
            spatial_kernels=tuple(config.spatial_kernels),
            temporal_kernels=tuple(config.temporal_kernels),
            spatial_pools=tuple(config.spatial_pools),
            temporal_pools=tuple(temporal),
            bottleneck_channels=config.bottleneck_channels,
            bottleneck_spatial_layers=config.bottleneck_spatial_layers,
        )
        plan.validate_window(config.t)
        return plan


def _conv_unit(c_in: int, c_out: int, kernel: Tuple[int, int, int]) -> nn.Sequential:
    padding = tuple(k // 2 for k in kernel)
    return nn.Sequential(
        nn.Conv3d(c_in, c_out, kernel, padding=padding, bias=False),
        nn.BatchNorm3d(c_out),
        nn.ReLU(inplace=True),
    )


class EncoderBlock(nn.Module):
    """Spatial conv per frame, temporal conv across frames, residual, pool.

    Returns the pooled features plus both pre-pool branch outputs; the
    decoder consumes those as its dual skips.
    """

    def __init__(self, c_in: int, c_out: int, spatial_kernel: int,
                 temporal_kernel: int, pool: Tuple[int, int, int]):
        super().__init__()
        self.c_in = c_in
        self.spatial = _conv_unit(c_in, c_out, (1, spatial_kernel, spatial_kernel))
        self.temporal = _conv_unit(
            c_out, c_out, (temporal_kernel, temporal_kernel, temporal_kernel))
        self.pool = nn.MaxPool3d(pool)

    def forward(self, x: torch.Tensor):
        if x.ndim != 5 or x.shape[1] != self.c_in:
            raise ContractViolation(
                f"encoder block expects (B, {self.c_in}, T, H, W), "
                f"got {tuple(x.shape)}")
        s = self.spatial(x)
        t = self.temporal(s)
        y = t + s
        return self.pool(y), s, t


class Bottleneck(nn.Module):
    """Spatial stack plus a point-wise channel mixer on the fused frame."""

    def __init__(self, c_in: int, c_out: int, spatial_layers: int,
                 spatial_kernel: int = 3):
        super().__init__()
        layers = [_conv_unit(c_in, c_out, (1, spatial_kernel, spatial_kernel))]
        for _ in range(spatial_layers - 1):
            layers.append(_conv_unit(c_out, c_out, (1, spatial_kernel, spatial_kernel)))
        self.spatial_stack = nn.Sequential(*layers)
        self.pointwise = _conv_unit(c_out, c_out, (1, 1, 1))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.ndim != 5 or x.shape[2] != 1:
            raise ContractViolation(
                f"bottleneck expects temporal extent 1, got {tuple(x.shape)}")
        return self.pointwise(self.spatial_stack(x))


def trilinear_upsample(x: torch.Tensor, size: Tuple[int, int, int]) -> torch.Tensor:
    return nn.functional.interpolate(
        x, size=size, mode="trilinear", align_corners=False)


class DecoderBlock(nn.Module):
    """Trilinear upsample to the skip extents, then mirrored dual-skip convs."""

    def __init__(self, c_in: int, c_skip: int, c_out: int,
                 spatial_kernel: int, temporal_kernel: int,
                 pool: Tuple[int, int, int]):
        super().__init__()
        self.pool = pool
        self.spatial = _conv_unit(
            c_in + c_skip, c_out, (1, spatial_kernel, spatial_kernel))
        self.temporal = _conv_unit(
            c_out + c_skip, c_out,
            (temporal_kernel, temporal_kernel, temporal_kernel))

    def forward(self, x: torch.Tensor, skip_s: torch.Tensor,
                skip_t: torch.Tensor) -> torch.Tensor:
        if skip_s.shape != skip_t.shape:
            raise ContractViolation(
                f"skip branches disagree: {tuple(skip_s.shape)} vs "
                f"{tuple(skip_t.shape)}")
        target = skip_s.shape[2:]
        for dim, (extent, factor) in enumerate(zip(target, self.pool)):
            if extent // factor != x.shape[2 + dim]:
                raise ContractViolation(
                    f"skip extent {extent} at dim {dim} does not invert "
                    f"pool {factor} from {x.shape[2 + dim]}")
        up = trilinear_upsample(x, target)
        s = self.spatial(torch.cat([up, skip_s], dim=1))
        t = self.temporal(torch.cat([s, skip_t], dim=1))
        return t + s


def max_project_axial(score_map: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
    """(..., H, W) score map -> axial score vectors (..., W) and (..., H)."""
    scores_x = score_map.max(dim=-2).values
    scores_y = score_map.max(dim=-1).values
    return scores_x, scores_y


class AxialHead(nn.Module):
    """Channel reduction to a single score map, then axial max-projection."""

    def __init__(self, c_in: int, kernel: int = 3):
        super().__init__()
        self.reduce = nn.Conv3d(c_in, 1, (kernel, kernel, kernel),
                                padding=(kernel // 2,) * 3)

    def forward(self, x: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
        maps = self.reduce(x).squeeze(1)  # (B, T, H, W)
        return max_project_axial(maps)


FlowBatch = Union[Sequence[FlowField], np.ndarray, torch.Tensor]


class TrackerNet(nn.Module):
    """Full window-to-axial-scores network for one window length."""

    def __init__(self, plan: StagePlan, t: int,
                 activation_mode: str = "softmax-axial",
                 use_flow: bool = False, channels_last: bool = True):
        super().__init__()
        plan.validate_window(t)
        if activation_mode not in ("softmax-axial", "sigmoid-axial"):
            raise ConfigError(f"unknown activation mode {activation_mode!r}")
        self.plan = plan
        self.t = t
        self.activation_mode = activation_mode
        self.use_flow = use_flow
        self.channels_last = channels_last

        in_ch = 3 + (2 if use_flow else 0)
        widths = [in_ch, *plan.channels]
        self.encoders = nn.ModuleList([
            EncoderBlock(widths[i], widths[i + 1],
                         plan.spatial_kernels[i], plan.temporal_kernels[i],
                         (plan.temporal_pools[i],
                          plan.spatial_pools[i], plan.spatial_pools[i]))
            for i in range(plan.stages)
        ])
        self.bottleneck = Bottleneck(plan.channels[-1], plan.bottleneck_channels,
                                     plan.bottleneck_spatial_layers)
        decoders = []
        c_in = plan.bottleneck_channels
        for i in reversed(range(plan.stages)):
            decoders.append(DecoderBlock(
                c_in, plan.channels[i], plan.channels[i],
                plan.spatial_kernels[i], plan.temporal_kernels[i],
                (plan.temporal_pools[i],
                 plan.spatial_pools[i], plan.spatial_pools[i])))
            c_in = plan.channels[i]
        self.decoders = nn.ModuleList(decoders)
        self.head = AxialHead(plan.channels[0])
        if channels_last:
            self.to(memory_format=torch.channels_last_3d)

    def _flow_tensor(self, flow: FlowBatch, b: int, t: int,
                     h: int, w: int, device, dtype) -> torch.Tensor:
        if isinstance(flow, (list, tuple)):
            if len(flow) != b:
                raise ContractViolation(
                    f"{len(flow)} flow fields for batch of {b}")
            stacked = np.stack([f.padded_to(t) for f in flow])
            tensor = torch.from_numpy(stacked)
        else:
            tensor = torch.as_tensor(flow)
            if tensor.shape == (b, t - 1, h, w, 2):
                tensor = torch.cat([tensor, tensor[:, -1:]], dim=1)
        if tensor.shape != (b, t, h, w, 2):
            raise ContractViolation(
                f"flow batch shape {tuple(tensor.shape)}, "
                f"expected {(b, t, h, w, 2)}")
        return tensor.permute(0, 4, 1, 2, 3).to(device=device, dtype=dtype)

    def forward_scores(self, frames: torch.Tensor,
                       flow: Optional[FlowBatch] = None
                       ) -> Tuple[torch.Tensor, torch.Tensor]:
        """(B, T, 3, H, W) frames -> raw axial scores (B, T, W), (B, T, H)."""
        if frames.ndim != 5 or frames.shape[2] != 3:
            raise ContractViolation(
                f"expected frames (B, T, 3, H, W), got {tuple(frames.shape)}")
        if frames.shape[1] != self.t:
            raise ContractViolation(
                f"network built for T={self.t}, got T={frames.shape[1]}")
        if self.use_flow and flow is None:
            raise ContractViolation("flow required but not provided")
        if not self.use_flow and flow is not None:
            raise ContractViolation("flow provided but use_flow is off")
        b, t, _, h, w = frames.shape
        x = frames.permute(0, 2, 1, 3, 4)  # (B, C, T, H, W)
        if self.use_flow:
            fl = self._flow_tensor(flow, b, t, h, w, x.device, x.dtype)
            x = torch.cat([x, fl * FLOW_INPUT_SCALE], dim=1)
        if self.channels_last:
            x = x.contiguous(memory_format=torch.channels_last_3d)
        skips = []
        for enc in self.encoders:
            x, s, tt = enc(x)
            skips.append((s, tt))
        x = self.bottleneck(x)
        for dec, (s, tt) in zip(self.decoders, reversed(skips)):
            x = dec(x, s, tt)
        return self.head(x)

    def forward(self, frames: torch.Tensor,
                flow: Optional[FlowBatch] = None
                ) -> List[List[AxialPrediction]]:
        """Activated per-frame predictions, a list of T entries per sample."""
        scores_x, scores_y = self.forward_scores(frames, flow)
        act = activate(scores_x, scores_y, self.activation_mode)
        p_x, p_y = act.p_x, act.p_y
        return [
            [AxialPrediction(p_x[i, j], p_y[i, j], self.activation_mode)
             for j in range(p_x.shape[1])]
            for i in range(p_x.shape[0])
        ]


def build_model(config: PipelineConfig) -> TrackerNet:
    plan = StagePlan.from_config(config)
    return TrackerNet(plan, config.t,
                      activation_mode=config.activation_mode,
                      use_flow=config.use_flow)


def count_parameters(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters() if p.requires_grad)


def param_count_millions(model: nn.Module) -> str:
    return f"{count_parameters(model) / 1e6:.2f}"
