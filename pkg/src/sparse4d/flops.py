"""Analytical FLOPs model for a stack of spatiotemporal DiT blocks.

Conventions: one multiply-add counts as 2 FLOPs; ``T`` frames of ``P`` tokens;
``d`` is the model width and ``L`` the context length. Per layer:

=======================  =============================================
temporal attention       density * 4 (T P)^2 d        (QK^T and AV only)
temporal projections     8 T P d^2
spatial attention        4 T P^2 d + 8 T P d^2
cross attention          4 T P d^2 + 4 T L d^2 + 4 T P L d
feed-forward             4 e T P d^2   (e = expansion, MoE as dense-equivalent)
skip projection          4 T P d^2 on skip layers, averaged over all layers
=======================  =============================================

Everything except the temporal attention term is linear in ``T`` and is
identical for sparse and full masks, so the total-network ratio is
``(F + rho A) / (F + A)`` with ``A`` the dense temporal attention cost,
``F`` the fixed cost and ``rho`` the mask density. Calibrated mode replaces
``F`` by ``kappa * A`` at a reference frame count; since ``F ~ T`` and
``A ~ T^2``, ``kappa(T) = kappa_ref * T_ref / T``.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import Iterable, Sequence

from .mask import GridSpec, MaskVariant, analytic_density, build_block_mask

# above this many blocks the mask is counted analytically instead of built
_MATERIALIZE_LIMIT = 4096


@dataclass(frozen=True)
class ArchConfig:
    num_layers: int = 21
    d_model: int = 2048
    heads: int = 16
    head_dim: int = 128
    tokens_per_frame: int = 4096
    block_size: int = 128
    context_len: int = 1370
    ffn_expansion: int = 4
    moe_layers: int = 6
    experts: int = 8
    top_k: int = 2
    skip_pairs: int = 10
    # MoE layer FFN cost relative to a dense FFN of the same expansion
    moe_cost_factor: float = 1.0

    def __post_init__(self):
        if self.d_model != self.heads * self.head_dim:
            raise ValueError("d_model must equal heads * head_dim")
        for name in ("num_layers", "d_model", "heads", "head_dim", "block_size"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        for name in ("tokens_per_frame", "context_len", "ffn_expansion", "moe_layers", "skip_pairs"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if self.moe_layers > self.num_layers or self.skip_pairs > self.num_layers:
            raise ValueError("moe_layers and skip_pairs cannot exceed num_layers")


REFERENCE_ARCH = ArchConfig()


def temporal_attention_flops(grid: GridSpec, d_model: int, density: float) -> float:
    """FLOPs of the QK^T and AV products of one temporal attention layer."""
    if not 0.0 < density <= 1.0:
        raise ValueError(f"density must be in (0, 1], got {density}")
    n = grid.total_tokens
    return density * 4 * n * n * d_model


def fixed_layer_components(arch: ArchConfig, frames: int) -> dict[str, float]:
    """Layer-averaged FLOPs of every component that does not depend on the mask."""
    if frames < 1:
        raise ValueError("frames must be >= 1")
    T, P, d, L = frames, arch.tokens_per_frame, arch.d_model, arch.context_len
    tpd2 = T * P * d * d
    moe_share = arch.moe_layers / arch.num_layers
    ffn_scale = (1 - moe_share) + moe_share * arch.moe_cost_factor
    return {
        "temporal_projections": 8 * tpd2,
        "spatial_attention": 4 * T * P * P * d + 8 * tpd2,
        "cross_attention": 4 * tpd2 + 4 * T * L * d * d + 4 * T * P * L * d,
        "feed_forward": 4 * arch.ffn_expansion * tpd2 * ffn_scale,
        "skip_projection": 4 * tpd2 * arch.skip_pairs / arch.num_layers,
    }


def fixed_layer_flops(arch: ArchConfig, frames: int) -> float:
    return float(sum(fixed_layer_components(arch, frames).values()))


def calibrate_kappa(target_ratio_total: float, density: float) -> float:
    """Fixed-to-attention cost ratio that makes ``(k + rho)/(k + 1)`` hit the target."""
    if not density <= target_ratio_total < 1.0:
        raise ValueError("target ratio must lie in [density, 1)")
    return (target_ratio_total - density) / (1.0 - target_ratio_total)


def mask_density(grid: GridSpec, variant: MaskVariant) -> float:
    if grid.total_blocks <= _MATERIALIZE_LIMIT:
        return build_block_mask(grid, variant).density()
    return analytic_density(grid, variant)


@dataclass(frozen=True)
class CostReport:
    frames: int
    density: float
    components: dict[str, float]  # network-level FLOPs per component
    sparse_total: float
    full_total: float
    ratio_attn: float
    ratio_total: float
    ratio_total_model: float
    kappa: float | None = None
    calibrated: bool = False

    def as_dict(self) -> dict:
        return {
            "frames": self.frames,
            "density": self.density,
            "components": dict(self.components),
            "sparse_total": self.sparse_total,
            "full_total": self.full_total,
            "ratio_attn": self.ratio_attn,
            "ratio_total": self.ratio_total,
            "ratio_total_model": self.ratio_total_model,
            "kappa": self.kappa,
            "calibrated": self.calibrated,
        }


def cost_report(
    arch: ArchConfig,
    grid: GridSpec,
    variant: MaskVariant,
    kappa: float | None = None,
) -> CostReport:
    """Sparse vs full FLOPs of the whole network for one frame count.

    With ``kappa`` given, the fixed cost is taken as ``kappa * A`` at this
    grid's frame count; the uncalibrated component ratio is reported as well.
    """
    if grid.block_size != arch.block_size or grid.tokens_per_frame != arch.tokens_per_frame:
        raise ValueError("grid tokens/block size do not match the architecture")
    rho = mask_density(grid, variant)
    attn_full = temporal_attention_flops(grid, arch.d_model, 1.0)
    fixed_parts = fixed_layer_components(arch, grid.frames)
    fixed = sum(fixed_parts.values())
    ratio_model = (fixed + rho * attn_full) / (fixed + attn_full)

    if kappa is not None:
        if kappa < 0:
            raise ValueError("kappa must be non-negative")
        fixed_used = kappa * attn_full
        ratio = (kappa + rho) / (kappa + 1.0)
    else:
        fixed_used = fixed
        ratio = ratio_model

    layers = arch.num_layers
    components = {k: layers * v for k, v in fixed_parts.items()}
    components["temporal_attention_sparse"] = layers * rho * attn_full
    components["temporal_attention_full"] = layers * attn_full
    return CostReport(
        frames=grid.frames,
        density=rho,
        components=components,
        sparse_total=layers * (fixed_used + rho * attn_full),
        full_total=layers * (fixed_used + attn_full),
        ratio_attn=rho,
        ratio_total=ratio,
        ratio_total_model=ratio_model,
        kappa=kappa,
        calibrated=kappa is not None,
    )


@dataclass(frozen=True)
class ScalingPoint:
    frames: int
    density: float
    ratio_attn: float
    ratio_total_model: float
    ratio_total_calibrated: float | None
    kappa: float | None


def predict_scaling(
    arch: ArchConfig,
    variant: MaskVariant,
    frames_list: Sequence[int],
    kappa_ref: float | None = None,
    reference_frames: int = 16,
) -> list[ScalingPoint]:
    """Sparse/full ratios across frame counts, optionally extrapolating a calibrated kappa."""
    frames_list = list(frames_list)
    if not frames_list:
        raise ValueError("frames_list is empty")
    if kappa_ref is not None and reference_frames not in frames_list:
        raise ValueError(f"reference frame count {reference_frames} not in {frames_list}")
    points = []
    for T in frames_list:
        grid = GridSpec(T, arch.tokens_per_frame, arch.block_size)
        kappa = None if kappa_ref is None else kappa_ref * reference_frames / T
        model = cost_report(arch, grid, variant)
        calibrated = None if kappa is None else cost_report(arch, grid, variant, kappa).ratio_total
        points.append(ScalingPoint(T, model.density, model.ratio_attn,
                                   model.ratio_total_model, calibrated, kappa))
    return points


def calibrate_at(
    arch: ArchConfig,
    variant: MaskVariant,
    target_ratio_total: float,
    reference_frames: int = 16,
) -> float:
    grid = GridSpec(reference_frames, arch.tokens_per_frame, arch.block_size)
    return calibrate_kappa(target_ratio_total, mask_density(grid, variant))


def scaling_csv(points: Iterable[ScalingPoint]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["T", "density", "ratio_attn", "ratio_total_model", "ratio_total_calibrated"])
    for p in points:
        cal = "" if p.ratio_total_calibrated is None else f"{p.ratio_total_calibrated:.9g}"
        w.writerow([p.frames, f"{p.density:.9g}", f"{p.ratio_attn:.9g}",
                    f"{p.ratio_total_model:.9g}", cal])
    return buf.getvalue()


def scaling_svg(points: Sequence[ScalingPoint], width: int = 480, height: int = 320) -> str:
    """Two-line chart of attention and total-network ratio against frame count."""
    pad = 40
    xs = [p.frames for p in points]
    x_lo, x_hi = min(xs), max(xs)
    span = (x_hi - x_lo) or 1

    def sx(T):
        return pad + (T - x_lo) / span * (width - 2 * pad)

    def sy(r):
        return height - pad - r * (height - 2 * pad)

    def polyline(values, color):
        pts = " ".join(f"{sx(T):.2f},{sy(r):.2f}" for T, r in zip(xs, values))
        return f'<polyline fill="none" stroke="{color}" stroke-width="2" points="{pts}"/>'

    total = [p.ratio_total_calibrated if p.ratio_total_calibrated is not None
             else p.ratio_total_model for p in points]
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
        f'<line x1="{pad}" y1="{height - pad}" x2="{width - pad}" y2="{height - pad}" stroke="black"/>',
        f'<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{height - pad}" stroke="black"/>',
        polyline(total, "#d62728"),
        polyline([p.ratio_attn for p in points], "#1f77b4"),
    ]
    for T in xs:
        parts.append(f'<text x="{sx(T):.2f}" y="{height - pad + 16}" font-size="11" '
                     f'text-anchor="middle">{T}</text>')
    parts.append(f'<text x="{width - pad}" y="{pad - 10}" font-size="11" text-anchor="end">'
                 'total (red), temporal attention (blue)</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"

