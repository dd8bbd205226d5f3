"""Rotary position embedding along the frame axis.

Only the frame index drives the rotation; tokens of the same frame share one
angle. Frequencies are computed for ``head_dim // 2`` pairs and then
duplicated element-wise, so the cos/sin rows line up with interleaved
dimension pairs ``(2m, 2m+1)``. For ``head_dim = 8`` and frame ``t``::

    omega   = [w0, w1, w2, w3],  w_m = base ** (-2m / 8)
    cos row = [c0, c0, c1, c1, c2, c2, c3, c3],  c_m = cos(t * w_m)
    sin row = [s0, s0, s1, s1, s2, s2, s3, s3]
    rotate_half(x) = [-x1, x0, -x3, x2, -x5, x4, -x7, x6]
    out = x * cos_row + rotate_half(x) * sin_row

Trigonometric values are evaluated in float32 and then stored as float64.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path

import numpy as np

DEFAULT_BASE = 10000.0


@dataclass(frozen=True, eq=False)
class RopeTable:
    head_dim: int
    base: float
    max_frames: int
    angles: np.ndarray  # (max_frames, head_dim // 2)
    cos: np.ndarray  # (max_frames, head_dim), duplicated layout
    sin: np.ndarray

    @property
    def frequencies(self) -> np.ndarray:
        return _frequencies(self.head_dim, self.base).astype(np.float64)


def _frequencies(head_dim: int, base: float) -> np.ndarray:
    m = np.arange(head_dim // 2, dtype=np.float32)
    return np.float32(base) ** (np.float32(-2.0) * m / np.float32(head_dim))


def build_rope_table(head_dim: int, base: float = DEFAULT_BASE, max_frames: int = 64) -> RopeTable:
    if head_dim <= 0 or head_dim % 2:
        raise ValueError(f"head_dim must be a positive even number, got {head_dim}")
    if base <= 0:
        raise ValueError(f"base must be positive, got {base}")
    if max_frames < 1:
        raise ValueError(f"max_frames must be >= 1, got {max_frames}")
    freqs = _frequencies(head_dim, base)
    t = np.arange(max_frames, dtype=np.float32)
    angles = np.outer(t, freqs).astype(np.float32)
    cos = np.repeat(np.cos(angles), 2, axis=-1).astype(np.float64)
    sin = np.repeat(np.sin(angles), 2, axis=-1).astype(np.float64)
    for arr in (angles, cos, sin):
        arr.setflags(write=False)
    return RopeTable(head_dim, float(base), max_frames, angles, cos, sin)


def rotate_half(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    out[..., 0::2] = -x[..., 1::2]
    out[..., 1::2] = x[..., 0::2]
    return out


def apply_temporal_rope(x: np.ndarray, frame_index, table: RopeTable) -> np.ndarray:
    """Rotate head vectors ``x[..., head_dim]`` by their frame's angles.

    ``frame_index`` must broadcast against ``x.shape[:-1]``.
    """
    x = np.asarray(x)
    if x.shape[-1] != table.head_dim:
        raise ValueError(f"last axis {x.shape[-1]} != head_dim {table.head_dim}")
    frame_index = np.asarray(frame_index)
    if frame_index.size and (frame_index.min() < 0 or frame_index.max() >= table.max_frames):
        raise ValueError(f"frame index out of range [0, {table.max_frames})")
    cos = table.cos[frame_index]
    sin = table.sin[frame_index]
    return x * cos + rotate_half(x) * sin


def dump_table_csv(table: RopeTable, path: str | Path | None = None) -> str:
    """Write one row per (frame, pair) with angle, cos and sin; return the CSV text."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["frame", "pair", "frequency", "angle", "cos", "sin"])
    freqs = table.frequencies
    for t in range(table.max_frames):
        for m in range(table.head_dim // 2):
            writer.writerow([
                t, m,
                f"{freqs[m]:.9g}",
                f"{table.angles[t, m]:.9g}",
                f"{table.cos[t, 2 * m]:.9g}",
                f"{table.sin[t, 2 * m]:.9g}",
            ])
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text)
    return text
