"""Block-level attention masks for spatiotemporal token grids.

Tokens are laid out frame-major: token ``a = i * P + p`` belongs to frame ``i``
and, with blocks of ``S_B`` contiguous tokens, to block ``q = a // S_B =
i * N_B + u``. A :class:`BlockMask` stores one admissibility bit per
(query block, key block) pair.

The composite mask admits a pair when the key block lies in frame 0 (the
anchor) or when the intra-frame block indices agree modulo a stride that
grows with the frame distance ``d = |i - j|``::

    s(d) = S[min(d, len(S) - 1)]
    M[i*N_B + u, j*N_B + v] = (j == 0) or (u % s(d) == v % s(d))
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import BudgetExceededError

__all__ = [
    "GridSpec",
    "StrideSchedule",
    "MaskVariant",
    "BlockMask",
    "DEFAULT_SCHEDULE",
    "AGGRESSIVE_SCHEDULE",
    "CONSERVATIVE_SCHEDULE",
    "DEFAULT_TOKEN_BUDGET",
    "stride_of",
    "build_block_mask",
    "density",
    "frame_pair_density",
    "analytic_density",
    "expand_to_token_mask",
    "render_mask",
    "read_pgm",
    "density_report",
    "parse_variant",
    "parse_schedule",
]

DEFAULT_SCHEDULE = (1, 1, 2, 4, 8, 16)
AGGRESSIVE_SCHEDULE = (1, 2, 4, 8, 16, 32)
CONSERVATIVE_SCHEDULE = (1, 1, 2, 2, 4, 4)

# cap on total_tokens**2 entries for token-level expansion
DEFAULT_TOKEN_BUDGET = 2**24


@dataclass(frozen=True)
class GridSpec:
    """Frame/token/block layout of a temporal attention sequence."""

    frames: int
    tokens_per_frame: int
    block_size: int

    def __post_init__(self):
        if self.frames < 1:
            raise ValueError(f"frames must be >= 1, got {self.frames}")
        if self.block_size < 1:
            raise ValueError(f"block_size must be >= 1, got {self.block_size}")
        if self.tokens_per_frame < 0:
            raise ValueError("tokens_per_frame must be non-negative")
        if self.tokens_per_frame % self.block_size:
            raise ValueError(
                f"tokens_per_frame={self.tokens_per_frame} is not a multiple "
                f"of block_size={self.block_size}"
            )
        if self.tokens_per_frame // self.block_size == 0:
            raise ValueError("grid has zero blocks per frame")

    @property
    def blocks_per_frame(self) -> int:
        return self.tokens_per_frame // self.block_size

    @property
    def total_blocks(self) -> int:
        return self.frames * self.blocks_per_frame

    @property
    def total_tokens(self) -> int:
        return self.frames * self.tokens_per_frame


@dataclass(frozen=True)
class StrideSchedule:
    """Distance-to-stride lookup table; the last entry covers all larger distances."""

    strides: tuple[int, ...] = DEFAULT_SCHEDULE

    def __post_init__(self):
        strides = tuple(int(s) for s in self.strides)
        if not strides:
            raise ValueError("stride schedule must be non-empty")
        if any(s < 1 for s in strides):
            raise ValueError(f"strides must be >= 1, got {strides}")
        object.__setattr__(self, "strides", strides)

    def __len__(self):
        return len(self.strides)

    def stride(self, d: int) -> int:
        return stride_of(self, d)

    def as_array(self, max_distance: int) -> np.ndarray:
        """Strides for distances ``0..max_distance`` inclusive."""
        d = np.arange(max_distance + 1)
        return np.asarray(self.strides)[np.minimum(d, len(self.strides) - 1)]


def stride_of(schedule: StrideSchedule | Sequence[int], d: int) -> int:
    """Return the stride for frame distance ``d``, clamping to the last entry."""
    strides = schedule.strides if isinstance(schedule, StrideSchedule) else tuple(schedule)
    if d < 0:
        raise ValueError(f"frame distance must be non-negative, got {d}")
    return strides[min(d, len(strides) - 1)]


@dataclass(frozen=True)
class MaskVariant:
    """One of the mask families compared in the attention-mask ablation.

    ``kind`` is ``"stride"`` (residue rule with a schedule), ``"temporal"``
    (same spatial block across all frames) or ``"full"``. Use the
    classmethod constructors rather than building instances by hand.
    """

    name: str
    kind: str = "stride"
    schedule: StrideSchedule = field(default_factory=StrideSchedule)
    anchor: bool = True

    @classmethod
    def ours(cls, schedule: Sequence[int] = DEFAULT_SCHEDULE) -> "MaskVariant":
        return cls("ours", "stride", StrideSchedule(tuple(schedule)), True)

    @classmethod
    def no_anchor(cls, schedule: Sequence[int] = DEFAULT_SCHEDULE) -> "MaskVariant":
        return cls("no-anchor", "stride", StrideSchedule(tuple(schedule)), False)

    @classmethod
    def fixed_stride(cls, stride: int = 4) -> "MaskVariant":
        # distance 0 stays dense, every d > 0 uses the constant stride
        return cls(f"fixed:{stride}", "stride", StrideSchedule((1, stride)), True)

    @classmethod
    def aggressive(cls) -> "MaskVariant":
        return cls("aggressive", "stride", StrideSchedule(AGGRESSIVE_SCHEDULE), True)

    @classmethod
    def conservative(cls) -> "MaskVariant":
        return cls("conservative", "stride", StrideSchedule(CONSERVATIVE_SCHEDULE), True)

    @classmethod
    def temporal_only(cls) -> "MaskVariant":
        return cls("temporal", "temporal", StrideSchedule((1,)), False)

    @classmethod
    def full(cls) -> "MaskVariant":
        return cls("full", "full", StrideSchedule((1,)), False)

    @classmethod
    def all_variants(cls, schedule: Sequence[int] = DEFAULT_SCHEDULE) -> list["MaskVariant"]:
        return [
            cls.ours(schedule),
            cls.no_anchor(schedule),
            cls.fixed_stride(),
            cls.aggressive(),
            cls.conservative(),
            cls.temporal_only(),
            cls.full(),
        ]


def parse_schedule(text: str | Sequence[int]) -> tuple[int, ...]:
    if isinstance(text, str):
        return tuple(int(tok) for tok in text.replace(" ", "").split(",") if tok)
    return tuple(int(s) for s in text)


def parse_variant(name: str, schedule: Sequence[int] | str = DEFAULT_SCHEDULE) -> MaskVariant:
    """Parse a CLI variant name such as ``ours``, ``fixed:4`` or ``temporal``."""
    schedule = parse_schedule(schedule)
    name = name.strip().lower()
    if name == "ours":
        return MaskVariant.ours(schedule)
    if name == "no-anchor":
        return MaskVariant.no_anchor(schedule)
    if name == "fixed" or name.startswith("fixed:"):
        _, _, s = name.partition(":")
        return MaskVariant.fixed_stride(int(s) if s else 4)
    if name == "aggressive":
        return MaskVariant.aggressive()
    if name == "conservative":
        return MaskVariant.conservative()
    if name == "temporal":
        return MaskVariant.temporal_only()
    if name == "full":
        return MaskVariant.full()
    raise ValueError(f"unknown mask variant {name!r}")


@dataclass(frozen=True, eq=False)
class BlockMask:
    """Binary (total_blocks x total_blocks) admissibility matrix stored as int32.

    Row ``q`` is the query block, column ``k`` the key block. ``variant`` is
    ``None`` for masks assembled from explicit bits.
    """

    grid: GridSpec
    bits: np.ndarray
    variant: MaskVariant | None = None

    def __post_init__(self):
        bits = np.array(self.bits, dtype=np.int32)
        n = self.grid.total_blocks
        if bits.shape != (n, n):
            raise ValueError(f"bits must have shape {(n, n)}, got {bits.shape}")
        if not np.isin(bits, (0, 1)).all():
            raise ValueError("mask bits must be 0 or 1")
        bits.setflags(write=False)
        object.__setattr__(self, "bits", bits)

    @property
    def ones_count(self) -> int:
        return int(self.bits.sum(dtype=np.int64))

    def density(self) -> float:
        return density(self)

    def frame_pair_density(self, i: int, j: int) -> float:
        return frame_pair_density(self, i, j)

    def frame_pair_densities(self) -> np.ndarray:
        """(T, T) array of per-frame-pair densities."""
        g = self.grid
        nb = g.blocks_per_frame
        blocks = self.bits.reshape(g.frames, nb, g.frames, nb)
        return blocks.sum(axis=(1, 3), dtype=np.int64) / nb**2

    def key_blocks(self, q: int) -> np.ndarray:
        """Admissible key block indices for query block ``q``, ascending."""
        return np.flatnonzero(self.bits[q])


def build_block_mask(grid: GridSpec, variant: MaskVariant | None = None) -> BlockMask:
    """Construct the block mask for ``grid`` under ``variant`` (default: ours)."""
    if variant is None:
        variant = MaskVariant.ours()
    T, nb = grid.frames, grid.blocks_per_frame
    if nb == 0:
        raise ValueError("grid has zero blocks per frame")

    u = np.arange(nb)
    if variant.kind == "full":
        bits = np.ones((T, nb, T, nb), dtype=np.int32)
    elif variant.kind == "temporal":
        same = (u[:, None] == u[None, :]).astype(np.int32)
        bits = np.broadcast_to(same[None, :, None, :], (T, nb, T, nb)).copy()
    elif variant.kind == "stride":
        frames = np.arange(T)
        dist = np.abs(frames[:, None] - frames[None, :])
        stride = variant.schedule.as_array(T - 1)[dist]  # (T, T)
        s = stride[:, None, :, None]
        bits = (u[None, :, None, None] % s == u[None, None, None, :] % s).astype(np.int32)
        if variant.anchor:
            bits[:, :, 0, :] = 1
    else:
        raise ValueError(f"unknown mask kind {variant.kind!r}")
    return BlockMask(grid, bits.reshape(T * nb, T * nb), variant)


def density(mask: BlockMask) -> float:
    """Fraction of admissible block pairs."""
    return mask.ones_count / mask.grid.total_blocks**2


def frame_pair_density(mask: BlockMask, i: int, j: int) -> float:
    """Fraction of admissible block pairs between query frame ``i`` and key frame ``j``."""
    T = mask.grid.frames
    if not (0 <= i < T and 0 <= j < T):
        raise IndexError(f"frame pair ({i}, {j}) out of range for {T} frames")
    nb = mask.grid.blocks_per_frame
    sub = mask.bits[i * nb:(i + 1) * nb, j * nb:(j + 1) * nb]
    return int(sub.sum(dtype=np.int64)) / nb**2


def _residue_pairs(nb: int, s: int) -> int:
    # number of (u, v) in [0, nb)^2 with u % s == v % s
    return sum(((nb - r + s - 1) // s) ** 2 for r in range(min(s, nb)))


def analytic_density(grid: GridSpec, variant: MaskVariant | None = None) -> float:
    """Closed-form density without materializing the mask.

    Counts residue classes per frame pair, so it scales to grids whose block
    matrix would not fit in memory.
    """
    if variant is None:
        variant = MaskVariant.ours()
    T, nb = grid.frames, grid.blocks_per_frame
    if variant.kind == "full":
        return 1.0
    if variant.kind == "temporal":
        return T * T * nb / (T * nb) ** 2
    ones = 0
    for i in range(T):
        for j in range(T):
            if j == 0 and variant.anchor:
                ones += nb * nb
            else:
                ones += _residue_pairs(nb, variant.schedule.stride(abs(i - j)))
    return ones / (T * nb) ** 2


def expand_to_token_mask(mask: BlockMask, max_entries: int = DEFAULT_TOKEN_BUDGET) -> np.ndarray:
    """Expand the block mask to a boolean (total_tokens x total_tokens) matrix."""
    n = mask.grid.total_tokens
    if n * n > max_entries:
        raise BudgetExceededError(
            f"token mask needs {n * n} entries, budget is {max_entries}"
        )
    sb = mask.grid.block_size
    return np.kron(mask.bits.astype(bool), np.ones((sb, sb), dtype=bool))


def render_mask(mask: BlockMask, path: str | Path) -> Path:
    """Write the mask as a binary PGM (P5), white = admissible, one pixel per block pair."""
    path = Path(path)
    n = mask.grid.total_blocks
    pixels = (mask.bits * 255).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{n} {n}\n255\n".encode("ascii"))
        fh.write(pixels.tobytes())
    return path


def read_pgm(path: str | Path) -> np.ndarray:
    """Read a binary P5 PGM with maxval 255 into a uint8 array."""
    data = Path(path).read_bytes()
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            pos = data.index(b"\n", pos) + 1
            continue
        start = pos
        while not data[pos:pos + 1].isspace():
            pos += 1
        tokens.append(data[start:pos])
    if tokens[0] != b"P5" or int(tokens[3]) != 255:
        raise ValueError("only P5 PGM with maxval 255 is supported")
    width, height = int(tokens[1]), int(tokens[2])
    pixels = np.frombuffer(data[pos + 1:pos + 1 + width * height], dtype=np.uint8)
    return pixels.reshape(height, width)


def density_report(mask: BlockMask) -> dict:
    """JSON-ready density summary of a mask."""
    g = mask.grid
    v = mask.variant
    return {
        "T": g.frames,
        "P": g.tokens_per_frame,
        "S_B": g.block_size,
        "variant": v.name if v else "custom",
        "schedule": list(v.schedule.strides) if v else None,
        "density": mask.density(),
        "per_frame_pair": mask.frame_pair_densities().tolist(),
    }
