"""Reference and block-sparse multi-head attention, plus a small 4D transformer block.

All arithmetic is float64 numpy. Token tensors have shape ``(T, P, d_model)``
and are flattened frame-major to ``(T * P, d_model)`` for the temporal path.

Reduction order: per query block, key blocks are visited in ascending index
order and concatenated before a single matmul, so repeated calls with the
same inputs are bit-identical.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import BudgetExceededError
from .mask import BlockMask, GridSpec, MaskVariant, build_block_mask, expand_to_token_mask
from .rope import RopeTable, apply_temporal_rope, build_rope_table

DEFAULT_MAX_TOKENS = 4096


@dataclass
class FlopCounter:
    """Accumulates matmul FLOPs (1 multiply-add = 2 FLOPs)."""

    scores: int = 0
    values: int = 0

    @property
    def total(self) -> int:
        return self.scores + self.values


@dataclass(frozen=True, eq=False)
class AttentionParams:
    """Bias-free projections plus per-head RMSNorm gains for queries and keys."""

    heads: int
    w_q: np.ndarray
    w_k: np.ndarray
    w_v: np.ndarray
    w_o: np.ndarray
    q_gain: np.ndarray
    k_gain: np.ndarray

    def __post_init__(self):
        d = self.w_o.shape[1]
        if d % self.heads:
            raise ValueError(f"d_model={d} not divisible by heads={self.heads}")
        for name in ("w_q", "w_k", "w_v"):
            if getattr(self, name).shape[1] != d:
                raise ValueError(f"{name} output dim must be {d}")
        if self.w_o.shape[0] != d:
            raise ValueError("w_o must be square d_model x d_model")

    @property
    def d_model(self) -> int:
        return self.w_o.shape[1]

    @property
    def head_dim(self) -> int:
        return self.d_model // self.heads

    @property
    def scale(self) -> float:
        return self.head_dim ** -0.5


def init_attention_params(
    rng: np.random.Generator,
    d_model: int,
    heads: int,
    kv_dim: int | None = None,
    zero_output: bool = False,
) -> AttentionParams:
    """Random Gaussian projections with 1/sqrt(fan_in) scaling."""
    kv_dim = d_model if kv_dim is None else kv_dim
    head_dim = d_model // heads

    def mat(fan_in):
        return rng.standard_normal((fan_in, d_model)) / np.sqrt(fan_in)

    w_o = np.zeros((d_model, d_model)) if zero_output else mat(d_model)
    return AttentionParams(
        heads=heads,
        w_q=mat(d_model),
        w_k=mat(kv_dim),
        w_v=mat(kv_dim),
        w_o=w_o,
        q_gain=1.0 + 0.1 * rng.standard_normal(head_dim),
        k_gain=1.0 + 0.1 * rng.standard_normal(head_dim),
    )


def rms_norm(x: np.ndarray, gain: np.ndarray, eps: float = 1e-6) -> np.ndarray:
    return x / np.sqrt(np.mean(x * x, axis=-1, keepdims=True) + eps) * gain


def layer_norm(x: np.ndarray, gamma: np.ndarray, beta: np.ndarray, eps: float = 1e-6) -> np.ndarray:
    mu = x.mean(axis=-1, keepdims=True)
    var = ((x - mu) ** 2).mean(axis=-1, keepdims=True)
    return (x - mu) / np.sqrt(var + eps) * gamma + beta


def _split_heads(x: np.ndarray, heads: int) -> np.ndarray:
    n, d = x.shape
    return x.reshape(n, heads, d // heads).transpose(1, 0, 2)  # (H, N, hd)


def _merge_heads(x: np.ndarray) -> np.ndarray:
    h, n, hd = x.shape
    return x.transpose(1, 0, 2).reshape(n, h * hd)


def project_qkv(
    x: np.ndarray,
    params: AttentionParams,
    context: np.ndarray | None = None,
    rope: RopeTable | None = None,
    frame_index: np.ndarray | None = None,
    context_frame_index: np.ndarray | None = None,
):
    """Per-head queries, keys and values, ``(H, N, head_dim)`` each.

    Q and K are RMS-normalized per head before the temporal rotation.
    """
    kv_src = x if context is None else context
    q = _split_heads(x @ params.w_q, params.heads)
    k = _split_heads(kv_src @ params.w_k, params.heads)
    v = _split_heads(kv_src @ params.w_v, params.heads)
    q = rms_norm(q, params.q_gain)
    k = rms_norm(k, params.k_gain)
    if rope is not None:
        if frame_index is None:
            raise ValueError("rope requires per-token frame indices")
        kf = frame_index if context_frame_index is None else context_frame_index
        q = apply_temporal_rope(q, frame_index[None, :], rope)
        k = apply_temporal_rope(k, kf[None, :], rope)
    return q, k, v


def _flatten(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 3:
        raise ValueError(f"token tensor must be (T, P, d_model), got shape {x.shape}")
    T, P, d = x.shape
    frame_index = np.repeat(np.arange(T), P)
    return x.reshape(T * P, d), frame_index


def _check_d_model(x: np.ndarray, params: AttentionParams):
    if x.shape[-1] != params.d_model:
        raise ValueError(f"d_model mismatch: input {x.shape[-1]} vs params {params.d_model}")


def masked_softmax(scores: np.ndarray, mask: np.ndarray | None) -> np.ndarray:
    """Row softmax over admissible entries; denied entries get exactly 0 weight."""
    if mask is not None:
        if not mask.any(axis=-1).all():
            raise ValueError("attention mask has a fully masked query row")
        scores = np.where(mask, scores, -np.inf)
    m = scores.max(axis=-1, keepdims=True)
    e = np.exp(scores - m)
    return e / e.sum(axis=-1, keepdims=True)


def _dense_attention(x, params, token_mask, rope, max_tokens):
    flat, frame_index = _flatten(x)
    _check_d_model(flat, params)
    n = flat.shape[0]
    if n > max_tokens:
        raise BudgetExceededError(f"{n} tokens exceeds dense reference cap {max_tokens}")
    if token_mask is not None:
        token_mask = np.asarray(token_mask, dtype=bool)
        if token_mask.shape != (n, n):
            raise ValueError(f"token mask must be {(n, n)}, got {token_mask.shape}")
    q, k, v = project_qkv(flat, params, rope=rope, frame_index=frame_index)
    scores = params.scale * (q @ k.transpose(0, 2, 1))
    return masked_softmax(scores, token_mask), v


def attention_weights(
    x: np.ndarray,
    params: AttentionParams,
    token_mask: np.ndarray | None = None,
    rope: RopeTable | None = None,
    max_tokens: int = DEFAULT_MAX_TOKENS,
) -> np.ndarray:
    """Dense per-head attention weights ``(H, N, N)``."""
    return _dense_attention(x, params, token_mask, rope, max_tokens)[0]


def dense_masked_mha(
    x: np.ndarray,
    params: AttentionParams,
    token_mask: np.ndarray | None = None,
    rope: RopeTable | None = None,
    max_tokens: int = DEFAULT_MAX_TOKENS,
) -> np.ndarray:
    """Reference attention over the full token sequence with a boolean token mask."""
    w, v = _dense_attention(x, params, token_mask, rope, max_tokens)
    out = _merge_heads(w @ v) @ params.w_o
    return out.reshape(np.shape(x))


def block_sparse_mha(
    x: np.ndarray,
    params: AttentionParams,
    mask: BlockMask,
    rope: RopeTable | None = None,
    counter: FlopCounter | None = None,
) -> np.ndarray:
    """Attention evaluated only on admissible block pairs.

    For each query block the admissible key blocks are gathered and a
    max-subtracted softmax is taken over the gathered keys. Denied blocks are
    never touched.
    """
    flat, frame_index = _flatten(x)
    _check_d_model(flat, params)
    T, P, _ = np.shape(x)
    g = mask.grid
    if (g.frames, g.tokens_per_frame) != (T, P):
        raise ValueError(
            f"mask grid (T={g.frames}, P={g.tokens_per_frame}) does not match input (T={T}, P={P})"
        )
    sb = g.block_size
    q, k, v = project_qkv(flat, params, rope=rope, frame_index=frame_index)
    heads, _, hd = q.shape
    out = np.empty_like(q)
    offsets = np.arange(sb)
    for qb in range(g.total_blocks):
        kblocks = mask.key_blocks(qb)
        if kblocks.size == 0:
            raise ValueError(f"query block {qb} has no admissible key blocks")
        key_idx = (kblocks[:, None] * sb + offsets[None, :]).ravel()
        rows = slice(qb * sb, (qb + 1) * sb)
        kq = k[:, key_idx]
        scores = params.scale * (q[:, rows] @ kq.transpose(0, 2, 1))
        scores -= scores.max(axis=-1, keepdims=True)
        e = np.exp(scores)
        w = e / e.sum(axis=-1, keepdims=True)
        out[:, rows] = w @ v[:, key_idx]
        if counter is not None:
            n_keys = key_idx.size
            counter.scores += 2 * heads * sb * n_keys * hd
            counter.values += 2 * heads * sb * n_keys * hd
    res = _merge_heads(out) @ params.w_o
    return res.reshape(T, P, -1)


def cross_attention(
    x: np.ndarray,
    context: np.ndarray,
    params: AttentionParams,
) -> np.ndarray:
    """Unmasked attention from ``x`` (N, d) to ``context`` (L, d_ctx)."""
    q, k, v = project_qkv(x, params, context=context)
    w = masked_softmax(params.scale * (q @ k.transpose(0, 2, 1)), None)
    return _merge_heads(w @ v) @ params.w_o


def self_attention(x: np.ndarray, params: AttentionParams) -> np.ndarray:
    return cross_attention(x, x, params)


@dataclass(frozen=True, eq=False)
class MiniBlockParams:
    spatial: AttentionParams
    cross: AttentionParams
    temporal: AttentionParams
    ffn_in: np.ndarray  # (d, expansion * d)
    ffn_out: np.ndarray  # (expansion * d, d)
    norms: dict = field(default_factory=dict)  # name -> (gamma, beta)

    @property
    def d_model(self) -> int:
        return self.spatial.d_model


def init_mini_block_params(
    rng: np.random.Generator,
    d_model: int,
    heads: int,
    context_dim: int | None = None,
    ffn_expansion: int = 4,
    zero_init_temporal: bool = True,
) -> MiniBlockParams:
    """Random block parameters; the temporal output projection starts at zero by default."""
    hidden = ffn_expansion * d_model
    norms = {
        name: (1.0 + 0.1 * rng.standard_normal(d_model), 0.1 * rng.standard_normal(d_model))
        for name in ("spatial", "cross", "temporal", "ffn")
    }
    return MiniBlockParams(
        spatial=init_attention_params(rng, d_model, heads),
        cross=init_attention_params(rng, d_model, heads, kv_dim=context_dim),
        temporal=init_attention_params(rng, d_model, heads, zero_output=zero_init_temporal),
        ffn_in=rng.standard_normal((d_model, hidden)) / np.sqrt(d_model),
        ffn_out=rng.standard_normal((hidden, d_model)) / np.sqrt(hidden),
        norms=norms,
    )


def gelu(x: np.ndarray) -> np.ndarray:
    return 0.5 * x * (1.0 + np.tanh(np.sqrt(2.0 / np.pi) * (x + 0.044715 * x**3)))


def mini_4d_block_forward(
    x: np.ndarray,
    context: np.ndarray,
    params: MiniBlockParams,
    mask: BlockMask,
    rope: RopeTable | None = None,
    include_temporal: bool = True,
) -> np.ndarray:
    """Pre-norm residual block: spatial -> cross -> temporal (block-sparse) -> FFN.

    Spatial and cross attention run on each frame independently; ``context``
    is ``(T, L_ctx, d_ctx)``. ``include_temporal=False`` drops the temporal
    sub-module entirely.
    """
    x = np.asarray(x, dtype=np.float64)
    context = np.asarray(context, dtype=np.float64)
    if x.ndim != 3 or x.shape[-1] != params.d_model:
        raise ValueError(f"x must be (T, P, {params.d_model}), got {x.shape}")
    T = x.shape[0]
    if context.ndim != 3 or context.shape[0] != T:
        raise ValueError(f"context must be (T={T}, L_ctx, d_ctx), got {context.shape}")
    if context.shape[-1] != params.cross.w_k.shape[0]:
        raise ValueError("context channel dim does not match cross-attention params")
    n = params.norms

    h = x.copy()
    for t in range(T):
        h[t] = h[t] + self_attention(layer_norm(h[t], *n["spatial"]), params.spatial)
    for t in range(T):
        h[t] = h[t] + cross_attention(layer_norm(h[t], *n["cross"]), context[t], params.cross)
    if include_temporal:
        h = h + block_sparse_mha(layer_norm(h, *n["temporal"]), params.temporal, mask, rope)
    h = h + gelu(layer_norm(h, *n["ffn"]) @ params.ffn_in) @ params.ffn_out
    return h


def relative_error(a: np.ndarray, ref: np.ndarray) -> float:
    """Max-norm relative error ``max|a - ref| / max|ref|``."""
    denom = np.max(np.abs(ref))
    diff = np.max(np.abs(a - ref))
    return float(diff / denom) if denom > 0 else float(diff)


def attn_check(
    frames: int,
    tokens: int,
    block: int,
    variant: MaskVariant,
    seeds: int = 10,
    tolerance: float = 1e-5,
    heads: int = 2,
    head_dim: int = 8,
    use_rope: bool = True,
    max_tokens: int = DEFAULT_MAX_TOKENS,
) -> dict:
    """Compare block-sparse against dense-masked attention over seeded inputs."""
    grid = GridSpec(frames, tokens, block)
    if grid.total_tokens > max_tokens:
        raise BudgetExceededError(
            f"{grid.total_tokens} tokens exceeds dense reference cap {max_tokens}"
        )
    mask = build_block_mask(grid, variant)
    token_mask = expand_to_token_mask(mask)
    rope = None
    if use_rope:
        rope = build_rope_table(head_dim, max_frames=frames)
    d_model = heads * head_dim
    errors = []
    for seed in range(seeds):
        rng = np.random.default_rng(seed)
        params = init_attention_params(rng, d_model, heads)
        x = rng.standard_normal((frames, tokens, d_model))
        ref = dense_masked_mha(x, params, token_mask, rope, max_tokens)
        got = block_sparse_mha(x, params, mask, rope)
        errors.append(relative_error(got, ref))
    return {
        "max_rel_err": max(errors) if errors else 0.0,
        "seeds_passed": sum(e < tolerance for e in errors),
        "seeds": seeds,
        "tolerance": tolerance,
    }
