"""Multi-head scaled dot-product attention with weight-sharing modes.

Three modes: no_share keeps distinct Q/K/V projections, share_qk ties the
query and key matrices, share_kv ties key and value.  Tying is by Parameter
identity (one object, one checkpoint record), which also enables compute
reuse: when two roles share both weights and source tensor, the projection
is done once and the output tensor reused.

Object regions carry box geometry; encoder self-attention can be gated by a
learned non-negative per-head function of pairwise relative box position and
size, applied multiplicatively to the attention weights before the rows are
renormalized.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .autodiff import (
    Parameter,
    Tensor,
    add,
    affine,
    clip_min,
    log,
    masked_softmax,
    matmul,
    relu,
    reshape,
    scale,
    transpose,
)

NO_SHARE = "no_share"
SHARE_QK = "share_qk"
SHARE_KV = "share_kv"
ATTENTION_MODES = (NO_SHARE, SHARE_QK, SHARE_KV)

GEO_EMBED_DIM = 64      # sinusoidal embedding width for box geometry
GEO_WAVE_LENGTH = 1000.0
GEO_FEATURE_SCALE = 100.0
GATE_FLOOR = 1e-9       # keeps log(gate) finite after ReLU zeros


@dataclass
class AttentionWeights:
    """Projection parameters for one attention block; roles may alias."""

    w_q: Parameter
    b_q: Parameter
    w_k: Parameter
    b_k: Parameter
    w_v: Parameter
    b_v: Parameter
    w_o: Parameter
    b_o: Parameter
    heads: int
    head_dim: int
    mode: str

    def distinct_parameters(self) -> list[Parameter]:
        seen, out = set(), []
        for p in (self.w_q, self.b_q, self.w_k, self.b_k,
                  self.w_v, self.b_v, self.w_o, self.b_o):
            if id(p) not in seen:
                seen.add(id(p))
                out.append(p)
        return out


def init_attention_weights(prefix: str, hidden: int, heads: int, mode: str,
                           rng: np.random.Generator) -> AttentionWeights:
    """Create projections for `mode`, aliasing tied roles to one Parameter."""
    if mode not in ATTENTION_MODES:
        raise ValueError(f"unknown attention mode {mode!r}")
    if hidden % heads != 0:
        raise ValueError(f"hidden size {hidden} not divisible by {heads} heads")
    bound = 1.0 / math.sqrt(hidden)

    def weight(name):
        return Parameter(rng.uniform(-bound, bound, (hidden, hidden)), f"{prefix}.{name}")

    def bias(name):
        return Parameter(np.zeros(hidden), f"{prefix}.{name}")

    if mode == SHARE_QK:
        wqk, bqk = weight("wqk"), bias("bqk")
        w_q, b_q, w_k, b_k = wqk, bqk, wqk, bqk
        w_v, b_v = weight("wv"), bias("bv")
    elif mode == SHARE_KV:
        w_q, b_q = weight("wq"), bias("bq")
        wkv, bkv = weight("wkv"), bias("bkv")
        w_k, b_k, w_v, b_v = wkv, bkv, wkv, bkv
    else:
        w_q, b_q = weight("wq"), bias("bq")
        w_k, b_k = weight("wk"), bias("bk")
        w_v, b_v = weight("wv"), bias("bv")
    return AttentionWeights(w_q, b_q, w_k, b_k, w_v, b_v,
                            weight("wo"), bias("bo"), heads, hidden // heads, mode)


def _split_heads(x: Tensor, heads: int, head_dim: int) -> Tensor:
    b, n, _ = x.shape
    return transpose(reshape(x, (b, n, heads, head_dim)), (0, 2, 1, 3))


def _merge_heads(x: Tensor) -> Tensor:
    b, heads, n, head_dim = x.shape
    return reshape(transpose(x, (0, 2, 1, 3)), (b, n, heads * head_dim))


def multi_head_attention(query_src, key_src, value_src, weights: AttentionWeights,
                         mask=None, gate=None, recompute: bool = False) -> Tensor:
    """softmax(QK^T / sqrt(head_dim) [* gate]) V, heads merged and projected.

    When a sharing mode ties two roles and their sources are the same tensor,
    the shared projection is computed once and reused; `recompute=True`
    forces every role through its own (identical) projection, which must
    produce the same output.  share_qk cannot reuse across cross-attention
    (query and key sources differ) and silently takes the recompute path.

    `mask` is a boolean array broadcastable to (batch, heads, n_q, n_k);
    True marks attendable positions.  `gate` multiplies the unnormalized
    attention weights and rows are renormalized (applied as log-gate added
    to the logits, floored to keep zeros finite).
    """
    w = weights
    # role identity is decided on the caller's objects, before any wrapping
    self_attn = query_src is key_src and key_src is value_src
    kv_same = key_src is value_src

    def batched(t):
        t = t if isinstance(t, Tensor) else Tensor(t)
        return reshape(t, (1,) + t.shape) if t.data.ndim == 2 else t

    squeeze = (query_src.data if isinstance(query_src, Tensor)
               else np.asarray(query_src)).ndim == 2
    query_src = batched(query_src)
    key_src = query_src if self_attn else batched(key_src)
    value_src = key_src if kv_same else batched(value_src)

    q = affine(query_src, w.w_q, w.b_q)
    if not recompute and w.mode == SHARE_QK and self_attn:
        k = q  # same parameters, same source: projection reused
    else:
        k = affine(key_src, w.w_k, w.b_k)
    if not recompute and w.mode == SHARE_KV and kv_same:
        v = k  # key-value reuse works for self- and cross-attention
    else:
        v = affine(value_src, w.w_v, w.b_v)

    qh = _split_heads(q, w.heads, w.head_dim)
    kh = _split_heads(k, w.heads, w.head_dim)
    vh = _split_heads(v, w.heads, w.head_dim)

    scores = scale(matmul(qh, transpose(kh, (0, 1, 3, 2))), 1.0 / math.sqrt(w.head_dim))
    if gate is not None:
        scores = add(scores, log(clip_min(gate, GATE_FLOOR)))
    probs = masked_softmax(scores, mask)
    out = affine(_merge_heads(matmul(probs, vh)), w.w_o, w.b_o)
    return reshape(out, out.shape[1:]) if squeeze else out


# ---------------------------------------------------------------------------
# geometric gating


def validate_boxes(boxes: np.ndarray) -> np.ndarray:
    """Boxes are rows of (cx, cy, w, h); extents must be positive."""
    boxes = np.asarray(boxes, dtype=np.float64)
    if boxes.shape[-1] != 4:
        raise ValueError(f"boxes need 4 columns (cx, cy, w, h), got {boxes.shape}")
    if np.any(boxes[..., 2:] <= 0):
        raise ValueError("non-positive box extent")
    return boxes


def relative_geometry(boxes: np.ndarray) -> np.ndarray:
    """Pairwise features lam(m, n) = (dx/w_m, dy/h_m, log(w_n/w_m), log(h_n/h_m))."""
    boxes = validate_boxes(boxes)
    cx, cy = boxes[..., 0], boxes[..., 1]
    bw, bh = boxes[..., 2], boxes[..., 3]
    dx = (cx[..., None, :] - cx[..., :, None]) / bw[..., :, None]
    dy = (cy[..., None, :] - cy[..., :, None]) / bh[..., :, None]
    lw = np.log(bw[..., None, :] / bw[..., :, None])
    lh = np.log(bh[..., None, :] / bh[..., :, None])
    return np.stack([dx, dy, lw, lh], axis=-1)  # (..., n, n, 4)


def sinusoid_embed(features: np.ndarray, dim: int = GEO_EMBED_DIM,
                   wave_length: float = GEO_WAVE_LENGTH) -> np.ndarray:
    """Embed each geometry feature at geometrically spaced wavelengths."""
    n_feat = features.shape[-1]
    per = dim // (2 * n_feat)
    if per * 2 * n_feat != dim:
        raise ValueError(f"embed dim {dim} not divisible by 2*{n_feat}")
    denom = wave_length ** (np.arange(per) / per)           # (per,)
    angles = GEO_FEATURE_SCALE * features[..., None] / denom  # (..., n_feat, per)
    emb = np.concatenate([np.sin(angles), np.cos(angles)], axis=-1)
    return emb.reshape(*features.shape[:-1], dim)


def geometric_gate(boxes, gate_w: Parameter, gate_b: Parameter) -> Tensor:
    """Per-head non-negative gate over ordered region pairs: ReLU(emb W + b).

    Returns (heads, n, n) for a (n, 4) box array, (batch, heads, n, n) for
    (batch, n, 4).  The embedded geometry is a constant; gradients flow to
    the gate weights only.
    """
    emb = sinusoid_embed(relative_geometry(boxes))
    lead = emb.shape[:-1]  # (..., n, n)
    flat = reshape(Tensor(emb), (-1, emb.shape[-1]))
    gated = relu(affine(flat, gate_w, gate_b))      # (prod(lead), heads)
    heads = gate_w.data.shape[1]
    out = reshape(gated, lead + (heads,))
    axes = tuple(range(len(lead) - 2)) + (len(lead), len(lead) - 2, len(lead) - 1)
    return transpose(out, axes)


def gate_parameter_count(heads: int, dim: int = GEO_EMBED_DIM) -> int:
    return heads * (dim + 1)
