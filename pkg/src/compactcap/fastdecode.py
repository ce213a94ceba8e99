"""Incremental batched greedy decoding with per-layer key/value caches.

The graph-building decode path recomputes the whole prefix every step, which
is fine for single captions but dominates evaluation time.  This module
walks the decoder stack one token at a time in plain numpy, appending to
cached K/V projections; cross-attention keys/values are projected once per
sequence.  It mirrors the teacher-forced forward exactly (same layer-norm
epsilon, same post-norm order), so the produced streams match the
recompute-everything path.
"""

from __future__ import annotations

import math

import numpy as np

from .attention import SHARE_KV, SHARE_QK
from .vocab import TokenStream

_LN_EPS = 1e-5


def _ln(x, gain, shift):
    mean = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    return (x - mean) / np.sqrt(var + _LN_EPS) * gain.data + shift.data


def _softmax(z):
    z = z - z.max(axis=-1, keepdims=True)
    ez = np.exp(z)
    return ez / ez.sum(axis=-1, keepdims=True)


def _heads(x, heads):  # (B, r) -> (B, heads, hd)
    b, r = x.shape
    return x.reshape(b, heads, r // heads)


class _CrossCache:
    """Per-stack-position projected memory keys/values plus the pad mask."""

    def __init__(self, attn_w, memory, memory_mask):
        heads = attn_w.heads
        b, s, _ = memory.shape
        k = memory @ attn_w.w_k.data + attn_w.b_k.data
        if attn_w.mode == SHARE_KV:
            v = k
        else:
            v = memory @ attn_w.w_v.data + attn_w.b_v.data
        self.k = k.reshape(b, s, heads, attn_w.head_dim)
        self.v = v.reshape(b, s, heads, attn_w.head_dim)
        self.bias = np.where(memory_mask, 0.0, -np.inf)[:, None, :] \
            if memory_mask is not None else None


class _SelfCache:
    def __init__(self):
        self.k = None  # (B, t, heads, hd)
        self.v = None

    def append(self, k, v):
        k, v = k[:, None], v[:, None]
        self.k = k if self.k is None else np.concatenate([self.k, k], axis=1)
        self.v = v if self.v is None else np.concatenate([self.v, v], axis=1)


def _attend(q, k, v, head_dim, bias=None):
    """q (B,H,hd) against cached k/v (B,t,H,hd) -> (B, H*hd)."""
    scores = np.einsum("bhd,bthd->bht", q, k) / math.sqrt(head_dim)
    if bias is not None:
        scores = scores + bias
    probs = _softmax(scores)
    ctx = np.einsum("bht,bthd->bhd", probs, v)
    return ctx.reshape(ctx.shape[0], -1)


def greedy_decode_batch(model, memory, memory_mask, codec,
                        max_len: int) -> list[TokenStream]:
    """Lockstep greedy decode of a whole batch; one stack walk per new token."""
    mem = np.asarray(memory)
    b = mem.shape[0]
    cfg = model.cfg
    assignment = cfg.decoder_layout.assignment
    groups = [model.decoder_groups[g] for g in assignment]
    cross = [_CrossCache(g.cross_attn, mem, memory_mask) for g in groups]
    caches = [_SelfCache() for _ in assignment]
    sqrt_r = math.sqrt(cfg.hidden_size)

    ids = np.full((b, 1), codec.bos_id, dtype=np.int64)
    done = np.zeros(b, dtype=bool)
    lengths = np.full(b, 1, dtype=np.int64)
    tokens = ids[:, 0]
    for t in range(max_len):
        x = model.input_embedding.data[tokens] * sqrt_r + model.positional[t]
        for pos, g in enumerate(groups):
            a = g.self_attn
            q = _heads(x @ a.w_q.data + a.b_q.data, a.heads)
            k = q if a.mode == SHARE_QK else _heads(x @ a.w_k.data + a.b_k.data, a.heads)
            v = k if a.mode == SHARE_KV else _heads(x @ a.w_v.data + a.b_v.data, a.heads)
            caches[pos].append(k, v)
            ctx = _attend(q, caches[pos].k, caches[pos].v, a.head_dim)
            x = _ln(x + ctx @ a.w_o.data + a.b_o.data, g.norm1.gain, g.norm1.shift)

            c = g.cross_attn
            q2 = _heads(x @ c.w_q.data + c.b_q.data, c.heads)
            ctx2 = _attend(q2, cross[pos].k, cross[pos].v, c.head_dim,
                           cross[pos].bias)
            x = _ln(x + ctx2 @ c.w_o.data + c.b_o.data, g.norm2.gain, g.norm2.shift)

            h = np.maximum(x @ g.mlp.w1.data + g.mlp.b1.data, 0.0)
            x = _ln(x + h @ g.mlp.w2.data + g.mlp.b2.data,
                    g.norm3.gain, g.norm3.shift)
        logits = x @ model.output_w.data + model.output_b.data
        tokens = logits.argmax(axis=1)
        tokens[done] = codec.eos_id
        ids = np.concatenate([ids, tokens[:, None]], axis=1)
        lengths[~done] += 1
        done |= tokens == codec.eos_id
        if done.all():
            break
    return [TokenStream(tuple(int(v) for v in row[:n]), codec.mode)
            for row, n in zip(ids, lengths)]
