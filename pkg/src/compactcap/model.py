"""Encoder-decoder captioner over region features.

Region feature vectors are down-projected to the model width and run through
a self-attention encoder (no positional signal, optionally geometry-gated).
The decoder embeds token ids (radix digits or word ids), adds fixed
sinusoidal positions, and applies masked self-attention plus cross-attention
against the encoded regions.  Stacks draw their weights from shared
parameter groups according to a ShareLayout, so a 6-layer stack may own as
little as one layer's worth of parameters.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import attention as attn
from .autodiff import (
    Parameter,
    Tensor,
    add,
    affine,
    embedding,
    layer_normalize,
    relu,
    reshape,
    scale,
)
from .layout import ShareLayout, format_layout, parse_layout
from .vocab import radix_digits


@dataclass(frozen=True)
class ModelConfig:
    hidden_size: int
    mlp_size: int
    encoder_layout: ShareLayout
    decoder_layout: ShareLayout
    attention_mode: str = attn.SHARE_KV
    heads: int = 8
    feature_dim: int = 64
    radix_base: int = 0          # 0 selects the word-level baseline codec
    vocab_size: int = 1
    max_len: int = 64
    use_geometric: bool = True
    # per-stack overrides; None inherits attention_mode
    encoder_attention_mode: str | None = None
    decoder_attention_mode: str | None = None

    def __post_init__(self):
        if self.hidden_size % self.heads != 0:
            raise ValueError(
                f"hidden size {self.hidden_size} not divisible by {self.heads} heads"
            )
        if self.hidden_size % 2 != 0:
            raise ValueError("hidden size must be even for sinusoidal positions")
        if self.radix_base != 0 and self.radix_base < 2:
            raise ValueError("radix base must be 0 (word-level) or >= 2")
        if self.vocab_size < 1:
            raise ValueError("vocab_size must be >= 1")
        if self.max_len < 2:
            raise ValueError("max_len must be >= 2")
        for mode in (self.attention_mode, self.enc_attention_mode, self.dec_attention_mode):
            if mode not in attn.ATTENTION_MODES:
                raise ValueError(f"unknown attention mode {mode!r}")

    @property
    def enc_attention_mode(self) -> str:
        return self.encoder_attention_mode or self.attention_mode

    @property
    def dec_attention_mode(self) -> str:
        return self.decoder_attention_mode or self.attention_mode

    @property
    def word_level(self) -> bool:
        return self.radix_base == 0

    @property
    def encoded_rows(self) -> int:
        """Embedding-table rows: digits+BOS+EOS in radix mode, words+BOS+EOS otherwise."""
        if self.word_level:
            return self.vocab_size + 2
        return self.radix_base + 2

    @property
    def digits_per_word(self) -> int:
        if self.word_level:
            return 1
        return radix_digits(self.vocab_size, self.radix_base)

    def to_dict(self) -> dict:
        d = {
            "hidden_size": self.hidden_size,
            "mlp_size": self.mlp_size,
            "heads": self.heads,
            "feature_dim": self.feature_dim,
            "encoder_layout": format_layout(self.encoder_layout),
            "decoder_layout": format_layout(self.decoder_layout),
            "attention_mode": self.attention_mode,
            "radix_base": self.radix_base,
            "vocab_size": self.vocab_size,
            "max_len": self.max_len,
            "use_geometric": self.use_geometric,
        }
        if self.encoder_attention_mode:
            d["encoder_attention_mode"] = self.encoder_attention_mode
        if self.decoder_attention_mode:
            d["decoder_attention_mode"] = self.decoder_attention_mode
        return d

    @staticmethod
    def from_dict(d: dict) -> "ModelConfig":
        known = {
            "hidden_size", "mlp_size", "heads", "feature_dim", "encoder_layout",
            "decoder_layout", "attention_mode", "radix_base", "vocab_size",
            "max_len", "use_geometric", "encoder_attention_mode",
            "decoder_attention_mode",
        }
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown model config keys: {sorted(unknown)}")
        d = dict(d)
        for key in ("encoder_layout", "decoder_layout"):
            if isinstance(d.get(key), str):
                d[key] = parse_layout(d[key])
        return ModelConfig(**d)

    def with_vocab_size(self, vocab_size: int) -> "ModelConfig":
        return replace(self, vocab_size=vocab_size)


@dataclass
class MlpWeights:
    w1: Parameter
    b1: Parameter
    w2: Parameter
    b2: Parameter


@dataclass
class NormWeights:
    gain: Parameter
    shift: Parameter


@dataclass
class EncoderGroup:
    self_attn: attn.AttentionWeights
    mlp: MlpWeights
    norm1: NormWeights
    norm2: NormWeights
    gate_w: Parameter | None = None
    gate_b: Parameter | None = None


@dataclass
class DecoderGroup:
    self_attn: attn.AttentionWeights
    cross_attn: attn.AttentionWeights
    mlp: MlpWeights
    norm1: NormWeights
    norm2: NormWeights
    norm3: NormWeights


def sinusoidal_positions(max_len: int, dim: int) -> np.ndarray:
    pos = np.arange(max_len)[:, None]
    div = np.exp(np.arange(0, dim, 2) * (-math.log(10000.0) / dim))
    table = np.zeros((max_len, dim))
    table[:, 0::2] = np.sin(pos * div)
    table[:, 1::2] = np.cos(pos * div)
    return table


@dataclass
class CaptionerModel:
    cfg: ModelConfig
    input_embedding: Parameter
    output_w: Parameter
    output_b: Parameter
    feature_w: Parameter
    feature_b: Parameter
    encoder_groups: list[EncoderGroup]
    decoder_groups: list[DecoderGroup]
    positional: np.ndarray = field(repr=False)

    # -- parameter bookkeeping ------------------------------------------------

    def parameters(self) -> dict[str, Parameter]:
        """Distinct parameters by name; aliased roles appear exactly once."""
        out: dict[str, Parameter] = {}

        def put(p: Parameter | None):
            if p is not None and p.name not in out:
                out[p.name] = p

        put(self.input_embedding)
        put(self.output_w)
        put(self.output_b)
        put(self.feature_w)
        put(self.feature_b)
        for g in self.encoder_groups:
            for p in g.self_attn.distinct_parameters():
                put(p)
            put(g.gate_w)
            put(g.gate_b)
            for p in (g.mlp.w1, g.mlp.b1, g.mlp.w2, g.mlp.b2,
                      g.norm1.gain, g.norm1.shift, g.norm2.gain, g.norm2.shift):
                put(p)
        for g in self.decoder_groups:
            for p in g.self_attn.distinct_parameters():
                put(p)
            for p in g.cross_attn.distinct_parameters():
                put(p)
            for p in (g.mlp.w1, g.mlp.b1, g.mlp.w2, g.mlp.b2,
                      g.norm1.gain, g.norm1.shift, g.norm2.gain, g.norm2.shift,
                      g.norm3.gain, g.norm3.shift):
                put(p)
        return out

    def state(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.parameters().items()}

    def load_state(self, named: dict[str, np.ndarray]) -> None:
        """Copy values in place, preserving sharing structure."""
        params = self.parameters()
        missing = set(params) - set(named)
        extra = set(named) - set(params)
        if missing or extra:
            raise ValueError(f"state mismatch: missing={sorted(missing)} extra={sorted(extra)}")
        for name, p in params.items():
            arr = np.asarray(named[name], dtype=np.float64)
            if arr.shape != p.data.shape:
                raise ValueError(f"shape mismatch for {name}: {arr.shape} vs {p.data.shape}")
            p.data[...] = arr

    def zero_grad(self):
        for p in self.parameters().values():
            p.grad = None

    # -- forward passes -------------------------------------------------------

    def _encoder_gate(self, boxes, cache: dict, group_idx: int):
        if not self.cfg.use_geometric:
            return None
        if boxes is None:
            raise ValueError("use_geometric model requires region boxes")
        if group_idx not in cache:
            g = self.encoder_groups[group_idx]
            cache[group_idx] = attn.geometric_gate(boxes, g.gate_w, g.gate_b)
        return cache[group_idx]

    def encode_batch(self, features, boxes=None, region_mask=None) -> Tensor:
        """features (B, n, F) -> memory (B, n, r); mask rows mark real regions."""
        feats = features if isinstance(features, Tensor) else Tensor(features)
        if feats.data.ndim != 3:
            raise ValueError(f"expected (batch, regions, features), got {feats.shape}")
        if feats.data.shape[1] == 0:
            raise ValueError("at least one region is required")
        key_mask = None
        if region_mask is not None:
            key_mask = np.asarray(region_mask, dtype=bool)[:, None, None, :]
        x = affine(feats, self.feature_w, self.feature_b)
        gates: dict[int, Tensor] = {}
        for group_idx in self.cfg.encoder_layout.assignment:
            g = self.encoder_groups[group_idx]
            gate = self._encoder_gate(boxes, gates, group_idx)
            sa = attn.multi_head_attention(x, x, x, g.self_attn,
                                           mask=key_mask, gate=gate)
            x = layer_normalize(add(x, sa), g.norm1.gain, g.norm1.shift)
            h = affine(relu(affine(x, g.mlp.w1, g.mlp.b1)), g.mlp.w2, g.mlp.b2)
            x = layer_normalize(add(x, h), g.norm2.gain, g.norm2.shift)
        return x

    def decode_batch(self, memory: Tensor, token_ids, memory_mask=None) -> Tensor:
        """memory (B, S, r) + ids (B, T) -> logits (B, T, rows), causally masked."""
        ids = np.asarray(token_ids)
        if ids.ndim != 2:
            raise ValueError(f"expected (batch, time) token ids, got {ids.shape}")
        t_len = ids.shape[1]
        if t_len > self.cfg.max_len:
            raise ValueError(f"sequence length {t_len} exceeds max_len {self.cfg.max_len}")
        causal = np.tril(np.ones((t_len, t_len), dtype=bool))[None, None]
        mem_mask = None
        if memory_mask is not None:
            mem_mask = np.asarray(memory_mask, dtype=bool)[:, None, None, :]
        x = scale(embedding(self.input_embedding, ids), math.sqrt(self.cfg.hidden_size))
        x = add(x, self.positional[:t_len])
        for group_idx in self.cfg.decoder_layout.assignment:
            g = self.decoder_groups[group_idx]
            sa = attn.multi_head_attention(x, x, x, g.self_attn, mask=causal)
            x = layer_normalize(add(x, sa), g.norm1.gain, g.norm1.shift)
            ca = attn.multi_head_attention(x, memory, memory, g.cross_attn,
                                           mask=mem_mask)
            x = layer_normalize(add(x, ca), g.norm2.gain, g.norm2.shift)
            h = affine(relu(affine(x, g.mlp.w1, g.mlp.b1)), g.mlp.w2, g.mlp.b2)
            x = layer_normalize(add(x, h), g.norm3.gain, g.norm3.shift)
        return affine(x, self.output_w, self.output_b)

    def encode_regions(self, features, boxes=None) -> Tensor:
        """Single-scene contract: (n, F) features -> (n, r) memory."""
        feats = np.asarray(features, dtype=np.float64)
        if feats.ndim != 2:
            raise ValueError(f"expected (regions, features), got {feats.shape}")
        if feats.shape[0] == 0:
            raise ValueError("at least one region is required")
        batched_boxes = None if boxes is None else np.asarray(boxes)[None]
        out = self.encode_batch(Tensor(feats[None]), batched_boxes)
        return reshape(out, out.shape[1:])

    def decode_teacher_forced(self, memory, token_ids) -> Tensor:
        """Single-scene contract: (S, r) memory + (T,) ids -> (T, rows) logits."""
        mem = memory if isinstance(memory, Tensor) else Tensor(memory)
        if mem.data.ndim == 2:
            mem = reshape(mem, (1,) + mem.shape)
        ids = np.asarray(token_ids).reshape(1, -1)
        out = self.decode_batch(mem, ids)
        return reshape(out, out.shape[1:])


def build_model(cfg: ModelConfig, seed: int) -> CaptionerModel:
    """Deterministic init: scaled-uniform weights (bound 1/sqrt(fan_in)), zero
    biases, unit norm gains.  Parameters are created in a fixed order so the
    same seed always yields a bit-identical model."""
    rng = np.random.default_rng(seed)
    r, rows = cfg.hidden_size, cfg.encoded_rows

    def uniform(shape, fan_in, name):
        bound = 1.0 / math.sqrt(fan_in)
        return Parameter(rng.uniform(-bound, bound, shape), name)

    def zeros(shape, name):
        return Parameter(np.zeros(shape), name)

    input_embedding = uniform((rows, r), r, "embed.in")
    output_w = uniform((r, rows), r, "embed.out.w")
    output_b = zeros(rows, "embed.out.b")
    feature_w = uniform((cfg.feature_dim, r), cfg.feature_dim, "feature_proj.w")
    feature_b = zeros(r, "feature_proj.b")

    def mlp(prefix):
        return MlpWeights(
            uniform((r, cfg.mlp_size), r, f"{prefix}.w1"),
            zeros(cfg.mlp_size, f"{prefix}.b1"),
            uniform((cfg.mlp_size, r), cfg.mlp_size, f"{prefix}.w2"),
            zeros(r, f"{prefix}.b2"),
        )

    def norm(prefix):
        return NormWeights(Parameter(np.ones(r), f"{prefix}.gain"),
                           zeros(r, f"{prefix}.shift"))

    encoder_groups = []
    for k in range(cfg.encoder_layout.num_independent):
        p = f"enc.g{k}"
        gate_w = gate_b = None
        self_attn = attn.init_attention_weights(
            f"{p}.attn", r, cfg.heads, cfg.enc_attention_mode, rng)
        if cfg.use_geometric:
            # identity start: gate == 1 everywhere, so log-gate adds nothing
            # and no attention link is severed before training shapes it
            gate_w = zeros((attn.GEO_EMBED_DIM, cfg.heads), f"{p}.gate.w")
            gate_b = Parameter(np.ones(cfg.heads), f"{p}.gate.b")
        encoder_groups.append(EncoderGroup(
            self_attn, mlp(f"{p}.mlp"), norm(f"{p}.norm1"), norm(f"{p}.norm2"),
            gate_w, gate_b))

    decoder_groups = []
    for k in range(cfg.decoder_layout.num_independent):
        p = f"dec.g{k}"
        decoder_groups.append(DecoderGroup(
            attn.init_attention_weights(f"{p}.self", r, cfg.heads,
                                        cfg.dec_attention_mode, rng),
            attn.init_attention_weights(f"{p}.cross", r, cfg.heads,
                                        cfg.dec_attention_mode, rng),
            mlp(f"{p}.mlp"), norm(f"{p}.norm1"), norm(f"{p}.norm2"),
            norm(f"{p}.norm3")))

    return CaptionerModel(
        cfg=cfg,
        input_embedding=input_embedding,
        output_w=output_w,
        output_b=output_b,
        feature_w=feature_w,
        feature_b=feature_b,
        encoder_groups=encoder_groups,
        decoder_groups=decoder_groups,
        positional=sinusoidal_positions(cfg.max_len, r),
    )
