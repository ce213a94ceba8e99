"""Closed-form parameter accounting, exact model enumeration, and the
reference size grid.

Counting conventions (these are what make the reference totals land):
biases on every projection, a tied weight implies a tied bias, layer norms
contribute gain+shift (2r) each with two per encoder layer and three per
decoder layer, the geometric gate adds heads*(64+1) per independent encoder
layer, and the fixed positional table contributes nothing.
"""

from __future__ import annotations

import io
from dataclasses import dataclass

from . import attention as attn
from .layout import parse_layout
from .model import CaptionerModel, ModelConfig

# Word-level vocabulary size used by the reference grid, back-solved from the
# reported 10.3M word embedding count at width 512: 10.3e6 / (2 * 512).
REFERENCE_WORD_VOCAB = 10_058

CSV_HEADER = "name,embeddings,attention,mlp,misc,feature_proj,total,total_millions"


@dataclass(frozen=True)
class ParamReport:
    embeddings: int
    attention: int
    mlp: int
    norms_and_misc: int
    feature_proj: int
    positional: int = 0

    @property
    def total(self) -> int:
        return (self.embeddings + self.attention + self.mlp
                + self.norms_and_misc + self.feature_proj + self.positional)

    @property
    def total_millions(self) -> float:
        return self.total / 1e6

    def csv_row(self, name: str) -> str:
        return (f"{name},{self.embeddings},{self.attention},{self.mlp},"
                f"{self.norms_and_misc},{self.feature_proj},{self.total},"
                f"{self.total_millions:.1f}")


def _attention_block_params(r: int, mode: str) -> int:
    mats = 3 if mode in (attn.SHARE_QK, attn.SHARE_KV) else 4
    return mats * r * r + mats * r


def count_from_config(cfg: ModelConfig) -> ParamReport:
    """Exact closed-form count for a config, shared parameters counted once."""
    r, m, rows = cfg.hidden_size, cfg.mlp_size, cfg.encoded_rows
    enc_groups = cfg.encoder_layout.num_independent
    dec_groups = cfg.decoder_layout.num_independent

    embeddings = 2 * rows * r + rows  # input table + output projection + bias
    attention = (enc_groups * _attention_block_params(r, cfg.enc_attention_mode)
                 + dec_groups * 2 * _attention_block_params(r, cfg.dec_attention_mode))
    mlp = (enc_groups + dec_groups) * (2 * r * m + m + r)
    norms = enc_groups * 2 * (2 * r) + dec_groups * 3 * (2 * r)
    gate = enc_groups * attn.gate_parameter_count(cfg.heads) if cfg.use_geometric else 0
    feature_proj = cfg.feature_dim * r + r
    return ParamReport(embeddings, attention, mlp, norms + gate, feature_proj)


def count_from_model(model: CaptionerModel) -> ParamReport:
    """Enumerate distinct Parameter identities and bucket them by name."""
    buckets = {"embeddings": 0, "attention": 0, "mlp": 0, "misc": 0, "feature_proj": 0}
    for name, p in model.parameters().items():
        size = p.data.size
        if name.startswith("embed."):
            buckets["embeddings"] += size
        elif name.startswith("feature_proj."):
            buckets["feature_proj"] += size
        elif ".attn." in name or ".self." in name or ".cross." in name:
            buckets["attention"] += size
        elif ".mlp." in name:
            buckets["mlp"] += size
        elif ".norm" in name or ".gate." in name:
            buckets["misc"] += size
        else:
            raise ValueError(f"unclassifiable parameter {name!r}")
    return ParamReport(buckets["embeddings"], buckets["attention"],
                       buckets["mlp"], buckets["misc"], buckets["feature_proj"])


def diff_reports(analytic: ParamReport, enumerated: ParamReport) -> str:
    lines = []
    for comp in ("embeddings", "attention", "mlp", "norms_and_misc",
                 "feature_proj", "positional"):
        a, b = getattr(analytic, comp), getattr(enumerated, comp)
        if a != b:
            lines.append(f"{comp}: analytic {a} vs enumerated {b} (delta {b - a})")
    if analytic.total != enumerated.total:
        lines.append(f"total: analytic {analytic.total} vs enumerated "
                     f"{enumerated.total} (delta {enumerated.total - analytic.total})")
    return "\n".join(lines) if lines else "counts agree"


def reconcile(model: CaptionerModel, report: ParamReport) -> bool:
    """True iff the built model's distinct-parameter count equals the analytic
    report exactly (integer equality, component by component)."""
    enumerated = count_from_model(model)
    return (enumerated.total == report.total
            and enumerated.embeddings == report.embeddings
            and enumerated.attention == report.attention
            and enumerated.mlp == report.mlp
            and enumerated.norms_and_misc == report.norms_and_misc
            and enumerated.feature_proj == report.feature_proj)


# ---------------------------------------------------------------------------
# reference configuration grid


def _reference_scale(hidden: int, mlp: int, enc_layout: str, dec_layout: str,
                 mode: str, radix_base: int, **over) -> ModelConfig:
    return ModelConfig(
        hidden_size=hidden,
        mlp_size=mlp,
        encoder_layout=parse_layout(enc_layout),
        decoder_layout=parse_layout(dec_layout),
        attention_mode=mode,
        heads=8,
        feature_dim=2048,
        radix_base=radix_base,
        vocab_size=REFERENCE_WORD_VOCAB,
        max_len=24,
        use_geometric=True,
        **over,
    )


def model_size_configs() -> dict[str, ModelConfig]:
    """The nine named model sizes: word-level baselines and compact variants."""
    full = "(0,1,2,3,4,5)"
    return {
        "word-base": _reference_scale(512, 2048, full, full, attn.NO_SHARE, 0),
        "word-base-4": _reference_scale(512, 2048, "(0,1,2,3)", "(0,1,2,3)", attn.NO_SHARE, 0),
        "word-base-2": _reference_scale(512, 2048, "(0,1)", "(0,1)", attn.NO_SHARE, 0),
        "word-small": _reference_scale(256, 1024, full, full, attn.NO_SHARE, 0),
        "word-xsmall": _reference_scale(104, 416, full, full, attn.NO_SHARE, 0),
        "compact-base": _reference_scale(512, 2048, "(0x3,1x3)", "(0x3,1x3)", attn.SHARE_KV, 768),
        "compact-base-al": _reference_scale(512, 2048, "(0x6)", "(0x6)", attn.SHARE_KV, 768),
        "compact-small": _reference_scale(256, 1024, "(0x3,1x3)", "(0x3,1x3)", attn.SHARE_KV, 768),
        "compact-xsmall": _reference_scale(256, 1024, "(0x2)", "(0x2)", attn.SHARE_KV, 768),
    }


def embedding_sweep_configs() -> dict[str, ModelConfig]:
    """Radix-base sweep on the base architecture (word baseline included)."""
    full = "(0,1,2,3,4,5)"
    out = {"embed-word": _reference_scale(512, 2048, full, full, attn.NO_SHARE, 0)}
    for base in (1024, 768, 512, 256):
        out[f"embed-v{base}"] = _reference_scale(512, 2048, full, full, attn.NO_SHARE, base)
    return out


def layer_sweep_configs() -> dict[str, ModelConfig]:
    """Fixed depth 6, varying independent-layer count (both stacks)."""
    items = [
        ("layers-ind6", "(0,1,2,3,4,5)"),
        ("layers-ind4", "(0,0,0,1,2,3)"),
        ("layers-ind3-successive", "(0,0,1,1,2,2)"),
        ("layers-ind3-symmetric", "(0,1,2,2,1,0)"),
        ("layers-ind2", "(0x3,1x3)"),
        ("layers-ind1", "(0x6)"),
    ]
    return {name: _reference_scale(512, 2048, lay, lay, attn.NO_SHARE, 0)
            for name, lay in items}


def depth_sweep_configs() -> dict[str, ModelConfig]:
    """Two independent layers reused across depths 2, 6 and 12."""
    items = [("depth-2", "(0,1)"), ("depth-6", "(0x3,1x3)"), ("depth-12", "(0x6,1x6)")]
    return {name: _reference_scale(512, 2048, lay, lay, attn.NO_SHARE, 0)
            for name, lay in items}


def attention_sweep_configs() -> dict[str, ModelConfig]:
    """Attention sharing applied to neither, one, or both stacks."""
    full = "(0,1,2,3,4,5)"

    def cfg(**over):
        return _reference_scale(512, 2048, full, full, attn.NO_SHARE, 0, **over)

    return {
        "attn-no-share": cfg(),
        "attn-share-kv-enc": cfg(encoder_attention_mode=attn.SHARE_KV),
        "attn-share-kv-dec": cfg(decoder_attention_mode=attn.SHARE_KV),
        "attn-share-kv": _reference_scale(512, 2048, full, full, attn.SHARE_KV, 0),
        "attn-share-qk": _reference_scale(512, 2048, full, full, attn.SHARE_QK, 0),
    }


SUITES = {
    "sizes": model_size_configs,
    "embeddings": embedding_sweep_configs,
    "layers": layer_sweep_configs,
    "depth": depth_sweep_configs,
    "attention": attention_sweep_configs,
}


def suite_configs(suite: str) -> dict[str, ModelConfig]:
    if suite == "paper":
        merged: dict[str, ModelConfig] = {}
        for build in SUITES.values():
            merged.update(build())
        return merged
    if suite not in SUITES:
        raise ValueError(f"unknown suite {suite!r}; pick from "
                         f"{['paper', *SUITES]}")
    return SUITES[suite]()


def emit_tables(configs: dict[str, ModelConfig]) -> str:
    """CSV with one row per named config (raw counts plus millions)."""
    buf = io.StringIO()
    buf.write(CSV_HEADER + "\n")
    for name, cfg in configs.items():
        buf.write(count_from_config(cfg).csv_row(name) + "\n")
    return buf.getvalue()
