"""Compact encoder-decoder captioner with radix token factorization,
cross-layer parameter sharing, attention weight sharing, and an exact
parameter accountant."""

__version__ = "0.1.0"

from .accountant import ParamReport, count_from_config, count_from_model, reconcile
from .layout import ShareLayout, format_layout, parse_layout
from .model import CaptionerModel, ModelConfig, build_model
from .vocab import RadixVocab, TokenStream, WordVocab, build_vocab, make_codec

__all__ = [
    "CaptionerModel",
    "ModelConfig",
    "ParamReport",
    "RadixVocab",
    "ShareLayout",
    "TokenStream",
    "WordVocab",
    "build_model",
    "build_vocab",
    "count_from_config",
    "count_from_model",
    "format_layout",
    "make_codec",
    "parse_layout",
    "reconcile",
]
