"""Greedy and beam-search caption generation.

Hypotheses are scored by the raw sum of token log-probabilities with no
length normalization.  A hypothesis is finished the moment it emits EOS; the
best finished hypothesis wins, falling back to the best unfinished prefix if
nothing finished within the length budget.  All ties break deterministically
by token id (then shorter prefix), so repeated runs agree bit for bit.
"""

from __future__ import annotations

import numpy as np

from .autodiff import no_grad
from .vocab import TokenStream


def _log_softmax(row: np.ndarray) -> np.ndarray:
    z = row - row.max()
    return z - np.log(np.exp(z).sum())


def _next_log_probs(model, memory, prefix: tuple[int, ...]) -> np.ndarray:
    logits = np.asarray(model.decode_teacher_forced(memory, np.asarray(prefix)))
    return _log_softmax(logits[-1])


def greedy_decode(model, memory, codec, max_len: int) -> TokenStream:
    """Argmax continuation from BOS until EOS or `max_len` generated tokens."""
    if max_len < 2:
        raise ValueError("max_len must be >= 2")
    prefix = (codec.bos_id,)
    with no_grad():
        for _ in range(max_len):
            token = int(np.argmax(_next_log_probs(model, memory, prefix)))
            prefix += (token,)
            if token == codec.eos_id:
                break
    return TokenStream(prefix, codec.mode)


def beam_search(model, memory, codec, beam_size: int, max_len: int) -> TokenStream:
    """Standard beam expansion; returns the stream of the winning hypothesis."""
    stream, _ = beam_search_scored(model, memory, codec, beam_size, max_len)
    return stream


def beam_search_scored(model, memory, codec, beam_size: int,
                       max_len: int) -> tuple[TokenStream, float]:
    if beam_size < 1:
        raise ValueError("beam_size must be >= 1")
    live: list[tuple[float, tuple[int, ...]]] = [(0.0, (codec.bos_id,))]
    finished: list[tuple[float, tuple[int, ...]]] = []
    with no_grad():
        for _ in range(max_len):
            candidates = []
            for score, prefix in live:
                logp = _next_log_probs(model, memory, prefix)
                for token, lp in enumerate(logp):
                    candidates.append((score + lp, prefix + (token,)))
            # ranking key: higher score first, then token ids, then length
            candidates.sort(key=lambda c: (-c[0], c[1]))
            live = []
            for score, prefix in candidates:
                if prefix[-1] == codec.eos_id:
                    finished.append((score, prefix))
                elif len(live) < beam_size:
                    live.append((score, prefix))
                if len(live) == beam_size:
                    break
            if not live:
                break
    pool = finished if finished else live
    score, prefix = min(pool, key=lambda c: (-c[0], c[1]))
    return TokenStream(prefix, codec.mode), float(score)


def caption_from_tokens(ts: TokenStream, codec) -> str:
    """Post-process a token stream to a caption string (lenient decode)."""
    return " ".join(codec.decode_stream(ts, strict=False))
