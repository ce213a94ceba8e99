"""Caption evaluation and layer-parameter analysis.

BLEU is corpus-level against the single toy reference with the standard
brevity penalty and no smoothing: a zero n-gram overlap yields a zero score
for that order.  Caption statistics track the fraction of generated captions
never seen in training and the mean word count (counted after radix
post-processing, never in digit tokens).
"""

from __future__ import annotations

import collections
from dataclasses import dataclass

import numpy as np

from .autodiff import no_grad
from .decoding import beam_search, caption_from_tokens
from .fastdecode import greedy_decode_batch
from .toyworld import scene_features


@dataclass(frozen=True)
class CaptionStats:
    unique_fraction: float
    avg_word_count: float


@dataclass(frozen=True)
class EvalResult:
    exact_match: float
    bleu: tuple[float, float, float, float]
    stats: CaptionStats
    captions: tuple[str, ...]


def _ngrams(words, n):
    return collections.Counter(
        tuple(words[i:i + n]) for i in range(len(words) - n + 1))


def bleu_scores(hypotheses, references) -> tuple[float, float, float, float]:
    """Corpus BLEU-1..4 for single-reference word lists."""
    if len(hypotheses) != len(references):
        raise ValueError("hypothesis/reference count mismatch")
    matches = np.zeros(4)
    guesses = np.zeros(4)
    hyp_len = ref_len = 0
    for hyp, ref in zip(hypotheses, references):
        hyp_len += len(hyp)
        ref_len += len(ref)
        for n in range(1, 5):
            h = _ngrams(hyp, n)
            matches[n - 1] += sum((h & _ngrams(ref, n)).values())
            guesses[n - 1] += sum(h.values())
    if hyp_len == 0:
        return (0.0, 0.0, 0.0, 0.0)
    brevity = 1.0 if hyp_len >= ref_len else float(np.exp(1.0 - ref_len / hyp_len))
    precisions = [m / g if g > 0 else 0.0 for m, g in zip(matches, guesses)]
    scores = []
    for n in range(1, 5):
        p = precisions[:n]
        if min(p) == 0.0:
            scores.append(0.0)
        else:
            scores.append(brevity * float(np.exp(np.mean(np.log(p)))))
    return tuple(scores)


def caption_stats(generated, training_captions) -> CaptionStats:
    train_set = set(training_captions)
    if not generated:
        raise ValueError("no captions to evaluate")
    unseen = sum(1 for c in generated if c not in train_set)
    avg = float(np.mean([len(c.split()) for c in generated]))
    return CaptionStats(unseen / len(generated), avg)


def _batched_memory(model, scenes, noise, noise_seed):
    """Encode a scene list with region padding; returns memory + key mask."""
    cfg = model.cfg
    feats = [scene_features(s, cfg.feature_dim, noise, noise_seed) for s in scenes]
    n_max = max(f.shape[0] for f in feats)
    batch = np.zeros((len(scenes), n_max, cfg.feature_dim))
    boxes = np.tile(np.array([0.5, 0.5, 1.0, 1.0]), (len(scenes), n_max, 1))
    mask = np.zeros((len(scenes), n_max), dtype=bool)
    for i, (f, s) in enumerate(zip(feats, scenes)):
        n = f.shape[0]
        batch[i, :n] = f
        boxes[i, :n] = s.boxes()
        mask[i, :n] = True
    memory = model.encode_batch(batch, boxes if cfg.use_geometric else None, mask)
    return memory, mask


def generate_captions(model, codec, scenes, beam_size: int = 1,
                      max_len: int | None = None, noise: float = 0.05,
                      noise_seed: int = 0, chunk: int = 200) -> list[str]:
    """Caption every scene; greedy runs in lockstep batches, beam per scene."""
    if not scenes:
        raise ValueError("no scenes to caption")
    max_len = max_len if max_len is not None else model.cfg.max_len - 1
    captions = []
    for start in range(0, len(scenes), chunk):
        part = scenes[start:start + chunk]
        with no_grad():
            memory, mask = _batched_memory(model, part, noise, noise_seed)
        if beam_size == 1:
            streams = greedy_decode_batch(model, memory, mask, codec, max_len)
            captions.extend(caption_from_tokens(ts, codec) for ts in streams)
        else:
            mem = np.asarray(memory)
            for i, scene in enumerate(part):
                n = int(mask[i].sum())
                ts = beam_search(model, mem[i, :n], codec, beam_size, max_len)
                captions.append(caption_from_tokens(ts, codec))
    return captions


def evaluate(model, codec, scenes, beam_size: int = 1, training_captions=(),
             noise: float = 0.05, noise_seed: int = 0,
             max_len: int | None = None) -> EvalResult:
    """Exact-match rate, BLEU-1..4, and caption statistics over `scenes`."""
    generated = generate_captions(model, codec, scenes, beam_size,
                                  max_len=max_len, noise=noise,
                                  noise_seed=noise_seed)
    references = [s.caption for s in scenes]
    exact = sum(1 for g, r in zip(generated, references) if g == r) / len(scenes)
    bleu = bleu_scores([g.split() for g in generated],
                       [r.split() for r in references])
    stats = caption_stats(generated, training_captions)
    return EvalResult(exact, bleu, stats, tuple(generated))


# ---------------------------------------------------------------------------
# layer parameter distance


def _l2_normalize_last(arr: np.ndarray) -> np.ndarray:
    norm = np.linalg.norm(arr, axis=-1, keepdims=True)
    return np.where(norm > 0, arr / np.where(norm > 0, norm, 1.0), arr)


def _group_vector(params) -> np.ndarray:
    return np.concatenate([_l2_normalize_last(p.data).ravel() for p in params])


def _encoder_group_params(group):
    a = group.self_attn
    params = [a.w_q, a.b_q, a.w_k, a.b_k, a.w_v, a.b_v, a.w_o, a.b_o]
    if group.gate_w is not None:
        params += [group.gate_w, group.gate_b]
    return params + [group.mlp.w1, group.mlp.b1, group.mlp.w2, group.mlp.b2,
                     group.norm1.gain, group.norm1.shift,
                     group.norm2.gain, group.norm2.shift]


def _decoder_group_params(group):
    sa, ca = group.self_attn, group.cross_attn
    return [sa.w_q, sa.b_q, sa.w_k, sa.b_k, sa.w_v, sa.b_v, sa.w_o, sa.b_o,
            ca.w_q, ca.b_q, ca.w_k, ca.b_k, ca.w_v, ca.b_v, ca.w_o, ca.b_o,
            group.mlp.w1, group.mlp.b1, group.mlp.w2, group.mlp.b2,
            group.norm1.gain, group.norm1.shift, group.norm2.gain,
            group.norm2.shift, group.norm3.gain, group.norm3.shift]


def layer_distance_matrix(model, squared: bool = True) -> dict[str, np.ndarray]:
    """Pairwise distance between stack positions' parameter vectors.

    Each position's tensors are L2-normalized along their last axis, then
    flattened and concatenated (aliased tensors contribute per role, so two
    positions sharing a group sit at distance exactly zero).  Entries are
    mean squared distances by default; `squared=False` gives their roots.
    """
    out = {}
    for stack, layout, groups, extract in (
        ("encoder", model.cfg.encoder_layout, model.encoder_groups,
         _encoder_group_params),
        ("decoder", model.cfg.decoder_layout, model.decoder_groups,
         _decoder_group_params),
    ):
        if layout.num_layers < 2:
            continue
        group_vecs = [_group_vector(extract(g)) for g in groups]
        sizes = {v.size for v in group_vecs}
        if len(sizes) > 1:
            raise ValueError(f"{stack} layers have unequal parameter shapes")
        vecs = [group_vecs[g] for g in layout.assignment]
        n = len(vecs)
        mat = np.zeros((n, n))
        for a in range(n):
            for b in range(a + 1, n):
                d = float(np.mean((vecs[a] - vecs[b]) ** 2))
                mat[a, b] = mat[b, a] = d
        out[stack] = mat if squared else np.sqrt(mat)
    return out


def clip_for_plot(matrix: np.ndarray) -> float:
    """Color-scale floor: the second-lowest distinct value in the matrix."""
    values = np.unique(matrix)
    return float(values[1]) if values.size > 1 else float(values[0])
