"""Teacher-forced training with per-epoch validation and best-checkpoint tracking.

Everything is deterministic given the seed: model init, batch order, feature
noise, and therefore the final weights.  A non-finite loss or update aborts
with a TrainingDiverged diagnostic rather than being masked.
"""

from __future__ import annotations

import sys
import time
from dataclasses import dataclass, field

import numpy as np

from .autodiff import backward, cross_entropy
from .evaluation import evaluate
from .model import CaptionerModel, ModelConfig, build_model
from .optim import Adam, WarmupSchedule
from .toyworld import scene_features
from .vocab import build_vocab, make_codec

PAD_TARGET = -1

METRICS_HEADER = "step,loss,exact_match,bleu1,bleu4,unique_frac,avg_len"


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainSchedule:
    epochs: int = 30
    batch_size: int = 32
    warmup_steps: int = 200
    lr_factor: float = 1.0
    min_frequency: int = 1
    noise: float = 0.05
    eval_every: int = 1
    eval_beam_size: int = 1
    early_stop_exact: float | None = None


@dataclass
class TrainRun:
    cfg: ModelConfig
    schedule: TrainSchedule
    seed: int
    model: CaptionerModel
    codec: object
    history: list[dict] = field(default_factory=list)
    best_state: dict | None = None
    best_exact: float = -1.0
    best_epoch: int = -1
    steps: int = 0

    def metrics_csv(self) -> str:
        lines = [METRICS_HEADER]
        for row in self.history:
            lines.append(
                f"{row['step']},{row['loss']:.6f},{row['exact_match']:.4f},"
                f"{row['bleu1']:.4f},{row['bleu4']:.4f},"
                f"{row['unique_frac']:.4f},{row['avg_len']:.3f}")
        return "\n".join(lines) + "\n"


def _encode_batch_arrays(cfg, codec, scenes, streams, feats):
    """Pad one scene batch into dense arrays for a teacher-forced step."""
    n_max = max(f.shape[0] for f in feats)
    t_max = max(len(ts.ids) for ts in streams) - 1
    features = np.zeros((len(scenes), n_max, cfg.feature_dim))
    boxes = np.tile(np.array([0.5, 0.5, 1.0, 1.0]), (len(scenes), n_max, 1))
    region_mask = np.zeros((len(scenes), n_max), dtype=bool)
    inputs = np.full((len(scenes), t_max), codec.eos_id, dtype=np.int64)
    targets = np.full((len(scenes), t_max), PAD_TARGET, dtype=np.int64)
    for i, (scene, f, ts) in enumerate(zip(scenes, feats, streams)):
        n = f.shape[0]
        features[i, :n] = f
        boxes[i, :n] = scene.boxes()
        region_mask[i, :n] = True
        ids = np.asarray(ts.ids, dtype=np.int64)
        inputs[i, :len(ids) - 1] = ids[:-1]
        targets[i, :len(ids) - 1] = ids[1:]
    return features, boxes, region_mask, inputs, targets


def _bucketed_batches(lengths, batch_size, rng) -> list[np.ndarray]:
    """Shuffle, then group similar lengths so batches carry little padding."""
    order = rng.permutation(len(lengths))
    window = batch_size * 8
    batches = []
    for lo in range(0, len(order), window):
        pool = order[lo:lo + window]
        pool = pool[np.argsort([lengths[i] for i in pool], kind="stable")]
        batches.extend(pool[j:j + batch_size] for j in range(0, len(pool), batch_size))
    batch_order = rng.permutation(len(batches))
    return [batches[i] for i in batch_order]


def teacher_forced_loss(model, features, boxes, region_mask, inputs, targets):
    memory = model.encode_batch(
        features, boxes if model.cfg.use_geometric else None, region_mask)
    logits = model.decode_batch(memory, inputs, region_mask)
    return cross_entropy(logits, targets, ignore_index=PAD_TARGET)


def train(cfg: ModelConfig, train_scenes, val_scenes,
          schedule: TrainSchedule | None = None, seed: int = 0,
          log=None) -> TrainRun:
    """Train on the toy world; returns the run with best/final weights attached.

    `cfg.vocab_size` is overwritten from the vocabulary built on the training
    captions.  The best checkpoint is the epoch with the highest validation
    exact-match under greedy decoding.
    """
    schedule = schedule or TrainSchedule()
    log = log if log is not None else (lambda msg: print(msg, file=sys.stderr))
    vocab = build_vocab((s.caption for s in train_scenes), schedule.min_frequency)
    cfg = cfg.with_vocab_size(len(vocab))
    codec = make_codec(vocab, cfg.radix_base)
    model = build_model(cfg, seed)
    optimizer = Adam(model.parameters().values(),
                     WarmupSchedule(cfg.hidden_size, schedule.warmup_steps,
                                    schedule.lr_factor))
    run = TrainRun(cfg, schedule, seed, model, codec)
    streams = [codec.encode_caption(s.caption.split()) for s in train_scenes]
    max_input_len = max(len(ts.ids) for ts in streams) - 1
    if max_input_len > cfg.max_len:
        raise ValueError(f"training stream length {max_input_len} exceeds max_len")
    lengths = [len(ts.ids) for ts in streams]
    feats = [scene_features(s, cfg.feature_dim, schedule.noise, seed)
             for s in train_scenes]
    train_captions = [s.caption for s in train_scenes]
    rng = np.random.default_rng(seed)
    t_start = time.monotonic()

    for epoch in range(1, schedule.epochs + 1):
        epoch_loss, n_batches = 0.0, 0
        for idx in _bucketed_batches(lengths, schedule.batch_size, rng):
            arrays = _encode_batch_arrays(cfg, codec,
                                          [train_scenes[i] for i in idx],
                                          [streams[i] for i in idx],
                                          [feats[i] for i in idx])
            try:
                loss = teacher_forced_loss(model, *arrays)
                backward(loss)
                optimizer.step()
            except FloatingPointError as exc:
                raise TrainingDiverged(
                    f"non-finite value at step {run.steps + 1} "
                    f"(epoch {epoch}): {exc}") from exc
            epoch_loss += float(loss.data)
            n_batches += 1
            run.steps += 1
        mean_loss = epoch_loss / max(n_batches, 1)

        if epoch % schedule.eval_every == 0 or epoch == schedule.epochs:
            result = evaluate(model, codec, val_scenes,
                              beam_size=schedule.eval_beam_size,
                              training_captions=train_captions,
                              noise=schedule.noise, noise_seed=seed)
            run.history.append({
                "step": run.steps,
                "loss": mean_loss,
                "exact_match": result.exact_match,
                "bleu1": result.bleu[0],
                "bleu4": result.bleu[3],
                "unique_frac": result.stats.unique_fraction,
                "avg_len": result.stats.avg_word_count,
            })
            log(f"epoch {epoch:3d}  step {run.steps:5d}  "
                f"loss {mean_loss:.4f}  val exact {result.exact_match:.3f}  "
                f"bleu4 {result.bleu[3]:.3f}  "
                f"[{time.monotonic() - t_start:.0f}s]")
            if result.exact_match > run.best_exact:
                run.best_exact = result.exact_match
                run.best_epoch = epoch
                run.best_state = model.state()
            if (schedule.early_stop_exact is not None
                    and result.exact_match >= schedule.early_stop_exact):
                log(f"early stop: exact match {result.exact_match:.3f} >= "
                    f"{schedule.early_stop_exact}")
                break

    if run.best_state is None:
        run.best_state = model.state()
    return run
