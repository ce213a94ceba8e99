"""JSON run configuration: model, training, data and eval sections.

Strict by design: unknown keys are rejected and referenced files must exist
at load time, so a typo fails the run before any compute is spent.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass

from .model import ModelConfig
from .toyworld import generate_dataset, load_scenes
from .training import TrainSchedule

_TRAIN_KEYS = {"epochs", "batch_size", "lr_peak", "lr_factor", "warmup_steps",
               "seed", "min_frequency", "noise", "eval_every",
               "eval_beam_size", "early_stop_exact"}
_DATA_KEYS = {"path", "seed", "n_train", "n_val", "n_test"}
_EVAL_KEYS = {"beam_size", "max_len"}


@dataclass(frozen=True)
class DataSpec:
    path: str | None = None
    seed: int = 0
    n_train: int = 2000
    n_val: int = 200
    n_test: int = 200

    def load(self):
        """(train, val, test) scene lists from files or the generator."""
        if self.path is not None:
            return tuple(
                load_scenes(os.path.join(self.path, f"{split}.jsonl"))
                for split in ("train", "val", "test"))
        return generate_dataset(self.seed, self.n_train, self.n_val, self.n_test)


@dataclass(frozen=True)
class RunConfig:
    model: ModelConfig
    schedule: TrainSchedule
    train_seed: int
    data: DataSpec
    eval_beam_size: int = 1
    eval_max_len: int | None = None


def _check_keys(section: dict, allowed: set, name: str) -> None:
    unknown = set(section) - allowed
    if unknown:
        raise ValueError(f"unknown keys in {name!r} section: {sorted(unknown)}")


def _schedule_from(section: dict, hidden_size: int) -> tuple[TrainSchedule, int]:
    _check_keys(section, _TRAIN_KEYS, "train")
    section = dict(section)
    seed = section.pop("seed", 0)
    lr_peak = section.pop("lr_peak", None)
    if lr_peak is not None:
        if "lr_factor" in section:
            raise ValueError("give lr_peak or lr_factor, not both")
        warmup = section.get("warmup_steps", TrainSchedule.warmup_steps)
        # peak of the warmup schedule is factor * (hidden * warmup)^-0.5
        section["lr_factor"] = lr_peak * math.sqrt(hidden_size * warmup)
    return TrainSchedule(**section), seed


def load_run_config(path: str) -> RunConfig:
    with open(path, encoding="utf-8") as fh:
        raw = json.load(fh)
    _check_keys(raw, {"model", "train", "data", "eval"}, "top-level")
    if "model" not in raw:
        raise ValueError("config requires a 'model' section")
    model = ModelConfig.from_dict(raw["model"])
    schedule, seed = _schedule_from(raw.get("train", {}), model.hidden_size)
    data_section = raw.get("data", {})
    _check_keys(data_section, _DATA_KEYS, "data")
    if "path" in data_section and data_section["path"] is not None:
        base = data_section["path"]
        if not os.path.isabs(base):
            base = os.path.join(os.path.dirname(os.path.abspath(path)), base)
        for split in ("train", "val", "test"):
            want = os.path.join(base, f"{split}.jsonl")
            if not os.path.exists(want):
                raise FileNotFoundError(f"dataset file missing: {want}")
        data_section = {**data_section, "path": base}
    data = DataSpec(**data_section)
    eval_section = raw.get("eval", {})
    _check_keys(eval_section, _EVAL_KEYS, "eval")
    return RunConfig(
        model=model,
        schedule=schedule,
        train_seed=seed,
        data=data,
        eval_beam_size=eval_section.get("beam_size", 1),
        eval_max_len=eval_section.get("max_len"),
    )


def load_model_config(path: str) -> ModelConfig:
    """Model config from either a full run config or a bare model JSON."""
    with open(path, encoding="utf-8") as fh:
        raw = json.load(fh)
    if "model" in raw:
        return ModelConfig.from_dict(raw["model"])
    return ModelConfig.from_dict(raw)
