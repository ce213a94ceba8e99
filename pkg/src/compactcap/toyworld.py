"""Synthetic captioning scenes: colored shapes with boxes and templated captions.

Each scene holds 1-5 objects.  The caption is fully determined by the object
list: one "a {size} {color} {shape}" phrase per object, phrases joined by
"and", objects ordered left-to-right by box center.  That makes exact string
match a meaningful evaluation signal, and the caption parses back to the
object attribute multiset.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

SHAPES = ("circle", "square", "triangle", "star")
COLORS = ("red", "blue", "green", "yellow")
SIZES = ("small", "big")

MAX_OBJECTS = 5
MIN_CX_GAP = 0.08  # keeps left-to-right order visually unambiguous

# one-hot slot layout for scene_features
_N_ATTR_SLOTS = len(SHAPES) + len(COLORS) + len(SIZES)


@dataclass(frozen=True)
class SceneObject:
    shape: str
    color: str
    size: str
    box: tuple[float, float, float, float]  # (cx, cy, w, h), normalized

    @property
    def phrase(self) -> str:
        return f"a {self.size} {self.color} {self.shape}"


@dataclass(frozen=True)
class Scene:
    id: int
    objects: tuple[SceneObject, ...]
    caption: str

    def boxes(self) -> np.ndarray:
        return np.array([o.box for o in self.objects])


def caption_for(objects) -> str:
    ordered = sorted(objects, key=lambda o: o.box[0])
    return " and ".join(o.phrase for o in ordered)


def parse_caption(caption: str) -> list[tuple[str, str, str]]:
    """Inverse of caption_for up to object order: [(shape, color, size), ...]."""
    out = []
    for phrase in caption.split(" and "):
        words = phrase.split()
        if len(words) != 4 or words[0] != "a":
            raise ValueError(f"unparseable phrase {phrase!r}")
        _, size, color, shape = words
        if shape not in SHAPES or color not in COLORS or size not in SIZES:
            raise ValueError(f"unknown attribute in {phrase!r}")
        out.append((shape, color, size))
    return out


def _random_scene(scene_id: int, rng: np.random.Generator) -> Scene:
    n = int(rng.integers(1, MAX_OBJECTS + 1))
    objects = []
    centers_x: list[float] = []
    for _ in range(n):
        w = float(rng.uniform(0.1, 0.3))
        h = float(rng.uniform(0.1, 0.3))
        for _ in range(100):
            cx = float(rng.uniform(w / 2, 1 - w / 2))
            if all(abs(cx - c) >= MIN_CX_GAP for c in centers_x):
                break
        centers_x.append(cx)
        cy = float(rng.uniform(h / 2, 1 - h / 2))
        objects.append(SceneObject(
            shape=str(rng.choice(SHAPES)),
            color=str(rng.choice(COLORS)),
            size=str(rng.choice(SIZES)),
            box=(cx, cy, w, h),
        ))
    objects.sort(key=lambda o: o.box[0])
    return Scene(scene_id, tuple(objects), caption_for(objects))


def generate_dataset(seed: int, n_train: int, n_val: int, n_test: int):
    """Three disjoint scene lists, fully determined by the seed."""
    if min(n_train, n_val, n_test) < 1:
        raise ValueError("split sizes must be >= 1")
    rng = np.random.default_rng(seed)
    scenes = [_random_scene(i, rng) for i in range(n_train + n_val + n_test)]
    return (scenes[:n_train],
            scenes[n_train:n_train + n_val],
            scenes[n_train + n_val:])


def scene_features(scene: Scene, feature_dim: int, noise: float = 0.05,
                   noise_seed: int = 0) -> np.ndarray:
    """Per-object one-hot attribute slots padded to feature_dim, plus noise.

    Box geometry is deliberately not encoded here; spatial information
    reaches the model only through the geometric attention gate.
    """
    if feature_dim < 16:
        raise ValueError("feature_dim must be >= 16")
    rows = np.zeros((len(scene.objects), feature_dim))
    for i, obj in enumerate(scene.objects):
        rows[i, SHAPES.index(obj.shape)] = 1.0
        rows[i, len(SHAPES) + COLORS.index(obj.color)] = 1.0
        rows[i, len(SHAPES) + len(COLORS) + SIZES.index(obj.size)] = 1.0
    if noise > 0:
        rng = np.random.default_rng((scene.id, noise_seed))
        rows += noise * rng.standard_normal(rows.shape)
    return rows


def save_scenes(path: str, scenes) -> None:
    """JSON-lines, one scene per line, stable field order."""
    with open(path, "w", encoding="utf-8") as fh:
        for s in scenes:
            record = {
                "id": s.id,
                "objects": [
                    {"shape": o.shape, "color": o.color, "size": o.size,
                     "box": list(o.box)}
                    for o in s.objects
                ],
                "caption": s.caption,
            }
            fh.write(json.dumps(record) + "\n")


def load_scenes(path: str) -> list[Scene]:
    scenes = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            objects = tuple(
                SceneObject(o["shape"], o["color"], o["size"], tuple(o["box"]))
                for o in rec["objects"]
            )
            scenes.append(Scene(rec["id"], objects, rec["caption"]))
    return scenes
