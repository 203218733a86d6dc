"""Synthetic scene corpus: grammar, JSONL round trip, and rendering.

A scene is a handful of class-labeled boxes on a square canvas plus directed
relation triples derived from box geometry, so relations are consistent
across the corpus and a matching commonsense triple file can be generated
from the same grammar. Real images are procedurally rendered flat-colored
rectangles, one color per class, drawn large-to-small on a dark background.
"""

from __future__ import annotations

import colorsys
import json
import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import DataError
from .proposals import Box, iou

CLASS_WORDS = [
    "person", "tree", "car", "house", "dog", "ball",
    "lamp", "bench", "bird", "cloud", "boat", "sign",
]
PREDICATE_WORDS = ["left_of", "above", "inside", "near", "beside", "below"]


class SceneObject(NamedTuple):
    box: Box
    cls: int


@dataclass
class SceneSpec:
    image_id: int
    width: int
    height: int
    objects: list[SceneObject]
    relations: list[tuple[int, int, int]]  # (subj index, predicate id, obj index)

    def to_record(self) -> dict:
        return {
            "id": self.image_id,
            "width": self.width,
            "height": self.height,
            "objects": [{"box": o.box.as_list(), "cls": o.cls} for o in self.objects],
            "relations": [list(r) for r in self.relations],
        }

    @classmethod
    def from_record(cls, rec: dict) -> "SceneSpec":
        objects = [SceneObject(Box(*o["box"]), int(o["cls"])) for o in rec["objects"]]
        relations = [tuple(int(v) for v in r) for r in rec["relations"]]
        return cls(
            image_id=int(rec["id"]),
            width=int(rec["width"]),
            height=int(rec["height"]),
            objects=objects,
            relations=relations,
        )


@dataclass
class DatasetMeta:
    classes: list[str]
    predicates: list[str]
    canvas: int = 64

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump({"classes": self.classes, "predicates": self.predicates, "canvas": self.canvas}, fh, indent=1)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "DatasetMeta":
        try:
            with open(path, encoding="utf-8") as fh:
                rec = json.load(fh)
            return cls(classes=list(rec["classes"]), predicates=list(rec["predicates"]), canvas=int(rec["canvas"]))
        except (OSError, ValueError, KeyError) as exc:
            raise DataError(f"cannot load dataset meta {path}: {exc}") from exc


def save_scenes(scenes, path):
    with open(path, "w", encoding="utf-8") as fh:
        for s in scenes:
            fh.write(json.dumps(s.to_record(), separators=(",", ":")) + "\n")


def load_scenes(path):
    scenes = []
    try:
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.strip()
                if not line:
                    continue
                try:
                    scenes.append(SceneSpec.from_record(json.loads(line)))
                except (ValueError, KeyError, TypeError) as exc:
                    raise DataError(f"{path}:{lineno}: bad scene record: {exc}") from exc
    except OSError as exc:
        raise DataError(f"cannot read scenes file {path}: {exc}") from exc
    return scenes


# ---------------------------------------------------------------------------
# grammar


def _applicable_predicates(a: Box, b: Box, names) -> list[str]:
    """Predicates that hold for ordered pair (a, b), by the corpus grammar."""
    acx, acy = a.center()
    bcx, bcy = b.center()
    out = []
    if "left_of" in names and acx + a.w / 2 <= bcx:
        out.append("left_of")
    if "above" in names and acy + a.h / 2 <= bcy:
        out.append("above")
    if "below" in names and acy - a.h / 2 >= bcy:
        out.append("below")
    if "inside" in names and a.x >= b.x and a.y >= b.y and a.x + a.w <= b.x + b.w and a.y + a.h <= b.y + b.h:
        out.append("inside")
    if "near" in names and math.hypot(acx - bcx, acy - bcy) < (a.w + a.h + b.w + b.h) / 3.0:
        out.append("near")
    if "beside" in names and iou(a, b) == 0.0 and abs(acy - bcy) < (a.h + b.h) / 2:
        out.append("beside")
    return out


def sample_scene(rng, meta: DatasetMeta, image_id: int, max_objects: int = 5) -> SceneSpec:
    canvas = meta.canvas
    n_obj = int(rng.integers(2, max_objects + 1))
    objects = []
    for _ in range(n_obj):
        w = float(rng.uniform(10, 26))
        h = float(rng.uniform(10, 26))
        x = float(rng.uniform(0, canvas - w))
        y = float(rng.uniform(0, canvas - h))
        objects.append(SceneObject(Box(round(x, 2), round(y, 2), round(w, 2), round(h, 2)), int(rng.integers(len(meta.classes)))))

    candidates = []
    for i in range(n_obj):
        for j in range(n_obj):
            if i == j:
                continue
            preds = _applicable_predicates(objects[i].box, objects[j].box, meta.predicates)
            if preds:
                # one predicate per ordered pair keeps classification targets unique
                pick = preds[int(rng.integers(len(preds)))]
                candidates.append((i, meta.predicates.index(pick), j))
    rng.shuffle(candidates)
    n_rel = min(len(candidates), int(rng.integers(2, 7)))
    relations = sorted(candidates[:n_rel])
    return SceneSpec(image_id=image_id, width=canvas, height=canvas, objects=objects, relations=relations)


# ---------------------------------------------------------------------------
# rendering


def class_color(cls: int) -> np.ndarray:
    """Fixed palette color for a class, RGB in [-1, 1]."""
    hue = (cls * 0.6180339887498949) % 1.0
    r, g, b = colorsys.hsv_to_rgb(hue, 0.7, 0.9)
    return np.array([r, g, b]) * 2.0 - 1.0


BACKGROUND = np.array([-0.85, -0.85, -0.8])


def render_scene(scene: SceneSpec, size: int) -> np.ndarray:
    """(3, size, size) flat-rectangle rendering, values in [-1, 1].

    Boxes are drawn in decreasing area order so smaller objects stay visible;
    ties draw in index order.
    """
    img = np.empty((3, size, size), dtype=np.float64)
    img[:] = BACKGROUND[:, None, None]
    scale = size / scene.width
    order = sorted(range(len(scene.objects)), key=lambda i: (-scene.objects[i].box.area, i))
    for i in order:
        box, cls = scene.objects[i]
        x0 = max(0, int(round(box.x * scale)))
        y0 = max(0, int(round(box.y * scale)))
        x1 = min(size, int(round((box.x + box.w) * scale)))
        y1 = min(size, int(round((box.y + box.h) * scale)))
        if x1 <= x0 or y1 <= y0:
            continue
        img[:, y0:y1, x0:x1] = class_color(cls)[:, None, None]
    return img


# ---------------------------------------------------------------------------
# knowledge triples consistent with the grammar


def build_kb_rows(scenes, meta: DatasetMeta):
    """(head, relation, tail, weight) rows derived from the corpus.

    Every (subject class, predicate, object class) combination observed in
    the scenes becomes a triple weighted by its occurrence count, plus one
    generic IsA fact per class so retrieval is never empty.
    """
    counts: dict[tuple[str, str, str], float] = {}
    for scene in scenes:
        for si, pid, oi in scene.relations:
            key = (
                meta.classes[scene.objects[si].cls],
                meta.predicates[pid],
                meta.classes[scene.objects[oi].cls],
            )
            counts[key] = counts.get(key, 0.0) + 1.0
    rows = [(h, r, t, w) for (h, r, t), w in sorted(counts.items())]
    for cls in meta.classes:
        rows.append((cls, "IsA", "object", 0.5))
    return rows


def write_triples_tsv(rows, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("# head\trelation\ttail\tweight\n")
        for h, r, t, w in rows:
            fh.write(f"{h}\t{r}\t{t}\t{w:g}\n")


def synth_dataset(out_dir, n_images: int, n_classes: int, n_predicates: int, seed: int, max_objects: int = 5):
    """Write scenes.jsonl, meta.json, kb.tsv and 64x64 PPM renders."""
    from . import imggen  # PPM IO lives with the image branch

    if n_classes > len(CLASS_WORDS) or n_predicates > len(PREDICATE_WORDS):
        raise DataError(
            f"at most {len(CLASS_WORDS)} classes / {len(PREDICATE_WORDS)} predicates supported"
        )
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "images").mkdir(exist_ok=True)
    meta = DatasetMeta(classes=CLASS_WORDS[:n_classes], predicates=PREDICATE_WORDS[:n_predicates])
    rng = np.random.default_rng(np.random.SeedSequence([seed, 90211]))
    scenes = [sample_scene(rng, meta, image_id=i, max_objects=max_objects) for i in range(n_images)]
    meta.save(out_dir / "meta.json")
    save_scenes(scenes, out_dir / "scenes.jsonl")
    write_triples_tsv(build_kb_rows(scenes, meta), out_dir / "kb.tsv")
    for scene in scenes:
        imggen.write_ppm(out_dir / "images" / f"img_{scene.image_id:04d}.ppm", render_scene(scene, meta.canvas))
    return meta, scenes
