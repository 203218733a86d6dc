"""Object proposals and subgraph clustering.

The region-proposal backbone is replaced by a deterministic stub that reads
ground-truth boxes from a synthetic scene (optionally jittered by a seeded
generator) and fabricates features from the box geometry and class identity.
Pairs of proposals share a union-box subgraph; candidate union boxes are
merged by greedy NMS so every ordered object pair keeps exactly one
representative subgraph.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import numcore as nc
from .errors import DataError

REGION_CLASS = -1  # pseudo class id used when featurizing a union region


@dataclass(frozen=True)
class Box:
    """Axis-aligned rectangle: top-left corner plus width/height, in pixels."""

    x: float
    y: float
    w: float
    h: float

    def __post_init__(self):
        if self.w <= 0 or self.h <= 0:
            raise ValueError(f"box must have positive size, got w={self.w}, h={self.h}")

    @property
    def area(self) -> float:
        return self.w * self.h

    def as_list(self):
        return [self.x, self.y, self.w, self.h]

    def center(self):
        return (self.x + self.w / 2.0, self.y + self.h / 2.0)


@dataclass
class ObjectProposal:
    box: Box
    feature: nc.Tensor  # (D,)
    score: float
    label: int | None = None

    def __post_init__(self):
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"proposal score must be in [0,1], got {self.score}")


@dataclass
class SubgraphProposal:
    box: Box
    feature: nc.Tensor  # (D, Ks, Ks)
    members: set[int] = field(default_factory=set)
    score: float = 0.0


@dataclass(frozen=True)
class CandidateTriple:
    """Ordered object pair (subj, obj) with its representative subgraph."""

    subj: int
    obj: int
    subgraph: int


def union_box(a: Box, b: Box) -> Box:
    if a == b:
        return a
    x0 = min(a.x, b.x)
    y0 = min(a.y, b.y)
    x1 = max(a.x + a.w, b.x + b.w)
    y1 = max(a.y + a.h, b.y + b.h)
    return Box(x0, y0, x1 - x0, y1 - y0)


def iou(a: Box, b: Box) -> float:
    if a == b:
        return 1.0
    ix = max(0.0, min(a.x + a.w, b.x + b.w) - max(a.x, b.x))
    iy = max(0.0, min(a.y + a.h, b.y + b.h) - max(a.y, b.y))
    inter = ix * iy
    if inter <= 0.0:
        return 0.0
    # rounding can push the ratio to 1 or a few ulps past it for boxes that
    # are nearly identical; exact 1.0 is reserved for identical boxes
    return min(inter / (a.area + b.area - inter), float(np.nextafter(1.0, 0.0)))


def synth_features(box: Box, class_id: int, seed: int, dim: int, canvas: float = 64.0) -> nc.Tensor:
    """Deterministic stand-in for pooled region features.

    A fixed per-class base vector (drawn from a seeded stream) plus a smooth
    projection of the normalized box geometry.
    """
    base_rng = np.random.default_rng(np.random.SeedSequence([seed, 40129, class_id + 1_000_000]))
    base = base_rng.normal(0.0, 0.5, size=dim)
    geo_rng = np.random.default_rng(np.random.SeedSequence([seed, 74683]))
    proj = geo_rng.normal(0.0, 0.3, size=(dim, 8))
    cx, cy = box.center()
    g = np.array(
        [
            cx / canvas,
            cy / canvas,
            box.w / canvas,
            box.h / canvas,
            np.sin(np.pi * cx / canvas),
            np.cos(np.pi * cy / canvas),
            np.sin(np.pi * box.w / canvas),
            np.cos(np.pi * box.h / canvas),
        ]
    )
    return nc.Tensor(base + proj @ g)


def stub_proposals(scene, n: int, jitter: float = 0.0, seed: int = 0, dim: int = 32):
    """n object proposals from a scene's ground-truth boxes.

    With jitter 0 and n equal to the object count this returns exactly the
    annotated boxes. More proposals than objects cycle through the boxes;
    jitter perturbs geometry with a generator seeded by (seed, scene id),
    so identical inputs always give identical proposals.
    """
    if n < 2:
        raise DataError(f"need at least 2 proposals to form pairs, got n={n}")
    objs = scene.objects
    if not objs:
        raise DataError(f"scene {scene.image_id} has no objects")
    rng = np.random.default_rng(np.random.SeedSequence([seed, 55021, scene.image_id]))
    proposals = []
    for i in range(n):
        box, cls = objs[i % len(objs)]
        if jitter > 0.0:
            dx, dy, dw, dh = rng.normal(0.0, jitter, size=4)
            w = max(2.0, box.w * (1.0 + dw))
            h = max(2.0, box.h * (1.0 + dh))
            box = Box(box.x + dx * box.w, box.y + dy * box.h, w, h)
        else:
            rng.normal(0.0, 1.0, size=4)  # keep the stream position stable
        proposals.append(
            ObjectProposal(box=box, feature=synth_features(box, cls, seed, dim), score=1.0, label=cls)
        )
    return proposals


def nms(boxes, scores, thresh: float):
    """Greedy NMS; ties broken by lower original index.

    Returns (keep_indices, representative) where representative[i] is the
    index of the surviving box that suppressed i (itself if kept).
    """
    order = sorted(range(len(boxes)), key=lambda i: (-scores[i], i))
    rep = {}
    keep = []
    suppressed = set()
    for oi, i in enumerate(order):
        if i in suppressed:
            continue
        keep.append(i)
        rep[i] = i
        for j in order[oi + 1 :]:
            if j in suppressed:
                continue
            if iou(boxes[i], boxes[j]) >= thresh:
                suppressed.add(j)
                rep[j] = i
    return keep, rep


def build_subgraphs(objects, nms_thresh: float = 0.5, ks: int = 5, seed: int = 0):
    """Cluster the union boxes of all object pairs into subgraph proposals.

    One candidate per unordered pair, scored by the product of the member
    scores; greedy NMS merges each suppressed pair's members into its
    suppressor, so every ordered pair maps to exactly one surviving subgraph
    that contains both endpoints.
    """
    if not objects:
        raise DataError("build_subgraphs needs a non-empty object list")
    if len(objects) < 2:
        raise DataError("build_subgraphs needs at least 2 objects")
    pairs = []
    pair_boxes = []
    pair_scores = []
    for i in range(len(objects)):
        for j in range(i + 1, len(objects)):
            pairs.append((i, j))
            pair_boxes.append(union_box(objects[i].box, objects[j].box))
            pair_scores.append(objects[i].score * objects[j].score)

    keep, rep = nms(pair_boxes, pair_scores, nms_thresh)

    dim = objects[0].feature.shape[0]
    subgraphs = []
    index_of = {}
    for k in keep:
        members = set(pairs[k])
        index_of[k] = len(subgraphs)
        subgraphs.append(SubgraphProposal(box=pair_boxes[k], feature=None, members=members, score=pair_scores[k]))
    for p, (i, j) in enumerate(pairs):
        s = subgraphs[index_of[rep[p]]]
        s.members.update((i, j))

    for s in subgraphs:
        # the type contract requires the box to contain every member, so it
        # must grow over boxes merged in from suppressed pairs
        box = s.box
        for m in sorted(s.members):
            box = union_box(box, objects[m].box)
        s.box = box
        base = synth_features(box, REGION_CLASS, seed, dim)
        s.feature = nc.tile_spatial(base, ks, ks)

    candidates = []
    pair_to_sub = {pairs[p]: index_of[rep[p]] for p in range(len(pairs))}
    for (i, j), k in sorted(pair_to_sub.items()):
        candidates.append(CandidateTriple(subj=i, obj=j, subgraph=k))
        candidates.append(CandidateTriple(subj=j, obj=i, subgraph=k))
    return subgraphs, candidates
