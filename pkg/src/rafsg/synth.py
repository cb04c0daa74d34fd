"""Seeded synthetic scene-graph datasets for round-trip experiments."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .model import BBox, Dataset, GtObject, GtRelation, SceneGraph, SceneGraphError, Vocab

COLLISION_STRIDE = 4
MIN_BOX_SIDE = 8.0


@dataclass(frozen=True)
class SynthConfig:
    n_images: int = 20
    image_size: tuple[int, int] = (512, 512)
    n_classes: int = 10
    n_predicates: int = 5
    objects_per_image: tuple[int, int] = (5, 8)
    relations_per_image: tuple[int, int] = (4, 8)
    min_center_separation: float = 0.0
    allow_duplicate_edges: bool = False
    duplicate_edge_rate: float = 0.3
    allow_center_collisions: bool = False
    zipf_exponent: float | None = None
    path_clearance: float | None = None
    min_path_angle: float = 30.0
    rng_seed: int = 0

    def __post_init__(self):
        for lo, hi in (self.objects_per_image, self.relations_per_image):
            if lo < 0 or lo > hi:
                raise SceneGraphError(f"empty range [{lo}, {hi}]")
        if self.min_center_separation < 0:
            raise SceneGraphError("min_center_separation must be >= 0")
        if self.n_classes < 1 or self.n_predicates < 1 or self.n_images < 0:
            raise SceneGraphError("need n_classes, n_predicates >= 1 and n_images >= 0")
        w, h = self.image_size
        if w < 2 * MIN_BOX_SIDE or h < 2 * MIN_BOX_SIDE:
            raise SceneGraphError(f"image size {self.image_size} too small")
        if not 0 <= self.duplicate_edge_rate <= 1:
            raise SceneGraphError("duplicate_edge_rate must be in [0, 1]")

    def to_dict(self) -> dict:
        return asdict(self)


def clean_config(**overrides) -> SynthConfig:
    """Scenes whose GT fields do not interfere, so a GT round trip is lossless.

    Centers stay 96 px apart: no two objects share or touch a stride-32 cell,
    and same-class boxes stay under 0.5 IoU. Relation corridors keep 8 px
    clear of each other and of unrelated centers, and edges meeting at an
    object diverge by at least 45 degrees.
    """
    params = dict(min_center_separation=96.0, path_clearance=8.0, min_path_angle=45.0)
    params.update(overrides)
    return SynthConfig(**params)


def _predicate_weights(cfg: SynthConfig) -> np.ndarray:
    if cfg.zipf_exponent is None:
        return np.full(cfg.n_predicates, 1.0 / cfg.n_predicates)
    w = 1.0 / np.arange(1, cfg.n_predicates + 1) ** cfg.zipf_exponent
    return w / w.sum()


def _place_objects(rng, cfg: SynthConfig, n: int, image_id: str) -> list[GtObject]:
    width, height = cfg.image_size
    placed: list[GtObject] = []
    cells = set()
    for _ in range(n):
        for _attempt in range(10 * n):
            bw = rng.uniform(MIN_BOX_SIDE, width / 2)
            bh = rng.uniform(MIN_BOX_SIDE, height / 2)
            cx = rng.uniform(bw / 2, width - bw / 2)
            cy = rng.uniform(bh / 2, height - bh / 2)
            x0, y0 = round(cx - bw / 2, 2), round(cy - bh / 2, 2)
            x1, y1 = round(cx + bw / 2, 2), round(cy + bh / 2, 2)
            x0, y0 = max(x0, 0.0), max(y0, 0.0)
            x1, y1 = min(x1, float(width)), min(y1, float(height))
            box = BBox(x0, y0, x1, y1)
            c = box.center
            if any(
                math.dist(c, o.box.center) < cfg.min_center_separation for o in placed
            ):
                continue
            cell = (math.floor(c[0] / COLLISION_STRIDE), math.floor(c[1] / COLLISION_STRIDE))
            if not cfg.allow_center_collisions and cell in cells:
                continue
            cells.add(cell)
            placed.append(GtObject(box, int(rng.integers(cfg.n_classes))))
            break
        else:
            raise SceneGraphError(
                f"image {image_id!r}: infeasible placement of {n} objects "
                f"(separation {cfg.min_center_separation}) after {10 * n} attempts"
            )
    return placed


def _point_segment_distance(p, a, b) -> float:
    ab = np.subtract(b, a)
    t = np.clip(np.dot(np.subtract(p, a), ab) / np.dot(ab, ab), 0.0, 1.0)
    return float(np.hypot(*(np.add(a, t * ab) - p)))


def _segment_distance(a, b, c, d) -> float:
    def cross(o, p, q):
        return (p[0] - o[0]) * (q[1] - o[1]) - (p[1] - o[1]) * (q[0] - o[0])

    d1, d2 = cross(c, d, a), cross(c, d, b)
    d3, d4 = cross(a, b, c), cross(a, b, d)
    if d1 * d2 < 0 and d3 * d4 < 0:
        return 0.0
    return min(
        _point_segment_distance(a, c, d),
        _point_segment_distance(b, c, d),
        _point_segment_distance(c, a, b),
        _point_segment_distance(d, a, b),
    )


def _corridor(objects, i, j) -> float:
    """Half-width in input pixels of the RAF path between i and j at stride 4."""
    k = math.sqrt(2.0) - 1.0
    radii = []
    for o in (objects[i], objects[j]):
        sw, sh = o.box.size
        radii += [max(1, math.floor(k * s / COLLISION_STRIDE + 1)) for s in (sw, sh)]
    return COLLISION_STRIDE * min(radii)


def paths_clear(objects, pairs, clearance: float, min_angle: float) -> bool:
    """True when relation corridors keep apart from each other and from
    unrelated object centers.

    Corridors sharing an endpoint must leave it at least ``min_angle``
    degrees apart; all other corridor pairs, and every third object center,
    must stay ``clearance`` pixels clear of a corridor.
    """
    centers = [o.box.center for o in objects]
    widths = {pr: _corridor(objects, *pr) for pr in pairs}
    for (i, j) in pairs:
        for k, c in enumerate(centers):
            if k not in (i, j):
                if _point_segment_distance(c, centers[i], centers[j]) <= widths[i, j] + clearance:
                    return False
    for a in range(len(pairs)):
        for b in range(a + 1, len(pairs)):
            (i, j), (k, l) = pairs[a], pairs[b]
            shared = {i, j} & {k, l}
            if shared:
                s = shared.pop()
                u = np.subtract(centers[j if i == s else i], centers[s])
                v = np.subtract(centers[l if k == s else k], centers[s])
                cos = np.dot(u, v) / (np.hypot(*u) * np.hypot(*v))
                if math.degrees(math.acos(np.clip(cos, -1.0, 1.0))) < min_angle:
                    return False
            else:
                gap = _segment_distance(centers[i], centers[j], centers[k], centers[l])
                if gap <= widths[i, j] + widths[k, l] + clearance:
                    return False
    return True


def _draw_relations(rng, cfg: SynthConfig, objects) -> list[GtRelation] | None:
    n_objects = len(objects)
    pairs = [(i, j) for i in range(n_objects) for j in range(i + 1, n_objects)]
    lo, hi = cfg.relations_per_image
    count = min(int(rng.integers(lo, hi + 1)), len(pairs))
    weights = _predicate_weights(cfg)
    if cfg.path_clearance is None:
        chosen = [pairs[int(t)] for t in rng.choice(len(pairs), size=count, replace=False)] if count else []
    else:
        chosen = []
        for t in rng.permutation(len(pairs)):
            if len(chosen) == count:
                break
            trial = chosen + [pairs[int(t)]]
            if paths_clear(objects, trial, cfg.path_clearance, cfg.min_path_angle):
                chosen = trial
        if len(chosen) < min(lo, len(pairs)):
            return None
    rels = []
    for i, j in chosen:
        if rng.random() < 0.5:
            i, j = j, i
        rels.append(GtRelation(i, j, int(rng.choice(cfg.n_predicates, p=weights))))
    if cfg.allow_duplicate_edges:
        for r in list(rels):
            if rng.random() < cfg.duplicate_edge_rate:
                rels.append(GtRelation(r.subject_idx, r.object_idx, int(rng.choice(cfg.n_predicates, p=weights))))
    return rels


def generate(cfg: SynthConfig) -> Dataset:
    """Deterministic dataset for a fixed ``rng_seed``.

    Without duplicate edges every unordered object pair carries at most one
    relation; with them, a fraction ``duplicate_edge_rate`` of edges gets a
    second predicate on the same ordered pair.
    """
    rng = np.random.default_rng(cfg.rng_seed)
    vocab = Vocab(
        tuple(f"object_{c}" for c in range(cfg.n_classes)),
        tuple(f"predicate_{p}" for p in range(cfg.n_predicates)),
    )
    images = []
    width, height = cfg.image_size
    for k in range(cfg.n_images):
        image_id = f"synth_{k:05d}"
        lo, hi = cfg.objects_per_image
        n = int(rng.integers(lo, hi + 1))
        for _attempt in range(10 * max(n, 1)):
            objects = _place_objects(rng, cfg, n, image_id)
            relations = _draw_relations(rng, cfg, objects)
            if relations is not None:
                break
        else:
            raise SceneGraphError(
                f"image {image_id!r}: no relation set with path clearance {cfg.path_clearance}"
            )
        scene = SceneGraph(image_id, width, height, tuple(objects), tuple(relations))
        scene.validate(vocab)
        images.append(scene)
    return Dataset(vocab, tuple(images))


def validate_generated(dataset: Dataset, cfg: SynthConfig) -> None:
    """Raise SceneGraphError if any generation constraint is violated."""
    width, height = cfg.image_size
    for scene in dataset:
        scene.validate(dataset.vocab)
        if (scene.image_width, scene.image_height) != (width, height):
            raise SceneGraphError(f"image {scene.image_id!r}: wrong image size")
        centers = [o.box.center for o in scene.objects]
        for a in range(len(centers)):
            for b in range(a + 1, len(centers)):
                if math.dist(centers[a], centers[b]) < cfg.min_center_separation:
                    raise SceneGraphError(f"image {scene.image_id!r}: centers {a},{b} too close")
        if not cfg.allow_center_collisions:
            cells = {
                (math.floor(x / COLLISION_STRIDE), math.floor(y / COLLISION_STRIDE))
                for x, y in centers
            }
            if len(cells) != len(centers):
                raise SceneGraphError(f"image {scene.image_id!r}: center collision")
        if not cfg.allow_duplicate_edges:
            pairs = [frozenset((r.subject_idx, r.object_idx)) for r in scene.relations]
            if len(set(pairs)) != len(pairs):
                raise SceneGraphError(f"image {scene.image_id!r}: duplicate edge")
        for o in scene.objects:
            sw, sh = o.box.size
            # Two-decimal rounding and image clipping can shave a box edge.
            if sw > width / 2 + 0.02 or sh > height / 2 + 0.02:
                raise SceneGraphError(f"image {scene.image_id!r}: box too large")
