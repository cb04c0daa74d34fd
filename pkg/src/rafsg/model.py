"""Core scene-graph types, dataset JSON ingestion and triplet frequency counts."""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable


class SceneGraphError(ValueError):
    """Raised when input data violates a scene-graph invariant."""


@dataclass(frozen=True)
class BBox:
    x0: float
    y0: float
    x1: float
    y1: float

    def __post_init__(self):
        coords = (self.x0, self.y0, self.x1, self.y1)
        if not all(math.isfinite(c) for c in coords):
            raise SceneGraphError(f"non-finite box {coords}")
        if min(coords) < 0:
            raise SceneGraphError(f"negative coordinate in box {coords}")
        if not (self.x0 < self.x1 and self.y0 < self.y1):
            raise SceneGraphError(f"degenerate box {coords}")

    @property
    def center(self) -> tuple[float, float]:
        return ((self.x0 + self.x1) / 2.0, (self.y0 + self.y1) / 2.0)

    @property
    def size(self) -> tuple[float, float]:
        return (self.x1 - self.x0, self.y1 - self.y0)

    @property
    def area(self) -> float:
        w, h = self.size
        return w * h

    def as_list(self) -> list[float]:
        return [self.x0, self.y0, self.x1, self.y1]


@dataclass(frozen=True)
class GtObject:
    box: BBox
    class_id: int


@dataclass(frozen=True)
class GtRelation:
    subject_idx: int
    object_idx: int
    predicate_id: int


@dataclass(frozen=True)
class Vocab:
    object_names: tuple[str, ...]
    predicate_names: tuple[str, ...]

    def __post_init__(self):
        if len(self.object_names) < 1 or len(self.predicate_names) < 1:
            raise SceneGraphError("vocab needs at least one object class and one predicate")

    @property
    def num_classes(self) -> int:
        return len(self.object_names)

    @property
    def num_predicates(self) -> int:
        return len(self.predicate_names)


@dataclass(frozen=True)
class SceneGraph:
    image_id: str
    image_width: int
    image_height: int
    objects: tuple[GtObject, ...] = ()
    relations: tuple[GtRelation, ...] = ()

    def validate(self, vocab: Vocab | None = None) -> None:
        """Check every invariant; raises SceneGraphError naming the image and the check."""

        def fail(msg):
            raise SceneGraphError(f"image {self.image_id!r}: {msg}")

        if self.image_width <= 0 or self.image_height <= 0:
            fail(f"invalid image size {self.image_width}x{self.image_height}")
        for k, obj in enumerate(self.objects):
            b = obj.box
            if b.x1 > self.image_width or b.y1 > self.image_height:
                fail(f"object {k} box {b.as_list()} outside image bounds")
            if obj.class_id < 0 or (vocab is not None and obj.class_id >= vocab.num_classes):
                fail(f"object {k} class id {obj.class_id} out of range")
        n = len(self.objects)
        for k, rel in enumerate(self.relations):
            if not (0 <= rel.subject_idx < n and 0 <= rel.object_idx < n):
                fail(f"relation {k} index out of range ({rel.subject_idx}, {rel.object_idx})")
            if rel.subject_idx == rel.object_idx:
                fail(f"relation {k} is a self-relation on object {rel.subject_idx}")
            if rel.predicate_id < 0 or (
                vocab is not None and rel.predicate_id >= vocab.num_predicates
            ):
                fail(f"relation {k} predicate id {rel.predicate_id} out of range")

    def triplets(self) -> list[tuple[int, int, int]]:
        """(subject class, predicate, object class) for every relation."""
        return [
            (
                self.objects[r.subject_idx].class_id,
                r.predicate_id,
                self.objects[r.object_idx].class_id,
            )
            for r in self.relations
        ]


@dataclass(frozen=True)
class Dataset:
    vocab: Vocab
    images: tuple[SceneGraph, ...]

    def __len__(self):
        return len(self.images)

    def __iter__(self):
        return iter(self.images)


@dataclass(frozen=True)
class ScaleConfig:
    stride: int
    box_area_range: tuple[float, float]
    raf_length_range: tuple[float, float]

    def __post_init__(self):
        if self.stride < 1 or self.stride & (self.stride - 1):
            raise SceneGraphError(f"stride must be a power of two, got {self.stride}")
        for lo, hi in (self.box_area_range, self.raf_length_range):
            if not lo < hi:
                raise SceneGraphError(f"empty range [{lo}, {hi}]")

    def to_dict(self) -> dict:
        return {
            "stride": self.stride,
            "box_area_range": list(self.box_area_range),
            "raf_length_range": list(self.raf_length_range),
        }


def _ranges(bounds: Iterable[float]) -> list[tuple[float, float]]:
    b = list(bounds)
    return list(zip(b[:-1], b[1:]))


def make_scales(strides: list[int], bounds: list[float]) -> tuple[ScaleConfig, ...]:
    """Build a multi-scale config from side-length bounds; areas are the squared bounds."""
    if len(bounds) != len(strides) + 1:
        raise SceneGraphError("need one more bound than strides")
    if any(a >= b for a, b in zip(strides, strides[1:])):
        raise SceneGraphError("strides must be strictly increasing")
    return tuple(
        ScaleConfig(s, (float(lo) ** 2, float(hi) ** 2), (float(lo), float(hi)))
        for s, (lo, hi) in zip(strides, _ranges(bounds))
    )


SCALE_PRESETS: dict[str, tuple[ScaleConfig, ...]] = {
    "1s": make_scales([4], [0, 1024]),
    "4s": make_scales([4, 8, 16, 32], [0, 32, 64, 128, 512]),
    "5s": make_scales([8, 16, 32, 64, 128], [0, 64, 128, 256, 512, 1024]),
}


def scale_preset(name: str, stride: int | None = None) -> tuple[ScaleConfig, ...]:
    if name not in SCALE_PRESETS:
        raise SceneGraphError(f"unknown scale preset {name!r}; choose from {sorted(SCALE_PRESETS)}")
    scales = SCALE_PRESETS[name]
    if stride is not None:
        if len(scales) != 1:
            raise SceneGraphError("--stride only applies to the single-scale preset")
        s = scales[0]
        scales = (ScaleConfig(stride, s.box_area_range, s.raf_length_range),)
    return scales


# -- dataset JSON -----------------------------------------------------------


def _parse_image(raw: dict, vocab: Vocab) -> SceneGraph:
    image_id = str(raw.get("id", "?"))
    try:
        objects = []
        for k, o in enumerate(raw["objects"]):
            x0, y0, x1, y1 = (float(v) for v in o["bbox"])
            try:
                box = BBox(x0, y0, x1, y1)
            except SceneGraphError as e:
                raise SceneGraphError(f"image {image_id!r}: object {k}: {e}") from None
            objects.append(GtObject(box, int(o["class"])))
        relations = tuple(
            GtRelation(int(r["subject"]), int(r["object"]), int(r["predicate"]))
            for r in raw["relations"]
        )
        scene = SceneGraph(
            image_id, int(raw["width"]), int(raw["height"]), tuple(objects), relations
        )
    except (KeyError, TypeError, ValueError) as e:
        if isinstance(e, SceneGraphError):
            raise
        raise SceneGraphError(f"image {image_id!r}: malformed record ({e!r})") from None
    scene.validate(vocab)
    return scene


def dataset_from_dict(raw: dict) -> Dataset:
    try:
        vocab = Vocab(tuple(raw["vocab"]["objects"]), tuple(raw["vocab"]["predicates"]))
        images = raw["images"]
    except (KeyError, TypeError) as e:
        raise SceneGraphError(f"missing top-level field {e}") from None
    return Dataset(vocab, tuple(_parse_image(im, vocab) for im in images))


def load_dataset(path: str | Path) -> Dataset:
    text = Path(path).read_text(encoding="utf-8")
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as e:
        lines = text.splitlines()
        line = lines[e.lineno - 1] if e.lineno <= len(lines) else ""
        raise SceneGraphError(
            f"{path}: JSON parse error at line {e.lineno} col {e.colno}: {e.msg}\n  {line[:120]}"
        ) from None
    return dataset_from_dict(raw)


def dataset_to_dict(dataset: Dataset) -> dict:
    return {
        "vocab": {
            "objects": list(dataset.vocab.object_names),
            "predicates": list(dataset.vocab.predicate_names),
        },
        "images": [
            {
                "id": s.image_id,
                "width": s.image_width,
                "height": s.image_height,
                "objects": [{"bbox": o.box.as_list(), "class": o.class_id} for o in s.objects],
                "relations": [
                    {"subject": r.subject_idx, "predicate": r.predicate_id, "object": r.object_idx}
                    for r in s.relations
                ],
            }
            for s in dataset.images
        ],
    }


def dumps_dataset(dataset: Dataset) -> str:
    return json.dumps(dataset_to_dict(dataset), indent=1) + "\n"


# -- frequency statistics ---------------------------------------------------


@dataclass(frozen=True)
class FrequencyTable:
    counts: dict[tuple[int, int, int], int] = field(default_factory=dict)

    def __getitem__(self, key: tuple[int, int, int]) -> int:
        return self.counts.get(key, 0)

    @property
    def total(self) -> int:
        return sum(self.counts.values())

    def signatures(self) -> frozenset[tuple[int, int, int]]:
        return frozenset(self.counts)


def build_frequency_table(dataset: Iterable[SceneGraph]) -> FrequencyTable:
    counter: Counter = Counter()
    for scene in dataset:
        counter.update(scene.triplets())
    return FrequencyTable(dict(sorted(counter.items())))
