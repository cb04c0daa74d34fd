"""Scene graph -> dense training targets (heatmaps, offsets, sizes, RAFs)."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .model import GtObject, ScaleConfig, SceneGraph, SceneGraphError

logger = logging.getLogger(__name__)

# Slack for the path-region inequalities; absorbs rounding in e . (p - o).
REGION_EPS = 1e-9

MAP_KINDS = ("centers", "offsets", "sizes", "rafs", "rafw", "mask")


@dataclass(frozen=True)
class GaussianSpread:
    radius_x: int
    radius_y: int

    @property
    def sigma_x(self) -> float:
        return self.radius_x / 3.0

    @property
    def sigma_y(self) -> float:
        return self.radius_y / 3.0


@dataclass
class DenseTargets:
    scale: ScaleConfig
    centers: np.ndarray  # (C, h, w)
    offsets: np.ndarray  # (2, h, w)
    sizes: np.ndarray  # (2, h, w), feature-level units
    rafs: np.ndarray  # (2P, h, w), channel 2p is x, 2p+1 is y
    raf_weights: np.ndarray  # (P, h, w)
    reg_mask: np.ndarray  # (1, h, w)
    skipped_relations: list[int] = field(default_factory=list)

    @property
    def stride(self) -> int:
        return self.scale.stride

    @property
    def shape(self) -> tuple[int, int]:
        return self.centers.shape[1:]

    def maps(self) -> dict[str, np.ndarray]:
        return {
            "centers": self.centers,
            "offsets": self.offsets,
            "sizes": self.sizes,
            "rafs": self.rafs,
            "rafw": self.raf_weights,
            "mask": self.reg_mask,
        }


@dataclass(frozen=True)
class ScaleAssignment:
    objects: tuple[int, ...]
    relations: tuple[int, ...]


def feature_shape(image_width: int, image_height: int, stride: int) -> tuple[int, int]:
    h, w = image_height // stride, image_width // stride
    if h < 1 or w < 1:
        raise SceneGraphError(
            f"image {image_width}x{image_height} too small for stride {stride}"
        )
    return h, w


def gaussian_spread(object_size, stride) -> GaussianSpread:
    sw, sh = object_size
    if not (sw > 0 and sh > 0):
        raise SceneGraphError(f"object size must be positive, got {object_size}")
    k = math.sqrt(2.0) - 1.0
    a = max(1, math.floor(k * sw / stride + 1))
    b = max(1, math.floor(k * sh / stride + 1))
    return GaussianSpread(a, b)


def quantize(point, stride, shape) -> tuple[int, int]:
    """Integer feature pixel (x, y) holding an input-pixel point.

    Points on the far edge of an image whose size is not a multiple of the
    stride would land one past the map; those clamp to the last column/row.
    """
    h, w = shape
    qx = min(int(math.floor(point[0] / stride)), w - 1)
    qy = min(int(math.floor(point[1] / stride)), h - 1)
    return qx, qy


def encode_centers(objects: list[GtObject], scale: ScaleConfig, num_classes: int, shape):
    """Max-combined per-class Gaussian heatmaps and the quantized centers."""
    h, w = shape
    centers = np.zeros((num_classes, h, w), dtype=np.float64)
    quantized = []
    for obj in objects:
        qx, qy = quantize(obj.box.center, scale.stride, shape)
        assert 0 <= qx < w and 0 <= qy < h
        spread = gaussian_spread(obj.box.size, scale.stride)
        x0, x1 = max(0, qx - spread.radius_x), min(w - 1, qx + spread.radius_x)
        y0, y1 = max(0, qy - spread.radius_y), min(h - 1, qy + spread.radius_y)
        dx = np.arange(x0, x1 + 1) - qx
        dy = np.arange(y0, y1 + 1) - qy
        g = np.exp(
            -(dx[None, :] ** 2) / (2 * spread.sigma_x**2)
            - (dy[:, None] ** 2) / (2 * spread.sigma_y**2)
        )
        window = centers[obj.class_id, y0 : y1 + 1, x0 : x1 + 1]
        np.maximum(window, g, out=window)
        quantized.append((qx, qy))
    return centers, quantized


def encode_regression(objects: list[GtObject], scale: ScaleConfig, shape):
    h, w = shape
    offsets = np.zeros((2, h, w), dtype=np.float64)
    sizes = np.zeros((2, h, w), dtype=np.float64)
    mask = np.zeros((1, h, w), dtype=np.float64)
    owner: dict[tuple[int, int], tuple[float, int]] = {}
    tau = scale.stride
    for k, obj in enumerate(objects):
        qx, qy = quantize(obj.box.center, tau, shape)
        rank = (obj.box.area, k)
        if (qx, qy) in owner and owner[qx, qy] <= rank:
            continue  # smaller object already owns this pixel
        owner[qx, qy] = rank
        cx, cy = obj.box.center
        sw, sh = obj.box.size
        offsets[:, qy, qx] = (cx / tau - qx, cy / tau - qy)
        sizes[:, qy, qx] = (sw / tau, sh / tau)
        mask[0, qy, qx] = 1.0
    return offsets, sizes, mask


def encode_rafs(scene: SceneGraph, relations, spreads, scale: ScaleConfig, num_predicates, shape):
    """Relation affinity fields and their loss weights.

    ``relations`` are indices into ``scene.relations``; ``spreads`` maps
    object index -> GaussianSpread at this scale. Returns
    ``(rafs, raf_weights, skipped)`` where ``skipped`` lists relations whose
    endpoints share a feature pixel.
    """
    h, w = shape
    acc = np.zeros((num_predicates, 2, h, w), dtype=np.float64)
    count = np.zeros((num_predicates, h, w), dtype=np.int64)
    weights = np.zeros((num_predicates, h, w), dtype=np.float64)
    skipped = []
    for r_idx in relations:
        rel = scene.relations[r_idx]
        si, oj = scene.objects[rel.subject_idx], scene.objects[rel.object_idx]
        ox, oy = quantize(si.box.center, scale.stride, shape)
        tx, ty = quantize(oj.box.center, scale.stride, shape)
        length = math.hypot(tx - ox, ty - oy)
        if length == 0:
            skipped.append(r_idx)
            continue
        ex, ey = (tx - ox) / length, (ty - oy) / length
        si_spread, oj_spread = spreads[rel.subject_idx], spreads[rel.object_idx]
        half_width = min(
            si_spread.radius_x, si_spread.radius_y, oj_spread.radius_x, oj_spread.radius_y
        )
        # Axis-aligned bounds of the rectangle, then the exact region test.
        px, py = half_width * abs(ey), half_width * abs(ex)
        x0 = max(0, math.floor(min(ox, tx) - px))
        x1 = min(w - 1, math.ceil(max(ox, tx) + px))
        y0 = max(0, math.floor(min(oy, ty) - py))
        y1 = min(h - 1, math.ceil(max(oy, ty) + py))
        xs = np.arange(x0, x1 + 1, dtype=np.float64)[None, :] - ox
        ys = np.arange(y0, y1 + 1, dtype=np.float64)[:, None] - oy
        along = ex * xs + ey * ys
        perp = np.abs(-ey * xs + ex * ys)
        inside = (
            (along >= -REGION_EPS)
            & (along <= length + REGION_EPS)
            & (perp <= half_width + REGION_EPS)
        )
        p = rel.predicate_id
        acc[p, 0, y0 : y1 + 1, x0 : x1 + 1] += ex * inside
        acc[p, 1, y0 : y1 + 1, x0 : x1 + 1] += ey * inside
        count[p, y0 : y1 + 1, x0 : x1 + 1] += inside
        sigma = half_width / 3.0
        wgt = np.where(perp <= 0.5, 1.0, np.exp(-(perp**2) / (2 * sigma**2))) * inside
        win = weights[p, y0 : y1 + 1, x0 : x1 + 1]
        np.maximum(win, wgt, out=win)
    if skipped:
        logger.warning(
            "image %s stride %d: skipped %d relation(s) with coincident centers",
            scene.image_id,
            scale.stride,
            len(skipped),
        )
    covered = count > 0
    acc[:, 0][covered] /= count[covered]
    acc[:, 1][covered] /= count[covered]
    rafs = acc.reshape(2 * num_predicates, h, w)
    return rafs, weights, skipped


def _range_index(value: float, ranges: list[tuple[float, float]]) -> list[int]:
    return [k for k, (lo, hi) in enumerate(ranges) if lo <= value <= hi]


def select_scales(value: float, ranges: list[tuple[float, float]]) -> tuple[list[int], bool]:
    """Indices of closed ranges containing ``value``; out-of-range values clamp.

    Returns ``(indices, clamped)``.
    """
    hit = _range_index(value, ranges)
    if hit:
        return hit, False
    if value > max(hi for _, hi in ranges):
        return [max(range(len(ranges)), key=lambda k: ranges[k][1])], True
    return [min(range(len(ranges)), key=lambda k: ranges[k][0])], True


def relation_length(scene: SceneGraph, rel) -> float:
    (sx, sy) = scene.objects[rel.subject_idx].box.center
    (ox, oy) = scene.objects[rel.object_idx].box.center
    return math.hypot(ox - sx, oy - sy)


def assign_scales(scene: SceneGraph, scales) -> list[ScaleAssignment]:
    area_ranges = [s.box_area_range for s in scales]
    length_ranges = [s.raf_length_range for s in scales]
    objs: list[list[int]] = [[] for _ in scales]
    rels: list[list[int]] = [[] for _ in scales]
    clamped = 0
    for i, obj in enumerate(scene.objects):
        ks, c = select_scales(obj.box.area, area_ranges)
        clamped += c
        for k in ks:
            objs[k].append(i)
    for r, rel in enumerate(scene.relations):
        ks, c = select_scales(relation_length(scene, rel), length_ranges)
        clamped += c
        for k in ks:
            rels[k].append(r)
    if clamped and len(scales) > 1:
        logger.info("image %s: %d instance(s) clamped to an edge scale", scene.image_id, clamped)
    return [ScaleAssignment(tuple(o), tuple(r)) for o, r in zip(objs, rels)]


def encode(scene: SceneGraph, scales, num_classes: int, num_predicates: int) -> list[DenseTargets]:
    out = []
    for scale, assigned in zip(scales, assign_scales(scene, scales)):
        shape = feature_shape(scene.image_width, scene.image_height, scale.stride)
        objects = [scene.objects[i] for i in assigned.objects]
        centers, _ = encode_centers(objects, scale, num_classes, shape)
        offsets, sizes, mask = encode_regression(objects, scale, shape)
        spreads = {
            i: gaussian_spread(o.box.size, scale.stride) for i, o in enumerate(scene.objects)
        }
        rafs, weights, skipped = encode_rafs(
            scene, assigned.relations, spreads, scale, num_predicates, shape
        )
        out.append(DenseTargets(scale, centers, offsets, sizes, rafs, weights, mask, skipped))
    return out
