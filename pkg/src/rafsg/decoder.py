"""Dense maps -> detections and scored relation triplets."""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import combinations

import numpy as np
from scipy.special import expit

from .boxes import nms
from .encoder import select_scales
from .model import FrequencyTable, ScaleConfig

# Nudge when re-quantizing a recovered center onto another scale's grid, so a
# center sitting exactly on a grid line is not pushed down by rounding.
_GRID_NUDGE = 1e-9


@dataclass(frozen=True)
class DecodeConfig:
    top_k_objects: int = 100
    top_k_relations: int = 100
    peak_threshold: float = 0.0
    apply_sigmoid: bool = False
    frequency_bias: FrequencyTable | None = None
    bias_base: float = 1.0001
    nms_iou: float = 0.5
    bilinear: bool = False

    def __post_init__(self):
        if self.top_k_objects < 1 or self.top_k_relations < 1:
            raise ValueError("top-k values must be >= 1")
        if self.bias_base <= 0:
            raise ValueError("bias_base must be positive")
        if self.peak_threshold < 0:
            raise ValueError("peak_threshold must be >= 0")

    def snapshot(self) -> dict:
        return {
            "top_k_objects": self.top_k_objects,
            "top_k_relations": self.top_k_relations,
            "peak_threshold": self.peak_threshold,
            "apply_sigmoid": self.apply_sigmoid,
            "frequency_bias": self.frequency_bias is not None,
            "bias_base": self.bias_base,
            "nms_iou": self.nms_iou,
            "bilinear": self.bilinear,
        }


@dataclass(frozen=True)
class ScaleMaps:
    """Head outputs at one scale; DenseTargets carries the same attributes."""

    scale: ScaleConfig
    centers: np.ndarray
    offsets: np.ndarray
    sizes: np.ndarray
    rafs: np.ndarray

    @property
    def stride(self) -> int:
        return self.scale.stride


@dataclass(frozen=True)
class Peak:
    class_id: int
    x: int
    y: int
    score: float


@dataclass(frozen=True)
class Detection:
    box: tuple[float, float, float, float]
    class_id: int
    score: float
    source_scale: int
    peak: tuple[int, int]
    center: tuple[float, float]  # refined center in input pixels


@dataclass(frozen=True)
class RelationScore:
    subject: int
    object: int
    scores: np.ndarray  # (P,)
    source_scale: int

    @property
    def best(self) -> tuple[float, int]:
        p = int(np.argmax(self.scores))
        return float(self.scores[p]), p


def extract_peaks(centers: np.ndarray, cfg: DecodeConfig = DecodeConfig()) -> list[Peak]:
    """3x3 local maxima per class plane, best ``top_k_objects`` overall.

    Equal neighbours: only the one earliest in (y, x) order survives.
    """
    heat = expit(centers) if cfg.apply_sigmoid else np.asarray(centers, dtype=np.float64)
    c, h, w = heat.shape
    padded = np.full((c, h + 2, w + 2), -np.inf)
    padded[:, 1:-1, 1:-1] = heat
    is_peak = heat > cfg.peak_threshold
    for dy in (-1, 0, 1):
        for dx in (-1, 0, 1):
            if dy == 0 and dx == 0:
                continue
            nb = padded[:, 1 + dy : 1 + dy + h, 1 + dx : 1 + dx + w]
            if (dy, dx) < (0, 0):
                is_peak &= heat > nb
            else:
                is_peak &= heat >= nb
    cls, ys, xs = np.nonzero(is_peak)
    scores = heat[cls, ys, xs]
    order = np.lexsort((cls, xs, ys, -scores))[: cfg.top_k_objects]
    return [Peak(int(cls[i]), int(xs[i]), int(ys[i]), float(scores[i])) for i in order]


def recover_boxes(peaks, offsets, sizes, stride, image_size) -> list[Detection]:
    width, height = image_size
    dets = []
    for pk in peaks:
        dx, dy = (float(v) for v in offsets[:, pk.y, pk.x])
        sw, sh = (float(v) for v in sizes[:, pk.y, pk.x])
        cx, cy = pk.x + dx, pk.y + dy
        box = (
            min(max((cx - sw / 2) * stride, 0.0), width),
            min(max((cy - sh / 2) * stride, 0.0), height),
            min(max((cx + sw / 2) * stride, 0.0), width),
            min(max((cy + sh / 2) * stride, 0.0), height),
        )
        dets.append(
            Detection(box, pk.class_id, pk.score, stride, (pk.x, pk.y), (cx * stride, cy * stride))
        )
    return dets


def grid_position(det: Detection, stride: int, shape) -> tuple[int, int]:
    if det.source_scale == stride:
        return det.peak
    h, w = shape
    x = int(math.floor(det.center[0] / stride + _GRID_NUDGE))
    y = int(math.floor(det.center[1] / stride + _GRID_NUDGE))
    return min(max(x, 0), w - 1), min(max(y, 0), h - 1)


def _sample_nearest(rafs, xs, ys):
    h, w = rafs.shape[1:]
    xi = np.clip(np.floor(xs + 0.5).astype(int), 0, w - 1)
    yi = np.clip(np.floor(ys + 0.5).astype(int), 0, h - 1)
    return rafs[0::2, yi, xi], rafs[1::2, yi, xi]


def _sample_bilinear(rafs, xs, ys):
    h, w = rafs.shape[1:]
    xs = np.clip(xs, 0, w - 1)
    ys = np.clip(ys, 0, h - 1)
    x0 = np.minimum(np.floor(xs).astype(int), w - 2) if w > 1 else np.zeros(len(xs), int)
    y0 = np.minimum(np.floor(ys).astype(int), h - 2) if h > 1 else np.zeros(len(ys), int)
    x1, y1 = np.minimum(x0 + 1, w - 1), np.minimum(y0 + 1, h - 1)
    fx, fy = xs - x0, ys - y0
    v = (
        rafs[:, y0, x0] * (1 - fx) * (1 - fy)
        + rafs[:, y0, x1] * fx * (1 - fy)
        + rafs[:, y1, x0] * (1 - fx) * fy
        + rafs[:, y1, x1] * fx * fy
    )
    return v[0::2], v[1::2]


def path_integral(
    detections, rafs: np.ndarray, stride: int, cfg: DecodeConfig = DecodeConfig(), pairs=None
) -> list[RelationScore]:
    """Mean projection of RAF samples onto each pair's direction.

    ``pairs`` restricts evaluation to the given (i, j) index pairs, i < j;
    default is every unordered pair. Both directions are emitted, the reverse
    being the exact negation.
    """
    shape = rafs.shape[1:]
    pos = [grid_position(d, stride, shape) for d in detections]
    if pairs is None:
        pairs = combinations(range(len(detections)), 2)
    sampler = _sample_bilinear if cfg.bilinear else _sample_nearest
    out = []
    for i, j in pairs:
        (xi, yi), (xj, yj) = pos[i], pos[j]
        dist = math.hypot(xj - xi, yj - yi)
        if dist == 0:
            continue
        ex, ey = (xj - xi) / dist, (yj - yi) / dist
        m = max(2, math.ceil(dist) + 1)
        xs = np.linspace(xi, xj, m)
        ys = np.linspace(yi, yj, m)
        fx, fy = sampler(rafs, xs, ys)
        proj = (fx * ex + fy * ey).sum(axis=1)
        e = proj * (detections[i].score * detections[j].score / m)
        out.append(RelationScore(i, j, e, stride))
        out.append(RelationScore(j, i, -e, stride))
    return out


def apply_frequency_bias(relations, detections, table: FrequencyTable, base: float = 1.0001):
    if base <= 0:
        raise ValueError("bias base must be positive")
    out = []
    for r in relations:
        cs, co = detections[r.subject].class_id, detections[r.object].class_id
        n = np.array([table[(cs, p, co)] for p in range(len(r.scores))], dtype=np.float64)
        out.append(RelationScore(r.subject, r.object, r.scores * np.power(base, n), r.source_scale))
    return out


def _det_key(d: Detection):
    return (-d.score, d.center[1], d.center[0], d.class_id)


def sort_relations(relations, detections):
    def key(r):
        s, p = r.best
        sd, od = detections[r.subject], detections[r.object]
        return (-s, sd.center[1], sd.center[0], od.center[1], od.center[0], p)

    return sorted(relations, key=key)


def merge_detections(per_scale_dets, cfg: DecodeConfig = DecodeConfig()):
    """Pool detections across scales, class-wise NMS when several scales.

    Returns ``(kept, index_map)`` where ``index_map[(scale_idx, det_idx)]``
    gives the position in ``kept``.
    """
    pooled = [(k, i, d) for k, dets in enumerate(per_scale_dets) for i, d in enumerate(dets)]
    order = sorted(range(len(pooled)), key=lambda n: _det_key(pooled[n][2]))
    if len(per_scale_dets) > 1:
        survivors = []
        for c in sorted({d.class_id for _, _, d in pooled}):
            idx = [n for n in order if pooled[n][2].class_id == c]
            kept_local = nms([pooled[n][2].box for n in idx], range(len(idx)), cfg.nms_iou)
            survivors += [idx[t] for t in kept_local]
        keep = set(survivors)
        order = [n for n in order if n in keep]
    order = order[: cfg.top_k_objects]
    kept = [pooled[n][2] for n in order]
    index_map = {(pooled[n][0], pooled[n][1]): new for new, n in enumerate(order)}
    return kept, index_map


def merge_scales(per_scale_dets, per_scale_rels, cfg: DecodeConfig = DecodeConfig()):
    """Pool per-scale detections and relations into one final set.

    Relations index into their own scale's detection list; they are re-indexed
    against the surviving detections and dropped if an endpoint was suppressed.
    """
    kept, index_map = merge_detections(per_scale_dets, cfg)
    rels = []
    for k, scale_rels in enumerate(per_scale_rels):
        for r in scale_rels:
            s, o = index_map.get((k, r.subject)), index_map.get((k, r.object))
            if s is None or o is None:
                continue
            rels.append(RelationScore(s, o, r.scores, r.source_scale))
    rels = sort_relations(rels, kept)[: cfg.top_k_relations]
    return kept, rels


def relations_over(detections, scale_maps, cfg: DecodeConfig = DecodeConfig()):
    """Path integrals for every detection pair, with optional frequency bias.

    With several scales each pair is integrated on the scale whose length
    range holds its center distance (first match on a shared boundary).
    """
    groups: dict[int, list[tuple[int, int]]] = {k: [] for k in range(len(scale_maps))}
    ranges = [m.scale.raf_length_range for m in scale_maps]
    for i, j in combinations(range(len(detections)), 2):
        k = 0
        if len(scale_maps) > 1:
            (xi, yi), (xj, yj) = detections[i].center, detections[j].center
            k = select_scales(math.hypot(xj - xi, yj - yi), ranges)[0][0]
        groups[k].append((i, j))
    relations = []
    for k, maps in enumerate(scale_maps):
        if groups[k]:
            relations += path_integral(detections, maps.rafs, maps.stride, cfg, groups[k])
    if cfg.frequency_bias is not None:
        relations = apply_frequency_bias(relations, detections, cfg.frequency_bias, cfg.bias_base)
    return relations


def decode(scale_maps, image_size, cfg: DecodeConfig = DecodeConfig()):
    """Peaks and boxes per scale, merged detections, ranked relations."""
    per_scale = []
    for maps in scale_maps:
        peaks = extract_peaks(maps.centers, cfg)
        per_scale.append(recover_boxes(peaks, maps.offsets, maps.sizes, maps.stride, image_size))
    detections, _ = merge_detections(per_scale, cfg)
    relations = relations_over(detections, scale_maps, cfg)
    relations = sort_relations(relations, detections)[: cfg.top_k_relations]
    return detections, relations
