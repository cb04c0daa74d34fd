"""Scene graph generation metrics: R@K, mR@K, zsR@K (with/without graph
constraint), per-predicate recall and detection AP at IoU 0.5."""

from __future__ import annotations

import enum
from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .boxes import box_iou
from .decoder import DecodeConfig, Detection, RelationScore, relations_over
from .encoder import quantize, select_scales
from .model import Dataset, SceneGraph


class Protocol(str, enum.Enum):
    PREDCLS = "predcls"
    SGCLS = "sgcls"
    SGDET = "sgdet"


@dataclass(frozen=True)
class MatchConfig:
    iou_threshold: float = 0.5
    graph_constraint: bool = True
    ks: tuple[int, ...] = (20, 50, 100)
    zero_shot_set: frozenset | None = None

    def __post_init__(self):
        if not 0 < self.iou_threshold <= 1:
            raise ValueError("iou_threshold must be in (0, 1]")
        if list(self.ks) != sorted(self.ks):
            raise ValueError("ks must be sorted ascending")


@dataclass(frozen=True)
class Triplet:
    subject_box: tuple[float, float, float, float]
    subject_class: int
    predicate: int
    object_box: tuple[float, float, float, float]
    object_class: int
    score: float = 1.0

    @property
    def signature(self) -> tuple[int, int, int]:
        return (self.subject_class, self.predicate, self.object_class)

    def sort_key(self):
        sb, ob = self.subject_box, self.object_box
        sc = ((sb[1] + sb[3]) / 2, (sb[0] + sb[2]) / 2)
        oc = ((ob[1] + ob[3]) / 2, (ob[0] + ob[2]) / 2)
        return (-self.score, *sc, *oc, self.predicate, self.subject_class, self.object_class, sb, ob)


@dataclass
class ImagePrediction:
    detections: list[Detection]
    relations: list[RelationScore]


def gt_triplets(scene: SceneGraph) -> list[Triplet]:
    out = []
    for r in scene.relations:
        s, o = scene.objects[r.subject_idx], scene.objects[r.object_idx]
        out.append(
            Triplet(tuple(s.box.as_list()), s.class_id, r.predicate_id, tuple(o.box.as_list()), o.class_id)
        )
    return out


def rank_triplets(detections, relations, graph_constraint=True) -> list[Triplet]:
    cands = []
    if graph_constraint:
        best: dict[tuple[int, int], tuple[float, int]] = {}
        for r in relations:
            s, p = r.best
            key = (r.subject, r.object)
            if key not in best or (s, -p) > (best[key][0], -best[key][1]):
                best[key] = (s, p)
        items = [(i, j, p, s) for (i, j), (s, p) in best.items()]
    else:
        items = [
            (r.subject, r.object, p, float(v)) for r in relations for p, v in enumerate(r.scores)
        ]
    for i, j, p, s in items:
        if not np.isfinite(s):
            continue
        si, oj = detections[i], detections[j]
        cands.append(Triplet(tuple(si.box), si.class_id, p, tuple(oj.box), oj.class_id, float(s)))
    cands.sort(key=Triplet.sort_key)
    return cands


def match_triplet(pred: Triplet, gt: Triplet, iou_threshold: float = 0.5) -> bool:
    if pred.signature != gt.signature:
        return False
    ious = box_iou([pred.subject_box, pred.object_box], [gt.subject_box, gt.object_box])
    return bool(ious[0, 0] >= iou_threshold and ious[1, 1] >= iou_threshold)


def match_ranked(ranked, gt, k, iou_threshold=0.5) -> list[bool]:
    """Greedy one-to-one matching of the top-k predictions in rank order."""
    matched = [False] * len(gt)
    for pred in ranked[:k]:
        for g, tgt in enumerate(gt):
            if not matched[g] and match_triplet(pred, tgt, iou_threshold):
                matched[g] = True
                break
    return matched


def recall_at_k(ranked, gt, k, cfg: MatchConfig = MatchConfig()) -> float | None:
    if not gt:
        return None
    matched = match_ranked(ranked, gt, k, cfg.iou_threshold)
    return 100.0 * sum(matched) / len(gt)


def per_predicate_recall(ranked, gt, k, cfg: MatchConfig = MatchConfig()) -> dict[int, float]:
    matched = match_ranked(ranked, gt, k, cfg.iou_threshold)
    hits: dict[int, list[bool]] = defaultdict(list)
    for m, t in zip(matched, gt):
        hits[t.predicate].append(m)
    return {p: 100.0 * sum(v) / len(v) for p, v in sorted(hits.items())}


def mean_recall_at_k(ranked, gt, k, cfg: MatchConfig = MatchConfig()) -> float | None:
    per = per_predicate_recall(ranked, gt, k, cfg)
    return sum(per.values()) / len(per) if per else None


def zero_shot_recall_at_k(ranked, gt, k, cfg: MatchConfig = MatchConfig()) -> float | None:
    if not cfg.zero_shot_set:
        return None
    zs = [t for t in gt if t.signature in cfg.zero_shot_set]
    if not zs:
        return None
    # Matching runs over all GT so zero-shot targets compete as in the full recall.
    matched = match_ranked(ranked, gt, k, cfg.iou_threshold)
    hit = [m for m, t in zip(matched, gt) if t.signature in cfg.zero_shot_set]
    return 100.0 * sum(hit) / len(zs)


def average_precision(recall, precision) -> float:
    """All-point interpolated area under the precision/recall curve."""
    mrec = np.concatenate(([0.0], recall, [1.0]))
    mpre = np.concatenate(([0.0], precision, [0.0]))
    mpre = np.maximum.accumulate(mpre[::-1])[::-1]
    idx = np.nonzero(mrec[1:] != mrec[:-1])[0]
    return float(np.sum((mrec[idx + 1] - mrec[idx]) * mpre[idx + 1]))


def ap50(detections_per_image, gt_per_image, iou_threshold: float = 0.5) -> float | None:
    """Mean over GT classes of per-class AP, detections pooled over images.

    Both arguments are per-image lists; detections need ``box``, ``class_id``
    and ``score``, GT entries need ``box`` (BBox) and ``class_id``.
    """
    classes = sorted({o.class_id for gts in gt_per_image for o in gts})
    if not classes:
        return None
    aps = []
    for c in classes:
        gts = [[o.box.as_list() for o in g if o.class_id == c] for g in gt_per_image]
        n_gt = sum(len(g) for g in gts)
        dets = [
            (d.score, img, tuple(d.box))
            for img, ds in enumerate(detections_per_image)
            for d in ds
            if d.class_id == c
        ]
        dets.sort(key=lambda t: (-t[0], t[1], t[2]))
        used = [np.zeros(len(g), dtype=bool) for g in gts]
        tp = np.zeros(len(dets))
        for n, (_, img, box) in enumerate(dets):
            if not gts[img]:
                continue
            ious = box_iou([box], gts[img])[0]
            ious[used[img]] = -1.0
            best = int(np.argmax(ious))
            if ious[best] >= iou_threshold:
                used[img][best] = True
                tp[n] = 1
        if len(dets) == 0:
            aps.append(0.0)
            continue
        ctp = np.cumsum(tp)
        recall = ctp / n_gt
        precision = ctp / np.arange(1, len(dets) + 1)
        aps.append(average_precision(recall, precision))
    return 100.0 * float(np.mean(aps))


# -- protocol-specific prediction construction ------------------------------


def _gt_detection(obj, score=1.0, class_id=None) -> Detection:
    cx, cy = obj.box.center
    return Detection(
        tuple(obj.box.as_list()),
        obj.class_id if class_id is None else class_id,
        float(score),
        0,
        (-1, -1),
        (cx, cy),
    )


def predict_with_gt(scene: SceneGraph, scale_maps, protocol, cfg: DecodeConfig = DecodeConfig()):
    """Predictions for PredCls (GT boxes and classes) or SGCls (GT boxes).

    For SGCls the class and score come from the heatmap argmax at the object's
    quantized center on its area-matched scale.
    """
    protocol = Protocol(protocol)
    if protocol is Protocol.SGDET:
        raise ValueError("use decoder.decode for SGDet")
    dets = []
    area_ranges = [m.scale.box_area_range for m in scale_maps]
    for obj in scene.objects:
        if protocol is Protocol.PREDCLS:
            dets.append(_gt_detection(obj))
            continue
        ks, _ = select_scales(obj.box.area, area_ranges)
        maps = scale_maps[ks[0]]
        qx, qy = quantize(obj.box.center, maps.stride, maps.centers.shape[1:])
        column = np.asarray(maps.centers[:, qy, qx], dtype=np.float64)
        if cfg.apply_sigmoid:
            column = expit(column)
        c = int(np.argmax(column))
        dets.append(_gt_detection(obj, float(column[c]), c))
    return ImagePrediction(dets, relations_over(dets, scale_maps, cfg))


def gt_as_prediction(scene: SceneGraph, num_predicates: int) -> ImagePrediction:
    """GT graph expressed as a prediction with every GT edge scored 1."""
    dets = [_gt_detection(o) for o in scene.objects]
    scores: dict[tuple[int, int], np.ndarray] = {}
    for r in scene.relations:
        v = scores.setdefault((r.subject_idx, r.object_idx), np.zeros(num_predicates))
        v[r.predicate_id] = 1.0
    rels = [RelationScore(i, j, v, 0) for (i, j), v in sorted(scores.items())]
    return ImagePrediction(dets, rels)


# -- report -----------------------------------------------------------------


@dataclass
class EvalReport:
    protocol: str
    n_images: int
    metrics: dict[str, float | None] = field(default_factory=dict)
    per_predicate_recall: dict[int, list[float | None]] = field(default_factory=dict)
    ap50: float | None = None

    def get(self, metric: str, k: int):
        return self.metrics.get(f"{metric}@{k}")

    def to_dict(self) -> dict:
        return {
            "protocol": self.protocol,
            "n_images": self.n_images,
            "metrics": self.metrics,
            "per_predicate_recall": {str(k): v for k, v in self.per_predicate_recall.items()},
            "ap50": self.ap50,
        }

    def table(self) -> str:
        names = ["R", "ngR", "mR", "ngmR", "zsR", "ngzsR"]
        ks = sorted({int(key.split("@")[1]) for key in self.metrics})
        lines = [f"protocol: {self.protocol}   images: {self.n_images}"]
        lines.append(f"{'metric':<8}" + "".join(f"{'@' + str(k):>10}" for k in ks))
        for name in names:
            vals = [self.metrics.get(f"{name}@{k}") for k in ks]
            lines.append(
                f"{name:<8}" + "".join(f"{'-' if v is None else f'{v:.2f}':>10}" for v in vals)
            )
        ap = "-" if self.ap50 is None else f"{self.ap50:.2f}"
        lines.append(f"{'AP50':<8}{ap:>10}")
        return "\n".join(lines)


def _mean(values):
    values = [v for v in values if v is not None]
    return sum(values) / len(values) if values else None


def _mean_per_predicate(per_image: list[dict[int, float]], num_predicates: int):
    by_pred: dict[int, list[float]] = defaultdict(list)
    for d in per_image:
        for p, v in d.items():
            by_pred[p].append(v)
    vector = [(_mean(by_pred[p]) if p in by_pred else None) for p in range(num_predicates)]
    return _mean(vector), vector


def evaluate(
    dataset: Dataset, predictions, protocol=Protocol.SGDET, cfg: MatchConfig = MatchConfig()
) -> EvalReport:
    """Score per-image predictions against the dataset.

    ``predictions`` maps image id -> ImagePrediction (missing ids count as
    empty). Recalls are computed per image and averaged over images that have
    the relevant GT; mR averages each predicate over the images containing it.
    """
    protocol = Protocol(protocol)
    report = EvalReport(protocol.value, len(dataset))
    num_p = dataset.vocab.num_predicates
    rankings = {}
    for scene in dataset:
        pred = predictions.get(scene.image_id) or ImagePrediction([], [])
        rankings[scene.image_id] = (
            rank_triplets(pred.detections, pred.relations, True),
            rank_triplets(pred.detections, pred.relations, False),
        )
    for k in cfg.ks:
        for constraint, prefix in ((True, ""), (False, "ng")):
            recalls, zs, per_pred = [], [], []
            for scene in dataset:
                ranked = rankings[scene.image_id][0 if constraint else 1]
                gt = gt_triplets(scene)
                recalls.append(recall_at_k(ranked, gt, k, cfg))
                zs.append(zero_shot_recall_at_k(ranked, gt, k, cfg))
                per_pred.append(per_predicate_recall(ranked, gt, k, cfg))
            mr, vector = _mean_per_predicate(per_pred, num_p)
            report.metrics[f"{prefix}R@{k}"] = _mean(recalls)
            report.metrics[f"{prefix}mR@{k}"] = mr
            report.metrics[f"{prefix}zsR@{k}"] = _mean(zs) if cfg.zero_shot_set else None
            if constraint:
                report.per_predicate_recall[k] = vector
    report.ap50 = ap50(
        [(predictions.get(s.image_id) or ImagePrediction([], [])).detections for s in dataset],
        [s.objects for s in dataset],
    )
    return report
