"""On-disk layouts: per-image ``.raft`` map sets and prediction JSON."""

from __future__ import annotations

import json
import os
import re
from collections import defaultdict
from pathlib import Path

import numpy as np

from .decoder import Detection, RelationScore, ScaleMaps
from .encoder import DenseTargets
from .metrics import ImagePrediction
from .model import ScaleConfig, SceneGraphError
from .tensorio import read_dense, write_dense

MAP_NAME = re.compile(r"^(?P<id>.+)\.s(?P<stride>\d+)\.(?P<kind>[a-z]+)\.raft$")


def write_text_atomic(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


def map_path(directory: Path, image_id: str, stride: int, kind: str) -> Path:
    return Path(directory) / f"{image_id}.s{stride}.{kind}.raft"


def write_targets(directory: Path, image_id: str, targets: list[DenseTargets]) -> list[Path]:
    paths = []
    for t in targets:
        for kind, arr in t.maps().items():
            p = map_path(directory, image_id, t.stride, kind)
            write_dense(arr, p)
            paths.append(p)
    return paths


def scan_maps(directory: Path) -> dict[str, dict[int, dict[str, Path]]]:
    """image id -> stride -> kind -> file."""
    found: dict[str, dict[int, dict[str, Path]]] = defaultdict(lambda: defaultdict(dict))
    for p in sorted(Path(directory).iterdir()):
        m = MAP_NAME.match(p.name)
        if m:
            found[m["id"]][int(m["stride"])][m["kind"]] = p
    return {k: dict(v) for k, v in found.items()}


def load_scale_maps(files: dict[int, dict[str, Path]], scales, with_targets=False):
    """Read one image's maps in scale order.

    Returns ScaleMaps, or DenseTargets when ``with_targets`` (needs rafw/mask).
    """
    out = []
    for scale in scales:
        kinds = files.get(scale.stride)
        if kinds is None:
            raise SceneGraphError(f"missing maps for stride {scale.stride}")
        need = ("centers", "offsets", "sizes", "rafs") + (("rafw", "mask") if with_targets else ())
        missing = [k for k in need if k not in kinds]
        if missing:
            raise SceneGraphError(f"stride {scale.stride}: missing map kinds {missing}")
        arrs = {k: read_dense(kinds[k]).astype(np.float64) for k in need}
        if with_targets:
            out.append(
                DenseTargets(
                    scale, arrs["centers"], arrs["offsets"], arrs["sizes"], arrs["rafs"],
                    arrs["rafw"], arrs["mask"],
                )
            )
        else:
            out.append(ScaleMaps(scale, arrs["centers"], arrs["offsets"], arrs["sizes"], arrs["rafs"]))
    return out


def prediction_to_dict(image_id: str, pred: ImagePrediction) -> dict:
    rels = []
    for r in pred.relations:
        for p, v in enumerate(r.scores):
            rels.append((float(v), r.subject, r.object, p))
    rels.sort(key=lambda t: (-t[0], t[1], t[2], t[3]))
    return {
        "image_id": image_id,
        "detections": [
            {"bbox": [float(v) for v in d.box], "class": d.class_id, "score": float(d.score)}
            for d in pred.detections
        ],
        "relations": [
            {"subject": s, "object": o, "predicate": p, "score": v} for v, s, o, p in rels
        ],
    }


def prediction_from_dict(raw: dict, num_predicates: int) -> ImagePrediction:
    dets = []
    for d in raw["detections"]:
        x0, y0, x1, y1 = (float(v) for v in d["bbox"])
        dets.append(
            Detection((x0, y0, x1, y1), int(d["class"]), float(d["score"]), 0, (-1, -1),
                      ((x0 + x1) / 2, (y0 + y1) / 2))
        )
    vectors: dict[tuple[int, int], np.ndarray] = {}
    for r in raw["relations"]:
        key = (int(r["subject"]), int(r["object"]))
        v = vectors.setdefault(key, np.full(num_predicates, -np.inf))
        v[int(r["predicate"])] = float(r["score"])
    rels = [RelationScore(s, o, v, 0) for (s, o), v in vectors.items()]
    return ImagePrediction(dets, rels)


def dumps(obj) -> str:
    return json.dumps(obj, indent=1, sort_keys=True) + "\n"


def scales_from_dict(raw: list[dict]) -> tuple[ScaleConfig, ...]:
    return tuple(
        ScaleConfig(int(s["stride"]), tuple(s["box_area_range"]), tuple(s["raf_length_range"]))
        for s in raw
    )
