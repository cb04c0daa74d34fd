"""Dataset-level encode / decode / evaluate workflows."""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from functools import partial

from .decoder import DecodeConfig, decode
from .encoder import encode
from .metrics import ImagePrediction, MatchConfig, Protocol, evaluate
from .model import Dataset, SceneGraph


def _map(fn, items, jobs: int):
    if jobs <= 1 or len(items) < 2:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items, chunksize=max(1, len(items) // (4 * jobs))))


def _roundtrip_one(scene: SceneGraph, scales, num_classes, num_predicates, cfg):
    targets = encode(scene, scales, num_classes, num_predicates)
    dets, rels = decode(targets, (scene.image_width, scene.image_height), cfg)
    return ImagePrediction(dets, rels)


def roundtrip_predictions(dataset: Dataset, scales, cfg: DecodeConfig = DecodeConfig(), jobs=1):
    fn = partial(
        _roundtrip_one,
        scales=scales,
        num_classes=dataset.vocab.num_classes,
        num_predicates=dataset.vocab.num_predicates,
        cfg=cfg,
    )
    preds = _map(fn, list(dataset.images), jobs)
    return {s.image_id: p for s, p in zip(dataset.images, preds)}


def roundtrip(
    dataset: Dataset,
    scales,
    cfg: DecodeConfig = DecodeConfig(),
    match_cfg: MatchConfig = MatchConfig(),
    jobs: int = 1,
):
    """Encode every GT scene, decode it back and score it under SGDet."""
    preds = roundtrip_predictions(dataset, scales, cfg, jobs)
    return evaluate(dataset, preds, Protocol.SGDET, match_cfg)
