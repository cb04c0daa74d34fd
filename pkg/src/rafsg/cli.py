"""Command-line front end: synth / encode / decode / loss / eval / roundtrip."""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from functools import partial
from pathlib import Path

from . import __version__
from .decoder import DecodeConfig, decode
from .encoder import encode
from .losses import LossConfig, total_loss
from .metrics import ImagePrediction, MatchConfig, Protocol, evaluate, predict_with_gt
from .model import (
    Dataset,
    SceneGraphError,
    build_frequency_table,
    dumps_dataset,
    load_dataset,
    scale_preset,
)
from .pipeline import _map, roundtrip
from .storage import (
    dumps,
    load_scale_maps,
    prediction_from_dict,
    prediction_to_dict,
    scan_maps,
    write_targets,
    write_text_atomic,
)
from .synth import SynthConfig, clean_config, generate, validate_generated
from .tensorio import TensorFormatError

log = logging.getLogger("rafsg")

EXIT_OK, EXIT_INTERNAL, EXIT_VALIDATION = 0, 1, 2


def _common(parser: argparse.ArgumentParser) -> None:
    g = parser.add_argument_group("common")
    g.add_argument("--scales", choices=["1s", "4s", "5s"], default="1s")
    g.add_argument("--stride", type=int, help="override the single-scale stride")
    g.add_argument("--topk", type=int, default=100, help="objects and relations kept")
    g.add_argument("--beta", type=float, default=10.0)
    g.add_argument("--raf-loss", choices=["l1", "smoothl1", "l2"], default="l1")
    g.add_argument("--freq-bias", metavar="TRAIN_JSON", help="dataset for triplet counts")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--jobs", type=int, default=1)
    g.add_argument("--out", type=Path, help="output directory (default: JSON to stdout)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rafsg", description=__doc__)
    parser.add_argument("--version", action="version", version=f"rafsg {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    _common(p)
    p.add_argument("--n-images", type=int, default=20)
    p.add_argument("--image-size", type=int, nargs=2, default=[512, 512], metavar=("W", "H"))
    p.add_argument("--classes", type=int, default=10)
    p.add_argument("--predicates", type=int, default=5)
    p.add_argument("--objects", type=int, nargs=2, default=[5, 8], metavar=("LO", "HI"))
    p.add_argument("--relations", type=int, nargs=2, default=[4, 8], metavar=("LO", "HI"))
    p.add_argument("--min-sep", type=float)
    p.add_argument("--path-clearance", type=float)
    p.add_argument("--min-path-angle", type=float)
    p.add_argument("--duplicates", action="store_true", help="allow duplicate edges")
    p.add_argument("--dup-rate", type=float, default=0.3)
    p.add_argument("--allow-collisions", action="store_true")
    p.add_argument("--zipf", type=float, help="Zipf exponent for predicate frequencies")
    p.add_argument("--clean", action="store_true", help="non-interfering scenes preset")

    p = sub.add_parser("encode", help="dataset JSON -> .raft target maps")
    _common(p)
    p.add_argument("dataset", type=Path)

    p = sub.add_parser("decode", help=".raft maps -> predictions JSON")
    _common(p)
    p.add_argument("maps", type=Path, help="directory of .raft maps")
    p.add_argument("--dataset", type=Path, help="dataset JSON for image sizes")
    p.add_argument("--sigmoid", action="store_true", help="heatmaps are logits")
    p.add_argument("--peak-threshold", type=float, default=0.0)

    p = sub.add_parser("loss", help="losses between predicted and target maps")
    _common(p)
    p.add_argument("--pred", type=Path, required=True)
    p.add_argument("--target", type=Path, required=True)
    p.add_argument("--config", type=Path, help="JSON with LossConfig fields")
    p.add_argument("--pred-probs", action="store_true", help="predicted heatmaps are probabilities")

    p = sub.add_parser("eval", help="score predictions against a dataset")
    _common(p)
    p.add_argument("dataset", type=Path)
    p.add_argument("--pred", type=Path, required=True, help="prediction JSONs or .raft maps")
    p.add_argument("--protocol", choices=[x.value for x in Protocol], default="sgdet")
    p.add_argument("--train", type=Path, help="training dataset (zero-shot set)")
    p.add_argument("--sigmoid", action="store_true", help="heatmaps are logits")

    p = sub.add_parser("roundtrip", help="encode, decode and evaluate GT (SGDet)")
    _common(p)
    p.add_argument("dataset", type=Path)
    return parser


def _decode_cfg(args, **extra) -> DecodeConfig:
    table = build_frequency_table(load_dataset(args.freq_bias)) if args.freq_bias else None
    return DecodeConfig(
        top_k_objects=args.topk, top_k_relations=args.topk, frequency_bias=table, **extra
    )


def _emit(args, name: str, payload: dict, outputs: list) -> None:
    if args.out is None:
        sys.stdout.write(dumps(payload))
        return
    path = args.out / name
    write_text_atomic(path, dumps(payload))
    outputs.append(path)


def _images_from_maps(args, dataset: Dataset | None):
    files = scan_maps(args.maps if hasattr(args, "maps") else args.pred)
    if dataset is not None:
        ids = [s.image_id for s in dataset]
        sizes = {s.image_id: (s.image_width, s.image_height) for s in dataset}
    else:
        ids, sizes = sorted(files), {}
    return files, ids, sizes


def cmd_synth(args, outputs):
    overrides = dict(
        n_images=args.n_images,
        image_size=tuple(args.image_size),
        n_classes=args.classes,
        n_predicates=args.predicates,
        objects_per_image=tuple(args.objects),
        relations_per_image=tuple(args.relations),
        allow_duplicate_edges=args.duplicates,
        duplicate_edge_rate=args.dup_rate,
        allow_center_collisions=args.allow_collisions,
        zipf_exponent=args.zipf,
        rng_seed=args.seed,
    )
    for key, val in (
        ("min_center_separation", args.min_sep),
        ("path_clearance", args.path_clearance),
        ("min_path_angle", args.min_path_angle),
    ):
        if val is not None:
            overrides[key] = val
    cfg = clean_config(**overrides) if args.clean else SynthConfig(**overrides)
    dataset = generate(cfg)
    validate_generated(dataset, cfg)
    text = dumps_dataset(dataset)
    if args.out is None:
        sys.stdout.write(text)
    else:
        path = args.out / "dataset.json"
        write_text_atomic(path, text)
        outputs.append(path)
    return cfg.to_dict()


def _encode_one(scene, scales, num_classes, num_predicates, out):
    targets = encode(scene, scales, num_classes, num_predicates)
    paths = write_targets(out, scene.image_id, targets)
    return [str(p) for p in paths], sum(len(t.skipped_relations) for t in targets)


def cmd_encode(args, outputs):
    if args.out is None:
        raise SceneGraphError("encode writes .raft files and needs --out")
    dataset = load_dataset(args.dataset)
    scales = scale_preset(args.scales, args.stride)
    fn = partial(
        _encode_one,
        scales=scales,
        num_classes=dataset.vocab.num_classes,
        num_predicates=dataset.vocab.num_predicates,
        out=args.out,
    )
    results = _map(fn, list(dataset.images), args.jobs)
    outputs += [Path(p) for paths, _ in results for p in paths]
    summary = {
        "images": len(dataset),
        "files": sum(len(p) for p, _ in results),
        "skipped_relations": sum(s for _, s in results),
        "scales": [s.to_dict() for s in scales],
    }
    sys.stdout.write(dumps(summary))
    return {"scales": summary["scales"]}


def cmd_decode(args, outputs):
    dataset = load_dataset(args.dataset) if args.dataset else None
    scales = scale_preset(args.scales, args.stride)
    cfg = _decode_cfg(args, apply_sigmoid=args.sigmoid, peak_threshold=args.peak_threshold)
    files, ids, sizes = _images_from_maps(args, dataset)
    results = {}
    for image_id in ids:
        if image_id not in files:
            raise SceneGraphError(f"no maps for image {image_id!r}")
        maps = load_scale_maps(files[image_id], scales)
        size = sizes.get(image_id) or (
            maps[0].centers.shape[2] * maps[0].stride,
            maps[0].centers.shape[1] * maps[0].stride,
        )
        dets, rels = decode(maps, size, cfg)
        results[image_id] = prediction_to_dict(image_id, ImagePrediction(dets, rels))
    if args.out is None:
        sys.stdout.write(dumps(results))
    else:
        for image_id, payload in results.items():
            path = args.out / f"{image_id}.pred.json"
            write_text_atomic(path, dumps(payload))
            outputs.append(path)
    return cfg.snapshot()


def cmd_loss(args, outputs):
    raw = json.loads(args.config.read_text()) if args.config else {}
    raw.setdefault("beta", args.beta)
    raw.setdefault("raf_reg_kind", args.raf_loss)
    cfg = LossConfig(**raw)
    scales = scale_preset(args.scales, args.stride)
    preds, targets = scan_maps(args.pred), scan_maps(args.target)
    report = {}
    for image_id in sorted(targets):
        if image_id not in preds:
            raise SceneGraphError(f"no predicted maps for image {image_id!r}")
        p = load_scale_maps(preds[image_id], scales)
        t = load_scale_maps(targets[image_id], scales, with_targets=True)
        report[image_id] = total_loss(p, t, cfg, logits=not args.pred_probs).to_dict()
    totals = [r["total"] for r in report.values()]
    payload = {
        "config": cfg.snapshot(),
        "images": report,
        "mean_total": sum(totals) / len(totals) if totals else 0.0,
    }
    _emit(args, "loss.json", payload, outputs)
    return cfg.snapshot()


def _load_predictions(args, dataset: Dataset, protocol: Protocol):
    pred_dir = args.pred
    jsons = {p.name[: -len(".pred.json")]: p for p in pred_dir.glob("*.pred.json")}
    scales = scale_preset(args.scales, args.stride)
    cfg = _decode_cfg(args, apply_sigmoid=args.sigmoid)
    num_p = dataset.vocab.num_predicates
    if protocol is Protocol.SGDET and jsons:
        return {
            i: prediction_from_dict(json.loads(p.read_text()), num_p) for i, p in jsons.items()
        }
    files = scan_maps(pred_dir)
    preds = {}
    for scene in dataset:
        if scene.image_id not in files:
            continue
        maps = load_scale_maps(files[scene.image_id], scales)
        if protocol is Protocol.SGDET:
            dets, rels = decode(maps, (scene.image_width, scene.image_height), cfg)
            preds[scene.image_id] = ImagePrediction(dets, rels)
        else:
            preds[scene.image_id] = predict_with_gt(scene, maps, protocol, cfg)
    return preds


def _report_outputs(args, report, outputs):
    payload = report.to_dict()
    if args.out is None:
        sys.stdout.write(dumps(payload))
        sys.stderr.write(report.table() + "\n")
    else:
        _emit(args, "report.json", payload, outputs)
        path = args.out / "report.txt"
        write_text_atomic(path, report.table() + "\n")
        outputs.append(path)


def cmd_eval(args, outputs):
    dataset = load_dataset(args.dataset)
    protocol = Protocol(args.protocol)
    zero_shot = None
    if args.train:
        seen = build_frequency_table(load_dataset(args.train)).signatures()
        zero_shot = frozenset(
            t for s in dataset for t in s.triplets() if t not in seen
        )
    preds = _load_predictions(args, dataset, protocol)
    report = evaluate(dataset, preds, protocol, MatchConfig(zero_shot_set=zero_shot))
    _report_outputs(args, report, outputs)
    return {"protocol": protocol.value}


def cmd_roundtrip(args, outputs):
    dataset = load_dataset(args.dataset)
    scales = scale_preset(args.scales, args.stride)
    cfg = _decode_cfg(args)
    report = roundtrip(dataset, scales, cfg, jobs=args.jobs)
    _report_outputs(args, report, outputs)
    return {"scales": [s.to_dict() for s in scales], "decode": cfg.snapshot()}


COMMANDS = {
    "synth": cmd_synth,
    "encode": cmd_encode,
    "decode": cmd_decode,
    "loss": cmd_loss,
    "eval": cmd_eval,
    "roundtrip": cmd_roundtrip,
}


def _write_manifest(args, config, outputs, started):
    inputs = [
        str(v) for k, v in sorted(vars(args).items())
        if isinstance(v, Path) and k != "out"
    ]
    manifest = {
        "command": args.command,
        "config": config,
        "inputs": inputs,
        "outputs": sorted(str(p) for p in outputs),
        "tool_version": __version__,
        "rng_seed": args.seed,
        "duration_s": round(time.monotonic() - started, 6),
    }
    write_text_atomic(args.out / "manifest.json", dumps(manifest))


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    started = time.monotonic()
    outputs: list[Path] = []
    try:
        if args.out is not None:
            args.out.mkdir(parents=True, exist_ok=True)
        config = COMMANDS[args.command](args, outputs)
        if args.out is not None:
            _write_manifest(args, config, outputs, started)
    except (SceneGraphError, TensorFormatError, ValueError, FileNotFoundError) as e:
        log.error("%s", e)
        return EXIT_VALIDATION
    except Exception:
        log.exception("internal error")
        return EXIT_INTERNAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
