import numpy as np
import pytest

import oracles
from conftest import make_scene, make_vocab
from instances import random_instance, shuffled
from rafsg.decoder import Detection, RelationScore
from rafsg.encoder import encode
from rafsg.metrics import (
    ImagePrediction,
    MatchConfig,
    Protocol,
    Triplet,
    ap50,
    evaluate,
    gt_as_prediction,
    gt_triplets,
    mean_recall_at_k,
    predict_with_gt,
    rank_triplets,
    recall_at_k,
    zero_shot_recall_at_k,
)
from rafsg.model import Dataset, build_frequency_table, scale_preset
from rafsg.synth import SynthConfig, clean_config, generate

BOX_A = (0.0, 0.0, 10.0, 10.0)
BOX_B = (20.0, 20.0, 40.0, 40.0)


def _det(box, cls=0, score=1.0):
    return Detection(box, cls, score, 4, (0, 0), ((box[0] + box[2]) / 2, (box[1] + box[3]) / 2))


def test_rank_graph_vs_no_graph():
    dets = [_det(BOX_A), _det(BOX_B)]
    rels = [RelationScore(0, 1, np.array([0.9, 0.8]), 4)]
    gc = rank_triplets(dets, rels, True)
    ng = rank_triplets(dets, rels, False)
    assert len(gc) == 1 and gc[0].predicate == 0
    assert [t.predicate for t in ng] == [0, 1]


def test_rank_equal_scores_deterministic():
    dets = [_det(BOX_B), _det(BOX_A), _det((50, 0, 60, 10))]
    rels = [RelationScore(i, j, np.array([0.5, 0.5]), 4)
            for i in range(3) for j in range(3) if i != j]
    a = rank_triplets(dets, rels, False)
    b = rank_triplets(dets[::-1], [RelationScore(2 - r.subject, 2 - r.object, r.scores, 4)
                                   for r in reversed(rels)], False)
    assert a == b
    assert a[0].subject_box == BOX_A and a[0].predicate == 0


def test_rank_matches_sort_oracle():
    for seed in range(20):
        ds, preds = random_instance(seed, n_images=1)
        pred = next(iter(preds.values()))
        for gc in (True, False):
            got = rank_triplets(pred.detections, pred.relations, gc)
            ref = oracles._candidates(pred, gc)
            assert [(t.score, t.predicate) for t in got] == [(s, p) for s, i, p, j in ref]


def test_match_examples():
    gt = Triplet(BOX_A, 0, 1, BOX_B, 2)
    from rafsg.metrics import match_triplet

    assert match_triplet(gt, gt)
    assert not match_triplet(Triplet(BOX_A, 0, 0, BOX_B, 2), gt)
    # shift the 10x10 subject right by d: IoU = (10-d)/(10+d); d=3.42 -> 0.4903
    shifted = (3.42, 0.0, 13.42, 10.0)
    assert oracles.iou(shifted, BOX_A) == pytest.approx(0.49, abs=1e-3)
    assert not match_triplet(Triplet(shifted, 0, 1, BOX_B, 2), gt)
    assert match_triplet(Triplet((3.3, 0.0, 13.3, 10.0), 0, 1, BOX_B, 2), gt)


def test_recall_examples():
    g1 = Triplet(BOX_A, 0, 0, BOX_B, 0)
    g2 = Triplet(BOX_B, 0, 0, BOX_A, 0)
    assert recall_at_k([g2, g1], [g1, g2], 20) == 100.0
    assert recall_at_k([g1, g2], [g1, g2], 1) == 50.0
    assert recall_at_k([g1], [g1, g1], 20) == 50.0
    assert recall_at_k([], [g1], 20) == 0.0


def test_mean_recall_examples():
    g = [Triplet(BOX_A, 0, 0, BOX_B, 0), Triplet(BOX_B, 0, 1, BOX_A, 0)]
    assert mean_recall_at_k([g[0]], g, 20) == 50.0
    only = [g[0]]
    assert mean_recall_at_k(only, only, 20) == recall_at_k(only, only, 20)


def test_zero_shot_examples():
    g = [Triplet(BOX_A, 0, 0, BOX_B, 1), Triplet(BOX_B, 1, 1, BOX_A, 0)]
    assert zero_shot_recall_at_k([g[0]], g, 20, MatchConfig()) is None
    assert zero_shot_recall_at_k([g[0]], g, 20, MatchConfig(zero_shot_set=frozenset())) is None
    all_zs = MatchConfig(zero_shot_set=frozenset({(0, 0, 1), (1, 1, 0)}))
    assert zero_shot_recall_at_k([g[0]], g, 20, all_zs) == recall_at_k([g[0]], g, 20)
    one = MatchConfig(zero_shot_set=frozenset({(1, 1, 0)}))
    assert zero_shot_recall_at_k([g[0]], g, 20, one) == 0.0


def test_ap50_examples():
    scene = make_scene([BOX_A, BOX_B, (50, 50, 70, 70)])
    perfect = [_det(o.box.as_list()) for o in scene.objects]
    assert ap50([perfect], [scene.objects]) == 100.0
    assert ap50([[]], [scene.objects]) == 0.0
    # ranked: hit (0.9), miss (0.8), hit (0.7); GT 3 boxes
    dets = [_det(BOX_A, score=0.9), _det((100, 100, 110, 110), score=0.8), _det(BOX_B, score=0.7)]
    # precision after each: 1, 1/2, 2/3; recall 1/3, 1/3, 2/3; all-point area
    expected = (1 / 3) * 1.0 + (1 / 3) * (2 / 3)
    assert ap50([dets], [scene.objects]) == pytest.approx(100 * expected)


def test_gt_prediction_full_recall_all_protocols():
    ds = generate(clean_config(n_images=4))
    preds = {s.image_id: gt_as_prediction(s, 5) for s in ds}
    for protocol in Protocol:
        r = evaluate(ds, preds, protocol)
        for k in (20, 50, 100):
            assert r.get("R", k) == 100.0 and r.get("mR", k) == 100.0
    empty = evaluate(ds, {}, Protocol.SGDET)
    assert all(v == 0.0 for key, v in empty.metrics.items() if "zs" not in key)


def test_protocol_dominance_on_gt_maps():
    ds = generate(SynthConfig(n_images=6, rng_seed=4, allow_duplicate_edges=True,
                              allow_center_collisions=True))
    scales = scale_preset("1s")
    from rafsg.decoder import decode

    out = {p: {} for p in Protocol}
    for s in ds:
        maps = encode(s, scales, 10, 5)
        out[Protocol.PREDCLS][s.image_id] = predict_with_gt(s, maps, Protocol.PREDCLS)
        out[Protocol.SGCLS][s.image_id] = predict_with_gt(s, maps, Protocol.SGCLS)
        out[Protocol.SGDET][s.image_id] = ImagePrediction(*decode(maps, (512, 512)))
    rep = {p: evaluate(ds, out[p], p) for p in Protocol}
    for k in (20, 50, 100):
        assert rep[Protocol.PREDCLS].get("R", k) >= rep[Protocol.SGCLS].get("R", k) - 1e-9
        assert rep[Protocol.SGCLS].get("R", k) >= rep[Protocol.SGDET].get("R", k) - 1e-9


def test_evaluate_matches_brute_force():
    for seed in range(15):
        ds, preds = random_instance(seed, n_images=4)
        train, _ = random_instance(seed + 1000, n_images=4)
        seen = build_frequency_table(train).signatures()
        zs = frozenset(t for s in ds for t in s.triplets() if t not in seen) or None
        got = evaluate(ds, preds, Protocol.SGDET, MatchConfig(zero_shot_set=zs)).metrics
        ref = oracles.evaluate(ds, preds, zero_shot=zs)
        assert got.keys() == ref.keys()
        for key in ref:
            if ref[key] is None:
                assert got[key] is None, key
            else:
                assert got[key] == pytest.approx(ref[key], abs=1e-9), key


def test_metric_algebra_small_instances():
    rng = np.random.default_rng(7)
    for seed in range(40):
        ds, preds = random_instance(seed, objects=(2, 3), relations=(1, 3), n_predicates=3,
                                    max_pairs=6)
        rep = evaluate(ds, preds)
        for prefix in ("", "ng"):
            vals = [rep.get(prefix + "R", k) for k in (20, 50, 100)]
            assert vals == sorted(vals)
        for k in (20, 50, 100):
            assert rep.get("ngR", k) >= rep.get("R", k)
        again = evaluate(ds, {i: shuffled(p, rng) for i, p in preds.items()})
        assert again.metrics == rep.metrics and again.ap50 == rep.ap50


def test_no_graph_can_trail_at_fixed_k():
    # Extra lower-ranked predicates of one pair push another pair's hit out of the top K.
    scene = make_scene([BOX_A, BOX_B, (50, 50, 70, 70)], relations=[(1, 0, 2)])
    ds = Dataset(make_vocab(1, 3), (scene,))
    dets = [_det(o.box.as_list()) for o in scene.objects]
    rels = [RelationScore(0, 1, np.array([0.9, 0.85, 0.1]), 4),
            RelationScore(1, 2, np.array([0.8, 0.0, 0.0]), 4)]
    rep = evaluate(ds, {"img": ImagePrediction(dets, rels)}, cfg=MatchConfig(ks=(1, 2, 3)))
    assert rep.get("R", 2) == 100.0 and rep.get("ngR", 2) == 0.0
    assert rep.get("ngR", 3) == 100.0


def test_duplicate_edges_cap_recall():
    scene = make_scene([BOX_A, BOX_B], relations=[(0, 1, 1), (0, 2, 1)])
    ds = Dataset(make_vocab(1, 3), (scene,))
    rep = evaluate(ds, {"img": gt_as_prediction(scene, 3)})
    assert rep.get("R", 20) == 50.0 and rep.get("ngR", 20) == 100.0


def test_report_table_and_dict():
    ds = generate(clean_config(n_images=2))
    rep = evaluate(ds, {s.image_id: gt_as_prediction(s, 5) for s in ds})
    text = rep.table()
    assert "R" in text and "100.00" in text and "AP50" in text
    d = rep.to_dict()
    assert d["metrics"]["R@20"] == 100.0 and set(d["per_predicate_recall"]) == {"20", "50", "100"}


def test_gt_triplets_order():
    scene = make_scene([BOX_A, BOX_B], [3, 4], relations=[(1, 2, 0)])
    (t,) = gt_triplets(scene)
    assert t.signature == (4, 2, 3)
