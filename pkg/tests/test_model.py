import json
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rafsg.model import (
    BBox,
    SceneGraphError,
    build_frequency_table,
    dataset_from_dict,
    dumps_dataset,
    load_dataset,
    make_scales,
    scale_preset,
)
from rafsg.synth import SynthConfig, generate
from rafsg.tensorio import TensorFormatError, decode_dense, encode_dense, read_dense, write_dense


def _raw(objects, relations):
    return {
        "vocab": {"objects": ["a", "b"], "predicates": ["on", "near"]},
        "images": [
            {"id": "x", "width": 100, "height": 100, "objects": objects, "relations": relations}
        ],
    }


def test_load_one_image(tmp_path):
    raw = _raw(
        [{"bbox": [0, 0, 10, 10], "class": 0}, {"bbox": [20, 20, 40, 50], "class": 1}],
        [{"subject": 0, "predicate": 1, "object": 1}],
    )
    p = tmp_path / "d.json"
    p.write_text(json.dumps(raw))
    ds = load_dataset(p)
    assert len(ds) == 1
    assert len(ds.images[0].objects) == 2 and len(ds.images[0].relations) == 1
    assert load_dataset(p) == ds


def test_self_relation_rejected():
    raw = _raw([{"bbox": [0, 0, 10, 10], "class": 0}], [{"subject": 0, "predicate": 0, "object": 0}])
    with pytest.raises(SceneGraphError, match="self-relation") as e:
        dataset_from_dict(raw)
    assert "'x'" in str(e.value)


def test_degenerate_box_rejected():
    raw = _raw([{"bbox": [5, 0, 5, 10], "class": 0}], [])
    with pytest.raises(SceneGraphError, match="degenerate box"):
        dataset_from_dict(raw)
    with pytest.raises(SceneGraphError):
        BBox(0, 0, float("nan"), 1)


def test_parse_error_has_line(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text('{\n "vocab": [\n}')
    with pytest.raises(SceneGraphError, match="line 3"):
        load_dataset(p)


def test_dataset_text_roundtrip():
    ds = generate(SynthConfig(n_images=3, rng_seed=5))
    assert dataset_from_dict(json.loads(dumps_dataset(ds))) == ds


def test_frequency_empty_and_counting():
    ds = generate(SynthConfig(n_images=2, relations_per_image=(0, 0)))
    assert build_frequency_table(ds).counts == {}
    raw = {
        "vocab": {"objects": [f"c{i}" for i in range(8)], "predicates": [f"p{i}" for i in range(4)]},
        "images": [
            {
                "id": str(k), "width": 50, "height": 50,
                "objects": [{"bbox": [0, 0, 5, 5], "class": 5}, {"bbox": [10, 10, 20, 20], "class": 7}],
                "relations": [{"subject": 0, "predicate": 3, "object": 1}],
            }
            for k in range(2)
        ],
    }
    assert build_frequency_table(dataset_from_dict(raw))[(5, 3, 7)] == 2


def test_frequency_matches_raw_json_count():
    ds = generate(SynthConfig(n_images=30, n_classes=3, n_predicates=2, rng_seed=9))
    raw = json.loads(dumps_dataset(ds))
    oracle = Counter()
    for im in raw["images"]:
        for r in im["relations"]:
            oracle[(im["objects"][r["subject"]]["class"], r["predicate"],
                    im["objects"][r["object"]]["class"])] += 1
    table = build_frequency_table(ds)
    assert table.counts == dict(oracle)
    assert table.total == sum(len(s.relations) for s in ds)


def test_tensor_examples(tmp_path):
    z = np.zeros((1, 2, 2), np.float32)
    write_dense(z, tmp_path / "z.raft")
    assert read_dense(tmp_path / "z.raft").tobytes() == z.tobytes()
    v = np.full((3,), 0.1, np.float32)
    assert decode_dense(encode_dense(v)).tobytes() == v.tobytes()
    buf = encode_dense(v)
    with pytest.raises(TensorFormatError, match="bad magic"):
        decode_dense(b"XXXX" + buf[4:])
    with pytest.raises(TensorFormatError):
        decode_dense(buf[:-1])
    with pytest.raises(TensorFormatError):
        decode_dense(buf + b"\0")
    with pytest.raises(TensorFormatError):
        encode_dense(np.array([np.inf]))


@settings(max_examples=40, deadline=None)
@given(
    st.lists(st.integers(1, 64), min_size=1, max_size=3),
    st.integers(0, 2**31),
)
def test_tensor_roundtrip_property(shape, seed):
    a = np.random.default_rng(seed).standard_normal(shape).astype(np.float32)
    b = decode_dense(encode_dense(a))
    assert b.shape == a.shape and b.tobytes() == a.tobytes()


def test_scale_presets():
    one = scale_preset("1s")
    assert [s.stride for s in one] == [4]
    four = scale_preset("4s")
    assert [s.stride for s in four] == [4, 8, 16, 32]
    assert [s.box_area_range for s in four] == [
        (0, 32**2), (32**2, 64**2), (64**2, 128**2), (128**2, 512**2)
    ]
    assert [s.raf_length_range for s in four] == [(0, 32), (32, 64), (64, 128), (128, 512)]
    five = scale_preset("5s")
    assert [s.stride for s in five] == [8, 16, 32, 64, 128]
    assert five[-1].box_area_range == (512**2, 1024**2)
    assert scale_preset("1s", stride=8)[0].stride == 8
    with pytest.raises(SceneGraphError):
        make_scales([8, 4], [0, 1, 2])
    with pytest.raises(SceneGraphError):
        scale_preset("3s")
