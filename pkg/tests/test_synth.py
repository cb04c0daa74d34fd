import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rafsg.model import SceneGraphError
from rafsg.synth import SynthConfig, clean_config, generate, paths_clear, validate_generated


def test_deterministic():
    cfg = SynthConfig(n_images=5, rng_seed=42)
    assert generate(cfg) == generate(cfg)
    assert generate(cfg) != generate(SynthConfig(n_images=5, rng_seed=43))


@settings(max_examples=25, deadline=None)
@given(
    seed=st.integers(0, 10_000),
    dup=st.booleans(),
    collide=st.booleans(),
    sep=st.sampled_from([0.0, 20.0, 60.0]),
)
def test_generate_respects_constraints(seed, dup, collide, sep):
    cfg = SynthConfig(n_images=4, rng_seed=seed, allow_duplicate_edges=dup,
                      allow_center_collisions=collide, min_center_separation=sep)
    ds = generate(cfg)
    validate_generated(ds, cfg)
    for s in ds:
        assert 5 <= len(s.objects) <= 8
        base = [r for r in s.relations]
        if not dup:
            assert 4 <= len(base) <= 8


def test_clean_config_paths():
    cfg = clean_config(n_images=10, rng_seed=1)
    ds = generate(cfg)
    validate_generated(ds, cfg)
    for s in ds:
        pairs = [(r.subject_idx, r.object_idx) for r in s.relations]
        assert paths_clear(list(s.objects), pairs, 8.0, 45.0)
        c = [o.box.center for o in s.objects]
        assert all(math.dist(c[i], c[j]) >= 96 for i in range(len(c)) for j in range(i))


def test_duplicates_add_edges():
    ds = generate(SynthConfig(n_images=30, allow_duplicate_edges=True, duplicate_edge_rate=1.0))
    for s in ds:
        pairs = [(r.subject_idx, r.object_idx) for r in s.relations]
        assert len(pairs) == 2 * len(set(pairs))


def test_infeasible_placement_errors():
    with pytest.raises(SceneGraphError, match="infeasible"):
        generate(SynthConfig(n_images=1, objects_per_image=(8, 8), min_center_separation=400))


def test_validator_catches_violation():
    cfg = SynthConfig(n_images=3, allow_duplicate_edges=True, duplicate_edge_rate=1.0)
    ds = generate(cfg)
    with pytest.raises(SceneGraphError, match="duplicate edge"):
        validate_generated(ds, SynthConfig(n_images=3))


def test_bad_config():
    with pytest.raises(SceneGraphError):
        SynthConfig(objects_per_image=(5, 2))
    with pytest.raises(SceneGraphError):
        SynthConfig(duplicate_edge_rate=1.5)


def test_zipf_skews_predicates():
    ds = generate(SynthConfig(n_images=100, zipf_exponent=2.0, rng_seed=3))
    counts = [0] * 5
    for s in ds:
        for r in s.relations:
            counts[r.predicate_id] += 1
    assert counts[0] > 2 * counts[4]
