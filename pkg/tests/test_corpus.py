from collections import Counter

import pytest

from scenephys.corpus import (
    OBJECT_KINDS,
    SCENE_LABEL_ID,
    CorpusConfig,
    generate_corpus,
    generate_scene,
    labels_from_json,
    labels_to_json,
    write_corpus,
)
from scenephys.scene import dumps_scene, load_scene

MIX = {"collision": 0.2, "floating": 0.1, "unanchored": 0.1, "statically-unstable": 0.1, "blocking": 0.3}


def test_generation_is_deterministic_per_index():
    cfg = CorpusConfig(count=5, seed=9, violation_mix=MIX)
    a = generate_corpus(cfg)
    b = [generate_scene(cfg, i) for i in reversed(range(5))][::-1]
    assert [dumps_scene(s) for s, _ in a] == [dumps_scene(s) for s, _ in b]
    assert [l for _, l in a] == [l for _, l in b]


def test_different_seeds_differ():
    a, _ = generate_scene(CorpusConfig(seed=1), 0)
    b, _ = generate_scene(CorpusConfig(seed=2), 0)
    assert dumps_scene(a) != dumps_scene(b)


def test_clean_config_injects_nothing():
    for s, labels in generate_corpus(CorpusConfig(count=5)):
        assert labels == []
        assert 4 <= len(s.objects) <= 10


def test_labels_respect_ranges_and_kinds():
    cfg = CorpusConfig(count=30, seed=4, violation_mix=MIX)
    kinds = Counter()
    for s, labels in generate_corpus(cfg):
        ids = {o.id for o in s.objects}
        for lab in labels:
            if lab.kind == "blocking":
                assert lab.object_id == SCENE_LABEL_ID
                continue
            assert lab.object_id in ids
            assert lab.kind in OBJECT_KINDS
            if not lab.derived:
                lo, hi = cfg.ranges[lab.kind]
                assert lo - 1e-9 <= lab.magnitude <= hi + 1e-9
                kinds[lab.kind] += 1
    assert set(kinds) == {"collision", "floating", "unanchored", "statically-unstable"}


def test_labels_json_round_trip():
    _, labels = generate_scene(CorpusConfig(violation_mix=MIX, seed=3), 1)
    assert labels_from_json(labels_to_json(labels)) == labels


def test_write_corpus(tmp_path):
    corpus = generate_corpus(CorpusConfig(count=3, violation_mix=MIX))
    paths = write_corpus(corpus, tmp_path)
    assert [p.name for p in paths] == ["scene_0000.json", "scene_0001.json", "scene_0002.json"]
    assert dumps_scene(load_scene(paths[1])) == dumps_scene(corpus[1][0])
    assert labels_from_json((tmp_path / "scene_0001.labels.json").read_text()) == corpus[1][1]


@pytest.mark.parametrize("bad", [
    dict(count=0),
    dict(objects_per_scene=(5, 2)),
    dict(violation_mix={"wobbly": 0.1}),
    dict(violation_mix={"collision": 0.7, "floating": 0.7}),
    dict(ranges={"collision": (0.2, 0.1)}),
])
def test_config_validation(bad):
    with pytest.raises(ValueError):
        CorpusConfig(**bad)
