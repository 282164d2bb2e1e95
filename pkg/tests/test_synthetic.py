import csv
import json
from pathlib import Path

import numpy as np
import pytest

from hexembed.exceptions import ConfigError, ShapeError
from hexembed.ingest import read_elements
from hexembed.synthetic import (
    Archetype,
    composition_benchmark,
    evaluate_recovery,
    generate_planted_city,
    neighbor_auc,
    planted_benchmark,
    smoothed,
    write_fixture,
)

TWO = (Archetype("a", {"building_yes": 4, "shop_bakery": 2}),
       Archetype("b", {"landuse_forest": 4, "natural_wood": 2}))


def test_poisson_mean_within_three_sigma():
    city = generate_planted_city(TWO[:1], [0] * 400, (20, 20), seed=0)
    col = city.matrix.vocabulary.index["building_yes"]
    mean = city.matrix.dense()[:, col].mean()
    assert abs(mean - 4) < 3 * np.sqrt(4 / 400)


def test_seed_determinism():
    a, b = planted_benchmark(3, (12, 16)), planted_benchmark(3, (12, 16))
    assert a.matrix == b.matrix and np.array_equal(a.labels, b.labels)
    assert planted_benchmark(4, (12, 16)).matrix != a.matrix


def test_two_blob_layout():
    city = generate_planted_city(TWO, [("s:2,3", 0), ("s:10,3", 1)], (6, 14), seed=1)
    assert city.label_of["s:2,3"] == 0 and city.label_of["s:10,3"] == 1
    assert set(city.labels.tolist()) == {0, 1}
    assert city.matrix.counts.sum(axis=1).min() >= 1


def test_layout_validation():
    with pytest.raises(ShapeError):
        generate_planted_city(TWO, [0, 1], (3, 3))
    with pytest.raises(ConfigError):
        generate_planted_city(TWO, [2] * 9, (3, 3))
    with pytest.raises(ConfigError):
        Archetype("z", {"a_b": 0})


def test_archetype_sum():
    s = TWO[0] + TWO[0]
    assert s.rates == {"building_yes": 8, "shop_bakery": 4}


def test_one_hot_recovers_perfectly_and_random_does_not():
    city = planted_benchmark(0, (12, 16))
    k = len(city.archetypes)
    onehot = np.eye(k)[city.labels]
    assert evaluate_recovery(onehot, city.labels, k)["ari"] == 1.0
    truth = np.arange(200) % 2
    aris = [evaluate_recovery(np.random.default_rng(s).standard_normal((200, 8)), truth, 2)["ari"]
            for s in range(20)]
    assert abs(np.mean(aris)) < 0.1


def test_raw_counts_cluster_cleanly():
    city = generate_planted_city(TWO, [("s:2,3", 0), ("s:10,3", 1)], (6, 14), seed=2)
    assert evaluate_recovery(city.matrix.dense().astype(float), city.labels, 2)["ari"] == 1.0


def test_constant_scorer_has_chance_auc():
    city = planted_benchmark(0, (10, 12))
    assert neighbor_auc(np.zeros((len(city.regions), 3)), city.regions, city.grid) == 0.5


def test_composition_benchmark_has_mixed_blob():
    city = composition_benchmark(0)
    assert city.archetypes[2].name == "downtown+river"
    assert {0, 1, 2} <= set(city.labels.tolist())


def test_smoothed():
    np.testing.assert_allclose(smoothed([3, 1, 2, 6], 2), [3, 2, 1.5, 4])


def test_write_fixture_round_trips(tmp_path):
    city = generate_planted_city(TWO, [("s:1,1", 0), ("s:5,1", 1)], (3, 6), seed=0, name="t")
    paths = write_fixture([city], tmp_path)
    els = list(read_elements(paths["t"]["elements"]))
    assert len(els) == int(city.matrix.counts.sum())
    with open(paths["truth"], newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert [r["region_id"] for r in rows] == city.regions
    boundary = json.loads(Path(paths["t"]["boundary"]).read_text())
    assert boundary["properties"]["name"] == "t"
    assert paths["t"]["shape"] == list(city.matrix.shape)
