import csv
import json
import shutil

import numpy as np
import pytest

from hexembed import pipeline
from hexembed.cli import main
from hexembed.featurize import read_feature_matrix
from hexembed.model import embed_all, init_params, load_weights, read_embeddings
from hexembed.pipeline import PipelineConfig


def _cli(*argv):
    return main([str(a) for a in argv])


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    d = tmp_path_factory.mktemp("fx")
    assert _cli("synth", "--out", d, "--rows", 8, "--cols", 10, "--epochs", 3) == 0
    cfg = d / "config.toml"
    assert _cli("featurize", "--config", cfg) == 0
    assert _cli("train", "--config", cfg) == 0
    return d


def _regions(out):
    with open(out / "embeddings.csv", newline="") as fh:
        return [row[0] for row in list(csv.reader(fh))[1:]]


def test_featurize_matches_fixture_shape(trained):
    m = read_feature_matrix(trained / "out" / "features.csv")
    assert m.shape[0] == 2 * 8 * 10
    assert set(m.cities) == {"city0", "city1"}
    for name in ("vocabulary.txt", "coverage_percent.csv", "coverage_normalized.csv", "region_counts.csv"):
        assert (trained / "out" / name).exists()


def test_manifest_and_sidecars_carry_the_config_digest(trained):
    out = trained / "out"
    digest = PipelineConfig.load(trained / "config.toml").digest()
    man = json.loads((out / "manifest_train.json").read_text())
    assert man["config_digest"] == digest and man["stage"] == "train"
    files = {o["file"] for o in man["outputs"]}
    assert files == {"weights.json", "embeddings.csv", "loss_history.csv"}
    for f in files:
        meta = json.loads((out / f"{f}.meta.json").read_text())
        assert meta["config_digest"] == digest
    assert not list(out.glob(".tmp-*"))


def test_digest_ignores_output_dir(trained):
    cfg = PipelineConfig.load(trained / "config.toml")
    assert cfg.override(out=str(trained / "elsewhere")).digest() == cfg.digest()
    assert cfg.override(seed=9).digest() != cfg.digest()


def test_rerun_is_byte_identical(trained, tmp_path):
    cfg = trained / "config.toml"
    out = tmp_path / "again"
    assert _cli("featurize", "--config", cfg, "--out", out) == 0
    assert _cli("train", "--config", cfg, "--out", out) == 0
    for name in ("features.csv", "weights.json", "embeddings.csv", "loss_history.csv"):
        assert (out / name).read_bytes() == (trained / "out" / name).read_bytes()


def test_zero_learning_rate_keeps_initial_embeddings(trained, tmp_path):
    text = (trained / "config.toml").read_text().replace("[training]\n", "[training]\nlearning_rate = 0.0\n")
    for f in trained.iterdir():
        if f.is_file():
            shutil.copy(f, tmp_path / f.name)
    (tmp_path / "config.toml").write_text(text)
    assert _cli("featurize", "--config", tmp_path / "config.toml") == 0
    assert _cli("train", "--config", tmp_path / "config.toml") == 0
    _, enc, _ = load_weights(tmp_path / "out" / "weights.json")
    m = read_feature_matrix(tmp_path / "out" / "features.csv")
    got = read_embeddings(tmp_path / "out" / "embeddings.csv")
    np.testing.assert_array_equal(got.vectors, embed_all(init_params(enc), enc, m).vectors)


def test_cluster_with_truth_reports_ari(trained, capsys):
    assert _cli("analyze", "cluster", "--config", trained / "config.toml", "--k", 10,
                "--truth", trained / "truth.csv") == 0
    report = json.loads((trained / "out" / "cluster_report.json").read_text())
    assert report["k"] == 10 and sum(report["cluster_sizes"]) == 160
    assert -1 <= report["ari"] <= 1
    assert "ARI vs truth" in capsys.readouterr().out
    doc = json.loads((trained / "out" / "assignment.geojson").read_text())
    assert len(doc["features"]) == 160


def test_nearest_excludes_self(trained):
    region = _regions(trained / "out")[0]
    assert _cli("analyze", "nearest", "--config", trained / "config.toml", "--region", region, "--top", 5) == 0
    doc = json.loads((trained / "out" / "nearest.json").read_text())
    ids = [h["region_id"] for h in doc["hits"]]
    assert len(ids) == 5 and region not in ids


def test_interpolate_has_seven_features(trained, tmp_path):
    a, b = _regions(trained / "out")[:2]
    assert _cli("analyze", "interpolate", "--config", trained / "config.toml", "--from", a, "--to", b) == 0
    doc = json.loads((trained / "out" / "interpolate.geojson").read_text())
    assert len(doc["features"]) == 7
    out = tmp_path / "p.geojson"
    assert _cli("export-geojson", "--config", trained / "config.toml",
                "--input", trained / "out" / "interpolate.json", "--output", out) == 0
    assert json.loads(out.read_text()) == doc


def test_add_query(trained):
    a, b = _regions(trained / "out")[:2]
    assert _cli("analyze", "add", "--config", trained / "config.toml", "--a", a, "--b", b) == 0
    hits = json.loads((trained / "out" / "add.json").read_text())["hits"]
    assert not {a, b} & {h["region_id"] for h in hits}


def test_stats_prints_table(trained, capsys):
    assert _cli("stats", "--config", trained / "config.toml") == 0
    out = capsys.readouterr().out
    assert "160 regions" in out and "city0" in out and "city1" in out


def test_city_override(trained, tmp_path):
    out = tmp_path / "one"
    assert _cli("featurize", "--config", trained / "config.toml", "--city", "city1", "--out", out) == 0
    assert set(read_feature_matrix(out / "features.csv").cities) == {"city1"}
    assert _cli("featurize", "--config", trained / "config.toml", "--city", "nowhere", "--out", out) == 1


def test_exit_codes(trained, tmp_path):
    cfg = trained / "config.toml"
    assert _cli("analyze", "nearest", "--config", cfg, "--region", "s:999,999") == 2
    assert _cli("featurize", "--config", tmp_path / "missing.toml") == 1
    with pytest.raises(SystemExit) as exc:
        _cli("frobnicate")
    assert exc.value.code == 1


def test_empty_input_leaves_no_partial_outputs(trained, tmp_path):
    for f in trained.iterdir():
        if f.is_file():
            shutil.copy(f, tmp_path / f.name)
    (tmp_path / "city0.jsonl").write_text("")
    (tmp_path / "city1.jsonl").write_text("")
    assert _cli("featurize", "--config", tmp_path / "config.toml") != 0
    out = tmp_path / "out"
    assert not out.exists() or not any(out.iterdir())


def test_stage_api_returns_results(trained):
    cfg = PipelineConfig.load(trained / "config.toml")
    region = _regions(trained / "out")[3]
    res = pipeline.analyze(cfg, "nearest", {"region": region, "top": 3}, echo=lambda *_: None)
    assert len(res.hits) == 3
