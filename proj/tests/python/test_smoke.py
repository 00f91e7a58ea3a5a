import json
import math
from pathlib import Path

import numpy as np
import pytest

import metaprompter as mp

SMOKE = Path(__file__).resolve().parents[2] / "configs" / "smoke.toml"


def test_param_count():
    assert mp.param_count() == 55296
    assert mp.param_count(pool_size=16, prompt_len=2, input_dim=8, output_dim=8) == 16 * (8 + 2 * 8)
    assert mp.param_count("metaprompting", prompt_len=4, input_dim=8, encoder_params=100) == 100 + 32


def test_repverb_limits_and_combination():
    rng = np.random.default_rng(0)
    h = rng.normal(size=6)
    labels = rng.normal(size=(3, 6))
    flat = mp.repverb_prob(h, labels, rho=1e-9)
    assert np.allclose(flat, 1 / 3, atol=1e-8)
    p = mp.repverb_prob(h, labels, rho=10.0)
    assert math.isclose(p.sum(), 1.0, abs_tol=1e-12)
    hard = np.array([0.2, 0.5, 0.3])
    assert np.array_equal(mp.combined_prob(hard, p, 0.0), hard)
    assert np.array_equal(mp.combined_prob(hard, p, 1.0), p)
    with pytest.raises(mp.ConfigError):
        mp.combined_prob(hard, p, 1.5)
    with pytest.raises(mp.DegenerateVectorError):
        mp.repverb_prob(np.zeros(6), labels)


def test_pca_shape_and_centering():
    data = np.random.default_rng(1).normal(size=(20, 5))
    xy = mp.pca_2d(data)
    assert xy.shape == (20, 2)
    assert np.allclose(xy.mean(axis=0), 0.0, atol=1e-12)
    with pytest.raises(mp.DimensionError):
        mp.pca_2d(np.ones((1, 3)))


def test_config_loading():
    cfg = mp.load_config(SMOKE, **{"pool.k": 16, "adapt.literal_label_timing": True})
    assert cfg["pool"]["k"] == 16
    assert cfg["adapt"]["literal_label_timing"] is True
    assert cfg["run"]["name"] == "smoke"
    with pytest.raises(mp.ConfigError, match="pool.kk"):
        mp.load_config(**{"pool.kk": 1})
    assert "meta-train" in mp.command_names()


def test_pipeline_round_trip(tmp_path):
    summary, artifacts, _ = mp.run("gen-corpus", SMOKE, tmp_path / "a")
    again, _, _ = mp.run("gen-corpus", SMOKE, tmp_path / "b")
    assert summary["corpus_hash"] == again["corpus_hash"]
    corpus = (tmp_path / "a" / "corpus.jsonl").read_bytes()
    assert mp.git_blob_hash(corpus) == summary["corpus_hash"]
    assert any(a.endswith("manifest.json") for a in artifacts)

    mp.run("meta-train", SMOKE, tmp_path / "a")
    result, _, log = mp.run("meta-test", SMOKE, tmp_path / "a")
    assert result["episodes"] == 3
    assert 0.0 <= result["mean"] <= 1.0
    assert "accuracy" in log
    manifest = json.loads((tmp_path / "a" / "manifest.json").read_text())
    assert manifest["command"] == "meta-test"

    with pytest.raises(mp.ValidationError, match="meta.ckpt"):
        mp.run("meta-test", SMOKE, tmp_path / "empty")
