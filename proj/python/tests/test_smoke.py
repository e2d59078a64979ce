import json

import numpy as np
import pytest

import cvpe

TINY = {
    "dataset": {"synthetic": {"n_channels": 3, "length": 300}},
    "patch": {"context": 16, "patch_len": 4, "stride": 2, "embed_dim": 8},
    "attention": {"heads": 2, "routers": 2},
    "reprogram": {"prototypes": 8},
    "backbone": {"layers": 1, "d_llm": 8, "heads": 2, "d_ff": 16},
    "train": {"epochs": 1, "batch_size": 32},
    "horizons": [4],
    "seeds": [0],
}


def test_patch_count_and_scores():
    assert cvpe.patch_count(16, 8, 256) == 30
    assert cvpe.score_entries(8, 30, 4, 2) == 30 * 2 * 2 * 4 * 8


def test_config_round_trip_and_errors():
    cfg = cvpe.load_config(TINY)
    assert cvpe.load_config(cfg) == cfg
    with pytest.raises(cvpe.ConfigError, match="attention.heads"):
        cvpe.load_config({"attention": {"heads": 3}})


def test_gradcheck_flags_injected_fault():
    report = cvpe.gradcheck()
    assert report["passed"] == (report["max_rel_error"] <= report["tolerance"])
    assert report["max_rel_error"] < 1e-2
    bad = cvpe.gradcheck(inject_fault="cvpe.routers")
    assert not bad["passed"]
    routers = [e for e in bad["entries"] if e["name"] == "cvpe.routers"][0]
    assert routers["max_rel_error"] == pytest.approx(1.0, rel=1e-3)


def test_model_forecast_and_checkpoint(tmp_path):
    model_json = json.dumps({
        "patch": {"context": 16, "patch_len": 4, "stride": 2, "embed_dim": 8},
        "attention": {"heads": 2, "routers": 2, "ff_dim": 0},
        "reprogram": {"prototypes": 8},
        "backbone": {"layers": 1, "d_llm": 8, "heads": 2, "d_ff": 16},
        "horizon": 4,
        "variant": "cvpe",
    })
    m = cvpe.Model.create(model_json, seed=1)
    x = np.random.default_rng(0).normal(size=(3, 16))
    y = m.forecast(x)
    assert y.shape == (3, 4) and np.isfinite(y).all()
    path = str(tmp_path / "m.ckpt")
    m.save(path)
    np.testing.assert_array_equal(cvpe.Model.load(path).forecast(x), y)
    with pytest.raises(cvpe.ShapeError):
        m.forecast(np.zeros((3, 15)))


def test_experiment_pairs_share_windows():
    rows = cvpe.experiment(TINY)
    assert [r["variant"] for r in rows] == ["vanilla", "cvpe"]
    assert all(r["ok"] for r in rows)
    assert rows[0]["window_hash"] == rows[1]["window_hash"]
