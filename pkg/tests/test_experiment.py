import csv
import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import brute_force_alignment
from invfilt.errors import ValidationError
from invfilt.experiment import (ExperimentConfig, SuccessCurve, TrialRecord, emit_results,
                                run_success_curve, run_trial)
from invfilt.metrics import model_errors, permutation_aligned_error
from invfilt.presets import get_preset


# ---- permutation-aligned error --------------------------------------------

def test_alignment_identity(dense3):
    _, B = dense3
    err, perm = permutation_aligned_error(B, B)
    assert err == 0.0 and perm == (0, 1, 2)


def test_alignment_swap(dense3):
    _, B = dense3
    err, perm = permutation_aligned_error(B[:, [1, 0, 2]], B)
    assert err == 0.0 and perm == (1, 0, 2)


def test_alignment_small_perturbation(dense3):
    _, B = dense3
    rng = np.random.default_rng(0)
    Bh = B + 1e-4 * rng.random(B.shape)
    Bh /= Bh.sum(1, keepdims=True)
    err, perm = permutation_aligned_error(Bh, B)
    ref_err, ref_perm = brute_force_alignment(Bh, B)
    assert perm == (0, 1, 2) == tuple(ref_perm)
    assert err == pytest.approx(ref_err, rel=1e-12)
    assert 1e-6 < err < 1e-3


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 6), st.integers(1, 5))
def test_alignment_matches_brute_force(seed, Y, X):
    rng = np.random.default_rng(seed)
    B, Bh = rng.random((X, Y)), rng.random((X, Y))
    err, perm = permutation_aligned_error(Bh, B)
    ref_err, _ = brute_force_alignment(Bh, B)
    assert err == pytest.approx(ref_err, rel=1e-9, abs=1e-12)
    assert np.linalg.norm(Bh[:, list(perm)] - B) == pytest.approx(err, rel=1e-9, abs=1e-12)


def test_alignment_large_needs_assignment():
    rng = np.random.default_rng(1)
    B = rng.random((3, 10))
    perm_true = rng.permutation(10)
    Bh = np.empty_like(B)
    Bh[:, perm_true] = B
    with pytest.raises(ValidationError):
        permutation_aligned_error(Bh, B)
    err, perm = permutation_aligned_error(Bh, B, use_assignment=True)
    assert err == pytest.approx(0.0, abs=1e-12)
    assert np.array_equal(perm, perm_true)


def test_alignment_shape_mismatch():
    with pytest.raises(ValidationError):
        permutation_aligned_error(np.ones((2, 2)), np.ones((2, 3)))


def test_model_errors(dense3):
    P, B = dense3
    eP, eB, perm = model_errors(P + 1e-5, B[:, [2, 0, 1]], P, B)
    assert eP == pytest.approx(3e-5) and eB == 0.0
    assert perm == (1, 2, 0)


# ---- configuration --------------------------------------------------------

def test_config_from_preset():
    cfg = ExperimentConfig.from_dict({"preset": "eq38", "n_grid": [20, 50], "trials": 3})
    P, B = get_preset("eq38")
    assert np.array_equal(cfg.P, P) and np.array_equal(cfg.B, B)
    assert cfg.n_grid == (20, 50) and cfg.methods == ("algorithm1", "oracle")


@pytest.mark.parametrize("bad", [
    {"preset": "eq99", "n_grid": [10]},
    {"n_grid": [10]},
    {"preset": "eq38"},
    {"preset": "eq38", "n_grid": [10], "trials": 0},
    {"preset": "eq38", "n_grid": [10], "threshold": 0},
    {"preset": "eq38", "n_grid": [10], "methods": ["magic"]},
    {"preset": "eq38", "n_grid": [10], "colour": "red"},
    {"preset": "eq38", "P": [[1.0]], "B": [[1.0]], "n_grid": [10]},
])
def test_config_errors(bad):
    with pytest.raises(ValidationError):
        ExperimentConfig.from_dict(bad)


def test_inline_config():
    P, B = get_preset("eq38")
    cfg = ExperimentConfig.from_dict({"P": P.tolist(), "B": B.tolist(), "n_grid": [5]})
    assert cfg.preset == "" and cfg.P.shape == (3, 3)


# ---- running and emission -------------------------------------------------

def test_two_steps_always_fail():
    cfg = ExperimentConfig.from_dict({"preset": "eq38", "n_grid": [2], "trials": 1})
    curve = run_success_curve(cfg)
    assert curve.fraction("algorithm1", 2) == 0.0
    assert curve.fraction("oracle", 2) == 0.0
    statuses = {r.method: r.status for r in curve.records}
    assert statuses["algorithm1"] == "precheck:too_few_steps"


def test_trial_methods_share_trajectory():
    cfg = ExperimentConfig.from_dict({"preset": "eq38", "n_grid": [60], "trials": 1, "seed": 3})
    recs = run_trial(cfg, 60, 0)
    assert [r.method for r in recs] == ["algorithm1", "oracle"]
    # same trajectory: whenever algorithm1 succeeds the oracle does too
    if recs[0].success:
        assert recs[1].success


def test_oracle_saturates_at_hundred_steps():
    cfg = ExperimentConfig.from_dict({"preset": "eq38", "n_grid": [100], "trials": 20,
                                      "methods": ["oracle"]})
    assert run_success_curve(cfg).fraction("oracle", 100) >= 0.9


def read(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def test_emit_csv_rows(tmp_path):
    recs = [TrialRecord("algorithm1", 10, 0, True, "ok", 1e-5, 2e-5, 0.1),
            TrialRecord("algorithm1", 10, 1, False, "inaccurate", 1.0, 1.0, 0.2),
            TrialRecord("oracle", 10, 0, True, "ok", 0.0, 0.0, 0.01),
            TrialRecord("oracle", 10, 1, True, "ok", 0.0, 0.0, 0.01)]
    curve = SuccessCurve(("algorithm1", "oracle"), (10,), recs)
    emit_results(curve, tmp_path)
    rows = read(tmp_path / "success.csv")
    assert rows[0] == ["method", "N", "successes", "trials", "fraction"]
    assert rows[1:] == [["algorithm1", "10", "1", "2", "0.5"], ["oracle", "10", "2", "2", "1.0"]]
    assert len(read(tmp_path / "trials.csv")) == 5
    emit_results(curve, tmp_path / "t", timing=True)
    assert read(tmp_path / "t" / "success.csv")[0][-1] == "mean_seconds"


def test_emit_empty_grid_header_only(tmp_path):
    emit_results(SuccessCurve(("oracle",), (), []), tmp_path)
    assert read(tmp_path / "success.csv") == [["method", "N", "successes", "trials", "fraction"]]


def test_emit_json(tmp_path):
    recs = [TrialRecord("oracle", 4, 0, False, "identifiability", np.inf, np.inf, 0.0)]
    emit_results(SuccessCurve(("oracle",), (4,), recs), tmp_path, fmt="json")
    doc = json.loads((tmp_path / "success.json").read_text())
    assert doc["rows"] == [["oracle", 4, 0, 1, 0.0]]
    assert doc["trials"][0]["P_error"] is None


def test_emit_rejects_unknown_format(tmp_path):
    with pytest.raises(ValidationError):
        emit_results(SuccessCurve(("oracle",), (), []), tmp_path, fmt="xml")


def test_emit_plot(tmp_path):
    recs = [TrialRecord(m, n, 0, n > 10, "ok", 0.0, 0.0, 0.0)
            for m in ("algorithm1", "oracle") for n in (10, 20)]
    files = emit_results(SuccessCurve(("algorithm1", "oracle"), (10, 20), recs), tmp_path,
                         plot=True)
    png = tmp_path / "success.png"
    assert png in files and png.read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"


def test_reruns_are_byte_identical(tmp_path):
    cfg = ExperimentConfig.from_dict({"preset": "eq38", "n_grid": [12, 30], "trials": 3,
                                      "seed": 5})
    emit_results(run_success_curve(cfg), tmp_path / "a")
    emit_results(run_success_curve(cfg, threads=2), tmp_path / "b")
    for name in ("success.csv", "trials.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_preset_aliases():
    for alias, name in (("cycle5", "eq37"), ("dense3", "eq38")):
        a, b = get_preset(alias), get_preset(name)
        assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])
