import os

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from emokd.distillation import DistillData, DistillHeadConfig, DistillHyperparams, train_distill_head
from emokd.errors import EmptyDataset, InvalidGrid, ShapeError
from emokd.evaluation import (
    Partition,
    accuracy,
    build_eval_report,
    complementarity,
    complementarity_report,
    default_depth_grid,
    emit_report,
    oracle_upper_bound,
    run_alpha_sweep,
    run_depth_sweep,
    run_gate_sweep,
)
from emokd.gating import GateData, GateHyperparams


@pytest.mark.parametrize("pred,truth,expected", [
    ("abcd", "abcd", 1.0), ("bcda", "abcd", 0.0), ("abcx", "abcd", 0.75),
])
def test_accuracy_examples(pred, truth, expected):
    assert accuracy(pred, truth) == expected


def test_accuracy_errors():
    with pytest.raises(ShapeError):
        accuracy([1, 2], [1])
    with pytest.raises(EmptyDataset):
        accuracy([], [])


def test_complementarity_examples():
    assert complementarity("ab", "ab", "ab").fractions() == {"both": 1.0, "a_only": 0.0, "b_only": 0.0, "neither": 0.0}
    truth = [1, 2, 3, 4]
    part = complementarity([1, 2, 0, 0], [0, 2, 3, 0], truth)
    assert part.fractions() == {"both": 0.25, "a_only": 0.25, "b_only": 0.25, "neither": 0.25}
    assert oracle_upper_bound(part) == 0.75


def test_oracle_cases():
    assert oracle_upper_bound({"both": 0.6, "a_only": 0, "b_only": 0, "neither": 0.4}) == 0.6
    assert oracle_upper_bound(Partition(0, 0, 0, 5)) == 0
    assert oracle_upper_bound({"both": 0, "a_only": 1, "b_only": 0, "neither": 0}) == 1


triples = st.integers(1, 60).flatmap(lambda n: st.tuples(
    *(st.lists(st.integers(0, 3), min_size=n, max_size=n) for _ in range(3))))


@settings(max_examples=200, deadline=None)
@given(triples)
def test_partition_identities(case):
    a, b, t = case
    part = complementarity(a, b, t)
    assert part.n == len(t)
    assert part.both + part.a_only == sum(x == y for x, y in zip(a, t))
    assert part.both + part.b_only == sum(x == y for x, y in zip(b, t))
    assert oracle_upper_bound(part) >= max(accuracy(a, t), accuracy(b, t))


def test_eval_report_flags_fused_above_oracle(caplog):
    truth = ["x", "y", "z"]
    ok = build_eval_report("d", "abc", truth, ["x", "q", "q"], ["q", "y", "q"], ["x", "y", "q"])
    assert ok.fused_within_oracle and ok.oracle == pytest.approx(2 / 3)
    assert ok.summary()["partition"]["systems"] == ["student", "vlm"]
    bad = build_eval_report("d", "abc", truth, ["x", "q", "q"], ["q", "q", "q"], truth)
    assert bad.fused_within_oracle is False
    assert "exceeds oracle" in caplog.text


def _distill_data(seed=0, n=120, d=6, C=3):
    rng = np.random.default_rng(seed)
    y = rng.integers(0, C, size=n)
    x = rng.normal(scale=3.0, size=(C, d))[y] + rng.normal(size=(n, d))
    t = np.log(np.where(np.eye(C)[y] > 0, 0.7, 0.3 / (C - 1)))
    return DistillData(x, t, y)


def test_alpha_sweep_grid_and_trend():
    train, val = _distill_data(0), _distill_data(1)
    grid = [round(0.1 * k, 1) for k in range(1, 10)]
    res = run_alpha_sweep(grid, train, val, DistillHeadConfig(6, (8,), 3), DistillHyperparams(max_epochs=5))
    assert res.values == grid and len(res) == 9
    assert res.records[-1]["final_l_kd"] <= res.records[0]["final_l_kd"]


def test_singleton_alpha_sweep_matches_direct_training():
    train, val = _distill_data(0), _distill_data(1)
    cfg, hp = DistillHeadConfig(6, (), 3), DistillHyperparams(alpha=0.5, max_epochs=4, seed=3)
    res = run_alpha_sweep([0.5], train, val, cfg, hp)
    _, hist = train_distill_head(train, val, cfg, hp)
    assert res.records == [{"value": 0.5, "accuracy": hist.best.val_acc, "final_l_kd": hist.final.l_kd,
                            "epochs": len(hist)}]


@pytest.mark.parametrize("grid", [[], [1.5], [-0.1, 0.5]])
def test_bad_alpha_grid(grid):
    with pytest.raises(InvalidGrid):
        run_alpha_sweep(grid, _distill_data(), None, DistillHeadConfig(6, (), 3))


@pytest.mark.parametrize("C,counts", [
    (8, [3_679_240, 4_199_944, 4_329_224, 4_361_096, 4_368_840]),
    (6, [3_677_190, 4_198_918, 4_328_710, 4_360_838, 4_368_710]),
])
def test_depth_sweep_counts_at_full_width(C, counts):
    rng = np.random.default_rng(0)
    n = 8
    data = DistillData(rng.normal(size=(n, 3584)), rng.normal(size=(n, C)), rng.integers(0, C, size=n))
    res = run_depth_sweep(default_depth_grid(3584, C), data, None, DistillHyperparams(max_epochs=1, batch_size=8))
    assert [r["param_count"] for r in res.records] == counts
    assert res.values == [1, 2, 3, 4, 5]


def test_empty_depth_grid():
    with pytest.raises(InvalidGrid):
        run_depth_sweep([], _distill_data(), None)


def _gate_data(seed, n=150, C=8):
    rng = np.random.default_rng(seed)
    y = rng.integers(0, C, size=n)
    v1 = np.eye(C)[np.where(rng.random(n) < 0.7, y, rng.integers(0, C, size=n))]
    v2 = np.full((n, C), 0.2 / (C - 1))
    v2[np.arange(n), y] = 0.8
    return GateData(v1, v2, y)


def test_gate_sweep_records():
    res = run_gate_sweep(["cross_gating", "concat_linear", "moe", "bilinear", "dynamic_weighting"],
                         _gate_data(0), _gate_data(1), _gate_data(2), GateHyperparams(max_epochs=2))
    assert res.values == ["concat_linear", "moe", "bilinear", "dynamic_weighting", "cross_gating"]
    assert all(0 <= r["accuracy"] <= 1 for r in res.records)
    assert res.records[0]["param_count"] == 136


def test_gate_sweep_rejects_unknown_variant():
    with pytest.raises(InvalidGrid):
        run_gate_sweep(["attention"], _gate_data(0), None, _gate_data(1))
    with pytest.raises(InvalidGrid):
        run_gate_sweep([], _gate_data(0), None, _gate_data(1))


def _small_sweep():
    return run_alpha_sweep([0.2, 0.8], _distill_data(0), _distill_data(1), DistillHeadConfig(6, (), 3),
                           DistillHyperparams(max_epochs=2), dataset="synthetic")


def test_emit_report_naming_and_determinism(tmp_path):
    res = _small_sweep()
    a = emit_report(res, tmp_path / "a")
    b = emit_report(_small_sweep(), tmp_path / "b")
    assert {k: p.name for k, p in a.items()} == {
        "summary": "alpha_sweep.summary.json", "table": "alpha_sweep.table.csv", "plot": "alpha_sweep.plot.png"}
    for key in ("summary", "table"):
        assert a[key].read_bytes() == b[key].read_bytes()
    assert a["plot"].read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"
    assert a["table"].read_text().splitlines()[0] == "value,accuracy,final_l_kd,epochs"


def test_emit_complementarity_and_eval_reports(tmp_path):
    rep = complementarity_report("fi", [1, 2, 0, 0], [0, 2, 3, 0], [1, 2, 3, 4])
    paths = emit_report(rep, tmp_path)
    assert "bucket,count,fraction" in paths["table"].read_text()
    ev = build_eval_report("fi", ["s1"], ["awe"], ["awe"], ["fear"], ["awe"])
    paths = emit_report(ev, tmp_path)
    assert paths["summary"].name == "evaluation.summary.json"


@pytest.mark.skipif(os.geteuid() == 0, reason="root ignores directory permissions")
def test_emit_report_unwritable_dir(tmp_path):
    locked = tmp_path / "locked"
    locked.mkdir(mode=0o500)
    with pytest.raises(OSError, match="locked"):
        emit_report(_small_sweep(), locked / "out")


def test_emit_report_blocked_by_file(tmp_path):
    blocker = tmp_path / "blocker"
    blocker.write_text("")
    with pytest.raises(OSError, match="blocker"):
        emit_report(_small_sweep(), blocker)
