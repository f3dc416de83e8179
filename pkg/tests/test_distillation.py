import hashlib
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from emokd.core import MIKELS8, one_hot
from emokd.distillation import (
    DistillData,
    DistillHead,
    DistillHeadConfig,
    DistillHyperparams,
    ce_loss,
    distill_objective,
    head_forward,
    kd_loss,
    load_head,
    loss_gradients,
    param_count,
    save_head,
    student_distribution,
    total_loss,
    train_distill_head,
)
from emokd.errors import EmptyDataset, InvalidAlpha, InvalidTemperature, MissingArtifact, SchemaError, ShapeError
from oracles import fd_check, naive_kl, naive_softmax, naive_total_loss

TABLE3 = [
    ((1024,), 3_679_240, 3_677_190),
    ((1024, 512), 4_199_944, 4_198_918),
    ((1024, 512, 256), 4_329_224, 4_328_710),
    ((1024, 512, 256, 128), 4_361_096, 4_360_838),
    ((1024, 512, 256, 128, 64), 4_368_840, 4_368_710),
]


@pytest.mark.parametrize("hidden,c8,c6", TABLE3)
def test_param_count_layer_table(hidden, c8, c6):
    assert param_count(DistillHeadConfig(3584, hidden, 8)) == c8
    assert param_count(DistillHeadConfig(3584, hidden, 6)) == c6


def test_head_param_shapes_match_count():
    cfg = DistillHeadConfig(9, (5, 4), 3)
    head = DistillHead.init(cfg, seed=1)
    assert [p.shape for p in head.params] == [(5, 9), (5,), (4, 5), (4,), (3, 4), (3,)]
    assert head.n_params() == param_count(cfg) == 9 * 5 + 5 + 5 * 4 + 4 + 4 * 3 + 3
    assert all(np.abs(w).max() <= 1 / math.sqrt(w.shape[1]) for w, _ in head.layers)


def test_bad_config():
    with pytest.raises(ValueError):
        DistillHeadConfig(0, (), 8)
    with pytest.raises(ValueError):
        DistillHeadConfig(4, (0,), 8)


def test_zero_head_gives_zero_logits_and_uniform_distribution(rng):
    head = DistillHead.zeros(DistillHeadConfig(6, (4,), 8))
    x = rng.normal(size=6)
    np.testing.assert_array_equal(head_forward(x, head), np.zeros(8))
    np.testing.assert_allclose(student_distribution(x, head), np.full(8, 1 / 8))


def test_no_hidden_layer_reads_out_first_column(rng):
    head = DistillHead.zeros(DistillHeadConfig(3, (), 3))
    head.params[0][:] = rng.normal(size=(3, 3))
    np.testing.assert_allclose(head_forward([1.0, 0.0, 0.0], head), head.params[0][:, 0])


def test_relu_blocks_negative_hidden_units():
    head = DistillHead.zeros(DistillHeadConfig(1, (2,), 2))
    w0, b0, w1, b1 = head.params
    w0[:] = [[1.0], [-1.0]]
    w1[:] = [[1.0, 10.0], [0.0, 0.0]]
    np.testing.assert_allclose(head_forward([3.0], head), [3.0, 0.0])


def test_head_forward_shapes(rng):
    head = DistillHead.init(DistillHeadConfig(4, (3,), 2))
    assert head_forward(rng.normal(size=(7, 4)), head).shape == (7, 2)
    with pytest.raises(ShapeError):
        head_forward(np.zeros(5), head)


def test_student_distribution_argmax_matches_logits(rng):
    head = DistillHead.init(DistillHeadConfig(4, (8,), 5), seed=3)
    x = rng.normal(size=(20, 4)) * 5
    p = student_distribution(x, head)
    np.testing.assert_allclose(p.sum(axis=1), 1.0)
    np.testing.assert_array_equal(p.argmax(1), head_forward(x, head).argmax(1))


# -- losses ------------------------------------------------------------------


def test_kd_worked_example():
    expected = (2 / 3) * math.log(4 / 3) + (1 / 3) * math.log(2 / 3)
    assert kd_loss([0.0, 0.0], [math.log(2), 0.0], 1.0) == pytest.approx(expected, abs=1e-12)
    assert kd_loss([0.0, 0.0], [math.log(2), 0.0], 1.0) == pytest.approx(0.056633, abs=1e-5)


def test_kd_tau_prefactor():
    s, t = [0.3, -1.0, 2.0], [1.0, 0.5, -0.5]
    expected = 4 * naive_kl(naive_softmax(t, 2), naive_softmax(s, 2))
    assert kd_loss(s, t, 2.0) == pytest.approx(expected, rel=1e-12)


def test_kd_rejects_bad_tau():
    for tau in (0.0, -1.0):
        with pytest.raises(InvalidTemperature):
            kd_loss([0.0, 1.0], [1.0, 0.0], tau)


logit_vectors = arrays(np.float64, 5, elements=st.floats(-20, 20))


@settings(max_examples=200, deadline=None)
@given(logit_vectors, logit_vectors, st.sampled_from([0.5, 1.0, 2.0, 4.0]))
def test_kd_nonnegative_and_scale_identity(s, t, tau):
    value = kd_loss(s, t, tau)
    assert value >= 0.0
    assert value == pytest.approx(tau * tau * kd_loss(s / tau, t / tau, 1.0), abs=1e-9)


@settings(max_examples=100, deadline=None)
@given(logit_vectors, st.floats(-50, 50), st.sampled_from([1.0, 2.0, 4.0]))
def test_kd_zero_for_shifted_equal_logits(s, shift, tau):
    assert kd_loss(s, s + shift, tau) == pytest.approx(0.0, abs=1e-9)
    assert kd_loss(s, s, tau) == 0.0


def test_kd_positive_for_distinct_distributions():
    assert kd_loss([0.0, 1.0, 0.0], [1.0, 0.0, 0.0], 2.0) > 1e-3


def test_ce_examples():
    assert ce_loss(np.zeros(8), one_hot("awe", MIKELS8)) == pytest.approx(math.log(8), abs=1e-12)
    assert ce_loss([0.0, 0.0], 0) == pytest.approx(math.log(2), abs=1e-12)
    assert ce_loss([50.0] + [0.0] * 7, 0) < 1e-9


@settings(max_examples=200, deadline=None)
@given(logit_vectors, st.integers(0, 4))
def test_ce_is_negative_log_true_probability(z, k):
    p = naive_softmax(list(z), 1.0)
    if p[k] > 1e-300:
        assert ce_loss(z, k) == pytest.approx(-math.log(p[k]), abs=1e-12, rel=1e-12)


def test_total_loss_cases():
    assert total_loss(0.2, 0.4, 0.0) == 0.4
    assert total_loss(0.2, 0.4, 1.0) == 0.2
    assert total_loss(0.2, 0.4, 0.5) == pytest.approx(0.3, abs=1e-15)
    for a in (0.25, 0.75):
        assert total_loss(0.2, 0.4, a) == pytest.approx(a * 0.2 + (1 - a) * 0.4, abs=1e-15)
    for bad in (-0.1, 1.5):
        with pytest.raises(InvalidAlpha):
            total_loss(0.2, 0.4, bad)


# -- gradients ---------------------------------------------------------------


@pytest.mark.parametrize("alpha", [0.0, 0.5, 1.0])
@pytest.mark.parametrize("tau", [1.0, 2.0, 4.0])
def test_gradients_match_finite_differences(alpha, tau):
    checked = 0
    seed = int(alpha * 10 + tau * 100)
    while checked < 3:
        err = fd_check(seed, alpha, tau)
        seed += 1000
        if err is None:
            continue
        assert err < 1e-4
        checked += 1


def test_small_case_d5_c3():
    rng = np.random.default_rng(7)
    head = DistillHead.init(DistillHeadConfig(5, (4,), 3), seed=7)
    x, t, y = rng.normal(size=(1, 5)), rng.normal(size=(1, 3)), np.array([2])
    hp = DistillHyperparams(alpha=0.5, tau=2.0)
    g = loss_gradients(x, head, t, y, hp)
    total, kd, ce = distill_objective(x, head, t, y, hp)
    assert total == pytest.approx(naive_total_loss(head.params, x, t, y, 0.5, 2.0), rel=1e-12)
    assert total == pytest.approx(0.5 * kd + 0.5 * ce, rel=1e-12)
    assert [a.shape for a in g] == [p.shape for p in head.params]


def test_stationary_point_under_pure_kd(rng):
    head = DistillHead.init(DistillHeadConfig(5, (4,), 3), seed=2)
    x = rng.normal(size=(1, 5))
    teacher = head_forward(x, head)
    g = loss_gradients(x, head, teacher, [0], DistillHyperparams(alpha=1.0, tau=2.0))
    assert math.sqrt(sum(float(np.sum(v * v)) for v in g)) < 1e-8


def test_gradient_shape_errors():
    head = DistillHead.init(DistillHeadConfig(5, (), 3))
    hp = DistillHyperparams()
    with pytest.raises(ShapeError):
        loss_gradients(np.zeros((2, 4)), head, np.zeros((2, 3)), [0, 1], hp)
    with pytest.raises(ShapeError):
        loss_gradients(np.zeros((2, 5)), head, np.zeros((2, 4)), [0, 1], hp)


# -- training ----------------------------------------------------------------


def _blobs(seed, n=240, d=6, C=3):
    rng = np.random.default_rng(seed)
    y = rng.integers(0, C, size=n)
    centers = rng.normal(scale=4.0, size=(C, d))
    x = centers[y] + rng.normal(size=(n, d))
    teacher = np.log(np.where(np.eye(C)[y] > 0, 0.8, 0.2 / (C - 1)))
    return DistillData(x, teacher, y)


def _digest(*arrays):
    h = hashlib.sha256()
    for a in arrays:
        h.update(np.ascontiguousarray(a).tobytes())
    return h.hexdigest()


def test_training_is_deterministic_and_leaves_inputs_untouched():
    data = _blobs(0)
    before = _digest(*data[:3])
    cfg = DistillHeadConfig(6, (8,), 3)
    hp = DistillHyperparams(max_epochs=5, batch_size=32, seed=4)
    h1, hist1 = train_distill_head(data, None, cfg, hp)
    h2, hist2 = train_distill_head(data, None, cfg, hp)
    assert _digest(*data[:3]) == before
    assert _digest(*h1.params) == _digest(*h2.params)
    assert hist1.to_dict() == hist2.to_dict()
    assert 1 <= len(hist1.records) <= 5
    for r in hist1.records:
        assert all(np.isfinite(v) and v >= 0 for v in (r.l_total, r.l_kd, r.l_ce))


def test_pure_ce_separates_blobs():
    data = _blobs(1)
    head, hist = train_distill_head(data, None, DistillHeadConfig(6, (), 3),
                                    DistillHyperparams(alpha=0.0, learning_rate=1e-2, max_epochs=30))
    assert np.mean(head_forward(data.features, head).argmax(1) == data.labels) == 1.0
    assert hist.best.val_acc == 1.0


def test_history_table_columns():
    _, hist = train_distill_head(_blobs(2), None, DistillHeadConfig(6, (4,), 3), DistillHyperparams(max_epochs=2))
    lines = hist.to_table().splitlines()
    assert lines[0] == "epoch,L_total,L_KD,L_CE,train_acc,val_acc"
    assert len(lines) == len(hist.records) + 1


def test_empty_training_set():
    empty = DistillData(np.zeros((0, 6)), np.zeros((0, 3)), np.zeros(0, dtype=int))
    with pytest.raises(EmptyDataset):
        train_distill_head(empty, None, DistillHeadConfig(6, (), 3), DistillHyperparams())


def test_training_shape_mismatch():
    with pytest.raises(ShapeError):
        train_distill_head(_blobs(0), None, DistillHeadConfig(7, (), 3), DistillHyperparams())


# -- checkpoints -------------------------------------------------------------


def test_checkpoint_round_trip(tmp_path):
    head = DistillHead.init(DistillHeadConfig(6, (5, 4), 3), seed=9)
    stem = tmp_path / "head"
    digest = save_head(stem, head, seed=9, epoch=3, metrics={"val_acc": 0.5})
    back, manifest = load_head(stem)
    assert manifest["payload_sha256"] == digest and manifest["epoch"] == 3
    assert back.config == head.config
    for a, b in zip(back.params, head.params):
        np.testing.assert_array_equal(a, b.astype(np.float32))
    # payload is row-major little-endian float32 in layer order
    raw = (tmp_path / "head.bin").read_bytes()
    assert raw == b"".join(p.astype("<f4").tobytes() for p in head.params)


def test_checkpoint_errors(tmp_path):
    with pytest.raises(MissingArtifact):
        load_head(tmp_path / "nope")
    head = DistillHead.init(DistillHeadConfig(4, (), 2))
    save_head(tmp_path / "h", head)
    blob = tmp_path / "h.bin"
    blob.write_bytes(blob.read_bytes()[:-4] + b"\x00\x00\x80\x7f")
    with pytest.raises(SchemaError):
        load_head(tmp_path / "h")
