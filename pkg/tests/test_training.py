import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import random_instance
from synthetic import bayes_precision, branch_log, branch_outcomes, cyclic_log
from nextevent import EventLog, TokenSchema, TrainedModel, TrainingConfig, cross_validate, fit
from nextevent.training import (
    build_vocabularies,
    encode_ids,
    fold_partition,
    learning_rate,
    make_stream,
    precision,
    train,
)


def test_stream_layout_arithmetic():
    s = make_stream([list(range(100))], B=2, T=5)
    assert s.inputs.shape == (2, 50) and s.n_windows == 10 and s.dropped == 0
    x, y = s.window(0)
    assert x.shape == (5, 2)
    np.testing.assert_array_equal(x[:, 1], np.arange(50, 55))
    np.testing.assert_array_equal(y[:, 1], np.arange(51, 56))
    # the final target wraps to the stream start
    assert s.targets[1, -1] == 0


def test_stream_b1_keeps_order_and_drops_remainder():
    s = make_stream([[0, 1, 2], [3, 4]], B=1, T=2)
    np.testing.assert_array_equal(s.inputs[0], [0, 1, 2, 3, 4])
    assert s.n_windows == 2
    assert make_stream([list(range(7))], B=2, T=1).dropped == 1
    with pytest.raises(ValueError):
        make_stream([[0, 1, 2]], B=2, T=2)


def test_learning_rate_schedule():
    cfg = TrainingConfig()
    assert learning_rate(50, cfg) == 1.0
    assert learning_rate(51, cfg) == 0.75
    assert learning_rate(52, cfg) == 0.5625
    rates = [learning_rate(e, cfg) for e in range(1, 101)]
    assert all(a >= b for a, b in zip(rates, rates[1:]))
    with pytest.raises(ValueError):
        learning_rate(0, cfg)


def test_config_round_trip_and_validation():
    cfg = TrainingConfig(m=7, peepholes=True)
    assert TrainingConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(ValueError):
        TrainingConfig.from_dict({"nope": 1})
    with pytest.raises(ValueError):
        TrainingConfig(dropout=1.0)
    with pytest.raises(ValueError):
        TrainingConfig(T=0)


def test_uniform_net_precision_is_id0_frequency():
    params, _, _, _, _ = random_instance(v=4)
    params.out_W[...] = 0.0
    params.out_b[...] = 0.0
    rng = np.random.default_rng(0)
    x, y = rng.integers(0, 4, 300), rng.integers(0, 4, 300)
    assert precision(params, x, y) == pytest.approx(np.mean(y == 0), abs=1e-15)
    # [UNK] never counts, even when it is the argmax
    assert precision(params, x, y, unk_id=0) == 0.0
    assert precision(params, [1], [0]) == 1.0


def test_precision_rejects_empty():
    params, _, _, _, _ = random_instance()
    with pytest.raises(ValueError):
        precision(params, [], [])


@pytest.fixture(scope="module")
def cyclic_model():
    cfg = TrainingConfig(m=16, T=5, B=4, epochs=40, seed=3)
    return fit(cyclic_log(200, "ABC"), TokenSchema(), cfg)


def test_deterministic_process_is_mastered(cyclic_model):
    model, curve = cyclic_model
    assert curve[-1].train_precision >= 0.99
    assert len(curve) == 40 and curve[0].learning_rate == 1.0


def test_fit_is_deterministic(cyclic_model):
    model, _ = cyclic_model
    again, _ = fit(cyclic_log(200, "ABC"), TokenSchema(), model.config)
    for a, b in zip(model.params.arrays(), again.params.arrays()):
        assert np.array_equal(a, b)


def test_trained_model_round_trip(cyclic_model, tmp_path):
    model, _ = cyclic_model
    model.save(tmp_path / "m.ckpt")
    back = TrainedModel.load(tmp_path / "m.ckpt")
    assert back.vocab_in == model.vocab_in and back.config == model.config and back.schema == model.schema
    assert all(np.array_equal(a, b) for a, b in zip(model.params.arrays(), back.params.arrays()))


def test_two_branch_reaches_bayes_rate():
    bayes = bayes_precision(branch_outcomes(tail=()))
    assert bayes == pytest.approx(2.8 / 3)
    cfg = TrainingConfig(m=16, T=10, B=10, epochs=60, full_lr_epochs=40, seed=1, curve_every=20)
    _, curve = fit(branch_log(1000, seed=5, tail=()), TokenSchema(), cfg)
    assert curve[-1].train_precision == pytest.approx(bayes, abs=0.02)


def test_bayes_oracle_with_tail():
    assert bayes_precision(branch_outcomes()) == pytest.approx(0.95)
    assert bayes_precision([(("A", "B", "C"), 1.0)]) == 1.0


@given(st.integers(1, 60), st.integers(1, 12))
def test_fold_partition(n, folds):
    if n < folds:
        with pytest.raises(ValueError):
            fold_partition(n, folds)
        return
    groups = fold_partition(n, folds)
    assert len(groups) == folds
    assert [i for g in groups for i in g] == list(range(n))
    sizes = [len(g) for g in groups]
    assert max(sizes) - min(sizes) <= 1


def test_identical_folds_agree():
    cfg = TrainingConfig(m=8, T=4, B=2, epochs=40, folds=10, curve_every=0)
    rep = cross_validate(cyclic_log(10, "ABC"), TokenSchema(), cfg)
    assert len(rep.folds) == 10
    assert rep.validation_mean == pytest.approx(rep.train_mean, abs=0.05)
    assert min(rep.validation_precisions) <= rep.validation_mean <= max(rep.validation_precisions)
    assert rep.to_dict()["folds"] == 10


def test_cross_validation_parallel_matches_serial():
    cfg = TrainingConfig(m=8, T=4, B=2, epochs=3, folds=3, curve_every=0)
    log = branch_log(30, seed=2)
    serial = cross_validate(log, TokenSchema(), cfg, jobs=1)
    parallel = cross_validate(log, TokenSchema(), cfg, jobs=2)
    assert serial.train_precisions == parallel.train_precisions
    assert serial.validation_precisions == parallel.validation_precisions


def test_too_few_traces_for_folds():
    with pytest.raises(ValueError):
        cross_validate(cyclic_log(3), TokenSchema(), TrainingConfig(folds=10))


def test_unseen_validation_tokens_become_unk():
    train_log = EventLog.from_sequences([["A", "B"]] * 3)
    vin, vout = build_vocabularies(train_log, TokenSchema())
    enc = encode_ids(EventLog.from_sequences([["A", "Z"]]), TokenSchema(), vin, vout)
    assert enc.inputs[0][1] == vin.unk_id
    with pytest.raises(KeyError):
        encode_ids(EventLog.from_sequences([["Z"]]), TokenSchema(), vin, vout, strict=True)


def test_epoch_callback_and_curve_spacing():
    cfg = TrainingConfig(m=4, T=2, B=2, epochs=3, curve_every=2)
    seen = []
    log = cyclic_log(4, "AB")
    vin, vout = build_vocabularies(log, TokenSchema())
    data = encode_ids(log, TokenSchema(), vin, vout)
    _, curve = train(data, vin.v, vout.v, cfg, on_epoch=seen.append)
    assert [r.epoch for r in seen] == [1, 2, 3]
    # every second epoch, plus the last one
    assert [r.train_precision is not None for r in curve] == [False, True, True]
    cfg.curve_every = 0
    _, curve = train(data, vin.v, vout.v, cfg)
    assert all(r.train_precision is None for r in curve)


def test_recurrent_dropout_option():
    base = dict(m=6, T=4, B=2, epochs=2, curve_every=0)
    log = cyclic_log(10, "ABC")
    plain, _ = fit(log, TokenSchema(), TrainingConfig(**base))
    rec1, _ = fit(log, TokenSchema(), TrainingConfig(**base, recurrent_dropout=0.3))
    rec2, _ = fit(log, TokenSchema(), TrainingConfig(**base, recurrent_dropout=0.3))
    assert np.array_equal(rec1.params.out_W, rec2.params.out_W)
    assert not np.array_equal(plain.params.out_W, rec1.params.out_W)
    with pytest.raises(ValueError):
        TrainingConfig(recurrent_dropout=1.0)
