import json
import math

import numpy as np
import pytest
from scipy.special import ndtr

from flowtpp.errors import EmptyBatch, EmptyDataset, NonFiniteLoss, WrongKind
from flowtpp.ingest import TraceDataset, TraceRecord, build_vocabularies, encode_arrays
from flowtpp.model import (ALL_TASKS, PACKET_TASKS, STAGE1_TASKS, STAGE2_TASKS, Adam, TaskLosses,
                           TempoNet, TempoNetConfig, feature_scalers, fit_network, forward_loss,
                           gradient_check, learning_rate_at, make_lanes, model_loss_and_grad,
                           tasks_for, teacher_forced_mixture, train, train_two_stage)

from .helpers import random_dataset

SMALL = dict(K=2, H=8, src_hidden=8, embedding_dims={"src_ip": 2, "dst_ip": 2, "protocol": 2,
                                                      "src_port": 2, "dst_port": 2})
START = 1704067200.0


def small(**kw):
    return TempoNetConfig(**{**SMALL, **kw})


def build(ds, cfg, tasks=None):
    vocab = build_vocabularies(ds, cfg.rare_threshold)
    arrays = encode_arrays(ds, vocab)
    tasks = tasks or tasks_for(cfg.kind)
    return TempoNet(cfg, vocab.sizes(), tasks, feature_scalers(arrays, tasks)), arrays


def constant_rate(n, proto="UDP", kind="flow"):
    recs = [TraceRecord(START + i, "10.0.0.1", "10.0.0.2", 40000, 53, proto,
                        100, 0 if kind == "packet" else 50, 1, 0 if kind == "packet" else 1,
                        0.0 if kind == "packet" else 0.5, kind) for i in range(n)]
    return TraceDataset(tuple(recs), kind)


# -- config ----------------------------------------------------------------------

def test_config_validation():
    with pytest.raises(ValueError):
        TempoNetConfig(H=0)
    with pytest.raises(ValueError):
        TempoNetConfig(learning_rate=0.0)
    with pytest.raises(ValueError):
        TempoNetConfig(kind="pcap")
    with pytest.raises(ValueError):
        TempoNetConfig(lr_schedule="step")
    cfg = TempoNetConfig(embedding_dims={"src_ip": 3})
    assert cfg.embedding_dims["dst_ip"] == 16 and cfg.embedding_dims["src_ip"] == 3
    assert TempoNetConfig.from_dict({**cfg.to_dict(), "unknown": 1}) == cfg


def test_learning_rate_schedule():
    cfg = TempoNetConfig()
    assert learning_rate_at(cfg, 0, 100) == cfg.learning_rate
    assert learning_rate_at(cfg, 99, 100) == pytest.approx(cfg.learning_rate * cfg.lr_floor)
    rates = [learning_rate_at(cfg, s, 100) for s in range(100)]
    assert all(a >= b for a, b in zip(rates, rates[1:]))
    flat = TempoNetConfig(lr_schedule="constant")
    assert {learning_rate_at(flat, s, 100) for s in range(100)} == {flat.learning_rate}


def test_task_sets():
    assert len(tasks_for("flow")) == 8 and len(tasks_for("packet")) == 7
    assert "duration" not in PACKET_TASKS
    assert "inter_arrival" in STAGE1_TASKS and "dst_port" in STAGE2_TASKS
    assert set(STAGE1_TASKS) | set(STAGE2_TASKS) == set(ALL_TASKS)
    assert not set(STAGE1_TASKS) & set(STAGE2_TASKS)


def test_task_losses_weighting():
    tl = TaskLosses({t: 1.0 for t in ALL_TASKS})
    assert tl.m == 8 and tl.total == 1.0
    rng = np.random.default_rng(0)
    tl = TaskLosses({t: float(rng.exponential()) for t in PACKET_TASKS})
    assert tl.m == 7
    assert abs(tl.total - sum(tl.losses.values()) / 7) < 1e-12


# -- forward loss ----------------------------------------------------------------

def test_untrained_categorical_losses_uniform():
    recs = [TraceRecord(START + i, f"s{i % 3}", f"d{i % 3}", 1 + i % 2, 10 + i % 2, "UDP", 10, 10,
                        1, 1, 1.0) for i in range(12)]
    ds = TraceDataset(tuple(recs))
    net, arrays = build(ds, small(rare_threshold=1))
    assert net.vocab_sizes == {"src_ip": 4, "dst_ip": 4, "protocol": 2, "src_port": 3, "dst_port": 3}
    losses = forward_loss(net, arrays).losses
    for task, v in (("src_ip", 4), ("dst_ip", 4), ("protocol", 2), ("src_port", 3), ("dst_port", 3)):
        assert losses[task] == pytest.approx(math.log(v), abs=1e-12)


def test_forward_loss_total_and_empty():
    ds = random_dataset(np.random.default_rng(1), 40)
    net, arrays = build(ds, small())
    tl = forward_loss(net, arrays)
    assert tl.m == 8 and abs(tl.total - sum(tl.losses.values()) / 8) < 1e-12
    with pytest.raises(EmptyBatch):
        forward_loss(net, [])


def test_packet_model_has_seven_tasks():
    ds = random_dataset(np.random.default_rng(2), 30, kind="packet")
    net, arrays = build(ds, small(kind="packet"))
    assert forward_loss(net, arrays).m == 7


def test_lanes_forward_equals_single_sequence():
    # carrying state across windows reproduces the one-window loss
    ds = random_dataset(np.random.default_rng(3), 50)
    net, arrays = build(ds, small())
    whole = forward_loss(net, arrays).losses
    lanes = make_lanes(arrays, 1, 10)
    carry, sums, counts = None, {t: 0.0 for t in net.tasks}, {t: 0 for t in net.tasks}
    for a in range(0, lanes.shape[1], 10):
        tl, _, carry, cnt = net.loss(lanes.window(a, a + 10), carry)
        for t in net.tasks:
            sums[t] += tl.losses[t] * cnt[t]
            counts[t] += cnt[t]
    for t in net.tasks:
        assert sums[t] / counts[t] == pytest.approx(whole[t], abs=1e-12)


def test_single_step_descent():
    ds = constant_rate(20)
    net, arrays = build(ds, small())
    lanes = make_lanes(arrays, 1)
    win = lanes.window(0, lanes.shape[1])
    before, grads, _, _ = net.loss(win, need_grad=True)
    Adam(net.params, lr=1e-4).step(net.params, grads)
    assert net.loss(win)[0].total < before.total


# -- gradients -------------------------------------------------------------------

def test_gradient_check_passes():
    cfg = TempoNetConfig(K=3, H=8, src_hidden=4, embedding_dims={f: 2 for f in SMALL["embedding_dims"]})
    assert gradient_check(cfg, trials=200) < 1e-4
    assert gradient_check(cfg, trials=100, stage=1) < 1e-4
    assert gradient_check(cfg, trials=100, stage=2) < 1e-4
    assert gradient_check(TempoNetConfig(**{**cfg.to_dict(), "kind": "packet"}), trials=100) < 1e-4


def test_gradient_check_minimal_model():
    cfg = TempoNetConfig(K=1, H=1, src_hidden=1, embedding_dims={f: 0 for f in SMALL["embedding_dims"]})
    err = gradient_check(cfg, trials=50)
    assert math.isfinite(err) and err < 1e-4


def test_gradient_check_detects_corruption():
    cfg = TempoNetConfig(K=3, H=8, src_hidden=4, embedding_dims={f: 2 for f in SMALL["embedding_dims"]})

    def corrupted(net, win):
        total, grads = model_loss_and_grad(net, win)
        return total, {k: 1.1 * g + 1e-3 for k, g in grads.items()}

    assert gradient_check(cfg, trials=50, loss_and_grad=corrupted) > 1e-2


# -- training --------------------------------------------------------------------

def test_train_constant_tau_concentrates_mass():
    ds = constant_rate(600)
    ck = train(ds, small(epochs=30, learning_rate=3e-3, batch_size=2, tbptt_window=50))
    log_w, log_s, mu = teacher_forced_mixture(ck.build(), encode_arrays(ds, ck.vocabularies))
    s = np.exp(log_s[1:])
    mass = (np.exp(log_w[1:]) * (ndtr((0.1 - mu[1:]) / s) - ndtr((-0.1 - mu[1:]) / s))).sum(axis=1)
    assert mass.mean() > 0.9


def test_train_degenerate_protocol():
    ds = constant_rate(300)
    ck = train(ds, small(epochs=40, learning_rate=1e-2, batch_size=2, tbptt_window=20))
    net = ck.build()
    lanes = make_lanes(encode_arrays(ds, ck.vocabularies), 1)
    win = lanes.window(0, lanes.shape[1])
    # protocol loss is -ln P(UDP) averaged over events
    assert math.exp(-net.loss(win)[0].losses["protocol"]) >= 0.99


def test_train_deterministic_and_logged():
    ds = random_dataset(np.random.default_rng(4), 80)
    rows = []
    a = train(ds, small(epochs=2, seed=3), log_rows=rows)
    b = train(ds, small(epochs=2, seed=3))
    assert a.params.keys() == b.params.keys()
    for k in a.params:
        np.testing.assert_array_equal(a.params[k], b.params[k])
    assert [r["epoch"] for r in rows] == [0, 1]
    assert set(rows[0]) == set(ALL_TASKS) | {"epoch", "total", "wall_seconds"}
    assert a.metadata["final_losses"]["total"] == rows[-1]["total"]
    c = train(ds, small(epochs=2, seed=4))
    assert any(not np.array_equal(a.params[k], c.params[k]) for k in a.params)


def test_training_loss_non_increasing_on_fixture():
    from flowtpp.ingest import demo_fixture_spec, make_fixture

    ds = make_fixture(demo_fixture_spec(2.0), seed=0)
    rows = []
    train(ds, TempoNetConfig(epochs=6, H=16, K=4), log_rows=rows)
    totals = [r["total"] for r in rows]
    for prev, cur in zip(totals, totals[1:]):
        assert cur <= prev + 0.02 * abs(prev)
    assert totals[-1] < totals[0]


def test_train_errors():
    with pytest.raises(EmptyDataset):
        train(TraceDataset(()), small())
    with pytest.raises(WrongKind):
        train(constant_rate(10), small(kind="packet"))
    with pytest.raises(WrongKind):
        train_two_stage(constant_rate(10, kind="packet"), small(kind="packet"))


def test_non_finite_loss_aborts(tmp_path):
    ds = constant_rate(40)
    net, arrays = build(ds, small(epochs=1))
    net.params["head.size.b_mu"][:] = np.nan
    with pytest.raises(NonFiniteLoss) as info:
        fit_network(net, arrays, small(epochs=1), log_path=tmp_path / "log.csv")
    assert info.value.batch == 0
    dump = json.loads((tmp_path / "log.csv.nonfinite.json").read_text())
    assert dump["batch"] == 0 and dump["epoch"] == 0


def test_two_stage_training():
    ds = random_dataset(np.random.default_rng(5), 60)
    rows = []
    ck1, ck2 = train_two_stage(ds, small(epochs=1, stage_split=True), log_rows=rows)
    assert ck1.tasks == STAGE1_TASKS and ck1.stage == 1
    assert set(ck2.tasks) == set(STAGE2_TASKS) and ck2.stage == 2
    assert set(ck1.tasks) | set(ck2.tasks) == set(train(ds, small(epochs=1)).tasks)
    assert {r["stage"] for r in rows} == {1, 2}
    # stage 2 has no inter-arrival head and embeds the host pair only as a condition
    net2 = ck2.build()
    assert "head.inter_arrival.V_w" not in ck2.params and "emb.src_ip" in ck2.params
    assert "src_ip" not in net2.input_fields
