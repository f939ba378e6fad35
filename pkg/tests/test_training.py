import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fourier_circuits import autodiff as ad
from fourier_circuits.construction import construct_max_margin, normalize_network
from fourier_circuits.dataset import ModAddDataset, generate_full
from fourier_circuits.mlp import MlpParams, l2k1_norm
from fourier_circuits.training import (
    SGD,
    AdamW,
    BatchStream,
    GrokMetrics,
    TraceRecord,
    TrainConfig,
    TrainTrace,
    TrainingDiverged,
    accuracy,
    build_data,
    grokking_metrics,
    loss_and_grad,
    objective_tensor,
    regularized_loss,
    sweep_seeds,
    train,
    warmup_factor,
)

from helpers import objective_grad_error

SMALL = TrainConfig(model="mlp", p=5, k=2, m=8, steps=20, batch_size=10, lr=0.01, lam=0.01, eval_interval=5)
SMALL_ATTN = TrainConfig(
    model="attention", p=5, k=2, m=2, d=4, d_head=2, steps=6, batch_size=8, lr=0.01, lam=0.01, eval_interval=3, train_fraction=0.6
)


def trace_of(*pairs):
    trace = TrainTrace()
    for step, (tr, va) in pairs:
        trace.append(TraceRecord(step, 0.0, tr, va, 0.0))
    return trace


class TestRegularizedLoss:
    def test_zero_model_is_log_p(self):
        assert regularized_loss(MlpParams.zeros(5, 2, 3), generate_full(5, 2), 0.0) == pytest.approx(math.log(5), rel=1e-15)

    def test_unit_norm_penalty(self):
        net = normalize_network(construct_max_margin(5, 2))
        ds = generate_full(5, 2)
        tensors = {"U": ad.Tensor(net.U), "W": ad.Tensor(net.W)}
        total, data, penalty = objective_tensor(net, tensors, ds.inputs, ds.labels, 1.0)
        assert penalty.item() == pytest.approx(1.0, rel=1e-12)
        assert total.item() - data.item() == pytest.approx(1.0, rel=1e-12)

    def test_matches_manual_formula(self):
        net = MlpParams.random(5, 2, 4, 0.5, seed=2)
        ds = generate_full(5, 2)
        logits = np.array([[sum(net.U[i, j, a[j]] for j in range(2)) ** 2 * net.W[i] for i in range(4)] for a in ds.inputs]).sum(axis=1)
        ce = np.mean([np.log(np.exp(r).sum()) - r[y] for r, y in zip(logits, ds.labels)])
        assert regularized_loss(net, ds, 0.3) == pytest.approx(ce + 0.3 * l2k1_norm(net), rel=1e-12)

    def test_attention_penalty_is_frobenius(self):
        from fourier_circuits.training import init_model

        model = init_model(SMALL_ATTN)
        ds = generate_full(5, 2)
        frob = math.sqrt(sum(np.sum(a**2) for a in model.arrays.values()))
        gap = regularized_loss(model, ds, 2.0) - regularized_loss(model, ds, 0.0)
        assert gap == pytest.approx(2 * frob, rel=1e-12)

    def test_empty_batch(self):
        with pytest.raises(ValueError):
            regularized_loss(MlpParams.zeros(5, 2, 1), generate_full(5, 2).subset([]), 0.1)

    @pytest.mark.parametrize("seed", range(3))
    def test_gradient_mlp(self, seed):
        net = MlpParams.random(5, 3, 4, 0.7, seed=seed)
        ds = generate_full(5, 3)
        assert objective_grad_error(net, ds.inputs[::7], ds.labels[::7], lam=0.05) < 1e-5

    def test_gradient_attention(self):
        from fourier_circuits.training import init_model

        ds = generate_full(5, 2)
        assert objective_grad_error(init_model(SMALL_ATTN), ds.inputs[::2], ds.labels[::2], lam=0.05) < 1e-5


class TestAccuracy:
    @pytest.mark.parametrize("pk", [(5, 2), (7, 2), (5, 3)])
    def test_constructed_network(self, pk):
        p, k = pk
        assert accuracy(construct_max_margin(p, k), generate_full(p, k)) == 1.0

    def test_zero_network_tie_break(self):
        ds = generate_full(5, 2)
        assert accuracy(MlpParams.zeros(5, 2, 2), ds) == pytest.approx(np.mean(ds.labels == 0))

    def test_random_labels_near_chance(self):
        ds = generate_full(11, 3)
        shuffled = ModAddDataset(11, 3, ds.inputs, np.random.default_rng(0).integers(0, 11, len(ds)))
        acc = accuracy(construct_max_margin(11, 3), shuffled)
        assert abs(acc - 1 / 11) < 0.03

    def test_empty(self):
        with pytest.raises(ValueError):
            accuracy(MlpParams.zeros(5, 2, 1), generate_full(5, 2).subset([]))


class TestOptimizers:
    def test_warmup(self):
        assert [warmup_factor(t, 4) for t in range(6)] == [0.25, 0.5, 0.75, 1.0, 1.0, 1.0]
        assert warmup_factor(0, 0) == 1.0

    def test_sgd_single_step_oracle(self):
        net = MlpParams.random(5, 2, 3, 1.0, seed=5)
        x, y = np.array([[1, 3]]), np.array([4])
        _, _, _, grads = loss_and_grad(net, x, y, 0.0)
        # hand gradient of -log softmax(f)[y] for one point
        s = net.U[:, 0, 1] + net.U[:, 1, 3]
        f = (s**2) @ net.W
        dlogits = np.exp(f - f.max()) / np.exp(f - f.max()).sum()
        dlogits[4] -= 1
        gW = np.outer(s**2, dlogits)
        gs = 2 * s * (net.W @ dlogits)
        gU = np.zeros_like(net.U)
        gU[:, 0, 1] += gs
        gU[:, 1, 3] += gs
        np.testing.assert_allclose(grads["W"], gW, rtol=1e-12, atol=1e-15)
        np.testing.assert_allclose(grads["U"], gU, rtol=1e-12, atol=1e-15)
        new = SGD(0.1).step({"U": net.U, "W": net.W}, grads)
        np.testing.assert_allclose(new["U"], net.U - 0.1 * gU, rtol=0, atol=1e-12)
        np.testing.assert_allclose(new["W"], net.W - 0.1 * gW, rtol=0, atol=1e-12)

    def test_adamw_two_steps(self):
        p0 = np.array([1.0, -2.0])
        g1, g2 = np.array([0.5, 0.1]), np.array([-0.2, 0.3])
        opt = AdamW(0.01, (0.9, 0.98), 1e-8, weight_decay=0.1)
        p1 = opt.step({"x": p0}, {"x": g1})["x"]
        p2 = opt.step({"x": p1}, {"x": g2})["x"]
        m1, v1 = 0.1 * g1, 0.02 * g1**2
        ref1 = p0 - 0.01 * (0.1 * p0 + (m1 / 0.1) / (np.sqrt(v1 / 0.02) + 1e-8))
        m2, v2 = 0.9 * m1 + 0.1 * g2, 0.98 * v1 + 0.02 * g2**2
        c1, c2 = 1 - 0.9**2, 1 - 0.98**2
        ref2 = ref1 - 0.01 * (0.1 * ref1 + (m2 / c1) / (np.sqrt(v2 / c2) + 1e-8))
        np.testing.assert_allclose(p1, ref1, rtol=1e-14)
        np.testing.assert_allclose(p2, ref2, rtol=1e-14)

    def test_adam_first_step_is_sign(self):
        new = AdamW(0.1, eps=0.0).step({"x": np.zeros(3)}, {"x": np.array([5.0, -0.01, 2.0])})["x"]
        np.testing.assert_allclose(new, [-0.1, 0.1, -0.1], rtol=1e-12)


class TestBatchStream:
    def test_epochs_are_permutations(self):
        stream = BatchStream(10, 4, seed=0)
        seen = np.concatenate([stream.next() for _ in range(3)])
        assert sorted(seen) == list(range(10))

    def test_full_batch(self):
        np.testing.assert_array_equal(BatchStream(5, 8, 0).next(), np.arange(5))

    def test_seeded(self):
        a, b = BatchStream(20, 3, 7), BatchStream(20, 3, 7)
        for _ in range(10):
            np.testing.assert_array_equal(a.next(), b.next())


class TestTrain:
    def test_lr_zero_keeps_params(self):
        cfg = replace(SMALL, lr=0.0)
        from fourier_circuits.training import init_model

        before = init_model(cfg)
        after, _ = train(cfg)
        np.testing.assert_array_equal(after.U, before.U)
        np.testing.assert_array_equal(after.W, before.W)

    def test_eval_schedule(self):
        _, trace = train(replace(SMALL, steps=12))
        assert list(trace.column("step")) == [0, 5, 10, 12]

    def test_zero_steps(self):
        _, trace = train(replace(SMALL, steps=0))
        assert len(trace) == 1 and trace.records[0].step == 0

    def test_reg_term_nonnegative(self):
        _, trace = train(SMALL)
        assert np.all(trace.column("reg_term") >= 0)

    @pytest.mark.parametrize("cfg", [SMALL, SMALL_ATTN, replace(SMALL, optimizer="sgd")])
    def test_deterministic(self, cfg, tmp_path):
        m1, t1 = train(cfg)
        m2, t2 = train(cfg)
        t1.to_csv(tmp_path / "a.csv")
        t2.to_csv(tmp_path / "b.csv")
        assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()

    def test_loss_decreases(self):
        _, trace = train(replace(SMALL, steps=60, eval_interval=60, lr=0.05))
        assert trace.records[-1].train_loss < trace.records[0].train_loss

    def test_validation_split(self):
        train_ds, val_ds = build_data(SMALL_ATTN)
        assert len(train_ds) == 15 and len(val_ds) == 10
        _, trace = train(SMALL_ATTN)
        assert all(r.val_acc is not None for r in trace.records)

    def test_full_data_has_no_validation(self):
        _, trace = train(replace(SMALL, steps=1))
        assert trace.records[0].val_acc is None

    def test_track_margin(self):
        _, trace = train(replace(SMALL, steps=5, track_margin=True))
        assert all(r.normalized_margin is not None for r in trace.records)

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_divergence(self):
        cfg = replace(SMALL, lr=1e6, optimizer="sgd", steps=50, warmup=0)
        with pytest.raises(TrainingDiverged) as info:
            train(cfg)
        err = info.value
        assert err.trace.diverged_at == err.step
        assert all(np.isfinite(a).all() for a in (err.model.U, err.model.W))

    def test_sweep(self):
        runs = sweep_seeds(replace(SMALL, steps=2), seeds=(0, 3))
        assert [s for s, _, _ in runs] == [0, 3]
        assert not np.array_equal(runs[0][1].U, runs[1][1].U)

    @pytest.mark.parametrize("bad", [{"model": "cnn"}, {"optimizer": "lbfgs"}, {"steps": -1}, {"lam": -0.1}, {"batch_size": 0}])
    def test_invalid_config(self, bad):
        with pytest.raises(ValueError):
            replace(SMALL, **bad)


class TestTrace:
    def test_steps_must_increase(self):
        trace = trace_of((0, (0.1, 0.1)))
        with pytest.raises(ValueError):
            trace.append(TraceRecord(0, 0.0, 0.0, 0.0, 0.0))

    def test_csv_roundtrip(self, tmp_path):
        trace = TrainTrace()
        trace.append(TraceRecord(0, 1.0 / 3, 0.5, None, 0.1, None))
        trace.append(TraceRecord(5, 0.1, 1.0, 0.75, 0.2, 0.01))
        trace.to_csv(tmp_path / "t.csv")
        lines = (tmp_path / "t.csv").read_text().splitlines()
        assert lines[0] == "step,train_loss,train_acc,val_acc,reg_term,normalized_margin"
        assert lines[1] == "0,0.3333333333333333,0.5,,0.1,"
        assert TrainTrace.from_csv(tmp_path / "t.csv").records == trace.records


class TestGrokkingMetrics:
    def test_synthetic_delay(self):
        trace = trace_of((0, (0.1, 0.0)), (100, (0.995, 0.2)), (500, (1.0, 0.5)), (900, (1.0, 0.99)))
        m = grokking_metrics(trace)
        assert (m.step_train, m.step_val, m.delay) == (100, 900, 800)

    def test_same_step(self):
        assert grokking_metrics(trace_of((0, (0.0, 0.0)), (50, (1.0, 1.0)))).delay == 0

    def test_not_reached(self):
        m = grokking_metrics(trace_of((0, (1.0, 0.5))))
        assert m.step_val is None and m.delay is None and not m.reached

    def test_empty(self):
        with pytest.raises(ValueError):
            grokking_metrics(TrainTrace())

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.tuples(st.floats(0, 1), st.floats(0, 1)), min_size=1, max_size=20))
    def test_first_crossings(self, accs):
        trace = trace_of(*[(10 * i, a) for i, a in enumerate(accs)])
        m = grokking_metrics(trace, 0.9)
        tr = [10 * i for i, (a, _) in enumerate(accs) if a >= 0.9]
        va = [10 * i for i, (_, b) in enumerate(accs) if b >= 0.9]
        assert m == GrokMetrics(tr[0] if tr else None, va[0] if va else None)
