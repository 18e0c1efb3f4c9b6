import json
import math

import numpy as np
import pytest

from ctrembed import gradcheck
from ctrembed.metrics import bce_loss
from ctrembed.models import CTRModel, Gradients, ModelSpec
from ctrembed.modules import ModuleSpec
from ctrembed.snapshot import load_snapshot
from ctrembed.training import (
    MODULE_GRIDS, LazyAdam, TrainConfig, TrainingDiverged, evaluate_model, expand_grid,
    grid_search, read_ledger, train,
)


class TestLoss:
    def test_half(self):
        assert bce_loss(0.5, 1) == pytest.approx(math.log(2), abs=1e-15)
        assert bce_loss(0.5, 0) == pytest.approx(0.6931472, abs=1e-7)

    def test_clipped_extremes(self):
        assert bce_loss(1 - 1e-7, 1) == pytest.approx(1e-7, rel=1e-3)
        assert bce_loss(1.0, 1) == pytest.approx(1e-7, rel=1e-3)
        assert bce_loss(1e-7, 1) == pytest.approx(16.118, abs=1e-3)
        assert bce_loss(0.0, 1) == pytest.approx(-math.log(1e-7), abs=1e-12)

    def test_bad_label(self):
        with pytest.raises(ValueError):
            bce_loss(np.array([0.5, 0.5]), np.array([1, 2]))


class TestBackward:
    def test_zero_lr_bias_gradient(self):
        m = CTRModel(ModelSpec(3, 10))
        _, cache = m.forward(np.array([[1, 2, 3]]))
        g = m.backward(cache, np.array([1]))
        assert g.bias == -0.5
        np.testing.assert_array_equal(g.linear_rows, [1, 2, 3])
        np.testing.assert_array_equal(g.linear_grad, [-0.5, -0.5, -0.5])

    def test_duplicate_batch_equals_single(self):
        rng = np.random.default_rng(0)
        m, idx, y = gradcheck.random_instance("DeepFM", "interaction", "reweight", rng, batch=1)
        g1 = m.backward(m.forward(idx)[1], y)
        g2 = m.backward(m.forward(np.vstack([idx, idx]))[1], np.concatenate([y, y]))
        assert g1.bias == pytest.approx(g2.bias, abs=1e-15)
        np.testing.assert_allclose(g1.linear_grad, g2.linear_grad, rtol=1e-13, atol=1e-16)
        np.testing.assert_allclose(g1.inter_grad, g2.inter_grad, rtol=1e-13, atol=1e-16)
        for k in g1.dense:
            np.testing.assert_allclose(g1.dense[k], g2.dense[k], rtol=1e-13, atol=1e-16)

    def test_only_touched_rows(self):
        m = CTRModel(ModelSpec(3, 50, 2))
        g = m.backward(m.forward(np.array([[4, 9, 4], [9, 1, 30]]))[1], np.array([0, 1]))
        np.testing.assert_array_equal(g.linear_rows, [1, 4, 9, 30])
        np.testing.assert_array_equal(g.inter_rows, [1, 4, 9, 30])

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_non_finite_gradient_raises(self):
        m = CTRModel(ModelSpec(3, 10, 2), dtype=np.float64)
        m.interaction.vectors[2, 0] = np.inf
        _, cache = m.forward(np.array([[2, 3, 4]]))
        with pytest.raises(FloatingPointError):
            m.backward(cache, np.array([1]))

    @pytest.mark.parametrize("combo", gradcheck.combinations(),
                             ids=lambda c: "-".join(str(x) for x in c))
    def test_finite_differences(self, combo):
        rng = np.random.default_rng(1)
        for _ in range(3):
            assert gradcheck.check_model(*gradcheck.random_instance(*combo, rng)) <= 1e-4


def _grads_for(model, bias=0.0):
    return Gradients(bias, np.zeros(0, np.int64), np.zeros(0), np.zeros(0, np.int64),
                     np.zeros((0, model.spec.num_factors)),
                     {k: np.zeros(v.shape) for k, v in model.dense_params().items()})


class TestLazyAdam:
    def test_single_step_hand_recurrence(self):
        m = CTRModel(ModelSpec(2, 4), dtype=np.float64)
        opt = LazyAdam(m, 0.001, 0.9, 0.999, 1e-8)
        opt.step(_grads_for(m, bias=1.0))
        # m_hat = 1, v_hat = 1 -> delta = -lr / (1 + eps)
        assert m.linear.bias[0] == pytest.approx(-0.001 / (1 + 1e-8), abs=1e-18)

    def test_zero_gradient_is_fixed_point(self):
        m = CTRModel(ModelSpec(3, 10, 2, 1, 4, interaction_modules=(ModuleSpec("reweight"),)))
        before = {k: v.copy() for k, v in m.arrays().items()}
        opt = LazyAdam(m)
        for _ in range(5):
            opt.step(_grads_for(m))
        for k, v in m.arrays().items():
            np.testing.assert_array_equal(v, before[k])

    def test_row_update_matches_dense_adam(self):
        m = CTRModel(ModelSpec(1, 5, 2), dtype=np.float64)
        opt = LazyAdam(m, 0.01)
        v0 = m.interaction.vectors[3].copy()
        g = np.array([[0.5, -2.0]])
        mm, vv = np.zeros(2), np.zeros(2)
        for t in range(1, 4):
            grads = _grads_for(m)
            grads.inter_rows, grads.inter_grad = np.array([3]), g
            opt.step(grads)
            mm = 0.9 * mm + 0.1 * g[0]
            vv = 0.999 * vv + 0.001 * g[0] ** 2
            v0 = v0 - 0.01 * (mm / (1 - 0.9 ** t)) / (np.sqrt(vv / (1 - 0.999 ** t)) + 1e-8)
        np.testing.assert_allclose(m.interaction.vectors[3], v0, rtol=1e-14)

    def test_untouched_rows_bit_identical(self):
        rng = np.random.default_rng(0)
        m = CTRModel(ModelSpec(3, 1000, 4, interaction_modules=(ModuleSpec("scale", 1.0, 1),)),
                     seed=5)
        init = m.interaction.vectors.copy()
        touched = np.arange(0, 1000, 97)[:10]
        opt = LazyAdam(m, 0.01)
        for _ in range(100):
            idx = rng.choice(touched, size=(16, 3))
            opt.step(m.backward(m.forward(idx)[1], rng.integers(0, 2, 16)))
        other = np.setdiff1d(np.arange(1000), touched)
        assert np.array_equal(m.interaction.vectors[other], init[other])
        assert not np.all(m.linear.weights[other])  # still zero
        assert np.all(opt.m_int[other] == 0)
        assert not np.array_equal(m.interaction.vectors[touched], init[touched])


class TestTrain:
    def test_zero_epochs(self, tiny_data):
        m = CTRModel(ModelSpec(4, 200, 3), seed=1)
        before = {k: v.copy() for k, v in m.arrays().items()}
        res = train(m, tiny_data, TrainConfig(batch_size=50, epochs=0))
        assert res.steps == 0
        for k, v in m.arrays().items():
            np.testing.assert_array_equal(v, before[k])

    def test_step_count_and_order(self, tiny_data):
        m = CTRModel(ModelSpec(4, 200, 3), seed=1)
        res = train(m, tiny_data, TrainConfig(batch_size=64, epochs=2), test_data=tiny_data)
        assert res.steps == 2 * math.ceil(300 / 64)
        assert [h["epoch"] for h in res.history] == [0, 1]

    def test_deterministic(self, tiny_data):
        cfg = TrainConfig(batch_size=32, epochs=2, learning_rate=0.01)
        spec = ModelSpec(4, 200, 3, 1, 8, interaction_modules=(ModuleSpec("encode", 2.0),))
        runs = [train(CTRModel(spec, seed=3), tiny_data, cfg, tiny_data) for _ in range(2)]
        a, b = (r.model.arrays() for r in runs)
        for k in a:
            assert np.array_equal(a[k], b[k]), k
        assert runs[0].final == runs[1].final

    def test_eval_cadence(self, tiny_data):
        m = CTRModel(ModelSpec(4, 200), seed=1)
        res = train(m, tiny_data, TrainConfig(batch_size=30, eval_every=4), tiny_data)
        assert [h["step"] for h in res.history if "train_loss" not in h] == [4, 8]

    def test_max_rows(self, tiny_data):
        res = train(CTRModel(ModelSpec(4, 200)), tiny_data,
                    TrainConfig(batch_size=10, max_rows=55))
        assert res.steps == 6

    def test_divergence_dumps_state(self, tiny_data, tmp_path):
        m = CTRModel(ModelSpec(4, 200, 2))
        m.linear.weights[tiny_data[0][0, 0]] = np.nan
        dump = tmp_path / "diverged.bin"
        with pytest.raises(TrainingDiverged):
            train(m, tiny_data, TrainConfig(batch_size=50), dump_path=dump)
        loaded, echo = load_snapshot(dump)
        assert echo["diverged"] is True
        assert np.isnan(loaded.linear.weights[tiny_data[0][0, 0]])

    def test_fm_beats_lr_and_untrained(self, planted_small):
        tr, te = planted_small
        cfg = TrainConfig(batch_size=500, learning_rate=0.01)
        untrained = evaluate_model(CTRModel(ModelSpec(8, 2 ** 18, 6), seed=0), te)
        lr = train(CTRModel(ModelSpec(8, 2 ** 18), seed=0), tr, cfg, te).final
        fm = train(CTRModel(ModelSpec(8, 2 ** 18, 6), seed=0), tr, cfg, te).final
        assert fm.rig > lr.rig > 0
        assert fm.log_loss < untrained.log_loss


class TestGrid:
    def test_expand(self):
        assert expand_grid({}) == [{}]
        assert expand_grid({"lr": [0.003]}) == [{"lr": 0.003}]
        g = expand_grid({"a": [1, 2], "b": ["x", "y"]})
        assert g == [{"a": 1, "b": "x"}, {"a": 1, "b": "y"}, {"a": 2, "b": "x"}, {"a": 2, "b": "y"}]
        with pytest.raises(ValueError):
            expand_grid({"a": []})

    def test_scale_grid_size(self):
        lrs = [0.001, 0.003, 0.01]
        g = expand_grid({**MODULE_GRIDS["scale"], "learning_rate": lrs})
        assert len(g) == 9 * 3 * 3 * len(lrs)
        assert MODULE_GRIDS["scale"]["factor"][:3] == [0.1, 0.2, 0.3]

    def _fake(self, calls):
        from ctrembed.metrics import MetricsReport

        def run(a):
            calls.append(a)
            rig = 0.1 * a["a"] - 0.01 * a.get("b", 0)
            return MetricsReport(10, 0.3, 0.5, 0.6, 0.1, rig), {}
        return run

    def test_two_by_two_argmax(self, tmp_path):
        calls = []
        res = grid_search(expand_grid({"a": [1, 2], "b": [1, 2]}), self._fake(calls),
                          lambda a: f"{a['a']}-{a['b']}", tmp_path / "ledger.jsonl")
        assert len(calls) == 4 and len(res.runs) == 4
        assert res.best.assignment == {"a": 2, "b": 1}
        assert res.best.rig == max(r.rig for r in res.runs)

    def test_resume_skips_completed(self, tmp_path):
        ledger = tmp_path / "ledger.jsonl"
        grid = expand_grid({"a": [1, 2, 3]})
        key = lambda a: str(a["a"])  # noqa: E731
        grid_search(grid[:2], self._fake([]), key, ledger)
        with open(ledger, "a") as fh:
            fh.write('{"key": "3", "metr')  # torn write from an interrupted run
        calls = []
        res = grid_search(grid, self._fake(calls), key, ledger)
        assert calls == [{"a": 3}]
        assert sum(r.resumed for r in res.runs) == 2
        assert set(read_ledger(ledger)) == {"1", "2", "3"}

    def test_single_point_equals_direct_train(self, tiny_data):
        spec = ModelSpec(4, 200, 3)
        cfg = TrainConfig(batch_size=40)

        def run(a):
            r = train(CTRModel(spec, seed=0), tiny_data,
                      TrainConfig(batch_size=40, learning_rate=a["lr"]), tiny_data)
            return r.final, {}

        res = grid_search(expand_grid({"lr": [0.003]}), run, json.dumps)
        direct = train(CTRModel(spec, seed=0), tiny_data, cfg, tiny_data).final
        assert len(res.runs) == 1 and res.best.metrics == direct.to_dict()
