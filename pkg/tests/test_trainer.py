import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from wmsr.data import PatchPair, degrade, synth_sst
from wmsr.network import ModelConfig, build
from wmsr.numerics import Tape, Tensor, backward
from wmsr.objective import LossWeights, total_loss
from wmsr.trainer import (
    CKPT_MAGIC,
    Checkpoint,
    CheckpointError,
    NonFiniteError,
    OptimState,
    adam_step,
    lr_schedule,
    train,
)

TINY = ModelConfig(channels=4, groups=1, blocks_per_group=1, ssm_state=2, vssm_expand=1, scale=2,
                   patch=16, epochs=2, batch_size=2, dtype="float64", seed=5)


def scalar_adam(w, grads, lr, b1=0.9, b2=0.999, eps=1e-8):
    m = v = 0.0
    out = []
    for t, g in enumerate(grads, 1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        w = w - lr * (m / (1 - b1 ** t)) / (math.sqrt(v / (1 - b2 ** t)) + eps)
        out.append(w)
    return out


def pairs(n, size=16, r=2, seed=0):
    out = []
    for i in range(n):
        hr = synth_sst(size, size, seed + i).astype(np.float32)[None, None]
        out.append(PatchPair(hr, degrade(hr, r), str(i), (0, 0)))
    return out


def leaf(v):
    return Tensor(np.array(v, dtype=np.float64), requires_grad=True)


class TestAdam:
    def test_matches_scalar_reference(self, rng):
        grads = rng.standard_normal(50)
        w = leaf([0.3])
        state = OptimState.zeros([w])
        ref = scalar_adam(0.3, grads.tolist(), 1e-2)
        for g, expected in zip(grads, ref):
            adam_step([w], [np.array([g])], state, 1e-2)
            assert abs(float(w.data[0]) - expected) <= 1e-12

    def test_first_step_is_about_lr(self):
        w = leaf([0.0])
        adam_step([w], [np.ones(1)], OptimState.zeros([w]), 1e-3)
        assert float(w.data[0]) == pytest.approx(-1e-3 / (1 + 1e-8), abs=1e-18)

    def test_zero_gradient(self):
        w = leaf([1.0, -2.0])
        state = OptimState.zeros([w])
        adam_step([w], [np.zeros(2)], state, 1e-2)
        np.testing.assert_array_equal(w.data, [1.0, -2.0])
        state.m[0][...] = 0.5
        state.v[0][...] = 0.25
        adam_step([w], [np.zeros(2)], state, 1e-2)
        np.testing.assert_allclose(state.m[0], 0.45, rtol=1e-15)
        np.testing.assert_allclose(state.v[0], 0.25 * 0.999, rtol=1e-15)

    def test_descent_on_quadratic(self):
        w = leaf([1.0])
        state = OptimState.zeros([w])
        f = [1.0]
        for _ in range(10):
            adam_step([w], [2 * w.data], state, 0.05)
            f.append(float(w.data[0] ** 2))
        assert all(a > b for a, b in zip(f, f[1:]))

    def test_nan_gradient_aborts_untouched(self):
        w = leaf([1.0, 2.0])
        state = OptimState.zeros([w])
        with pytest.raises(NonFiniteError, match="non-finite gradient"):
            adam_step([w], [np.array([0.1, np.nan])], state, 1e-3)
        assert state.step == 0
        np.testing.assert_array_equal(w.data, [1.0, 2.0])

    @given(seed=st.integers(0, 2**16), lr=st.floats(1e-5, 1e-1))
    def test_second_moment_nonnegative(self, seed, lr):
        r = np.random.default_rng(seed)
        w = leaf(r.standard_normal(4))
        state = OptimState.zeros([w])
        for _ in range(5):
            adam_step([w], [r.standard_normal(4) * 10.0 ** r.integers(-8, 8)], state, lr)
            assert np.all(state.v[0] >= 0)

    def test_float32_parameter_keeps_dtype(self):
        w = Tensor(np.ones(3, np.float32), requires_grad=True)
        adam_step([w], [np.ones(3)], OptimState.zeros([w]), 1e-3)
        assert w.data.dtype == np.float32


class TestSchedule:
    def test_examples(self):
        assert lr_schedule(0) == 1e-3
        assert lr_schedule(20) == 5e-4
        assert lr_schedule(10) == pytest.approx(7.5e-4, abs=1e-18)

    @given(k=st.integers(0, 40))
    def test_segment_boundaries_exact(self, k):
        assert lr_schedule(20 * k) == 1e-3 * 2.0 ** -k

    @given(e=st.integers(0, 400))
    def test_within_bounds(self, e):
        seg = e // 20
        assert 0.5 * 1e-3 * 2.0 ** -seg < lr_schedule(e) <= 1e-3 * 2.0 ** -seg

    def test_nonincreasing(self):
        vals = [lr_schedule(e) for e in range(200)]
        assert all(a >= b for a, b in zip(vals, vals[1:]))

    def test_negative(self):
        with pytest.raises(ValueError):
            lr_schedule(-1)


class TestCheckpoint:
    @pytest.fixture
    def model(self, rng):
        m = build(TINY.replace(dtype="float32"))
        for _, t in m.named_parameters():
            t.data[...] = t.data + 0.1 * rng.standard_normal(t.shape)
        return m

    def test_byte_identical_round_trip(self, model, tmp_path):
        state = OptimState.zeros(model.parameters())
        state.step = 7
        ck = Checkpoint.from_model(model, state, {"epoch": 3, "rng": {"state": 2**100}})
        ck.save(tmp_path / "a.ckpt")
        Checkpoint.load(tmp_path / "a.ckpt").save(tmp_path / "b.ckpt")
        raw = (tmp_path / "a.ckpt").read_bytes()
        assert raw == (tmp_path / "b.ckpt").read_bytes()
        assert raw.startswith(CKPT_MAGIC)

    def test_forward_bits(self, model, rng):
        x = rng.random((2, 1, 8, 8)).astype(np.float32)
        restored = Checkpoint.from_bytes(Checkpoint.from_model(model).to_bytes()).to_model()
        assert restored.cfg == model.cfg
        assert np.array_equal(restored(x).data, model(x).data)

    def test_parameters_stored_32bit(self, model):
        ck = Checkpoint.from_bytes(Checkpoint.from_model(model).to_bytes())
        assert all(a.dtype == np.float32 for a in ck.tensors.values())
        assert list(ck.tensors) == [n for n, _ in model.named_parameters()]

    def test_optimizer_state(self, model):
        state = OptimState.zeros(model.parameters())
        for m in state.m:
            m[...] = 0.5
        back = Checkpoint.from_bytes(Checkpoint.from_model(model, state).to_bytes()).optim
        assert all(np.all(m == 0.5) for m in back.m)

    def test_fused_checkpoint_equivalence(self, model, rng):
        multi = Checkpoint.from_model(model)
        fused_model = multi.to_model().fuse()
        fused = Checkpoint.from_bytes(Checkpoint.from_model(fused_model).to_bytes())
        assert fused.fused and not multi.fused
        x = rng.random((2, 1, 8, 8))
        a = multi.to_model(np.float64)(x).data
        b = fused.to_model(np.float64)(x).data
        assert np.max(np.abs(a - b)) <= 1e-8

    @pytest.mark.parametrize("mutate,match", [
        (lambda raw: b"NOTACKPT" + raw[8:], "magic"),
        (lambda raw: raw[:-5], "truncated"),
        (lambda raw: raw + b"\x00", "trailing"),
        (lambda raw: raw[:8] + b"\x09\x00" + raw[10:], "version"),
    ])
    def test_corruption(self, model, mutate, match):
        raw = Checkpoint.from_model(model).to_bytes()
        with pytest.raises(CheckpointError, match=match):
            Checkpoint.from_bytes(mutate(raw))


class TestTrain:
    def test_one_step_descent(self):
        cfg = TINY.replace(lr=1e-4, epochs=1, batch_size=1)
        data = pairs(1)
        model = build(cfg)
        hr, lr_img = data[0].hr, data[0].lr

        def loss_of(m):
            return float(total_loss(m(lr_img), hr, LossWeights(cfg.lambda_rec, cfg.lambda_freq)).data)

        before = loss_of(model)
        res = train(model, data, cfg=cfg, eval_every=100)
        assert res.steps == 1
        assert loss_of(model) < before

    def test_gradient_flows_to_every_parameter(self):
        model = build(TINY)
        data = pairs(1)
        with Tape() as tape:
            loss = total_loss(model(data[0].lr), data[0].hr)
        grads = backward(tape, loss, model.parameters())
        assert all(np.all(np.isfinite(g)) for g in grads)
        # the zero-initialized block refinement passes gradient to its own weights
        named = dict(zip([n for n, _ in model.named_parameters()], grads))
        assert np.any(named["groups.0.blocks.0.refine.weight"] != 0)

    def test_deterministic(self, tmp_path):
        logs = []
        for run in ("a", "b"):
            res = train(build(TINY), pairs(4), pairs(1, seed=50), TINY, out_dir=tmp_path / run, eval_train=True)
            logs.append(res.log)
            assert (tmp_path / run / "metrics.csv").read_text().splitlines() == res.log
        assert logs[0] == logs[1]
        assert logs[0][0] == "epoch,split,psnr_db,ssim"
        assert len(logs[0]) == 1 + 2 * TINY.epochs
        assert (tmp_path / "a" / "last.ckpt").read_bytes() == (tmp_path / "b" / "last.ckpt").read_bytes()

    def test_best_checkpoint_kept(self, tmp_path):
        res = train(build(TINY), pairs(2), pairs(1, seed=9), TINY.replace(epochs=3), out_dir=tmp_path)
        test_rows = [r.split(",") for r in res.log[1:] if ",test," in r]
        best = max(float(r[2]) for r in test_rows)
        assert res.best.meta["best_psnr"] == pytest.approx(best, abs=1e-6)
        on_disk = Checkpoint.load(tmp_path / "best.ckpt")
        assert on_disk.meta["best_psnr"] == res.best.meta["best_psnr"]

    def test_max_steps(self):
        res = train(build(TINY), pairs(4), cfg=TINY.replace(epochs=10), max_steps=3)
        assert res.steps == 3

    def test_non_finite_loss_aborts(self, tmp_path):
        bad = pairs(2)
        hr = bad[1].hr.copy()
        hr[0, 0, 0, 0] = np.nan
        bad[1] = bad[1]._replace(hr=hr)
        with pytest.raises(NonFiniteError, match="non-finite"):
            train(build(TINY), bad, cfg=TINY.replace(batch_size=1), out_dir=tmp_path)
        good = Checkpoint.load(tmp_path / "last_good.ckpt")
        assert good.meta["step"] == 0
