import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles as ref
from wmsr.network import (
    HFEM,
    LFSSM,
    VSSM,
    WAM,
    ConfigError,
    GatedFFN,
    ModelConfig,
    analytic_param_count,
    build,
    table_reference,
)
from wmsr.numerics import ShapeError, Tensor, directional_check, gradcheck
from wmsr.numerics.tensor import Tape, backward

MICRO = dict(channels=8, groups=1, blocks_per_group=1, ssm_state=4)


def zero_params(module):
    for _, t in module.named_parameters():
        t.data[...] = 0


def jitter(module, rng, scale=0.1):
    for _, t in module.named_parameters():
        t.data[...] = t.data + scale * rng.standard_normal(t.shape)


def arr(t):
    return np.asarray(t.data, np.float64)


def ref_ffn(m, z):
    u = ref.np_dwconv(ref.np_layernorm(z, arr(m.norm.weight), arr(m.norm.bias)), arr(m.dw.weight), arr(m.dw.bias))
    c = u.shape[1] // 2
    return ref.np_linear(ref.sigmoid(u[:, :c]) * u[:, c:], arr(m.proj.weight), arr(m.proj.bias))


def ref_vssm(m, x):
    x1 = ref.silu(ref.np_dwconv(ref.np_linear(x, arr(m.in_scan.weight), arr(m.in_scan.bias)),
                                arr(m.dw.weight), arr(m.dw.bias)))
    if m.ssm is not None:
        x1 = ref.naive_ssm_2d(x1, [d.params() for d in m.ssm.dirs])
    x1 = ref.np_layernorm(x1, arr(m.norm.weight), arr(m.norm.bias))
    x2 = ref.silu(ref.np_linear(x, arr(m.in_gate.weight), arr(m.in_gate.bias)))
    return ref.np_linear(x1 * x2, arr(m.out.weight), arr(m.out.bias))


class TestConfig:
    def test_defaults(self):
        cfg = ModelConfig()
        assert (cfg.channels, cfg.groups, cfg.blocks_per_group, cfg.ssm_state, cfg.vssm_expand) == (64, 6, 4, 16, 2)

    @pytest.mark.parametrize("kw", [dict(channels=7), dict(scale=5), dict(groups=0), dict(patch=50, scale=4),
                                    dict(lambda_rec=0.0, lambda_freq=0.0), dict(dtype="float16")])
    def test_rejects(self, kw):
        with pytest.raises(ConfigError):
            ModelConfig(**kw)

    def test_text_round_trip(self):
        cfg = ModelConfig(channels=32, use_pdc=False, lambda_rec=0.25, seed=7)
        assert ModelConfig.from_text(cfg.to_text()) == cfg

    def test_text_errors(self):
        with pytest.raises(ConfigError, match="unknown key"):
            ModelConfig.from_text("widht = 3\n")
        with pytest.raises(ConfigError, match="cannot parse"):
            ModelConfig.from_text("channels = many\n")
        assert ModelConfig.from_text("# comment\n\nchannels = 16  # inline\n").channels == 16


class TestGatedFFN:
    def test_zero_input(self, rng):
        m = GatedFFN(4, rng)
        assert np.all(m(np.zeros((1, 4, 5, 5))).data == 0)

    def test_gate_closed(self, rng):
        m = GatedFFN(4, rng)
        m.dw.weight.data[...] = 0
        m.dw.weight.data[:, 0, 1, 1] = 1
        m.dw.bias.data[:2] = -1e3
        out = m(rng.standard_normal((1, 4, 5, 5))).data
        assert np.max(np.abs(out)) < 1e-300 + 1e-12

    def test_two_channel_hand_case(self):
        m = GatedFFN(2, np.random.default_rng(0))
        m.dw.weight.data[...] = 0
        m.dw.weight.data[:, 0, 1, 1] = [2.0, 3.0]
        m.dw.bias.data[...] = [0.5, -0.25]
        m.proj.weight.data[...] = [[1.0], [-2.0]]
        m.proj.bias.data[...] = [0.0, 1.0]
        z = np.array([1.0, 3.0]).reshape(1, 2, 1, 1)
        # layer norm of (1, 3): mean 2, var 1 -> (-1, 1) up to eps
        n = np.array([-1.0, 1.0]) / np.sqrt(1.0 + 1e-6)
        z1, z2 = 2.0 * n[0] + 0.5, 3.0 * n[1] - 0.25
        g = z2 / (1.0 + np.exp(-z1))
        np.testing.assert_allclose(m(z).data.ravel(), [g, -2.0 * g + 1.0], atol=1e-14)

    def test_matches_reference(self, rng):
        m = GatedFFN(6, rng)
        jitter(m, rng)
        z = rng.standard_normal((2, 6, 5, 4))
        np.testing.assert_allclose(m(z).data, ref_ffn(m, z), atol=1e-12)

    def test_odd_channels(self, rng):
        with pytest.raises(ShapeError):
            GatedFFN(5, rng)


class TestVSSM:
    def test_zero_input(self, rng):
        assert np.all(VSSM(4, 2, 3, rng)(np.zeros((1, 4, 4, 4))).data == 0)

    def test_gate_branch_zero(self, rng):
        m = VSSM(4, 2, 3, rng)
        m.in_gate.weight.data[...] = 0
        assert np.all(m(rng.standard_normal((1, 4, 4, 4))).data == 0)

    def test_matches_composition(self, rng):
        m = VSSM(4, 2, 3, rng)
        jitter(m, rng)
        x = rng.standard_normal((1, 4, 4, 3))
        np.testing.assert_allclose(m(x).data, ref_vssm(m, x), atol=1e-11)


class TestLFSSM:
    def test_zero_weights_identity(self, rng):
        m = LFSSM(4, 2, 3, rng)
        zero_params(m)
        x = rng.standard_normal((1, 4, 4, 4))
        np.testing.assert_array_equal(m(x).data, x)

    def test_matches_composition(self, rng):
        m = LFSSM(4, 2, 2, rng)
        jitter(m, rng)
        f = rng.standard_normal((1, 4, 4, 4))
        z = ref_vssm(m.vssm, ref.np_layernorm(f, arr(m.norm.weight), arr(m.norm.bias))) + f
        np.testing.assert_allclose(m(f).data, ref_ffn(m.ffn, z) + z, atol=1e-11)

    def test_gradcheck(self, rng):
        m = LFSSM(2, 1, 2, rng)
        jitter(m, rng)
        x = rng.standard_normal((1, 2, 3, 3))
        w = rng.standard_normal(x.shape)
        assert max(gradcheck(lambda x: (m(x) * Tensor(w)).sum(), [x])) < 1e-4


class TestHFEM:
    def test_zero_low_band(self, rng):
        m = HFEM(2, rng)
        out = m(Tensor(np.zeros((1, 2, 4, 4))), Tensor(rng.standard_normal((1, 6, 4, 4))))
        assert np.all(out.data == 0)

    def test_constant_gate_input_uses_vanilla_only(self, rng):
        m = HFEM(2, rng)
        m.lin_high.weight.data[...] = 0
        m.lin_high.bias.data[...] = rng.standard_normal(6)
        f_l = rng.standard_normal((1, 2, 4, 4))
        b = m.lin_high.bias.data.reshape(1, 6, 1, 1)
        # a constant field only sees the vanilla tap sum
        pre = b * m.pdc.w_vanilla.data.sum(axis=(1, 2)).reshape(1, 6, 1, 1) + m.pdc.bias.data.reshape(1, 6, 1, 1)
        x = ref.np_dwconv(ref.np_linear(f_l, arr(m.lin_low.weight), arr(m.lin_low.bias)),
                          arr(m.dw.weight), arr(m.dw.bias))
        out = m(Tensor(f_l), Tensor(np.zeros((1, 6, 4, 4)))).data
        np.testing.assert_allclose(out, ref.sigmoid(pre) * x, atol=1e-13)

    def test_matches_composition(self, rng):
        m = HFEM(2, rng)
        jitter(m, rng)
        f_l, f_wh = rng.standard_normal((1, 2, 4, 4)), rng.standard_normal((1, 6, 4, 4))
        m2 = HFEM(2, np.random.default_rng(0))
        m2.load_state_dict(m.state_dict())
        m2.pdc.fuse()
        gate_in = ref.np_linear(f_wh, arr(m.lin_high.weight), arr(m.lin_high.bias))
        gate_in = np.pad(gate_in, ((0, 0), (0, 0), (1, 1), (1, 1)), mode="edge")
        k = arr(m2.pdc.weight)
        pre = np.stack([np.stack([ref.correlate2d(gate_in[0, c], k[c, 0], mode="valid") for c in range(6)])])
        pre += arr(m2.pdc.bias).reshape(1, 6, 1, 1)
        x = ref.np_dwconv(ref.np_linear(f_l, arr(m.lin_low.weight), arr(m.lin_low.bias)),
                          arr(m.dw.weight), arr(m.dw.bias))
        np.testing.assert_allclose(m(Tensor(f_l), Tensor(f_wh)).data, ref.sigmoid(pre) * x, atol=1e-12)

    def test_channel_mismatch(self, rng):
        with pytest.raises(ShapeError):
            HFEM(2, rng)(Tensor(np.zeros((1, 2, 4, 4))), Tensor(np.zeros((1, 4, 4, 4))))


class TestWAM:
    def test_identity_at_init(self, rng):
        m = WAM(ModelConfig(channels=4, ssm_state=2), rng)
        x = rng.standard_normal((1, 4, 8, 8))
        np.testing.assert_array_equal(m(x).data, x)

    def test_matches_composition(self, rng):
        cfg = ModelConfig(channels=2, ssm_state=2, vssm_expand=1)
        m = WAM(cfg, rng)
        jitter(m, rng)
        x = rng.standard_normal((1, 2, 4, 4))
        ll, lh, hl, hh = ref.haar_bands(x)
        high = np.concatenate([lh, hl, hh], axis=1)
        fo = m.lfssm(Tensor(ll)).data
        fg = m.hfem(Tensor(fo), Tensor(high)).data
        fused = np.concatenate([fo, fg * np.concatenate([fo, fo, fo], axis=1)], axis=1)
        r = ref.np_conv(fused, arr(m.refine.weight), arr(m.refine.bias))
        np.testing.assert_allclose(m(x).data, x + ref.haar_merge(*np.split(r, 4, axis=1)), atol=1e-12)

    def test_finite_and_shape(self, rng):
        m = WAM(ModelConfig(channels=4, ssm_state=2), rng)
        jitter(m, rng)
        y = m(rng.standard_normal((1, 4, 16, 16))).data
        assert y.shape == (1, 4, 16, 16) and np.all(np.isfinite(y))

    def test_odd_rejected(self, rng):
        with pytest.raises(ShapeError):
            WAM(ModelConfig(channels=4, ssm_state=2), rng)(np.zeros((1, 4, 7, 8)))

    def test_gradcheck(self, rng):
        m = WAM(ModelConfig(channels=4, ssm_state=2), rng)
        jitter(m, rng)
        x = rng.standard_normal((1, 4, 8, 8))
        w = rng.standard_normal(x.shape)
        assert max(gradcheck(lambda x: (m(x) * Tensor(w)).sum(), [x])) < 1e-4

    @pytest.mark.parametrize("flags", [dict(use_dwt=False), dict(use_hfem=False), dict(use_lfssm=False),
                                       dict(use_pdc=False), dict(use_ssm2d=False)])
    def test_ablations_run(self, rng, flags):
        cfg = ModelConfig(channels=4, ssm_state=2, **flags)
        m = WAM(cfg, rng)
        jitter(m, rng)
        assert m(rng.standard_normal((1, 4, 8, 8))).shape == (1, 4, 8, 8)


class TestModel:
    @pytest.mark.parametrize("r", [2, 3, 4])
    def test_scale_shapes(self, r):
        m = build(ModelConfig(scale=r, patch=48 if r != 4 else 48, **MICRO), np.float64)
        assert m(np.zeros((2, 1, 8, 10))).shape == (2, 1, 8 * r, 10 * r)

    @settings(max_examples=10)
    @given(r=st.sampled_from([2, 3, 4]), h=st.integers(8, 32).map(lambda v: 2 * v),
           w=st.integers(8, 32).map(lambda v: 2 * v))
    def test_shape_contract(self, r, h, w):
        m = build(ModelConfig(scale=r, channels=2, groups=1, blocks_per_group=1, ssm_state=1, vssm_expand=1))
        assert m(np.zeros((1, 1, h, w), np.float32)).shape == (1, 1, r * h, r * w)

    def test_shape_example(self):
        m = build(ModelConfig(**MICRO))
        assert m(np.zeros((1, 1, 48, 48), np.float32)).shape == (1, 1, 96, 96)

    @pytest.mark.parametrize("shape", [(1, 1, 6, 8), (1, 1, 9, 8), (1, 2, 8, 8), (1, 8, 8)])
    def test_bad_input(self, shape):
        with pytest.raises(ShapeError):
            build(ModelConfig(**MICRO))(np.zeros(shape))

    def test_determinism(self, rng):
        cfg = ModelConfig(seed=3, **MICRO)
        a, b = build(cfg, np.float64), build(cfg, np.float64)
        for (na, ta), (nb, tb) in zip(a.named_parameters(), b.named_parameters()):
            assert na == nb and np.array_equal(ta.data, tb.data)
        x = rng.standard_normal((1, 1, 8, 8))
        grads = []
        for m in (a, b):
            with Tape() as tape:
                loss = (m(x) * m(x)).sum()
            grads.append(backward(tape, loss, m.parameters()))
        assert all(np.array_equal(ga, gb) for ga, gb in zip(*grads))
        assert not np.array_equal(build(cfg.replace(seed=4)).head.weight.data, a.head.weight.data)

    def test_zero_deep_weights(self, rng):
        m = build(ModelConfig(**MICRO), np.float64)
        for grp in m.groups:
            zero_params(grp)
        x = rng.standard_normal((1, 1, 8, 8))
        fs = m.head(x)
        expected = m.tail(ref_shuffle(m.up(fs + fs).data, 2))
        np.testing.assert_array_equal(m(x).data, expected.data)

    @pytest.mark.parametrize("channels", [32, 48, 64, 96, 128])
    def test_param_count_sweep(self, channels):
        cfg = ModelConfig(channels=channels, groups=4, blocks_per_group=4, scale=4)
        assert build(cfg).num_parameters() == analytic_param_count(cfg)

    @pytest.mark.parametrize("flags", [dict(use_dwt=False), dict(use_hfem=False), dict(use_lfssm=False),
                                       dict(use_pdc=False), dict(use_ssm2d=False), dict(scale=3)])
    def test_param_count_ablations(self, flags):
        cfg = ModelConfig(channels=8, groups=2, blocks_per_group=2, ssm_state=4, **flags)
        m = build(cfg)
        assert m.num_parameters() == analytic_param_count(cfg)
        m.fuse()
        assert m.num_parameters() == analytic_param_count(cfg, fused=True)

    def test_reference_lookup(self):
        ref_vals = table_reference(ModelConfig(channels=64, groups=4, blocks_per_group=4, scale=4))
        assert ref_vals["channels_table"][1] == "657.302K"
        assert table_reference(ModelConfig(channels=16)) == {}

    def test_end_to_end_gradcheck(self, rng):
        m = build(ModelConfig(**MICRO), np.float64)
        jitter(m, rng, 0.05)
        x = rng.standard_normal((1, 1, 8, 8))
        w = rng.standard_normal((1, 1, 16, 16))
        assert max(gradcheck(lambda x: (m(x) * Tensor(w)).sum(), [x])) < 1e-4
        params = m.parameters()
        errs = directional_check(lambda x, *ps: (m(x) * Tensor(w)).sum(), [Tensor(x, requires_grad=True)] + params,
                                 rng)
        assert max(errs) < 1e-4

    def test_fusion_equivalence_float64(self, rng):
        m = build(ModelConfig(**MICRO), np.float64)
        jitter(m, rng, 0.05)
        x = rng.random((2, 1, 8, 8))
        before = m(x).data
        assert not m.fused
        m.fuse()
        assert m.fused
        assert np.max(np.abs(m(x).data - before)) < 1e-12

    def test_fusion_equivalence_32bit_weights(self, rng):
        # 32-bit stored weights, both forms evaluated in float64
        m32 = build(ModelConfig(**MICRO), np.float32)
        jitter(m32, rng, 0.05)
        state = m32.state_dict()
        multi = build(ModelConfig(**MICRO), np.float64)
        multi.load_state_dict(state)
        fused = build(ModelConfig(**MICRO), np.float64)
        fused.load_state_dict(state)
        fused.fuse()
        x = rng.random((2, 1, 8, 8))
        assert np.max(np.abs(fused(x).data - multi(x).data)) < 1e-8

    def test_float32_fused_forward_close(self, rng):
        m = build(ModelConfig(**MICRO), np.float32)
        jitter(m, rng, 0.05)
        x = rng.random((2, 1, 8, 8)).astype(np.float32)
        before = m(x).data
        m.fuse()
        np.testing.assert_allclose(m(x).data, before, rtol=1e-4, atol=1e-4)


def ref_shuffle(x, r):
    b, c, h, w = x.shape
    return Tensor(x.reshape(b, c // (r * r), r, r, h, w).transpose(0, 1, 4, 2, 5, 3).reshape(b, -1, h * r, w * r))
