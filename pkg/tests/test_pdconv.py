import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from wmsr.numerics import ShapeError, Tensor, gradcheck
from wmsr.pdconv import KINDS, SPECS, PdcSpec, branch_sum, fuse, pdc_forward

PADDINGS = ("replicate", "zeros")
DIFF_KINDS = tuple(k for k in KINDS if k != "vanilla")


def direct_branch(x, spec, w, padding):
    """Per-pixel evaluation of sum_n w_n (x(p0 + p_a) - x(p0 + p_b)) for one channel."""
    mode = "edge" if padding == "replicate" else "constant"
    xp = np.pad(x, 1, mode=mode)
    h, wd = x.shape
    out = np.zeros((h, wd))
    for i, j in itertools.product(range(h), range(wd)):
        acc = 0.0
        for n, (pa, pb) in enumerate(spec.pairs):
            term = xp[i + 1 + pa[0], j + 1 + pa[1]]
            if pb is not None:
                term -= xp[i + 1 + pb[0], j + 1 + pb[1]]
            acc += w[n] * term
        out[i, j] = acc
    return out


def random_branches(rng, cout, cin):
    return [(SPECS[k], rng.standard_normal((cout, cin, SPECS[k].n_taps))) for k in KINDS]


class TestSpecs:
    def test_tap_counts(self):
        assert {k: SPECS[k].n_taps for k in KINDS} == {"vanilla": 9, "cdc": 9, "adc": 8, "hdc": 6, "vdc": 6}

    def test_all_taps_in_field(self):
        for spec in SPECS.values():
            for pa, pb in spec.pairs:
                for p in (pa, pb):
                    assert p is None or max(abs(p[0]), abs(p[1])) <= 1

    def test_vanilla_has_no_reference(self):
        assert all(pb is None for _, pb in SPECS["vanilla"].pairs)
        for k in DIFF_KINDS:
            assert all(pb is not None for _, pb in SPECS[k].pairs)

    def test_adc_ring_is_clockwise(self):
        ring = [pa for pa, _ in SPECS["adc"].pairs]
        assert (0, 0) not in ring
        for i, (pa, pb) in enumerate(SPECS["adc"].pairs):
            assert pb == ring[(i + 1) % 8]

    def test_out_of_field_rejected(self):
        with pytest.raises(ValueError):
            PdcSpec("cdc", (((2, 0), (0, 0)),))
        with pytest.raises(ValueError):
            PdcSpec("cdc", (((0, 1), None),))
        with pytest.raises(ValueError):
            PdcSpec("vanilla", (((0, 1), (0, 0)),))
        with pytest.raises(ValueError):
            PdcSpec.of("rdc")


class TestBranches:
    def test_cdc_one_hot_center(self):
        x = np.zeros((1, 1, 5, 5))
        x[0, 0, 2, 2] = 1.0
        y = pdc_forward(x, SPECS["cdc"], np.ones((1, 1, 9))).data
        assert y[0, 0, 2, 2] == -8.0

    @pytest.mark.parametrize("kind", DIFF_KINDS)
    def test_constant_annihilated(self, kind, rng):
        x = np.full((2, 3, 6, 5), 3.7)
        w = rng.standard_normal((4, 3, SPECS[kind].n_taps))
        assert np.all(pdc_forward(x, SPECS[kind], w).data == 0)

    def test_hdc_row_constant(self, rng):
        x = np.repeat(rng.standard_normal((1, 1, 6, 1)), 7, axis=3)
        w = rng.standard_normal((1, 1, 6))
        assert np.all(pdc_forward(x, SPECS["hdc"], w).data == 0)

    def test_vdc_column_constant(self, rng):
        x = np.repeat(rng.standard_normal((1, 1, 1, 6)), 7, axis=2)
        assert np.all(pdc_forward(x, SPECS["vdc"], rng.standard_normal((1, 1, 6))).data == 0)

    @pytest.mark.parametrize("padding", PADDINGS)
    @pytest.mark.parametrize("kind", KINDS)
    def test_matches_direct_evaluation(self, kind, padding, rng):
        spec = SPECS[kind]
        x = rng.standard_normal((5, 6))
        w = rng.standard_normal(spec.n_taps)
        got = pdc_forward(x[None, None], spec, w[None, None], padding=padding).data[0, 0]
        np.testing.assert_allclose(got, direct_branch(x, spec, w, padding), atol=1e-13)

    def test_multichannel_sums_inputs(self, rng):
        spec = SPECS["adc"]
        x = rng.standard_normal((1, 3, 4, 4))
        w = rng.standard_normal((1, 3, 8))
        ref = sum(direct_branch(x[0, c], spec, w[0, c], "replicate") for c in range(3))
        np.testing.assert_allclose(pdc_forward(x, spec, w).data[0, 0], ref, atol=1e-13)

    def test_weight_shape_errors(self, rng):
        with pytest.raises(ShapeError):
            pdc_forward(np.zeros((1, 2, 4, 4)), SPECS["cdc"], np.zeros((1, 2, 8)))
        with pytest.raises(ShapeError):
            pdc_forward(np.zeros((1, 2, 4, 4)), SPECS["cdc"], np.zeros((1, 3, 9)))
        with pytest.raises(ShapeError):
            pdc_forward(np.zeros((1, 2, 4, 4)), SPECS["cdc"], np.zeros((3, 1, 9)), depthwise=True)

    @pytest.mark.parametrize("depthwise", [False, True])
    @pytest.mark.parametrize("kind", KINDS)
    def test_gradcheck(self, kind, depthwise, rng):
        spec = SPECS[kind]
        x = rng.standard_normal((1, 2, 4, 3))
        w = rng.standard_normal((2, 1 if depthwise else 2, spec.n_taps))
        g = rng.standard_normal((1, 2, 4, 3))
        errs = gradcheck(lambda x, w: (pdc_forward(x, spec, w, depthwise) * Tensor(g)).sum(), [x, w])
        assert max(errs) < 1e-4


class TestFusion:
    def test_cdc_all_ones(self):
        k = fuse([(SPECS["cdc"], np.ones((1, 1, 9)))]).kernel[0, 0]
        expected = np.ones((3, 3))
        expected[1, 1] = -8.0
        np.testing.assert_array_equal(k, expected)

    def test_zero_weights(self):
        fk = fuse([(SPECS[k], np.zeros((2, 2, SPECS[k].n_taps))) for k in KINDS])
        assert np.all(fk.kernel == 0)

    def test_pdc_kernels_sum_to_zero(self, rng):
        for kind in DIFF_KINDS:
            k = SPECS[kind].kernel(rng.standard_normal((3, 2, SPECS[kind].n_taps)))
            np.testing.assert_allclose(k.sum(axis=(-2, -1)), 0, atol=1e-13)

    @pytest.mark.parametrize("padding", PADDINGS)
    @pytest.mark.parametrize("depthwise", [False, True])
    def test_random_multichannel(self, rng, depthwise, padding):
        c = 3
        branches = random_branches(rng, c, 1 if depthwise else c)
        bias = rng.standard_normal(c)
        fk = fuse(branches, bias, depthwise, padding)
        for _ in range(20):
            x = rng.standard_normal((2, c, 7, 6))
            ref = branch_sum(x, branches, bias, depthwise, padding).data
            assert np.max(np.abs(fk(x).data - ref)) < 1e-10

    @pytest.mark.parametrize("padding", PADDINGS)
    def test_exhaustive_5x5_basis(self, rng, padding):
        # both paths are linear, so agreeing on all 25 one-hot fields covers every 5x5 input
        branches = random_branches(rng, 1, 1)
        fk = fuse(branches, padding=padding)
        basis = np.eye(25).reshape(25, 1, 5, 5)
        ref = branch_sum(basis, branches, padding=padding).data
        assert np.max(np.abs(fk(basis).data - ref)) < 1e-10

    @given(seed=st.integers(0, 2**16), shift=st.floats(-100, 100))
    def test_fused_pdc_ignores_offsets(self, seed, shift):
        r = np.random.default_rng(seed)
        branches = [(SPECS[k], r.standard_normal((2, 1, SPECS[k].n_taps))) for k in DIFF_KINDS]
        fk = fuse(branches, depthwise=True)
        x = r.standard_normal((1, 2, 5, 5))
        np.testing.assert_allclose(fk(x + shift).data, fk(x).data, atol=1e-9)

    def test_mismatched_branch_shapes(self, rng):
        with pytest.raises(ShapeError):
            fuse([(SPECS["cdc"], rng.standard_normal((2, 2, 9))), (SPECS["hdc"], rng.standard_normal((2, 3, 6)))])
        with pytest.raises(ValueError):
            fuse([])
