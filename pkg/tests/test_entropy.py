import math

import numpy as np
import pytest

from gradcheck import check_gradients, check_param_gradients
from parahydra import checkerboard, rangecoder
from parahydra.entropy import (
    ANCHOR,
    NON_ANCHOR,
    PGCM,
    SIGMA_MIN,
    ContextBundle,
    ContractError,
    EntropyModel,
    EntropyParameters,
    FactorizedPrior,
    GaussianParams,
    SequencingError,
    gaussian_bits,
    slice_rate,
)
from parahydra.blocks import SLOPE
from parahydra.opam import opam
from parahydra.tensor import Tensor, leaky_relu, softmax_lastdim

# standard normal mass on [-0.5, 0.5] and its code length, from scipy.stats.norm
P_CENTRAL = 0.38292492254802624
BITS_CENTRAL = 1.3848665342909896


@pytest.fixture(scope="module")
def em(micro_cfg):
    return EntropyModel(np.random.default_rng(11), micro_cfg)


def _phi_h(rng, cfg, b=1, h=4, w=4):
    return Tensor(rng.standard_normal((b, 2 * cfg.channels, h, w)))


class TestPCCM:
    def test_first_slice_has_zero_context(self, em, micro_cfg):
        like = Tensor(np.ones((2, micro_cfg.channels, 3, 5)))
        ctx = em.pccm_context([], 0, like=like).data
        assert ctx.shape == (2, micro_cfg.slice_channels, 3, 5)
        np.testing.assert_array_equal(ctx, 0.0)

    def test_second_slice_uses_empty_side_rule(self, em, rng, micro_cfg):
        s0 = Tensor(rng.standard_normal((1, micro_cfg.slice_channels, 4, 4)))
        ctx = em.pccm_context([s0], 1).data
        expected = em.pccm.fusion(Tensor(np.zeros(s0.shape)), s0).data
        np.testing.assert_array_equal(ctx, expected)

    def test_fourth_slice_matches_manual_composition(self, em, rng, micro_cfg):
        sc = micro_cfg.slice_channels
        prior = [rng.standard_normal((1, sc, 4, 4)) for _ in range(3)]
        ctx = em.pccm_context([Tensor(p) for p in prior], 3).data

        def nhwc(a):
            return Tensor(a.transpose(0, 2, 3, 1))

        main = prior[2]
        results = [opam(nhwc(main), nhwc(side), em.pccm.opam) for side in prior[:2]]
        cons = np.stack([r.consistency.data for r in results])  # S,B,H,W
        w = np.exp(cons - cons.max(axis=0)) / np.exp(cons - cons.max(axis=0)).sum(axis=0)
        fused = sum(w[k][..., None] * results[k].aligned.data for k in range(2)).transpose(0, 3, 1, 2)
        expected = em.pccm.fusion(Tensor(fused), Tensor(main)).data
        np.testing.assert_allclose(ctx, expected, rtol=1e-12, atol=1e-12)

    def test_missing_slices(self, em, rng, micro_cfg):
        s0 = Tensor(rng.standard_normal((1, micro_cfg.slice_channels, 4, 4)))
        with pytest.raises(SequencingError):
            em.pccm_context([s0], 2)
        with pytest.raises(SequencingError):
            em.pccm_context([s0], micro_cfg.slices)
        with pytest.raises(SequencingError):
            em.pccm_context([], 0)


def pgcm_attend_oracle(pgcm, phi_ch, anchor_slice):
    B, C, H, W = anchor_slice.shape

    def proj(conv, x, i, j):
        return conv.weight.data.reshape(C, -1) @ x[:, i, j] + conv.bias.data

    out = np.zeros((B, C, H, W))
    anchors = [(i, j) for i in range(H) for j in range(W) if (i + j) % 2 == 0]
    for b in range(B):
        keys = [proj(pgcm.k, phi_ch[b], i, j) for i, j in anchors]
        vals = [proj(pgcm.v, anchor_slice[b], i, j) for i, j in anchors]
        for i in range(H):
            for j in range(W):
                if (i + j) % 2 == 0:
                    continue
                q = proj(pgcm.q, phi_ch[b], i, j)
                logits = [float(q @ k) / math.sqrt(C) for k in keys]
                m = max(logits)
                e = [math.exp(x - m) for x in logits]
                out[b, :, i, j] = sum(ei / sum(e) * v for ei, v in zip(e, vals))
    return out


class TestPGCM:
    def test_attend_matches_brute_force(self, rng):
        pgcm = PGCM(rng, 3)
        phi, anchor = rng.standard_normal((2, 2, 3, 4, 4))
        out = pgcm.attend(Tensor(phi), Tensor(anchor)).data
        ref = pgcm_attend_oracle(pgcm, phi, anchor)
        assert np.max(np.abs(out - ref)) <= 1e-6 * np.max(np.abs(ref))

    def test_forward_is_conv_then_depthrb_masked(self, rng):
        pgcm = PGCM(rng, 3)
        phi, anchor = rng.standard_normal((2, 1, 3, 4, 4))
        out = pgcm(Tensor(phi), Tensor(anchor)).data
        h = pgcm.depth_rb(pgcm.conv(Tensor(pgcm_attend_oracle(pgcm, phi, anchor)))).data
        mask = checkerboard.checkerboard_partition(4, 4)
        np.testing.assert_array_equal(out[:, :, mask], 0.0)
        np.testing.assert_allclose(out[:, :, ~mask], h[:, :, ~mask], rtol=1e-10, atol=1e-12)

    def test_single_anchor_returns_its_value_projection(self, rng):
        pgcm = PGCM(rng, 2)
        phi = rng.standard_normal((1, 2, 1, 2))
        anchor = rng.standard_normal((1, 2, 1, 2))
        out = pgcm.attend(Tensor(phi), Tensor(anchor)).data
        expected = pgcm.v.weight.data.reshape(2, 2) @ anchor[0, :, 0, 0] + pgcm.v.bias.data
        np.testing.assert_allclose(out[0, :, 0, 1], expected, rtol=1e-14)
        np.testing.assert_array_equal(out[0, :, 0, 0], 0.0)

    def test_gradients(self):
        # Central differences are only valid away from the leaky-relu kinks.
        rng = np.random.default_rng(12)
        pgcm = PGCM(rng, 2)
        probe = Tensor(rng.standard_normal((1, 2, 4, 4)))
        arrays = [rng.standard_normal((1, 2, 4, 4)), rng.standard_normal((1, 2, 4, 4))]
        rb = pgcm.depth_rb
        pre = rb.expand(pgcm.conv(pgcm.attend(Tensor(arrays[0]), Tensor(arrays[1]))))
        pre_dw = rb.depthwise(leaky_relu(pre, SLOPE))
        assert min(np.abs(pre.data).min(), np.abs(pre_dw.data).min()) > 1e-3
        check_gradients(lambda p, a: (pgcm(p, a) * probe).sum(), arrays, rng)
        p, a = Tensor(arrays[0]), Tensor(arrays[1])
        check_param_gradients(lambda: (pgcm(p, a) * probe).sum(), pgcm, rng, samples=3)


class TestEntropyParameters:
    def test_sigma_floor(self, rng):
        ep = EntropyParameters(rng, 4, 6, 3)
        for p in ep.parameters():
            p.data *= 50.0
        out = ep(Tensor(20 * rng.standard_normal((2, 4, 5, 5))))
        assert out.mu.shape == out.sigma.shape == (2, 3, 5, 5)
        assert np.all(out.sigma.data >= SIGMA_MIN)

    def test_zero_weights_give_biases(self, rng):
        ep = EntropyParameters(rng, 4, 6, 3)
        ep.fc1.weight.data[...] = 0.0
        ep.fc2.weight.data[...] = 0.0
        out = ep(Tensor(np.zeros((1, 4, 2, 2))))
        b = ep.fc2.bias.data
        np.testing.assert_allclose(out.mu.data[0, :, 0, 0], b[:3], rtol=1e-15)
        np.testing.assert_allclose(out.sigma.data[0, :, 1, 1], np.log1p(np.exp(b[3:])) + 0.11, rtol=1e-14)

    def test_gradients(self, rng):
        ep = EntropyParameters(rng, 4, 5, 2)
        probe_mu, probe_sigma = Tensor(rng.standard_normal((1, 2, 3, 3))), Tensor(rng.standard_normal((1, 2, 3, 3)))

        def f(x):
            out = ep(x)
            return (out.mu * probe_mu).sum() + (out.sigma * probe_sigma).sum()

        check_gradients(f, [rng.standard_normal((1, 4, 3, 3))], rng)
        x = Tensor(rng.standard_normal((1, 4, 3, 3)))
        check_param_gradients(lambda: f(x), ep, rng, samples=4)

    def test_context_contract(self, em, rng, micro_cfg):
        sc, n = micro_cfg.slice_channels, micro_cfg.channels
        ch = Tensor(np.zeros((1, sc, 4, 4)))
        hyper = Tensor(np.zeros((1, 2 * n, 4, 4)))
        extra = Tensor(np.zeros((1, sc, 4, 4)))
        with pytest.raises(ContractError):
            em.entropy_parameters(ContextBundle(ch, hyper, extra, extra), ANCHOR, 0)
        with pytest.raises(ContractError):
            em.entropy_parameters(ContextBundle(ch, hyper), NON_ANCHOR, 0)
        with pytest.raises(ContractError):
            em.entropy_parameters(ContextBundle(ch, hyper), "middle", 0)
        with pytest.raises(SequencingError):
            em.nonanchor_params(0, ch, hyper, None)


class TestCausality:
    """Poison everything the decoder has not seen yet and require finite parameters."""

    @pytest.mark.parametrize("phase", [ANCHOR, NON_ANCHOR])
    def test_nan_poisoning(self, em, rng, micro_cfg, phase):
        sc, n = micro_cfg.slice_channels, micro_cfg.channels
        mask = checkerboard.checkerboard_partition(4, 4)
        phi_h = _phi_h(rng, micro_cfg)
        for i in range(micro_cfg.slices):
            y = np.round(3 * rng.standard_normal((1, n, 4, 4)))
            y[:, (i + 1) * sc :] = np.nan
            cur = y[:, i * sc : (i + 1) * sc]
            if phase == ANCHOR:
                cur[...] = np.nan
            else:
                cur[:, :, ~mask] = np.nan
            params = em.slice_params(Tensor(y), i, phi_h, phase)
            assert np.isfinite(params.mu.data).all(), f"slice {i} {phase} mu reads undecoded data"
            assert np.isfinite(params.sigma.data).all(), f"slice {i} {phase} sigma reads undecoded data"

    def test_poisoning_detects_a_leak(self, em, rng, micro_cfg):
        """Sanity check of the harness: anchors of the current slice do feed non-anchors."""
        sc, n = micro_cfg.slice_channels, micro_cfg.channels
        y = np.round(3 * rng.standard_normal((1, n, 4, 4)))
        y[:, :sc][:, :, checkerboard.checkerboard_partition(4, 4)] = np.nan
        with pytest.raises(FloatingPointError):
            em.slice_params(Tensor(y), 0, _phi_h(rng, micro_cfg), NON_ANCHOR)


class TestRates:
    def test_central_mass_bits(self):
        bits = slice_rate(np.zeros(1), np.zeros(1), np.ones(1))
        assert bits == pytest.approx(BITS_CENTRAL, rel=1e-6)

    def test_pmf_central_bucket(self):
        pmf = rangecoder.gaussian_pmf(np.zeros(1), np.ones(1))[0]
        assert pmf[rangecoder.SUPPORT] == pytest.approx(P_CENTRAL, rel=1e-6)

    def test_pmf_peak_at_mean(self):
        pmf = rangecoder.gaussian_pmf(np.zeros(1), np.array([3.0]))[0]
        c = rangecoder.SUPPORT
        assert pmf[c] >= pmf[c - 1] and pmf[c] >= pmf[c + 1]

    def test_differentiable_bits_match_closed_form(self):
        bits = gaussian_bits(Tensor(np.zeros(1)), GaussianParams(Tensor(np.zeros(1)), Tensor(np.ones(1))))
        assert bits.item() == pytest.approx(BITS_CENTRAL, rel=1e-9)

    def test_mask_selects_elements(self, rng):
        v = np.round(rng.standard_normal((2, 3)) * 2)
        mu, sigma = rng.standard_normal((2, 3)) * 0.2, rng.uniform(0.5, 2, (2, 3))
        mask = np.array([[True, False, True], [False, True, False]])
        assert slice_rate(v, mu, sigma, mask) == pytest.approx(slice_rate(v[mask], mu[mask], sigma[mask]))

    def test_sigma_contract(self):
        with pytest.raises(ContractError):
            slice_rate(np.zeros(2), np.zeros(2), np.array([1.0, 0.05]))

    def test_gaussian_bits_gradient(self, rng):
        def f(v, mu, s):
            return gaussian_bits(v, GaussianParams(mu, s * s + 0.2)).sum()

        check_gradients(f, [rng.standard_normal(6) * 2, rng.standard_normal(6), rng.standard_normal(6)], rng)


class TestFactorizedPrior:
    def test_initial_scale_is_one(self):
        np.testing.assert_allclose(FactorizedPrior(5).scale().data, 1.0, rtol=1e-12)

    def test_bits_match_tables(self, rng):
        prior = FactorizedPrior(3)
        prior.loc.data[...] = [0.0, 0.3, -1.2]
        prior.raw_scale.data[...] = [0.1, -0.5, 1.5]
        z = np.round(rng.standard_normal((1, 3, 2, 2)) * 2)
        bits = prior.bits(Tensor(z)).data.reshape(-1)
        pmf = prior.pmf(z.shape)
        idx = z.reshape(-1).astype(int) + rangecoder.SUPPORT
        np.testing.assert_allclose(bits, -np.log2(pmf[np.arange(len(idx)), idx]), rtol=1e-9)

    def test_gradients(self, rng):
        prior = FactorizedPrior(2)
        z = Tensor(rng.standard_normal((1, 2, 3, 3)) * 2)
        check_param_gradients(lambda: prior.bits(z).sum(), prior, rng, samples=2)


def test_forward_train_shapes(em, rng, micro_cfg):
    n = micro_cfg.channels
    y = Tensor(rng.standard_normal((2, n, 4, 4)) * 3)
    y_hat, bits = em.forward_train(y, _phi_h(rng, micro_cfg, b=2), rng.uniform(-0.5, 0.5, (2, n, 4, 4)))
    assert y_hat.shape == y.shape and bits.shape == (2,)
    assert np.all(np.abs(y_hat.data - y.data) <= 0.5 + 1e-12)
    assert np.all(bits.data > 0)
