import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from replay_weights.kernel import (
    KernelConfig,
    KernelInputError,
    WeightVector,
    combined_normalize,
    compensate,
    compute_weights,
    gaussian_density,
    gaussian_raw_priority,
    positive_preferential,
    softmax_weights,
    weighted_loss,
)

from oracles import pbwl_reference

finite = st.floats(min_value=-1e3, max_value=1e3, allow_nan=False, allow_infinity=False)
batches = st.lists(finite, min_size=1, max_size=64)


class TestCombinedNormalize:
    def test_symmetric_example(self):
        # oracle: |d|=[1,2,3], c=2, sigma=sqrt(2/3)
        out = combined_normalize([1.0, -2.0, 3.0])
        np.testing.assert_allclose(out, [-1.224744871391589, 0.0, 1.224744871391589], rtol=1e-14)

    def test_zero_variance(self):
        np.testing.assert_array_equal(combined_normalize([5.0, 5.0, 5.0]), [0.0, 0.0, 0.0])

    def test_median_wins_under_positive_skew(self):
        out = combined_normalize([0.0, 0.0, 1.0, 9.0])
        expected = [-0.13245323570650439, -0.13245323570650439, 0.13245323570650439, 2.2517050070105746]
        np.testing.assert_allclose(out, expected, rtol=1e-13)
        # centering on the median 0.5, not the mean 2.5
        sigma = math.sqrt(14.25)
        assert out[2] == pytest.approx((1.0 - 0.5) / sigma, rel=1e-14)

    @pytest.mark.parametrize("mode", ["mean", "median"])
    def test_single_statistic_modes(self, mode):
        d = [0.0, 0.0, 1.0, 9.0]
        ref = pbwl_reference(d, mode=mode)["delta_n"]
        np.testing.assert_allclose(combined_normalize(d, mode), ref, rtol=1e-13)

    def test_even_length_median_is_midpoint(self):
        out = combined_normalize([1.0, 2.0, 3.0, 10.0], "median")
        sigma = np.std([1.0, 2.0, 3.0, 10.0])
        np.testing.assert_allclose(out, (np.array([1, 2, 3, 10]) - 2.5) / sigma)

    @pytest.mark.parametrize("bad", [float("nan"), float("inf"), -float("inf")])
    def test_rejects_non_finite_with_index(self, bad):
        with pytest.raises(KernelInputError, match="index 2"):
            combined_normalize([1.0, 2.0, bad, 4.0])

    def test_rejects_empty(self):
        with pytest.raises(KernelInputError):
            combined_normalize([])

    def test_unknown_mode(self):
        with pytest.raises(KernelInputError):
            combined_normalize([1.0, 2.0], "mode")


class TestPositivePreferential:
    @pytest.mark.parametrize("x, expected", [(-1.0, -1.0), (2.0, 2.0 / 3.0), (0.0, 0.0)])
    def test_examples(self, x, expected):
        assert positive_preferential([x])[0] == pytest.approx(expected, rel=1e-15)

    @given(st.lists(st.integers(-5000, 5000), min_size=2, max_size=20, unique=True))
    def test_strictly_increasing_and_bounded(self, ks):
        xs = sorted(k / 100.0 for k in ks)
        out = positive_preferential(xs)
        assert np.all(np.diff(out) > 0)
        assert np.all(out < 1.0)
        neg = np.asarray(xs) <= 0
        np.testing.assert_array_equal(out[neg], np.asarray(xs)[neg])


class TestGaussianRawPriority:
    def test_unit_peak(self):
        assert gaussian_density([0.0], 1.0)[0] == pytest.approx(1.0 / math.sqrt(2.0 * math.pi), rel=1e-15)

    def test_zero_variance_gives_ones(self):
        np.testing.assert_array_equal(gaussian_raw_priority([0.0, 0.0, 0.0]), [1.0, 1.0, 1.0])

    def test_symmetric_example(self):
        out = gaussian_raw_priority([-1.0, 0.0, 1.0])
        np.testing.assert_allclose(out, [0.23079948420818297, 0.48860251190292003, 0.23079948420818297], rtol=1e-13)
        assert out[1] > out[0] == out[2]


class TestSoftmax:
    def test_offset_example(self):
        np.testing.assert_allclose(
            softmax_weights([0.2, 0.4, 0.6]), softmax_weights([0.4, 0.6, 0.8]), rtol=0, atol=1e-15
        )

    @pytest.mark.parametrize("c", [-30.0, 0.0, 0.7, 500.0])
    def test_constant_is_uniform(self, c):
        np.testing.assert_allclose(softmax_weights([c] * 5), [0.2] * 5, rtol=1e-15)

    def test_closed_form(self):
        np.testing.assert_allclose(softmax_weights([0.0, math.log(2.0)]), [1 / 3, 2 / 3], rtol=1e-15)

    @given(st.lists(st.floats(-50, 50), min_size=1, max_size=100), st.floats(-100, 100))
    def test_offset_invariance_and_sum(self, z, a):
        p = softmax_weights(z)
        assert abs(p.sum() - 1.0) < 1e-12
        np.testing.assert_allclose(softmax_weights(np.asarray(z) + a), p, rtol=0, atol=1e-12)


class TestCompensate:
    def test_uniform_weights_are_identity(self):
        d = np.array([0.3, -1.2, 4.0, 2.2])
        np.testing.assert_allclose(compensate(np.full(4, 0.25), d), np.ones(4), rtol=1e-15)

    def test_zero_batch(self):
        np.testing.assert_array_equal(compensate([0.2, 0.3, 0.5], [0.0, 0.0, 0.0]), [1.0, 1.0, 1.0])

    def test_hand_example(self):
        # ||d||_1 = 3, ||p*d||_1 = 1.25 -> factor 2.4
        np.testing.assert_allclose(compensate([0.75, 0.25], [1.0, 2.0]), [1.8, 0.6], rtol=1e-15)

    def test_l2(self):
        p, d = np.array([0.75, 0.25]), np.array([1.0, 2.0])
        expected = math.sqrt(5.0) / math.sqrt(0.75**2 + 0.5**2) * p
        np.testing.assert_allclose(compensate(p, d, "L2"), expected, rtol=1e-15)

    def test_length_mismatch(self):
        with pytest.raises(KernelInputError, match="length mismatch"):
            compensate([0.5, 0.5], [1.0, 2.0, 3.0])

    @given(batches.filter(lambda b: any(abs(x) > 1e-6 for x in b)))
    def test_l1_identity(self, d):
        w = compute_weights(d).omega
        d = np.asarray(d)
        assert np.sum(np.abs(w * d)) == pytest.approx(np.sum(np.abs(d)), rel=1e-9)


class TestComputeWeights:
    @pytest.mark.parametrize("d", [[1.0, -2.0, 3.0], [0.0, 0.0, 1.0, 9.0], [0.5, -0.1, 7.0, -3.0, 2.0, 2.0]])
    @pytest.mark.parametrize(
        "cfg",
        [
            KernelConfig(),
            KernelConfig(normalization_mode="mean", compensation_norm="L2"),
            KernelConfig(normalization_mode="median", softmax_enabled=False),
            KernelConfig(positive_preferential_enabled=False),
        ],
    )
    def test_matches_scalar_oracle(self, d, cfg):
        ref = pbwl_reference(
            d,
            mode=cfg.normalization_mode,
            pp=cfg.positive_preferential_enabled,
            softmax=cfg.softmax_enabled,
            norm=cfg.compensation_norm,
        )
        out = compute_weights(d, cfg)
        for name in ("delta_n", "delta_m", "delta_g", "p", "omega"):
            np.testing.assert_allclose(getattr(out, name), ref[name], rtol=1e-12, err_msg=name)

    def test_frozen_example(self):
        out = compute_weights([1.0, -2.0, 3.0])
        np.testing.assert_allclose(
            out.omega, [0.7579540458098601, 1.1307445679072463, 0.9935189394585492], rtol=1e-13
        )
        assert int(np.argmax(out.omega)) == 1

    @pytest.mark.parametrize("d", [[5.0, 5.0, 5.0], [-2.0, 2.0], [0.0, 0.0, 0.0], [3.7]])
    def test_degenerate_batches_give_ones(self, d):
        out = compute_weights(d)
        np.testing.assert_array_equal(out.omega, np.ones(len(d)))
        assert weighted_loss(d, out) == weighted_loss(d, np.ones(len(d)))

    def test_positive_side_preferred(self):
        # |d| = [1, 2, 3, 2, 2] -> mean = median = 2, sigma fixed; 3 and 1 sit at +a and -a
        d = [1.0, 2.0, 3.0, -2.0, 2.0]
        out = compute_weights(d)
        assert out.delta_n[2] == pytest.approx(-out.delta_n[0])
        assert out.omega[2] > out.omega[0]

    def test_without_positive_preferential_mirror_pair_ties(self):
        d = [1.0, 2.0, 3.0, -2.0, 2.0]
        out = compute_weights(d, KernelConfig(positive_preferential_enabled=False))
        assert out.omega[2] == pytest.approx(out.omega[0], rel=1e-14)

    def test_deterministic(self):
        rng = np.random.default_rng(3)
        d = rng.normal(size=257)
        a, b = compute_weights(d), compute_weights(d.copy())
        assert a.omega.tobytes() == b.omega.tobytes()

    def test_trace_json_fields(self):
        import json

        trace = json.loads(compute_weights([1.0, -2.0, 3.0]).to_json())
        assert list(trace) == ["delta_n", "delta_m", "delta_g", "p", "omega"]

    @given(batches)
    @settings(max_examples=200)
    def test_positive_finite_and_peak(self, d):
        out = compute_weights(d)
        assert np.all(out.omega > 0) and np.all(np.isfinite(out.omega))
        assert abs(out.p.sum() - 1.0) < 1e-12
        assert out.omega[np.argmin(np.abs(out.delta_m))] == out.omega.max()

    def test_bad_config(self):
        with pytest.raises(KernelInputError):
            KernelConfig(normalization_mode="mode")
        with pytest.raises(KernelInputError):
            KernelConfig.from_dict({"softmax": True})


class TestWeightedLoss:
    def test_reduces_to_mse(self):
        assert weighted_loss([3.0, 4.0], [1.0, 1.0]) == 12.5

    def test_uncompensated_lowers_loss(self):
        rng = np.random.default_rng(0)
        d = rng.normal(size=16)
        p = compute_weights(d).p
        assert weighted_loss(d, p) < weighted_loss(d, np.ones(16))

    def test_length_mismatch(self):
        with pytest.raises(KernelInputError):
            weighted_loss([1.0, 2.0], [1.0])

    def test_accepts_weight_vector(self):
        wv = WeightVector(omega=np.array([2.0, 0.5]))
        assert weighted_loss([1.0, 2.0], wv) == pytest.approx((4.0 + 1.0) / 2)
