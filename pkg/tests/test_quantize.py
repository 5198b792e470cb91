import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from depthbins.quantize import (
    QuantizationSpec,
    decode_score_volume,
    depth_to_label,
    hard_max_depth,
    label_to_depth,
    make_spec,
    soft_weighted_depth,
    validate_score_volume,
)

SPEC = make_spec()


def one_hot(j, n=151):
    p = np.zeros(n)
    p[j] = 1.0
    return p


class TestMakeSpec:
    def test_default_bin_width(self):
        # (log10(80) - log10(0.25)) / 150 = 2.5051500 / 150
        assert SPEC.q == pytest.approx(0.0167010, abs=1e-7)
        assert SPEC.q == pytest.approx(2.5051499783199057 / 150, rel=1e-12)
        assert SPEC.num_classes == 151

    def test_one_decade_one_interval(self):
        spec = make_spec(1, 10, 1)
        assert spec.q == pytest.approx(1.0, rel=1e-15)
        assert spec.num_classes == 2

    def test_degenerate_range_rejected(self):
        with pytest.raises(ValueError):
            make_spec(1, 1, 10)
        with pytest.raises(ValueError):
            make_spec(-1, 10, 10)
        with pytest.raises(ValueError):
            make_spec(1, 10, 0)

    def test_bin_weights_endpoints(self):
        w = SPEC.bin_weights()
        assert w[0] == pytest.approx(math.log10(0.25), rel=1e-15)
        assert w[150] == pytest.approx(math.log10(80), rel=1e-12)
        assert np.all(np.diff(w) > 0)

    def test_json_round_trip_recomputes_derived(self):
        text = SPEC.to_json()
        obj = json.loads(text)
        assert set(obj) == {"alpha", "beta", "K"}  # q and w never stored
        again = QuantizationSpec.from_json(text)
        assert again == SPEC


class TestDepthToLabel:
    def test_bounds_and_midpoint(self):
        assert depth_to_label(0.25, SPEC) == 0
        assert depth_to_label(80.0, SPEC) == 150
        assert depth_to_label(math.sqrt(0.25 * 80), SPEC) == 75

    def test_ten_meters(self):
        # (1 - (-0.60206)) / 0.0167010 = 95.93 -> rounds to 96
        assert depth_to_label(10.0, SPEC) == 96

    def test_out_of_range_clamps(self):
        assert depth_to_label(0.01, SPEC) == 0
        assert depth_to_label(500.0, SPEC) == 150

    def test_nonpositive_rejected(self):
        with pytest.raises(ValueError):
            depth_to_label(0.0, SPEC)
        with pytest.raises(ValueError):
            depth_to_label(np.array([1.0, -2.0]), SPEC)

    def test_vectorized_matches_scalar(self):
        d = np.array([0.3, 1.0, 4.0, 20.0, 79.0])
        labels = depth_to_label(d, SPEC)
        assert labels.tolist() == [depth_to_label(float(x), SPEC) for x in d]


class TestLabelToDepth:
    def test_endpoints(self):
        assert label_to_depth(0, SPEC) == pytest.approx(0.25, rel=1e-12)
        assert label_to_depth(150, SPEC) == pytest.approx(80.0, rel=1e-12)

    def test_midpoint(self):
        assert label_to_depth(75, SPEC) == pytest.approx(4.47214, abs=1e-5)

    def test_out_of_range_rejected(self):
        with pytest.raises(ValueError):
            label_to_depth(-1, SPEC)
        with pytest.raises(ValueError):
            label_to_depth(151, SPEC)


class TestSoftWeightedDepth:
    def test_one_hot_recovers_bin_center(self):
        assert soft_weighted_depth(one_hot(75), SPEC) == pytest.approx(4.47214, abs=1e-5)

    def test_uniform_gives_log_midpoint(self):
        p = np.full(151, 1.0 / 151)
        assert soft_weighted_depth(p, SPEC) == pytest.approx(4.47214, abs=1e-5)

    def test_symmetric_bimodal(self):
        p = np.zeros(151)
        p[0] = 0.5
        p[150] = 0.5
        assert soft_weighted_depth(p, SPEC) == pytest.approx(10 ** 0.650515, abs=1e-5)

    def test_unnormalized_rejected(self):
        p = np.full(151, 1.0 / 151)
        with pytest.raises(ValueError):
            soft_weighted_depth(p * 1.01, SPEC)
        p2 = one_hot(3)
        p2[5] = -0.1
        p2[3] = 1.1
        with pytest.raises(ValueError):
            soft_weighted_depth(p2, SPEC)


class TestHardMaxDepth:
    def test_one_hot(self):
        assert hard_max_depth(one_hot(75), SPEC) == pytest.approx(4.47214, abs=1e-5)

    def test_max_at_zero(self):
        p = np.full(151, 0.4 / 150)
        p[0] = 0.6
        assert hard_max_depth(p, SPEC) == pytest.approx(0.25, rel=1e-12)

    def test_tie_breaks_toward_smaller_label(self):
        p = np.full(151, 0.2 / 149)
        p[10] = 0.4
        p[20] = 0.4
        assert hard_max_depth(p, SPEC) == label_to_depth(10, SPEC)


class TestInvariants:
    def test_round_trip_all_labels(self):
        for l in range(151):
            assert depth_to_label(label_to_depth(l, SPEC), SPEC) == l

    def test_quantization_error_bound(self):
        rng = np.random.default_rng(0)
        d = rng.uniform(SPEC.alpha, SPEC.beta, size=100_000)
        labels = depth_to_label(d, SPEC)
        w = SPEC.bin_weights()
        err = np.abs(np.log10(d) - w[labels])
        assert err.max() <= SPEC.q / 2 + 1e-12

    @given(st.lists(st.floats(0.0, 1.0), min_size=151, max_size=151))
    @settings(max_examples=200, deadline=None)
    def test_sws_range(self, raw):
        total = sum(raw)
        if total <= 0:
            return
        p = np.array(raw) / total
        d = soft_weighted_depth(p, SPEC)
        assert SPEC.alpha <= d <= SPEC.beta

    @given(st.floats(0.01, 500.0), st.floats(0.01, 500.0))
    @settings(max_examples=300, deadline=None)
    def test_monotone(self, d1, d2):
        lo, hi = min(d1, d2), max(d1, d2)
        assert depth_to_label(lo, SPEC) <= depth_to_label(hi, SPEC)

    def test_one_hot_agreement_exact(self):
        for j in range(0, 151, 7):
            p = one_hot(j)
            assert soft_weighted_depth(p, SPEC) == hard_max_depth(p, SPEC)


class TestScoreVolume:
    def test_validate_and_decode(self):
        rng = np.random.default_rng(1)
        logits = rng.normal(size=(2, 151, 4, 5))
        probs = np.exp(logits)
        probs /= probs.sum(axis=1, keepdims=True)
        validate_score_volume(probs, SPEC)
        depth = decode_score_volume(probs, SPEC)
        assert depth.shape == (2, 4, 5)
        assert np.all(depth >= SPEC.alpha) and np.all(depth <= SPEC.beta)
        # matches per-pixel scalar decode
        at = soft_weighted_depth(probs[1, :, 2, 3], SPEC)
        assert depth[1, 2, 3] == pytest.approx(at, rel=1e-12)

    def test_bad_volume_rejected(self):
        probs = np.full((1, 151, 2, 2), 1.0 / 151)
        probs[0, 0, 0, 0] += 0.01
        with pytest.raises(ValueError):
            validate_score_volume(probs, SPEC)
