"""Corner-distance encoding, squared-sigmoid decoding, and their inverses."""

import numpy as np
import pytest

from detbox import (
    BoundingBox,
    CodecError,
    RawPrediction,
    RegressionTarget,
    ScaleConfig,
    center_cell,
    decode,
    encode,
    encode_logit,
    representable_range,
)
from detbox.codec import decode_distances, decode_jacobian, encode_logit_array

from conftest import random_box


class TestScaleConfig:
    def test_defaults(self, scale):
        assert scale.strides == (8, 16, 32)
        assert scale.gains == (2.0, 4.0, 16.0)
        assert scale.grid_size(0) == (80, 80)
        assert scale.grid_size(2) == (20, 20)

    def test_rejects_bad_strides(self):
        with pytest.raises(CodecError):
            ScaleConfig(strides=(8, 8, 32))
        with pytest.raises(CodecError):
            ScaleConfig(strides=(8, 16, 48), image_w=640, image_h=640)  # 48 ∤ 640

    def test_rejects_bad_gains(self):
        with pytest.raises(CodecError):
            ScaleConfig(gains=(2.0, 4.0))
        with pytest.raises(CodecError):
            ScaleConfig(gains=(2.0, 0.0, 16.0))


class TestEncode:
    def test_worked_example(self, scale):
        t = encode(BoundingBox(100, 60, 40, 20), (12, 7), scale, 0)
        assert (t.l, t.t, t.r, t.b) == (3.0, 1.75, 3.0, 1.75)

    def test_one_cell_symmetric_box(self, scale):
        # box centered on a cell center, exactly one cell wide
        s = scale.strides[1]
        box = BoundingBox(s * 3.5, s * 3.5, s, s)
        t = encode(box, (3, 3), scale, 1)
        assert (t.l, t.t, t.r, t.b) == (1.0, 1.0, 1.0, 1.0)

    def test_sub_cell_box_stays_positive(self, scale):
        # object far smaller than the cell still gets four positive distances
        t = encode(BoundingBox(12, 12, 4, 4), (0, 0), scale, 2)
        assert (t.l, t.t, t.r, t.b) == (0.6875, 0.6875, 0.4375, 0.4375)

    def test_far_cell_rejected(self, scale):
        with pytest.raises(CodecError):
            encode(BoundingBox(12, 12, 4, 4), (5, 0), scale, 2)
        # the unchecked path still evaluates the formula
        t = encode(BoundingBox(12, 12, 4, 4), (5, 0), scale, 2, require_positive=False)
        assert t.r < 0

    def test_sum_identities_any_cell(self, scale, rng):
        # l + r and t + b depend only on the box size, not the cell
        for _ in range(300):
            box = random_box(rng)
            for i, s in enumerate(scale.strides):
                ax, ay = center_cell(box.cx, box.cy, s)
                ax += int(rng.integers(-2, 3))
                ay += int(rng.integers(-2, 3))
                t = encode(box, (ax, ay), scale, i, require_positive=False)
                assert abs((t.l + t.r) - (box.w / s + 1)) < 1e-9
                assert abs((t.t + t.b) - (box.h / s + 1)) < 1e-9

    def test_center_cell_positivity(self, scale, rng):
        for _ in range(300):
            box = random_box(rng)
            for i, s in enumerate(scale.strides):
                t = encode(box, center_cell(box.cx, box.cy, s), scale, i)
                assert min(t.l, t.t, t.r, t.b) > 0


class TestDecode:
    def test_zero_logits(self, scale):
        t = decode(RawPrediction(0, 0, 0, 0, 0), scale)
        assert (t.l, t.t, t.r, t.b) == (2.0, 2.0, 2.0, 2.0)

    def test_saturation_bounds(self, scale):
        for i, g in enumerate(scale.gains):
            lo = decode(RawPrediction(-30, -30, -30, -30, i), scale)
            hi = decode(RawPrediction(30, 30, 30, 30, i), scale)
            assert 0 < lo.l < 1e-10
            assert 4 * g - 1e-8 < hi.l < 4 * g

    def test_strictly_monotone(self):
        p = np.linspace(-30, 30, 2001)
        d = decode_distances(p, 2.0)
        assert np.all(np.diff(d) > 0)

    def test_derivative_matches_finite_differences(self):
        # atol covers the differencing noise floor (~1e-16 * gain / h) that
        # dominates deep in the saturated tails
        p = np.linspace(-10, 10, 501)
        h = 1e-6
        fd = (decode_distances(p + h, 4.0) - decode_distances(p - h, 4.0)) / (2 * h)
        analytic = decode_jacobian(p, 4.0)
        np.testing.assert_allclose(analytic, fd, rtol=1e-6, atol=1e-8)


class TestEncodeLogit:
    def test_inverse_of_zero_case(self, scale):
        raw = encode_logit(RegressionTarget(2, 2, 2, 2, 0), scale)
        assert raw.as_array() == pytest.approx([0, 0, 0, 0], abs=1e-12)

    def test_boundary_rejected_with_component_name(self, scale):
        with pytest.raises(CodecError, match="r=8"):
            encode_logit(RegressionTarget(2, 2, 8.0, 2, 0), scale)
        with pytest.raises(CodecError, match="t="):
            encode_logit(RegressionTarget(2, 0.0, 2, 2, 0), scale)

    def test_round_trip(self, scale, rng):
        for i, g in enumerate(scale.gains):
            d = rng.uniform(1e-6, 4 * g - 1e-6, size=(1000, 4))
            p = encode_logit_array(d, g)
            back = decode_distances(p, g)
            np.testing.assert_allclose(back, d, rtol=0, atol=1e-9)

    def test_round_trip_scalar_types(self, scale, rng):
        for _ in range(50):
            i = int(rng.integers(3))
            g = scale.gains[i]
            t = RegressionTarget(*rng.uniform(0.01, 4 * g - 0.01, size=4), i)
            back = decode(encode_logit(t, scale), scale)
            np.testing.assert_allclose(back.as_array(), t.as_array(), atol=1e-9)


def test_representable_range(scale):
    assert representable_range(scale, 0) == (0.0, 64.0)
    assert representable_range(scale, 2) == (0.0, 2048.0)
