import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from compaug.errors import BadBand, BadChannel, BadConfig, BadRange, NegativeAlpha
from compaug.transforms import (
    TransformSetConfig,
    apply,
    apply_array,
    clip,
    clip_array,
    default_bands,
    generate_transform_set,
    jitter,
    jitter_noise,
    keep_only,
    round_half_up,
    segment_bounds,
    segment_out,
    sensor_out,
)
from compaug.types import Clip, Jitter, KeepOnly, SegmentOut, SensorOut

from helpers import make_window

fractions = st.floats(0.0, 0.999)


def ramp(n_channels=3, length=50, slope=0.5):
    t = np.arange(length, dtype=np.float64)
    return np.stack([slope * (c + 1) * t + c for c in range(n_channels)])


class TestRounding:
    def test_half_goes_up(self):
        assert [round_half_up(v) for v in (0.5, 1.5, 2.5, 2.4999)] == [1, 2, 3, 2]

    def test_bounds_trim_at_end(self):
        assert segment_bounds(0.95, 0.1, 100) == (95, 5)

    def test_default_bands_partition_nyquist(self):
        bands = default_bands(50.0, 8)
        assert bands[0][0] == 0.0 and bands[-1][1] == 25.0
        assert all(a[1] == b[0] for a, b in zip(bands, bands[1:]))


class TestJitter:
    def test_zero_alpha_identity(self, rng):
        w = make_window(rng.standard_normal((3, 40)))
        assert jitter(w, 0.0, np.ones(3), rng) == w

    def test_zero_sigma_identity(self, rng):
        w = make_window(rng.standard_normal((3, 40)))
        assert jitter(w, 0.5, np.zeros(3), rng) == w

    def test_variance_monte_carlo(self):
        # 10^6 draws, alpha 0.1, sigma2 4 -> variance 0.4 within 1%
        noise = jitter_noise((1, 1000, 1, 1000), 0.1, np.array([4.0]), np.random.default_rng(7))
        assert abs(noise.var() - 0.4) < 0.004
        stderr = np.sqrt(0.4 / noise.size)
        assert abs(noise.mean()) < 3 * stderr

    def test_band_limited_power(self, rng):
        w = make_window(np.zeros((2, 200)), fs=50)
        out = jitter(w, 0.3, np.array([1.0, 2.0]), rng, band=(5.0, 10.0))
        spec = np.abs(np.fft.rfft(out.values, axis=-1)) ** 2
        freqs = np.fft.rfftfreq(200, 1 / 50)
        outside = (freqs < 5.0) | (freqs > 10.0)
        assert spec[:, outside].sum() < 0.01 * spec.sum()
        np.testing.assert_allclose(np.mean(out.values**2, axis=-1), [0.3, 0.6])

    def test_band_above_nyquist(self, rng):
        with pytest.raises(BadBand):
            jitter(make_window(np.zeros((1, 50)), fs=50), 0.1, [1.0], rng, band=(20.0, 30.0))

    def test_negative_alpha(self, rng):
        with pytest.raises(NegativeAlpha):
            jitter(make_window(np.zeros((1, 50))), -0.1, [1.0], rng)

    def test_needs_generator(self):
        with pytest.raises(BadConfig):
            apply(Jitter(0.1), make_window(np.zeros((1, 5))), sigma2=[1.0])


class TestClip:
    def test_worked_example(self):
        x = np.array([[0, 1, 2, 9, 9, 9, 6, 7, 8, 9]], dtype=float)
        out = clip_array(x, 2, 3)
        np.testing.assert_allclose(out[0, 2:5], [3.0, 5.0, 7.0])
        np.testing.assert_array_equal(out[0, :2], x[0, :2])
        np.testing.assert_array_equal(out[0, 5:], x[0, 5:])

    def test_fractional_entry_point(self):
        x = np.array([[0, 1, 2, 9, 9, 9, 6, 7, 8, 9]], dtype=float)
        np.testing.assert_allclose(clip(make_window(x), 0.2, 0.3).values[0, 2:5], [3.0, 5.0, 7.0])

    def test_zero_ratio_identity(self, rng):
        w = make_window(rng.standard_normal((2, 30)))
        assert clip(w, 0.4, 0.0) == w

    def test_fraction_sum_bound(self):
        with pytest.raises(BadRange):
            clip(make_window(np.zeros((1, 10))), 0.6, 0.5)

    def test_whole_window_becomes_zero(self):
        assert not clip(make_window(np.ones((2, 10))), 0.0, 1.0).values.any()

    def test_single_retained_sample_is_flat(self):
        x = np.arange(10, dtype=float)[None]
        np.testing.assert_array_equal(clip_array(x, 0, 9)[0], np.full(10, 9.0))

    @settings(max_examples=200, deadline=None)
    @given(start=fractions, ratio=st.floats(0.0, 1.0), slope=st.floats(-5, 5), length=st.integers(10, 200))
    def test_exact_on_ramps(self, start, ratio, slope, length):
        s, n = segment_bounds(start, ratio, length)
        if length - n < 2:
            return  # fewer than two samples left: no line to fit
        x = ramp(2, length, slope)
        np.testing.assert_allclose(clip_array(x, s, n), x, atol=1e-9 * (1 + abs(slope) * length))


class TestMasking:
    def test_segment_out_worked_example(self):
        x = np.arange(1, 9, dtype=float).reshape(2, 4)
        out = segment_out(make_window(x), [1], 0.25, 0.5).values
        expected = x.copy()
        expected[1, 1:3] = 0.0
        np.testing.assert_array_equal(out, expected)
        assert np.count_nonzero(out == x) == 6

    def test_segment_out_full_mask(self, rng):
        assert not segment_out(make_window(rng.standard_normal((3, 20))), [0, 1, 2], 0.0, 1.0).values.any()

    def test_sensor_out_single_channel(self, rng):
        x = rng.standard_normal((3, 20))
        out = sensor_out(make_window(x), [0]).values
        assert not out[0].any()
        np.testing.assert_array_equal(out[1:], x[1:])

    def test_sensor_out_empty(self):
        with pytest.raises(BadChannel):
            sensor_out(make_window(np.zeros((3, 5))), [])

    def test_keep_only_worked_example(self):
        x = np.arange(1, 11, dtype=float)[None]
        out = keep_only(make_window(x), 0.4, 0.3).values[0]
        assert np.flatnonzero(out).tolist() == [4, 5, 6]
        np.testing.assert_array_equal(out[4:7], x[0, 4:7])

    def test_keep_only_full_is_identity(self, rng):
        w = make_window(rng.standard_normal((2, 17)))
        assert keep_only(w, 0.0, 1.0) == w

    @settings(max_examples=100, deadline=None)
    @given(start=fractions, ratio=st.floats(0.01, 1.0))
    def test_keep_and_complement_compose_to_zero(self, start, ratio):
        x = np.random.default_rng(0).standard_normal((2, 40))
        s, n = segment_bounds(start, ratio, 40)
        kept = keep_only(make_window(x), start, ratio) if start + ratio <= 1 else None
        if kept is None:
            return
        out = kept.values.copy()
        out[:, s : s + n] = 0.0
        assert not out.any()

    @settings(max_examples=100, deadline=None)
    @given(start=fractions, ratio=st.floats(0.0, 1.0), channels=st.sets(st.integers(0, 3), min_size=1))
    def test_locality(self, start, ratio, channels):
        if start + ratio > 1.0:
            return
        x = np.random.default_rng(1).standard_normal((4, 30))
        s, n = segment_bounds(start, ratio, 30)
        mask = np.zeros_like(x, dtype=bool)
        mask[sorted(channels), s : s + n] = True
        out = segment_out(make_window(x), channels, start, ratio).values
        np.testing.assert_array_equal(out[~mask], x[~mask])
        assert not out[mask].any()


class TestApply:
    SPECS = [Jitter(0.1), Jitter(0.2, (2.0, 8.0)), Clip(0.3, 0.2), SegmentOut([0, 2], 0.5, 0.1),
             SensorOut([1]), KeepOnly(0.1, 0.5)]

    @pytest.mark.parametrize("spec", SPECS, ids=lambda s: type(s).__name__)
    def test_shape_and_determinism(self, spec):
        x = np.random.default_rng(3).standard_normal((3, 64))
        a = apply(spec, make_window(x), np.ones(3), np.random.default_rng(9))
        b = apply(spec, make_window(x), np.ones(3), np.random.default_rng(9))
        assert a.values.shape == (3, 64)
        assert a.values.tobytes() == b.values.tobytes()

    @pytest.mark.parametrize("spec", SPECS, ids=lambda s: type(s).__name__)
    def test_batch_matches_single(self, spec):
        if isinstance(spec, Jitter):
            return  # noise differs by draw order
        x = np.random.default_rng(3).standard_normal((5, 3, 64))
        batch = apply_array(spec, x)
        for i in range(5):
            np.testing.assert_array_equal(batch[i], apply_array(spec, x[i]))


class TestTransformSet:
    def test_empty(self, rng):
        assert generate_transform_set(TransformSetConfig(), 0, rng, 3, 50.0) == []

    def test_deterministic(self):
        a = generate_transform_set(TransformSetConfig(), 50, np.random.default_rng(5), 3, 50.0)
        b = generate_transform_set(TransformSetConfig(), 50, np.random.default_rng(5), 3, 50.0)
        assert a == b

    def test_default_set_within_ranges(self, rng):
        cfg = TransformSetConfig()
        specs = generate_transform_set(cfg, 50, rng, 3, 50.0)
        assert len(specs) == 50
        for spec in specs:
            spec.check(3, 50.0)
            if isinstance(spec, Jitter):
                assert cfg.alpha[0] <= spec.alpha <= cfg.alpha[1]
            elif isinstance(spec, Clip):
                assert cfg.clip_ratio[0] <= spec.ratio <= cfg.clip_ratio[1]
                assert spec.start_frac + spec.ratio <= 1.0
            elif isinstance(spec, SegmentOut):
                assert cfg.segment_ratio[0] <= spec.ratio <= cfg.segment_ratio[1]
                assert spec.channels == (0, 1, 2)
            else:
                assert isinstance(spec, SensorOut)

    def test_kinds_roughly_uniform(self):
        specs = generate_transform_set(TransformSetConfig(), 4000, np.random.default_rng(0), 3, 50.0)
        counts = {}
        for s in specs:
            counts[type(s).__name__] = counts.get(type(s).__name__, 0) + 1
        assert set(counts) == {"Jitter", "Clip", "SegmentOut", "SensorOut"}
        assert all(abs(c - 1000) < 120 for c in counts.values())

    def test_restricted_kinds(self, rng):
        specs = generate_transform_set(TransformSetConfig(kinds=("Clip",)), 10, rng, 3, 50.0)
        assert all(isinstance(s, Clip) for s in specs)

    @pytest.mark.parametrize("kw", [dict(kinds=()), dict(kinds=("KeepOnly",)), dict(alpha=(0.2, 0.1)),
                                    dict(clip_ratio=(0.1, 1.5)), dict(band_prob=2.0), dict(n_bands=0)])
    def test_bad_config(self, kw):
        with pytest.raises(BadConfig):
            TransformSetConfig(**kw)

    def test_negative_count(self, rng):
        with pytest.raises(BadConfig):
            generate_transform_set(TransformSetConfig(), -1, rng, 3, 50.0)
