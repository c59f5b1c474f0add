from pathlib import Path
from xml.etree import ElementTree as ET

import numpy as np
import pytest

from compaug import serialize
from compaug.errors import BadBand, BadConfig, ForeignTransform
from compaug.explain import (
    ExplainConfig,
    band_sensitivity,
    channel_flips,
    coverage,
    explain,
    is_admissible,
    merge_segments,
    necessity_map,
    occlusion_probes,
    probe_starts,
    render_svg,
    sufficiency_starts,
    sufficient_segments,
    tiling_starts,
)
from compaug.types import Clip, Jitter, KeepOnly, SegmentOut, SensorOut

from helpers import constant_artifact, make_window, segment_oracle

GOLDEN = Path(__file__).parent / "golden"
SVG_NS = "{http://www.w3.org/2000/svg}"


def decisive_window(n_channels=3, length=100):
    """Positive on [40, 50), slightly less negative on [50, 60): the [40, 60) mean is barely positive."""
    x = np.zeros((n_channels, length))
    x[:, 40:50] = 1.0
    x[:, 50:60] = -0.9
    return make_window(x)


class TestProbeLayout:
    def test_tiling_covers(self):
        for offset in range(10):
            assert coverage(tiling_starts(100, 10, offset), 10, 100).min() >= 1

    def test_tiling_clamped(self):
        starts = tiling_starts(100, 10, 3)
        assert starts[0] == 0 and starts[-1] == 90

    @pytest.mark.parametrize("length,seg", [(100, 10), (128, 13), (37, 4), (10, 10)])
    def test_min_coverage(self, rng, length, seg):
        assert coverage(probe_starts(length, seg, 1, rng), seg, length).min() >= 5

    def test_reaches_requested_count(self, rng):
        assert len(probe_starts(100, 10, 200, rng)) >= 200

    def test_bad_length(self, rng):
        with pytest.raises(BadConfig):
            probe_starts(10, 11, 5, rng)

    def test_merge(self):
        assert merge_segments([(5, 9), (0, 3), (3, 4), (8, 12)]) == [(0, 4), (5, 12)]

    def test_sufficiency_starts(self):
        assert sufficiency_starts(100, 25) == list(range(0, 76, 5))
        assert sufficiency_starts(30, 8)[-1] == 22


class TestAdmissibility:
    def test_members_and_helpers(self):
        art = constant_artifact()
        assert all(is_admissible(art, s) for s in art.transform_set)
        assert is_admissible(art, KeepOnly(0.2, 0.25))
        assert is_admissible(art, Jitter(0.0, (0.0, 5.0)))

    def test_ranges(self):
        art = constant_artifact()
        assert is_admissible(art, SegmentOut([0, 1, 2], 0.3, 0.1))
        assert not is_admissible(art, SegmentOut([0, 1, 2], 0.3, 0.5))
        assert is_admissible(art, Clip(0.1, 0.2))
        assert not is_admissible(art, Clip(0.1, 0.6))
        assert not is_admissible(art, Jitter(2.0))
        assert is_admissible(art, SensorOut([1]))
        assert not is_admissible(art, SensorOut([0, 1, 2]))

    def test_untrained_kind(self):
        from compaug.transforms import TransformSetConfig

        art = constant_artifact(transforms=TransformSetConfig(kinds=("Clip",)))
        assert not is_admissible(art, SegmentOut([0], 0.1, 0.1))
        assert channel_flips(art, make_window(np.ones((3, 100)))) == ()

    def test_out_of_range_probe_rejected(self):
        with pytest.raises(ForeignTransform):
            necessity_map(constant_artifact(), make_window(np.ones((3, 100))), seg_ratio=0.5)

    def test_out_of_range_alpha_rejected(self):
        with pytest.raises(ForeignTransform):
            band_sensitivity(constant_artifact(), make_window(np.ones((3, 100))), alpha=1.0)


@pytest.fixture(scope="module")
def constant_explanation():
    w = make_window(np.random.default_rng(1).standard_normal((3, 100)))
    return explain(constant_artifact(), w, ExplainConfig(trials_per_band=5))


@pytest.fixture(scope="module")
def oracle():
    return segment_oracle()


@pytest.fixture(scope="module")
def oracle_explanation(oracle):
    return explain(oracle, decisive_window(), ExplainConfig(seed=3))


class TestConstantModel:
    @pytest.fixture
    def explanation(self, constant_explanation):
        return constant_explanation

    def test_necessity_zero(self, explanation):
        assert not explanation.necessity.any()

    def test_mask_all_true(self, explanation):
        assert explanation.non_essential_mask.all()

    def test_one_full_segment(self, explanation):
        assert explanation.sufficient_segments == ((0, 100),)

    def test_no_band_flips(self, explanation):
        assert all(r == 0.0 for _, _, r in explanation.band_sensitivity)

    def test_no_channel_flips(self, explanation):
        assert explanation.channel_flips == (False, False, False)


class TestOracleModel:
    @pytest.fixture
    def explanation(self, oracle_explanation):
        return oracle_explanation

    def test_baseline_is_class_one(self, explanation):
        assert explanation.predicted_class == 1

    def test_argmax_inside_decisive_segment(self, explanation):
        assert 40 <= int(np.argmax(explanation.necessity)) < 60

    def test_zero_outside_probe_reach(self, explanation):
        # a 10-step SegmentOut probe touching [40, 60) starts no earlier than 31
        assert not explanation.necessity[:31].any()
        assert not explanation.necessity[60:].any()

    def test_mask_outside_probe_closure(self, explanation):
        # the widest probe (20-step Clip) reaches [40, 60) from t >= 21
        assert explanation.non_essential_mask[:21].all()
        assert explanation.non_essential_mask[60:].all()
        assert not explanation.non_essential_mask[40:50].all()

    def test_mask_implies_zero_necessity(self, explanation):
        assert not explanation.necessity[explanation.non_essential_mask].any()

    def test_sufficient_segments_overlap_plant(self, explanation):
        assert explanation.sufficient_segments
        assert all(a < 60 and b > 40 for a, b in explanation.sufficient_segments)

    def test_whole_window_sufficient(self, oracle):
        assert sufficient_segments(oracle, decisive_window(), min_ratio=1.0) == [(0, 100)]

    def test_coverage_audit(self, oracle, rng):
        probes = occlusion_probes(oracle, decisive_window(), "SegmentOut", 0.1, 50, rng)
        assert probes.cover.sum(axis=0).min() >= 5

    def test_necessity_in_unit_interval(self, oracle, rng):
        nec = necessity_map(oracle, decisive_window(), rng=rng)
        assert nec.min() >= 0.0 and nec.max() <= 1.0

    def test_deterministic(self, oracle):
        a = explain(oracle, decisive_window(), ExplainConfig(seed=8))
        b = explain(oracle, decisive_window(), ExplainConfig(seed=8))
        assert a == b


class TestBands:
    def test_alpha_zero(self, artifact, small_corpus):
        rates = band_sensitivity(artifact, small_corpus.window(0), alpha=0.0)
        assert all(r == 0.0 for _, _, r in rates)

    def test_bad_bands(self, artifact, small_corpus):
        with pytest.raises(BadBand):
            band_sensitivity(artifact, small_corpus.window(0), bands=[(5.0, 2.0)])
        with pytest.raises(BadBand):
            band_sensitivity(artifact, small_corpus.window(0), bands=[(0.0, 30.0)])

    def test_rates_bounded(self, artifact, small_corpus, rng):
        rates = band_sensitivity(artifact, small_corpus.window(1), trials_per_band=7, rng=rng)
        assert len(rates) == 8
        assert all(0.0 <= r <= 1.0 for _, _, r in rates)


class TestTrainedModel:
    def test_invariants_on_random_inputs(self, artifact):
        rng = np.random.default_rng(5)
        for i in range(3):
            w = make_window(rng.standard_normal((3, 100)) * 2)
            e = explain(artifact, w, ExplainConfig(seed=i, trials_per_band=4))
            assert not e.necessity[e.non_essential_mask].any()
            assert 0.0 <= e.necessity.min() and e.necessity.max() <= 1.0

    def test_round_trip(self, artifact, small_corpus):
        e = explain(artifact, small_corpus.window(2), ExplainConfig(trials_per_band=4))
        assert serialize.loads(serialize.dumps(e)) == e


class TestSvg:
    def _parse(self, text):
        return ET.fromstring(text.encode())

    def test_parses(self):
        e = explain(segment_oracle(), decisive_window(), ExplainConfig(seed=3))
        root = self._parse(render_svg(e, decisive_window()))
        assert root.tag == SVG_NS + "svg"

    def test_no_red_rects_without_segments(self):
        w = make_window(np.random.default_rng(1).standard_normal((3, 100)))
        e = explain(constant_artifact(), w, ExplainConfig(trials_per_band=2))
        e = type(e)(e.necessity, e.non_essential_mask, [], e.band_sensitivity, e.predicted_class,
                    e.n_variants_used, e.channel_flips)
        root = self._parse(render_svg(e, w))
        assert not [r for r in root.iter(SVG_NS + "rect") if r.get("class") == "sufficient"]

    def test_red_rects_with_segments(self):
        e = explain(segment_oracle(), decisive_window(), ExplainConfig(seed=3))
        root = self._parse(render_svg(e, decisive_window()))
        assert [r for r in root.iter(SVG_NS + "rect") if r.get("class") == "sufficient"]

    def test_golden(self):
        e = explain(segment_oracle(), decisive_window(), ExplainConfig(seed=3))
        assert render_svg(e, decisive_window()) == (GOLDEN / "oracle_explanation.svg").read_text()
        assert serialize.dumps(e) == (GOLDEN / "oracle_explanation.json").read_text()
