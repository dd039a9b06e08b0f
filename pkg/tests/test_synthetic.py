import json

import numpy as np
import pytest

from rotorbatt.errors import InputError
from rotorbatt.profiles import moving_average, parse_log, segment
from rotorbatt.synthetic import (DEFAULT_BANDS, DEFAULT_PLAN,
                                 synthetic_flight_log, write_flight_log)


class TestGenerator:
    def test_deterministic_by_seed(self):
        p1, l1 = synthetic_flight_log(seed=3)
        p2, l2 = synthetic_flight_log(seed=3)
        np.testing.assert_array_equal(p1.samples, p2.samples)
        assert l1 == l2
        p3, _ = synthetic_flight_log(seed=4)
        assert not np.array_equal(p1.samples, p3.samples)

    def test_labels_tile_the_plan(self):
        profile, labels = synthetic_flight_log(seed=0)
        assert labels[0].start == 0
        assert labels[-1].end == len(profile)
        for a, b in zip(labels, labels[1:]):
            assert a.end == b.start
        assert [s.tag for s in labels] == [tag for tag, _ in DEFAULT_PLAN]

    def test_phase_means_sit_inside_their_bands(self):
        profile, labels = synthetic_flight_log(seed=0)
        smooth = moving_average(profile, 10)
        for seg in labels:
            lo, hi = DEFAULT_BANDS[seg.tag]
            mean = float(profile.samples[seg.start:seg.end].mean())
            if seg.tag == "vertical":
                # burst phase: windows vary widely but stay in band
                win = smooth.samples[seg.start + 20:seg.end]
                assert np.all(win > lo)
                assert np.all(win < hi)
            else:
                assert lo < mean < hi

    def test_vertical_has_high_peaks_hover_low_ripple(self):
        profile, labels = synthetic_flight_log(seed=0)
        by_tag = {}
        for seg in labels:
            by_tag.setdefault(seg.tag, []).append(
                profile.samples[seg.start:seg.end])
        vertical = np.concatenate(by_tag["vertical"])
        hover = np.concatenate(by_tag["hover"])
        assert vertical.max() > 30.0
        assert hover.std() < 0.5
        assert hover.mean() == pytest.approx(16.0, abs=0.3)

    def test_threshold_segmentation_recovers_the_plan(self):
        profile, labels = synthetic_flight_log(seed=0)
        smooth = moving_average(profile, 10)
        segs = segment(smooth, bands=DEFAULT_BANDS, min_duration_s=8.0)
        # every true phase is covered by a detected run of the same tag
        def overlap(a, b):
            return min(a.end, b.end) - max(a.start, b.start)

        for true in labels:
            best = max((s for s in segs if s.tag == true.tag),
                       key=lambda s: overlap(s, true), default=None)
            assert best is not None, f"{true.tag} not detected"
            assert overlap(best, true) > 0.6 * true.length()

    def test_custom_plan(self):
        profile, labels = synthetic_flight_log(
            seed=1, rate=5.0, plan=(("hover", 10.0),))
        assert len(profile) == 50
        assert profile.sample_rate == 5.0
        assert len(labels) == 1

    def test_rejects_empty_or_unknown_plan(self):
        with pytest.raises(InputError):
            synthetic_flight_log(plan=())
        with pytest.raises(InputError):
            synthetic_flight_log(plan=(("barrel_roll", 5.0),))


class TestWriteFlightLog:
    def test_roundtrip_through_parse_log(self, tmp_path):
        profile, labels = synthetic_flight_log(seed=0, plan=(("hover", 20.0),))
        f = tmp_path / "flight.csv"
        write_flight_log(f, profile, labels)
        back = parse_log(f)
        np.testing.assert_allclose(back.samples, profile.samples, atol=1e-10)
        assert back.sample_rate == pytest.approx(profile.sample_rate)
        sidecar = json.loads((tmp_path / "flight.labels.json").read_text())
        assert sidecar == [{"start_s": 0.0, "end_s": 20.0, "tag": "hover"}]

    def test_labels_optional(self, tmp_path):
        profile, _ = synthetic_flight_log(seed=0, plan=(("hover", 5.0),))
        f = tmp_path / "flight.csv"
        write_flight_log(f, profile)
        assert not (tmp_path / "flight.labels.json").exists()
