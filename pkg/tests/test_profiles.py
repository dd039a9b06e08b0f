import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rotorbatt.errors import InputError, ParseError
from rotorbatt.profiles import (CurrentProfile, MovingAverageFilter,
                                PeriodicReconstructor, SegmentLabel,
                                ThresholdSegmenter, constant_current,
                                load_profile, moving_average, parse_log,
                                periodic_reconstruct, profile_stats,
                                save_profile, segment)


def make_profile(samples, rate=10.0, **kw):
    return CurrentProfile(samples=np.asarray(samples, float),
                          sample_rate=rate, **kw)


# ----------------------------------------------------------------------
# CurrentProfile / SegmentLabel basics
class TestCurrentProfile:
    def test_duration_and_times(self):
        p = make_profile([1.0, 2.0, 3.0, 4.0], rate=2.0)
        assert p.duration == 2.0
        np.testing.assert_allclose(p.times, [0.0, 0.5, 1.0, 1.5])

    def test_rejects_empty_and_nonfinite(self):
        with pytest.raises(InputError):
            make_profile([])
        with pytest.raises(InputError):
            make_profile([1.0, np.nan])

    def test_rejects_out_of_sensor_range(self):
        with pytest.raises(InputError, match="sensor range"):
            make_profile([150.0])

    def test_rejects_unknown_label(self):
        with pytest.raises(InputError, match="unknown motion label"):
            make_profile([1.0], label="banking")

    def test_replace_does_not_mutate(self):
        p = make_profile([1.0, 2.0])
        q = p.replace(label="hover")
        q.samples[0] = 99.0
        assert p.samples[0] == 1.0
        assert p.label is None


class TestSegmentLabel:
    def test_half_open_length(self):
        s = SegmentLabel(2, 5, "hover")
        assert s.length() == 3

    @pytest.mark.parametrize("start,end", [(-1, 3), (3, 3), (5, 2)])
    def test_rejects_bad_ranges(self, start, end):
        with pytest.raises(InputError):
            SegmentLabel(start, end, "hover")

    def test_rejects_unknown_tag(self):
        with pytest.raises(InputError):
            SegmentLabel(0, 1, "loiter")


# ----------------------------------------------------------------------
# moving_average
class TestMovingAverage:
    def test_worked_example_window_2(self):
        # partial prefix: first output is the bare first sample
        p = make_profile([1.0, 2.0, 3.0, 4.0])
        out = moving_average(p, 2)
        np.testing.assert_allclose(out.samples, [1.0, 1.5, 2.5, 3.5])

    def test_window_1_is_identity(self):
        p = make_profile([3.0, -1.0, 2.0])
        np.testing.assert_array_equal(moving_average(p, 1).samples, p.samples)

    def test_window_equal_length(self):
        p = make_profile([2.0, 4.0, 6.0])
        out = moving_average(p, 3)
        np.testing.assert_allclose(out.samples, [2.0, 3.0, 4.0])

    def test_window_longer_than_profile_rejected(self):
        with pytest.raises(InputError, match="exceeds"):
            moving_average(make_profile([1.0, 2.0]), 3)

    def test_preserves_length_rate_and_metadata(self):
        p = make_profile(np.arange(50.0), rate=5.0, label="hover")
        out = moving_average(p, 7)
        assert len(out) == 50
        assert out.sample_rate == 5.0
        assert out.label == "hover"

    @given(st.lists(st.floats(-99, 99), min_size=1, max_size=80),
           st.integers(1, 80))
    @settings(max_examples=200, deadline=None)
    def test_matches_bruteforce(self, values, window):
        if window > len(values):
            window = len(values)
        p = make_profile(values)
        out = moving_average(p, window).samples
        for k in range(len(values)):
            lo = max(0, k - window + 1)
            ref = float(np.mean(values[lo:k + 1]))
            assert out[k] == pytest.approx(ref, abs=1e-12)


# ----------------------------------------------------------------------
# profile_stats
class TestProfileStats:
    def test_constant_current_hour(self):
        p = constant_current(16.0, 3600.0, rate=1.0)
        s = profile_stats(p, v_pack_nominal=14.8)
        assert s["mean_current"] == pytest.approx(16.0)
        assert s["charge_throughput"] == pytest.approx(16.0)
        assert s["energy_estimate"] == pytest.approx(236.8)
        assert s["ripple_std"] == pytest.approx(0.0)
        assert s["duration_s"] == pytest.approx(3600.0)

    @given(st.lists(st.floats(-50, 50), min_size=1, max_size=60),
           st.floats(1.0, 40.0))
    @settings(max_examples=200, deadline=None)
    def test_matches_bruteforce(self, values, v_nom):
        p = make_profile(values, rate=4.0)
        s = profile_stats(p, v_pack_nominal=v_nom)
        x = np.asarray(values)
        dt = 0.25
        assert s["mean_current"] == pytest.approx(x.mean(), abs=1e-12)
        assert s["rms_current"] == pytest.approx(
            np.sqrt((x ** 2).mean()), abs=1e-12)
        assert s["charge_throughput"] == pytest.approx(
            x.sum() * dt / 3600.0, abs=1e-12)
        assert s["energy_estimate"] == pytest.approx(
            x.sum() * dt / 3600.0 * v_nom, abs=1e-9)
        assert s["peak"] == pytest.approx(np.max(np.abs(x)), abs=1e-12)


# ----------------------------------------------------------------------
# segmentation
BANDS = {"hover": (14.0, 16.5), "horizontal": (16.7, 18.3),
         "vertical": (18.6, 30.0)}


class TestThresholdSegmentation:
    def test_two_level_profile(self):
        rate = 10.0
        x = np.concatenate([np.full(200, 15.5), np.full(200, 17.5)])
        segs = segment(make_profile(x, rate=rate), bands=BANDS)
        tags = [s.tag for s in segs]
        assert tags == ["hover", "horizontal"]
        # boundaries land within one voting window of the true switch
        assert abs(segs[0].end - 200) <= 20
        assert segs[0].start == 0
        assert segs[-1].end == 400

    def test_short_blips_are_dropped(self):
        rate = 10.0
        x = np.full(400, 15.5)
        x[200:215] = 25.0  # 1.5 s blip, below the 5 s minimum
        segs = segment(make_profile(x, rate=rate), bands=BANDS)
        assert all(s.tag == "hover" for s in segs)

    def test_unclassifiable_current_leaves_gap(self):
        rate = 10.0
        x = np.concatenate([np.full(150, 15.0), np.full(150, 16.6),
                            np.full(150, 15.0)])  # 16.6 A is between bands
        segs = segment(make_profile(x, rate=rate), bands=BANDS)
        assert [s.tag for s in segs] == ["hover", "hover"]
        assert segs[0].end <= 160 and segs[1].start >= 140

    def test_std_band_discriminates_ripple(self):
        bands = {"hover": {"mean": [14.0, 18.0], "std": [0.0, 0.5]},
                 "vertical": {"mean": [19.0, 30.0]}}
        rng = np.random.default_rng(0)
        x = 16.0 + 0.1 * rng.standard_normal(300)
        segs = segment(make_profile(x, rate=10.0), bands=bands)
        assert [s.tag for s in segs] == ["hover"]
        x_noisy = 16.0 + 3.0 * rng.standard_normal(300)
        x_noisy = np.clip(x_noisy, 10.0, 22.0)
        segs = segment(make_profile(x_noisy, rate=10.0), bands=bands)
        assert all(s.tag != "hover" for s in segs)

    def test_overlapping_bands_rejected(self):
        with pytest.raises(InputError, match="overlap"):
            segment(make_profile(np.full(100, 15.0)),
                    bands={"hover": (14.0, 17.0), "horizontal": (16.0, 18.0)})

    def test_empty_bands_rejected(self):
        with pytest.raises(InputError):
            segment(make_profile(np.full(100, 15.0)), bands={})

    @given(st.lists(st.sampled_from([15.0, 17.5, 20.0, 33.0]),
                    min_size=2, max_size=8),
           st.integers(60, 140))
    @settings(max_examples=60, deadline=None)
    def test_output_invariants_fuzzed(self, levels, run_len):
        # piecewise-constant profile from random band levels
        x = np.concatenate([np.full(run_len, lv) for lv in levels])
        segs = segment(make_profile(x, rate=10.0), bands=BANDS)
        n = len(x)
        for s in segs:
            assert 0 <= s.start < s.end <= n
        for a, b in zip(segs, segs[1:]):
            assert a.end <= b.start  # sorted and disjoint


class TestLabelFileSegmentation:
    def test_roundtrip(self, tmp_path):
        p = make_profile(np.zeros(100), rate=10.0)
        labels = [{"start_s": 0.0, "end_s": 4.0, "tag": "hover"},
                  {"start_s": 4.0, "end_s": 10.0, "tag": "vertical"}]
        f = tmp_path / "labels.json"
        f.write_text(json.dumps(labels))
        segs = segment(p, mode="label_file", label_file=f)
        assert [(s.start, s.end, s.tag) for s in segs] == \
            [(0, 40, "hover"), (40, 100, "vertical")]

    def test_overlap_rejected(self):
        p = make_profile(np.zeros(100), rate=10.0)
        labels = [{"start_s": 0.0, "end_s": 5.0, "tag": "hover"},
                  {"start_s": 4.0, "end_s": 8.0, "tag": "vertical"}]
        with pytest.raises(InputError, match="overlap"):
            segment(p, mode="label_file", label_file=labels)

    def test_out_of_range_rejected(self):
        p = make_profile(np.zeros(100), rate=10.0)
        labels = [{"start_s": 0.0, "end_s": 20.0, "tag": "hover"}]
        with pytest.raises(InputError, match="exceeds"):
            segment(p, mode="label_file", label_file=labels)

    @given(st.lists(st.tuples(st.floats(0.0, 8.0), st.floats(0.2, 3.0),
                              st.sampled_from(["hover", "vertical",
                                               "horizontal", "other"])),
                    min_size=1, max_size=6))
    @settings(max_examples=100, deadline=None)
    def test_fuzzed_intervals(self, raw):
        # build non-overlapping intervals by stacking random gaps/widths
        p = make_profile(np.zeros(2000), rate=10.0)
        labels, cursor = [], 0.0
        for gap, width, tag in raw:
            start = cursor + gap
            end = start + width
            cursor = end
            labels.append({"start_s": start, "end_s": end, "tag": tag})
        if cursor > 200.0:
            return
        segs = segment(p, mode="label_file", label_file=labels)
        assert len(segs) == len(labels)
        for a, b in zip(segs, segs[1:]):
            assert a.start <= b.start
            assert a.end <= b.start
        for s in segs:
            assert 0 <= s.start < s.end <= 2000


# ----------------------------------------------------------------------
# periodic reconstruction
class TestPeriodicReconstruct:
    def test_repeat_is_exact_tiling(self):
        p = make_profile([1.0, 2.0, 3.0, 4.0, 5.0, 6.0], rate=2.0)
        seg = SegmentLabel(1, 4, "hover")
        out = periodic_reconstruct(p, seg, target_duration=6.0)
        piece = p.samples[1:4]
        assert len(out) >= 12
        np.testing.assert_array_equal(out.samples[:len(piece) * 4],
                                      np.tile(piece, 4))
        assert out.label == "hover"
        assert out.sample_rate == 2.0

    def test_target_shorter_than_segment_rejected(self):
        p = make_profile(np.arange(100.0), rate=10.0)
        with pytest.raises(InputError, match="shorter"):
            periodic_reconstruct(p, SegmentLabel(0, 80, "hover"), 2.0)

    def test_crossfade_blends_seam(self):
        p = make_profile(np.linspace(10.0, 20.0, 40), rate=10.0)
        seg = SegmentLabel(0, 40, "hover")
        out = periodic_reconstruct(p, seg, 10.0, stitch="crossfade",
                                   crossfade=5)
        # blended seam stays inside the segment's value range
        assert out.samples.min() >= 10.0 - 1e-9
        assert out.samples.max() <= 20.0 + 1e-9
        # crossfade smooths the wrap discontinuity of plain tiling
        tiled = periodic_reconstruct(p, seg, 10.0, stitch="repeat")
        jump_tiled = np.max(np.abs(np.diff(tiled.samples)))
        jump_faded = np.max(np.abs(np.diff(out.samples)))
        assert jump_faded < jump_tiled

    def test_unknown_stitch_rejected(self):
        p = make_profile(np.arange(20.0), rate=10.0)
        with pytest.raises(InputError, match="stitch"):
            periodic_reconstruct(p, SegmentLabel(0, 10, "cc"), 4.0,
                                 stitch="wrap")

    @given(st.integers(2, 40), st.integers(1, 6), st.floats(0.5, 30.0))
    @settings(max_examples=150, deadline=None)
    def test_repeat_matches_tile_slice(self, seg_len, start, factor):
        rng = np.random.default_rng(seg_len * 101 + start)
        n = start + seg_len + 5
        p = make_profile(rng.uniform(-10, 10, n), rate=10.0)
        seg = SegmentLabel(start, start + seg_len, "other")
        duration = max(seg_len / 10.0, factor * seg_len / 10.0)
        out = periodic_reconstruct(p, seg, duration)
        piece = p.samples[start:start + seg_len]
        ref = np.tile(piece, int(np.ceil(len(out) / seg_len)))[:len(out)]
        np.testing.assert_allclose(out.samples, ref, atol=1e-12)
        assert out.duration >= duration - 1e-9


# ----------------------------------------------------------------------
# file IO
class TestLogIO:
    def test_parse_roundtrip(self, tmp_path):
        f = tmp_path / "log.csv"
        rows = ["t_s,i_a"] + [f"{k * 0.1},{15.0 + k}" for k in range(20)]
        f.write_text("\n".join(rows) + "\n")
        p = parse_log(f)
        assert p.sample_rate == pytest.approx(10.0)
        np.testing.assert_allclose(p.samples, 15.0 + np.arange(20))

    def test_parse_rejects_bad_header(self, tmp_path):
        f = tmp_path / "log.csv"
        f.write_text("time,current\n0,1\n1,2\n")
        with pytest.raises(ParseError, match="header"):
            parse_log(f)

    def test_parse_rejects_duplicate_timestamp(self, tmp_path):
        f = tmp_path / "log.csv"
        f.write_text("t_s,i_a\n0.0,1.0\n0.1,2.0\n0.1,3.0\n")
        with pytest.raises(ParseError, match="duplicated"):
            parse_log(f)

    def test_parse_rejects_heavy_jitter(self, tmp_path):
        f = tmp_path / "log.csv"
        f.write_text("t_s,i_a\n0.0,1\n0.1,1\n0.25,1\n0.3,1\n")
        with pytest.raises(ParseError, match="jitter"):
            parse_log(f)

    def test_parse_interpolates_mild_jitter(self, tmp_path):
        rng = np.random.default_rng(3)
        t = np.arange(50) * 0.1 + rng.uniform(-0.004, 0.004, 50)
        t[0] = 0.0
        f = tmp_path / "log.csv"
        rows = ["t_s,i_a"] + [f"{tv},{iv}" for tv, iv in zip(t, np.arange(50.0))]
        f.write_text("\n".join(rows) + "\n")
        p = parse_log(f)
        assert len(p) == 50
        np.testing.assert_allclose(p.samples, np.arange(50.0), atol=0.15)

    def test_save_load_roundtrip(self, tmp_path):
        p = make_profile(np.linspace(14.0, 18.0, 30), rate=10.0,
                         label="hover")
        f = tmp_path / "profile_hover.csv"
        save_profile(p, f)
        q = load_profile(f)
        np.testing.assert_allclose(q.samples, p.samples, atol=1e-12)
        assert q.label == "hover"
        assert q.sample_rate == pytest.approx(10.0)


# ----------------------------------------------------------------------
# estimator wrappers
class TestTransformers:
    def test_moving_average_filter(self):
        p = make_profile([1.0, 2.0, 3.0, 4.0])
        out = MovingAverageFilter(window=2).fit_transform(p)
        np.testing.assert_allclose(out.samples, [1.0, 1.5, 2.5, 3.5])

    def test_segmenter_transform(self):
        x = np.concatenate([np.full(200, 15.5), np.full(200, 17.5)])
        segs = ThresholdSegmenter(bands=BANDS).fit_transform(
            make_profile(x, rate=10.0))
        assert [s.tag for s in segs] == ["hover", "horizontal"]

    def test_reconstructor_transform(self):
        p = make_profile(np.arange(10.0), rate=10.0)
        out = PeriodicReconstructor(target_duration=3.0).fit_transform(
            (p, SegmentLabel(0, 10, "cc")))
        assert out.duration >= 3.0

    def test_sklearn_clone_compatible(self):
        from sklearn.base import clone
        est = MovingAverageFilter(window=4)
        assert clone(est).window == 4
