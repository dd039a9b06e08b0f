"""Flight-log current ingestion, filtering, segmentation, reconstruction.

All operations are pure: they return new profiles and never mutate inputs.
Current is in amperes with discharge positive everywhere, including files.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .errors import InputError, ParseError
from .validation import check_int, check_positive

MOTION_TAGS = ("hover", "vertical", "horizontal", "cc", "other")
SENSOR_RANGE_A = 100.0  # wide-range current sensor, A


@dataclass
class CurrentProfile:
    """Uniformly sampled applied-current series.

    samples are amperes, discharge positive; sample i covers the interval
    [i, i+1) / sample_rate.
    """

    samples: np.ndarray
    sample_rate: float
    label: str | None = None
    source: dict = field(default_factory=dict)

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=float)
        if self.samples.ndim != 1 or self.samples.size == 0:
            raise InputError("profile samples must be a non-empty 1-D array")
        check_positive(self.sample_rate, "sample_rate")
        if not np.all(np.isfinite(self.samples)):
            raise InputError("profile contains non-finite samples")
        rng = self.source.get("sensor_range", SENSOR_RANGE_A)
        if np.max(np.abs(self.samples)) > rng:
            raise InputError(
                f"profile exceeds sensor range of ±{rng} A")
        if self.label is not None and self.label not in MOTION_TAGS:
            raise InputError(
                f"unknown motion label {self.label!r}; "
                f"expected one of {MOTION_TAGS}")

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate

    @property
    def times(self) -> np.ndarray:
        return np.arange(len(self.samples)) / self.sample_rate

    def replace(self, **kw) -> "CurrentProfile":
        base = dict(samples=self.samples.copy(), sample_rate=self.sample_rate,
                    label=self.label, source=dict(self.source))
        base.update(kw)
        return CurrentProfile(**base)


@dataclass(frozen=True)
class SegmentLabel:
    """Half-open sample index range [start, end) with a motion tag."""

    start: int
    end: int
    tag: str

    def __post_init__(self):
        if not (isinstance(self.start, (int, np.integer))
                and isinstance(self.end, (int, np.integer))):
            raise InputError("segment indices must be integers")
        if self.start < 0 or self.end <= self.start:
            raise InputError(
                f"segment requires 0 <= start < end, got [{self.start}, {self.end})")
        if self.tag not in MOTION_TAGS:
            raise InputError(f"unknown segment tag {self.tag!r}")

    def length(self) -> int:
        return self.end - self.start


def parse_log(path, expected_rate: float | None = None,
              sensor_range: float = SENSOR_RANGE_A) -> CurrentProfile:
    """Read a `t_s,i_a` CSV flight log into a uniform profile.

    Timestamps must be strictly increasing. If they jitter by less than 10%
    of the nominal period the log is resampled onto a uniform grid by linear
    interpolation; worse jitter is rejected. An optional trailing `motion`
    column is ignored here (label extraction is a separate path).
    """
    path = Path(path)
    t, i = [], []
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise ParseError(f"cannot open log {path}: {exc.strerror}")
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise ParseError(f"{path}: empty file", row=1)
        header = [h.strip().lower() for h in header]
        if header[:2] != ["t_s", "i_a"]:
            raise ParseError(f"{path}: expected header starting t_s,i_a",
                             row=1)
        for row_no, rec in enumerate(reader, start=2):
            if not rec or all(not tok.strip() for tok in rec):
                continue
            if len(rec) < 2:
                raise ParseError(f"{path}: expected at least 2 columns",
                                 row=row_no)
            try:
                t.append(float(rec[0]))
                i.append(float(rec[1]))
            except ValueError:
                raise ParseError(f"{path}: non-numeric value", row=row_no)
            if len(t) > 1 and t[-1] <= t[-2]:
                kind = "duplicated" if t[-1] == t[-2] else "non-monotone"
                raise ParseError(f"{path}: {kind} timestamp", row=row_no)
    if len(t) < 2:
        raise ParseError(f"{path}: need at least 2 samples")
    t = np.array(t)
    i = np.array(i)
    dt = np.diff(t)
    period = float(np.median(dt)) if expected_rate is None \
        else 1.0 / expected_rate
    if period <= 0:
        raise ParseError(f"{path}: cannot infer a positive sample period")
    worst = float(np.max(np.abs(dt - period)))
    if worst >= 0.10 * period:
        raise ParseError(
            f"{path}: timestamp jitter {worst:.4g} s exceeds 10% of the "
            f"{period:.4g} s nominal period")
    rate = 1.0 / period
    n = int(math.floor((t[-1] - t[0]) / period + 0.5)) + 1
    grid = t[0] + np.arange(n) * period
    samples = np.interp(grid, t, i)
    return CurrentProfile(
        samples=samples, sample_rate=rate,
        source={"path": str(path), "sensor_range": sensor_range,
                "raw_samples": len(t)})


def moving_average(profile: CurrentProfile, window: int) -> CurrentProfile:
    """Trailing moving average; the first window-1 outputs average the
    partial prefix. Length is preserved."""
    window = check_int(window, "window", minimum=1)
    n = len(profile)
    if window > n:
        raise InputError(f"window {window} exceeds profile length {n}")
    csum = np.concatenate([[0.0], np.cumsum(profile.samples)])
    out = np.empty(n)
    full = np.arange(window, n + 1)
    out[window - 1:] = (csum[full] - csum[full - window]) / window
    head = np.arange(1, window)
    out[:window - 1] = csum[head] / head
    return profile.replace(samples=out)


def _validate_bands(bands: dict) -> dict:
    if not bands:
        raise InputError("threshold segmentation needs at least one band")
    norm = {}
    for tag, spec in bands.items():
        if tag not in MOTION_TAGS:
            raise InputError(f"unknown motion tag {tag!r} in bands")
        if isinstance(spec, dict):
            mean = spec.get("mean")
            std = spec.get("std")
        else:
            mean, std = spec, None
        if mean is None or len(mean) != 2 or not mean[0] < mean[1]:
            raise InputError(f"band {tag!r} needs mean = [lo, hi] with lo < hi")
        if std is not None and (len(std) != 2 or not 0 <= std[0] < std[1]):
            raise InputError(f"band {tag!r} std range must satisfy 0 <= lo < hi")
        norm[tag] = (float(mean[0]), float(mean[1]),
                     None if std is None else (float(std[0]), float(std[1])))
    tags = list(norm)
    for a in range(len(tags)):
        for b in range(a + 1, len(tags)):
            lo_a, hi_a, _ = norm[tags[a]]
            lo_b, hi_b, _ = norm[tags[b]]
            if lo_a < hi_b and lo_b < hi_a:
                raise InputError(
                    f"mean bands for {tags[a]!r} and {tags[b]!r} overlap")
    return norm


def segment(profile: CurrentProfile, mode: str = "threshold",
            bands: dict | None = None, label_file=None,
            window_s: float = 2.0, min_duration_s: float = 5.0
            ) -> list[SegmentLabel]:
    """Split a (filtered) profile into labeled motion segments.

    label_file mode trusts user intervals after validation. threshold mode
    slides half-overlapping windows, classifies each by the (mean, std) of
    the filtered current against per-motion bands, lets every window vote on
    the samples it covers, and keeps contiguous same-tag runs of at least
    min_duration_s.
    """
    n = len(profile)
    rate = profile.sample_rate
    if mode == "label_file":
        if label_file is None:
            raise InputError("label_file mode requires a label file")
        entries = _load_label_entries(label_file)
        segments = []
        for start_s, end_s, tag in entries:
            start = int(round(start_s * rate))
            end = int(round(end_s * rate))
            if end > n:
                raise InputError(
                    f"label interval [{start_s}, {end_s}) s exceeds the "
                    f"{n / rate:.3g} s profile")
            segments.append(SegmentLabel(start=start, end=end, tag=tag))
        segments.sort(key=lambda s: s.start)
        for prev, cur in zip(segments, segments[1:]):
            if cur.start < prev.end:
                raise InputError(
                    f"label intervals overlap at sample {cur.start}")
        return segments
    if mode != "threshold":
        raise InputError(f"unknown segmentation mode {mode!r}")

    norm = _validate_bands(bands or {})
    win = max(2, int(round(window_s * rate)))
    win = min(win, n)
    hop = max(1, win // 2)
    votes: list[dict] = [dict() for _ in range(n)]
    order = 0
    for start in range(0, n - win + 1, hop):
        chunk = profile.samples[start:start + win]
        mean = float(chunk.mean())
        std = float(chunk.std())
        tag = None
        for cand, (lo, hi, std_band) in norm.items():
            if lo <= mean <= hi and (std_band is None
                                     or std_band[0] <= std <= std_band[1]):
                tag = cand
                break
        if tag is None:
            continue
        for idx in range(start, start + win):
            rec = votes[idx]
            if tag in rec:
                rec[tag] = (rec[tag][0] + 1, rec[tag][1])
            else:
                rec[tag] = (1, order)
        order += 1
    assigned = []
    for rec in votes:
        if not rec:
            assigned.append(None)
        else:
            # most votes; earliest-classified window breaks ties
            assigned.append(min(rec, key=lambda k: (-rec[k][0], rec[k][1])))
    min_len = int(round(min_duration_s * rate))
    segments = []
    run_start = 0
    for idx in range(1, n + 1):
        if idx == n or assigned[idx] != assigned[run_start]:
            tag = assigned[run_start]
            if tag is not None and idx - run_start >= min_len:
                segments.append(SegmentLabel(start=run_start, end=idx, tag=tag))
            run_start = idx
    return segments


def _load_label_entries(label_file):
    if isinstance(label_file, (str, Path)):
        try:
            with open(label_file, encoding="utf-8") as fh:
                data = json.load(fh)
        except OSError as exc:
            raise ParseError(f"cannot open labels {label_file}: {exc.strerror}")
        except json.JSONDecodeError as exc:
            raise ParseError(f"{label_file}: invalid JSON ({exc.msg})",
                             row=exc.lineno)
    else:
        data = label_file
    if not isinstance(data, list):
        raise InputError("label file must be a JSON list of intervals")
    entries = []
    for k, item in enumerate(data):
        try:
            start_s = float(item["start_s"])
            end_s = float(item["end_s"])
            tag = str(item["tag"])
        except (KeyError, TypeError, ValueError):
            raise InputError(
                f"label entry {k} must have start_s, end_s, tag")
        if not start_s < end_s:
            raise InputError(f"label entry {k}: start_s must precede end_s")
        entries.append((start_s, end_s, tag))
    return entries


def periodic_reconstruct(profile: CurrentProfile, seg: SegmentLabel,
                         target_duration: float, stitch: str = "repeat",
                         crossfade: int = 5) -> CurrentProfile:
    """Tile one motion segment until it covers target_duration.

    `repeat` concatenates the segment verbatim; `crossfade` overlap-adds
    with a linear blend over `crossfade` samples to soften the seam.
    """
    rate = profile.sample_rate
    if seg.end > len(profile):
        raise InputError("segment exceeds the profile")
    piece = profile.samples[seg.start:seg.end]
    L = len(piece)
    if L < 2:
        raise InputError("segment must contain at least 2 samples")
    check_positive(target_duration, "target_duration")
    seg_duration = L / rate
    if target_duration < seg_duration:
        raise InputError(
            f"target_duration {target_duration} s is shorter than the "
            f"{seg_duration:.6g} s segment")
    n_target = int(math.ceil(target_duration * rate))
    if stitch == "repeat":
        tiles = int(math.ceil(n_target / L))
        out = np.tile(piece, tiles)
    elif stitch == "crossfade":
        k = check_int(crossfade, "crossfade", minimum=1)
        if k >= L:
            raise InputError("crossfade must be shorter than the segment")
        ramp = np.linspace(0.0, 1.0, k + 2)[1:-1]
        out = piece.copy()
        while len(out) < n_target:
            head = piece.copy()
            head[:k] = (1 - ramp) * out[-k:] + ramp * piece[:k]
            out = np.concatenate([out[:-k], head])
    else:
        raise InputError(f"unknown stitch mode {stitch!r}")
    return CurrentProfile(
        samples=out, sample_rate=rate, label=seg.tag,
        source=dict(profile.source, segment=[seg.start, seg.end],
                    stitch=stitch))


def constant_current(amps: float, duration: float, rate: float
                     ) -> CurrentProfile:
    """Uniform constant-current profile tagged `cc`."""
    check_positive(duration, "duration")
    check_positive(rate, "rate")
    n = max(1, int(round(duration * rate)))
    return CurrentProfile(samples=np.full(n, float(amps)), sample_rate=rate,
                          label="cc", source={"amps": float(amps)})


def profile_stats(profile: CurrentProfile, v_pack_nominal: float) -> dict:
    """Summary statistics; energy here is the coarse charge × nominal-voltage
    estimate (exact ∫V·I dt comes from simulation in the assessment module)."""
    check_positive(v_pack_nominal, "v_pack_nominal")
    x = profile.samples
    dt = 1.0 / profile.sample_rate
    charge_ah = float(x.sum()) * dt / 3600.0
    return {
        "mean_current": float(x.mean()),
        "rms_current": float(np.sqrt(np.mean(x ** 2))),
        "charge_throughput": charge_ah,
        "energy_estimate": charge_ah * v_pack_nominal,
        "peak": float(np.max(np.abs(x))),
        "ripple_std": float(x.std()),
        "duration_s": profile.duration,
    }


# ----------------------------------------------------------------------
# file round-tripping
def save_profile(profile: CurrentProfile, path) -> None:
    """Write the `t_s,i_a` CSV plus a .json metadata sidecar."""
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["t_s", "i_a"])
        for ts, amp in zip(profile.times, profile.samples):
            writer.writerow([repr(float(ts)), repr(float(amp))])
    meta = {
        "sample_rate": profile.sample_rate,
        "label": profile.label,
        "source": {k: v for k, v in profile.source.items()
                   if isinstance(v, (str, int, float, list, bool))},
    }
    path.with_suffix(".json").write_text(
        json.dumps(meta, indent=2) + "\n", encoding="utf-8")


def load_profile(path) -> CurrentProfile:
    """Read a profile CSV, applying the .json sidecar when present."""
    path = Path(path)
    profile = parse_log(path)
    sidecar = path.with_suffix(".json")
    if sidecar.exists():
        try:
            meta = json.loads(sidecar.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ParseError(f"{sidecar}: invalid JSON ({exc.msg})",
                             row=exc.lineno)
        label = meta.get("label")
        source = dict(profile.source)
        source.update(meta.get("source", {}))
        profile = profile.replace(
            label=label, source=source,
            sample_rate=meta.get("sample_rate", profile.sample_rate))
    return profile


# ----------------------------------------------------------------------
# estimator-style wrappers
class MovingAverageFilter(BaseEstimator, TransformerMixin):
    """Trailing moving-average smoother over CurrentProfile objects."""

    def __init__(self, window: int = 10):
        self.window = window

    def fit(self, X=None, y=None):
        check_int(self.window, "window", minimum=1)
        return self

    def transform(self, X):
        self.fit()
        if isinstance(X, CurrentProfile):
            return moving_average(X, self.window)
        return [moving_average(p, self.window) for p in X]


class ThresholdSegmenter(BaseEstimator, TransformerMixin):
    """Window-vote motion segmentation against per-tag current bands."""

    def __init__(self, bands: dict | None = None, window_s: float = 2.0,
                 min_duration_s: float = 5.0):
        self.bands = bands
        self.window_s = window_s
        self.min_duration_s = min_duration_s

    def fit(self, X=None, y=None):
        _validate_bands(self.bands or {})
        return self

    def transform(self, X):
        if isinstance(X, CurrentProfile):
            return segment(X, mode="threshold", bands=self.bands,
                           window_s=self.window_s,
                           min_duration_s=self.min_duration_s)
        return [self.transform(p) for p in X]


class PeriodicReconstructor(BaseEstimator, TransformerMixin):
    """Tile (profile, segment) pairs out to a target duration."""

    def __init__(self, target_duration: float = 60.0, stitch: str = "repeat",
                 crossfade: int = 5):
        self.target_duration = target_duration
        self.stitch = stitch
        self.crossfade = crossfade

    def fit(self, X=None, y=None):
        if self.stitch not in ("repeat", "crossfade"):
            raise InputError(f"unknown stitch mode {self.stitch!r}")
        return self

    def transform(self, X):
        self.fit()
        if isinstance(X, tuple):
            profile, seg = X
            return periodic_reconstruct(profile, seg, self.target_duration,
                                        self.stitch, self.crossfade)
        return [self.transform(pair) for pair in X]
