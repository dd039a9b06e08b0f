"""Synthetic flight-log fixtures.

Deterministic generator for a multirotor current log with labeled motion
phases; entirely constructed data, bundled so the pipeline can be exercised
without any proprietary flight recordings. Amplitudes follow the package's
working profile of a 4S 2.2 Ah pack: hover draws a low-ripple ~16 A,
horizontal cruise a moderate-ripple ~17 A, and vertical climb transients
peak above 30 A.
"""

from __future__ import annotations

import json
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import InputError
from .profiles import CurrentProfile, SegmentLabel
from .validation import check_positive

DEFAULT_PLAN = (("hover", 40.0), ("vertical", 30.0),
                ("horizontal", 40.0), ("hover", 20.0))

# mean-current classification bands consistent with the generator, A
DEFAULT_BANDS = {
    "hover": (15.0, 16.5),
    "horizontal": (16.7, 18.3),
    "vertical": (18.6, 38.0),
}


def _hover(n: int, t: np.ndarray, rng) -> np.ndarray:
    return (16.0 + 0.25 * np.sin(2 * np.pi * 1.1 * t)
            + 0.10 * rng.standard_normal(n))


def _horizontal(n: int, t: np.ndarray, rng) -> np.ndarray:
    return (17.0 + 0.80 * np.sin(2 * np.pi * 0.5 * t)
            + 0.30 * rng.standard_normal(n))


def _vertical(n: int, t: np.ndarray, rng) -> np.ndarray:
    """Climb draw with periodic full-throttle bursts.

    The between-burst base sits above the horizontal band so threshold
    windows classify the whole phase, not just the bursts.
    """
    x = 19.0 + 0.40 * rng.standard_normal(n)
    period, width, ramp = 12.0, 5.5, 1.0
    for start in np.arange(1.5, t[-1] if n else 0.0, period):
        burst = (t >= start) & (t < start + width)
        if not burst.any():
            continue
        tb = t[burst] - start
        # trapezoid: 1 s ramps around a sustained hold, peak 34-36 A
        shape = np.minimum(np.minimum(tb / ramp, (width - tb) / ramp), 1.0)
        peak = 34.0 + 2.0 * rng.random()
        x[burst] += (peak - 19.0) * np.clip(shape, 0.0, 1.0)
    return x


_PHASES = {"hover": _hover, "horizontal": _horizontal, "vertical": _vertical}


def synthetic_flight_log(seed: int = 0, rate: float = 10.0,
                         plan=DEFAULT_PLAN):
    """Generate (profile, ground-truth segment labels) for a phase plan.

    plan: sequence of (motion tag, duration seconds).
    """
    check_positive(rate, "rate")
    if not plan:
        raise InputError("flight plan is empty")
    rng = np.random.default_rng(seed)
    chunks = []
    labels = []
    start = 0
    for tag, duration in plan:
        if tag not in _PHASES:
            raise InputError(f"unknown flight phase {tag!r}")
        check_positive(duration, "phase duration")
        n = int(round(duration * rate))
        t = np.arange(n) / rate
        chunks.append(_PHASES[tag](n, t, rng))
        labels.append(SegmentLabel(start=start, end=start + n, tag=tag))
        start += n
    samples = np.concatenate(chunks)
    profile = CurrentProfile(
        samples=samples, sample_rate=rate, label=None,
        source={"synthetic": True, "generator": "rotorbatt.synthetic",
                "seed": seed, "plan": [[tag, d] for tag, d in plan]})
    return profile, labels


def bundled_flight_log() -> Path:
    """Path to the flight-log fixture shipped with the package.

    The file is the seed-0 output of :func:`synthetic_flight_log` with the
    default plan; a ``.labels.json`` sidecar sits next to it.
    """
    return Path(resources.files("rotorbatt") / "data" / "synthetic_flight.csv")


def write_flight_log(path, profile: CurrentProfile,
                     labels=None) -> None:
    """Write a parse_log-compatible CSV (and optional label JSON sidecar)."""
    path = Path(path)
    times = profile.times
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write("t_s,i_a\n")
        for t, i in zip(times, profile.samples):
            fh.write(f"{repr(float(t))},{repr(float(i))}\n")
    if labels is not None:
        rate = profile.sample_rate
        doc = [{"start_s": seg.start / rate, "end_s": seg.end / rate,
                "tag": seg.tag} for seg in labels]
        path.with_suffix(".labels.json").write_text(
            json.dumps(doc, indent=2) + "\n", encoding="utf-8")
