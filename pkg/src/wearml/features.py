"""Daily and window-level summaries of minute-resolution sensor arrays.

Arrays are laid out (stream, minutes) with NaN marking missing samples.
Stream order is fixed by STREAMS. A day is 1440 minutes; a window is a
whole number of consecutive days.

Operational choices, applied uniformly:
 - "in bed" is the union of the in-bed and asleep streams, so sleep
   outside a flagged bed period still counts as bed time.
 - the main bed period is the longest maximal in-bed run of the day
   (first one on ties); naps are asleep runs of at least 20 minutes
   that do not overlap it.
 - resting heart rate pools minutes that are awake with zero steps.
 - activity buckets by steps per minute: 0 sedentary, 1-59 lightly,
   60-99 fairly, 100+ very active.
 - active calories are 0.04 per step; total output adds the basal rate
   prorated by the observed fraction of the day.
 - a stream is "missing" for a day when more than 60 of its minutes
   are unobserved; a day is missing when every minute of every stream
   is unobserved.
"""

from __future__ import annotations

import numpy as np

MINUTES_PER_DAY = 1440

STREAMS = ("heart_rate", "steps", "sleep", "awake", "in_bed")
HR, STEPS, SLEEP, AWAKE, IN_BED = range(5)

DAILY_FEATURES = (
    "resting_hr",
    "main_minutes_in_bed",
    "sleep_efficiency",
    "nap_count",
    "total_asleep_minutes",
    "total_in_bed_minutes",
    "active_calories",
    "calories_out",
    "base_metabolic_rate",
    "sedentary_minutes",
    "lightly_active_minutes",
    "fairly_active_minutes",
    "very_active_minutes",
    "missing_hr",
    "missing_sleep",
    "missing_steps",
    "missing_day",
)

ZERO_SHOT_FEATURES = (
    "resting_hr_p95",
    "resting_hr_p50",
    "resting_hr_std",
    "awake_hr_p95",
    "steps_streak_p95",
    "steps_streak_p50",
    "total_minutes_in_bed",
    "sleep_minutes",
    "total_steps",
    "missing_hr",
    "missing_sleep",
    "missing_steps",
    "missing_day",
)

ACTIVE_CALORIES_PER_STEP = 0.04
MISSING_MINUTES_THRESHOLD = 60
NAP_MIN_MINUTES = 20


def runs_of_ones(flags: np.ndarray) -> list:
    """Maximal runs of truthy values as (start, length) pairs."""
    f = np.asarray(flags, dtype=bool).astype(np.int8)
    if f.size == 0:
        return []
    diff = np.diff(np.concatenate(([0], f, [0])))
    starts = np.flatnonzero(diff == 1)
    ends = np.flatnonzero(diff == -1)
    return [(int(s), int(e - s)) for s, e in zip(starts, ends)]


def _binary(stream: np.ndarray) -> np.ndarray:
    """Observed positive values of a 0/1 stream; NaN counts as 0."""
    return np.nan_to_num(stream, nan=0.0) >= 0.5


def daily_features(day: np.ndarray, bmr: float) -> np.ndarray:
    """17 summaries of one (5, 1440) day; see DAILY_FEATURES for order."""
    day = np.asarray(day, dtype=np.float64)
    if day.shape != (len(STREAMS), MINUTES_PER_DAY):
        raise ValueError(f"expected (5, {MINUTES_PER_DAY}) day, got {day.shape}")

    hr, steps, sleep, awake, in_bed = day
    hr_obs = ~np.isnan(hr)
    steps_obs = ~np.isnan(steps)
    asleep = _binary(sleep)
    awake_on = _binary(awake)
    bed = _binary(in_bed) | asleep

    resting_mask = hr_obs & steps_obs & (steps == 0) & awake_on
    resting_hr = float(hr[resting_mask].mean()) if resting_mask.any() else 0.0

    bed_runs = runs_of_ones(bed)
    if bed_runs:
        main_start, main_len = max(bed_runs, key=lambda r: r[1])
        main_slice = slice(main_start, main_start + main_len)
        sleep_in_main = int(asleep[main_slice].sum())
        sleep_efficiency = sleep_in_main / main_len
    else:
        main_start, main_len = 0, 0
        sleep_efficiency = 0.0

    nap_count = 0
    for start, length in runs_of_ones(asleep):
        if length < NAP_MIN_MINUTES:
            continue
        overlaps_main = main_len > 0 and start < main_start + main_len and \
            start + length > main_start
        if not overlaps_main:
            nap_count += 1

    total_asleep = int(asleep.sum())
    total_in_bed = int(bed.sum())

    total_steps = float(steps[steps_obs].sum())
    active_calories = ACTIVE_CALORIES_PER_STEP * total_steps
    observed_any = ~np.isnan(day).all(axis=0)
    observed_fraction = float(observed_any.mean())
    calories_out = bmr * observed_fraction + active_calories

    s = steps[steps_obs]
    sedentary = int((s == 0).sum())
    lightly = int(((s >= 1) & (s < 60)).sum())
    fairly = int(((s >= 60) & (s < 100)).sum())
    very = int((s >= 100).sum())

    missing_hr = float((~hr_obs).sum() > MISSING_MINUTES_THRESHOLD)
    missing_sleep = float(np.isnan(sleep).sum() > MISSING_MINUTES_THRESHOLD)
    missing_steps = float((~steps_obs).sum() > MISSING_MINUTES_THRESHOLD)
    missing_day = float(np.isnan(day).all())

    return np.array([
        resting_hr, main_len, sleep_efficiency, nap_count,
        total_asleep, total_in_bed, active_calories, calories_out, bmr,
        sedentary, lightly, fairly, very,
        missing_hr, missing_sleep, missing_steps, missing_day,
    ], dtype=np.float64)


def window_days(window: np.ndarray):
    window = np.asarray(window)
    if window.ndim != 2 or window.shape[0] != len(STREAMS) \
            or window.shape[1] % MINUTES_PER_DAY != 0:
        raise ValueError(f"window must be (5, d*{MINUTES_PER_DAY}), got {window.shape}")
    n_days = window.shape[1] // MINUTES_PER_DAY
    for d in range(n_days):
        yield window[:, d * MINUTES_PER_DAY:(d + 1) * MINUTES_PER_DAY]


def window_features(window: np.ndarray, bmr: float) -> np.ndarray:
    """Daily feature vectors of each day in the window, concatenated."""
    return np.concatenate([daily_features(day, bmr) for day in window_days(window)])


def steps_streaks(steps: np.ndarray) -> np.ndarray:
    """Lengths of maximal runs of consecutive observed minutes with steps > 0."""
    active = np.nan_to_num(np.asarray(steps, dtype=np.float64), nan=0.0) > 0
    return np.array([length for _, length in runs_of_ones(active)], dtype=np.float64)


def zero_shot_features(window: np.ndarray) -> np.ndarray:
    """13 window-level summaries needing no per-user profile or training data."""
    window = np.asarray(window, dtype=np.float64)
    hr, steps, sleep, awake, in_bed = window
    hr_obs = ~np.isnan(hr)
    steps_obs = ~np.isnan(steps)
    asleep = _binary(sleep)
    awake_on = _binary(awake)
    bed = _binary(in_bed) | asleep

    resting = hr[hr_obs & steps_obs & (steps == 0) & awake_on]
    if resting.size:
        r_p95 = float(np.percentile(resting, 95))
        r_p50 = float(np.percentile(resting, 50))
        r_std = float(resting.std())
    else:
        r_p95 = r_p50 = r_std = 0.0

    awake_hr = hr[hr_obs & awake_on]
    awake_p95 = float(np.percentile(awake_hr, 95)) if awake_hr.size else 0.0

    streaks = steps_streaks(steps)
    if streaks.size:
        st_p95 = float(np.percentile(streaks, 95))
        st_p50 = float(np.percentile(streaks, 50))
    else:
        st_p95 = st_p50 = 0.0

    total_in_bed = float(bed.sum())
    sleep_minutes = float(asleep.sum())
    total_steps = float(steps[steps_obs].sum())

    miss_hr = miss_sleep = miss_steps = miss_day = 0.0
    for day in window_days(window):
        miss_hr += float(np.isnan(day[HR]).sum() > MISSING_MINUTES_THRESHOLD)
        miss_sleep += float(np.isnan(day[SLEEP]).sum() > MISSING_MINUTES_THRESHOLD)
        miss_steps += float(np.isnan(day[STEPS]).sum() > MISSING_MINUTES_THRESHOLD)
        miss_day += float(np.isnan(day).all())

    return np.array([
        r_p95, r_p50, r_std, awake_p95, st_p95, st_p50,
        total_in_bed, sleep_minutes, total_steps,
        miss_hr, miss_sleep, miss_steps, miss_day,
    ], dtype=np.float64)


class FeatureScaler:
    """Per-column standardization fitted on training rows only.

    Columns with zero variance scale to zero (after centering) instead
    of dividing by zero.
    """

    def __init__(self):
        self.mean_ = None
        self.scale_ = None

    def fit(self, X: np.ndarray) -> "FeatureScaler":
        X = np.asarray(X, dtype=np.float64)
        self.mean_ = X.mean(axis=0)
        std = X.std(axis=0)
        # a constant column can pick up eps-level std from summation
        # noise; dividing by it would fabricate +-1 deviations
        tiny = 100 * np.finfo(np.float64).eps * np.maximum(
            np.abs(self.mean_), 1.0)
        self.scale_ = np.where(std > tiny, std, 1.0)
        return self

    def transform(self, X: np.ndarray) -> np.ndarray:
        if self.mean_ is None:
            raise RuntimeError("FeatureScaler.transform called before fit")
        return (np.asarray(X, dtype=np.float64) - self.mean_) / self.scale_

    def fit_transform(self, X: np.ndarray) -> np.ndarray:
        return self.fit(X).transform(X)

    def state(self) -> dict:
        return {"mean": self.mean_.tolist(), "scale": self.scale_.tolist()}

    @classmethod
    def from_state(cls, state: dict) -> "FeatureScaler":
        out = cls()
        out.mean_ = np.asarray(state["mean"], dtype=np.float64)
        out.scale_ = np.asarray(state["scale"], dtype=np.float64)
        return out
