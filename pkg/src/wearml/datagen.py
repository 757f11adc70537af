"""Synthetic wearable cohorts with controllable illness signal.

Each user gets a circadian heart-rate rhythm, a jittered nightly sleep
schedule, stochastic activity bouts, and device-style missingness
(whole days off, device-off blocks hitting every stream, and extra
single-stream dropouts). Illness episodes raise heart rate, suppress
steps, and lengthen sleep along a ramp / plateau / decay severity
curve; the tested-positive day sits at the peak so the preceding week
contains the ramp.

Day-level labels:
  flu_positive    the single tested day of an episode
  severe_*        symptom intensity (episode amplitude x severity)
                  above the severe threshold that day
  flu_symptoms    at least two symptoms above the mild threshold

A null cohort draws labels i.i.d. and applies no physiological effect,
so any detector should score at chance on it.

All draws come from named RngStream splits keyed by user and aspect,
which makes cohorts byte-stable under the same seed and config.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
import pandas as pd

from .cohort import LABEL_TASKS, Cohort
from .features import MINUTES_PER_DAY
from .rng import RngStream


@dataclass
class GenConfig:
    name: str = "primary"
    user_prefix: str = "u"              # keeps ids disjoint across cohorts
    n_users: int = 200
    days: int = 120
    # heart rate
    hr_base_mean: float = 62.0
    hr_base_std: float = 5.0
    hr_base_shift: float = 0.0          # cohort-level offset (transfer)
    hr_circadian_mean: float = 7.0
    hr_circadian_std: float = 1.5
    hr_circadian_scale: float = 1.0     # cohort-level scale (transfer)
    hr_noise_std: float = 3.0
    hr_sleep_drop: float = 8.0
    hr_step_coupling: float = 0.08      # bpm per step/minute
    # sleep
    bed_start_mean: float = 1365.0      # minute of day, ~22:45
    bed_start_std: float = 40.0
    sleep_duration_mean: float = 444.0  # 7.4 h
    sleep_duration_std: float = 45.0
    nap_prob: float = 0.15
    # steps
    bouts_per_day: float = 8.5
    bout_len_mean: float = 8.0
    bout_intensity_low: float = 15.0
    bout_intensity_high: float = 110.0
    activity_scale_std: float = 0.0     # per-user activity multiplier spread
    # illness
    episode_prob: float = 0.40
    ramp_days_low: int = 2
    ramp_days_high: int = 4
    plateau_days: int = 2
    decay_days_low: int = 3
    decay_days_high: int = 6
    hr_elevation_frac: float = 0.16
    steps_suppression: float = 0.55
    sleep_extra_minutes: float = 50.0
    fever_amp_low: float = 0.2
    fever_amp_high: float = 0.72
    cough_amp_low: float = 0.45
    cough_amp_high: float = 1.0
    fatigue_amp_low: float = 0.62
    fatigue_amp_high: float = 1.3
    severe_threshold: float = 0.6
    mild_threshold: float = 0.22
    # missingness
    whole_day_missing_prob: float = 0.08
    device_off_blocks_per_day: float = 0.9
    device_off_len_mean: float = 50.0
    hr_only_blocks_per_day: float = 1.2
    hr_only_len_mean: float = 40.0
    steps_only_blocks_per_day: float = 0.5
    steps_only_len_mean: float = 30.0
    # null cohorts: no physiological effect, labels drawn i.i.d.
    null_labels: bool = False
    null_positive_rate: float = 1.0 / 7.0


def primary_config(profile: str = "full") -> GenConfig:
    cfg = GenConfig(name="primary")
    if profile == "fast":
        cfg = replace(cfg, n_users=24, days=32)
    elif profile != "full":
        raise ValueError(f"unknown profile {profile!r}")
    return cfg


def transfer_config(profile: str = "full") -> GenConfig:
    # different population: shifted, more heterogeneous baselines
    cfg = GenConfig(
        name="transfer", user_prefix="t", n_users=32, days=46,
        hr_base_shift=3.0, hr_base_std=13.0, hr_circadian_scale=1.25,
        sleep_duration_std=85.0, bed_start_std=65.0,
        activity_scale_std=0.45,
        episode_prob=0.85,
        # milder, shorter episodes than the training illness
        hr_elevation_frac=0.13, steps_suppression=0.45,
        sleep_extra_minutes=40.0,
        ramp_days_low=2, ramp_days_high=3, decay_days_low=2, decay_days_high=4,
    )
    if profile == "fast":
        cfg = replace(cfg, n_users=12, days=24)
    elif profile != "full":
        raise ValueError(f"unknown profile {profile!r}")
    return cfg


def null_config(profile: str = "full") -> GenConfig:
    cfg = GenConfig(
        name="null", user_prefix="n", n_users=96, days=90,
        null_labels=True,
        hr_elevation_frac=0.0, steps_suppression=0.0, sleep_extra_minutes=0.0,
    )
    if profile == "fast":
        cfg = replace(cfg, n_users=16, days=30)
    elif profile != "full":
        raise ValueError(f"unknown profile {profile!r}")
    return cfg


def _severity_curve(cfg: GenConfig, rng, days: int):
    """Per-day severity in [0, 1] and the tested day, or (zeros, None)."""
    sev = np.zeros(days + 1)            # 1-indexed by day
    if rng.random(()) >= cfg.episode_prob:
        return sev, None
    ramp = int(rng.integers(cfg.ramp_days_low, cfg.ramp_days_high + 1))
    decay = int(rng.integers(cfg.decay_days_low, cfg.decay_days_high + 1))
    latest_onset = days - (ramp + cfg.plateau_days)
    if latest_onset < 10:
        return sev, None
    onset = int(rng.integers(10, latest_onset + 1))
    day = onset
    for i in range(ramp):
        sev[day] = (i + 1) / ramp
        day += 1
    for _ in range(cfg.plateau_days):
        if day <= days:
            sev[day] = 1.0
        day += 1
    for i in range(decay):
        if day <= days:
            sev[day] = 1.0 - (i + 1) / (decay + 1)
        day += 1
    tested = onset + ramp - 1 + int(rng.integers(0, 2))
    tested = min(tested, days)
    return sev, tested


def _paint_sleep(cfg: GenConfig, rng, total: int, sev_by_minute: np.ndarray):
    sleep = np.zeros(total, dtype=np.float32)
    in_bed = np.zeros(total, dtype=np.float32)
    days = total // MINUTES_PER_DAY
    for night in range(-1, days):
        base = night * MINUTES_PER_DAY
        bed_start = base + cfg.bed_start_mean + rng.normal(0, cfg.bed_start_std)
        onset = bed_start + rng.uniform(5, 25)
        duration = rng.normal(cfg.sleep_duration_mean, cfg.sleep_duration_std)
        mid = int(min(max(onset, 0), total - 1))
        duration += cfg.sleep_extra_minutes * sev_by_minute[mid]
        duration = min(max(duration, 300.0), 630.0)
        wake = onset + duration
        rise = wake + rng.uniform(5, 20)
        s0, s1 = int(max(onset, 0)), int(min(wake, total))
        b0, b1 = int(max(bed_start, 0)), int(min(rise, total))
        if s1 > s0:
            sleep[s0:s1] = 1.0
        if b1 > b0:
            in_bed[b0:b1] = 1.0
    for day in range(days):
        if rng.random(()) < cfg.nap_prob:
            start = day * MINUTES_PER_DAY + int(rng.uniform(13 * 60, 16.5 * 60))
            length = int(rng.uniform(25, 70))
            sleep[start:min(start + length, total)] = 1.0
    return sleep, in_bed


def _paint_steps(cfg: GenConfig, rng, total: int, sleep: np.ndarray,
                 sev_by_minute: np.ndarray):
    steps = np.zeros(total, dtype=np.float32)
    days = total // MINUTES_PER_DAY
    # guarded so the zero-spread cohorts keep their exact draw sequence
    user_scale = 1.0
    if cfg.activity_scale_std > 0:
        user_scale = max(float(rng.normal(1.0, cfg.activity_scale_std)), 0.25)
    n_bouts = rng.poisson(cfg.bouts_per_day, size=days)
    for day in range(days):
        base = day * MINUTES_PER_DAY
        for _ in range(int(n_bouts[day])):
            start = base + int(rng.uniform(6 * 60, 23 * 60))
            length = 3 + int(rng.exponential(cfg.bout_len_mean - 3))
            end = min(start + length, total)
            if end <= start:
                continue
            intensity = user_scale * rng.uniform(cfg.bout_intensity_low,
                                                 cfg.bout_intensity_high)
            jitter = rng.uniform(0.7, 1.3, size=end - start)
            steps[start:end] = np.maximum(steps[start:end],
                                          np.round(intensity * jitter))
    steps *= np.maximum(1.0 - cfg.steps_suppression * sev_by_minute, 0.0)
    steps = np.round(steps)
    steps[sleep >= 0.5] = 0.0
    return steps


def _apply_missingness(cfg: GenConfig, rng, arr: np.ndarray):
    """arr is (5, total); marks NaN in place."""
    total = arr.shape[1]
    days = total // MINUTES_PER_DAY

    def blocks(rate: float, mean_len: float, sub):
        counts = rng.poisson(rate, size=days)
        for day in range(days):
            base = day * MINUTES_PER_DAY
            for _ in range(int(counts[day])):
                start = base + int(rng.uniform(0, MINUTES_PER_DAY))
                length = 8 + int(rng.exponential(mean_len - 8))
                arr[sub, start:min(start + length, total)] = np.nan

    blocks(cfg.device_off_blocks_per_day, cfg.device_off_len_mean, slice(None))
    blocks(cfg.hr_only_blocks_per_day, cfg.hr_only_len_mean, slice(0, 1))
    blocks(cfg.steps_only_blocks_per_day, cfg.steps_only_len_mean, slice(1, 2))
    off_days = np.flatnonzero(rng.random(days) < cfg.whole_day_missing_prob)
    for day in off_days:
        arr[:, day * MINUTES_PER_DAY:(day + 1) * MINUTES_PER_DAY] = np.nan


def _user_labels(cfg: GenConfig, rng, days: int, sev: np.ndarray, tested):
    if cfg.null_labels:
        draws = rng.random((days, len(LABEL_TASKS)))
        table = (draws < cfg.null_positive_rate).astype(np.int64)
        return {task: table[:, i] for i, task in enumerate(LABEL_TASKS)}
    amps = {
        "fever": rng.uniform(cfg.fever_amp_low, cfg.fever_amp_high),
        "cough": rng.uniform(cfg.cough_amp_low, cfg.cough_amp_high),
        "fatigue": rng.uniform(cfg.fatigue_amp_low, cfg.fatigue_amp_high),
    }
    day_sev = sev[1:days + 1]
    intensity = {k: a * day_sev for k, a in amps.items()}
    flu_positive = np.zeros(days, dtype=np.int64)
    if tested is not None:
        flu_positive[tested - 1] = 1
    mild_count = sum((v > cfg.mild_threshold).astype(np.int64)
                     for v in intensity.values())
    return {
        "flu_positive": flu_positive,
        "severe_fever": (intensity["fever"] > cfg.severe_threshold).astype(np.int64),
        "severe_cough": (intensity["cough"] > cfg.severe_threshold).astype(np.int64),
        "severe_fatigue": (intensity["fatigue"] > cfg.severe_threshold).astype(np.int64),
        "flu_symptoms": (mild_count >= 2).astype(np.int64),
    }


def _generate_user(cfg: GenConfig, rng, user_id: str):
    total = cfg.days * MINUTES_PER_DAY

    sev, tested = _severity_curve(cfg, rng.split("illness"), cfg.days)
    sev_by_minute = np.repeat(sev[1:], MINUTES_PER_DAY)

    sleep, in_bed = _paint_sleep(cfg, rng.split("sleep"), total, sev_by_minute)
    steps = _paint_steps(cfg, rng.split("steps"), total, sleep, sev_by_minute)
    awake = (1.0 - sleep).astype(np.float32)

    hr_rng = rng.split("hr")
    base = cfg.hr_base_mean + cfg.hr_base_shift + hr_rng.normal(0, cfg.hr_base_std)
    circadian = max(cfg.hr_circadian_mean + hr_rng.normal(0, cfg.hr_circadian_std), 1.0)
    circadian *= cfg.hr_circadian_scale
    phase = hr_rng.uniform(0, MINUTES_PER_DAY)
    t = np.arange(total, dtype=np.float64)
    rhythm = np.sin(2 * np.pi * ((t % MINUTES_PER_DAY) - phase) / MINUTES_PER_DAY)
    hr = (base + circadian * rhythm) * (1.0 + cfg.hr_elevation_frac * sev_by_minute)
    hr = hr - cfg.hr_sleep_drop * sleep + cfg.hr_step_coupling * steps
    hr = hr + hr_rng.normal(0, cfg.hr_noise_std, size=total)
    hr = np.maximum(hr, 35.0).astype(np.float32)

    arr = np.stack([hr, steps, sleep, awake, in_bed]).astype(np.float32)
    _apply_missingness(cfg, rng.split("missing"), arr)

    labels = _user_labels(cfg, rng.split("labels"), cfg.days, sev, tested)
    frame = pd.DataFrame({"user_id": user_id,
                          "day_index": np.arange(1, cfg.days + 1)})
    for task in LABEL_TASKS:
        frame[task] = labels[task]

    bmr = float(np.round(rng.split("profile").uniform(1350, 1900), 1))
    return arr, frame, bmr


def _validate(cfg: GenConfig) -> None:
    rates = {
        "episode_prob": cfg.episode_prob,
        "nap_prob": cfg.nap_prob,
        "whole_day_missing_prob": cfg.whole_day_missing_prob,
        "null_positive_rate": cfg.null_positive_rate,
    }
    for field, value in rates.items():
        if not 0.0 <= value <= 1.0:
            raise ValueError(f"{field} must be in [0, 1], got {value}")
    if cfg.days < 14:
        raise ValueError(f"need at least 14 days per user, got {cfg.days}")
    if cfg.n_users < 1:
        raise ValueError("need at least one user")


def generate_cohort(cfg: GenConfig, seed: int) -> Cohort:
    _validate(cfg)
    root = RngStream(seed).split(f"cohort-{cfg.name}")
    minutes = {}
    frames = []
    bmr = {}
    for i in range(cfg.n_users):
        user_id = f"{cfg.user_prefix}{i:04d}"
        arr, frame, user_bmr = _generate_user(cfg, root.split(user_id), user_id)
        minutes[user_id] = arr
        frames.append(frame)
        bmr[user_id] = user_bmr
    labels = pd.concat(frames, ignore_index=True)
    return Cohort(name=cfg.name, days=cfg.days, minutes=minutes,
                  labels=labels, bmr=bmr, seed=seed)


def fold_split_positive_users(labels: pd.DataFrame, n_folds: int,
                              rng: RngStream):
    """Disjoint folds over users who ever test flu-positive.

    Fold sizes differ by at most one; every positive user lands in
    exactly one fold. Never-positive users stay out entirely, which
    reserves them as an unlabeled pretraining pool.
    """
    by_user = labels.groupby("user_id")["flu_positive"].max()
    positive = sorted(by_user.index[by_user == 1])
    if len(positive) < n_folds:
        raise ValueError(f"need at least {n_folds} positive users, "
                         f"have {len(positive)}")
    order = rng.permutation(len(positive))
    folds = [[] for _ in range(n_folds)]
    for slot, j in enumerate(order):
        folds[slot % n_folds].append(positive[j])
    return [sorted(fold) for fold in folds]
