"""Cohort container, window indexing, file formats, and access auditing.

A cohort holds one float32 array per user laid out (stream, minute)
with NaN for missing samples, plus day-level labels and a per-user
basal metabolic rate. Days are 1-indexed: day d covers minutes
[(d-1)*1440, d*1440). The example window for a label on day d is the
seven days strictly before it, minutes [(d-8)*1440, (d-1)*1440), so
the earliest eligible label day is 8.

On disk a cohort is a directory of:
  minutes.csv  user_id,minute_index,heart_rate,steps,sleep,awake,in_bed
               (missing values are empty fields; minutes where every
               stream is missing are omitted)
  labels.csv   user_id,day_index,<one 0/1 column per label task>
  profile.csv  user_id,bmr
  manifest.json

Floats are written with %.6g so identical cohorts serialize to
identical bytes.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from .features import (MINUTES_PER_DAY, STREAMS, daily_features,
                       zero_shot_features)

WINDOW_DAYS = 7

LABEL_TASKS = (
    "flu_positive",
    "severe_fever",
    "severe_cough",
    "severe_fatigue",
    "flu_symptoms",
)

MINUTES_COLUMNS = ("user_id", "minute_index") + STREAMS
CSV_CHUNK_ROWS = 2_000_000


class AccessLog:
    """Counts window/minute reads per cohort, bucketed by phase.

    Experiments switch phases around training and evaluation; audits
    then assert that a cohort was never read during a phase that must
    not see it.
    """

    def __init__(self):
        self.phase_name = "setup"
        self.counts: dict[tuple, int] = {}

    def phase(self, name: str) -> "_PhaseContext":
        return _PhaseContext(self, name)

    def record(self, cohort_name: str) -> None:
        key = (self.phase_name, cohort_name)
        self.counts[key] = self.counts.get(key, 0) + 1

    def reads(self, cohort_name: str, phase: str) -> int:
        return self.counts.get((phase, cohort_name), 0)

    def as_dict(self) -> dict:
        return {f"{phase}:{name}": n
                for (phase, name), n in sorted(self.counts.items())}


class _PhaseContext:
    def __init__(self, log: AccessLog, name: str):
        self.log = log
        self.name = name
        self._prev = None

    def __enter__(self):
        self._prev = self.log.phase_name
        self.log.phase_name = self.name
        return self.log

    def __exit__(self, exc_type, exc, tb):
        self.log.phase_name = self._prev


@dataclass
class Cohort:
    name: str
    days: int
    minutes: dict                      # user_id -> (5, days*1440) float32
    labels: pd.DataFrame               # user_id, day_index, *LABEL_TASKS
    bmr: dict                          # user_id -> float
    seed: int | None = None
    access_log: AccessLog = field(default_factory=AccessLog)

    @property
    def user_ids(self) -> list:
        return sorted(self.minutes)

    @property
    def n_users(self) -> int:
        return len(self.minutes)

    def day_slice(self, day: int) -> slice:
        if not 1 <= day <= self.days:
            raise ValueError(f"day {day} outside 1..{self.days}")
        return slice((day - 1) * MINUTES_PER_DAY, day * MINUTES_PER_DAY)

    def day(self, user_id: str, day: int) -> np.ndarray:
        self.access_log.record(self.name)
        return self.minutes[user_id][:, self.day_slice(day)]

    def window(self, user_id: str, label_day: int,
               window_days: int = WINDOW_DAYS) -> np.ndarray:
        """(5, window_days*1440) view of the days strictly before label_day."""
        if label_day < window_days + 1 or label_day > self.days:
            raise ValueError(
                f"label day {label_day} not in {window_days + 1}..{self.days}")
        self.access_log.record(self.name)
        start = (label_day - 1 - window_days) * MINUTES_PER_DAY
        end = (label_day - 1) * MINUTES_PER_DAY
        return self.minutes[user_id][:, start:end]

    def eligible_examples(self, window_days: int = WINDOW_DAYS) -> pd.DataFrame:
        """Label rows whose day has a full preceding window."""
        mask = self.labels["day_index"] >= window_days + 1
        return self.labels.loc[mask].reset_index(drop=True)

    def split_day(self) -> int:
        """First day of the evaluation period (temporal midpoint).

        A 120-day cohort splits at day 60: label days below 60 train,
        60 and later evaluate.
        """
        return self.days // 2

    def train_test_examples(self, task: str, window_days: int = WINDOW_DAYS):
        """Temporal split on the label day. Returns (train_df, test_df)."""
        if task not in LABEL_TASKS:
            raise ValueError(f"unknown task {task!r}; options: {LABEL_TASKS}")
        ex = self.eligible_examples(window_days)
        cut = self.split_day()
        train = ex.loc[ex["day_index"] < cut].reset_index(drop=True)
        test = ex.loc[ex["day_index"] >= cut].reset_index(drop=True)
        return train, test


class WindowBank:
    """Lazy batch assembly of example windows from a cohort.

    take(indices) materializes a (len(indices), 5, window_minutes)
    float32 batch; nothing larger than a batch is ever held.
    """

    def __init__(self, cohort: Cohort, examples: pd.DataFrame,
                 window_days: int = WINDOW_DAYS):
        self.cohort = cohort
        self.window_days = window_days
        self.users = examples["user_id"].to_numpy()
        self.days = examples["day_index"].to_numpy()

    def __len__(self) -> int:
        return len(self.users)

    @property
    def examples(self) -> list:
        """(user_id, label_day) pairs in bank order."""
        return list(zip(self.users, (int(d) for d in self.days)))

    @property
    def window_minutes(self) -> int:
        return self.window_days * MINUTES_PER_DAY

    def take(self, indices) -> np.ndarray:
        out = np.empty((len(indices), len(STREAMS), self.window_minutes),
                       dtype=np.float32)
        for row, i in enumerate(indices):
            out[row] = self.cohort.window(self.users[i], int(self.days[i]),
                                          self.window_days)
        return out

    def final_days(self, indices) -> np.ndarray:
        """(len(indices), 5, 1440) batch of each window's last day."""
        out = np.empty((len(indices), len(STREAMS), MINUTES_PER_DAY),
                       dtype=np.float32)
        for row, i in enumerate(indices):
            out[row] = self.cohort.day(self.users[i], int(self.days[i]) - 1)
        return out

    def bmr(self, indices) -> np.ndarray:
        return np.array([self.cohort.bmr[self.users[i]] for i in indices],
                        dtype=np.float64)


class FeatureCache:
    """Handcrafted feature matrices for example tables.

    Daily feature vectors are memoized per (user, day), so the heavy
    overlap between consecutive windows costs nothing extra.
    """

    def __init__(self, cohort: Cohort):
        self.cohort = cohort
        self._daily: dict = {}

    def daily(self, user_id: str, day: int) -> np.ndarray:
        key = (user_id, day)
        if key not in self._daily:
            self._daily[key] = daily_features(self.cohort.day(user_id, day),
                                              self.cohort.bmr[user_id])
        return self._daily[key]

    def window_matrix(self, examples: pd.DataFrame,
                      window_days: int = WINDOW_DAYS) -> np.ndarray:
        """Concatenated daily vectors for the days before each label day."""
        rows = []
        for user_id, day in zip(examples["user_id"], examples["day_index"]):
            rows.append(np.concatenate(
                [self.daily(user_id, d) for d in range(day - window_days, day)]))
        return np.asarray(rows, dtype=np.float64)

    def zero_shot_matrix(self, examples: pd.DataFrame,
                         window_days: int = WINDOW_DAYS) -> np.ndarray:
        """Whole-window summary features that need no cohort-specific scaling."""
        rows = [zero_shot_features(self.cohort.window(user_id, day, window_days))
                for user_id, day in zip(examples["user_id"],
                                        examples["day_index"])]
        return np.asarray(rows, dtype=np.float64)


def compute_norm_stats(cohort: Cohort, before_day: int, users=None):
    """Per-stream mean/std over observed minutes of days < before_day.

    Restricting to the pre-split period keeps evaluation-period data
    out of the normalization. A users subset restricts further, for
    user-level splits where the evaluation users must not contribute.
    """
    end = (before_day - 1) * MINUTES_PER_DAY
    sums = np.zeros(len(STREAMS))
    sq = np.zeros(len(STREAMS))
    count = np.zeros(len(STREAMS))
    user_ids = cohort.user_ids if users is None else sorted(users)
    for user_id in user_ids:
        cohort.access_log.record(cohort.name)
        block = cohort.minutes[user_id][:, :end].astype(np.float64)
        obs = ~np.isnan(block)
        filled = np.where(obs, block, 0.0)
        sums += filled.sum(axis=1)
        sq += (filled ** 2).sum(axis=1)
        count += obs.sum(axis=1)
    if (count == 0).any():
        raise ValueError("a stream has no observed minutes before the split")
    mean = sums / count
    var = np.maximum(sq / count - mean ** 2, 0.0)
    std = np.sqrt(var)
    std = np.where(std > 1e-8, std, 1.0)
    return mean.astype(np.float32), std.astype(np.float32)


def _minutes_frame(cohort: Cohort, user_id: str) -> pd.DataFrame:
    arr = cohort.minutes[user_id]
    observed = ~np.isnan(arr).all(axis=0)
    idx = np.flatnonzero(observed)
    frame = pd.DataFrame({"user_id": user_id, "minute_index": idx})
    for row, stream in enumerate(STREAMS):
        frame[stream] = arr[row, idx].astype(np.float64)
    return frame


def write_cohort(cohort: Cohort, out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    minutes_rows = 0
    with open(out / "minutes.csv", "w", newline="") as f:
        f.write(",".join(MINUTES_COLUMNS) + "\n")
        for user_id in cohort.user_ids:
            frame = _minutes_frame(cohort, user_id)
            minutes_rows += len(frame)
            frame.to_csv(f, header=False, index=False, float_format="%.6g",
                         lineterminator="\n")

    labels = cohort.labels.sort_values(["user_id", "day_index"]).reset_index(drop=True)
    labels.to_csv(out / "labels.csv", index=False, lineterminator="\n")

    profile = pd.DataFrame({
        "user_id": cohort.user_ids,
        "bmr": [cohort.bmr[u] for u in cohort.user_ids],
    })
    profile.to_csv(out / "profile.csv", index=False, float_format="%.6g",
                   lineterminator="\n")

    positivity = {
        task: int(cohort.labels[task].sum()) for task in LABEL_TASKS
        if task in cohort.labels.columns
    }
    manifest = {
        "format_version": 1,
        "name": cohort.name,
        "seed": cohort.seed,
        "n_users": cohort.n_users,
        "days": cohort.days,
        "minutes_rows": minutes_rows,
        "label_counts": positivity,
        "streams": list(STREAMS),
        "label_tasks": [t for t in LABEL_TASKS if t in cohort.labels.columns],
    }
    with open(out / "manifest.json", "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")


def read_cohort(in_dir) -> Cohort:
    src = Path(in_dir)
    with open(src / "manifest.json") as f:
        manifest = json.load(f)
    days = int(manifest["days"])
    total_minutes = days * MINUTES_PER_DAY

    profile = pd.read_csv(src / "profile.csv")
    bmr = dict(zip(profile["user_id"], profile["bmr"].astype(float)))
    minutes = {
        user_id: np.full((len(STREAMS), total_minutes), np.nan, dtype=np.float32)
        for user_id in profile["user_id"]
    }
    for chunk in pd.read_csv(src / "minutes.csv", chunksize=CSV_CHUNK_ROWS):
        for user_id, group in chunk.groupby("user_id", sort=False):
            arr = minutes[user_id]
            idx = group["minute_index"].to_numpy()
            for row, stream in enumerate(STREAMS):
                arr[row, idx] = group[stream].to_numpy(dtype=np.float32)

    labels = pd.read_csv(src / "labels.csv")
    return Cohort(
        name=manifest["name"],
        days=days,
        minutes=minutes,
        labels=labels,
        bmr=bmr,
        seed=manifest.get("seed"),
    )
