"""Self-supervised pretraining of the sensor encoder.

Three tasks, all label-free:

* same_user  -- sample window pairs, half from one person at least a
  week apart, half from two different people; classify which.
* autoencoder -- reconstruct the z-scored stream values through a
  mirrored deconvolution stack, scoring only observed samples.
* domain_features -- regress the z-scored daily feature vector of the
  window's final day.

``Pretrainer.fit`` returns a ``PretrainedEncoder`` bundling the
encoder weights with the normalization statistics used to build its
inputs, so downstream fine-tuning cannot drift onto different stats.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import ops
from .checkpoint import load_checkpoint, save_checkpoint
from .features import DAILY_FEATURES, FeatureScaler, daily_features
from .model import (ModelConfig, PairHead, Reconstructor, RegressionHead,
                    SensorEncoder, encode_missingness)
from .optim import Adam
from .rng import RngStream
from .tensor import Tape, Tensor

PRETRAIN_TASKS = ("same_user", "autoencoder", "domain_features")


@dataclass
class PretrainedEncoder:
    config: ModelConfig
    encoder: SensorEncoder
    norm_mean: np.ndarray
    norm_std: np.ndarray
    task: str
    history: list = field(default_factory=list)

    def save(self, path) -> None:
        entries = [("norm.mean", self.norm_mean), ("norm.std", self.norm_std)]
        entries += list(self.encoder.state_entries("encoder."))
        extra = {
            "task": self.task,
            "history": self.history,
            "config": {k: list(v) if isinstance(v, tuple) else v
                       for k, v in vars(self.config).items()},
        }
        save_checkpoint(path, entries, extra=extra)

    @classmethod
    def load(cls, path) -> "PretrainedEncoder":
        state, extra = load_checkpoint(path)
        raw = extra["config"]
        config = ModelConfig(**{k: tuple(v) if isinstance(v, list) else v
                                for k, v in raw.items()})
        encoder = SensorEncoder(config, RngStream(0))
        encoder.load_state({k[len("encoder."):]: v for k, v in state.items()
                            if k.startswith("encoder.")})
        return cls(config=config, encoder=encoder,
                   norm_mean=state["norm.mean"], norm_std=state["norm.std"],
                   task=extra["task"], history=extra.get("history", []))


def sample_pairs(examples, n_pairs: int, rng: RngStream, min_gap: int = 7):
    """Index pairs for the same-user task.

    Positives pair two windows of one user whose label days differ by
    at least min_gap; negatives pair windows of two distinct users.
    Returns (idx_a, idx_b, labels) with labels 1 for same-user.
    """
    by_user: dict = {}
    for pos, (user_id, day) in enumerate(examples):
        by_user.setdefault(user_id, []).append((day, pos))
    valid_pairs = {}
    for user_id, items in by_user.items():
        items.sort()
        pairs = [(a[1], b[1]) for i, a in enumerate(items)
                 for b in items[i + 1:] if b[0] - a[0] >= min_gap]
        if pairs:
            valid_pairs[user_id] = pairs
    if not valid_pairs:
        raise ValueError(f"no user has two windows at least {min_gap} days apart")
    if len(by_user) < 2:
        raise ValueError("need at least two users for different-user pairs")

    pos_users = sorted(valid_pairs)
    all_users = sorted(by_user)
    n_pos = n_pairs // 2
    gen = rng.gen
    idx_a = np.empty(n_pairs, dtype=np.int64)
    idx_b = np.empty(n_pairs, dtype=np.int64)
    labels = np.zeros(n_pairs, dtype=np.int64)
    for i in range(n_pos):
        user_id = pos_users[gen.integers(len(pos_users))]
        a, b = valid_pairs[user_id][gen.integers(len(valid_pairs[user_id]))]
        idx_a[i], idx_b[i], labels[i] = a, b, 1
    for i in range(n_pos, n_pairs):
        ua, ub = gen.choice(len(all_users), size=2, replace=False)
        pick = lambda u: by_user[all_users[u]][gen.integers(len(by_user[all_users[u]]))][1]
        idx_a[i], idx_b[i] = pick(ua), pick(ub)
    perm = gen.permutation(n_pairs)
    return idx_a[perm], idx_b[perm], labels[perm]


class Pretrainer:
    """Runs one pretraining task over a window bank.

    The bank must expose take(indices) -> (n, S, L) raw windows and,
    for same_user / domain_features, the examples / final_days / bmr
    accessors of cohort.WindowBank.
    """

    def __init__(self, config: ModelConfig, task: str, epochs: int = 5,
                 batch_size: int = 32, lr: float = 2e-3,
                 pairs_per_epoch: int | None = None,
                 head_dropout: float | None = 0.0, seed: int = 0):
        if task not in PRETRAIN_TASKS:
            raise ValueError(f"unknown pretraining task {task!r}")
        self.config = config
        self.task = task
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.pairs_per_epoch = pairs_per_epoch
        # dropout on the pooled vector drowns a regression target; the
        # encoder keeps its own dropout either way
        self.head_dropout = config.dropout if head_dropout is None else head_dropout
        self.seed = seed

    def fit(self, bank, norm_stats, record_eval: bool = False) -> PretrainedEncoder:
        mean = np.asarray(norm_stats[0], dtype=np.float32)
        std = np.asarray(norm_stats[1], dtype=np.float32)
        rng = RngStream(self.seed)
        encoder = SensorEncoder(self.config, rng.split("encoder"))
        head = self._build_head(rng.split("head"))
        targets = self._prepare_targets(bank, mean, std)
        optimizer = Adam(encoder.parameters() + head.parameters(), lr=self.lr)

        n = len(bank)
        eval_pairs = None
        if self.task == "same_user" and record_eval:
            eval_pairs = sample_pairs(bank.examples, self._n_pairs(n),
                                      rng.split("eval-pairs"))
        history = []
        for epoch in range(self.epochs):
            erng = rng.split(f"epoch{epoch}")
            if self.task == "same_user":
                pairs = sample_pairs(bank.examples, self._n_pairs(n),
                                     erng.split("pairs"))
                order = np.arange(len(pairs[0]))
            else:
                pairs = None
                order = erng.permutation(n)
            losses = []
            for b0 in range(0, len(order), self.batch_size):
                sel = order[b0:b0 + self.batch_size]
                brng = erng.split(f"batch{b0}")
                optimizer.zero_grad()
                with Tape() as tape:
                    loss = self._loss(encoder, head, bank, mean, std, targets,
                                      pairs, sel, brng)
                tape.backward(loss)
                optimizer.step()
                losses.append(float(loss.data))
            record = {"epoch": epoch, "train_loss": float(np.mean(losses))}
            if record_eval:
                record["eval_loss"] = self.evaluate(
                    encoder, head, bank, mean, std, targets, eval_pairs)
            history.append(record)
        return PretrainedEncoder(config=self.config, encoder=encoder,
                                 norm_mean=mean, norm_std=std,
                                 task=self.task, history=history)

    def evaluate(self, encoder, head, bank, mean, std, targets=None,
                 pairs=None) -> float:
        """Full-pass loss with dropout off and batch norm on running stats."""
        if targets is None:
            targets = self._prepare_targets(bank, mean, std)
        encoder.eval()
        head.eval()
        rng = RngStream(0)
        if self.task == "same_user":
            if pairs is None:
                pairs = sample_pairs(bank.examples, self._n_pairs(len(bank)),
                                     RngStream(0).split("eval-pairs"))
            order = np.arange(len(pairs[0]))
        else:
            order = np.arange(len(bank))
        total, count = 0.0, 0
        for b0 in range(0, len(order), self.batch_size):
            sel = order[b0:b0 + self.batch_size]
            loss = self._loss(encoder, head, bank, mean, std, targets, pairs,
                              sel, rng)
            total += float(loss.data) * len(sel)
            count += len(sel)
        encoder.train()
        head.train()
        return total / count

    # -- internals ---------------------------------------------------------

    def _n_pairs(self, n: int) -> int:
        return self.pairs_per_epoch if self.pairs_per_epoch is not None else max(n, 2)

    def _build_head(self, rng: RngStream):
        d = self.config.d_model
        if self.task == "same_user":
            return PairHead(d, self.head_dropout, rng)
        if self.task == "autoencoder":
            return Reconstructor(self.config, rng)
        return RegressionHead(d, len(DAILY_FEATURES), self.head_dropout, rng)

    def _prepare_targets(self, bank, mean, std):
        if self.task != "domain_features":
            return None
        days = bank.final_days(np.arange(len(bank)))
        bmrs = bank.bmr(np.arange(len(bank)))
        feats = np.stack([daily_features(day, bmr)
                          for day, bmr in zip(days, bmrs)])
        scaler = FeatureScaler().fit(feats)
        return scaler.transform(feats).astype(np.float32)

    def _encode(self, raw, mean, std):
        return encode_missingness(raw, mean, std, self.config.use_missing_flags)

    def _loss(self, encoder, head, bank, mean, std, targets, pairs, sel, rng):
        if self.task == "same_user":
            idx_a, idx_b, labels = pairs
            xa = Tensor(self._encode(bank.take(idx_a[sel]), mean, std))
            xb = Tensor(self._encode(bank.take(idx_b[sel]), mean, std))
            pa = ops.mean(encoder(xa, rng.split("a")), axis=1)
            pb = ops.mean(encoder(xb, rng.split("b")), axis=1)
            logits = head(pa, pb, rng.split("head"))
            return ops.cross_entropy_logits(logits, labels[sel])
        raw = bank.take(sel)
        x = Tensor(self._encode(raw, mean, std))
        emb = encoder(x, rng.split("encoder"))
        if self.task == "autoencoder":
            mask = (~np.isnan(raw)).astype(np.float32)
            empty = mask.reshape(len(raw), -1).sum(axis=1) == 0
            if empty.any():
                raise ValueError("window with no observed samples cannot be "
                                 f"reconstruction-scored (batch rows {np.where(empty)[0]})")
            z_target = encode_missingness(raw, mean, std, use_flags=False)
            recon = head(emb)
            return ops.mse(recon, z_target, mask)
        pred = head(emb, rng.split("head"))
        return ops.mse(pred, targets[sel], np.ones_like(targets[sel]))
