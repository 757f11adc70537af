"""Minute-level sensor encoder and the window classifier estimator.

The encoder is a strided convolution stack (each layer conv -> batch
norm -> relu) that shortens the minute axis into a token sequence,
followed by post-norm transformer blocks over those tokens and a final
layer norm. A window enters as z-scored, zero-filled stream values,
optionally doubled with per-stream missingness flags.

WindowClassifier wraps the encoder with a mean-pool head for binary
labels and follows the usual estimator conventions (fit /
predict_proba / get_params). With freeze_encoder=True the encoder
stays in evaluation mode, its parameters leave the optimizer, and
training reduces to the head on cached embeddings, so fine-tuning a
pretrained encoder is cheap.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin

from . import ops
from .features import MINUTES_PER_DAY, STREAMS
from .layers import (BatchNorm1d, Conv1d, ConvTranspose1d, LayerNorm, Linear,
                     Module, TransformerBlock)
from .optim import Adam
from .rng import RngStream
from .tensor import Tape, Tensor
from .validation import check_binary_labels, check_consistent_length


@dataclass(frozen=True)
class ModelConfig:
    window_minutes: int = 7 * MINUTES_PER_DAY
    n_streams: int = len(STREAMS)
    channels: tuple = (8, 16, 32)
    kernels: tuple = (5, 5, 2)
    strides: tuple = (5, 3, 2)
    transformer_blocks: int = 2
    attention_heads: int = 4
    ff_multiplier: int = 4
    dropout: float = 0.4
    use_missing_flags: bool = True

    @property
    def d_model(self) -> int:
        return self.channels[-1]

    @property
    def input_channels(self) -> int:
        return self.n_streams * 2 if self.use_missing_flags else self.n_streams

    def conv_lengths(self) -> list:
        """Minute-axis length before each conv layer, then the token count."""
        lengths = [self.window_minutes]
        for k, s in zip(self.kernels, self.strides):
            lengths.append(ops.conv1d_output_length(lengths[-1], k, s))
        return lengths

    @property
    def seq_len(self) -> int:
        return self.conv_lengths()[-1]


def fast_config(**overrides) -> ModelConfig:
    """Single-day windows; same architecture, shorter token sequence."""
    return ModelConfig(window_minutes=MINUTES_PER_DAY, **overrides)


def encode_missingness(batch: np.ndarray, mean: np.ndarray, std: np.ndarray,
                       use_flags: bool = True) -> np.ndarray:
    """Raw (N, S, L) windows -> (N, S or 2S, L) float32 model input.

    Values are z-scored with the supplied per-stream stats and missing
    samples become exactly 0 (the training mean). With flags, channel
    S+i is 1.0 where stream i is missing.
    """
    batch = np.asarray(batch, dtype=np.float32)
    if batch.ndim != 3 or batch.shape[1] != len(mean):
        raise ValueError(f"expected (N, {len(mean)}, L) batch, got {batch.shape}")
    missing = np.isnan(batch)
    z = (batch - mean[None, :, None]) / std[None, :, None]
    z[missing] = 0.0
    if not use_flags:
        return z
    return np.concatenate([z, missing.astype(np.float32)], axis=1)


class SensorEncoder(Module):
    """Conv stack then transformer blocks; returns per-token embeddings."""

    def __init__(self, config: ModelConfig, rng: RngStream):
        super().__init__()
        self.config = config
        in_ch = config.input_channels
        for i, (c, k, s) in enumerate(zip(config.channels, config.kernels,
                                          config.strides)):
            setattr(self, f"conv{i}", Conv1d(in_ch, c, k, s, rng.split(f"conv{i}")))
            setattr(self, f"bn{i}", BatchNorm1d(c))
            in_ch = c
        self.positional = self.add_param(
            "positional",
            (0.02 * rng.split("positional").normal(size=(config.seq_len,
                                                         config.d_model))
             ).astype(np.float32))
        for i in range(config.transformer_blocks):
            setattr(self, f"block{i}",
                    TransformerBlock(config.d_model, config.attention_heads,
                                     config.ff_multiplier * config.d_model,
                                     config.dropout, rng.split(f"block{i}")))
        self.final_norm = LayerNorm(config.d_model)

    def conv_stack(self, x: Tensor) -> Tensor:
        """(N, C_in, L) -> (N, d_model, seq_len)."""
        for i in range(len(self.config.channels)):
            x = getattr(self, f"conv{i}")(x)
            x = getattr(self, f"bn{i}")(x)
            x = ops.relu(x)
        return x

    def __call__(self, x: Tensor, rng: RngStream) -> Tensor:
        x = self.conv_stack(x)
        h = ops.add(ops.transpose(x, (0, 2, 1)), self.positional)
        for i in range(self.config.transformer_blocks):
            h = getattr(self, f"block{i}")(h, rng.split(f"block{i}"))
        return self.final_norm(h)


class ClassifierHead(Module):
    """Mean-pool tokens, dropout, linear to 2 logits."""

    def __init__(self, d_model: int, dropout: float, rng: RngStream):
        super().__init__()
        self.dropout_p = dropout
        self.fc = Linear(d_model, 2, rng.split("fc"))

    def __call__(self, embeddings: Tensor, rng: RngStream) -> Tensor:
        return self.from_pooled(ops.mean(embeddings, axis=1), rng)

    def from_pooled(self, pooled: Tensor, rng: RngStream) -> Tensor:
        h = ops.dropout(pooled, self.dropout_p, rng.split("drop"), self.training)
        return self.fc(h)


class PairHead(Module):
    """Two pooled embeddings, concatenated, to 2 logits."""

    def __init__(self, d_model: int, dropout: float, rng: RngStream):
        super().__init__()
        self.dropout_p = dropout
        self.fc = Linear(2 * d_model, 2, rng.split("fc"))

    def __call__(self, pooled_a: Tensor, pooled_b: Tensor, rng: RngStream) -> Tensor:
        h = ops.concat([pooled_a, pooled_b], axis=1)
        h = ops.dropout(h, self.dropout_p, rng.split("drop"), self.training)
        return self.fc(h)


class RegressionHead(Module):
    """Mean-pool tokens, dropout, linear to a feature vector."""

    def __init__(self, d_model: int, out_dim: int, dropout: float, rng: RngStream):
        super().__init__()
        self.dropout_p = dropout
        self.fc = Linear(d_model, out_dim, rng.split("fc"))

    def __call__(self, embeddings: Tensor, rng: RngStream) -> Tensor:
        pooled = ops.mean(embeddings, axis=1)
        h = ops.dropout(pooled, self.dropout_p, rng.split("drop"), self.training)
        return self.fc(h)


class Reconstructor(Module):
    """Token embeddings back to per-minute stream values.

    Mirrors the conv stack with transposed convolutions. Strided
    convolutions drop trailing samples whenever (L - K) % S != 0, so
    each mirror layer takes the output padding needed to restore its
    encoder counterpart's exact input length.
    """

    def __init__(self, config: ModelConfig, rng: RngStream):
        super().__init__()
        self.config = config
        d = config.d_model
        self.project = Linear(d, d, rng.split("project"))
        lengths = config.conv_lengths()
        chans = (config.n_streams,) + tuple(config.channels)
        n = len(config.channels)
        for j, i in enumerate(reversed(range(n))):
            k, s = config.kernels[i], config.strides[i]
            source, target = lengths[i + 1], lengths[i]
            pad = target - ((source - 1) * s + k)
            deconv = ConvTranspose1d(chans[i + 1], chans[i], k, s,
                                     rng.split(f"deconv{j}"), output_padding=pad)
            setattr(self, f"deconv{j}", deconv)
            if i > 0:
                setattr(self, f"debn{j}", BatchNorm1d(chans[i]))

    def __call__(self, embeddings: Tensor) -> Tensor:
        h = self.project(embeddings)
        h = ops.transpose(h, (0, 2, 1))
        n = len(self.config.channels)
        for j in range(n):
            h = getattr(self, f"deconv{j}")(h)
            if j < n - 1:
                h = getattr(self, f"debn{j}")(h)
                h = ops.relu(h)
        return h


def stratified_holdout(y: np.ndarray, fraction: float, rng: RngStream):
    """Per-class validation split; returns (train_idx, val_idx).

    A plain random holdout can swallow every positive when there are
    only a handful, leaving nothing to fit. Splitting within each
    class keeps at least one example of any present class in training.
    """
    val_parts = []
    for cls in np.unique(y):
        idx = np.flatnonzero(y == cls)
        idx = idx[rng.permutation(len(idx))]
        n_val = int(round(fraction * len(idx)))
        n_val = min(n_val, len(idx) - 1)
        if n_val > 0:
            val_parts.append(idx[:n_val])
    if not val_parts:
        return np.arange(len(y)), np.array([], dtype=np.int64)
    val_idx = np.sort(np.concatenate(val_parts))
    train_idx = np.setdiff1d(np.arange(len(y)), val_idx)
    return train_idx, val_idx


class WindowClassifier(BaseEstimator, ClassifierMixin):
    """Binary classifier over raw sensor windows.

    fit accepts either an (N, S, L) float array with NaN for missing
    samples or any source object exposing __len__ and
    take(indices) -> (n, S, L); batches are materialized lazily either
    way. Normalization statistics come from the pretrained encoder
    when one is supplied, from the norm_stats argument otherwise, or
    failing that are computed from the training windows.
    """

    def __init__(self, config: ModelConfig | None = None, epochs: int = 10,
                 batch_size: int = 32, lr: float = 5e-4, val_fraction: float = 0.1,
                 patience: int = 2, pos_weight: float | None = None,
                 freeze_encoder: bool = False, pretrained=None,
                 norm_stats=None, seed: int = 0):
        self.config = config
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.val_fraction = val_fraction
        self.patience = patience
        self.pos_weight = pos_weight
        self.freeze_encoder = freeze_encoder
        self.pretrained = pretrained
        self.norm_stats = norm_stats
        self.seed = seed

    # -- fitting -----------------------------------------------------------

    def fit(self, X, y):
        source = _as_source(X)
        y = check_binary_labels(y)
        check_consistent_length(range(len(source)), y)
        rng = RngStream(self.seed)

        if self.pretrained is not None:
            cfg = self.pretrained.config
            self.norm_mean_ = self.pretrained.norm_mean.copy()
            self.norm_std_ = self.pretrained.norm_std.copy()
        else:
            cfg = self.config if self.config is not None else ModelConfig()
            if self.freeze_encoder:
                raise ValueError("freeze_encoder requires a pretrained encoder")
            if self.norm_stats is not None:
                self.norm_mean_, self.norm_std_ = (
                    np.asarray(self.norm_stats[0], dtype=np.float32),
                    np.asarray(self.norm_stats[1], dtype=np.float32))
            else:
                self.norm_mean_, self.norm_std_ = _stats_from_source(source)
        self.config_ = cfg

        self.encoder_ = SensorEncoder(cfg, rng.split("encoder"))
        if self.pretrained is not None:
            self.encoder_.load_state(dict(self.pretrained.encoder.state_entries()))
        self.head_ = ClassifierHead(cfg.d_model, cfg.dropout, rng.split("head"))
        self.classes_ = np.array([0, 1])

        n = len(source)
        if n >= 10 and self.val_fraction > 0:
            train_idx, val_idx = stratified_holdout(y, self.val_fraction,
                                                    rng.split("val-split"))
        else:
            train_idx, val_idx = np.arange(n), np.array([], dtype=np.int64)
        n_val = len(val_idx)
        if len(train_idx) == 0:
            raise ValueError("no training examples left after validation split")

        sample_weight = None
        if self.pos_weight is not None:
            sample_weight = np.where(y == 1, float(self.pos_weight), 1.0)

        if self.freeze_encoder:
            self.encoder_.eval()
            params = self.head_.parameters()
            cache = self._pooled_embeddings(source, rng)
        else:
            params = self.encoder_.parameters() + self.head_.parameters()
            cache = None
        optimizer = Adam(params, lr=self.lr)

        best = None
        best_val = np.inf
        patience_left = self.patience
        self.history_ = []
        for epoch in range(self.epochs):
            erng = rng.split(f"epoch{epoch}")
            perm = erng.permutation(len(train_idx))
            epoch_losses = []
            for b0 in range(0, len(perm), self.batch_size):
                idx = train_idx[perm[b0:b0 + self.batch_size]]
                brng = erng.split(f"batch{b0}")
                loss = self._step(source, y, idx, sample_weight, cache,
                                  optimizer, brng)
                epoch_losses.append(loss)
            record = {"epoch": epoch, "train_loss": float(np.mean(epoch_losses))}
            if n_val:
                val_loss = self._eval_loss(source, y, val_idx, sample_weight, cache)
                record["val_loss"] = val_loss
                if val_loss < best_val - 1e-5:
                    best_val = val_loss
                    best = [p.data.copy() for p in params]
                    patience_left = self.patience
                else:
                    patience_left -= 1
            self.history_.append(record)
            if n_val and patience_left < 0:
                break
        if best is not None:
            for p, data in zip(params, best):
                p.data = data
        return self

    def _step(self, source, y, idx, sample_weight, cache, optimizer, rng):
        targets = y[idx]
        weights = sample_weight[idx] if sample_weight is not None else None
        optimizer.zero_grad()
        with Tape() as tape:
            if cache is not None:
                pooled = Tensor(cache[idx])
                logits = self.head_.from_pooled(pooled, rng.split("head"))
            else:
                x = Tensor(self._encode(source.take(idx)))
                emb = self.encoder_(x, rng.split("encoder"))
                logits = self.head_(emb, rng.split("head"))
            loss = ops.cross_entropy_logits(logits, targets, weights)
        tape.backward(loss)
        optimizer.step()
        return float(loss.data)

    def _eval_loss(self, source, y, idx, sample_weight, cache) -> float:
        self.encoder_.eval()
        self.head_.eval()
        total, wsum = 0.0, 0.0
        rng = RngStream(0)
        for b0 in range(0, len(idx), self.batch_size):
            sel = idx[b0:b0 + self.batch_size]
            if cache is not None:
                logits = self.head_.from_pooled(Tensor(cache[sel]), rng)
            else:
                x = Tensor(self._encode(source.take(sel)))
                logits = self.head_(self.encoder_(x, rng), rng)
            w = sample_weight[sel] if sample_weight is not None else np.ones(len(sel))
            loss = ops.cross_entropy_logits(logits, y[sel], w)
            total += float(loss.data) * w.sum()
            wsum += w.sum()
        if not self.freeze_encoder:
            self.encoder_.train()
        self.head_.train()
        return float(total / wsum)

    def _encode(self, raw: np.ndarray) -> np.ndarray:
        return encode_missingness(raw, self.norm_mean_, self.norm_std_,
                                  self.config_.use_missing_flags)

    def _pooled_embeddings(self, source, rng, batch_size: int | None = None) -> np.ndarray:
        """Eval-mode mean-pooled embeddings for every index of source."""
        bs = batch_size or self.batch_size
        out = np.empty((len(source), self.config_.d_model), dtype=np.float32)
        for b0 in range(0, len(source), bs):
            idx = np.arange(b0, min(b0 + bs, len(source)))
            x = Tensor(self._encode(source.take(idx)))
            emb = self.encoder_(x, rng)
            out[idx] = ops.mean(emb, axis=1).data
        return out

    # -- inference ---------------------------------------------------------

    def predict_proba(self, X) -> np.ndarray:
        source = _as_source(X)
        self.encoder_.eval()
        self.head_.eval()
        rng = RngStream(0)
        out = np.empty((len(source), 2), dtype=np.float64)
        for b0 in range(0, len(source), self.batch_size):
            idx = np.arange(b0, min(b0 + self.batch_size, len(source)))
            x = Tensor(self._encode(source.take(idx)))
            emb = self.encoder_(x, rng)
            logits = self.head_(emb, rng)
            out[idx] = ops.softmax(logits, axis=-1).data
        return out

    def predict(self, X) -> np.ndarray:
        return (self.predict_proba(X)[:, 1] >= 0.5).astype(np.int64)

    def decision_scores(self, X) -> np.ndarray:
        return self.predict_proba(X)[:, 1]

    # -- persistence -------------------------------------------------------

    def state_entries(self):
        yield "norm.mean", self.norm_mean_
        yield "norm.std", self.norm_std_
        yield from self.encoder_.state_entries("encoder.")
        yield from self.head_.state_entries("head.")

    def restore_state(self, state: dict) -> "WindowClassifier":
        """Rebuild a fitted classifier from state_entries output."""
        cfg = self.config if self.config is not None else ModelConfig()
        self.config_ = cfg
        self.norm_mean_ = np.asarray(state["norm.mean"], dtype=np.float32)
        self.norm_std_ = np.asarray(state["norm.std"], dtype=np.float32)
        rng = RngStream(self.seed)
        self.encoder_ = SensorEncoder(cfg, rng.split("encoder"))
        self.encoder_.load_state({k[len("encoder."):]: v
                                  for k, v in state.items()
                                  if k.startswith("encoder.")})
        self.head_ = ClassifierHead(cfg.d_model, cfg.dropout, rng.split("head"))
        self.head_.load_state({k[len("head."):]: v for k, v in state.items()
                               if k.startswith("head.")})
        self.classes_ = np.array([0, 1])
        self.encoder_.eval()
        self.head_.eval()
        return self


def _stats_from_source(source):
    """Per-stream mean/std over observed samples of all source windows."""
    s = np.zeros(len(STREAMS))
    sq = np.zeros(len(STREAMS))
    count = np.zeros(len(STREAMS))
    for b0 in range(0, len(source), 64):
        idx = np.arange(b0, min(b0 + 64, len(source)))
        raw = source.take(idx).astype(np.float64)
        obs = ~np.isnan(raw)
        filled = np.where(obs, raw, 0.0)
        s += filled.sum(axis=(0, 2))
        sq += (filled ** 2).sum(axis=(0, 2))
        count += obs.sum(axis=(0, 2))
    if (count == 0).any():
        raise ValueError("a stream has no observed samples in the training windows")
    mean = s / count
    std = np.sqrt(np.maximum(sq / count - mean ** 2, 0.0))
    std = np.where(std > 1e-8, std, 1.0)
    return mean.astype(np.float32), std.astype(np.float32)


class _ArraySource:
    def __init__(self, arr: np.ndarray):
        arr = np.asarray(arr, dtype=np.float32)
        if arr.ndim != 3:
            raise ValueError(f"windows must be (N, streams, minutes), got {arr.shape}")
        self.arr = arr

    def __len__(self) -> int:
        return len(self.arr)

    def take(self, indices) -> np.ndarray:
        return self.arr[np.asarray(indices)]


def _as_source(X):
    if hasattr(X, "take") and hasattr(X, "__len__") and not isinstance(X, np.ndarray):
        return X
    return _ArraySource(X)
