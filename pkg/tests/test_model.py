"""Encoder/classifier contracts: shapes, freezing, persistence, sklearn API."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from sklearn.base import clone

from wearml.model import (ModelConfig, Reconstructor, SensorEncoder,
                          WindowClassifier, encode_missingness, fast_config,
                          stratified_holdout)
from wearml.pretrain import PretrainedEncoder
from wearml.rng import RngStream
from wearml.tensor import Tensor

TINY = ModelConfig(window_minutes=180)   # tokens: 180 -> 36 -> 11 -> 5


def synthetic_windows(n, config, seed, shift=3.0, missing_frac=0.05):
    """Separable toy set: positives carry a level shift on stream 0."""
    gen = np.random.default_rng(seed)
    X = gen.normal(0.0, 1.0, size=(n, 5, config.window_minutes)).astype(np.float32)
    y = (np.arange(n) % 2).astype(np.int64)
    X[y == 1, 0, :] += shift
    holes = gen.random(X.shape) < missing_frac
    X[holes] = np.nan
    return X, y


@pytest.fixture(scope="module")
def fitted():
    X, y = synthetic_windows(48, TINY, seed=0)
    clf = WindowClassifier(config=TINY, epochs=20, batch_size=16, lr=3e-3,
                           seed=1)
    return clf.fit(X, y), X, y


class TestConfigArithmetic:
    def test_week_window_token_counts(self):
        assert ModelConfig().conv_lengths() == [10080, 2016, 671, 335]
        assert ModelConfig().seq_len == 335

    def test_day_window_token_counts(self):
        assert fast_config().conv_lengths() == [1440, 288, 95, 47]

    def test_channel_plan(self):
        cfg = ModelConfig()
        assert cfg.d_model == 32
        assert cfg.input_channels == 10
        assert ModelConfig(use_missing_flags=False).input_channels == 5


class TestEncodeMissingness:
    def test_zscore_and_flags(self):
        batch = np.array([[[10.0, np.nan], [4.0, 6.0]]])
        mean = np.array([8.0, 5.0], dtype=np.float32)
        std = np.array([2.0, 0.5], dtype=np.float32)
        out = encode_missingness(batch, mean, std)
        assert out.shape == (1, 4, 2)
        assert out[0, 0, 0] == pytest.approx(1.0)    # (10-8)/2
        assert out[0, 0, 1] == 0.0                   # missing -> train mean
        assert out[0, 1, 0] == pytest.approx(-2.0)   # (4-5)/0.5
        assert np.array_equal(out[0, 2], [0.0, 1.0])
        assert np.array_equal(out[0, 3], [0.0, 0.0])

    def test_without_flags(self):
        batch = np.zeros((2, 2, 3))
        out = encode_missingness(batch, np.zeros(2), np.ones(2), use_flags=False)
        assert out.shape == (2, 2, 3)

    def test_rejects_wrong_stream_count(self):
        with pytest.raises(ValueError):
            encode_missingness(np.zeros((1, 3, 4)), np.zeros(2), np.ones(2))


class TestForwardShapes:
    def test_token_sequence(self):
        enc = SensorEncoder(TINY, RngStream(0))
        enc.eval()
        x = Tensor(np.zeros((3, 10, 180), dtype=np.float32))
        conv = enc.conv_stack(x)
        assert conv.data.shape == (3, 32, TINY.seq_len)
        emb = enc(x, RngStream(1))
        assert emb.data.shape == (3, TINY.seq_len, 32)

    def test_reconstruction_restores_window_length(self):
        for cfg in (TINY, fast_config()):
            recon = Reconstructor(cfg, RngStream(2))
            recon.eval()
            emb = Tensor(np.zeros((2, cfg.seq_len, cfg.d_model),
                                  dtype=np.float32))
            out = recon(emb)
            assert out.data.shape == (2, 5, cfg.window_minutes)


class TestStratifiedHoldout:
    def test_lone_positive_stays_in_training(self):
        y = np.array([0] * 9 + [1])
        train_idx, val_idx = stratified_holdout(y, 0.1, RngStream(0))
        assert 9 in train_idx
        assert len(val_idx) == 1
        assert y[val_idx].sum() == 0

    @given(n0=st.integers(2, 40), n1=st.integers(1, 10),
           frac=st.floats(0.05, 0.4), seed=st.integers(0, 50))
    @settings(max_examples=40, deadline=None)
    def test_partition_keeps_every_class(self, n0, n1, frac, seed):
        y = np.array([0] * n0 + [1] * n1)
        train_idx, val_idx = stratified_holdout(y, frac, RngStream(seed))
        merged = np.sort(np.concatenate([train_idx, val_idx]))
        assert np.array_equal(merged, np.arange(len(y)))
        assert len(np.intersect1d(train_idx, val_idx)) == 0
        assert set(np.unique(y[train_idx])) == {0, 1}


class TestFitPredict:
    def test_learns_separable_data(self, fitted):
        clf, X, y = fitted
        scores = clf.decision_scores(X)
        assert scores[y == 1].mean() > scores[y == 0].mean() + 0.2

    def test_probabilities_well_formed(self, fitted):
        clf, X, _ = fitted
        proba = clf.predict_proba(X[:8])
        assert proba.shape == (8, 2)
        assert np.all(proba >= 0) and np.all(proba <= 1)
        assert np.allclose(proba.sum(axis=1), 1.0)
        assert np.array_equal(clf.predict(X[:8]),
                              (proba[:, 1] >= 0.5).astype(np.int64))

    def test_inference_is_deterministic(self, fitted):
        clf, X, _ = fitted
        assert np.array_equal(clf.predict_proba(X[:6]), clf.predict_proba(X[:6]))

    def test_classes_attribute(self, fitted):
        clf, _, _ = fitted
        assert np.array_equal(clf.classes_, [0, 1])

    def test_seed_reproducibility(self):
        X, y = synthetic_windows(24, TINY, seed=3)
        a = WindowClassifier(config=TINY, epochs=2, batch_size=12, seed=5).fit(X, y)
        b = WindowClassifier(config=TINY, epochs=2, batch_size=12, seed=5).fit(X, y)
        c = WindowClassifier(config=TINY, epochs=2, batch_size=12, seed=6).fit(X, y)
        assert np.array_equal(a.predict_proba(X), b.predict_proba(X))
        assert not np.array_equal(a.predict_proba(X), c.predict_proba(X))

    def test_history_recorded(self, fitted):
        clf, _, _ = fitted
        assert len(clf.history_) >= 1
        assert {"epoch", "train_loss", "val_loss"} <= set(clf.history_[0])

    def test_pos_weight_fit_runs(self):
        X, y = synthetic_windows(20, TINY, seed=4)
        clf = WindowClassifier(config=TINY, epochs=1, pos_weight=5.0,
                               val_fraction=0.0, seed=0).fit(X, y)
        assert clf.predict_proba(X).shape == (20, 2)


class TestValidation:
    def test_rejects_nonbinary_labels(self):
        X, _ = synthetic_windows(8, TINY, seed=0)
        with pytest.raises(ValueError):
            WindowClassifier(config=TINY, epochs=1).fit(X, np.arange(8))

    def test_rejects_flat_windows(self):
        with pytest.raises(ValueError):
            WindowClassifier(config=TINY, epochs=1).fit(
                np.zeros((8, 180)), np.zeros(8, dtype=np.int64))

    def test_rejects_length_mismatch(self):
        X, _ = synthetic_windows(8, TINY, seed=0)
        with pytest.raises(ValueError):
            WindowClassifier(config=TINY, epochs=1).fit(X, np.zeros(5, dtype=np.int64))

    def test_freeze_requires_pretrained(self):
        X, y = synthetic_windows(8, TINY, seed=0)
        with pytest.raises(ValueError):
            WindowClassifier(config=TINY, freeze_encoder=True, epochs=1).fit(X, y)

    def test_predict_before_fit(self):
        X, _ = synthetic_windows(4, TINY, seed=0)
        with pytest.raises(AttributeError):
            WindowClassifier(config=TINY).predict_proba(X)


class TestFrozenEncoder:
    def test_fit_never_touches_encoder_weights(self):
        pre = PretrainedEncoder(
            config=TINY, encoder=SensorEncoder(TINY, RngStream(7)),
            norm_mean=np.zeros(5, dtype=np.float32),
            norm_std=np.ones(5, dtype=np.float32), task="same_user")
        before = {k: v.copy() for k, v in pre.encoder.state_entries()}
        X, y = synthetic_windows(24, TINY, seed=8)
        clf = WindowClassifier(freeze_encoder=True, pretrained=pre, epochs=3,
                               batch_size=12, seed=2).fit(X, y)
        after = dict(clf.encoder_.state_entries())
        assert before.keys() == after.keys()
        for key, value in before.items():
            assert np.array_equal(value, after[key]), key
        assert np.array_equal(clf.norm_mean_, pre.norm_mean)

    def test_norm_stats_come_from_pretrained(self):
        pre = PretrainedEncoder(
            config=TINY, encoder=SensorEncoder(TINY, RngStream(7)),
            norm_mean=np.full(5, 2.5, dtype=np.float32),
            norm_std=np.full(5, 1.5, dtype=np.float32), task="autoencoder")
        X, y = synthetic_windows(12, TINY, seed=9)
        clf = WindowClassifier(pretrained=pre, epochs=1, val_fraction=0.0,
                               seed=0).fit(X, y)
        assert np.array_equal(clf.norm_mean_, np.full(5, 2.5, dtype=np.float32))
        assert np.array_equal(clf.norm_std_, np.full(5, 1.5, dtype=np.float32))


class TestPersistence:
    def test_state_roundtrip_reproduces_scores(self, fitted):
        clf, X, _ = fitted
        state = {k: v.copy() for k, v in clf.state_entries()}
        twin = WindowClassifier(config=TINY, seed=clf.seed).restore_state(state)
        assert np.array_equal(twin.predict_proba(X[:10]),
                              clf.predict_proba(X[:10]))


class TestEstimatorConventions:
    def test_get_set_params(self):
        clf = WindowClassifier(config=TINY, lr=1e-3)
        params = clf.get_params()
        assert params["lr"] == 1e-3
        assert params["config"] is TINY
        clf.set_params(epochs=3)
        assert clf.epochs == 3

    def test_clone(self):
        clf = WindowClassifier(config=TINY, epochs=4, seed=11)
        twin = clone(clf)
        assert twin.get_params() == clf.get_params()
