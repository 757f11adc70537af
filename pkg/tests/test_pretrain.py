"""Pretraining tasks: pair sampling, target prep, checkpoint roundtrip."""

import numpy as np
import pytest

from wearml.features import DAILY_FEATURES, MINUTES_PER_DAY
from wearml.model import ModelConfig, SensorEncoder
from wearml.pretrain import (PRETRAIN_TASKS, PretrainedEncoder, Pretrainer,
                             sample_pairs)
from wearml.rng import RngStream

TINY = ModelConfig(window_minutes=180)


class FakeBank:
    """Window source over in-memory arrays, shaped like cohort.WindowBank."""

    def __init__(self, windows, examples, final=None, bmrs=None):
        self.windows = windows
        self._examples = examples
        self.final = final
        self.bmrs = bmrs

    def __len__(self):
        return len(self.windows)

    @property
    def examples(self):
        return list(self._examples)

    def take(self, indices):
        return self.windows[np.asarray(indices)]

    def final_days(self, indices):
        return self.final[np.asarray(indices)]

    def bmr(self, indices):
        return self.bmrs[np.asarray(indices)]


def make_bank(n=24, seed=0, n_users=4):
    gen = np.random.default_rng(seed)
    windows = gen.normal(0, 1, size=(n, 5, 180)).astype(np.float32)
    windows[gen.random(windows.shape) < 0.04] = np.nan
    examples = [(f"u{i % n_users}", 8 + 4 * (i // n_users)) for i in range(n)]
    final = np.abs(gen.normal(60, 10, size=(n, 5, MINUTES_PER_DAY))) \
        .astype(np.float32)
    final[:, 2:, :] = (final[:, 2:, :] > 60).astype(np.float32)
    bmrs = gen.uniform(1400, 1800, size=n)
    return FakeBank(windows, examples, final, bmrs)


NORM = (np.zeros(5, dtype=np.float32), np.ones(5, dtype=np.float32))


class TestSamplePairs:
    def test_positive_pairs_same_user_week_apart(self):
        examples = [("a", 8), ("a", 20), ("b", 9), ("b", 30), ("c", 15)]
        idx_a, idx_b, labels = sample_pairs(examples, 40, RngStream(0))
        users = [e[0] for e in examples]
        days = [e[1] for e in examples]
        for i, j, same in zip(idx_a, idx_b, labels):
            if same:
                assert users[i] == users[j]
                assert abs(days[i] - days[j]) >= 7
            else:
                assert users[i] != users[j]

    def test_half_positive(self):
        examples = [("a", 8), ("a", 20), ("b", 9), ("b", 30)]
        _, _, labels = sample_pairs(examples, 50, RngStream(1))
        assert labels.sum() == 25

    def test_deterministic(self):
        examples = [("a", 8), ("a", 20), ("b", 9), ("b", 30)]
        one = sample_pairs(examples, 20, RngStream(4))
        two = sample_pairs(examples, 20, RngStream(4))
        for x, y in zip(one, two):
            assert np.array_equal(x, y)

    def test_needs_a_gap_pair(self):
        with pytest.raises(ValueError):
            sample_pairs([("a", 8), ("a", 9), ("b", 10)], 10, RngStream(0))

    def test_needs_two_users(self):
        with pytest.raises(ValueError):
            sample_pairs([("a", 8), ("a", 20)], 10, RngStream(0))

    def test_wider_gap_respected(self):
        examples = [("a", 8), ("a", 20), ("a", 40), ("b", 9)]
        idx_a, idx_b, labels = sample_pairs(examples, 30, RngStream(2),
                                            min_gap=25)
        days = [e[1] for e in examples]
        for i, j, same in zip(idx_a, idx_b, labels):
            if same:
                assert abs(days[i] - days[j]) >= 25


class TestPretrainer:
    def test_unknown_task_rejected(self):
        with pytest.raises(ValueError):
            Pretrainer(TINY, "predict_weather")

    @pytest.mark.parametrize("task", PRETRAIN_TASKS)
    def test_fit_returns_encoder_with_history(self, task):
        bank = make_bank()
        trainer = Pretrainer(TINY, task, epochs=2, batch_size=12,
                             pairs_per_epoch=12, seed=3)
        pre = trainer.fit(bank, NORM, record_eval=True)
        assert pre.task == task
        assert len(pre.history) == 2
        for record in pre.history:
            assert np.isfinite(record["train_loss"])
            assert np.isfinite(record["eval_loss"])
        assert np.array_equal(pre.norm_mean, NORM[0])
        assert np.array_equal(pre.norm_std, NORM[1])

    def test_fit_deterministic(self):
        bank = make_bank()
        runs = [Pretrainer(TINY, "autoencoder", epochs=1, batch_size=12,
                           seed=6).fit(bank, NORM) for _ in range(2)]
        a = dict(runs[0].encoder.state_entries())
        b = dict(runs[1].encoder.state_entries())
        assert all(np.array_equal(a[k], b[k]) for k in a)

    def test_autoencoder_rejects_all_missing_window(self):
        bank = make_bank(n=12)
        bank.windows[3] = np.nan
        trainer = Pretrainer(TINY, "autoencoder", epochs=1, batch_size=12)
        with pytest.raises(ValueError):
            trainer.fit(bank, NORM)

    def test_domain_feature_targets_are_standardized(self):
        bank = make_bank(n=16)
        trainer = Pretrainer(TINY, "domain_features")
        targets = trainer._prepare_targets(bank, *NORM)
        assert targets.shape == (16, len(DAILY_FEATURES))
        assert np.allclose(targets.mean(axis=0), 0.0, atol=1e-5)
        spread = targets.std(axis=0)
        assert np.all((np.isclose(spread, 1.0, atol=1e-5))
                      | (np.isclose(spread, 0.0, atol=1e-5)))

    def test_identical_final_days_give_zero_targets(self):
        bank = make_bank(n=8)
        bank.final = np.repeat(bank.final[:1], 8, axis=0)
        bank.bmrs = np.full(8, 1500.0)
        targets = Pretrainer(TINY, "domain_features")._prepare_targets(
            bank, *NORM)
        assert np.allclose(targets, 0.0)


class TestCheckpointRoundtrip:
    def test_save_load_identity(self, tmp_path):
        bank = make_bank()
        pre = Pretrainer(TINY, "domain_features", epochs=1, batch_size=12,
                         seed=9).fit(bank, NORM, record_eval=True)
        path = tmp_path / "encoder.json"
        pre.save(path)
        back = PretrainedEncoder.load(path)
        assert back.task == "domain_features"
        assert back.config == TINY
        assert back.history == pre.history
        old = dict(pre.encoder.state_entries())
        new = dict(back.encoder.state_entries())
        assert old.keys() == new.keys()
        for key in old:
            assert np.array_equal(old[key], new[key]), key
        assert np.array_equal(back.norm_mean, pre.norm_mean)

    def test_loaded_encoder_produces_identical_embeddings(self, tmp_path):
        bank = make_bank(n=12)
        pre = Pretrainer(TINY, "same_user", epochs=1, batch_size=12,
                         pairs_per_epoch=8, seed=4).fit(bank, NORM)
        pre.save(tmp_path / "enc.json")
        back = PretrainedEncoder.load(tmp_path / "enc.json")
        from wearml.model import encode_missingness
        from wearml.tensor import Tensor
        x = Tensor(encode_missingness(bank.take(np.arange(6)), *NORM))
        pre.encoder.eval()
        back.encoder.eval()
        a = pre.encoder(x, RngStream(0)).data
        b = back.encoder(x, RngStream(0)).data
        assert np.array_equal(a, b)
