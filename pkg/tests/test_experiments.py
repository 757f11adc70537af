"""Experiment drivers at a micro budget: structure, audits, determinism."""

import json
from dataclasses import replace

import numpy as np
import pandas as pd
import pytest

from wearml.datagen import (GenConfig, generate_cohort, primary_config,
                            transfer_config)
from wearml.experiments import (ExperimentConfig, _cap_indices, _subset_any,
                                _subset_with_positives, _temporal_frames,
                                cohort_digest, experiment1, experiment2,
                                experiment3, experiment4, experiment_config,
                                make_run_record, report_json, write_outputs)
from wearml.rng import RngStream

MICRO = dict(epochs=2, head_epochs=6, pretrain_epochs=1, pretrain_windows=120,
             max_train_windows=120, max_eval_windows=240,
             fold_train_windows=80, fold_eval_windows=160, n_folds=3)


@pytest.fixture(scope="module")
def primary():
    return generate_cohort(primary_config("fast"), seed=7)


@pytest.fixture(scope="module")
def transfer():
    return generate_cohort(transfer_config("fast"), seed=7)


class TestConfig:
    def test_profiles(self):
        full = experiment_config("full")
        fast = experiment_config("fast")
        assert full.window_days == 7
        assert fast.window_days == 1
        assert fast.pretrain_epochs < full.pretrain_epochs

    def test_overrides_and_seed(self):
        cfg = experiment_config("fast", seed=3, n_folds=4)
        assert cfg.seed == 3
        assert cfg.n_folds == 4

    def test_unknown_profile(self):
        with pytest.raises(ValueError):
            experiment_config("leisurely")


class TestSubsetting:
    def test_positives_always_survive_cap(self):
        df = pd.DataFrame({"user_id": "u", "day_index": np.arange(500),
                           "flu_positive": ([1] * 30 + [0] * 470)})
        out = _subset_with_positives(df, ("flu_positive",), 100,
                                     RngStream(0).split("s"))
        assert out["flu_positive"].sum() == 30
        assert len(out) == 100

    def test_cap_keeps_negative_floor(self):
        df = pd.DataFrame({"user_id": "u", "day_index": np.arange(300),
                           "flu_positive": ([1] * 280 + [0] * 20)})
        out = _subset_with_positives(df, ("flu_positive",), 100,
                                     RngStream(0).split("s"))
        # positives exceed the cap: all kept, plus up to 50 negatives
        assert out["flu_positive"].sum() == 280
        assert len(out) == 300

    def test_under_cap_untouched(self):
        df = pd.DataFrame({"user_id": "u", "day_index": np.arange(10),
                           "flu_positive": 0})
        out = _subset_with_positives(df, ("flu_positive",), 100,
                                     RngStream(0).split("s"))
        assert len(out) == 10

    def test_subset_any_cap_and_determinism(self):
        df = pd.DataFrame({"user_id": "u", "day_index": np.arange(200)})
        a = _subset_any(df, 50, RngStream(1).split("s"))
        b = _subset_any(df, 50, RngStream(1).split("s"))
        assert len(a) == 50
        assert a.equals(b)

    def test_cap_indices_keeps_positives(self):
        y = np.array([0] * 90 + [1] * 10)
        idx = np.arange(100)
        out = _cap_indices(idx, y, 30, RngStream(2).split("c"))
        assert set(np.flatnonzero(y == 1)) <= set(out)

    def test_temporal_frames_empty_side(self):
        cohort = generate_cohort(GenConfig(name="short", n_users=2, days=14),
                                 seed=0)
        with pytest.raises(ValueError):
            _temporal_frames(cohort, experiment_config("full", seed=0))


class TestReportPlumbing:
    def test_report_json_handles_numpy_scalars(self):
        text = report_json({"a": np.float64(1.5), "b": np.int32(2),
                            "c": np.array([1, 2]), "d": np.bool_(True)})
        assert json.loads(text) == {"a": 1.5, "b": 2, "c": [1, 2], "d": True}

    def test_report_json_sorted_and_newline_terminated(self):
        text = report_json({"b": 1, "a": 2})
        assert text.index('"a"') < text.index('"b"')
        assert text.endswith("\n")

    def test_cohort_digest_distinguishes_cohorts(self, primary, transfer):
        assert cohort_digest(primary) != cohort_digest(transfer)
        assert cohort_digest(primary) == cohort_digest(primary)

    def test_write_outputs(self, tmp_path):
        record = make_run_record(experiment_config("fast"), [], 1.23)
        path = write_outputs(tmp_path, "exp0", {"x": 1}, record,
                             extras=[("exp0_extra.csv", "a,b\n1,2\n")])
        assert path.read_text() == '{\n  "x": 1\n}\n'
        assert (tmp_path / "exp0_run_record.json").exists()
        assert (tmp_path / "exp0_extra.csv").read_text() == "a,b\n1,2\n"
        assert record["wall_clock_seconds"] == 1.23
        assert len(record["config_digest"]) == 64


class TestExperiment1:
    def test_report_structure(self, primary, tmp_path):
        config = experiment_config("fast", seed=11,
                                   tasks=("flu_symptoms", "severe_fatigue"),
                                   **MICRO)
        report = experiment1(primary, config, out_dir=tmp_path)
        assert report["experiment"] == "exp1"
        assert report["split_day"] == 16
        scored = [t for t, r in report["tasks"].items() if "skipped" not in r]
        assert "flu_symptoms" in scored
        for task in scored:
            entry = report["tasks"][task]
            assert set(entry["models"]) == set(config.models)
            for m in config.models:
                assert 0.0 <= entry["models"][m]["roc_auc"] <= 1.0
                assert 0.0 <= entry["models"][m]["pr_auc"] <= 1.0
            assert set(entry["delong_vs_full_model"]) == {
                "gbdt", "cnn", "cnn_transformer"}
            for p in entry["delong_vs_full_model"].values():
                assert 0.0 < p <= 1.0
        if len(scored) >= 2:
            cd = report["critical_difference"]
            assert cd["tasks"] == scored
        assert (tmp_path / "exp1_report.json").exists()
        assert (tmp_path / "exp1_run_record.json").exists()
        assert (tmp_path / "exp1_pretrained.json").exists()

    def test_single_class_tasks_are_skipped(self):
        quiet = generate_cohort(GenConfig(name="quiet", n_users=8, days=32,
                                          episode_prob=0.0), seed=1)
        config = experiment_config("fast", seed=1, models=("gbdt",), **MICRO)
        report = experiment1(quiet, config)
        for task, entry in report["tasks"].items():
            assert entry == {
                "skipped": "needs both classes on both sides of the split"}
        assert report["critical_difference"] is None


class TestExperiment2:
    def test_four_runs_with_frozen_encoders(self, primary, tmp_path):
        config = experiment_config("fast", seed=11, **MICRO)
        report = experiment2(primary, config, out_dir=tmp_path)
        assert set(report["runs"]) == {"same_user", "autoencoder",
                                       "domain_features", "none"}
        assert report["task"] == "flu_symptoms"
        for name, run in report["runs"].items():
            assert run["frozen_encoder_unchanged"] is True
            assert 0.0 <= run["roc_auc"] <= 1.0
            expected = 0 if name == "none" else config.pretrain_epochs
            assert run["pretrain_epochs"] == expected
            for curve in run["curves"].values():
                assert (tmp_path / curve).exists()
        # the control must not leave a checkpoint
        assert not (tmp_path / "exp2_pretrained_none.json").exists()
        assert (tmp_path / "exp2_pretrained_autoencoder.json").exists()

    def test_curve_files_parse(self, tmp_path, primary):
        config = experiment_config("fast", seed=11, **MICRO)
        experiment2(primary, config, out_dir=tmp_path)
        roc = pd.read_csv(tmp_path / "exp2_roc_none.csv")
        assert list(roc.columns) == ["fpr", "tpr", "threshold"]
        assert roc["fpr"].is_monotonic_increasing
        pr = pd.read_csv(tmp_path / "exp2_pr_none.csv")
        assert list(pr.columns) == ["recall", "precision", "threshold"]


class TestExperiment3:
    def test_fold_report(self, primary, tmp_path):
        config = experiment_config("fast", seed=11, **MICRO)
        report = experiment3(primary, config, out_dir=tmp_path)
        assert report["n_folds"] == 3
        assert max(report["fold_sizes"]) - min(report["fold_sizes"]) <= 1
        assert report["pool_fold_overlap"] == 0
        assert len(report["folds"]) == 3
        for row in report["folds"]:
            assert row["train_positives"] >= 1
            assert row["eval_positives"] >= 1
            for v in row["roc_auc"].values():
                assert 0.0 <= v <= 1.0
        assert set(report["mean_roc_auc"]) == {"pretrained", "scratch", "gbdt"}
        for p in report["mwu_one_sided_p"].values():
            assert 0.0 < p <= 1.0
        assert (tmp_path / "exp3_pretrained.json").exists()

    def test_fold_users_disjoint_from_pool(self, primary):
        # the driver itself raises on overlap; re-check from the report
        config = experiment_config("fast", seed=11, **MICRO)
        report = experiment3(primary, config)
        fold_users = {u for row in report["folds"] for u in row["users"]}
        by_user = primary.labels.groupby("user_id")["flu_positive"].max()
        assert fold_users == set(by_user.index[by_user == 1])
        assert report["pool_users"] == primary.n_users - len(fold_users)


class TestExperiment4:
    def test_audit_and_determinism(self, primary, transfer, tmp_path):
        config = experiment_config("fast", seed=11, **MICRO)
        one = experiment4(primary, transfer, config, out_dir=tmp_path)
        assert one["audit"]["transfer_reads_during_training"] == 0
        log = one["audit"]["access_log"]
        assert set(log) == {"score:transfer"}
        assert set(one["models"]) == {"full_model", "gbdt"}
        for entry in one["models"].values():
            assert 0.0 <= entry["roc_auc"] <= 1.0
        assert one["n_transfer_windows"] > 0
        assert one["transfer_positives"] >= 1

        fresh_transfer = generate_cohort(transfer_config("fast"), seed=7)
        two = experiment4(primary, fresh_transfer, config)
        assert report_json(one) == report_json(two)
