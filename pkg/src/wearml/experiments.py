"""Desk-scale experiment drivers over synthetic cohorts.

Four studies, mirroring the package's evaluation protocol:

1. experiment1 -- five prediction tasks by four models on a temporal
   split, with paired DeLong tests against the full model and a
   critical-difference comparison across tasks.
2. experiment2 -- the three pretraining objectives plus a
   no-pretraining control on the flu-symptoms task, scored through
   the same frozen-encoder head procedure, with ROC/PR curve dumps.
3. experiment3 -- small-data simulation: pretrain on never-positive
   users, then per fold of positive users finetune on the fold and
   evaluate on all other folds, against a scratch network and the
   GBDT baseline.
4. experiment4 -- zero-shot transfer: the full model and the GBDT
   feature baseline, both fit purely on the primary cohort, scored
   on the transfer cohort, with an access-log audit proving no
   transfer data was read during training.

Every driver takes an ExperimentConfig and returns a plain report
dict whose JSON rendering is byte-stable for a fixed seed in
single-threaded mode: all sampling flows from named RngStream splits
and no wall-clock values enter the report (timings live in the run
record instead).
"""

from __future__ import annotations

import hashlib
import json
import time
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import pandas as pd

from . import ops
from .baseline import GradientBoostedTrees
from .cohort import (LABEL_TASKS, Cohort, FeatureCache, WindowBank,
                     compute_norm_stats)
from .datagen import fold_split_positive_users
from .features import MINUTES_PER_DAY
from .model import (ClassifierHead, ModelConfig, SensorEncoder,
                    WindowClassifier, encode_missingness)
from .optim import Adam
from .pretrain import PretrainedEncoder, Pretrainer
from .rng import RngStream
from .stats import (critical_difference, delong_test, mann_whitney_u, pr_auc,
                    pr_curve_points, render_cd_svg, roc_auc, roc_curve_points)
from .tensor import Tape, Tensor

MODEL_NAMES = ("gbdt", "cnn", "cnn_transformer", "full_model")
PRETRAIN_RUNS = ("same_user", "autoencoder", "domain_features", "none")
EXP2_TASK = "flu_symptoms"


@dataclass(frozen=True)
class ExperimentConfig:
    profile: str = "full"
    seed: int = 7
    window_days: int = 7
    tasks: tuple = LABEL_TASKS
    models: tuple = MODEL_NAMES
    # finetuning budget
    epochs: int = 10
    head_epochs: int = 20
    batch_size: int = 32
    lr: float = 5e-4
    head_lr: float = 5e-3
    patience: int = 2
    dropout: float = 0.4
    # pretraining budget; regression-style pretraining stalls below
    # lr ~1e-3, so it gets its own rate
    pretrain_task: str = "domain_features"
    pretrain_epochs: int = 6
    pretrain_lr: float = 2e-3
    pretrain_windows: int = 2500
    # example subsampling (all positives always kept)
    max_train_windows: int = 800
    max_eval_windows: int = 2500
    fold_train_windows: int = 250
    fold_eval_windows: int = 1200
    n_folds: int = 20
    cd_alpha: float = 0.1


def experiment_config(profile: str = "full", seed: int = 7,
                      **overrides) -> ExperimentConfig:
    """Profile defaults; the fast profile uses 1-day windows."""
    if profile == "fast":
        base = dict(profile="fast", window_days=1, epochs=6, head_epochs=12,
                    pretrain_epochs=3, pretrain_windows=400,
                    max_train_windows=300, max_eval_windows=900,
                    fold_train_windows=120, fold_eval_windows=400, n_folds=5)
    elif profile == "full":
        base = dict(profile="full")
    else:
        raise ValueError(f"unknown profile {profile!r}")
    base.update(overrides)
    return ExperimentConfig(seed=seed, **base)


def model_config(config: ExperimentConfig, transformer_blocks: int = 2,
                 use_missing_flags: bool = True) -> ModelConfig:
    return ModelConfig(window_minutes=config.window_days * MINUTES_PER_DAY,
                       transformer_blocks=transformer_blocks,
                       use_missing_flags=use_missing_flags,
                       dropout=config.dropout)


# -- report plumbing ---------------------------------------------------------

def _jsonify(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonify(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonify(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonify(v) for v in obj.tolist()]
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, Path):
        return str(obj)
    return obj


def report_json(report: dict) -> str:
    return json.dumps(_jsonify(report), indent=2, sort_keys=True) + "\n"


def cohort_digest(cohort: Cohort) -> str:
    h = hashlib.sha256()
    h.update(f"{cohort.name}|{cohort.seed}|{cohort.days}|{cohort.n_users}"
             .encode())
    h.update(cohort.labels.to_csv(index=False).encode())
    return h.hexdigest()


def make_run_record(config: ExperimentConfig, cohorts, wall_clock: float,
                    checkpoints=()) -> dict:
    cfg = _jsonify(asdict(config))
    return {
        "config": cfg,
        "config_digest": hashlib.sha256(
            json.dumps(cfg, sort_keys=True).encode()).hexdigest(),
        "input_digests": {c.name: cohort_digest(c) for c in cohorts},
        "seed": config.seed,
        "wall_clock_seconds": round(wall_clock, 3),
        "checkpoints": [str(p) for p in checkpoints],
    }


def write_outputs(out_dir, stem: str, report: dict, record: dict,
                  extras=()) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"{stem}_report.json"
    path.write_text(report_json(report))
    (out / f"{stem}_run_record.json").write_text(report_json(record))
    for name, text in extras:
        (out / name).write_text(text)
    return path


# -- shared pieces -----------------------------------------------------------

def _subset_any(examples: pd.DataFrame, cap: int, rng: RngStream):
    if len(examples) <= cap:
        return examples.reset_index(drop=True)
    keep = np.sort(rng.gen.choice(len(examples), size=cap, replace=False))
    return examples.iloc[keep].reset_index(drop=True)


def _subset_with_positives(examples: pd.DataFrame, tasks, cap: int,
                           rng: RngStream):
    """Keep every row positive for any listed task; negatives fill to cap."""
    if len(examples) <= cap:
        return examples.reset_index(drop=True)
    any_pos = examples[list(tasks)].to_numpy().max(axis=1) == 1
    pos = np.flatnonzero(any_pos)
    neg = np.flatnonzero(~any_pos)
    n_neg = min(len(neg), max(cap - len(pos), 50))
    take = rng.gen.choice(len(neg), size=n_neg, replace=False)
    keep = np.sort(np.concatenate([pos, neg[take]]))
    return examples.iloc[keep].reset_index(drop=True)


def _cap_indices(idx: np.ndarray, y: np.ndarray, cap: int, rng: RngStream):
    """Subsample idx to cap rows, always keeping the positives."""
    if len(idx) <= cap:
        return idx
    pos = idx[y[idx] == 1]
    neg = idx[y[idx] == 0]
    n_neg = min(len(neg), max(cap - len(pos), 50))
    take = rng.gen.choice(len(neg), size=n_neg, replace=False)
    return np.sort(np.concatenate([pos, neg[take]]))


def _drop_empty_windows(bank: WindowBank, examples: pd.DataFrame):
    """Remove rows whose window has no observed sample at all.

    Whole-day dropout can blank an entire 1-day window; nothing can be
    learned (or reconstructed) from one, so the pretraining pool skips
    them.
    """
    keep = np.ones(len(examples), dtype=bool)
    for b0 in range(0, len(examples), 64):
        idx = np.arange(b0, min(b0 + 64, len(examples)))
        raw = bank.take(idx)
        keep[idx] = ~np.isnan(raw).reshape(len(idx), -1).all(axis=1)
    return examples.loc[keep].reset_index(drop=True)


def _pretrain_encoder(cohort: Cohort, config: ExperimentConfig,
                      examples: pd.DataFrame, norm, seed: int,
                      task: str | None = None,
                      pool_seed: int | None = None) -> PretrainedEncoder:
    rng = RngStream(pool_seed if pool_seed is not None else seed)
    pool = _subset_any(examples, config.pretrain_windows,
                       rng.split("pretrain-pool"))
    pool = _drop_empty_windows(WindowBank(cohort, pool, config.window_days),
                               pool)
    bank = WindowBank(cohort, pool, config.window_days)
    trainer = Pretrainer(model_config(config), task or config.pretrain_task,
                         epochs=config.pretrain_epochs,
                         batch_size=config.batch_size, lr=config.pretrain_lr,
                         seed=seed)
    return trainer.fit(bank, norm)


def _pooled_embeddings(pretrained: PretrainedEncoder, bank,
                       batch_size: int = 64) -> np.ndarray:
    """Eval-mode mean-pooled embedding of every bank window."""
    encoder = pretrained.encoder
    encoder.eval()
    rng = RngStream(0)
    out = np.empty((len(bank), pretrained.config.d_model), dtype=np.float32)
    for b0 in range(0, len(bank), batch_size):
        idx = np.arange(b0, min(b0 + batch_size, len(bank)))
        x = Tensor(encode_missingness(bank.take(idx), pretrained.norm_mean,
                                      pretrained.norm_std,
                                      pretrained.config.use_missing_flags))
        out[idx] = ops.mean(encoder(x, rng), axis=1).data
    return out


def _fit_head(pooled: np.ndarray, y: np.ndarray, config: ExperimentConfig,
              seed: int) -> ClassifierHead:
    """Classifier head trained on frozen pooled embeddings.

    Positives are often a handful per fold, so the loss weights each
    class to equal total mass and the head runs its full epoch budget;
    a held-out early-stopping split at these sizes can end up with no
    positive at all and then steer toward the constant predictor.
    """
    rng = RngStream(seed)
    head = ClassifierHead(pooled.shape[1], config.dropout, rng.split("head"))
    optimizer = Adam(head.parameters(), lr=config.head_lr)
    n = len(pooled)
    n_pos = int(y.sum())
    weights = np.ones(n)
    if 0 < n_pos < n:
        weights[y == 1] = (n - n_pos) / n_pos
    for epoch in range(config.head_epochs):
        erng = rng.split(f"epoch{epoch}")
        perm = erng.permutation(n)
        for b0 in range(0, n, 64):
            idx = perm[b0:b0 + 64]
            optimizer.zero_grad()
            with Tape() as tape:
                logits = head.from_pooled(Tensor(pooled[idx]),
                                          erng.split(f"batch{b0}"))
                loss = ops.cross_entropy_logits(logits, y[idx],
                                                sample_weight=weights[idx])
            tape.backward(loss)
            optimizer.step()
    head.eval()
    return head


def _head_scores(head: ClassifierHead, pooled: np.ndarray) -> np.ndarray:
    head.eval()
    logits = head.from_pooled(Tensor(pooled), RngStream(0))
    return ops.softmax(logits, axis=-1).data[:, 1].astype(np.float64)


def _fit_scratch(config: ExperimentConfig, mcfg: ModelConfig, bank, y,
                 norm, seed: int) -> WindowClassifier:
    clf = WindowClassifier(config=mcfg, epochs=config.epochs,
                           batch_size=config.batch_size, lr=config.lr,
                           patience=config.patience, norm_stats=norm,
                           seed=seed)
    return clf.fit(bank, y)


def _temporal_frames(cohort: Cohort, config: ExperimentConfig):
    split = cohort.split_day()
    eligible = cohort.eligible_examples(config.window_days)
    train_all = eligible.loc[eligible["day_index"] < split]
    test_all = eligible.loc[eligible["day_index"] >= split]
    if len(train_all) == 0 or len(test_all) == 0:
        raise ValueError("temporal split left one side empty")
    return split, train_all.reset_index(drop=True), test_all.reset_index(drop=True)


# -- experiment 1: tasks x models table --------------------------------------

def experiment1(cohort: Cohort, config: ExperimentConfig,
                out_dir=None) -> dict:
    t0 = time.time()
    wd = config.window_days
    rng = RngStream(config.seed).split("exp1")
    split, train_all, test_all = _temporal_frames(cohort, config)
    train_df = _subset_with_positives(train_all, config.tasks,
                                      config.max_train_windows,
                                      rng.split("train-subset"))
    test_df = _subset_with_positives(test_all, config.tasks,
                                     config.max_eval_windows,
                                     rng.split("test-subset"))
    norm = compute_norm_stats(cohort, split)
    train_bank = WindowBank(cohort, train_df, wd)
    test_bank = WindowBank(cohort, test_df, wd)

    features = FeatureCache(cohort)
    if "gbdt" in config.models:
        Xtr = features.window_matrix(train_df, wd)
        Xte = features.window_matrix(test_df, wd)

    pretrained = None
    checkpoints = []
    if "full_model" in config.models:
        pretrained = _pretrain_encoder(cohort, config, train_all, norm,
                                       config.seed)
        pre_train_pooled = _pooled_embeddings(pretrained, train_bank)
        pre_test_pooled = _pooled_embeddings(pretrained, test_bank)
        if out_dir is not None:
            path = Path(out_dir) / "exp1_pretrained.json"
            path.parent.mkdir(parents=True, exist_ok=True)
            pretrained.save(path)
            checkpoints.append(path)

    tasks_report = {}
    cd_tasks = []
    roc_matrix = []
    for ti, task in enumerate(config.tasks):
        ytr = train_df[task].to_numpy()
        yte = test_df[task].to_numpy()
        if ytr.min() == ytr.max() or yte.min() == yte.max():
            tasks_report[task] = {
                "skipped": "needs both classes on both sides of the split"}
            continue
        seed_t = config.seed + 13 * (ti + 1)
        scores = {}
        for model in config.models:
            if model == "gbdt":
                gbdt = GradientBoostedTrees().fit(Xtr, ytr)
                scores[model] = gbdt.predict_proba(Xte)[:, 1]
            elif model == "cnn":
                clf = _fit_scratch(config,
                                   model_config(config, transformer_blocks=0),
                                   train_bank, ytr, norm, seed_t)
                scores[model] = clf.decision_scores(test_bank)
            elif model == "cnn_transformer":
                clf = _fit_scratch(config,
                                   model_config(config, use_missing_flags=False),
                                   train_bank, ytr, norm, seed_t)
                scores[model] = clf.decision_scores(test_bank)
            elif model == "full_model":
                head = _fit_head(pre_train_pooled, ytr, config, seed_t)
                scores[model] = _head_scores(head, pre_test_pooled)
            else:
                raise ValueError(f"unknown model {model!r}")
        metrics = {m: {"roc_auc": roc_auc(yte, s), "pr_auc": pr_auc(yte, s)}
                   for m, s in scores.items()}
        delong = {}
        if "full_model" in scores:
            for m in config.models:
                if m != "full_model":
                    _, _, p = delong_test(yte, scores[m],
                                          scores["full_model"])
                    delong[m] = p
        tasks_report[task] = {
            "n_train": len(ytr), "n_test": len(yte),
            "train_positives": int(ytr.sum()),
            "test_positives": int(yte.sum()),
            "models": metrics,
            "delong_vs_full_model": delong,
        }
        cd_tasks.append(task)
        roc_matrix.append([metrics[m]["roc_auc"] for m in config.models])

    cd = None
    if len(cd_tasks) >= 2 and len(config.models) >= 2:
        cd = critical_difference(np.asarray(roc_matrix), list(config.models),
                                 alpha=config.cd_alpha)
        cd["tasks"] = cd_tasks
    report = {
        "experiment": "exp1",
        "seed": config.seed,
        "profile": config.profile,
        "window_days": wd,
        "split_day": split,
        "models": list(config.models),
        "tasks": tasks_report,
        "critical_difference": cd,
    }
    if out_dir is not None:
        extras = [("exp1_cd.svg", render_cd_svg(cd))] if cd else []
        record = make_run_record(config, [cohort], time.time() - t0,
                                 checkpoints)
        write_outputs(out_dir, "exp1", report, record, extras)
    return report


# -- experiment 2: pretraining comparison ------------------------------------

def _curve_csv(columns, arrays) -> str:
    lines = [",".join(columns)]
    for row in zip(*arrays):
        lines.append(",".join(f"{v:.10g}" for v in row))
    return "\n".join(lines) + "\n"


def experiment2(cohort: Cohort, config: ExperimentConfig,
                out_dir=None) -> dict:
    t0 = time.time()
    wd = config.window_days
    task = EXP2_TASK
    rng = RngStream(config.seed).split("exp2")
    split, train_all, test_all = _temporal_frames(cohort, config)
    train_df = _subset_with_positives(train_all, (task,),
                                      config.max_train_windows,
                                      rng.split("train-subset"))
    test_df = _subset_with_positives(test_all, (task,),
                                     config.max_eval_windows,
                                     rng.split("test-subset"))
    norm = compute_norm_stats(cohort, split)
    train_bank = WindowBank(cohort, train_df, wd)
    test_bank = WindowBank(cohort, test_df, wd)
    ytr = train_df[task].to_numpy()
    yte = test_df[task].to_numpy()

    runs = {}
    extras = []
    checkpoints = []
    for ri, name in enumerate(PRETRAIN_RUNS):
        seed_r = config.seed + 29 * (ri + 1)
        if name == "none":
            mcfg = model_config(config)
            encoder = SensorEncoder(mcfg, RngStream(seed_r).split("encoder"))
            pre = PretrainedEncoder(config=mcfg, encoder=encoder,
                                    norm_mean=norm[0], norm_std=norm[1],
                                    task="none")
        else:
            pre = _pretrain_encoder(cohort, config, train_all, norm, seed_r,
                                    task=name, pool_seed=config.seed)
            if out_dir is not None:
                path = Path(out_dir) / f"exp2_pretrained_{name}.json"
                path.parent.mkdir(parents=True, exist_ok=True)
                pre.save(path)
                checkpoints.append(path)
        frozen_before = {k: v.copy() for k, v in pre.encoder.state_entries()}
        tr_pooled = _pooled_embeddings(pre, train_bank)
        te_pooled = _pooled_embeddings(pre, test_bank)
        head = _fit_head(tr_pooled, ytr, config, seed_r)
        frozen_after = dict(pre.encoder.state_entries())
        unchanged = all(np.array_equal(frozen_before[k], frozen_after[k])
                        for k in frozen_before)
        scores = _head_scores(head, te_pooled)
        fpr, tpr, roc_thresh = roc_curve_points(yte, scores)
        recall, precision, pr_thresh = pr_curve_points(yte, scores)
        runs[name] = {
            "roc_auc": roc_auc(yte, scores),
            "pr_auc": pr_auc(yte, scores),
            "frozen_encoder_unchanged": bool(unchanged),
            "pretrain_epochs": 0 if name == "none" else config.pretrain_epochs,
            "curves": {"roc": f"exp2_roc_{name}.csv",
                       "pr": f"exp2_pr_{name}.csv"},
        }
        extras.append((f"exp2_roc_{name}.csv",
                       _curve_csv(("fpr", "tpr", "threshold"),
                                  (fpr, tpr, roc_thresh))))
        extras.append((f"exp2_pr_{name}.csv",
                       _curve_csv(("recall", "precision", "threshold"),
                                  (recall, precision, pr_thresh))))

    report = {
        "experiment": "exp2",
        "seed": config.seed,
        "profile": config.profile,
        "window_days": wd,
        "task": task,
        "split_day": split,
        "n_train": len(ytr), "n_test": len(yte),
        "train_positives": int(ytr.sum()),
        "test_positives": int(yte.sum()),
        "runs": runs,
    }
    if out_dir is not None:
        record = make_run_record(config, [cohort], time.time() - t0,
                                 checkpoints)
        write_outputs(out_dir, "exp2", report, record, extras)
    return report


# -- experiment 3: small-data folds ------------------------------------------

def experiment3(cohort: Cohort, config: ExperimentConfig,
                out_dir=None) -> dict:
    t0 = time.time()
    wd = config.window_days
    rng = RngStream(config.seed).split("exp3")
    folds = fold_split_positive_users(cohort.labels, config.n_folds,
                                      rng.split("folds"))
    fold_users = sorted(u for fold in folds for u in fold)
    pool_users = sorted(set(cohort.user_ids) - set(fold_users))
    overlap = set(fold_users) & set(pool_users)
    if overlap:
        raise RuntimeError(f"pretraining pool overlaps folds: {sorted(overlap)}")

    eligible = cohort.eligible_examples(wd)
    pool_df = eligible.loc[eligible["user_id"].isin(pool_users)].reset_index(drop=True)
    pos_df = eligible.loc[eligible["user_id"].isin(fold_users)].reset_index(drop=True)
    # norm stats from the pool only: evaluation users contribute nothing
    norm = compute_norm_stats(cohort, cohort.days + 1, users=pool_users)
    pretrained = _pretrain_encoder(cohort, config, pool_df, norm, config.seed)
    checkpoints = []
    if out_dir is not None:
        path = Path(out_dir) / "exp3_pretrained.json"
        path.parent.mkdir(parents=True, exist_ok=True)
        pretrained.save(path)
        checkpoints.append(path)

    pos_bank = WindowBank(cohort, pos_df, wd)
    pooled = _pooled_embeddings(pretrained, pos_bank)
    features = FeatureCache(cohort)
    Xpos = features.window_matrix(pos_df, wd)
    users_arr = pos_df["user_id"].to_numpy()
    y_all = pos_df["flu_positive"].to_numpy()

    mcfg = model_config(config)
    fold_rows = []
    rocs = {"pretrained": [], "scratch": [], "gbdt": []}
    for i, fold in enumerate(folds):
        frng = rng.split(f"fold{i}")
        in_fold = np.isin(users_arr, fold)
        train_idx = _cap_indices(np.flatnonzero(in_fold), y_all,
                                 config.fold_train_windows,
                                 frng.split("train"))
        eval_idx = _cap_indices(np.flatnonzero(~in_fold), y_all,
                                config.fold_eval_windows, frng.split("eval"))
        ytr = y_all[train_idx]
        yev = y_all[eval_idx]
        seed_f = config.seed + 101 * (i + 1)

        head = _fit_head(pooled[train_idx], ytr, config, seed_f)
        s_pre = _head_scores(head, pooled[eval_idx])

        scratch_bank = WindowBank(cohort, pos_df.iloc[train_idx], wd)
        scratch = _fit_scratch(config, mcfg, scratch_bank, ytr, norm, seed_f)
        s_scr = scratch.decision_scores(WindowBank(cohort,
                                                   pos_df.iloc[eval_idx], wd))

        gbdt = GradientBoostedTrees().fit(Xpos[train_idx], ytr)
        s_gbdt = gbdt.predict_proba(Xpos[eval_idx])[:, 1]

        row = {
            "fold": i,
            "users": list(fold),
            "n_train": len(train_idx), "n_eval": len(eval_idx),
            "train_positives": int(ytr.sum()),
            "eval_positives": int(yev.sum()),
            "roc_auc": {
                "pretrained": roc_auc(yev, s_pre),
                "scratch": roc_auc(yev, s_scr),
                "gbdt": roc_auc(yev, s_gbdt),
            },
        }
        fold_rows.append(row)
        for key in rocs:
            rocs[key].append(row["roc_auc"][key])

    _, p_scratch = mann_whitney_u(rocs["pretrained"], rocs["scratch"],
                                  alternative="greater")
    _, p_gbdt = mann_whitney_u(rocs["pretrained"], rocs["gbdt"],
                               alternative="greater")
    report = {
        "experiment": "exp3",
        "seed": config.seed,
        "profile": config.profile,
        "window_days": wd,
        "n_folds": len(folds),
        "fold_sizes": [len(f) for f in folds],
        "pool_users": len(pool_users),
        "pool_fold_overlap": 0,
        "folds": fold_rows,
        "mean_roc_auc": {k: float(np.mean(v)) for k, v in rocs.items()},
        "std_roc_auc": {k: float(np.std(v)) for k, v in rocs.items()},
        "mwu_one_sided_p": {
            "pretrained_gt_scratch": p_scratch,
            "pretrained_gt_gbdt": p_gbdt,
        },
    }
    if out_dir is not None:
        record = make_run_record(config, [cohort], time.time() - t0,
                                 checkpoints)
        write_outputs(out_dir, "exp3", report, record)
    return report


# -- experiment 4: zero-shot transfer ----------------------------------------

def experiment4(primary: Cohort, transfer: Cohort, config: ExperimentConfig,
                out_dir=None) -> dict:
    t0 = time.time()
    wd = config.window_days
    rng = RngStream(config.seed).split("exp4")
    split, train_all, _ = _temporal_frames(primary, config)
    train_df = _subset_with_positives(train_all, ("flu_positive",),
                                      config.max_train_windows,
                                      rng.split("train-subset"))
    norm = compute_norm_stats(primary, split)
    ytr = train_df["flu_positive"].to_numpy()
    log = transfer.access_log
    checkpoints = []

    with log.phase("train"):
        pretrained = _pretrain_encoder(primary, config, train_all, norm,
                                       config.seed)
        train_bank = WindowBank(primary, train_df, wd)
        tr_pooled = _pooled_embeddings(pretrained, train_bank)
        head = _fit_head(tr_pooled, ytr, config, config.seed)
        Xtr = FeatureCache(primary).zero_shot_matrix(train_df, wd)
        gbdt = GradientBoostedTrees().fit(Xtr, ytr)
    if out_dir is not None:
        path = Path(out_dir) / "exp4_pretrained.json"
        path.parent.mkdir(parents=True, exist_ok=True)
        pretrained.save(path)
        checkpoints.append(path)

    with log.phase("score"):
        t_df = transfer.eligible_examples(wd)
        t_bank = WindowBank(transfer, t_df, wd)
        te_pooled = _pooled_embeddings(pretrained, t_bank)
        s_full = _head_scores(head, te_pooled)
        Xte = FeatureCache(transfer).zero_shot_matrix(t_df, wd)
        s_gbdt = gbdt.predict_proba(Xte)[:, 1]

    yte = t_df["flu_positive"].to_numpy()
    train_reads = log.reads(transfer.name, "train")
    report = {
        "experiment": "exp4",
        "seed": config.seed,
        "profile": config.profile,
        "window_days": wd,
        "n_transfer_windows": len(yte),
        "transfer_positives": int(yte.sum()),
        "models": {
            "full_model": {"roc_auc": roc_auc(yte, s_full),
                           "pr_auc": pr_auc(yte, s_full)},
            "gbdt": {"roc_auc": roc_auc(yte, s_gbdt),
                     "pr_auc": pr_auc(yte, s_gbdt)},
        },
        "audit": {
            "transfer_reads_during_training": train_reads,
            "access_log": log.as_dict(),
        },
    }
    if out_dir is not None:
        record = make_run_record(config, [primary, transfer],
                                 time.time() - t0, checkpoints)
        write_outputs(out_dir, "exp4", report, record)
    if train_reads:
        raise RuntimeError(
            f"{train_reads} transfer-cohort reads during the training phase")
    return report
