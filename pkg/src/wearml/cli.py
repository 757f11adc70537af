"""Command-line surface.

Subcommands cover the whole pipeline: cohort generation, feature
extraction, pretraining, finetuning, the GBDT baseline, evaluation,
model comparison, and the four packaged experiments.

Exit codes: 0 success, 2 configuration problem (bad flags, missing
files, malformed config JSON), 1 runtime failure. Heavy imports are
deferred into the command bodies so --threads can pin BLAS thread
counts through the environment before numpy first loads.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path


class ConfigError(Exception):
    """User-facing configuration problem; exits with status 2."""


def _set_thread_env(n: int) -> None:
    for var in ("OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS",
                "OMP_NUM_THREADS", "NUMEXPR_NUM_THREADS"):
        os.environ[var] = str(n)


def _require_dir(path, what: str) -> Path:
    p = Path(path)
    if not p.is_dir():
        raise ConfigError(f"{what} directory not found: {p}")
    return p


def _read_cohort(path):
    from .cohort import read_cohort
    return read_cohort(_require_dir(path, "cohort"))


def _experiment_config(args):
    import dataclasses

    from .experiments import ExperimentConfig, experiment_config

    overrides = {}
    if getattr(args, "config", None):
        cfg_path = Path(args.config)
        if not cfg_path.is_file():
            raise ConfigError(f"config file not found: {cfg_path}")
        try:
            data = json.loads(cfg_path.read_text())
        except json.JSONDecodeError as e:
            raise ConfigError(f"config is not valid JSON: {e}") from e
        if not isinstance(data, dict):
            raise ConfigError("config JSON must be an object")
        known = {f.name for f in dataclasses.fields(ExperimentConfig)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown config fields: {', '.join(unknown)}")
        for key in ("tasks", "models"):
            if key in data:
                data[key] = tuple(data[key])
        overrides.update(data)
    profile = args.profile or overrides.pop("profile", "full")
    seed = args.seed if args.seed is not None else overrides.pop("seed", 7)
    try:
        return experiment_config(profile, seed=seed, **overrides)
    except (TypeError, ValueError) as e:
        raise ConfigError(str(e)) from e


def _print(obj) -> None:
    from .experiments import report_json
    sys.stdout.write(report_json(obj) if isinstance(obj, dict) else f"{obj}\n")


# -- commands ----------------------------------------------------------------

def cmd_gen_data(args) -> int:
    from .cohort import write_cohort
    from .datagen import (generate_cohort, null_config, primary_config,
                          transfer_config)

    makers = {"primary": primary_config, "transfer": transfer_config,
              "null": null_config}
    if args.cohort not in makers:
        raise ConfigError(f"unknown cohort {args.cohort!r}; "
                          f"options: {', '.join(sorted(makers))}")
    profile = args.profile or "full"
    seed = args.seed if args.seed is not None else 7
    cfg = makers[args.cohort](profile)
    cohort = generate_cohort(cfg, seed)
    out = Path(args.out)
    write_cohort(cohort, out)
    _print({"cohort": cohort.name, "users": cohort.n_users,
            "days": cohort.days, "label_rows": len(cohort.labels),
            "out": str(out), "seed": seed})
    return 0


def cmd_features(args) -> int:
    import numpy as np
    import pandas as pd

    from .cohort import FeatureCache
    from .features import DAILY_FEATURES, ZERO_SHOT_FEATURES

    cohort = _read_cohort(args.data)
    wd = args.window_days
    examples = cohort.eligible_examples(wd)
    cache = FeatureCache(cohort)
    if args.kind == "window":
        matrix = cache.window_matrix(examples, wd)
        names = [f"d{-(wd - i)}_{name}" for i in range(wd)
                 for name in DAILY_FEATURES]
    elif args.kind == "zero_shot":
        matrix = cache.zero_shot_matrix(examples, wd)
        names = list(ZERO_SHOT_FEATURES)
    else:
        raise ConfigError(f"unknown feature kind {args.kind!r}")
    frame = pd.DataFrame(matrix, columns=names)
    frame.insert(0, "day_index", examples["day_index"].to_numpy())
    frame.insert(0, "user_id", examples["user_id"].to_numpy())
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(out, index=False, float_format="%.6g", lineterminator="\n")
    _print({"rows": len(frame), "columns": len(frame.columns),
            "out": str(out)})
    return 0


def cmd_pretrain(args) -> int:
    from .cohort import compute_norm_stats
    from .experiments import _pretrain_encoder
    from .pretrain import PRETRAIN_TASKS

    if args.task not in PRETRAIN_TASKS:
        raise ConfigError(f"unknown pretraining task {args.task!r}; "
                          f"options: {', '.join(PRETRAIN_TASKS)}")
    cohort = _read_cohort(args.data)
    config = _experiment_config(args)
    split = cohort.split_day()
    eligible = cohort.eligible_examples(config.window_days)
    pool = eligible.loc[eligible["day_index"] < split].reset_index(drop=True)
    norm = compute_norm_stats(cohort, split)
    pre = _pretrain_encoder(cohort, config, pool, norm, config.seed,
                            task=args.task)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    pre.save(out)
    _print({"task": args.task, "pool_windows": len(pool),
            "history": pre.history, "out": str(out)})
    return 0


def _check_task(task: str) -> str:
    from .cohort import LABEL_TASKS
    if task not in LABEL_TASKS:
        raise ConfigError(f"unknown task {task!r}; "
                          f"options: {', '.join(LABEL_TASKS)}")
    return task


def cmd_finetune(args) -> int:
    from .checkpoint import save_checkpoint
    from .cohort import WindowBank
    from .experiments import _subset_with_positives
    from .model import WindowClassifier
    from .pretrain import PretrainedEncoder
    from .rng import RngStream
    from .stats import pr_auc, roc_auc

    task = _check_task(args.task)
    cohort = _read_cohort(args.data)
    encoder_path = Path(args.encoder)
    if not encoder_path.is_file():
        raise ConfigError(f"encoder checkpoint not found: {encoder_path}")
    pre = PretrainedEncoder.load(encoder_path)
    config = _experiment_config(args)
    wd = pre.config.window_minutes // 1440
    split = cohort.split_day()
    eligible = cohort.eligible_examples(wd)
    train_all = eligible.loc[eligible["day_index"] < split]
    test_all = eligible.loc[eligible["day_index"] >= split]
    rng = RngStream(config.seed).split("finetune")
    train_df = _subset_with_positives(train_all, (task,),
                                      config.max_train_windows,
                                      rng.split("train"))
    test_df = _subset_with_positives(test_all, (task,),
                                     config.max_eval_windows,
                                     rng.split("test"))
    clf = WindowClassifier(pretrained=pre, freeze_encoder=True,
                           epochs=config.epochs,
                           batch_size=config.batch_size, lr=config.head_lr,
                           patience=config.patience, seed=config.seed)
    ytr = train_df[task].to_numpy()
    clf.fit(WindowBank(cohort, train_df, wd), ytr)
    scores = clf.decision_scores(WindowBank(cohort, test_df, wd))
    yte = test_df[task].to_numpy()
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_checkpoint(out, list(clf.state_entries()),
                    extra={"kind": "window-classifier", "task": task,
                           "window_days": wd,
                           "config": {k: list(v) if isinstance(v, tuple) else v
                                      for k, v in vars(clf.config_).items()}})
    _print({"task": task, "n_train": len(ytr),
            "roc_auc": roc_auc(yte, scores), "pr_auc": pr_auc(yte, scores),
            "out": str(out)})
    return 0


def cmd_train_baseline(args) -> int:
    from .baseline import GradientBoostedTrees
    from .cohort import FeatureCache
    from .experiments import _subset_with_positives
    from .rng import RngStream

    task = _check_task(args.task)
    cohort = _read_cohort(args.data)
    config = _experiment_config(args)
    wd = config.window_days
    split = cohort.split_day()
    eligible = cohort.eligible_examples(wd)
    train_all = eligible.loc[eligible["day_index"] < split]
    rng = RngStream(config.seed).split("train-baseline")
    train_df = _subset_with_positives(train_all, (task,),
                                      config.max_train_windows,
                                      rng.split("train"))
    cache = FeatureCache(cohort)
    if args.features == "window":
        X = cache.window_matrix(train_df, wd)
    elif args.features == "zero_shot":
        X = cache.zero_shot_matrix(train_df, wd)
    else:
        raise ConfigError(f"unknown feature kind {args.features!r}")
    y = train_df[task].to_numpy()
    model = GradientBoostedTrees().fit(X, y)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps({
        "kind": "gbdt-baseline", "task": task, "features": args.features,
        "window_days": wd, "model": json.loads(model.to_json()),
    }, sort_keys=True) + "\n")
    _print({"task": task, "n_train": len(y), "positives": int(y.sum()),
            "out": str(out)})
    return 0


def cmd_evaluate(args) -> int:
    import numpy as np

    from .cohort import FeatureCache, WindowBank
    from .stats import pr_auc, roc_auc

    cohort = _read_cohort(args.data)
    model_path = Path(args.model)
    if not model_path.is_file():
        raise ConfigError(f"model file not found: {model_path}")
    manifest = json.loads(model_path.read_text())
    task = _check_task(args.task)
    split = cohort.split_day()
    if manifest.get("kind") == "gbdt-baseline":
        from .baseline import GradientBoostedTrees
        model = GradientBoostedTrees.from_json(json.dumps(manifest["model"]))
        wd = manifest["window_days"]
        test_df = cohort.eligible_examples(wd)
        test_df = test_df.loc[test_df["day_index"] >= split].reset_index(drop=True)
        cache = FeatureCache(cohort)
        X = (cache.window_matrix(test_df, wd)
             if manifest["features"] == "window"
             else cache.zero_shot_matrix(test_df, wd))
        scores = model.predict_proba(X)[:, 1]
    elif manifest.get("extra", {}).get("kind") == "window-classifier":
        from .checkpoint import load_checkpoint
        from .model import ModelConfig, WindowClassifier
        state, extra = load_checkpoint(model_path)
        mcfg = ModelConfig(**{k: tuple(v) if isinstance(v, list) else v
                              for k, v in extra["config"].items()})
        wd = extra["window_days"]
        clf = WindowClassifier(config=mcfg)
        clf.restore_state(state)
        test_df = cohort.eligible_examples(wd)
        test_df = test_df.loc[test_df["day_index"] >= split].reset_index(drop=True)
        scores = clf.decision_scores(WindowBank(cohort, test_df, wd))
    else:
        raise ConfigError(f"unrecognized model format: {model_path}")
    y = test_df[task].to_numpy()
    report = {"task": task, "model": str(model_path), "n_test": len(y),
              "positives": int(y.sum()),
              "roc_auc": roc_auc(y, scores), "pr_auc": pr_auc(y, scores)}
    if args.out:
        from .experiments import report_json
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(report_json(report))
    _print(report)
    return 0


def cmd_compare(args) -> int:
    import numpy as np

    from .experiments import report_json
    from .stats import critical_difference, render_cd_svg, render_cd_text

    path = Path(args.input)
    if not path.is_file():
        raise ConfigError(f"report file not found: {path}")
    report = json.loads(path.read_text())
    if "tasks" not in report or "models" not in report:
        raise ConfigError("input must be an exp1-style report with "
                          "'tasks' and 'models' sections")
    models = report["models"]
    rows = []
    used = []
    for task, entry in report["tasks"].items():
        if "models" not in entry:
            continue
        rows.append([entry["models"][m][args.metric] for m in models])
        used.append(task)
    if len(rows) < 2:
        raise ConfigError("need at least two scored tasks to compare")
    cd = critical_difference(np.asarray(rows), list(models),
                             alpha=args.alpha)
    cd["tasks"] = used
    cd["metric"] = args.metric
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "compare_report.json").write_text(report_json(cd))
    (out / "compare_cd.svg").write_text(render_cd_svg(cd))
    sys.stdout.write(render_cd_text(cd) + "\n")
    return 0


def _run_experiment(args, n: int) -> int:
    from . import experiments

    config = _experiment_config(args)
    cohort = _read_cohort(args.data)
    out = Path(args.out)
    if n == 1:
        report = experiments.experiment1(cohort, config, out_dir=out)
        summary = {t: (r["models"] if "models" in r else r)
                   for t, r in report["tasks"].items()}
    elif n == 2:
        report = experiments.experiment2(cohort, config, out_dir=out)
        summary = {name: {"roc_auc": r["roc_auc"], "pr_auc": r["pr_auc"]}
                   for name, r in report["runs"].items()}
    elif n == 3:
        report = experiments.experiment3(cohort, config, out_dir=out)
        summary = {"mean_roc_auc": report["mean_roc_auc"],
                   "mwu_one_sided_p": report["mwu_one_sided_p"]}
    else:
        transfer = _read_cohort(args.transfer)
        report = experiments.experiment4(cohort, transfer, config,
                                         out_dir=out)
        summary = {"models": report["models"],
                   "transfer_reads_during_training":
                       report["audit"]["transfer_reads_during_training"]}
    _print({"experiment": f"exp{n}", "out": str(out), "summary": summary})
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="wearml",
        description="Wearable-sensor models, baselines, and experiments.")
    parser.add_argument("--threads", type=int, default=1, metavar="N",
                        help="BLAS thread cap (default 1; >1 forfeits "
                             "byte-level reproducibility)")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, **kwargs):
        p = sub.add_parser(name, **kwargs)
        p.set_defaults(func=func)
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--profile", choices=("fast", "full"), default=None)
        p.add_argument("--config", default=None,
                       help="JSON file of experiment-config overrides")
        return p

    p = add("gen-data", cmd_gen_data, help="generate a synthetic cohort")
    p.add_argument("--out", required=True)
    p.add_argument("--cohort", default="primary")

    p = add("features", cmd_features, help="extract handcrafted features")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--kind", choices=("window", "zero_shot"),
                   default="window")
    p.add_argument("--window-days", type=int, default=7)

    p = add("pretrain", cmd_pretrain, help="pretrain the sensor encoder")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--task", default="domain_features")

    p = add("finetune", cmd_finetune,
            help="train a head on a frozen pretrained encoder")
    p.add_argument("--data", required=True)
    p.add_argument("--encoder", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--task", default="flu_positive")

    p = add("train-baseline", cmd_train_baseline,
            help="train the GBDT feature baseline")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--task", default="flu_positive")
    p.add_argument("--features", choices=("window", "zero_shot"),
                   default="window")

    p = add("evaluate", cmd_evaluate, help="score a saved model")
    p.add_argument("--data", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--task", required=True)
    p.add_argument("--out", default=None)

    p = add("compare", cmd_compare,
            help="critical-difference comparison from an exp1 report")
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--alpha", type=float, default=0.1)
    p.add_argument("--metric", default="roc_auc")

    for n, helptext in ((1, "tasks x models table"),
                        (2, "pretraining comparison"),
                        (3, "small-data fold simulation"),
                        (4, "zero-shot transfer")):
        p = add(f"exp{n}", lambda a, n=n: _run_experiment(a, n),
                help=f"experiment {n}: {helptext}")
        p.add_argument("--data", required=True)
        p.add_argument("--out", required=True)
        if n == 4:
            p.add_argument("--transfer", required=True)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    _set_thread_env(args.threads)
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except Exception as e:  # noqa: BLE001 - last-resort CLI boundary
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
