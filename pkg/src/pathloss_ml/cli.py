"""Command-line entry point: ``pathloss-ml <subcommand> ...``.

Exit status: 0 on success, 1 for unreadable files or invalid data, 2 for
usage errors. All randomness comes from ``--seed``.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import dataset, experiments, metrics, nn
from .errors import ConfigError, PathlossError
from .features import FEATURE_CONFIGS, extract_features, select_config
from .profile import EARTH_RADIUS_M

log = logging.getLogger("pathloss_ml")


class UsageError(Exception):
    pass


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", metavar="PATH",
                   help="JSON file of option values; its entries override command-line flags")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    d = nn.TrainConfig()
    p.add_argument("--max-epochs", type=int, default=d.max_epochs,
                   help=f"upper bound on training epochs (default {d.max_epochs})")
    p.add_argument("--batch-size", type=int, default=d.batch_size,
                   help=f"mini-batch size (default {d.batch_size})")
    p.add_argument("--learning-rate", type=float, default=d.learning_rate,
                   help=f"Adam learning rate (default {d.learning_rate})")
    p.add_argument("--patience", type=int, default=d.patience_epochs,
                   help=f"early-stopping patience in epochs (default {d.patience_epochs})")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pathloss-ml",
        description="Obstruction features, path loss model training and validation studies.",
    )
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("synth", help="generate synthetic link samples")
    p.add_argument("--n", type=int, default=1000, help="number of links (default 1000)")
    p.add_argument("--seed", type=int, default=0, help="random seed (default 0)")
    p.add_argument("--noise-sd-db", type=float, default=2.0,
                   help="SD of Gaussian label noise in dB (default 2)")
    p.add_argument("--output", required=True, help="output sample file")
    p.add_argument("--format", choices=dataset.SAMPLE_FORMATS, default="jsonl",
                   help="output sample format (default jsonl)")
    _add_common(p)

    p = sub.add_parser("extract", help="profiles -> features CSV")
    p.add_argument("--input", required=True, help="sample file (JSONL or csv-long)")
    p.add_argument("--output", required=True, help="features CSV to write")
    p.add_argument("--format", choices=dataset.SAMPLE_FORMATS, default="jsonl",
                   help="input sample format (default jsonl)")
    p.add_argument("--noise-margin-db", type=float, default=6.0,
                   help="drop samples within this margin of the noise floor (default 6)")
    p.add_argument("--per-stratum", type=int, default=None,
                   help="keep at most this many samples per (group, frequency); default keeps all")
    p.add_argument("--seed", type=int, default=0, help="seed for --per-stratum subsampling")
    p.add_argument("--radius-m", type=float, default=EARTH_RADIUS_M,
                   help=f"Earth radius for curvature correction (default {EARTH_RADIUS_M:.0f})")
    _add_common(p)

    p = sub.add_parser("train", help="features CSV -> model file + history CSV")
    p.add_argument("--input", required=True, help="features CSV")
    p.add_argument("--output", required=True, help="model file to write (JSON)")
    p.add_argument("--history", default=None,
                   help="per-epoch history CSV (default: <output>.history.csv)")
    p.add_argument("--features", type=int, choices=FEATURE_CONFIGS, default=8,
                   help="feature configuration: 4, 6 or 8 (default 8)")
    p.add_argument("--seed", type=int, default=0, help="seed for split, init and shuffling")
    _add_train_flags(p)
    _add_common(p)

    p = sub.add_parser("eval", help="model + features -> metrics JSON, hexbin and binned-error CSVs")
    p.add_argument("--model", required=True, help="model file from 'train'")
    p.add_argument("--input", required=True, help="features CSV to score")
    p.add_argument("--output", required=True, help="output directory")
    p.add_argument("--bin-width-m", type=float, default=3000.0,
                   help="distance bin width in meters (default 3000)")
    p.add_argument("--hex-cell-size", type=float, default=1.0,
                   help="hexagon size in dB for predicted-vs-measured binning (default 1)")
    _add_common(p)

    for name, helptext in (("ablation", "feature-configuration ablation over holdout scenarios"),
                           ("repeat-study", "many runs of one scenario with best-k selection")):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--input", help="features CSV for training/holdouts")
        p.add_argument("--external-test", default=None,
                       help="features CSV used as the no-holdout scenario's test set")
        p.add_argument("--output", help="output directory")
        p.add_argument("--runs", type=int, default=20 if name == "ablation" else 200,
                       help="independent runs per scenario and configuration")
        p.add_argument("--seed", type=int, default=0, help="base seed")
        p.add_argument("--parallelism", type=int, default=1, help="concurrent runs (default 1)")
        if name == "ablation":
            p.add_argument("--features", type=int, choices=FEATURE_CONFIGS, action="append",
                           help="feature configuration to include; repeatable (default 4, 6, 8)")
        else:
            p.add_argument("--features", type=int, choices=FEATURE_CONFIGS, default=8,
                           help="feature configuration (default 8)")
            p.add_argument("--k", type=int, default=20,
                           help="size of the best-by-validation subset (default 20)")
            p.add_argument("--scenario", default=None,
                           help="scenario name (default: no-holdout if --external-test, else first holdout)")
        _add_train_flags(p)
        _add_common(p)

    p = sub.add_parser("scenarios", help="list the holdout scenarios of a dataset")
    p.add_argument("--input", required=True, help="features CSV")
    p.add_argument("--output", default=None, help="write the scenarios as JSON here instead of stdout")
    _add_common(p)
    return parser


# --------------------------------------------------------------------------
# helpers


def _apply_config(args: argparse.Namespace, experiment: bool) -> dict:
    """Merge ``--config`` into ``args``; returns experiment-only extras."""
    if not args.config:
        return {}
    path = Path(args.config)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc.msg})") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected a JSON object")
    extras = {}
    # experiment-config key -> flag dest
    aliases = {"data": "input", "output_dir": "output", "n_runs": "runs", "base_seed": "seed",
               "feature_configs": "features", "external_test": "external_test"}
    for key, value in data.items():
        dest = key.replace("-", "_")
        if experiment:
            dest = aliases.get(dest, dest)
            if dest in ("train", "scenarios", "reference_rmse"):
                extras[dest] = value
                continue
        if dest in ("config", "command") or not hasattr(args, dest):
            raise UsageError(f"unknown option {key!r} in {path}")
        setattr(args, dest, value)
    return extras


def _check_readable(*paths) -> None:
    for p in paths:
        if p is None:
            continue
        if not Path(p).is_file():
            raise FileNotFoundError(f"cannot read {p}")


def _train_config(args, seed: int | None = None) -> nn.TrainConfig:
    return nn.TrainConfig(
        batch_size=args.batch_size,
        learning_rate=args.learning_rate,
        patience_epochs=args.patience,
        max_epochs=args.max_epochs,
        seed=args.seed if seed is None else seed,
    )


def _read_table(path) -> dataset.FeatureTable:
    with open(path, newline="", encoding="utf-8") as fh:
        return dataset.read_feature_csv(fh)


# --------------------------------------------------------------------------
# subcommands


def cmd_synth(args) -> None:
    samples = dataset.gen_synthetic(args.n, args.seed, args.noise_sd_db)
    with open(args.output, "w", newline="", encoding="utf-8") as fh:
        dataset.write_samples(samples, fh, args.format)
    log.info("wrote %d samples to %s", len(samples), args.output)


def cmd_extract(args) -> None:
    _check_readable(args.input)
    with open(args.input, newline="", encoding="utf-8") as fh:
        stream = dataset.iter_samples(fh, args.format)
        kept = (s for s in stream
                if s.noise_floor_db is None
                or s.noise_floor_db - s.measured_path_loss_db > args.noise_margin_db)
        if args.per_stratum is not None:
            kept = iter(dataset.subsample(list(kept), args.per_stratum, args.seed))
        n = 0
        with open(args.output, "w", newline="", encoding="utf-8") as out:
            out.write(",".join(dataset.FEATURE_CSV_HEADER) + "\n")
            writer = csv.writer(out, lineterminator="\n")
            for s in kept:
                row = extract_features(s.profile, args.radius_m).as_array().tolist()
                writer.writerow([s.group] + [repr(v) for v in row]
                                + [repr(float(s.measured_path_loss_db))])
                n += 1
    log.info("extracted features for %d samples", n)


def cmd_train(args) -> None:
    _check_readable(args.input)
    table = _read_table(args.input)
    if len(table) < 2:
        raise ConfigError("need at least 2 rows to train")
    tc = _train_config(args)
    tr, va = dataset.split_indices(len(table), tc.train_fraction, args.seed)
    x = select_config(table.features, args.features)
    y = table.path_loss_db
    model, history = nn.train(x[tr], y[tr], x[va], y[va], nn.MlpConfig(input_dim=args.features), tc)
    with open(args.output, "w", encoding="utf-8") as fh:
        nn.save_model(model, fh)
    hist_path = args.history or f"{args.output}.history.csv"
    with open(hist_path, "w", newline="", encoding="utf-8") as fh:
        history.write_csv(fh)
    log.info("trained %d epochs, best %d, val RMSE %.3f dB",
             history.epochs_run, history.best_epoch, float(np.sqrt(history.best_val_mse)))


def cmd_eval(args) -> None:
    _check_readable(args.model, args.input)
    with open(args.model, encoding="utf-8") as fh:
        model = nn.load_model(fh)
    table = _read_table(args.input)
    if len(table) == 0:
        raise ConfigError("no rows to evaluate")
    pred = model.predict(select_config(table.features, model.config.input_dim))
    y = table.path_loss_db
    f = table.features
    abs_err = np.abs(pred - y)
    result = {
        "n": len(table),
        "rmse": metrics.rmse(pred, y),
        "mae": metrics.mae(pred, y),
        "r2": metrics.r_squared(pred, y) if np.ptp(y) > 0 else None,
        "fspl_rmse": metrics.rmse(metrics.fspl(f[:, 0], f[:, 1]), y),
        "pearson_abs_error_distance": _safe_pearson(f[:, 1], abs_err),
        "pearson_abs_error_frequency": _safe_pearson(f[:, 0], abs_err),
        "param_count": model.param_count,
    }
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    (out / "metrics.json").write_text(json.dumps(result, indent=2) + "\n", encoding="utf-8")
    grid = metrics.hexbin(y, pred, args.hex_cell_size)
    with open(out / "hexbin.csv", "w", newline="", encoding="utf-8") as fh:
        grid.write_csv(fh)
    with open(out / "error_by_distance.csv", "w", newline="", encoding="utf-8") as fh:
        metrics.bin_abs_error_by_distance(f[:, 1], pred, y, args.bin_width_m).write_csv(fh)
    with open(out / "error_by_frequency.csv", "w", newline="", encoding="utf-8") as fh:
        metrics.abs_error_by_frequency(f[:, 0], pred, y).write_csv(fh)
    log.info("RMSE %.3f dB on %d rows", result["rmse"], result["n"])


def _safe_pearson(x, y):
    try:
        return metrics.pearson(x, y)
    except ValueError:
        return None


def _experiment_config(args, extras: dict) -> experiments.ExperimentConfig:
    if not args.input or not args.output:
        raise UsageError("--input and --output are required (on the command line or in --config)")
    _check_readable(args.input, args.external_test)
    train = {"batch_size": args.batch_size, "learning_rate": args.learning_rate,
             "patience_epochs": args.patience, "max_epochs": args.max_epochs}
    train.update(extras.get("train", {}))
    features = args.features
    if args.command == "ablation":
        features = list(features) if features else list(FEATURE_CONFIGS)
    return experiments.ExperimentConfig(
        data=args.input,
        output_dir=args.output,
        external_test=args.external_test,
        scenarios=extras.get("scenarios", "loo"),
        feature_configs=features if isinstance(features, list) else [features],
        n_runs=args.runs,
        base_seed=args.seed,
        parallelism=args.parallelism,
        k=getattr(args, "k", 20),
        train=train,
        reference_rmse=extras.get("reference_rmse", {}),
    )


def cmd_ablation(args, extras) -> None:
    cfg = _experiment_config(args, extras)
    result = experiments.run_ablation_experiment(cfg)
    for name, vals in result.rows():
        log.info("%s %s", name, " ".join(f"{v:.3f}" for v in vals))


def cmd_repeat_study(args, extras) -> None:
    cfg = _experiment_config(args, extras)
    study = experiments.run_repeat_experiment(cfg, args.scenario, cfg.feature_configs[0])
    for row in study.rows():
        log.info("%s", row)


def cmd_scenarios(args) -> None:
    _check_readable(args.input)
    table = _read_table(args.input)
    scen = dataset.build_scenarios(table.group_labels())
    payload = [
        {"name": s.name, "train_groups": sorted(s.train_groups),
         "test_groups": sorted(s.test_groups), "external_test": s.external_test}
        for s in scen
    ]
    text = json.dumps(payload, indent=2) + "\n"
    if args.output:
        Path(args.output).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    experiment = args.command in ("ablation", "repeat-study")
    try:
        extras = _apply_config(args, experiment)
        if args.command == "synth":
            cmd_synth(args)
        elif args.command == "extract":
            cmd_extract(args)
        elif args.command == "train":
            cmd_train(args)
        elif args.command == "eval":
            cmd_eval(args)
        elif args.command == "ablation":
            cmd_ablation(args, extras)
        elif args.command == "repeat-study":
            cmd_repeat_study(args, extras)
        elif args.command == "scenarios":
            cmd_scenarios(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"pathloss-ml: error: {exc}", file=sys.stderr)
        return 2
    except (PathlossError, ValueError) as exc:
        print(f"pathloss-ml: error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"pathloss-ml: error: {exc}", file=sys.stderr)
        return 1
    return 0


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
