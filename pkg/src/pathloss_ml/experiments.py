"""Repeated-run evaluation protocols.

Every run ``i`` of a scenario draws its own train/validation split
(seed ``base_seed + i``) and its own initial weights and shuffling order
(seeds derived by hashing ``(base_seed, i, tag)``). Split seeds depend only
on the run index, so runs with the same index are paired across feature
configurations.
"""
from __future__ import annotations

import csv
import hashlib
import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence, TextIO

import numpy as np

from . import nn
from .dataset import NO_HOLDOUT, FeatureTable, Scenario, build_scenarios, read_feature_csv, split_indices
from .errors import ConfigError
from .features import FEATURE_CONFIGS, select_config
from .metrics import rmse


def derive_seed(base_seed: int, run: int, tag: str) -> int:
    digest = hashlib.sha256(f"{base_seed}:{run}:{tag}".encode()).digest()
    return int.from_bytes(digest[:4], "little")


@dataclass(frozen=True)
class RunRecord:
    scenario: str
    feature_config: int
    run: int
    seed: int
    init_seed: int
    val_rmse: float
    test_rmse: float
    epochs: int
    best_epoch: int
    wall_time_s: float = field(default=0.0, compare=False)


RUNS_CSV_FIELDS = (
    "scenario",
    "feature_config",
    "run",
    "seed",
    "init_seed",
    "val_rmse",
    "test_rmse",
    "epochs",
    "best_epoch",
)


@dataclass(frozen=True)
class Summary:
    mean: float
    sd: float
    min: float
    max: float
    median: float
    n: int

    @classmethod
    def of(cls, values: Sequence[float]) -> "Summary":
        v = np.asarray(values, dtype=np.float64)
        if v.size == 0:
            raise ValueError("cannot summarise zero runs")
        sd = float(v.std(ddof=1)) if v.size > 1 else 0.0
        return cls(float(v.mean()), sd, float(v.min()), float(v.max()), float(np.median(v)), int(v.size))


@dataclass(frozen=True)
class RunStats:
    validation: Summary
    test: Summary
    n_runs: int

    @classmethod
    def from_records(cls, records: Sequence[RunRecord]) -> "RunStats":
        ordered = sorted(records, key=lambda r: (r.run, r.seed))
        return cls(
            Summary.of([r.val_rmse for r in ordered]),
            Summary.of([r.test_rmse for r in ordered]),
            len(ordered),
        )


# --------------------------------------------------------------------------
# single runs


@dataclass(frozen=True)
class _RunJob:
    x_pool: np.ndarray
    y_pool: np.ndarray
    x_test: np.ndarray
    y_test: np.ndarray
    scenario: str
    feature_config: int
    run: int
    base_seed: int
    train_config: nn.TrainConfig
    mlp_config: nn.MlpConfig


def evaluate_test(model: nn.MlpModel, x_test: np.ndarray, y_test: np.ndarray) -> float:
    """The only place a run looks at its test rows."""
    return rmse(model.predict(x_test), y_test)


def _execute(job: _RunJob) -> RunRecord:
    t0 = time.perf_counter()
    split_seed = job.base_seed + job.run
    init_seed = derive_seed(job.base_seed, job.run, "init")
    tr, va = split_indices(len(job.y_pool), job.train_config.train_fraction, split_seed)
    cfg = replace(job.train_config, seed=derive_seed(job.base_seed, job.run, "train"))
    model, history = nn.train(
        job.x_pool[tr], job.y_pool[tr], job.x_pool[va], job.y_pool[va], job.mlp_config, cfg, init_seed
    )
    val = rmse(model.predict(job.x_pool[va]), job.y_pool[va])
    test = evaluate_test(model, job.x_test, job.y_test)
    return RunRecord(
        scenario=job.scenario,
        feature_config=job.feature_config,
        run=job.run,
        seed=split_seed,
        init_seed=init_seed,
        val_rmse=val,
        test_rmse=test,
        epochs=history.epochs_run,
        best_epoch=history.best_epoch,
        wall_time_s=time.perf_counter() - t0,
    )


def _scenario_data(
    table: FeatureTable, scenario: Scenario, test_table: FeatureTable | None
) -> tuple[FeatureTable, FeatureTable]:
    present = set(table.group_labels())
    missing = sorted(set(scenario.train_groups) - present)
    if not scenario.external_test:
        missing += sorted(set(scenario.test_groups) - present)
    if missing:
        raise ConfigError(f"scenario {scenario.name!r} names groups absent from the data: {missing}")
    pool = table.subset(table.in_groups(scenario.train_groups))
    if scenario.external_test:
        if test_table is None or len(test_table) == 0:
            raise ConfigError(f"scenario {scenario.name!r} needs an external test set")
        test = test_table
    else:
        test = table.subset(table.in_groups(scenario.test_groups))
        if len(test) == 0:
            raise ConfigError(f"scenario {scenario.name!r} has no test rows")
    return pool, test


def _run_jobs(jobs: list[_RunJob], parallelism: int) -> list[RunRecord]:
    if parallelism <= 1 or len(jobs) <= 1:
        records = [_execute(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=parallelism) as pool:
            records = list(pool.map(_execute, jobs))
    return sorted(records, key=lambda r: (r.scenario, r.feature_config, r.run))


def _jobs_for(
    table: FeatureTable,
    scenario: Scenario,
    feature_config: int,
    n_runs: int,
    base_seed: int,
    train_config: nn.TrainConfig | None,
    test_table: FeatureTable | None,
) -> list[_RunJob]:
    if feature_config not in FEATURE_CONFIGS:
        raise ConfigError(f"feature config must be one of {FEATURE_CONFIGS}")
    if n_runs < 1:
        raise ConfigError("n_runs must be >= 1")
    pool, test = _scenario_data(table, scenario, test_table)
    x_pool = select_config(pool.features, feature_config)
    x_test = select_config(test.features, feature_config)
    tc = train_config or nn.TrainConfig()
    mc = nn.MlpConfig(input_dim=feature_config)
    return [
        _RunJob(x_pool, pool.path_loss_db, x_test, test.path_loss_db, scenario.name,
                feature_config, i, base_seed, tc, mc)
        for i in range(n_runs)
    ]


def run_scenario(
    table: FeatureTable,
    scenario: Scenario,
    feature_config: int = 8,
    n_runs: int = 20,
    base_seed: int = 0,
    train_config: nn.TrainConfig | None = None,
    test_table: FeatureTable | None = None,
    parallelism: int = 1,
) -> tuple[list[RunRecord], RunStats]:
    """Train ``n_runs`` independent models for one holdout scenario."""
    jobs = _jobs_for(table, scenario, feature_config, n_runs, base_seed, train_config, test_table)
    records = _run_jobs(jobs, parallelism)
    return records, RunStats.from_records(records)


# --------------------------------------------------------------------------
# ablation


@dataclass
class AblationTable:
    """Test-RMSE mean/SD per (scenario, feature config), as in a holdout table."""

    scenarios: list[str]
    configs: list[int]
    cells: dict[tuple[str, int], RunStats]
    records: list[RunRecord]
    reference_rmse: dict[str, float] = field(default_factory=dict)

    def mean_row(self) -> dict[int, tuple[float, float]]:
        """Cross-scenario average of the per-scenario test mean and SD."""
        out = {}
        for c in self.configs:
            stats = [self.cells[(s, c)].test for s in self.scenarios]
            out[c] = (float(np.mean([t.mean for t in stats])), float(np.mean([t.sd for t in stats])))
        return out

    def rows(self) -> list[tuple[str, list[float]]]:
        out = []
        for s in self.scenarios:
            vals = []
            for c in self.configs:
                t = self.cells[(s, c)].test
                vals += [t.mean, t.sd]
            out.append((s, vals))
        mean = self.mean_row()
        out.append(("Mean", [v for c in self.configs for v in mean[c]]))
        return out

    def write_csv(self, stream: TextIO) -> None:
        w = csv.writer(stream, lineterminator="\n")
        ref = bool(self.reference_rmse)
        header = ["scenario"] + (["reference_rmse"] if ref else [])
        for c in self.configs:
            header += [f"f{c}_mean", f"f{c}_sd"]
        w.writerow(header)
        ref_vals = [self.reference_rmse.get(s) for s in self.scenarios]
        known = [v for v in ref_vals if v is not None]
        for name, vals in self.rows():
            row = [name]
            if ref:
                if name == "Mean":
                    v = float(np.mean(known)) if known else None
                else:
                    v = self.reference_rmse.get(name)
                row.append("" if v is None else repr(float(v)))
            w.writerow(row + [repr(v) for v in vals])


def ablation_study(
    table: FeatureTable,
    scenarios: Sequence[Scenario],
    configs: Sequence[int] = FEATURE_CONFIGS,
    n_runs: int = 20,
    base_seed: int = 0,
    train_config: nn.TrainConfig | None = None,
    test_table: FeatureTable | None = None,
    parallelism: int = 1,
    reference_rmse: dict[str, float] | None = None,
) -> AblationTable:
    configs = list(configs)
    bad = [c for c in configs if c not in FEATURE_CONFIGS]
    if bad:
        raise ConfigError(f"unknown feature configs {bad}")
    jobs = []
    for sc in scenarios:
        for c in configs:
            jobs += _jobs_for(table, sc, c, n_runs, base_seed, train_config, test_table)
    records = _run_jobs(jobs, parallelism)
    cells = {}
    for sc in scenarios:
        for c in configs:
            cells[(sc.name, c)] = RunStats.from_records(
                [r for r in records if r.scenario == sc.name and r.feature_config == c]
            )
    return AblationTable([s.name for s in scenarios], configs, cells, records, dict(reference_rmse or {}))


# --------------------------------------------------------------------------
# repeated-run study and best-k selection


def select_best_k(records: Sequence[RunRecord], k: int) -> list[RunRecord]:
    """The ``k`` runs with the lowest validation RMSE; ties go to the lower seed."""
    if not 1 <= k <= len(records):
        raise ValueError(f"k must lie in [1, {len(records)}], got {k}")
    return sorted(records, key=lambda r: (r.val_rmse, r.seed))[:k]


@dataclass
class RepeatStudy:
    records: list[RunRecord]
    all_runs: RunStats
    best_k: RunStats
    k: int

    def rows(self) -> list[tuple[str, float, float, float, float]]:
        """(label, val, val_sd, test, test_sd); SD columns are NaN for order statistics."""
        a, b = self.all_runs, self.best_k
        nan = float("nan")
        return [
            ("Min", a.validation.min, nan, a.test.min, nan),
            ("Max", a.validation.max, nan, a.test.max, nan),
            ("Median", a.validation.median, nan, a.test.median, nan),
            (f"Mean ({a.n_runs} models)", a.validation.mean, a.validation.sd, a.test.mean, a.test.sd),
            (f"Mean (Best {self.k} models)", b.validation.mean, b.validation.sd, b.test.mean, b.test.sd),
        ]

    def write_csv(self, stream: TextIO) -> None:
        w = csv.writer(stream, lineterminator="\n")
        w.writerow(["statistic", "val_rmse", "val_sd", "test_rmse", "test_sd"])
        for label, *vals in self.rows():
            w.writerow([label] + ["" if np.isnan(v) else repr(v) for v in vals])


def repeat_study(
    table: FeatureTable,
    scenario: Scenario,
    feature_config: int = 8,
    n_runs: int = 200,
    base_seed: int = 0,
    k: int = 20,
    train_config: nn.TrainConfig | None = None,
    test_table: FeatureTable | None = None,
    parallelism: int = 1,
) -> RepeatStudy:
    if n_runs < k:
        raise ConfigError(f"n_runs ({n_runs}) must be at least k ({k})")
    records, stats = run_scenario(
        table, scenario, feature_config, n_runs, base_seed, train_config, test_table, parallelism
    )
    best = select_best_k(records, k)
    return RepeatStudy(records, stats, RunStats.from_records(best), k)


# --------------------------------------------------------------------------
# file outputs


def write_runs_csv(records: Sequence[RunRecord], stream: TextIO) -> None:
    w = csv.writer(stream, lineterminator="\n")
    w.writerow(RUNS_CSV_FIELDS)
    for r in records:
        d = asdict(r)
        w.writerow([repr(d[k]) if isinstance(d[k], float) else d[k] for k in RUNS_CSV_FIELDS])


def write_stats_csv(cells: dict[tuple[str, int], RunStats], stream: TextIO) -> None:
    w = csv.writer(stream, lineterminator="\n")
    stat_names = ("mean", "sd", "min", "max", "median")
    w.writerow(
        ["scenario", "feature_config", "n_runs"]
        + [f"val_{s}" for s in stat_names]
        + [f"test_{s}" for s in stat_names]
    )
    for (name, cfg), st in cells.items():
        row = [name, cfg, st.n_runs]
        row += [repr(getattr(st.validation, s)) for s in stat_names]
        row += [repr(getattr(st.test, s)) for s in stat_names]
        w.writerow(row)


@dataclass
class ExperimentConfig:
    """JSON experiment description.

    ``data`` is a features CSV; ``external_test`` (optional) a features CSV
    used by the no-holdout scenario. ``scenarios`` is ``"loo"`` (every
    leave-one-group-out scenario, plus no-holdout when ``external_test`` is
    given) or a list of ``{"name", "train_groups", "test_groups"}`` objects.
    ``train`` overrides TrainConfig fields. ``reference_rmse`` maps scenario
    names to externally computed RMSEs reported alongside the ablation table.
    """

    data: str
    output_dir: str
    external_test: str | None = None
    scenarios: str | list = "loo"
    feature_configs: list[int] = field(default_factory=lambda: list(FEATURE_CONFIGS))
    n_runs: int = 20
    base_seed: int = 0
    parallelism: int = 1
    k: int = 20
    train: dict = field(default_factory=dict)
    reference_rmse: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown experiment config keys: {sorted(unknown)}")
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    def train_config(self) -> nn.TrainConfig:
        try:
            return nn.TrainConfig(**self.train)
        except TypeError as exc:
            raise ConfigError(f"bad train overrides: {exc}") from None

    def resolve_scenarios(self, table: FeatureTable, has_external: bool) -> list[Scenario]:
        if self.scenarios == "loo":
            out = build_scenarios(table.group_labels())
            return [s for s in out if has_external or not s.external_test]
        if not isinstance(self.scenarios, list):
            raise ConfigError('scenarios must be "loo" or a list of scenario objects')
        out = []
        for s in self.scenarios:
            try:
                test = s.get("test_groups", [])
                out.append(
                    Scenario(s["name"], frozenset(s["train_groups"]), frozenset(test),
                             external_test=bool(s.get("external_test", not test)))
                )
            except (KeyError, TypeError) as exc:
                raise ConfigError(f"bad scenario entry {s!r}: {exc}") from None
        return out


def _load_table(path: str) -> FeatureTable:
    with open(path, newline="", encoding="utf-8") as fh:
        return read_feature_csv(fh)


def _write_meta(out: Path, records: Sequence[RunRecord], extra: dict) -> None:
    meta = {
        "created_utc": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
        "wall_time_s": {f"{r.scenario}/{r.feature_config}/{r.run}": r.wall_time_s for r in records},
    }
    meta.update(extra)
    (out / "meta.json").write_text(json.dumps(meta, indent=2) + "\n", encoding="utf-8")


def _write(path: Path, writer, obj) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer(obj, fh)


def run_ablation_experiment(cfg: ExperimentConfig) -> AblationTable:
    """Run an ablation described by ``cfg`` and write runs.csv, stats.csv, ablation.csv."""
    table = _load_table(cfg.data)
    ext = _load_table(cfg.external_test) if cfg.external_test else None
    scenarios = cfg.resolve_scenarios(table, ext is not None)
    result = ablation_study(
        table, scenarios, cfg.feature_configs, cfg.n_runs, cfg.base_seed,
        cfg.train_config(), ext, cfg.parallelism, cfg.reference_rmse,
    )
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    _write(out / "runs.csv", write_runs_csv, result.records)
    _write(out / "stats.csv", write_stats_csv, result.cells)
    _write(out / "ablation.csv", AblationTable.write_csv, result)
    _write_meta(out, result.records, {"kind": "ablation"})
    return result


def run_repeat_experiment(cfg: ExperimentConfig, scenario_name: str | None = None,
                          feature_config: int = 8) -> RepeatStudy:
    """Run a repeated-run study and write runs.csv, stats.csv, repeat.csv."""
    table = _load_table(cfg.data)
    ext = _load_table(cfg.external_test) if cfg.external_test else None
    scenarios = cfg.resolve_scenarios(table, ext is not None)
    if scenario_name is None:
        # the no-holdout scenario when an external test set exists, else the first holdout
        pick = [s for s in scenarios if s.name == NO_HOLDOUT] or scenarios
    else:
        pick = [s for s in scenarios if s.name == scenario_name]
        if not pick:
            raise ConfigError(f"no scenario named {scenario_name!r}")
    scenario = pick[0]
    study = repeat_study(
        table, scenario, feature_config, cfg.n_runs, cfg.base_seed, cfg.k,
        cfg.train_config(), ext, cfg.parallelism,
    )
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    _write(out / "runs.csv", write_runs_csv, study.records)
    _write(out / "stats.csv", write_stats_csv, {(scenario.name, feature_config): study.all_runs})
    _write(out / "repeat.csv", RepeatStudy.write_csv, study)
    _write_meta(out, study.records, {"kind": "repeat-study", "scenario": scenario.name, "k": cfg.k})
    return study
