"""Experiment grid: task x outage scenario x repair method.

Each cell runs load -> mask -> task split -> fill or impute -> optional
PCA -> train -> evaluate and yields one report row. Seeds for every random
stage are derived from the master seed and the part of the cell key the
stage depends on (see :func:`cell_seeds`), so cells sharing a task or a
scenario see the same split, masks and initialization and differ only in
the repair method.
"""

from __future__ import annotations

import csv
import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import __version__
from .data import (
    ACTIVITY_NAMES,
    N_ACTIVITIES,
    N_SUBJECTS,
    HarDataset,
    SplitConfig,
    Standardizer,
    dataset_checksum,
    derive_feature_groups,
    load_uci_har,
    split_indices,
)
from .imputation import fit_knn, fit_simple, impute_array
from .masking import (
    BUILTIN_SCENARIOS,
    MaskedDataset,
    OutageScenario,
    WindowTiming,
    apply_mask,
    concat_masked,
    plan_outages,
)
from .pca import components_for_variance, fit_pca, transform
from .training import TrainConfig, derive_seed, predict, subject_accuracy_by_activity, train

log = logging.getLogger(__name__)

REPORT_VERSION = 1
TASKS = ("activity", "subject")
CLEAN = "clean"
METHODS = ("none", "simple", "knn", "simple_pca", "knn_pca")
METHOD_LABELS = {"none": "missing", "simple": "SI", "knn": "KNN", "simple_pca": "SI+PCA", "knn_pca": "KNN+PCA"}
REFERENCE_SCENARIOS = tuple(BUILTIN_SCENARIOS)
NUM_CLASSES = {"activity": N_ACTIVITIES, "subject": N_SUBJECTS}


class ExperimentError(RuntimeError):
    def __init__(self, stage, spec, cause):
        self.stage = stage
        self.spec = spec
        super().__init__(f"[{stage}] {spec.key()}: {cause}")


@dataclass(frozen=True)
class GridConfig:
    epochs: int = 300
    batch_size: int = 64
    learning_rate: float = 1e-3
    val_fraction: float = 0.2
    hidden_size: int = 128
    dense_units: int = 64
    dropout_p: float = 0.2
    timesteps: int = 1
    knn_k: int = 5
    simple_statistic: str = "mean"
    pca_components: int = 175
    pca_variance_target: float = 0.99
    standardize: bool = False
    mask_split: str = "both"
    subject_test_fraction: float = 0.2
    stratify: str = "none"
    window_span_s: float = 2.56
    stride_s: float = 1.28
    repeats: int = 1

    def __post_init__(self):
        if self.mask_split not in ("both", "train", "test"):
            raise ValueError(f"mask_split must be both/train/test, got {self.mask_split!r}")
        if self.simple_statistic not in ("mean", "median"):
            raise ValueError(f"simple_statistic must be mean/median, got {self.simple_statistic!r}")
        if self.repeats < 1:
            raise ValueError("repeats must be >= 1")
        self.train_config(0)  # validates the training fields

    @property
    def timing(self) -> WindowTiming:
        return WindowTiming(self.window_span_s, self.stride_s)

    def train_config(self, seed: int) -> TrainConfig:
        return TrainConfig(
            epochs=self.epochs, batch_size=self.batch_size, learning_rate=self.learning_rate,
            val_fraction=self.val_fraction, seed=seed, hidden_size=self.hidden_size,
            dense_units=self.dense_units, dropout_p=self.dropout_p, timesteps=self.timesteps,
        )

    def to_dict(self) -> dict:
        return asdict(self)


SMOKE_PROFILE = {"epochs": 10}


@dataclass(frozen=True)
class ExperimentSpec:
    task: str
    scenario: str
    method: str
    master_seed: int = 0
    repeat: int = 0

    def __post_init__(self):
        if self.task not in TASKS:
            raise ValueError(f"task must be one of {TASKS}, got {self.task!r}")
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}, got {self.method!r}")

    def key(self) -> str:
        return f"{self.task}/{self.scenario}/{self.method}"


def cell_seeds(spec: ExperimentSpec) -> dict:
    """Per-stage seeds for a cell.

    split <- (master, "split"); masks <- (master, scenario, part);
    init and training <- (master, task). A nonzero ``repeat`` index is
    appended to every key.
    """
    m = spec.master_seed
    extra = (f"repeat{spec.repeat}",) if spec.repeat else ()
    return {
        "split": derive_seed(m, "split", *extra),
        "mask_train": derive_seed(m, spec.scenario, "mask", "train", *extra),
        "mask_test": derive_seed(m, spec.scenario, "mask", "test", *extra),
        "init": derive_seed(m, spec.task, "init", *extra),
        "train": derive_seed(m, spec.task, "train", *extra),
    }


class DataContext:
    """Loaded dataset plus caches shared by the cells of one grid run."""

    def __init__(self, train: HarDataset, test: HarDataset, scenarios=None, data_root=None):
        self.train = train
        self.test = test
        self.data_root = str(data_root) if data_root is not None else None
        self.groups = derive_feature_groups(train.feature_names)
        self.checksum = dataset_checksum(train, test)
        self.scenarios = dict(BUILTIN_SCENARIOS)
        for s in scenarios or ():
            self.scenarios[s.name] = s
        self._masks = {}
        self._filled = {}

    @classmethod
    def from_dir(cls, root=None, scenarios=None) -> "DataContext":
        train, test = load_uci_har(root)
        return cls(train, test, scenarios, root)

    def scenario(self, name) -> OutageScenario:
        try:
            return self.scenarios[name]
        except KeyError:
            raise KeyError(f"unknown scenario {name!r}; known: {', '.join(self.scenarios)}") from None

    def masked_parts(self, scenario: str, seeds: dict, cfg: GridConfig):
        key = (scenario, seeds["mask_train"], seeds["mask_test"], cfg.mask_split, cfg.window_span_s, cfg.stride_s)
        if key not in self._masks:
            if scenario == CLEAN:
                parts = (MaskedDataset.clean(self.train), MaskedDataset.clean(self.test))
            else:
                sc = self.scenario(scenario)
                parts = []
                for part, ds, seed in (("train", self.train, seeds["mask_train"]),
                                       ("test", self.test, seeds["mask_test"])):
                    if cfg.mask_split in ("both", part):
                        plan = plan_outages(sc, ds, cfg.timing, seed)
                        parts.append(apply_mask(plan, self.groups, ds))
                    else:
                        parts.append(MaskedDataset.clean(ds))
                parts = tuple(parts)
            self._masks[key] = parts
        return self._masks[key]

    def cached_fill(self, key, compute):
        if key not in self._filled:
            self._filled[key] = compute()
        return self._filled[key]


def task_split(task: str, mtrain: MaskedDataset, mtest: MaskedDataset, seed: int, cfg: GridConfig):
    if task == "activity":
        return mtrain, mtest
    combined = concat_masked(mtrain, mtest)
    tr, te = split_indices(combined.base.subject_ids,
                           SplitConfig(cfg.subject_test_fraction, seed, cfg.stratify))
    return combined.take(tr), combined.take(te)


def task_labels(task: str, ds: HarDataset) -> np.ndarray:
    # activities 1..6 -> 0..5, subjects 1..30 -> 0..29
    return (ds.activity_labels if task == "activity" else ds.subject_ids) - 1


def _fill(spec, ctx, cfg, seeds, mtrain, mtest, info):
    imputer = spec.method.replace("_pca", "")
    if imputer == "none":
        return (np.where(mtrain.missing, 0.0, mtrain.base.features),
                np.where(mtest.missing, 0.0, mtest.base.features))

    def compute():
        if imputer == "simple":
            model = fit_simple(mtrain, cfg.simple_statistic)
        else:
            model = fit_knn(mtrain, cfg.knn_k)
        a, fa = impute_array(model, mtrain.base.features, mtrain.missing)
        b, fb = impute_array(model, mtest.base.features, mtest.missing)
        return a, b, fa + fb, model.describe()

    key = (spec.task, spec.scenario, imputer, seeds["split"], seeds["mask_train"], seeds["mask_test"],
           cfg.knn_k, cfg.simple_statistic, cfg.mask_split)
    a, b, fallbacks, desc = ctx.cached_fill(key, compute)
    info["imputer"] = desc
    info["fallback_cells"] = fallbacks
    return a, b


def run_experiment(spec: ExperimentSpec, ctx: DataContext, cfg: GridConfig = GridConfig()) -> dict:
    """Run one grid cell and return its report row."""
    t0 = time.perf_counter()
    seeds = cell_seeds(spec)
    info = {}
    stage = "mask"
    try:
        mtrain, mtest = ctx.masked_parts(spec.scenario, seeds, cfg)
        stage = "split"
        mtrain, mtest = task_split(spec.task, mtrain, mtest, seeds["split"], cfg)
        cells = mtrain.missing.sum() + mtest.missing.sum()
        total = mtrain.missing.size + mtest.missing.size
        rows = mtrain.missing.any(axis=1).sum() + mtest.missing.any(axis=1).sum()
        stage = "impute"
        Xtr, Xte = _fill(spec, ctx, cfg, seeds, mtrain, mtest, info)
        if cfg.standardize:
            st = Standardizer.fit(Xtr)
            Xtr, Xte = st.transform(Xtr), st.transform(Xte)
        if spec.method.endswith("_pca"):
            stage = "pca"
            r = min(cfg.pca_components, len(Xtr) - 1, Xtr.shape[1])
            pca = fit_pca(Xtr, r)
            Xtr, Xte = transform(pca, Xtr), transform(pca, Xte)
            info["pca_components"] = r
            info["pca_retained_variance"] = float(pca.explained_variance_ratio.sum())
            info["components_for_variance"] = components_for_variance(pca.spectrum, cfg.pca_variance_target)
        stage = "train"
        ytr = task_labels(spec.task, mtrain.base)
        yte = task_labels(spec.task, mtest.base)
        model, history = train(Xtr, ytr, NUM_CLASSES[spec.task], cfg.train_config(seeds["train"]), seeds["init"])
        stage = "evaluate"
        pred = predict(model, Xte)
        acc = float((pred == yte).mean())
    except Exception as exc:
        raise ExperimentError(stage, spec, exc) from exc

    row = {
        "task": spec.task,
        "scenario": spec.scenario,
        "method": spec.method,
        "status": "ok",
        "accuracy": acc,
        "missing_cell_fraction": float(cells / total),
        "masked_row_fraction": float(rows / (len(mtrain) + len(mtest))),
        "n_train": len(mtrain),
        "n_test": len(mtest),
        "final_val_accuracy": float(history.val_acc[-1]),
        "seeds": seeds,
        "repeat": spec.repeat,
        **info,
    }
    if spec.task == "subject":
        row["per_activity_subject_accuracy"] = subject_accuracy_by_activity(
            pred, yte, mtest.base.activity_labels)
    row["runtime_s"] = round(time.perf_counter() - t0, 3)
    return row


# --------------------------------------------------------------------------
# grid


@dataclass
class ExperimentReport:
    version: int = REPORT_VERSION
    dataset_checksum: str = ""
    config: dict = field(default_factory=dict)
    rows: list = field(default_factory=list)
    per_activity_subject_accuracy: dict = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)

    @property
    def failed(self) -> list:
        return [r for r in self.rows if r.get("status") == "failed"]

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentReport":
        return cls(**d)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True, allow_nan=True)

    @classmethod
    def from_json(cls, text: str) -> "ExperimentReport":
        return cls.from_dict(json.loads(text))

    def row(self, task, scenario, method):
        for r in self.rows:
            if (r["task"], r["scenario"], r["method"]) == (task, scenario, method):
                return r
        return None

    def accuracy(self, task, scenario, method):
        r = self.row(task, scenario, method)
        return None if r is None or r.get("status") != "ok" else r["accuracy"]


def grid_cells(tasks, scenarios, methods, master_seed=0) -> list[ExperimentSpec]:
    """Cells in report order; ``clean`` pairs only with method ``none``."""
    cells = []
    for task in tasks:
        for scenario in scenarios:
            for method in methods:
                if scenario == CLEAN and method != "none":
                    continue
                cells.append(ExperimentSpec(task, scenario, method, master_seed))
    return cells


def _run_cell(spec, ctx, cfg):
    accs, rows = [], []
    for rep in range(cfg.repeats):
        rows.append(run_experiment(replace(spec, repeat=rep), ctx, cfg))
        accs.append(rows[-1]["accuracy"])
    row = rows[0]
    if cfg.repeats > 1:
        row["accuracy_runs"] = accs
        row["accuracy"] = float(np.mean(accs))
        row["accuracy_sd"] = float(np.std(accs, ddof=1))
    return row


def _worker(args):
    spec, root, scenarios, cfg = args
    ctx = DataContext.from_dir(root, [OutageScenario.from_dict(s) for s in scenarios])
    try:
        return _run_cell(spec, ctx, cfg)
    except Exception as exc:
        return _failed_row(spec, exc)


def _failed_row(spec, exc):
    return {"task": spec.task, "scenario": spec.scenario, "method": spec.method,
            "status": "failed", "error": str(exc)}


def run_grid(tasks, scenarios, methods, master_seed: int, ctx: DataContext,
             cfg: GridConfig = GridConfig(), jobs: int = 1, argv=None) -> ExperimentReport:
    """Run every cell; failures are recorded as rows and the grid continues."""
    if not tasks or not scenarios or not methods:
        raise ValueError("tasks, scenarios and methods must be nonempty")
    cells = grid_cells(tasks, scenarios, methods, master_seed)
    if jobs > 1:
        if ctx.data_root is None:
            raise ValueError("parallel grid runs need a data directory to reload in workers")
        custom = [s.to_dict() for k, s in ctx.scenarios.items() if k not in BUILTIN_SCENARIOS]
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(_worker, [(c, ctx.data_root, custom, cfg) for c in cells]))
    else:
        rows = []
        for c in cells:
            log.info("running %s", c.key())
            try:
                rows.append(_run_cell(c, ctx, cfg))
            except Exception as exc:
                log.error("%s", exc)
                rows.append(_failed_row(c, exc))

    report = ExperimentReport(
        dataset_checksum=ctx.checksum,
        config={
            **cfg.to_dict(),
            "master_seed": master_seed,
            "tasks": list(tasks),
            "scenarios": list(scenarios),
            "methods": list(methods),
            "argv": list(argv) if argv is not None else None,
        },
        rows=rows,
        metadata={
            "package_version": __version__,
            "feature_groups": ctx.groups.metadata(),
            "label_maps": {
                "activity": {str(code - 1): name for code, name in ACTIVITY_NAMES.items()},
                "subject": {str(s - 1): s for s in range(1, N_SUBJECTS + 1)},
            },
            "scenarios": {k: ctx.scenarios[k].to_dict() for k in scenarios if k in ctx.scenarios},
            "seed_rule": cell_seeds.__doc__.strip(),
        },
    )
    base = report.row("subject", CLEAN, "none")
    if base is not None and base.get("status") == "ok":
        report.per_activity_subject_accuracy = dict(base["per_activity_subject_accuracy"])
    return report


# --------------------------------------------------------------------------
# output

TABLE_COLUMNS = ["scenario", "label"] + [METHOD_LABELS[m] for m in METHODS]


def _fmt(x):
    return "" if x is None else repr(float(x))


def _scenario_order(report):
    seen = []
    for r in report.rows:
        if r["scenario"] != CLEAN and r["scenario"] not in seen:
            seen.append(r["scenario"])
    return seen


def _write_table(path, report, task):
    labels = report.metadata.get("scenarios", {})
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TABLE_COLUMNS)
        for sc in _scenario_order(report):
            if not any(r["task"] == task and r["scenario"] == sc for r in report.rows):
                continue
            w.writerow([sc, labels.get(sc, {}).get("label", "")] +
                       [_fmt(report.accuracy(task, sc, m)) for m in METHODS])


def _write_bars(path, report, task):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["scenario", "method", "accuracy"])
        base = report.accuracy(task, CLEAN, "none")
        if base is not None:
            w.writerow([CLEAN, "baseline", _fmt(base)])
        for r in report.rows:
            if r["task"] == task and r["scenario"] != CLEAN and r.get("status") == "ok":
                w.writerow([r["scenario"], METHOD_LABELS[r["method"]], _fmt(r["accuracy"])])


def emit_report(report: ExperimentReport, fmt: str, out) -> list[Path]:
    """Write the report as JSON (``out`` is a file) or a CSV set (``out`` is a directory).

    The CSV set is ``table1.csv`` / ``table2.csv`` (activity / subject
    accuracy per scenario and method), ``fig2.csv`` (subject accuracy per
    activity) and ``fig3.csv`` / ``fig4.csv`` (bar-chart rows per task).
    """
    out = Path(out)
    if fmt == "json":
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(report.to_json())
        return [out]
    if fmt != "csv":
        raise ValueError(f"format must be json or csv, got {fmt!r}")
    out.mkdir(parents=True, exist_ok=True)
    paths = {name: out / f"{name}.csv" for name in ("table1", "table2", "fig2", "fig3", "fig4")}
    _write_table(paths["table1"], report, "activity")
    _write_table(paths["table2"], report, "subject")
    with open(paths["fig2"], "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["activity", "subject_accuracy"])
        for name, acc in report.per_activity_subject_accuracy.items():
            w.writerow([name, _fmt(acc)])
    _write_bars(paths["fig3"], report, "activity")
    _write_bars(paths["fig4"], report, "subject")
    return list(paths.values())
