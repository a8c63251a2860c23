"""Experiment grid orchestration: methods x unbalances x complexities x
hyperparameters x repeated runs, with per-cell model selection and the
result matrices.

Every (cell, run) derives its data and training seeds from the plan's base
seed alone, so all methods and hyperparameter candidates in one cell consume
identical datasets and identical initialisation/shuffle streams.  Selection
happens on a balanced selection set disjoint from the final validation set;
reported matrices carry validation metrics of the selected candidate.

Runs append to ``runs.jsonl`` as they complete, which gives cheap resume;
all final outputs are written from the canonically sorted record set, so
completion order (and the worker count) never changes a byte of the output.
"""

from __future__ import annotations

import itertools
import json
import os
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np

from .data import MODE_CBUC, MODE_CI, Dataset, minority_label
from .evaluation import evaluate
from .ingest import TabularSchema, load_csv, subsample_to_unbalance
from .losses import LossSpec, class_ratio, k_factor
from .net import LayerSpec, OptimizerState
from .seeding import derive_key
from .synthdata import SynthConfig, generate_train, generate_validation
from .train import BrnnSpec, LfoConfig, TrainConfig, train_brnn, train_lfo, train_standard

PROBLEMS = ("CI", "CB", "UC")
STANDARD_METHODS = ("h_star", "weighted_ce", "cc", "focal", "fbi", "peo")
ALL_METHODS = STANDARD_METHODS + ("lfo", "brnn")
Z_METHODS = ("peo", "lfo", "brnn")

# Hyperparameter ranges follow the published exploration table; grids are
# log- or linearly spaced points within each range.
DEFAULT_GRIDS: dict[str, dict[str, list[float]]] = {
    "h_star": {},
    "weighted_ce": {"c": [0.5, 0.6, 0.7, 0.8, 0.9, 0.95]},
    "cc": {"C": [1.0, 3.0, 10.0, 30.0, 100.0, 300.0, 1000.0]},
    "focal": {"alpha": [0.0, 0.5, 1.0, 2.0, 3.0, 5.0]},
    "fbi": {"xi": [0.0, 0.25, 0.5, 1.0, 2.0, 3.0, 5.0]},
    "peo": {"lambda": [0.1, 0.5, 1.0, 2.0], "epsilon": [0.02, 0.05, 0.1]},
    "lfo": {"lr1": [1e-5, 1e-4, 1e-3], "lr2": [1e-5, 1e-4, 1e-3], "epsilon": [0.05]},
    "brnn": {"delta": [0.0, 0.25, 0.5, 1.0, 1.5, 2.0]},
}


class PlanError(ValueError):
    pass


class SweepOutputError(RuntimeError):
    pass


class IncompleteSweepError(RuntimeError):
    pass


@dataclass(frozen=True)
class MethodPlan:
    method: str
    grid: dict[str, tuple[float, ...]] = field(default_factory=dict)

    def candidates(self) -> list[dict[str, float]]:
        """Cartesian product over the grid, parameter names sorted."""
        grid = self.grid or {
            k: tuple(v) for k, v in DEFAULT_GRIDS[self.method].items()
        }
        if not grid:
            return [{}]
        names = sorted(grid)
        out = []
        for values in itertools.product(*(grid[n] for n in names)):
            out.append({n: float(v) for n, v in zip(names, values)})
        return out


@dataclass(frozen=True)
class SweepPlan:
    problem: str
    unbalance_grid: tuple[float, ...]
    methods: tuple[MethodPlan, ...]
    complexity_grid: tuple[float, ...] = ()  # theta_y levels, synthetic only
    synth: dict | None = None  # SynthConfig template fields
    real: dict | None = None  # {"csv": ..., "schema": ...}
    runs_per_cell: int = 10
    base_seed: int = 0
    epochs: int = 30
    batch_size: int = 128
    learning_rate: float = 1e-3
    hidden: tuple[int, ...] = (50, 10)
    activation: str = "relu"
    n_validation: int = 20_000
    n_selection: int = 10_000
    threshold: float = 0.5

    def __post_init__(self):
        if self.problem not in PROBLEMS:
            raise PlanError(f"unknown problem {self.problem!r}")
        if not self.unbalance_grid or not self.methods:
            raise PlanError("unbalance_grid and methods must be nonempty")
        if any(not 0.5 <= u < 1.0 for u in self.unbalance_grid):
            raise PlanError("unbalance values must lie in [0.5, 1)")
        if (self.synth is None) == (self.real is None):
            raise PlanError("exactly one of synthetic and real data must be given")
        if self.synth is not None and not self.complexity_grid:
            raise PlanError("synthetic sweeps need a complexity_grid")
        if self.runs_per_cell < 1:
            raise PlanError("runs_per_cell must be positive")
        for mp in self.methods:
            if mp.method not in ALL_METHODS:
                raise PlanError(f"unknown method {mp.method!r}")
            if mp.method in Z_METHODS and self.problem == "CI":
                raise PlanError(f"method {mp.method!r} needs a confounder; not valid for CI")

    @property
    def mode(self) -> str:
        return MODE_CI if self.problem == "CI" else MODE_CBUC

    def cells(self) -> list[tuple[float | None, float]]:
        thetas = list(self.complexity_grid) if self.synth is not None else [None]
        return [(t, u) for t in thetas for u in self.unbalance_grid]

    def tasks(self) -> list[dict]:
        out = []
        for mp in self.methods:
            for hyper in mp.candidates():
                for theta, unb in self.cells():
                    for run in range(self.runs_per_cell):
                        out.append({
                            "method": mp.method, "hyper": hyper,
                            "theta_y": theta, "unbalance": unb, "run": run,
                        })
        return out


def plan_from_dict(raw: dict) -> SweepPlan:
    methods = tuple(
        MethodPlan(m["method"], {k: tuple(v) for k, v in m.get("grid", {}).items()})
        for m in raw.get("methods", [])
    )
    data = raw.get("data", {})
    net = raw.get("net", {})
    trainsec = raw.get("train", {})
    return SweepPlan(
        problem=raw.get("problem", ""),
        unbalance_grid=tuple(raw.get("unbalance_grid", ())),
        complexity_grid=tuple(raw.get("complexity_grid", ())),
        methods=methods,
        synth=data.get("synthetic"),
        real=data.get("real"),
        runs_per_cell=int(raw.get("runs_per_cell", 10)),
        base_seed=int(raw.get("base_seed", 0)),
        epochs=int(trainsec.get("epochs", 30)),
        batch_size=int(trainsec.get("batch_size", 128)),
        learning_rate=float(trainsec.get("learning_rate", 1e-3)),
        hidden=tuple(net.get("hidden", (50, 10))),
        activation=net.get("activation", "relu"),
        n_validation=int(raw.get("n_validation", 20_000)),
        n_selection=int(raw.get("n_selection", 10_000)),
        threshold=float(raw.get("threshold", 0.5)),
    )


def plan_from_json(path) -> SweepPlan:
    with open(path) as fh:
        return plan_from_dict(json.load(fh))


def plan_to_dict(plan: SweepPlan) -> dict:
    return {
        "problem": plan.problem,
        "unbalance_grid": list(plan.unbalance_grid),
        "complexity_grid": list(plan.complexity_grid),
        "methods": [
            {"method": mp.method, "grid": {k: list(v) for k, v in mp.grid.items()}}
            for mp in plan.methods
        ],
        "data": {"synthetic": plan.synth} if plan.synth is not None else {"real": plan.real},
        "runs_per_cell": plan.runs_per_cell,
        "base_seed": plan.base_seed,
        "train": {"epochs": plan.epochs, "batch_size": plan.batch_size,
                  "learning_rate": plan.learning_rate},
        "net": {"hidden": list(plan.hidden), "activation": plan.activation},
        "n_validation": plan.n_validation,
        "n_selection": plan.n_selection,
        "threshold": plan.threshold,
    }


# ---------------------------------------------------------------------------
# single run


def _seed64(*parts) -> int:
    return derive_key(*parts) & ((1 << 63) - 1)


@lru_cache(maxsize=4)
def _load_real_source(csv_path: str, schema_path: str) -> Dataset:
    return load_csv(csv_path, TabularSchema.from_json(schema_path))


def _cell_data(plan: SweepPlan, theta: float | None, unbalance: float, run: int):
    """(train, selection, validation) for one cell and run."""
    data_seed = _seed64(plan.base_seed, "data", _cell_tag(theta), repr(float(unbalance)), run)
    if plan.synth is not None:
        template = dict(plan.synth)
        cfg = SynthConfig(theta_y=float(theta), unbalance=float(unbalance),
                          mode=plan.mode, seed=data_seed, **template)
        train = generate_train(cfg)
        select = generate_validation(cfg, plan.n_selection, purpose="selection")
        val = generate_validation(cfg, plan.n_validation, purpose="validation")
        return train, select, val
    source = _load_real_source(plan.real["csv"], plan.real["schema"])
    train, pool = subsample_to_unbalance(source, float(unbalance), plan.mode, seed=data_seed)
    select, val = _split_pool(pool, plan.mode)
    return train, select, val


def _split_pool(pool: Dataset, mode: str) -> tuple[Dataset, Dataset]:
    """Alternate rows within each class/cell: balanced halves."""
    if mode == MODE_CI:
        keys = [pool.y == c for c in (0, 1)]
    else:
        keys = [(pool.y == y) & (pool.z == z) for y in (0, 1) for z in (0, 1)]
    sel_idx, val_idx = [], []
    for mask in keys:
        idx = np.flatnonzero(mask)
        sel_idx.append(idx[0::2])
        val_idx.append(idx[1::2])
    return pool.subset(np.sort(np.concatenate(sel_idx))), pool.subset(np.sort(np.concatenate(val_idx)))


def _cell_tag(theta: float | None) -> str:
    return "real" if theta is None else repr(float(theta))


def _loss_for(method: str, hyper: dict, train: Dataset, mode: str) -> LossSpec:
    if method == "h_star":
        return LossSpec(kind="standard_ce")
    if method == "weighted_ce":
        return LossSpec(kind="weighted_ce", c=hyper["c"])
    if method == "cc":
        return LossSpec(kind="cc", C=hyper["C"])
    if method == "focal":
        return LossSpec(kind="focal", K=class_ratio(train), alpha=hyper["alpha"])
    if method == "fbi":
        return LossSpec(kind="fbi", K=k_factor(train, mode), xi=hyper["xi"])
    if method == "peo":
        return LossSpec(kind="peo", lam=hyper["lambda"], epsilon=hyper["epsilon"])
    raise PlanError(f"no loss mapping for method {method!r}")


def run_cell(plan: SweepPlan, method: str, hyper: dict, theta: float | None,
             unbalance: float, run: int) -> dict:
    """Train one (method, hyperparameter, cell, run) and record both group
    metrics on the selection and validation sets."""
    train, select, val = _cell_data(plan, theta, unbalance, run)
    spec = LayerSpec(train.n_features, plan.hidden, 1, plan.activation)
    train_seed = _seed64(plan.base_seed, "train", _cell_tag(theta), repr(float(unbalance)), run)
    config = TrainConfig(
        loss=LossSpec(kind="standard_ce"),
        epochs=plan.epochs,
        batch_size=plan.batch_size,
        optimizer=OptimizerState(kind="adam", learning_rate=plan.learning_rate),
        seed=train_seed,
    )
    k = None
    if method == "lfo":
        lfo = LfoConfig(lr_model=hyper["lr1"], lr_lambda=hyper["lr2"], epsilon=hyper["epsilon"])
        result = train_lfo(spec, train, config, lfo)
    elif method == "brnn":
        brnn = BrnnSpec.from_classifier(spec, delta=hyper["delta"])
        result = train_brnn(brnn, train, config)
    else:
        loss = _loss_for(method, hyper, train, plan.mode)
        if method == "fbi":
            k = loss.K
        elif method == "focal":
            k = loss.K
        config = TrainConfig(loss=loss, epochs=plan.epochs, batch_size=plan.batch_size,
                             optimizer=config.optimizer, seed=train_seed)
        result = train_standard(spec, train, config)
    minority = minority_label(train.y) if plan.mode == MODE_CI else None
    sel_rep = evaluate(select, result.predict(select.X), plan.mode, minority, plan.threshold)
    val_rep = evaluate(val, result.predict(val.X), plan.mode, minority, plan.threshold)
    return {
        "method": method,
        "theta_y": None if theta is None else float(theta),
        "unbalance": float(unbalance),
        "run": run,
        "hyper": hyper,
        "k": k,
        "sel_underg": sel_rep.underg_metric,
        "sel_overg": sel_rep.overg_metric,
        "underg": val_rep.underg_metric,
        "overg": val_rep.overg_metric,
        "fpr_gap": val_rep.fpr_gap,
        "fnr_gap": val_rep.fnr_gap,
    }


# ---------------------------------------------------------------------------
# selection and aggregation


def _hyper_key(hyper: dict) -> tuple:
    return tuple(float(hyper[k]) for k in sorted(hyper))


def select_best(records: list[dict]) -> dict:
    """Choose the hyperparameter candidate for one (method, cell).

    Maximises min(mean UnderG, mean OverG) on the selection metrics; ties
    break by the higher mean of the two, then by the smaller hyperparameter
    value(s)."""
    if not records:
        raise IncompleteSweepError("select_best called with no records")
    by_cand: dict[tuple, list[dict]] = {}
    for rec in records:
        by_cand.setdefault(_hyper_key(rec["hyper"]), []).append(rec)
    scored = []
    for key, recs in by_cand.items():
        m_under = float(np.mean([r["sel_underg"] for r in recs]))
        m_over = float(np.mean([r["sel_overg"] for r in recs]))
        scored.append((min(m_under, m_over), (m_under + m_over) / 2.0, key, recs[0]["hyper"]))
    scored.sort(key=lambda s: (-s[0], -s[1], s[2]))
    return scored[0][3]


@dataclass
class ResultMatrix:
    problem: str
    complexity_levels: list  # theta values, or [None] for real data
    unbalance_levels: list[float]
    methods: list[str]
    under_mean: dict[str, np.ndarray]
    under_std: dict[str, np.ndarray]
    over_mean: dict[str, np.ndarray]
    over_std: dict[str, np.ndarray]
    chosen: dict[str, dict[tuple[int, int], dict]]
    kxi: dict[tuple[int, int], dict] | None  # fbi cells: k, xi, k^xi
    gaps: dict[str, dict[str, np.ndarray]] | None  # method -> fpr/fnr mean/std

    def grey_column(self, method: str, group: str) -> np.ndarray:
        """Per-complexity average standard deviation."""
        std = self.under_std[method] if group == "underg" else self.over_std[method]
        return std.mean(axis=1)


def _index_records(records: list[dict]):
    by: dict[tuple, list[dict]] = {}
    for rec in records:
        key = (rec["method"], rec["theta_y"], rec["unbalance"])
        by.setdefault(key, []).append(rec)
    return by


def assemble_matrix(plan: SweepPlan, records: list[dict]) -> ResultMatrix:
    """Mean/std matrices of the selected candidates; errors if any (method,
    cell, candidate, run) is missing."""
    have = {
        (r["method"], _hyper_key(r["hyper"]), r["theta_y"], r["unbalance"], r["run"])
        for r in records
    }
    missing = []
    for task in plan.tasks():
        key = (task["method"], _hyper_key(task["hyper"]), task["theta_y"],
               task["unbalance"], task["run"])
        if key not in have:
            missing.append((task["method"], task["theta_y"], task["unbalance"], task["run"]))
    if missing:
        raise IncompleteSweepError(
            f"{len(missing)} missing (cell, run) records, first: {missing[:5]}"
        )
    thetas = list(plan.complexity_grid) if plan.synth is not None else [None]
    unbs = list(plan.unbalance_grid)
    by_cell = _index_records(records)
    shape = (len(thetas), len(unbs))
    method_names = [mp.method for mp in plan.methods]
    um = {m: np.zeros(shape) for m in method_names}
    us = {m: np.zeros(shape) for m in method_names}
    om = {m: np.zeros(shape) for m in method_names}
    osd = {m: np.zeros(shape) for m in method_names}
    chosen: dict[str, dict[tuple[int, int], dict]] = {m: {} for m in method_names}
    kxi: dict[tuple[int, int], dict] = {}
    gaps = None
    if plan.mode == MODE_CBUC:
        gaps = {m: {k: np.zeros(shape) for k in ("fpr_mean", "fpr_std", "fnr_mean", "fnr_std")}
                for m in method_names}
    for m in method_names:
        for ti, theta in enumerate(thetas):
            for ui, unb in enumerate(unbs):
                cell_records = by_cell[(m, theta, unb)]
                best = select_best(cell_records)
                chosen[m][(ti, ui)] = best
                sel = [r for r in cell_records if _hyper_key(r["hyper"]) == _hyper_key(best)]
                under = np.array([r["underg"] for r in sel])
                over = np.array([r["overg"] for r in sel])
                um[m][ti, ui] = under.mean()
                us[m][ti, ui] = under.std()  # population convention
                om[m][ti, ui] = over.mean()
                osd[m][ti, ui] = over.std()
                if m == "fbi":
                    kv = float(np.mean([r["k"] for r in sel]))
                    kxi[(ti, ui)] = {"k": kv, "xi": best["xi"], "k_pow_xi": kv ** best["xi"]}
                if gaps is not None:
                    fpr = np.array([r["fpr_gap"] for r in sel], dtype=float)
                    fnr = np.array([r["fnr_gap"] for r in sel], dtype=float)
                    gaps[m]["fpr_mean"][ti, ui] = fpr.mean()
                    gaps[m]["fpr_std"][ti, ui] = fpr.std()
                    gaps[m]["fnr_mean"][ti, ui] = fnr.mean()
                    gaps[m]["fnr_std"][ti, ui] = fnr.std()
    return ResultMatrix(
        problem=plan.problem,
        complexity_levels=thetas,
        unbalance_levels=unbs,
        methods=method_names,
        under_mean=um, under_std=us, over_mean=om, over_std=osd,
        chosen=chosen,
        kxi=kxi if any(m == "fbi" for m in method_names) else None,
        gaps=gaps,
    )


def kxi_trend(plan: SweepPlan, records: list[dict]) -> list[dict]:
    """(unbalance, complexity, K, xi, K^xi) per cell for the fbi method."""
    fbi_records = [r for r in records if r["method"] == "fbi"]
    if not fbi_records:
        return []
    by_cell = _index_records(fbi_records)
    rows = []
    for (m, theta, unb), cell_records in sorted(
        by_cell.items(), key=lambda kv: (_cell_tag(kv[0][1]), kv[0][2])
    ):
        best = select_best(cell_records)
        sel = [r for r in cell_records if _hyper_key(r["hyper"]) == _hyper_key(best)]
        kv = float(np.mean([r["k"] for r in sel]))
        rows.append({
            "theta_y": theta, "unbalance": unb,
            "k": kv, "xi": best["xi"], "k_pow_xi": kv ** best["xi"],
        })
    return rows


# ---------------------------------------------------------------------------
# output files


def _fmt(v) -> str:
    if v is None:
        return ""
    return repr(float(v))


def _matrix_csv(path: Path, levels, unbs, matrix: np.ndarray, grey: np.ndarray | None = None):
    header = ["theta_y"] + [repr(float(u)) for u in unbs]
    if grey is not None:
        header.append("row_avg_std")
    lines = [",".join(header)]
    for ti, theta in enumerate(levels):
        row = [_cell_tag(theta)] + [_fmt(matrix[ti, ui]) for ui in range(len(unbs))]
        if grey is not None:
            row.append(_fmt(grey[ti]))
        lines.append(",".join(row))
    path.write_text("\n".join(lines) + "\n")


def record_sort_key(rec: dict):
    return (
        rec["method"],
        _cell_tag(rec["theta_y"]),
        rec["unbalance"],
        json.dumps(rec["hyper"], sort_keys=True),
        rec["run"],
    )


def save_outputs(plan: SweepPlan, matrix: ResultMatrix, records: list[dict], out_dir: Path):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    levels, unbs = matrix.complexity_levels, matrix.unbalance_levels
    for m in matrix.methods:
        _matrix_csv(out_dir / f"matrix_{m}_underg_mean.csv", levels, unbs, matrix.under_mean[m])
        _matrix_csv(out_dir / f"matrix_{m}_underg_std.csv", levels, unbs, matrix.under_std[m],
                    matrix.grey_column(m, "underg"))
        _matrix_csv(out_dir / f"matrix_{m}_overg_mean.csv", levels, unbs, matrix.over_mean[m])
        _matrix_csv(out_dir / f"matrix_{m}_overg_std.csv", levels, unbs, matrix.over_std[m],
                    matrix.grey_column(m, "overg"))
    with open(out_dir / "selected_hypers.csv", "w") as fh:
        fh.write("method,theta_y,unbalance,hyper,k\n")
        for m in matrix.methods:
            for ti, theta in enumerate(levels):
                for ui, unb in enumerate(unbs):
                    hyper = json.dumps(matrix.chosen[m][(ti, ui)], sort_keys=True)
                    kcell = ""
                    if matrix.kxi is not None and m == "fbi":
                        kcell = _fmt(matrix.kxi[(ti, ui)]["k"])
                    fh.write(f"{m},{_cell_tag(theta)},{_fmt(unb)},\"{hyper}\",{kcell}\n")
    trend = kxi_trend(plan, records)
    if trend:
        with open(out_dir / "kxi_trend.csv", "w") as fh:
            fh.write("theta_y,unbalance,k,xi,k_pow_xi\n")
            for row in trend:
                fh.write(
                    f"{_cell_tag(row['theta_y'])},{_fmt(row['unbalance'])},"
                    f"{_fmt(row['k'])},{_fmt(row['xi'])},{_fmt(row['k_pow_xi'])}\n"
                )
    if matrix.gaps is not None:
        with open(out_dir / "fairness_gaps.csv", "w") as fh:
            fh.write("method,theta_y,unbalance,fpr_gap_mean,fpr_gap_std,fnr_gap_mean,fnr_gap_std\n")
            for m in matrix.methods:
                g = matrix.gaps[m]
                for ti, theta in enumerate(levels):
                    for ui, unb in enumerate(unbs):
                        fh.write(
                            f"{m},{_cell_tag(theta)},{_fmt(unb)},"
                            f"{_fmt(g['fpr_mean'][ti, ui])},{_fmt(g['fpr_std'][ti, ui])},"
                            f"{_fmt(g['fnr_mean'][ti, ui])},{_fmt(g['fnr_std'][ti, ui])}\n"
                        )
    meta = {
        "plan": plan_to_dict(plan),
        "std_convention": "population (divide by n)",
        "n_records": len(records),
    }
    (out_dir / "metadata.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# runner with resume


def _task_key(task: dict) -> tuple:
    return (task["method"], _cell_tag(task["theta_y"]), task["unbalance"],
            json.dumps(task["hyper"], sort_keys=True), task["run"])


def _execute(plan: SweepPlan, task: dict) -> dict:
    return run_cell(plan, task["method"], task["hyper"], task["theta_y"],
                    task["unbalance"], task["run"])


def load_records(path: Path) -> list[dict]:
    records = []
    if path.exists():
        with open(path) as fh:
            for line in fh:
                line = line.strip()
                if line:
                    records.append(json.loads(line))
    return records


def run_sweep(
    plan: SweepPlan,
    out_dir,
    workers: int | None = None,
    resume: bool = False,
    force: bool = False,
    progress=None,
) -> ResultMatrix:
    """Execute the full plan and write all output files.

    Refuses to touch a directory holding prior results unless ``resume``
    (continue from completed records) or ``force`` (start over) is given.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    records_path = out_dir / "runs.jsonl"
    echo_path = out_dir / "plan_echo.json"
    has_prior = records_path.exists() or any(out_dir.glob("matrix_*.csv"))
    if has_prior and not (resume or force):
        raise SweepOutputError(
            f"{out_dir} holds prior sweep output; pass resume to continue or force to restart"
        )
    if force and records_path.exists():
        records_path.unlink()
    if resume and echo_path.exists():
        prior = json.loads(echo_path.read_text())
        if prior != plan_to_dict(plan):
            raise SweepOutputError("resume refused: the plan differs from the prior run")
    echo_path.write_text(json.dumps(plan_to_dict(plan), indent=2, sort_keys=True) + "\n")

    done_records = load_records(records_path) if resume else []
    done_keys = {_task_key(r) for r in done_records}
    tasks = plan.tasks()
    pending = [t for t in tasks if _task_key(t) not in done_keys]
    total = len(tasks)
    completed = total - len(pending)
    if progress:
        progress(completed, total)
    records = list(done_records)
    if pending:
        workers = workers or os.cpu_count() or 1
        with open(records_path, "a") as sink:
            if workers <= 1:
                for task in pending:
                    rec = _execute(plan, task)
                    sink.write(json.dumps(rec, sort_keys=True) + "\n")
                    sink.flush()
                    records.append(rec)
                    completed += 1
                    if progress:
                        progress(completed, total)
            else:
                with ProcessPoolExecutor(max_workers=workers) as pool:
                    futures = [pool.submit(_execute, plan, t) for t in pending]
                    for fut in as_completed(futures):
                        rec = fut.result()
                        sink.write(json.dumps(rec, sort_keys=True) + "\n")
                        sink.flush()
                        records.append(rec)
                        completed += 1
                        if progress:
                            progress(completed, total)
    records.sort(key=record_sort_key)
    with open(records_path, "w") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
    matrix = assemble_matrix(plan, records)
    save_outputs(plan, matrix, records, out_dir)
    return matrix
