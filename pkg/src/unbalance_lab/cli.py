"""Command line: generate / train / eval / sweep / report.

Hyperparameter flags carry the symbol names used throughout the method
definitions (--xi, --alpha, --delta, --epsilon, --lambda, --theta-y).  The
environment variable UNBALANCE_LAB_SEED overrides config/plan seeds; an
explicit --seed flag takes precedence over both.
"""

from __future__ import annotations

import dataclasses
import json
import os
from pathlib import Path

import click

from .data import MODE_CBUC, MODE_CI, DataError, load_dataset_csv, minority_label
from .evaluation import GroupReport, evaluate
from .ingest import TabularSchema
from .ingest import load_csv as load_csv_real
from .losses import LossSpec, class_ratio, k_factor
from .net import LayerSpec, OptimizerState, ShapeError, load_params, predict, save_params
from .report import ReportError, write_report
from .sweep import (
    IncompleteSweepError,
    PlanError,
    SweepOutputError,
    plan_from_json,
    run_sweep,
)
from .synthdata import SynthConfig, generate_train, generate_validation
from .train import (
    BrnnSpec,
    LfoConfig,
    TrainConfig,
    ValidationContext,
    compose_params,
    history_to_csv,
    train_brnn,
    train_lfo,
    train_standard,
)

METHODS = ("h_star", "weighted_ce", "cc", "focal", "fbi", "peo", "lfo", "brnn")
Z_METHODS = ("peo", "lfo", "brnn")


def _fail(message: str) -> "click.ClickException":
    return click.ClickException(message)


def _env_seed() -> int | None:
    raw = os.environ.get("UNBALANCE_LAB_SEED")
    return int(raw) if raw else None


def _pick_seed(flag: int | None, fallback: int) -> int:
    if flag is not None:
        return flag
    env = _env_seed()
    return env if env is not None else fallback


def _refuse_overwrite(path: Path, force: bool):
    if path.exists() and not force:
        raise _fail(f"{path} exists; pass --force to overwrite")


@click.group()
def main():
    """Benchmark laboratory for unbalance-corrective losses."""


# ---------------------------------------------------------------------------


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(exists=True),
              help="JSON with SynthConfig fields (theta_y, unbalance, mode, ...)")
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--kind", type=click.Choice(["train", "validation"]), default="train")
@click.option("--n", "n_rows", type=int, default=None,
              help="validation row count (default 20000)")
@click.option("--theta-y", type=float, default=None, help="override the config signal strength")
@click.option("--unbalance", type=float, default=None, help="override the config unbalance ratio")
@click.option("--seed", type=int, default=None)
@click.option("--force", is_flag=True)
def generate(config_path, out_path, kind, n_rows, theta_y, unbalance, seed, force):
    """Write a synthetic dataset CSV and print its composition."""
    out = Path(out_path)
    _refuse_overwrite(out, force)
    with open(config_path) as fh:
        raw = json.load(fh)
    try:
        raw["seed"] = _pick_seed(seed, int(raw.get("seed", 0)))
        if theta_y is not None:
            raw["theta_y"] = theta_y
        if unbalance is not None:
            raw["unbalance"] = unbalance
        cfg = SynthConfig(**raw)
        if kind == "train":
            ds = generate_train(cfg)
        else:
            ds = generate_validation(cfg, n_rows or 20_000)
    except (DataError, TypeError) as exc:
        raise _fail(str(exc))
    ds.to_csv(out)
    n0, n1 = ds.class_counts()
    d0, d1 = ds.d_counts()
    click.echo(f"wrote {len(ds)} rows to {out}")
    click.echo(f"classes: y=0 {n0}, y=1 {n1}")
    click.echo(f"u-groups: d=0 {d0}, d=1 {d1}")
    try:
        click.echo(f"K = {k_factor(ds, cfg.mode)!r}")
    except DataError:
        click.echo("K undefined (empty d-group)")


# ---------------------------------------------------------------------------


def _parse_hidden(text: str) -> tuple[int, ...]:
    text = text.strip()
    if not text:
        return ()
    return tuple(int(w) for w in text.split(","))


def _load_any(data_path, schema_path, minority=None):
    """Lab-format CSV by default; a raw tabular file when a schema is given."""
    if schema_path:
        return load_csv_real(data_path, TabularSchema.from_json(schema_path))
    return load_dataset_csv(data_path, minority=minority)


@main.command()
@click.option("--data", "data_path", required=True, type=click.Path(exists=True))
@click.option("--schema", "schema_path", type=click.Path(exists=True), default=None,
              help="ingest schema JSON for raw tabular files")
@click.option("--method", "--loss", "method", type=click.Choice(METHODS), required=True)
@click.option("--c", type=float, default=0.8, help="cost c (weighted_ce)")
@click.option("--C", "big_c", type=float, default=10.0, help="class-1 weight C (cc)")
@click.option("--alpha", type=float, default=2.0, help="focusing exponent (focal)")
@click.option("--xi", type=float, default=1.0, help="complexity exponent (fbi)")
@click.option("--lambda", "lam", type=float, default=1.0, help="penalty weight (peo)")
@click.option("--epsilon", type=float, default=0.05, help="constraint tolerance (peo, lfo)")
@click.option("--delta", type=float, default=1.0, help="adversarial weight (brnn)")
@click.option("--lr1", type=float, default=1e-3, help="model learning rate (lfo)")
@click.option("--lr2", type=float, default=1e-3, help="multiplier learning rate (lfo)")
@click.option("--epochs", type=int, default=30)
@click.option("--batch-size", type=int, default=128)
@click.option("--lr", type=float, default=1e-3)
@click.option("--hidden", default="50,10", help="comma-separated hidden widths")
@click.option("--activation", type=click.Choice(["relu", "tanh"]), default="relu")
@click.option("--val", "val_path", type=click.Path(exists=True), default=None)
@click.option("--mode", type=click.Choice(["auto", MODE_CI, MODE_CBUC]), default="auto")
@click.option("--threshold", type=float, default=0.5)
@click.option("--seed", type=int, default=None)
@click.option("--out-dir", required=True, type=click.Path())
@click.option("--force", is_flag=True)
def train(data_path, schema_path, method, c, big_c, alpha, xi, lam, epsilon, delta,
          lr1, lr2, epochs, batch_size, lr, hidden, activation, val_path, mode,
          threshold, seed, out_dir, force):
    """Train one method on a dataset CSV; writes model.txt and history.csv."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    model_path = out / "model.txt"
    history_path = out / "history.csv"
    _refuse_overwrite(model_path, force)
    _refuse_overwrite(history_path, force)
    try:
        ds = _load_any(data_path, schema_path)
    except DataError as exc:
        raise _fail(str(exc))
    if method in Z_METHODS and ds.z is None:
        raise _fail(f"method {method!r} needs the confounder column z, "
                    f"but {data_path} has none")
    data_mode = ds.mode if mode == "auto" else mode
    seed = _pick_seed(seed, 0)
    spec = LayerSpec(ds.n_features, _parse_hidden(hidden), 1, activation)
    validation = None
    if val_path:
        try:
            val_ds = _load_any(
                val_path, schema_path,
                minority=minority_label(ds.y) if data_mode == MODE_CI else None,
            )
        except DataError as exc:
            raise _fail(str(exc))
        validation = ValidationContext(
            val_ds, data_mode,
            minority_label(ds.y) if data_mode == MODE_CI else None, threshold,
        )
    optimizer = OptimizerState(kind="adam", learning_rate=lr)
    config = TrainConfig(loss=LossSpec(kind="standard_ce"), epochs=epochs,
                         batch_size=batch_size, optimizer=optimizer, seed=seed)
    try:
        if method == "lfo":
            result = train_lfo(spec, ds, config, LfoConfig(lr1, lr2, epsilon), validation)
            params = result.params
        elif method == "brnn":
            result = train_brnn(BrnnSpec.from_classifier(spec, delta), ds, config, validation)
            params = compose_params(result.params)
        else:
            if method == "h_star":
                loss = LossSpec(kind="standard_ce")
            elif method == "weighted_ce":
                loss = LossSpec(kind="weighted_ce", c=c)
            elif method == "cc":
                loss = LossSpec(kind="cc", C=big_c)
            elif method == "focal":
                loss = LossSpec(kind="focal", K=class_ratio(ds), alpha=alpha)
            elif method == "fbi":
                loss = LossSpec(kind="fbi", K=k_factor(ds, data_mode), xi=xi)
            elif method == "peo":
                loss = LossSpec(kind="peo", lam=lam, epsilon=epsilon)
            config = dataclasses.replace(config, loss=loss)
            result = train_standard(spec, ds, config, validation)
            params = result.params
            if method in ("fbi", "focal"):
                click.echo(f"K = {loss.K!r}")
    except DataError as exc:
        raise _fail(str(exc))
    save_params(params, model_path)
    history_to_csv(result.history, history_path)
    click.echo(f"wrote {model_path} and {history_path}")
    if result.history:
        click.echo(f"final train loss: {result.history[-1]['train_loss']:.6f}")
    if result.final_lambda is not None:
        click.echo(f"final lambda: {result.final_lambda!r}")
    if result.constraint_skips:
        click.echo(f"constraint skipped on {result.constraint_skips} batches "
                   "(empty (y,z) cell)")


# ---------------------------------------------------------------------------


@main.command("eval")
@click.option("--model", "model_path", required=True, type=click.Path(exists=True))
@click.option("--data", "data_path", required=True, type=click.Path(exists=True))
@click.option("--schema", "schema_path", type=click.Path(exists=True), default=None,
              help="ingest schema JSON for raw tabular files")
@click.option("--mode", type=click.Choice(["auto", MODE_CI, MODE_CBUC]), default="auto")
@click.option("--minority-label", "minority", type=click.IntRange(0, 1), default=None,
              help="training-set minority class (CI mode; default: inferred)")
@click.option("--threshold", type=float, default=0.5)
@click.option("--out", "out_path", type=click.Path(), default=None)
@click.option("--force", is_flag=True)
def eval_command(model_path, data_path, schema_path, mode, minority, threshold, out_path, force):
    """Evaluate a saved model on a dataset CSV; prints the group report."""
    try:
        params = load_params(model_path)
        ds = _load_any(data_path, schema_path, minority=minority)
        data_mode = ds.mode if mode == "auto" else mode
        if data_mode == MODE_CI and minority is None:
            minority = minority_label(ds.y)
        probs = predict(params, ds.X)
        group_report = evaluate(ds, probs, data_mode, minority, threshold)
    except (DataError, ShapeError) as exc:
        raise _fail(str(exc))
    click.echo(GroupReport.csv_header())
    click.echo(group_report.to_csv_row())
    if out_path:
        out = Path(out_path)
        _refuse_overwrite(out, force)
        out.write_text(GroupReport.csv_header() + "\n" + group_report.to_csv_row() + "\n")
        click.echo(f"wrote {out}")


# ---------------------------------------------------------------------------


@main.command()
@click.option("--plan", "plan_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--workers", type=int, default=None, help="default: CPU count")
@click.option("--resume", is_flag=True, help="continue from completed records")
@click.option("--force", is_flag=True, help="discard prior records and restart")
@click.option("--seed", type=int, default=None, help="override the plan base seed")
def sweep(plan_path, out_dir, workers, resume, force, seed):
    """Run a full sweep plan; writes matrices, trend and gap CSVs."""
    try:
        plan = plan_from_json(plan_path)
        base = _pick_seed(seed, plan.base_seed)
        if base != plan.base_seed:
            plan = dataclasses.replace(plan, base_seed=base)
    except (PlanError, json.JSONDecodeError, OSError) as exc:
        raise _fail(f"invalid plan: {exc}")
    total_tasks = len(plan.tasks())
    step = max(1, total_tasks // 20)

    def progress(done, total):
        if done % step == 0 or done == total:
            click.echo(f"completed {done}/{total} runs", err=True)

    try:
        run_sweep(plan, out_dir, workers=workers, resume=resume, force=force,
                  progress=progress)
    except (SweepOutputError, IncompleteSweepError, DataError, PlanError) as exc:
        raise _fail(str(exc))
    click.echo(f"sweep complete; outputs in {out_dir}")


@main.command()
@click.option("--results", "results_dir", required=True, type=click.Path(exists=True))
@click.option("--out", "out_dir", type=click.Path(), default=None,
              help="default: <results>/report")
def report(results_dir, out_dir):
    """Render heatmaps and a text summary from sweep outputs."""
    out_dir = out_dir or str(Path(results_dir) / "report")
    try:
        written = write_report(results_dir, out_dir)
    except (ReportError, OSError, ValueError) as exc:
        raise _fail(str(exc))
    click.echo(f"wrote {len(written)} files to {out_dir}")


if __name__ == "__main__":
    main()
