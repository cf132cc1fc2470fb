"""``allocmoe`` command line.

Exit codes: 0 success, 2 input/config error, 3 oracle error, 4 infeasible
budget. Diagnostics go to stderr; stdout only carries ``--json`` summaries.
Every command writes a manifest next to its outputs. Manifests hold no
timestamps or absolute output paths, so identical reruns are byte-identical.
"""

from __future__ import annotations

import dataclasses
import functools
import hashlib
import json
import sys
from pathlib import Path

import click

from . import __version__
from . import serialize as ser
from .alloc_l import allocation_objective, optimal_allocation
from .alloc_t import redistribute
from .baselines import ascending_allocation, descending_allocation, uniform_allocation
from .budget import BudgetSpec, LayerTokenBudget, budget_from_avg
from .errors import BudgetError, InvalidInputError, OracleError
from .sensitivity import (
    NORMALIZATION_ALIASES,
    CountingOracle,
    normalize_rows,
    profile_sensitivity,
)
from .sim import (
    SimConfig,
    aggregate_metrics,
    layer_metrics_rows,
    read_plans,
    run_pipeline,
    synthetic_loss_oracle,
    write_plans,
    write_report,
)

EXIT_INPUT, EXIT_ORACLE, EXIT_BUDGET = 2, 3, 4


def _fail(exc, code, prefix=""):
    stage = getattr(exc, "stage", None)
    where = f" in stage {stage!r}" if stage else ""
    click.echo(f"error{where}: {prefix}{exc}", err=True)
    sys.exit(code)


def _guard(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except OracleError as exc:
            _fail(exc, EXIT_ORACLE)
        except BudgetError as exc:
            _fail(exc, EXIT_BUDGET, "infeasible budget: ")
        except (InvalidInputError, OSError, ValueError, KeyError, TypeError) as exc:
            _fail(exc, EXIT_INPUT)
    return wrapper


def _hash_inputs(paths, options: dict) -> str:
    h = hashlib.sha256()
    for p in paths:
        h.update(Path(p).read_bytes())
    h.update(json.dumps(options, sort_keys=True).encode())
    return h.hexdigest()


def _manifest(command, inputs, outputs, options, seed=None, **extra) -> dict:
    inputs = [str(p) for p in inputs]
    return {
        "command": command,
        "inputs": inputs,
        "outputs": sorted(outputs),
        "options": options,
        "config_hash": _hash_inputs(inputs, options),
        "version": __version__,
        "seed": seed,
        **extra,
    }


def _load_config(path, seed):
    cfg = SimConfig.from_dict(ser.read_json(path))
    if seed is not None:
        cfg = dataclasses.replace(cfg, seed=seed)
    return cfg


def _spec(L, k_orig, budget, avg_k) -> BudgetSpec:
    if (budget is None) == (avg_k is None):
        raise InvalidInputError("give exactly one of --budget and --avg-k")
    if budget is not None:
        return BudgetSpec(L, k_orig, budget)
    return budget_from_avg(L, k_orig, avg_k)


def _sibling(path: Path, suffix: str) -> Path:
    return path.with_name(path.stem + suffix)


def _emit(as_json, summary):
    if as_json:
        click.echo(json.dumps(ser._nan_to_none(summary), sort_keys=True))


@click.group()
@click.version_option(__version__, prog_name="allocmoe")
def cli():
    """Expert-activation budget allocation for mixture-of-experts layers."""


@cli.command("profile")
@click.option("--oracle", type=click.Choice(["synthetic"]), default="synthetic", show_default=True)
@click.option("--config", "config_path", required=True, type=click.Path())
@click.option("--out", required=True, type=click.Path(), help="Sensitivity CSV; a JSON twin is written alongside.")
@click.option("--normalize", type=click.Choice(["none", "submin", "divfull"]), default="submin", show_default=True)
@click.option("--independent", is_flag=True, help="Measure every isolation configuration separately.")
@click.option("--workers", type=int, default=1, show_default=True)
@click.option("--seed", type=int, default=None, help="Override the config seed.")
@click.option("--json", "as_json", is_flag=True)
@_guard
def cmd_profile(oracle, config_path, out, normalize, independent, workers, seed, as_json):
    """Allocation-isolated sensitivity profiling."""
    cfg = _load_config(config_path, seed)
    counter = CountingOracle(synthetic_loss_oracle(cfg))
    raw = profile_sensitivity(counter, cfg.num_layers, cfg.k_orig, independent=independent, max_workers=workers)
    S = normalize_rows(raw, NORMALIZATION_ALIASES[normalize])
    out = Path(out)
    json_path = _sibling(out, ".json")
    ser.atomic_write(out, ser.sensitivity_to_csv(S))
    ser.write_json(json_path, ser.sensitivity_to_json(S))
    options = {"oracle": oracle, "normalize": normalize, "independent": independent}
    ser.write_json(_sibling(out, ".manifest.json"), _manifest(
        "profile", [config_path], [out.name, json_path.name], options, seed=cfg.seed,
        oracle_calls=counter.count))
    _emit(as_json, {"oracle_calls": counter.count, "L": S.num_layers, "k_orig": S.k_orig,
                    "normalization": S.normalization})


@cli.command("alloc")
@click.option("--sensitivity", "sens_path", required=True, type=click.Path())
@click.option("--budget", type=int, default=None)
@click.option("--avg-k", type=float, default=None)
@click.option("--out", required=True, type=click.Path())
@click.option("--strategy", type=click.Choice(["dp", "uniform", "ascending", "descending"]), default="dp",
              show_default=True)
@click.option("--spread-remainder", is_flag=True, help="Uniform: spread an indivisible budget over the first layers.")
@click.option("--k-min", type=int, default=1, show_default=True)
@click.option("--k-max", type=int, default=None)
@click.option("--json", "as_json", is_flag=True)
@_guard
def cmd_alloc(sens_path, budget, avg_k, out, strategy, spread_remainder, k_min, k_max, as_json):
    """Layer-level budget allocation."""
    S = ser.load_sensitivity(sens_path)
    spec = _spec(S.num_layers, S.k_orig, budget, avg_k)
    if strategy == "dp":
        alloc, objective = optimal_allocation(S, spec)
    else:
        if strategy == "uniform":
            alloc = uniform_allocation(spec, spread_remainder)
        elif strategy == "ascending":
            alloc = ascending_allocation(spec, k_min, k_max)
        else:
            alloc = descending_allocation(spec, k_min, k_max)
        objective = allocation_objective(S, alloc)
    out = Path(out)
    report_path = _sibling(out, ".report.json")
    report = {"objective": objective, "budget_used": alloc.total}
    ser.write_json(out, ser.allocation_to_json(alloc))
    ser.write_json(report_path, report)
    options = {"B": spec.global_budget, "strategy": strategy, "spread_remainder": spread_remainder,
               "k_min": k_min, "k_max": k_max}
    ser.write_json(_sibling(out, ".manifest.json"),
                   _manifest("alloc", [sens_path], [out.name, report_path.name], options))
    _emit(as_json, {**ser.allocation_to_json(alloc), **report})


@cli.command("redistribute")
@click.option("--scores", "scores_path", required=True, type=click.Path())
@click.option("--alloc", "alloc_path", required=True, type=click.Path())
@click.option("--k-base", type=int, default=1, show_default=True)
@click.option("--k-orig", type=int, default=None, help="Candidate width; defaults to the scores file's k_orig, else N.")
@click.option("--out", required=True, type=click.Path())
@click.option("--json", "as_json", is_flag=True)
@_guard
def cmd_redistribute(scores_path, alloc_path, k_base, k_orig, out, as_json):
    """Token-level redistribution for every layer."""
    layers, file_k = ser.layered_scores_from_json(ser.read_json(scores_path))
    alloc = ser.allocation_from_json(ser.read_json(alloc_path))
    if len(layers) != len(alloc):
        raise InvalidInputError(f"{len(layers)} score layers but {len(alloc)} allocation entries")
    plans = []
    for i, (probs, k_l) in enumerate(zip(layers, alloc)):
        width = k_orig or file_k or probs.shape[1]
        plans.append(redistribute(probs, LayerTokenBudget(i, k_l, k_base, probs.shape[0]), width))
    out = Path(out)
    files = write_plans(out, plans)
    options = {"k_base": k_base, "k_orig": k_orig}
    ser.write_json(out / "manifest.json",
                   _manifest("redistribute", [scores_path, alloc_path], files, options))
    _emit(as_json, {"slots_used": [p.slots_used for p in plans], "total_weight": [p.total_weight for p in plans]})


@cli.command("metrics")
@click.option("--baseline", required=True, type=click.Path())
@click.option("--compare", required=True, type=click.Path())
@click.option("--out", required=True, type=click.Path())
@click.option("--spearman-on", type=click.Choice(["counts", "weighted"]), default="counts", show_default=True)
@click.option("--json", "as_json", is_flag=True)
@_guard
def cmd_metrics(baseline, compare, out, spearman_on, as_json):
    """Load-shift metrics between two plan directories."""
    rows = layer_metrics_rows(read_plans(baseline), read_plans(compare), spearman_on)
    out = Path(out)
    csv_path = _sibling(out, ".csv")
    result = {"layers": rows, "summary": aggregate_metrics(rows)}
    ser.write_json(out, result)
    ser.atomic_write(csv_path, ser.metrics_to_csv(rows))
    inputs = sorted(str(p) for d in (baseline, compare) for p in Path(d).glob("layer_*.json"))
    ser.write_json(_sibling(out, ".manifest.json"),
                   _manifest("metrics", inputs, [out.name, csv_path.name], {"spearman_on": spearman_on}))
    _emit(as_json, result)


@cli.command("simulate")
@click.option("--config", "config_path", required=True, type=click.Path())
@click.option("--budget", type=int, default=None)
@click.option("--avg-k", type=float, default=None)
@click.option("--k-base", type=int, default=1, show_default=True)
@click.option("--normalize", type=click.Choice(["none", "submin", "divfull"]), default="submin", show_default=True)
@click.option("--seed", type=int, default=None, help="Override the config seed.")
@click.option("--out", required=True, type=click.Path())
@click.option("--json", "as_json", is_flag=True)
@_guard
def cmd_simulate(config_path, budget, avg_k, k_base, normalize, seed, out, as_json):
    """Full pipeline on a synthetic workload."""
    cfg = _load_config(config_path, seed)
    spec = _spec(cfg.num_layers, cfg.k_orig, budget, avg_k)
    report = run_pipeline(cfg, spec, k_base, normalization=NORMALIZATION_ALIASES[normalize])
    files = write_report(report, out)
    options = {"B": spec.global_budget, "k_base": k_base, "normalize": normalize}
    ser.write_json(Path(out) / "manifest.json",
                   _manifest("simulate", [config_path], files, options, seed=cfg.seed,
                             oracle_calls=report.oracle_calls))
    _emit(as_json, report.summary())


def main(argv=None):
    cli.main(args=argv, prog_name="allocmoe")


if __name__ == "__main__":  # pragma: no cover
    main()
