"""Experiment harness and command-line interface.

Config files are INI text with explicit sections; the standard parameter
derivations fill everything not overridden.  Example::

    [problem:train]
    kind = nonconvex_logistic
    n = 4096
    d = 20

    [optimizer:main]
    kind = ssrgd
    eps = 0.01

    [sweep]
    axis = eps
    grid = 0.1, 0.05, 0.025

    [output]
    dir = runs
    seeds = 0, 1, 2
    plot = true

One cell is run per (problem x optimizer x sweep point x seed); each cell
writes ``<dir>/<run_id>/trace.csv`` (header ``iter,f,grad_norm,sfo,event``)
and ``summary.json``, and the plan writes one ``aggregate.json``.  Run ids
are content hashes of the cell description, so re-running an identical
plan is idempotent.  Worker count comes from the SSRGD_WORKERS environment
variable (default 1).

CLI subcommands: ``run``, ``scaling``, ``certify``, ``diagnose``.  Exit
codes: 0 full success, 1 any failed cell, 2 config error.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import dataclasses
import difflib
import hashlib
import io
import json
import logging
import math
import os
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import algorithm, baselines, core, diagnostics, problems, spectral, svgplot
from .algorithm import SsrgdOutcome, Termination
from .baselines import BaselineKind
from .core import ConfigError, Event, NonFiniteError, RunConfig, TraceRecord

logger = logging.getLogger("ssrgd")

CSV_HEADER = ["iter", "f", "grad_norm", "sfo", "event"]

_PROBLEM_KEYS = {
    "kind": str,
    "n": int,
    "d": int,
    "seed": int,
    "reg": float,
    "flip_prob": float,
    "delta_plant": float,
    "noise": float,
    "gamma4": float,
    "box_radius": float,
    "scale": float,
    "spread": float,
    "sigma": float,
    "path": str,
    "d_cap": int,
    "x0": str,
    "x0_scale": float,
}
_PROBLEM_KINDS = ("nonconvex_logistic", "separable_saddle", "quadratic", "libsvm")

_OPTIMIZER_KEYS = {
    "kind": str,
    "order": str,
    "eps": float,
    "delta": float,
    "logfactor": float,
    "step_size": float,
    "epoch_len": int,
    "minibatch": int,
    "large_batch": int,
    "perturb_radius": float,
    "grad_threshold": float,
    "fval_threshold": float,
    "super_epoch_len": int,
    "sfo_budget": int,
    "max_epochs": int,
    "max_iters": int,
    "eval_every": int,
    "trace": str,
}
_OPTIMIZER_KINDS = ("ssrgd",) + baselines.KINDS

_SWEEP_KEYS = {"axis": str, "grid": str}
_OUTPUT_KEYS = {"dir": str, "plot": bool, "seeds": str, "max_cells": int}

_RUNCONFIG_OVERRIDES = (
    "step_size", "epoch_len", "minibatch", "large_batch", "perturb_radius",
    "grad_threshold", "fval_threshold", "super_epoch_len", "sfo_budget",
    "max_epochs",
)


@dataclass
class Cell:
    problem_name: str
    problem: dict
    optimizer_name: str
    optimizer: dict
    seed: int
    sweep_axis: str | None = None
    sweep_value: float | None = None

    def describe(self) -> dict:
        return {
            "problem_name": self.problem_name,
            "problem": self.problem,
            "optimizer_name": self.optimizer_name,
            "optimizer": self.optimizer,
            "seed": self.seed,
            "sweep_axis": self.sweep_axis,
            "sweep_value": self.sweep_value,
        }

    @property
    def run_id(self) -> str:
        blob = json.dumps(self.describe(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


@dataclass
class ExperimentPlan:
    problems: list[tuple[str, dict]]
    optimizers: list[tuple[str, dict]]
    seeds: list[int]
    sweep: tuple[str, list[float]] | None
    out_dir: str
    plot: bool
    max_cells: int = 1000

    def cells(self) -> list[Cell]:
        out = []
        sweep_points: list[tuple[str | None, float | None]]
        if self.sweep is None:
            sweep_points = [(None, None)]
        else:
            axis, grid = self.sweep
            sweep_points = [(axis, v) for v in grid]
        for pname, pparams in self.problems:
            for oname, oparams in self.optimizers:
                for axis, value in sweep_points:
                    for seed in self.seeds:
                        out.append(Cell(pname, pparams, oname, oparams, seed, axis, value))
        if len(out) > self.max_cells:
            raise ConfigError(
                f"plan expands to {len(out)} cells, above the cap {self.max_cells}"
            )
        return out


def _suggest(key: str, valid) -> str:
    close = difflib.get_close_matches(key, list(valid), n=1)
    return f"; closest valid key: {close[0]!r}" if close else ""


def _parse_section(name: str, section, schema: dict) -> dict:
    out = {}
    for key, raw in section.items():
        if key not in schema:
            raise ConfigError(f"[{name}] unknown key {key!r}{_suggest(key, schema)}")
        typ = schema[key]
        try:
            if typ is bool:
                low = raw.strip().lower()
                if low not in ("true", "false", "1", "0", "yes", "no"):
                    raise ValueError(raw)
                out[key] = low in ("true", "1", "yes")
            else:
                out[key] = typ(raw)
        except ValueError:
            raise ConfigError(
                f"[{name}] key {key!r}: expected {typ.__name__}, got {raw!r}"
            )
    return out


def parse_config(path) -> ExperimentPlan:
    """Parse and validate an experiment config file."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(path.read_text(encoding="utf-8"), source=str(path))
    except configparser.Error as exc:
        raise ConfigError(f"could not parse {path}: {exc}")

    problem_sections: list[tuple[str, dict]] = []
    optimizer_sections: list[tuple[str, dict]] = []
    sweep: tuple[str, list[float]] | None = None
    out: dict = {}
    for section in parser.sections():
        if section == "problem" or section.startswith("problem:"):
            name = section.partition(":")[2] or "problem"
            params = _parse_section(section, parser[section], _PROBLEM_KEYS)
            _validate_problem_params(section, params)
            problem_sections.append((name, params))
        elif section == "optimizer" or section.startswith("optimizer:"):
            name = section.partition(":")[2] or "optimizer"
            params = _parse_section(section, parser[section], _OPTIMIZER_KEYS)
            _validate_optimizer_params(section, params)
            optimizer_sections.append((name, params))
        elif section == "sweep":
            params = _parse_section(section, parser[section], _SWEEP_KEYS)
            axis = params.get("axis")
            if axis not in ("eps", "n"):
                raise ConfigError("[sweep] axis must be 'eps' or 'n'")
            try:
                grid = [float(v) for v in params.get("grid", "").split(",") if v.strip()]
            except ValueError:
                raise ConfigError("[sweep] grid must be a comma-separated number list")
            if not grid:
                raise ConfigError("[sweep] grid must be nonempty")
            sweep = (axis, grid)
        elif section == "output":
            out = _parse_section(section, parser[section], _OUTPUT_KEYS)
        else:
            raise ConfigError(
                f"unknown section [{section}]; expected problem/optimizer/sweep/output"
            )
    if not problem_sections:
        raise ConfigError("missing required section [problem] (or [problem:<name>])")
    if not optimizer_sections:
        raise ConfigError("missing required section [optimizer] (or [optimizer:<name>])")
    seeds = [0]
    if "seeds" in out:
        try:
            seeds = [int(v) for v in out["seeds"].split(",") if v.strip()]
        except ValueError:
            raise ConfigError("[output] seeds must be a comma-separated integer list")
        if not seeds:
            raise ConfigError("[output] seeds must be nonempty")
    return ExperimentPlan(
        problems=problem_sections,
        optimizers=optimizer_sections,
        seeds=seeds,
        sweep=sweep,
        out_dir=out.get("dir", "runs"),
        plot=out.get("plot", False),
        max_cells=out.get("max_cells", 1000),
    )


def _validate_problem_params(section: str, params: dict) -> None:
    kind = params.get("kind")
    if kind is None:
        raise ConfigError(f"[{section}] missing required key 'kind'")
    if kind not in _PROBLEM_KINDS:
        raise ConfigError(
            f"[{section}] unknown problem kind {kind!r}; valid: {_PROBLEM_KINDS}"
        )
    if kind == "libsvm" and "path" not in params:
        raise ConfigError(f"[{section}] libsvm needs 'path'")
    if params.get("x0") not in (None, "zeros", "ones", "saddle"):
        raise ConfigError(f"[{section}] x0 must be zeros, ones, or saddle")


def _validate_optimizer_params(section: str, params: dict) -> None:
    kind = params.get("kind")
    if kind is None:
        raise ConfigError(f"[{section}] missing required key 'kind'")
    if kind not in _OPTIMIZER_KINDS:
        raise ConfigError(
            f"[{section}] unknown optimizer kind {kind!r}; valid: {_OPTIMIZER_KINDS}"
        )
    if params.get("order") not in (None, "first", "second"):
        raise ConfigError(f"[{section}] order must be 'first' or 'second'")
    for key in ("step_size", "eps", "delta", "logfactor"):
        if key in params and params[key] <= 0:
            raise ConfigError(f"[{section}] constraint violated: {key} > 0")
    if params.get("trace") not in (None, "full", "epoch"):
        raise ConfigError(f"[{section}] trace must be 'full' or 'epoch'")


def build_problem(params: dict, n_override: int | None = None) -> problems.ProblemInstance:
    """Instantiate the problem a config section describes."""
    kind = params["kind"]
    n = int(n_override if n_override is not None else params.get("n", 256))
    seed = params.get("seed", 0)
    if kind == "nonconvex_logistic":
        inst = problems.make_nonconvex_logistic(
            n=n,
            d=params.get("d", 20),
            reg=params.get("reg", 0.1),
            seed=seed,
            flip_prob=params.get("flip_prob", 0.1),
        )
    elif kind == "separable_saddle":
        inst = problems.make_separable_saddle(
            d=params.get("d", 10),
            n=n,
            delta_plant=params.get("delta_plant", 0.3),
            noise=params.get("noise", 0.1),
            seed=seed,
            gamma4=params.get("gamma4", 1.0),
            box_radius=params.get("box_radius", 1.0),
        )
    elif kind == "quadratic":
        inst = problems.make_quadratic(
            d=params.get("d", 10),
            n=n,
            seed=seed,
            scale=params.get("scale", 1.0),
            spread=params.get("spread", 0.5),
        )
    elif kind == "libsvm":
        inst = problems.load_libsvm(
            params["path"], d_cap=params.get("d_cap", 10_000), reg=params.get("reg", 0.1)
        )
    else:  # pragma: no cover - guarded by validation
        raise ConfigError(f"unknown problem kind {kind!r}")
    if params.get("sigma") is not None:
        inst = problems.make_online_stream(inst, params["sigma"], seed=seed)
    return inst


def initial_point(params: dict, inst: problems.ProblemInstance) -> np.ndarray:
    preset = params.get("x0", "zeros")
    scale = params.get("x0_scale", 1.0)
    d = inst.spec.d
    if preset == "zeros":
        return np.zeros(d)
    if preset == "ones":
        return scale * np.ones(d)
    if preset == "saddle":
        if not inst.saddle_points:
            raise ConfigError("problem lists no saddle points for x0 = saddle")
        return inst.saddle_points[0][0].copy()
    raise ConfigError(f"unknown x0 preset {preset!r}")


def build_run_config(
    oparams: dict, inst: problems.ProblemInstance, seed: int, eps_override: float | None
) -> RunConfig:
    """Derived defaults for the problem, then explicit overrides."""
    eps = float(eps_override if eps_override is not None else oparams.get("eps", 0.01))
    order = oparams.get("order", "first")
    online = inst.spec.mode is core.Mode.ONLINE
    if order == "second":
        delta = oparams.get("delta", math.sqrt(inst.spec.lipschitz_hess * eps) or 0.1)
        lf = oparams.get("logfactor", 1.0)
        if online:
            cfg = algorithm.derive_config_online_second_order(inst.spec, eps, delta, lf, seed=seed)
        else:
            cfg = algorithm.derive_config_second_order(inst.spec, eps, delta, lf, seed=seed)
    else:
        if online:
            cfg = algorithm.derive_config_online_first_order(inst.spec, eps, seed=seed)
        else:
            cfg = algorithm.derive_config_first_order(inst.spec, eps, seed=seed)
    overrides = {k: oparams[k] for k in _RUNCONFIG_OVERRIDES if k in oparams}
    if overrides:
        cfg = dataclasses.replace(cfg, **overrides)
    return cfg


def _trace_to_csv(trace: list[TraceRecord]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for row in trace:
        writer.writerow([
            row.iteration,
            repr(row.f_value),
            "" if row.grad_norm is None else repr(row.grad_norm),
            row.sfo_count,
            row.event.value,
        ])
    return buf.getvalue()


def read_trace_csv(path) -> list[TraceRecord]:
    """Inverse of the trace writer; round-trips losslessly."""
    records = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != CSV_HEADER:
            raise ConfigError(f"{path}: unexpected CSV header {header}")
        for row in reader:
            records.append(
                TraceRecord(
                    iteration=int(row[0]),
                    f_value=float(row[1]),
                    grad_norm=None if row[2] == "" else float(row[2]),
                    sfo_count=int(row[3]),
                    event=Event(row[4]),
                )
            )
    return records


def sfo_at_first_fosp(trace: list[TraceRecord], eps: float) -> int | None:
    """Raw SFO count at the first measured gradient norm <= eps."""
    for row in trace:
        if row.grad_norm is not None and row.grad_norm <= eps:
            return row.sfo_count
    return None


def run_cell(cell: Cell) -> tuple[dict, str]:
    """Execute one cell; returns (summary dict, trace CSV text)."""
    t0 = time.perf_counter()
    n_override = None
    eps_override = None
    if cell.sweep_axis == "n":
        n_override = int(cell.sweep_value)
    elif cell.sweep_axis == "eps":
        eps_override = float(cell.sweep_value)
    inst = build_problem(cell.problem, n_override)
    x0 = initial_point(cell.problem, inst)
    okind = cell.optimizer["kind"]
    full_trace = cell.optimizer.get("trace", "full") == "full"

    summary: dict = {
        "run_id": cell.run_id,
        "problem": cell.problem_name,
        "optimizer": cell.optimizer_name,
        "kind": okind,
        "seed": cell.seed,
        "sweep_axis": cell.sweep_axis,
        "sweep_value": cell.sweep_value,
        "n": None if math.isinf(inst.spec.n) else int(inst.spec.n),
        "d": inst.spec.d,
        "failed": False,
    }

    if okind == "ssrgd":
        cfg = build_run_config(cell.optimizer, inst, cell.seed, eps_override)
        eps = cfg.eps
        outcome = algorithm.run_ssrgd(inst.spec, cfg, x0=x0, full_trace=full_trace)
    else:
        eps = float(eps_override if eps_override is not None else cell.optimizer.get("eps", 0.01))
        kind = _baseline_from_params(cell.optimizer, inst, cell.seed, eps)
        budget = cell.optimizer.get("sfo_budget", 10**7)
        outcome = baselines.run_baseline(
            kind, inst.spec, budget, x0=x0, full_trace=full_trace
        )

    first_fosp = sfo_at_first_fosp(outcome.trace, eps)
    cert = None
    sfo_at_sosp = None
    delta = cell.optimizer.get("delta", 0.1)
    if inst.spec.hvp is not None and inst.spec.d <= spectral.DENSE_CAP:
        cert = spectral.certify(inst.spec, outcome.final_x, eps, delta)
        sfo_by_iter = {
            row.iteration: row.sfo_count
            for row in outcome.trace
            if row.event is Event.EPOCH_START
        }
        for it, point in outcome.sosp_candidates:
            cand = spectral.certify(inst.spec, point, eps, delta)
            if cand.is_sosp:
                sfo_at_sosp = sfo_by_iter.get(it)
                break

    summary.update(
        {
            "eps": eps,
            "sfo_to_fosp": first_fosp,
            "sfo_to_sosp": sfo_at_sosp,
            "sfo_raw": outcome.sfo_raw,
            "sfo_nominal": outcome.sfo_nominal,
            "termination": outcome.termination.value,
            "f_final": outcome.trace[-1].f_value if outcome.trace else None,
            "final_grad_norm": _last_grad_norm(outcome.trace),
            "certificate": cert.to_dict() if cert is not None else None,
            "wall_time": time.perf_counter() - t0,
        }
    )
    return summary, _trace_to_csv(outcome.trace)


def _last_grad_norm(trace: list[TraceRecord]) -> float | None:
    for row in reversed(trace):
        if row.grad_norm is not None:
            return row.grad_norm
    return None


def _baseline_from_params(oparams, inst, seed, eps) -> BaselineKind:
    L = inst.spec.lipschitz_grad
    kind = oparams["kind"]
    step = oparams.get("step_size", (0.9 if kind in ("gd", "perturbed_gd") else 0.1) / L)
    bk = BaselineKind(
        kind=kind,
        step_size=step,
        minibatch=oparams.get("minibatch", 1),
        epoch_len=oparams.get("epoch_len"),
        perturb_radius=oparams.get("perturb_radius", 0.0),
        grad_threshold=oparams.get("grad_threshold", 0.0),
        fval_threshold=oparams.get("fval_threshold", math.inf),
        super_epoch_len=oparams.get("super_epoch_len", 0),
        eval_every=oparams.get("eval_every", 50),
        seed=seed,
        max_iters=oparams.get("max_iters"),
    )
    if kind == "svrg" and bk.epoch_len is None:
        m = algorithm._ceil_sqrt(inst.spec.n)
        bk = dataclasses.replace(bk, epoch_len=m, minibatch=oparams.get("minibatch", m))
    if kind == "perturbed_gd" and bk.perturb_radius <= 0:
        rho = inst.spec.lipschitz_hess
        delta = oparams.get("delta", 0.1)
        if rho > 0:
            bk = dataclasses.replace(
                bk,
                perturb_radius=min(delta**3 / (rho**2 * eps), delta**1.5 / (rho * math.sqrt(L))),
                grad_threshold=eps,
                fval_threshold=delta**3 / rho**2,
                super_epoch_len=math.ceil(1.0 / (bk.step_size * delta)),
            )
    return bk


def run_plan(plan: ExperimentPlan, workers: int | None = None) -> dict:
    """Run every cell, persist traces/summaries, and write the aggregate.

    A cell that aborts (non-finite oracle value) is marked failed in the
    aggregate without stopping the other cells.
    """
    out_root = Path(plan.out_dir)
    out_root.mkdir(parents=True, exist_ok=True)
    cells = plan.cells()
    if workers is None:
        workers = int(os.environ.get("SSRGD_WORKERS", "1"))

    results: list[dict] = []
    if workers > 1 and len(cells) > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_cell_safely, cells))
    else:
        results = [_run_cell_safely(cell) for cell in cells]

    summaries = []
    failed = []
    for cell, (summary, trace_csv) in zip(cells, results):
        cell_dir = out_root / cell.run_id
        cell_dir.mkdir(parents=True, exist_ok=True)
        (cell_dir / "trace.csv").write_text(trace_csv, encoding="utf-8")
        (cell_dir / "summary.json").write_text(
            json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )
        summaries.append(summary)
        if summary.get("failed"):
            failed.append(cell.run_id)

    aggregate = {
        "cells": summaries,
        "failed": failed,
        "total_sfo_raw": sum(s.get("sfo_raw", 0) or 0 for s in summaries),
        "sweep": None if plan.sweep is None else {"axis": plan.sweep[0], "grid": plan.sweep[1]},
        "out_dir": str(out_root),
    }
    (out_root / "aggregate.json").write_text(
        json.dumps(aggregate, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    if plan.plot:
        emit_plots(aggregate, out_root)
    return aggregate


def _run_cell_safely(cell: Cell) -> tuple[dict, str]:
    try:
        return run_cell(cell)
    except NonFiniteError as exc:
        logger.error("cell %s aborted: %s", cell.run_id, exc)
        summary = {
            "run_id": cell.run_id,
            "problem": cell.problem_name,
            "optimizer": cell.optimizer_name,
            "seed": cell.seed,
            "sweep_axis": cell.sweep_axis,
            "sweep_value": cell.sweep_value,
            "failed": True,
            "error": str(exc),
            "sfo_raw": 0,
        }
        return summary, _trace_to_csv(exc.trace)


def scaling_report(aggregate, axis: str, subtract_n: bool = False) -> dict:
    """Least-squares exponent of SFO-to-FOSP against the sweep axis.

    For ``axis='eps'`` the fit is log(sfo) vs log(1/eps) (expected slope 2);
    for ``axis='n'`` it is log(sfo), optionally minus the one-off full
    gradient term n, vs log(n) (expected slope 1/2 after subtraction).
    The confidence interval comes from per-seed slopes.
    """
    if isinstance(aggregate, (str, Path)):
        aggregate = json.loads(Path(aggregate).read_text(encoding="utf-8"))
    if axis not in ("eps", "n"):
        raise ConfigError("axis must be 'eps' or 'n'")
    per_seed: dict[int, dict[float, float]] = {}
    for s in aggregate["cells"]:
        if s.get("failed") or s.get("sfo_to_fosp") is None:
            continue
        xval = s.get("eps") if axis == "eps" else s.get("n")
        if xval is None:
            continue
        y = float(s["sfo_to_fosp"])
        if subtract_n and axis == "n":
            y -= float(s["n"])
            if y <= 0:
                continue
        per_seed.setdefault(int(s.get("seed", 0)), {})[float(xval)] = y

    xs_all = sorted({x for d in per_seed.values() for x in d})
    if len(xs_all) < 3:
        raise core.InsufficientDataError(
            f"need >= 3 sweep points on axis {axis!r}, found {len(xs_all)}"
        )

    def to_logx(x):
        return math.log(1.0 / x) if axis == "eps" else math.log(x)

    seed_slopes = []
    for seed, d in sorted(per_seed.items()):
        if len(d) < 3:
            continue
        lx = np.array([to_logx(x) for x in sorted(d)])
        ly = np.array([math.log(d[x]) for x in sorted(d)])
        seed_slopes.append(float(np.polyfit(lx, ly, 1)[0]))

    mean_y = {
        x: float(np.mean([d[x] for d in per_seed.values() if x in d])) for x in xs_all
    }
    lx = np.array([to_logx(x) for x in xs_all])
    ly = np.array([math.log(mean_y[x]) for x in xs_all])
    slope, intercept = (float(v) for v in np.polyfit(lx, ly, 1))

    if len(seed_slopes) >= 2:
        arr = np.array(seed_slopes)
        half = 1.96 * float(arr.std(ddof=1)) / math.sqrt(len(arr))
        ci = (float(arr.mean()) - half, float(arr.mean()) + half)
    else:
        ci = (slope, slope)
    return {
        "axis": axis,
        "subtract_n": subtract_n,
        "slope": slope,
        "intercept": intercept,
        "ci_low": ci[0],
        "ci_high": ci[1],
        "per_seed_slopes": seed_slopes,
        "points": [{"x": x, "mean_sfo": mean_y[x]} for x in xs_all],
    }


def emit_plots(aggregate, out_dir) -> list[str]:
    """Write self-contained SVG charts for an aggregate; returns the files.

    Always: objective vs SFO and measured gradient norm vs SFO (log y) when
    there is at least one successful cell.  A scaling fit is added for
    sweeps with >= 3 points, and a certified-rate bar chart when several
    seeds carry certificates.
    """
    if isinstance(aggregate, (str, Path)):
        aggregate = json.loads(Path(aggregate).read_text(encoding="utf-8"))
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    cells = [s for s in aggregate["cells"] if not s.get("failed")]
    written: list[str] = []
    run_ids = [s["run_id"] for s in cells]

    f_series, g_series = [], []
    for s in cells:
        trace_path = Path(aggregate.get("out_dir", out_dir)) / s["run_id"] / "trace.csv"
        if not trace_path.is_file():
            continue
        trace = read_trace_csv(trace_path)
        label = f"{s['optimizer']}/{s['problem']}/s{s['seed']}"
        f_series.append((label, [r.sfo_count for r in trace], [r.f_value for r in trace]))
        pts = [(r.sfo_count, r.grad_norm) for r in trace if r.grad_norm is not None]
        if pts:
            g_series.append((label, [p[0] for p in pts], [p[1] for p in pts]))

    if f_series:
        p = out_dir / "trace_f_vs_sfo.svg"
        p.write_text(
            svgplot.line_chart(
                f_series, title="objective vs oracle work", xlabel="SFO (raw)",
                ylabel="f", run_ids=run_ids,
            ),
            encoding="utf-8",
        )
        written.append(str(p))
    if g_series:
        p = out_dir / "trace_gradnorm_vs_sfo.svg"
        p.write_text(
            svgplot.line_chart(
                g_series, title="measured gradient norm vs oracle work",
                xlabel="SFO (raw)", ylabel="||grad f||", logy=True, run_ids=run_ids,
            ),
            encoding="utf-8",
        )
        written.append(str(p))

    sweep = aggregate.get("sweep")
    if sweep and len(sweep.get("grid", [])) >= 3:
        try:
            rep = scaling_report(aggregate, sweep["axis"])
            xs = [
                (1.0 / p["x"]) if sweep["axis"] == "eps" else p["x"]
                for p in rep["points"]
            ]
            ys = [p["mean_sfo"] for p in rep["points"]]
            lx10 = [math.log10(x) for x in xs]
            ly10 = [math.log10(y) for y in ys]
            slope10, inter10 = np.polyfit(lx10, ly10, 1)
            p = out_dir / "scaling_fit.svg"
            p.write_text(
                svgplot.scatter_fit_chart(
                    xs, ys, float(slope10), float(inter10),
                    title=f"oracle complexity scaling ({sweep['axis']})",
                    xlabel="1/eps" if sweep["axis"] == "eps" else "n",
                    ylabel="SFO to eps-FOSP", run_ids=run_ids,
                ),
                encoding="utf-8",
            )
            written.append(str(p))
        except core.InsufficientDataError:
            pass

    with_cert = [s for s in cells if s.get("certificate")]
    seeds = {s["seed"] for s in cells}
    if with_cert and len(seeds) >= 2:
        groups: dict[str, list[bool]] = {}
        for s in with_cert:
            groups.setdefault(s["optimizer"], []).append(bool(s["certificate"]["is_sosp"]))
        labels = sorted(groups)
        values = [sum(groups[k]) / len(groups[k]) for k in labels]
        p = out_dir / "escape_rate.svg"
        p.write_text(
            svgplot.bar_chart(
                labels, values, title="certified second-order rate",
                ylabel="fraction of runs", run_ids=[s["run_id"] for s in with_cert],
            ),
            encoding="utf-8",
        )
        written.append(str(p))

    (out_dir / "plots.json").write_text(
        json.dumps(sorted(written), indent=2) + "\n", encoding="utf-8"
    )
    return written


# ---------------------------------------------------------------------------
# CLI


def _cmd_run(args) -> int:
    plan = parse_config(args.config)
    if args.workers is not None:
        os.environ["SSRGD_WORKERS"] = str(args.workers)
    aggregate = run_plan(plan)
    print(json.dumps({
        "cells": len(aggregate["cells"]),
        "failed": aggregate["failed"],
        "out_dir": aggregate["out_dir"],
    }, indent=2))
    return 1 if aggregate["failed"] else 0


def _cmd_scaling(args) -> int:
    rep = scaling_report(args.aggregate, args.axis, subtract_n=args.subtract_n)
    print(json.dumps(rep, indent=2))
    return 0


def _cmd_certify(args) -> int:
    plan = parse_config(args.problem)
    inst = build_problem(plan.problems[0][1])
    x = np.load(args.checkpoint)
    cert = spectral.certify(inst.spec, np.asarray(x, dtype=float), args.eps, args.delta)
    print(json.dumps(cert.to_dict(), indent=2))
    return 0


def _first_instance(args):
    plan = parse_config(args.config)
    return build_problem(plan.problems[0][1])


def _cmd_diagnose(args) -> int:
    inst = _first_instance(args)
    spec = inst.spec
    if args.subcommand == "variance":
        x = np.zeros(spec.d)
        xs = [x]
        for _ in range(args.steps):
            x = x - 0.5 / spec.lipschitz_grad * spec.full_grad(x)
            xs.append(x)
        report = diagnostics.verify_variance_bound(
            spec, np.stack(xs), args.minibatch, args.replications,
            core.seeded_rng(args.seed, 3),
        ).to_dict()
    elif args.subcommand == "epoch-decrease":
        cfg = algorithm.derive_config_first_order(spec, 0.01, seed=args.seed)
        report = diagnostics.verify_epoch_decrease(
            spec, cfg, args.replications, core.seeded_rng(args.seed, 7)
        ).to_dict()
    elif args.subcommand == "coupled":
        if not inst.saddle_points:
            raise ConfigError("coupled diagnostics need a problem with a listed saddle")
        cfg = algorithm.derive_config_second_order(
            spec, args.eps, args.delta, args.logfactor, seed=args.seed
        )
        report = diagnostics.run_coupled_experiment(
            inst, inst.saddle_points[0][0], cfg, args.pairs
        ).to_dict()
    else:  # localization
        if not inst.saddle_points:
            raise ConfigError("localization diagnostics need a problem with a listed saddle")
        cfg = algorithm.derive_config_second_order(
            spec, args.eps, args.delta, args.logfactor, seed=args.seed,
            sfo_budget=args.budget,
        )
        cap = 1.0 / (2.0 * spec.lipschitz_grad)
        if cfg.step_size > cap:
            cfg = dataclasses.replace(cfg, step_size=0.95 * cap)
        paths = diagnostics.collect_super_epoch_paths(
            inst, cfg, seeds=range(args.seed, args.seed + args.super_epochs),
            x0=inst.saddle_points[0][0], max_paths=args.super_epochs,
        )
        report = diagnostics.verify_localization(
            paths, lipschitz_grad=spec.lipschitz_grad, cprime=1.0,
            step_size=cfg.step_size,
        ).to_dict()
    text = json.dumps(report, indent=2)
    if args.out:
        Path(args.out).write_text(text + "\n", encoding="utf-8")
    print(text)
    return 0


def build_arg_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ssrgd", description="experiment harness for perturbed recursive gradient descent"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute an experiment plan")
    p_run.add_argument("config")
    p_run.add_argument("--workers", type=int, default=None)
    p_run.set_defaults(func=_cmd_run)

    p_sc = sub.add_parser("scaling", help="fit oracle-complexity exponents")
    p_sc.add_argument("aggregate")
    p_sc.add_argument("--axis", choices=("eps", "n"), required=True)
    p_sc.add_argument("--subtract-n", action="store_true", dest="subtract_n")
    p_sc.set_defaults(func=_cmd_scaling)

    p_ct = sub.add_parser("certify", help="certify a checkpoint as a second-order point")
    p_ct.add_argument("problem", help="config file whose first [problem] section is used")
    p_ct.add_argument("checkpoint", help=".npy parameter vector")
    p_ct.add_argument("--eps", type=float, default=0.01)
    p_ct.add_argument("--delta", type=float, default=0.1)
    p_ct.set_defaults(func=_cmd_certify)

    p_dg = sub.add_parser("diagnose", help="run an analysis-validation experiment")
    p_dg.add_argument("subcommand", choices=("variance", "epoch-decrease", "coupled", "localization"))
    p_dg.add_argument("--config", required=True)
    p_dg.add_argument("--seed", type=int, default=0)
    p_dg.add_argument("--steps", type=int, default=3)
    p_dg.add_argument("--minibatch", type=int, default=2)
    p_dg.add_argument("--replications", type=int, default=2000)
    p_dg.add_argument("--pairs", type=int, default=50)
    p_dg.add_argument("--super-epochs", type=int, default=20, dest="super_epochs")
    p_dg.add_argument("--eps", type=float, default=0.05)
    p_dg.add_argument("--delta", type=float, default=0.3)
    p_dg.add_argument("--logfactor", type=float, default=8.0)
    p_dg.add_argument("--budget", type=int, default=200_000,
                      help="SFO budget per collection run (localization)")
    p_dg.add_argument("--out", default=None)
    p_dg.set_defaults(func=_cmd_diagnose)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = build_arg_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
