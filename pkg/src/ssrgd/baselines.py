"""Reference optimizers on the same oracle and trace interfaces.

Four kinds: full-batch gradient descent (``gd``), its perturbed variant
(``perturbed_gd``), constant-step minibatch SGD (``sgd``), and snapshot
SVRG (``svrg``).  All return ``SsrgdOutcome`` so any analysis that consumes
an SSRGD trace consumes these unchanged.

The perturbed variant reuses the same trigger pattern as the main
algorithm (gradient threshold, uniform-ball kick, escape window) rather
than the original schedule of that method, so ablations isolate the
estimator difference.  SGD uses a constant step size; its trace rows log
the exact full gradient every ``eval_every`` steps as an out-of-band
measurement that is not charged to the SFO count.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import core, estimators
from .algorithm import SsrgdOutcome, Termination
from .core import (
    ConfigError,
    Event,
    Mode,
    ProblemSpec,
    SfoCounter,
    TraceRecord,
    UnsupportedOracleError,
    Vector,
)
from .estimators import EstimatorState

KINDS = ("gd", "perturbed_gd", "sgd", "svrg")


@dataclass
class BaselineKind:
    """Which baseline to run and the parameters that kind needs."""

    kind: str
    step_size: float
    minibatch: int = 1
    epoch_len: int | None = None
    perturb_radius: float = 0.0
    grad_threshold: float = 0.0
    fval_threshold: float = math.inf
    super_epoch_len: int = 0
    eval_every: int = 50
    seed: int = 0
    max_iters: int | None = None

    def validate(self) -> None:
        if self.kind not in KINDS:
            raise ConfigError(f"unknown baseline kind {self.kind!r}; valid: {KINDS}")
        if self.step_size <= 0:
            raise ConfigError("step_size must be > 0")
        if self.kind in ("sgd", "svrg") and self.minibatch < 1:
            raise ConfigError("minibatch must be >= 1")
        if self.kind == "svrg" and (self.epoch_len is None or self.epoch_len < 1):
            raise ConfigError("svrg needs epoch_len >= 1")
        if self.kind == "perturbed_gd":
            if self.perturb_radius <= 0:
                raise ConfigError("perturbed_gd needs perturb_radius > 0")
            if self.grad_threshold <= 0:
                raise ConfigError("perturbed_gd needs grad_threshold > 0")
            if not (0 < self.fval_threshold < math.inf):
                raise ConfigError("perturbed_gd needs a finite fval_threshold > 0")
            if self.super_epoch_len < 1:
                raise ConfigError("perturbed_gd needs super_epoch_len >= 1")


def run_baseline(
    kind: BaselineKind,
    problem: ProblemSpec,
    sfo_budget: int,
    rng: np.random.Generator | None = None,
    *,
    x0: Vector | None = None,
    full_trace: bool = True,
) -> SsrgdOutcome:
    """Run the requested baseline under an SFO budget."""
    kind.validate()
    if sfo_budget <= 0:
        raise ConfigError("sfo_budget must be positive")
    if rng is None:
        rng = core.seeded_rng(kind.seed, 0)
    x = np.zeros(problem.d) if x0 is None else np.array(x0, dtype=float)
    core.ensure_finite(x, "initial point")
    if kind.kind in ("gd", "perturbed_gd"):
        return _run_gd(kind, problem, sfo_budget, rng, x, perturbed=kind.kind == "perturbed_gd")
    if kind.kind == "sgd":
        return _run_sgd(kind, problem, sfo_budget, rng, x)
    return _run_svrg(kind, problem, sfo_budget, rng, x, full_trace)


def _run_gd(kind, problem, budget, rng, x, perturbed):
    if problem.mode is not Mode.FINITE_SUM:
        raise UnsupportedOracleError("gd variants need the finite-sum full gradient")
    sfo = SfoCounter()
    trace: list[TraceRecord] = []
    candidates: list[tuple[int, Vector]] = []
    in_window = False
    f_tilde = math.nan
    t_init = -1
    t = 0
    term = Termination.BUDGET_EXHAUSTED
    while sfo.raw < budget:
        if kind.max_iters is not None and t >= kind.max_iters:
            term = Termination.MAX_EPOCHS
            break
        g = estimators.full_gradient(problem, x, sfo=sfo)
        gn = float(np.linalg.norm(g))
        f = float(problem.value(x))
        event = Event.NONE
        if in_window:
            if f_tilde - f >= kind.fval_threshold:
                in_window = False
                event = Event.SUPER_EPOCH_END_FDECREASE
            elif t - t_init >= kind.super_epoch_len:
                in_window = False
                event = Event.SUPER_EPOCH_END_TIMEOUT
        trace.append(TraceRecord(t, f, gn, sfo.raw, event))
        if perturbed and not in_window and gn <= kind.grad_threshold:
            candidates.append((t, x.copy()))
            f_tilde = f
            t_init = t
            in_window = True
            x = x + core.sample_uniform_ball(rng, problem.d, kind.perturb_radius)
            g = estimators.full_gradient(problem, x, sfo=sfo)
            trace.append(
                TraceRecord(t, float(problem.value(x)), float(np.linalg.norm(g)), sfo.raw, Event.PERTURBATION)
            )
        t += 1
        x = x - kind.step_size * g
        core.ensure_finite(x, "iterate", trace, t)
    return SsrgdOutcome(
        final_x=x, trace=trace, sosp_candidates=candidates,
        termination=term, sfo_raw=sfo.raw, sfo_nominal=sfo.nominal,
    )


def _run_sgd(kind, problem, budget, rng, x):
    sfo = SfoCounter()
    trace: list[TraceRecord] = []
    t = 0
    term = Termination.BUDGET_EXHAUSTED

    def measure(iteration):
        # out-of-band exact measurement, deliberately not SFO-charged
        if problem.mode is Mode.FINITE_SUM:
            gn = float(np.linalg.norm(problem.full_grad(x)))
        else:
            gn = None
        trace.append(TraceRecord(iteration, float(problem.value(x)), gn, sfo.raw, Event.NONE))

    measure(0)
    while sfo.raw < budget:
        if kind.max_iters is not None and t >= kind.max_iters:
            term = Termination.MAX_EPOCHS
            break
        batch = core.sample_minibatch(rng, problem.n, kind.minibatch)
        g = estimators.component_gradients(problem, batch, x).mean(axis=0)
        sfo.add(kind.minibatch)
        t += 1
        x = x - kind.step_size * g
        core.ensure_finite(x, "iterate", trace, t)
        if t % kind.eval_every == 0:
            measure(t)
    if trace[-1].iteration != t:
        measure(t)
    return SsrgdOutcome(
        final_x=x, trace=trace, termination=term,
        sfo_raw=sfo.raw, sfo_nominal=sfo.nominal,
    )


def _run_svrg(kind, problem, budget, rng, x, full_trace):
    if problem.mode is not Mode.FINITE_SUM:
        raise UnsupportedOracleError("svrg needs the finite-sum full gradient")
    sfo = SfoCounter()
    trace: list[TraceRecord] = []
    t = 0
    term = Termination.BUDGET_EXHAUSTED
    stop = False
    while not stop and sfo.raw < budget:
        if kind.max_iters is not None and t >= kind.max_iters:
            term = Termination.MAX_EPOCHS
            break
        anchor_grad = estimators.full_gradient(problem, x, sfo=sfo)
        state = EstimatorState(v=anchor_grad, anchor=x.copy(), anchor_grad=anchor_grad)
        trace.append(
            TraceRecord(t, float(problem.value(x)), float(np.linalg.norm(anchor_grad)), sfo.raw, Event.EPOCH_START)
        )
        v = anchor_grad
        for _ in range(kind.epoch_len):
            if sfo.raw >= budget:
                stop = True
                break
            if kind.max_iters is not None and t >= kind.max_iters:
                term = Termination.MAX_EPOCHS
                stop = True
                break
            t += 1
            x = x - kind.step_size * v
            core.ensure_finite(x, "iterate", trace, t)
            batch = core.sample_minibatch(rng, problem.n, kind.minibatch)
            v = estimators.svrg_step(problem, state, x, batch, sfo=sfo)
            if full_trace:
                trace.append(TraceRecord(t, float(problem.value(x)), None, sfo.raw, Event.NONE))
    return SsrgdOutcome(
        final_x=x, trace=trace, termination=term,
        sfo_raw=sfo.raw, sfo_nominal=sfo.nominal,
    )
