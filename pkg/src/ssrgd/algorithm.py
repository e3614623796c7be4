"""The SSRGD optimizer: perturbed stochastic recursive gradient descent.

Epoch structure: every epoch s starts by computing an anchor gradient at
x_{sm} (the exact full gradient in finite-sum mode, a large-batch estimate
online) and then runs up to ``epoch_len`` inner steps

    x_t = x_{t-1} - step_size * v_{t-1},
    v_t = recursive minibatch update of v_{t-1},

ending early, outside super epochs, with probability 1/(m-k+1) at inner
step k, which makes the stopping index uniform over the epoch.

Super epochs: when the algorithm is not already inside one and the anchor
gradient norm is at most ``grad_threshold``, it records the trigger point,
adds a perturbation drawn uniformly from the ball of radius
``perturb_radius``, and suppresses random stopping until either the
function value has dropped by ``fval_threshold`` below the trigger point or
``super_epoch_len`` steps have elapsed.  After a timeout the run simply
continues; the event is logged for diagnostics.

Termination is an artifact addition: an SFO budget, an optional epoch cap,
and an optional certification hook evaluated at each super-epoch trigger
point (the hook is kept out of the inner loop on purpose; escaping saddle
points needs no curvature search).
"""

from __future__ import annotations

import logging
import math
from collections.abc import Callable
from dataclasses import dataclass, field
from enum import Enum
from typing import Any

import numpy as np

from . import core, estimators
from .core import (
    ConfigError,
    Event,
    InvalidInputError,
    Mode,
    OptState,
    ProblemSpec,
    RunConfig,
    STEP_FACTOR_LIMIT,
    SfoCounter,
    TraceRecord,
    UnsupportedOracleError,
    Vector,
)
from .estimators import EstimatorState

logger = logging.getLogger("ssrgd")

DEFAULT_SFO_BUDGET = 10**12


def _ceil_sqrt(n: float) -> int:
    n = int(n)
    return max(1, math.isqrt(n - 1) + 1) if n > 1 else 1


class Termination(str, Enum):
    BUDGET_EXHAUSTED = "budget_exhausted"
    SOSP_CERTIFIED = "sosp_certified"
    MAX_EPOCHS = "max_epochs"


@dataclass
class SsrgdOutcome:
    """Result of one optimizer run (shared by the baselines).

    ``sosp_candidates`` lists the (iteration, point) pairs at which a super
    epoch was triggered, i.e. the anchor gradient fell under the threshold.
    ``sfo_raw`` counts every component-gradient evaluation; ``sfo_nominal``
    uses the complexity-statement convention (b per estimator step).
    """

    final_x: Vector
    trace: list[TraceRecord]
    sosp_candidates: list[tuple[int, Vector]] = field(default_factory=list)
    termination: Termination = Termination.BUDGET_EXHAUSTED
    sfo_raw: int = 0
    sfo_nominal: int = 0
    certificate: Any = None


def derive_config_first_order(
    problem: ProblemSpec,
    eps: float,
    *,
    sfo_budget: int = DEFAULT_SFO_BUDGET,
    seed: int = 0,
) -> RunConfig:
    """First-order-mode parameters: step size (sqrt(5)-1)/(2L), m = b = ceil(sqrt(n)),
    perturbation disabled."""
    if problem.mode is Mode.ONLINE:
        raise UnsupportedOracleError(
            "component count unknown in online mode; use derive_config_online_first_order"
        )
    m = _ceil_sqrt(problem.n)
    return RunConfig(
        step_size=STEP_FACTOR_LIMIT / problem.lipschitz_grad,
        epoch_len=m,
        minibatch=m,
        eps=eps,
        sfo_budget=sfo_budget,
        seed=seed,
    )


def derive_config_second_order(
    problem: ProblemSpec,
    eps: float,
    delta: float,
    logfactor: float = 1.0,
    *,
    sfo_budget: int = DEFAULT_SFO_BUDGET,
    seed: int = 0,
) -> RunConfig:
    """Second-order-mode parameters.

    m = b = ceil(sqrt(n)); step size logfactor/L capped at the first-order
    limit; grad_threshold = eps; fval_threshold = logfactor * delta^3/rho^2;
    super_epoch_len = ceil(logfactor/(step_size * delta)); perturb_radius =
    logfactor * min(delta^3/(rho^2 eps), delta^(3/2)/(rho sqrt(L))).
    """
    if problem.mode is Mode.ONLINE:
        raise UnsupportedOracleError(
            "component count unknown in online mode; use derive_config_online_second_order"
        )
    if eps <= 0 or delta <= 0:
        raise ConfigError("second-order targets need eps > 0 and delta > 0")
    rho = problem.lipschitz_hess
    if rho <= 0:
        raise ConfigError(
            "second-order mode needs a positive Hessian Lipschitz constant"
        )
    if logfactor <= 0:
        raise ConfigError("logfactor must be positive")
    L = problem.lipschitz_grad
    m = _ceil_sqrt(problem.n)
    eta = min(logfactor / L, STEP_FACTOR_LIMIT / L)
    return RunConfig(
        step_size=eta,
        epoch_len=m,
        minibatch=m,
        eps=eps,
        delta=delta,
        sfo_budget=sfo_budget,
        seed=seed,
        perturb_radius=logfactor * min(delta**3 / (rho**2 * eps), delta**1.5 / (rho * math.sqrt(L))),
        grad_threshold=eps,
        fval_threshold=logfactor * delta**3 / rho**2,
        super_epoch_len=math.ceil(logfactor / (eta * delta)),
        logfactor=logfactor,
    )


def derive_config_online_first_order(
    problem: ProblemSpec,
    eps: float,
    *,
    sfo_budget: int = DEFAULT_SFO_BUDGET,
    seed: int = 0,
) -> RunConfig:
    """Online first-order parameters: B = 4 sigma^2/eps^2, b = m = ceil(sqrt(B))."""
    if problem.mode is not Mode.ONLINE:
        raise UnsupportedOracleError("problem is finite-sum; use derive_config_first_order")
    if eps <= 0:
        raise ConfigError("eps must be positive")
    sigma = problem.variance_bound
    B = max(1, math.ceil(4.0 * sigma**2 / eps**2))
    m = _ceil_sqrt(B)
    return RunConfig(
        step_size=STEP_FACTOR_LIMIT / problem.lipschitz_grad,
        epoch_len=m,
        minibatch=m,
        eps=eps,
        sfo_budget=sfo_budget,
        seed=seed,
        large_batch=B,
    )


def derive_config_online_second_order(
    problem: ProblemSpec,
    eps: float,
    delta: float,
    logfactor: float = 1.0,
    *,
    sfo_budget: int = DEFAULT_SFO_BUDGET,
    seed: int = 0,
) -> RunConfig:
    """Online second-order parameters; thresholds as in the finite-sum case
    with the large anchor batch B = logfactor * 4 sigma^2/eps^2."""
    if problem.mode is not Mode.ONLINE:
        raise UnsupportedOracleError("problem is finite-sum; use derive_config_second_order")
    if eps <= 0 or delta <= 0:
        raise ConfigError("second-order targets need eps > 0 and delta > 0")
    rho = problem.lipschitz_hess
    if rho <= 0:
        raise ConfigError("second-order mode needs a positive Hessian Lipschitz constant")
    L = problem.lipschitz_grad
    sigma = problem.variance_bound
    B = max(1, math.ceil(logfactor * 4.0 * sigma**2 / eps**2))
    m = _ceil_sqrt(B)
    eta = min(logfactor / L, STEP_FACTOR_LIMIT / L)
    return RunConfig(
        step_size=eta,
        epoch_len=m,
        minibatch=m,
        eps=eps,
        delta=delta,
        sfo_budget=sfo_budget,
        seed=seed,
        large_batch=B,
        perturb_radius=logfactor * min(delta**3 / (rho**2 * eps), delta**1.5 / (rho * math.sqrt(L))),
        grad_threshold=eps,
        fval_threshold=logfactor * delta**3 / rho**2,
        super_epoch_len=math.ceil(logfactor / (eta * delta)),
        logfactor=logfactor,
    )


def random_stop_decision(rng: np.random.Generator, k: int, epoch_len: int) -> bool:
    """True with probability exactly 1/(m - k + 1); always true at k = m.

    Chaining these decisions over an epoch makes the stopping index uniform
    on {1, ..., m}.
    """
    if not 1 <= k <= epoch_len:
        raise InvalidInputError(f"inner step {k} outside [1, {epoch_len}]")
    return rng.random() < 1.0 / (epoch_len - k + 1)


def run_ssrgd(
    problem: ProblemSpec,
    cfg: RunConfig,
    rng: np.random.Generator | None = None,
    *,
    x0: Vector | None = None,
    certifier: Callable[[Vector], Any] | None = None,
    full_trace: bool = True,
    step_callback: Callable[[OptState, Event], None] | None = None,
) -> SsrgdOutcome:
    """Run SSRGD until the SFO budget, the epoch cap, or a certified point.

    ``full_trace=False`` records rows only at epoch starts and events,
    which keeps long runs cheap; the algorithm's path is identical either
    way.  ``certifier`` (if given) receives each super-epoch trigger point
    and ends the run when it reports ``is_sosp``.  ``step_callback`` is
    invoked with an ``OptState`` snapshot and the step's event after every
    iterate update, including the perturbation itself.
    """
    cfg.validate(problem)
    if rng is None:
        rng = core.seeded_rng(cfg.seed, 0)
    d = problem.d
    if x0 is None:
        x = np.zeros(d)
    else:
        x = np.array(x0, dtype=float)
        if x.shape != (d,):
            raise InvalidInputError(f"x0 has shape {x.shape}, expected ({d},)")
    core.ensure_finite(x, "initial point")

    online = problem.mode is Mode.ONLINE
    sfo = SfoCounter()
    trace: list[TraceRecord] = []
    candidates: list[tuple[int, Vector]] = []
    termination = Termination.BUDGET_EXHAUSTED
    certificate = None

    in_super = False
    x_tilde: Vector | None = None
    t_init = -1
    f_tilde = math.nan
    t = 0
    epoch = 0
    warned_domain = False

    def anchor(xp: Vector) -> Vector:
        if online:
            return estimators.large_batch_gradient(problem, xp, cfg.large_batch, rng, sfo=sfo)
        return estimators.full_gradient(problem, xp, sfo=sfo)

    def snapshot(k: int) -> OptState:
        return OptState(
            x=x.copy(),
            v=v.copy(),
            epoch=epoch,
            step_in_epoch=k,
            super_epoch_active=in_super,
            x_tilde=None if x_tilde is None else x_tilde.copy(),
            t_init=t_init if in_super else None,
            sfo_count=sfo.raw,
            iteration=t,
        )

    stop = False
    while not stop:
        if cfg.max_epochs is not None and epoch >= cfg.max_epochs:
            termination = Termination.MAX_EPOCHS
            break
        if sfo.raw >= cfg.sfo_budget:
            termination = Termination.BUDGET_EXHAUSTED
            break

        g = anchor(x)
        core.ensure_finite(g, "anchor gradient", trace, t)
        grad_norm = float(np.linalg.norm(g))
        f_here = float(problem.value(x))
        trace.append(TraceRecord(t, f_here, grad_norm, sfo.raw, Event.EPOCH_START))
        v = g

        if not in_super and cfg.second_order and grad_norm <= cfg.grad_threshold:
            candidates.append((t, x.copy()))
            if certifier is not None:
                cert = certifier(x)
                if getattr(cert, "is_sosp", False):
                    termination = Termination.SOSP_CERTIFIED
                    certificate = cert
                    break
            x_tilde = x.copy()
            t_init = t
            f_tilde = f_here
            in_super = True
            x = x_tilde + core.sample_uniform_ball(rng, d, cfg.perturb_radius)
            v = anchor(x)
            core.ensure_finite(v, "anchor gradient", trace, t)
            trace.append(
                TraceRecord(t, float(problem.value(x)), float(np.linalg.norm(v)), sfo.raw, Event.PERTURBATION)
            )
            if step_callback is not None:
                step_callback(snapshot(0), Event.PERTURBATION)

        state = EstimatorState(v=v, prev_x=x)
        for k in range(1, cfg.epoch_len + 1):
            if sfo.raw >= cfg.sfo_budget:
                termination = Termination.BUDGET_EXHAUSTED
                stop = True
                break
            t += 1
            x = x - cfg.step_size * v
            core.ensure_finite(x, "iterate", trace, t)
            if (
                problem.domain_radius is not None
                and not warned_domain
                and np.max(np.abs(x)) > problem.domain_radius
            ):
                logger.warning(
                    "iterate left the declared domain box (|x|_inf=%.3g > %.3g); "
                    "Lipschitz metadata no longer guaranteed",
                    float(np.max(np.abs(x))),
                    problem.domain_radius,
                )
                warned_domain = True
            batch = core.sample_minibatch(
                rng, problem.n, cfg.minibatch, cfg.sample_with_replacement
            )
            estimators.recursive_step(problem, state, x, batch, sfo=sfo)
            v = state.v
            core.ensure_finite(v, "gradient estimate", trace, t)

            event = Event.NONE
            f_t = None
            if in_super:
                f_t = float(problem.value(x))
                if f_tilde - f_t >= cfg.fval_threshold:
                    in_super = False
                    event = Event.SUPER_EPOCH_END_FDECREASE
                elif t - t_init >= cfg.super_epoch_len:
                    in_super = False
                    event = Event.SUPER_EPOCH_END_TIMEOUT
            else:
                if random_stop_decision(rng, k, cfg.epoch_len):
                    event = Event.RANDOM_STOP
            if step_callback is not None:
                step_callback(snapshot(k), event)
            if full_trace or event is not Event.NONE:
                if f_t is None:
                    f_t = float(problem.value(x))
                trace.append(TraceRecord(t, f_t, None, sfo.raw, event))
            if event is not Event.NONE:
                break
        epoch += 1

    return SsrgdOutcome(
        final_x=x,
        trace=trace,
        sosp_candidates=candidates,
        termination=termination,
        sfo_raw=sfo.raw,
        sfo_nominal=sfo.nominal,
        certificate=certificate,
    )
