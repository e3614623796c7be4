"""Empirical validation of the analysis behind the optimizer.

Four experiment families:

* ``verify_variance_bound``: along a fixed trajectory whose first point has
  an exact estimate, the recursive estimator's error satisfies
  E||v_t - grad f(x_t)||^2 <= (L^2/b) * sum_j ||x_j - x_{j-1}||^2,
  and the snapshot estimator satisfies the same with the cumulative sum
  replaced by ||x_t - x_0||^2.  Monte Carlo with standard errors, or exact
  exhaustive enumeration for tiny instances.
* ``verify_epoch_decrease``: one-epoch Monte Carlo check of
  E f(x_m) <= f(x_0) - (eta/2) sum_j E||grad f(x_{j-1})||^2, plus an
  illustrative snapshot-estimator run at the same (undersized) minibatch.
* ``run_coupled_experiment``: the two-point probe of the stuck region
  around a strict saddle.  Two trajectories start ``r0`` apart along the
  most negative curvature direction and consume identical minibatch
  streams; at least one should travel ``delta/(C1 rho)`` from its start
  within the escape window.
* ``verify_localization``: iterates of a super epoch stay within
  sqrt(4 t (f(x_0) - f(x_t)) / (C' L)) of its start.

All Monte Carlo verdicts carry standard errors; a violation requires
exceeding a bound by more than three of them.  High-probability statements
(escape, localization) are reported as frequencies, never hard assertions.
"""

from __future__ import annotations

import hashlib
import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from . import algorithm, core, estimators, spectral
from .core import (
    ConfigError,
    Event,
    InvalidInputError,
    Mode,
    ProblemSpec,
    RunConfig,
    Vector,
)
from .estimators import EstimatorState
from .problems import ProblemInstance

EXHAUSTIVE_LIMIT = 300_000


# ---------------------------------------------------------------------------
# variance bounds


@dataclass
class VarianceCheckRow:
    t: int
    estimate: float
    bound: float
    stderr: float
    passed: bool


@dataclass
class VarianceReport:
    estimator: str
    replications: int | None  # None = exhaustive enumeration
    rows: list[VarianceCheckRow]
    passed: bool

    def to_dict(self) -> dict:
        return {
            "estimator": self.estimator,
            "replications": self.replications,
            "passed": self.passed,
            "rows": [vars(r) for r in self.rows],
        }


def _exact_grads(problem: ProblemSpec, xs: np.ndarray) -> np.ndarray:
    return np.stack([estimators.full_gradient(problem, x) for x in xs])


def _estimator_errors(problem, xs, grads, b, batches, estimator):
    """Squared estimator errors at steps 1..T for one batch sequence."""
    T = len(xs) - 1
    errs = np.empty(T)
    if estimator == "recursive":
        state = EstimatorState(v=grads[0].copy(), prev_x=xs[0])
        for j in range(1, T + 1):
            estimators.recursive_step(problem, state, xs[j], batches[j - 1])
            errs[j - 1] = float(np.sum((state.v - grads[j]) ** 2))
    else:
        state = EstimatorState(v=grads[0], anchor=xs[0], anchor_grad=grads[0])
        for j in range(1, T + 1):
            v = estimators.svrg_step(problem, state, xs[j], batches[j - 1])
            errs[j - 1] = float(np.sum((v - grads[j]) ** 2))
    return errs


def verify_variance_bound(
    problem: ProblemSpec,
    trajectory,
    minibatch: int,
    replications: int | None,
    rng: np.random.Generator | None = None,
    *,
    estimator: str = "recursive",
    with_replacement: bool = True,
) -> VarianceReport:
    """Monte Carlo (or exhaustive) check of the estimator variance bound
    along a fixed trajectory starting from an exact anchor estimate."""
    if estimator not in ("recursive", "svrg"):
        raise ConfigError("estimator must be 'recursive' or 'svrg'")
    xs = np.asarray(trajectory, dtype=float)
    if xs.ndim != 2 or len(xs) < 2:
        raise InvalidInputError("trajectory must contain at least two points")
    if problem.mode is not Mode.FINITE_SUM:
        raise InvalidInputError("variance verification needs finite-sum mode")
    n = int(problem.n)
    b = int(minibatch)
    T = len(xs) - 1
    grads = _exact_grads(problem, xs)
    L = problem.lipschitz_grad

    steps_sq = np.sum(np.diff(xs, axis=0) ** 2, axis=1)
    if estimator == "recursive":
        bounds = (L * L / b) * np.cumsum(steps_sq)
    else:
        bounds = (L * L / b) * np.sum((xs[1:] - xs[0]) ** 2, axis=1)

    if replications is None:
        per_step = list(itertools.product(range(n), repeat=b))
        total = len(per_step) ** T
        if total > EXHAUSTIVE_LIMIT:
            raise ConfigError(
                f"exhaustive mode would enumerate {total} sequences (limit {EXHAUSTIVE_LIMIT})"
            )
        acc = np.zeros(T)
        for seq in itertools.product(per_step, repeat=T):
            batches = [np.array(tup, dtype=np.int64) for tup in seq]
            acc += _estimator_errors(problem, xs, grads, b, batches, estimator)
        est = acc / total
        se = np.zeros(T)
    else:
        if rng is None:
            rng = core.seeded_rng(0, 3)
        errs = np.empty((replications, T))
        for rep in range(replications):
            batches = [
                core.sample_minibatch(rng, n, b, with_replacement) for _ in range(T)
            ]
            errs[rep] = _estimator_errors(problem, xs, grads, b, batches, estimator)
        est = errs.mean(axis=0)
        se = errs.std(axis=0, ddof=1) / math.sqrt(replications) if replications > 1 else np.zeros(T)

    rows = [
        VarianceCheckRow(
            t=j + 1,
            estimate=float(est[j]),
            bound=float(bounds[j]),
            stderr=float(se[j]),
            passed=bool(est[j] <= bounds[j] + 3.0 * se[j] + 1e-12),
        )
        for j in range(T)
    ]
    return VarianceReport(
        estimator=estimator,
        replications=replications,
        rows=rows,
        passed=all(r.passed for r in rows),
    )


# ---------------------------------------------------------------------------
# per-epoch decrease


@dataclass
class EpochDecreaseReport:
    f_start: float
    mean_f_end: float
    stderr_f_end: float
    decrease_term: float  # (eta/2) * mean of sum_j ||grad f(x_{j-1})||^2
    passed: bool
    svrg_mean_f_end: float
    svrg_gap: float  # mean decrease advantage of the recursive estimator

    def to_dict(self) -> dict:
        return dict(vars(self))


def verify_epoch_decrease(
    problem: ProblemSpec,
    cfg: RunConfig,
    epochs: int,
    rng: np.random.Generator | None = None,
    *,
    x0: Vector | None = None,
) -> EpochDecreaseReport:
    """Monte Carlo check of the one-epoch decrease inequality from a fixed
    start, with an illustrative snapshot-estimator run at the same b = m
    (undersized for that estimator, which needs b >= m^2)."""
    if problem.mode is not Mode.FINITE_SUM:
        raise InvalidInputError("epoch-decrease verification needs finite-sum mode")
    if cfg.minibatch < cfg.epoch_len:
        raise ConfigError("verification needs minibatch >= epoch_len")
    L = problem.lipschitz_grad
    if cfg.step_size > core.STEP_FACTOR_LIMIT / L * (1 + 1e-12):
        raise ConfigError("verification needs step_size <= (sqrt(5)-1)/(2L)")
    if epochs < 2:
        raise ConfigError("need at least two replications")
    if rng is None:
        rng = core.seeded_rng(cfg.seed, 7)
    x_start = np.zeros(problem.d) if x0 is None else np.asarray(x0, dtype=float)
    n = int(problem.n)
    eta = cfg.step_size
    m = cfg.epoch_len
    b = cfg.minibatch

    f_start = float(problem.value(x_start))
    g0 = estimators.full_gradient(problem, x_start)

    f_end = np.empty(epochs)
    f_end_svrg = np.empty(epochs)
    grad_sq_sums = np.empty(epochs)
    for rep in range(epochs):
        # recursive estimator epoch
        x = x_start.copy()
        state = EstimatorState(v=g0.copy(), prev_x=x)
        gsum = float(np.sum(g0**2))
        for k in range(m):
            x = x - eta * state.v
            batch = core.sample_minibatch(rng, n, b, cfg.sample_with_replacement)
            estimators.recursive_step(problem, state, x, batch)
            if k < m - 1:
                gsum += float(np.sum(estimators.full_gradient(problem, x) ** 2))
        f_end[rep] = float(problem.value(x))
        grad_sq_sums[rep] = gsum
        # snapshot estimator epoch with the same (undersized) minibatch
        x = x_start.copy()
        sstate = EstimatorState(v=g0, anchor=x_start, anchor_grad=g0)
        v = g0.copy()
        for k in range(m):
            x = x - eta * v
            batch = core.sample_minibatch(rng, n, b, cfg.sample_with_replacement)
            v = estimators.svrg_step(problem, sstate, x, batch)
        f_end_svrg[rep] = float(problem.value(x))

    mean_end = float(f_end.mean())
    se = float(f_end.std(ddof=1) / math.sqrt(epochs))
    term = 0.5 * eta * float(grad_sq_sums.mean())
    return EpochDecreaseReport(
        f_start=f_start,
        mean_f_end=mean_end,
        stderr_f_end=se,
        decrease_term=term,
        passed=bool(mean_end <= f_start - term + 3.0 * se + 1e-12),
        svrg_mean_f_end=float(f_end_svrg.mean()),
        svrg_gap=float(f_end_svrg.mean() - mean_end),
    )


# ---------------------------------------------------------------------------
# coupled two-point experiment


@dataclass
class CoupledRun:
    r0: float
    e1: Vector
    escape_iter: int | None
    fdecrease_iter: int | None
    max_travel: float
    max_fdrop: float
    batch_digest: str
    batch_digest_twin: str
    x_traj: np.ndarray | None = None
    x_prime_traj: np.ndarray | None = None
    w_norms: np.ndarray | None = None


@dataclass
class CoupledReport:
    pairs: list[CoupledRun]
    escape_frequency: float
    fdecrease_frequency: float
    travel_threshold: float
    radius: float
    r0: float
    window: int
    c1: float

    def to_dict(self) -> dict:
        return {
            "escape_frequency": self.escape_frequency,
            "fdecrease_frequency": self.fdecrease_frequency,
            "travel_threshold": self.travel_threshold,
            "radius": self.radius,
            "r0": self.r0,
            "window": self.window,
            "c1": self.c1,
            "pairs": [
                {
                    "escape_iter": p.escape_iter,
                    "fdecrease_iter": p.fdecrease_iter,
                    "max_travel": p.max_travel,
                    "max_fdrop": p.max_fdrop,
                    "coupled": p.batch_digest == p.batch_digest_twin,
                }
                for p in self.pairs
            ],
        }


def _run_recorded_updates(problem, x0, steps, epoch_len, minibatch, step_size, batch_rng):
    """Plain epoch-structured update steps (anchor + recursive estimator),
    recording every iterate; returns (positions, values, batch digest)."""
    n = problem.n
    xs = np.empty((steps + 1, problem.d))
    fs = np.empty(steps + 1)
    xs[0] = x0
    fs[0] = problem.value(x0)
    digest = hashlib.sha256()
    x = np.array(x0, dtype=float)
    state = None
    for t in range(1, steps + 1):
        if (t - 1) % epoch_len == 0:
            v = estimators.full_gradient(problem, x)
            state = EstimatorState(v=v, prev_x=x)
        x = x - step_size * state.v
        batch = core.sample_minibatch(batch_rng, n, minibatch)
        digest.update(batch.tobytes())
        estimators.recursive_step(problem, state, x, batch)
        xs[t] = x
        fs[t] = problem.value(x)
    return xs, fs, digest.hexdigest()


def run_coupled_experiment(
    instance: ProblemInstance,
    x_tilde: Vector,
    cfg: RunConfig,
    seeds: int,
    *,
    zeta_prime: float = 0.1,
    c2: float = 1.0,
    c1: float | None = None,
    check_saddle: bool = True,
    store_trajectories: bool = False,
) -> CoupledReport:
    """Escape statistics for coupled trajectory pairs around a saddle.

    Works in the regime of the small-stuck-region analysis: the effective
    perturbation radius is capped at delta/(C1 rho) with C1 = 20 c2/(eta L)
    by default, the pair offset is r0 = zeta_prime * r / sqrt(d) along the
    most negative curvature direction at ``x_tilde``, and the window is
    2 log(8 delta sqrt(d) / (C1 rho zeta_prime r)) / (eta delta) steps.
    Both trajectories replay identical minibatch streams; the report keeps
    a digest of each stream so the coupling is checkable.
    """
    problem = instance.spec
    if problem.mode is not Mode.FINITE_SUM:
        raise InvalidInputError("the coupled experiment needs finite-sum mode")
    if cfg.delta <= 0:
        raise ConfigError("cfg.delta must be positive")
    if cfg.minibatch < cfg.epoch_len:
        raise ConfigError("needs minibatch >= epoch_len")
    if not 0 < zeta_prime < 1:
        raise ConfigError("zeta_prime must be in (0, 1)")
    d = problem.d
    L = problem.lipschitz_grad
    rho = problem.lipschitz_hess
    if rho <= 0:
        raise ConfigError("needs a positive Hessian Lipschitz constant")
    eta = cfg.step_size
    delta = cfg.delta
    x_tilde = np.asarray(x_tilde, dtype=float)

    H = spectral.assemble_hessian(problem, x_tilde)
    evals, evecs = np.linalg.eigh(H)
    if check_saddle and evals[0] > -delta:
        raise InvalidInputError(
            f"x_tilde is not a saddle at the requested level: lambda_min="
            f"{evals[0]:.3g} > -{delta:g}"
        )
    e1 = evecs[:, 0]

    C1 = (20.0 * c2 / (eta * L)) if c1 is None else float(c1)
    threshold = delta / (C1 * rho)
    radius = min(cfg.perturb_radius, threshold)
    if radius <= 0:
        raise ConfigError("effective perturbation radius is zero")
    r0 = zeta_prime * radius / math.sqrt(d)
    window = math.ceil(
        2.0 * math.log(8.0 * delta * math.sqrt(d) / (C1 * rho * zeta_prime * radius))
        / (eta * delta)
    )

    pairs: list[CoupledRun] = []
    for pair_idx in range(seeds):
        pert_rng = core.seeded_rng(cfg.seed, 10_000 + pair_idx)
        x0 = x_tilde + core.sample_uniform_ball(pert_rng, d, radius)
        x0p = x0 - r0 * e1

        batch_stream = core.seeded_rng(cfg.seed, 20_000 + pair_idx)
        xs, fs, dig = _run_recorded_updates(
            problem, x0, window, cfg.epoch_len, cfg.minibatch, eta, batch_stream
        )
        batch_stream_twin = core.seeded_rng(cfg.seed, 20_000 + pair_idx)
        xsp, fsp, digp = _run_recorded_updates(
            problem, x0p, window, cfg.epoch_len, cfg.minibatch, eta, batch_stream_twin
        )

        travel = np.linalg.norm(xs - xs[0], axis=1)
        travel_p = np.linalg.norm(xsp - xsp[0], axis=1)
        joint = np.maximum(travel, travel_p)
        hit = np.nonzero(joint >= threshold)[0]
        escape_iter = int(hit[0]) if hit.size else None

        drop = np.maximum(fs[0] - fs, fsp[0] - fsp)
        fhit = np.nonzero(drop >= 2.0 * cfg.fval_threshold)[0]
        fdec_iter = int(fhit[0]) if fhit.size else None

        pairs.append(
            CoupledRun(
                r0=r0,
                e1=e1,
                escape_iter=escape_iter,
                fdecrease_iter=fdec_iter,
                max_travel=float(joint.max()),
                max_fdrop=float(drop.max()),
                batch_digest=dig,
                batch_digest_twin=digp,
                x_traj=xs if store_trajectories else None,
                x_prime_traj=xsp if store_trajectories else None,
                w_norms=np.linalg.norm(xs - xsp, axis=1) if store_trajectories else None,
            )
        )
    escaped = sum(1 for p in pairs if p.escape_iter is not None)
    fdec = sum(1 for p in pairs if p.fdecrease_iter is not None)
    return CoupledReport(
        pairs=pairs,
        escape_frequency=escaped / max(1, seeds),
        fdecrease_frequency=fdec / max(1, seeds),
        travel_threshold=threshold,
        radius=radius,
        r0=r0,
        window=window,
        c1=C1,
    )


# ---------------------------------------------------------------------------
# localization


@dataclass
class SuperEpochPath:
    """Iterates of one super epoch: xs[0] is the post-perturbation start."""

    start_iter: int
    xs: np.ndarray
    fs: np.ndarray
    complete: bool


@dataclass
class LocalizationRow:
    t: int
    distance: float
    bound: float
    increase: bool
    ok: bool


@dataclass
class LocalizationReport:
    rows_per_path: list[list[LocalizationRow]]
    path_passed: list[bool]
    pass_fraction: float
    increase_steps: int

    def to_dict(self) -> dict:
        return {
            "pass_fraction": self.pass_fraction,
            "paths": len(self.path_passed),
            "path_passed": self.path_passed,
            "increase_steps": self.increase_steps,
        }


def collect_super_epoch_paths(
    instance: ProblemInstance,
    cfg: RunConfig,
    seeds,
    *,
    x0: Vector | None = None,
    max_paths: int | None = None,
) -> list[SuperEpochPath]:
    """Run the optimizer over the given seeds and record the iterates of
    every super epoch (positions are not otherwise kept by the run loop)."""
    problem = instance.spec
    paths: list[SuperEpochPath] = []
    for seed in seeds:
        segment: list[Vector] | None = None
        fvals: list[float] = []
        start_iter = 0

        def on_step(state, event):
            nonlocal segment, fvals, start_iter
            if event is Event.PERTURBATION:
                segment = [state.x]
                fvals = [float(problem.value(state.x))]
                start_iter = state.iteration
                return
            if segment is None:
                return
            segment.append(state.x)
            fvals.append(float(problem.value(state.x)))
            if event in (Event.SUPER_EPOCH_END_FDECREASE, Event.SUPER_EPOCH_END_TIMEOUT):
                paths.append(
                    SuperEpochPath(start_iter, np.stack(segment), np.array(fvals), True)
                )
                segment = None
                fvals = []

        run_cfg = cfg if cfg.seed == seed else _with_seed(cfg, seed)
        algorithm.run_ssrgd(
            problem, run_cfg, x0=x0, full_trace=False, step_callback=on_step
        )
        if segment is not None and len(segment) > 1:
            paths.append(SuperEpochPath(start_iter, np.stack(segment), np.array(fvals), False))
        if max_paths is not None and len(paths) >= max_paths:
            break
    if max_paths is not None:
        paths = paths[:max_paths]
    return paths


def _with_seed(cfg: RunConfig, seed: int) -> RunConfig:
    import dataclasses

    return dataclasses.replace(cfg, seed=seed)


def verify_localization(
    paths,
    *,
    lipschitz_grad: float,
    cprime: float = 1.0,
    step_size: float | None = None,
) -> LocalizationReport:
    """Check ||x_t - x_0|| <= sqrt(4 t (f(x_0) - f(x_t)) / (C' L)) along
    each super-epoch path.  Steps where the value increased are recorded
    and excluded (the statement presumes decrease)."""
    if cprime <= 0:
        raise ConfigError("cprime must be positive")
    if step_size is not None and step_size > 1.0 / (2.0 * cprime * lipschitz_grad) * (1 + 1e-12):
        raise ConfigError(
            "localization regime needs step_size <= 1/(2 C' L); got "
            f"{step_size:g} > {1.0 / (2.0 * cprime * lipschitz_grad):g}"
        )
    if isinstance(paths, SuperEpochPath):
        paths = [paths]
    all_rows: list[list[LocalizationRow]] = []
    path_passed: list[bool] = []
    increases = 0
    for path in paths:
        xs, fs = path.xs, path.fs
        rows: list[LocalizationRow] = []
        ok_all = True
        for t in range(1, len(xs)):
            dist = float(np.linalg.norm(xs[t] - xs[0]))
            drop = float(fs[0] - fs[t])
            if drop < 0:
                rows.append(LocalizationRow(t, dist, math.nan, True, True))
                increases += 1
                continue
            bound = math.sqrt(4.0 * t * drop / (cprime * lipschitz_grad))
            ok = dist <= bound * (1 + 1e-9) + 1e-15
            rows.append(LocalizationRow(t, dist, bound, False, ok))
            ok_all = ok_all and ok
        all_rows.append(rows)
        path_passed.append(ok_all)
    frac = sum(path_passed) / max(1, len(path_passed))
    return LocalizationReport(
        rows_per_path=all_rows,
        path_passed=path_passed,
        pass_fraction=frac,
        increase_steps=increases,
    )
