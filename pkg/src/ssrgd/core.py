"""Shared domain types: oracle bundles, run configuration, RNG streams,
stochastic-first-order-oracle (SFO) accounting, and sampling primitives.

Every optimizer and diagnostic in this package is built on three contracts
defined here:

* ``ProblemSpec`` exposes component gradients, the exact full gradient
  (finite-sum mode), function values and optional Hessian-vector products,
  together with smoothness metadata (L, rho, sigma).
* ``seeded_rng`` returns counter-based (Philox) streams, so an identical
  (seed, stream_id) pair replays an identical draw sequence.  Coupled-pair
  experiments rely on this to feed two trajectories the same minibatches.
* ``SfoCounter`` tracks gradient-oracle work in two conventions: ``raw``
  counts every component-gradient evaluation performed (a recursive
  estimator step over a minibatch of b touches 2b gradients, one per
  endpoint), while ``nominal`` charges the single-evaluation convention
  used in complexity statements (b per estimator step).
"""

from __future__ import annotations

import math
from collections.abc import Callable
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

Vector = np.ndarray

# Largest step_size * L for which the per-epoch decrease argument goes
# through when the minibatch is at least the epoch length.
STEP_FACTOR_LIMIT = (math.sqrt(5.0) - 1.0) / 2.0

_REL_TOL = 1e-12


class Mode(str, Enum):
    FINITE_SUM = "finite_sum"
    ONLINE = "online"


class Event(str, Enum):
    """Per-iteration trace marker."""

    NONE = "none"
    EPOCH_START = "epoch_start"
    PERTURBATION = "perturbation"
    SUPER_EPOCH_END_FDECREASE = "super_epoch_end_fdecrease"
    SUPER_EPOCH_END_TIMEOUT = "super_epoch_end_timeout"
    RANDOM_STOP = "random_stop"


class SsrgdError(Exception):
    """Base class for package errors."""


class ConfigError(SsrgdError):
    """Invalid configuration or problem metadata."""


class UnsupportedOracleError(SsrgdError):
    """An oracle required by the operation is unavailable in this mode."""


class InvalidStateError(SsrgdError):
    """Estimator or optimizer state does not satisfy the preconditions."""


class InvalidInputError(SsrgdError):
    """Caller-supplied data is outside the operation's domain."""


class DatasetError(SsrgdError):
    """External dataset could not be parsed or is unusable."""


class InsufficientDataError(SsrgdError):
    """Not enough data points for the requested analysis."""


class NonFiniteError(SsrgdError):
    """An iterate or oracle value became NaN/Inf; carries the partial trace."""

    def __init__(self, message: str, trace=None, iteration: int | None = None):
        super().__init__(message)
        self.trace = list(trace) if trace is not None else []
        self.iteration = iteration


@dataclass
class SfoCounter:
    """Dual-convention stochastic gradient accounting (see module docstring)."""

    raw: int = 0
    nominal: int = 0

    def add(self, raw: int, nominal: int | None = None) -> None:
        self.raw += int(raw)
        self.nominal += int(raw if nominal is None else nominal)


@dataclass
class ProblemSpec:
    """Oracle bundle plus smoothness metadata for one optimization problem.

    ``n`` is the number of components of the finite sum; online problems use
    ``math.inf`` and draw fresh i.i.d. sample ids instead of indices into
    [0, n).  ``lipschitz_grad`` and ``lipschitz_hess`` are upper bounds valid
    inside the (max-norm) box of radius ``domain_radius`` when one is
    declared, and globally otherwise.  ``component_grad_batch`` is an
    optional vectorized oracle returning the stacked gradients for an index
    array; when absent, callers fall back to per-index calls.
    """

    n: float
    d: int
    lipschitz_grad: float
    lipschitz_hess: float
    mode: Mode
    value: Callable[[Vector], float]
    component_grad: Callable[[int, Vector], Vector]
    full_grad: Callable[[Vector], Vector] | None = None
    component_grad_batch: Callable[[np.ndarray, Vector], np.ndarray] | None = None
    hvp: Callable[[Vector, Vector], Vector] | None = None
    variance_bound: float = 0.0
    domain_radius: float | None = None

    def __post_init__(self):
        if self.d < 1:
            raise ConfigError("problem dimension must be >= 1")
        if not math.isinf(self.n):
            if self.n < 1 or int(self.n) != self.n:
                raise ConfigError("component count must be a positive integer or inf")
        if self.lipschitz_grad <= 0:
            raise ConfigError("gradient Lipschitz constant must be positive")
        if self.lipschitz_hess < 0:
            raise ConfigError("Hessian Lipschitz constant must be nonnegative")
        if self.mode is Mode.FINITE_SUM:
            if math.isinf(self.n):
                raise ConfigError("finite-sum mode needs a finite component count")
            if self.full_grad is None:
                raise ConfigError("finite-sum mode needs a full-gradient oracle")
        else:
            if self.variance_bound < 0:
                raise ConfigError("variance bound must be nonnegative")


@dataclass
class RunConfig:
    """All optimizer hyperparameters for one run.

    ``logfactor`` is a single scalar standing in for the polylogarithmic
    factors the convergence statements hide: it multiplies
    ``fval_threshold``, ``super_epoch_len`` and ``perturb_radius`` and
    relaxes the step-size cap in second-order mode.  Second-order mode is
    active whenever ``perturb_radius > 0``.
    """

    step_size: float
    epoch_len: int
    minibatch: int
    eps: float
    sfo_budget: int
    seed: int = 0
    large_batch: int | None = None
    perturb_radius: float = 0.0
    grad_threshold: float = 0.0
    fval_threshold: float = math.inf
    super_epoch_len: int = 0
    delta: float = 0.0
    logfactor: float = 1.0
    sample_with_replacement: bool = True
    max_epochs: int | None = None

    @property
    def second_order(self) -> bool:
        return self.perturb_radius > 0

    def validate(self, problem: ProblemSpec) -> None:
        if self.step_size <= 0:
            raise ConfigError("step_size must be > 0")
        if self.epoch_len < 1:
            raise ConfigError("epoch_len must be >= 1")
        if self.minibatch < 1:
            raise ConfigError("minibatch must be >= 1")
        if self.sfo_budget < 0:
            raise ConfigError("sfo_budget must be nonnegative")
        if self.eps < 0:
            raise ConfigError("eps must be nonnegative")
        if self.perturb_radius < 0:
            raise ConfigError("perturb_radius must be nonnegative")
        L = problem.lipschitz_grad
        if self.second_order:
            if self.minibatch < self.epoch_len:
                raise ConfigError(
                    "second-order mode needs minibatch >= epoch_len "
                    f"(got b={self.minibatch}, m={self.epoch_len})"
                )
            if self.grad_threshold <= 0:
                raise ConfigError("second-order mode needs grad_threshold > 0")
            if not (0 < self.fval_threshold < math.inf):
                raise ConfigError("second-order mode needs a finite fval_threshold > 0")
            if self.super_epoch_len < 1:
                raise ConfigError("second-order mode needs super_epoch_len >= 1")
            cap = max(self.logfactor, STEP_FACTOR_LIMIT) / L
            if self.step_size > cap * (1 + _REL_TOL):
                raise ConfigError(
                    f"step_size {self.step_size:g} exceeds second-order cap {cap:g}"
                )
        else:
            cap = STEP_FACTOR_LIMIT / L
            if self.step_size > cap * (1 + _REL_TOL):
                raise ConfigError(
                    f"step_size {self.step_size:g} exceeds first-order cap "
                    f"(sqrt(5)-1)/(2L) = {cap:g}"
                )
        if problem.mode is Mode.ONLINE:
            if self.large_batch is None or self.large_batch < 1:
                raise ConfigError("online mode needs large_batch >= 1")


@dataclass
class OptState:
    """Snapshot of optimizer state, as passed to step callbacks."""

    x: Vector
    v: Vector
    epoch: int
    step_in_epoch: int
    super_epoch_active: bool
    x_tilde: Vector | None
    t_init: int | None
    sfo_count: int
    iteration: int


@dataclass
class TraceRecord:
    """One trace row: objective value, (optionally) measured gradient norm,
    cumulative raw SFO count, and the event that produced the row.

    ``grad_norm`` is the exact full gradient norm in finite-sum mode and the
    large-batch estimate online; it is only populated where the optimizer
    computed that quantity anyway (epoch starts, perturbations), never at a
    hidden extra oracle cost.
    """

    iteration: int
    f_value: float
    grad_norm: float | None
    sfo_count: int
    event: Event = Event.NONE


def seeded_rng(seed: int, stream_id: int = 0) -> np.random.Generator:
    """Deterministic counter-based stream.

    Identical (seed, stream_id) pairs yield identical draws; distinct
    stream ids give independent streams.
    """
    key = np.array([seed % 2**64, stream_id % 2**64], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def sample_uniform_ball(rng: np.random.Generator, d: int, r: float) -> Vector:
    """Uniform draw from the Euclidean ball of radius ``r`` in R^d.

    Isotropic direction scaled by r * U^(1/d) with U uniform on [0, 1].
    """
    if d < 1:
        raise ConfigError("dimension must be >= 1")
    if r < 0:
        raise ConfigError("radius must be nonnegative")
    if r == 0:
        return np.zeros(d)
    while True:
        direction = rng.standard_normal(d)
        nrm = float(np.linalg.norm(direction))
        if nrm > 0:
            break
    u = rng.random()
    return direction * (r * u ** (1.0 / d) / nrm)


def sample_minibatch(
    rng: np.random.Generator,
    n: float,
    b: int,
    with_replacement: bool = True,
) -> np.ndarray:
    """i.i.d. uniform index multiset of size ``b``.

    Drawn with replacement by default (the independence the variance
    analysis uses); ``with_replacement=False`` is offered as a non-default
    variant.  Online problems (``n == inf``) receive fresh i.i.d. sample
    ids instead of indices.
    """
    if b < 1:
        raise ConfigError("minibatch size must be >= 1")
    if math.isinf(n):
        return rng.integers(0, 2**62, size=b, dtype=np.int64)
    n = int(n)
    if n < 1:
        raise ConfigError("component count must be >= 1")
    if with_replacement:
        return rng.integers(0, n, size=b, dtype=np.int64)
    if b > n:
        raise ConfigError("without replacement needs b <= n")
    return rng.choice(n, size=b, replace=False).astype(np.int64)


def ensure_finite(x: Vector, what: str, trace=None, iteration: int | None = None) -> None:
    if not np.all(np.isfinite(x)):
        raise NonFiniteError(f"{what} contains non-finite entries", trace, iteration)
