"""Gradient estimators.

Four estimators share the ``EstimatorState`` container:

* exact full gradient (finite-sum anchor),
* large-batch average (online anchor),
* recursive minibatch estimator
  ``v <- mean_{i in I_b}(grad_i(x_t) - grad_i(x_{t-1})) + v``,
  updated every step without a fixed snapshot,
* snapshot estimator
  ``v = mean_{i in I_b}(grad_i(x) - grad_i(anchor)) + full_grad(anchor)``.

The same index multiset is used for both evaluation points of a step, and
component gradients are reduced in fixed slot order so results are
deterministic regardless of how the oracle evaluates the batch internally.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import core
from .core import (
    ConfigError,
    InvalidStateError,
    Mode,
    ProblemSpec,
    SfoCounter,
    UnsupportedOracleError,
    Vector,
)


@dataclass
class EstimatorState:
    """Carries the current estimate ``v`` plus what it was formed at.

    The recursive chain keeps ``prev_x`` (the point ``v`` estimates the
    gradient of); the snapshot estimator keeps the ``anchor`` point and its
    exact gradient.  No per-component gradient table is stored.
    """

    v: Vector
    prev_x: Vector | None = None
    anchor: Vector | None = None
    anchor_grad: Vector | None = None


def component_gradients(problem: ProblemSpec, indices, x: Vector) -> np.ndarray:
    """Stacked component gradients, shape (len(indices), d), in slot order."""
    idx = np.asarray(indices, dtype=np.int64)
    if idx.size == 0:
        raise ConfigError("empty minibatch")
    if problem.component_grad_batch is not None:
        grads = np.asarray(problem.component_grad_batch(idx, x), dtype=float)
    else:
        grads = np.stack(
            [np.asarray(problem.component_grad(int(i), x), dtype=float) for i in idx]
        )
    return grads


def full_gradient(problem: ProblemSpec, x: Vector, sfo: SfoCounter | None = None) -> Vector:
    """Exact mean of all component gradients; costs n oracle evaluations."""
    if problem.mode is not Mode.FINITE_SUM or problem.full_grad is None:
        raise UnsupportedOracleError("full gradient needs a finite-sum problem")
    g = np.asarray(problem.full_grad(x), dtype=float)
    if sfo is not None:
        sfo.add(int(problem.n))
    return g


def large_batch_gradient(
    problem: ProblemSpec,
    x: Vector,
    batch_size: int,
    rng: np.random.Generator,
    sfo: SfoCounter | None = None,
) -> Vector:
    """Average of ``batch_size`` fresh i.i.d. component gradients (online anchor)."""
    if problem.mode is not Mode.ONLINE:
        raise UnsupportedOracleError("large-batch anchor is an online-mode operation")
    if batch_size is None or batch_size < 1:
        raise ConfigError("large batch size must be >= 1")
    idx = core.sample_minibatch(rng, problem.n, int(batch_size))
    grads = component_gradients(problem, idx, x)
    if sfo is not None:
        sfo.add(int(batch_size))
    return grads.mean(axis=0)


def recursive_step(
    problem: ProblemSpec,
    state: EstimatorState,
    x_new: Vector,
    batch,
    sfo: SfoCounter | None = None,
) -> EstimatorState:
    """Advance the recursive estimator to ``x_new`` using one minibatch.

    Requires ``state.v`` to have been formed at ``state.prev_x``.  Costs 2b
    raw gradient evaluations (both endpoints, same indices); the nominal
    count charges b.
    """
    if state.prev_x is None:
        raise InvalidStateError("recursive estimator state is missing prev_x")
    idx = np.asarray(batch, dtype=np.int64)
    if idx.size == 0:
        raise ConfigError("empty minibatch")
    g_new = component_gradients(problem, idx, x_new)
    g_old = component_gradients(problem, idx, state.prev_x)
    state.v = state.v + (g_new.mean(axis=0) - g_old.mean(axis=0))
    state.prev_x = np.array(x_new, dtype=float)
    if sfo is not None:
        sfo.add(2 * idx.size, idx.size)
    return state


def svrg_step(
    problem: ProblemSpec,
    state: EstimatorState,
    x: Vector,
    batch,
    sfo: SfoCounter | None = None,
) -> Vector:
    """Snapshot estimate of the gradient at ``x``; the snapshot is not advanced."""
    if state.anchor is None or state.anchor_grad is None:
        raise InvalidStateError("snapshot estimator state is missing the anchor pair")
    idx = np.asarray(batch, dtype=np.int64)
    if idx.size == 0:
        raise ConfigError("empty minibatch")
    g_x = component_gradients(problem, idx, x)
    g_anchor = component_gradients(problem, idx, state.anchor)
    if sfo is not None:
        sfo.add(2 * idx.size, idx.size)
    return (g_x.mean(axis=0) - g_anchor.mean(axis=0)) + state.anchor_grad
