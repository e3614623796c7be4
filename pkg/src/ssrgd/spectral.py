"""Second-order stationarity certification.

A point x passes when its measured gradient norm is at most eps and the
smallest Hessian eigenvalue estimate (plus the estimator's slack) is at
least -delta.  For small dimensions the Hessian is assembled column by
column from Hessian-vector products and solved densely (zero slack); larger
problems fall back to shifted power iteration on L*I - H, which never needs
the matrix itself.

Certification lives outside the optimizer loop by design: the optimizer
escapes saddle points without any curvature search, and these routines only
judge the result.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import core, estimators
from .core import ConfigError, Mode, ProblemSpec, UnsupportedOracleError, Vector

DENSE_CAP = 200
# multiplies the random-start power-method tail bound (0.5 log d + 3)/iters;
# deliberately conservative, see lambda_min_power
POWER_SLACK_CONST = 2.0


@dataclass
class Certificate:
    grad_norm: float
    lambda_min_est: float
    lambda_min_ci: float
    is_fosp: bool
    is_sosp: bool
    method: str  # "dense" | "shifted_power"

    def to_dict(self) -> dict:
        return {
            "grad_norm": self.grad_norm,
            "lambda_min_est": self.lambda_min_est,
            "lambda_min_ci": self.lambda_min_ci,
            "is_fosp": self.is_fosp,
            "is_sosp": self.is_sosp,
            "method": self.method,
        }


def assemble_hessian(problem: ProblemSpec, x: Vector) -> np.ndarray:
    """Build the (symmetrized) Hessian from d Hessian-vector products."""
    if problem.hvp is None:
        raise UnsupportedOracleError("certification needs a Hessian-vector oracle")
    d = problem.d
    H = np.empty((d, d))
    e = np.zeros(d)
    for j in range(d):
        e[j] = 1.0
        H[:, j] = problem.hvp(x, e)
        e[j] = 0.0
    return 0.5 * (H + H.T)


def lambda_min_dense(problem: ProblemSpec, x: Vector, dense_cap: int = DENSE_CAP) -> float:
    """Exact smallest eigenvalue of the assembled Hessian (small d only)."""
    if problem.d > dense_cap:
        raise ConfigError(
            f"d={problem.d} exceeds the dense cap {dense_cap}; use lambda_min_power"
        )
    return float(np.linalg.eigvalsh(assemble_hessian(problem, x))[0])


def lambda_min_power(
    problem: ProblemSpec,
    x: Vector,
    spectral_bound: float | None = None,
    iters: int = 800,
    rng: np.random.Generator | None = None,
) -> tuple[float, float]:
    """Smallest-eigenvalue estimate via power iteration on L*I - H.

    The shift makes the operator positive semidefinite, so its top
    eigenvalue is L - lambda_min and the Rayleigh quotient only ever
    under-shoots it; the returned estimate therefore upper-bounds the true
    lambda_min, and ``slack`` bounds the gap via the standard random-start
    tail: after k steps the relative error is below
    (0.5 log d + log(1/zeta))/k with probability 1 - zeta.
    """
    if problem.hvp is None:
        raise UnsupportedOracleError("power iteration needs a Hessian-vector oracle")
    L = problem.lipschitz_grad if spectral_bound is None else float(spectral_bound)
    if L <= 0:
        raise ConfigError("spectral bound must be positive")
    if iters < 1:
        raise ConfigError("need at least one iteration")
    if rng is None:
        rng = core.seeded_rng(0, 17)
    d = problem.d
    q = rng.standard_normal(d)
    q /= np.linalg.norm(q)
    for _ in range(iters):
        z = L * q - problem.hvp(x, q)
        nz = float(np.linalg.norm(z))
        if nz == 0.0:
            break  # H == L*I on this vector; Rayleigh below settles it
        q = z / nz
    rayleigh = float(q @ (L * q - problem.hvp(x, q)))
    slack = POWER_SLACK_CONST * max(rayleigh, 1e-12) * (0.5 * math.log(max(d, 2)) + 3.0) / iters
    return L - rayleigh, slack


def certify(
    problem: ProblemSpec,
    x: Vector,
    eps: float,
    delta: float,
    *,
    rng: np.random.Generator | None = None,
    dense_cap: int = DENSE_CAP,
    power_iters: int = 800,
    large_batch: int | None = None,
) -> Certificate:
    """Populate a second-order certificate for the point x.

    Finite-sum problems measure the exact gradient; online problems use a
    large-batch estimate (defaulting to 4 sigma^2/eps^2 samples).  The
    eigenvalue method is dense below ``dense_cap`` dimensions and shifted
    power iteration beyond it.
    """
    if problem.mode is Mode.ONLINE:
        if rng is None:
            rng = core.seeded_rng(0, 29)
        B = large_batch
        if B is None:
            sigma = problem.variance_bound
            B = max(1, math.ceil(4.0 * sigma**2 / max(eps, 1e-12) ** 2))
        g = estimators.large_batch_gradient(problem, x, B, rng)
    else:
        g = estimators.full_gradient(problem, x)
    grad_norm = float(np.linalg.norm(g))
    is_fosp = grad_norm <= eps
    if problem.d <= dense_cap:
        lam = lambda_min_dense(problem, x, dense_cap)
        slack = 0.0
        method = "dense"
    else:
        lam, slack = lambda_min_power(problem, x, iters=power_iters, rng=rng)
        method = "shifted_power"
    return Certificate(
        grad_norm=grad_norm,
        lambda_min_est=lam,
        lambda_min_ci=slack,
        is_fosp=is_fosp,
        is_sosp=bool(is_fosp and lam + slack >= -delta),
        method=method,
    )
