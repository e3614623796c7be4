"""Benchmark problems with exact smoothness metadata.

Every generator returns a ``ProblemInstance`` whose declared Lipschitz
constants are honest upper bounds inside the declared domain box (or
globally when no box is needed), so that a violated variance bound in the
diagnostics signals an implementation bug rather than sloppy metadata.

The planted-saddle construction splits a deterministic objective into n
components by adding per-component linear terms that sum to zero exactly,
which keeps the full gradient analytic (and exactly zero at the saddle)
while making the component variance tunable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import core
from .core import (
    ConfigError,
    DatasetError,
    Mode,
    ProblemSpec,
    Vector,
)

# max |d^2/dz^2 log(1+e^-z)| is attained at z = log(2 +- sqrt(3))
SIGMOID_D2_MAX = 1.0 / (6.0 * math.sqrt(3.0))
# max |d^3/dx^3 x^2/(1+x^2)| ~ 4.67 near |x| = 0.33; rounded up
RATIONAL_REG_D3_MAX = 5.0


@dataclass
class ProblemInstance:
    """A problem plus everything a test or experiment needs to judge it."""

    spec: ProblemSpec
    known_fstar: float | None = None
    saddle_points: list[tuple[Vector, float]] = field(default_factory=list)
    generator_params: dict = field(default_factory=dict)
    base: "ProblemInstance | None" = None


def make_quadratic(
    d: int,
    n: int,
    seed: int = 0,
    *,
    scale: float = 1.0,
    spread: float = 0.5,
    matrix: np.ndarray | None = None,
) -> ProblemInstance:
    """Finite sum of quadratics f_i(x) = 0.5 x' A_i x with mean matrix A.

    ``matrix`` fixes A directly (symmetric); otherwise A = scale * I.  Each
    A_i = A + spread * S_i with symmetric zero-mean S_i centered so the
    component mean equals A exactly.  Useful wherever a problem with
    closed-form gradients and an exactly known spectrum is wanted.
    """
    if d < 1 or n < 1:
        raise ConfigError("need d >= 1 and n >= 1")
    rng = core.seeded_rng(seed, 0)
    if matrix is None:
        A = scale * np.eye(d)
    else:
        A = np.array(matrix, dtype=float)
        if A.shape != (d, d):
            raise ConfigError(f"matrix must be ({d}, {d})")
        A = 0.5 * (A + A.T)
    comps = np.empty((n, d, d))
    if n > 1 and spread > 0:
        raw = rng.standard_normal((n, d, d))
        raw = 0.5 * (raw + np.transpose(raw, (0, 2, 1)))
        raw -= raw.mean(axis=0)
        comps = A[None, :, :] + spread * raw
    else:
        comps[:] = A[None, :, :]

    L = float(max(np.max(np.abs(np.linalg.eigvalsh(Ai))) for Ai in comps))
    eigs = np.linalg.eigvalsh(A)
    fstar = 0.0 if eigs[0] >= 0 else None

    def value(x):
        return 0.5 * float(x @ (A @ x))

    def full_grad(x):
        return A @ x

    def component_grad(i, x):
        return comps[i] @ x

    def component_grad_batch(idx, x):
        return comps[idx] @ x

    def hvp(x, vec):
        return A @ vec

    spec = ProblemSpec(
        n=n,
        d=d,
        lipschitz_grad=L,
        lipschitz_hess=0.0,
        mode=Mode.FINITE_SUM,
        value=value,
        component_grad=component_grad,
        full_grad=full_grad,
        component_grad_batch=component_grad_batch,
        hvp=hvp,
    )
    return ProblemInstance(
        spec=spec,
        known_fstar=fstar,
        generator_params={"kind": "quadratic", "d": d, "n": n, "seed": seed,
                          "scale": scale, "spread": spread},
    )


def make_separable_saddle(
    d: int,
    n: int,
    delta_plant: float,
    noise: float = 0.1,
    seed: int = 0,
    *,
    gamma4: float = 1.0,
    box_radius: float = 1.0,
) -> ProblemInstance:
    """Quartic-regularized quadratic with a strict saddle planted at the origin.

    f(x) = 0.5 x' D x + (gamma4/4) sum_j x_j^4 with
    D = diag(1, ..., 1, -delta_plant).  The origin has zero gradient and
    smallest Hessian eigenvalue exactly -delta_plant; the global minima sit
    at x = (0, ..., 0, +-sqrt(delta_plant/gamma4)) with value
    -delta_plant^2/(4 gamma4).  Components add zero-mean linear noise, so
    the full gradient stays exact.

    Inside the max-norm box of radius R = box_radius the constants
    L = max(1, delta_plant) + 3 gamma4 R^2 and rho = 6 gamma4 R sqrt(d)
    are valid upper bounds.
    """
    if d < 2:
        raise ConfigError("planted saddle needs d >= 2")
    if delta_plant <= 0:
        raise ConfigError("delta_plant must be positive")
    if n < 1:
        raise ConfigError("need n >= 1")
    if gamma4 <= 0 or box_radius <= 0:
        raise ConfigError("gamma4 and box_radius must be positive")
    if noise < 0:
        raise ConfigError("noise must be nonnegative")

    D = np.ones(d)
    D[-1] = -delta_plant
    rng = core.seeded_rng(seed, 0)
    if n > 1 and noise > 0:
        z = noise * rng.standard_normal((n, d))
        z -= z.mean(axis=0)
    else:
        z = np.zeros((n, d))

    R = box_radius
    L = max(1.0, delta_plant) + 3.0 * gamma4 * R * R
    rho = 6.0 * gamma4 * R * math.sqrt(d)

    def value(x):
        return 0.5 * float(x @ (D * x)) + 0.25 * gamma4 * float(np.sum(x**4))

    def full_grad(x):
        return D * x + gamma4 * x**3

    def component_grad(i, x):
        return D * x + gamma4 * x**3 + z[i]

    def component_grad_batch(idx, x):
        return (D * x + gamma4 * x**3)[None, :] + z[idx]

    def hvp(x, vec):
        return D * vec + 3.0 * gamma4 * (x * x) * vec

    spec = ProblemSpec(
        n=n,
        d=d,
        lipschitz_grad=L,
        lipschitz_hess=rho,
        mode=Mode.FINITE_SUM,
        value=value,
        component_grad=component_grad,
        full_grad=full_grad,
        component_grad_batch=component_grad_batch,
        hvp=hvp,
        domain_radius=R,
    )
    xmin = math.sqrt(delta_plant / gamma4)
    return ProblemInstance(
        spec=spec,
        known_fstar=-delta_plant**2 / (4.0 * gamma4),
        saddle_points=[(np.zeros(d), -delta_plant)],
        generator_params={
            "kind": "separable_saddle", "d": d, "n": n, "seed": seed,
            "delta_plant": delta_plant, "noise": noise, "gamma4": gamma4,
            "box_radius": box_radius, "min_coordinate": xmin,
        },
    )


def _logistic_instance(A: np.ndarray, y: np.ndarray, reg: float, params: dict) -> ProblemInstance:
    n, d = A.shape
    Ay = A * y[:, None]
    row_norms = np.linalg.norm(A, axis=1)
    L = float(np.max(row_norms) ** 2 / 4.0 + 2.0 * reg)
    rho = float(SIGMOID_D2_MAX * np.max(row_norms) ** 3 + RATIONAL_REG_D3_MAX * reg)

    def reg_value(x):
        return reg * float(np.sum(x * x / (1.0 + x * x)))

    def reg_grad(x):
        return reg * 2.0 * x / (1.0 + x * x) ** 2

    def reg_hess_diag(x):
        x2 = x * x
        return reg * (2.0 - 6.0 * x2) / (1.0 + x2) ** 3

    def value(x):
        return float(np.mean(np.logaddexp(0.0, -(Ay @ x)))) + reg_value(x)

    def full_grad(x):
        margins = Ay @ x
        s = 1.0 / (1.0 + np.exp(margins))  # sigmoid(-margin)
        return -(Ay.T @ s) / n + reg_grad(x)

    def component_grad(i, x):
        margin = float(Ay[i] @ x)
        return -Ay[i] / (1.0 + math.exp(margin)) + reg_grad(x)

    def component_grad_batch(idx, x):
        rows = Ay[idx]
        s = 1.0 / (1.0 + np.exp(rows @ x))
        return -rows * s[:, None] + reg_grad(x)[None, :]

    def hvp(x, vec):
        margins = Ay @ x
        s = 1.0 / (1.0 + np.exp(-margins))
        w = s * (1.0 - s)
        return A.T @ (w * (A @ vec)) / n + reg_hess_diag(x) * vec

    spec = ProblemSpec(
        n=n,
        d=d,
        lipschitz_grad=L,
        lipschitz_hess=rho,
        mode=Mode.FINITE_SUM,
        value=value,
        component_grad=component_grad,
        full_grad=full_grad,
        component_grad_batch=component_grad_batch,
        hvp=hvp,
    )
    return ProblemInstance(spec=spec, generator_params=params)


def make_nonconvex_logistic(
    n: int,
    d: int,
    reg: float = 0.01,
    seed: int = 0,
    *,
    flip_prob: float = 0.05,
    condition: float = 160.0,
    feature_scale: float = 8.0,
    row_cap: float = 3.2,
) -> ProblemInstance:
    """Logistic losses with a bounded nonconvex coordinate regularizer.

    f_i(x) = log(1 + exp(-y_i a_i' x)) + reg * sum_j x_j^2/(1 + x_j^2).

    Feature variances are log-spaced over a ratio of ``condition`` and rows
    are clipped to norm ``row_cap``, which pins the worst-row smoothness
    constant independently of n.  Labels come from a planted weight vector
    whose mass concentrates on the weak directions (so the fit spends a
    long stretch at every gradient scale rather than contracting at a
    single exponential rate), with ``flip_prob`` labels flipped to keep the
    minimizer finite.  All derivative bounds hold globally:
    L = max_i ||a_i||^2/4 + 2 reg, rho = max_i ||a_i||^3/(6 sqrt(3)) + 5 reg.
    """
    if n < 1 or d < 1:
        raise ConfigError("need n >= 1 and d >= 1")
    if reg < 0:
        raise ConfigError("reg must be nonnegative")
    if condition < 1 or feature_scale <= 0 or row_cap <= 0:
        raise ConfigError("condition >= 1 and positive feature_scale/row_cap required")
    rng = core.seeded_rng(seed, 0)
    j = np.arange(d)
    decay = j / (d - 1) if d > 1 else np.zeros(1)
    variances = feature_scale * np.exp(-math.log(condition) * decay)
    A = rng.standard_normal((n, d)) * np.sqrt(variances)[None, :]
    norms = np.linalg.norm(A, axis=1)
    clipped = norms > row_cap
    A[clipped] *= (row_cap / norms[clipped])[:, None]
    w_true = (1.0 + 0.15 * rng.standard_normal(d)) * variances**-0.75
    w_true *= 3.0 / np.linalg.norm(w_true * np.sqrt(variances))
    y = np.sign(A @ w_true + 0.2 * rng.standard_normal(n))
    y[y == 0] = 1.0
    if flip_prob > 0:
        y[rng.random(n) < flip_prob] *= -1.0
    return _logistic_instance(
        A, y, reg,
        {"kind": "nonconvex_logistic", "n": n, "d": d, "reg": reg,
         "seed": seed, "flip_prob": flip_prob, "condition": condition,
         "feature_scale": feature_scale, "row_cap": row_cap},
    )


def _hashed_uniforms(ids: np.ndarray, lane: int) -> np.ndarray:
    """Deterministic id -> U[0,1) map (splitmix64), one lane per draw."""
    with np.errstate(over="ignore"):  # uint64 wrap-around is the point
        z = ids.astype(np.uint64) + np.uint64(0x9E3779B97F4A7C15) * np.uint64(2 * lane + 1)
        for shift, mult in ((30, 0xBF58476D1CE4E5B9), (27, 0x94D049BB133111EB)):
            z = z ^ (z >> np.uint64(shift))
            z = z * np.uint64(mult)
        z = z ^ (z >> np.uint64(31))
    return (z >> np.uint64(11)).astype(np.float64) / 2**53


def _hashed_ball_noise(ids: np.ndarray, d: int, radius: float, seed: int) -> np.ndarray:
    """Uniform-in-ball noise vectors keyed by sample id (vectorized).

    Box-Muller gaussians from hashed uniforms give the isotropic direction;
    the radius is scaled by U^(1/d).  Stateless, so the same (seed, id)
    always reproduces the same noise without constructing a generator per
    id, which matters inside estimator inner loops.
    """
    with np.errstate(over="ignore"):
        ids = np.asarray(ids, dtype=np.uint64) ^ np.uint64(seed % 2**64) * np.uint64(
            0xD1342543DE82EF95
        )
    m = len(ids)
    z = np.empty((m, d))
    pairs = (d + 1) // 2
    for p in range(pairs):
        u1 = np.clip(_hashed_uniforms(ids, 3 * p), 1e-300, None)
        u2 = _hashed_uniforms(ids, 3 * p + 1)
        r = np.sqrt(-2.0 * np.log(u1))
        z[:, 2 * p] = r * np.cos(2.0 * np.pi * u2)
        if 2 * p + 1 < d:
            z[:, 2 * p + 1] = r * np.sin(2.0 * np.pi * u2)
    norms = np.linalg.norm(z, axis=1)
    norms[norms == 0] = 1.0
    scale = radius * _hashed_uniforms(ids, 2) ** (1.0 / d) / norms
    return z * scale[:, None]


def make_online_stream(base: ProblemInstance, sigma: float, seed: int = 0) -> ProblemInstance:
    """Online wrapper: component i returns grad f(x) plus bounded noise.

    The noise for sample id i is drawn uniformly from the ball of radius
    sigma keyed by (seed, i), so ||grad_i - grad|| <= sigma holds for every
    sample and the noise is exactly mean-zero in distribution.  Function
    values and Hessian-vector products stay exact (evaluation-side
    oracles); the exact full gradient is withheld, as online estimators
    must not see it.
    """
    if sigma < 0:
        raise ConfigError("sigma must be nonnegative")
    bspec = base.spec
    if bspec.full_grad is None:
        raise ConfigError("online stream needs a base with an exact gradient")
    d = bspec.d

    def component_grad(i, x):
        return bspec.full_grad(x) + _hashed_ball_noise(np.array([i]), d, sigma, seed)[0]

    def component_grad_batch(idx, x):
        return bspec.full_grad(x)[None, :] + _hashed_ball_noise(idx, d, sigma, seed)

    spec = ProblemSpec(
        n=math.inf,
        d=d,
        lipschitz_grad=bspec.lipschitz_grad,
        lipschitz_hess=bspec.lipschitz_hess,
        mode=Mode.ONLINE,
        value=bspec.value,
        component_grad=component_grad,
        full_grad=None,
        component_grad_batch=component_grad_batch,
        hvp=bspec.hvp,
        variance_bound=sigma,
        domain_radius=bspec.domain_radius,
    )
    params = dict(base.generator_params)
    params.update({"kind": "online_stream", "sigma": sigma, "noise_seed": seed,
                   "base_kind": base.generator_params.get("kind")})
    return ProblemInstance(
        spec=spec,
        known_fstar=base.known_fstar,
        saddle_points=list(base.saddle_points),
        generator_params=params,
        base=base,
    )


def load_libsvm(path, d_cap: int, reg: float = 0.1) -> ProblemInstance:
    """Parse whitespace-separated ``label idx:val`` sparse lines (1-based
    indices), materialize dense features, and wrap them as a nonconvex
    logistic instance.  Labels map to +1 (label > 0) / -1."""
    rows: list[tuple[float, dict[int, float]]] = []
    max_idx = 0
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            tokens = line.split()
            try:
                label = float(tokens[0])
            except ValueError:
                raise DatasetError(f"line {lineno}: bad label {tokens[0]!r}")
            feats: dict[int, float] = {}
            for tok in tokens[1:]:
                try:
                    idx_str, val_str = tok.split(":", 1)
                    idx = int(idx_str)
                    val = float(val_str)
                except ValueError:
                    raise DatasetError(f"line {lineno}: bad feature token {tok!r}")
                if idx < 1:
                    raise DatasetError(f"line {lineno}: feature index {idx} must be >= 1")
                feats[idx] = val
                max_idx = max(max_idx, idx)
            rows.append((label, feats))
    if not rows:
        raise DatasetError(f"{path}: no samples found")
    if max_idx > d_cap:
        raise DatasetError(
            f"{path}: feature dimension {max_idx} exceeds cap {d_cap}"
        )
    d = max(1, max_idx)
    n = len(rows)
    A = np.zeros((n, d))
    y = np.empty(n)
    for r, (label, feats) in enumerate(rows):
        y[r] = 1.0 if label > 0 else -1.0
        for idx, val in feats.items():
            A[r, idx - 1] = val
    return _logistic_instance(
        A, y, reg,
        {"kind": "libsvm", "path": str(path), "n": n, "d": d, "reg": reg},
    )
