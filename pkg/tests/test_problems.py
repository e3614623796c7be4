import math

import numpy as np
import pytest

import ssrgd
from ssrgd import core, estimators
from ssrgd.core import ConfigError, DatasetError
from ssrgd.problems import (
    load_libsvm,
    make_nonconvex_logistic,
    make_online_stream,
    make_quadratic,
    make_separable_saddle,
)
from ssrgd.spectral import assemble_hessian, lambda_min_dense


def fd_gradient_check(spec, x, n_dirs=20, h=1e-6, rtol=1e-5, rng=None):
    """Central finite differences of the value oracle vs the gradient oracle."""
    rng = rng or np.random.default_rng(0)
    g = spec.full_grad(x)
    for _ in range(n_dirs):
        u = rng.standard_normal(spec.d)
        u /= np.linalg.norm(u)
        fd = (spec.value(x + h * u) - spec.value(x - h * u)) / (2 * h)
        assert fd == pytest.approx(float(g @ u), rel=rtol, abs=1e-7)


def fd_hvp_check(spec, x, n_dirs=10, h=1e-5, rtol=1e-4, rng=None):
    rng = rng or np.random.default_rng(1)
    for _ in range(n_dirs):
        u = rng.standard_normal(spec.d)
        u /= np.linalg.norm(u)
        hv = spec.hvp(x, u)
        fd = (spec.full_grad(x + h * u) - spec.full_grad(x - h * u)) / (2 * h)
        assert np.linalg.norm(fd - hv) <= rtol * max(1.0, np.linalg.norm(hv))


def lipschitz_ratio_check(spec, radius, pairs=10_000, seed=0):
    """Sampled-pair component gradient ratios never exceed the declared L."""
    rng = np.random.default_rng(seed)
    n = int(spec.n)
    box = radius if radius is not None else 2.0
    xs = rng.uniform(-box, box, size=(pairs, spec.d))
    ys = rng.uniform(-box, box, size=(pairs, spec.d))
    idx = rng.integers(0, n, size=pairs)
    worst = 0.0
    for i in range(pairs):
        gx = spec.component_grad(int(idx[i]), xs[i])
        gy = spec.component_grad(int(idx[i]), ys[i])
        denom = np.linalg.norm(xs[i] - ys[i])
        if denom > 1e-12:
            worst = max(worst, float(np.linalg.norm(gx - gy) / denom))
    assert worst <= spec.lipschitz_grad * (1 + 1e-12), (worst, spec.lipschitz_grad)


class TestSeparableSaddle:
    def test_saddle_construction(self):
        inst = make_separable_saddle(d=5, n=12, delta_plant=0.4, noise=0.2, seed=3)
        x0, lam = inst.saddle_points[0]
        assert np.linalg.norm(inst.spec.full_grad(x0)) <= 1e-10
        assert lambda_min_dense(inst.spec, x0) == pytest.approx(-0.4, abs=1e-8)
        assert lam == -0.4

    def test_components_average_exactly(self):
        inst = make_separable_saddle(d=4, n=9, delta_plant=0.3, noise=0.5, seed=1)
        rng = np.random.default_rng(2)
        for _ in range(5):
            x = rng.uniform(-1, 1, size=4)
            mean_g = np.mean(
                [inst.spec.component_grad(i, x) for i in range(9)], axis=0
            )
            assert np.linalg.norm(mean_g - inst.spec.full_grad(x)) < 1e-12

    def test_global_minima_d2(self):
        # f(x) = (x1^2 - 0.5 x2^2)/2 + (x1^4 + x2^4)/4: minima (0, +-sqrt(.5))
        inst = make_separable_saddle(d=2, n=4, delta_plant=0.5, noise=0.0, seed=0)
        spec = inst.spec
        assert inst.known_fstar == pytest.approx(-0.0625, abs=1e-15)
        xm = np.array([0.0, math.sqrt(0.5)])
        assert spec.value(xm) == pytest.approx(-0.0625, abs=1e-12)
        assert np.linalg.norm(spec.full_grad(xm)) < 1e-12
        # coarse grid search: nothing beats the closed-form minimum
        grid = np.linspace(-1.0, 1.0, 81)
        best = min(
            spec.value(np.array([a, b])) for a in grid for b in grid
        )
        assert best >= -0.0625 - 1e-9

    def test_metadata_valid(self):
        inst = make_separable_saddle(d=3, n=6, delta_plant=0.3, noise=0.3, seed=5)
        fd_gradient_check(inst.spec, np.array([0.3, -0.5, 0.7]))
        fd_hvp_check(inst.spec, np.array([-0.2, 0.4, 0.1]))
        lipschitz_ratio_check(inst.spec, inst.spec.domain_radius)

    def test_rejects_nonpositive_plant(self):
        with pytest.raises(ConfigError):
            make_separable_saddle(d=3, n=4, delta_plant=0.0)
        with pytest.raises(ConfigError):
            make_separable_saddle(d=3, n=4, delta_plant=-0.1)

    def test_rejects_d1(self):
        with pytest.raises(ConfigError):
            make_separable_saddle(d=1, n=4, delta_plant=0.3)


class TestNonconvexLogistic:
    def test_value_at_origin(self):
        inst = make_nonconvex_logistic(n=30, d=6, reg=0.1, seed=0)
        assert inst.spec.value(np.zeros(6)) == pytest.approx(math.log(2.0), rel=1e-12)

    def test_convex_case_gradient(self):
        inst = make_nonconvex_logistic(n=40, d=8, reg=0.0, seed=1)
        rng = np.random.default_rng(3)
        fd_gradient_check(inst.spec, rng.standard_normal(8), rng=rng)

    def test_gradient_fd_random_instance(self):
        inst = make_nonconvex_logistic(n=50, d=10, reg=0.1, seed=2)
        rng = np.random.default_rng(4)
        for _ in range(5):
            fd_gradient_check(inst.spec, rng.standard_normal(10), rng=rng)

    def test_hvp_fd(self):
        inst = make_nonconvex_logistic(n=30, d=7, reg=0.2, seed=3)
        rng = np.random.default_rng(5)
        fd_hvp_check(inst.spec, rng.standard_normal(7), rng=rng)

    def test_component_mean_is_full(self):
        inst = make_nonconvex_logistic(n=25, d=5, reg=0.1, seed=4)
        x = np.linspace(-1, 1, 5)
        mean_g = np.mean(
            [inst.spec.component_grad(i, x) for i in range(25)], axis=0
        )
        assert np.linalg.norm(mean_g - inst.spec.full_grad(x)) < 1e-10

    def test_batch_oracle_matches_loop(self):
        inst = make_nonconvex_logistic(n=20, d=4, reg=0.1, seed=5)
        x = np.array([0.5, -1.0, 0.2, 0.9])
        idx = np.array([3, 3, 7, 15])
        batch = inst.spec.component_grad_batch(idx, x)
        loop = np.stack([inst.spec.component_grad(int(i), x) for i in idx])
        assert np.allclose(batch, loop, atol=1e-14)

    def test_declared_L_holds(self):
        inst = make_nonconvex_logistic(n=40, d=6, reg=0.1, seed=6)
        lipschitz_ratio_check(inst.spec, 3.0)


class TestOnlineStream:
    def test_sigma_zero_deterministic(self):
        base = make_quadratic(d=4, n=3, seed=0)
        inst = make_online_stream(base, 0.0)
        x = np.arange(4.0)
        for i in (0, 5, 99):
            assert np.array_equal(inst.spec.component_grad(i, x), base.spec.full_grad(x))

    def test_noise_norm_bounded(self):
        base = make_quadratic(d=5, n=3, seed=1)
        inst = make_online_stream(base, 0.7, seed=2)
        x = np.ones(5)
        g = base.spec.full_grad(x)
        for i in range(500):
            noise = inst.spec.component_grad(i, x) - g
            assert np.linalg.norm(noise) <= 0.7 + 1e-12

    def test_mean_concentrates(self):
        base = make_quadratic(d=4, n=3, seed=2)
        inst = make_online_stream(base, 1.0, seed=3)
        x = 0.5 * np.ones(4)
        g = base.spec.full_grad(x)
        N = 100_000
        grads = inst.spec.component_grad_batch(np.arange(N), x)
        err = np.linalg.norm(grads.mean(axis=0) - g)
        assert err <= 3.0 / math.sqrt(N)

    def test_mode_and_metadata(self):
        base = make_quadratic(d=3, n=2, seed=3)
        inst = make_online_stream(base, 0.5)
        assert inst.spec.mode is core.Mode.ONLINE
        assert math.isinf(inst.spec.n)
        assert inst.spec.full_grad is None
        assert inst.spec.variance_bound == 0.5
        assert inst.base is base


class TestLibsvm(object):
    def test_hand_written_file(self, tmp_path):
        p = tmp_path / "tiny.svm"
        p.write_text("1 1:0.5 3:2.0\n-1 2:1.5\n1 1:-1.0 2:0.25 3:0.75\n")
        inst = load_libsvm(p, d_cap=3)
        assert inst.spec.n == 3 and inst.spec.d == 3
        assert inst.spec.value(np.zeros(3)) == pytest.approx(math.log(2.0), rel=1e-12)
        # hand transcription oracle: grad at 0 is -mean(y_i a_i)/2
        ys = np.array([1.0, -1.0, 1.0])
        feats = np.array([[0.5, 0.0, 2.0], [0.0, 1.5, 0.0], [-1.0, 0.25, 0.75]])
        expected = -np.mean(ys[:, None] * feats, axis=0) / 2.0
        assert np.allclose(inst.spec.full_grad(np.zeros(3)), expected, atol=1e-12)

    def test_single_line_example(self, tmp_path):
        # "1 1:0.5 3:2.0" with d_cap=3 -> y=1, a=(0.5, 0, 2.0)
        p = tmp_path / "one.svm"
        p.write_text("1 1:0.5 3:2.0\n")
        inst = load_libsvm(p, d_cap=3)
        assert inst.spec.d == 3 and inst.spec.n == 1
        g = inst.spec.full_grad(np.zeros(3))
        assert np.allclose(g, -np.array([0.5, 0.0, 2.0]) / 2.0, atol=1e-12)

    def test_malformed_line_number(self, tmp_path):
        p = tmp_path / "bad.svm"
        p.write_text("1 1:0.5\n-1 2:oops\n")
        with pytest.raises(DatasetError, match="line 2"):
            load_libsvm(p, d_cap=5)

    def test_empty_file(self, tmp_path):
        p = tmp_path / "empty.svm"
        p.write_text("")
        with pytest.raises(DatasetError, match="no samples"):
            load_libsvm(p, d_cap=5)

    def test_dim_cap(self, tmp_path):
        p = tmp_path / "wide.svm"
        p.write_text("1 10:1.0\n")
        with pytest.raises(DatasetError, match="exceeds cap"):
            load_libsvm(p, d_cap=5)


class TestQuadratic:
    def test_components_centered(self):
        inst = make_quadratic(d=3, n=7, seed=9, spread=0.8)
        x = np.array([1.0, -2.0, 0.5])
        mean_g = np.mean([inst.spec.component_grad(i, x) for i in range(7)], axis=0)
        assert np.linalg.norm(mean_g - inst.spec.full_grad(x)) < 1e-12

    def test_known_fstar_psd(self):
        inst = make_quadratic(d=3, n=2, seed=0, spread=0.0)
        assert inst.known_fstar == 0.0

    def test_hessian_assembly(self):
        M = np.array([[2.0, 0.3], [0.3, 1.0]])
        inst = make_quadratic(d=2, n=1, seed=0, matrix=M, spread=0.0)
        H = assemble_hessian(inst.spec, np.zeros(2))
        assert np.allclose(H, M, atol=1e-15)
