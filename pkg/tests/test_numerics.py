import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from predenc.errors import DimensionMismatch, NonFiniteObjective, SingularSystem
from predenc.numerics import (
    MinimizeOptions,
    finite_difference_gradient,
    lbfgs_minimize,
    smoothed_l1,
    solve_quadratic,
)

finite = st.floats(-10, 10, allow_nan=False)


def quadratic(H, g):
    def f(x):
        return 0.5 * x @ H @ x + g @ x, H @ x + g
    return f


def rosenbrock(x):
    a, b = x
    value = (1 - a) ** 2 + 100 * (b - a * a) ** 2
    grad = np.array([-2 * (1 - a) - 400 * a * (b - a * a), 200 * (b - a * a)])
    return value, grad


def random_spd(rng, n, cond=10.0):
    Q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    return Q @ np.diag(np.linspace(1.0, cond, n)) @ Q.T


class TestOptions:
    @pytest.mark.parametrize("kw", [
        {"max_iterations": 0}, {"gradient_tolerance": 0.0}, {"history_size": 0}, {"line_search_max_steps": 0},
    ])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            MinimizeOptions(**kw)


class TestLbfgs:
    def test_norm_squared(self):
        res = lbfgs_minimize(lambda x: (x @ x, 2 * x), [3.0, 4.0], MinimizeOptions(gradient_tolerance=1e-12))
        np.testing.assert_allclose(res.x, 0.0, atol=1e-10)
        assert res.value <= 1e-10

    def test_shifted_ill_conditioned(self):
        A = np.diag([1.0, 100.0])
        f = lambda x: ((x - 1) @ A @ (x - 1), 2 * A @ (x - 1))  # noqa: E731
        res = lbfgs_minimize(f, [0.0, 0.0], MinimizeOptions(gradient_tolerance=1e-10))
        np.testing.assert_allclose(res.x, [1.0, 1.0], atol=1e-6)

    def test_rosenbrock_against_gradient_descent(self):
        res = lbfgs_minimize(rosenbrock, [-1.2, 1.0], MinimizeOptions(max_iterations=200, gradient_tolerance=1e-10))
        assert res.iterations <= 200
        # oracle: plain gradient descent with a fixed safe step, run to convergence
        x = np.array([-1.2, 1.0])
        for _ in range(400_000):
            x = x - 1.5e-3 * rosenbrock(x)[1]
        np.testing.assert_allclose(x, [1.0, 1.0], atol=1e-6)
        np.testing.assert_allclose(res.x, x, atol=1e-5)

    def test_non_finite_start(self):
        with pytest.raises(NonFiniteObjective):
            lbfgs_minimize(lambda x: (np.nan, x), [1.0])
        with pytest.raises(NonFiniteObjective):
            lbfgs_minimize(lambda x: (x @ x, 2 * x), [np.inf])

    def test_already_optimal(self):
        res = lbfgs_minimize(lambda x: (x @ x, 2 * x), [0.0, 0.0])
        assert res.iterations == 0 and res.value == 0.0

    def test_bad_gradient_does_not_increase(self):
        # gradient points uphill: no step is accepted, x0 comes back
        f = lambda x: (float(x @ x), -2 * x)  # noqa: E731
        res = lbfgs_minimize(f, [1.0, -2.0])
        assert res.value <= 5.0
        np.testing.assert_array_equal(res.x, [1.0, -2.0])

    def test_nan_region_is_backed_out_of(self):
        # objective undefined for x < 0; unit steps from x0 land there
        def f(x):
            if x[0] < 0:
                return np.nan, np.array([np.nan])
            return float((x[0] - 0.01) ** 2), np.array([2 * (x[0] - 0.01)])
        res = lbfgs_minimize(f, [5.0], MinimizeOptions(gradient_tolerance=1e-9))
        assert abs(res.x[0] - 0.01) < 1e-6

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 10_000), st.integers(1, 6))
    def test_monotone_accepted_values(self, seed, n):
        rng = np.random.default_rng(seed)
        c = rng.standard_normal(n)

        def f(x):  # smooth non-quadratic
            r = x - c
            return float(np.sum(np.log(np.cosh(r))) + 0.1 * r @ r), np.tanh(r) + 0.2 * r

        values = []
        x0 = rng.standard_normal(n) * 3
        f0 = f(x0)[0]
        res = lbfgs_minimize(f, x0, MinimizeOptions(history_size=3), callback=lambda x, v: values.append(v))
        seq = [f0] + values
        assert all(b <= a for a, b in zip(seq, seq[1:]))
        assert res.value <= f0

    def test_callback_and_budget(self):
        H = random_spd(np.random.default_rng(0), 20, 1e4)
        seen = []
        res = lbfgs_minimize(quadratic(H, np.ones(20)), np.zeros(20), MinimizeOptions(max_iterations=3),
                             callback=lambda x, v: seen.append(v))
        assert res.iterations == 3 == len(seen)
        assert seen[-1] == res.value


class TestSolveQuadratic:
    def test_identity(self):
        np.testing.assert_allclose(solve_quadratic(np.eye(2), [-2.0, -4.0]), [2.0, 4.0])

    def test_zero_gradient(self):
        np.testing.assert_array_equal(solve_quadratic(2 * np.eye(2), [0.0, 0.0]), [0.0, 0.0])

    def test_matches_lbfgs(self):
        rng = np.random.default_rng(1)
        H = random_spd(rng, 8)
        g = rng.standard_normal(8)
        x = solve_quadratic(H, g)
        res = lbfgs_minimize(quadratic(H, g), np.zeros(8), MinimizeOptions(max_iterations=500, gradient_tolerance=1e-12))
        np.testing.assert_allclose(x, res.x, atol=1e-6)

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 10_000), st.integers(1, 12))
    def test_residual_small(self, seed, n):
        rng = np.random.default_rng(seed)
        H = random_spd(rng, n)
        g = rng.standard_normal(n) * 5
        x = solve_quadratic(H, g)
        assert np.max(np.abs(H @ x + g)) <= 1e-8 * (1 + np.max(np.abs(g)))

    def test_semidefinite_uses_ridge(self):
        v = np.array([1.0, 2.0, 2.0])
        H = np.outer(v, v)            # rank one
        g = -v                         # consistent: Hx = v has solutions
        x = solve_quadratic(H, g)
        assert np.all(np.isfinite(x))
        np.testing.assert_allclose(H @ x, v, atol=1e-6)

    def test_zero_matrix_ridge(self):
        x = solve_quadratic(np.zeros((2, 2)), np.array([1e-12, 0.0]))
        assert np.all(np.isfinite(x))

    def test_errors(self):
        with pytest.raises(DimensionMismatch):
            solve_quadratic(np.eye(2), np.ones(3))
        with pytest.raises(DimensionMismatch):
            solve_quadratic(np.ones((2, 3)), np.ones(2))
        with pytest.raises(SingularSystem):
            solve_quadratic(np.array([[np.nan, 0], [0, 1]]), np.ones(2))
        with pytest.raises(SingularSystem):
            solve_quadratic(-np.eye(2), np.ones(2))


class TestFiniteDifference:
    def test_quadratic_form(self):
        np.testing.assert_allclose(finite_difference_gradient(lambda x: x @ x, [1.0, 2.0]), [2.0, 4.0], atol=1e-8)

    def test_constant(self):
        np.testing.assert_array_equal(finite_difference_gradient(lambda x: 3.0, np.ones(4)), np.zeros(4))

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 10_000), st.integers(1, 6))
    def test_exact_on_quadratics(self, seed, n):
        rng = np.random.default_rng(seed)
        A = rng.standard_normal((n, n))
        H = A + A.T
        g = rng.standard_normal(n)
        x = rng.standard_normal(n)
        fd = finite_difference_gradient(lambda v: 0.5 * v @ H @ v + g @ v, x)
        np.testing.assert_allclose(fd, H @ x + g, atol=1e-7)

    def test_input_not_mutated(self):
        x = np.array([1.0, 2.0])
        finite_difference_gradient(lambda v: v @ v, x)
        np.testing.assert_array_equal(x, [1.0, 2.0])

    def test_errors(self):
        with pytest.raises(ValueError):
            finite_difference_gradient(lambda v: 0.0, [1.0], step=0.0)
        with pytest.raises(NonFiniteObjective), np.errstate(invalid="ignore"):
            finite_difference_gradient(lambda v: np.log(v[0]), [1e-6])


class TestSmoothedL1:
    def test_origin(self):
        value, grad = smoothed_l1(np.zeros(3), 1e-6)
        assert value == pytest.approx(3e-3)
        np.testing.assert_array_equal(grad, 0.0)

    def test_sign_limit(self):
        value, grad = smoothed_l1(np.array([3.0, -4.0]), 1e-14)
        assert value == pytest.approx(7.0, abs=1e-12)
        np.testing.assert_allclose(grad, [1.0, -1.0], atol=1e-12)

    @settings(max_examples=50, deadline=None)
    @given(arrays(float, st.integers(1, 8), elements=finite), st.floats(1e-6, 1e-2))
    def test_gradient_and_bounds(self, z, eps):
        value, grad = smoothed_l1(z, eps)
        fd = finite_difference_gradient(lambda v: smoothed_l1(v, eps)[0], z, step=1e-7)
        np.testing.assert_allclose(grad, fd, atol=1e-6)
        l1 = np.abs(z).sum()
        assert l1 <= value <= l1 + z.size * np.sqrt(eps) + 1e-12

    @given(arrays(float, 4, elements=finite))
    def test_decreases_to_l1(self, z):
        vals = [smoothed_l1(z, e)[0] for e in (1e-1, 1e-3, 1e-6, 1e-9)]
        assert all(b <= a for a, b in zip(vals, vals[1:]))
        assert vals[-1] - np.abs(z).sum() <= 4 * np.sqrt(1e-9) + 1e-12
