"""Generic solvers: limited-memory BFGS, exact quadratic solves, and a
central finite-difference gradient used as a test oracle.

Dense matrices and vectors are plain float64 numpy arrays throughout.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import Callable, NamedTuple, Optional

import numpy as np
import scipy.linalg

from .errors import DimensionMismatch, NonFiniteObjective, SingularSystem

ValueAndGrad = Callable[[np.ndarray], "tuple[float, np.ndarray]"]

_ARMIJO_C1 = 1e-4


@dataclass(frozen=True)
class MinimizeOptions:
    max_iterations: int = 100
    gradient_tolerance: float = 1e-6
    history_size: int = 10
    line_search_max_steps: int = 40

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if not self.gradient_tolerance > 0:
            raise ValueError("gradient_tolerance must be > 0")
        if self.history_size < 1:
            raise ValueError("history_size must be >= 1")
        if self.line_search_max_steps < 1:
            raise ValueError("line_search_max_steps must be >= 1")


class MinimizeResult(NamedTuple):
    x: np.ndarray
    value: float
    iterations: int


def _evaluate(objective, x):
    f, g = objective(x)
    return float(f), np.asarray(g, dtype=float).reshape(x.shape)


def _two_loop(g, s_hist, y_hist, rho_hist):
    q = g.copy()
    alphas = []
    for s, y, rho in zip(reversed(s_hist), reversed(y_hist), reversed(rho_hist)):
        a = rho * (s @ q)
        alphas.append(a)
        q -= a * y
    s, y = s_hist[-1], y_hist[-1]
    q *= (s @ y) / (y @ y)
    for (s, y, rho), a in zip(zip(s_hist, y_hist, rho_hist), reversed(alphas)):
        b = rho * (y @ q)
        q += (a - b) * s
    return -q


def _backtrack(objective, x, f, gd, d, step, max_steps):
    """Shrink ``step`` until the Armijo condition holds; None on failure.

    The trial step is the minimizer of the quadratic through f, gd and the
    rejected value, clipped to [0.1, 0.5] of the previous step.
    """
    for _ in range(max_steps):
        x_new = x + step * d
        f_new, g_new = _evaluate(objective, x_new)
        if np.isfinite(f_new):
            if f_new <= f + _ARMIJO_C1 * step * gd and np.all(np.isfinite(g_new)):
                return x_new, f_new, g_new
            curv = f_new - f - gd * step
            trial = -gd * step * step / (2.0 * curv) if curv > 0 else 0.5 * step
            step = min(max(trial, 0.1 * step), 0.5 * step)
        else:
            step *= 0.5
    return None


def lbfgs_minimize(
    objective: ValueAndGrad,
    x0,
    opts: Optional[MinimizeOptions] = None,
    callback: Optional[Callable[[np.ndarray, float], None]] = None,
) -> MinimizeResult:
    """Minimize a smooth function with L-BFGS and a backtracking line search.

    ``objective(x)`` returns ``(value, gradient)``. Accepted values never
    increase. If the quasi-Newton step cannot satisfy sufficient decrease the
    history is dropped and a steepest-descent step with halving is tried
    instead; the run stops early only when neither makes progress.
    ``callback(x, value)`` is invoked after every accepted step.
    """
    opts = opts or MinimizeOptions()
    x = np.array(x0, dtype=float).ravel()
    if not np.all(np.isfinite(x)):
        raise NonFiniteObjective("x0 has non-finite entries")
    f, g = _evaluate(objective, x)
    if not np.isfinite(f) or not np.all(np.isfinite(g)):
        raise NonFiniteObjective(f"objective is not finite at x0 (value={f})")

    s_hist: deque = deque(maxlen=opts.history_size)
    y_hist: deque = deque(maxlen=opts.history_size)
    rho_hist: deque = deque(maxlen=opts.history_size)
    iterations = 0
    while iterations < opts.max_iterations:
        gnorm = np.max(np.abs(g)) if g.size else 0.0
        if gnorm <= opts.gradient_tolerance:
            break
        accepted = None
        if s_hist:
            d = _two_loop(g, s_hist, y_hist, rho_hist)
            gd = float(g @ d)
            if gd < 0:
                accepted = _backtrack(objective, x, f, gd, d, 1.0, opts.line_search_max_steps)
        if accepted is None:
            # steepest descent, first trial is a unit-length step
            s_hist.clear()
            y_hist.clear()
            rho_hist.clear()
            d = -g
            gd = -float(g @ g)
            step = 1.0 / np.sqrt(-gd)
            accepted = _backtrack(objective, x, f, gd, d, step, 2 * opts.line_search_max_steps + 20)
            if accepted is None:
                break
        x_new, f_new, g_new = accepted
        s = x_new - x
        y = g_new - g
        sy = float(s @ y)
        if sy > 1e-12 * np.linalg.norm(s) * np.linalg.norm(y):
            s_hist.append(s)
            y_hist.append(y)
            rho_hist.append(1.0 / sy)
        x, f, g = x_new, f_new, g_new
        iterations += 1
        if callback is not None:
            callback(x, f)
    return MinimizeResult(x, f, iterations)


def solve_quadratic(H, g) -> np.ndarray:
    """Return the minimizer of 0.5 x'Hx + g'x, i.e. the solution of Hx = -g.

    Cholesky first; if H is only semidefinite, retry on H + eps*I with
    eps = 1e-10 * trace(H) / dim.
    """
    H = np.asarray(H, dtype=float)
    g = np.asarray(g, dtype=float)
    if H.ndim != 2 or H.shape[0] != H.shape[1]:
        raise DimensionMismatch(f"H must be square, got shape {H.shape}")
    if g.shape != (H.shape[0],):
        raise DimensionMismatch(f"g has shape {g.shape}, expected ({H.shape[0]},)")
    if not (np.all(np.isfinite(H)) and np.all(np.isfinite(g))):
        raise SingularSystem("non-finite entries in quadratic system")
    n = H.shape[0]
    if n == 0:
        return np.zeros(0)
    try:
        factor = scipy.linalg.cho_factor(H, lower=True, check_finite=False)
    except np.linalg.LinAlgError:
        trace = float(np.trace(H))
        eps = 1e-10 * (trace / n if trace > 0 else 1.0)
        try:
            factor = scipy.linalg.cho_factor(H + eps * np.eye(n), lower=True, check_finite=False)
        except np.linalg.LinAlgError as exc:
            raise SingularSystem("ridge-regularized system is not positive definite") from exc
    x = scipy.linalg.cho_solve(factor, -g, check_finite=False)
    if not np.all(np.isfinite(x)):
        raise SingularSystem("quadratic solve produced non-finite entries")
    return x


def finite_difference_gradient(objective: Callable[[np.ndarray], float], x, step: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of a scalar function."""
    if not step > 0:
        raise ValueError("step must be > 0")
    x = np.array(x, dtype=float)
    grad = np.empty(x.size)
    flat = x.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        fp = float(objective(x))
        flat[i] = orig - step
        fm = float(objective(x))
        flat[i] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise NonFiniteObjective(f"objective not finite near coordinate {i}")
        grad[i] = (fp - fm) / (2.0 * step)
    return grad.reshape(x.shape)


def smoothed_l1(z, eps: float = 1e-6):
    """sum(sqrt(z**2 + eps)) and its gradient; an everywhere-smooth |z|_1."""
    z = np.asarray(z, dtype=float)
    root = np.sqrt(z * z + eps)
    return float(root.sum()), z / root
