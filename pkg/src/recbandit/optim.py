"""Full-batch L-BFGS minimizer with a strong-Wolfe line search.

The driver is single-threaded and purely deterministic: identical inputs
produce the identical iterate sequence. The oracle returns (value, gradient)
at each point; gradients are reused across the line search so each trial
step costs exactly one oracle call.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

Oracle = Callable[[np.ndarray], tuple[float, np.ndarray]]


@dataclass(frozen=True)
class LbfgsConfig:
    memory: int = 10
    grad_tol: float = 1e-6
    max_iters: int = 500
    wolfe_c1: float = 1e-4
    wolfe_c2: float = 0.9
    max_line_search_steps: int = 40

    def __post_init__(self):
        if not 0.0 < self.wolfe_c1 < self.wolfe_c2 < 1.0:
            raise ValueError("need 0 < c1 < c2 < 1")
        if self.memory < 1:
            raise ValueError("memory must be >= 1")


@dataclass
class MinimizeResult:
    x: np.ndarray
    value: float
    grad_norm: float
    iterations: int
    converged: bool
    reason: str
    trace: list[tuple[float, float]] = field(default_factory=list)

    def trace_as_csv(self) -> str:
        buf = io.StringIO()
        buf.write("iteration,value,grad_norm\n")
        for i, (v, g) in enumerate(self.trace):
            buf.write(f"{i},{v!r},{g!r}\n")
        return buf.getvalue()


def _cubic_step(a_lo, f_lo, d_lo, a_hi, f_hi, d_hi):
    """Minimizer of the cubic interpolant through two (value, slope) points."""
    d1 = d_lo + d_hi - 3.0 * (f_lo - f_hi) / (a_lo - a_hi)
    disc = d1 * d1 - d_lo * d_hi
    if disc < 0.0:
        return None
    d2 = math.copysign(math.sqrt(disc), a_hi - a_lo)
    denom = d_hi - d_lo + 2.0 * d2
    if denom == 0.0:
        return None
    return a_hi - (a_hi - a_lo) * (d_hi + d2 - d1) / denom


class _LineSearchOracle:
    """phi(alpha) = f(x + alpha d), caching the last evaluated point."""

    def __init__(self, oracle: Oracle, x: np.ndarray, direction: np.ndarray):
        self.oracle = oracle
        self.x = x
        self.d = direction
        self.evals = 0
        self.last: tuple[float, float, np.ndarray, np.ndarray] | None = None

    def __call__(self, alpha: float) -> tuple[float, float]:
        xt = self.x + alpha * self.d
        f, g = self.oracle(xt)
        g = np.asarray(g, dtype=np.float64)
        if not math.isfinite(f):
            f = math.inf
        self.evals += 1
        self.last = (alpha, f, xt, g)
        return f, float(g @ self.d)


def _zoom(phi, a_lo, f_lo, d_lo, a_hi, f_hi, d_hi, f0, d0, c1, c2, max_steps):
    for _ in range(max_steps):
        lo, hi = (a_lo, a_hi) if a_lo < a_hi else (a_hi, a_lo)
        a_j = _cubic_step(a_lo, f_lo, d_lo, a_hi, f_hi, d_hi)
        width = hi - lo
        # reject interpolants outside or hugging the bracket ends
        if a_j is None or not (lo + 0.1 * width <= a_j <= hi - 0.1 * width):
            a_j = 0.5 * (lo + hi)
        f_j, d_j = phi(a_j)
        if f_j > f0 + c1 * a_j * d0 or f_j >= f_lo:
            a_hi, f_hi, d_hi = a_j, f_j, d_j
        else:
            if abs(d_j) <= -c2 * d0:
                return a_j
            if d_j * (a_hi - a_lo) >= 0.0:
                a_hi, f_hi, d_hi = a_lo, f_lo, d_lo
            a_lo, f_lo, d_lo = a_j, f_j, d_j
        if width <= 1e-16 * max(1.0, abs(a_lo)):
            return None
    return None


def _strong_wolfe(phi, f0, d0, alpha_init, c1, c2, max_steps):
    """Bracket-then-zoom search for a step satisfying the strong Wolfe conditions."""
    a_prev, f_prev, d_prev = 0.0, f0, d0
    alpha = alpha_init
    alpha_max = 1e10
    for i in range(max_steps):
        f, d = phi(alpha)
        if f > f0 + c1 * alpha * d0 or (i > 0 and f >= f_prev):
            return _zoom(phi, a_prev, f_prev, d_prev, alpha, f, d, f0, d0, c1, c2, max_steps)
        if abs(d) <= -c2 * d0:
            return alpha
        if d >= 0.0:
            return _zoom(phi, alpha, f, d, a_prev, f_prev, d_prev, f0, d0, c1, c2, max_steps)
        a_prev, f_prev, d_prev = alpha, f, d
        alpha = min(2.0 * alpha, alpha_max)
        if alpha >= alpha_max:
            return None
    return None


def _backtrack(phi, f0, d0, alpha_init, c1, max_steps):
    """Single backtracking pass, Armijo-only; the fallback after Wolfe breakdown."""
    alpha = alpha_init
    for _ in range(max_steps):
        f, _ = phi(alpha)
        if f <= f0 + c1 * alpha * d0:
            return alpha
        alpha *= 0.5
    return None


def _two_loop(grad, s_hist, y_hist, rho_hist):
    q = grad.copy()
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
    return q


def minimize(oracle: Oracle, x0, config: LbfgsConfig | None = None) -> MinimizeResult:
    """Minimize a smooth function from x0; returns the best iterate seen.

    Terminates on the gradient infinity-norm tolerance, the iteration cap, or
    line-search breakdown (reported in ``reason`` with ``converged=False``).
    """
    cfg = config or LbfgsConfig()
    x = np.asarray(x0, dtype=np.float64).copy()
    f, g = oracle(x)
    g = np.asarray(g, dtype=np.float64)
    if not (math.isfinite(f) and np.all(np.isfinite(g))):
        raise ValueError("oracle returned a non-finite value or gradient at x0")

    s_hist: list[np.ndarray] = []
    y_hist: list[np.ndarray] = []
    rho_hist: list[float] = []

    best_f, best_x, best_g = f, x.copy(), g.copy()
    trace = [(f, float(np.max(np.abs(g))))]
    reason = "max_iterations"
    iterations = 0

    for it in range(cfg.max_iters):
        gnorm = float(np.max(np.abs(g)))
        if gnorm <= cfg.grad_tol:
            reason = "gradient_tolerance"
            break

        if s_hist:
            direction = -_two_loop(g, s_hist, y_hist, rho_hist)
        else:
            direction = -g
        d0 = float(g @ direction)
        if d0 >= 0.0:
            # stale curvature produced a non-descent direction; restart steepest
            s_hist.clear()
            y_hist.clear()
            rho_hist.clear()
            direction = -g
            d0 = float(g @ direction)

        alpha_init = 1.0 if s_hist else min(1.0, 1.0 / max(np.sum(np.abs(g)), 1e-12))
        phi = _LineSearchOracle(oracle, x, direction)
        alpha = _strong_wolfe(phi, f, d0, alpha_init, cfg.wolfe_c1, cfg.wolfe_c2,
                              cfg.max_line_search_steps)
        if alpha is not None:
            a, f_new, x_new, g_new = phi.last
            if a != alpha:
                f_new, _ = phi(alpha)
                a, f_new, x_new, g_new = phi.last
            d_new = float(g_new @ direction)
            assert f_new <= f + cfg.wolfe_c1 * alpha * d0, "Armijo condition violated"
            assert abs(d_new) <= -cfg.wolfe_c2 * d0, "curvature condition violated"
        else:
            alpha = _backtrack(phi, f, d0, 1.0, cfg.wolfe_c1, cfg.max_line_search_steps)
            if alpha is None:
                reason = "line_search_failed"
                break
            a, f_new, x_new, g_new = phi.last
            if a != alpha:
                f_new, _ = phi(alpha)
                a, f_new, x_new, g_new = phi.last

        s = x_new - x
        y = g_new - g
        sty = float(s @ y)
        if sty > 1e-10 * float(np.linalg.norm(s) * np.linalg.norm(y)):
            s_hist.append(s)
            y_hist.append(y)
            rho_hist.append(1.0 / sty)
            if len(s_hist) > cfg.memory:
                s_hist.pop(0)
                y_hist.pop(0)
                rho_hist.pop(0)

        x, f, g = x_new, f_new, g_new
        iterations = it + 1
        trace.append((f, float(np.max(np.abs(g)))))
        if f < best_f:
            best_f, best_x, best_g = f, x.copy(), g.copy()

    if reason == "max_iterations" and float(np.max(np.abs(g))) <= cfg.grad_tol:
        reason = "gradient_tolerance"

    return MinimizeResult(
        x=best_x,
        value=best_f,
        grad_norm=float(np.max(np.abs(best_g))),
        iterations=iterations,
        converged=reason == "gradient_tolerance",
        reason=reason,
        trace=trace,
    )


def finite_difference_gradient(f: Callable[[np.ndarray], float], x, step: float = 1e-5) -> np.ndarray:
    """Central-difference gradient estimate, one coordinate at a time."""
    if step <= 0:
        raise ValueError("step must be positive")
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = step
        grad[i] = (f(x + e) - f(x - e)) / (2.0 * step)
    return grad
