"""Deterministic limited-memory BFGS with Armijo backtracking.

Written in-package (rather than wrapping scipy) because the stage drivers
need per-iteration stepping for the incremental-horizon schedule, a
best-iterate guarantee, and bitwise-reproducible trajectories.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class SolverError(RuntimeError):
    pass


@dataclass
class SolverConfig:
    history: int = 10          # curvature pairs kept
    step_scale: float = 1.0    # initial line-search step ("learning rate 1")
    c1: float = 1e-4           # Armijo sufficient-decrease constant
    backtrack: float = 0.5
    max_ls: int = 20           # max function evaluations per line search
    grad_tol: float = 1e-10    # infinity-norm gradient tolerance
    rel_tol: float = 0.0       # relative loss-decrease tolerance (0 disables)
    max_evals: int = 100000

    def __post_init__(self):
        if min(self.step_scale, self.c1, self.backtrack, self.grad_tol) <= 0:
            raise SolverError("solver tolerances must be positive")
        if self.history < 1 or self.max_ls < 1:
            raise SolverError("history and max_ls must be at least 1")


@dataclass
class MinimizeResult:
    x: np.ndarray
    fun: float
    iterations: int
    status: str  # converged | max_iter | line_search_failed | nonfinite


class LbfgsSolver:
    """Stepwise L-BFGS: call step() repeatedly; best iterate is tracked."""

    def __init__(self, objective, x0, config: SolverConfig | None = None):
        self.objective = objective
        self.config = config or SolverConfig()
        self.x = np.array(x0, dtype=np.float64).reshape(-1)
        f, g = objective(self.x)
        self.f = float(f)
        self.g = np.asarray(g, dtype=np.float64).reshape(-1)
        if not np.isfinite(self.f) or not np.all(np.isfinite(self.g)):
            raise SolverError("objective is not finite at the initial point")
        self.best_x = self.x.copy()
        self.best_f = self.f
        self.n_iter = 0
        self.n_evals = 1
        self.status = "running"
        self._s: list[np.ndarray] = []
        self._y: list[np.ndarray] = []

    # -- two-loop recursion -------------------------------------------------
    def _direction(self) -> np.ndarray:
        q = self.g.copy()
        alphas = []
        for s, y in zip(reversed(self._s), reversed(self._y)):
            rho = 1.0 / float(y @ s)
            a = rho * float(s @ q)
            alphas.append((a, rho, s, y))
            q -= a * y
        if self._s:
            s, y = self._s[-1], self._y[-1]
            q *= float(s @ y) / float(y @ y)
        for a, rho, s, y in reversed(alphas):
            b = rho * float(y @ q)
            q += (a - b) * s
        return -q

    def step(self) -> str:
        """One outer iteration. Returns the solver status afterwards."""
        if self.status != "running":
            return self.status
        if np.max(np.abs(self.g)) < self.config.grad_tol:
            self.status = "converged"
            return self.status

        d = self._direction()
        slope = float(self.g @ d)
        if not np.isfinite(slope) or slope >= 0.0:
            # curvature information went bad; restart from steepest descent
            self._s.clear()
            self._y.clear()
            d = -self.g
            slope = float(self.g @ d)

        t = self.config.step_scale
        accepted = None  # (t, f, x, g)
        evals = 0

        def armijo(t_try):
            nonlocal evals
            x_try = self.x + t_try * d
            f_try, g_try = self.objective(x_try)
            self.n_evals += 1
            evals += 1
            ok = np.isfinite(f_try) and f_try <= self.f + self.config.c1 * t_try * slope
            return ok, float(f_try), x_try, np.asarray(g_try, dtype=np.float64).reshape(-1)

        ok, f_try, x_try, g_try = armijo(t)
        if ok:
            # unit step passes: expand geometrically while Armijo holds and
            # the value keeps strictly improving (cures tiny stale directions)
            accepted = (t, f_try, x_try, g_try)
            while evals < self.config.max_ls and self.n_evals < self.config.max_evals:
                t2 = t / self.config.backtrack
                ok2, f2, x2, g2 = armijo(t2)
                if ok2 and f2 < accepted[1]:
                    t = t2
                    accepted = (t2, f2, x2, g2)
                else:
                    break
        else:
            while evals < self.config.max_ls and self.n_evals < self.config.max_evals:
                t *= self.config.backtrack
                ok, f_try, x_try, g_try = armijo(t)
                if ok:
                    accepted = (t, f_try, x_try, g_try)
                    break
        if accepted is None:
            self.status = "line_search_failed"
            return self.status
        _, f_new, x_new, g_new = accepted

        s_vec = x_new - self.x
        y_vec = g_new - self.g
        sy = float(s_vec @ y_vec)
        if np.isfinite(sy) and sy > 1e-12 * float(np.linalg.norm(s_vec)) * float(
                np.linalg.norm(y_vec) + 1e-300):
            self._s.append(s_vec)
            self._y.append(y_vec)
            if len(self._s) > self.config.history:
                self._s.pop(0)
                self._y.pop(0)

        prev_f = self.f
        self.x, self.f, self.g = x_new, f_new, g_new
        self.n_iter += 1
        if self.f < self.best_f:
            self.best_f = self.f
            self.best_x = self.x.copy()
        if np.max(np.abs(self.g)) < self.config.grad_tol:
            self.status = "converged"
        elif self.config.rel_tol > 0.0 and prev_f != 0.0 and \
                (prev_f - self.f) <= self.config.rel_tol * abs(prev_f):
            self.status = "converged"
        return self.status


def minimize(objective, x0, config: SolverConfig | None = None,
             max_iter: int = 100) -> MinimizeResult:
    """Run L-BFGS for up to max_iter iterations; returns the best iterate."""
    solver = LbfgsSolver(objective, x0, config)
    status = solver.status
    for _ in range(max_iter):
        status = solver.step()
        if status != "running":
            break
    if status == "running":
        status = "max_iter"
    return MinimizeResult(x=solver.best_x, fun=solver.best_f,
                          iterations=solver.n_iter, status=status)


def check_gradient(objective, x, eps: float = 1e-6, floor_ratio: float = 1e-3) -> float:
    """Max relative error between the objective's gradient and central
    finite differences, per coordinate.

    Coordinates are compared against max(|analytic|, |numeric|, floor) with
    floor = floor_ratio * gradient infinity norm: entries orders of magnitude
    below the gradient scale sit under the finite-difference cancellation
    noise (~machine eps * |f| / eps) and cannot be resolved tighter.
    """
    x = np.array(x, dtype=np.float64).reshape(-1)
    _, g = objective(x)
    g = np.asarray(g, dtype=np.float64).reshape(-1)
    nums = np.empty_like(g)
    for i in range(x.size):
        xp = x.copy()
        xp[i] += eps
        fp, _ = objective(xp)
        xp[i] -= 2 * eps
        fm, _ = objective(xp)
        nums[i] = (fp - fm) / (2 * eps)
    floor = max(1e-8, floor_ratio * max(np.max(np.abs(g)), np.max(np.abs(nums)), 1e-12))
    denom = np.maximum(np.maximum(np.abs(g), np.abs(nums)), floor)
    return float(np.max(np.abs(g - nums) / denom))
