"""Deterministic constrained-optimization engine shared by the DR and
pricing problems.

Augmented-Lagrangian outer loop with projected quasi-Newton (L-BFGS-B)
inner solves on the box.  Equalities use the classical multiplier update;
inequalities g(x) <= 0 use the Rockafellar shifted-penalty form, so the
inner objective stays continuously differentiable.  Every start point is
solved and the best feasible result wins; everything is deterministic for
fixed inputs.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import sparse
from scipy.optimize import minimize

Vector = np.ndarray
ValueGrad = Callable[[np.ndarray], tuple[float, np.ndarray]]
ResidualJac = Callable[[np.ndarray], tuple[np.ndarray, np.ndarray]]


def _dense(j) -> np.ndarray:
    return j.toarray() if sparse.issparse(j) else np.asarray(j, dtype=float)


@dataclass
class NlpProblem:
    n_vars: int
    bounds: np.ndarray                     # (n_vars, 2)
    objective: ValueGrad                   # returns (f, grad)
    eq: ResidualJac | None                 # h(x) = 0, returns (h, Jh)
    ineq: ResidualJac | None               # g(x) <= 0, returns (g, Jg)
    starts: list[np.ndarray]
    # optional fast paths: residual-only and J(x)^T w evaluations
    eq_resid: Callable[[np.ndarray], np.ndarray] | None = None
    eq_vjp: Callable[[np.ndarray, np.ndarray], np.ndarray] | None = None
    ineq_resid: Callable[[np.ndarray], np.ndarray] | None = None
    ineq_vjp: Callable[[np.ndarray, np.ndarray], np.ndarray] | None = None
    var_scale: np.ndarray | None = None    # per-variable magnitudes for conditioning

    def __post_init__(self):
        self.bounds = np.asarray(self.bounds, dtype=float).reshape(self.n_vars, 2)
        if np.any(self.bounds[:, 0] > self.bounds[:, 1]):
            raise ValueError("variable bounds must satisfy lo <= hi")
        self.starts = [np.asarray(s, dtype=float) for s in self.starts]
        for s in self.starts:
            if len(s) != self.n_vars:
                raise ValueError(f"start point has {len(s)} entries for {self.n_vars} variables")


@dataclass(frozen=True)
class NlpOptions:
    tol_feas: float = 1e-6
    tol_kkt: float = 1e-5
    max_outer: int = 50
    max_inner: int = 500
    mu0: float = 10.0
    mu_growth: float = 10.0
    mu_max: float = 1e8


@dataclass
class NlpSolution:
    x: np.ndarray
    objective: float
    max_eq_violation: float
    max_ineq_violation: float
    kkt_residual: float
    status: str                      # converged | max_iter | infeasible
    start_index: int = 0
    n_outer: int = 0
    start_statuses: tuple = ()
    message: str = ""


def _violations(problem: NlpProblem, x: np.ndarray) -> tuple[float, float]:
    ve = 0.0
    vi = 0.0
    if problem.eq is not None:
        h, _ = problem.eq(x)
        ve = float(np.max(np.abs(h))) if len(h) else 0.0
    if problem.ineq is not None:
        g, _ = problem.ineq(x)
        vi = float(np.max(np.maximum(g, 0.0))) if len(g) else 0.0
    return ve, vi


def check_kkt(problem: NlpProblem, x: np.ndarray, act_tol: float = 1e-6) -> float:
    """Stationarity residual after a least-squares multiplier fit.

    Active-set columns: all equality gradients, inequality gradients with
    |g| within act_tol of zero, and unit directions of active variable
    bounds.  With nothing active this is just the gradient norm.
    """
    x = np.asarray(x, dtype=float)
    _, grad = problem.objective(x)
    cols = []
    if problem.eq is not None:
        h, jh = problem.eq(x)
        if len(h):
            cols.append(_dense(jh).T)
    if problem.ineq is not None:
        g, jg = problem.ineq(x)
        active = g >= -act_tol
        if np.any(active):
            cols.append(_dense(jg)[active].T)
    lo, hi = problem.bounds[:, 0], problem.bounds[:, 1]
    span = np.maximum(hi - lo, 1.0)
    at_bound = np.where((x - lo <= 1e-8 * span) | (hi - x <= 1e-8 * span))[0]
    if len(at_bound):
        eye = np.zeros((problem.n_vars, len(at_bound)))
        eye[at_bound, np.arange(len(at_bound))] = 1.0
        cols.append(eye)
    if not cols:
        return float(np.linalg.norm(grad))
    mat = np.hstack(cols)
    z, *_ = np.linalg.lstsq(mat, -grad, rcond=None)
    return float(np.linalg.norm(grad + mat @ z))


def _solve_from(problem: NlpProblem, x0: np.ndarray, opts: NlpOptions,
                scale: np.ndarray):
    lo, hi = problem.bounds[:, 0], problem.bounds[:, 1]
    x = np.clip(x0, lo, hi)
    eq_resid = problem.eq_resid or (problem.eq and (lambda z: problem.eq(z)[0]))
    ineq_resid = problem.ineq_resid or (problem.ineq and (lambda z: problem.ineq(z)[0]))
    eq_vjp = problem.eq_vjp or (problem.eq and (lambda z, w: _dense(problem.eq(z)[1]).T @ w))
    ineq_vjp = problem.ineq_vjp or (problem.ineq
                                    and (lambda z, w: _dense(problem.ineq(z)[1]).T @ w))
    n_eq = len(eq_resid(x)) if problem.eq is not None else 0
    n_in = len(ineq_resid(x)) if problem.ineq is not None else 0
    lam = np.zeros(n_eq)
    nu = np.zeros(n_in)
    mu = opts.mu0
    # inner solves run in scaled coordinates z = x / scale for conditioning
    scipy_bounds = list(zip(lo / scale, hi / scale))
    prev_viol = np.inf
    status = "max_iter"
    kkt = np.inf
    n_outer = 0

    def al_fun(z):
        xz = z * scale
        f, grad = problem.objective(xz)
        val = f
        g_total = grad.copy()
        if n_eq:
            h = eq_resid(xz)
            val += lam @ h + 0.5 * mu * float(h @ h)
            g_total += eq_vjp(xz, lam + mu * h)
        if n_in:
            g = ineq_resid(xz)
            t = np.maximum(0.0, nu + mu * g)
            val += (float(t @ t) - float(nu @ nu)) / (2.0 * mu)
            g_total += ineq_vjp(xz, t)
        return val, g_total * scale

    x_prev = x.copy()
    f_prev = np.inf
    stalled = 0
    for outer in range(opts.max_outer):
        n_outer = outer + 1
        # loose inner solves while far from feasible, tight near the end
        pgtol = float(np.clip(0.05 * prev_viol, 1e-8, 1e-5)) if np.isfinite(prev_viol) \
            else 1e-6
        res = minimize(al_fun, x / scale, jac=True, method="L-BFGS-B",
                       bounds=scipy_bounds,
                       options={"maxiter": opts.max_inner, "ftol": 1e-15, "gtol": pgtol,
                                "maxcor": 20})
        x = np.clip(res.x * scale, lo, hi)
        h = eq_resid(x) if n_eq else np.zeros(0)
        g = ineq_resid(x) if n_in else np.zeros(0)
        viol = max(float(np.max(np.abs(h))) if n_eq else 0.0,
                   float(np.max(np.maximum(g, 0.0))) if n_in else 0.0)
        if viol <= opts.tol_feas:
            kkt = check_kkt(problem, x)
            grad_scale = 1.0 + float(np.linalg.norm(problem.objective(x)[1]))
            if kkt <= opts.tol_kkt * grad_scale:
                status = "converged"
                break
            # feasible but uncertified: stop once iterates stop improving
            f_now = problem.objective(x)[0]
            step = float(np.max(np.abs(x - x_prev))) / (1.0 + float(np.max(np.abs(x))))
            df = abs(f_now - f_prev) / (1.0 + abs(f_now))
            stalled = stalled + 1 if (step <= 1e-7 or df <= 1e-10) else 0
            if stalled >= 2:
                break
            f_prev = f_now
        x_prev = x.copy()
        if n_eq:
            lam = lam + mu * h
        if n_in:
            nu = np.maximum(0.0, nu + mu * g)
        if viol > 0.25 * prev_viol and mu < opts.mu_max:
            mu = min(mu * opts.mu_growth, opts.mu_max)
        prev_viol = max(viol, 1e-300)

    if not np.isfinite(kkt):
        kkt = check_kkt(problem, x)
    f, _ = problem.objective(x)
    ve, vi = _violations(problem, x)
    if status != "converged" and max(ve, vi) > opts.tol_feas:
        status = "infeasible"
    return x, f, ve, vi, kkt, status, n_outer


def solve(problem: NlpProblem, opts: NlpOptions | None = None) -> NlpSolution:
    """Run every start point; return the best feasible solution found."""
    opts = opts or NlpOptions()
    if not problem.starts:
        raise ValueError("at least one start point is required")
    if problem.var_scale is not None:
        scale = np.asarray(problem.var_scale, dtype=float)
        if np.any(scale <= 0):
            raise ValueError("var_scale entries must be positive")
    else:
        scale = np.ones(problem.n_vars)
    results = []
    for idx, x0 in enumerate(problem.starts):
        results.append((idx, *_solve_from(problem, x0, opts, scale)))

    feasible = [r for r in results
                if r[3] <= opts.tol_feas and r[4] <= opts.tol_feas]
    start_statuses = tuple(r[6] for r in results)
    if feasible:
        best = min(feasible, key=lambda r: (r[2], r[0]))
        idx, x, f, ve, vi, kkt, status, n_outer = best
        status = "converged" if status == "converged" else "max_iter"
    else:
        best = min(results, key=lambda r: (max(r[3], r[4]), r[0]))
        idx, x, f, ve, vi, kkt, status, n_outer = best
        status = "infeasible"
    return NlpSolution(x=x, objective=f, max_eq_violation=ve, max_ineq_violation=vi,
                       kkt_residual=kkt, status=status, start_index=idx, n_outer=n_outer,
                       start_statuses=start_statuses,
                       message=f"best of {len(results)} starts (statuses: {start_statuses})")


def chain_clip_ramps(values: np.ndarray, lo, hi, step_lo: float, step_hi: float,
                     prev: float | None = None) -> np.ndarray:
    """Project a trajectory onto box and ramp limits by forward clipping.

    Each entry is clipped into [max(lo_t, prev+step_lo), min(hi_t, prev+step_hi)],
    which is nonempty whenever step_lo <= 0 <= step_hi and prev is in the
    box.  Produces exact feasibility with a perturbation on the order of
    the incoming violation.
    """
    values = np.asarray(values, dtype=float)
    n = len(values)
    lo = np.broadcast_to(np.asarray(lo, dtype=float), (n,))
    hi = np.broadcast_to(np.asarray(hi, dtype=float), (n,))
    out = np.empty(n)
    last = prev
    for t in range(n):
        lo_t, hi_t = lo[t], hi[t]
        if last is not None:
            lo_t = max(lo_t, last + step_lo)
            hi_t = min(hi_t, last + step_hi)
            if lo_t > hi_t:  # box and ramp band disjoint: stay in the box
                lo_t = hi_t = lo[t] if lo[t] > last + step_hi else hi[t]
        out[t] = min(max(values[t], lo_t), hi_t)
        last = out[t]
    return out
