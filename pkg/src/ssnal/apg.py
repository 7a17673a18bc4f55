"""Accelerated projected-gradient baseline for the same box-and-line QP.

Nesterov acceleration with a fixed 1/L step and function-value restart.
Deliberately simple: this solver exists as an independent correctness oracle
and benchmark comparator, not as a tuned production method.
"""

import time
from dataclasses import dataclass

import numpy as np

from .projection import project_box_line
from .solver import SolveReport, _kkt_residual_full


@dataclass
class ApgOptions:
    tol_kkt: float = 1e-8
    max_iters: int = 20000
    restart: str = "function-value"  # or "none"
    lipschitz_estimate: float = None  # power iteration on Q when None


def _power_iteration_lipschitz(q_op, n, steps=30):
    rng = np.random.default_rng(12345)
    b = rng.standard_normal(n)
    b /= np.linalg.norm(b)
    lam = 0.0
    for _ in range(steps):
        qb = q_op.matvec(b)
        lam = float(b.dot(qb))
        norm = np.linalg.norm(qb)
        if norm == 0.0:
            return 0.0
        b = qb / norm
    return max(lam, 0.0)


def apg_solve(problem, opts=None, x0=None):
    """Solve the QP by restarted accelerated projected gradient.

    Every iterate is feasible (the projection is exact) and the objective is
    non-increasing: an accelerated step whose objective rises is replaced by
    a plain projected-gradient step from the previous point.
    """
    opts = opts or ApgOptions()
    t_start = time.perf_counter()
    n = problem.n

    lip = opts.lipschitz_estimate
    if lip is None:
        lip = 1.1 * _power_iteration_lipschitz(problem.q_op, n)
    lip = max(lip, 1e-8)

    start = np.zeros(n) if x0 is None else np.asarray(x0, dtype=float)
    x = project_box_line(start, problem.constraint).x
    qx = problem.q_op.matvec(x)
    fx = 0.5 * float(x.dot(qx)) + float(problem.c.dot(x))

    residual, kkt_proj, _ = _kkt_residual_full(x, problem)
    p_last = kkt_proj.active_mask.p
    converged = residual < opts.tol_kkt
    iters = 0
    warnings_out = []

    y = x.copy()
    t_momentum = 1.0
    while not converged and iters < opts.max_iters:
        gy = problem.q_op.matvec(y) + problem.c
        x_new = project_box_line(y - gy / lip, problem.constraint).x
        qx_new = problem.q_op.matvec(x_new)
        f_new = 0.5 * float(x_new.dot(qx_new)) + float(problem.c.dot(x_new))
        if opts.restart == "function-value" and f_new > fx:
            # Momentum overshot: take a monotone gradient step from x instead.
            gx = qx + problem.c
            x_new = project_box_line(x - gx / lip, problem.constraint).x
            qx_new = problem.q_op.matvec(x_new)
            f_new = 0.5 * float(x_new.dot(qx_new)) + float(problem.c.dot(x_new))
            t_momentum = 1.0

        kkt_point = project_box_line(x_new - qx_new - problem.c, problem.constraint)
        residual = float(np.linalg.norm(x_new - kkt_point.x)) / (
            1.0 + float(np.linalg.norm(x_new))
        )
        p_last = kkt_point.active_mask.p

        t_next = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t_momentum * t_momentum))
        y = x_new + ((t_momentum - 1.0) / t_next) * (x_new - x)
        x, qx, fx, t_momentum = x_new, qx_new, f_new, t_next
        iters += 1
        if residual < opts.tol_kkt:
            converged = True

    if not converged:
        warnings_out.append(f"max_iters={opts.max_iters} reached")

    return SolveReport(
        x_opt=x,
        kkt_residual=residual,
        outer_iters=iters,
        avg_inner_iters=0.0,
        total_inner_iters=0,
        unbounded_support_count=int(p_last),
        objective=0.5 * float(x.dot(qx)) + float(problem.c.dot(x)),
        wall_time=time.perf_counter() - t_start,
        converged=converged,
        solver="apg",
        warnings=warnings_out,
    )
