"""Augmented Lagrangian solver with a sparse semismooth Newton inner loop.

Solves  min 1/2 x'Qx + c'x  s.t.  a'x = d, l <= x <= u  for a symmetric PSD
operator Q given implicitly (matvec / column / submatrix access).  The outer
loop drives the multiplier x; each inner subproblem minimizes the smooth
convex function

    psi(w) = 1/2 w'Qw + (||u(w)||^2 - ||u(w) - Pi(u(w))||^2) / (2 sigma)
             - ||x_k||^2 / (2 sigma),         u(w) = x_k - sigma (Qw + c),

whose gradient Q(w - Pi(u(w))) is piecewise affine.  Newton steps solve a
reduced p x p system on the free set of the projection (p is typically far
below n), so each iteration costs O(p^3 + p n) plus one matvec.
"""

import logging
import time
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .errors import InputError, LineSearchError
from .projection import BoxLineSet, hs_jacobian_apply, project_box_line

logger = logging.getLogger("ssnal")


def _half_powers(k):
    return 0.5**k


@dataclass
class QpProblem:
    """Box-and-single-equality QP with an implicit symmetric PSD operator."""

    q_op: object
    c: np.ndarray
    constraint: BoxLineSet

    def __post_init__(self):
        self.c = np.ascontiguousarray(self.c, dtype=float)
        if self.c.shape != (self.constraint.n,):
            raise InputError("c length does not match the constraint dimension")
        if getattr(self.q_op, "n", self.constraint.n) != self.constraint.n:
            raise InputError("operator dimension does not match the constraint")

    @property
    def n(self):
        return self.constraint.n

    def objective(self, x, qx=None):
        if qx is None:
            qx = self.q_op.matvec(x)
        return 0.5 * float(x.dot(qx)) + float(self.c.dot(x))

    def spot_check(self, seed=0, tol=1e-8):
        """Sampled symmetry/PSD check of the operator; raises on violation."""
        rng = np.random.default_rng(seed)
        for _ in range(3):
            v = rng.standard_normal(self.n)
            w = rng.standard_normal(self.n)
            qv = self.q_op.matvec(v)
            qw = self.q_op.matvec(w)
            scale = 1.0 + abs(float(v.dot(qv))) + abs(float(w.dot(qw)))
            if abs(float(w.dot(qv)) - float(v.dot(qw))) > tol * scale:
                raise InputError("operator is not symmetric")
            if float(v.dot(qv)) < -tol * float(v.dot(v)):
                raise InputError("operator is not positive semidefinite")


@dataclass
class AlmOptions:
    """Outer-loop controls; the tolerance sequences must be summable."""

    sigma0: float = 1.0
    sigma_growth: float = 5.0
    sigma_max: float = 1e8
    tol_kkt: float = 1e-3
    eps_seq: callable = field(default=_half_powers)
    delta_seq: callable = field(default=_half_powers)
    lambda_min_surrogate: float = 1.0
    max_outer: int = 200


@dataclass
class SsnOptions:
    """Inner Newton controls (Armijo constants, reduced-system solve policy)."""

    mu: float = 1e-4
    backtrack: float = 0.5
    tau: float = 0.5
    eta: float = 1e-2
    max_inner: int = 50
    direct_solve_threshold: int = 2000
    cg_max_iters: int = 500


@dataclass
class SolverState:
    """Mutable per-solve state: multiplier x, dual representative w, caches."""

    x: np.ndarray
    w: np.ndarray
    qw: np.ndarray
    sigma: float
    z: np.ndarray = None
    outer_iter: int = 0
    inner_iter_total: int = 0


@dataclass
class SolveReport:
    """Outcome of a solve; ``x_opt`` plus the bookkeeping the tables report."""

    x_opt: np.ndarray
    kkt_residual: float
    outer_iters: int
    avg_inner_iters: float
    total_inner_iters: int
    unbounded_support_count: int
    objective: float
    wall_time: float
    converged: bool
    solver: str = "ssnal"
    warnings: list = field(default_factory=list)


def _psi_value(w_qw, u, proj_x, x_sq, sigma):
    r = u - proj_x
    return 0.5 * w_qw + (float(u.dot(u)) - float(r.dot(r))) / (2.0 * sigma) \
        - x_sq / (2.0 * sigma)


def psi_eval(w, qw, state, problem):
    """Inner objective psi(w); uses a single projection evaluation."""
    u = state.x - state.sigma * (qw + problem.c)
    proj = project_box_line(u, problem.constraint)
    return _psi_value(float(w.dot(qw)), u, proj.x, float(state.x.dot(state.x)), state.sigma)


def psi_grad(w, qw, state, problem):
    """Gradient Q(w - Pi(u(w))) via one matvec; returns the projection too."""
    u = state.x - state.sigma * (qw + problem.c)
    proj = project_box_line(u, problem.constraint)
    grad = problem.q_op.matvec(w - proj.x)
    return grad, proj


def _cg(apply_m, rhs, atol, max_iters):
    """Plain conjugate gradients with an absolute residual target."""
    v = np.zeros_like(rhs)
    r = rhs.copy()
    p = r.copy()
    rs = float(r.dot(r))
    if np.sqrt(rs) <= atol:
        return v, True
    for _ in range(max_iters):
        mp = apply_m(p)
        denom = float(p.dot(mp))
        if denom <= 0.0:
            return v, False  # lost positive-definiteness along this direction
        step = rs / denom
        v += step * p
        r -= step * mp
        rs_new = float(r.dot(r))
        if np.sqrt(rs_new) <= atol:
            return v, True
        p = r + (rs_new / rs) * p
        rs = rs_new
    return v, False


def _solve_sym(m, rhs):
    """Symmetric solve with a min-norm fallback for near-singular systems.

    The exact reduced solution can carry arbitrarily large components in the
    near-null space of Q_JJ; those components are annihilated by the Q-image
    formulas in exact arithmetic but amplify roundoff in floats.  Truncated
    least squares suppresses them without changing the Q-image.
    """
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", scipy.linalg.LinAlgWarning)
        try:
            v = scipy.linalg.solve(m, rhs, assume_a="sym")
        except scipy.linalg.LinAlgError:
            return np.linalg.lstsq(m, rhs, rcond=1e-12)[0]
    if any(issubclass(w.category, scipy.linalg.LinAlgWarning) for w in caught):
        return np.linalg.lstsq(m, rhs, rcond=1e-12)[0]
    return v


def newton_direction(s, grad, proj, sigma, problem, opts):
    """Semismooth Newton direction via the reduced free-set system.

    Returns ``(direction, q_dir, dir_q_dir)`` where ``q_dir = Q @ direction``
    and ``dir_q_dir = direction' Q direction``; both are exact images of the
    solution of (Q + sigma Q P Q) d = -grad restricted to Ran(Q), computed
    from a p x p solve instead of an n x n one.  The returned representative
    differs from that solution only in null(Q), which nothing downstream
    consumes.

    Parameters
    ----------
    s : ndarray
        w - Pi(u(w)) at the current iterate (so ``grad = Q s``).
    grad : ndarray
        Gradient of psi at w.
    proj : ProjectionResult
        Projection of u(w), carrying the active-set mask.
    sigma : float
        Current augmented Lagrangian penalty.
    """
    mask = proj.active_mask
    free = mask.free
    p = free.size
    a = problem.constraint.a
    s_qs = float(s.dot(grad))

    if p == 0:
        return -s.copy(), -grad.copy(), s_qs

    cols = problem.q_op.columns(free)  # n x p, shared by Q_JJ and Q_J' products
    q_jj = cols[free, :]
    g_j = grad[free]
    a_j = a[free]
    gnorm = float(np.linalg.norm(grad))
    target = min(opts.eta, gnorm ** (1.0 + opts.tau))
    a_sa = float(a_j.dot(a_j))

    if a_sa != 0.0:
        qa = q_jj @ a_j
        aqa = float(a_j.dot(qa))
        sig = sigma
        denom = a_sa - sig * aqa
        scale = a_sa + abs(sig * aqa)
        retries = 0
        while abs(denom) <= 1e-12 * scale and retries < 8:
            sig *= 1.0 + 1e-6
            denom = a_sa - sig * aqa
            retries += 1
        ag = float(a_j.dot(g_j))
        rhs = g_j + (sig * ag / denom) * qa

        def apply_m(t):
            return t / sig + q_jj @ t + (sig * float(qa.dot(t)) / denom) * qa

        if p <= opts.direct_solve_threshold:
            m = q_jj + (sig / denom) * np.outer(qa, qa)
            m[np.diag_indices_from(m)] += 1.0 / sig
            v = _solve_sym(m, rhs)
        else:
            v, ok = _cg(apply_m, rhs, atol=target, max_iters=opts.cg_max_iters)
            if not ok:
                m = q_jj + (sig / denom) * np.outer(qa, qa)
                m[np.diag_indices_from(m)] += 1.0 / sig
                v = _solve_sym(m, rhs)

        qv = q_jj @ v
        gamma = float(a_j.dot(qv)) - ag
        q_dir = cols @ v - grad + (sig * gamma / denom) * (cols @ a_j)
        dir_q_dir = (
            float(v.dot(qv))
            - 2.0 * float(v.dot(g_j))
            + s_qs
            + (2.0 * sig * a_sa - sig * sig * aqa) / (denom * denom) * gamma * gamma
        )
        direction = -s - sig * hs_jacobian_apply(mask, a, q_dir)
    else:
        def apply_m(t):
            return t / sigma + q_jj @ t

        if p <= opts.direct_solve_threshold:
            m = q_jj.copy()
            m[np.diag_indices_from(m)] += 1.0 / sigma
            v = _solve_sym(m, g_j)
        else:
            v, ok = _cg(apply_m, g_j, atol=target, max_iters=opts.cg_max_iters)
            if not ok:
                m = q_jj.copy()
                m[np.diag_indices_from(m)] += 1.0 / sigma
                v = _solve_sym(m, g_j)

        q_dir = cols @ v - grad
        dir_q_dir = float(v.dot(q_jj @ v)) - 2.0 * float(v.dot(g_j)) + s_qs
        direction = -s - sigma * hs_jacobian_apply(mask, a, q_dir)

    return direction, q_dir, dir_q_dir


def line_search(w, qw, direction, q_dir, dir_q_dir, grad, psi_at_w, u, state, problem, opts):
    """Armijo backtracking along a descent direction.

    Each trial costs one projection and no matvecs: along the ray,
    u(w + t d) = u(w) - sigma t (Q d) and the quadratic form updates from the
    cached ``q_dir`` and ``dir_q_dir``.

    Returns
    -------
    (alpha, w_new, qw_new, psi_new, u_new, proj_new)
    """
    gd = float(grad.dot(direction))
    if gd >= 0.0:
        raise LineSearchError(f"not a descent direction (g'd = {gd:.3e})")
    sigma = state.sigma
    x_sq = float(state.x.dot(state.x))
    w_qw = float(w.dot(qw))
    w_qdir = float(w.dot(q_dir))
    alpha = 1.0
    for _ in range(61):
        u_t = u - (sigma * alpha) * q_dir
        proj_t = project_box_line(u_t, problem.constraint)
        quad = w_qw + 2.0 * alpha * w_qdir + alpha * alpha * dir_q_dir
        psi_t = _psi_value(quad, u_t, proj_t.x, x_sq, sigma)
        if psi_t <= psi_at_w + opts.mu * alpha * gd:
            return alpha, w + alpha * direction, qw + alpha * q_dir, psi_t, u_t, proj_t
        alpha *= opts.backtrack
    raise LineSearchError("Armijo backtracking exceeded 60 halvings")


@dataclass
class _InnerResult:
    u: np.ndarray
    proj: object
    iterations: int
    converged: bool
    hit_max_inner: bool


def ssn_solve(state, problem, alm_opts, ssn_opts, eps_k, delta_k, trace=None):
    """Run the inner Newton solver until the inexactness criteria hold.

    Stops when both  ||grad psi|| <= sqrt(lam) eps_k / sqrt(sigma)  and
    ||grad psi|| <= sqrt(lam) delta_k / sqrt(sigma) ||Pi(u(w)) - x_k||
    are satisfied (lam is the configured surrogate for the smallest nonzero
    eigenvalue of Q).  Mutates ``state.w``/``state.qw`` in place and returns
    the final projection for bit-exact reuse as the next multiplier iterate.
    """
    sigma = state.sigma
    coeff = np.sqrt(alm_opts.lambda_min_surrogate / sigma)
    grad_floor = 1e-12 * (1.0 + float(np.linalg.norm(problem.c)))
    x_sq = float(state.x.dot(state.x))

    u = state.x - sigma * (state.qw + problem.c)
    proj = project_box_line(u, problem.constraint)
    s = state.w - proj.x
    grad = problem.q_op.matvec(s)

    converged = False
    iterations = 0
    for _ in range(ssn_opts.max_inner):
        gnorm = float(np.linalg.norm(grad))
        if trace is not None:
            trace.append(gnorm)
        if gnorm <= coeff * eps_k and gnorm <= coeff * delta_k * float(
            np.linalg.norm(proj.x - state.x)
        ):
            converged = True
            break
        if gnorm <= grad_floor:
            converged = True
            break

        direction, q_dir, dir_q_dir = newton_direction(s, grad, proj, sigma, problem, ssn_opts)
        steepest = False
        if float(grad.dot(direction)) >= 0.0:
            # Roundoff produced a non-descent direction; take steepest descent.
            direction = -grad
            q_dir = problem.q_op.matvec(direction)
            dir_q_dir = float(direction.dot(q_dir))
            steepest = True
        psi0 = _psi_value(float(state.w.dot(state.qw)), u, proj.x, x_sq, sigma)
        if ssn_opts.mu * abs(float(grad.dot(direction))) <= 1e-16 * (1.0 + abs(psi0)):
            # Predicted decrease below double-precision resolution of psi.
            converged = True
            break
        try:
            _, state.w, state.qw, _, u, proj = line_search(
                state.w, state.qw, direction, q_dir, dir_q_dir, grad, psi0, u,
                state, problem, ssn_opts,
            )
        except LineSearchError:
            if steepest:
                # Steepest descent is mathematically a descent direction, so a
                # 60-halving failure means psi cannot be decreased in doubles.
                break
            direction = -grad
            q_dir = problem.q_op.matvec(direction)
            dir_q_dir = float(direction.dot(q_dir))
            if ssn_opts.mu * float(grad.dot(grad)) <= 1e-16 * (1.0 + abs(psi0)):
                break
            try:
                _, state.w, state.qw, _, u, proj = line_search(
                    state.w, state.qw, direction, q_dir, dir_q_dir, grad, psi0, u,
                    state, problem, ssn_opts,
                )
            except LineSearchError:
                break
        iterations += 1
        s = state.w - proj.x
        grad = problem.q_op.matvec(s)
    else:
        # Loop exhausted without meeting the criteria.
        if trace is not None:
            trace.append(float(np.linalg.norm(grad)))
        state.inner_iter_total += iterations
        return _InnerResult(u, proj, iterations, False, True)

    state.inner_iter_total += iterations
    return _InnerResult(u, proj, iterations, converged, False)


def kkt_residual(x, problem):
    """Relative KKT residual ||x - Pi(x - Qx - c)|| / (1 + ||x||)."""
    r, _, _ = _kkt_residual_full(np.asarray(x, dtype=float), problem)
    return r


def _kkt_residual_full(x, problem):
    if x.shape != (problem.n,):
        raise InputError(f"expected a vector of length {problem.n}")
    qx = problem.q_op.matvec(x)
    proj = project_box_line(x - qx - problem.c, problem.constraint)
    r = float(np.linalg.norm(x - proj.x)) / (1.0 + float(np.linalg.norm(x)))
    return r, proj, qx


def alm_solve(problem, alm_opts=None, ssn_opts=None, x0=None, w0=None, callback=None):
    """Solve the QP by the augmented Lagrangian / semismooth Newton method.

    Parameters
    ----------
    problem : QpProblem
    alm_opts, ssn_opts : options, defaulted when omitted.
    x0, w0 : ndarray, optional
        Starting multiplier and dual representative (both default to zero).
    callback : callable, optional
        Called once per outer iteration as
        ``callback(k, kkt_residual, sigma, p, inner_iterations)``.

    Returns
    -------
    SolveReport
    """
    alm_opts = alm_opts or AlmOptions()
    ssn_opts = ssn_opts or SsnOptions()
    t_start = time.perf_counter()
    n = problem.n

    x = np.zeros(n) if x0 is None else np.asarray(x0, dtype=float).copy()
    w = np.zeros(n) if w0 is None else np.asarray(w0, dtype=float).copy()
    qw = np.zeros(n) if w0 is None else problem.q_op.matvec(w)
    state = SolverState(x=x, w=w, qw=qw, sigma=alm_opts.sigma0)

    warnings_out = []
    converged = False
    inner_last = 0
    p_last = None
    residual = np.inf
    qx_last = None
    outer = 0
    best = None  # (residual, x, p, objective) safeguard against late-sigma noise
    stalled = 0

    for k in range(alm_opts.max_outer + 1):
        residual, kkt_proj, qx_last = _kkt_residual_full(state.x, problem)
        if p_last is None:
            p_last = kkt_proj.active_mask.p
        logger.info(
            "outer=%d rkkt=%.3e sigma=%.2e p=%d inner=%d",
            k, residual, state.sigma, p_last, inner_last,
        )
        if callback is not None:
            callback(k, residual, state.sigma, p_last, inner_last)
        if best is None or residual < best[0]:
            best = (residual, state.x, p_last, problem.objective(state.x, qx=qx_last))
            stalled = 0
        elif state.sigma >= alm_opts.sigma_max:
            # sigma is capped and multiplier noise (amplified by sigma) now
            # dominates: further outer iterations cannot certify more accuracy.
            stalled += 1
            if stalled >= 3:
                warnings_out.append(
                    "stagnated at the attainable accuracy for sigma_max; "
                    "returning the best iterate"
                )
                break
        if residual < alm_opts.tol_kkt:
            converged = True
            break
        if k == alm_opts.max_outer:
            warnings_out.append(f"max_outer={alm_opts.max_outer} reached")
            break

        # Refresh the cached product so drift from incremental updates cannot
        # accumulate across outer iterations.
        state.qw = problem.q_op.matvec(state.w)
        inner = ssn_solve(
            state, problem, alm_opts, ssn_opts,
            eps_k=alm_opts.eps_seq(k), delta_k=alm_opts.delta_seq(k),
        )
        if inner.hit_max_inner:
            warnings_out.append(f"inner solver hit max_inner at outer iteration {k}")
        state.x = inner.proj.x
        state.z = (inner.u - inner.proj.x) / state.sigma
        p_last = inner.proj.active_mask.p
        inner_last = inner.iterations
        state.sigma = min(state.sigma * alm_opts.sigma_growth, alm_opts.sigma_max)
        state.outer_iter += 1
        outer += 1

    if best is not None and best[0] < residual:
        residual, x_ret, p_ret, objective = best
    else:
        x_ret, p_ret = state.x, p_last
        objective = problem.objective(state.x, qx=qx_last)
    return SolveReport(
        x_opt=x_ret,
        kkt_residual=residual,
        outer_iters=outer,
        avg_inner_iters=state.inner_iter_total / max(outer, 1),
        total_inner_iters=state.inner_iter_total,
        unbounded_support_count=int(p_ret),
        objective=objective,
        wall_time=time.perf_counter() - t_start,
        converged=converged,
        solver="ssnal",
        warnings=warnings_out,
    )
