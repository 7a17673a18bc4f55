"""Euclidean projection onto {x : a'x = d, l <= x <= u} and its generalized Jacobian.

The feasible set is the intersection of a box K = [l, u] with the hyperplane
L = {x : a'x = d}.  The projection reduces to a one-dimensional root find for
the equality multiplier: phi'(lam) = d - a' clip(v - lam a, l, u) is continuous,
piecewise linear and non-decreasing, with kinks only at the 2n breakpoints
(v_i - u_i)/a_i and (v_i - l_i)/a_i.  A binary search over the sorted
breakpoints brackets the root between two adjacent kinks, where linear
interpolation is exact.
"""

from dataclasses import dataclass

import numpy as np

from .errors import InfeasibleProblemError, InputError

# Relative slack used when classifying a coordinate as sitting on a bound.
_ACTIVE_TOL = 1e-12


class BoxLineSet:
    """Constraint set {x : a'x = d, l <= x <= u}.

    Feasibility (min_box a'x <= d <= max_box a'x) and l < u are checked once
    at construction; projection is called millions of times on a fixed set.
    """

    def __init__(self, a, d, l, u):
        a = np.ascontiguousarray(a, dtype=float)
        l = np.ascontiguousarray(l, dtype=float)
        u = np.ascontiguousarray(u, dtype=float)
        if a.ndim != 1 or a.shape != l.shape or a.shape != u.shape:
            raise InputError("a, l, u must be one-dimensional vectors of equal length")
        if not np.all(l < u):
            raise InputError("box must satisfy l < u componentwise")
        d = float(d)
        lo = float(np.sum(np.where(a > 0, a * l, a * u)))
        hi = float(np.sum(np.where(a > 0, a * u, a * l)))
        slack = 1e-12 * (1.0 + abs(d) + max(abs(lo), abs(hi)))
        if not (lo - slack <= d <= hi + slack):
            raise InfeasibleProblemError(
                f"a'x = {d} unattainable over the box: range is [{lo}, {hi}]"
            )
        self.a = a
        self.d = d
        self.l = l
        self.u = u
        self.n = a.shape[0]
        # Coordinates with a_i = 0 decouple from the multiplier: they are
        # projected by plain clipping and contribute no breakpoints.
        self._nz = np.flatnonzero(a != 0.0)
        self._range_lo = lo
        self._range_hi = hi

    def __repr__(self):
        return f"BoxLineSet(n={self.n}, d={self.d})"


@dataclass
class ActiveSetMask:
    """Partition of {0..n-1} into bound-active and free coordinates.

    ``sigma_diag`` is the diagonal of Sigma = I - Diag(theta): one on the free
    set, zero where the projection sits on a bound.
    """

    lower_active: np.ndarray
    upper_active: np.ndarray
    free: np.ndarray
    free_mask: np.ndarray

    @property
    def p(self):
        return int(self.free.size)

    @property
    def sigma_diag(self):
        return self.free_mask.astype(float)


class ProjectionResult:
    """Projection onto K inter L together with the equality multiplier.

    The active-set mask is classified lazily on first access; rejected line
    search trials never pay for it.
    """

    __slots__ = ("x", "lambda_hat", "_v", "_set", "_mask")

    def __init__(self, x, lambda_hat, v, box_line):
        self.x = x
        self.lambda_hat = lambda_hat
        self._v = v
        self._set = box_line
        self._mask = None

    @property
    def active_mask(self):
        if self._mask is None:
            self._mask = _classify(self._v, self.lambda_hat, self._set)
        return self._mask

    def __repr__(self):
        return f"ProjectionResult(lambda_hat={self.lambda_hat}, n={self.x.shape[0]})"


def grad_phi(lam, v, box_line):
    """Derivative of the projection dual: d - a' clip(v - lam*a, l, u).

    Non-decreasing in ``lam``; its root is the equality multiplier of the
    projection of ``v``.
    """
    s = box_line
    x = np.minimum(np.maximum(v - lam * s.a, s.l), s.u)
    return s.d - float(s.a.dot(x))


def breakpoints(v, box_line):
    """Sorted kink locations of lam -> grad_phi(lam, v), duplicates retained.

    Coordinates with a_i = 0 contribute none.  Length is at most 2n.
    """
    s = box_line
    nz = s._nz
    if nz.size == 0:
        return np.empty(0)
    anz = s.a[nz]
    t = np.concatenate([(v[nz] - s.u[nz]) / anz, (v[nz] - s.l[nz]) / anz])
    t.sort()
    return t


def _classify(v, lam, box_line):
    s = box_line
    y = v - lam * s.a
    tol_l = _ACTIVE_TOL * (1.0 + np.abs(s.l))
    tol_u = _ACTIVE_TOL * (1.0 + np.abs(s.u))
    lower = y <= s.l + tol_l
    upper = y >= s.u - tol_u
    # A degenerate box slot could satisfy both; resolve in favour of lower.
    upper &= ~lower
    free = ~(lower | upper)
    return ActiveSetMask(
        lower_active=np.flatnonzero(lower),
        upper_active=np.flatnonzero(upper),
        free=np.flatnonzero(free),
        free_mask=free,
    )


def project_box_line(v, box_line):
    """Project ``v`` onto {x : a'x = d, l <= x <= u} by breakpoint search.

    Binary search over the sorted breakpoints maintains a bracket with
    grad_phi < 0 on the left and >= 0 on the right; the returned multiplier is
    the exact root by linear interpolation on the final segment (grad_phi is
    affine between adjacent breakpoints).

    Parameters
    ----------
    v : ndarray
        Point to project.
    box_line : BoxLineSet
        Feasible set (validated at construction).

    Returns
    -------
    ProjectionResult
        Projection, multiplier and the active-set mask at the solution.
    """
    s = box_line
    v = np.asarray(v, dtype=float)
    if v.shape != (s.n,):
        raise InputError(f"expected a vector of length {s.n}, got shape {v.shape}")

    ts = breakpoints(v, s)
    if ts.size == 0:
        # a = 0: the equality constraint is 0 = d, feasible only when d = 0
        # (certified at construction); project by clipping alone.
        x = np.minimum(np.maximum(v, s.l), s.u)
        return ProjectionResult(x, 0.0, v, s)

    f_lo = grad_phi(ts[0], v, s)
    f_hi = grad_phi(ts[-1], v, s)
    if f_lo >= 0.0:
        # grad_phi is constant left of the first breakpoint (every coordinate
        # saturated), so a feasible set forces that constant to be zero.
        if f_lo > 1e-9 * (1.0 + abs(s.d)):
            raise InfeasibleProblemError("projection bracket failed below the breakpoint range")
        lam = float(ts[0])
    elif f_hi < 0.0:
        raise InfeasibleProblemError("projection bracket failed above the breakpoint range")
    else:
        i_l, i_u = 0, ts.size - 1
        f_l, f_u = f_lo, f_hi
        while i_u - i_l > 1 and ts[i_u] > ts[i_l]:
            i_m = (i_l + i_u) // 2
            f_m = grad_phi(ts[i_m], v, s)
            if f_m >= 0.0:
                i_u, f_u = i_m, f_m
            else:
                i_l, f_l = i_m, f_m
        if f_u == f_l or ts[i_u] == ts[i_l]:
            # Zero-width bracket (duplicate abscissae) or a flat zero segment.
            lam = float(ts[i_l])
        else:
            lam = float(ts[i_l] - f_l * (ts[i_u] - ts[i_l]) / (f_u - f_l))

    x = np.minimum(np.maximum(v - lam * s.a, s.l), s.u)
    return ProjectionResult(x, lam, v, s)


def hs_jacobian_apply(mask, a, y):
    """Apply the projection's HS-Jacobian P to ``y`` in O(n) without forming P.

    P = Sigma (I - a a' / (a' Sigma a)) Sigma when a' Sigma a != 0, else
    P = Sigma, with Sigma the 0/1 diagonal of ``mask``.
    """
    z = np.where(mask.free_mask, y, 0.0)
    a_free = np.where(mask.free_mask, a, 0.0)
    s = float(a_free.dot(a_free))
    if s != 0.0:
        z -= (a_free.dot(z) / s) * a_free
    return z
