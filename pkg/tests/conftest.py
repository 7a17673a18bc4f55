"""Shared instance generators and independent oracles for the test suite."""

import os
from pathlib import Path

import numpy as np
import pytest

from ssnal import BoxLineSet, DenseOperator, QpProblem

DATA_DIR = Path(os.environ.get("SSNAL_DATA_DIR", Path(__file__).resolve().parent.parent / "datasets"))


def benchmark_path(name):
    """Path of a benchmark file, or skip the test when it is absent."""
    path = DATA_DIR / name
    if not path.exists():
        pytest.skip(
            f"benchmark dataset {name!r} not found under {DATA_DIR} "
            "(run scripts/fetch_datasets.py on a machine with network access, "
            "or point SSNAL_DATA_DIR at the files)"
        )
    return path


def random_box_line(rng, n, zero_a_prob=0.15):
    """Random feasible constraint set with occasional zero a-entries."""
    a = rng.standard_normal(n)
    a[rng.random(n) < zero_a_prob] = 0.0
    l = -rng.random(n) - 0.1
    u = rng.random(n) + 0.1
    x_feas = l + rng.random(n) * (u - l)
    d = float(a.dot(x_feas))
    return BoxLineSet(a=a, d=d, l=l, u=u)


def random_qp(seed, n_min=5, n_max=50, force_rank_deficient=None):
    """Random dense-backed QP; rank-deficient Q on even seeds by default."""
    rng = np.random.default_rng(seed)
    n = int(rng.integers(n_min, n_max + 1))
    deficient = (seed % 2 == 0) if force_rank_deficient is None else force_rank_deficient
    k = int(rng.integers(2, max(3, n // 2 + 1))) if deficient else n
    g = rng.standard_normal((k, n))
    q = g.T @ g
    c = rng.standard_normal(n)
    return QpProblem(q_op=DenseOperator(q), c=c, constraint=random_box_line(rng, n))


def project_bisection_oracle(v, box_line, iters=200):
    """High-precision bisection on the multiplier; independent of the
    breakpoint search under test."""
    a, d, l, u = box_line.a, box_line.d, box_line.l, box_line.u

    def f(lam):
        return d - float(a.dot(np.clip(v - lam * a, l, u)))

    if not np.any(a != 0.0):
        return np.clip(v, l, u), 0.0
    lo, hi = -1.0, 1.0
    scale = 1.0 + float(np.abs(v).max())
    while f(lo) > 0 and lo > -1e18:
        lo *= 4.0 * scale if lo == -1.0 else 4.0
    while f(hi) < 0 and hi < 1e18:
        hi *= 4.0 * scale if hi == 1.0 else 4.0
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if f(mid) < 0:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-17 * (1.0 + abs(lo) + abs(hi)):
            break
    lam = 0.5 * (lo + hi)
    return np.clip(v - lam * a, l, u), lam


def dense_hs_jacobian_p0(mask, a):
    """HS-Jacobian by the pseudo-inverse construction on the stacked
    active rows [A_I; a'] of the inequality system Ax >= g, A = [I; -I]."""
    n = a.size
    rows = []
    for i in mask.lower_active:
        e = np.zeros(n)
        e[i] = 1.0
        rows.append(e)
    for i in mask.upper_active:
        e = np.zeros(n)
        e[i] = -1.0
        rows.append(e)
    rows.append(a.astype(float))
    b = np.vstack(rows)
    return np.eye(n) - b.T @ np.linalg.pinv(b @ b.T) @ b


def dense_newton_oracle(q, p_mat, sigma, grad):
    """Solve (Q + sigma Q P Q) d = -grad restricted to Ran(Q) via an
    eigenbasis of Q; returns (d, Qd, d'Qd)."""
    evals, evecs = np.linalg.eigh(q)
    keep = evals > 1e-10 * max(evals.max(), 1.0)
    basis = evecs[:, keep]
    m_full = q + sigma * q @ p_mat @ q
    reduced = basis.T @ m_full @ basis
    rhs = -basis.T @ grad
    y = np.linalg.solve(reduced, rhs)
    d = basis @ y
    qd = q @ d
    return d, qd, float(d.dot(qd))


def make_separable_blobs(rng, n_per_class, q=2, gap=2.0):
    """Two Gaussian blobs with labels +-1, linearly separable up to noise."""
    pos = rng.standard_normal((n_per_class, q)) * 0.5 + gap
    neg = rng.standard_normal((n_per_class, q)) * 0.5 - gap
    x = np.vstack([pos, neg])
    y = np.concatenate([np.ones(n_per_class), -np.ones(n_per_class)])
    perm = rng.permutation(x.shape[0])
    return x[perm], y[perm]
