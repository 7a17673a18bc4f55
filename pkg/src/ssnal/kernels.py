"""Kernel evaluation, implicit Q operators with column caching, and low-rank
kernel approximations (Nystrom landmarks, random Fourier features).

The SVM duals never need the full Gram matrix at once: the solver consumes
matrix-vector products, individual columns and small principal submatrices.
``KernelOperator`` serves those on demand, keeping recently used columns in a
bounded LRU cache (budget counted in scalar entries).
"""

import threading
import warnings
from collections import OrderedDict
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
from scipy.cluster.vq import kmeans2

from .errors import InputError

DEFAULT_CACHE_BUDGET = 36_000_000

LINEAR = "linear"
RBF = "rbf"


@dataclass(frozen=True)
class KernelSpec:
    """Kernel family and width.  RBF is exp(-||x - y||^2 / (2*alpha))."""

    kind: str = LINEAR
    alpha: float = 1.0

    def __post_init__(self):
        if self.kind not in (LINEAR, RBF):
            raise InputError(f"unknown kernel kind {self.kind!r}")
        if self.kind == RBF and not self.alpha > 0:
            raise InputError("RBF width alpha must be positive")


def kernel_eval(spec, xi, xj):
    """Kernel value K(xi, xj) for a single pair of feature vectors."""
    xi = np.asarray(xi, dtype=float)
    xj = np.asarray(xj, dtype=float)
    if xi.shape != xj.shape or xi.ndim != 1:
        raise InputError("kernel_eval expects two vectors of equal length")
    if spec.kind == LINEAR:
        return float(xi.dot(xj))
    dist2 = max(float(xi.dot(xi) + xj.dot(xj) - 2.0 * xi.dot(xj)), 0.0)
    return float(np.exp(-dist2 / (2.0 * spec.alpha)))


def kernel_cross(spec, xs, zs):
    """Kernel matrix K(xs_i, zs_j) between two sample blocks (|xs| x |zs|)."""
    xs = np.atleast_2d(np.asarray(xs, dtype=float))
    zs = np.atleast_2d(np.asarray(zs, dtype=float))
    if xs.shape[1] != zs.shape[1]:
        raise InputError("feature dimensions differ")
    g = xs @ zs.T
    if spec.kind == LINEAR:
        return g
    sq_x = np.einsum("ij,ij->i", xs, xs)
    sq_z = np.einsum("ij,ij->i", zs, zs)
    dist2 = np.maximum(sq_x[:, None] + sq_z[None, :] - 2.0 * g, 0.0)
    return np.exp(-dist2 / (2.0 * spec.alpha))


class KernelOperator:
    """Implicit Q with Q_ij = y_i y_j K(x_i, x_j) (y = ones when no labels).

    Columns are computed on demand, each through the same code path so that an
    evicted column is reproduced bit-identically.  The cache holds at most
    ``cache_budget`` scalar entries under LRU eviction and is guarded by a
    lock, so the operator can be shared across threads.
    """

    def __init__(self, samples, spec, labels=None, cache_budget=DEFAULT_CACHE_BUDGET):
        self.samples = np.ascontiguousarray(samples, dtype=float)
        if self.samples.ndim != 2:
            raise InputError("samples must be an n x q matrix")
        self.spec = spec
        self.n = self.samples.shape[0]
        if labels is not None:
            labels = np.asarray(labels, dtype=float)
            if labels.shape != (self.n,):
                raise InputError("labels must have one entry per sample")
            if not np.all(np.abs(labels) == 1.0):
                raise InputError("labels must be +1/-1")
        self.labels = labels
        self.cache_budget = cache_budget
        self._max_cached_cols = int(cache_budget // max(self.n, 1))
        self._cache = OrderedDict()
        self._lock = threading.Lock()
        if spec.kind == RBF:
            self._sq = np.einsum("ij,ij->i", self.samples, self.samples)

    def _compute_column(self, j):
        xj = self.samples[j]
        if self.spec.kind == LINEAR:
            col = self.samples @ xj
        else:
            dist2 = np.maximum(self._sq + self._sq[j] - 2.0 * (self.samples @ xj), 0.0)
            col = np.exp(-dist2 / (2.0 * self.spec.alpha))
        if self.labels is not None:
            col = (self.labels[j] * self.labels) * col
        return col

    def _get_column(self, j):
        with self._lock:
            col = self._cache.get(j)
            if col is not None:
                self._cache.move_to_end(j)
                return col
        col = self._compute_column(j)
        if self._max_cached_cols > 0:
            with self._lock:
                self._cache[j] = col
                self._cache.move_to_end(j)
                while len(self._cache) > self._max_cached_cols:
                    self._cache.popitem(last=False)
        return col

    def columns(self, idx):
        """Dense n x p block of the columns of Q indexed by ``idx``."""
        idx = np.asarray(idx, dtype=int)
        if idx.size and (idx.min() < 0 or idx.max() >= self.n):
            raise InputError("column index out of range")
        out = np.empty((self.n, idx.size))
        for k, j in enumerate(idx):
            out[:, k] = self._get_column(int(j))
        return out

    def submatrix(self, idx):
        """Principal submatrix Q[idx, idx] (p x p, symmetric)."""
        idx = np.asarray(idx, dtype=int)
        return self.columns(idx)[idx, :]

    def diag(self):
        if self.spec.kind == RBF:
            return np.ones(self.n)
        d = np.einsum("ij,ij->i", self.samples, self.samples)
        return d

    def matvec(self, v):
        """Q @ v assembled blockwise from cached or recomputed columns."""
        v = np.asarray(v, dtype=float)
        if v.shape != (self.n,):
            raise InputError(f"expected a vector of length {self.n}")
        out = np.zeros(self.n)
        block = 256
        for start in range(0, self.n, block):
            idx = np.arange(start, min(start + block, self.n))
            out += self.columns(idx) @ v[idx]
        return out


class LowRankOperator:
    """Q = Z Z' for an explicit factor Z (labels already folded into Z)."""

    def __init__(self, z_factor):
        self.z = np.ascontiguousarray(z_factor, dtype=float)
        if self.z.ndim != 2:
            raise InputError("factor must be an n x r matrix")
        self.n = self.z.shape[0]

    def matvec(self, v):
        return self.z @ (self.z.T @ np.asarray(v, dtype=float))

    def columns(self, idx):
        idx = np.asarray(idx, dtype=int)
        return self.z @ self.z[idx].T

    def submatrix(self, idx):
        zi = self.z[np.asarray(idx, dtype=int)]
        return zi @ zi.T

    def diag(self):
        return np.einsum("ij,ij->i", self.z, self.z)


class BlockKernelOperator:
    """The 2m x 2m regression-dual operator [[K, -K], [-K, K]].

    Wraps an unlabelled base operator for K; one base matvec per product.
    """

    def __init__(self, base):
        self.base = base
        self.m = base.n
        self.n = 2 * base.n

    def _signs(self, idx):
        return np.where(idx < self.m, 1.0, -1.0)

    def matvec(self, v):
        v = np.asarray(v, dtype=float)
        if v.shape != (self.n,):
            raise InputError(f"expected a vector of length {self.n}")
        t = self.base.matvec(v[: self.m] - v[self.m :])
        return np.concatenate([t, -t])

    def columns(self, idx):
        idx = np.asarray(idx, dtype=int)
        base_cols = self.base.columns(idx % self.m) * self._signs(idx)[None, :]
        return np.vstack([base_cols, -base_cols])

    def submatrix(self, idx):
        idx = np.asarray(idx, dtype=int)
        s = self._signs(idx)
        core = self.base.columns(idx % self.m)[idx % self.m, :]
        return (s[:, None] * s[None, :]) * core

    def diag(self):
        d = self.base.diag()
        return np.concatenate([d, d])


class DenseOperator:
    """Explicit symmetric matrix behind the operator interface."""

    def __init__(self, q):
        self.q = np.ascontiguousarray(q, dtype=float)
        if self.q.ndim != 2 or self.q.shape[0] != self.q.shape[1]:
            raise InputError("Q must be square")
        self.n = self.q.shape[0]

    def matvec(self, v):
        return self.q @ np.asarray(v, dtype=float)

    def columns(self, idx):
        return self.q[:, np.asarray(idx, dtype=int)].copy()

    def submatrix(self, idx):
        idx = np.asarray(idx, dtype=int)
        return self.q[np.ix_(idx, idx)].copy()

    def diag(self):
        return np.diag(self.q).copy()


@dataclass
class NystromFactor:
    """Low-rank surrogate K_{n,r} (K_{r,r} + ridge I)^-1 K_{n,r}' of a kernel."""

    landmark_indices: np.ndarray
    c_block: np.ndarray
    w_block: np.ndarray
    ridge: float
    chol_lower: np.ndarray = field(repr=False)

    def feature_matrix(self):
        """Z with Z Z' equal to the approximation (n x r)."""
        # C (L L')^-1 C' = (C L^-T)(C L^-T)'
        return scipy.linalg.solve_triangular(
            self.chol_lower, self.c_block.T, lower=True
        ).T

    def approx_matrix(self):
        z = self.feature_matrix()
        return z @ z.T


def nystrom_build(op, r, rng_seed, ridge=1e-3):
    """Landmark-based low-rank approximation of the kernel behind ``op``.

    Landmarks come from seeded k-means (k-means++ start, 25 Lloyd rounds) on
    the operator's samples, snapping each centroid to its nearest sample;
    duplicates are refilled with random unused indices.
    """
    if not isinstance(op, KernelOperator):
        raise InputError("nystrom_build needs a sample-backed kernel operator")
    n = op.n
    if not 1 <= r <= n:
        raise InputError(f"landmark count r={r} must be in [1, {n}]")
    rng = np.random.default_rng(rng_seed)
    x = op.samples
    if r == n:
        landmarks = np.arange(n)
    else:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")  # empty clusters are refilled below
            centroids, _ = kmeans2(x, r, iter=25, minit="++", seed=rng)
        # Snap each centroid to the nearest sample.
        d = (
            np.einsum("ij,ij->i", x, x)[None, :]
            - 2.0 * centroids @ x.T
            + np.einsum("ij,ij->i", centroids, centroids)[:, None]
        )
        snapped = np.unique(np.argmin(d, axis=1))
        if snapped.size < r:
            unused = np.setdiff1d(np.arange(n), snapped)
            fill = rng.choice(unused, size=r - snapped.size, replace=False)
            snapped = np.sort(np.concatenate([snapped, fill]))
        landmarks = snapped
    c_block = kernel_cross(op.spec, x, x[landmarks])
    w_block = c_block[landmarks, :]
    chol = scipy.linalg.cholesky(w_block + ridge * np.eye(r), lower=True)
    return NystromFactor(
        landmark_indices=landmarks,
        c_block=c_block,
        w_block=w_block,
        ridge=ridge,
        chol_lower=chol,
    )


@dataclass
class RffMap:
    """Random Fourier feature map approximating the RBF kernel.

    The feature of x is (1/sqrt(N)) [cos(w_1'x), sin(w_1'x), ...,
    cos(w_N'x), sin(w_N'x)], so the induced Gram has unit diagonal.
    """

    frequencies: np.ndarray
    seed: int

    @property
    def normalizer(self):
        return 1.0 / np.sqrt(self.frequencies.shape[0])

    def transform(self, xs):
        xs = np.atleast_2d(np.asarray(xs, dtype=float))
        proj = xs @ self.frequencies.T
        n_freq = self.frequencies.shape[0]
        z = np.empty((xs.shape[0], 2 * n_freq))
        z[:, 0::2] = np.cos(proj)
        z[:, 1::2] = np.sin(proj)
        z *= self.normalizer
        return z


def rff_build(q, n_freq, alpha, seed):
    """Draw ``n_freq`` i.i.d. frequencies from N(0, I/alpha) with a fixed seed."""
    if n_freq < 1:
        raise InputError("need at least one frequency")
    if not alpha > 0:
        raise InputError("alpha must be positive")
    rng = np.random.default_rng(seed)
    freqs = rng.normal(0.0, 1.0 / np.sqrt(alpha), size=(n_freq, q))
    return RffMap(frequencies=freqs, seed=seed)
