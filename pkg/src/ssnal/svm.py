"""C-SVC and SVR pipelines on top of the QP solver.

Builds the dual problems, recovers the bias from KKT conditions, predicts,
scores and cross-validates.  Training with an approximate kernel (Nystrom or
random Fourier features) swaps only the Q operator; prediction always uses
the exact kernel on the retained support vectors.
"""

import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import InputError
from .kernels import (
    BlockKernelOperator,
    KernelOperator,
    KernelSpec,
    LowRankOperator,
    kernel_cross,
    nystrom_build,
    rff_build,
)
from .projection import BoxLineSet
from .solver import AlmOptions, QpProblem, alm_solve

logger = logging.getLogger("ssnal")

CLASSIFICATION = "classification"
REGRESSION = "regression"

APPROX_EXACT = "exact"
APPROX_NYSTROM = "nystrom"
APPROX_RFF = "rff"

# Relative threshold separating bound-active duals from support coefficients.
SUPPORT_TOL = 1e-6


@dataclass(frozen=True)
class SvmConfig:
    task: str = CLASSIFICATION
    C: float = 1.0
    kernel: KernelSpec = field(default_factory=KernelSpec)
    epsilon: float = 0.0
    approx: str = APPROX_EXACT
    approx_size: int = 0
    seed: int = 0

    def __post_init__(self):
        if self.task not in (CLASSIFICATION, REGRESSION):
            raise InputError(f"unknown task {self.task!r}")
        if not self.C > 0:
            raise InputError("C must be positive")
        if self.epsilon < 0:
            raise InputError("epsilon must be non-negative")
        if self.approx not in (APPROX_EXACT, APPROX_NYSTROM, APPROX_RFF):
            raise InputError(f"unknown approximation {self.approx!r}")
        if self.approx != APPROX_EXACT and self.approx_size < 1:
            raise InputError("approximation size must be at least 1")


@dataclass
class SvmModel:
    """Trained model: dual solution plus everything prediction needs."""

    config: SvmConfig
    bias: float
    dual_x: np.ndarray
    support_indices: np.ndarray
    support_coef: np.ndarray
    support_features: np.ndarray
    n_train: int
    q: int


def _base_kernel_operator(features, config, labels=None):
    """Q operator for the configured kernel, exact or low-rank."""
    if config.approx == APPROX_EXACT:
        return KernelOperator(features, config.kernel, labels=labels)
    if config.approx == APPROX_NYSTROM:
        exact = KernelOperator(features, config.kernel)
        factor = nystrom_build(exact, config.approx_size, config.seed)
        z = factor.feature_matrix()
    else:
        rff = rff_build(features.shape[1], config.approx_size, config.kernel.alpha, config.seed)
        z = rff.transform(features)
    if labels is not None:
        z = labels[:, None] * z
    return LowRankOperator(z)


def build_csvc_dual(features, labels, config):
    """Classification dual: Q_ij = y_i y_j K_ij, c = -e, y'x = 0, 0 <= x <= C."""
    features = np.ascontiguousarray(features, dtype=float)
    labels = np.asarray(labels, dtype=float)
    n = features.shape[0]
    if labels.shape != (n,):
        raise InputError("labels must have one entry per sample")
    if not np.all(np.abs(labels) == 1.0):
        raise InputError("classification labels must be +1/-1")
    if n < 2 or np.unique(labels).size < 2:
        raise InputError("need samples from both classes")
    q_op = _base_kernel_operator(features, config, labels=labels)
    constraint = BoxLineSet(a=labels, d=0.0, l=np.zeros(n), u=np.full(n, config.C))
    return QpProblem(q_op=q_op, c=-np.ones(n), constraint=constraint)


def build_svr_dual(features, targets, config):
    """Regression dual over 2n variables (x, z) with the block operator
    [[K, -K], [-K, K]], c = (eps - y; eps + y), e'x - e'z = 0, bounds [0, C].

    With this layout the fitted function is sum_j (x_j - z_j) K(x_j, .) + b.
    """
    features = np.ascontiguousarray(features, dtype=float)
    targets = np.asarray(targets, dtype=float)
    n = features.shape[0]
    if targets.shape != (n,):
        raise InputError("targets must have one entry per sample")
    base = _base_kernel_operator(features, config)
    q_op = BlockKernelOperator(base)
    c = np.concatenate([config.epsilon - targets, config.epsilon + targets])
    a = np.concatenate([np.ones(n), -np.ones(n)])
    constraint = BoxLineSet(a=a, d=0.0, l=np.zeros(2 * n), u=np.full(2 * n, config.C))
    return QpProblem(q_op=q_op, c=c, constraint=constraint)


def _raw_decision(spec, support_features, support_coef, points):
    if support_coef.size == 0:
        return np.zeros(np.atleast_2d(points).shape[0])
    return kernel_cross(spec, points, support_features) @ support_coef


def _support_from_dual(dual_x, features, config):
    tol = SUPPORT_TOL * config.C
    if config.task == CLASSIFICATION:
        coef_full = dual_x
    else:
        n = dual_x.size // 2
        coef_full = dual_x[:n] - dual_x[n:]
    idx = np.flatnonzero(np.abs(coef_full) > tol)
    return idx, coef_full[idx]


def recover_bias(dual_x, features, targets, config):
    """Bias from the KKT conditions of the solved dual.

    Averages the KKT equation over free duals (strictly between the bounds);
    with no free dual, returns the midpoint of the interval the bound-active
    conditions leave feasible.  Decision values go through the same kernel
    path prediction uses.
    """
    dual_x = np.asarray(dual_x, dtype=float)
    if dual_x.size == 0:
        raise InputError("empty dual solution")
    targets = np.asarray(targets, dtype=float)
    cc = config.C
    tol = SUPPORT_TOL * cc
    sv_idx, sv_coef = _support_from_dual(dual_x, features, config)
    g = _raw_decision(config.kernel, features[sv_idx], sv_coef, features)

    if config.task == CLASSIFICATION:
        free = np.flatnonzero((dual_x > tol) & (dual_x < cc - tol))
        if free.size:
            return float(np.mean(targets[free] - g[free]))
        # y_i (g_i + b) >= 1 at the lower bound, <= 1 at the upper bound.
        lows, highs = [], []
        for i in range(dual_x.size):
            at_lower = dual_x[i] <= tol
            if targets[i] > 0:
                (lows if at_lower else highs).append(1.0 - g[i])
            else:
                (highs if at_lower else lows).append(-1.0 - g[i])
        return _interval_midpoint(lows, highs)

    n = dual_x.size // 2
    x_part, z_part = dual_x[:n], dual_x[n:]
    eps = config.epsilon
    contribs = []
    free_x = np.flatnonzero((x_part > tol) & (x_part < cc - tol))
    free_z = np.flatnonzero((z_part > tol) & (z_part < cc - tol))
    contribs.extend(targets[free_x] - eps - g[free_x])
    contribs.extend(targets[free_z] + eps - g[free_z])
    if contribs:
        return float(np.mean(contribs))
    lows, highs = [], []
    for i in range(n):
        if x_part[i] <= tol:
            lows.append(targets[i] - eps - g[i])
        else:
            highs.append(targets[i] - eps - g[i])
        if z_part[i] <= tol:
            highs.append(targets[i] + eps - g[i])
        else:
            lows.append(targets[i] + eps - g[i])
    return _interval_midpoint(lows, highs)


def _interval_midpoint(lows, highs):
    if lows and highs:
        return float((max(lows) + min(highs)) / 2.0)
    if lows:
        return float(max(lows))
    if highs:
        return float(min(highs))
    return 0.0


def decision_function(model, points):
    """Decision values / regression estimates for a block of points."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    if points.shape[1] != model.q:
        raise InputError(f"expected {model.q} features, got {points.shape[1]}")
    return _raw_decision(
        model.config.kernel, model.support_features, model.support_coef, points
    ) + model.bias


def predict(model, point):
    """Decision value (classify by sign) or regression estimate for one point."""
    return float(decision_function(model, np.asarray(point, dtype=float)[None, :])[0])


def evaluate(model, features, targets):
    """Accuracy (classification) or mean squared error (regression)."""
    targets = np.asarray(targets, dtype=float)
    if targets.size == 0:
        raise InputError("empty test set")
    values = decision_function(model, features)
    if model.config.task == CLASSIFICATION:
        pred = np.where(values >= 0.0, 1.0, -1.0)
        return {"accuracy": float(np.mean(pred == targets))}
    return {"mse": float(np.mean((targets - values) ** 2))}


def _make_model(dual_x, features, targets, config):
    sv_idx, sv_coef = _support_from_dual(dual_x, features, config)
    bias = recover_bias(dual_x, features, targets, config)
    return SvmModel(
        config=config,
        bias=bias,
        dual_x=dual_x,
        support_indices=sv_idx,
        support_coef=sv_coef,
        support_features=features[sv_idx].copy(),
        n_train=features.shape[0],
        q=features.shape[1],
    )


def warm_start_rff(features, targets, config, n_freq, seed):
    """Starting multiplier from a cheap solve of the RFF-approximated dual.

    Builds the low-rank problem (Q = Z Z' with labels folded in, Z the random
    Fourier feature matrix with ``n_freq`` frequencies, i.e. 2*n_freq
    columns), solves it to KKT tolerance 1e-3 and returns its solution.
    """
    approx_cfg = replace(config, approx=APPROX_RFF, approx_size=n_freq, seed=seed)
    if config.task == CLASSIFICATION:
        problem = build_csvc_dual(features, targets, approx_cfg)
    else:
        problem = build_svr_dual(features, targets, approx_cfg)
    opts = AlmOptions(tol_kkt=1e-3)
    report = alm_solve(problem, alm_opts=opts)
    return report.x_opt


def train(features, targets, config, alm_opts=None, ssn_opts=None, warm_start_freqs=None):
    """Build the dual, solve it, and package the trained model.

    Returns ``(model, report)``.  ``warm_start_freqs`` switches on the RFF
    warm start with that many frequencies.
    """
    features = np.ascontiguousarray(features, dtype=float)
    targets = np.asarray(targets, dtype=float)
    if config.task == CLASSIFICATION:
        problem = build_csvc_dual(features, targets, config)
    else:
        problem = build_svr_dual(features, targets, config)

    x0 = None
    if warm_start_freqs:
        x0 = warm_start_rff(features, targets, config, warm_start_freqs, config.seed)

    report = alm_solve(problem, alm_opts=alm_opts, ssn_opts=ssn_opts, x0=x0)
    model = _make_model(report.x_opt, features, targets, config)
    logger.info(
        "train task=%s n=%d suppvec_interior=%d suppvec_nonzero=%d rkkt=%.3e",
        config.task, features.shape[0], report.unbounded_support_count,
        int(np.count_nonzero(np.abs(report.x_opt) > SUPPORT_TOL * config.C)),
        report.kkt_residual,
    )
    return model, report


def _fold_score(features, targets, config, train_idx, val_idx, alm_opts, ssn_opts):
    model, _ = train(features[train_idx], targets[train_idx], config,
                     alm_opts=alm_opts, ssn_opts=ssn_opts)
    metrics = evaluate(model, features[val_idx], targets[val_idx])
    return metrics["accuracy" if config.task == CLASSIFICATION else "mse"]


def cross_validate(features, targets, grid, folds=10, seed=0, alm_opts=None, ssn_opts=None):
    """Seeded k-fold selection over a configuration grid.

    Returns ``(best_config, table)`` where the table has one row per config
    with its per-fold and mean validation metric.  Classification maximizes
    accuracy, regression minimizes MSE; ties break toward smaller C, then
    smaller kernel width.  The fold partition depends only on ``seed``.
    """
    if not grid:
        raise InputError("empty configuration grid")
    features = np.ascontiguousarray(features, dtype=float)
    targets = np.asarray(targets, dtype=float)
    n = features.shape[0]
    if folds < 2 or n < folds:
        raise InputError("need folds >= 2 and at least one sample per fold")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    parts = np.array_split(perm, folds)

    n_workers = int(os.environ.get("SSNAL_NUM_THREADS", "1"))
    table = []
    for config in grid:
        jobs = []
        for i in range(folds):
            val_idx = parts[i]
            train_idx = np.concatenate([parts[j] for j in range(folds) if j != i])
            jobs.append((train_idx, val_idx))
        if n_workers > 1:
            with ThreadPoolExecutor(max_workers=n_workers) as pool:
                futures = [
                    pool.submit(_fold_score, features, targets, config, tr, va,
                                alm_opts, ssn_opts)
                    for tr, va in jobs
                ]
                scores = [f.result() for f in futures]  # submission order
        else:
            scores = [
                _fold_score(features, targets, config, tr, va, alm_opts, ssn_opts)
                for tr, va in jobs
            ]
        table.append({"config": config, "scores": scores, "mean": float(np.mean(scores))})

    maximize = grid[0].task == CLASSIFICATION
    sign = -1.0 if maximize else 1.0
    best = min(
        table,
        key=lambda row: (sign * row["mean"], row["config"].C, row["config"].kernel.alpha),
    )
    return best["config"], table


def save_model(model, path):
    """Serialize to .npz; float64 arrays round-trip bit-exactly."""
    cfg = model.config
    np.savez(
        path,
        schema_version=1,
        task=cfg.task,
        kernel_kind=cfg.kernel.kind,
        kernel_alpha=cfg.kernel.alpha,
        C=cfg.C,
        epsilon=cfg.epsilon,
        approx=cfg.approx,
        approx_size=cfg.approx_size,
        seed=cfg.seed,
        bias=model.bias,
        dual_x=model.dual_x,
        support_indices=model.support_indices,
        support_coef=model.support_coef,
        support_features=model.support_features,
        n_train=model.n_train,
        q=model.q,
    )


def load_model(path):
    with np.load(path, allow_pickle=False) as data:
        version = int(data["schema_version"])
        if version != 1:
            raise InputError(f"unsupported model schema version {version}")
        config = SvmConfig(
            task=str(data["task"]),
            C=float(data["C"]),
            kernel=KernelSpec(kind=str(data["kernel_kind"]), alpha=float(data["kernel_alpha"])),
            epsilon=float(data["epsilon"]),
            approx=str(data["approx"]),
            approx_size=int(data["approx_size"]),
            seed=int(data["seed"]),
        )
        return SvmModel(
            config=config,
            bias=float(data["bias"]),
            dual_x=data["dual_x"],
            support_indices=data["support_indices"],
            support_coef=data["support_coef"],
            support_features=data["support_features"],
            n_train=int(data["n_train"]),
            q=int(data["q"]),
        )
