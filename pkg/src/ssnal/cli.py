"""Command-line interface: solve-qp, train, predict, cv, bench.

Exit codes: 0 success, 2 input error, 3 non-convergence.  Reports are JSON
(a superset of SolveReport, see schemas/solve_report.schema.json); tables are
CSV.  ``--seed`` governs every stochastic component of a command.
"""

import argparse
import csv
import json
import logging
import sys
import time

import numpy as np

from . import svm
from .apg import ApgOptions, apg_solve
from .data import (
    conform_features,
    fit_unit_scaler,
    parse_libsvm,
    scale_unit_box,
    split_train_test,
)
from .errors import InputError, SsnalError
from .kernels import DenseOperator, KernelOperator, KernelSpec
from .projection import BoxLineSet
from .solver import AlmOptions, QpProblem, alm_solve

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_NOT_CONVERGED = 3


def _report_dict(report, n, extra=None):
    out = {
        "solver": report.solver,
        "n": int(n),
        "kkt_residual": report.kkt_residual,
        "outer_iters": report.outer_iters,
        "avg_inner_iters": report.avg_inner_iters,
        "total_inner_iters": report.total_inner_iters,
        "unbounded_support_count": report.unbounded_support_count,
        "objective": report.objective,
        "wall_time": report.wall_time,
        "converged": report.converged,
        "warnings": list(report.warnings),
    }
    if extra:
        out.update(extra)
    return out


def _emit(payload, out_path):
    text = json.dumps(payload, indent=2)
    if out_path:
        with open(out_path, "w", encoding="utf-8") as handle:
            handle.write(text + "\n")
    else:
        print(text)


def _load_vector(spec_text, n=None):
    try:
        value = float(spec_text)
    except ValueError:
        vec = np.loadtxt(spec_text, delimiter=",", ndmin=1)
        return np.asarray(vec, dtype=float)
    if n is None:
        raise InputError("scalar bound needs a known dimension")
    return np.full(n, value)


def _kernel_spec(args):
    return KernelSpec(kind=args.kernel, alpha=args.alpha)


def _cmd_solve_qp(args):
    if args.kernel_data:
        dataset = parse_libsvm(args.data)
        q_op = KernelOperator(dataset.features, _kernel_spec(args))
        n = q_op.n
    else:
        q_matrix = np.loadtxt(args.data, delimiter=",", ndmin=2)
        q_op = DenseOperator(q_matrix)
        n = q_op.n
    c = _load_vector(args.c, n)
    a = _load_vector(args.a, n)
    l = _load_vector(args.l, n)
    u = _load_vector(args.u, n)
    problem = QpProblem(q_op=q_op, c=c, constraint=BoxLineSet(a=a, d=args.d, l=l, u=u))
    problem.spot_check()

    if args.solver == "apg":
        report = apg_solve(problem, ApgOptions(tol_kkt=args.tol, max_iters=args.max_iters))
    else:
        report = alm_solve(problem, AlmOptions(tol_kkt=args.tol, max_outer=args.max_outer))
    _emit(_report_dict(report, n, {"x": report.x_opt.tolist()}), args.out)
    return EXIT_OK if report.converged else EXIT_NOT_CONVERGED


def _svm_config(args):
    approx, approx_size = svm.APPROX_EXACT, 0
    if args.approx != "exact":
        kind, _, size = args.approx.partition(":")
        if kind not in ("nystrom", "rff") or not size.isdigit():
            raise InputError(f"bad --approx {args.approx!r}; use exact|nystrom:R|rff:N")
        approx, approx_size = kind, int(size)
    task = svm.CLASSIFICATION if args.task == "csvc" else svm.REGRESSION
    return svm.SvmConfig(
        task=task,
        C=args.C,
        kernel=_kernel_spec(args),
        epsilon=args.epsilon,
        approx=approx,
        approx_size=approx_size,
        seed=args.seed,
    )


def _prepare_training_data(args, config):
    dataset = parse_libsvm(args.data)
    feature_scaler = None
    target_scaler = None
    if not args.no_scale:
        dataset, feature_scaler = scale_unit_box(dataset)
        if config.task == svm.REGRESSION:
            target_scaler = fit_unit_scaler(dataset.targets[:, None])
            dataset.targets = target_scaler.transform(dataset.targets[:, None])[:, 0]
    return dataset, feature_scaler, target_scaler


def _cmd_train(args):
    config = _svm_config(args)
    dataset, feature_scaler, target_scaler = _prepare_training_data(args, config)
    alm_opts = AlmOptions(tol_kkt=args.tol, max_outer=args.max_outer)
    model, report = svm.train(
        dataset.features, dataset.targets, config,
        alm_opts=alm_opts, warm_start_freqs=args.warm_start_rff,
    )
    _save_model_with_scalers(model, args.out, feature_scaler, target_scaler)
    metrics = svm.evaluate(model, dataset.features, dataset.targets)
    _emit(_report_dict(report, dataset.n, {"train_metrics": metrics, "model": args.out}),
          args.report)
    return EXIT_OK if report.converged else EXIT_NOT_CONVERGED


def _save_model_with_scalers(model, path, feature_scaler, target_scaler):
    svm.save_model(model, path)
    if feature_scaler is None and target_scaler is None:
        return
    stored = dict(np.load(path, allow_pickle=False))
    if feature_scaler is not None:
        stored["feat_min"] = feature_scaler.col_min
        stored["feat_span"] = feature_scaler.col_span
    if target_scaler is not None:
        stored["target_min"] = target_scaler.col_min
        stored["target_span"] = target_scaler.col_span
    np.savez(path, **stored)


def _load_model_with_scalers(path):
    from .data import BoxScaler

    model = svm.load_model(path)
    feature_scaler = target_scaler = None
    with np.load(path, allow_pickle=False) as data:
        if "feat_min" in data:
            feature_scaler = BoxScaler(data["feat_min"], data["feat_span"])
        if "target_min" in data:
            target_scaler = BoxScaler(data["target_min"], data["target_span"])
    return model, feature_scaler, target_scaler


def _cmd_predict(args):
    model, feature_scaler, target_scaler = _load_model_with_scalers(args.model)
    dataset = conform_features(parse_libsvm(args.data), model.q if feature_scaler is None
                               else feature_scaler.col_min.size)
    features = dataset.features
    if feature_scaler is not None:
        features = feature_scaler.transform(features, clamp=True)
    values = svm.decision_function(model, features)
    if args.out:
        np.savetxt(args.out, values, fmt="%.17g")
    targets = dataset.targets
    metrics = {}
    if model.config.task == svm.CLASSIFICATION:
        pred = np.where(values >= 0.0, 1.0, -1.0)
        metrics["accuracy"] = float(np.mean(pred == targets))
    else:
        scaled_targets = targets
        if target_scaler is not None:
            scaled_targets = target_scaler.transform(targets[:, None])[:, 0]
        metrics["mse"] = float(np.mean((scaled_targets - values) ** 2))
        if target_scaler is not None:
            raw_pred = target_scaler.inverse(values[:, None])[:, 0]
            metrics["mse_raw"] = float(np.mean((targets - raw_pred) ** 2))
    _emit({"n": int(dataset.n), "metrics": metrics, "predictions": args.out or None}, None)
    return EXIT_OK


def _cmd_cv(args):
    with open(args.grid, "r", encoding="utf-8") as handle:
        rows = json.load(handle)
    if not isinstance(rows, list) or not rows:
        raise InputError("grid file must hold a non-empty JSON list of configs")
    task = svm.CLASSIFICATION if args.task == "csvc" else svm.REGRESSION
    grid = [
        svm.SvmConfig(
            task=task,
            C=float(row["C"]),
            kernel=KernelSpec(kind=row.get("kernel", "linear"),
                              alpha=float(row.get("alpha", 1.0))),
            epsilon=float(row.get("epsilon", 0.0)),
            seed=args.seed,
        )
        for row in rows
    ]
    dataset = parse_libsvm(args.data)
    dataset, _ = scale_unit_box(dataset)
    if task == svm.REGRESSION:
        scaler = fit_unit_scaler(dataset.targets[:, None])
        dataset.targets = scaler.transform(dataset.targets[:, None])[:, 0]
    alm_opts = AlmOptions(tol_kkt=args.tol)
    best, table = svm.cross_validate(
        dataset.features, dataset.targets, grid,
        folds=args.folds, seed=args.seed, alm_opts=alm_opts,
    )
    writer = csv.writer(open(args.out, "w", newline="") if args.out else sys.stdout)
    writer.writerow(["C", "kernel", "alpha", "epsilon", "mean_metric"]
                    + [f"fold{i}" for i in range(args.folds)])
    for row in table:
        cfg = row["config"]
        writer.writerow([cfg.C, cfg.kernel.kind, cfg.kernel.alpha, cfg.epsilon,
                         row["mean"]] + row["scores"])
    print(json.dumps({
        "best": {"C": best.C, "kernel": best.kernel.kind, "alpha": best.kernel.alpha,
                 "epsilon": best.epsilon},
    }))
    return EXIT_OK


def _cmd_bench(args):
    config = _svm_config(args)
    dataset, feature_scaler, target_scaler = _prepare_training_data(args, config)
    if args.test:
        test = conform_features(parse_libsvm(args.test), dataset.q)
        if feature_scaler is not None:
            test.features = feature_scaler.transform(test.features, clamp=True)
        if target_scaler is not None:
            test.targets = target_scaler.transform(test.targets[:, None])[:, 0]
        train_set = dataset
    else:
        train_set, test = split_train_test(dataset, 0.8, args.seed)

    solvers = [s.strip() for s in args.solvers.split(",") if s.strip()]
    if not solvers or any(s not in ("ssnal", "apg") for s in solvers):
        raise InputError(f"bad --solvers {args.solvers!r}; use a subset of ssnal,apg")

    rows = []
    all_converged = True
    for solver in solvers:
        for rep in range(args.repeat):
            if config.task == svm.CLASSIFICATION:
                problem = svm.build_csvc_dual(train_set.features, train_set.targets, config)
            else:
                problem = svm.build_svr_dual(train_set.features, train_set.targets, config)
            t0 = time.perf_counter()
            if solver == "apg":
                report = apg_solve(problem, ApgOptions(tol_kkt=args.tol,
                                                       max_iters=args.max_iters))
            else:
                report = alm_solve(problem, AlmOptions(tol_kkt=args.tol,
                                                       max_outer=args.max_outer))
            elapsed = time.perf_counter() - t0
            model = svm._make_model(report.x_opt, train_set.features, train_set.targets,
                                    config)
            metrics = svm.evaluate(model, test.features, test.targets)
            metric = metrics.get("accuracy", metrics.get("mse"))
            all_converged &= report.converged
            rows.append([solver, rep, report.kkt_residual, elapsed, report.outer_iters,
                         report.avg_inner_iters, report.total_inner_iters,
                         report.unbounded_support_count, metric])

    writer = csv.writer(open(args.out, "w", newline="") if args.out else sys.stdout)
    writer.writerow(["solver", "repeat", "rkkt", "time_s", "outer_iters",
                     "avg_inner_iters", "total_inner_iters", "suppvec", "metric"])
    writer.writerows(rows)
    return EXIT_OK if all_converged else EXIT_NOT_CONVERGED


def build_parser():
    parser = argparse.ArgumentParser(prog="ssnal",
                                     description="Box-and-line QP / SVM dual solver")
    parser.add_argument("--verbose", action="store_true", help="log solver progress")
    sub = parser.add_subparsers(dest="command", required=True)

    qp = sub.add_parser("solve-qp", help="solve a QP given explicitly")
    qp.add_argument("--data", required=True, help="dense Q as CSV, or LIBSVM file with --kernel-data")
    qp.add_argument("--kernel-data", action="store_true",
                    help="treat --data as a LIBSVM dataset and build Q from the kernel")
    qp.add_argument("--kernel", default="linear", choices=["linear", "rbf"])
    qp.add_argument("--alpha", type=float, default=1.0)
    qp.add_argument("--c", required=True, help="CSV path or scalar")
    qp.add_argument("--a", required=True, help="CSV path or scalar")
    qp.add_argument("--d", type=float, required=True)
    qp.add_argument("--l", required=True, help="CSV path or scalar")
    qp.add_argument("--u", required=True, help="CSV path or scalar")
    qp.add_argument("--solver", default="ssnal", choices=["ssnal", "apg"])
    qp.add_argument("--tol", type=float, default=1e-6)
    qp.add_argument("--max-outer", type=int, default=200)
    qp.add_argument("--max-iters", type=int, default=20000)
    qp.add_argument("--out")
    qp.set_defaults(func=_cmd_solve_qp)

    def add_svm_args(p, with_task=True):
        p.add_argument("--data", required=True)
        if with_task:
            p.add_argument("--task", default="csvc", choices=["csvc", "svr"])
        p.add_argument("--C", type=float, default=1.0)
        p.add_argument("--kernel", default="linear", choices=["linear", "rbf"])
        p.add_argument("--alpha", type=float, default=1.0)
        p.add_argument("--epsilon", type=float, default=0.1)
        p.add_argument("--tol", type=float, default=1e-3)
        p.add_argument("--max-outer", type=int, default=200)
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--no-scale", action="store_true",
                       help="skip [0,1] feature/target scaling")

    tr = sub.add_parser("train", help="train an SVM model")
    add_svm_args(tr)
    tr.add_argument("--approx", default="exact", help="exact | nystrom:R | rff:N")
    tr.add_argument("--warm-start-rff", type=int, default=None, metavar="N",
                    help="warm start from an N-frequency RFF solve")
    tr.add_argument("--out", required=True, help="model file (.npz)")
    tr.add_argument("--report", help="write the JSON report here instead of stdout")
    tr.set_defaults(func=_cmd_train, approx_default=True)

    pr = sub.add_parser("predict", help="predict with a trained model")
    pr.add_argument("--model", required=True)
    pr.add_argument("--data", required=True)
    pr.add_argument("--out", help="write one prediction per line")
    pr.set_defaults(func=_cmd_predict)

    cv = sub.add_parser("cv", help="cross-validate a configuration grid")
    add_svm_args(cv)
    cv.add_argument("--grid", required=True, help="JSON list of {C, kernel, alpha, epsilon}")
    cv.add_argument("--folds", type=int, default=10)
    cv.add_argument("--out", help="CSV table path (default: stdout)")
    cv.set_defaults(func=_cmd_cv)

    be = sub.add_parser("bench", help="compare solvers on one dataset")
    add_svm_args(be)
    be.add_argument("--approx", default="exact")
    be.add_argument("--solvers", default="ssnal,apg")
    be.add_argument("--repeat", type=int, default=1)
    be.add_argument("--max-iters", type=int, default=20000)
    be.add_argument("--test", help="held-out LIBSVM file (default: 80/20 split)")
    be.add_argument("--out")
    be.set_defaults(func=_cmd_bench)

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.verbose:
        logging.basicConfig(level=logging.INFO, format="%(message)s")
    try:
        return args.func(args)
    except (SsnalError, OSError, ValueError) as exc:
        print(f"ssnal: error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
