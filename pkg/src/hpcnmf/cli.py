"""``hpcnmf-bench``: run one NMF configuration on the virtual cluster and report.

Exit codes: 0 success, 1 solver failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import asdict

from .algorithms import NmfConfig, hpc_nmf, naive_parallel_nmf, select_grid, sequential_nmf
from .costmodel import bandwidth_lower_bound, predict_hpc, predict_naive
from .dataio import PRESETS, gen_dense_synthetic, gen_sparse_er, read_matrix_market
from .errors import BppConvergenceError, ConfigError, ContractViolation, MatrixMarketError, SingularSubsystemError
from .grid import GridShape
from .ledger import CATEGORIES, ModelParams
from .matrix import is_sparse, nnz
from .nls import SolverChoice
from .report import BenchReport, compare_runs, emit_report, load_report

EXIT_OK, EXIT_SOLVER, EXIT_USAGE = 0, 1, 2


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="hpcnmf-bench", description=__doc__.splitlines()[0])
    ap.add_argument("--algo", choices=["naive", "hpc", "sequential"], default="hpc")
    ap.add_argument("--solver", choices=["mu", "hals", "bpp"], default="bpp")
    ap.add_argument("--grid", default=None, help="auto, PRxPC, 1d-row or 1d-col (hpc only)")
    ap.add_argument("--m", type=int, default=256)
    ap.add_argument("--n", type=int, default=256)
    ap.add_argument("--k", type=int, default=8)
    ap.add_argument("--p", type=int, default=4)
    ap.add_argument("--iters", type=int, default=10)
    ap.add_argument("--synthetic", choices=["dense", "sparse"], default="dense")
    ap.add_argument("--density", type=float, default=0.001)
    ap.add_argument("--noise-std", type=float, default=0.1)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--input", metavar="FILE", help="Matrix Market file; overrides --synthetic")
    ap.add_argument("--preset", choices=sorted(PRESETS),
                    help="reference dataset shape; sets --synthetic, --m, --n and --density")
    ap.add_argument("--scale", type=int, default=1,
                    help="divide preset dimensions by this factor")
    ap.add_argument("--tol", type=float, default=None, help="relative residual-change tolerance")
    ap.add_argument("--no-residual", action="store_true")
    ap.add_argument("--predict-only", action="store_true")
    ap.add_argument("--mode", choices=["concurrent", "serialized"], default="concurrent")
    ap.add_argument("--workers", type=int, default=None)
    ap.add_argument("--out", default=".", metavar="DIR")
    ap.add_argument("--format", choices=["json", "csv", "both"], default="both")
    ap.add_argument("--alpha", type=float, default=ModelParams.alpha)
    ap.add_argument("--beta", type=float, default=ModelParams.beta)
    ap.add_argument("--gamma", type=float, default=ModelParams.gamma)
    ap.add_argument("--compare", nargs=2, metavar=("A.json", "B.json"),
                    help="compare two saved reports instead of running")
    return ap


def _grid_for(args, m, n) -> GridShape | None:
    if args.algo == "naive":
        return GridShape(args.p, 1)
    if args.algo == "sequential":
        return GridShape(1, 1)
    spec = args.grid or "auto"
    if spec == "auto":
        return select_grid(m, n, args.p)
    if spec == "1d-row":
        return GridShape(args.p, 1)
    if spec == "1d-col":
        return GridShape(1, args.p)
    grid = GridShape.parse(spec)
    if grid.p != args.p:
        raise ConfigError(f"grid {grid} does not have p={args.p} ranks")
    return grid


def _summary(report: BenchReport) -> str:
    lines = [f"{'category':<14}{'wall_s':>12}{'words':>14}{'messages':>10}{'flops':>16}{'modeled':>12}"]
    for c in CATEGORIES:
        t = report.totals.get(c)
        if t is None:
            continue
        lines.append(f"{c:<14}{t['wall_s']:>12.4g}{float(t['words']):>14.6g}{t['messages']:>10d}"
                     f"{float(t['flops']):>16.6g}{t['modeled_time']:>12.4g}")
    if report.iterations:
        last = report.iterations[-1]
        lines.append(f"iterations: {len(report.iterations)}  final relative residual: "
                     f"{last['relative_residual']}")
    return "\n".join(lines)


def _compare(paths) -> int:
    try:
        table = compare_runs(load_report(paths[0]), load_report(paths[1]))
    except (OSError, ValueError, KeyError) as e:
        print(f"hpcnmf-bench: {e}", file=sys.stderr)
        return EXIT_USAGE
    for c, r in table["category_word_ratio"].items():
        print(f"{c:<14}{r:>12.6g}")
    print(f"total words A/B: {table['total_word_ratio']:.6g}")
    print(f"speedup of A over B: {table['speedup']:.6g}")
    for side, diff in table["prediction_mismatch"].items():
        if diff:
            print(f"report {side}: measured words differ from prediction by {diff}")
    return EXIT_OK


def run_bench(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    if args.compare:
        return _compare(args.compare)
    if args.preset:
        if args.scale < 1:
            print("hpcnmf-bench: --scale must be >= 1", file=sys.stderr)
            return EXIT_USAGE
        preset = PRESETS[args.preset]
        args.synthetic = preset["kind"]
        args.m = max(1, preset["m"] // args.scale)
        args.n = max(1, preset["n"] // args.scale)
        if "density" in preset:
            args.density = min(1.0, preset["density"])
    if args.grid is not None and args.algo != "hpc":
        print("hpcnmf-bench: --grid only applies to --algo hpc", file=sys.stderr)
        return EXIT_USAGE
    if args.algo == "sequential" and args.p != 1:
        print("hpcnmf-bench: --algo sequential runs on one rank; use --p 1", file=sys.stderr)
        return EXIT_USAGE

    try:
        params = ModelParams(args.alpha, args.beta, args.gamma)
        if args.input:
            a = read_matrix_market(args.input)
        elif args.predict_only:
            a = None
        elif args.synthetic == "dense":
            a = gen_dense_synthetic(args.m, args.n, args.seed, args.noise_std)
        else:
            a = gen_sparse_er(args.m, args.n, args.density, args.seed)
        m, n = a.shape if a is not None else (args.m, args.n)
        if args.predict_only and a is None and args.synthetic == "sparse":
            total_nnz = round(args.density * m * n)
        else:
            total_nnz = nnz(a) if a is not None and is_sparse(a) else None
        grid = _grid_for(args, m, n)
        config = NmfConfig(k=args.k, max_iters=args.iters, solver=SolverChoice(args.solver),
                           seed=args.seed, residual_tolerance=args.tol, grid=grid,
                           compute_residual=not args.no_residual)
        config.check_shape(m, n)
    except (ConfigError, ContractViolation, MatrixMarketError, OSError, ValueError) as e:
        print(f"hpcnmf-bench: {e}", file=sys.stderr)
        return EXIT_USAGE

    if args.algo == "naive":
        prediction = predict_naive(m, n, args.k, args.p, total_nnz)
    else:
        prediction = predict_hpc(m, n, args.k, grid, total_nnz)
    lower = bandwidth_lower_bound(m, n, args.k, grid.p)
    echo = {"algo": args.algo, "solver": args.solver, "m": m, "n": n, "k": args.k,
            "p": grid.p, "iters": args.iters, "seed": args.seed, "mode": args.mode,
            "input": args.input, "synthetic": None if args.input else args.synthetic,
            "density": args.density, "noise_std": args.noise_std, "tol": args.tol,
            "residual": not args.no_residual, "nnz": total_nnz, "model": asdict(params)}

    if args.predict_only:
        report = BenchReport(config=echo, grid=[grid.p_r, grid.p_c])
        report.set_prediction(prediction, lower)
    else:
        try:
            if args.algo == "sequential":
                result = sequential_nmf(a, config)
            elif args.algo == "naive":
                result = naive_parallel_nmf(a, config, args.p, mode=args.mode, workers=args.workers)
            else:
                result = hpc_nmf(a, config, grid=grid, mode=args.mode, workers=args.workers)
        except (BppConvergenceError, SingularSubsystemError) as e:
            print(f"hpcnmf-bench: solver failure: {e}", file=sys.stderr)
            return EXIT_SOLVER
        except ConfigError as e:
            print(f"hpcnmf-bench: {e}", file=sys.stderr)
            return EXIT_USAGE
        report = BenchReport.from_run(echo, result, params, prediction, lower)

    paths = emit_report(report, args.format, args.out)
    print(f"grid {report.grid[0]}x{report.grid[1]}  predicted words/iter {float(prediction.words):.6g}"
          f"  lower bound {lower.words:.6g}")
    if report.iterations:
        print(_summary(report))
    for path in paths:
        print(f"wrote {path}")
    return EXIT_OK


def main():
    sys.exit(run_bench())
