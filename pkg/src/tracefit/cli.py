"""Command-line entry point.

Subcommands
-----------
run      dynamic fitting loop; writes trajectory.csv, summary.txt,
         config.json and plots.gp
compare  fitted-trace error against Rademacher Monte Carlo; writes compare.csv
estimate one plain Monte Carlo estimate (hutchinson, unit or importance)

The default output directory is ``$TRACEFIT_OUTPUT_DIR`` or ``./tracefit_out``.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
from pathlib import Path

import numpy as np

from .approx_diag import diag_from_lowrank, diag_inverse_from_ilu, ilu_factorize, smallest_singular_triplets
from .dynamics import DynamicConfig, DynamicTrajectory, compare_table, run_dynamic
from .estimators import hutchinson_trace, importance_sampling_trace, unit_vector_trace
from .matrix_core import ORACLE_CAP, SparseMatrix, dense_inverse_diagonal, gen_heatflow, gen_poisson2d, read_matrix_market
from .solver import ColumnSolver

OUTPUT_ENV = "TRACEFIT_OUTPUT_DIR"
TRAJECTORY_COLUMNS = (
    "i", "k", "trace_fit", "var_hutch_ainv", "var_hutch_e", "var_unit_efit",
    "trace_err_est", "trace_err_actual",
    "unit_var_hutch_ainv", "unit_var_hutch_e", "unit_var_unit_efit",
)
COMPARE_COLUMNS = ("n", "trace", "hutch_ainv", "ilu_pchip", "ilu_hutch_e",
                   "svd_pchip", "svd_hutch_e", "bounds_pchip")

log = logging.getLogger("tracefit")


class CliError(Exception):
    """A user-facing failure; the message is printed and the exit code is 1."""


def fmt(x) -> str:
    """10 significant digits; ``None`` becomes an empty field."""
    if x is None:
        return ""
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return format(float(x), ".10g")


def parse_generator(text: str) -> SparseMatrix:
    """``poisson2d:K`` or ``heatflow:K:ALPHA``."""
    parts = text.split(":")
    try:
        if parts[0] == "poisson2d" and len(parts) == 2:
            return gen_poisson2d(int(parts[1]))
        if parts[0] == "heatflow" and len(parts) == 3:
            return gen_heatflow(int(parts[1]), float(parts[2]))
    except ValueError as exc:
        raise CliError(f"bad generator {text!r}: {exc}") from exc
    raise CliError(f"bad generator {text!r}; expected poisson2d:K or heatflow:K:ALPHA")


def load_matrix(args) -> tuple[SparseMatrix, str]:
    if (args.gen is None) == (args.matrix is None):
        raise CliError("give exactly one of --gen or --matrix")
    if args.gen is not None:
        return parse_generator(args.gen), f"gen:{args.gen}"
    path = Path(args.matrix)
    if not path.is_file():
        raise CliError(f"matrix file not found: {path}")
    try:
        return read_matrix_market(path), f"file:{path}"
    except ValueError as exc:
        raise CliError(f"cannot read {path}: {exc}") from exc


def output_dir(args) -> Path:
    out = Path(args.out or os.environ.get(OUTPUT_ENV) or "tracefit_out")
    out.mkdir(parents=True, exist_ok=True)
    return out


def write_trajectory(path: Path, traj: DynamicTrajectory, with_actual: bool) -> None:
    cols = [c for c in TRAJECTORY_COLUMNS if with_actual or c != "trace_err_actual"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for r in traj.records:
            vals = {
                "i": r.step, "k": r.k, "trace_fit": r.trace_fit,
                "var_hutch_ainv": r.var_hutch_ainv, "var_hutch_e": r.var_hutch_e,
                "var_unit_efit": r.var_unit_efit, "trace_err_est": r.trace_err_est,
                "trace_err_actual": r.trace_err_actual,
                "unit_var_hutch_ainv": r.unit_var_hutch_ainv,
                "unit_var_hutch_e": r.unit_var_hutch_e,
                "unit_var_unit_efit": r.unit_var_unit_efit,
            }
            w.writerow([fmt(vals[c]) for c in cols])


def read_trajectory(path) -> list[dict]:
    """Parse trajectory.csv back; empty fields become ``None``."""
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    out = []
    for row in rows:
        rec = {}
        for key, val in row.items():
            if val == "":
                rec[key] = None
            elif key in ("i", "k"):
                rec[key] = int(val)
            else:
                rec[key] = float(val)
        out.append(rec)
    return out


PLOT_TEMPLATE = """\
# gnuplot script; run with: gnuplot plots.gp
set datafile separator ","
set terminal pngcairo size 900,600
set key autotitle columnhead
set logscale y
set format y "%.0e"
set xlabel "fitting points"

set output "trace_error.png"
set title "Relative trace error"
set ylabel "relative error"
plot "trajectory.csv" using 1:7 with linespoints title "estimated"{actual}

set output "variance.png"
set title "Variance per sample"
set ylabel "variance"
plot "trajectory.csv" using 1:(abs(${vh})) with linespoints title "Hutchinson on A^-1", \\
     "" using 1:(abs(${ve})) with linespoints title "Hutchinson on E", \\
     "" using 1:(abs(${vf})) with linespoints title "unit vector on E_fit"
"""


def plot_script(with_actual: bool) -> str:
    cols = [c for c in TRAJECTORY_COLUMNS if with_actual or c != "trace_err_actual"]
    pos = {c: cols.index(c) + 1 for c in cols}
    actual = ', \\\n     "" using 1:8 with linespoints title "actual"' if with_actual else ""
    return PLOT_TEMPLATE.format(actual=actual, vh=pos["unit_var_hutch_ainv"],
                                ve=pos["unit_var_hutch_e"], vf=pos["unit_var_unit_efit"])


def write_config(path: Path, echo: dict) -> None:
    with open(path, "w") as fh:
        json.dump(echo, fh, indent=2, sort_keys=True)
        fh.write("\n")


def cmd_run(args) -> int:
    A, source = load_matrix(args)
    cfg = DynamicConfig(
        approx=args.approx, model=args.model, max_pts=args.max_pts, s_mc=args.s_mc,
        tol=args.tol, droptol=args.droptol, ilu_method=args.ilu, seed=args.seed,
        oracle=args.oracle, target_rel_error=args.target_rel_error,
    )
    try:
        cfg.validate(A.n)
    except ValueError as exc:
        raise CliError(str(exc)) from exc
    if cfg.oracle and A.n > ORACLE_CAP:
        raise CliError(f"--oracle needs n <= {ORACLE_CAP}, got {A.n}")
    out = output_dir(args)
    echo = {"matrix": source, "n": A.n, "nnz": A.nnz, **cfg.to_dict()}
    write_config(out / "config.json", echo)

    traj = run_dynamic(A, cfg)
    write_trajectory(out / "trajectory.csv", traj, cfg.oracle)
    (out / "plots.gp").write_text(plot_script(cfg.oracle))
    final = traj.final
    lines = [
        f"matrix: {source}",
        f"n: {A.n}",
        f"seed: {cfg.seed}",
        f"status: {traj.status}",
        f"steps: {len(traj.records)}",
        f"columns_solved: {traj.solve_count}",
        f"final_trace: {fmt(final.trace_fit) if final else ''}",
        f"final_trace_err_est: {fmt(final.trace_err_est) if final else ''}",
        f"chosen_followup: {traj.chosen_followup or ''}",
    ]
    if traj.trace_exact is not None:
        lines.append(f"trace_exact: {fmt(traj.trace_exact)}")
        lines.append(f"final_trace_err_actual: {fmt(final.trace_err_actual) if final else ''}")
    if traj.error:
        lines.append(f"error: {traj.error}")
    (out / "summary.txt").write_text("\n".join(lines) + "\n")
    print("\n".join(lines))
    if traj.status != "complete":
        raise CliError(f"run stopped early: {traj.error}")
    return 0


def cmd_compare(args) -> int:
    A, source = load_matrix(args)
    if A.n > ORACLE_CAP:
        raise CliError(f"compare needs an oracle-sized matrix (n <= {ORACLE_CAP}), got {A.n}")
    out = output_dir(args)
    write_config(out / "config.json", {"matrix": source, "n": A.n, "s": args.s,
                                       "fit_pts": args.fit_pts, "droptol": args.droptol,
                                       "ilu_method": args.ilu})
    row = compare_table(A, s=args.s, fit_pts=args.fit_pts, droptol=args.droptol,
                        ilu_method=args.ilu)
    with open(out / "compare.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("matrix",) + COMPARE_COLUMNS)
        w.writerow([source] + [fmt(row[c]) for c in COMPARE_COLUMNS])
    for c in COMPARE_COLUMNS:
        print(f"{c}: {fmt(row[c])}")
    return 0


def _approx_diagonal(A, kind, args):
    if kind == "ilu":
        return diag_inverse_from_ilu(ilu_factorize(A, args.droptol, args.ilu)).M
    return diag_from_lowrank(smallest_singular_triplets(A, min(2 * args.s, A.n))).M


def cmd_estimate(args) -> int:
    A, source = load_matrix(args)
    if args.method == "hutchinson":
        solver = ColumnSolver(A, tol=args.tol)
        stats = hutchinson_trace(solver.apply_inverse, args.s, args.seed, n=A.n)
    else:
        solver = ColumnSolver(A, tol=args.tol)
        diag = lambda i: solver.solve([i])[0].d  # noqa: E731
        if args.method == "unit":
            stats = unit_vector_trace(diag, args.s, args.seed, n=A.n)
        else:
            M = _approx_diagonal(A, args.approx, args)
            stats = importance_sampling_trace(diag, M, args.s, args.seed)
    std = math.sqrt(stats.sample_variance / stats.sample_count)
    print(f"matrix: {source}")
    print(f"method: {args.method}")
    print(f"estimate: {fmt(stats.estimate)}")
    print(f"std_error: {fmt(std)}")
    print(f"samples: {stats.sample_count}")
    print(f"seed: {args.seed}")
    if args.oracle:
        if A.n > ORACLE_CAP:
            raise CliError(f"--oracle needs n <= {ORACLE_CAP}, got {A.n}")
        print(f"trace_exact: {fmt(dense_inverse_diagonal(A).sum())}")
    return 0


def _matrix_args(p):
    g = p.add_argument_group("matrix")
    g.add_argument("--gen", help="poisson2d:K or heatflow:K:ALPHA")
    g.add_argument("--matrix", help="Matrix Market file")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tracefit", description=__doc__.split("\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="dynamic fitting loop")
    _matrix_args(p)
    p.add_argument("--approx", choices=("ilu", "svd", "bounds"), default="svd")
    p.add_argument("--model", choices=("linear", "pchip"), default="pchip")
    p.add_argument("--max-pts", type=int, default=20)
    p.add_argument("--s-mc", type=int, default=10)
    p.add_argument("--tol", type=float, default=1e-10)
    p.add_argument("--droptol", type=float, default=1e-2)
    p.add_argument("--ilu", choices=("ilutp", "ilu0"), default="ilutp")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--oracle", action="store_true", help="also report errors against a dense inverse")
    p.add_argument("--target-rel-error", type=float, default=None)
    p.add_argument("--out", help=f"output directory (default ${OUTPUT_ENV})")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("compare", help="fitted trace vs Monte Carlo errors")
    _matrix_args(p)
    p.add_argument("--s", type=int, default=20, help="Monte Carlo sample budget")
    p.add_argument("--fit-pts", type=int, default=20)
    p.add_argument("--droptol", type=float, default=1e-2)
    p.add_argument("--ilu", choices=("ilutp", "ilu0"), default="ilutp")
    p.add_argument("--out")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("estimate", help="plain Monte Carlo estimate")
    _matrix_args(p)
    p.add_argument("--method", choices=("hutchinson", "unit", "importance"), default="hutchinson")
    p.add_argument("--approx", choices=("ilu", "svd"), default="ilu",
                   help="source of M for importance sampling")
    p.add_argument("--s", type=int, default=20)
    p.add_argument("--tol", type=float, default=1e-10)
    p.add_argument("--droptol", type=float, default=1e-2)
    p.add_argument("--ilu", choices=("ilutp", "ilu0"), default="ilutp")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--oracle", action="store_true")
    p.set_defaults(func=cmd_estimate)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except CliError as exc:
        print(f"tracefit: error: {exc}", file=sys.stderr)
        return 1
    except (ValueError, ArithmeticError, OSError) as exc:
        print(f"tracefit: error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
