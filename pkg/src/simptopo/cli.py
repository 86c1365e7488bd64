"""Command-line runner.

``simptopo --problem cantilever --nx 40 --ny 20 --volfrac 0.5 --optimizer pg-add``
writes ``density.pgm``, ``density.csv`` and ``convergence.csv`` into ``--out``
and prints a ``key=value`` summary.  Exit status is 0 on convergence, 2 when
``--max-iters`` ran out (artifacts are still written) and 1 on any error.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
import tempfile
from dataclasses import replace
from pathlib import Path

import numpy as np

from .errors import SimpTopoError
from .optimizers import METHODS, ConvergenceRecord, OcConfig, PgConfig, run_optimization
from .problems import BUILTIN_NAMES, builtin_problem, load_problem
from .simp_model import DesignField, SimpMaterial, equilibrium
from .tension import TensionConfig, energy_split

EXIT_CONVERGED, EXIT_ERROR, EXIT_MAX_ITERS = 0, 1, 2

log = logging.getLogger(__name__)


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad usage, which this tool reserves for max_iters
    def error(self, message):
        raise _UsageError(message)


def atomic_write_text(path, text: str) -> None:
    """Write ``text`` to a sibling temp file, then rename it over ``path``."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "w", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _num(x) -> str:
    return f"{x:.17g}"


def density_pixels(field: DesignField, grid) -> np.ndarray:
    """Grey levels ``round_half_up(255 (1 - rho))``, top image row first."""
    img = grid.to_image(field.rho if isinstance(field, DesignField) else np.asarray(field))
    return np.floor(255.0 * (1.0 - img) + 0.5).astype(int)


def format_density_pgm(field: DesignField, grid) -> str:
    pix = density_pixels(field, grid)
    lines = ["P2", f"{grid.nx} {grid.ny}", "255"]
    lines += [" ".join(str(v) for v in row) for row in pix]
    return "\n".join(lines) + "\n"


def format_density_csv(field: DesignField, grid) -> str:
    img = grid.to_image(field.rho if isinstance(field, DesignField) else np.asarray(field))
    return "".join(",".join(_num(v) for v in row) + "\n" for row in img)


def format_convergence_csv(record: ConvergenceRecord) -> str:
    lines = [",".join(ConvergenceRecord.COLUMNS)]
    for it, *values in record.rows:
        lines.append(",".join([str(it)] + [_num(v) for v in values]))
    return "\n".join(lines) + "\n"


def emit_density_pgm(field, grid, path) -> None:
    atomic_write_text(path, format_density_pgm(field, grid))


def emit_density_csv(field, grid, path) -> None:
    atomic_write_text(path, format_density_csv(field, grid))


def emit_convergence_csv(record: ConvergenceRecord, path) -> None:
    atomic_write_text(path, format_convergence_csv(record))


def read_pgm(text: str) -> np.ndarray:
    """Parse an ASCII PGM written by :func:`emit_density_pgm`."""
    tokens = text.split()
    if not tokens or tokens[0] != "P2":
        raise ValueError("not an ASCII PGM (magic P2)")
    w, h, _maxval = (int(t) for t in tokens[1:4])
    return np.array(tokens[4:], dtype=int).reshape(h, w)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="simptopo", description="2D SIMP minimum-compliance topology optimization.")
    p.add_argument("--problem", default="cantilever",
                   help=f"builtin name ({', '.join(BUILTIN_NAMES)}) or path to a problem file")
    p.add_argument("--nx", type=int, help="elements along x (builtin problems, default 40)")
    p.add_argument("--ny", type=int, help="elements along y (builtin problems, default 20)")
    p.add_argument("--volfrac", type=float, help="volume fraction (default 0.5 or the file value)")
    p.add_argument("--penalty", type=float, help="SIMP penalty exponent (default 3)")
    p.add_argument("--optimizer", default="oc", choices=METHODS)
    p.add_argument("--move-limit", type=float, default=0.2, help="largest density change per iteration")
    p.add_argument("--damping", type=float, default=1.0, help="OC damping exponent on B_e")
    p.add_argument("--gamma", type=float, default=0.5,
                   help="projected-gradient step (dimensionless; exponent for pg-mult)")
    p.add_argument("--tension-k", type=float, help="run tension-only with this compressive reduction factor")
    p.add_argument("--tol", type=float,
                   help="stopping tolerance: OC max density change (default 1e-3), "
                        "PG residual relative to |grad f|_inf (default 1e-2)")
    p.add_argument("--max-iters", type=int, default=300)
    p.add_argument("--out", default=".", help="output directory (created if missing)")
    p.add_argument("--no-pgm", action="store_true", help="skip density.pgm")
    p.add_argument("--no-csv", action="store_true", help="skip density.csv")
    p.add_argument("--no-log", action="store_true", help="skip convergence.csv")
    p.add_argument("--plot", action="store_true", help="also render density.png and convergence.png")
    p.add_argument("-v", "--verbose", action="store_true", help="log every iteration to stderr")
    return p


def _problem_from_args(args):
    if args.problem in BUILTIN_NAMES:
        problem = builtin_problem(
            args.problem,
            40 if args.nx is None else args.nx,
            20 if args.ny is None else args.ny,
            0.5 if args.volfrac is None else args.volfrac,
        )
    else:
        path = Path(args.problem)
        if not path.is_file():
            raise SimpTopoError(
                f"problem {args.problem!r} is neither a builtin ({', '.join(BUILTIN_NAMES)}) nor a file")
        if args.nx is not None or args.ny is not None:
            raise SimpTopoError("--nx/--ny apply to builtin problems only; the file sets the grid")
        problem = load_problem(path.read_text())
        problem = replace(problem, name=path.stem)
        if args.volfrac is not None:
            problem = replace(problem, volume_fraction=args.volfrac)
    if args.penalty is not None:
        m = problem.material
        problem = replace(problem, material=SimpMaterial(m.E0, m.nu, args.penalty))
    if args.tension_k is not None:
        problem = replace(problem, tension=TensionConfig(args.tension_k))
    return problem


def _config_from_args(args):
    if args.optimizer == "oc":
        extra = {} if args.tol is None else {"tol": args.tol}
        return OcConfig(move_limit=args.move_limit, damping=args.damping, max_iters=args.max_iters, **extra)
    extra = {} if args.tol is None else {"tol": args.tol}
    mode = "multiplicative" if args.optimizer == "pg-mult" else "additive"
    return PgConfig(step=args.gamma, mode=mode, move_limit=args.move_limit, max_iters=args.max_iters, **extra)


def _summary(problem, method, field, record) -> list[str]:
    state = equilibrium(problem, field)
    lines = [
        f"problem={problem.name}",
        f"optimizer={method}",
        f"grid={problem.grid.nx}x{problem.grid.ny}",
        f"iterations={len(record)}",
        f"converged={'yes' if record.converged else 'no'}",
        f"stop_reason={record.stop_reason}",
        f"compliance={_num(state.compliance)}",
        f"volume_error={_num(field.volume_error)}",
    ]
    if problem.tension is not None:
        split = energy_split(problem, field, state.u, problem.tension.k)
        lines += [
            f"tension_k={_num(problem.tension.k)}",
            f"reduced_energy={_num(split.reduced)}",
            f"compressive_share={_num(split.compressive_share)}",
        ]
    return lines


def run_cli(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except _UsageError as exc:
        print(f"simptopo: error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        problem = _problem_from_args(args)
        config = _config_from_args(args)
        field, record = run_optimization(problem, args.optimizer, config)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        written = []
        if not args.no_pgm:
            emit_density_pgm(field, problem.grid, out / "density.pgm")
            written.append("density.pgm")
        if not args.no_csv:
            emit_density_csv(field, problem.grid, out / "density.csv")
            written.append("density.csv")
        if not args.no_log:
            emit_convergence_csv(record, out / "convergence.csv")
            written.append("convergence.csv")
        if args.plot:
            # matplotlib is only imported when figures are requested
            from .report import render_report

            written += render_report(problem, field, record, out)
        lines = _summary(problem, args.optimizer, field, record)
    except (SimpTopoError, OSError) as exc:
        print(f"simptopo: error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    lines.append(f"outputs={','.join(written)}")
    print("\n".join(lines))
    return EXIT_CONVERGED if record.converged else EXIT_MAX_ITERS


def main() -> None:
    sys.exit(run_cli())
