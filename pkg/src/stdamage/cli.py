"""Command-line front end: ``stdamage <command> [options]``.

Options may also come from a flat ``key = value`` file (``--config``) whose keys
are the RunConfig field names; flags given on the command line win.
"""

from __future__ import annotations

import argparse
import logging
import math
import sys
from dataclasses import dataclass, fields

from . import benchmarks
from .benchmarks import ConvergenceTable, error_l2l2, get_case
from .control import (LineSearchFailure, OptimizerConfig, control_error,
                      gradient_check, optimize_case)
from .discretization import build_spatial_mesh, build_temporal_mesh
from .forward import NonConvergence, SolverConfig, solve_forward
from .nonsmooth import RegularizationConfig

log = logging.getLogger("stdamage")

COMMANDS = ("solve", "eoc-state", "optimize", "eoc-control", "gradcheck", "residual-check")
EXIT_OK, EXIT_USAGE, EXIT_NONCONV, EXIT_CHECK = 0, 2, 3, 4
GRADCHECK_TOL = 1e-5
RESIDUAL_TOL = 1e-9


class UsageError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    command: str
    case: int | None = None
    M: int = 512
    N: int = 512
    mode: str = "refine-space"
    M_list: tuple = ()
    N_list: tuple = ()
    fp_tol: float = 1e-12
    fp_maxit: int = 10000
    mass_mode: str = "consistent"
    variant: str = "exact"  # exact | regularized (state solves); optimization is always regularized
    epsilon: float = 1e-9
    closed_form: bool = False
    load_rule: str = "nodal"
    backend: str | None = None
    alpha_l: float = 10.0
    armijo_c: float = 1e-4
    backtrack: float = 0.5
    s0: float = 1.0
    grad_tol_abs: float = 1e-10
    grad_tol_rel: float = 1e-6
    maxit: int = 500
    samples: int = 10000
    fd_step: float = 1e-5
    seed: int = 0
    output: str | None = None
    workers: int = 1

    def validate(self):
        if self.command not in COMMANDS:
            raise UsageError(f"unknown command {self.command!r}")
        if self.case is not None and self.case not in benchmarks.CASES:
            raise UsageError(f"case must be one of {sorted(benchmarks.CASES)}, got {self.case}")
        if self.command in ("solve", "eoc-state", "optimize", "eoc-control") and self.case is None:
            raise UsageError(f"{self.command} needs --case")
        if self.mode not in ("refine-space", "refine-time"):
            raise UsageError(f"mode must be refine-space or refine-time, got {self.mode!r}")
        if self.variant not in ("exact", "regularized"):
            raise UsageError(f"variant must be exact or regularized, got {self.variant!r}")
        if self.command in ("eoc-state", "eoc-control"):
            levels = self.N_list if self.mode == "refine-space" else self.M_list
            if len(levels) < 2:
                flag = "--N-list" if self.mode == "refine-space" else "--M-list"
                raise UsageError(f"{self.command} in {self.mode} mode needs {flag} with >= 2 levels")
        if self.M < 1 or self.N < 2 or self.workers < 1:
            raise UsageError("need M >= 1, N >= 2 and workers >= 1")
        try:
            self.solver_config()
            self.optimizer_config()
        except ValueError as exc:
            raise UsageError(str(exc)) from None
        return self

    def solver_config(self) -> SolverConfig:
        eps = self.epsilon if self.variant == "regularized" else 0.0
        return SolverConfig(self.fp_tol, self.fp_maxit, self.mass_mode, RegularizationConfig(eps),
                            self.closed_form, self.backend)

    def optimizer_config(self) -> OptimizerConfig:
        return OptimizerConfig(self.alpha_l, self.epsilon, self.armijo_c, self.backtrack, self.s0,
                               self.grad_tol_abs, self.grad_tol_rel, self.maxit)


_FIELDS = {f.name: f for f in fields(RunConfig)}
_BOOL_TRUE, _BOOL_FALSE = ("1", "true", "yes", "on"), ("0", "false", "no", "off")


def _int_list(text):
    text = str(text).strip()
    if not text:
        return ()
    try:
        return tuple(int(v) for v in text.split(","))
    except ValueError:
        raise UsageError(f"expected a comma-separated list of integers, got {text!r}") from None


def _convert(name, raw):
    """Typed value of RunConfig field ``name`` from its text form."""
    if name not in _FIELDS:
        raise UsageError(f"unknown configuration key {name!r}")
    kind = _FIELDS[name].type
    raw = str(raw).strip()
    try:
        if name in ("M_list", "N_list"):
            return _int_list(raw)
        if kind.startswith("bool"):
            low = raw.lower()
            if low in _BOOL_TRUE:
                return True
            if low in _BOOL_FALSE:
                return False
            raise ValueError(raw)
        if "None" in kind and raw.lower() in ("", "none"):
            return None
        if kind.startswith("int"):
            return int(raw)
        if kind.startswith("float"):
            return float(raw)
        return raw
    except ValueError:
        raise UsageError(f"bad value {raw!r} for {name}") from None


def _format_value(v):
    if v is None:
        return "none"
    if isinstance(v, tuple):
        return ",".join(str(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v).lower() if isinstance(v, bool) else str(v)


def read_config_file(path) -> dict:
    values = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{lineno}: expected 'key = value'")
            key, val = (s.strip() for s in line.split("=", 1))
            values[key] = _convert(key, val)
    return values


def dump_config(cfg: RunConfig) -> str:
    """Config-file text that parses back to ``cfg``."""
    return "".join(f"{f.name} = {_format_value(getattr(cfg, f.name))}\n" for f in fields(cfg))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="stdamage", description="State solves, optimal control and convergence studies.")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", metavar="command")
    sub.required = True
    for name in COMMANDS:
        p = sub.add_parser(name, argument_default=argparse.SUPPRESS)
        p.add_argument("--config", help="key = value file with RunConfig fields")
        for f in fields(RunConfig):
            if f.name == "command":
                continue
            flag = "--" + f.name.replace("_", "-")
            if f.type.startswith("bool"):
                p.add_argument(flag, dest=f.name, nargs="?", const="true", metavar="BOOL")
            else:
                p.add_argument(flag, dest=f.name, metavar=f.name.upper())
    return parser


def parse_config(argv) -> RunConfig:
    parser = build_parser()
    try:
        ns = parser.parse_args(argv)
    except SystemExit as exc:
        if exc.code == 0:  # --help
            raise
        raise UsageError("invalid command line") from exc
    given = vars(ns).copy()
    command = given.pop("command")
    given.pop("verbose", None)
    values = {}
    path = given.pop("config", None)
    if path is not None:
        try:
            values.update(read_config_file(path))
        except OSError as exc:
            raise UsageError(f"cannot read config file: {exc}") from None
    if values.pop("command", command) != command:
        raise UsageError("config file names a different command")
    values.update({k: _convert(k, v) for k, v in given.items()})
    return RunConfig(command=command, **values).validate()


# -- output ------------------------------------------------------------------

def _fmt_sci(v: float) -> str:
    mant, exp = f"{v:.6e}".split("e")
    return f"{mant}e{int(exp)}"


def table_to_csv(table: ConvergenceTable) -> str:
    lines = [",".join(table.columns)]
    for row in table.rows:
        cells = []
        for c in table.columns:
            v = row.get(c)
            if v is None:
                cells.append("")
            elif isinstance(v, float) and math.isnan(v):
                cells.append("not_conv" if c.startswith("err_") else "")
            else:
                cells.append(_fmt_sci(float(v)))
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"


def emit_csv(table: ConvergenceTable, path) -> None:
    """Write ``table`` as CSV to ``path`` ("-" for standard output)."""
    text = table_to_csv(table)
    if path in (None, "-"):
        sys.stdout.write(text)
        return
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)


# -- commands ----------------------------------------------------------------

def _meshes(cfg, case):
    return build_temporal_mesh(case.params.T, cfg.M), build_spatial_mesh(case.a, case.b, cfg.N)


def _levels(cfg):
    if cfg.mode == "refine-space":
        return "refine_space", cfg.M, cfg.N_list
    return "refine_time", cfg.N, cfg.M_list


def cmd_solve(cfg):
    case = get_case(cfg.case)
    tm, sm = _meshes(cfg, case)
    sol = solve_forward(case.l_exact, case.d0, case.params, tm, sm, cfg.solver_config(),
                        load_rule=cfg.load_rule)
    print(f"case {cfg.case}: M={tm.M} N={sm.N} tau*beta/delta={sol.contraction_margin:.4g} "
          f"fixed-point iterations max={sol.fp_iterations.max()} mean={sol.fp_iterations.mean():.1f}")
    print(f"err_phi = {error_l2l2(sol.phi, case.phi_exact):.6e}")
    print(f"err_d   = {error_l2l2(sol.d, case.d_exact):.6e}")
    return EXIT_OK


def cmd_eoc_state(cfg):
    mode, fixed, levels = _levels(cfg)
    table = benchmarks.run_state_eoc(cfg.case, mode, fixed, levels, cfg.solver_config(),
                                     workers=cfg.workers, load_rule=cfg.load_rule)
    print(table.format(), file=sys.stderr if cfg.output in (None, "-") else sys.stdout)
    emit_csv(table, cfg.output)
    return EXIT_OK


def cmd_optimize(cfg):
    case = get_case(cfg.case)
    tm, sm = _meshes(cfg, case)
    res = optimize_case(case, tm, sm, cfg.solver_config(), cfg.optimizer_config())
    print(f"case {cfg.case}: M={tm.M} N={sm.N} iterations={res.iterations} "
          f"converged={res.converged}")
    print(f"objective = {res.objective:.6e}  |G|_Lsigma = {res.grad_norm:.6e}")
    print(f"err_l     = {control_error(res.l, case.l_exact):.6e}")
    return EXIT_OK


def cmd_eoc_control(cfg):
    mode, fixed, levels = _levels(cfg)
    table = benchmarks.run_control_eoc(cfg.case, mode, fixed, levels, cfg.solver_config(),
                                       cfg.optimizer_config(), workers=cfg.workers)
    print(table.format(), file=sys.stderr if cfg.output in (None, "-") else sys.stdout)
    emit_csv(table, cfg.output)
    return EXIT_OK


def cmd_gradcheck(cfg):
    worst = 0.0
    for norm in ("seminorm", "full"):
        prob, l = benchmarks.gradcheck_setup(epsilon=1e-3, mass_mode=cfg.mass_mode,
                                             norm_variant=norm, seed=cfg.seed)
        res = gradient_check(prob, l, step=cfg.fd_step, seed=cfg.seed)
        err = max(res["max_rel_dof"], res["max_rel_dir"])
        worst = max(worst, err)
        print(f"{norm:>8}: max relative error {err:.3e} "
              f"({res['n_dofs']} dofs, {res['n_dirs']} directions)")
    print(f"max relative error = {worst:.3e} (tolerance {GRADCHECK_TOL:g})")
    return EXIT_OK if worst <= GRADCHECK_TOL else EXIT_CHECK


def cmd_residual_check(cfg):
    ids = [cfg.case] if cfg.case is not None else sorted(benchmarks.CASES)
    ok = True
    for cid in ids:
        res = benchmarks.residual_check(get_case(cid), cfg.samples, cfg.seed)
        ok &= res < RESIDUAL_TOL
        print(f"case {cid}: max residual {res:.3e} over {cfg.samples} samples")
    return EXIT_OK if ok else EXIT_CHECK


HANDLERS = {"solve": cmd_solve, "eoc-state": cmd_eoc_state, "optimize": cmd_optimize,
            "eoc-control": cmd_eoc_control, "gradcheck": cmd_gradcheck,
            "residual-check": cmd_residual_check}


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    verbose = sum(a in ("-v", "--verbose") for a in argv)
    logging.basicConfig(level=logging.DEBUG if verbose > 1 else
                        logging.INFO if verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        cfg = parse_config(argv)
    except UsageError as exc:
        print(f"stdamage: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        return HANDLERS[cfg.command](cfg)
    except (NonConvergence, LineSearchFailure) as exc:
        print(f"stdamage: {exc}", file=sys.stderr)
        return EXIT_NONCONV


if __name__ == "__main__":
    sys.exit(main())
