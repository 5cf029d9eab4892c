"""Command-line front end.

Subcommands::

    fracoc solve --problem example41 --K 3 --route both --out run41
    fracoc sweep --problem example41 --k 2,3 --mesh 500,2000 --out sweep41
    fracoc check --problem example41 --candidate run41/trajectory_fractional.csv

``--problem`` takes a built-in name or a key=value file. A file may set any
run parameter as well as an inline catalog problem (``problem = inline``
plus ``terminal``, ``T``, ``x_T``, coefficients, ...). Command-line flags
and ``--set key=value`` overrides win over file values.
"""

from __future__ import annotations

import argparse
import logging
import sys
import time
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Optional

import numpy as np

from . import conditions, model, problems, solver
from .errors import SolveError, UsageError
from .expansion import EPS
from .fracops import GridFn

log = logging.getLogger("fracoc")

CSV_TAG = "# fracoc-csv v1"
ROUTE_CHOICES = ("fractional", "approximate", "both", "frac", "approx")
SPEC_KEYS = ("terminal", "T", "x_T", "m_coef", "n_coef", "a", "A_cost", "x_start", "fixed_at_a")


@dataclass
class RunConfig:
    problem: str = "example41"
    alpha: float = 0.5
    K: int = 2
    mesh: int = 2000
    tol: float = 1e-10
    route: str = "both"
    T_guess: float = 1.0
    output_dir: str = "fracoc-out"
    threshold: float = conditions.DEFAULT_THRESHOLD
    max_iter: int = 50
    spec_keys: dict = field(default_factory=dict)

    def validate(self) -> "RunConfig":
        if not 0.0 < self.alpha < 1.0:
            raise UsageError(f"alpha must lie in (0, 1), got {self.alpha}")
        if self.K < 2:
            raise UsageError(f"K must be >= 2, got {self.K}")
        if self.mesh < 32:
            raise UsageError(f"mesh must be >= 32, got {self.mesh}")
        if not self.tol > 0:
            raise UsageError(f"tol must be positive, got {self.tol}")
        if not self.T_guess > 0:
            raise UsageError(f"T_guess must be positive, got {self.T_guess}")
        if self.route not in ROUTE_CHOICES:
            raise UsageError(f"unknown route {self.route!r}")
        if self.problem not in problems.BUILTINS and self.problem != "inline":
            raise UsageError(f"unknown problem {self.problem!r}")
        if self.problem != "inline" and self.spec_keys:
            raise UsageError(f"built-in {self.problem!r} takes no problem keys: {sorted(self.spec_keys)}")
        return self

    @property
    def routes(self) -> tuple:
        if self.route == "both":
            return ("fractional", "approximate")
        return (solver.canonical_route(self.route),)


_RUN_KEYS = {f.name.lower(): f.name for f in fields(RunConfig) if f.name != "spec_keys"}
_RUN_KEYS.update({"out": "output_dir", "t_guess": "T_guess"})


# -- config parsing ---------------------------------------------------------


def read_keyvalue(path) -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key = value, got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key] = value
    return out


def _coerce(name: str, value):
    kind = {f.name: f.type for f in fields(RunConfig)}[name]
    if kind in ("int", int):
        return int(float(value))
    if kind in ("float", float):
        return float(value)
    return str(value)


def apply_settings(cfg: RunConfig, settings: dict) -> RunConfig:
    spec_keys = dict(cfg.spec_keys)
    updates = {}
    for key, value in settings.items():
        norm = key.strip().replace("-", "_")
        run_name = _RUN_KEYS.get(norm.lower())
        if run_name is not None:
            updates[run_name] = _coerce(run_name, value)
        elif norm in SPEC_KEYS or norm in problems.CATALOG_KEYS:
            spec_keys[norm] = value
        else:
            raise UsageError(f"unknown configuration key {key!r}")
    return replace(cfg, spec_keys=spec_keys, **updates)


def build_spec(cfg: RunConfig) -> model.FocpSpec:
    if cfg.problem != "inline":
        return problems.BUILTINS[cfg.problem](cfg.alpha)
    keys = dict(cfg.spec_keys)
    if "terminal" not in keys:
        raise UsageError("inline problem needs a 'terminal' key")
    terminal = problems.terminal_from_config(keys.pop("terminal"), keys.pop("T", None), keys.pop("x_T", None))
    kw = {k: float(keys.pop(k)) for k in ("m_coef", "n_coef", "a", "A_cost", "x_start") if k in keys}
    fixed = keys.pop("fixed_at_a", "false").strip().lower() in ("1", "true", "yes")
    spec = problems.quadratic_problem(cfg.alpha, terminal, name="inline", **kw, **keys)
    return replace(spec, fixed_at_a=fixed) if fixed else spec


def config_from_args(args) -> RunConfig:
    cfg = RunConfig()
    problem = args.problem
    if problem is not None and Path(problem).is_file():
        cfg = apply_settings(cfg, read_keyvalue(problem))
        if cfg.problem == RunConfig.problem and cfg.spec_keys:
            cfg = replace(cfg, problem="inline")
    elif problem is not None:
        cfg = replace(cfg, problem=problem)
    flags = {k: getattr(args, k, None) for k in ("alpha", "K", "tol", "route", "T_guess", "output_dir", "threshold")}
    if isinstance(getattr(args, "mesh", None), int):
        flags["mesh"] = args.mesh
    cfg = replace(cfg, **{k: v for k, v in flags.items() if v is not None})
    for item in getattr(args, "set", None) or []:
        if "=" not in item:
            raise UsageError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        cfg = apply_settings(cfg, {k: v})
    return cfg.validate()


# -- files ------------------------------------------------------------------


def _fmt(v) -> str:
    return "%.17g" % v


def trajectory_columns(report: solver.SolveReport):
    cols = [("t", report.t), ("x", report.x.values), ("u", report.u.values),
            ("lambda", report.lambda_.values)]
    K = report.K or 2
    cols += [(f"V{p}", g.values) for p, g in zip(range(2, K + 1), report.aux_V)]
    prefix = "W" if report.route == "fractional" else "lambda"
    cols += [(f"{prefix}{p}", g.values) for p, g in zip(range(2, K + 1), report.aux_W)]
    return cols


def write_trajectory(path, report: solver.SolveReport):
    cols = trajectory_columns(report)
    data = np.column_stack([c for _, c in cols])
    with open(path, "w") as fh:
        fh.write(CSV_TAG + "\n")
        fh.write(",".join(name for name, _ in cols) + "\n")
        for row in data:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def read_trajectory(path):
    """Read a trajectory CSV into ``{column: array}``."""
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0].strip() != CSV_TAG:
        raise UsageError(f"{path}: missing '{CSV_TAG}' header line")
    names = [s.strip() for s in lines[1].split(",")]
    rows = [[float(v) for v in ln.split(",")] for ln in lines[2:] if ln.strip()]
    data = np.array(rows, dtype=float).reshape(-1, len(names))
    missing = {"t", "x", "u", "lambda"} - set(names)
    if missing:
        raise UsageError(f"{path}: missing columns {sorted(missing)}")
    return {n: data[:, i] for i, n in enumerate(names)}


def write_manifest(path, entries: dict):
    with open(path, "w") as fh:
        for k, v in entries.items():
            if isinstance(v, float):
                v = _fmt(v)
            elif isinstance(v, bool):
                v = str(v).lower()
            fh.write(f"{k} = {v}\n")


def _defaults(cfg: RunConfig) -> dict:
    out = {k: v for k, v in asdict(cfg).items() if k != "spec_keys"}
    for k, v in sorted(cfg.spec_keys.items()):
        out[f"problem.{k}"] = v
    out.update({
        "eps": EPS,
        "continuation": ",".join(_fmt(e) for e in solver.CONTINUATION),
        "stage_mesh": solver.STAGE_MESH,
        "fallback_segments": 4,
        "fd_rel_step": 1e-7,
    })
    return out


# -- running ----------------------------------------------------------------


def _solve_one(spec, cfg: RunConfig, route: str, K: int, mesh: int):
    if spec.terminal.time_fixed:
        return solver.solve(spec, K, route, mesh=mesh, tol=cfg.tol, max_iter=cfg.max_iter)
    return solver.solve_free_time(spec, K, mesh, cfg.tol, cfg.T_guess, route=route, max_iter=cfg.max_iter)


def _evaluate(spec, cfg, report, reference):
    """Post-solve checks: error, admissibility and the conditions report."""
    cand = conditions.CandidateTriplet.from_report(report, a=spec.a)
    out = {}
    if reference is not None:
        out["E"] = solver.error_vs_reference(report, reference)
    out["admissibility"] = model.admissible(spec, cand.x, cand.u)
    check = conditions.generalized_residuals if spec.generalized else conditions.necessary_residuals
    return out, check(spec, cand, threshold=cfg.threshold)


def run(cfg: RunConfig) -> int:
    """Solve by each configured route and write CSVs, manifest and reports."""
    spec = build_spec(cfg)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    reference = problems.references(cfg.problem, cfg.alpha)
    manifest = _defaults(cfg)
    status, reports = 0, {}
    for route in cfg.routes:
        t0 = time.perf_counter()
        try:
            rep = _solve_one(spec, cfg, route, cfg.K, cfg.mesh)
        except SolveError as err:
            manifest[f"{route}.status"] = "failed"
            manifest[f"{route}.error"] = str(err)
            manifest[f"{route}.runtime_s"] = time.perf_counter() - t0
            if err.residual_history:
                manifest[f"{route}.residual_history"] = ",".join(_fmt(v) for v in err.residual_history)
            if err.location is not None:
                manifest[f"{route}.location"] = err.location
            log.error("%s route failed: %s", route, err)
            status = 2
            continue
        runtime = time.perf_counter() - t0
        reports[route] = rep
        write_trajectory(out / f"trajectory_{route}.csv", rep)
        extra, cond = _evaluate(spec, cfg, rep, reference)
        (out / f"conditions_{route}.txt").write_text(cond.format())
        manifest.update({
            f"{route}.status": "ok",
            f"{route}.T": rep.T,
            f"{route}.J": rep.J,
            f"{route}.boundary_residual": rep.boundary_residual_norm,
            f"{route}.newton_iters": rep.newton_iters,
            f"{route}.method": rep.method,
            **{f"{route}.{k}": v for k, v in extra.items()},
            f"{route}.conditions_max": cond.max_residual,
            f"{route}.conditions_satisfied": cond.satisfied,
            f"{route}.runtime_s": runtime,
        })
        log.info("%s: T=%.8g J=%.3e |r|=%.2e (%.1fs)", route, rep.T, rep.J, rep.boundary_residual_norm, runtime)
    if len(reports) == 2:
        a, b = reports["fractional"], reports["approximate"]
        tt = np.linspace(spec.a, min(a.T, b.T), 1001)
        manifest["cross_route.T_rel_diff"] = abs(a.T - b.T) / abs(a.T)
        manifest["cross_route.x_max_diff"] = float(np.max(np.abs(a.x(tt) - b.x(tt))))
    manifest["status"] = "ok" if status == 0 else "failed"
    write_manifest(out / "manifest.txt", manifest)
    return status


def _monotone(values) -> bool:
    v = [x for x in values if np.isfinite(x)]
    return len(v) == len(values) and all(b < a for a, b in zip(v, v[1:]))


def sweep(cfg: RunConfig, K_list, mesh_list) -> int:
    """Convergence table over ``K_list`` x ``mesh_list``, run sequentially."""
    spec = build_spec(cfg)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    reference = problems.references(cfg.problem, cfg.alpha)
    rows, status = [], 0
    for route in cfg.routes:
        for mesh in mesh_list:
            for K in K_list:
                t0 = time.perf_counter()
                row = {"route": route, "K": K, "mesh": mesh}
                try:
                    rep = _solve_one(spec, cfg, route, K, mesh)
                    row.update(T=rep.T, J=rep.J, boundary_residual=rep.boundary_residual_norm,
                               E=solver.error_vs_reference(rep, reference) if reference else np.nan,
                               newton_iters=rep.newton_iters, status="ok")
                except SolveError as err:
                    log.error("%s K=%d mesh=%d failed: %s", route, K, mesh, err)
                    row.update(T=np.nan, J=np.nan, boundary_residual=np.nan, E=np.nan,
                               newton_iters=len(err.residual_history), status="failed")
                    status = 2
                row["runtime_s"] = time.perf_counter() - t0
                rows.append(row)
    cols = ("route", "K", "mesh", "E", "boundary_residual", "T", "J", "newton_iters", "runtime_s", "status")
    with open(out / "sweep.csv", "w") as fh:
        fh.write(CSV_TAG + "\n" + ",".join(cols) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(row[c]) if isinstance(row[c], float) else str(row[c]) for c in cols) + "\n")
    flags = _defaults(cfg)
    flags["K_list"] = ",".join(map(str, K_list))
    flags["mesh_list"] = ",".join(map(str, mesh_list))
    for route in cfg.routes:
        mine = [r for r in rows if r["route"] == route]
        for mesh in mesh_list:
            Es = [r["E"] for r in mine if r["mesh"] == mesh]
            if reference is not None and len(Es) > 1:
                flags[f"{route}.mesh{mesh}.E_decreasing_in_K"] = _monotone(Es)
        for K in K_list:
            res = [r["boundary_residual"] for r in mine if r["K"] == K]
            if len(res) > 1:
                flags[f"{route}.K{K}.residual_decreasing_in_mesh"] = _monotone(res)
    flags["status"] = "ok" if status == 0 else "failed"
    write_manifest(out / "sweep_flags.txt", flags)
    return status


def check(cfg: RunConfig, candidate_path, T: Optional[float] = None) -> int:
    """Evaluate the optimality conditions on a trajectory CSV."""
    spec = build_spec(cfg)
    cols = read_trajectory(candidate_path)
    t = cols["t"]
    T = float(t[-1]) if T is None else T
    t, (x, u, lam) = conditions.extend_to(spec.a, t, [cols["x"], cols["u"], cols["lambda"]])
    cand = conditions.CandidateTriplet.from_arrays(t, x, u, lam, T=T)
    fn = conditions.generalized_residuals if spec.generalized else conditions.necessary_residuals
    report = fn(spec, cand, threshold=cfg.threshold)
    text = report.format()
    sys.stdout.write(text)
    if cfg.output_dir != RunConfig.output_dir:
        out = Path(cfg.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "conditions.txt").write_text(text)
    return 0 if report.satisfied else 1


# -- argparse ---------------------------------------------------------------


def _int_list(text: str):
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fracoc", description="Fractional optimal control by shooting.")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--problem", help="built-in name or key=value file")
        sp.add_argument("--alpha", type=float)
        sp.add_argument("--tol", type=float)
        sp.add_argument("--route", choices=ROUTE_CHOICES)
        sp.add_argument("--t-guess", dest="T_guess", type=float)
        sp.add_argument("--out", dest="output_dir")
        sp.add_argument("--threshold", type=float)
        sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="override any config key")

    s = sub.add_parser("solve", help="solve one configuration")
    common(s)
    s.add_argument("--K", type=int)
    s.add_argument("--mesh", type=int)

    w = sub.add_parser("sweep", help="convergence table over K and mesh")
    common(w)
    w.add_argument("--k", "--K", dest="K_list", type=_int_list, default=[2, 3])
    w.add_argument("--mesh", dest="mesh_list", type=_int_list, default=[2000])

    c = sub.add_parser("check", help="evaluate conditions on a trajectory CSV")
    common(c)
    c.add_argument("--candidate", required=True)
    c.add_argument("--T", dest="T_end", type=float, help="terminal time (default: last t)")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(message)s")
    try:
        cfg = config_from_args(args)
        if args.command == "solve":
            return run(cfg)
        if args.command == "sweep":
            if any(m < 32 for m in args.mesh_list) or any(k < 2 for k in args.K_list):
                raise UsageError("sweep needs K >= 2 and mesh >= 32")
            return sweep(cfg, args.K_list, args.mesh_list)
        return check(cfg, args.candidate, args.T_end)
    except UsageError as err:
        print(f"fracoc: error: {err}", file=sys.stderr)
        return 64


if __name__ == "__main__":
    sys.exit(main())
