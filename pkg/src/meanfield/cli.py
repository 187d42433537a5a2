"""Command-line front end.

Every subcommand reads a configuration (``--config FILE`` or ``--preset
NAME``, overridable by flags), writes CSV tables and a ``summary.json`` to
the output directory and prints one line per check. Exit codes: 0 all checks
passed, 1 a numeric check failed, 2 configuration error, 3 solver
non-convergence.
"""
import argparse
import csv
import json
import os
import sys
import time
import warnings

import numpy as np

from . import __version__
from .config import PRESETS, RunConfig, preset
from .errors import ConfigError, MeanFieldError

UNITS = {
    "x": "length", "y": "length", "z": "length", "delta": "length", "delta_j": "length",
    "r": "length", "eps": "1", "lambda": "1", "phi": "1", "A": "1", "B": "1", "Btilde": "1",
    "mass": "1", "seconds": "s",
}


class Emitter:
    """Single writer for tables, snapshots and the run summary."""

    def __init__(self, outdir, command):
        self.outdir = outdir
        self.command = command
        self.checks = []
        self.summary = {}
        os.makedirs(outdir, exist_ok=True)

    def path(self, name):
        return os.path.join(self.outdir, name)

    def table(self, name, rows, units=None):
        if not rows:
            return
        units = dict(UNITS, **(units or {}))
        cols = list(rows[0])
        with open(self.path(name), "w", newline="") as fh:
            fh.write(f"# meanfield {__version__} {self.command} {time.strftime('%Y-%m-%dT%H:%M:%S')}\n")
            w = csv.writer(fh)
            w.writerow([f"{c} [{units.get(c, '1')}]" for c in cols])
            for r in rows:
                w.writerow([_fmt(r[c]) for c in cols])

    def check(self, name, passed, detail=""):
        self.checks.append({"check": name, "passed": bool(passed), "detail": detail})
        print(f"[{'PASS' if passed else 'FAIL'}] {name}" + (f": {detail}" if detail else ""))

    def finish(self):
        self.summary["checks"] = self.checks
        with open(self.path("summary.json"), "w") as fh:
            json.dump(_plain(self.summary), fh, indent=2, sort_keys=True)
            fh.write("\n")
        return 0 if all(c["passed"] for c in self.checks) else 1


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


def _plain(x):
    if isinstance(x, dict):
        return {str(k): _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    if isinstance(x, np.ndarray):
        return _plain(x.tolist())
    if isinstance(x, (np.floating, np.integer, np.bool_)):
        return x.item()
    return x


# -- configuration ---------------------------------------------------------------------------

def load_config(args):
    if args.config and args.preset:
        raise ConfigError("--config and --preset are mutually exclusive")
    if args.config:
        cfg = RunConfig.load(args.config)
    elif args.preset:
        cfg = preset(args.preset)
    else:
        cfg = preset("rect-torus-n2")
    d = cfg.to_dict()
    overrides = {
        "points": _points(args.points) if getattr(args, "points", None) else None,
        "deltas": args.deltas, "lam": args.lam, "eps": args.eps, "path": args.path,
        "output": args.output, "r0": args.r0, "grid": args.grid, "seed": args.seed,
    }
    kind = getattr(args, "surface", None)
    if kind and kind != cfg.surface["kind"]:
        d = preset("sphere-antipodal" if kind == "sphere" else "unit-square-k1").to_dict()
    for k, v in overrides.items():
        if v is not None:
            d[k] = v
    return RunConfig.from_dict(d)


def _points(text):
    try:
        pts = [[float(c) for c in p.split(",")] for p in text.split(";")]
    except ValueError:
        raise ConfigError("--points: expected 'x,y;x,y;...'") from None
    return pts


def _lam(value):
    try:
        return float(value)
    except ValueError:
        return value


# -- subcommands ----------------------------------------------------------------------------

def cmd_green(cfg, out, args):
    from .acceptance import criterion_1, criterion_2
    from .greens import evaluator
    s = cfg.make_surface()
    G = evaluator(s)
    rng = np.random.default_rng(cfg.seed)
    xi = s.random_points(rng, 20)
    rows = []
    if s.kind == "torus":
        vals = [float(v) for v in G.robin(xi)]
    else:
        vals = []
        for p in xi:
            v = rng.normal(size=3)
            v -= (v @ p) * p
            x = p * np.cos(1e-7) + v / np.linalg.norm(v) * np.sin(1e-7)
            vals.append(float(G.regular_part(x[None], p)[0]))
    for p, v in zip(xi, vals):
        rows.append(dict(zip("xyz", p), robin=v))
    out.table("robin.csv", rows)
    spread = float(np.ptp(vals))
    out.summary["robin_spread"] = spread
    if args.check in ("robin", "all"):
        out.check("robin function constant", spread <= 1e-8, f"spread {spread:.1e}")
    if args.check in ("exact", "all"):
        ok, detail, _ = (criterion_1 if s.kind == "torus" else criterion_2)(cfg.seed)
        out.check("Green function identities", ok, detail)


def cmd_landscape(cfg, out, args):
    from .landscape import coefficient_report
    data, c = cfg.data(), cfg.configuration()
    rep = coefficient_report(data, c)
    row = {"phi": rep.phi, "grad_norm": float(np.linalg.norm(rep.grad)), "A": rep.A, "B": rep.B,
           "Btilde": rep.Btilde, "class": rep.classification}
    out.table("landscape.csv", [row])
    out.summary.update(row)
    print(json.dumps(_plain(row)))


def cmd_critpoints(cfg, out, args):
    from .landscape import find_critical_points
    data = cfg.data()
    m = max(1, cfg.m)
    found = find_critical_points(data, m, budget=args.budget, seed=cfg.seed)
    rows = []
    for c, rep in found:
        row = {}
        for j, p in enumerate(c.points):
            row[f"x{j + 1}"], row[f"y{j + 1}"] = p[0], p[1]
        row.update(phi=rep.phi, A=rep.A, B=rep.B, Btilde=rep.Btilde, **{"class": rep.classification})
        rows.append(row)
        print(", ".join(f"{k}={_fmt(v)}" for k, v in row.items()))
    units = {f"{a}{j + 1}": "length" for j in range(m) for a in "xy"}
    out.table("critpoints.csv", rows, units)
    out.summary["count"] = len(rows)


def cmd_ansatz_check(cfg, out, args):
    from .ansatz import bubble_expansion_error, make_params, residual_report
    from .fitting import fit_order
    from .landscape import EIGHT_PI
    data, c = cfg.data(), cfg.configuration()
    rows = []
    for d in cfg.deltas:
        p = make_params(data, c, d, cfg.r0)
        e = bubble_expansion_error(p)
        r = residual_report(p, EIGHT_PI * c.m, cfg.sigma)
        rows.append(dict(delta=d, full_error=e.full, far_error=e.far, star_norm=r.star,
                         residual_integral=r.integral))
    out.table("ansatz.csv", rows)
    ds = [r["delta"] for r in rows]
    p_full = fit_order(ds, [r["full_error"] for r in rows])[0]
    p_star = fit_order(ds, [r["star_norm"] for r in rows])[0]
    out.summary.update(full_order=p_full, star_order=p_star)
    out.check("expansion error order >= 3.5", p_full >= 3.5, f"{p_full:.2f}")
    print(f"star-norm order {p_star:.2f}")


def cmd_energy_expand(cfg, out, args):
    from .energy import verify_expansion
    data, c = cfg.data(), cfg.configuration()
    lam = cfg.lam if cfg.lam is not None else 8 * np.pi * c.m
    ders = ("delta", "delta2") + (("xi",) if args.xi else ())
    r = verify_expansion(lam, data, c, cfg.deltas, cfg.r0, derivatives=ders)
    out.table("energy.csv", r.rows())
    out.summary.update(A=r.A, B=r.B, A_fit=r.A_fit, B_fit=r.B_fit, J_order=r.J_order,
                       dJ_order=r.dJ_order, ddJ_limit=r.ddJ_limit, grad_xi_order=r.grad_xi_order)
    out.check("energy remainder order >= 2", r.J_order >= 2.0, f"{r.J_order:.2f}")
    print(f"A_fit {r.A_fit:.4g} (A {r.A:.4g}), B_fit {r.B_fit:.6g} (B {r.B:.6g})")


def _pair(cfg, lam, polish=True):
    from .energy import solve_critical_pair
    return solve_critical_pair(lam, cfg.data(), cfg.configuration(), cfg.r0, polish=polish)


def cmd_critical_pair(cfg, out, args):
    if cfg.lam is None or isinstance(cfg.lam, str):
        raise ConfigError("lam: critical-pair needs a numeric lambda")
    cp = _pair(cfg, float(cfg.lam), polish=not args.no_polish)
    row = {"lambda": cp.lam, "delta": cp.delta, "mu": cp.mu, "dE": cp.dE,
           "grad_xi_norm": float(np.linalg.norm(cp.grad_xi))}
    for j, p in enumerate(cp.config.points):
        row[f"x{j + 1}"], row[f"y{j + 1}"] = p[0], p[1]
    out.table("critical_pair.csv", [row], {"x1": "length", "y1": "length", "x2": "length", "y2": "length"})
    out.summary.update(row)
    print(json.dumps(_plain(row)))


def _seed_field(cfg, lam, polish=False):
    from .ansatz import Ansatz, fine_grid, make_params
    cp = _pair(cfg, lam, polish)
    p = make_params(cfg.data(), cp.config, cp.delta, cfg.r0)
    return Ansatz(p).field(fine_grid(p, 3.0))


def _solution_rows(results):
    rows = []
    for r in results:
        pk = r.peaks[0] if r.peaks else None
        row = {"lambda": r.lam, "residual": r.residual, "iterations": r.iterations,
               "grid": f"{r.u.grid.shape[0]}x{r.u.grid.shape[1]}"}
        if pk is not None:
            row.update(x=pk.location[0], y=pk.location[1],
                       **{f"mass_{rad:g}": v for rad, v in pk.masses.items()})
            if pk.fit is not None:
                row["width"] = pk.fit.delta
        rows.append(row)
    return rows


def cmd_solve(cfg, out, args):
    from .mfsolver import solve, write_snapshot
    if cfg.lam is None or isinstance(cfg.lam, str):
        raise ConfigError("lam: solve needs a numeric lambda")
    u0 = _seed_field(cfg, float(cfg.lam))
    r = solve(float(cfg.lam), cfg.data(), u0, radii=tuple(cfg.radii), verbose=args.verbose)
    out.table("solve.csv", _solution_rows([r]), {"width": "length"})
    write_snapshot(out.path("solution.mfld"), r.u)
    out.summary.update(residual=r.residual, iterations=r.iterations)
    out.check("residual <= 1e-10", r.residual <= 1e-10, f"{r.residual:.1e}")


def cmd_continue(cfg, out, args):
    from .mfsolver import continue_in_lambda, write_snapshot
    if len(cfg.path) < 2:
        raise ConfigError("path: continuation needs at least two lambda values")
    u0 = _seed_field(cfg, cfg.path[0])
    br = continue_in_lambda(cfg.data(), u0, cfg.path, radii=tuple(cfg.radii), verbose=args.verbose)
    out.table("continuation.csv", _solution_rows(br.results), {"width": "length"})
    end = br.results[-1]
    write_snapshot(out.path("endpoint.mfld"), end.u)
    mass = end.peaks[0].masses[cfg.radii[0]] if end.peaks else 0.0
    m = max(1, cfg.m)
    out.summary.update(steps=len(br.results), endpoint_mass=mass)
    out.check("endpoint mass >= 0.95 * 8 pi m", mass >= 0.95 * 8 * np.pi * m, f"{mass:.4f}")
    out.check("residual <= 1e-10", end.residual <= 1e-10, f"{end.residual:.1e}")


def cmd_cs_expand(cfg, out, args):
    from .chern_simons import verify_cs_expansion
    r = verify_cs_expansion(cfg.data(), cfg.configuration(), cfg.deltas, rule=args.rule)
    out.table("cs_expansion.csv", r.rows())
    out.summary.update(order=r.order, C_order=r.C_order, Btilde=r.Btilde, Btilde_fit=r.Btilde_fit,
                       A_fit=r.A_fit)
    out.check("C ratio order >= 1.8", r.C_order >= 1.8, f"{r.C_order:.2f}")
    out.check("remainder order >= 2", r.order >= 2.0, f"{r.order:.2f}")


def cmd_cs_build(cfg, out, args):
    from .chern_simons import build_condensate
    from .fitting import extrapolate_limit
    from .mfsolver import write_snapshot
    if not cfg.eps:
        raise ConfigError("eps: at least one value is required")
    data, c = cfg.data(), cfg.configuration()
    rows = []
    for e in cfg.eps:
        cd = build_condensate(e, data, c, cfg.r0, radii=tuple(cfg.radii), verbose=args.verbose)
        rows.append({"eps": e, "delta": cd.delta_reduced, "delta_fit": cd.delta_fit,
                     "x": cd.center[0], "y": cd.center[1],
                     **{f"mass_{r:g}": v for r, v in cd.masses.items()},
                     "sup_kew": cd.sup_kew, "identity_residual": cd.state.identity_residual,
                     "residual": cd.residual})
        write_snapshot(out.path(f"condensate_{e:g}.mfld"), cd.state.w)
    out.table("cs_masses.csv", rows, {"delta_fit": "length"})
    ident = max(r["identity_residual"] for r in rows)
    out.check("identity residual <= 1e-10", ident <= 1e-10, f"{ident:.1e}")
    if len(rows) >= 2:
        key = f"mass_{cfg.radii[0]:g}"
        lim = extrapolate_limit(cfg.eps, [r[key] for r in rows])
        slope = float(np.polyfit(np.log(cfg.eps), np.log([r["delta_fit"] for r in rows]), 1)[0])
        m = cfg.m
        out.summary.update(mass_limit=lim, slope=slope)
        out.check("mass limit within 0.5 of 8 pi m", abs(lim - 8 * np.pi * m) <= 0.5, f"{lim:.4f}")
        out.check("delta(eps) slope 0.5 +- 0.05", abs(slope - 0.5) <= 0.05, f"{slope:.3f}")


def cmd_acceptance(cfg, out, args):
    from .acceptance import run
    numbers = args.only or list(range(1, 14))
    rows = []
    for n in numbers:
        v = run(n)
        out.check(f"{v.number:2d} {v.name}", v.passed, v.detail)
        rows.append({"criterion": v.number, "name": v.name, "passed": v.passed, "seconds": v.seconds,
                     "detail": v.detail})
    out.table("acceptance.csv", rows)
    print(f"{sum(r['passed'] for r in rows)}/{len(rows)} criteria passed")


COMMANDS = {
    "green": cmd_green, "landscape": cmd_landscape, "critpoints": cmd_critpoints,
    "ansatz-check": cmd_ansatz_check, "energy-expand": cmd_energy_expand,
    "critical-pair": cmd_critical_pair, "solve": cmd_solve, "continue": cmd_continue,
    "cs-expand": cmd_cs_expand, "cs-build": cmd_cs_build, "acceptance": cmd_acceptance,
}


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON or YAML configuration file")
    common.add_argument("--preset", choices=sorted(PRESETS))
    common.add_argument("--output", "-o", help="output directory")
    common.add_argument("--points", help="concentration points 'x,y;x,y'")
    common.add_argument("--deltas", type=float, nargs="+")
    common.add_argument("--lam", type=_lam, help="lambda, or window+ / window-")
    common.add_argument("--eps", type=float, nargs="+")
    common.add_argument("--path", type=float, nargs="+", help="continuation lambda targets")
    common.add_argument("--r0", type=float)
    common.add_argument("--grid", type=int)
    common.add_argument("--seed", type=int)
    common.add_argument("--verbose", "-v", action="store_true")
    common.add_argument("--dump-config", action="store_true", help="print the resolved configuration")

    p = argparse.ArgumentParser(prog="meanfield", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)
    g = sub.add_parser("green", parents=[common], help="Green function checks")
    g.add_argument("--surface", choices=["torus", "sphere"])
    g.add_argument("--check", choices=["robin", "exact", "all"], default="robin")
    sub.add_parser("landscape", parents=[common], help="phi_m, A, B, B-tilde at the points")
    c = sub.add_parser("critpoints", parents=[common], help="critical points of phi_m")
    c.add_argument("--budget", type=int, default=64)
    sub.add_parser("ansatz-check", parents=[common], help="projected bubble and residual orders")
    e = sub.add_parser("energy-expand", parents=[common], help="energy expansion of the ansatz")
    e.add_argument("--xi", action="store_true", help="also check the xi-gradient")
    cp = sub.add_parser("critical-pair", parents=[common], help="(delta, xi) zeroing the reduced energy")
    cp.add_argument("--no-polish", action="store_true")
    sub.add_parser("solve", parents=[common], help="Newton solve from the critical-pair ansatz")
    sub.add_parser("continue", parents=[common], help="continuation in lambda")
    cs = sub.add_parser("cs-expand", parents=[common], help="Chern-Simons energy expansion")
    cs.add_argument("--rule", type=float, default=1.0, help="eps = RULE * delta^2")
    sub.add_parser("cs-build", parents=[common], help="Chern-Simons condensates")
    a = sub.add_parser("acceptance", parents=[common], help="run the acceptance suite")
    a.add_argument("--only", type=int, nargs="+", choices=range(1, 14), metavar="N")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args)
        if args.dump_config:
            print(cfg.dumps())
            return 0
        out = Emitter(os.path.join(cfg.output, args.command), args.command)
        with warnings.catch_warnings():
            if not args.verbose:
                warnings.simplefilter("ignore")
            COMMANDS[args.command](cfg, out, args)
        return out.finish()
    except MeanFieldError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
