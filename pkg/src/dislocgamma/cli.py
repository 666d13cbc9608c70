"""Command-line front end.

Every subcommand reads an experiment config (see :mod:`dislocgamma.config`),
writes flat CSV/JSON/gnuplot files into ``--out`` and is deterministic given
the config and ``--seed``.  Exit codes: 0 success, 2 config error, 3 solver
failure, 4 infeasible configuration.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import dislocations as dl
from . import gamma as gm
from .config import ConfigError, load_config
from .elliptic import SolverError, helmholtz_study
from .fields import Domain
from .rigidity import _round17, _trig_poly, fmt, probe_inequality, Sampler
from .wells import ElasticDensity, WellSet, form_is_coercive_on_sym, rotation

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_INFEASIBLE = 0, 2, 3, 4


def _csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([fmt(v) if isinstance(v, float) else v for v in r])
    return buf.getvalue()


def _json(obj) -> str:
    return json.dumps(_round17(obj), indent=2, sort_keys=True) + "\n"


def _write(out: Path, name: str, text: str) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / name).write_text(text)


def _density(cfg) -> ElasticDensity:
    return ElasticDensity(WellSet([np.array(m, float) for m in cfg["wells"]]), cfg["mode"])


def _lattice(cfg) -> dl.BurgersLattice:
    b1, b2 = cfg["lattice"]
    return dl.BurgersLattice(tuple(b1), tuple(b2), cfg["truncation"])


def _well_form(cfg):
    dens = _density(cfg)
    i = cfg["well_index"]
    return dens, dens.well_set.wells[i], dens.hessian(i)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_cell(cfg, out: Path) -> int:
    dens, U, C = _well_form(cfg)
    ok, lam = form_is_coercive_on_sym(C)
    if not ok:
        print("warning: C_U is not coercive on symmetric matrices", file=sys.stderr)
    xi = np.array(cfg["xi"], float)
    deltas = sorted(cfg["deltas"], reverse=True)
    kw = dict(ds=cfg["ds"], n_theta=cfg["n_theta"])
    psis = [dl.cell_energy(xi, d, C, **kw) for d in deltas]
    rows = [(float(d), float(p), float(p / abs(math.log(d)))) for d, p in zip(deltas, psis)]
    _write(out, "psi_table.csv", _csv(["delta", "psi", "psi_over_log_delta"], rows))
    trace = "# inv_log_delta psi_over_log_delta\n" + "".join(
        f"{fmt(1 / abs(math.log(d)))} {fmt(r)}\n" for d, _, r in rows)
    _write(out, "cell_trace.dat", trace)
    fit = dl.hat_psi(xi, C, "psi-nohalf", deltas, **kw)
    kern = dl.solve_angular_kernel(C, xi, n_theta=cfg["n_theta"], ds=cfg["ds"])
    slope_k = kern.slope()
    rel = abs(slope_k - fit.value) / max(abs(slope_k), 1e-300) if np.any(xi) else 0.0
    fac = dl.convention_factor(cfg["convention"])
    g_bound, dg_bound = kern.bounds()
    report = {
        "xi": xi.tolist(), "well": U.tolist(), "mode": cfg["mode"], "convention": cfg["convention"],
        "psi_hat": fac * slope_k,
        "psi_hat_half": 0.5 * slope_k, "psi_hat_nohalf": slope_k,
        "richardson": {"slope": fit.value, "b": fit.slope_b, "residual": fit.residual,
                       "psi_hat": fac * fit.value},
        "kernel": {"slope": slope_k, "spread": kern.spread, "c": kern.c.tolist(),
                   "gamma_bound": g_bound, "dgamma_bound": dg_bound},
        "relative_disagreement": rel,
        "coercive_on_sym": ok, "coercivity_constant": lam,
    }
    sweep = []
    for e in cfg["eps_sweep"]:
        rho = 1.0 / abs(math.log(e))
        pe = dl.cell_energy_eps(xi, e, rho, C, **kw)
        p = dl.solve_cell(xi, e, 1.0, C, **kw).energy
        sweep.append((float(e), float(rho), float(pe), float(p), float(pe * abs(math.log(e)) / p) if p else 0.0))
    if sweep:
        _write(out, "psi_eps.csv", _csv(["eps", "rho", "psi_eps", "psi", "ratio"], sweep))
    _write(out, "psi_hat.json", _json(report))
    if rel > 0.05:
        print(f"error: hat psi routes disagree by {rel:.2%}", file=sys.stderr)
        return EXIT_SOLVER
    return EXIT_OK


def _table(cfg):
    dens, U, _ = _well_form(cfg)
    return gm.self_energy_table(dens, U, _lattice(cfg), cfg["convention"], rotation(cfg["rotation_angle"]))


def cmd_table(cfg, out: Path) -> int:
    _write(out, "self_energy_table.json", _table(cfg).to_json() + "\n")
    return EXIT_OK


def cmd_phi(cfg, out: Path) -> int:
    tab = _table(cfg)
    rows = []
    for d in cfg["directions"]:
        rel = dl.relax_phi(tab, d, detail=True)
        cols = ";".join(f"{fmt(a)}:{fmt(b)}:{fmt(w)}" for (a, b), w in zip(rel.columns, rel.weights))
        rows.append((float(d[0]), float(d[1]), rel.value, rel.Lambda, cols))
    _write(out, "phi.csv", _csv(["xi1", "xi2", "phi", "Lambda", "decomposition"], rows))
    return EXIT_OK


def cmd_probe(cfg, out: Path) -> int:
    wells = WellSet([np.array(m, float) for m in cfg["wells"]])
    n = cfg["grid"] or 32
    dom = Domain.rectangle(0, 0, 1, 1, 1 / n)
    sampler = Sampler(cfg["kind"], wells, cfg["amplitude"])
    rep = probe_inequality(cfg["kind"], sampler, cfg["n_samples"], cfg["seed"], dom, wells,
                           compare_single_well=wells.count > 1)
    _write(out, "probe_report.json", rep.to_json() + "\n")
    _write(out, "probe_samples.csv", rep.to_csv())
    return EXIT_OK


def cmd_helmholtz(cfg, out: Path) -> int:
    f = _trig_poly(np.random.default_rng(cfg["seed"]), 4)

    def beta(x, y):
        return f(x, y).reshape(np.shape(x) + (2, 2))

    levels = cfg["levels"] if cfg["grid"] is None else [cfg["grid"], 2 * cfg["grid"], 4 * cfg["grid"]]
    rows = helmholtz_study(beta, levels=levels)
    keys = ["n", "h", "reconstruction", "div_Y", "curl_grad_v", "harmonic_residual", "order"]
    _write(out, "helmholtz.csv", _csv(keys, [[r[k] for k in keys] for r in rows]))
    return EXIT_OK


def _schedule(cfg) -> gm.ScaleSchedule:
    return gm.ScaleSchedule.from_rules(cfg["eps"], cfg["rho_exponent"], cfg["eta"], cfg["gamma"])


def cmd_validate(cfg, out: Path) -> int:
    sched = _schedule(cfg)
    checks = [c.__dict__ for c in sched.checks()]
    _write(out, "validate.json", _json({"schedule": checks}))
    sched.validate()
    return EXIT_OK


def cmd_gamma(cfg, out: Path) -> int:
    sched = _schedule(cfg)
    sched.validate()
    dens, U, C = _well_form(cfg)
    lat = _lattice(cfg)
    n = cfg["grid"] or 128
    x0, y0, x1, y1 = cfg["omega"]
    omega = Domain.rectangle(x0, y0, x1, y1, 1.0 / n)
    xi = np.array(cfg["xi"], float)
    mu_l, beta_l = gm.limit_strain(omega, cfg["E"], xi, cfg["limit_amplitude"])
    table = gm.self_energy_table(dens, U, lat, cfg["convention"])
    lim = gm.limit_energy(mu_l, beta_l, np.eye(2), U, table, dens)
    phi = dl.relax_phi(table, xi)
    trace, shells, per_j = [], [], []
    infeasible = False
    for j, eps in enumerate(sched.eps):
        try:
            rec = gm.build_recovery(omega, cfg["E"], xi, sched, j, dens, lat, beta_l, U,
                                    cfg["convention"], cfg["seed"])
        except gm.RecoveryInfeasible as exc:
            infeasible = True
            per_j.append({"j": j, "eps": eps, "error": str(exc), "feasible_max": exc.feasible_max})
            continue
        diag = gm.validate_configuration(rec.mu, rec.beta, sched, lat)
        info = rec.info()
        info.update({"j": j, "eps": eps, "valid": diag.passed,
                     "checks": {c.name: [c.passed, c.value] for c in diag.checks}})
        if not diag.passed:
            infeasible = True
            per_j.append(info)
            continue
        rep = gm.energy_eps(rec.mu, rec.beta, sched, density=dens, lattice=lat, check=False)
        L = sched.log_eps(j)
        tv = rec.mu.total_variation()
        mass = tv / (eps * L)
        info.update({"energy": rep.to_dict(),
                     "self_per_mass": rep.self_energy / mass if mass else 0.0,
                     "penalty_share": rep.penalty / rep.total if rep.total else 0.0,
                     "elastic_over_limit": rep.elastic / lim.elastic if lim.elastic else 0.0})
        per_j.append(info)
        trace.append((j, eps, rep.total, rep.elastic, rep.self_energy, rep.interaction, rep.penalty,
                      lim.total if lim.total is not None else float("nan")))
        for row in gm.gamma_liminf_diagnostic(rec.mu, rec.beta, sched, j, dens,
                                              s=cfg["liminf_s"], convention=cfg["convention"]):
            shells.append((j, row.atom, row.k, row.r_in, row.r_out, row.energy, row.psi_ref, row.ratio))
    _write(out, "gamma_trace.csv", _csv(["j", "eps", "E_eps", "elastic", "self", "interaction",
                                         "penalty", "limit"], trace))
    _write(out, "liminf_shells.csv", _csv(["j", "atom", "k", "r_in", "r_out", "energy", "psi_ref",
                                           "ratio"], shells))
    _write(out, "gamma_report.json", _json({"limit": lim.to_dict(), "phi": phi, "runs": per_j}))
    return EXIT_INFEASIBLE if infeasible else EXIT_OK


COMMANDS = {
    "cell": cmd_cell, "table": cmd_table, "phi": cmd_phi, "probe": cmd_probe,
    "helmholtz": cmd_helmholtz, "gamma": cmd_gamma, "validate": cmd_validate,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dislocgamma", description=__doc__.splitlines()[0])
    p.add_argument("--config", required=True, help="experiment config file")
    p.add_argument("--seed", type=int, default=None, help="master seed (overrides config)")
    p.add_argument("--grid", type=int, default=None, help="grid cells per unit length")
    p.add_argument("--out", default=None, help="output directory")
    p.add_argument("--convention", choices=dl.CONVENTIONS, default=None,
                   help="whether hat psi carries the factor 1/2")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        if name in ("cell", "gamma"):
            sp.add_argument("--xi", type=float, nargs=2, default=None, help="Burgers vector")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    for key in ("seed", "grid", "out", "convention"):
        v = getattr(args, key)
        if v is not None:
            cfg[key] = v
    if getattr(args, "xi", None) is not None:
        cfg["xi"] = list(args.xi)
    out = Path(cfg["out"])
    try:
        return COMMANDS[args.command](cfg, out)
    except (ConfigError, gm.ScheduleError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE if isinstance(exc, gm.ScheduleError) else EXIT_CONFIG
    except (gm.InvalidConfiguration, gm.RecoveryInfeasible, dl.InfeasibleRelaxation) as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (dl.SolverFailure, SolverError) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
