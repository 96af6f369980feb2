"""Command-line entry point and configuration handling.

Configs are flat INI files with sections [grid], [params], [constitutive],
[stepper], [scenario], [output], [study].  Unknown sections or keys are hard
errors (no silent defaults for typos).  Every run writes the fully resolved
configuration (config.effective.ini) next to its outputs; rerunning from
that file is bitwise reproducible in single-threaded mode.

Exit codes: 0 success, 1 validation error, 2 solver failure,
3 audit/selftest failure.
"""

from __future__ import annotations

import argparse
import configparser
import hashlib
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .constitutive import (ConstitutiveError, ModelParams, SamplingSpec,
                           audit_assumptions, build_default_set,
                           divided_difference_H, pointwise_step_inequalities)
from .energy import write_ledger_csv
from .harness import SimulationSetup, study_delta, study_defect, study_tau
from .linalg import KrylovConfig, MeanPoissonSolver, SolverFailure
from .mesh import (FIELD_KIND_CELL, FIELD_KIND_XFACE, FIELD_KIND_YFACE, Grid,
                   sbp_selftest, write_field_snapshot)
from .state import ScenarioConfig, initialize_scenario
from .stepper import StepConfig, StepFailure, run

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_SOLVER = 2
EXIT_AUDIT = 3

# key registry: section -> key -> (type tag, default, symbol/meaning comment)
_SCHEMA = {
    "grid": {
        "nx": ("int", 32, "cells in x"),
        "ny": ("int", 32, "cells in y"),
        "lx": ("float", 1.0, "domain extent in x"),
        "ly": ("float", 1.0, "domain extent in y"),
        "bc": ("str", "box", "boundary mode: box | periodic"),
    },
    "params": {
        "epsilon": ("float", 0.1, "epsilon: interface thickness parameter"),
        "delta": ("float", 1e-3, "delta: regularization strength (>= 0)"),
        "rho1": ("float", 1.0, "rho_1: bulk density of fluid 1"),
        "rho2": ("float", 2.0, "rho_2: bulk density of fluid 2"),
        "eta1": ("float", 1.0, "eta_1: bulk viscosity of fluid 1"),
        "eta2": ("float", 2.0, "eta_2: bulk viscosity of fluid 2"),
        "beta": ("float", 1.0, "beta: surfactant coupling amplitude in f"),
        "h0": ("float", 1.0, "h_0: surface-energy offset, h(q) = h_0 below q_min"),
        "q_min": ("float", 0.0, "q_min: lower edge of the active q interval"),
        "q_max": ("float", 1.0, "q_max: upper edge of the active q interval"),
        "c0": ("float", 0.5, "c_0: strong-monotonicity constant of g"),
        "c1": ("float", 0.1, "c_1: lower bound for d, m, m_tilde, eta"),
        "c2": ("float", 10.0, "c_2: upper bound for m, m_tilde, eta"),
    },
    "constitutive": {
        "audit_n": ("int", 4096, "sample count per axis for the audit"),
        "audit_pad": ("float", 1.0, "padding beyond [q_min, q_max]"),
        "audit_phi_lo": ("float", -3.0, "lower edge of the phi sample window"),
        "audit_phi_hi": ("float", 3.0, "upper edge of the phi sample window"),
        "audit_pairs": ("int", 4096, "random pair count for pair clauses"),
        "audit_seed": ("int", 20260809, "audit sampling seed"),
    },
    "stepper": {
        "tau": ("float", 1e-3, "tau: time step"),
        "omega": ("float", 1.0, "omega: fixed-point damping in (0, 1]"),
        "tol_nl": ("float", 1e-10, "relative nonlinear residual tolerance"),
        "max_picard": ("int", 200, "fixed-point iteration budget"),
        "newton": ("bool", True, "enable Newton once close or stalled"),
        "newton_threshold": ("float", 1e-3, "residual level that enables Newton"),
        "max_newton": ("int", 50, "Newton iteration budget"),
        "tau_backoff": ("float", 0.5, "step halving factor on failure"),
        "max_backoff": ("int", 8, "maximum step halvings"),
        "v0_mode": ("bool", False, "freeze v = 0 (exact energy-estimate mode)"),
        "extrapolate": ("bool", False, "extrapolated initial iterate"),
        "lin_rel_tol": ("float", 1e-10, "linear solver relative tolerance"),
        "lin_abs_tol": ("float", 1e-14, "linear solver absolute tolerance"),
        "preconditioner": ("str", "jacobi", "none | jacobi | incomplete-cholesky"),
    },
    "scenario": {
        "name": ("str", "uniform", "uniform | droplet | shear-droplet | random-seed"),
        "phi0": ("float", 0.0, "background order parameter"),
        "q0": ("float", 0.0, "background surfactant potential"),
        "radius": ("float", 0.25, "droplet radius"),
        "center_x": ("float", 0.5, "droplet center x"),
        "center_y": ("float", 0.5, "droplet center y"),
        "q_amp": ("float", 0.5, "surfactant blob amplitude"),
        "q_sigma": ("float", 0.15, "surfactant blob width"),
        "shear": ("float", 0.0, "shear velocity amplitude"),
        "sigma": ("float", 0.01, "random perturbation amplitude"),
        "seed": ("int", 1234, "random scenario seed"),
    },
    "output": {
        "t_final": ("float", 0.01, "simulation horizon T"),
        "snapshot_every": ("int", 0, "snapshot cadence in steps (0 = final only)"),
        "write_fields": ("bool", False, "write binary field snapshots"),
        "slack_tol": ("float", 1e-8, "energy-slack flag level, relative to max(E, 1)"),
    },
    "study": {
        "deltas": ("floatlist", [1e-2, 1e-3, 1e-4], "descending delta list"),
        "taus": ("floatlist", [1e-2, 5e-3, 2.5e-3], "descending tau list"),
        "grids": ("intlist", [16, 32, 64], "refining grid sizes"),
    },
}


class ConfigError(ValueError):
    pass


def _coerce(tag: str, raw: str, where: str):
    try:
        if tag == "int":
            return int(raw)
        if tag == "float":
            return float(raw)
        if tag == "bool":
            low = raw.strip().lower()
            if low in ("true", "1", "yes", "on"):
                return True
            if low in ("false", "0", "no", "off"):
                return False
            raise ValueError(f"not a boolean: {raw!r}")
        if tag == "floatlist":
            return [float(x) for x in raw.replace(",", " ").split()]
        if tag == "intlist":
            return [int(x) for x in raw.replace(",", " ").split()]
        return raw.strip()
    except ValueError as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def parse_config(path) -> dict:
    """Read an INI config; unknown sections/keys are hard errors."""
    cp = configparser.ConfigParser()
    read = cp.read(path)
    if not read:
        raise ConfigError(f"cannot read config file {path}")
    values = {s: {k: d for k, (_, d, _) in keys.items()}
              for s, keys in _SCHEMA.items()}
    unknown = []
    for section in cp.sections():
        if section not in _SCHEMA:
            unknown.append(f"[{section}]")
            continue
        for key, raw in cp.items(section):
            if key not in _SCHEMA[section]:
                unknown.append(f"[{section}] {key}")
                continue
            tag = _SCHEMA[section][key][0]
            values[section][key] = _coerce(tag, raw, f"[{section}] {key}")
    if unknown:
        raise ConfigError("unknown configuration keys: " + ", ".join(unknown))
    return values


def default_config() -> dict:
    return {s: {k: d for k, (_, d, _) in keys.items()} for s, keys in _SCHEMA.items()}


def effective_config_text(values: dict) -> str:
    lines = [f"# surfflow {__version__} effective configuration"]
    for section, keys in _SCHEMA.items():
        lines.append(f"\n[{section}]")
        for key, (tag, _, comment) in keys.items():
            v = values[section][key]
            if tag in ("floatlist", "intlist"):
                out = ", ".join(("%.17g" % x if isinstance(x, float) else str(x))
                                for x in v)
            elif isinstance(v, bool):
                out = "true" if v else "false"
            elif isinstance(v, float):
                out = "%.17g" % v
            else:
                out = str(v)
            lines.append(f"# {comment}")
            lines.append(f"{key} = {out}")
    return "\n".join(lines) + "\n"


def config_hash(values: dict) -> str:
    return hashlib.sha256(effective_config_text(values).encode()).hexdigest()[:16]


def build_objects(values: dict):
    """Validated simulation objects from a config dictionary."""
    gsec = values["grid"]
    if gsec["bc"] not in ("box", "periodic"):
        raise ConfigError(f"[grid] bc must be box or periodic, got {gsec['bc']!r}")
    try:
        grid = Grid(gsec["nx"], gsec["ny"], gsec["lx"], gsec["ly"], gsec["bc"])
        params = ModelParams(**values["params"])
        params.validate()
        csec = values["constitutive"]
        sampling = SamplingSpec(n=csec["audit_n"], pad=csec["audit_pad"],
                                phi_lo=csec["audit_phi_lo"],
                                phi_hi=csec["audit_phi_hi"],
                                n_pairs=csec["audit_pairs"],
                                seed=csec["audit_seed"])
        ssec = values["stepper"]
        stepcfg = StepConfig(
            tau=ssec["tau"], omega=ssec["omega"], tol_nl=ssec["tol_nl"],
            max_picard=ssec["max_picard"], newton=ssec["newton"],
            newton_threshold=ssec["newton_threshold"],
            max_newton=ssec["max_newton"], tau_backoff=ssec["tau_backoff"],
            max_backoff=ssec["max_backoff"], v0_mode=ssec["v0_mode"],
            extrapolate=ssec["extrapolate"],
            krylov=KrylovConfig(rel_tol=ssec["lin_rel_tol"],
                                abs_tol=ssec["lin_abs_tol"],
                                preconditioner=ssec["preconditioner"]))
        scenario = ScenarioConfig(**values["scenario"])
        if scenario.name not in ("uniform", "droplet", "shear-droplet",
                                 "random-seed"):
            raise ConfigError(f"[scenario] unknown name {scenario.name!r}")
        T = values["output"]["t_final"]
        if T <= 0:
            raise ConfigError("[output] t_final must be positive")
    except (ConstitutiveError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    return grid, params, sampling, stepcfg, scenario, T


def _write_snapshots(outdir: Path, state, prefix: str = "") -> None:
    fields = outdir / "fields"
    fields.mkdir(parents=True, exist_ok=True)
    g = state.grid
    tag = f"{prefix}{state.k:06d}"
    for name, data, kind in (("phi", state.phi.data, FIELD_KIND_CELL),
                             ("mu", state.mu.data, FIELD_KIND_CELL),
                             ("q", state.q.data, FIELD_KIND_CELL),
                             ("p", state.p.data, FIELD_KIND_CELL),
                             ("vx", state.v.ux, FIELD_KIND_XFACE),
                             ("vy", state.v.uy, FIELD_KIND_YFACE)):
        write_field_snapshot(fields / f"{name}_{tag}.bin", data, g.nx, g.ny,
                             kind, state.t, state.k)


def _cmd_print_config(values, outdir, args) -> int:
    sys.stdout.write(effective_config_text(values))
    return EXIT_OK


def _cmd_audit(values, outdir, args) -> int:
    _, params, sampling, _, _, _ = build_objects(values)
    cset = build_default_set(params)
    report = audit_assumptions(cset, params, sampling)
    outdir.mkdir(parents=True, exist_ok=True)
    (outdir / "audit.txt").write_text(report.to_text() + "\n")
    (outdir / "audit.csv").write_text(report.to_csv())
    print(report.to_text())
    return EXIT_OK if report.passed else EXIT_AUDIT


def _cmd_selftest(values, outdir, args) -> int:
    _, params, sampling, _, _, _ = build_objects(values)
    ok = True
    for n in (16, 32):
        for bc in ("box", "periodic"):
            rep = sbp_selftest(Grid(n, n, 1.0, 1.0, bc))
            print(rep.to_text())
            ok &= rep.passed
    # linear-solver certification on a variable-coefficient problem
    rng = np.random.default_rng(0)
    g = Grid(24, 24, 1.0, 1.0, "box")
    coeff = np.exp(0.3 * rng.standard_normal(g.n_faces))
    solver = MeanPoissonSolver(g, coeff)
    x_true = rng.standard_normal(g.n_cells)
    x, stats = solver.solve(solver.apply(x_true))
    cert = float(np.abs(x - x_true).max())
    print(f"linear certification: mean-augmented solve error {cert:.3e} "
          f"[{'pass' if cert < 1e-8 else 'FAIL'}]")
    ok &= cert < 1e-8
    cset = build_default_set(params)
    pairs = rng.uniform(-2.0, 3.0, size=(100_000, 2))
    ineq = pointwise_step_inequalities(cset, pairs)
    print(f"pointwise inequalities: {ineq.n_pairs} pairs, "
          f"min slacks ({ineq.min_slack_f:.3e}, {ineq.min_slack_g:.3e}), "
          f"violations {ineq.violations} "
          f"[{'pass' if ineq.passed else 'FAIL'}]")
    ok &= ineq.passed
    a = rng.uniform(-4, 4, 50_000)
    b = a + rng.choice([0.0, 1e-12, -1e-9, 0.5, -2.0], 50_000)
    H = divided_difference_H(a, b, cset)
    err = np.abs(H * (a - b) - (cset.W(a) - cset.W(b)))
    tol = 1e-14 * (1.0 + np.abs(cset.W(a)) + np.abs(cset.W(b)))
    hok = bool(np.all(err <= tol))
    print(f"secant identity: worst ratio {float(np.max(err / tol)):.3e} "
          f"[{'pass' if hok else 'FAIL'}]")
    ok &= hok
    audit = audit_assumptions(cset, params, sampling)
    print(f"constitutive audit: "
          f"[{'pass' if audit.passed else 'FAIL: ' + ','.join(audit.failed_ids())}]")
    ok &= audit.passed
    print("selftest:", "all checks passed" if ok else "FAILURES present")
    return EXIT_OK if ok else EXIT_AUDIT


def _cmd_run(values, outdir, args) -> int:
    grid, params, sampling, stepcfg, scenario, T = build_objects(values)
    cset = build_default_set(params)
    audit = audit_assumptions(cset, params, sampling)
    if not audit.passed:
        print("constitutive audit failed: " + ", ".join(audit.failed_ids()),
              file=sys.stderr)
        return EXIT_AUDIT
    outdir.mkdir(parents=True, exist_ok=True)
    (outdir / "config.effective.ini").write_text(effective_config_text(values))
    if params.delta == 0.0:
        print("note: delta = 0 disables the regularization terms; the run is "
              "outside the regime the dissipative structure covers")
    state0 = initialize_scenario(scenario, grid, params, cset)
    snap_every = values["output"]["snapshot_every"]
    write_fields = values["output"]["write_fields"]
    callbacks = []
    if write_fields and snap_every > 0:
        callbacks.append(lambda s, rep, row:
                         _write_snapshots(outdir, s) if s.k % snap_every == 0
                         else None)
    try:
        result = run(state0, grid, cset, params, stepcfg, T,
                     callbacks=callbacks)
    except StepFailure as exc:
        write_ledger_csv(outdir / "ledger.csv", exc.partial.rows)
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except SolverFailure as exc:
        print(f"linear solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    write_ledger_csv(outdir / "ledger.csv", result.rows)
    if write_fields:
        _write_snapshots(outdir, result.final_state)
    if args.dump_operators:
        from .linalg import export_matrix_market
        from .stepper import assemble_linear
        lin = assemble_linear(state0, grid, cset, params, stepcfg)
        opdir = outdir / "operators"
        opdir.mkdir(parents=True, exist_ok=True)
        for name, mat in (("velocity_form", lin.A_form),
                          ("q_diffusion", lin.P_q.lap),
                          ("mu_diffusion", lin.P_mu.lap),
                          ("phi_laplacian", lin.P_phi.lap)):
            if mat is not None:
                export_matrix_market(opdir / f"{name}.mtx", mat)
    last = result.rows[-1]
    # slack below -slack_tol * max(E, 1) would mean a non-dissipative step
    slack_tol = values["output"]["slack_tol"]
    e_prev = [result.rows[0].E_tot + result.rows[0].slack] \
        + [r.E_tot for r in result.rows[:-1]]
    bad_slack = sum(r.slack < -slack_tol * max(abs(e), 1.0)
                    for r, e in zip(result.rows, e_prev))
    print(f"run complete: {len(result.rows)} steps to t={last.t:g}, "
          f"E_tot={last.E_tot:.9g}, phi_mass={last.phi_mass:.12g}, "
          f"max|div v|={max(r.div_inf for r in result.rows):.3e}, "
          f"energy-slack violations: {bad_slack}")
    print(f"ledger: {outdir / 'ledger.csv'}")
    return EXIT_OK


def _study_setup(values, stepcfg=None):
    grid, params, _, cfg, scenario, T = build_objects(values)
    return SimulationSetup(grid=grid, params=params, scenario=scenario,
                           stepcfg=stepcfg or cfg, T=T)


def _cmd_study(kind):
    def cmd(values, outdir, args) -> int:
        setup = _study_setup(values)
        try:
            if kind == "delta":
                rep = study_delta(setup, values["study"]["deltas"],
                                  threads=args.threads)
            elif kind == "tau":
                rep = study_tau(setup, values["study"]["taus"],
                                threads=args.threads)
            else:
                rep = study_defect(setup, values["study"]["grids"],
                                   threads=args.threads)
        except ValueError as exc:
            print(f"invalid study configuration: {exc}", file=sys.stderr)
            return EXIT_VALIDATION
        outdir.mkdir(parents=True, exist_ok=True)
        (outdir / "config.effective.ini").write_text(effective_config_text(values))
        (outdir / "study.csv").write_text(rep.to_csv())
        print(rep.summary())
        return EXIT_OK if rep.passed else EXIT_SOLVER
    return cmd


_COMMANDS = {
    "run": _cmd_run,
    "audit": _cmd_audit,
    "selftest": _cmd_selftest,
    "study-delta": _cmd_study("delta"),
    "study-tau": _cmd_study("tau"),
    "study-defect": _cmd_study("defect"),
    "print-config": _cmd_print_config,
}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="surfflow",
        description="Energy-stable implicit simulator for two-phase flow "
                    "with a soluble surfactant")
    parser.add_argument("command", choices=sorted(_COMMANDS))
    parser.add_argument("config", nargs="?", help="INI configuration file")
    parser.add_argument("--out", default="out", help="output directory")
    parser.add_argument("--threads", type=int, default=1,
                        help="concurrent runs inside studies")
    parser.add_argument("--snapshot-every", type=int, default=None,
                        help="override [output] snapshot_every")
    parser.add_argument("--seed", type=int, default=None,
                        help="override [scenario] seed")
    parser.add_argument("--dump-operators", action="store_true",
                        help="export assembled operator blocks (matrix market)")
    args = parser.parse_args(argv)

    try:
        values = parse_config(args.config) if args.config else default_config()
        if args.snapshot_every is not None:
            values["output"]["snapshot_every"] = args.snapshot_every
        if args.seed is not None:
            values["scenario"]["seed"] = args.seed
        return _COMMANDS[args.command](values, Path(args.out), args)
    except (ConfigError, ConstitutiveError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except ValueError as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except StepFailure as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except SolverFailure as exc:
        print(f"linear solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
