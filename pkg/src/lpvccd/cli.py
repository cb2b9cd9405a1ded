"""Command-line front end: trim, lpv-build, lpv-validate, oc-solve, sweep, report.

Exit codes: 0 success, 2 validation failure (bad config, failed checks),
3 infeasible subproblem, 4 I/O error.  All commands are deterministic given
their inputs and seed, and write only under their ``--out`` paths.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys

import numpy as np

from lpvccd import ccd
from lpvccd import lpv as lpvmod
from lpvccd import surrogate as sg
from lpvccd.dtqp.ocp import OcLimits, OcProblem, solve_ocp
from lpvccd.statespace import Trajectory, eigenvalues, match_eigenvalue_paths, save_model

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_INFEASIBLE = 3
EXIT_IO = 4

SWEEP_CONFIG_SCHEMA = {
    "grid": dict,
    "levels_deg": list,
    "case_means": list,
    "seed": int,
    "n_mesh": int,
    "t_f": (int, float),
    "omega_max": (int, float),
    "family": (str, type(None)),
    "family_wind_samples": list,
    "family_axes": dict,
    "workers": int,
    "cache_dir": (str, type(None)),
    "f_corners": list,
    "tol": (int, float),
}

SWEEP_CONFIG_DEFAULTS = {
    "levels_deg": [3.0, 4.0, 5.0, 6.0, 7.0],
    "case_means": list(ccd.DEFAULT_CASE_MEANS),
    "seed": ccd.DEFAULT_SEED,
    "n_mesh": 2500,
    "t_f": 600.0,
    "omega_max": 0.7850,
    "family": None,
    "workers": 8,
    "cache_dir": None,
    "f_corners": [[0.8, 0.8], [1.2, 0.8], [0.8, 1.2], [1.2, 1.2]],
    "tol": 1e-8,
}


class ConfigError(ValueError):
    pass


def _validate_config(doc: dict) -> dict:
    unknown = set(doc) - set(SWEEP_CONFIG_SCHEMA)
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    if "grid" not in doc:
        raise ConfigError("config requires a 'grid' entry")
    cfg = dict(SWEEP_CONFIG_DEFAULTS)
    cfg.update(doc)
    for key, expected in SWEEP_CONFIG_SCHEMA.items():
        if key in cfg and cfg[key] is not None and key != "family_axes":
            if not isinstance(cfg[key], expected):
                raise ConfigError(f"config key '{key}' has wrong type")
    grid = cfg["grid"]
    for axis in ("cs", "cd"):
        if axis not in grid or len(grid[axis]) != 3:
            raise ConfigError(f"grid.{axis} must be [min, max, count]")
    return cfg


def _axis(spec) -> np.ndarray:
    lo, hi, n = float(spec[0]), float(spec[1]), int(spec[2])
    return np.linspace(lo, hi, n)


def _parse_plant(text: str) -> np.ndarray:
    parts = [float(v) for v in text.split(",")]
    if len(parts) != 2:
        raise ConfigError("--plant expects 'c_s,c_d'")
    return np.array(parts)


def _parse_wind_range(text: str) -> np.ndarray:
    lo, hi, n = text.split(":")
    return np.linspace(float(lo), float(hi), int(n))


def _fmt(v) -> str:
    return repr(float(v))


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_trim(args) -> int:
    try:
        plant = _parse_plant(args.plant)
        sg.PlantDesign(plant[0], plant[1])
    except (ValueError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    winds = _parse_wind_range(args.wind_range)
    os.makedirs(args.out, exist_ok=True)
    params = sg.SurrogateParams.from_file(args.surrogate) if args.surrogate else None

    rows, eigs, failures = [], [], []
    for w in winds:
        try:
            model, op = sg.linearize(float(w), plant, params)
        except (sg.TrimError, ValueError) as exc:
            failures.append((w, str(exc)))
            print(f"trim failed at w={w:.2f}: {exc}", file=sys.stderr)
            continue
        save_model(os.path.join(args.out, f"model_w{w:06.2f}.json"), model, op)
        rows.append((w, op, model))
        eigs.append(eigenvalues(model))

    if rows:
        tracked = match_eigenvalue_paths(eigs)
        table = os.path.join(args.out, "trim_table.csv")
        with open(table, "w") as fh:
            labels = rows[0][2].state_labels
            head = ["w"] + [f"xi_{l}" for l in labels] + ["u_tau_g", "u_beta"]
            head += [f"eig{k}_re" for k in range(tracked.shape[1])]
            head += [f"eig{k}_im" for k in range(tracked.shape[1])]
            fh.write(",".join(head) + "\n")
            for (w, op, _), ev in zip(rows, tracked):
                vals = ([w] + list(op.xi_o) + list(op.u_o)
                        + list(ev.real) + list(ev.imag))
                fh.write(",".join(_fmt(v) for v in vals) + "\n")
    print(f"wrote {len(rows)} models to {args.out}"
          + (f" ({len(failures)} trim failures)" if failures else ""))
    return EXIT_VALIDATION if failures else EXIT_OK


def _load_samples(directory) -> list:
    from lpvccd.statespace import load_model
    names = sorted(f for f in os.listdir(directory)
                   if f.endswith(".json") and f != "manifest.json")
    return [load_model(os.path.join(directory, name)) for name in names]


def cmd_lpv_build(args) -> int:
    try:
        samples = _load_samples(args.models)
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    try:
        model = lpvmod.build_lpv(samples)
    except (ValueError, lpvmod.LpvStructureError) as exc:
        print(f"build error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    lpvmod.save_lpv(args.out, model)
    print(f"built LPV over {model.W.size} wind samples -> {args.out}")
    return EXIT_OK


def cmd_lpv_validate(args) -> int:
    try:
        samples = _load_samples(args.models)
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    try:
        if args.split == "alternate":
            train, held = lpvmod.alternate_split(samples)
        else:
            train, held = samples, samples
        model = lpvmod.build_lpv(train)
    except (ValueError, lpvmod.LpvStructureError) as exc:
        print(f"build error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    params = sg.SurrogateParams.from_file(args.surrogate) if args.surrogate else sg.default_params()
    tol = lpvmod.ValidationTolerances(hinf_rel=args.hinf_rel)
    scenario = lpvmod.standard_step_wind(t_f=args.scenario_tf)
    report = lpvmod.validate(model, held, tolerances=tol,
                             surrogate_params=params, scenario=scenario)
    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "report.json"), "w") as fh:
        json.dump(report.to_json_dict(), fh, indent=1)
    with open(os.path.join(args.out, "errors.csv"), "w") as fh:
        fh.write("w,hinf_error,hinf_norm,matrix_rel_error,eig_error,stationarity\n")
        for row in report.per_w_rows():
            fh.write(",".join(_fmt(row[k]) for k in
                              ("w", "hinf_error", "hinf_norm", "matrix_rel_error",
                               "eig_error", "stationarity")) + "\n")
    k = int(np.argmax(report.hinf_errors))
    print(f"validation {'PASS' if report.passed else 'FAIL'}: "
          f"max gain error {report.hinf_errors[k]:.3e} at w={report.heldout_w[k]:.1f} m/s"
          + (" (transition region)" if report.transition_region_dominates else ""))
    return EXIT_OK if report.passed else EXIT_VALIDATION


def _load_lpv_source(path, plant):
    with open(os.path.join(path, "manifest.json")) as fh:
        kind = json.load(fh).get("type")
    if kind == "wind_lpv":
        return lpvmod.load_lpv(path)
    family = lpvmod.load_family(path)
    if plant is None:
        raise ConfigError("--plant is required when --lpv points at a plant family")
    return family.at_plant(_parse_plant(plant))


def _wind_from_args(args) -> Trajectory:
    if args.wind:
        data = np.loadtxt(args.wind, delimiter=",", skiprows=1)
        return Trajectory(data[:, 0], data[:, 1], ("wind",))
    means = ([float(v) for v in args.means.split(",")] if args.means
             else list(ccd.DEFAULT_CASE_MEANS))
    cases = ccd.generate_wind_cases(means=means, seed=args.seed, t_f=args.t_f)
    for case in cases:
        if case.case_id == args.case:
            return case.profile
    raise ConfigError(f"case id {args.case} not in 1..{len(cases)}")


def cmd_oc_solve(args) -> int:
    try:
        source = _load_lpv_source(args.lpv, args.plant)
        wind = _wind_from_args(args)
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    limits = OcLimits(omega_g_max=args.omega_max,
                      theta_p_max=math.radians(args.theta_max))
    problem = OcProblem(lpv=source, wind=wind, t_f=args.t_f, n_mesh=args.N,
                        limits=limits)
    sol = solve_ocp(problem)
    os.makedirs(args.out, exist_ok=True)
    sol.write_csv(os.path.join(args.out, "solution.csv"))
    sol.write_summary(os.path.join(args.out, "summary.json"))
    if sol.status == "optimal":
        print(f"optimal: average power {sol.avg_power / 1e6:.4f} MW, "
              f"objective {sol.objective:.6f}")
        return EXIT_OK
    print(f"subproblem {sol.status}")
    return EXIT_INFEASIBLE if sol.status == "infeasible" else EXIT_VALIDATION


def cmd_sweep(args) -> int:
    try:
        with open(args.config) as fh:
            doc = json.load(fh)
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    try:
        cfg = _validate_config(doc)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION

    workers = int(os.environ.get("LPVCCD_WORKERS", cfg["workers"]))
    cache_dir = os.environ.get("LPVCCD_CACHE_DIR", cfg["cache_dir"])
    if cfg["family"]:
        family = lpvmod.load_family(cfg["family"])
    else:
        fam_axes = cfg.get("family_axes", {})
        W = np.asarray(cfg.get("family_wind_samples",
                               lpvmod.default_wind_samples()), dtype=float)
        family = lpvmod.build_family_from_surrogate(
            cs_axis=_axis(fam_axes["cs"]) if "cs" in fam_axes else None,
            cd_axis=_axis(fam_axes["cd"]) if "cd" in fam_axes else None,
            W=W)
    cases = ccd.generate_wind_cases(means=cfg["case_means"], seed=cfg["seed"],
                                    t_f=cfg["t_f"])
    cost = ccd.CostModel.from_file()
    result = ccd.sweep(family, _axis(cfg["grid"]["cs"]), _axis(cfg["grid"]["cd"]),
                       cfg["levels_deg"], cases, cost, n_mesh=cfg["n_mesh"],
                       t_f=cfg["t_f"], omega_max=cfg["omega_max"], tol=cfg["tol"],
                       workers=workers, cache_dir=cache_dir, seed=cfg["seed"])
    os.makedirs(args.out, exist_ok=True)
    result.write_sweep_csv(os.path.join(args.out, "sweep.csv"))
    result.write_cases_csv(os.path.join(args.out, "cases.csv"))
    summary = result.summary_dict(cost=cost, f_corners=cfg["f_corners"])
    with open(os.path.join(args.out, "summary.json"), "w") as fh:
        json.dump(summary, fh, indent=1)
    n_solves = result.pbar.size
    print(f"sweep complete: {n_solves} subproblems "
          f"({result.cache_hits} cached), {result.runtime_s:.1f} s solve time")
    for level in summary["per_level"]:
        print(f"  theta_max {level['theta_max_deg']:.0f} deg: "
              f"best LCOE {level['lcoe_opt']:.2f} $/MWh at "
              f"[{level['argmin_cs']:.1f}, {level['argmin_cd']:.1f}] m "
              f"({level['infeasible_pairs']} infeasible case-cells)")
    return EXIT_OK


def cmd_report(args) -> int:
    path = os.path.join(args.sweep, "summary.json")
    try:
        with open(path) as fh:
            summary = json.load(fh)
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    if args.format == "csv":
        print("theta_max_deg,argmin_cs,argmin_cd,lcoe_opt,infeasible_pairs")
        for level in summary["per_level"]:
            print(f"{level['theta_max_deg']!r},{level['argmin_cs']!r},"
                  f"{level['argmin_cd']!r},{level['lcoe_opt']!r},"
                  f"{level['infeasible_pairs']}")
        for corner in summary.get("cost_corners", []):
            print(f"corner_{corner['F'][0]}_{corner['F'][1]},"
                  f"{corner['argmin_cs']!r},{corner['argmin_cd']!r},"
                  f"{corner['lcoe_opt']!r},")
    else:
        for level in summary["per_level"]:
            print(f"theta_max {level['theta_max_deg']:.0f} deg: "
                  f"LCOE* {level['lcoe_opt']:.2f} $/MWh at "
                  f"[{level['argmin_cs']:.1f}, {level['argmin_cd']:.1f}] m, "
                  f"{level['infeasible_pairs']} infeasible case-cells")
        for corner in summary.get("cost_corners", []):
            print(f"F={corner['F']}: LCOE* {corner['lcoe_opt']:.2f} $/MWh at "
                  f"[{corner['argmin_cs']:.1f}, {corner['argmin_cd']:.1f}] m")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lpvccd",
        description="LPV-based open-loop optimal control and plant design sweeps "
                    "for a floating wind turbine surrogate")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("trim", help="trim and linearize over a wind range")
    p.add_argument("--wind-range", default="3:25:23", help="lo:hi:count [m/s]")
    p.add_argument("--plant", default="51.75,12.50", help="c_s,c_d [m]")
    p.add_argument("--surrogate", default=None, help="surrogate calibration JSON")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_trim)

    p = sub.add_parser("lpv-build", help="fit an LPV model from model files")
    p.add_argument("--models", required=True, help="directory of model JSONs")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_lpv_build)

    p = sub.add_parser("lpv-validate", help="fidelity checks against held-out models")
    p.add_argument("--models", required=True)
    p.add_argument("--split", choices=("alternate", "none"), default="alternate")
    p.add_argument("--hinf-rel", type=float, default=0.05)
    p.add_argument("--scenario-tf", type=float, default=600.0)
    p.add_argument("--surrogate", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_lpv_validate)

    p = sub.add_parser("oc-solve", help="solve one open-loop control subproblem")
    p.add_argument("--lpv", required=True, help="LPV model or family directory")
    p.add_argument("--plant", default=None, help="c_s,c_d when --lpv is a family")
    p.add_argument("--case", type=int, default=7)
    p.add_argument("--means", default=None, help="comma list overriding case means")
    p.add_argument("--seed", type=int, default=ccd.DEFAULT_SEED)
    p.add_argument("--wind", default=None, help="CSV (t,w) overriding the case")
    p.add_argument("--theta-max", type=float, default=6.0, help="[deg]")
    p.add_argument("--omega-max", type=float, default=0.7850, help="[rad/s]")
    p.add_argument("--N", type=int, default=2500)
    p.add_argument("--t-f", type=float, default=600.0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_oc_solve)

    p = sub.add_parser("sweep", help="plant-design sweep from a JSON config")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("report", help="print optima from a finished sweep")
    p.add_argument("--sweep", required=True, help="sweep output directory")
    p.add_argument("--format", choices=("text", "csv"), default="text")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
