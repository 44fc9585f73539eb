"""Command-line interface.

Subcommands: check, solve, gap, universality, viscosity, fgrate.  Each
takes a JSON config file plus --out / --seed / --paths / --steps
overrides, writes one CSV per report table (%.12e floats, LF endings)
and a summary.json with rate fits, a config echo, seed fingerprints, and
wall-clock timings.  Exit codes: 0 success, 2 configuration error,
3 solver failure.
"""

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from .diagnostics import (
    condition_check,
    displacement_report,
    graph_stats,
    interaction_metrics,
    lasry_lions_report,
)
from .errors import ConfigurationError, GameGapError, SolverError
from .experiments import (
    GAP_COLUMNS,
    UNIVERSALITY_COLUMNS,
    VISCOSITY_COLUMNS,
    ExperimentConfig,
    run_gap_sweep,
    run_universality_sweep,
    run_viscosity_sweep,
    write_csv,
    write_summary,
)
from .games import game_from_json, game_to_json, sample_noise, draw_initial
from .measures import FGRateConfig, fg_rate_experiment
from .riccati import (
    simulate,
    solve_closed_loop_lq,
    solve_distributed_lq,
    solve_mfg_lq,
    solve_open_loop_lq,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SOLVER = 3


def _load_config(path):
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise ConfigurationError(f"config file not found: {path}")
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"config is not valid JSON: {exc}")


def _apply_overrides(doc, args):
    doc = dict(doc)
    if args.seed is not None:
        doc["seed"] = args.seed
    if args.paths is not None:
        doc["n_paths"] = args.paths
    if args.steps is not None:
        doc.setdefault("game", {})
        doc["game"] = dict(doc["game"])
        doc["game"]["n_steps"] = args.steps
    return doc


def _game_doc(doc, args):
    game_doc = dict(doc.get("game", doc))
    if args.steps is not None:
        game_doc["n_steps"] = args.steps
    return game_doc


def _out_dir(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def _cmd_check(args):
    doc = _load_config(args.config)
    game = game_from_json(_game_doc(doc, args))
    t0 = time.time()
    disp = displacement_report(game)
    ll = lasry_lions_report(game)
    metrics = interaction_metrics(game)
    stats = graph_stats(game.weights)
    verdict = condition_check(disp, metrics, game.sigma,
                              thresholds=doc.get("thresholds"))
    report = {
        "displacement": disp.to_json(),
        "lasry_lions": ll.to_json(),
        "interaction": metrics.to_json(),
        "graph": stats.to_json(),
        "verdict": verdict.to_json(),
    }
    print(json.dumps(report, indent=2, sort_keys=True))
    print()
    rows = [
        ("C_F_disp", disp.c_f_disp), ("C_G_disp", disp.c_g_disp),
        ("C_disp", disp.c_disp), ("C_F_LL", ll.c_f_ll), ("C_G_LL", ll.c_g_ll),
        ("C_DF_Lip", disp.c_df_lip), ("C_DG_Lip", disp.c_dg_lip),
        ("delta", metrics.delta), ("kappa", metrics.kappa),
        ("kappa_tilde", metrics.kappa_tilde),
        ("weak1", metrics.weak1), ("weak2", metrics.weak2),
        ("|w|_Fr", stats.frobenius), ("max_row_l2", stats.max_row_l2),
        ("dd_product", stats.dd_product),
        ("displacement_monotone", disp.displacement_monotone),
    ]
    width = max(len(name) for name, _ in rows)
    for name, value in rows:
        if isinstance(value, bool):
            text = str(value)
        elif value is None:
            text = "-"
        else:
            text = f"{value:.6e}"
        print(f"{name:<{width}}  {text}")
    out = _out_dir(args)
    with open(out / "check.json", "w", encoding="utf-8", newline="\n") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")
    write_summary(out / "summary.json", "check", {"game": game_to_json(game)},
                  report, {}, {"wall_seconds": time.time() - t0})
    return EXIT_OK


def _cmd_solve(args):
    doc = _load_config(args.config)
    game = game_from_json(_game_doc(doc, args))
    members = doc.get("members", ["open_loop", "closed_loop"])
    t0 = time.time()
    solved = []
    out = _out_dir(args)
    for kind in members:
        if kind == "open_loop":
            eq = solve_open_loop_lq(game)
        elif kind == "closed_loop":
            eq = solve_closed_loop_lq(game)
        elif kind == "distributed":
            eq = solve_distributed_lq(game)
        elif kind == "mean_field":
            eq = solve_mfg_lq(game)
        else:
            raise ConfigurationError(f"unknown equilibrium kind {kind!r}")
        solved.append(eq)
        with open(out / f"equilibrium_{kind}.json", "w", encoding="utf-8",
                  newline="\n") as fh:
            json.dump(eq.to_json(), fh, sort_keys=True)
            fh.write("\n")
    n_paths = args.paths if args.paths is not None else int(doc.get("n_paths", 0))
    seed = args.seed if args.seed is not None else int(doc.get("seed", 0))
    if n_paths > 0:
        noise = sample_noise(game, n_paths, seed)
        x0 = draw_initial(game, n_paths,
                          seed=np.random.SeedSequence(entropy=seed, spawn_key=(1,)))
        bundle = simulate(solved, game, noise, x0=x0)
        bundle.to_csv(out / "trajectories.csv")
        gaps = {f"{g.kinds[0]}|{g.kinds[1]}": g.to_json()
                for g in bundle.gaps.values()}
    else:
        gaps = {}
    write_summary(out / "summary.json", "solve",
                  {"game": game_to_json(game), "members": members,
                   "n_paths": n_paths, "seed": seed},
                  {"gaps": gaps}, {}, {"wall_seconds": time.time() - t0})
    print(f"solved {len(solved)} equilibria -> {out}")
    return EXIT_OK


def _cmd_gap(args):
    doc = _apply_overrides(_load_config(args.config), args)
    config = ExperimentConfig.from_json(doc, kind="gap")
    t0 = time.time()
    report = run_gap_sweep(config)
    out = _out_dir(args)
    write_csv(out / "gap_report.csv", GAP_COLUMNS, report.rows)
    write_summary(out / "summary.json", "gap", config, report.to_json(),
                  report.fits, {"wall_seconds": time.time() - t0},
                  verdicts=_fit_verdicts(report.fits, config.fit_thresholds))
    _print_fits(report.fits, report.warnings)
    return EXIT_OK


def _cmd_universality(args):
    doc = _apply_overrides(_load_config(args.config), args)
    config = ExperimentConfig.from_json(doc, kind="universality")
    t0 = time.time()
    report = run_universality_sweep(config)
    out = _out_dir(args)
    write_csv(out / "universality.csv", UNIVERSALITY_COLUMNS, report.rows)
    write_summary(out / "summary.json", "universality", config,
                  report.to_json(), report.fits,
                  {"wall_seconds": time.time() - t0},
                  verdicts=_fit_verdicts(report.fits, config.fit_thresholds))
    _print_fits(report.fits, report.warnings)
    return EXIT_OK


def _cmd_viscosity(args):
    doc = _apply_overrides(_load_config(args.config), args)
    config = ExperimentConfig.from_json(doc, kind="viscosity")
    t0 = time.time()
    report = run_viscosity_sweep(config)
    out = _out_dir(args)
    write_csv(out / "viscosity.csv", VISCOSITY_COLUMNS, report.rows)
    fits = {"gap_vs_rho_plus_sigma": report.fit} if report.fit else {}
    write_summary(out / "summary.json", "viscosity", config, report.to_json(),
                  fits, {"wall_seconds": time.time() - t0})
    _print_fits(fits, report.warnings)
    print(f"strictly decreasing in N: {report.strictly_decreasing}")
    return EXIT_OK


def _cmd_fgrate(args):
    doc = _apply_overrides(_load_config(args.config), args)
    cfg = FGRateConfig(
        q=float(doc.get("q", 4.0)),
        r=float(doc.get("r", 1.0)),
        sizes=tuple(int(v) for v in doc.get("sizes", (16, 64, 256, 1024))),
        d=int(doc.get("d", 1)),
        mean=float(doc.get("mean", 0.0)),
        scale=float(doc.get("scale", 1.0)),
        means_rule=doc.get("means_rule"),
        profiles=tuple(doc.get("profiles", ("uniform", "inv_index"))),
        mc_reps=int(doc.get("mc_reps", 200)),
        seed=int(doc.get("seed", 0)),
        grid_points=int(doc.get("grid_points", 10_000)),
    )
    t0 = time.time()
    result = fg_rate_experiment(cfg)
    out = _out_dir(args)
    footer = [f"# ratefit {name}: " + json.dumps(fit.to_json(), sort_keys=True)
              for name, fit in sorted(result.fits.items())]
    rows = [{"profile_id": row["profile"], "K": row["K"],
             "estimate": row["estimate"], "std_error": row["std_error"],
             "rho_theory": row["rho_theory"]} for row in result.rows]
    write_csv(out / "fgrate.csv",
              ["profile_id", "K", "estimate", "std_error", "rho_theory"],
              rows, footer_lines=footer)
    write_summary(out / "summary.json", "fgrate",
                  {"fgrate": cfg.__dict__ | {"sizes": list(cfg.sizes),
                                             "profiles": list(cfg.profiles)}},
                  {"rows": result.rows}, result.fits,
                  {"wall_seconds": time.time() - t0})
    _print_fits(result.fits, [])
    return EXIT_OK


def _fit_verdicts(fits, thresholds):
    verdicts = {}
    for name, spec in (thresholds or {}).items():
        fit = fits.get(name)
        if fit is None:
            verdicts[name] = None
            continue
        ok = True
        if "slope_max" in spec:
            ok = ok and fit.slope <= spec["slope_max"]
        if "r2_min" in spec:
            ok = ok and fit.r2 >= spec["r2_min"]
        verdicts[name] = bool(ok)
    return verdicts


def _print_fits(fits, warnings):
    for name, fit in sorted(fits.items()):
        print(f"{name}: slope {fit.slope:+.4f}  r2 {fit.r2:.4f}")
    for w in warnings:
        print(f"warning: {w}")


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def build_parser():
    parser = argparse.ArgumentParser(
        prog="gamegap",
        description="N-player stochastic differential games on networks: "
                    "equilibria, gaps, and scaling experiments.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in (("check", _cmd_check), ("solve", _cmd_solve),
                     ("gap", _cmd_gap), ("universality", _cmd_universality),
                     ("viscosity", _cmd_viscosity), ("fgrate", _cmd_fgrate)):
        p = sub.add_parser(name)
        p.add_argument("config", help="JSON config file")
        p.add_argument("--out", default="gamegap_out", help="output directory")
        p.add_argument("--seed", type=int, default=None, help="seed override")
        p.add_argument("--paths", type=int, default=None,
                       help="Monte Carlo path count override")
        p.add_argument("--steps", type=int, default=None,
                       help="time step count override")
        p.set_defaults(fn=fn)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except SolverError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except GameGapError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
