"""Theorem-level experiments as reproducible sweeps.

Each sweep builds one game per population size N, solves the relevant
equilibria, simulates them all on a single shared NoiseBundle (common
random numbers; the per-N fingerprints are recorded so the discipline is
checkable), and fits log-log slopes of the measured gaps against the
sweep variable.  The theory bounds involve unknown dimension-free
constants, so acceptance is always on slopes, never on absolute values.

E[sup_t .] is estimated by the max over grid nodes per path, then
averaged; per-player averages equal the full norm divided by N on the
same samples by construction.
"""

import json
from dataclasses import dataclass, field

import numpy as np

from .diagnostics import graph_stats, interaction_metrics
from .errors import ConfigurationError, UnsupportedModelError
from .fbsde import (
    shoot_particles_against_flow,
    shoot_pontryagin_batch,
    solve_mkv_deterministic,
)
from .games import (
    LQNetwork,
    ParticleCloud,
    PhiNetwork,
    PointMass,
    ProductGaussian,
    build_game,
    build_weight_matrix,
    draw_initial,
    sample_noise,
)
from .measures import fit_loglog, poincare_constant, rho_rate
from .riccati import (
    pathwise_gap_stats,
    simulate,
    solve_closed_loop_lq,
    solve_distributed_lq,
    solve_mfg_lq,
    solve_open_loop_lq,
)

__all__ = [
    "ExperimentConfig", "GapReport", "UniversalityReport", "ViscosityReport",
    "run_gap_sweep", "run_universality_sweep", "run_viscosity_sweep",
    "fit_loglog", "write_csv", "write_summary",
]


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

@dataclass
class ExperimentConfig:
    """One sweep: a game template plus the sweep rule.

    The template fixes (model, d, horizon, noise intensities, initial
    rule); `graph` and `initial` are rules re-instantiated at every N.
    For viscosity sweeps sigma is ignored in favour of
    sigma_rule = {'c': .., 'beta': ..} giving sigma_N = c N^{-beta} with
    beta < 1/2 (the joint limit needs sigma_N sqrt(N) -> infinity).
    """

    kind: str
    model: dict
    n_list: tuple
    d: int = 1
    t0: float = 0.0
    T: float = 1.0
    n_steps: int = 200
    sigma: float = 1.0
    sigma0: float = 0.0
    graph: dict = field(default_factory=lambda: {"kind": "complete"})
    initial: dict = field(default_factory=lambda: {"kind": "product_gaussian",
                                                   "mean": 0.0, "scale": 1.0})
    n_paths: int = 256
    seed: int = 0
    sigma_rule: dict = None
    fit_thresholds: dict = field(default_factory=dict)

    def __post_init__(self):
        self.n_list = tuple(int(n) for n in self.n_list)
        if any(b <= a for a, b in zip(self.n_list, self.n_list[1:])):
            raise ConfigurationError("N list must be strictly increasing")
        if self.kind in ("gap", "universality", "viscosity") and len(self.n_list) < 3:
            raise ConfigurationError(
                "rate fits need at least 3 sweep points in the N list")
        if self.n_paths < 1:
            raise ConfigurationError("n_paths must be >= 1")
        if self.kind == "viscosity":
            rule = self.sigma_rule or {"c": 1.0, "beta": 0.25}
            beta = float(rule.get("beta", 0.25))
            if beta >= 0.5:
                raise ConfigurationError(
                    f"sigma_N rule with beta={beta} violates the joint-limit "
                    "condition sigma_N sqrt(N) -> infinity (need beta < 1/2)")
            if float(rule.get("c", 1.0)) <= 0:
                raise ConfigurationError("sigma_N rule needs c > 0")
            self.sigma_rule = {"c": float(rule.get("c", 1.0)), "beta": beta}

    @classmethod
    def from_json(cls, doc, kind=None):
        doc = dict(doc)
        kind = kind or doc.get("experiment")
        if kind is None:
            raise ConfigurationError("config is missing the experiment kind")
        game = dict(doc.get("game", {}))
        return cls(
            kind=kind,
            model=dict(game.get("model", {"kind": "lq_network", "a_f": 1.0,
                                          "a_g": 1.0, "q_f": 1.0, "q_g": 1.0})),
            n_list=tuple(doc.get("n_list", ())),
            d=int(game.get("d", 1)),
            t0=float(game.get("t0", 0.0)),
            T=float(game.get("T", 1.0)),
            n_steps=int(game.get("n_steps", 200)),
            sigma=float(game.get("sigma", 1.0)),
            sigma0=float(game.get("sigma0", 0.0)),
            graph=dict(doc.get("graph", {"kind": "complete"})),
            initial=dict(game.get("initial_law", {"kind": "product_gaussian",
                                                  "mean": 0.0, "scale": 1.0})),
            n_paths=int(doc.get("n_paths", 256)),
            seed=int(doc.get("seed", 0)),
            sigma_rule=doc.get("sigma_rule"),
            fit_thresholds=dict(doc.get("fit_thresholds", {})),
        )

    def echo(self):
        return {
            "experiment": self.kind, "model": self.model,
            "n_list": list(self.n_list), "d": self.d, "t0": self.t0,
            "T": self.T, "n_steps": self.n_steps, "sigma": self.sigma,
            "sigma0": self.sigma0, "graph": self.graph,
            "initial": self.initial, "n_paths": self.n_paths,
            "seed": self.seed, "sigma_rule": self.sigma_rule,
            "fit_thresholds": self.fit_thresholds,
        }


def _model_from_rule(rule):
    rule = dict(rule)
    kind = rule.pop("kind", "lq_network")
    if kind == "lq_network":
        return LQNetwork(**rule)
    if kind == "phi_network":
        return PhiNetwork(**rule)
    raise ConfigurationError(f"unknown model kind {kind!r} in sweep template")


def _weights_for(config, n, seed):
    rule = dict(config.graph)
    kind = rule.pop("kind", "complete")
    if kind == "circulant_k_regular" and "k_rule" in rule:
        frac = float(rule.pop("k_rule").get("fraction", 0.5))
        k = max(2, int(frac * n) // 2 * 2)
        rule["k"] = min(k, (n - 1) // 2 * 2)
    return build_weight_matrix(kind, n, rule, seed=seed)


def _initial_for(config, n):
    rule = dict(config.initial)
    kind = rule.get("kind", "product_gaussian")
    if kind == "product_gaussian":
        return ProductGaussian(rule.get("mean", 0.0), rule.get("scale", 1.0))
    if kind == "point_mass":
        return PointMass(rule.get("value", rule.get("points", 0.0)))
    if kind == "linspace_means":
        means = np.linspace(rule["lo"], rule["hi"], n)
        return ProductGaussian(means, rule.get("scale", 1.0))
    if kind == "particle_cloud":
        return ParticleCloud(np.asarray(rule["atoms"], dtype=float))
    raise ConfigurationError(f"unknown initial rule {kind!r}")


def _game_for(config, n, graph_seed, sigma=None):
    return build_game(
        model=_model_from_rule(config.model),
        weights=_weights_for(config, n, graph_seed),
        n=n, d=config.d, T=config.T,
        sigma=config.sigma if sigma is None else sigma,
        sigma0=config.sigma0,
        initial_law=_initial_for(config, n),
        t0=config.t0, n_steps=config.n_steps,
    )


def _spawn_seeds(seed, count):
    children = np.random.SeedSequence(seed).spawn(count)
    return children


# ---------------------------------------------------------------------------
# gap sweep
# ---------------------------------------------------------------------------

GAP_COLUMNS = [
    "n", "gap_cl_ol", "gap_cl_ol_se", "gap_cl_ol_per_player",
    "gap_ol_dist", "gap_ol_dist_se", "gap_ol_dist_per_player",
    "gap_ol_mfg", "gap_ol_mfg_se",
    "theory_weak1_over_sigma", "theory_kappa_poincare",
]

DEGENERATE_EPS = 1e-18


@dataclass
class GapReport:
    rows: list
    fits: dict
    fingerprints: dict
    degenerate: bool
    warnings: list
    columns: tuple = tuple(GAP_COLUMNS)

    def to_json(self):
        return {
            "rows": self.rows,
            "fits": {k: f.to_json() for k, f in self.fits.items()},
            "fingerprints": self.fingerprints,
            "degenerate": self.degenerate,
            "warnings": self.warnings,
        }


def run_gap_sweep(config):
    """Closed-loop / open-loop / distributed / mean-field gaps across N.

    Requires an LQ template with sigma > 0; the distributed member needs
    sigma0 = 0 and independent initial components.  All four equilibria
    of one N consume the identical NoiseBundle and initial draws.
    """
    if config.model.get("kind", "lq_network") != "lq_network":
        raise ConfigurationError("the gap sweep is defined for the LQ class")
    if config.sigma <= 0:
        raise ConfigurationError("the gap sweep requires sigma > 0")
    if config.sigma0 != 0.0:
        raise ConfigurationError(
            "the distributed gap column requires sigma0 = 0")
    if config.initial.get("kind", "product_gaussian") not in (
            "product_gaussian", "point_mass", "linspace_means"):
        raise ConfigurationError(
            "the distributed column needs an independent (product) initial law")
    seeds = _spawn_seeds(config.seed, 2 * len(config.n_list))
    rows = []
    fingerprints = {}
    warnings = []
    for i, n in enumerate(config.n_list):
        graph_seed, noise_seed = seeds[2 * i], seeds[2 * i + 1]
        game = _game_for(config, n, graph_seed)
        cl = solve_closed_loop_lq(game)
        ol = solve_open_loop_lq(game)
        dist = solve_distributed_lq(game)
        mfg = solve_mfg_lq(game)
        noise = sample_noise(game, config.n_paths,
                             seed=noise_seed.generate_state(1)[0])
        x0 = draw_initial(game, config.n_paths, seed=noise_seed.spawn(1)[0])
        bundle = simulate([cl, ol, dist, mfg], game, noise, x0=x0,
                          store_controls=False, with_costs=False)
        fingerprints[str(n)] = bundle.noise_fingerprint
        g_cl_ol = bundle.gap("closed_loop", "open_loop")
        g_ol_dist = bundle.gap("open_loop", "distributed")
        g_ol_mfg = bundle.gap("open_loop", "mean_field")
        metrics = interaction_metrics(game)
        try:
            c_p = poincare_constant(game.initial_law)
        except UnsupportedModelError:
            c_p = float("nan")
            warnings.append(f"N={n}: initial law outside the Poincare catalog")
        rows.append({
            "n": n,
            "gap_cl_ol": g_cl_ol.full_mean,
            "gap_cl_ol_se": g_cl_ol.full_se,
            "gap_cl_ol_per_player": g_cl_ol.per_player_avg,
            "gap_ol_dist": g_ol_dist.full_mean,
            "gap_ol_dist_se": g_ol_dist.full_se,
            "gap_ol_dist_per_player": g_ol_dist.per_player_avg,
            "gap_ol_mfg": g_ol_mfg.full_mean,
            "gap_ol_mfg_se": g_ol_mfg.full_se,
            "theory_weak1_over_sigma": metrics.weak1 / config.sigma,
            "theory_kappa_poincare": (1.0 + c_p) * float(np.sum(metrics.kappa_i)),
        })
    degenerate = all(
        row[c] < DEGENERATE_EPS
        for row in rows
        for c in ("gap_cl_ol", "gap_ol_dist", "gap_ol_mfg"))
    fits = {}
    if degenerate:
        warnings.append("degenerate zeros: all gap columns vanish; fits skipped")
    else:
        ns = [row["n"] for row in rows]
        for col in ("gap_cl_ol", "gap_cl_ol_per_player",
                    "gap_ol_dist", "gap_ol_dist_per_player",
                    "gap_ol_mfg"):
            ys = [row[col] for row in rows]
            if all(y > 0 for y in ys):
                fits[col] = fit_loglog(ns, ys)
    return GapReport(rows=rows, fits=fits, fingerprints=fingerprints,
                     degenerate=degenerate, warnings=warnings)


# ---------------------------------------------------------------------------
# universality sweep
# ---------------------------------------------------------------------------

UNIVERSALITY_COLUMNS = [
    "n", "gap_cl_ol_full", "gap_cl_ol_full_se", "theory_dd_product",
    "gap_ol_mfg_pp_max", "gap_ol_mfg_pp_max_se", "rho_theory",
]


@dataclass
class UniversalityReport:
    rows: list
    fits: dict
    fingerprints: dict
    warnings: list
    columns: tuple = tuple(UNIVERSALITY_COLUMNS)

    def to_json(self):
        return {
            "rows": self.rows,
            "fits": {k: f.to_json() for k, f in self.fits.items()},
            "fingerprints": self.fingerprints,
            "warnings": self.warnings,
        }


def run_universality_sweep(config):
    """N-player equilibria against coupled i.i.d. mean-field copies.

    LQ templates: closed-loop and open-loop Riccati solves per N, plus
    the mean-field consistency system; every member and the copies share
    one NoiseBundle and initial draws.  Bounded-interaction (phi)
    templates run the deterministic route (sigma = 0, per-path shooting
    against the limiting measure flow); the closed-loop column is LQ-only.
    A k_N rule that fails to shrink the degree-divergence statistic along
    the list is recorded as a warning (the theorem hypothesis is then
    unmet, the run still executes).
    """
    model_kind = config.model.get("kind", "lq_network")
    seeds = _spawn_seeds(config.seed, 2 * len(config.n_list))
    rows = []
    fits = {}
    fingerprints = {}
    warnings = []
    dd_values = []
    for i, n in enumerate(config.n_list):
        graph_seed, noise_seed = seeds[2 * i], seeds[2 * i + 1]
        if model_kind == "lq_network":
            row, fp = _universality_point_lq(config, n, graph_seed, noise_seed)
        elif model_kind == "phi_network":
            row, fp = _universality_point_phi(config, n, graph_seed, noise_seed)
        else:
            raise ConfigurationError(
                "universality sweeps support LQ and phi-network templates")
        rows.append(row)
        fingerprints[str(n)] = fp
        dd_values.append(row["theory_dd_product"])
    if any(b >= a for a, b in zip(dd_values, dd_values[1:])):
        warnings.append(
            "degree-divergence statistic |w|_Fr^2 max_i |w_i.|_2^2 is not "
            "decreasing along the N list; the universality hypothesis is "
            "unmet for this graph family")
    ns = [row["n"] for row in rows]
    pp = [row["gap_ol_mfg_pp_max"] for row in rows]
    if all(v > 0 for v in pp):
        fits["gap_ol_mfg_pp_max"] = fit_loglog(ns, pp)
    clol = [row["gap_cl_ol_full"] for row in rows]
    if all(v is not None and v > 0 for v in clol):
        fits["gap_cl_ol_full"] = fit_loglog(ns, clol)
    return UniversalityReport(rows=rows, fits=fits, fingerprints=fingerprints,
                              warnings=warnings)


def _universality_point_lq(config, n, graph_seed, noise_seed):
    game = _game_for(config, n, graph_seed)
    cl = solve_closed_loop_lq(game)
    ol = solve_open_loop_lq(game)
    mfg = solve_mfg_lq(game)
    noise = sample_noise(game, config.n_paths,
                         seed=noise_seed.generate_state(1)[0])
    x0 = draw_initial(game, config.n_paths, seed=noise_seed.spawn(1)[0])
    bundle = simulate([cl, ol, mfg], game, noise, x0=x0,
                      store_controls=False, with_costs=False)
    g_cl_ol = bundle.gap("closed_loop", "open_loop")
    g_ol_mfg = bundle.gap("open_loop", "mean_field")
    stats = graph_stats(game.weights)
    k_eff = 1.0 / stats.max_row_l2 ** 2 if stats.max_row_l2 > 0 else float("inf")
    row = {
        "n": n,
        "gap_cl_ol_full": g_cl_ol.full_mean,
        "gap_cl_ol_full_se": g_cl_ol.full_se,
        "theory_dd_product": stats.dd_product,
        "gap_ol_mfg_pp_max": g_ol_mfg.max_player_mean,
        "gap_ol_mfg_pp_max_se": g_ol_mfg.max_player_se,
        "rho_theory": rho_rate(config.d, min(k_eff, float(n))),
    }
    return row, bundle.noise_fingerprint


def _universality_point_phi(config, n, graph_seed, noise_seed):
    if config.sigma != 0.0 or config.sigma0 != 0.0:
        raise ConfigurationError(
            "phi-network universality runs the deterministic route; "
            "set sigma = sigma0 = 0")
    game = _game_for(config, n, graph_seed)
    x0 = draw_initial(game, config.n_paths, seed=noise_seed.spawn(1)[0])
    # limiting measure flow from a dedicated reference cloud
    law = game.initial_law
    if isinstance(law, ParticleCloud):
        ref_cloud = law.atoms
    else:
        ref = _game_for(config, 128, graph_seed)
        ref_cloud = draw_initial(ref, 1, seed=noise_seed.spawn(2)[1])[0]
    flow = solve_mkv_deterministic(game, ref_cloud, tol=1e-8)
    stat_nodes = np.array([game.model.mf_flow_stat(flow.atoms[k])
                           for k in range(game.grid.n_steps + 1)])
    states_n, _ = shoot_pontryagin_batch(game, x0)
    copies, _ = shoot_particles_against_flow(
        game, x0.reshape(config.n_paths * n, 1), stat_nodes, game.grid)
    states_mf = copies.reshape(-1, config.n_paths, n, 1)
    gap = pathwise_gap_stats(states_n, states_mf, kinds=("open_loop", "mean_field"))
    stats = graph_stats(game.weights)
    k_eff = 1.0 / stats.max_row_l2 ** 2 if stats.max_row_l2 > 0 else float("inf")
    row = {
        "n": n,
        "gap_cl_ol_full": None,
        "gap_cl_ol_full_se": None,
        "theory_dd_product": stats.dd_product,
        "gap_ol_mfg_pp_max": gap.max_player_mean,
        "gap_ol_mfg_pp_max_se": gap.max_player_se,
        "rho_theory": rho_rate(config.d, min(k_eff, float(n))),
    }
    return row, f"deterministic:{config.seed}:{n}x{config.n_paths}"


# ---------------------------------------------------------------------------
# vanishing viscosity sweep
# ---------------------------------------------------------------------------

VISCOSITY_COLUMNS = [
    "n", "sigma_n", "gap_pp_max", "gap_pp_max_se", "rho_plus_sigma",
]


@dataclass
class ViscosityReport:
    rows: list
    fit: object
    strictly_decreasing: bool
    fingerprints: dict
    warnings: list
    columns: tuple = tuple(VISCOSITY_COLUMNS)

    def to_json(self):
        return {
            "rows": self.rows,
            "fit": self.fit.to_json() if self.fit else None,
            "strictly_decreasing": self.strictly_decreasing,
            "fingerprints": self.fingerprints,
            "warnings": self.warnings,
        }


def run_viscosity_sweep(config):
    """Joint vanishing-viscosity / large-N limit on complete graphs.

    Per N: the N-player open-loop game at sigma = sigma_N = c N^{-beta}
    (beta < 1/2) against the zero-viscosity mean-field copies, coupled on
    the same noise bundle and initial draws; the gap is fitted against
    rho_d(N) + sigma_N.
    """
    if config.model.get("kind", "lq_network") != "lq_network":
        raise ConfigurationError(
            "the viscosity sweep needs the displacement-monotone LQ "
            "mean-field template")
    if config.graph.get("kind", "complete") != "complete":
        raise ConfigurationError("the viscosity sweep runs on complete graphs")
    rule = config.sigma_rule or {"c": 1.0, "beta": 0.25}
    seeds = _spawn_seeds(config.seed, 2 * len(config.n_list))
    rows = []
    fingerprints = {}
    for i, n in enumerate(config.n_list):
        graph_seed, noise_seed = seeds[2 * i], seeds[2 * i + 1]
        sigma_n = rule["c"] * float(n) ** (-rule["beta"])
        game_n = _game_for(config, n, graph_seed, sigma=sigma_n)
        game_0 = _game_for(config, n, graph_seed, sigma=0.0)
        ol = solve_open_loop_lq(game_n)
        noise = sample_noise(game_n, config.n_paths,
                             seed=noise_seed.generate_state(1)[0])
        x0 = draw_initial(game_n, config.n_paths, seed=noise_seed.spawn(1)[0])
        bundle_n = simulate([ol], game_n, noise, x0=x0,
                            store_controls=False, with_costs=False)
        if game_0.sigma0 > 0:
            mfg = solve_mfg_lq(game_0, noise=noise)
        else:
            mfg = solve_mfg_lq(game_0)
        bundle_0 = simulate([mfg], game_0, noise, x0=x0,
                            store_controls=False, with_costs=False)
        gap = pathwise_gap_stats(bundle_n.members[0].states,
                                 bundle_0.members[0].states,
                                 kinds=("open_loop", "mean_field"))
        fingerprints[str(n)] = bundle_n.noise_fingerprint
        rows.append({
            "n": n,
            "sigma_n": sigma_n,
            "gap_pp_max": gap.max_player_mean,
            "gap_pp_max_se": gap.max_player_se,
            "rho_plus_sigma": rho_rate(config.d, float(n)) + sigma_n,
        })
    gaps = [row["gap_pp_max"] for row in rows]
    decreasing = all(b < a for a, b in zip(gaps, gaps[1:]))
    fit = None
    if all(v > 0 for v in gaps):
        fit = fit_loglog([row["rho_plus_sigma"] for row in rows], gaps)
    return ViscosityReport(rows=rows, fit=fit, strictly_decreasing=decreasing,
                           fingerprints=fingerprints, warnings=[])


# ---------------------------------------------------------------------------
# deterministic file output
# ---------------------------------------------------------------------------

def _fmt(value):
    if value is None:
        return "nan"
    if isinstance(value, str):
        return value
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return f"{float(value):.12e}"


def write_csv(path, columns, rows, footer_lines=()):
    """UTF-8, LF-terminated CSV with %.12e floats; byte-deterministic."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(columns) + "\n")
        for row in rows:
            if isinstance(row, dict):
                vals = [_fmt(row.get(c)) for c in columns]
            else:
                vals = [_fmt(v) for v in row]
            fh.write(",".join(vals) + "\n")
        for line in footer_lines:
            fh.write(line + "\n")


def write_summary(path, command, config, report_json, fits, timings,
                  verdicts=None):
    doc = {
        "command": command,
        "config": config.echo() if isinstance(config, ExperimentConfig) else config,
        "report": report_json,
        "ratefits": {k: f.to_json() for k, f in (fits or {}).items()},
        "verdicts": verdicts or {},
        "timings": timings,
    }
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")


def _json_default(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not JSON serializable: {type(obj).__name__}")
