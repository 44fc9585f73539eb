"""Hypothesis-side quantities of the gap theory.

Computes the semi-monotonicity constants (displacement and Lasry-Lions),
the interaction strengths delta / kappa / kappa-tilde together with the
weak-interaction products, and the graph statistics entering the
universality estimates.  For LQ models everything second-order is exact
(constant Hessians, dense eigensolver on n x n matrices); gradient-based
quantities with unbounded sups are reported as box-restricted sups and
flagged as such.  For the bounded phi-interaction class the constants are
estimated by maximizing Rayleigh quotients over a sample cloud, which
yields certified lower bounds of the true sups.

The theorems' dimension-free constants C are existential and are never
materialized here: verdicts compare the raw left-hand sides against
user-supplied thresholds.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, UnsupportedModelError
from .games import LQNetwork, ParticleCloud, PhiNetwork

__all__ = [
    "MonotonicityReport", "InteractionMetrics", "GraphStats", "ConditionVerdict",
    "displacement_report", "lasry_lions_report", "interaction_metrics",
    "graph_stats", "condition_check", "default_box_radius",
]

DEFAULT_RAYLEIGH_SAMPLES = 256
DEFAULT_POWER_ITERS = 20


def _sym(m):
    return 0.5 * (m + m.T)


def _opnorm(m):
    return float(np.linalg.norm(m, 2))


# ---------------------------------------------------------------------------
# report types
# ---------------------------------------------------------------------------

@dataclass
class MonotonicityReport:
    """Semi-monotonicity constants of one game.

    Displacement side: c_f_disp / c_g_disp bound the cross-Hessian stacks
    from below, c_l is the Lagrangian convexity constant, and
    c_disp = c_l - (T^2/2) c_f_disp - T c_g_disp combines them; the game
    is displacement monotone when c_disp > 0.  Lasry-Lions side:
    c_f_ll / c_g_ll bound the off-diagonal cross-Hessian stacks.
    c_df_lip / c_dg_lip are operator-norm Lipschitz constants of the
    diagonal gradient fields.  Fields not produced by the requested
    checker are None.
    """

    n: int
    horizon: float
    model_kind: str
    method: str  # 'exact_eigen' | 'sampled'
    c_l: float
    c_df_lip: float
    c_dg_lip: float
    c_f_disp: float = None
    c_g_disp: float = None
    c_disp: float = None
    displacement_monotone: bool = None
    c_f_ll: float = None
    c_g_ll: float = None

    def to_json(self):
        return {
            "n": self.n, "horizon": self.horizon, "model": self.model_kind,
            "method": self.method, "c_l": self.c_l,
            "c_f_disp": self.c_f_disp, "c_g_disp": self.c_g_disp,
            "c_disp": self.c_disp,
            "displacement_monotone": self.displacement_monotone,
            "c_f_ll": self.c_f_ll, "c_g_ll": self.c_g_ll,
            "c_df_lip": self.c_df_lip, "c_dg_lip": self.c_dg_lip,
        }


@dataclass
class InteractionMetrics:
    """Per-player interaction strengths and the weak-interaction products.

    delta_i aggregates squared off-diagonal cost gradients of player i,
    kappa_i squared off-diagonal cross second derivatives (row form),
    kappa_tilde_i the column form (influence of i on the others).
    weak1 = delta * sum_i delta_i and weak2 = kappa * kappa_tilde are the
    left-hand sides the smallness conditions constrain.
    """

    n: int
    horizon: float
    model_kind: str
    delta_i: np.ndarray
    kappa_i: np.ndarray
    kappa_tilde_i: np.ndarray
    domain: dict
    delta_envelope_i: np.ndarray = None
    delta_sampled_i: np.ndarray = None

    @property
    def delta(self):
        return float(np.max(self.delta_i)) if self.n else 0.0

    @property
    def kappa(self):
        return float(np.max(self.kappa_i))

    @property
    def kappa_tilde(self):
        return float(np.max(self.kappa_tilde_i))

    @property
    def weak1(self):
        return self.delta * float(np.sum(self.delta_i))

    @property
    def weak2(self):
        return self.kappa * self.kappa_tilde

    def to_json(self):
        doc = {
            "n": self.n, "horizon": self.horizon, "model": self.model_kind,
            "delta_i": self.delta_i.tolist(),
            "kappa_i": self.kappa_i.tolist(),
            "kappa_tilde_i": self.kappa_tilde_i.tolist(),
            "delta": self.delta, "kappa": self.kappa,
            "kappa_tilde": self.kappa_tilde,
            "weak1": self.weak1, "weak2": self.weak2,
            "domain": self.domain,
        }
        if self.delta_envelope_i is not None:
            doc["delta_envelope_i"] = self.delta_envelope_i.tolist()
        if self.delta_sampled_i is not None:
            doc["delta_sampled_i"] = self.delta_sampled_i.tolist()
        return doc


@dataclass
class GraphStats:
    """Spectral / norm statistics of the interaction matrix."""

    n: int
    frobenius: float
    max_row_l2: float
    max_col_l1: float
    sym_min_eig: float
    dd_product: float
    partition_w: list = None        # W_k per block
    partition_w_tilde: list = None  # W~_k per block

    def to_json(self):
        return {
            "n": self.n, "frobenius": self.frobenius,
            "max_row_l2": self.max_row_l2, "max_col_l1": self.max_col_l1,
            "sym_min_eig": self.sym_min_eig, "dd_product": self.dd_product,
            "partition_w": self.partition_w,
            "partition_w_tilde": self.partition_w_tilde,
        }


@dataclass
class ConditionVerdict:
    """Raw left-hand sides plus boolean verdicts against user thresholds."""

    weak1: float
    weak2: float
    c_disp: float
    ll_combo: float             # c_g_ll + T * c_f_ll
    sigma: float
    displacement_monotone: bool
    verdicts: dict = field(default_factory=dict)

    def to_json(self):
        return {
            "weak1": self.weak1, "weak2": self.weak2, "c_disp": self.c_disp,
            "ll_combo": self.ll_combo, "sigma": self.sigma,
            "displacement_monotone": self.displacement_monotone,
            "verdicts": self.verdicts,
        }


# ---------------------------------------------------------------------------
# sampled Rayleigh machinery (PhiNetwork)
# ---------------------------------------------------------------------------

def _sampled_min_eig(matrix_at, n, n_samples, power_iters, radius, seed):
    """Certified upper bound on inf_x lambda_min(Sym(B(x))) by sampling.

    Power iteration on the shifted matrix cI - Sym(B) pushes a random
    vector toward the minimal eigenspace; the Rayleigh quotient after
    finitely many iterations never undershoots lambda_min, so the
    resulting monotonicity constant is a lower bound of the true sup.
    """
    rng = np.random.default_rng(seed)
    worst = math.inf
    for _ in range(n_samples):
        x = radius * rng.standard_normal((n, 1))
        s = _sym(matrix_at(x))
        shift = 1.0 + float(np.max(np.sum(np.abs(s), axis=1)))
        m = shift * np.eye(n) - s
        v = rng.standard_normal(n)
        v /= np.linalg.norm(v)
        for _ in range(power_iters):
            v = m @ v
            nv = np.linalg.norm(v)
            if nv == 0.0:
                break
            v /= nv
        worst = min(worst, float(v @ s @ v))
    return worst


# ---------------------------------------------------------------------------
# monotonicity reports
# ---------------------------------------------------------------------------

def displacement_report(game, n_samples=DEFAULT_RAYLEIGH_SAMPLES,
                        power_iters=DEFAULT_POWER_ITERS, sample_radius=3.0,
                        seed=0):
    """Displacement semi-monotonicity constants of a game.

    LQ: C_{F,disp} = max(0, -lambda_min(Sym(M_F))) from a dense
    eigensolver on the n x n cross matrix (isotropy makes the n*d result
    equal the n result), and C_{DF,Lip} = |M_F|_op; exact.  Phi: sampled
    Rayleigh maximization (method='sampled', a lower bound).  The built-in
    Lagrangian |a|^2/2 has convexity constant exactly 1.
    """
    model = game.model
    T = game.grid.T - game.grid.t0
    if isinstance(model, LQNetwork):
        mf, mg = game.mf_matrix(), game.mg_matrix()
        lam_f = float(np.linalg.eigvalsh(_sym(mf))[0])
        lam_g = float(np.linalg.eigvalsh(_sym(mg))[0])
        cf, cg = max(0.0, -lam_f), max(0.0, -lam_g)
        lip_f, lip_g = _opnorm(mf), _opnorm(mg)
        method = "exact_eigen"
    elif isinstance(model, PhiNetwork):
        w = game.w
        lam_f = _sampled_min_eig(
            lambda x: model.cross_hessian_at(x, w, "f"),
            game.n, n_samples, power_iters, sample_radius, seed)
        lam_g = _sampled_min_eig(
            lambda x: model.cross_hessian_at(x, w, "g"),
            game.n, n_samples, power_iters, sample_radius, seed + 1)
        cf, cg = max(0.0, -lam_f), max(0.0, -lam_g)
        # operator norm of the sampled cross matrices, maximized over the cloud
        rng = np.random.default_rng(seed + 2)
        lip_f = lip_g = 0.0
        for _ in range(n_samples):
            x = sample_radius * rng.standard_normal((game.n, 1))
            lip_f = max(lip_f, _opnorm(model.cross_hessian_at(x, w, "f")))
            lip_g = max(lip_g, _opnorm(model.cross_hessian_at(x, w, "g")))
        method = "sampled"
    else:
        raise UnsupportedModelError(
            "displacement_report supports LQNetwork and PhiNetwork only; "
            "for custom models run the sampled checker with explicit "
            "cross-Hessian evaluators"
        )
    c_l = 1.0  # D_a L = a forces (a - a')·(a - a') = |Δa|^2 for L = |a|^2/2
    c_disp = c_l - (T * T / 2.0) * cf - T * cg
    return MonotonicityReport(
        n=game.n, horizon=T, model_kind=model.kind, method=method,
        c_l=c_l, c_f_disp=cf, c_g_disp=cg, c_disp=c_disp,
        displacement_monotone=bool(c_disp > 0.0),
        c_df_lip=lip_f, c_dg_lip=lip_g,
    )


def lasry_lions_report(game, n_samples=DEFAULT_RAYLEIGH_SAMPLES,
                       power_iters=DEFAULT_POWER_ITERS, sample_radius=3.0,
                       seed=0):
    """Lasry-Lions semi-monotonicity constants (off-diagonal blocks only).

    LQ: the off-diagonal cross matrix of F is -a_f w (zero diagonal), so
    C_{F,LL} = max(0, -lambda_min(Sym(-a_f w))); exact.  Phi: sampled.
    """
    model = game.model
    T = game.grid.T - game.grid.t0
    w = game.w

    def offdiag(m):
        out = m.copy()
        np.fill_diagonal(out, 0.0)
        return out

    if isinstance(model, LQNetwork):
        of = -model.a_f * w
        og = -model.a_g * w
        cf = max(0.0, -float(np.linalg.eigvalsh(_sym(of))[0]))
        cg = max(0.0, -float(np.linalg.eigvalsh(_sym(og))[0]))
        lip_f, lip_g = _opnorm(game.mf_matrix()), _opnorm(game.mg_matrix())
        method = "exact_eigen"
    elif isinstance(model, PhiNetwork):
        lam_f = _sampled_min_eig(
            lambda x: offdiag(model.cross_hessian_at(x, w, "f")),
            game.n, n_samples, power_iters, sample_radius, seed)
        lam_g = _sampled_min_eig(
            lambda x: offdiag(model.cross_hessian_at(x, w, "g")),
            game.n, n_samples, power_iters, sample_radius, seed + 1)
        cf, cg = max(0.0, -lam_f), max(0.0, -lam_g)
        rng = np.random.default_rng(seed + 2)
        lip_f = lip_g = 0.0
        for _ in range(n_samples):
            x = sample_radius * rng.standard_normal((game.n, 1))
            lip_f = max(lip_f, _opnorm(model.cross_hessian_at(x, w, "f")))
            lip_g = max(lip_g, _opnorm(model.cross_hessian_at(x, w, "g")))
        method = "sampled"
    else:
        raise UnsupportedModelError(
            "lasry_lions_report supports LQNetwork and PhiNetwork only; "
            "for custom models run the sampled checker with explicit "
            "cross-Hessian evaluators"
        )
    return MonotonicityReport(
        n=game.n, horizon=T, model_kind=model.kind, method=method,
        c_l=1.0, c_f_ll=cf, c_g_ll=cg, c_df_lip=lip_f, c_dg_lip=lip_g,
    )


# ---------------------------------------------------------------------------
# interaction metrics
# ---------------------------------------------------------------------------

def default_box_radius(game):
    """Crude a priori box for gradient sups of unbounded-gradient models.

    Five standard deviations of the initial law, pushed forward by an a
    priori exponential state bound built from the Riccati data; an honest
    under-estimate domain, flagged in the metrics it feeds.
    """
    law = game.initial_law
    if isinstance(law, ParticleCloud):
        base_mean = float(np.max(np.abs(law.atoms)))
        base_scale = float(np.max(law.scales()))
    else:
        base_mean = float(np.max(np.abs(law.means()))) if law.means().size else 0.0
        base_scale = float(np.max(law.scales())) if law.scales().size else 0.0
    T = game.grid.T - game.grid.t0
    base = base_mean + 5.0 * base_scale + 5.0 * math.sqrt(2.0 * (game.sigma + game.sigma0) * T)
    if isinstance(game.model, LQNetwork):
        growth = math.exp(T * (1.0 + _opnorm(game.mg_matrix()) + T * _opnorm(game.mf_matrix())))
    else:
        growth = math.exp(T)
    return max(1.0, base * growth)


def interaction_metrics(game, box_radius=None, n_samples=DEFAULT_RAYLEIGH_SAMPLES,
                        seed=0):
    """Per-player interaction strengths delta / kappa / kappa-tilde.

    LQ second-order quantities are exact (constant Hessians):
    kappa_i = (a_f^2 + a_g^2) sum_{j != i} w_ij^2 and kappa-tilde the
    column analogue.  LQ delta_i is the box-restricted sup of the squared
    off-diagonal gradients, closed-form on the box [-R, R]^{nd} (the true
    sup is infinite; the restriction is flagged).  Phi delta_i is reported
    as the analytic envelope (2|A| ||phi|| ||phi'||)^2 sum w_ij^2 per cost
    term plus a sampled sup that can never exceed it.
    """
    model = game.model
    w = game.w
    n, d = game.n, game.d
    offsq_row = np.sum(w * w, axis=1)           # sum_{j != i} w_ij^2 (diag is 0)
    offsq_col = np.sum(w * w, axis=0)

    if isinstance(model, LQNetwork):
        coef2 = model.a_f ** 2 + model.a_g ** 2
        kappa_i = coef2 * offsq_row
        kappa_tilde_i = coef2 * offsq_col
        if box_radius is None:
            box_radius = default_box_radius(game)
        if box_radius <= 0:
            raise ConfigurationError("box_radius must be positive")
        # sup over the box of |x^i - sum_k w_ik x^k|^2 = d R^2 (1 + row_sum_i)^2
        rows = w.sum(axis=1)
        dev2 = d * box_radius ** 2 * (1.0 + rows) ** 2
        delta_i = coef2 * dev2 * offsq_row
        return InteractionMetrics(
            n=n, horizon=game.grid.T - game.grid.t0, model_kind=model.kind,
            delta_i=delta_i, kappa_i=kappa_i, kappa_tilde_i=kappa_tilde_i,
            domain={"tag": "box_sup", "box_radius": float(box_radius),
                    "n_samples": 0, "exact_second_order": True},
        )

    if isinstance(model, PhiNetwork):
        amp = 2.0 * abs(model.a) * model.sup_phi * model.sup_dphi
        env_per_term = amp ** 2 * offsq_row
        delta_env = 2.0 * env_per_term            # F and G share the strength
        # off the diagonal only the phi'(x^i) w_ij phi'(x^j) term survives
        kamp = abs(model.a) * model.sup_dphi ** 2
        kappa_i = 2.0 * kamp ** 2 * offsq_row
        kappa_tilde_i = 2.0 * kamp ** 2 * offsq_col
        rng = np.random.default_rng(seed)
        radius = box_radius if box_radius is not None else 3.0
        sampled = np.zeros(n)
        for _ in range(n_samples):
            x = radius * rng.standard_normal((n, 1))
            gf = game.grad_f_full(x)
            gg = game.grad_g_full(x)
            sf = np.sum(gf * gf, axis=(1, 2)) - np.sum(gf[np.arange(n), np.arange(n)] ** 2, axis=-1)
            sg = np.sum(gg * gg, axis=(1, 2)) - np.sum(gg[np.arange(n), np.arange(n)] ** 2, axis=-1)
            sampled = np.maximum(sampled, sf + sg)
        return InteractionMetrics(
            n=n, horizon=game.grid.T - game.grid.t0, model_kind=model.kind,
            delta_i=delta_env, kappa_i=kappa_i, kappa_tilde_i=kappa_tilde_i,
            domain={"tag": "analytic_envelope", "box_radius": float(radius),
                    "n_samples": int(n_samples)},
            delta_envelope_i=delta_env, delta_sampled_i=sampled,
        )

    raise UnsupportedModelError(
        "interaction_metrics requires LQNetwork or PhiNetwork; custom models "
        "need explicit gradient evaluators and an explicit box radius"
    )


# ---------------------------------------------------------------------------
# graph statistics
# ---------------------------------------------------------------------------

def graph_stats(weights, partition=None):
    """Norm and spectral statistics of w, plus partition statistics.

    W_k = min{1, sum_{i in I_k} |w_i.|_2^2, sum_{j not in I_k} |w_.j|_2^2}
    and the complementary W~_k; empty sums are 0, so the full partition
    degenerates to W = 0 exactly as the mean-field collapse requires.
    """
    m = weights.matrix
    n = weights.n
    row_l2sq = np.sum(m * m, axis=1)
    col_l2sq = np.sum(m * m, axis=0)
    fro = float(np.sqrt(row_l2sq.sum()))
    max_row_l2 = float(np.sqrt(np.max(row_l2sq))) if n else 0.0
    max_col_l1 = float(np.max(np.sum(m, axis=0))) if n else 0.0
    sym_min = float(np.linalg.eigvalsh(_sym(m))[0]) if n else 0.0
    dd = fro ** 2 * max_row_l2 ** 2

    part_w = part_wt = None
    if partition is not None:
        seen = np.zeros(n, dtype=bool)
        blocks = []
        for block in partition:
            idx = np.asarray(sorted(block), dtype=int)
            if idx.size and (idx.min() < 0 or idx.max() >= n):
                raise ConfigurationError("partition indices out of range")
            if np.any(seen[idx]):
                raise ConfigurationError("partition blocks overlap")
            seen[idx] = True
            blocks.append(idx)
        if not np.all(seen):
            raise ConfigurationError("partition does not cover all players")
        part_w, part_wt = [], []
        for idx in blocks:
            mask = np.zeros(n, dtype=bool)
            mask[idx] = True
            w_k = min(1.0, float(row_l2sq[mask].sum()), float(col_l2sq[~mask].sum()))
            wt_k = min(1.0, float(row_l2sq[~mask].sum()), float(col_l2sq[mask].sum()))
            part_w.append(w_k)
            part_wt.append(wt_k)

    return GraphStats(
        n=n, frobenius=fro, max_row_l2=max_row_l2, max_col_l1=max_col_l1,
        sym_min_eig=sym_min, dd_product=dd,
        partition_w=part_w, partition_w_tilde=part_wt,
    )


# ---------------------------------------------------------------------------
# condition check
# ---------------------------------------------------------------------------

def condition_check(report, metrics, sigma, thresholds=None):
    """Raw smallness left-hand sides plus verdicts against user thresholds.

    thresholds keys (all optional): 'weak1', 'weak2', 'smallness_c'
    (weak1 <= sigma^2 / C), 'll_combo'.  The theory's constants are
    existential; no threshold means the quantity is only reported.
    """
    if report.n != metrics.n or abs(report.horizon - metrics.horizon) > 1e-12 \
            or report.model_kind != metrics.model_kind:
        raise ConfigurationError(
            "monotonicity report and interaction metrics come from "
            "different games"
        )
    T = report.horizon
    ll_combo = None
    if report.c_f_ll is not None and report.c_g_ll is not None:
        ll_combo = report.c_g_ll + T * report.c_f_ll
    verdicts = {}
    thresholds = thresholds or {}
    if "weak1" in thresholds:
        verdicts["weak1_ok"] = bool(metrics.weak1 <= thresholds["weak1"])
    if "weak2" in thresholds:
        verdicts["weak2_ok"] = bool(metrics.weak2 <= thresholds["weak2"])
    if "smallness_c" in thresholds:
        verdicts["smallness_ok"] = bool(
            metrics.weak1 <= sigma ** 2 / thresholds["smallness_c"])
    if "ll_combo" in thresholds and ll_combo is not None:
        verdicts["ll_combo_ok"] = bool(ll_combo <= thresholds["ll_combo"])
    return ConditionVerdict(
        weak1=metrics.weak1, weak2=metrics.weak2,
        c_disp=report.c_disp if report.c_disp is not None else float("nan"),
        ll_combo=ll_combo if ll_combo is not None else float("nan"),
        sigma=float(sigma),
        displacement_monotone=bool(report.displacement_monotone)
        if report.displacement_monotone is not None else False,
        verdicts=verdicts,
    )
