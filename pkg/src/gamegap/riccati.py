"""Exact equilibrium solvers for the LQ network class, all four notions.

The built-in Hamiltonian is H(x, p) = |p|^2/2, so every equilibrium
feedback is affine in the states and the characterizing systems reduce to
matrix / scalar Riccati ODEs (derivations recorded in the design notes):

open loop    LamDot = Lam^2 - M_F, Lam(T) = M_G, with the linear
             decoupling ansatz Y^i = (Lam x)_i stacking all N costate
             fields into one n x n matrix ODE;
closed loop  for each player i, with p^i = q^i = P^i e_i,
             PDot^i = p^i p^i^T + sum_{j != i}(q^j e_j^T P^i
                      + P^i e_j q^j^T) - S^i_F,  P^i(T) = S^i_G,
             from the quadratic ansatz u^i = x^T P^i x / 2 + c^i(t); the
             feedback matrix A(t) collects row i of P^i in row i;
distributed  scalar piDot = pi^2 - (q_f + a_f), pi(T) = q_g + a_g, plus
             the linear mean system muDot^i = -(pi mu^i + rho^i),
             rhoDot^i = pi rho^i + a_f (w mu)_i, rho^i(T) = -a_g (w mu_T)_i,
             solved by Picard iteration on the mean flow (sigma0 = 0 only);
mean field   same pi; consistency pair rhoDot = pi rho + a_f mu_bar,
             mu_barDot = -(pi mu_bar + rho), rho(T) = -a_g mu_bar_T, a
             linear two-point boundary value problem solved by Picard;
             with common noise the pair is solved per common path with
             the noise increments entering the forward mean.

The value-function constants c^i(t) absorbing the sigma trace terms are
never integrated: they do not affect gradients, feedbacks, or
trajectories (value reporting uses Monte Carlo cost accumulators).
Coefficients are certainty-equivalent: noise intensities enter only the
simulation, never the Riccati data.

All solves are fixed-step classical RK4 on the (simulation) grid so that
coefficient nodes align with the Euler-Maruyama nodes; terminal
conditions are exact at T by construction of the backward sweep.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .errors import BlowUpError, ConfigurationError, ConvergenceError
from .games import LQNetwork, TimeGrid, draw_initial

__all__ = [
    "LQEquilibrium", "TrajectoryBundle", "TrajectoryMember", "GapStats",
    "solve_open_loop_lq", "solve_closed_loop_lq", "solve_distributed_lq",
    "solve_mfg_lq", "simulate", "feedback_diagnostics", "pathwise_gap_stats",
]

DEFAULT_BLOWUP_CEILING = 1e6
STORE_P_MAX_PLAYERS = 32


# ---------------------------------------------------------------------------
# equilibrium container
# ---------------------------------------------------------------------------

@dataclass
class LQEquilibrium:
    """Time-indexed Riccati coefficients for one information structure.

    Arrays are indexed by grid node (0 .. n_steps).  Which fields are
    populated depends on `kind`:

    open_loop:    lam (nodes, n, n)
    closed_loop:  a_mat (nodes, n, n); p_list (nodes, n, n, n) when stored
    distributed:  pi (nodes,), rho (nodes, n, d), mu (nodes, n, d)
    mean_field:   pi, rho (nodes, d), mu_bar (nodes, d); with common noise
                  rho_paths / mu_bar_paths (n_paths, nodes, d) instead
    """

    kind: str
    grid: TimeGrid
    n: int
    d: int
    lam: np.ndarray = None
    a_mat: np.ndarray = None
    p_list: np.ndarray = None
    pi: np.ndarray = None
    rho: np.ndarray = None
    mu: np.ndarray = None
    mu_bar: np.ndarray = None
    rho_paths: np.ndarray = None
    mu_bar_paths: np.ndarray = None
    picard_iters: int = 0

    def gain(self, k):
        """Feedback gain matrix at node k: control = -(gain X + offset)."""
        if self.kind == "open_loop":
            return self.lam[k]
        if self.kind == "closed_loop":
            return self.a_mat[k]
        return self.pi[k] * np.eye(self.n)

    def offset(self, k):
        """Per-player affine feedback offset at node k, shape (n, d)."""
        if self.kind == "distributed":
            return self.rho[k]
        if self.kind == "mean_field" and self.rho is not None:
            return np.broadcast_to(self.rho[k], (self.n, self.d))
        return np.zeros((self.n, self.d))

    def offset_paths(self, k, n_paths):
        """Offsets including per-common-path mean-field corrections,
        shape (n_paths, n, d)."""
        if self.kind == "mean_field" and self.rho_paths is not None:
            return np.broadcast_to(
                self.rho_paths[:, k, None, :], (n_paths, self.n, self.d))
        return np.broadcast_to(self.offset(k), (n_paths, self.n, self.d))

    @property
    def needs_path_offsets(self):
        return self.kind == "mean_field" and self.rho_paths is not None

    def to_json(self):
        doc = {"kind": self.kind, "grid": self.grid.to_json(),
               "n": self.n, "d": self.d}
        for name in ("lam", "a_mat", "pi", "rho", "mu", "mu_bar"):
            arr = getattr(self, name)
            if arr is not None:
                doc[name] = [np.asarray(a).ravel(order="C").tolist() for a in arr]
        return doc


# ---------------------------------------------------------------------------
# backward RK4 with blow-up detection
# ---------------------------------------------------------------------------

def _check_blowup(mat, t, ceiling):
    mat = np.asarray(mat)
    if not np.all(np.isfinite(mat)):
        raise BlowUpError(f"non-finite Riccati coefficients at t={t:.6g}",
                          time=t, norm=float("inf"))
    amax = float(np.max(np.abs(mat)))
    if mat.ndim < 2:
        if amax > ceiling:
            raise BlowUpError(
                f"Riccati blow-up: |coefficient| = {amax:.3e} exceeded the "
                f"ceiling {ceiling:.1e} at t={t:.6g}", time=t, norm=amax)
        return
    if amax * mat.shape[-1] <= ceiling:
        return  # op norm <= n * max|entry| cannot exceed the ceiling
    flat = mat.reshape(-1, mat.shape[-2], mat.shape[-1]) if mat.ndim > 2 else mat[None]
    for m in flat:
        op = float(np.linalg.norm(m, 2))
        if op > ceiling:
            raise BlowUpError(
                f"Riccati blow-up: |coefficient|_op = {op:.3e} exceeded the "
                f"ceiling {ceiling:.1e} at t={t:.6g} (no equilibrium on the "
                "remaining horizon)", time=t, norm=op)


def _rk4_backward(rhs, terminal, grid, ceiling):
    """Integrate Ydot = rhs(Y) backward from T to t0, storing every node."""
    h = grid.dt
    steps = grid.n_steps
    out = np.empty((steps + 1,) + np.shape(terminal))
    out[steps] = terminal
    y = np.array(terminal, dtype=float)
    for k in range(steps, 0, -1):
        k1 = rhs(y)
        k2 = rhs(y - 0.5 * h * k1)
        k3 = rhs(y - 0.5 * h * k2)
        k4 = rhs(y - h * k3)
        y = y - (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        t = grid.t0 + (k - 1) * h
        _check_blowup(y, t, ceiling)
        out[k - 1] = y
    return out


def _require_lq(game, what):
    if not isinstance(game.model, LQNetwork):
        raise ConfigurationError(f"{what} requires an LQNetwork model, "
                                 f"got {game.model.kind}")


# ---------------------------------------------------------------------------
# solvers
# ---------------------------------------------------------------------------

def solve_open_loop_lq(game, grid=None, blowup_ceiling=DEFAULT_BLOWUP_CEILING):
    """Stacked open-loop Riccati: LamDot = Lam^2 - M_F, Lam(T) = M_G."""
    _require_lq(game, "solve_open_loop_lq")
    grid = grid or game.grid
    mf = game.mf_matrix()
    mg = game.mg_matrix()
    lam = _rk4_backward(lambda L: L @ L - mf, mg, grid, blowup_ceiling)
    return LQEquilibrium(kind="open_loop", grid=grid, n=game.n, d=game.d, lam=lam)


def solve_closed_loop_lq(game, grid=None, blowup_ceiling=DEFAULT_BLOWUP_CEILING,
                         store_p=None):
    """Coupled closed-loop Riccati system with per-step symmetrization.

    store_p keeps the full {P^i} stack at every node (memory n_steps*n^3);
    default keeps it only for n <= 32 since only A(t) is needed downstream.
    """
    _require_lq(game, "solve_closed_loop_lq")
    grid = grid or game.grid
    n = game.n
    sf = game.sf_blocks()
    sg = game.sg_blocks()
    idx = np.arange(n)
    if store_p is None:
        store_p = n <= STORE_P_MAX_PLAYERS

    def rhs(p):
        pv = p[idx, :, idx]                       # pv[i] = P^i e_i (row view)
        q = np.ascontiguousarray(pv.T)            # columns q^j
        qp = np.matmul(q[None, :, :], p)          # (sum_j q^j e_j^T) P^i
        own = np.einsum("ip,iq->ipq", pv, p[idx, idx, :])  # q^i (row_i P^i)
        b = qp - own
        return np.einsum("ip,iq->ipq", pv, pv) + b + b.transpose(0, 2, 1) - sf

    h = grid.dt
    steps = grid.n_steps
    p = sg.copy()
    a_mat = np.empty((steps + 1, n, n))
    a_mat[steps] = p[idx, idx, :]
    p_store = np.empty((steps + 1, n, n, n)) if store_p else None
    if store_p:
        p_store[steps] = p
    for k in range(steps, 0, -1):
        k1 = rhs(p)
        k2 = rhs(p - 0.5 * h * k1)
        k3 = rhs(p - 0.5 * h * k2)
        k4 = rhs(p - h * k3)
        p = p - (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        p = 0.5 * (p + p.transpose(0, 2, 1))      # keep each P^i symmetric
        a = p[idx, idx, :]
        _check_blowup(a, grid.t0 + (k - 1) * h, blowup_ceiling)
        a_mat[k - 1] = a
        if store_p:
            p_store[k - 1] = p
    return LQEquilibrium(kind="closed_loop", grid=grid, n=game.n, d=game.d,
                         a_mat=a_mat, p_list=p_store)


def _interp(nodes_values, s):
    """Linear interpolation of node-indexed values at fractional index s."""
    k = int(math.floor(s))
    k = max(0, min(k, nodes_values.shape[0] - 2))
    lam = s - k
    return (1.0 - lam) * nodes_values[k] + lam * nodes_values[k + 1]


def _scalar_pi(game, grid, ceiling):
    model = game.model
    qa_f = model.q_f + model.a_f
    qa_g = model.q_g + model.a_g
    pi = _rk4_backward(lambda p: p * p - qa_f, np.float64(qa_g), grid, ceiling)
    return pi


def _picard_mean_system(pi, couple, terminal_couple, mu0, grid, tol, max_iters):
    """Fixed point of the linear forward-backward mean system.

    couple(mu_node) gives the source a_f * (w mu) entering rhoDot; the
    terminal condition is rho_T = -terminal_couple(mu_T).  Backward and
    forward sweeps are RK4 with linear interpolation at half nodes.
    """
    steps = grid.n_steps
    h = grid.dt
    mu = np.repeat(mu0[None], steps + 1, axis=0)
    rho = np.zeros_like(mu)
    delta = math.inf
    for it in range(1, max_iters + 1):
        src = couple(mu)                       # (nodes, ...) source values
        rho_new = np.empty_like(rho)
        rho_new[steps] = -terminal_couple(mu[steps])
        r = rho_new[steps].copy()
        for k in range(steps, 0, -1):
            def f(s, rr):
                return _interp(pi, s) * rr + _interp(src, s)
            s = float(k)
            k1 = f(s, r)
            k2 = f(s - 0.5, r - 0.5 * h * k1)
            k3 = f(s - 0.5, r - 0.5 * h * k2)
            k4 = f(s - 1.0, r - h * k3)
            r = r - (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            rho_new[k - 1] = r
        mu_new = np.empty_like(mu)
        mu_new[0] = mu0
        m = mu0.copy()
        for k in range(steps):
            def f(s, mm):
                return -(_interp(pi, s) * mm + _interp(rho_new, s))
            s = float(k)
            k1 = f(s, m)
            k2 = f(s + 0.5, m + 0.5 * h * k1)
            k3 = f(s + 0.5, m + 0.5 * h * k2)
            k4 = f(s + 1.0, m + h * k3)
            m = m + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            mu_new[k + 1] = m
        delta = max(float(np.max(np.abs(mu_new - mu))),
                    float(np.max(np.abs(rho_new - rho))))
        mu, rho = mu_new, rho_new
        if delta < tol:
            return mu, rho, it
    raise ConvergenceError(
        f"mean-flow Picard iteration did not contract below {tol:g} after "
        f"{max_iters} iterations (last delta {delta:.3e})", residual=delta)


def solve_distributed_lq(game, grid=None, picard_tol=1e-10, max_iters=200,
                         blowup_ceiling=DEFAULT_BLOWUP_CEILING):
    """Distributed (own-state feedback) equilibrium; requires sigma0 = 0."""
    _require_lq(game, "solve_distributed_lq")
    if game.sigma0 > 0:
        raise ConfigurationError(
            "distributed equilibria are only formulated without common "
            "noise (sigma0 = 0)")
    grid = grid or game.grid
    model = game.model
    w = game.w
    mu0 = np.asarray(game.initial_law.means(), dtype=float).reshape(game.n, game.d)
    if not np.all(np.isfinite(mu0)):
        raise ConfigurationError("initial law must have finite means")
    pi = _scalar_pi(game, grid, blowup_ceiling)

    def couple(mu):
        return model.a_f * np.einsum("ij,kjd->kid", w, mu)

    def terminal_couple(mu_T):
        return model.a_g * np.einsum("ij,jd->id", w, mu_T)

    mu, rho, iters = _picard_mean_system(pi, couple, terminal_couple, mu0,
                                         grid, picard_tol, max_iters)
    return LQEquilibrium(kind="distributed", grid=grid, n=game.n, d=game.d,
                         pi=pi, rho=rho, mu=mu, picard_iters=iters)


def solve_mfg_lq(game, grid=None, picard_tol=1e-10, max_iters=200,
                 blowup_ceiling=DEFAULT_BLOWUP_CEILING, noise=None):
    """Mean-field equilibrium of the LQ limit F(x, m) = q_f|x|^2/2 +
    a_f|x - <m>|^2/2.

    Without common noise the consistency system is deterministic with
    mu_bar(0) = the average of the players' initial means.  With common
    noise the forward mean carries sqrt(2 sigma0) dW^0 and the two-point
    problem is solved per common path on the supplied NoiseBundle.
    """
    _require_lq(game, "solve_mfg_lq")
    grid = grid or game.grid
    model = game.model
    pi = _scalar_pi(game, grid, blowup_ceiling)
    mu0 = np.asarray(game.initial_law.means(), dtype=float).reshape(game.n, game.d)
    mu_bar0 = mu0.mean(axis=0)

    def couple(mu):
        return model.a_f * mu

    def terminal_couple(mu_T):
        return model.a_g * mu_T

    if game.sigma0 == 0.0 or noise is None:
        if game.sigma0 > 0 and noise is None:
            raise ConfigurationError(
                "solve_mfg_lq with sigma0 > 0 needs the NoiseBundle to "
                "resolve the per-common-path mean flow")
        mu_bar, rho, iters = _picard_mean_system(
            pi, couple, terminal_couple, mu_bar0, grid, picard_tol, max_iters)
        return LQEquilibrium(kind="mean_field", grid=grid, n=game.n, d=game.d,
                             pi=pi, rho=rho, mu_bar=mu_bar, picard_iters=iters)

    # per-common-path linear two-point problem (Picard on each path)
    steps = grid.n_steps
    h = grid.dt
    scale0 = math.sqrt(2.0 * game.sigma0)
    n_paths = noise.n_paths
    rho_paths = np.empty((n_paths, steps + 1, game.d))
    mu_paths = np.empty((n_paths, steps + 1, game.d))
    iters_max = 0
    for p in range(n_paths):
        inc = noise.common[:, p, :]
        mu = np.repeat(mu_bar0[None], steps + 1, axis=0)
        rho = np.zeros_like(mu)
        ok = False
        for it in range(1, max_iters + 1):
            rho_new = np.empty_like(rho)
            rho_new[steps] = -terminal_couple(mu[steps])
            r = rho_new[steps].copy()
            for k in range(steps, 0, -1):
                def f(s, rr):
                    return _interp(pi, s) * rr + model.a_f * _interp(mu, s)
                s = float(k)
                k1 = f(s, r)
                k2 = f(s - 0.5, r - 0.5 * h * k1)
                k3 = f(s - 0.5, r - 0.5 * h * k2)
                k4 = f(s - 1.0, r - h * k3)
                r = r - (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
                rho_new[k - 1] = r
            mu_new = np.empty_like(mu)
            mu_new[0] = mu_bar0
            m = mu_bar0.copy()
            for k in range(steps):
                m = m - (pi[k] * m + rho_new[k]) * h + scale0 * inc[k]
                mu_new[k + 1] = m
            delta = max(float(np.max(np.abs(mu_new - mu))),
                        float(np.max(np.abs(rho_new - rho))))
            mu, rho = mu_new, rho_new
            if delta < picard_tol:
                ok = True
                break
        if not ok:
            raise ConvergenceError(
                f"per-path mean-field Picard failed on path {p} "
                f"(delta {delta:.3e})", residual=delta)
        iters_max = max(iters_max, it)
        rho_paths[p] = rho
        mu_paths[p] = mu
    return LQEquilibrium(kind="mean_field", grid=grid, n=game.n, d=game.d,
                         pi=pi, rho_paths=rho_paths, mu_bar_paths=mu_paths,
                         picard_iters=iters_max)


# ---------------------------------------------------------------------------
# coupled simulation
# ---------------------------------------------------------------------------

@dataclass
class GapStats:
    """Pairwise sup-in-time squared gap statistics over shared noise."""

    kinds: tuple
    full_mean: float        # E[sup_t sum_i |dX^i|^2]
    full_se: float
    per_player_avg: float   # full_mean / n (identical samples)
    max_player_mean: float  # max_i E[sup_t |dX^i|^2]
    max_player_se: float

    def to_json(self):
        return {
            "kinds": list(self.kinds), "full_mean": self.full_mean,
            "full_se": self.full_se, "per_player_avg": self.per_player_avg,
            "max_player_mean": self.max_player_mean,
            "max_player_se": self.max_player_se,
        }


def pathwise_gap_stats(states_a, states_b, kinds=("a", "b")):
    """Gap statistics between two state arrays (nodes, n_paths, n, d)
    simulated from the same noise and initial draws."""
    if states_a.shape != states_b.shape:
        raise ConfigurationError(
            f"state shapes differ: {states_a.shape} vs {states_b.shape}")
    nodes, n_paths, n, d = states_a.shape
    sup_full = np.zeros(n_paths)
    sup_player = np.zeros((n_paths, n))
    for k in range(nodes):
        diff = states_a[k] - states_b[k]
        per_player = np.sum(diff * diff, axis=-1)
        sup_player = np.maximum(sup_player, per_player)
        sup_full = np.maximum(sup_full, per_player.sum(axis=-1))
    full_mean = float(sup_full.mean())
    full_se = float(sup_full.std(ddof=1) / math.sqrt(n_paths)) if n_paths > 1 else 0.0
    player_means = sup_player.mean(axis=0)
    imax = int(np.argmax(player_means))
    max_se = float(sup_player[:, imax].std(ddof=1) / math.sqrt(n_paths)) \
        if n_paths > 1 else 0.0
    return GapStats(kinds=tuple(kinds), full_mean=full_mean, full_se=full_se,
                    per_player_avg=full_mean / n,
                    max_player_mean=float(player_means[imax]),
                    max_player_se=max_se)


@dataclass
class TrajectoryMember:
    kind: str
    states: np.ndarray                 # (nodes, n_paths, n, d)
    controls: np.ndarray = None        # (n_steps, n_paths, n, d)
    costates: np.ndarray = None        # (nodes, n_paths, n, d), open loop
    running_cost: np.ndarray = None    # (n_paths, n)
    terminal_cost: np.ndarray = None   # (n_paths, n)


@dataclass
class TrajectoryBundle:
    """Coupled sampled paths of several equilibria on one NoiseBundle."""

    grid: TimeGrid
    n: int
    d: int
    noise_seed: int
    noise_fingerprint: str
    members: list
    gaps: dict = field(default_factory=dict)

    def member(self, kind):
        for m in self.members:
            if m.kind == kind:
                return m
        raise KeyError(kind)

    def gap(self, kind_a, kind_b):
        for (i, j), g in self.gaps.items():
            if {self.members[i].kind, self.members[j].kind} == {kind_a, kind_b}:
                return g
        raise KeyError((kind_a, kind_b))

    def to_csv(self, path):
        """Write states (and controls when stored) as one flat CSV."""
        cols = ["path_id", "step", "time", "member_kind", "player"]
        cols += [f"x{j}" for j in range(self.d)]
        cols += [f"a{j}" for j in range(self.d)]
        nodes = self.grid.n_steps + 1
        times = self.grid.nodes
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(",".join(cols) + "\n")
            for m in self.members:
                n_paths = m.states.shape[1]
                for p in range(n_paths):
                    for k in range(nodes):
                        for i in range(self.n):
                            x = m.states[k, p, i]
                            if m.controls is not None and k < self.grid.n_steps:
                                a = m.controls[k, p, i]
                            else:
                                a = np.full(self.d, np.nan)
                            vals = [str(p), str(k), f"{times[k]:.12e}",
                                    m.kind, str(i)]
                            vals += [f"{v:.12e}" for v in x]
                            vals += [f"{v:.12e}" for v in a]
                            fh.write(",".join(vals) + "\n")


def _noise_effective(game, noise):
    scale_i = math.sqrt(2.0 * game.sigma)
    scale_0 = math.sqrt(2.0 * game.sigma0)
    eff = scale_i * noise.idiosyncratic
    if game.sigma0 > 0:
        eff = eff + scale_0 * noise.common[:, :, None, :]
    return eff


def _simulate_member(eq, game, noise_eff, x0, grid, store_controls):
    steps = grid.n_steps
    n_paths = x0.shape[0]
    n, d = game.n, game.d
    dt = grid.dt
    use_kernel = not eq.needs_path_offsets and (
        d == 1 or eq.kind in ("open_loop", "closed_loop"))
    if use_kernel:
        if eq.kind == "open_loop":
            gain = eq.lam
        elif eq.kind == "closed_loop":
            gain = eq.a_mat
        else:
            gain = eq.pi[:, None, None] * np.eye(n)[None]
        gain_steps = np.ascontiguousarray(gain[:steps])
        if eq.kind in ("distributed", "mean_field"):
            offs = np.stack([eq.offset(k)[:, 0] for k in range(steps)])
        else:
            offs = np.zeros((steps, n))
        # fold d into the row axis: rows are (path, dim) pairs
        x0f = np.ascontiguousarray(x0.transpose(0, 2, 1).reshape(n_paths * d, n))
        nf = np.ascontiguousarray(
            noise_eff.transpose(0, 1, 3, 2).reshape(steps, n_paths * d, n))
        statesf = _kernels.em_simulate(gain_steps, np.ascontiguousarray(offs),
                                       x0f, nf, dt)
        states = statesf.reshape(steps + 1, n_paths, d, n).transpose(0, 1, 3, 2)
    else:
        states = np.empty((steps + 1, n_paths, n, d))
        states[0] = x0
        x = x0.copy()
        for k in range(steps):
            gain = eq.gain(k)
            drift = np.einsum("ij,pjd->pid", gain, x)
            drift += eq.offset_paths(k, n_paths)
            x = x - drift * dt + noise_eff[k]
            states[k + 1] = x
    controls = None
    if store_controls:
        controls = np.empty((steps, n_paths, n, d))
        for k in range(steps):
            gain = eq.gain(k)
            controls[k] = -(np.einsum("ij,pjd->pid", gain, states[k])
                            + eq.offset_paths(k, n_paths))
    return states, controls


def simulate(equilibria, game, noise, x0=None, store_controls=True,
             store_costates=False, with_costs=True):
    """Euler-Maruyama forward simulation of several equilibria on shared
    noise (common random numbers), with pairwise gap statistics.

    All members must come from the same game and grid; `x0` is one draw of
    initial states (n_paths, n, d) shared by every member (default: drawn
    from the game's initial law with the noise seed).
    """
    if not equilibria:
        raise ConfigurationError("need at least one equilibrium to simulate")
    grid = equilibria[0].grid
    for eq in equilibria:
        if not eq.grid.compatible(grid):
            raise ConfigurationError("equilibria solved on mismatched grids")
        if eq.n != game.n or eq.d != game.d:
            raise ConfigurationError("equilibrium dimensions do not match the game")
    if noise.n_steps != grid.n_steps or abs(noise.dt - grid.dt) > 1e-12:
        raise ConfigurationError("noise bundle does not match the grid")
    if noise.n_players != game.n or noise.d != game.d:
        raise ConfigurationError("noise shape mismatch")
    if x0 is None:
        # spawn a child stream: reusing the noise seed directly would make
        # the initial draws coincide with the first Brownian increments
        x0_seed = np.random.SeedSequence(entropy=noise.seed, spawn_key=(1,))
        x0 = draw_initial(game, noise.n_paths, seed=x0_seed)
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (noise.n_paths, game.n, game.d):
        raise ConfigurationError(
            f"x0 shape {x0.shape} != {(noise.n_paths, game.n, game.d)}")

    noise_eff = _noise_effective(game, noise)
    members = []
    for eq in equilibria:
        states, controls = _simulate_member(eq, game, noise_eff, x0, grid,
                                            store_controls or with_costs)
        member = TrajectoryMember(kind=eq.kind, states=states,
                                  controls=controls if store_controls else None)
        if store_costates and eq.kind == "open_loop":
            member.costates = np.einsum("kij,kpjd->kpid", eq.lam, states)
        if with_costs and controls is not None:
            run = np.zeros((noise.n_paths, game.n))
            try:
                for k in range(grid.n_steps):
                    lag = 0.5 * np.sum(controls[k] * controls[k], axis=-1)
                    run += (lag + game.f_value(states[k])) * grid.dt
                member.running_cost = run
                member.terminal_cost = game.g_value(states[-1])
            except Exception:
                member.running_cost = None  # custom model without values
        members.append(member)

    gaps = {}
    for i in range(len(members)):
        for j in range(i + 1, len(members)):
            gaps[(i, j)] = pathwise_gap_stats(
                members[i].states, members[j].states,
                kinds=(members[i].kind, members[j].kind))
    return TrajectoryBundle(
        grid=grid, n=game.n, d=game.d, noise_seed=noise.seed,
        noise_fingerprint=noise.fingerprint(), members=members, gaps=gaps)


# ---------------------------------------------------------------------------
# feedback diagnostics
# ---------------------------------------------------------------------------

@dataclass
class FeedbackProfiles:
    """Per-node operator norms and off-diagonal feedback energies."""

    times: np.ndarray
    lam_op: np.ndarray
    a_op: np.ndarray
    diff_op: np.ndarray
    offdiag_energy: np.ndarray  # (nodes, n): sum_{j != i} A_ij(t)^2

    def to_json(self):
        return {
            "times": self.times.tolist(), "lam_op": self.lam_op.tolist(),
            "a_op": self.a_op.tolist(), "diff_op": self.diff_op.tolist(),
            "offdiag_energy": self.offdiag_energy.tolist(),
        }


def feedback_diagnostics(eq_ol, eq_cl):
    """Operator-norm time profiles of the two feedback fields and the
    per-player off-diagonal energies sum_{j != i} A_ij(t)^2 (the LQ
    realization of the off-diagonal gradient sums, exact by linearity)."""
    if not eq_ol.grid.compatible(eq_cl.grid):
        raise ConfigurationError("feedback_diagnostics needs matched grids")
    if eq_ol.kind != "open_loop" or eq_cl.kind != "closed_loop":
        raise ConfigurationError("expected (open_loop, closed_loop) equilibria")
    nodes = eq_ol.grid.n_steps + 1
    n = eq_ol.n
    lam_op = np.empty(nodes)
    a_op = np.empty(nodes)
    diff_op = np.empty(nodes)
    energy = np.empty((nodes, n))
    for k in range(nodes):
        lam = eq_ol.lam[k]
        a = eq_cl.a_mat[k]
        lam_op[k] = np.linalg.norm(lam, 2)
        a_op[k] = np.linalg.norm(a, 2)
        diff_op[k] = np.linalg.norm(a - lam, 2)
        off = a.copy()
        np.fill_diagonal(off, 0.0)
        energy[k] = np.sum(off * off, axis=1)
    return FeedbackProfiles(times=eq_ol.grid.nodes, lam_op=lam_op, a_op=a_op,
                            diff_op=diff_op, offdiag_energy=energy)
