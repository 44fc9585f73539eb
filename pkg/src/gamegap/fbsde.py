"""Model-agnostic forward-backward solvers.

These serve two roles: an independent oracle for the Riccati module (the
deterministic Newton-shooting solver never touches the Riccati code
path), and the only solver for the nonlinear bounded-interaction class.
The stochastic least-squares Monte Carlo Picard solver is explicitly
second class: regression-based conditional expectations carry
uncontrolled bias, so it is flagged approximate and never used as ground
truth.

The deterministic characteristics of the costate system are

    Xdot^i = -D_p H(X^i, Y^i),   Ydot^i = D_x H(X^i, Y^i) - D_i F^i(X),
    Y^i(T) = D_i G^i(X(T)),

integrated by fixed-step RK4; shooting solves for Y(t0) by Newton with a
forward finite-difference Jacobian (relative step 1e-6, adequate at
tolerance 1e-9 in double precision).
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, ConvergenceError
from .games import TimeGrid

__all__ = [
    "DeterministicSolution", "ApproxSolution", "MeanFieldFlow",
    "ResidualReport", "solve_pontryagin_shooting",
    "solve_pontryagin_picard_lsmc", "solve_mkv_deterministic",
    "shoot_pontryagin_batch", "shoot_particles_against_flow",
    "fbsde_residual",
]


# ---------------------------------------------------------------------------
# containers
# ---------------------------------------------------------------------------

@dataclass
class DeterministicSolution:
    """One deterministic state/costate path from the shooting solver."""

    grid: TimeGrid
    x_paths: np.ndarray           # (nodes, n, d)
    y_paths: np.ndarray           # (nodes, n, d)
    terminal_residual: float
    newton_iters: int

    def to_json(self):
        return {
            "grid": self.grid.to_json(),
            "x_paths": self.x_paths.tolist(),
            "y_paths": self.y_paths.tolist(),
            "terminal_residual": self.terminal_residual,
            "newton_iters": self.newton_iters,
        }


@dataclass
class ApproxSolution:
    """Regression-based stochastic solution; flagged approximate."""

    grid: TimeGrid
    basis_degree: int
    picard_deltas: list
    y_samples: np.ndarray         # (nodes, n_paths, n, d)
    x_samples: np.ndarray         # (nodes, n_paths, n, d)
    converged: bool
    coeffs: np.ndarray            # (nodes, n_features, n*d)
    coeff_ses: np.ndarray         # standard errors, same shape
    noise_eff: np.ndarray = field(repr=False, default=None)
    approximate: bool = True


@dataclass
class MeanFieldFlow:
    """Deterministic measure flow as a particle cloud over time."""

    grid: TimeGrid
    atoms: np.ndarray             # (nodes, P, d)
    y_atoms: np.ndarray           # (nodes, P, d)
    deltas: list
    iterations: int


@dataclass
class ResidualReport:
    forward_max: float
    backward_max: float
    terminal_max: float
    per_player_forward: np.ndarray
    per_player_backward: np.ndarray
    per_player_terminal: np.ndarray

    def to_json(self):
        return {
            "forward_max": self.forward_max,
            "backward_max": self.backward_max,
            "terminal_max": self.terminal_max,
            "per_player_forward": self.per_player_forward.tolist(),
            "per_player_backward": self.per_player_backward.tolist(),
            "per_player_terminal": self.per_player_terminal.tolist(),
        }


# ---------------------------------------------------------------------------
# deterministic shooting
# ---------------------------------------------------------------------------

def _integrate_characteristics(game, ham, x0, y0, grid):
    """RK4 on the coupled (X, Y) characteristics; returns node arrays."""
    steps = grid.n_steps
    h = grid.dt
    x = x0.copy()
    y = y0.copy()
    xs = np.empty((steps + 1,) + x0.shape)
    ys = np.empty_like(xs)
    xs[0], ys[0] = x, y

    def f(xv, yv):
        dx = -ham.dp(xv, yv)
        dy = ham.dx(xv, yv) - game.grad_f_diag(xv)
        return dx, dy

    for k in range(steps):
        k1x, k1y = f(x, y)
        k2x, k2y = f(x + 0.5 * h * k1x, y + 0.5 * h * k1y)
        k3x, k3y = f(x + 0.5 * h * k2x, y + 0.5 * h * k2y)
        k4x, k4y = f(x + h * k3x, y + h * k3y)
        x = x + (h / 6.0) * (k1x + 2 * k2x + 2 * k3x + k4x)
        y = y + (h / 6.0) * (k1y + 2 * k2y + 2 * k3y + k4y)
        xs[k + 1], ys[k + 1] = x, y
    return xs, ys


def solve_pontryagin_shooting(game, x0, tol=1e-9, max_newton=50, grid=None):
    """Newton shooting on Y(t0) for the deterministic costate system.

    Requires sigma = sigma0 = 0 and a model with gradient evaluators.
    Fails with ConvergenceError when Newton does not reach `tol` within
    `max_newton` iterations or the shooting Jacobian is singular.
    """
    if game.sigma != 0.0 or game.sigma0 != 0.0:
        raise ConfigurationError(
            "shooting solves the deterministic system; need sigma = sigma0 = 0")
    grid = grid or game.grid
    ham = game.hamiltonian()
    x0 = np.asarray(x0, dtype=float).reshape(game.n, game.d)

    def residual(y0_flat):
        y0 = y0_flat.reshape(game.n, game.d)
        xs, ys = _integrate_characteristics(game, ham, x0, y0, grid)
        return (ys[-1] - game.grad_g_diag(xs[-1])).ravel(), xs, ys

    y0 = np.zeros(game.n * game.d)
    res, xs, ys = residual(y0)
    it = 0
    while np.max(np.abs(res)) >= tol:
        if it >= max_newton:
            raise ConvergenceError(
                f"Newton shooting did not converge in {max_newton} "
                f"iterations (residual {np.max(np.abs(res)):.3e})",
                residual=float(np.max(np.abs(res))))
        jac = np.empty((y0.size, y0.size))
        for k in range(y0.size):
            step = 1e-6 * max(1.0, abs(y0[k]))
            e = np.zeros_like(y0)
            e[k] = step
            res_k, _, _ = residual(y0 + e)
            jac[:, k] = (res_k - res) / step
        try:
            delta = np.linalg.solve(jac, res)
        except np.linalg.LinAlgError as exc:
            raise ConvergenceError(
                f"singular shooting Jacobian: {exc}",
                residual=float(np.max(np.abs(res)))) from exc
        y0, res, xs, ys = _damped_update(residual, y0, delta, res)
        it += 1
    return DeterministicSolution(
        grid=grid, x_paths=xs, y_paths=ys,
        terminal_residual=float(np.max(np.abs(res))), newton_iters=it)


def _damped_update(residual, y0, delta, res):
    """Backtracking Newton step: halve until the residual norm improves.

    Plain Newton can 2-cycle on the nonlinear shooting maps of the
    bounded-interaction models; damping restores global convergence on
    the monotone residuals encountered here.
    """
    base = np.max(np.abs(res))
    step = 1.0
    while step >= 1.0 / 1024.0:
        cand = y0 - step * delta
        out = residual(cand)
        if np.max(np.abs(out[0])) < base:
            return (cand, *out)
        step *= 0.5
    # no improving step (flat spot): take the full step and let the outer
    # loop either recover or hit max_newton
    cand = y0 - delta
    return (cand, *residual(cand))


def shoot_pontryagin_batch(game, x0s, grid=None, tol=1e-9, max_newton=50):
    """Batched deterministic shooting over independent initial conditions.

    x0s has shape (B, n, d); each batch entry is one full N-player
    shooting problem (unknowns Y(t0) of size n*d), all integrated
    simultaneously.  Returns states and costates (nodes, B, n, d).
    """
    if game.sigma != 0.0 or game.sigma0 != 0.0:
        raise ConfigurationError(
            "shooting solves the deterministic system; need sigma = sigma0 = 0")
    grid = grid or game.grid
    ham = game.hamiltonian()
    x0s = np.asarray(x0s, dtype=float)
    b, n, d = x0s.shape

    def residual(y_flat):
        y0 = y_flat.reshape(b, n, d)
        xs, ys = _integrate_characteristics(game, ham, x0s, y0, grid)
        res = (ys[-1] - game.grad_g_diag(xs[-1])).reshape(b, n * d)
        return res, xs, ys

    _, out, _ = _newton_shoot_batch(residual, np.zeros((b, n * d)), tol,
                                    max_newton, "batched shooting")
    return out[1], out[2]


# ---------------------------------------------------------------------------
# stochastic LSMC Picard (approximate)
# ---------------------------------------------------------------------------

def _poly_features(x_flat, degree):
    """Polynomial features of the flattened state, total degree <= 2."""
    m, nd = x_flat.shape
    cols = [np.ones((m, 1)), x_flat]
    if degree == 2:
        prods = [x_flat[:, i:i + 1] * x_flat[:, i:] for i in range(nd)]
        cols.extend(prods)
    return np.concatenate(cols, axis=1)


def solve_pontryagin_picard_lsmc(game, noise, basis_degree=1, tol=1e-6,
                                 max_iters=20, x0=None):
    """Picard iteration with least-squares Monte Carlo regression.

    Alternates a forward Euler-Maruyama pass under the current feedback
    estimate with a backward regression pass estimating the conditional
    expectations of Y on polynomial features of the full state.  Stops
    when successive Y samples differ by less than `tol` in RMS; a
    non-convergent run returns with `converged=False` (reporting, never
    raising).  Flagged approximate.
    """
    if game.sigma <= 0.0:
        raise ConfigurationError("LSMC solver requires sigma > 0")
    if basis_degree not in (1, 2):
        raise ConfigurationError(
            f"basis_degree must be 1 or 2, got {basis_degree}")
    grid = game.grid
    if noise.n_steps != grid.n_steps or noise.n_players != game.n or noise.d != game.d:
        raise ConfigurationError("noise bundle does not match the game")
    ham = game.hamiltonian()
    steps = grid.n_steps
    dt = grid.dt
    n_paths = noise.n_paths
    n, d = game.n, game.d

    if x0 is None:
        from .games import draw_initial
        x0 = draw_initial(game, n_paths,
                          seed=np.random.SeedSequence(entropy=noise.seed,
                                                      spawn_key=(2,)))
    noise_eff = math.sqrt(2.0 * game.sigma) * noise.idiosyncratic
    if game.sigma0 > 0:
        noise_eff = noise_eff + math.sqrt(2.0 * game.sigma0) * noise.common[:, :, None, :]

    n_feat = _poly_features(np.zeros((1, n * d)), basis_degree).shape[1]
    coeffs = np.zeros((steps + 1, n_feat, n * d))
    ses = np.zeros_like(coeffs)
    y_prev = np.zeros((steps + 1, n_paths, n, d))
    deltas = []
    converged = False
    xs = None
    for _ in range(max_iters):
        # forward pass under the current regression feedback
        xs = np.empty((steps + 1, n_paths, n, d))
        xs[0] = x0
        x = x0.copy()
        for k in range(steps):
            feats = _poly_features(x.reshape(n_paths, n * d), basis_degree)
            yk = (feats @ coeffs[k]).reshape(n_paths, n, d)
            x = x - ham.dp(x, yk) * dt + noise_eff[k]
            xs[k + 1] = x
        # backward regression pass; standard errors come from the
        # pre-projection targets of this pass
        y_new = np.empty_like(y_prev)
        y_new[steps] = game.grad_g_diag(xs[steps])
        feats_T = _poly_features(xs[steps].reshape(n_paths, n * d), basis_degree)
        coeffs[steps], ses[steps] = _lstsq_with_se(
            feats_T, y_new[steps].reshape(n_paths, -1))
        for k in range(steps - 1, -1, -1):
            target = (y_new[k + 1]
                      + dt * (game.grad_f_diag(xs[k])
                              - ham.dx(xs[k], y_new[k + 1])))
            feats = _poly_features(xs[k].reshape(n_paths, n * d), basis_degree)
            coeffs[k], ses[k] = _lstsq_with_se(feats, target.reshape(n_paths, -1))
            y_new[k] = (feats @ coeffs[k]).reshape(n_paths, n, d)
        delta = float(np.sqrt(np.mean((y_new - y_prev) ** 2)))
        deltas.append(delta)
        y_prev = y_new
        if delta < tol:
            converged = True
            break
    return ApproxSolution(
        grid=grid, basis_degree=basis_degree, picard_deltas=deltas,
        y_samples=y_prev, x_samples=xs, converged=converged,
        coeffs=coeffs, coeff_ses=ses, noise_eff=noise_eff)


def _lstsq_with_se(phi, targets):
    """OLS coefficients and per-coefficient standard errors."""
    coef, _, rank, _ = np.linalg.lstsq(phi, targets, rcond=None)
    resid = targets - phi @ coef
    dof = max(phi.shape[0] - rank, 1)
    sigma2 = np.sum(resid * resid, axis=0) / dof
    gram_inv_diag = np.diag(np.linalg.pinv(phi.T @ phi))
    se = np.sqrt(np.outer(gram_inv_diag, sigma2))
    return coef, se


# ---------------------------------------------------------------------------
# batched Newton shooting
# ---------------------------------------------------------------------------

def _newton_shoot_batch(residual, y0, tol, max_newton, what):
    """Damped Newton on a batch of independent shooting problems.

    residual maps (B, m) unknowns to a tuple whose first entry is the
    (B, m) residual; the remaining entries are carried along.  Every
    problem in the batch gets its own (m, m) finite-difference Jacobian
    and its own backtracking factor.
    """
    y = y0.copy()
    out = residual(y)
    res = out[0]
    it = 0
    while float(np.max(np.abs(res))) >= tol:
        if it >= max_newton:
            raise ConvergenceError(
                f"{what} stalled (residual {np.max(np.abs(res)):.2e})",
                residual=float(np.max(np.abs(res))))
        b, m = y.shape
        jac = np.empty((b, m, m))
        for k in range(m):
            step = 1e-6 * np.maximum(1.0, np.abs(y[:, k]))
            yp = y.copy()
            yp[:, k] += step
            jac[:, :, k] = (residual(yp)[0] - res) / step[:, None]
        try:
            delta = np.linalg.solve(jac, res[..., None])[..., 0]
        except np.linalg.LinAlgError as exc:
            raise ConvergenceError(f"singular Jacobian in {what}: {exc}",
                                   residual=float(np.max(np.abs(res)))) from exc
        base = np.max(np.abs(res), axis=1)
        active = base >= tol
        factor = np.where(active, 1.0, 0.0)
        for attempt in range(12):
            y_try = y - factor[:, None] * delta
            out = residual(y_try)
            worse = (np.max(np.abs(out[0]), axis=1) >= base) & active
            if not worse.any() or attempt == 11:
                break
            factor = np.where(worse, 0.5 * factor, factor)
        y = y_try
        res = out[0]
        it += 1
    return y, out, it


# ---------------------------------------------------------------------------
# McKean-Vlasov deterministic Picard
# ---------------------------------------------------------------------------

def _stat_interp(stat_nodes, s, steps):
    k = int(math.floor(s))
    k = max(0, min(k, steps - 1))
    lam = s - k
    return (1.0 - lam) * stat_nodes[k] + lam * stat_nodes[k + 1]


def shoot_particles_against_flow(game, x0s, stat_nodes, grid=None,
                                 tol=1e-10, max_newton=50):
    """Batched shooting of independent particles against a frozen measure
    flow (given through its per-node statistic).  Returns state and
    costate node arrays of shape (nodes, P, d)."""
    grid = grid or game.grid
    ham = game.hamiltonian()
    x0s = np.asarray(x0s, dtype=float)
    steps = grid.n_steps
    h = grid.dt
    p, d = x0s.shape

    def integrate(y0s):
        x = x0s.copy()
        y = y0s.copy()
        xs = np.empty((steps + 1, p, d))
        ys = np.empty_like(xs)
        xs[0], ys[0] = x, y

        def f(s, xv, yv):
            dx = -ham.dp(xv, yv)
            dy = ham.dx(xv, yv) - game.model.mf_grad(
                xv, _stat_interp(stat_nodes, s, steps), "f")
            return dx, dy

        for k in range(steps):
            s = float(k)
            k1 = f(s, x, y)
            k2 = f(s + 0.5, x + 0.5 * h * k1[0], y + 0.5 * h * k1[1])
            k3 = f(s + 0.5, x + 0.5 * h * k2[0], y + 0.5 * h * k2[1])
            k4 = f(s + 1.0, x + h * k3[0], y + h * k3[1])
            x = x + (h / 6.0) * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0])
            y = y + (h / 6.0) * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])
            xs[k + 1], ys[k + 1] = x, y
        return xs, ys

    def residual(y0s):
        xs, ys = integrate(y0s)
        term = game.model.mf_grad(xs[-1], stat_nodes[-1], "g")
        return ys[-1] - term, xs, ys

    _, out, _ = _newton_shoot_batch(residual, np.zeros((p, d)), tol,
                                    max_newton, "particle shooting")
    return out[1], out[2]


def solve_mkv_deterministic(game, m0_atoms, tol=1e-8, max_iters=50,
                            grid=None, shoot_tol=1e-10):
    """Picard iteration over the deterministic flow of empirical measures.

    Each particle solves its own control problem against the frozen flow
    (all particles in one vectorized batch); the flow then updates to the
    particles' empirical measures.  Converged when the sup over time of
    the index-matched particle L2 distance between successive clouds
    drops below `tol`.  Requires sigma = sigma0 = 0 (deterministic
    measure flow).
    """
    if game.sigma != 0.0 or game.sigma0 != 0.0:
        raise ConfigurationError(
            "deterministic measure flow requires sigma = sigma0 = 0")
    grid = grid or game.grid
    atoms0 = np.asarray(m0_atoms, dtype=float)
    if atoms0.ndim == 1:
        atoms0 = atoms0[:, None]
    _, d = atoms0.shape
    if d != game.d:
        raise ConfigurationError(f"cloud dimension {d} != game dimension {game.d}")
    steps = grid.n_steps
    flow = np.repeat(atoms0[None], steps + 1, axis=0)
    deltas = []
    y_flow = None
    for it in range(1, max_iters + 1):
        stat_nodes = np.array([game.model.mf_flow_stat(flow[k])
                               for k in range(steps + 1)])
        new_flow, new_y = shoot_particles_against_flow(
            game, atoms0, stat_nodes, grid, shoot_tol)
        # index-matched W2 between successive clouds, sup over time
        delta = float(np.max(np.sqrt(np.mean(
            np.sum((new_flow - flow) ** 2, axis=-1), axis=-1))))
        deltas.append(delta)
        flow, y_flow = new_flow, new_y
        if delta < tol:
            return MeanFieldFlow(grid=grid, atoms=flow, y_atoms=y_flow,
                                 deltas=deltas, iterations=it)
    raise ConvergenceError(
        f"measure-flow Picard did not converge in {max_iters} iterations "
        f"(last delta {deltas[-1]:.3e})", residual=deltas[-1])


# ---------------------------------------------------------------------------
# residual reporting
# ---------------------------------------------------------------------------

def fbsde_residual(solution, game):
    """Forward / backward drift residuals and terminal mismatch per player.

    Deterministic solutions are checked with midpoint-rule residuals
    (O(dt^2) on smooth solutions); approximate LSMC solutions are checked
    with Euler residuals net of the realized noise (reported, never
    asserted).
    """
    ham = game.hamiltonian()
    grid = solution.grid
    dt = grid.dt
    if isinstance(solution, DeterministicSolution):
        xs, ys = solution.x_paths, solution.y_paths
        steps = grid.n_steps
        fw = np.zeros((steps, game.n))
        bw = np.zeros((steps, game.n))
        for k in range(steps):
            xm = 0.5 * (xs[k] + xs[k + 1])
            ym = 0.5 * (ys[k] + ys[k + 1])
            f_res = (xs[k + 1] - xs[k]) / dt + ham.dp(xm, ym)
            b_res = (ys[k + 1] - ys[k]) / dt - (ham.dx(xm, ym)
                                                - game.grad_f_diag(xm))
            fw[k] = np.linalg.norm(f_res, axis=-1)
            bw[k] = np.linalg.norm(b_res, axis=-1)
        term = np.linalg.norm(ys[-1] - game.grad_g_diag(xs[-1]), axis=-1)
        return ResidualReport(
            forward_max=float(fw.max()), backward_max=float(bw.max()),
            terminal_max=float(term.max()),
            per_player_forward=fw.max(axis=0),
            per_player_backward=bw.max(axis=0),
            per_player_terminal=term,
        )
    if isinstance(solution, ApproxSolution):
        xs, ys = solution.x_samples, solution.y_samples
        steps = grid.n_steps
        fw = np.zeros((steps, game.n))
        bw = np.zeros((steps, game.n))
        for k in range(steps):
            f_res = (xs[k + 1] - xs[k] - solution.noise_eff[k]) / dt \
                + ham.dp(xs[k], ys[k])
            b_res = (ys[k] - ys[k + 1]) / dt + (game.grad_f_diag(xs[k])
                                                - ham.dx(xs[k], ys[k + 1]))
            fw[k] = np.mean(np.linalg.norm(f_res, axis=-1), axis=0)
            bw[k] = np.mean(np.linalg.norm(b_res, axis=-1), axis=0)
        term = np.mean(np.linalg.norm(
            ys[-1] - game.grad_g_diag(xs[-1]), axis=-1), axis=0)
        return ResidualReport(
            forward_max=float(fw.max()), backward_max=float(bw.max()),
            terminal_max=float(term.max()),
            per_player_forward=fw.max(axis=0),
            per_player_backward=bw.max(axis=0),
            per_player_terminal=term,
        )
    raise ConfigurationError(f"unknown solution type {type(solution).__name__}")
