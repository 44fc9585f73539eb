import numpy as np
import pytest

from gamegap import (
    BlowUpError,
    ConfigurationError,
    LQNetwork,
    PointMass,
    ProductGaussian,
    build_game,
    build_weight_matrix,
    sample_noise,
)
from gamegap.riccati import (
    feedback_diagnostics,
    pathwise_gap_stats,
    simulate,
    solve_closed_loop_lq,
    solve_distributed_lq,
    solve_mfg_lq,
    solve_open_loop_lq,
)

from conftest import random_monotone_lq


def lq_game(n, a_f=1.0, a_g=1.0, q_f=1.0, q_g=1.0, kind="complete", T=1.0,
            sigma=1.0, sigma0=0.0, n_steps=200, law=None, w=None):
    if w is None:
        w = build_weight_matrix(kind, n)
    law = law if law is not None else PointMass(0.0)
    return build_game(LQNetwork(a_f=a_f, a_g=a_g, q_f=q_f, q_g=q_g), w,
                      n=n, d=1, T=T, sigma=sigma, sigma0=sigma0,
                      initial_law=law, n_steps=n_steps)


# ---------------------------------------------------------------------------
# open loop
# ---------------------------------------------------------------------------

def test_open_loop_analytic_scalar():
    # lamdot = lam^2 with lam(T)=1 solves lam(t) = 1/(1 + (T - t)), so
    # lam(0) = 1/2 at T = 1
    game = lq_game(1, a_f=0.0, a_g=0.0, q_f=0.0, q_g=1.0, kind="zero",
                   n_steps=200)
    eq = solve_open_loop_lq(game)
    assert abs(eq.lam[0, 0, 0] - 0.5) < 1e-8
    # full profile against the closed form
    t = game.grid.nodes
    np.testing.assert_allclose(eq.lam[:, 0, 0], 1.0 / (1.0 + (1.0 - t)),
                               atol=1e-10)


def test_open_loop_zero_data():
    game = lq_game(3, a_f=0.0, a_g=0.0, q_f=0.0, q_g=0.0)
    eq = solve_open_loop_lq(game)
    np.testing.assert_array_equal(eq.lam, 0.0)


def test_open_loop_constant_fixed_point():
    # zero weights, q_f = q_g = 1: lamdot = lam^2 - 1 with lam(T) = 1 stays 1
    game = lq_game(4, a_f=0.0, a_g=0.0, q_f=1.0, q_g=1.0, kind="zero")
    eq = solve_open_loop_lq(game)
    diag = eq.lam[:, np.arange(4), np.arange(4)]
    np.testing.assert_allclose(diag, 1.0, atol=1e-12)
    off = eq.lam - np.einsum("kij,ij->kij", eq.lam, np.eye(4))
    np.testing.assert_allclose(off, 0.0, atol=1e-15)


def test_open_loop_terminal_exact():
    game = lq_game(5)
    eq = solve_open_loop_lq(game)
    np.testing.assert_array_equal(eq.lam[-1], game.mg_matrix())


def test_open_loop_blowup_detected():
    # strongly negative costs: lamdot = lam^2 - M_F with M_F ~ -25 I blows up
    game = lq_game(2, a_f=0.0, a_g=0.0, q_f=-25.0, q_g=0.0, kind="zero", T=2.0)
    with pytest.raises(BlowUpError) as exc:
        solve_open_loop_lq(game)
    assert exc.value.time is not None


def test_rk4_order_on_lambda(rng):
    # halving dt should divide the lambda(0) error by ~16 (ratio in [12, 20])
    errs = []
    for steps in (25, 50, 100):
        game = lq_game(3, a_f=0.8, q_f=0.6, a_g=0.4, q_g=0.9, n_steps=steps)
        errs.append(solve_open_loop_lq(game).lam[0])
    e1 = np.max(np.abs(errs[0] - errs[1]))
    e2 = np.max(np.abs(errs[1] - errs[2]))
    assert 12.0 <= e1 / e2 <= 20.0


def test_certainty_equivalence_bit_identical():
    a = solve_open_loop_lq(lq_game(4, sigma=1.0, sigma0=0.0))
    b = solve_open_loop_lq(lq_game(4, sigma=0.25, sigma0=2.0))
    np.testing.assert_array_equal(a.lam, b.lam)
    pa = solve_closed_loop_lq(lq_game(3, sigma=1.0))
    pb = solve_closed_loop_lq(lq_game(3, sigma=3.0))
    np.testing.assert_array_equal(pa.a_mat, pb.a_mat)


# ---------------------------------------------------------------------------
# closed loop
# ---------------------------------------------------------------------------

def test_closed_loop_n1_equals_open_loop():
    game = lq_game(1, a_f=0.0, a_g=0.0, q_f=0.7, q_g=1.3, kind="zero")
    ol = solve_open_loop_lq(game)
    cl = solve_closed_loop_lq(game)
    np.testing.assert_allclose(cl.a_mat, ol.lam, atol=1e-8)


def test_closed_loop_zero_weights_diagonal_collapse():
    # cross terms vanish when P^i = pi e_i e_i^T: A(t) is diagonal and
    # equals the open-loop Lambda(t)
    game = lq_game(4, a_f=0.5, a_g=0.5, q_f=1.0, q_g=1.0, kind="zero")
    ol = solve_open_loop_lq(game)
    cl = solve_closed_loop_lq(game)
    np.testing.assert_allclose(cl.a_mat, ol.lam, atol=1e-10)
    # P^i supported on entry (i, i)
    p0 = cl.p_list[0]
    for i in range(4):
        mask = np.zeros((4, 4), dtype=bool)
        mask[i, i] = True
        assert np.max(np.abs(p0[i][~mask])) < 1e-12


def test_closed_loop_differs_from_open_loop_n2():
    # complete(2), a = 1, q = 0: the Nash feedback anticipates reactions
    game = lq_game(2, a_f=1.0, a_g=1.0, q_f=0.0, q_g=0.0, n_steps=400)
    ol = solve_open_loop_lq(game)
    cl = solve_closed_loop_lq(game)
    gap = np.linalg.norm(cl.a_mat[0] - ol.lam[0], 2)
    assert gap > 0.05


def test_closed_loop_p_symmetric():
    game = lq_game(3)
    cl = solve_closed_loop_lq(game)
    asym = np.max(np.abs(cl.p_list - cl.p_list.transpose(0, 1, 3, 2)))
    assert asym <= 1e-12
    np.testing.assert_array_equal(cl.p_list[-1], game.sg_blocks())


def test_closed_loop_store_p_auto_threshold():
    big = lq_game(40, n_steps=20)
    cl = solve_closed_loop_lq(big)
    assert cl.p_list is None
    assert cl.a_mat.shape == (21, 40, 40)


# ---------------------------------------------------------------------------
# distributed
# ---------------------------------------------------------------------------

def test_distributed_zero_weights_zero_mean():
    game = lq_game(3, kind="zero", law=ProductGaussian(0.0, 1.0))
    eq = solve_distributed_lq(game)
    np.testing.assert_allclose(eq.rho, 0.0, atol=1e-15)
    np.testing.assert_allclose(eq.mu, 0.0, atol=1e-15)
    # feedback equals the decoupled scalar Riccati feedback
    ol = solve_open_loop_lq(game)
    np.testing.assert_allclose(eq.pi, ol.lam[:, 0, 0], atol=1e-12)


def test_distributed_exchangeable_means_identical():
    # equal initial means on the complete graph: mu^i identical across i
    game = lq_game(6, law=ProductGaussian(0.7, 1.0))
    eq = solve_distributed_lq(game, picard_tol=1e-12)
    spread = np.max(np.abs(eq.mu - eq.mu[:, :1, :]))
    assert spread < 1e-10


def test_distributed_rejects_common_noise():
    game = lq_game(3, sigma0=0.1)
    with pytest.raises(ConfigurationError):
        solve_distributed_lq(game)


def test_distributed_terminal_condition_exact():
    means = np.linspace(-1, 1, 5)
    game = lq_game(5, law=ProductGaussian(means, 1.0))
    eq = solve_distributed_lq(game)
    expect = -1.0 * game.w @ eq.mu[-1]
    np.testing.assert_allclose(eq.rho[-1], expect, atol=1e-12)
    assert eq.pi[-1] == 2.0  # q_g + a_g


# ---------------------------------------------------------------------------
# mean field
# ---------------------------------------------------------------------------

def test_mfg_zero_mean_trivial_fixed_point():
    game = lq_game(4, law=ProductGaussian(0.0, 1.0))
    eq = solve_mfg_lq(game)
    np.testing.assert_allclose(eq.rho, 0.0, atol=1e-15)
    np.testing.assert_allclose(eq.mu_bar, 0.0, atol=1e-15)


def test_mfg_no_coupling_reduces_to_control():
    game = lq_game(4, a_f=0.0, a_g=0.0, q_f=1.0, q_g=1.0,
                   law=ProductGaussian(0.5, 1.0))
    eq = solve_mfg_lq(game)
    # pi solves pidot = pi^2 - q_f: constant 1 here
    np.testing.assert_allclose(eq.pi, 1.0, atol=1e-12)
    np.testing.assert_allclose(eq.rho, 0.0, atol=1e-14)


def test_distributed_feedback_converges_to_mfg():
    # complete(n) with spread means: the population-average of the
    # distributed mean flow solves the MFG system exactly (the graph is
    # doubly stochastic), and the per-player feedback offsets rho^i see
    # the mean-without-self, biased O(1/n); both checked here
    gaps = {}
    for n in (8, 64):
        means = np.linspace(-1.0, 1.0, n)
        game = lq_game(n, law=ProductGaussian(means, 1.0))
        dist = solve_distributed_lq(game, picard_tol=1e-12)
        mfg = solve_mfg_lq(game, picard_tol=1e-12)
        np.testing.assert_allclose(dist.mu.mean(axis=1), mfg.mu_bar, atol=1e-9)
        gaps[n] = np.max(np.abs(dist.rho[:, :, 0] - mfg.rho[:, None, 0]))
    assert gaps[64] < 10.0 * gaps[8]
    assert gaps[64] < gaps[8]


def test_mfg_common_noise_needs_bundle():
    game = lq_game(3, sigma0=0.5)
    with pytest.raises(ConfigurationError):
        solve_mfg_lq(game)


def test_mfg_common_noise_paths_shape():
    game = lq_game(3, sigma0=0.5, n_steps=50, law=ProductGaussian(0.3, 1.0))
    noise = sample_noise(game, n_paths=4, seed=0)
    eq = solve_mfg_lq(game, noise=noise)
    assert eq.rho_paths.shape == (4, 51, 1)
    assert eq.mu_bar_paths.shape == (4, 51, 1)
    # terminal consistency per path: rho_T = -a_g mu_bar_T
    np.testing.assert_allclose(eq.rho_paths[:, -1], -1.0 * eq.mu_bar_paths[:, -1],
                               atol=1e-9)


# ---------------------------------------------------------------------------
# oracle equivalence: Riccati costates vs direct deterministic integration
# ---------------------------------------------------------------------------

def _shoot_open_loop(mf, mg, x0, T, steps, tol=1e-12):
    """Independent oracle: Newton shooting on the deterministic
    characteristics xdot = -y, ydot = -M_F x, y(T) = M_G x(T)."""
    n = len(x0)

    def integrate(y0):
        h = T / steps
        x, y = x0.copy(), y0.copy()
        xs, ys = [x.copy()], [y.copy()]
        for _ in range(steps):
            def f(state):
                xx, yy = state
                return (-yy, -(mf @ xx))
            k1 = f((x, y))
            k2 = f((x + h / 2 * k1[0], y + h / 2 * k1[1]))
            k3 = f((x + h / 2 * k2[0], y + h / 2 * k2[1]))
            k4 = f((x + h * k3[0], y + h * k3[1]))
            x = x + h / 6 * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0])
            y = y + h / 6 * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])
            xs.append(x.copy())
            ys.append(y.copy())
        return np.array(xs), np.array(ys)

    y0 = np.zeros(n)
    for _ in range(60):
        xs, ys = integrate(y0)
        res = ys[-1] - mg @ xs[-1]
        if np.max(np.abs(res)) < tol:
            break
        jac = np.empty((n, n))
        h = 1e-7
        for k in range(n):
            e = np.zeros(n)
            e[k] = h
            xs2, ys2 = integrate(y0 + e)
            jac[:, k] = ((ys2[-1] - mg @ xs2[-1]) - res) / h
        y0 = y0 - np.linalg.solve(jac, res)
    return integrate(y0)


def test_riccati_costates_match_shooting_oracle(rng):
    for _ in range(6):
        game = random_monotone_lq(rng, n_max=6, n_steps=200)
        x0 = game.initial_law.points[:, 0]
        eq = solve_open_loop_lq(game)
        xs, ys = _shoot_open_loop(game.mf_matrix(), game.mg_matrix(), x0,
                                  game.grid.T, game.grid.n_steps)
        y_ric = np.einsum("kij,kj->ki", eq.lam, xs)
        assert np.max(np.abs(y_ric - ys)) < 1e-6


# ---------------------------------------------------------------------------
# simulation
# ---------------------------------------------------------------------------

def test_zero_interaction_full_collapse():
    game = lq_game(4, a_f=0.5, a_g=0.5, q_f=1.0, q_g=1.0, kind="zero",
                   law=ProductGaussian(0.0, 1.0), n_steps=100)
    ol = solve_open_loop_lq(game)
    cl = solve_closed_loop_lq(game)
    dist = solve_distributed_lq(game)
    mfg = solve_mfg_lq(game)
    # feedback laws coincide within 1e-10
    for k in (0, 50, 100):
        np.testing.assert_allclose(cl.gain(k), ol.gain(k), atol=1e-10)
        np.testing.assert_allclose(dist.gain(k), ol.gain(k), atol=1e-10)
        np.testing.assert_allclose(mfg.gain(k), ol.gain(k), atol=1e-10)
        np.testing.assert_allclose(dist.offset(k), 0.0, atol=1e-12)
        np.testing.assert_allclose(mfg.offset(k), 0.0, atol=1e-12)
    noise = sample_noise(game, n_paths=32, seed=5)
    bundle = simulate([ol, cl, dist, mfg], game, noise)
    for g in bundle.gaps.values():
        assert g.full_mean < 1e-20


def test_single_player_cl_ol_paths_identical():
    game = lq_game(1, a_f=0.0, a_g=0.0, q_f=1.0, q_g=1.0, kind="zero",
                   n_steps=100)
    ol = solve_open_loop_lq(game)
    cl = solve_closed_loop_lq(game)
    noise = sample_noise(game, n_paths=16, seed=2)
    bundle = simulate([ol, cl], game, noise)
    assert bundle.gaps[(0, 1)].full_mean < 1e-16


def test_simulate_shared_noise_and_euler_consistency():
    game = lq_game(3, n_steps=50, law=ProductGaussian(0.0, 1.0))
    ol = solve_open_loop_lq(game)
    noise = sample_noise(game, n_paths=8, seed=9)
    bundle = simulate([ol], game, noise)
    m = bundle.member("open_loop")
    # Euler consistency: X_{k+1} = X_k + alpha dt + sqrt(2 sigma) dW
    eff = np.sqrt(2 * game.sigma) * noise.idiosyncratic
    for k in range(50):
        recon = m.states[k] + m.controls[k] * game.grid.dt + eff[k]
        np.testing.assert_allclose(m.states[k + 1], recon, atol=1e-12)


def test_simulate_grid_mismatch_rejected():
    game = lq_game(3, n_steps=50)
    other = lq_game(3, n_steps=60)
    ol = solve_open_loop_lq(game)
    noise_other = sample_noise(other, n_paths=4, seed=0)
    with pytest.raises(ConfigurationError):
        simulate([ol], game, noise_other)


def test_simulate_costates_match_decoupling():
    game = lq_game(3, n_steps=40)
    ol = solve_open_loop_lq(game)
    noise = sample_noise(game, n_paths=4, seed=1)
    bundle = simulate([ol], game, noise, store_costates=True)
    m = bundle.member("open_loop")
    y0 = np.einsum("ij,pjd->pid", ol.lam[0], m.states[0])
    np.testing.assert_allclose(m.costates[0], y0, atol=1e-13)


def test_self_convergence_order_additive_noise():
    # strong error vs a 1600-step reference halves-to-quarters when the
    # step count doubles (order >= 1 for additive noise)
    base = lq_game(3, n_steps=1600, law=PointMass(1.0))
    ref_noise = sample_noise(base, n_paths=64, seed=3)
    ol_ref = solve_open_loop_lq(base)
    ref = simulate([ol_ref], base, ref_noise).member("open_loop").states

    errs = {}
    for steps in (100, 200):
        game = lq_game(3, n_steps=steps, law=PointMass(1.0))
        factor = 1600 // steps
        # aggregate the reference increments onto the coarse grid
        idio = ref_noise.idiosyncratic.reshape(steps, factor, 64, 3, 1).sum(axis=1)
        common = ref_noise.common.reshape(steps, factor, 64, 1).sum(axis=1)
        from gamegap.games import NoiseBundle
        coarse = NoiseBundle(seed=3, n_paths=64, n_steps=steps, n_players=3,
                             d=1, dt=game.grid.dt, idiosyncratic=idio,
                             common=common)
        ol = solve_open_loop_lq(game)
        x0 = np.broadcast_to(game.initial_law.points, (64, 3, 1)).copy()
        states = simulate([ol], game, coarse, x0=x0).member("open_loop").states
        sub = ref[::factor]
        errs[steps] = np.sqrt(np.mean((states - sub) ** 2))
    ratio = errs[100] / errs[200]
    assert 1.7 <= ratio <= 4.5


def test_pathwise_gap_stats_internal_consistency():
    rng = np.random.default_rng(0)
    a = rng.standard_normal((5, 10, 4, 1))
    b = rng.standard_normal((5, 10, 4, 1))
    g = pathwise_gap_stats(a, b)
    assert g.per_player_avg == pytest.approx(g.full_mean / 4)
    assert g.max_player_mean <= g.full_mean + 1e-12


def test_running_costs_accumulated():
    game = lq_game(2, n_steps=20, law=PointMass(1.0))
    ol = solve_open_loop_lq(game)
    noise = sample_noise(game, n_paths=4, seed=4)
    bundle = simulate([ol], game, noise)
    m = bundle.member("open_loop")
    assert m.running_cost.shape == (4, 2)
    assert np.all(m.running_cost >= 0)
    assert np.all(m.terminal_cost >= 0)


# ---------------------------------------------------------------------------
# feedback diagnostics
# ---------------------------------------------------------------------------

def test_feedback_diagnostics_zero_weights():
    game = lq_game(3, kind="zero", a_f=0.0, a_g=0.0)
    ol = solve_open_loop_lq(game)
    cl = solve_closed_loop_lq(game)
    prof = feedback_diagnostics(ol, cl)
    np.testing.assert_allclose(prof.diff_op, 0.0, atol=1e-10)
    np.testing.assert_allclose(prof.offdiag_energy, 0.0, atol=1e-12)


def test_feedback_diagnostics_scalar_profile():
    # n = 1, M_G = 1, M_F = 0: |Lambda(t)|_op = 1/(1 + (T - t)), decreasing
    # backward in time
    game = lq_game(1, a_f=0.0, a_g=0.0, q_f=0.0, q_g=1.0, kind="zero")
    ol = solve_open_loop_lq(game)
    cl = solve_closed_loop_lq(game)
    prof = feedback_diagnostics(ol, cl)
    t = game.grid.nodes
    np.testing.assert_allclose(prof.lam_op, 1.0 / (1.0 + (1.0 - t)), atol=1e-8)
    assert np.all(np.diff(prof.lam_op) > 0)  # increases toward T


def test_feedback_dimension_freeness_sweep():
    # fixed displacement-monotone coefficients: max_t |Lambda|_op varies by
    # a factor < 3 across N (empirical dimension-freeness)
    maxima = []
    for n in (4, 8, 16, 32):
        game = lq_game(n, n_steps=100)
        ol = solve_open_loop_lq(game)
        ops = [np.linalg.norm(ol.lam[k], 2) for k in range(0, 101, 10)]
        maxima.append(max(ops))
    assert max(maxima) / min(maxima) < 3.0
