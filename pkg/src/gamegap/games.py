"""Game instances: interaction networks, cost models, noise, and grids.

An N-player game couples N private d-dimensional states through running
costs F^i and terminal costs G^i that depend on the other players only
through a hollow, row-stochastic weight matrix w.  Player i controls the
drift of its own state and pays a Lagrangian L(x, a) = |a|^2 / 2 for the
built-in model classes, so the Hamiltonian is H(x, p) = |p|^2 / 2 with
maximizer a* = -p.

Everything here is immutable after construction and safe to share across
workers.  The only randomness enters through `build_weight_matrix` (graph
sampling), `sample_noise` (Brownian increments), and `draw_initial`
(initial states); each is a pure function of its seed.
"""

import json
import hashlib
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    ConfigurationError,
    NonFiniteError,
    SamplingError,
    UnsupportedModelError,
)

__all__ = [
    "TimeGrid", "WeightMatrix", "NoiseBundle", "GameSpec", "HamiltonianSpec",
    "LQNetwork", "PhiNetwork", "CustomModel", "PHI_CATALOG",
    "PointMass", "ProductGaussian", "ParticleCloud",
    "build_weight_matrix", "build_game", "sample_noise", "draw_initial",
    "legendre_residual", "game_to_json", "game_from_json",
]

ROW_SUM_TOL = 1e-12


# ---------------------------------------------------------------------------
# time grid
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TimeGrid:
    """Uniform partition of [t0, T] with n_steps steps (n_steps+1 nodes)."""

    t0: float
    T: float
    n_steps: int

    def __post_init__(self):
        if not (self.T > self.t0):
            raise ConfigurationError(f"need T > t0, got t0={self.t0}, T={self.T}")
        if self.n_steps < 1:
            raise ConfigurationError(f"n_steps must be >= 1, got {self.n_steps}")

    @property
    def dt(self):
        return (self.T - self.t0) / self.n_steps

    @property
    def nodes(self):
        return np.linspace(self.t0, self.T, self.n_steps + 1)

    def compatible(self, other, tol=1e-12):
        return (
            self.n_steps == other.n_steps
            and abs(self.t0 - other.t0) <= tol
            and abs(self.T - other.T) <= tol
        )

    def to_json(self):
        return {"t0": self.t0, "T": self.T, "n_steps": self.n_steps}


# ---------------------------------------------------------------------------
# interaction network
# ---------------------------------------------------------------------------

class WeightMatrix:
    """Hollow, non-negative interaction matrix with unit row sums.

    The all-zero matrix is the admitted degenerate no-interaction case
    (it is also the only valid matrix for n = 1).
    """

    def __init__(self, matrix):
        m = np.ascontiguousarray(matrix, dtype=float)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ConfigurationError(f"weight matrix must be square, got shape {m.shape}")
        if not np.all(np.isfinite(m)):
            raise ConfigurationError("weight matrix contains non-finite entries")
        if np.any(m < 0):
            raise ConfigurationError("weight matrix entries must be non-negative")
        if np.any(np.diagonal(m) != 0.0):
            raise ConfigurationError("weight matrix must be hollow (w_ii = 0)")
        sums = m.sum(axis=1)
        zero = not m.any()
        if not zero and np.max(np.abs(sums - 1.0)) > ROW_SUM_TOL:
            bad = int(np.argmax(np.abs(sums - 1.0)))
            raise ConfigurationError(
                f"row {bad} sums to {sums[bad]!r}; rows must sum to 1 "
                f"within {ROW_SUM_TOL} (or the matrix must be all-zero)"
            )
        m.setflags(write=False)
        self._m = m
        self._zero = zero

    @property
    def n(self):
        return self._m.shape[0]

    @property
    def matrix(self):
        return self._m

    @property
    def is_zero(self):
        return self._zero

    @property
    def row_sums(self):
        return self._m.sum(axis=1)

    def to_list(self):
        return [float(v) for v in self._m.ravel(order="C")]

    def __repr__(self):
        return f"WeightMatrix(n={self.n}, zero={self._zero})"


def build_weight_matrix(kind, n, params=None, seed=None):
    """Construct an interaction matrix.

    kind: 'complete' | 'circulant_k_regular' | 'erdos_renyi_normalized'
          | 'zero' | 'explicit'
    params: kind-specific dict (circulant: {'k': even degree};
            erdos_renyi: {'p': edge probability, 'max_retries': int};
            explicit: {'matrix': row-major array-like}).

    complete gives w_ij = 1/(n-1) off the diagonal; circulant puts 1/k on
    the k nearest ring neighbours; erdos_renyi samples an undirected
    adjacency and row-normalizes (generally asymmetric).  Isolated
    Erdos-Renyi vertices are resampled up to max_retries, then reported.
    """
    params = dict(params or {})
    if n < 1:
        raise ConfigurationError(f"player count must be >= 1, got n={n}")

    if kind == "zero":
        return WeightMatrix(np.zeros((n, n)))

    if kind == "complete":
        if n == 1:
            return WeightMatrix(np.zeros((1, 1)))
        w = np.full((n, n), 1.0 / (n - 1))
        np.fill_diagonal(w, 0.0)
        return WeightMatrix(w)

    if kind == "circulant_k_regular":
        k = params.get("k")
        if k is None:
            raise ConfigurationError("circulant_k_regular requires params['k']")
        k = int(k)
        if k % 2 != 0 or not (2 <= k <= n - 1):
            raise ConfigurationError(
                f"circulant degree k must be even with 2 <= k <= n-1, got k={k}, n={n}"
            )
        w = np.zeros((n, n))
        for off in range(1, k // 2 + 1):
            idx = np.arange(n)
            w[idx, (idx + off) % n] = 1.0 / k
            w[idx, (idx - off) % n] = 1.0 / k
        return WeightMatrix(w)

    if kind == "erdos_renyi_normalized":
        p = params.get("p")
        if p is None or not (0.0 < p <= 1.0):
            raise ConfigurationError(f"erdos_renyi requires edge probability p in (0, 1], got {p}")
        if n < 2:
            raise ConfigurationError("erdos_renyi requires n >= 2")
        max_retries = int(params.get("max_retries", 100))
        rng = np.random.default_rng(seed)
        adj = np.triu(rng.random((n, n)) < p, k=1)
        adj = adj | adj.T
        for i in range(n):
            retries = 0
            while not adj[i].any():
                if retries >= max_retries:
                    raise SamplingError(
                        f"vertex {i} still isolated after {max_retries} resampling retries"
                    )
                row = rng.random(n) < p
                row[i] = False
                adj[i, :] = row
                adj[:, i] = row
                retries += 1
        w = adj.astype(float)
        w /= w.sum(axis=1, keepdims=True)
        return WeightMatrix(w)

    if kind == "explicit":
        m = params.get("matrix")
        if m is None:
            raise ConfigurationError("explicit kind requires params['matrix']")
        m = np.asarray(m, dtype=float)
        if m.ndim == 1:
            if m.size != n * n:
                raise ConfigurationError(
                    f"row-major matrix has {m.size} entries, expected {n * n}"
                )
            m = m.reshape(n, n)
        if m.shape != (n, n):
            raise ConfigurationError(f"explicit matrix shape {m.shape} != ({n}, {n})")
        return WeightMatrix(m)

    raise ConfigurationError(f"unknown weight-matrix kind {kind!r}")


# ---------------------------------------------------------------------------
# initial laws
# ---------------------------------------------------------------------------

class InitialLaw:
    kind = "abstract"

    def resolve(self, n, d):
        raise NotImplementedError

    def to_json(self):
        raise NotImplementedError


def _as_player_points(arr, n, d, what):
    """Broadcast scalars / per-player vectors / full (n, d) arrays."""
    a = np.asarray(arr, dtype=float)
    if a.ndim == 0:
        return np.full((n, d), float(a))
    if a.ndim == 1 and a.size == n:
        return np.repeat(a[:, None], d, axis=1)
    if a.ndim == 2 and a.shape == (n, d):
        return a.copy()
    raise ConfigurationError(
        f"{what} of shape {a.shape} does not resolve to ({n}, {d})"
    )


class PointMass(InitialLaw):
    """Deterministic start: player i begins at points[i] in R^d."""

    kind = "point_mass"

    def __init__(self, points):
        self.points = np.asarray(points, dtype=float)

    def resolve(self, n, d):
        return PointMass(_as_player_points(self.points, n, d, "point-mass points"))

    def means(self):
        return self.points

    def scales(self):
        return np.zeros(self.points.shape[0])

    def sample(self, rng, n_paths):
        n, d = self.points.shape
        return np.broadcast_to(self.points, (n_paths, n, d)).copy()

    def to_json(self):
        return {"kind": self.kind, "points": self.points.tolist()}


class ProductGaussian(InitialLaw):
    """Independent players, player i ~ N(means[i], scales[i]^2 I_d)."""

    kind = "product_gaussian"

    def __init__(self, means, scales):
        self.means_raw = np.asarray(means, dtype=float)
        self.scales_raw = np.asarray(scales, dtype=float)

    def resolve(self, n, d):
        means = _as_player_points(self.means_raw, n, d, "gaussian means")
        s = np.asarray(self.scales_raw, dtype=float)
        if s.ndim == 0:
            scales = np.full(n, float(s))
        elif s.ndim == 1 and s.size == n:
            scales = s.copy()
        else:
            raise ConfigurationError(
                f"gaussian scales of shape {s.shape} do not resolve to ({n},)"
            )
        if np.any(scales < 0):
            raise ConfigurationError("gaussian scales must be non-negative")
        return ProductGaussian(means, scales)

    def means(self):
        return self.means_raw

    def scales(self):
        return self.scales_raw

    def sample(self, rng, n_paths):
        n, d = self.means_raw.shape
        z = rng.standard_normal((n_paths, n, d))
        return self.means_raw[None] + self.scales_raw[None, :, None] * z

    def to_json(self):
        return {
            "kind": self.kind,
            "means": self.means_raw.tolist(),
            "scales": self.scales_raw.tolist(),
        }


class ParticleCloud(InitialLaw):
    """Every player draws i.i.d. from the empirical law of the atoms."""

    kind = "particle_cloud"

    def __init__(self, atoms):
        atoms = np.asarray(atoms, dtype=float)
        if atoms.ndim == 1:
            atoms = atoms[:, None]
        self.atoms = atoms

    def resolve(self, n, d):
        if self.atoms.shape[1] != d or self.atoms.shape[0] < 1:
            raise ConfigurationError(
                f"particle cloud of shape {self.atoms.shape} does not match d={d}"
            )
        return ParticleCloud(self.atoms.copy())

    def means(self):
        return self.atoms.mean(axis=0)

    def scales(self):
        return self.atoms.std(axis=0)

    def sample(self, rng, n_paths, n=None):
        if n is None:
            raise TypeError("ParticleCloud.sample needs the player count")
        idx = rng.integers(0, self.atoms.shape[0], size=(n_paths, n))
        return self.atoms[idx]

    def to_json(self):
        return {"kind": self.kind, "atoms": self.atoms.tolist()}


def _law_from_json(doc):
    # canonical array fields, with scalar shorthands accepted in configs
    kind = doc.get("kind")
    if kind == "point_mass":
        points = doc.get("points", doc.get("value"))
        if points is None:
            raise ConfigurationError("point_mass law needs 'points' (or 'value')")
        return PointMass(np.asarray(points, dtype=float))
    if kind == "product_gaussian":
        means = doc.get("means", doc.get("mean", 0.0))
        scales = doc.get("scales", doc.get("scale", 1.0))
        return ProductGaussian(np.asarray(means, dtype=float),
                               np.asarray(scales, dtype=float))
    if kind == "particle_cloud":
        return ParticleCloud(np.asarray(doc["atoms"], dtype=float))
    raise ConfigurationError(f"unknown initial-law kind {kind!r}")


# ---------------------------------------------------------------------------
# phi catalog for the bounded-interaction model
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PhiEntry:
    """A bounded smooth scalar map with certified derivative bounds."""

    name: str
    f: object
    df: object
    ddf: object
    sup: float        # ||phi||_inf
    sup_d: float      # ||phi'||_inf
    sup_dd: float     # ||phi''||_inf


def _tanh_ddf(x):
    t = np.tanh(x)
    return -2.0 * t * (1.0 - t * t)


def _arctan_f(x):
    return (2.0 / math.pi) * np.arctan(x)


def _arctan_df(x):
    return (2.0 / math.pi) / (1.0 + x * x)


def _arctan_ddf(x):
    return -(2.0 / math.pi) * 2.0 * x / (1.0 + x * x) ** 2


PHI_CATALOG = {
    "tanh": PhiEntry(
        "tanh", np.tanh, lambda x: 1.0 - np.tanh(x) ** 2, _tanh_ddf,
        sup=1.0, sup_d=1.0, sup_dd=4.0 / (3.0 * math.sqrt(3.0)),
    ),
    "arctan": PhiEntry(
        # scaled arctan: (2/pi) arctan(x); |phi''| peaks at x = 1/sqrt(3)
        "arctan", _arctan_f, _arctan_df, _arctan_ddf,
        sup=1.0, sup_d=2.0 / math.pi, sup_dd=(2.0 / math.pi) * 3.0 * math.sqrt(3.0) / 8.0,
    ),
}


# ---------------------------------------------------------------------------
# cost models
# ---------------------------------------------------------------------------

class LQNetwork:
    """Linear-quadratic network costs with isotropic d x d blocks.

    F^i(x) = (q_f/2)|x^i|^2 + (a_f/2)|x^i - sum_j w_ij x^j|^2 and G^i the
    same with (q_g, a_g).  All second derivatives are constant; the
    cross-Hessian of F stacks to M_F = q_f I + a_f (I - w) (an n x n
    scalar matrix, tensored with I_d by isotropy), and the full Hessian of
    F^i is S^i_F = q_f e_i e_i^T + a_f (e_i - w_i)(e_i - w_i)^T.
    """

    kind = "lq_network"

    def __init__(self, a_f=0.0, a_g=0.0, q_f=0.0, q_g=0.0):
        self.a_f = float(a_f)
        self.a_g = float(a_g)
        self.q_f = float(q_f)
        self.q_g = float(q_g)
        for name in ("a_f", "a_g", "q_f", "q_g"):
            if not math.isfinite(getattr(self, name)):
                raise ConfigurationError(f"{name} must be finite")

    def validate_dims(self, n, d):
        pass  # isotropic blocks work for every (n, d)

    def cross_matrix(self, w, which):
        n = w.shape[0]
        q, a = (self.q_f, self.a_f) if which == "f" else (self.q_g, self.a_g)
        return q * np.eye(n) + a * (np.eye(n) - w)

    def hessian_blocks(self, w, which):
        """Full Hessians S^i as an (n, n, n) stack (scalar isotropic blocks)."""
        n = w.shape[0]
        q, a = (self.q_f, self.a_f) if which == "f" else (self.q_g, self.a_g)
        eye = np.eye(n)
        rows = eye - w  # row i = e_i - w_i
        out = a * np.einsum("ip,iq->ipq", rows, rows)
        out[np.arange(n), np.arange(n), np.arange(n)] += q
        return out

    def _split(self, which):
        return (self.q_f, self.a_f) if which == "f" else (self.q_g, self.a_g)

    def value(self, x, w, which):
        """Cost values per player; x has shape (..., n, d)."""
        q, a = self._split(which)
        u = x - np.einsum("ij,...jd->...id", w, x)
        return 0.5 * q * np.sum(x * x, axis=-1) + 0.5 * a * np.sum(u * u, axis=-1)

    def grad_diag(self, x, w, which):
        """D_i F^i stacked over i; x has shape (..., n, d)."""
        q, a = self._split(which)
        u = x - np.einsum("ij,...jd->...id", w, x)
        return q * x + a * u

    def grad_full(self, x, w, which):
        """All gradients D_j F^i; x has shape (n, d), output (n, n, d)."""
        q, a = self._split(which)
        n, d = x.shape
        u = x - w @ x
        out = -a * w[:, :, None] * u[:, None, :]
        out[np.arange(n), np.arange(n), :] = q * x + a * u
        return out

    def cross_hessian_at(self, x, w, which):
        """(D_{ji} F^i)_{ij} as an n x n scalar matrix (constant for LQ)."""
        return self.cross_matrix(w, which)

    def mf_value(self, x, stat, which):
        q, a = self._split(which)
        dev = x - stat
        return 0.5 * q * np.sum(x * x, axis=-1) + 0.5 * a * np.sum(dev * dev, axis=-1)

    def mf_flow_stat(self, atoms):
        """Statistic of the population law the mean-field cost depends on."""
        return atoms.mean(axis=0)

    def mf_grad(self, x, stat, which):
        """D_x of the mean-field cost at (x, m); stat = mean of m."""
        q, a = self._split(which)
        return q * x + a * (x - stat)

    def to_json(self):
        return {"kind": self.kind, "a_f": self.a_f, "a_g": self.a_g,
                "q_f": self.q_f, "q_g": self.q_g}


class PhiNetwork:
    """Bounded smooth interaction through a catalog map phi (d = 1 only).

    F^i(x) = (A/2) (phi(x^i) - sum_j w_ij phi(x^j))^2 and G^i identical.
    The catalog certifies ||phi||_inf, ||phi'||_inf, ||phi''||_inf
    analytically, which the diagnostics use for envelope bounds.
    """

    kind = "phi_network"

    def __init__(self, a=1.0, phi="tanh"):
        self.a = float(a)
        if phi not in PHI_CATALOG:
            raise ConfigurationError(
                f"phi {phi!r} not in catalog {sorted(PHI_CATALOG)}"
            )
        self.phi_name = phi
        self.entry = PHI_CATALOG[phi]

    @property
    def sup_phi(self):
        return self.entry.sup

    @property
    def sup_dphi(self):
        return self.entry.sup_d

    @property
    def sup_ddphi(self):
        return self.entry.sup_dd

    def validate_dims(self, n, d):
        if d != 1:
            raise ConfigurationError(f"PhiNetwork requires d = 1, got d = {d}")

    def _u(self, x, w):
        # x: (..., n, 1) -> (..., n)
        px = self.entry.f(x[..., 0])
        return px - np.einsum("ij,...j->...i", w, px)

    def value(self, x, w, which):
        u = self._u(x, w)
        return 0.5 * self.a * u * u

    def grad_diag(self, x, w, which):
        u = self._u(x, w)
        return (self.a * u * self.entry.df(x[..., 0]))[..., None]

    def grad_full(self, x, w, which):
        n = x.shape[0]
        u = self._u(x, w)
        dphi = self.entry.df(x[:, 0])
        out = (-self.a) * u[:, None] * w * dphi[None, :]
        out[np.arange(n), np.arange(n)] = self.a * u * dphi
        return out[:, :, None]

    def cross_hessian_at(self, x, w, which):
        # D_{ji} F^i = A phi'(x^j)(1_{ij} - w_ij) phi'(x^i) + A u_i phi''(x^i) 1_{ij}
        n = x.shape[0]
        xs = x[:, 0]
        u = self._u(x, w)
        dphi = self.entry.df(xs)
        ddphi = self.entry.ddf(xs)
        mat = self.a * dphi[:, None] * (np.eye(n) - w) * dphi[None, :]
        mat[np.arange(n), np.arange(n)] += self.a * u * ddphi
        return mat

    def mf_value(self, x, stat, which):
        dev = self.entry.f(x[..., 0]) - stat
        return 0.5 * self.a * dev * dev

    def mf_flow_stat(self, atoms):
        return float(np.mean(self.entry.f(atoms[:, 0]) if atoms.ndim > 1
                             else self.entry.f(atoms)))

    def mf_grad(self, x, stat, which):
        dev = self.entry.f(x[..., 0]) - stat
        return (self.a * dev * self.entry.df(x[..., 0]))[..., None]

    def to_json(self):
        return {"kind": self.kind, "a": self.a, "phi": self.phi_name,
                "sup_phi": self.sup_phi, "sup_dphi": self.sup_dphi}


class CustomModel:
    """User-supplied evaluators.  Operations check for what they need and
    raise UnsupportedModelError when an evaluator is missing."""

    kind = "custom"

    def __init__(self, f_value=None, g_value=None, grad_f_diag=None,
                 grad_g_diag=None, grad_f_full=None, grad_g_full=None,
                 cross_hessian_f=None, cross_hessian_g=None,
                 mf_grad_f=None, mf_grad_g=None, hamiltonian=None):
        self._fns = {
            "f_value": f_value, "g_value": g_value,
            "grad_f_diag": grad_f_diag, "grad_g_diag": grad_g_diag,
            "grad_f_full": grad_f_full, "grad_g_full": grad_g_full,
            "cross_hessian_f": cross_hessian_f, "cross_hessian_g": cross_hessian_g,
            "mf_grad_f": mf_grad_f, "mf_grad_g": mf_grad_g,
        }
        self.hamiltonian_override = hamiltonian

    def validate_dims(self, n, d):
        pass

    def require(self, name):
        fn = self._fns.get(name)
        if fn is None:
            raise UnsupportedModelError(
                f"custom model does not provide {name!r}; supply the "
                "evaluator explicitly to use this operation"
            )
        return fn

    def has(self, name):
        return self._fns.get(name) is not None

    def value(self, x, w, which):
        return self.require(f"{which}_value")(x, w)

    def grad_diag(self, x, w, which):
        return self.require(f"grad_{which}_diag")(x, w)

    def grad_full(self, x, w, which):
        return self.require(f"grad_{which}_full")(x, w)

    def cross_hessian_at(self, x, w, which):
        return self.require(f"cross_hessian_{which}")(x, w)

    def mf_grad(self, x, stat, which):
        return self.require(f"mf_grad_{which}")(x, stat)

    def to_json(self):
        raise ConfigurationError("custom models do not serialize to JSON")


def _model_from_json(doc):
    kind = doc.get("kind")
    if kind == "lq_network":
        return LQNetwork(a_f=doc["a_f"], a_g=doc["a_g"], q_f=doc["q_f"], q_g=doc["q_g"])
    if kind == "phi_network":
        return PhiNetwork(a=doc["a"], phi=doc["phi"])
    raise ConfigurationError(f"unknown model kind {kind!r}")


# ---------------------------------------------------------------------------
# Hamiltonian
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class HamiltonianSpec:
    """Evaluators for H(x, p) = sup_a(-a.p - L(x, a)) and its derivatives.

    For the built-in Lagrangian L = |a|^2/2 the transform is H = |p|^2/2
    with maximizer a* = -p; lambda_floor is a certified lower bound on
    D_pp H and growth_const bounds |D_x H| <= growth_const (1 + |p|).
    """

    h: object
    dp: object
    dx: object
    dpp: object
    lambda_floor: float
    growth_const: float

    @classmethod
    def quadratic(cls, d):
        return cls(
            h=lambda x, p: 0.5 * np.sum(np.square(p), axis=-1),
            dp=lambda x, p: np.asarray(p, dtype=float),
            dx=lambda x, p: np.zeros_like(np.asarray(p, dtype=float)),
            dpp=lambda x, p: np.eye(d),
            lambda_floor=1.0,
            growth_const=0.0,
        )


def legendre_residual(ham, lagrangian, sample_points, action_grid=None):
    """Max over samples of |H(x,p) - max_a(-a.p - L(x,a))| on an action grid.

    sample_points: iterable of (x, p) pairs (scalars or 1-d arrays).
    action_grid: 1-d array of grid coordinates used per dimension; it must
    cover the analytic maximizer.  Default: 2001 points spanning
    [-2 max|p|-1, 2 max|p|+1].  Only d <= 2 is supported by the default
    grid construction.
    """
    pts = [(np.atleast_1d(np.asarray(x, dtype=float)),
            np.atleast_1d(np.asarray(p, dtype=float))) for x, p in sample_points]
    if not pts:
        raise ConfigurationError("need at least one sample point")
    d = pts[0][0].size
    if action_grid is None:
        if d > 2:
            raise ConfigurationError("default action grid only supports d <= 2")
        radius = 2.0 * max(float(np.max(np.abs(p))) for _, p in pts) + 1.0
        action_grid = np.linspace(-radius, radius, 2001)
    action_grid = np.asarray(action_grid, dtype=float)
    if d == 1:
        actions = action_grid[:, None]
    else:
        mesh = np.meshgrid(*([action_grid] * d), indexing="ij")
        actions = np.stack([m.ravel() for m in mesh], axis=-1)
    worst = 0.0
    for x, p in pts:
        hval = float(np.asarray(ham.h(x, p)))
        lvals = np.asarray([lagrangian(x, a) for a in actions], dtype=float)
        cand = -(actions @ p) - lvals
        if not np.isfinite(hval) or not np.all(np.isfinite(cand)):
            raise NonFiniteError("non-finite evaluator output in Legendre check")
        worst = max(worst, abs(hval - float(np.max(cand))))
    return worst


# ---------------------------------------------------------------------------
# noise
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class NoiseBundle:
    """Brownian increments shared by every solver of one game (common
    random numbers): path-wise gaps between equilibria are only meaningful
    when all simulations consume the identical increments.

    idiosyncratic: (n_steps, n_paths, n, d) increments of W^i
    common:        (n_steps, n_paths, d) increments of W^0
    Both are i.i.d. N(0, dt) per component and reconstructible
    bit-identically from (seed, shape).
    """

    seed: int
    n_paths: int
    n_steps: int
    n_players: int
    d: int
    dt: float
    idiosyncratic: np.ndarray = field(repr=False)
    common: np.ndarray = field(repr=False)

    def fingerprint(self):
        h = hashlib.sha256()
        h.update(str((self.seed, self.n_paths, self.n_steps,
                      self.n_players, self.d)).encode())
        h.update(self.idiosyncratic.tobytes())
        h.update(self.common.tobytes())
        return h.hexdigest()[:16]


def sample_noise(game, n_paths, seed):
    """Draw the shared NoiseBundle for a game; bit-identical per seed."""
    if n_paths < 1:
        raise ConfigurationError(f"n_paths must be >= 1, got {n_paths}")
    grid = game.grid
    if grid.n_steps < 1:
        raise ConfigurationError("zero-step grid")
    rng = np.random.default_rng(seed)
    sdt = math.sqrt(grid.dt)
    idio = rng.standard_normal((grid.n_steps, n_paths, game.n, game.d)) * sdt
    common = rng.standard_normal((grid.n_steps, n_paths, game.d)) * sdt
    idio.setflags(write=False)
    common.setflags(write=False)
    return NoiseBundle(
        seed=int(seed), n_paths=int(n_paths), n_steps=grid.n_steps,
        n_players=game.n, d=game.d, dt=grid.dt,
        idiosyncratic=idio, common=common,
    )


def draw_initial(game, n_paths, seed):
    """Draw initial states (n_paths, n, d) from the game's initial law."""
    rng = np.random.default_rng(seed)
    law = game.initial_law
    if isinstance(law, ParticleCloud):
        return law.sample(rng, n_paths, n=game.n)
    return law.sample(rng, n_paths)


# ---------------------------------------------------------------------------
# the assembled game
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GameSpec:
    """One N-player game instance; immutable and validated eagerly."""

    n: int
    d: int
    grid: TimeGrid
    sigma: float
    sigma0: float
    weights: WeightMatrix
    model: object
    initial_law: InitialLaw

    def __post_init__(self):
        if self.n < 1 or self.d < 1:
            raise ConfigurationError(f"need n >= 1 and d >= 1, got n={self.n}, d={self.d}")
        if self.sigma < 0 or self.sigma0 < 0:
            raise ConfigurationError("noise intensities must be non-negative")
        if self.weights.n != self.n:
            raise ConfigurationError(
                f"weight matrix is {self.weights.n}x{self.weights.n} "
                f"but the game has n={self.n} players"
            )
        self.model.validate_dims(self.n, self.d)

    # -- bound model helpers ------------------------------------------------
    @property
    def w(self):
        return self.weights.matrix

    def mf_matrix(self):
        return self.model.cross_matrix(self.w, "f")

    def mg_matrix(self):
        return self.model.cross_matrix(self.w, "g")

    def sf_blocks(self):
        return self.model.hessian_blocks(self.w, "f")

    def sg_blocks(self):
        return self.model.hessian_blocks(self.w, "g")

    def f_value(self, x):
        return self.model.value(x, self.w, "f")

    def g_value(self, x):
        return self.model.value(x, self.w, "g")

    def grad_f_diag(self, x):
        return self.model.grad_diag(x, self.w, "f")

    def grad_g_diag(self, x):
        return self.model.grad_diag(x, self.w, "g")

    def grad_f_full(self, x):
        return self.model.grad_full(x, self.w, "f")

    def grad_g_full(self, x):
        return self.model.grad_full(x, self.w, "g")

    def hamiltonian(self):
        override = getattr(self.model, "hamiltonian_override", None)
        if override is not None:
            return override
        return HamiltonianSpec.quadratic(self.d)


def build_game(model, weights, n, d, T, sigma, sigma0, initial_law,
               t0=0.0, n_steps=200):
    """Assemble and validate a GameSpec.

    The time grid carried by the game is the default for solvers and for
    noise sampling; solvers accept an explicit grid for refinement runs.
    """
    if sigma < 0 or sigma0 < 0:
        raise ConfigurationError("noise intensities must be non-negative")
    if not isinstance(weights, WeightMatrix):
        weights = WeightMatrix(weights)
    grid = TimeGrid(t0=float(t0), T=float(T), n_steps=int(n_steps))
    law = initial_law.resolve(n, d)
    return GameSpec(n=int(n), d=int(d), grid=grid, sigma=float(sigma),
                    sigma0=float(sigma0), weights=weights, model=model,
                    initial_law=law)


# ---------------------------------------------------------------------------
# JSON round trip (fixed field names; lossless for finite doubles)
# ---------------------------------------------------------------------------

def game_to_json(game):
    return {
        "n": game.n,
        "d": game.d,
        "t0": game.grid.t0,
        "T": game.grid.T,
        "n_steps": game.grid.n_steps,
        "sigma": game.sigma,
        "sigma0": game.sigma0,
        "weights": game.weights.to_list(),
        "model": game.model.to_json(),
        "initial_law": game.initial_law.to_json(),
    }


def game_from_json(doc):
    if isinstance(doc, str):
        doc = json.loads(doc)
    weights = np.asarray(doc["weights"], dtype=float).reshape(doc["n"], doc["n"])
    return build_game(
        model=_model_from_json(doc["model"]),
        weights=WeightMatrix(weights),
        n=doc["n"], d=doc["d"], T=doc["T"],
        sigma=doc["sigma"], sigma0=doc["sigma0"],
        initial_law=_law_from_json(doc["initial_law"]),
        t0=doc.get("t0", 0.0), n_steps=doc["n_steps"],
    )
