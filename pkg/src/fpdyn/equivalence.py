"""Payoff-preserving rewrites: linear equivalence and its constructive uses.

Scaling a player's matrix by a positive constant and shifting columns of A
(rows of B) by constants changes no best response, so it preserves regions,
equilibria and the entire play dynamics — but it does change payoffs.  This
module applies such transforms and constructs two particular ones:

* ``dominant_equivalent`` rewrites any square game with a unique interior
  equilibrium so that each player's best achievable payoff is strictly
  minimized at the equilibrium: average fictitious play then beats
  equilibrium play in the long run along every non-stationary orbit.
* ``cone_targeted_equivalent`` instead makes a prescribed polyhedral cone
  (with the equilibrium as apex) exactly the region where a player's best
  achievable payoff is at most the (zero-normalized) equilibrium payoff.

Both rest on the ray fan computed by :func:`compute_rays`: for each pure
strategy k of a player, the set of opponent strategies against which all
strategies except k tie at the top is a ray from the interior equilibrium,
and the resulting points form a basis used to pin the shift constants.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog

from .core import BimatrixGame, MixedProfile, best_response, max_payoff
from .equilibrium import NashPoint, interior_nash

RAY_TIE_ATOL = 1e-9
RAY_INDEPENDENCE_MIN_SV = 1e-9
SEPARATION_MARGIN = 1e-9
SUB_NASH_ATOL = 1e-10
GATE_SAMPLES = 1000
GATE_SLOPE_MARGIN = 1e-9
_GATE_SEED = 0xFADE


@dataclass(frozen=True)
class LinearTransform:
    """Scale/shift data: A -> c*A + col_shifts (per column), B -> d*B + row_shifts."""

    c: float
    col_shifts: np.ndarray
    d: float
    row_shifts: np.ndarray

    def __post_init__(self):
        if not (self.c > 0 and self.d > 0):
            raise ValueError("scales must be strictly positive")
        col = np.array(self.col_shifts, dtype=float).reshape(-1)
        row = np.array(self.row_shifts, dtype=float).reshape(-1)
        col.flags.writeable = False
        row.flags.writeable = False
        object.__setattr__(self, "c", float(self.c))
        object.__setattr__(self, "d", float(self.d))
        object.__setattr__(self, "col_shifts", col)
        object.__setattr__(self, "row_shifts", row)

    @classmethod
    def identity(cls, m: int, n: int) -> "LinearTransform":
        return cls(1.0, np.zeros(n), 1.0, np.zeros(m))

    def to_dict(self) -> dict:
        return {"c": self.c, "col_shifts": self.col_shifts.tolist(),
                "d": self.d, "row_shifts": self.row_shifts.tolist()}

    @classmethod
    def from_dict(cls, data: dict) -> "LinearTransform":
        return cls(data["c"], data["col_shifts"], data["d"], data["row_shifts"])


def apply_transform(game: BimatrixGame, tf: LinearTransform) -> BimatrixGame:
    """Entrywise rewrite a'_ij = c a_ij + col_shifts_j, b'_ij = d b_ij + row_shifts_i."""
    if tf.col_shifts.size != game.n or tf.row_shifts.size != game.m:
        raise ValueError("transform shifts do not fit the game dimensions")
    A = tf.c * game.A + tf.col_shifts[None, :]
    B = tf.d * game.B + tf.row_shifts[:, None]
    return BimatrixGame(A, B, name=game.name)


def compose_transforms(first: LinearTransform, second: LinearTransform) -> LinearTransform:
    """The single transform equal to applying ``first`` and then ``second``."""
    return LinearTransform(
        first.c * second.c, second.c * first.col_shifts + second.col_shifts,
        first.d * second.d, second.d * first.row_shifts + second.row_shifts)


# ---------------------------------------------------------------------------
# Ray fan


@dataclass(frozen=True)
class RaySet:
    """For each pure strategy k of a player, the ray from the interior
    equilibrium (in the *opponent's* simplex) on which all strategies except
    k tie at the top while k is strictly worse.

    ``directions_a``/``points_a`` describe the row player's rays (living in
    the column player's simplex); ``directions_b``/``points_b`` the column
    player's rays (in the row player's simplex).  Directions sum to zero;
    points sit halfway to the simplex boundary.
    """

    nash: NashPoint
    directions_a: np.ndarray
    points_a: np.ndarray
    directions_b: np.ndarray
    points_b: np.ndarray


def _ray_fan(payoffs: np.ndarray, center: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Directions and interior points of the n tie-rays from ``center``.

    ``payoffs`` maps an opponent strategy x to the payoff vector (payoffs@x);
    ``center`` is the opponent-side equilibrium projection, where all
    coordinates of payoffs@x tie.  Consecutive-difference coordinates of
    payoffs@x are affine in the first n-1 components of x with an invertible
    linear part (uniqueness of the interior equilibrium), so each ray
    direction solves one linear system against a signed unit target.
    """
    n = payoffs.shape[0]
    base = payoffs[:-1] - payoffs[1:]                       # rows l: payoff_l - payoff_{l+1}
    M = base[:, :-1] - base[:, [-1]]                        # linear part in the projected coordinates
    dirs = np.empty((n, n))
    points = np.empty((n, n))
    try:
        Minv = np.linalg.inv(M)
    except np.linalg.LinAlgError as exc:
        raise ValueError("tie-line system is singular; interior equilibrium is not unique") from exc
    for k in range(n):
        w = np.zeros(n - 1)
        if k > 0:
            w[k - 1] = 1.0
        if k < n - 1:
            w[k] = -1.0
        z = Minv @ w
        v = np.append(z, -z.sum())
        # half the largest step keeping the point strictly interior
        neg = v < 0
        if not np.any(neg):
            raise ValueError("degenerate tie-ray direction")
        s = 0.5 * np.min(center[neg] / -v[neg])
        dirs[k] = v
        points[k] = center + s * v
    return dirs, points


def compute_rays(game: BimatrixGame) -> RaySet:
    """Ray fan of both players around the unique interior equilibrium."""
    nash = interior_nash(game)
    if nash is None:
        raise ValueError("game has no completely mixed equilibrium")
    dirs_a, points_a = _ray_fan(game.A, nash.profile.q)
    dirs_b, points_b = _ray_fan(game.B.T, nash.profile.p)
    for arr in (dirs_a, points_a, dirs_b, points_b):
        arr.flags.writeable = False
    return RaySet(nash, dirs_a, points_a, dirs_b, points_b)


def ray_independence_ok(directions: np.ndarray,
                        min_sv: float = RAY_INDEPENDENCE_MIN_SV) -> bool:
    """Every n-1 of the n normalized ray directions must be linearly independent."""
    n = directions.shape[0]
    unit = directions / np.linalg.norm(directions, axis=1, keepdims=True)
    for drop in range(n):
        sub = np.delete(unit, drop, axis=0)
        if np.linalg.svd(sub, compute_uv=False)[-1] <= min_sv:
            return False
    return True


# ---------------------------------------------------------------------------
# Separating hyperplane through an apex (shared by cone checks and orbit tests)


def _sum_zero_basis(dim: int) -> np.ndarray:
    """Orthonormal basis (columns) of the sum-zero subspace of R^dim."""
    basis = np.linalg.svd(np.eye(dim) - np.full((dim, dim), 1.0 / dim))[0][:, :dim - 1]
    return basis


def separation_margin(points, apex) -> float:
    """Best strict-separation margin of the directions (point - apex).

    Maximizes min_k w . d_k over unit-normalized directions d_k via a small
    linear program; the result is positive exactly when some hyperplane
    through the apex has every point strictly on one side.  Returns -inf
    when a point coincides with the apex.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    apex = np.asarray(apex, dtype=float).reshape(-1)
    if pts.shape[0] == 0:
        raise ValueError("need at least one point")
    dirs = pts - apex[None, :]
    norms = np.linalg.norm(dirs, axis=1)
    if np.any(norms <= 1e-14):
        return -np.inf
    dirs = dirs / norms[:, None]
    U = _sum_zero_basis(apex.size)
    D = dirs @ U                                  # (N, dim-1)
    N, d = D.shape
    # variables (w, delta): maximize delta s.t. D w >= delta, |w_i| <= 1
    c = np.zeros(d + 1)
    c[-1] = -1.0
    A_ub = np.hstack([-D, np.ones((N, 1))])
    b_ub = np.zeros(N)
    bounds = [(-1.0, 1.0)] * d + [(None, None)]
    res = linprog(c, A_ub=A_ub, b_ub=b_ub, bounds=bounds, method="highs")
    if not res.success:
        raise RuntimeError(f"separation LP failed: {res.message}")
    w = res.x[:d]
    delta = res.x[-1]
    wn = np.linalg.norm(w)
    if wn == 0.0:
        return float(delta)
    return float(delta / wn)


# ---------------------------------------------------------------------------
# Payoff-dominant rewrite


def _profile_samples(m: int, n: int, count: int, rng: np.random.Generator):
    return rng.dirichlet(np.ones(m), size=count), rng.dirichlet(np.ones(n), size=count)


def argmax_sets_match(g1: BimatrixGame, g2: BimatrixGame, samples: int = GATE_SAMPLES,
                      rng: np.random.Generator | None = None) -> bool:
    """Do both games induce identical best-response argmax sets at sampled profiles?"""
    rng = rng or np.random.default_rng(_GATE_SEED)
    ps, qs = _profile_samples(g1.m, g1.n, samples, rng)
    for v1, v2 in (((qs @ g1.A.T), (qs @ g2.A.T)), ((ps @ g1.B), (ps @ g2.B))):
        t1 = np.maximum(1e-10 * np.ptp(v1, axis=1), 1e-12)
        t2 = np.maximum(1e-10 * np.ptp(v2, axis=1), 1e-12)
        m1 = v1 >= v1.max(axis=1, keepdims=True) - t1[:, None]
        m2 = v2 >= v2.max(axis=1, keepdims=True) - t2[:, None]
        if not np.array_equal(m1, m2):
            return False
    return True


def dominant_equivalent(game: BimatrixGame) -> tuple[BimatrixGame, LinearTransform]:
    """Shift-only rewrite making the equilibrium the strict minimum of both
    players' best-achievable-payoff functions.

    The n ray points of each player form a basis, so the column shifts c
    solve c . Q_k = -(best payoff at Q_k) for all k: the rewritten best
    payoff then vanishes on the simplex through the ray points and grows
    along every ray from the equilibrium.  Verified on sampled strategies
    before returning (failure indicates degenerate geometry and raises).
    """
    rays = compute_rays(game)
    nash = rays.nash
    col = np.linalg.solve(rays.points_a,
                          -np.array([max_payoff(game, "A", x) for x in rays.points_a]))
    row = np.linalg.solve(rays.points_b,
                          -np.array([max_payoff(game, "B", x) for x in rays.points_b]))
    tf = LinearTransform(1.0, col, 1.0, row)
    out = apply_transform(game, tf)

    rng = np.random.default_rng(_GATE_SEED)
    ps, qs = _profile_samples(game.m, game.n, GATE_SAMPLES, rng)
    best_a = (qs @ out.A.T).max(axis=1)
    best_b = (ps @ out.B).max(axis=1)
    ref_a = max_payoff(out, "A", nash.profile.q)
    ref_b = max_payoff(out, "B", nash.profile.p)
    dist_q = np.abs(qs - nash.profile.q[None, :]).sum(axis=1)
    dist_p = np.abs(ps - nash.profile.p[None, :]).sum(axis=1)
    ok_a = np.all(best_a - ref_a > GATE_SLOPE_MARGIN * dist_q)
    ok_b = np.all(best_b - ref_b > GATE_SLOPE_MARGIN * dist_p)
    if not (ok_a and ok_b and argmax_sets_match(game, out, rng=rng)):
        raise RuntimeError("verification gate failed: rewritten game does not minimize "
                           "best payoff at the equilibrium (degenerate geometry)")
    return out, tf


# ---------------------------------------------------------------------------
# Cone-targeted rewrite


@dataclass(frozen=True)
class ConeSpec:
    """A polyhedral cone in one player's strategy simplex.

    ``apex`` must be that player's interior-equilibrium projection;
    ``extreme_points`` hold one interior simplex point per extreme ray, each
    strictly inside a distinct preference region of the *opponent*;
    ``contains_ray_index`` names a tie-ray of the opponent that runs through
    the cone's interior.
    """

    apex: np.ndarray
    extreme_points: np.ndarray
    contains_ray_index: int

    def __post_init__(self):
        apex = np.array(self.apex, dtype=float).reshape(-1)
        pts = np.atleast_2d(np.array(self.extreme_points, dtype=float))
        apex.flags.writeable = False
        pts.flags.writeable = False
        object.__setattr__(self, "apex", apex)
        object.__setattr__(self, "extreme_points", pts)
        object.__setattr__(self, "contains_ray_index", int(self.contains_ray_index))

    def to_dict(self) -> dict:
        return {"apex": self.apex.tolist(),
                "extreme_points": self.extreme_points.tolist(),
                "contains_ray_index": self.contains_ray_index}

    @classmethod
    def from_dict(cls, data: dict) -> "ConeSpec":
        return cls(data["apex"], data["extreme_points"], data["contains_ray_index"])


def cone_coordinates(cone: ConeSpec, point) -> np.ndarray:
    """Coefficients of (point - apex) over the extreme-ray directions.

    All coefficients strictly positive means the point lies in the cone's
    interior (the n-1 directions span the sum-zero subspace).
    """
    dirs = (cone.extreme_points - cone.apex[None, :]).T      # (dim, n-1)
    rhs = np.asarray(point, dtype=float) - cone.apex
    coeff, *_ = np.linalg.lstsq(dirs, rhs, rcond=None)
    if np.linalg.norm(dirs @ coeff - rhs) > 1e-9 * max(1.0, np.linalg.norm(rhs)):
        raise ValueError("point does not lie in the cone's linear span")
    return coeff


def _validate_cone(game: BimatrixGame, cone: ConeSpec, side: str,
                   nash: NashPoint, rays: RaySet) -> None:
    """Check the cone hypotheses; ``side`` names the player whose best-payoff
    function the cone will bound ("A" means the cone lives in the column
    player's simplex)."""
    center = nash.profile.q if side == "A" else nash.profile.p
    dim = game.n if side == "A" else game.m
    opp_count = game.m if side == "A" else game.n
    if cone.apex.size != dim:
        raise ValueError(f"cone apex has dimension {cone.apex.size}, expected {dim}")
    if np.max(np.abs(cone.apex - center)) > RAY_TIE_ATOL:
        raise ValueError("cone apex is not the interior-equilibrium projection")
    if cone.extreme_points.shape != (dim - 1, dim):
        raise ValueError(f"need {dim - 1} extreme points of dimension {dim}")

    regions = []
    for x in cone.extreme_points:
        vals = game.A @ x if side == "A" else x @ game.B
        order = np.sort(vals)[::-1]
        if order[0] - order[1] <= RAY_TIE_ATOL:
            raise ValueError("cone extreme point lies on an indifference set")
        regions.append(int(np.argmax(vals)))
    if len(set(regions)) != len(regions):
        raise ValueError("cone extreme rays must lie in distinct preference regions")

    dirs = cone.extreme_points - cone.apex[None, :]
    unit = dirs / np.linalg.norm(dirs, axis=1, keepdims=True)
    if np.linalg.svd(unit, compute_uv=False)[-1] <= RAY_INDEPENDENCE_MIN_SV:
        raise ValueError("cone extreme directions are linearly dependent")
    if separation_margin(cone.extreme_points, cone.apex) <= SEPARATION_MARGIN:
        raise ValueError("cone does not fit inside an open halfspace through its apex")

    k = cone.contains_ray_index
    if not 0 <= k < opp_count:
        raise ValueError(f"contained-ray index {k} out of range")
    ray_point = rays.points_a[k] if side == "A" else rays.points_b[k]
    coeff = cone_coordinates(cone, ray_point)
    if np.min(coeff) <= 0.0:
        raise ValueError(f"tie-ray {k} does not run through the cone interior")


def cone_targeted_equivalent(game: BimatrixGame, cone_a: ConeSpec,
                             cone_b: ConeSpec) -> BimatrixGame:
    """Shift-only rewrite whose sub-equilibrium payoff sets are the given cones.

    ``cone_a`` lives in the row player's simplex and becomes the set where
    the *column* player's best payoff is at most zero; ``cone_b`` lives in
    the column player's simplex and bounds the row player's best payoff.
    The shifts solve best-payoff-equals-zero at the apex and at the cone's
    extreme points (a basis), normalizing equilibrium payoffs to zero.
    """
    nash = interior_nash(game)
    if nash is None:
        raise ValueError("game has no completely mixed equilibrium")
    rays = compute_rays(game)
    _validate_cone(game, cone_b, "A", nash, rays)
    _validate_cone(game, cone_a, "B", nash, rays)

    pts_q = np.vstack([nash.profile.q, cone_b.extreme_points])
    col = np.linalg.solve(pts_q, -np.array([max_payoff(game, "A", x) for x in pts_q]))
    pts_p = np.vstack([nash.profile.p, cone_a.extreme_points])
    row = np.linalg.solve(pts_p, -np.array([max_payoff(game, "B", x) for x in pts_p]))
    out = apply_transform(game, LinearTransform(1.0, col, 1.0, row))

    if abs(max_payoff(out, "A", nash.profile.q)) > RAY_TIE_ATOL or \
       abs(max_payoff(out, "B", nash.profile.p)) > RAY_TIE_ATOL:
        raise RuntimeError("rewrite failed to zero the equilibrium best payoffs")
    return out


def sub_nash_membership(game: BimatrixGame, nash: NashPoint,
                        profile: MixedProfile) -> tuple[bool, bool]:
    """Is each player's strategy inside the opponent's sub-equilibrium payoff cone?

    First component: against p, the column player's best payoff does not
    exceed its value at the equilibrium.  Second: same for q and the row
    player, both within ``SUB_NASH_ATOL``.
    """
    ref_b = max_payoff(game, "B", nash.profile.p)
    ref_a = max_payoff(game, "A", nash.profile.q)
    in_b = max_payoff(game, "B", profile.p) <= ref_b + SUB_NASH_ATOL
    in_a = max_payoff(game, "A", profile.q) <= ref_a + SUB_NASH_ATOL
    return bool(in_b), bool(in_a)
