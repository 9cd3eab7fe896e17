"""Orbit analysis: periodic itineraries, payoff dominance, cone containment,
and the random search for play that equilibrium strictly beats.

A fictitious-play orbit visits a sequence of best-reply region pairs (its
itinerary).  On an attracting cycle the sequence repeats and the crossing
states converge, so a cycle is declared when the region-pair sequence is
block-periodic and the states at a fixed crossing of the block (the return
section) agree across three consecutive returns.

The search pipeline mirrors how one hunts for games where equilibrium play
Pareto dominates learning: sample a random game with a unique interior
equilibrium, run play long enough to settle, detect a cycle, test whether
both its simplex projections fit inside open halfspaces through the
equilibrium, and if so rewrite the game so those halfspace cones become the
sub-equilibrium payoff regions — making the cycle's payoffs permanently
worse than equilibrium payoffs, which is re-verified before reporting.
"""

from __future__ import annotations

import concurrent.futures
import logging
import math
import os
from dataclasses import dataclass

import numpy as np

from .core import BimatrixGame, MixedProfile
from .dynamics import Trajectory, simulate
from .equilibrium import NashPoint, interior_nash
from .equivalence import (ConeSpec, LinearTransform, _sum_zero_basis,
                          cone_targeted_equivalent, compute_rays,
                          separation_margin, sub_nash_membership,
                          SEPARATION_MARGIN)

logger = logging.getLogger(__name__)

DOMINANCE_TOL = 1e-6
#: Strict floor of the return-map gate.  An attracting cycle is approached
#: like 1/t (the dynamics itself slows as 1/t), so the default gate used by
#: :func:`detect_cycle` scales as ``CYCLE_TOL_SCALE / t_now`` with this floor.
CYCLE_TOL = 1e-8
CYCLE_TOL_SCALE = 50.0
MAX_PERIOD = 64
#: Cone construction keeps the full cone at least this far (radians) inside
#: an open halfplane and its extreme rays this far from indifference rays.
_CONE_WIDTH_MARGIN = 0.05
_CONE_RAY_EPS = 1e-7

FP_ALL_TIMES = "fp-dominates-at-all-times"
FP_ON_AVERAGE = "fp-dominates-on-average"
NASH_ALL_TIMES = "nash-dominates-at-all-times"
NASH_ON_AVERAGE = "nash-dominates-on-average"
MIXED = "mixed"
EQUAL = "equal"


@dataclass(frozen=True)
class Itinerary:
    """Region-pair sequence with entry times; one period when periodic.

    Pairs are 0-based (row player's play, column player's play).  For
    non-periodic trajectories only the scanned tail is carried and
    ``diagnostic`` explains why no cycle was declared.
    """

    pairs: tuple[tuple[int, int], ...]
    entry_times: tuple[float, ...]
    periodic: bool
    period_length: int | None
    return_map_error: float
    diagnostic: str | None = None

    def to_dict(self) -> dict:
        return {"pairs": [list(p) for p in self.pairs],
                "entry_times": list(self.entry_times),
                "periodic": self.periodic,
                "period_length": self.period_length,
                "return_map_error": self.return_map_error,
                "diagnostic": self.diagnostic}


@dataclass(frozen=True)
class DominanceReport:
    """How running-average play payoffs compare to equilibrium payoffs."""

    classification: str
    avg_payoffs: tuple[float, float]
    nash_payoffs: tuple[float, float]
    min_avg_payoffs: tuple[float, float]
    max_avg_payoffs: tuple[float, float]
    window: tuple[float, float]

    def to_dict(self) -> dict:
        return {"classification": self.classification,
                "avg_payoffs": list(self.avg_payoffs),
                "nash_payoffs": list(self.nash_payoffs),
                "min_avg_payoffs": list(self.min_avg_payoffs),
                "max_avg_payoffs": list(self.max_avg_payoffs),
                "window": list(self.window)}


def cyclically_equal(seq_a, seq_b) -> bool:
    """Are two sequences equal up to rotation?"""
    a, b = list(seq_a), list(seq_b)
    if len(a) != len(b):
        return False
    return any(a[k:] + a[:k] == b for k in range(len(a)))


def _non_periodic(traj: Trajectory, diagnostic: str, tail: int = 32) -> Itinerary:
    if traj.stationary:
        return Itinerary((), (), False, None, math.inf, diagnostic)
    k = max(0, traj.n_segments - tail)
    pairs = tuple(zip(traj.seg_rows[k:].tolist(), traj.seg_cols[k:].tolist()))
    times = tuple(traj.seg_times[k:].tolist())
    return Itinerary(pairs, times, False, None, math.inf, diagnostic)


def detect_cycle(traj: Trajectory, tol: float | None = None,
                 max_period: int = MAX_PERIOD) -> Itinerary:
    """Scan a trajectory's tail for a periodic itinerary.

    Requires the region-pair sequence to repeat with some block length L and
    the crossing states at the section (the block's first crossing) to agree
    within ``tol`` across three consecutive returns.  The reported itinerary
    is the final block in time order.

    With ``tol=None`` each return is gated by
    ``max(CYCLE_TOL, CYCLE_TOL_SCALE / t_section)`` at its own section time:
    cycles are approached like 1/t (a fixed gate would need horizons beyond
    1e9 to fire), and one period can span a decade of t, so earlier returns
    are naturally further from the limit.  An explicit ``tol`` is applied
    as-is to all three returns.  ``return_map_error`` reports the latest
    (most converged) return distance.
    """
    if traj.stationary:
        return _non_periodic(traj, "stationary trajectory")
    if traj.truncated:
        return _non_periodic(traj, "trajectory truncated at the event cap")
    N = traj.n_segments
    if N < 8:
        return _non_periodic(traj, "too few segments for three returns")
    rows = traj.seg_rows.tolist()
    cols = traj.seg_cols.tolist()
    for L in range(2, min(max_period, N // 4) + 1):
        if any(rows[N - 1 - k] != rows[N - 1 - k - L]
               or cols[N - 1 - k] != cols[N - 1 - k - L]
               for k in range(3 * L)):
            continue
        sect = [N - 1 - m * L for m in range(4)]
        ok = True
        errs = []
        for a, b in zip(sect[:-1], sect[1:]):
            dp = np.max(np.abs(traj.seg_p[a] - traj.seg_p[b]))
            dq = np.max(np.abs(traj.seg_q[a] - traj.seg_q[b]))
            err = max(dp, dq)
            errs.append(err)
            gate = tol if tol is not None else max(
                CYCLE_TOL, CYCLE_TOL_SCALE / traj.seg_times[b])
            ok = ok and err < gate
        if ok:
            k0 = N - L
            pairs = tuple(zip(rows[k0:], cols[k0:]))
            times = tuple(traj.seg_times[k0:].tolist())
            return Itinerary(pairs, times, True, L, float(errs[0]))
    return _non_periodic(traj, "no block-periodic tail within the scanned period range")


def compare_to_nash(game: BimatrixGame, traj: Trajectory, nash: NashPoint,
                    window: tuple[float, float],
                    tol: float = DOMINANCE_TOL) -> DominanceReport:
    """Classify running-average payoffs against equilibrium payoffs.

    Checkpoints are the segment boundaries inside the window plus both ends;
    running averages are monotone between boundaries, so the window extrema
    are attained there.  "At all times" requires a strict margin at every
    checkpoint for both players, "on average" only at the window end,
    "equal" means both end differences sit within ``tol``.
    """
    t0, t1 = float(window[0]), float(window[1])
    if not (1.0 <= t0 < t1 <= traj.t_now * (1 + 1e-12)):
        raise ValueError(f"window {window!r} outside [1, {traj.t_now}]")
    inner = traj.boundary_times()
    inner = inner[(inner > t0) & (inner < t1)]
    ts = np.concatenate([[t0], inner, [t1]])
    avg_a, avg_b = traj.averages_at_many(ts)
    diff_a = avg_a - nash.payoff_a
    diff_b = avg_b - nash.payoff_b
    end_a, end_b = diff_a[-1], diff_b[-1]

    if diff_a.min() > tol and diff_b.min() > tol:
        label = FP_ALL_TIMES
    elif diff_a.max() < -tol and diff_b.max() < -tol:
        label = NASH_ALL_TIMES
    elif abs(end_a) <= tol and abs(end_b) <= tol:
        label = EQUAL
    elif end_a > tol and end_b > tol:
        label = FP_ON_AVERAGE
    elif end_a < -tol and end_b < -tol:
        label = NASH_ON_AVERAGE
    else:
        label = MIXED
    return DominanceReport(
        classification=label,
        avg_payoffs=(float(avg_a[-1]), float(avg_b[-1])),
        nash_payoffs=(nash.payoff_a, nash.payoff_b),
        min_avg_payoffs=(float(avg_a.min()), float(avg_b.min())),
        max_avg_payoffs=(float(avg_a.max()), float(avg_b.max())),
        window=(t0, t1))


def halfspace_containment(points, apex) -> bool:
    """Does some hyperplane through the apex leave all points strictly on one side?"""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if pts.shape[0] == 0:
        raise ValueError("need at least one point")
    return separation_margin(pts, apex) > SEPARATION_MARGIN


# ---------------------------------------------------------------------------
# Cone construction from a detected cycle (three-strategy games)


def _angles(points: np.ndarray, apex: np.ndarray, basis: np.ndarray) -> np.ndarray:
    D = (points - apex[None, :]) @ basis
    return np.arctan2(D[:, 1], D[:, 0])


def _angular_hull(angles: np.ndarray) -> tuple[float, float] | None:
    """Smallest arc [lo, hi] (hi may exceed pi) containing all angles; None
    if the directions do not fit in an open halfplane."""
    a = np.sort(angles)
    gaps = np.diff(a, append=a[0] + 2 * math.pi)
    k = int(np.argmax(gaps))
    if gaps[k] <= math.pi:
        return None
    lo = a[(k + 1) % len(a)]
    hi = a[k]
    if hi < lo:
        hi += 2 * math.pi
    return float(lo), float(hi)


def _interior_point_at(angle: float, apex: np.ndarray, basis: np.ndarray) -> np.ndarray:
    v = basis @ np.array([math.cos(angle), math.sin(angle)])
    neg = v < 0
    s = 0.5 * np.min(apex[neg] / -v[neg])
    return apex + s * v


def cone_around_cycle(points: np.ndarray, apex: np.ndarray,
                      ray_directions: np.ndarray) -> ConeSpec | None:
    """Build a valid cone specification containing the given cycle projection.

    Three-strategy games only.  The cone's extreme rays are pushed slightly
    outside the cycle's angular hull so they sit strictly inside preference
    regions (never on a tie-ray), while the whole cone stays strictly inside
    an open halfplane.  Returns ``None`` when no such cone exists.
    """
    if apex.size != 3:
        raise ValueError("cone construction is implemented for 3-strategy simplices")
    basis = _sum_zero_basis(3)
    hull = _angular_hull(_angles(points, apex, basis))
    if hull is None:
        return None
    lo, hi = hull
    if hi - lo >= math.pi - _CONE_WIDTH_MARGIN:
        return None
    ray_ang = np.sort(_angles(apex[None, :] + ray_directions, apex, basis))

    def rays_in(a, b):
        shifted = np.concatenate([ray_ang, ray_ang + 2 * math.pi, ray_ang - 2 * math.pi])
        return shifted[(shifted > a) & (shifted < b)]

    def nearest_below(a):
        shifted = np.concatenate([ray_ang, ray_ang - 2 * math.pi])
        below = shifted[shifted <= a + 1e-15]
        return float(below.max())

    def nearest_above(a):
        shifted = np.concatenate([ray_ang, ray_ang + 2 * math.pi])
        above = shifted[shifted >= a - 1e-15]
        return float(above.min())

    slack = (math.pi - _CONE_WIDTH_MARGIN - (hi - lo)) / 2.0
    # Push each endpoint a small step outward so the cone's extreme rays sit
    # strictly inside preference regions; a hull endpoint on a tie-ray (a
    # crossing state at the angular extreme) is stepped past that ray.
    step = min(slack, 0.05)
    phi_lo = nearest_below(lo)
    if lo - phi_lo < _CONE_RAY_EPS:  # hull starts on a tie-ray: include it strictly
        gap = phi_lo - nearest_below(phi_lo - _CONE_RAY_EPS)
        new_lo = phi_lo - min(gap / 2.0, step)
    else:
        new_lo = lo - min((lo - phi_lo) / 2.0, step)
    phi_hi = nearest_above(hi)
    if phi_hi - hi < _CONE_RAY_EPS:
        gap = nearest_above(phi_hi + _CONE_RAY_EPS) - phi_hi
        new_hi = phi_hi + min(gap / 2.0, step)
    else:
        new_hi = hi + min((phi_hi - hi) / 2.0, step)

    if new_hi - new_lo >= math.pi - _CONE_WIDTH_MARGIN:
        return None
    inside = rays_in(new_lo + _CONE_RAY_EPS, new_hi - _CONE_RAY_EPS)
    if inside.size == 0:
        return None
    contained_dir = basis @ np.array([math.cos(inside[0]), math.sin(inside[0])])
    scores = ray_directions @ contained_dir
    norm = (np.linalg.norm(ray_directions, axis=1)
            * np.linalg.norm(contained_dir))
    ray_index = int(np.argmax(scores / norm))
    extreme = np.vstack([_interior_point_at(new_lo, apex, basis),
                         _interior_point_at(new_hi, apex, basis)])
    return ConeSpec(apex=apex, extreme_points=extreme, contains_ray_index=ray_index)


# ---------------------------------------------------------------------------
# Random search


@dataclass(frozen=True)
class SearchConfig:
    """Parameters of the random search; results replay exactly for a seed."""

    count: int
    dimension: int = 3
    seed: int = 0
    horizon: float = 1e5
    distribution: str = "uniform"
    workers: int = 1
    cycle_tol: float | None = None
    max_period: int = MAX_PERIOD
    inject: tuple[BimatrixGame, ...] = ()
    out_dir: str | None = None
    max_game_attempts: int = 1000


@dataclass(frozen=True)
class Finding:
    """One verified game whose play cycle is beaten by equilibrium payoffs."""

    trial: int
    game: BimatrixGame
    transform: LinearTransform
    transformed_game: BimatrixGame
    nash: NashPoint
    itinerary: Itinerary
    dominance: DominanceReport
    cone_a: ConeSpec
    cone_b: ConeSpec
    cycle_states_csv_path: str | None = None

    def to_dict(self) -> dict:
        return {"trial": self.trial,
                "game": self.game.to_dict(),
                "transform": self.transform.to_dict(),
                "transformed_game": self.transformed_game.to_dict(),
                "nash": {"p": self.nash.profile.p.tolist(),
                         "q": self.nash.profile.q.tolist(),
                         "payoff_a": self.nash.payoff_a,
                         "payoff_b": self.nash.payoff_b},
                "itinerary": self.itinerary.to_dict(),
                "dominance_report": self.dominance.to_dict(),
                "cone_a": self.cone_a.to_dict(),
                "cone_b": self.cone_b.to_dict(),
                "cycle_states_csv_path": self.cycle_states_csv_path}


def _sample_game(rng: np.random.Generator, dim: int, distribution: str,
                 attempts: int) -> BimatrixGame | None:
    for _ in range(attempts):
        if distribution == "uniform":
            A = rng.uniform(-1.0, 1.0, size=(dim, dim))
            B = rng.uniform(-1.0, 1.0, size=(dim, dim))
        elif distribution == "normal":
            A = rng.standard_normal((dim, dim))
            B = rng.standard_normal((dim, dim))
        else:
            raise ValueError(f"unknown entry distribution {distribution!r}")
        game = BimatrixGame(A, B)
        if game.is_degenerate:
            continue
        if interior_nash(game) is None:
            continue
        return game
    return None


def _cycle_sample_times(traj: Trajectory, itin: Itinerary, per_period: int = 1000,
                        periods: int = 1) -> np.ndarray:
    L = itin.period_length
    k0 = traj.n_segments - periods * L
    t_lo = traj.seg_times[k0]
    return np.geomspace(t_lo, traj.t_now, per_period * periods)


def _run_trial(trial: int, config: SearchConfig):
    """One search trial; returns (trial, Finding | None, rejection reason)."""
    rng = np.random.default_rng(np.random.SeedSequence(config.seed, spawn_key=(trial,)))
    if trial < len(config.inject):
        game = config.inject[trial]
        if game.is_degenerate or interior_nash(game) is None:
            return trial, None, "injected game rejected (degenerate or no interior equilibrium)"
    else:
        game = _sample_game(rng, config.dimension, config.distribution,
                            config.max_game_attempts)
        if game is None:
            return trial, None, "no valid game found within the attempt budget"
    start = MixedProfile(rng.dirichlet(np.ones(game.m)), rng.dirichlet(np.ones(game.n)))
    traj = simulate(game, start, config.horizon)
    itin = detect_cycle(traj, tol=config.cycle_tol, max_period=config.max_period)
    if not itin.periodic:
        return trial, None, f"no cycle: {itin.diagnostic}"

    nash = interior_nash(game)
    ts = _cycle_sample_times(traj, itin, per_period=200)
    P, Q = traj.states_at(ts)
    if not (halfspace_containment(P, nash.profile.p)
            and halfspace_containment(Q, nash.profile.q)):
        return trial, None, "cycle projections not contained in halfspaces"
    if game.m != 3:
        return trial, None, "cone construction supports only 3x3 games"

    rays = compute_rays(game)
    cone_b = cone_around_cycle(Q, nash.profile.q, rays.directions_a)
    cone_a = cone_around_cycle(P, nash.profile.p, rays.directions_b)
    if cone_a is None or cone_b is None:
        return trial, None, "no valid cone around the cycle projections"
    try:
        rewritten = cone_targeted_equivalent(game, cone_a, cone_b)
    except (ValueError, RuntimeError) as exc:
        return trial, None, f"cone rewrite failed: {exc}"

    # Re-verify on the rewritten game: same orbit, payoffs now sub-equilibrium.
    traj2 = simulate(rewritten, start, config.horizon)
    itin2 = detect_cycle(traj2, tol=config.cycle_tol, max_period=config.max_period)
    if not itin2.periodic:
        return trial, None, "cycle lost after rewrite (should not happen)"
    nash2 = interior_nash(rewritten)
    L = itin2.period_length
    periods = min(10, (traj2.n_segments - 1) // L - 1)
    if periods < 1:
        return trial, None, "not enough periods for a dominance window"
    window = (float(traj2.seg_times[traj2.n_segments - periods * L]), traj2.t_now)
    dom = compare_to_nash(rewritten, traj2, nash2, window)
    if dom.classification != NASH_ALL_TIMES:
        return trial, None, f"dominance not confirmed: {dom.classification}"
    ts2 = _cycle_sample_times(traj2, itin2, per_period=1000)
    P2, Q2 = traj2.states_at(ts2)
    for pp, qq in zip(P2, Q2):
        in_b, in_a = sub_nash_membership(rewritten, nash2, MixedProfile(pp, qq))
        if not (in_b and in_a):
            return trial, None, "cycle state escaped the sub-equilibrium cones"

    csv_path = None
    if config.out_dir:
        os.makedirs(config.out_dir, exist_ok=True)
        csv_path = os.path.join(config.out_dir, f"trial_{trial:04d}_cycle_states.csv")
        m, n = rewritten.shape
        with open(csv_path, "w", encoding="utf-8") as fh:
            cols = ["t"] + [f"p_{k+1}" for k in range(m)] + [f"q_{k+1}" for k in range(n)]
            fh.write(",".join(cols) + "\n")
            for t, pp, qq in zip(ts2, P2, Q2):
                fh.write(",".join([repr(float(t))] + [repr(float(x)) for x in pp]
                                  + [repr(float(x)) for x in qq]) + "\n")

    finding = Finding(trial=trial, game=game,
                      transform=LinearTransform(1.0, rewritten.A[0] - game.A[0],
                                                1.0, rewritten.B[:, 0] - game.B[:, 0]),
                      transformed_game=rewritten, nash=nash2, itinerary=itin2,
                      dominance=dom, cone_a=cone_a, cone_b=cone_b,
                      cycle_states_csv_path=csv_path)
    return trial, finding, None


def search_sub_nash(config: SearchConfig) -> list[Finding]:
    """Run the randomized search; every reported candidate is re-verified.

    Trials are independent and seeded individually from the root seed, so
    results are identical for any worker count; findings come back sorted by
    trial index.
    """
    if config.count < 0:
        raise ValueError("count must be >= 0")
    trials = range(config.count)
    results = []
    if config.workers > 1 and config.count > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=config.workers) as pool:
            futures = [pool.submit(_run_trial, t, config) for t in trials]
            results = [f.result() for f in futures]
    else:
        results = [_run_trial(t, config) for t in trials]
    results.sort(key=lambda r: r[0])
    findings = []
    rejections: dict[str, int] = {}
    for trial, finding, reason in results:
        if finding is not None:
            findings.append(finding)
            logger.info("trial %d: candidate confirmed", trial)
        else:
            key = (reason or "unknown").split(":")[0]
            rejections[key] = rejections.get(key, 0) + 1
            logger.debug("trial %d rejected: %s", trial, reason)
    logger.info("search finished: %d trials, %d findings, rejections: %s",
                config.count, len(findings), rejections or "none")
    return findings
