"""Exact event-driven integration of continuous-time fictitious play.

Play starts at t = 1 from a given pair of average strategies.  While the
best replies (i, j) stay fixed, the averages follow

    p'(t) = (e_i - p(t)) / t,      q'(t) = (e_j - q(t)) / t,

whose solution is affine in u = t_start / t:

    p(t) = e_i + u (p(t_start) - e_i),   and likewise for q.

Payoff coordinates (A q(t))_k and (p(t) B)_l are therefore affine in u as
well, so the next change of best reply is the largest root u < 1 of a small
family of linear equations: integration is exact, no step size exists.
The warm-up window [0, 1) plays the constant pure best-reply pair to the
initial averages; it seeds the payoff and occupancy accumulators (the
averages at t = 1 are the caller-supplied initial condition).
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass

import numpy as np

from .core import (BimatrixGame, DegenerateGameError, MixedProfile,
                   RegionIndex, max_payoff)
from .equilibrium import JointDistribution, interior_nash

logger = logging.getLogger(__name__)

#: Roots closer than this to the segment start are the event just handled.
EVENT_WINDOW_EDGE = 1e-13
#: Ties whose payoff gap changes slower than this (per unit u) are grazing
#: contacts and are skipped.
GRAZING_SLOPE_TOL = 1e-12
#: Two candidate roots within this relative distance in u count as one
#: non-generic simultaneous event.
SIMULTANEOUS_REL_TOL = 1e-9
DEFAULT_MAX_EVENTS = 10_000_000
#: Initial averages this close to the interior equilibrium yield the
#: stationary trajectory.
NASH_START_ATOL = 1e-12
_MAX_NOTES = 200


@dataclass(frozen=True)
class Segment:
    """One maximal interval of constant pure play (e_row, e_col)."""

    t_start: float
    t_end: float  # may be math.inf for a segment still in progress
    row: int
    col: int
    p_start: np.ndarray
    q_start: np.ndarray

    @property
    def region(self) -> RegionIndex:
        return RegionIndex((self.row,), (self.col,))

    @property
    def state_start(self) -> MixedProfile:
        return MixedProfile(self.p_start, self.q_start)


def segment_state(segment: Segment, t: float) -> MixedProfile:
    """Closed-form averages inside a segment (affine pull toward the played vertex)."""
    if not (segment.t_start <= t <= segment.t_end):
        raise ValueError(f"t={t!r} outside segment [{segment.t_start}, {segment.t_end}]")
    u = segment.t_start / t
    p = u * np.asarray(segment.p_start, dtype=float)
    p[segment.row] += 1.0 - u
    q = u * np.asarray(segment.q_start, dtype=float)
    q[segment.col] += 1.0 - u
    return MixedProfile(p, q)


def _forward_argmax(vals, bases, tol) -> int:
    """Argmax index that stays maximal just after the segment start.

    Within a segment every payoff coordinate moves linearly from ``vals``
    (at u = 1) toward ``bases`` (the value at the played vertex, u = 0), so
    among indices tied at the top the one with the largest base keeps the
    lead going forward.  Ties beyond that break to the smallest index.
    """
    top = max(vals)
    best = -1
    best_base = -math.inf
    for k, v in enumerate(vals):
        if v >= top - tol and bases[k] > best_base + 1e-15:
            best = k
            best_base = bases[k]
    return best


def _candidate_roots(rowv, colv, col_a, row_b, i, j, u_min, u_max):
    """All genuine region-exit roots in [u_min, u_max] for the current segment.

    ``rowv``/``colv`` are the payoff coordinates at the segment start (u = 1),
    ``col_a``/``row_b`` their limits at u = 0 (the played vertex pair).
    Returns tuples (u, side, k) with side 0 for the row player, 1 for the
    column player, and k the strategy that ties.
    """
    out = []
    base_i = col_a[i]
    slope_i = rowv[i] - base_i
    for k in range(len(rowv)):
        if k == i:
            continue
        slope_gap = slope_i - (rowv[k] - col_a[k])
        if slope_gap <= GRAZING_SLOPE_TOL:
            continue
        u = (col_a[k] - base_i) / slope_gap
        if u_min <= u <= u_max:
            out.append((u, 0, k))
    base_j = row_b[j]
    slope_j = colv[j] - base_j
    for k in range(len(colv)):
        if k == j:
            continue
        slope_gap = slope_j - (colv[k] - row_b[k])
        if slope_gap <= GRAZING_SLOPE_TOL:
            continue
        u = (row_b[k] - base_j) / slope_gap
        if u_min <= u <= u_max:
            out.append((u, 1, k))
    return out


def _resolve_candidates(cands):
    """Pick the earliest crossing (largest u); row player first, then lowest
    incoming index, when several roots coincide within ``SIMULTANEOUS_REL_TOL``."""
    best_u = max(c[0] for c in cands)
    group = [c for c in cands if best_u - c[0] <= SIMULTANEOUS_REL_TOL * best_u]
    group.sort(key=lambda c: (c[1], c[2]))
    u, side, k = group[0]
    return u, side, k, len(group) > 1


def next_crossing(game: BimatrixGame, segment: Segment,
                  horizon: float = math.inf) -> tuple[float | None, RegionIndex | None]:
    """Earliest region exit after ``segment.t_start``, or (None, None).

    The tying strategy must genuinely overtake (grazing contacts are
    skipped).  Simultaneous ties are resolved deterministically (row player
    first, then smallest incoming index) and logged as non-generic.
    """
    i, j = segment.row, segment.col
    q0 = np.asarray(segment.q_start, dtype=float)
    p0 = np.asarray(segment.p_start, dtype=float)
    rowv = (game.A @ q0).tolist()
    colv = (p0 @ game.B).tolist()
    col_a = game.A[:, j].tolist()
    row_b = game.B[i, :].tolist()
    u_min = segment.t_start / min(horizon, segment.t_end)
    cands = _candidate_roots(rowv, colv, col_a, row_b, i, j, u_min, 1.0 - EVENT_WINDOW_EDGE)
    if not cands:
        return None, None
    u, side, k, non_generic = _resolve_candidates(cands)
    if non_generic:
        logger.warning("non-generic simultaneous crossing at t=%g; row player processed first",
                       segment.t_start / u)
    if side == 0:
        region = RegionIndex((k,), (j,))
    else:
        region = RegionIndex((i,), (k,))
    return segment.t_start / u, region


class Trajectory:
    """A complete fictitious-play run: exact segments plus accumulators.

    Mutable only while :func:`simulate` builds it; afterwards treat as
    immutable (all arrays are read-only views).  Attributes:

    ``seg_times, seg_rows, seg_cols``
        Segment start times and the pure plays on each segment.
    ``seg_p, seg_q``
        Averages at each segment start.
    ``seg_cum_a, seg_cum_b``
        Running payoff integrals over [0, t_start] per segment, warm-up
        window included.
    ``occupancy``
        m x n matrix of accumulated play durations (sums to t_now).
    """

    def __init__(self, game: BimatrixGame, initial: MixedProfile, *,
                 warmup_pair: tuple[int, int] | None, stationary: bool,
                 seg_times: np.ndarray, seg_rows: np.ndarray, seg_cols: np.ndarray,
                 seg_p: np.ndarray, seg_q: np.ndarray,
                 seg_cum_a: np.ndarray, seg_cum_b: np.ndarray,
                 occupancy: np.ndarray, t_now: float,
                 payoff_integral_a: float, payoff_integral_b: float,
                 truncated: bool, notes: list[str]):
        self.game = game
        self.initial = initial
        self.warmup_pair = warmup_pair
        self.stationary = stationary
        self.seg_times = seg_times
        self.seg_rows = seg_rows
        self.seg_cols = seg_cols
        self.seg_p = seg_p
        self.seg_q = seg_q
        self.seg_cum_a = seg_cum_a
        self.seg_cum_b = seg_cum_b
        self.occupancy = occupancy
        self.t_now = float(t_now)
        self.payoff_integral_a = float(payoff_integral_a)
        self.payoff_integral_b = float(payoff_integral_b)
        self.truncated = truncated
        self.notes = notes
        for arr in (seg_times, seg_rows, seg_cols, seg_p, seg_q,
                    seg_cum_a, seg_cum_b, occupancy):
            arr.flags.writeable = False

    # -- queries ---------------------------------------------------------

    @property
    def n_segments(self) -> int:
        return len(self.seg_times)

    def _locate(self, t) -> np.ndarray:
        idx = np.searchsorted(self.seg_times, t, side="right") - 1
        return np.clip(idx, 0, self.n_segments - 1)

    def states_at(self, times) -> tuple[np.ndarray, np.ndarray]:
        """Vectorized exact averages at times in [1, t_now]."""
        ts = np.asarray(times, dtype=float)
        if ts.size and (ts.min() < 1.0 or ts.max() > self.t_now * (1 + 1e-12)):
            raise ValueError("times must lie within [1, t_now]")
        if self.stationary:
            P = np.tile(self.initial.p, (ts.size, 1))
            Q = np.tile(self.initial.q, (ts.size, 1))
            return P, Q
        idx = self._locate(ts)
        u = (self.seg_times[idx] / ts)[:, None]
        P = u * self.seg_p[idx]
        Q = u * self.seg_q[idx]
        rows = np.arange(ts.size)
        P[rows, self.seg_rows[idx]] += 1.0 - u[:, 0]
        Q[rows, self.seg_cols[idx]] += 1.0 - u[:, 0]
        return P, Q

    def state_at(self, t: float) -> MixedProfile:
        P, Q = self.states_at([float(t)])
        return MixedProfile(P[0], Q[0])

    def region_at(self, t: float) -> tuple[int, int]:
        if self.stationary:
            raise ValueError("stationary trajectory has no single-region play")
        k = int(self._locate(float(t)))
        return int(self.seg_rows[k]), int(self.seg_cols[k])

    def payoff_integrals_at(self, t: float) -> tuple[float, float]:
        """Exact (integral of x A y, integral of x B y) over [0, t]."""
        t = float(t)
        if not 1.0 <= t <= self.t_now * (1 + 1e-12):
            raise ValueError(f"t={t!r} outside [1, {self.t_now}]")
        if self.stationary:
            pay_a = float(self.initial.p @ self.game.A @ self.initial.q)
            pay_b = float(self.initial.p @ self.game.B @ self.initial.q)
            return pay_a * t, pay_b * t
        k = int(self._locate(t))
        dt = t - self.seg_times[k]
        i, j = int(self.seg_rows[k]), int(self.seg_cols[k])
        return (float(self.seg_cum_a[k] + self.game.A[i, j] * dt),
                float(self.seg_cum_b[k] + self.game.B[i, j] * dt))

    def averages_at(self, t: float) -> tuple[float, float]:
        ia, ib = self.payoff_integrals_at(t)
        return ia / t, ib / t

    def averages_at_many(self, times) -> tuple[np.ndarray, np.ndarray]:
        """Vectorized running average payoffs at times in [1, t_now]."""
        ts = np.asarray(times, dtype=float)
        if ts.size and (ts.min() < 1.0 or ts.max() > self.t_now * (1 + 1e-12)):
            raise ValueError("times must lie within [1, t_now]")
        if self.stationary:
            pay_a = float(self.initial.p @ self.game.A @ self.initial.q)
            pay_b = float(self.initial.p @ self.game.B @ self.initial.q)
            return np.full(ts.shape, pay_a), np.full(ts.shape, pay_b)
        idx = self._locate(ts)
        dt = ts - self.seg_times[idx]
        i, j = self.seg_rows[idx], self.seg_cols[idx]
        avg_a = (self.seg_cum_a[idx] + self.game.A[i, j] * dt) / ts
        avg_b = (self.seg_cum_b[idx] + self.game.B[i, j] * dt) / ts
        return avg_a, avg_b

    def joint_distribution(self) -> JointDistribution:
        return JointDistribution(self.occupancy / self.t_now)

    def boundary_times(self) -> np.ndarray:
        """Segment start times plus the final time."""
        if self.stationary:
            return np.array([1.0, self.t_now])
        return np.append(self.seg_times, self.t_now)

    def epoch_checkpoints(self) -> np.ndarray:
        """Multiplicative reporting checkpoints 1, 10, 100, ... up to t_now."""
        top = int(math.floor(math.log10(self.t_now) + 1e-12))
        ts = [10.0 ** k for k in range(top + 1)]
        if ts[-1] < self.t_now:
            ts.append(self.t_now)
        return np.array(ts)

    def segments(self) -> list[Segment]:
        if self.stationary:
            return []
        ends = np.append(self.seg_times[1:], self.t_now)
        return [Segment(float(self.seg_times[k]), float(ends[k]),
                        int(self.seg_rows[k]), int(self.seg_cols[k]),
                        self.seg_p[k], self.seg_q[k])
                for k in range(self.n_segments)]

    # -- exports ---------------------------------------------------------

    def to_dict(self) -> dict:
        d = {
            "game": self.game.to_dict(),
            "initial": {"p": self.initial.p.tolist(), "q": self.initial.q.tolist()},
            "warmup_pair": list(self.warmup_pair) if self.warmup_pair else None,
            "stationary": self.stationary,
            "t_now": self.t_now,
            "truncated": self.truncated,
            "payoff_integral_a": self.payoff_integral_a,
            "payoff_integral_b": self.payoff_integral_b,
            "occupancy": self.occupancy.tolist(),
            "notes": list(self.notes),
            "segments": [
                {"t_start": float(s.t_start), "t_end": float(s.t_end),
                 "row": s.row, "col": s.col,
                 "p_start": s.p_start.tolist(), "q_start": s.q_start.tolist()}
                for s in self.segments()
            ],
        }
        return d

    def to_json(self, path=None) -> str:
        text = json.dumps(self.to_dict())
        if path is not None:
            with open(path, "w", encoding="utf-8") as fh:
                fh.write(text + "\n")
        return text

    def write_csv(self, stream) -> None:
        """Rows at segment boundaries and epoch checkpoints.

        Columns: t, p_1..p_m, q_1..q_n, region_i, region_j (1-based strategy
        labels), avg_payoff_A, avg_payoff_B, gap_A, gap_B.  Floats use
        shortest round-trip decimals.
        """
        m, n = self.game.shape
        header = (["t"] + [f"p_{k+1}" for k in range(m)] + [f"q_{k+1}" for k in range(n)]
                  + ["region_i", "region_j", "avg_payoff_A", "avg_payoff_B", "gap_A", "gap_B"])
        stream.write(",".join(header) + "\n")
        ts = np.unique(np.concatenate([self.boundary_times(), self.epoch_checkpoints(),
                                       [self.t_now]]))
        P, Q = self.states_at(ts)
        for k, t in enumerate(ts):
            avg_a, avg_b = self.averages_at(t)
            gap_a, gap_b = belief_gap(self, t)
            if self.stationary:
                reg = ["", ""]
            else:
                i, j = self.region_at(t)
                reg = [str(i + 1), str(j + 1)]
            row = ([repr(float(t))] + [repr(float(x)) for x in P[k]]
                   + [repr(float(x)) for x in Q[k]] + reg
                   + [repr(avg_a), repr(avg_b), repr(gap_a), repr(gap_b)])
            stream.write(",".join(row) + "\n")


def belief_gap(traj: Trajectory, T: float) -> tuple[float, float]:
    """Realized average payoff minus the current best-reply payoff, per player.

    Along fictitious play, T * gap is constant in T (it equals the warm-up
    payoff integral minus the best-reply payoff at t = 1), so both gaps decay
    like 1/T.
    """
    T = float(T)
    if not 1.0 <= T <= traj.t_now * (1 + 1e-12):
        raise ValueError(f"T={T!r} outside [1, {traj.t_now}]")
    avg_a, avg_b = traj.averages_at(T)
    prof = traj.state_at(T)
    return (avg_a - max_payoff(traj.game, "A", prof.q),
            avg_b - max_payoff(traj.game, "B", prof.p))


class _SegmentStore:
    """Growable column storage for segment records."""

    def __init__(self, m: int, n: int):
        cap = 1024
        self.size = 0
        self.t = np.empty(cap)
        self.row = np.empty(cap, dtype=np.int16)
        self.col = np.empty(cap, dtype=np.int16)
        self.p = np.empty((cap, m))
        self.q = np.empty((cap, n))
        self.cum_a = np.empty(cap)
        self.cum_b = np.empty(cap)

    def _grow(self):
        cap = len(self.t) * 2
        self.t = np.resize(self.t, cap)
        self.row = np.resize(self.row, cap)
        self.col = np.resize(self.col, cap)
        self.p = np.resize(self.p, (cap, self.p.shape[1]))
        self.q = np.resize(self.q, (cap, self.q.shape[1]))
        self.cum_a = np.resize(self.cum_a, cap)
        self.cum_b = np.resize(self.cum_b, cap)

    def append(self, t, i, j, p, q, cum_a, cum_b):
        k = self.size
        if k == len(self.t):
            self._grow()
        self.t[k] = t
        self.row[k] = i
        self.col[k] = j
        self.p[k, :] = p
        self.q[k, :] = q
        self.cum_a[k] = cum_a
        self.cum_b[k] = cum_b
        self.size = k + 1

    def trimmed(self):
        k = self.size
        return (self.t[:k].copy(), self.row[:k].copy(), self.col[:k].copy(),
                self.p[:k].copy(), self.q[:k].copy(),
                self.cum_a[:k].copy(), self.cum_b[:k].copy())


def _stationary_trajectory(game: BimatrixGame, profile: MixedProfile,
                           horizon: float) -> Trajectory:
    pay_a = float(profile.p @ game.A @ profile.q)
    pay_b = float(profile.p @ game.B @ profile.q)
    occupancy = np.outer(profile.p, profile.q) * horizon
    empty_f = np.empty(0)
    return Trajectory(
        game, profile, warmup_pair=None, stationary=True,
        seg_times=empty_f, seg_rows=np.empty(0, np.int16), seg_cols=np.empty(0, np.int16),
        seg_p=np.empty((0, game.m)), seg_q=np.empty((0, game.n)),
        seg_cum_a=empty_f.copy(), seg_cum_b=empty_f.copy(),
        occupancy=occupancy, t_now=horizon,
        payoff_integral_a=pay_a * horizon, payoff_integral_b=pay_b * horizon,
        truncated=False, notes=[])


def simulate(game: BimatrixGame, initial, horizon: float, *,
             max_events: int = DEFAULT_MAX_EVENTS) -> Trajectory:
    """Integrate fictitious play exactly from t = 1 to ``horizon``.

    ``initial`` (a :class:`MixedProfile` or a (p, q) pair) is the pair of
    averages at t = 1.  The warm-up window [0, 1) plays the constant pure
    best-reply pair to it.  An initial condition within ``NASH_START_ATOL``
    of the interior equilibrium yields the stationary trajectory.

    Degenerate games are refused.  If ``max_events`` crossings are exceeded
    the partial trajectory is returned with ``truncated=True``.
    """
    horizon = float(horizon)
    if not horizon > 1.0:
        raise ValueError("horizon must exceed the start time t = 1")
    if game.is_degenerate:
        raise DegenerateGameError(
            f"{game!r} has best-response ties on a positive fraction of states")
    profile = initial if isinstance(initial, MixedProfile) else MixedProfile(*initial)
    if profile.p.size != game.m or profile.q.size != game.n:
        raise ValueError("initial profile does not fit the game dimensions")

    if game.m == game.n:
        nash = interior_nash(game)
        if nash is not None and (
                np.max(np.abs(profile.p - nash.profile.p)) <= NASH_START_ATOL
                and np.max(np.abs(profile.q - nash.profile.q)) <= NASH_START_ATOL):
            return _stationary_trajectory(game, nash.profile, horizon)

    m, n = game.m, game.n
    a_rows = tuple(tuple(float(x) for x in r) for r in game.A)
    a_cols = tuple(tuple(float(game.A[i, j]) for i in range(m)) for j in range(n))
    b_rows = tuple(tuple(float(x) for x in r) for r in game.B)
    tie_a = 1e-12 * (1.0 + float(np.abs(game.A).max()))
    tie_b = 1e-12 * (1.0 + float(np.abs(game.B).max()))

    p = [float(x) for x in profile.p]
    q = [float(x) for x in profile.q]
    rowv = [sum(a * y for a, y in zip(a_rows[k], q)) for k in range(m)]
    colv = [sum(x * br[l] for x, br in zip(p, b_rows)) for l in range(n)]
    # Forward-consistent start pair: a start exactly on an indifference set
    # must follow the reply that stays maximal just after t = 1.
    j = max(range(n), key=lambda k: (colv[k], -k))
    i = _forward_argmax(rowv, a_cols[j], tie_a)
    j = _forward_argmax(colv, b_rows[i], tie_b)

    occupancy = [[0.0] * n for _ in range(m)]
    occupancy[i][j] += 1.0  # warm-up window [0, 1)
    cum_a = a_rows[i][j]
    cum_b = b_rows[i][j]
    warmup_pair = (i, j)

    store = _SegmentStore(m, n)
    t = 1.0
    events = 0
    truncated = False
    notes: list[str] = []
    u_max = 1.0 - EVENT_WINDOW_EDGE
    t_now = horizon

    while True:
        rowv = [sum(a * y for a, y in zip(a_rows[k], q)) for k in range(m)]
        colv = [sum(x * br[l] for x, br in zip(p, b_rows)) for l in range(n)]
        # Defensive re-check: a skipped boundary-echo crossing would leave a
        # stale reply assignment that no later root can correct.
        ri = _forward_argmax(rowv, a_cols[j], tie_a)
        rj = _forward_argmax(colv, b_rows[ri], tie_b)
        if (ri != i or rj != j) and len(notes) < _MAX_NOTES:
            notes.append(f"reply assignment corrected to ({ri},{rj}) at t={t:.6g}")
        i, j = ri, rj
        store.append(t, i, j, p, q, cum_a, cum_b)
        cands = _candidate_roots(rowv, colv, a_cols[j], b_rows[i], i, j,
                                 t / horizon, u_max)
        if not cands:
            dur = horizon - t
            occupancy[i][j] += dur
            cum_a += a_rows[i][j] * dur
            cum_b += b_rows[i][j] * dur
            break
        u, side, k, non_generic = _resolve_candidates(cands)
        if non_generic and len(notes) < _MAX_NOTES:
            notes.append(f"non-generic simultaneous crossing near t={t / u:.6g}; "
                         "row player processed first")
        t_new = min(t / u, horizon)
        dur = t_new - t
        occupancy[i][j] += dur
        cum_a += a_rows[i][j] * dur
        cum_b += b_rows[i][j] * dur

        p = [u * x for x in p]
        p[i] += 1.0 - u
        s = sum(p)
        p = [x / s for x in p]
        q = [u * x for x in q]
        q[j] += 1.0 - u
        s = sum(q)
        q = [x / s for x in q]

        if side == 0:
            i = k
        else:
            j = k
        t = t_new
        events += 1
        if t >= horizon:
            break
        if events >= max_events:
            truncated = True
            t_now = t
            notes.append(f"event cap {max_events} reached at t={t:.6g}; trajectory truncated")
            break

    seg_times, seg_rows, seg_cols, seg_p, seg_q, seg_cum_a, seg_cum_b = store.trimmed()
    return Trajectory(
        game, profile, warmup_pair=warmup_pair, stationary=False,
        seg_times=seg_times, seg_rows=seg_rows, seg_cols=seg_cols,
        seg_p=seg_p, seg_q=seg_q, seg_cum_a=seg_cum_a, seg_cum_b=seg_cum_b,
        occupancy=np.array(occupancy), t_now=t_now,
        payoff_integral_a=cum_a, payoff_integral_b=cum_b,
        truncated=truncated, notes=notes)


def reference_orbit(game: BimatrixGame, initial, t_end: float,
                    step: float = 1e-5, sample_every: int = 100,
                    switch_tol: float = 1e-13):
    """Independent fixed-step explicit reference integrator in log-time.

    In s = log t the averages follow z' = br(z) - z with br the pure best
    reply to the current state (first index on ties).  Steps use classical
    RK4; when the best-reply pair differs across a step, the switch time is
    refined by bisection to ``switch_tol`` (in s) and the step restarts from
    the switch.  This keeps the reference's own error far below the gates it
    is used with, even on orbits with strong separation of nearby
    trajectories, while sharing no machinery with the event-driven
    integrator (no closed forms, no root solving).

    Returns (times, P, Q) sampled every ``sample_every`` accepted steps,
    t_end included.  Orders of magnitude slower than :func:`simulate`;
    only a cross-check.
    """
    profile = initial if isinstance(initial, MixedProfile) else MixedProfile(*initial)
    m, n = game.m, game.n
    a_rows = tuple(tuple(float(x) for x in r) for r in game.A)
    b_rows = tuple(tuple(float(x) for x in r) for r in game.B)

    def reply(z):
        p, q = z[:m], z[m:]
        rowv = [sum(a * y for a, y in zip(a_rows[k], q)) for k in range(m)]
        colv = [sum(x * br[l] for x, br in zip(p, b_rows)) for l in range(n)]
        return (max(range(m), key=lambda k: (rowv[k], -k)),
                max(range(n), key=lambda k: (colv[k], -k)))

    def rk4(z, h, pair):
        """One RK4 step; also reports whether any stage left the reply region."""
        flips = [False]

        def f(w):
            i, j = reply(w)
            if (i, j) != pair:
                flips[0] = True
            out = [-x for x in w]
            out[i] += 1.0
            out[m + j] += 1.0
            return out

        k1 = f(z)
        k2 = f([x + 0.5 * h * d for x, d in zip(z, k1)])
        k3 = f([x + 0.5 * h * d for x, d in zip(z, k2)])
        k4 = f([x + h * d for x, d in zip(z, k3)])
        return [x + (h / 6.0) * (d1 + 2.0 * d2 + 2.0 * d3 + d4)
                for x, d1, d2, d3, d4 in zip(z, k1, k2, k3, k4)], flips[0]

    z = [float(x) for x in profile.p] + [float(x) for x in profile.q]
    s_end = math.log(t_end)
    times, ps, qs = [1.0], [list(z[:m])], [list(z[m:])]
    s = 0.0
    accepted = 0
    min_h = step / 64.0
    while s < s_end - 1e-15:
        h = min(step, s_end - s)
        pair = reply(z)
        # Halve the step while a reply flip shows only at interior stages
        # (a region brushed for less than the step) until the endpoint
        # brackets it or the brush falls below resolution.
        while True:
            z_next, stage_flip = rk4(z, h, pair)
            if reply(z_next) != pair:
                lo, hi = 0.0, h
                while hi - lo > switch_tol:
                    mid = 0.5 * (lo + hi)
                    if reply(rk4(z, mid, pair)[0]) != pair:
                        hi = mid
                    else:
                        lo = mid
                z = rk4(z, hi, pair)[0]
                s += hi
                break
            if stage_flip and h > min_h:
                h *= 0.5
                continue
            z = z_next
            s += h
            accepted += 1
            if accepted % sample_every == 0 or s >= s_end - 1e-15:
                times.append(math.exp(s))
                ps.append(list(z[:m]))
                qs.append(list(z[m:]))
            break
    if times[-1] != t_end:
        times[-1] = min(times[-1], t_end)
    return np.array(times), np.array(ps), np.array(qs)
