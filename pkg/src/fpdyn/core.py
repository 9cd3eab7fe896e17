"""Bimatrix games, mixed strategies, payoffs and best-response regions.

A game is a pair of m x n payoff matrices (A for the row player, B for the
column player).  The row player's space of mixed strategies is the
(m-1)-simplex, the column player's the (n-1)-simplex.  Each simplex splits
into closed convex preference regions: the set of opponent strategies
against which one particular pure strategy earns the most.  Region
boundaries (indifference sets) are where two or more pure strategies tie;
all dynamics events in this package happen on those boundaries.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np

# Probability vectors further than this from the simplex are rejected
# rather than silently repaired.
SIMPLEX_ATOL = 1e-9

# Default argmax tie tolerance, relative to the payoff spread max-min;
# absolute fallback when the spread is zero.  Scale-aware because
# equivalence transforms rescale payoffs.
ARGMAX_REL_TOL = 1e-10
ARGMAX_ABS_TOL = 1e-12

# Degeneracy probe: a game is refused by the dynamics when more than this
# fraction of randomly sampled opponent strategies produce best-response
# ties at the given absolute tolerance.
DEGENERACY_SAMPLES = 1000
DEGENERACY_TIE_TOL = 1e-8
DEGENERACY_MAX_TIE_FRACTION = 0.01
_DEGENERACY_SEED = 0x5EED


class DegenerateGameError(ValueError):
    """The game has best-response ties on a set of positive measure."""


def _simplex_vector(x, size: int, what: str) -> np.ndarray:
    """Validate and renormalize a probability vector.

    Accepts vectors within ``SIMPLEX_ATOL`` of the simplex (clipping tiny
    negative components and dividing by the sum); anything further off is
    rejected so that real errors are not hidden.
    """
    v = np.asarray(x, dtype=float).reshape(-1)
    if v.size != size:
        raise ValueError(f"{what}: expected length {size}, got {v.size}")
    if not np.all(np.isfinite(v)):
        raise ValueError(f"{what}: non-finite entries")
    if v.min() < -SIMPLEX_ATOL:
        raise ValueError(f"{what}: negative component {v.min():g}")
    s = v.sum()
    if abs(s - 1.0) > SIMPLEX_ATOL:
        raise ValueError(f"{what}: components sum to {s!r}, not 1")
    v = np.clip(v, 0.0, None)
    v /= v.sum()
    v.flags.writeable = False
    return v


@dataclass(frozen=True)
class BimatrixGame:
    """An m x n two-player game; immutable and safe to share across tasks."""

    A: np.ndarray
    B: np.ndarray
    name: str | None = None

    def __post_init__(self):
        A = np.array(self.A, dtype=float)
        B = np.array(self.B, dtype=float)
        if A.ndim != 2 or A.shape != B.shape:
            raise ValueError(f"payoff matrices must share one 2-d shape, got {A.shape} and {B.shape}")
        if A.shape[0] < 2 or A.shape[1] < 2:
            raise ValueError("each player needs at least two pure strategies")
        if not (np.all(np.isfinite(A)) and np.all(np.isfinite(B))):
            raise ValueError("payoff entries must be finite")
        A.flags.writeable = False
        B.flags.writeable = False
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)

    @property
    def m(self) -> int:
        return self.A.shape[0]

    @property
    def n(self) -> int:
        return self.A.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.A.shape

    @cached_property
    def is_degenerate(self) -> bool:
        """Probe for fat indifference sets.

        Samples ``DEGENERACY_SAMPLES`` opponent strategies per player from a
        fixed-seed generator (the flag is deterministic for a given game) and
        counts best-response ties at ``DEGENERACY_TIE_TOL``.  Generic games
        tie only on measure-zero sets, so essentially never under sampling.
        """
        rng = np.random.default_rng(_DEGENERACY_SEED)
        qs = rng.dirichlet(np.ones(self.n), size=DEGENERACY_SAMPLES)
        ps = rng.dirichlet(np.ones(self.m), size=DEGENERACY_SAMPLES)
        row_vals = qs @ self.A.T          # (samples, m)
        col_vals = ps @ self.B            # (samples, n)
        limit = DEGENERACY_MAX_TIE_FRACTION * DEGENERACY_SAMPLES
        for vals in (row_vals, col_vals):
            sorted_vals = np.sort(vals, axis=1)
            gap = sorted_vals[:, -1] - sorted_vals[:, -2]
            if np.count_nonzero(gap <= DEGENERACY_TIE_TOL) > limit:
                return True
        return False

    def to_dict(self) -> dict:
        d: dict = {}
        if self.name is not None:
            d["name"] = self.name
        d.update({"m": self.m, "n": self.n,
                  "A": self.A.tolist(), "B": self.B.tolist()})
        return d

    def __repr__(self) -> str:  # matrices are noisy; keep it short
        label = f" {self.name!r}" if self.name else ""
        return f"BimatrixGame({self.m}x{self.n}{label})"


@dataclass(frozen=True)
class MixedProfile:
    """A pair of mixed strategies (p for the row player, q for the column player)."""

    p: np.ndarray
    q: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.p, dtype=float).reshape(-1)
        q = np.asarray(self.q, dtype=float).reshape(-1)
        object.__setattr__(self, "p", _simplex_vector(p, p.size, "p"))
        object.__setattr__(self, "q", _simplex_vector(q, q.size, "q"))

    @classmethod
    def pure(cls, m: int, n: int, i: int, j: int) -> "MixedProfile":
        p = np.zeros(m)
        p[i] = 1.0
        q = np.zeros(n)
        q[j] = 1.0
        return cls(p, q)


@dataclass(frozen=True)
class RegionIndex:
    """Best-response index sets for both players (0-based).

    Singletons identify the open interior of a preference-region pair;
    multi-element sets identify indifference sets.
    """

    argmax_a: tuple[int, ...]
    argmax_b: tuple[int, ...]

    def __post_init__(self):
        a = tuple(sorted(int(i) for i in self.argmax_a))
        b = tuple(sorted(int(j) for j in self.argmax_b))
        if not a or not b:
            raise ValueError("argmax sets must be nonempty")
        object.__setattr__(self, "argmax_a", a)
        object.__setattr__(self, "argmax_b", b)

    @property
    def is_singleton(self) -> bool:
        return len(self.argmax_a) == 1 and len(self.argmax_b) == 1

    @property
    def pair(self) -> tuple[int, int]:
        if not self.is_singleton:
            raise ValueError("region is not a singleton pair")
        return self.argmax_a[0], self.argmax_b[0]


def _check_profile(game: BimatrixGame, profile: MixedProfile) -> None:
    if profile.p.size != game.m or profile.q.size != game.n:
        raise ValueError(
            f"profile of shape ({profile.p.size},{profile.q.size}) does not fit {game.m}x{game.n} game")


def payoff(game: BimatrixGame, profile: MixedProfile) -> tuple[float, float]:
    """Expected payoffs (p A q, p B q); bilinear in (p, q)."""
    _check_profile(game, profile)
    p, q = profile.p, profile.q
    return float(p @ game.A @ q), float(p @ game.B @ q)


def tie_tolerance(values: np.ndarray, tol: float | None = None) -> float:
    """Resolve the argmax tie tolerance for a payoff vector."""
    if tol is not None:
        if tol < 0:
            raise ValueError("tolerance must be >= 0")
        return float(tol)
    spread = float(np.max(values) - np.min(values))
    return ARGMAX_REL_TOL * spread if spread > 0.0 else ARGMAX_ABS_TOL


def _argmax_set(values: np.ndarray, tol: float | None) -> tuple[int, ...]:
    t = tie_tolerance(values, tol)
    top = float(np.max(values))
    return tuple(int(i) for i in np.flatnonzero(values >= top - t))


def best_response(game: BimatrixGame, profile: MixedProfile,
                  tol: float | None = None) -> RegionIndex:
    """Pure-strategy argmax sets of both players against the given profile.

    The row player maximizes over the entries of A q, the column player over
    p B.  ``tol`` is an absolute payoff slack; by default it is
    ``ARGMAX_REL_TOL`` times the payoff spread (scale-aware).
    """
    _check_profile(game, profile)
    row_vals = game.A @ profile.q
    col_vals = profile.p @ game.B
    return RegionIndex(_argmax_set(row_vals, tol), _argmax_set(col_vals, tol))


def max_payoff(game: BimatrixGame, side: str, opponent_strategy) -> float:
    """Best achievable payoff for one player against a fixed opponent strategy.

    ``side="A"`` evaluates max_i (A q)_i for an opponent strategy q;
    ``side="B"`` evaluates max_j (p B)_j.
    """
    if side == "A":
        q = _simplex_vector(opponent_strategy, game.n, "q")
        return float(np.max(game.A @ q))
    if side == "B":
        p = _simplex_vector(opponent_strategy, game.m, "p")
        return float(np.max(p @ game.B))
    raise ValueError(f"side must be 'A' or 'B', got {side!r}")


def region_of(game: BimatrixGame, profile: MixedProfile,
              tol: float | None = None) -> RegionIndex:
    """Classify a profile into its preference-region pair.

    Identical to :func:`best_response`; exposed separately because region
    changes are exactly the events the dynamics integrator detects.
    """
    return best_response(game, profile, tol)


# ---------------------------------------------------------------------------
# JSON game files: {"name": str?, "m": int, "n": int, "A": [[...]], "B": [[...]]}

def game_from_dict(data: dict) -> BimatrixGame:
    try:
        m, n = int(data["m"]), int(data["n"])
        A = np.array(data["A"], dtype=float)
        B = np.array(data["B"], dtype=float)
    except (KeyError, TypeError, ValueError) as exc:
        raise ValueError(f"malformed game definition: {exc}") from exc
    if A.shape != (m, n) or B.shape != (m, n):
        raise ValueError(f"matrix shapes {A.shape}/{B.shape} do not match declared {m}x{n}")
    return BimatrixGame(A, B, name=data.get("name"))


def load_game(path) -> BimatrixGame:
    with open(path, "r", encoding="utf-8") as fh:
        return game_from_dict(json.load(fh))


def save_game(game: BimatrixGame, path) -> None:
    Path(path).write_text(json.dumps(game.to_dict()) + "\n", encoding="utf-8")
