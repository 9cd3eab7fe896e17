"""Nash points, regret accounting and the Nash / CE / CCE hierarchy.

The joint distribution of play (an m x n matrix of frequencies) is the
common input: external (unconditional) regret asks how much a player would
have gained by substituting one fixed action for her entire history,
conditional (internal) regret asks the same restricted to the times one
particular action was played.  Coarse correlated equilibria are the
distributions with no positive external regret, correlated equilibria those
with no positive conditional regret.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import BimatrixGame, MixedProfile, payoff

JOINT_SUM_ATOL = 1e-10
NASH_RESIDUAL_RTOL = 1e-9
DEFAULT_MEMBERSHIP_TOL = 1e-8


@dataclass(frozen=True)
class JointDistribution:
    """Empirical joint play frequencies over pure-strategy pairs."""

    P: np.ndarray

    def __post_init__(self):
        P = np.array(self.P, dtype=float)
        if P.ndim != 2:
            raise ValueError("joint distribution must be a matrix")
        if P.min() < -JOINT_SUM_ATOL:
            raise ValueError(f"negative joint frequency {P.min():g}")
        total = P.sum()
        if abs(total - 1.0) > JOINT_SUM_ATOL:
            raise ValueError(f"joint frequencies sum to {total!r}, not 1")
        P = np.clip(P, 0.0, None)
        P /= P.sum()
        P.flags.writeable = False
        object.__setattr__(self, "P", P)

    @classmethod
    def from_profile(cls, profile: MixedProfile) -> "JointDistribution":
        """Product embedding of a mixed profile into joint distributions."""
        return cls(np.outer(profile.p, profile.q))

    @property
    def shape(self) -> tuple[int, int]:
        return self.P.shape

    def marginals(self) -> tuple[np.ndarray, np.ndarray]:
        return self.P.sum(axis=1), self.P.sum(axis=0)


@dataclass(frozen=True)
class RegretReport:
    """Raw (unclipped) external and conditional regrets for both players.

    ``external_a[i]`` is the payoff change from replacing the whole history
    with action i; ``internal_a[i, k]`` from replacing action i with k only
    when i was played (the diagonal is identically zero).  ``max_external``
    and ``max_internal`` are maxima of the raw values over both players,
    with the trivial diagonal excluded from ``max_internal``.
    """

    external_a: np.ndarray
    external_b: np.ndarray
    internal_a: np.ndarray
    internal_b: np.ndarray
    max_external: float
    max_internal: float

    def to_dict(self) -> dict:
        return {
            "external_a": self.external_a.tolist(),
            "external_b": self.external_b.tolist(),
            "internal_a": self.internal_a.tolist(),
            "internal_b": self.internal_b.tolist(),
            "max_external": self.max_external,
            "max_internal": self.max_internal,
        }


@dataclass(frozen=True)
class NashPoint:
    profile: MixedProfile
    payoff_a: float
    payoff_b: float
    completely_mixed: bool


def interior_nash(game: BimatrixGame) -> NashPoint | None:
    """Solve for the completely mixed Nash equilibrium, if one exists.

    Stacks the payoff-difference rows (row i minus row i+1 of A for the
    column player's strategy, column j minus j+1 of B for the row player's)
    over the all-ones normalization row and solves the two square systems.
    Returns ``None`` when either system is singular or a solution leaves the
    open simplex; raises for non-square games, where a completely mixed
    equilibrium cannot be unique.
    """
    if game.m != game.n:
        raise ValueError(f"interior equilibrium needs a square game, got {game.m}x{game.n}")
    n = game.n
    rhs = np.zeros(n)
    rhs[-1] = 1.0

    Mq = np.vstack([game.A[:-1] - game.A[1:], np.ones(n)])
    Mp = np.vstack([(game.B[:, :-1] - game.B[:, 1:]).T, np.ones(n)])
    try:
        q = np.linalg.solve(Mq, rhs)
        p = np.linalg.solve(Mp, rhs)
    except np.linalg.LinAlgError:
        return None
    if q.min() <= 0.0 or p.min() <= 0.0:
        return None

    row_vals = game.A @ q
    col_vals = p @ game.B
    scale_a = max(1.0, float(np.abs(game.A).max()))
    scale_b = max(1.0, float(np.abs(game.B).max()))
    if np.ptp(row_vals) > NASH_RESIDUAL_RTOL * scale_a:
        return None
    if np.ptp(col_vals) > NASH_RESIDUAL_RTOL * scale_b:
        return None

    profile = MixedProfile(p, q)
    pay_a, pay_b = payoff(game, profile)
    return NashPoint(profile, pay_a, pay_b, completely_mixed=True)


def pure_nash_points(game: BimatrixGame) -> list[NashPoint]:
    """Enumerate pure-strategy equilibria (weak best-response conditions)."""
    points = []
    col_max = game.A.max(axis=0)
    row_max = game.B.max(axis=1)
    for i in range(game.m):
        for j in range(game.n):
            if game.A[i, j] >= col_max[j] and game.B[i, j] >= row_max[i]:
                profile = MixedProfile.pure(game.m, game.n, i, j)
                points.append(NashPoint(profile, float(game.A[i, j]),
                                        float(game.B[i, j]), completely_mixed=False))
    return points


def regret(game: BimatrixGame, dist: JointDistribution) -> RegretReport:
    """Raw external and conditional regrets of both players under ``dist``."""
    if dist.shape != game.shape:
        raise ValueError(f"distribution shape {dist.shape} does not fit {game.m}x{game.n} game")
    P = dist.P
    p_marg, q_marg = dist.marginals()
    realized_a = float(np.sum(game.A * P))
    realized_b = float(np.sum(game.B * P))

    external_a = game.A @ q_marg - realized_a
    external_b = p_marg @ game.B - realized_b

    # C[k, i] = payoff to the row player of answering k whenever i was played.
    C = game.A @ P.T
    internal_a = C.T - np.diag(C)[:, None]
    np.fill_diagonal(internal_a, 0.0)
    # D[j, l] = payoff to the column player of answering l whenever j was played.
    D = P.T @ game.B
    internal_b = D - np.diag(D)[:, None]
    np.fill_diagonal(internal_b, 0.0)

    off_a = internal_a[~np.eye(game.m, dtype=bool)]
    off_b = internal_b[~np.eye(game.n, dtype=bool)]
    for arr in (external_a, external_b, internal_a, internal_b):
        arr.flags.writeable = False
    return RegretReport(
        external_a=external_a,
        external_b=external_b,
        internal_a=internal_a,
        internal_b=internal_b,
        max_external=float(max(external_a.max(), external_b.max())),
        max_internal=float(max(off_a.max(), off_b.max())),
    )


def equilibrium_membership(game: BimatrixGame, dist: JointDistribution,
                           kind: str, tol: float = DEFAULT_MEMBERSHIP_TOL) -> bool:
    """Test membership in the coarse-correlated ("cce") or correlated ("ce") set.

    Membership means the corresponding raw regrets do not exceed ``tol``.
    At ``tol=0`` every correlated equilibrium is coarse correlated (external
    regret is the sum over play of the conditional regrets).
    """
    if tol < 0:
        raise ValueError("tolerance must be >= 0")
    report = regret(game, dist)
    k = kind.lower()
    if k == "cce":
        return report.max_external <= tol
    if k == "ce":
        return report.max_internal <= tol
    raise ValueError(f"kind must be 'CCE' or 'CE', got {kind!r}")
