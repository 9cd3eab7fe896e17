"""Named example games retrievable by key.

Keys
----
``shapley``
    Shapley's classic 3x3 cycling game (1964): the row player wants to match
    the column player, who wants to stay one step ahead.  Fictitious play
    orbits converge to a six-sided limit cycle instead of the mixed
    equilibrium.
``beta:<value>``
    One-parameter deformation of Shapley's game with parameter in (0, 1);
    the unique equilibrium stays at the uniform profile while average play
    along any non-stationary orbit earns strictly more than equilibrium play
    for both players.
``section5``
    A numerically discovered 3x3 game whose attracting 8-periodic orbit
    lies entirely inside the region where both players' best achievable
    payoff is below the (zero) equilibrium payoff.
``prisoners`` / ``prisoners-equivalent``
    The classic prisoner's dilemma and a payoff-shifted version of it.  The
    two induce identical best responses and identical play, but only the
    first has its equilibrium Pareto dominated by joint cooperation.

The environment variable ``FPDYN_BUILTIN_DIR`` may name a directory of JSON
game files overriding any key: ``<key>.json`` is looked up first (with ``:``
also tried as ``_`` for filesystem friendliness).
"""

from __future__ import annotations

import os

import numpy as np

from .core import BimatrixGame, load_game

BUILTIN_DIR_ENV = "FPDYN_BUILTIN_DIR"

#: Catalog keys used whenever "every built-in game" is meant; the beta
#: family is represented by its three canonical parameter values.
BUILTIN_KEYS = (
    "shapley",
    "beta:0.2",
    "beta:0.5",
    "beta:0.8",
    "section5",
    "prisoners",
    "prisoners-equivalent",
)


def beta_family(beta: float) -> BimatrixGame:
    """The 3x3 one-parameter family for a parameter strictly in (0, 1)."""
    b = float(beta)
    if not 0.0 < b < 1.0:
        raise ValueError(f"beta must be in (0, 1), got {beta!r}")
    A = [[1.0, 0.0, b], [b, 1.0, 0.0], [0.0, b, 1.0]]
    B = [[-b, 1.0, 0.0], [0.0, -b, 1.0], [1.0, 0.0, -b]]
    return BimatrixGame(A, B, name=f"beta:{beta:g}")


def _shapley() -> BimatrixGame:
    A = np.eye(3)
    B = [[0.0, 1.0, 0.0], [0.0, 0.0, 1.0], [1.0, 0.0, 0.0]]
    return BimatrixGame(A, B, name="shapley")


def _section5() -> BimatrixGame:
    A = [[-1.353259, -1.268538, 2.572738],
         [0.162237, -1.800824, 1.584291],
         [-0.499026, -1.544578, 1.992332]]
    B = [[-1.839111, -2.876997, -3.366031],
         [-4.801713, -3.854987, -3.758662],
         [6.740060, 6.590451, 6.898102]]
    return BimatrixGame(A, B, name="section5")


def _prisoners() -> BimatrixGame:
    A = [[3.0, 0.0], [5.0, 1.0]]
    B = [[3.0, 5.0], [0.0, 1.0]]
    return BimatrixGame(A, B, name="prisoners")


def _prisoners_equivalent() -> BimatrixGame:
    A = [[0.0, 0.0], [2.0, 1.0]]
    B = [[0.0, 2.0], [0.0, 1.0]]
    return BimatrixGame(A, B, name="prisoners-equivalent")


_FIXED = {
    "shapley": _shapley,
    "section5": _section5,
    "prisoners": _prisoners,
    "prisoners-equivalent": _prisoners_equivalent,
}


def _override_path(key: str) -> str | None:
    base = os.environ.get(BUILTIN_DIR_ENV)
    if not base:
        return None
    for fname in (f"{key}.json", f"{key.replace(':', '_')}.json"):
        path = os.path.join(base, fname)
        if os.path.isfile(path):
            return path
    return None


def builtin_game(key: str) -> BimatrixGame:
    """Look up a built-in game by key, honoring ``FPDYN_BUILTIN_DIR`` overrides."""
    path = _override_path(key)
    if path is not None:
        return load_game(path)
    if key in _FIXED:
        return _FIXED[key]()
    if key.startswith("beta:"):
        try:
            beta = float(key.split(":", 1)[1])
        except ValueError as exc:
            raise KeyError(f"unparseable beta value in {key!r}") from exc
        return beta_family(beta)
    raise KeyError(f"unknown built-in game {key!r}")


def resolve_game(source: str) -> BimatrixGame:
    """Interpret ``source`` as a built-in key first, then as a JSON file path."""
    try:
        return builtin_game(source)
    except KeyError:
        pass
    if os.path.isfile(source):
        return load_game(source)
    raise ValueError(f"{source!r} is neither a built-in game key nor a game file")
