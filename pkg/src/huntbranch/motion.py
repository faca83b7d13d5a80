"""Finite-state jump processes used as the single-particle motion.

A :class:`MotionModel` is a continuous-time Markov chain on states
``0..N-1`` with an optional killing rate to a cemetery state.  Densities are
taken with respect to a reference measure ``m`` on the states, so that

    P_t f(x) = sum_y p(t, x, y) f(y) m(y),   p(t, x, y) = exp(tG)[x, y] / m(y).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import expm
from scipy.sparse.csgraph import connected_components

__all__ = [
    "MotionModel",
    "Trajectory",
    "build_motion",
    "grid_diffusion",
    "motion_from_json",
    "sample_path",
    "semigroup_matrix",
    "transition_density",
    "dual_semigroup_matrix",
]


@dataclass(frozen=True, eq=False)
class MotionModel:
    m: np.ndarray
    rates: np.ndarray
    kill_rate: np.ndarray
    irreducible: bool = field(compare=False)

    @property
    def n_states(self) -> int:
        return self.m.shape[0]

    @property
    def states(self) -> range:
        return range(self.n_states)

    @property
    def exit_rate(self) -> np.ndarray:
        """Total rate of leaving each state (jumps plus killing)."""
        return self.rates.sum(axis=1) + self.kill_rate

    @property
    def generator(self) -> np.ndarray:
        G = self.rates.copy()
        G[np.diag_indices_from(G)] = -self.exit_rate
        return G

    @property
    def jump_cdf(self) -> np.ndarray:
        """Row-wise CDF over destinations ``0..N-1`` then the cemetery (column N)."""
        w = np.hstack([self.rates, self.kill_rate[:, None]])
        tot = w.sum(axis=1, keepdims=True)
        cdf = np.cumsum(np.divide(w, tot, out=np.zeros_like(w), where=tot > 0), axis=1)
        for x in range(cdf.shape[0]):
            pos = np.nonzero(w[x])[0]
            # close the CDF at the last reachable column so rounding never selects a zero-rate target
            cdf[x, pos[-1] if pos.size else 0:] = 1.0
        return cdf

    @property
    def conservative(self) -> bool:
        return not np.any(self.kill_rate > 0)

    def to_json(self) -> dict:
        return {
            "states": self.n_states,
            "m": self.m.tolist(),
            "rates": self.rates.tolist(),
            "kill": self.kill_rate.tolist(),
        }


@dataclass
class Trajectory:
    x0: int
    jumps: list[tuple[float, int]]
    t_end: float
    kill_time: float | None = None

    @property
    def killed(self) -> bool:
        return self.kill_time is not None

    @property
    def end_state(self) -> int | None:
        """State at ``t_end``; ``None`` when the path was sent to the cemetery."""
        if self.killed:
            return None
        return self.jumps[-1][1] if self.jumps else self.x0

    def state_at(self, t: float) -> int | None:
        if self.killed and t >= self.kill_time:
            return None
        state = self.x0
        for s, y in self.jumps:
            if s > t:
                break
            state = y
        return state


def build_motion(states, m=None, rates=None, kill_rate=None) -> MotionModel:
    """Assemble and validate a :class:`MotionModel`.

    ``states`` is either the number of states or a sequence of state labels
    (only its length is used).  ``rates`` is a dense ``N x N`` matrix whose
    diagonal is ignored.  ``m`` defaults to counting measure and
    ``kill_rate`` to zero.

    The returned model records whether the embedded jump chain is
    irreducible, which on a finite space is equivalent to ``p(t, x, y) > 0``
    for all ``t > 0``.
    """
    n = int(states) if np.isscalar(states) else len(states)
    if n <= 0:
        raise ValueError("state space must be nonempty")
    m = np.ones(n) if m is None else np.asarray(m, dtype=float).copy()
    rates = np.zeros((n, n)) if rates is None else np.array(rates, dtype=float)
    kill = np.zeros(n) if kill_rate is None else np.asarray(kill_rate, dtype=float).copy()
    if m.shape != (n,) or rates.shape != (n, n) or kill.shape != (n,):
        raise ValueError(
            f"inconsistent dimensions: n={n}, m{m.shape}, rates{rates.shape}, kill{kill.shape}"
        )
    if not np.all(np.isfinite(m)) or np.any(m <= 0):
        raise ValueError("reference measure m must be strictly positive on every state")
    np.fill_diagonal(rates, 0.0)
    if not np.all(np.isfinite(rates)) or np.any(rates < 0):
        raise ValueError("jump rates must be finite and nonnegative")
    if not np.all(np.isfinite(kill)) or np.any(kill < 0):
        raise ValueError("kill rates must be finite and nonnegative")

    n_comp, _ = connected_components(rates > 0, directed=True, connection="strong")
    for arr in (m, rates, kill):
        arr.setflags(write=False)
    return MotionModel(m=m, rates=rates, kill_rate=kill, irreducible=bool(n_comp == 1))


def motion_from_json(doc) -> MotionModel:
    """Build a model from ``{"states": N, "m": [...], "rates": [[...]], "kill": [...]}``."""
    if isinstance(doc, (str, bytes)):
        doc = json.loads(doc)
    unknown = set(doc) - {"states", "m", "rates", "kill"}
    if unknown:
        raise ValueError(f"unknown motion fields: {sorted(unknown)}")
    return build_motion(doc["states"], doc.get("m"), doc.get("rates"), doc.get("kill"))


def grid_diffusion(n: int = 20, diffusion: float = 1.0, drift: float = 0.0,
                   kill: float | np.ndarray = 0.0) -> MotionModel:
    """Nearest-neighbour chain on a uniform grid of [0, 1] with reflecting ends.

    Approximates ``diffusion * u'' + drift * u'`` with mesh ``h = 1/(n-1)``;
    the reference measure is ``h`` per cell so sums against ``m`` mimic
    Lebesgue integrals.
    """
    if n < 2:
        raise ValueError("grid needs at least two points")
    h = 1.0 / (n - 1)
    up = diffusion / h**2 + max(drift, 0.0) / h
    down = diffusion / h**2 + max(-drift, 0.0) / h
    rates = np.zeros((n, n))
    idx = np.arange(n - 1)
    rates[idx, idx + 1] = up
    rates[idx + 1, idx] = down
    return build_motion(n, np.full(n, h), rates, np.broadcast_to(kill, (n,)))


def semigroup_matrix(model: MotionModel, t: float) -> np.ndarray:
    """``exp(tG)``: row x gives the sub-probability law of Y_t started at x."""
    if t < 0:
        raise ValueError("t must be nonnegative")
    return expm(t * model.generator)


def transition_density(model: MotionModel, t: float, x=None, y=None):
    """Transition density ``p(t, x, y)`` with respect to ``m``.

    With ``x`` and ``y`` omitted the full density matrix is returned.
    """
    if t <= 0:
        raise ValueError("transition density is defined for t > 0 only")
    dens = semigroup_matrix(model, t) / model.m[None, :]
    if x is None and y is None:
        return dens
    if x is None:
        return dens[:, y]
    if y is None:
        return dens[x]
    return float(dens[x, y])


def dual_semigroup_matrix(model: MotionModel, t: float) -> np.ndarray:
    """Matrix of the dual semigroup on L^2(m): ``(P^_t f)(x) = sum_y p(t,y,x) f(y) m(y)``."""
    dens = transition_density(model, t)
    return dens.T * model.m[None, :]


def sample_path(model: MotionModel, x0: int, t_end: float, rng) -> Trajectory:
    """Exact sample path on ``[0, t_end]`` by successive exponential holding times."""
    if t_end < 0:
        raise ValueError("t_end must be nonnegative")
    exit_rate = model.exit_rate
    cdf = model.jump_cdf
    x, t = int(x0), 0.0
    jumps: list[tuple[float, int]] = []
    n = model.n_states
    while True:
        r = exit_rate[x]
        if r <= 0:
            break
        t += rng.exponential(1.0 / r)
        if t > t_end:
            break
        y = int(np.searchsorted(cdf[x], rng.random(), side="right"))
        if y == n:
            return Trajectory(int(x0), jumps, float(t_end), kill_time=t)
        jumps.append((t, y))
        x = y
    return Trajectory(int(x0), jumps, float(t_end))
