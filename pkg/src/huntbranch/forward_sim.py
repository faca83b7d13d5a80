"""Exact event-driven simulation of the branching particle system.

Each alive particle at state ``x`` carries two exponential clocks: motion
exit at rate ``exit(x)`` and fission at rate ``beta(x)``.  Because clocks are
memoryless, the next event over the whole population is drawn directly from
the aggregated rates (Gillespie's direct method); particles are bucketed by
state so an event costs O(number of states).

Besides its id, every particle carries its *ancestral weight*: the product of
``1/r`` over the offspring counts ``r`` of all fissions on its line of
descent.  Weights of the alive population always sum to the weight of the
ancestor.
"""

from __future__ import annotations

import math
from bisect import bisect_right
from dataclasses import dataclass, field

import numpy as np

from .branching_law import BranchingLaw, HeavyOffspring
from .motion import MotionModel
from .rng import GENERATOR_NAME, UniformStream, stream

__all__ = [
    "EventLog",
    "PointMeasure",
    "SimConfig",
    "martingale_path",
    "observable",
    "simulate",
]

OK, OVERFLOW, EXTINCT = "ok", "overflow", "extinct"
JUMP, FISSION, KILL = "jump", "fission", "kill"


@dataclass
class PointMeasure:
    """Finite point measure: one entry per alive particle."""

    states: np.ndarray
    ids: np.ndarray
    t: float = 0.0
    weights: np.ndarray | None = None

    def __post_init__(self):
        self.states = np.asarray(self.states, dtype=np.int64)
        self.ids = np.asarray(self.ids, dtype=np.int64)
        if self.weights is None:
            self.weights = np.ones(self.states.size)
        else:
            self.weights = np.asarray(self.weights, dtype=float)
        if not (self.states.shape == self.ids.shape == self.weights.shape):
            raise ValueError("states, ids and weights must have equal length")

    @classmethod
    def from_states(cls, states, t: float = 0.0) -> "PointMeasure":
        states = np.atleast_1d(np.asarray(states, dtype=np.int64))
        return cls(states, np.arange(states.size), t)

    @property
    def size(self) -> int:
        return int(self.states.size)

    def counts(self, n_states: int) -> np.ndarray:
        return np.bincount(self.states, minlength=n_states)

    def __len__(self) -> int:
        return self.size


@dataclass
class SimConfig:
    horizon: float
    checkpoints: tuple = ()
    cap: int = 1_000_000
    seed: int | None = None
    replicate: int = 0
    record_events: bool = True

    def __post_init__(self):
        if self.horizon < 0:
            raise ValueError("horizon must be nonnegative")
        if self.cap < 1:
            raise ValueError("population cap must be at least 1")
        cps = tuple(float(c) for c in (self.checkpoints or (self.horizon,)))
        if any(b < a for a, b in zip(cps, cps[1:])):
            raise ValueError("checkpoints must be sorted")
        if cps and (cps[0] < 0 or cps[-1] > self.horizon):
            raise ValueError("checkpoints must lie in [0, horizon]")
        self.checkpoints = cps


@dataclass
class EventLog:
    """Events as ``(time, kind, particle id, state, payload)`` tuples.

    ``payload`` is the destination state for jumps, ``(k, child ids)`` for
    fissions and ``None`` for killings.
    """

    events: list = field(default_factory=list)
    checkpoints: tuple = ()
    status: str = OK
    replicate: int = 0
    n_events: int = 0
    n_fissions: int = 0
    generator: str = GENERATOR_NAME
    next_id: int = 0


class _OffspringSampler:
    def __init__(self, law: BranchingLaw):
        self.kinds = []
        for o in law.offspring:
            k, p = o.pmf
            if isinstance(o, HeavyOffspring):
                self.kinds.append((True, o.cdf, 2))
            else:
                cdf = np.cumsum(p)
                cdf[-1] = 1.0
                self.kinds.append((False, cdf.tolist(), k.tolist()))

    def draw(self, x: int, u: float) -> int:
        heavy, cdf, ks = self.kinds[x]
        if heavy:
            return int(np.searchsorted(cdf, u, side="right")) + ks
        return ks[bisect_right(cdf, u)]


def simulate(motion: MotionModel, law: BranchingLaw, initial, config: SimConfig,
             rng=None, t0: float = 0.0, next_id: int | None = None):
    """Run one realization from ``initial`` over ``[t0, config.horizon]``.

    ``initial`` is a :class:`PointMeasure` or a sequence of states.  Returns
    ``(log, snapshots)`` with one :class:`PointMeasure` per checkpoint;
    checkpoints before ``t0`` get an empty measure and, after a population
    overflow, ``None``.
    """
    if motion.n_states != law.n_states:
        raise ValueError("motion and branching law disagree on the number of states")
    if not isinstance(initial, PointMeasure):
        initial = PointMeasure.from_states(initial, t0)
    if initial.size == 0:
        raise ValueError("initial population is empty")
    n = motion.n_states
    if initial.states.min() < 0 or initial.states.max() >= n:
        raise ValueError("initial state outside the state space")
    if rng is None:
        rng = stream(config.seed, config.replicate)
    u = rng if isinstance(rng, UniformStream) else UniformStream(rng)

    beta = law.beta.tolist()
    exit_rate = motion.exit_rate.tolist()
    total_rate = [b + e for b, e in zip(beta, exit_rate)]
    jump_cdf = [row.tolist() for row in motion.jump_cdf]
    offspring = _OffspringSampler(law)

    ids: list[list[int]] = [[] for _ in range(n)]
    wts: list[list[float]] = [[] for _ in range(n)]
    for s, i, w in zip(initial.states.tolist(), initial.ids.tolist(), initial.weights.tolist()):
        ids[s].append(i)
        wts[s].append(w)
    pop = initial.size
    if next_id is None:
        next_id = int(initial.ids.max()) + 1

    log = EventLog(checkpoints=config.checkpoints, replicate=config.replicate)
    record = config.record_events
    events = log.events
    checkpoints = config.checkpoints
    snaps: list[PointMeasure | None] = []
    ci = 0

    def snapshot(t):
        states = np.repeat(np.arange(n), [len(b) for b in ids])
        return PointMeasure(states, [i for b in ids for i in b], t, [w for b in wts for w in b])

    while ci < len(checkpoints) and checkpoints[ci] < t0:
        snaps.append(PointMeasure(np.empty(0, np.int64), np.empty(0, np.int64), checkpoints[ci]))
        ci += 1

    t = float(t0)
    horizon = config.horizon
    cap = config.cap
    while True:
        R = 0.0
        for s in range(n):
            R += len(ids[s]) * total_rate[s]
        t_next = t + (-math.log1p(-u.uniform()) / R if R > 0 else math.inf)
        while ci < len(checkpoints) and checkpoints[ci] < t_next:
            snaps.append(snapshot(checkpoints[ci]))
            ci += 1
        if t_next > horizon:
            break
        t = t_next

        # pick state, then a uniform particle in that state
        r = u.uniform() * R
        s = 0
        for s in range(n):
            rs = len(ids[s]) * total_rate[s]
            if r < rs:
                break
            r -= rs
        bucket, wbucket = ids[s], wts[s]
        while not bucket:  # rounding pushed r past the last nonempty state
            s -= 1
            bucket, wbucket = ids[s], wts[s]
        nb = len(bucket)
        i = min(int(r / total_rate[s]), nb - 1)
        pid, w = bucket[i], wbucket[i]
        bucket[i], wbucket[i] = bucket[-1], wbucket[-1]
        bucket.pop()
        wbucket.pop()

        v = u.uniform() * total_rate[s]
        log.n_events += 1
        if v < beta[s]:
            k = offspring.draw(s, u.uniform())
            children = range(next_id, next_id + k)
            next_id += k
            bucket.extend(children)
            wbucket.extend([w / k] * k)
            pop += k - 1
            log.n_fissions += 1
            if record:
                events.append((t, FISSION, pid, s, (k, tuple(children))))
            if pop > cap:
                log.status = OVERFLOW
                break
        else:
            dest = bisect_right(jump_cdf[s], u.uniform())
            if dest == n:
                pop -= 1
                if record:
                    events.append((t, KILL, pid, s, None))
            else:
                ids[dest].append(pid)
                wts[dest].append(w)
                if record:
                    events.append((t, JUMP, pid, s, dest))
        if pop == 0:
            log.status = EXTINCT

    while ci < len(checkpoints):
        snaps.append(None if log.status == OVERFLOW else snapshot(checkpoints[ci]))
        ci += 1
    log.next_id = next_id
    return log, snaps


def observable(snapshot: PointMeasure, f) -> float:
    """``<f, X_t>``: sum of ``f`` over alive particles."""
    if snapshot.size == 0:
        return 0.0
    return float(np.asarray(f, dtype=float)[snapshot.states].sum())


def martingale_path(snapshots, triple, f=None):
    """``W_t = exp(-lambda1 t) <phi, X_t>`` at each snapshot.

    With ``f`` given, also returns ``U_t = exp(-lambda1 t) <f phi, X_t>``.
    Missing (overflowed) snapshots give ``nan``.
    """
    W = np.full(len(snapshots), np.nan)
    U = np.full(len(snapshots), np.nan)
    fphi = None if f is None else np.asarray(f, dtype=float) * triple.phi
    for j, snap in enumerate(snapshots):
        if snap is None:
            continue
        decay = math.exp(-triple.lambda1 * snap.t)
        W[j] = decay * observable(snap, triple.phi)
        if fphi is not None:
            U[j] = decay * observable(snap, fphi)
    return W if f is None else (W, U)
