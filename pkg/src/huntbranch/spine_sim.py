"""The particle system under the size-biased measure, built around a spine.

One realization: a spine particle moves as the h-transformed motion and
undergoes fission at rate ``A(x) beta(x)``; at a fission it is replaced by
``r`` particles with ``r`` drawn from the size-biased law ``k p_k / A``, one
of which (uniformly chosen) carries on as the spine while the other ``r - 1``
start ordinary, independent branching systems at that time and place.
"""

from __future__ import annotations

import math
from bisect import bisect_right
from dataclasses import dataclass, field

import numpy as np

from .branching_law import BranchingLaw, size_biased
from .forward_sim import OVERFLOW, OK, EventLog, PointMeasure, SimConfig, simulate
from .motion import MotionModel, Trajectory
from .rng import UniformStream, stream
from .spectral import SpectralTriple, build_operator, h_transform

__all__ = [
    "Fission",
    "SpineRecord",
    "SpineSampler",
    "measure_change_check",
    "nested_spine_check",
    "simulate_spine",
    "spine_decomposition_check",
    "spine_rhs",
    "unit_mass_identity",
]

OVERFLOW_CONTAMINATION = 1e-3


@dataclass
class Fission:
    time: float
    state: int
    r: int
    spine_child: int
    child_ids: tuple
    subtree: EventLog | None = None
    subtree_snapshots: list | None = None


@dataclass
class SpineRecord:
    x0: int
    trajectory: Trajectory
    fissions: list[Fission]
    checkpoints: tuple
    spine_ids: list[int] = field(default_factory=list)
    status: str = OK
    replicate: int = 0
    with_subtrees: bool = True

    @property
    def horizon(self) -> float:
        return self.trajectory.t_end

    def spine_state(self, t: float) -> int:
        return self.trajectory.state_at(t)

    def fissions_before(self, t: float) -> list[Fission]:
        return [f for f in self.fissions if f.time <= t]

    def n_fissions(self, t: float) -> int:
        return len(self.fissions_before(t))

    def spine_weight(self, t: float) -> float:
        w = 1.0
        for f in self.fissions_before(t):
            w /= f.r
        return w

    def _checkpoint_index(self, t: float) -> int:
        for j, c in enumerate(self.checkpoints):
            if math.isclose(c, t, rel_tol=0, abs_tol=1e-12):
                return j
        raise ValueError(f"t={t} is not a checkpoint of this record ({self.checkpoints})")

    def population(self, t: float) -> PointMeasure | None:
        """Full population at checkpoint ``t``: the spine plus every subtree."""
        if not self.with_subtrees:
            raise ValueError("record was simulated without subtrees")
        j = self._checkpoint_index(t)
        fs = self.fissions_before(t)
        spine_id = self.spine_ids[len(fs)]
        states, ids, weights = [self.spine_state(t)], [spine_id], [self.spine_weight(t)]
        for f in fs:
            snap = f.subtree_snapshots[j]
            if snap is None:
                return None
            states.extend(snap.states.tolist())
            ids.extend(snap.ids.tolist())
            weights.extend(snap.weights.tolist())
        return PointMeasure(states, ids, t, weights)

    def to_json(self) -> dict:
        return {
            "x0": self.x0,
            "horizon": self.horizon,
            "status": self.status,
            "replicate": self.replicate,
            "trajectory": [[t, y] for t, y in self.trajectory.jumps],
            "fissions": [
                {
                    "time": f.time, "state": f.state, "r": f.r, "spine_child": f.spine_child,
                    "subtree_events": None if f.subtree is None else f.subtree.n_events,
                    "subtree_sizes": None if f.subtree_snapshots is None else [
                        None if s is None else s.size for s in f.subtree_snapshots
                    ],
                }
                for f in self.fissions
            ],
        }


class SpineSampler:
    """Precomputed spine dynamics for one ``(motion, law, triple)``."""

    def __init__(self, motion: MotionModel, law: BranchingLaw, triple: SpectralTriple):
        self.motion = motion
        self.law = law
        self.triple = triple
        self.spine_motion = h_transform(build_operator(motion, law), triple)
        self.fission_rate = (law.mean * law.beta).tolist()
        self.exit_rate = self.spine_motion.exit_rate.tolist()
        self.jump_cdf = [row.tolist() for row in self.spine_motion.jump_cdf]
        self.biased = []
        for x in range(motion.n_states):
            k, p = size_biased(law, x)
            cdf = np.cumsum(p)
            cdf[-1] = 1.0
            self.biased.append((k, cdf))

    def draw_biased(self, x: int, u: float) -> int:
        k, cdf = self.biased[x]
        return int(k[min(int(np.searchsorted(cdf, u, side="right")), k.size - 1)])

    def sample(self, x0: int, config: SimConfig, subtrees: bool = True) -> SpineRecord:
        """One realization; randomness comes from ``(config.seed, config.replicate)``.

        The spine uses stream ``(seed, replicate, 0)``; the subtrees born at
        the ``j``-th fission use ``(seed, replicate, 1, j)``.
        """
        u = UniformStream(stream(config.seed, config.replicate, 0))
        x, t = int(x0), 0.0
        horizon = config.horizon
        jumps: list[tuple[float, int]] = []
        fissions: list[Fission] = []
        spine_ids = [0]
        next_id = 1
        status = OK
        while True:
            a, b = self.exit_rate[x], self.fission_rate[x]
            rate = a + b
            if rate <= 0:
                break
            t += -math.log1p(-u.uniform()) / rate
            if t > horizon:
                break
            if u.uniform() * rate < b:
                r = self.draw_biased(x, u.uniform())
                c = min(int(u.uniform() * r), r - 1)
                child_ids = tuple(range(next_id, next_id + r))
                next_id += r
                spine_ids.append(child_ids[c])
                f = Fission(t, x, r, c + 1, child_ids)
                if subtrees:
                    next_id = self._grow(f, spine_weight=math.prod(1.0 / g.r for g in fissions),
                                         config=config, index=len(fissions), next_id=next_id)
                    if f.subtree.status == OVERFLOW:
                        status = OVERFLOW
                fissions.append(f)
            else:
                y = bisect_right(self.jump_cdf[x], u.uniform())
                jumps.append((t, y))
                x = y
        traj = Trajectory(int(x0), jumps, float(horizon))
        return SpineRecord(int(x0), traj, fissions, config.checkpoints, spine_ids,
                           status, config.replicate, subtrees)

    def _grow(self, f: Fission, spine_weight: float, config: SimConfig, index: int,
              next_id: int, path: tuple = ()) -> int:
        """Attach the ``r - 1`` non-spine children of ``f`` as a branching system."""
        roots = [i for j, i in enumerate(f.child_ids) if j != f.spine_child - 1]
        w = spine_weight / f.r
        init = PointMeasure([f.state] * len(roots), roots, f.time, [w] * len(roots))
        cfg = SimConfig(config.horizon, config.checkpoints, config.cap, config.seed,
                        config.replicate, record_events=config.record_events)
        rng = stream(config.seed, config.replicate, 1, index, *path)
        log, snaps = simulate(self.motion, self.law, init, cfg, rng=rng, t0=f.time, next_id=next_id)
        f.subtree, f.subtree_snapshots = log, snaps
        return log.next_id


def simulate_spine(motion: MotionModel, law: BranchingLaw, triple: SpectralTriple, x0: int,
                   config: SimConfig, subtrees: bool = True) -> SpineRecord:
    return SpineSampler(motion, law, triple).sample(x0, config, subtrees)


def unit_mass_identity(record: SpineRecord, t: float) -> float:
    """Sum over alive particles of the product of ``1/r`` along their ancestry."""
    pop = record.population(t)
    if pop is None:
        raise ValueError("population overflowed before t")
    return math.fsum(pop.weights.tolist())


def spine_rhs(record: SpineRecord, triple: SpectralTriple, t: float) -> float:
    """``exp(-lambda1 t) phi(spine_t) + sum_{fissions <= t} (r - 1) phi(spine) exp(-lambda1 time)``."""
    lam, phi = triple.lambda1, triple.phi
    val = math.exp(-lam * t) * phi[record.spine_state(t)]
    for f in record.fissions_before(t):
        val += (f.r - 1) * phi[f.state] * math.exp(-lam * f.time)
    return float(val)


def _scaled_mass(record: SpineRecord, triple: SpectralTriple, t: float) -> float:
    """``phi(x0) M_t(phi) = exp(-lambda1 t) <phi, X_t>`` on the reconstructed population."""
    pop = record.population(t)
    if pop is None:
        return math.nan
    return math.exp(-triple.lambda1 * t) * float(triple.phi[pop.states].sum())


def _mean_se(v) -> tuple[float, float]:
    v = np.asarray(v, dtype=float)
    v = v[np.isfinite(v)]
    if v.size < 2:
        return float(v.mean()) if v.size else math.nan, math.nan
    return float(v.mean()), float(v.std(ddof=1) / math.sqrt(v.size))


def spine_decomposition_check(records, triple: SpectralTriple, t: float) -> dict:
    """Compare the full-population estimate of ``phi(x) E[M_t]`` with the spine-only one.

    Both are computed on the same realizations, so the z-statistic uses the
    paired per-replicate difference.
    """
    records = list(records)
    for rec in records:
        if t > rec.horizon + 1e-12:
            raise ValueError(f"t={t} beyond record horizon {rec.horizon}")
    full = np.array([_scaled_mass(rec, triple, t) for rec in records])
    rhs = np.array([spine_rhs(rec, triple, t) for rec in records])
    ok = np.isfinite(full)
    mf, sf = _mean_se(full[ok])
    mr, sr = _mean_se(rhs[ok])
    md, sd = _mean_se(full[ok] - rhs[ok])
    z = 0.0 if md == 0 else (md / sd if sd > 0 else math.inf)
    return {
        "t": t, "n": int(ok.sum()), "n_overflow": int((~ok).sum()),
        "full_mean": mf, "full_se": sf, "spine_mean": mr, "spine_se": sr,
        "diff_mean": md, "diff_se": sd, "z": float(z),
    }


def nested_spine_check(record: SpineRecord, motion: MotionModel, law: BranchingLaw,
                       triple: SpectralTriple, t: float, inner: int = 100,
                       seed: int = 0, cap: int = 1_000_000) -> dict:
    """Conditional check for one fixed skeleton (spine path and fissions).

    The subtrees are resampled ``inner`` times; the mean of ``phi(x) M_t``
    over those resamples estimates its conditional expectation given the
    skeleton, which must equal :func:`spine_rhs`.
    """
    sampler = SpineSampler(motion, law, triple)
    cfg = SimConfig(max(t, 0.0), (t,), cap, seed, record.replicate, record_events=False)
    target = spine_rhs(record, triple, t)
    vals = []
    for i in range(inner):
        fs = []
        next_id = max(max(f.child_ids) for f in record.fissions) + 1 if record.fissions else 1
        w = 1.0
        for j, f in enumerate(record.fissions_before(t)):
            g = Fission(f.time, f.state, f.r, f.spine_child, f.child_ids)
            next_id = sampler._grow(g, w, cfg, j, next_id, path=(i,))
            w /= f.r
            fs.append(g)
        rec = SpineRecord(record.x0, record.trajectory, fs, (t,),
                          record.spine_ids[: len(fs) + 1], OK, record.replicate, True)
        vals.append(_scaled_mass(rec, triple, t))
    mean, se = _mean_se(vals)
    return {"t": t, "inner": inner, "mean": mean, "se": se, "rhs": target,
            "z": float((mean - target) / se) if se > 0 else (0.0 if mean == target else math.inf)}


def measure_change_check(motion: MotionModel, law: BranchingLaw, triple: SpectralTriple,
                         x0: int, t: float, g, config: SimConfig, n_replicates: int) -> dict:
    """Compare ``E_P[M_t g(X_t)]`` (forward runs) with ``E_Q[g(X_t)]`` (spine runs).

    ``g`` maps a :class:`PointMeasure` to a number.  Forward and spine
    ensembles use disjoint streams: forward replicates are indexed
    ``0..n-1`` and spine replicates ``n..2n-1`` under the same master seed.
    """
    cfg_base = dict(horizon=t, checkpoints=(t,), cap=config.cap, seed=config.seed,
                    record_events=False)
    lam, phi = triple.lambda1, triple.phi
    fwd = np.full(n_replicates, np.nan)
    for i in range(n_replicates):
        _, snaps = simulate(motion, law, [x0], SimConfig(replicate=i, **cfg_base))
        X = snaps[-1]
        if X is not None:
            M = math.exp(-lam * t) * float(phi[X.states].sum()) / phi[x0]
            fwd[i] = M * g(X)
    sampler = SpineSampler(motion, law, triple)
    sp = np.full(n_replicates, np.nan)
    for i in range(n_replicates):
        rec = sampler.sample(x0, SimConfig(replicate=n_replicates + i, **cfg_base))
        X = rec.population(t)
        if X is not None:
            sp[i] = g(X)
    n_over = int(np.isnan(fwd).sum() + np.isnan(sp).sum())
    if n_over > OVERFLOW_CONTAMINATION * 2 * n_replicates:
        raise ValueError(f"{n_over} overflowed replicates exceed the contamination limit")
    mp, sep = _mean_se(fwd)
    mq, seq = _mean_se(sp)
    z = (mp - mq) / math.hypot(sep, seq) if math.hypot(sep, seq) > 0 else 0.0
    return {"t": t, "n": n_replicates, "n_overflow": n_over, "p_mean": mp, "p_se": sep,
            "q_mean": mq, "q_se": seq, "z": float(z)}
