"""Ensemble runs and the statistical verdicts built on them.

Replicate ``i`` always draws from stream ``(seed, i)``; results are stored
by replicate index, so summaries do not depend on how replicates were
distributed over worker processes.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import expm

from .branching_law import BranchingLaw, HeavyOffspring, l_functional
from .forward_sim import OVERFLOW, EXTINCT, SimConfig, simulate
from .motion import MotionModel
from .spectral import FeynmanKacOperator, SpectralTriple, build_operator, principal_triple

__all__ = [
    "EnsembleResult",
    "SllnVerdict",
    "dichotomy_experiment",
    "expected_fissions",
    "run_ensemble",
    "summarize",
    "verify_ratio_limit",
    "verify_slln",
]

log = logging.getLogger(__name__)

Z_THRESHOLD = 4.0
MAX_EXCLUDED_FRACTION = 0.2
MIN_SURVIVORS = 100
MEDIAN_STABILITY = 0.15
CONTROL_MEDIAN_BAND = (0.1, 10.0)
SUMMARY_COLUMNS = ("t", "mean", "median", "se", "q25", "q75", "n_accepted", "n_overflow")


@dataclass
class EnsembleResult:
    checkpoints: np.ndarray
    counts: np.ndarray  # (replicate, checkpoint, state) occupancy
    status: np.ndarray  # per replicate: "ok" | "overflow" | "extinct"
    x0: int
    triple: SpectralTriple
    op: FeynmanKacOperator
    seed: int = 0
    meta: dict = field(default_factory=dict)

    @property
    def n_replicates(self) -> int:
        return self.counts.shape[0]

    @property
    def accepted(self) -> np.ndarray:
        return self.status != OVERFLOW

    @property
    def n_overflow(self) -> int:
        return int((self.status == OVERFLOW).sum())

    @property
    def n_extinct(self) -> int:
        return int((self.status == EXTINCT).sum())

    def observable(self, f) -> np.ndarray:
        """``<f, X_t>`` per replicate and checkpoint (``nan`` for overflowed replicates)."""
        vals = self.counts @ np.asarray(f, dtype=float)
        vals[~self.accepted] = np.nan
        return vals

    def scaled(self, f) -> np.ndarray:
        return np.exp(-self.triple.lambda1 * self.checkpoints)[None, :] * self.observable(f)

    @property
    def W(self) -> np.ndarray:
        """``exp(-lambda1 t) <phi, X_t>``."""
        return self.scaled(self.triple.phi)

    def U(self, f) -> np.ndarray:
        """``exp(-lambda1 t) <f phi, X_t>``."""
        return self.scaled(np.asarray(f, dtype=float) * self.triple.phi)

    def summary(self, values=None) -> list[dict]:
        return summarize(self.checkpoints, self.W if values is None else values, self.n_overflow)


def summarize(checkpoints, values, n_overflow: int = 0) -> list[dict]:
    rows = []
    for j, t in enumerate(checkpoints):
        v = values[:, j]
        v = v[np.isfinite(v)]
        n = int(v.size)
        if n == 0:
            rows.append(dict(t=float(t), mean=math.nan, median=math.nan, se=math.nan,
                             q25=math.nan, q75=math.nan, n_accepted=0, n_overflow=n_overflow))
            continue
        q25, med, q75 = np.quantile(v, [0.25, 0.5, 0.75])
        rows.append(dict(
            t=float(t), mean=float(v.mean()), median=float(med),
            se=float(v.std(ddof=1) / math.sqrt(n)) if n > 1 else math.nan,
            q25=float(q25), q75=float(q75), n_accepted=n, n_overflow=n_overflow,
        ))
    return rows


def _run_chunk(args):
    motion, law, x0, cfg, indices = args
    n = motion.n_states
    counts = np.zeros((len(indices), len(cfg["checkpoints"]), n), dtype=np.int64)
    status = []
    for a, i in enumerate(indices):
        lg, snaps = simulate(motion, law, [x0], SimConfig(replicate=i, record_events=False, **cfg))
        for j, s in enumerate(snaps):
            if s is not None:
                counts[a, j] = s.counts(n)
        status.append(lg.status)
    return indices, counts, status


def run_ensemble(motion: MotionModel, law: BranchingLaw, triple: SpectralTriple | None,
                 x0: int, config: SimConfig, n_replicates: int,
                 workers: int = 1) -> EnsembleResult:
    """Run ``n_replicates`` forward simulations from one particle at ``x0``."""
    if n_replicates < 1:
        raise ValueError("need at least one replicate")
    if config.seed is None:
        raise ValueError("a master seed is required")
    op = build_operator(motion, law)
    if triple is None:
        triple = principal_triple(op)
    cfg = dict(horizon=config.horizon, checkpoints=config.checkpoints, cap=config.cap,
               seed=config.seed)
    n_chunks = max(1, min(n_replicates, 4 * workers))
    chunks = [list(c) for c in np.array_split(np.arange(n_replicates), n_chunks) if len(c)]
    jobs = [(motion, law, x0, cfg, [int(i) for i in c]) for c in chunks]
    counts = np.zeros((n_replicates, len(config.checkpoints), motion.n_states), dtype=np.int64)
    status = np.empty(n_replicates, dtype=object)
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_chunk, jobs))
    else:
        results = [_run_chunk(j) for j in jobs]
    for idx, c, st in results:
        counts[idx] = c
        status[idx] = st
    res = EnsembleResult(np.asarray(config.checkpoints, dtype=float), counts, status.astype(str),
                         int(x0), triple, op, int(config.seed))
    if res.n_overflow == n_replicates:
        raise RuntimeError("every replicate overflowed the population cap at this horizon")
    return res


@dataclass
class SllnVerdict:
    target: float
    checkpoints: np.ndarray
    median: np.ndarray
    q25: np.ndarray
    q75: np.ndarray
    n_used: int
    tolerance: float
    median_ok: bool
    band_shrinking: bool
    recommended_terminal: float | None = None

    @property
    def passed(self) -> bool:
        return self.median_ok and self.band_shrinking

    def to_json(self) -> dict:
        return {
            "target": self.target, "t": self.checkpoints.tolist(), "median": self.median.tolist(),
            "q25": self.q25.tolist(), "q75": self.q75.tolist(), "n_used": self.n_used,
            "tolerance": self.tolerance, "median_ok": self.median_ok,
            "band_shrinking": self.band_shrinking, "passed": self.passed,
            "recommended_terminal": self.recommended_terminal,
        }


def slln_ratio(ens: EnsembleResult, f) -> np.ndarray:
    """``exp(-lambda1 t) <f, X_t> / W_t`` where ``W_t > 0`` (``nan`` elsewhere)."""
    num = ens.scaled(f)
    W = ens.W
    out = np.full_like(W, np.nan)
    ok = np.isfinite(W) & (W > 0)
    out[ok] = num[ok] / W[ok]
    return out


def verify_slln(ens: EnsembleResult, triple: SpectralTriple, f, tolerance: float,
                iu=None) -> SllnVerdict:
    """Median of ``exp(-lambda1 t) <f, X_t> / W_t`` against ``sum phi_tilde f m``.

    Passes when the terminal median is within ``tolerance`` of the target
    and the interquartile width does not grow over the last three
    checkpoints.
    """
    f = np.asarray(f, dtype=float)
    target = float(np.dot(triple.phi_tilde * f, ens.op.m))
    R = slln_ratio(ens, f)
    alive = np.isfinite(R[:, -1])
    if alive.sum() < MIN_SURVIVORS:
        raise ValueError(f"only {int(alive.sum())} surviving replicates (need {MIN_SURVIVORS})")
    R = R[alive]
    q25, med, q75 = np.quantile(R, [0.25, 0.5, 0.75], axis=0)
    width = q75 - q25
    last = width[-3:]
    shrinking = bool(np.all(np.diff(last) <= 0))
    return SllnVerdict(
        target=target, checkpoints=ens.checkpoints, median=med, q25=q25, q75=q75,
        n_used=int(alive.sum()), tolerance=tolerance,
        median_ok=bool(abs(med[-1] - target) <= tolerance), band_shrinking=shrinking,
        recommended_terminal=None if iu is None else iu.terminal_time(tolerance),
    )


def verify_ratio_limit(ens: EnsembleResult, triple: SpectralTriple, B) -> dict:
    """Compare ``X_t(B) / E[X_t(B)]`` with ``W_t / phi(x0)`` replicate by replicate."""
    B = np.atleast_1d(np.asarray(B, dtype=int))
    n = ens.op.motion.n_states
    if B.size == 0:
        raise ValueError("B must be nonempty")
    ind = np.zeros(n)
    ind[B] = 1.0
    if np.dot(ind, ens.op.m) <= 0:
        raise ValueError("B must have positive m-mass")
    # work with exp(t (M - lambda1)) so the expectation stays O(1) and well conditioned
    shifted = np.asarray(ens.op.matrix) - triple.lambda1 * np.eye(n)
    scaled_means = np.array([(expm(t * shifted) @ ind)[ens.x0] for t in ens.checkpoints])
    means = scaled_means * np.exp(triple.lambda1 * ens.checkpoints)
    ratio = ens.scaled(ind) / scaled_means[None, :]
    wr = ens.W / triple.phi[ens.x0]
    ok = np.isfinite(ratio[:, -1])
    if ok.sum() < MIN_SURVIVORS and ens.n_replicates >= MIN_SURVIVORS:
        raise ValueError(f"only {int(ok.sum())} usable replicates")
    dev = np.abs(ratio[ok] - wr[ok])
    mad = dev.mean(axis=0)
    return {
        "B": B.tolist(), "t": ens.checkpoints.tolist(), "expected": means.tolist(),
        "mean_abs_deviation": mad.tolist(), "max_abs_deviation": dev.max(axis=0).tolist(),
        "decreasing": bool(np.all(np.diff(mad[-3:]) < 0)) if mad.size >= 3 else None,
        "n_used": int(ok.sum()),
    }


def expected_fissions(op: FeynmanKacOperator, x0: int, horizon: float) -> float:
    """Expected number of fissions on ``[0, horizon]`` from one particle at ``x0``.

    Equals ``int_0^T (exp(sM) beta)(x0) ds``, read off the exponential of
    the block matrix ``[[M, beta], [0, 0]]``.
    """
    n = op.matrix.shape[0]
    aug = np.zeros((n + 1, n + 1))
    aug[:n, :n] = op.matrix
    aug[:n, n] = op.law.beta
    return float(expm(horizon * aug)[x0, n])


def _heavy_tail_exposure(op: FeynmanKacOperator, x0: int, horizon: float) -> float:
    """Expected number of fissions that would have drawn beyond ``kmax`` untruncated."""
    tails = [o.tail_probability(o.kmax) for o in op.law.offspring if isinstance(o, HeavyOffspring)]
    if not tails:
        return 0.0
    return expected_fissions(op, x0, horizon) * max(tails)


def dichotomy_experiment(motion: MotionModel, heavy_law: BranchingLaw, control_law: BranchingLaw,
                         x0: int, config: SimConfig, n_replicates: int, workers: int = 1) -> dict:
    """Median of ``W_t`` under a law with infinite LlogL moment versus a finite control.

    The medians carry the verdict; means stay near ``phi(x0)`` either way.
    The verdict is refused when truncation at ``kmax`` is visible at the
    horizon (an expected one or more fissions would have drawn beyond it)
    or when more than 20% of replicates overflow.
    """
    out = {"x0": x0, "t": list(config.checkpoints), "refused": False, "reasons": []}
    laws = {"heavy": heavy_law, "control": control_law}
    for name, law in laws.items():
        op = build_operator(motion, law)
        tr = principal_triple(op)
        rep = l_functional(law, tr.phi, tr.phi_tilde, motion.m)
        exposure = _heavy_tail_exposure(op, x0, config.horizon)
        out[name] = {"lambda1": tr.lambda1, "A": law.mean.tolist(),
                     "llogl_divergent": rep.integral_divergent, "llogl_integral": rep.integral,
                     "truncation_exposure": exposure}
        if name == "heavy" and not rep.integral_divergent:
            raise ValueError("heavy law is not flagged LlogL-divergent")
        if name == "control" and rep.integral_divergent:
            raise ValueError("control law must have a finite LlogL integral")
        if exposure >= 1.0:
            out["refused"] = True
            out["reasons"].append(
                f"{name}: kmax truncation visible at horizon (expected {exposure:.3g} "
                "fissions beyond kmax)")
            continue
        ens = run_ensemble(motion, law, tr, x0, config, n_replicates, workers)
        rows = ens.summary()
        out[name].update({
            "summary": rows, "n_overflow": ens.n_overflow,
            "phi_x0": float(tr.phi[x0]),
        })
        if ens.n_overflow > MAX_EXCLUDED_FRACTION * n_replicates:
            out["refused"] = True
            out["reasons"].append(f"{name}: {ens.n_overflow} overflowed replicates")
    if out["refused"]:
        out["passed"] = None
        return out

    h, c = out["heavy"], out["control"]
    h_med = np.array([r["median"] for r in h["summary"]])
    c_med = np.array([r["median"] for r in c["summary"]])
    lo, hi = CONTROL_MEDIAN_BAND
    c_stable = bool(abs(c_med[-1] - c_med[-2]) <= MEDIAN_STABILITY * c_med[-1]) if c_med.size > 1 else True
    checks = {
        "control_median_in_band": bool(lo < c_med[-1] < hi),
        "control_median_stable": c_stable,
        "heavy_median_decreasing": bool(np.all(np.diff(h_med) < 0)),
    }
    for name in ("heavy", "control"):
        rows = out[name]["summary"]
        phi0 = out[name]["phi_x0"]
        z = [abs(r["mean"] - phi0) / r["se"] if r["se"] > 0 else 0.0 for r in rows]
        out[name]["mean_z"] = z
        checks[f"{name}_mean_within_4se"] = bool(max(z) <= Z_THRESHOLD)
    out["checks"] = checks
    out["passed"] = all(checks.values())
    return out
