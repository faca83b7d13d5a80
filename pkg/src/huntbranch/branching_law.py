"""Branching rates and offspring distributions.

Offspring counts are always at least two (no deaths without issue, no
single-child fissions).  Two kinds of per-state offspring law exist:

* :class:`FiniteOffspring`, an explicit pmf ``p[k]`` for ``k = 0..K``;
* :class:`HeavyOffspring`, a parametric family ``p_k ~ C g(k)`` for
  ``k >= 2``.  Sampling and the mean use the family truncated at ``kmax``
  and renormalised; the LlogL analysis uses the untruncated family, since a
  truncated law always has a finite ``k log k`` moment.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy import integrate, special

__all__ = [
    "BranchingLaw",
    "FiniteOffspring",
    "HeavyOffspring",
    "LlogLReport",
    "build_law",
    "evaluate_gf",
    "l_functional",
    "law_from_json",
    "mean_offspring",
    "reduce_single_child",
    "size_biased",
]

PMF_TOL = 1e-12
MEAN_TAIL_TOL = 1e-9
N_BLOCKS = 64
EXACT_BLOCKS = 20
DIVERGENCE_RATIO = 0.5


@dataclass(frozen=True, eq=False)
class FiniteOffspring:
    p: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.p, dtype=float)
        if p.ndim != 1 or p.size < 3:
            raise ValueError("offspring pmf must cover at least k = 0, 1, 2")
        if np.any(p < 0) or not np.all(np.isfinite(p)):
            raise ValueError("offspring probabilities must be finite and nonnegative")
        if p[0] != 0:
            raise ValueError("p_0 > 0 is not allowed: the population must not die out by branching")
        if p[1] != 0:
            raise ValueError("p_1 > 0 is not allowed; use reduce_single_child() first")
        if abs(p.sum() - 1.0) > PMF_TOL:
            raise ValueError(f"offspring pmf sums to {p.sum()!r}, not 1")
        p = np.trim_zeros(p, "b")
        p.setflags(write=False)
        object.__setattr__(self, "p", p)

    @property
    def kmax(self) -> int:
        return self.p.size - 1

    @property
    def support(self) -> np.ndarray:
        return np.arange(self.p.size)

    @property
    def pmf(self) -> tuple[np.ndarray, np.ndarray]:
        k = np.nonzero(self.p)[0]
        return k, self.p[k]

    @property
    def mean(self) -> float:
        return float(np.dot(self.support, self.p))

    mean_tail_bound = 0.0


def _k2log2(k):
    k = np.asarray(k, dtype=float)
    return 1.0 / (k**2 * np.log(k) ** 2)


@dataclass(frozen=True, eq=False)
class HeavyOffspring:
    """``p_k proportional to g(k)`` on ``2 <= k <= kmax``.

    Families: ``"k2log2"`` with ``g(k) = 1 / (k^2 log^2 k)`` (finite mean,
    infinite ``k log k`` moment) and ``"power"`` with ``g(k) = k^-exponent``.
    """

    family: str = "k2log2"
    kmax: int = 1_000_000
    exponent: float = 3.0

    def __post_init__(self):
        if self.family not in ("k2log2", "power"):
            raise ValueError(f"unknown heavy-tail family {self.family!r}")
        if int(self.kmax) < 2:
            raise ValueError("kmax must be at least 2")
        if self.family == "power" and self.exponent <= 2:
            raise ValueError("power family needs exponent > 2 for a finite mean")
        object.__setattr__(self, "kmax", int(self.kmax))

    def g(self, k):
        if self.family == "k2log2":
            return _k2log2(k)
        return np.asarray(k, dtype=float) ** (-self.exponent)

    def _tail_integral(self, K: float) -> float:
        """Integral of ``g`` over ``[K, inf)``."""
        if self.family == "k2log2":
            # substitute u = log x: int_a^inf e^-u u^-2 du = E_2(a) / a
            a = math.log(K)
            return float(special.expn(2, a) / a)
        return K ** (1.0 - self.exponent) / (self.exponent - 1.0)

    def _mean_tail_integral(self, K: float) -> float:
        """Integral of ``k g(k)`` over ``[K, inf)``."""
        if self.family == "k2log2":
            return 1.0 / math.log(K)
        return K ** (2.0 - self.exponent) / (self.exponent - 2.0)

    @cached_property
    def _weights(self) -> np.ndarray:
        return self.g(np.arange(2, self.kmax + 1))

    @cached_property
    def normalizer(self) -> float:
        """Normalising constant of the truncated law."""
        return float(1.0 / math.fsum(self._weights))

    @cached_property
    def untruncated_normalizer(self) -> float:
        head = math.fsum(self._weights)
        return float(1.0 / (head + self._tail_integral(self.kmax + 0.5)))

    @property
    def pmf(self) -> tuple[np.ndarray, np.ndarray]:
        return np.arange(2, self.kmax + 1), self._weights * self.normalizer

    @cached_property
    def cdf(self) -> np.ndarray:
        c = np.cumsum(self.pmf[1])
        c[-1] = 1.0
        return c

    @cached_property
    def mean(self) -> float:
        k, p = self.pmf
        return float(np.dot(k, p))

    @cached_property
    def mean_tail_bound(self) -> float:
        """Upper bound on the part of the untruncated mean beyond ``kmax``."""
        return self.untruncated_normalizer * self._mean_tail_integral(self.kmax)

    def untruncated_mean(self) -> float:
        """Mean of the untruncated family: partial sum plus integral-test bracket midpoint."""
        C = self.untruncated_normalizer
        k, _ = self.pmf
        head = C * float(np.dot(k, self._weights))
        hi = C * self._mean_tail_integral(self.kmax)
        lo = C * self._mean_tail_integral(self.kmax + 1)
        if hi - lo > MEAN_TAIL_TOL:
            raise ValueError(
                f"mean tail bracket {hi - lo:.3g} exceeds {MEAN_TAIL_TOL}; increase kmax"
            )
        return head + 0.5 * (hi + lo)

    def tail_probability(self, k: int) -> float:
        """``P(K > k)`` under the untruncated family."""
        if k < 2:
            return 1.0
        C = self.untruncated_normalizer
        if k < self.kmax:
            return float(max(1.0 - C * math.fsum(self._weights[: k - 1]), 0.0))
        return float(C * self._tail_integral(k + 0.5))

    def to_json(self) -> dict:
        doc = {"type": "heavy", "exponent_family": self.family, "kmax": self.kmax}
        if self.family == "power":
            doc["exponent"] = self.exponent
        return doc


@dataclass(frozen=True, eq=False)
class BranchingLaw:
    beta: np.ndarray
    offspring: tuple = field(default=())

    @property
    def n_states(self) -> int:
        return self.beta.shape[0]

    @property
    def mean(self) -> np.ndarray:
        """``A(x)`` for every state (truncated mean for heavy laws)."""
        return np.array([o.mean for o in self.offspring])

    def to_json(self) -> dict:
        docs = []
        for o in self.offspring:
            if isinstance(o, HeavyOffspring):
                docs.append(o.to_json())
            else:
                k, p = o.pmf
                docs.append({"type": "finite", "p": {str(int(a)): float(b) for a, b in zip(k, p)}})
        return {"beta": self.beta.tolist(), "offspring": docs}


@dataclass
class LlogLReport:
    l: np.ndarray
    divergent: np.ndarray
    integral: float
    integral_divergent: bool
    block_ratio: np.ndarray
    threshold: float = DIVERGENCE_RATIO


def build_law(beta, offspring) -> BranchingLaw:
    """Validate per-state rates and offspring laws.

    ``offspring`` may be a single law shared by all states or one law per
    state; plain sequences are read as pmfs ``p[0], p[1], ...``.
    """
    beta = np.atleast_1d(np.asarray(beta, dtype=float)).copy()
    if np.any(beta < 0) or not np.all(np.isfinite(beta)):
        raise ValueError("branching rates must be finite and nonnegative")
    if isinstance(offspring, (FiniteOffspring, HeavyOffspring)) or (
        len(offspring) and np.isscalar(offspring[0])
    ):
        offspring = [offspring] * beta.size
    if len(offspring) != beta.size:
        raise ValueError(f"{len(offspring)} offspring laws for {beta.size} states")
    laws = tuple(
        o if isinstance(o, (FiniteOffspring, HeavyOffspring)) else FiniteOffspring(np.asarray(o))
        for o in offspring
    )
    beta.setflags(write=False)
    return BranchingLaw(beta=beta, offspring=laws)


def reduce_single_child(beta, p):
    """Remove single-child fissions: ``beta' = beta (1 - p_1)``, ``p'_k = p_k / (1 - p_1)``.

    A fission with one child leaves the system unchanged, so the reduced
    law generates the same particle system.  Returns ``(beta', p')``.
    """
    p = np.asarray(p, dtype=float).copy()
    if p.size < 2 or p[1] >= 1:
        raise ValueError("p_1 must be < 1")
    q = 1.0 - p[1]
    p[1] = 0.0
    return beta * q, p / q


def law_from_json(doc) -> BranchingLaw:
    """Parse ``{"beta": [...], "offspring": [...]}``.

    Offspring entries are ``{"type": "finite", "p": {"2": ..., ...}}`` or
    ``{"type": "heavy", "exponent_family": "k2log2", "kmax": 1000000}``.  A
    single entry (not a list) is shared by every state, as is a bare list of
    probabilities ``[p_0, p_1, ...]``.
    """
    if isinstance(doc, (str, bytes)):
        doc = json.loads(doc)
    unknown = set(doc) - {"beta", "offspring"}
    if unknown:
        raise ValueError(f"unknown law fields: {sorted(unknown)}")
    beta = np.atleast_1d(np.asarray(doc["beta"], dtype=float))
    entries = doc["offspring"]
    if isinstance(entries, dict):
        entries = [entries] * beta.size
    elif entries and all(isinstance(v, (int, float)) for v in entries):
        return build_law(beta, FiniteOffspring(np.asarray(entries, dtype=float)))
    laws = []
    for i, e in enumerate(entries):
        if not isinstance(e, dict):
            raise ValueError(f"offspring[{i}]: expected an object or a list of probabilities")
        kind = e.get("type")
        if kind == "finite":
            probs = {int(k): float(v) for k, v in e["p"].items()}
            if min(probs) < 0:
                raise ValueError(f"offspring[{i}]: negative count")
            p = np.zeros(max(probs) + 1)
            for k, v in probs.items():
                p[k] = v
            laws.append(FiniteOffspring(p))
        elif kind == "heavy":
            laws.append(HeavyOffspring(
                e.get("exponent_family", "k2log2"), int(e.get("kmax", 1_000_000)),
                float(e.get("exponent", 3.0)),
            ))
        else:
            raise ValueError(f"offspring[{i}]: unknown type {kind!r}")
    return build_law(beta, laws)


def evaluate_gf(law: BranchingLaw, x: int, z: float) -> float:
    """Offspring generating function ``sum_k p_k(x) z^k``."""
    if abs(z) > 1:
        raise ValueError("generating function is evaluated on |z| <= 1")
    k, p = law.offspring[x].pmf
    if z == 1:
        return float(math.fsum(p))
    return float(np.dot(p, np.power(float(z), k)))


def mean_offspring(law: BranchingLaw, x: int, truncated: bool = True) -> float:
    """``A(x)``.  ``truncated=False`` asks heavy laws for the untruncated family mean."""
    o = law.offspring[x]
    if not truncated and isinstance(o, HeavyOffspring):
        return o.untruncated_mean()
    return o.mean


def size_biased(law: BranchingLaw, x: int) -> tuple[np.ndarray, np.ndarray]:
    """Size-biased offspring pmf ``k p_k / A`` as ``(counts, probabilities)``."""
    k, p = law.offspring[x].pmf
    w = k * p
    return k, w / w.sum()


def _dyadic_blocks(o: HeavyOffspring, phi: float) -> np.ndarray:
    """Sums of ``k phi log+(k phi) p_k`` over ``[2^j, 2^(j+1))``, ``j = 1..N_BLOCKS``."""
    C = o.untruncated_normalizer

    def term(k):
        k = np.asarray(k, dtype=float)
        a = k * phi
        return a * np.log(np.maximum(a, 1.0)) * o.g(k) * C

    blocks = np.empty(N_BLOCKS)
    for j in range(1, N_BLOCKS + 1):
        lo, hi = 2**j, 2 ** (j + 1)
        if j <= EXACT_BLOCKS:
            blocks[j - 1] = math.fsum(term(np.arange(lo, hi)))
        else:
            # integrate in u = log k; the summand is smooth and monotone this far out
            val, _ = integrate.quad(lambda u: float(term(math.exp(u))) * math.exp(u),
                                    math.log(lo), math.log(hi))
            blocks[j - 1] = val
    return blocks


def l_functional(law: BranchingLaw, phi, phi_tilde=None, m=None) -> LlogLReport:
    """``l(x) = sum_k k phi(x) log+(k phi(x)) p_k(x)`` and its weighted integral.

    The integral is ``sum_x phi_tilde(x) beta(x) l(x) m(x)`` (computed only
    when ``phi_tilde`` is given).  Heavy laws are analysed on the untruncated
    family through 64 dyadic blocks ``b_j``: the series is declared divergent
    when ``j b_j`` at block 64 is at least half its value at block 32, i.e.
    the blocks decay no faster than ``1/log K``.
    """
    phi = np.broadcast_to(np.asarray(phi, dtype=float), (law.n_states,))
    if np.any(phi <= 0):
        raise ValueError("phi must be strictly positive")
    n = law.n_states
    l = np.zeros(n)
    div = np.zeros(n, dtype=bool)
    ratios = np.full(n, np.nan)
    for x, o in enumerate(law.offspring):
        if isinstance(o, HeavyOffspring):
            b = _dyadic_blocks(o, phi[x])
            j = np.arange(1, N_BLOCKS + 1)
            s = j * b
            ratios[x] = s[-1] / s[N_BLOCKS // 2 - 1] if s[N_BLOCKS // 2 - 1] > 0 else 0.0
            if ratios[x] >= DIVERGENCE_RATIO:
                div[x] = True
                l[x] = np.inf
            else:
                l[x] = math.fsum(b)
        else:
            k, p = o.pmf
            a = k * phi[x]
            l[x] = math.fsum(a * np.log(np.maximum(a, 1.0)) * p)
    integral, integral_div = math.nan, False
    if phi_tilde is not None:
        m = np.ones(n) if m is None else np.asarray(m, dtype=float)
        w = np.asarray(phi_tilde, dtype=float) * law.beta * m
        integral_div = bool(np.any(div & (w > 0)))
        integral = math.inf if integral_div else math.fsum(np.where(w > 0, w * l, 0.0))
    return LlogLReport(l=l, divergent=div, integral=integral,
                       integral_divergent=integral_div, block_ratio=ratios)
