"""Built-in models: ``yule2``, ``asym3``, ``heavy`` and ``griddiff``."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources

import numpy as np

from .branching_law import BranchingLaw, HeavyOffspring, build_law, law_from_json
from .motion import MotionModel, build_motion, grid_diffusion, motion_from_json

__all__ = ["Fixture", "FIXTURES", "frozen_constants", "get_fixture", "model_hash"]


@dataclass(frozen=True, eq=False)
class Fixture:
    name: str
    motion: MotionModel
    law: BranchingLaw
    x0: int = 0
    control_law: BranchingLaw | None = None
    description: str = ""

    def to_json(self) -> dict:
        doc = {"motion": self.motion.to_json(), "law": self.law.to_json(), "x0": self.x0}
        if self.control_law is not None:
            doc["control_law"] = self.control_law.to_json()
        return doc


def _yule2() -> Fixture:
    motion = build_motion(2, [1.0, 1.0], [[0, 1], [1, 0]])
    law = build_law([1.0, 1.0], [0, 0, 1])
    return Fixture("yule2", motion, law, 0,
                   description="symmetric two-state chain, unit binary splitting (Yule count)")


def _asym3() -> Fixture:
    motion = build_motion(3, None, [[0, 1, 0], [2, 0, 1], [0, 1, 0]])
    law = build_law([1.0, 0.5, 0.25], [0, 0, 1])
    return Fixture("asym3", motion, law, 0,
                   description="non-reversible three-state chain with state-dependent splitting rate")


def heavy_fixture(kmax: int = 1_000_000) -> Fixture:
    """Yule2 motion with ``p_k ~ 1/(k^2 log^2 k)``; ``beta = 1/(A - 1)`` so ``lambda1 = 1``."""
    base = _yule2()
    off = HeavyOffspring("k2log2", kmax)
    beta = np.full(2, 1.0 / (off.mean - 1.0))
    return Fixture("heavy", base.motion, build_law(beta, off), 0, control_law=base.law,
                   description="infinite LlogL moment, growth rate matched to the yule2 control")


def _griddiff() -> Fixture:
    n = 21
    motion = grid_diffusion(n, diffusion=0.05)
    x = np.linspace(0.0, 1.0, n)
    law = build_law(1.0 + x, [0, 0, 0.5, 0.5])
    return Fixture("griddiff", motion, law, n // 2,
                   description="reflecting grid diffusion on [0,1], branching rate 1 + x")


FIXTURES = {"yule2": _yule2, "asym3": _asym3, "heavy": heavy_fixture, "griddiff": _griddiff}


@lru_cache(maxsize=None)
def get_fixture(name: str) -> Fixture:
    try:
        return FIXTURES[name]()
    except KeyError:
        raise KeyError(f"unknown fixture {name!r}; known: {sorted(FIXTURES)}") from None


def fixture_from_json(doc: dict) -> Fixture:
    """Inline model: ``{"motion": {...}, "law": {...}, "x0": 0, "control_law": {...}}``."""
    unknown = set(doc) - {"motion", "law", "x0", "control_law"}
    if unknown:
        raise ValueError(f"model: unknown fields {sorted(unknown)}")
    for key in ("motion", "law"):
        if key not in doc:
            raise ValueError(f"model.{key}: required field missing")
    try:
        motion = motion_from_json(doc["motion"])
    except (ValueError, KeyError, TypeError) as e:
        raise ValueError(f"model.motion: {e}") from e
    try:
        law = law_from_json(doc["law"])
        control = law_from_json(doc["control_law"]) if "control_law" in doc else None
    except (ValueError, KeyError, TypeError) as e:
        raise ValueError(f"model.law: {e}") from e
    return Fixture("inline", motion, law, int(doc.get("x0", 0)), control)


@lru_cache(maxsize=None)
def frozen_constants(name: str) -> dict:
    """Regression constants stored next to the package (see ``provenance`` in each file)."""
    text = resources.files("huntbranch").joinpath("data", f"{name}.json").read_text()
    return json.loads(text)


def model_hash(doc: dict) -> str:
    canon = json.dumps(doc, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()[:16]
