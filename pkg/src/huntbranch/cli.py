"""Command-line entry point ``hunt-branch`` and run-spec handling.

Usage::

    hunt-branch <command> --spec run.json [--seed N] [--out DIR]

A run spec is a JSON object with fields ``command``, ``fixture`` or
``model``, ``params``, ``seed``, ``replicates`` and ``out``.  Unknown
fields are rejected.  Exit status: 0 success, 1 verdict failed,
2 configuration error, 3 experiment refused or dominated by overflow.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import os
import sys
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .branching_law import build_law, l_functional
from .fixtures import FIXTURES, Fixture, fixture_from_json, get_fixture, heavy_fixture, model_hash
from .forward_sim import OVERFLOW, SimConfig, simulate
from .harness import (
    SUMMARY_COLUMNS,
    dichotomy_experiment,
    run_ensemble,
    slln_ratio,
    summarize,
    verify_ratio_limit,
    verify_slln,
)
from .rng import GENERATOR_NAME
from .spectral import build_operator, h_transform, iu_fit, principal_triple
from .spine_sim import SpineSampler, spine_decomposition_check, unit_mass_identity

__all__ = ["RunSpec", "SpecError", "dispatch", "load_spec", "main"]

log = logging.getLogger(__name__)

COMMANDS = ("spectrum", "simulate", "spine", "verify", "fixtures")
STOCHASTIC = ("simulate", "spine", "verify")
VERIFY_MODES = ("slln", "martingale", "dichotomy", "spine")
SPEC_FIELDS = {"command", "fixture", "model", "params", "seed", "replicates", "out"}
OUT_ENV = "HUNT_BRANCH_OUT"

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_OVERFLOW = 0, 1, 2, 3

PARAMS = {
    "spectrum": {"t_grid", "method"},
    "simulate": {"horizon", "checkpoints", "cap", "x0", "workers"},
    "spine": {"horizon", "checkpoints", "cap", "x0", "subtrees"},
    "verify": {"mode", "horizon", "checkpoints", "cap", "x0", "workers", "f", "B",
               "tolerance", "kmax"},
    "fixtures": set(),
}


class SpecError(ValueError):
    """Invalid run spec; the message names the offending field."""


@dataclass
class RunSpec:
    command: str
    fixture: str | None = None
    model: dict | None = None
    params: dict = field(default_factory=dict)
    seed: int | None = None
    replicates: int = 1
    out: str | None = None

    def to_json(self) -> dict:
        return {k: v for k, v in asdict(self).items() if v is not None}

    def resolve(self) -> Fixture:
        if self.fixture is not None:
            if self.fixture == "heavy" and "kmax" in self.params:
                return heavy_fixture(int(self.params["kmax"]))
            return get_fixture(self.fixture)
        return fixture_from_json(self.model)


def load_spec(document) -> RunSpec:
    """Validate a run spec given as a JSON string, bytes or an already-parsed dict."""
    if isinstance(document, (str, bytes)):
        try:
            document = json.loads(document)
        except json.JSONDecodeError as e:
            raise SpecError(f"<document>: malformed JSON ({e})") from e
    if not isinstance(document, dict):
        raise SpecError("<document>: expected a JSON object")
    unknown = set(document) - SPEC_FIELDS
    if unknown:
        raise SpecError(f"{sorted(unknown)[0]}: unknown field")
    if "command" not in document:
        raise SpecError("command: required field missing")
    cmd = document["command"]
    if cmd not in COMMANDS:
        raise SpecError(f"command: must be one of {COMMANDS}, got {cmd!r}")
    if cmd != "fixtures":
        has_f, has_m = "fixture" in document, "model" in document
        if has_f == has_m:
            raise SpecError("fixture: exactly one of 'fixture' or 'model' is required")
        if has_f and document["fixture"] not in FIXTURES:
            raise SpecError(f"fixture: unknown fixture id {document['fixture']!r}")
    seed = document.get("seed")
    if cmd in STOCHASTIC and seed is None:
        raise SpecError(f"seed: required for command {cmd!r}")
    if seed is not None and (not isinstance(seed, int) or isinstance(seed, bool) or seed < 0):
        raise SpecError("seed: must be a nonnegative integer")
    reps = document.get("replicates", 1)
    if not isinstance(reps, int) or isinstance(reps, bool) or reps < 1:
        raise SpecError("replicates: must be a positive integer")
    params = document.get("params", {})
    if not isinstance(params, dict):
        raise SpecError("params: must be an object")
    bad = set(params) - PARAMS[cmd]
    if bad:
        raise SpecError(f"params.{sorted(bad)[0]}: unknown parameter for {cmd!r}")
    if cmd == "verify" and params.get("mode") not in VERIFY_MODES:
        raise SpecError(f"params.mode: must be one of {VERIFY_MODES}")
    spec = RunSpec(cmd, document.get("fixture"), document.get("model"), dict(params), seed,
                   reps, document.get("out"))
    if spec.model is not None:
        try:
            fixture_from_json(spec.model)
        except ValueError as e:
            raise SpecError(str(e)) from e
    return spec


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not JSON serialisable: {type(o).__name__}")


def _dumps(doc) -> str:
    return json.dumps(doc, indent=2, sort_keys=True, default=_json_default) + "\n"


def _csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow(["nan" if isinstance(v, float) and math.isnan(v) else
                    (repr(v) if isinstance(v, float) else v) for v in row])
    return buf.getvalue()


class _Run:
    """Collects output files for one dispatch and writes the manifest last."""

    def __init__(self, spec: RunSpec, fixture_doc: dict | None, out_dir: Path):
        self.spec = spec
        self.out = out_dir
        ident = spec.to_json()
        # parallelism must not change outputs, so it is not part of the identity
        ident["params"] = {k: v for k, v in spec.params.items() if k != "workers"}
        ident.pop("out", None)
        self.run_id = model_hash({"spec": ident, "version": __version__})
        self.fixture_hash = None if fixture_doc is None else model_hash(fixture_doc)
        self.files: list[str] = []
        self.statuses: dict = {}
        self.t0 = time.time()

    def write(self, name: str, text: str):
        self.out.mkdir(parents=True, exist_ok=True)
        if name.endswith(".csv"):
            text = f"# run_id: {self.run_id}\n" + text
        (self.out / name).write_text(text)
        self.files.append(name)

    def write_json(self, name: str, doc: dict):
        self.write(name, _dumps({"run_id": self.run_id, **doc}))

    def finish(self, status: int) -> int:
        manifest = {
            "run_id": self.run_id,
            "version": __version__,
            "command": self.spec.command,
            "generator": GENERATOR_NAME,
            "fixture": self.spec.fixture or "inline",
            "fixture_hash": self.fixture_hash,
            "spec": self.spec.to_json(),
            "outputs": self.files,
            "acceptance": self.statuses,
            "exit_status": status,
            "started": time.strftime("%Y-%m-%dT%H:%M:%S", time.localtime(self.t0)),
            "elapsed_s": round(time.time() - self.t0, 3),
        }
        self.out.mkdir(parents=True, exist_ok=True)
        (self.out / "manifest.json").write_text(_dumps(manifest))
        return status


def _checkpoints(p: dict) -> tuple[float, tuple]:
    horizon = float(p.get("horizon", 1.0))
    cps = tuple(float(c) for c in p.get("checkpoints", [horizon]))
    return horizon, cps


def _cmd_fixtures(spec, run):
    docs = {}
    for name in FIXTURES:
        fx = get_fixture(name)
        docs[name] = {"description": fx.description, "n_states": fx.motion.n_states, "x0": fx.x0}
    run.write_json("fixtures.json", {"fixtures": docs})
    return EXIT_OK


def _cmd_spectrum(spec, run, fx):
    p = spec.params
    op = build_operator(fx.motion, fx.law)
    triple = principal_triple(op, p.get("method", "auto"))
    doc = {"triple": triple.to_json()}
    if fx.motion.irreducible:
        try:
            fit = iu_fit(op, triple, p.get("t_grid", [0.5 * k for k in range(1, 9)]))
            doc["iu_fit"] = {"c": fit.c, "nu": fit.nu, "t_grid": fit.t_grid,
                             "deviation": fit.deviation}
        except ValueError as e:
            doc["iu_fit"] = {"error": str(e)}
    spine = h_transform(op, triple)
    ll = l_functional(fx.law, triple.phi, triple.phi_tilde, fx.motion.m)
    doc["assumptions"] = {
        "density_positive": fx.motion.irreducible,
        "supercritical": triple.supercritical,
        "phi2_phi_tilde_finite": bool(np.isfinite(triple.phi2_phit_integral)),
        "llogl_integral": ll.integral,
        "llogl_divergent": ll.integral_divergent,
        "spine_rates": spine.rates,
    }
    run.write_json("spectrum.json", doc)
    run.statuses["spectrum"] = "ok"
    return EXIT_OK


def _cmd_simulate(spec, run, fx):
    p = spec.params
    horizon, cps = _checkpoints(p)
    x0 = int(p.get("x0", fx.x0))
    rows, meta = [], []
    n = fx.motion.n_states
    for i in range(spec.replicates):
        cfg = SimConfig(horizon, cps, int(p.get("cap", 1_000_000)), spec.seed, i,
                        record_events=False)
        lg, snaps = simulate(fx.motion, fx.law, [x0], cfg)
        meta.append({"replicate": i, "status": lg.status, "events": lg.n_events})
        for t, s in zip(cps, snaps):
            if s is None:
                continue
            for state, c in enumerate(s.counts(n).tolist()):
                rows.append((i, t, state, c))
    run.write("snapshots.csv", _csv(("replicate", "t", "state", "count"), rows))
    n_over = sum(m["status"] == OVERFLOW for m in meta)
    run.write_json("snapshots.meta.json", {
        "seed": spec.seed, "generator": GENERATOR_NAME, "replicates": meta,
        "cap_status": "overflow" if n_over else "ok", "n_overflow": n_over,
    })
    return EXIT_OVERFLOW if n_over > 0.2 * spec.replicates else EXIT_OK


def _cmd_spine(spec, run, fx):
    p = spec.params
    horizon, cps = _checkpoints(p)
    x0 = int(p.get("x0", fx.x0))
    subtrees = bool(p.get("subtrees", True))
    op = build_operator(fx.motion, fx.law)
    triple = principal_triple(op)
    sampler = SpineSampler(fx.motion, fx.law, triple)
    cap = int(p.get("cap", 1_000_000))
    records = [sampler.sample(x0, SimConfig(horizon, cps, cap, spec.seed, i, record_events=False),
                              subtrees) for i in range(spec.replicates)]
    run.write_json("spine_records.json", {"records": [r.to_json() for r in records]})
    report = {"checkpoints": cps}
    if subtrees:
        worst = 0.0
        for r in records:
            for t in cps:
                if r.population(t) is not None:
                    worst = max(worst, abs(unit_mass_identity(r, t) - 1.0))
        report["unit_mass_max_error"] = worst
        report["spine_decomposition"] = [spine_decomposition_check(records, triple, t) for t in cps]
    run.write_json("spine_checks.json", report)
    return EXIT_OK


def _cmd_verify(spec, run, fx):
    p = spec.params
    mode = p["mode"]
    horizon, cps = _checkpoints(p)
    x0 = int(p.get("x0", fx.x0))
    workers = int(p.get("workers", 1))
    cfg = SimConfig(horizon, cps, int(p.get("cap", 1_000_000)), spec.seed)
    n = fx.motion.n_states

    if mode == "dichotomy":
        heavy, control = fx.law, fx.control_law
        if control is None:
            control = build_law(np.ones(n), [0, 0, 1])
        if "kmax" in p and spec.fixture != "heavy":
            raise SpecError("params.kmax: only meaningful with the 'heavy' fixture")
        out = dichotomy_experiment(fx.motion, heavy, control, x0, cfg, spec.replicates, workers)
        rows = []
        for name in ("control", "heavy"):
            for r in out.get(name, {}).get("summary", []):
                rows.append([name] + [r[c] for c in SUMMARY_COLUMNS])
        run.write("summary.csv", _csv(("law",) + SUMMARY_COLUMNS, rows))
        run.write_json("verdict.json", out)
        run.statuses["dichotomy"] = "refused" if out["refused"] else ("pass" if out["passed"] else "fail")
        if out["refused"]:
            return EXIT_OVERFLOW
        return EXIT_OK if out["passed"] else EXIT_FAIL

    op = build_operator(fx.motion, fx.law)
    triple = principal_triple(op)

    if mode == "spine":
        sampler = SpineSampler(fx.motion, fx.law, triple)
        recs = [sampler.sample(x0, SimConfig(horizon, cps, cfg.cap, spec.seed, i,
                                             record_events=False))
                for i in range(spec.replicates)]
        checks = [spine_decomposition_check(recs, triple, t) for t in cps]
        worst = max(abs(unit_mass_identity(r, t) - 1.0) for r in recs for t in cps
                    if r.population(t) is not None)
        rows = [[c["t"], c["full_mean"], math.nan, c["full_se"], math.nan, math.nan, c["n"],
                 c["n_overflow"]] for c in checks]
        run.write("summary.csv", _csv(SUMMARY_COLUMNS, rows))
        passed = worst <= 1e-12 and all(abs(c["z"]) <= 4.0 for c in checks)
        run.write_json("verdict.json", {"mode": mode, "checks": checks, "unit_mass_max_error": worst,
                                        "passed": passed})
        run.statuses["spine"] = "pass" if passed else "fail"
        return EXIT_OK if passed else EXIT_FAIL

    ens = run_ensemble(fx.motion, fx.law, triple, x0, cfg, spec.replicates, workers)
    if ens.n_overflow > 0.2 * spec.replicates:
        run.write_json("verdict.json", {"mode": mode, "refused": True,
                                        "reason": f"{ens.n_overflow} overflowed replicates"})
        run.statuses[mode] = "refused"
        return EXIT_OVERFLOW

    if mode == "martingale":
        rows = ens.summary()
        z = [abs(r["mean"] - triple.phi[x0]) / r["se"] if r["se"] > 0 else 0.0 for r in rows]
        passed = bool(max(z) <= 4.0)
        run.write("summary.csv", _csv(SUMMARY_COLUMNS, [[r[c] for c in SUMMARY_COLUMNS] for r in rows]))
        run.write_json("verdict.json", {"mode": mode, "phi_x0": triple.phi[x0], "z": z,
                                        "passed": passed})
    else:
        f = np.asarray(p.get("f", [1.0] + [0.0] * (n - 1)), dtype=float)
        if f.shape != (n,):
            raise SpecError(f"params.f: expected {n} values")
        fit = iu_fit(op, triple, [0.5 * k for k in range(1, 9)])
        verdict = verify_slln(ens, triple, f, float(p.get("tolerance", 0.05)), fit)
        R = slln_ratio(ens, f)
        rows = summarize(ens.checkpoints, R, ens.n_overflow)
        run.write("summary.csv", _csv(SUMMARY_COLUMNS, [[r[c] for c in SUMMARY_COLUMNS] for r in rows]))
        doc = {"mode": mode, **verdict.to_json()}
        if "B" in p:
            doc["ratio_limit"] = verify_ratio_limit(ens, triple, p["B"])
        passed = verdict.passed
        doc["passed"] = passed
        run.write_json("verdict.json", doc)
    run.statuses[mode] = "pass" if passed else "fail"
    return EXIT_OK if passed else EXIT_FAIL


def dispatch(spec: RunSpec, out_dir=None) -> int:
    """Run one spec; returns the process exit status."""
    out = Path(out_dir or spec.out or os.environ.get(OUT_ENV, "hunt-branch-out"))
    try:
        fx = None if spec.command == "fixtures" else spec.resolve()
    except (ValueError, KeyError) as e:
        log.error("configuration error: %s", e)
        return EXIT_CONFIG
    run = _Run(spec, None if fx is None else fx.to_json(), out)
    handler = {"fixtures": _cmd_fixtures, "spectrum": _cmd_spectrum, "simulate": _cmd_simulate,
               "spine": _cmd_spine, "verify": _cmd_verify}[spec.command]
    try:
        status = handler(spec, run) if fx is None else handler(spec, run, fx)
    except SpecError as e:
        log.error("configuration error: %s", e)
        return run.finish(EXIT_CONFIG)
    except RuntimeError as e:
        log.error("%s", e)
        return run.finish(EXIT_OVERFLOW)
    except ValueError as e:
        log.error("configuration error: %s", e)
        return run.finish(EXIT_CONFIG)
    return run.finish(status)


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="hunt-branch", description=__doc__.splitlines()[0])
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--spec", help="run spec JSON file (optional for 'fixtures')")
    ap.add_argument("--seed", type=int, help="master seed (overrides the value in the run file)")
    ap.add_argument("--out", help=f"output directory (default ${OUT_ENV} or ./hunt-branch-out)")
    ap.add_argument("-v", "--verbose", action="store_true")
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    doc = {}
    if args.spec:
        try:
            doc = json.loads(Path(args.spec).read_text())
        except (OSError, json.JSONDecodeError) as e:
            print(f"hunt-branch: cannot read spec: {e}", file=sys.stderr)
            return EXIT_CONFIG
    doc.setdefault("command", args.command)
    if doc["command"] != args.command:
        print(f"hunt-branch: spec command {doc['command']!r} != {args.command!r}", file=sys.stderr)
        return EXIT_CONFIG
    if args.seed is not None:
        doc["seed"] = args.seed
    try:
        spec = load_spec(doc)
    except SpecError as e:
        print(f"hunt-branch: {e}", file=sys.stderr)
        return EXIT_CONFIG
    status = dispatch(spec, args.out)
    print(Path(args.out or spec.out or os.environ.get(OUT_ENV, "hunt-branch-out")) / "manifest.json")
    return status


if __name__ == "__main__":
    sys.exit(main())
