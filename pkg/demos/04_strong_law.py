"""Occupation ratios settle down to phi_tilde-weighted averages.

Run: python3 demos/04_strong_law.py   (about ten seconds)
"""
import numpy as np

from huntbranch import SimConfig, build_operator, get_fixture, iu_fit, principal_triple
from huntbranch.harness import run_ensemble, verify_ratio_limit, verify_slln

fx = get_fixture("asym3")
op = build_operator(fx.motion, fx.law)
tr = principal_triple(op)
f = np.array([0.0, 0.0, 1.0])

fit = iu_fit(op, tr, np.linspace(0.5, 6.0, 12))
print(f"suggested horizon for tolerance 0.05: t >= {fit.terminal_time(0.05):.1f}")

ens = run_ensemble(fx.motion, fx.law, tr, 0, SimConfig(8.0, (2.0, 4.0, 6.0, 8.0), seed=5), 300)
v = verify_slln(ens, tr, f, tolerance=0.05, iu=fit)
print(f"target {v.target:.4f}")
for t, lo, med, hi in zip(v.checkpoints, v.q25, v.median, v.q75):
    print(f"  t={t:.0f}  median={med:.4f}  IQR=[{lo:.4f}, {hi:.4f}]")
print("verdict:", "pass" if v.passed else "fail")

rl = verify_ratio_limit(ens, tr, [2])
print("mean |X_t(B)/E X_t(B) - W_t/phi(x0)|:", np.round(rl["mean_abs_deviation"], 4))
