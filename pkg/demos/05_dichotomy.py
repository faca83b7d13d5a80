"""Heavy-tailed offspring: the martingale limit degenerates.

With p_k proportional to 1/(k^2 log^2 k) the LlogL moment is infinite, so
W_t tends to zero almost surely even though E W_t stays equal to phi(x0).
Run: python3 demos/05_dichotomy.py   (about fifteen seconds)
"""
import numpy as np

from huntbranch import SimConfig, l_functional
from huntbranch.fixtures import heavy_fixture
from huntbranch.harness import dichotomy_experiment

fx = heavy_fixture()
rep = l_functional(fx.law, np.ones(2))
print(f"mean offspring A = {fx.law.mean[0]:.4f}, beta = {fx.law.beta[0]:.4f}")
print("LlogL divergent:", bool(rep.divergent[0]), " block ratio:", round(float(rep.block_ratio[0]), 3))

out = dichotomy_experiment(fx.motion, fx.law, fx.control_law, 0,
                           SimConfig(6.0, (2.0, 4.0, 6.0), seed=1), 1000)
for name in ("control", "heavy"):
    print(f"\n{name}:")
    for r in out[name]["summary"]:
        print(f"  t={r['t']:.0f}  median W={r['median']:.4f}  mean W={r['mean']:.4f} ± {r['se']:.4f}")
print("\nchecks:", out["checks"])

# Truncating at a small kmax would hide the tail; the experiment refuses.
small = heavy_fixture(10)
out = dichotomy_experiment(small.motion, small.law, small.control_law, 0,
                           SimConfig(6.0, (2.0, 4.0, 6.0), seed=1), 10)
print("kmax=10:", out["reasons"])
