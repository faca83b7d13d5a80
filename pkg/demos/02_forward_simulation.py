"""Forward simulation of the particle system and the first-moment formula.

Run: python3 demos/02_forward_simulation.py
"""
import numpy as np

from huntbranch import SimConfig, build_operator, get_fixture, martingale_path, principal_triple, simulate

fx = get_fixture("asym3")
op = build_operator(fx.motion, fx.law)
tr = principal_triple(op)

# One realization with its event log.
log, snaps = simulate(fx.motion, fx.law, [0], SimConfig(2.0, (0.5, 1.0, 2.0), seed=1))
print(f"status={log.status} events={log.n_events} fissions={log.n_fissions}")
for s in snaps:
    print(f"  t={s.t}: {s.size} particles, occupancy {s.counts(3).tolist()}")
print("first events:", log.events[:4])

# Averages over replicates against exp(tM) 1.
t, n = 1.5, 2000
sizes = np.empty(n)
W = np.empty(n)
for i in range(n):
    _, sn = simulate(fx.motion, fx.law, [0], SimConfig(t, seed=2, replicate=i, record_events=False))
    sizes[i] = sn[0].size
    W[i] = martingale_path(sn, tr)[0]
print(f"\nmean population at t={t}: {sizes.mean():.3f} ± {sizes.std(ddof=1) / np.sqrt(n):.3f}")
print(f"semigroup prediction:      {(op.semigroup(t) @ np.ones(3))[0]:.3f}")
print(f"mean W_t: {W.mean():.4f} (phi(x0) = {tr.phi[0]:.4f})")
