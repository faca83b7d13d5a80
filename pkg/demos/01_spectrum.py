"""Principal eigen-triple and kernel convergence for the three-state fixture.

Run: python3 demos/01_spectrum.py
"""
import numpy as np

from huntbranch import build_operator, get_fixture, h_transform, iu_fit, principal_triple

fx = get_fixture("asym3")
op = build_operator(fx.motion, fx.law)
print("first-moment generator M:\n", op.matrix)

# The growth rate and the two positive eigenvectors.
tr = principal_triple(op)
print(f"\nlambda1 = {tr.lambda1:.12f}   spectral gap = {tr.gap:.6f}")
print("phi       =", np.round(tr.phi, 10))
print("phi_tilde =", np.round(tr.phi_tilde, 10))

# exp(-lambda1 t) p(t, x, y) approaches phi(x) phi_tilde(y); the fitted rate
# nu should sit close to the spectral gap.
fit = iu_fit(op, tr, np.linspace(0.5, 6.0, 12))
for t, d in zip(fit.t_grid, fit.deviation):
    print(f"  t={t:4.1f}  deviation={d:.3e}  envelope={fit.envelope(t):.3e}")
print(f"fitted c = {fit.c:.4f}, nu = {fit.nu:.4f}")

# Motion of the spine: its stationary law is phi * phi_tilde * m.
spine = h_transform(op, tr)
pi = tr.phi * tr.phi_tilde * fx.motion.m
print("\nspine generator row sums:", np.round(spine.generator.sum(axis=1), 14))
print("pi @ G_spine =", np.round(pi @ spine.generator, 14), " (stationary)")
