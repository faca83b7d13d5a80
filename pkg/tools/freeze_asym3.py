"""Regenerate src/huntbranch/data/asym3.json with a 50-digit mpmath eigensolve.

Deliberately independent of huntbranch.spectral: the matrix is typed in by
hand and the eigenproblem is solved in multiprecision arithmetic.
"""

import json
from pathlib import Path

import mpmath as mp

mp.mp.dps = 50

# motion generator plus diag(beta) (binary splitting: A - 1 = 1), m = 1
M = mp.matrix([
    [-1 + 1, 1, 0],
    [2, -3 + mp.mpf("0.5"), 1],
    [0, 1, -1 + mp.mpf("0.25")],
])
E, ER = mp.eig(M)
EL, _ = mp.eig(M.T)
order = sorted(range(3), key=lambda i: -mp.re(E[i]))
lam = mp.re(E[order[0]])
phi = [mp.re(ER[i, order[0]]) for i in range(3)]
li = max(range(3), key=lambda i: mp.re(EL[i]))
_, LR = mp.eig(M.T)
left = [mp.re(LR[i, li]) for i in range(3)]
s = sum(left)
phit = [v / s for v in left]
c = sum(p * q for p, q in zip(phi, phit))
phi = [p / c for p in phi]
gap = lam - mp.re(E[order[1]])

doc = {
    "provenance": "mpmath.eig at 50 digits on the hand-assembled 3x3 Feynman-Kac matrix "
                  "(tools/freeze_asym3.py); normalisation sum(phi_tilde m)=1, sum(phi phi_tilde m)=1",
    "lambda1": float(lam),
    "phi": [float(v) for v in phi],
    "phi_tilde": [float(v) for v in phit],
    "gap": float(gap),
}
out = Path(__file__).resolve().parents[1] / "src" / "huntbranch" / "data" / "asym3.json"
out.write_text(json.dumps(doc, indent=2) + "\n")
print(json.dumps(doc, indent=2))
