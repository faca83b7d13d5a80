"""Feynman-Kac generator, its principal eigen-triple and the spine motion.

The first-moment semigroup of the particle system has generator
``M = G + diag((A - 1) beta)`` where ``G`` is the motion generator.  With
densities taken against ``m``, the right Perron vector of ``M`` is ``phi``
and the left Perron vector is ``m * phi_tilde``.  Normalisation:

    sum_x phi(x) phi_tilde(x) m(x) = 1,   sum_x phi_tilde(x) m(x) = 1.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.linalg import expm

from .branching_law import BranchingLaw
from .motion import MotionModel, build_motion

__all__ = [
    "FeynmanKacOperator",
    "IUFit",
    "SpectralTriple",
    "build_operator",
    "h_transform",
    "iu_deviation",
    "iu_fit",
    "principal_triple",
]

log = logging.getLogger(__name__)

DENSE_LIMIT = 500
RESIDUAL_TOL = 1e-10
IMAG_TOL = 1e-10
ROW_SUM_TOL = 1e-10
POWER_TOL = 1e-12
POWER_MAXITER = 100_000


@dataclass(frozen=True, eq=False)
class FeynmanKacOperator:
    matrix: np.ndarray
    motion: MotionModel
    law: BranchingLaw

    @property
    def potential(self) -> np.ndarray:
        return (self.law.mean - 1.0) * self.law.beta

    @property
    def m(self) -> np.ndarray:
        return self.motion.m

    def semigroup(self, t: float) -> np.ndarray:
        """``exp(tM)``; ``(exp(tM) f)(x)`` is the expected value of ``<f, X_t>`` from one particle at x."""
        return expm(t * self.matrix)

    def density(self, t: float) -> np.ndarray:
        """Feynman-Kac transition density with respect to ``m``."""
        return self.semigroup(t) / self.m[None, :]


@dataclass
class SpectralTriple:
    lambda1: float
    phi: np.ndarray
    phi_tilde: np.ndarray
    gap: float
    supercritical: bool = True
    phi2_phit_integral: float = 1.0

    def to_json(self) -> dict:
        return {
            "lambda1": self.lambda1,
            "phi": self.phi.tolist(),
            "phi_tilde": self.phi_tilde.tolist(),
            "gap": self.gap,
            "supercritical": self.supercritical,
            "phi2_phi_tilde_integral": self.phi2_phit_integral,
        }


@dataclass
class IUFit:
    c: float
    nu: float
    t_grid: np.ndarray
    deviation: np.ndarray

    def envelope(self, t):
        return self.c * np.exp(-self.nu * np.asarray(t, dtype=float))

    def terminal_time(self, tolerance: float) -> float:
        """Smallest ``t`` with ``c exp(-nu t) < tolerance / 10``."""
        return max(0.0, float(np.log(10.0 * self.c / tolerance) / self.nu))


def build_operator(motion: MotionModel, law: BranchingLaw) -> FeynmanKacOperator:
    if motion.n_states != law.n_states:
        raise ValueError(
            f"motion has {motion.n_states} states but the branching law has {law.n_states}"
        )
    M = motion.generator + np.diag((law.mean - 1.0) * law.beta)
    M.setflags(write=False)
    return FeynmanKacOperator(matrix=M, motion=motion, law=law)


def _dense_perron(M: np.ndarray):
    w, vr = np.linalg.eig(M)
    order = np.argsort(-w.real, kind="stable")
    w = w[order]
    lead = w[0]
    if abs(lead.imag) > IMAG_TOL:
        raise ValueError(f"leading eigenvalue {lead} is not real")
    if len(w) > 1 and abs(w[1].real - lead.real) <= 1e-9 * max(1.0, abs(lead.real)):
        raise ValueError("leading eigenvalue is not simple; is the motion irreducible?")
    lam = float(lead.real)
    phi = np.real(vr[:, order[0]])
    wl, vl = np.linalg.eig(M.T)
    left = np.real(vl[:, np.argmax(wl.real)])
    gap = float(lam - w[1].real) if len(w) > 1 else np.inf
    return lam, phi, left, gap


def _power_perron(M: np.ndarray):
    """Perron root by power iteration on ``M + sI`` (entrywise nonnegative).

    The gap is estimated from the spectral radius of the deflated matrix,
    which bounds the modulus of the second eigenvalue and hence gives a
    conservative (smaller) gap.
    """
    n = M.shape[0]
    s = float(max(0.0, -M.diagonal().min()))
    B = M + s * np.eye(n)

    def iterate(mat, v):
        rho = 0.0
        for _ in range(POWER_MAXITER):
            w = mat @ v
            nw = np.linalg.norm(w)
            if nw == 0:
                return 0.0, v
            w /= nw
            if np.linalg.norm(w - v) < POWER_TOL:
                return nw, w
            v, rho = w, nw
        log.warning("power iteration hit %d iterations", POWER_MAXITER)
        return rho, v

    rho, phi = iterate(B, np.full(n, 1.0 / np.sqrt(n)))
    _, left = iterate(B.T, np.full(n, 1.0 / np.sqrt(n)))
    phi, left = np.abs(phi), np.abs(left)
    lam = float(rho - s)
    proj = np.outer(phi, left) / (left @ phi)
    rho2, _ = iterate(B - rho * proj, np.random.default_rng(0).random(n))
    return lam, phi, left, float(rho - rho2)


def principal_triple(op: FeynmanKacOperator, method: str = "auto") -> SpectralTriple:
    """Leading eigenvalue ``lambda1`` with positive eigenvectors ``phi`` and ``phi_tilde``."""
    if not op.motion.irreducible:
        raise ValueError("motion is reducible: the Perron root need not be simple")
    M = np.asarray(op.matrix)
    n = M.shape[0]
    if method == "auto":
        method = "dense" if n <= DENSE_LIMIT else "power"
    if method == "dense":
        lam, phi, left, gap = _dense_perron(M)
    elif method == "power":
        lam, phi, left, gap = _power_perron(M)
    else:
        raise ValueError(f"unknown method {method!r}")
    m = op.m
    phi = phi * np.sign(phi.sum())
    left = left * np.sign(left.sum())
    phi_tilde = left / m
    phi_tilde = phi_tilde / np.dot(phi_tilde, m)
    phi = phi / np.dot(phi * phi_tilde, m)
    if np.any(phi <= 0) or np.any(phi_tilde <= 0):
        raise ValueError("Perron vectors are not strictly positive")

    scale = max(1.0, abs(lam), np.abs(M).max())
    res_r = np.abs(M @ phi - lam * phi).max() / scale
    res_l = np.abs(M.T @ (m * phi_tilde) - lam * m * phi_tilde).max() / scale
    if max(res_r, res_l) > RESIDUAL_TOL:
        raise ValueError(f"eigen residuals too large: {res_r:.2e}, {res_l:.2e}")
    return SpectralTriple(
        lambda1=lam, phi=phi, phi_tilde=phi_tilde, gap=gap,
        supercritical=bool(lam > 0),
        phi2_phit_integral=float(np.dot(phi**2 * phi_tilde, m)),
    )


def iu_deviation(op: FeynmanKacOperator, triple: SpectralTriple, t: float) -> float:
    """``max_{x,y} |exp(-lambda1 t) p(t,x,y) / (phi(x) phi_tilde(y)) - 1|``."""
    ratio = np.exp(-triple.lambda1 * t) * op.density(t) / np.outer(triple.phi, triple.phi_tilde)
    return float(np.abs(ratio - 1.0).max())


def iu_fit(op: FeynmanKacOperator, triple: SpectralTriple, t_grid) -> IUFit:
    """Fit ``D(t) <= c exp(-nu t)`` to the normalised-kernel deviation on ``t_grid``.

    ``nu`` comes from a least-squares line through ``log D``; ``c`` is then
    raised until the envelope dominates every grid point.
    """
    t = np.asarray(t_grid, dtype=float)
    if t.ndim != 1 or t.size < 4 or np.any(t <= 0) or np.any(np.diff(t) <= 0):
        raise ValueError("t_grid must hold at least 4 strictly increasing positive times")
    D = np.array([iu_deviation(op, triple, s) for s in t])
    if np.any(np.diff(D) >= 0):
        raise ValueError("normalised kernel deviation is not decreasing; triple is inconsistent")
    floor = np.finfo(float).tiny
    slope, intercept = np.polyfit(t, np.log(np.maximum(D, floor)), 1)
    nu = -float(slope)
    c = float(max(np.exp(intercept), np.max(D * np.exp(nu * t))))
    fit = IUFit(c=c, nu=nu, t_grid=t, deviation=D)
    while np.any(fit.envelope(t) < D):  # rounding in c * exp(-nu t)
        fit.c = float(np.nextafter(fit.c, np.inf))
    return fit


def h_transform(op: FeynmanKacOperator, triple: SpectralTriple) -> MotionModel:
    """Motion of the spine: rates ``q(x,y) phi(y) / phi(x)``, no killing.

    The generator equals ``phi^-1 (M - lambda1) phi``; its rows must sum to
    zero, which checks the triple against the operator.
    """
    phi = triple.phi
    q = op.motion.rates * phi[None, :] / phi[:, None]
    L = (np.asarray(op.matrix) - triple.lambda1 * np.eye(len(phi))) * phi[None, :] / phi[:, None]
    resid = np.abs(L.sum(axis=1)).max() / max(1.0, np.abs(L).max())
    if resid > ROW_SUM_TOL:
        raise ValueError(f"h-transform row sums deviate by {resid:.2e}; triple inconsistent")
    return build_motion(len(phi), op.m, q, None)
