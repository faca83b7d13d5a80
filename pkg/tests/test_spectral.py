import math

import numpy as np
import pytest
from scipy.linalg import expm, null_space

from huntbranch.branching_law import build_law
from huntbranch.fixtures import frozen_constants, get_fixture
from huntbranch.motion import build_motion, semigroup_matrix, transition_density
from huntbranch.spectral import (
    build_operator,
    h_transform,
    iu_deviation,
    iu_fit,
    principal_triple,
)

GRID = np.arange(0.5, 4.01, 0.5)


def eig_oracle_2x2(M):
    """Closed-form eigenvalues of a real 2x2 matrix."""
    tr, det = np.trace(M), np.linalg.det(M)
    disc = math.sqrt(tr**2 / 4 - det)
    return tr / 2 + disc, tr / 2 - disc


def test_yule2_operator(yule2):
    op = build_operator(yule2.motion, yule2.law)
    np.testing.assert_array_equal(op.matrix, [[0, 1], [1, 0]])
    assert eig_oracle_2x2(op.matrix) == (1.0, -1.0)


def test_zero_branching_gives_motion_generator(yule2):
    law = build_law([0.0, 0.0], [0, 0, 1])
    op = build_operator(yule2.motion, law)
    np.testing.assert_array_equal(op.matrix, yule2.motion.generator)


def test_killed_single_state():
    mo = build_motion(1, [1.0], [[0.0]], [0.5])
    op = build_operator(mo, build_law([1.0], [0, 0, 1]))
    assert op.matrix.tolist() == [[0.5]]
    assert principal_triple(op).lambda1 == 0.5


def test_dimension_mismatch(yule2):
    with pytest.raises(ValueError):
        build_operator(yule2.motion, build_law([1.0, 1.0, 1.0], [0, 0, 1]))


def test_semigroup_is_first_moment_of_potential(asym3):
    """exp(tM) equals the Feynman-Kac expectation computed by time-slicing."""
    op = build_operator(asym3.motion, asym3.law)
    t, n = 1.0, 4000
    step = expm(t / n * asym3.motion.generator) @ np.diag(np.exp(t / n * op.potential))
    sliced = np.linalg.matrix_power(step, n)
    np.testing.assert_allclose(op.semigroup(t), sliced, rtol=2e-3)


def test_yule2_triple(yule2_triple):
    tr = yule2_triple
    assert tr.lambda1 == pytest.approx(1.0, abs=1e-10)
    np.testing.assert_allclose(tr.phi, [1, 1], atol=1e-10)
    np.testing.assert_allclose(tr.phi_tilde, [0.5, 0.5], atol=1e-10)
    assert tr.gap == pytest.approx(2.0, abs=1e-10)
    assert tr.supercritical


def test_zero_branching_not_supercritical(yule2):
    tr = principal_triple(build_operator(yule2.motion, build_law([0.0, 0.0], [0, 0, 1])))
    assert tr.lambda1 == pytest.approx(0.0, abs=1e-12)
    assert not tr.supercritical


def test_asym3_matches_frozen_oracle(asym3_triple):
    ref = frozen_constants("asym3")
    assert asym3_triple.lambda1 == pytest.approx(ref["lambda1"], abs=1e-8)
    np.testing.assert_allclose(asym3_triple.phi, ref["phi"], atol=1e-8)
    np.testing.assert_allclose(asym3_triple.phi_tilde, ref["phi_tilde"], atol=1e-8)
    assert asym3_triple.gap == pytest.approx(ref["gap"], abs=1e-8)


@pytest.mark.parametrize("name", ["yule2", "asym3", "griddiff"])
def test_triple_invariants(name):
    fx = get_fixture(name)
    op = build_operator(fx.motion, fx.law)
    tr = principal_triple(op)
    m, M = op.m, op.matrix
    assert np.dot(tr.phi * tr.phi_tilde, m) == pytest.approx(1.0, abs=1e-12)
    assert np.dot(tr.phi_tilde, m) == pytest.approx(1.0, abs=1e-12)
    assert np.abs(M @ tr.phi - tr.lambda1 * tr.phi).max() < 1e-10 * max(1, np.abs(M).max())
    dual = np.diag(1 / m) @ M.T @ np.diag(m)
    assert np.abs(dual @ tr.phi_tilde - tr.lambda1 * tr.phi_tilde).max() < 1e-10 * max(1, np.abs(M).max())
    assert tr.phi.min() > 0 and tr.phi_tilde.min() > 0
    # eigen-relation through the semigroup
    np.testing.assert_allclose(math.exp(-tr.lambda1 * 1.3) * op.semigroup(1.3) @ tr.phi, tr.phi,
                               rtol=1e-10)


def test_power_iteration_agrees_with_dense(asym3_op):
    a = principal_triple(asym3_op, "dense")
    b = principal_triple(asym3_op, "power")
    assert b.lambda1 == pytest.approx(a.lambda1, abs=1e-10)
    np.testing.assert_allclose(b.phi, a.phi, atol=1e-9)
    np.testing.assert_allclose(b.phi_tilde, a.phi_tilde, atol=1e-9)
    assert 0 < b.gap <= a.gap + 1e-9


def test_reducible_rejected():
    mo = build_motion(2, [1, 1], [[0, 1], [0, 0]])
    with pytest.raises(ValueError):
        principal_triple(build_operator(mo, build_law([1, 1], [0, 0, 1])))


def test_iu_fit_yule2(yule2, yule2_triple):
    op = build_operator(yule2.motion, yule2.law)
    fit = iu_fit(op, yule2_triple, GRID)
    # exact deviation is e^{-2t}
    np.testing.assert_allclose(fit.deviation, np.exp(-2 * GRID), atol=1e-12)
    assert abs(fit.nu - 2.0) <= 0.05 * 2.0
    assert np.all(fit.deviation <= fit.envelope(GRID))


def test_iu_halving(asym3_op, asym3_triple):
    for t in (0.5, 1.0, 3.0):
        assert iu_deviation(asym3_op, asym3_triple, t) < iu_deviation(asym3_op, asym3_triple, t / 2)


def test_iu_fit_asym3(asym3_op, asym3_triple):
    fit = iu_fit(asym3_op, asym3_triple, GRID)
    ref = frozen_constants("asym3")["gap"]
    assert abs(fit.nu - ref) <= 0.1 * ref
    assert np.all(fit.deviation <= fit.envelope(GRID))


def test_iu_fit_rejects_wrong_triple(asym3_op, asym3_triple):
    from dataclasses import replace

    bad = replace(asym3_triple, lambda1=asym3_triple.lambda1 + 0.3)
    with pytest.raises(ValueError):
        iu_fit(asym3_op, bad, GRID)
    with pytest.raises(ValueError):
        iu_fit(asym3_op, asym3_triple, [1, 2, 3])


def test_h_transform_constant_phi(yule2, yule2_triple):
    op = build_operator(yule2.motion, yule2.law)
    spine = h_transform(op, yule2_triple)
    np.testing.assert_allclose(spine.rates, yule2.motion.rates)
    assert spine.conservative


def test_h_transform_stationary_law(asym3_op, asym3_triple):
    spine = h_transform(asym3_op, asym3_triple)
    np.testing.assert_allclose(spine.generator.sum(axis=1), 0, atol=1e-10)
    pi = null_space(spine.generator.T)[:, 0]
    pi = pi / pi.sum()
    np.testing.assert_allclose(pi, asym3_triple.phi * asym3_triple.phi_tilde * asym3_op.m, atol=1e-9)


def test_h_transform_density_identity(asym3_op, asym3_triple):
    spine = h_transform(asym3_op, asym3_triple)
    tr = asym3_triple
    for t in (0.3, 1.0, 2.5):
        lhs = transition_density(spine, t)
        rhs = math.exp(-tr.lambda1 * t) * asym3_op.density(t) * tr.phi[None, :] / tr.phi[:, None]
        np.testing.assert_allclose(lhs, rhs, atol=1e-9)


def test_h_transform_invariance_and_iu_restated(asym3_op, asym3_triple):
    tr = asym3_triple
    spine = h_transform(asym3_op, tr)
    pi = tr.phi * tr.phi_tilde * asym3_op.m
    for t in (0.5, 1.0, 2.0):
        np.testing.assert_allclose(pi @ semigroup_matrix(spine, t), pi, atol=1e-10)
    fit = iu_fit(asym3_op, tr, GRID)
    for t in GRID:
        dev = np.abs(transition_density(spine, t) / (tr.phi * tr.phi_tilde)[None, :] - 1).max()
        assert dev <= fit.envelope(t) * (1 + 1e-12)


def test_h_transform_rejects_inconsistent_triple(asym3_op, asym3_triple):
    from dataclasses import replace

    with pytest.raises(ValueError):
        h_transform(asym3_op, replace(asym3_triple, lambda1=asym3_triple.lambda1 + 0.1))
