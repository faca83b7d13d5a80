import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from huntbranch.motion import (
    build_motion,
    dual_semigroup_matrix,
    grid_diffusion,
    motion_from_json,
    sample_path,
    semigroup_matrix,
    transition_density,
)


def expm_oracle(A, terms=30):
    """Scaling and squaring with a plain Taylor series (no scipy)."""
    s = max(0, int(np.ceil(np.log2(max(np.abs(A).sum(axis=1).max(), 1e-300)))) + 4)
    B = A / 2**s
    out = np.eye(A.shape[0])
    term = np.eye(A.shape[0])
    for k in range(1, terms):
        term = term @ B / k
        out = out + term
    for _ in range(s):
        out = out @ out
    return out


def random_model(seed, n=4, kill=False):
    rng = np.random.default_rng(seed)
    rates = rng.uniform(0.1, 2.0, (n, n))
    m = rng.uniform(0.5, 2.0, n)
    k = rng.uniform(0.1, 1.0, n) if kill else None
    return build_motion(n, m, rates, k)


def test_two_state_valid_and_irreducible():
    mo = build_motion(2, [1, 1], [[0, 1], [1, 0]])
    assert mo.irreducible
    assert mo.conservative
    np.testing.assert_array_equal(mo.generator, [[-1, 1], [1, -1]])


def test_absorbing_state_flagged():
    mo = build_motion(2, [1, 1], [[0, 1], [0, 0]])
    assert not mo.irreducible


@pytest.mark.parametrize("kwargs", [
    dict(states=2, m=[1, 0], rates=[[0, 1], [1, 0]]),
    dict(states=2, m=[1, 1], rates=[[0, -1], [1, 0]]),
    dict(states=2, m=[1, 1], rates=[[0, 1], [1, 0]], kill_rate=[-1, 0]),
    dict(states=0),
    dict(states=3, m=[1, 1], rates=np.zeros((3, 3))),
])
def test_invalid_models(kwargs):
    with pytest.raises(ValueError):
        build_motion(**kwargs)


def test_diagonal_ignored_on_input():
    mo = motion_from_json({"states": 2, "m": [1, 1], "rates": [[5, 1], [2, -7]], "kill": [0, 0.5]})
    np.testing.assert_allclose(mo.generator, [[-1, 1], [2, -2.5]])
    with pytest.raises(ValueError):
        motion_from_json({"states": 2, "bogus": 1, "rates": [[0, 1], [1, 0]]})


def test_two_state_density_closed_form():
    mo = build_motion(2, [1, 1], [[0, 1], [1, 0]])
    for t in (0.1, 1.0, 3.0):
        assert transition_density(mo, t, 0, 0) == pytest.approx((1 + math.exp(-2 * t)) / 2, abs=1e-14)
    assert transition_density(mo, 1.0, 0, 0) == pytest.approx(0.567668, abs=1e-6)


def test_density_uses_reference_measure():
    mo = build_motion(2, [2.0, 0.5], [[0, 1], [1, 0]])
    P = semigroup_matrix(mo, 0.7)
    np.testing.assert_allclose(transition_density(mo, 0.7), P / [2.0, 0.5])


@pytest.mark.parametrize("seed", range(5))
def test_expm_matches_taylor_oracle(seed):
    mo = random_model(seed, n=6, kill=seed % 2 == 1)
    for t in (0.3, 2.0):
        np.testing.assert_allclose(semigroup_matrix(mo, t), expm_oracle(t * mo.generator),
                                   rtol=1e-12, atol=1e-14)


def test_small_time_off_diagonal_vanishes():
    mo = build_motion(2, [1, 1], [[0, 1], [1, 0]])
    assert transition_density(mo, 1e-9, 0, 1) < 1e-8


def test_t_nonpositive_rejected():
    mo = build_motion(2, [1, 1], [[0, 1], [1, 0]])
    with pytest.raises(ValueError):
        transition_density(mo, 0.0, 0, 0)


@given(st.integers(0, 10_000))
@settings(max_examples=20, deadline=None)
def test_duality(seed):
    rng = np.random.default_rng(seed)
    mo = random_model(seed, kill=True)
    f, g = rng.normal(size=4), rng.normal(size=4)
    t = rng.uniform(0.1, 2)
    Pt = transition_density(mo, t) * mo.m[None, :]
    lhs = np.sum(f * (Pt @ g) * mo.m)
    rhs = np.sum(g * (dual_semigroup_matrix(mo, t) @ f) * mo.m)
    assert lhs == pytest.approx(rhs, abs=1e-10)


@given(st.integers(0, 10_000), st.floats(0.01, 2.0), st.floats(0.01, 2.0))
@settings(max_examples=30, deadline=None)
def test_chapman_kolmogorov(seed, s, t):
    mo = random_model(seed, kill=seed % 2 == 0)
    ps, pt, pst = (transition_density(mo, u) for u in (s, t, s + t))
    np.testing.assert_allclose(pst, ps @ np.diag(mo.m) @ pt, atol=1e-9)


def test_conservative_rows_sum_to_one():
    mo = random_model(3)
    for t in (0.1, 1.0, 10.0):
        np.testing.assert_allclose(transition_density(mo, t) @ mo.m, 1.0, atol=1e-10)


def test_killed_mass_strictly_decreasing():
    mo = random_model(4, kill=True)
    mass = [transition_density(mo, t) @ mo.m for t in (0.1, 0.5, 1.0, 2.0, 5.0)]
    assert np.all(np.diff(mass, axis=0) < 0)


def test_grid_diffusion_preset():
    mo = grid_diffusion(11, diffusion=0.1)
    assert mo.irreducible and mo.conservative
    np.testing.assert_allclose(mo.m.sum(), 11 / 10)
    # reflecting ends: symmetric rates, uniform m, so the uniform law is invariant
    P = semigroup_matrix(mo, 1.0)
    np.testing.assert_allclose(np.full(11, 1 / 11) @ P, np.full(11, 1 / 11), atol=1e-12)


def test_sample_path_zero_horizon():
    mo = build_motion(2, [1, 1], [[0, 1], [1, 0]])
    tr = sample_path(mo, 1, 0.0, np.random.default_rng(0))
    assert tr.jumps == [] and tr.end_state == 1 and not tr.killed


def test_sample_path_absorbing_sits_forever():
    mo = build_motion(2, [1, 1], [[0, 1], [0, 0]])
    tr = sample_path(mo, 1, 100.0, np.random.default_rng(0))
    assert tr.jumps == [] and tr.end_state == 1


def test_sample_path_invariants():
    mo = random_model(7, kill=True)
    rng = np.random.default_rng(1)
    for _ in range(200):
        tr = sample_path(mo, 0, 3.0, rng)
        times = [t for t, _ in tr.jumps]
        assert all(a < b for a, b in zip(times, times[1:]))
        assert all(t <= 3.0 for t in times)
        if tr.killed:
            assert all(t < tr.kill_time for t in times)
            assert tr.state_at(3.0) is None


def test_killing_time_law():
    mo = build_motion(1, [1.0], [[0.0]], [1.0])
    rng = np.random.default_rng(11)
    n = 100_000
    killed = np.array([sample_path(mo, 0, 1.0, rng).killed for _ in range(n)], dtype=float)
    p = 1 - math.exp(-1)
    assert abs(killed.mean() - p) <= 4 * math.sqrt(p * (1 - p) / n)


def test_two_state_occupancy_matches_density():
    mo = build_motion(2, [1, 1], [[0, 1], [1, 0]])
    rng = np.random.default_rng(12)
    n = 100_000
    ends = np.array([sample_path(mo, 0, 1.0, rng).end_state for _ in range(n)])
    p = transition_density(mo, 1.0, 0, 0) * mo.m[0]
    assert abs((ends == 0).mean() - p) <= 4 * math.sqrt(p * (1 - p) / n)


def test_end_state_chi_squared():
    mo = random_model(21, n=4)
    rng = np.random.default_rng(13)
    n = 100_000
    ends = np.array([sample_path(mo, 2, 1.0, rng).end_state for _ in range(n)])
    expected = transition_density(mo, 1.0)[2] * mo.m * n
    observed = np.bincount(ends, minlength=4)
    assert stats.chisquare(observed, expected).pvalue > 1e-3
