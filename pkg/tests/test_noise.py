"""Tests for the keyed noise streams and the coupled step variates."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from amlmc.noise import (
    NoiseStream,
    aggregate_coarse,
    build_eta,
    half_step_from_normals,
    normals_per_half_step,
    sample_coarse_step,
    sample_half_step,
    swap_fine_halves,
)


def _riemann_time_integral_oracle(n_samples, delta, n_grid=1024, seed=5150):
    """Monte Carlo oracle: (db, I) from a fine Brownian grid over one step.

    I = int (B_s - B_0) ds is computed as a left Riemann sum on n_grid points,
    which is exact in distribution up to O(n_grid^-1) discretization.
    """
    rng = np.random.default_rng(seed)
    h = delta / n_grid
    incs = np.sqrt(h) * rng.standard_normal((n_samples, n_grid))
    path = np.cumsum(incs, axis=1)
    db = path[:, -1]
    time_int = h * (np.sum(path, axis=1) - path[:, -1])  # left sum, B_0 = 0
    return db, time_int


# ---------------------------------------------------------------------------
# stream determinism and counter addressing

def test_stream_same_key_is_bit_identical():
    a = NoiseStream(42, ("lvl", 3, "step", 7)).normals(100, 5)
    b = NoiseStream(42, ("lvl", 3, "step", 7)).normals(100, 5)
    np.testing.assert_array_equal(a, b)


def test_stream_distinct_tags_differ():
    a = NoiseStream(42, ("a",)).normals(10, 4)
    b = NoiseStream(42, ("b",)).normals(10, 4)
    assert not np.allclose(a, b)


def test_sample_offset_matches_batch_slicing():
    stream = NoiseStream(7, ("batching",))
    batch = stream.normals(8, 5)
    for k in range(8):
        single = stream.normals(1, 5, sample_offset=k)
        np.testing.assert_array_equal(single[0], batch[k])


def test_substream_composes_tags():
    direct = NoiseStream(3, ("x", 1, "y")).uniforms(4, 2)
    nested = NoiseStream(3, ("x",)).substream(1).substream("y").uniforms(4, 2)
    np.testing.assert_array_equal(direct, nested)


def test_uniforms_in_open_unit_interval():
    u = NoiseStream(11, ("u",)).uniforms(100000, 2)
    assert np.all(u > 0) and np.all(u < 1)


# ---------------------------------------------------------------------------
# half-step variates

def test_zero_normals_give_zero_noise():
    z = np.zeros((3, normals_per_half_step(2, True)))
    half = half_step_from_normals(z, 0.5, 2, True)
    assert np.all(half.db == 0)
    assert np.all(half.db_tilde == 0)
    assert np.all(half.time_int == 0)


def test_half_step_rejects_nonpositive_delta():
    z = np.zeros((1, normals_per_half_step(1, False)))
    with pytest.raises(ValueError):
        half_step_from_normals(z, 0.0, 1, False)


def test_elliptic_half_step_has_no_time_integrals():
    half = sample_half_step(NoiseStream(1, ()), 0.25, 2, False, n_samples=10)
    assert half.time_int is None
    assert half.db.shape == (10, 2)
    assert half.db_tilde.shape == (10, 1)


def test_time_integral_joint_moments_match_riemann_oracle():
    # oracle first: covariance structure of (db, I) from a fine Brownian grid
    delta, n = 0.25, 200000
    odb, oti = _riemann_time_integral_oracle(n, delta)
    half = sample_half_step(NoiseStream(123, ("mom",)), delta, 1, True, n_samples=n)
    db, ti = half.db[:, 0], half.time_int[:, 0]

    # analytic targets, cross-checked against the oracle estimates
    for label, sample, target in [
        ("oracle cov", odb * oti, delta**2 / 2),
        ("oracle var", oti * oti, delta**3 / 3),
        ("cov(db, I)", db * ti, delta**2 / 2),
        ("var(I)", ti * ti, delta**3 / 3),
    ]:
        err = abs(np.mean(sample) - target)
        tol = 3 * np.std(sample) / np.sqrt(n)
        assert err < tol, f"{label}: {err} > {tol}"


def test_db_tilde_independent_of_db():
    half = sample_half_step(NoiseStream(9, ("ind",)), 0.5, 3, False, n_samples=200000)
    for j in range(3):
        for k in range(2):
            corr = np.corrcoef(half.db[:, j], half.db_tilde[:, k])[0, 1]
            assert abs(corr) < 0.01


# ---------------------------------------------------------------------------
# coarse aggregation

def test_aggregate_zeros():
    z = np.zeros((2, normals_per_half_step(1, True)))
    half = half_step_from_normals(z, 0.5, 1, True)
    coarse = aggregate_coarse(half, half)
    assert np.all(coarse.db == 0)
    assert np.all(coarse.time_int == 0)
    assert coarse.delta == 1.0


def test_aggregate_db_additivity():
    a = HalfLike(db=0.3)
    b = HalfLike(db=-0.1)
    coarse = aggregate_coarse(a.half(0.5), b.half(0.5))
    np.testing.assert_allclose(coarse.db, 0.2)


class HalfLike:
    """Tiny builder for 1-d hypo-elliptic half-steps with chosen values."""

    def __init__(self, db=0.0, time_int=0.0):
        self.db_val = db
        self.ti_val = time_int

    def half(self, delta):
        from amlmc.noise import HalfStepNoise
        return HalfStepNoise(delta=delta, db=np.array([self.db_val]),
                             db_tilde=np.zeros(0),
                             time_int=np.array([self.ti_val]))


def test_aggregate_time_integral_splitting():
    # I_coarse = I_1 + I_2 + db_1 * delta_fine: 0.01 + 0.02 + 0.3 * 0.5 = 0.18
    first = HalfLike(db=0.3, time_int=0.01).half(0.5)
    second = HalfLike(db=-0.1, time_int=0.02).half(0.5)
    coarse = aggregate_coarse(first, second)
    np.testing.assert_allclose(coarse.time_int, 0.18)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 3), st.booleans())
def test_sampled_coarse_step_aggregates_exactly(seed, d, hypo):
    step = sample_coarse_step(NoiseStream(seed, ("agg",)), 0.125, d, hypo,
                              n_samples=16)
    again = aggregate_coarse(step.fine_first, step.fine_second)
    np.testing.assert_array_equal(step.coarse.db, again.db)
    np.testing.assert_array_equal(step.coarse.db_tilde, again.db_tilde)
    if hypo:
        np.testing.assert_array_equal(step.coarse.time_int, again.time_int)
    assert step.coarse.delta == 0.25


def test_swap_is_involution():
    step = sample_coarse_step(NoiseStream(21, ("swap",)), 0.25, 2, True,
                              n_samples=32)
    twice = swap_fine_halves(swap_fine_halves(step))
    np.testing.assert_array_equal(step.fine_first.db, twice.fine_first.db)
    np.testing.assert_array_equal(step.fine_second.db, twice.fine_second.db)
    np.testing.assert_array_equal(step.coarse.db, twice.coarse.db)
    np.testing.assert_array_equal(step.coarse.time_int, twice.coarse.time_int)


def test_swap_preserves_coarse_db_but_not_time_int():
    step = sample_coarse_step(NoiseStream(22, ("swap2",)), 0.25, 1, True,
                              n_samples=64)
    swapped = swap_fine_halves(step)
    np.testing.assert_allclose(swapped.coarse.db, step.coarse.db)
    # the coarse time integral is order-dependent (db of the leading half enters)
    assert not np.allclose(swapped.coarse.time_int, step.coarse.time_int)


def test_swap_preserves_the_law():
    # the two half-steps are i.i.d., so the swapped bundle has the same law
    step = sample_coarse_step(NoiseStream(23, ("law",)), 0.125, 2, True,
                              n_samples=100000)
    swapped = swap_fine_halves(step)
    for orig, new in [(step.fine_first.db[:, 0], swapped.fine_first.db[:, 0]),
                      (step.fine_first.time_int[:, 1], swapped.fine_first.time_int[:, 1]),
                      (step.coarse.time_int[:, 0], swapped.coarse.time_int[:, 0])]:
        p = stats.ks_2samp(orig, new).pvalue
        assert p > 1e-4


# ---------------------------------------------------------------------------
# eta / a-tilde tables

def test_eta_zero_noise_values():
    z = np.zeros((1, normals_per_half_step(2, False)))
    eta = build_eta(half_step_from_normals(z, 0.5, 2, False)).eta[0]
    assert eta[0, 0] == pytest.approx(0.125)      # delta^2 / 2
    assert eta[1, 1] == pytest.approx(-0.25)      # -delta / 2
    assert eta[2, 2] == pytest.approx(-0.25)
    assert eta[1, 2] == 0 and eta[2, 1] == 0


def test_eta_elliptic_worked_example():
    # d = 2, db = (1, 2), delta = 1
    from amlmc.noise import HalfStepNoise
    noise = HalfStepNoise(delta=1.0, db=np.array([1.0, 2.0]),
                          db_tilde=np.array([0.5]))
    eta = build_eta(noise).eta
    assert eta[1, 2] == pytest.approx(1.0)        # (1*2)/2
    assert eta[1, 1] == pytest.approx(0.0)        # (1*1 - 1)/2
    assert eta[0, 1] == pytest.approx(0.5)        # (delta*db1)/2


def test_eta_hypo_elliptic_worked_example():
    # db = 0.4, I = 0.12, delta = 0.5
    from amlmc.noise import HalfStepNoise
    noise = HalfStepNoise(delta=0.5, db=np.array([0.4]), db_tilde=np.zeros(0),
                          time_int=np.array([0.12]))
    eta = build_eta(noise).eta
    assert eta[1, 0] == pytest.approx(0.12)
    assert eta[0, 1] == pytest.approx(0.5 * 0.4 - 0.12)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 3), st.booleans())
def test_eta_integration_by_parts_identity(seed, d, hypo):
    # eta[0][j] + eta[j][0] = delta * dB^j holds exactly in both regimes
    noise = sample_half_step(NoiseStream(seed, ("ibp",)), 0.25, d, hypo,
                             n_samples=8)
    eta = build_eta(noise).eta
    for j in range(1, d + 1):
        np.testing.assert_allclose(eta[..., 0, j] + eta[..., j, 0],
                                   0.25 * noise.db[..., j - 1], rtol=1e-12)


def test_eta_and_a_tilde_moments():
    delta, n = 0.5, 400000
    noise = sample_half_step(NoiseStream(77, ("moments",)), delta, 2, True,
                             n_samples=n)
    table = build_eta(noise)
    d = 2
    for j1 in range(d + 1):
        for j2 in range(d + 1):
            if j1 == j2 == 0:
                continue
            vals = table.eta[:, j1, j2]
            tol = 4 * np.std(vals) / np.sqrt(n)
            assert abs(np.mean(vals)) < tol, (j1, j2)
    at = table.a_tilde[:, 1, 2]
    assert abs(np.mean(at)) < 4 * np.std(at) / np.sqrt(n)
    # Var(dB^1 dBtilde^2) = delta^2
    var = np.var(at)
    se = np.std((at - at.mean()) ** 2) / np.sqrt(n)
    assert abs(var - delta**2) < 4 * se


def test_build_eta_requires_time_integrals_when_hypo():
    noise = sample_half_step(NoiseStream(1, ()), 0.25, 1, False, n_samples=2)
    with pytest.raises(ValueError):
        build_eta(noise, hypo_elliptic=True)
