import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stochlab.brownian import (
    BrownianPath,
    derive_seed,
    dump_path_csv,
    load_path_csv,
    refine,
    refine_to,
    sample_path,
    sample_paths,
    stack_values,
    value_at,
)


def test_sampling_is_bit_reproducible():
    a = sample_path(7, 2, 1.0, 8)
    b = sample_path(7, 2, 1.0, 8)
    assert np.array_equal(a.values, b.values)
    assert not np.array_equal(a.values, sample_path(8, 2, 1.0, 8).values)
    assert not np.array_equal(a.values, sample_path(7, 2, 1.0, 8, replicate=1).values)


def test_path_starts_at_zero_and_is_immutable():
    p = sample_path(1, 3, 2.0, 16)
    assert np.array_equal(p.values[0], np.zeros(3))
    with pytest.raises(ValueError):
        p.values[1, 0] = 1.0


def test_terminal_moments_over_ensemble():
    T, R = 1.0, 10_000
    ends = np.array([sample_path(11, 2, T, 4, replicate=r).values[-1] for r in range(R)])
    assert np.all(np.abs(ends.mean(axis=0)) <= 4 * np.sqrt(T / R))
    assert np.all(np.abs(ends.var(axis=0) - T) <= 0.1 * T)


def test_increment_variance_matches_grid():
    p = sample_path(3, 2, 1.0, 20_000)
    var = p.increments.var(axis=0)
    assert np.allclose(var, p.dt, rtol=0.05)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**63), n=st.integers(1, 64), levels=st.integers(1, 3))
def test_refinement_keeps_coarse_knots(seed, n, levels):
    p = sample_path(seed, 2, 1.0, n)
    fine = p
    for _ in range(levels):
        fine = refine(fine)
    assert fine.n_steps == n * 2**levels
    assert np.array_equal(fine.values[:: 2**levels], p.values)
    for k in range(n + 1):
        assert np.array_equal(value_at(fine, p.times[k]).value, value_at(p, p.times[k]).value)


def test_bridge_midpoint_variance():
    p = sample_path(5, 1, 1.0, 10_000)
    f = refine(p)
    resid = f.values[1::2, 0] - 0.5 * (f.values[0:-1:2, 0] + f.values[2::2, 0])
    assert resid.var() == pytest.approx(p.dt / 4, rel=0.1)


def test_value_at_rules():
    p = sample_path(2, 2, 1.0, 4)
    assert np.array_equal(value_at(p, 0.0).value, np.zeros(2))
    assert np.allclose(value_at(p, 1.0).value, p.increments.sum(axis=0), rtol=0, atol=1e-14)
    mid = value_at(p, 0.125)
    assert mid.interpolated
    assert np.allclose(mid.value, 0.5 * (p.values[0] + p.values[1]))
    assert not value_at(p, 0.25).interpolated
    with pytest.raises(ValueError):
        value_at(p, 1.5)


def test_knot_lookup():
    p = sample_path(0, 2, 1.0, 8)
    assert p.knot(0.375) == 3
    with pytest.raises(ValueError):
        p.knot(0.3)


def test_scaling_law():
    # B on [0, 4] has the law of 2 B on [0, 1]: compare terminal variances
    a = np.array([sample_path(4, 1, 4.0, 2, replicate=r).values[-1, 0] for r in range(4000)])
    b = np.array([2 * sample_path(9, 1, 1.0, 2, replicate=r).values[-1, 0] for r in range(4000)])
    assert a.var() == pytest.approx(b.var(), rel=0.12)


def test_refine_to_and_ensembles():
    p = sample_path(1, 2, 1.0, 4)
    assert refine_to(p, 32).n_steps == 32
    with pytest.raises(ValueError):
        refine_to(p, 24)
    paths = sample_paths(1, 2, 1.0, 4, 3, level=2)
    assert stack_values(paths).shape == (17, 3, 2)
    assert np.array_equal(paths[0].values[::4], p.values)


def test_zero_path_and_seed_derivation():
    z = BrownianPath.zeros(2, 1.0, 10)
    assert np.all(z.values == 0) and z.n_steps == 10
    assert derive_seed(1, 2, 3) == derive_seed(1, 2, 3) != derive_seed(1, 2, 4)


def test_csv_round_trip(tmp_path):
    p = sample_path(12, 2, 0.5, 16)
    f = tmp_path / "path.csv"
    dump_path_csv(p, f)
    assert f.read_text().splitlines()[0] == "t,B1,B2"
    q = load_path_csv(f)
    assert np.array_equal(q.values, p.values) and q.horizon == p.horizon
