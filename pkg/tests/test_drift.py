import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import direct_mollification, lp_norm_grid
from stochlab.drift import (
    DRIFT_KINDS,
    LpsExponents,
    MollifierKernel,
    SingularityError,
    default_exponents,
    divergence_numeric,
    evaluate_drift,
    exponent_warnings,
    lp_norm_estimate,
    lps_index,
    lps_satisfied,
    make_drift,
    mollify_drift,
    radial_cutoff,
)

DIV_FREE = ["zero", "constant", "linear_skew", "shear", "rotational_singular", "holder_rotational"]


# --- LPS bookkeeping -----------------------------------------------------


@pytest.mark.parametrize(
    "d,p,q,index,ok",
    [(3, 4, 8, 1.0, False), (2, 6, 6, 2 / 3, True), (2, 2, 4, 1.5, False), (2, 8, 2, 1.25, False)],
)
def test_lps_index_and_condition(d, p, q, index, ok):
    e = LpsExponents(d, p, q)
    assert lps_index(e) == pytest.approx(index, abs=0)
    assert lps_satisfied(e) is ok


def test_lps_rejects_bad_exponents():
    with pytest.raises(ValueError):
        lps_index(LpsExponents(2, 0.0, 4.0))
    with pytest.raises(ValueError):
        LpsExponents(0, 2.0, 4.0)
    with pytest.raises(ValueError):
        LpsExponents(2, float("inf"), 4.0)


@settings(max_examples=200, deadline=None)
@given(
    d=st.integers(1, 3),
    p=st.floats(0.5, 50),
    q=st.floats(0.5, 50),
    dp=st.floats(0, 20),
    dq=st.floats(0, 20),
)
def test_lps_monotone_in_exponents(d, p, q, dp, dq):
    if lps_satisfied(LpsExponents(d, p, q)):
        assert lps_satisfied(LpsExponents(d, p + dp, q))
        assert lps_satisfied(LpsExponents(d, p, q + dq))


def test_singular_default_exponents_are_lps_valid():
    e = default_exponents("rotational_singular", 2, alpha=1.5)
    assert (e.p, e.q) == (3.0, 12.0)
    assert lps_satisfied(e)
    assert exponent_warnings(make_drift("rotational_singular", alpha=1.5)) == []


def test_exponent_warning_for_mislabeled_field():
    b = make_drift("rotational_singular", alpha=2.5, exponents=(4.0, 4.0))
    with pytest.warns(UserWarning):
        msgs = exponent_warnings(b)
    assert msgs


# --- evaluation ----------------------------------------------------------


def test_catalog_examples():
    x = np.array([1.0, 0.0])
    assert np.array_equal(evaluate_drift(make_drift("zero"), 0.3, x), np.zeros(2))
    A = [[0.0, -1.0], [1.0, 0.0]]
    assert np.allclose(evaluate_drift(make_drift("linear_skew", A=A), 0.0, x), [0.0, 1.0], atol=0)
    assert np.allclose(evaluate_drift(make_drift("rotational_singular", alpha=0.5), 0.0, x), [0.0, 1.0], atol=0)


def test_singular_point_raises_and_nan_mode():
    b = make_drift("rotational_singular", alpha=1.5)
    with pytest.raises(SingularityError):
        b.evaluate(0.0, np.zeros(2))
    out = b.evaluate(0.0, np.array([[0.0, 0.0], [1.0, 0.0]]), on_singular="nan")
    assert np.isnan(out[0]).all() and np.isfinite(out[1]).all()


def test_evaluate_is_deterministic_and_broadcasts():
    b = make_drift("shear")
    x = np.random.default_rng(0).normal(size=(3, 4, 2))
    assert np.array_equal(b(0.1, x), b(0.1, x))
    assert b(0.1, x).shape == (3, 4, 2)
    with pytest.raises(ValueError):
        b(0.0, np.zeros(3))


def test_cutoff_profile():
    r = np.array([0.0, 4.9, 5.0, 7.5, 10.0, 12.0])
    chi, dchi = radial_cutoff(r, 10.0)
    assert chi[0] == chi[1] == chi[2] == 1.0
    assert 0 < chi[3] < 1 and dchi[3] < 0
    assert chi[4] == chi[5] == 0.0
    for kind in ("linear_skew", "shear", "constant", "rotational_singular"):
        assert np.all(make_drift(kind)(0.0, np.array([[10.5, 0.0], [0.0, -11.0]])) == 0)


def test_identity_field_divergence():
    b = make_drift("custom_callable", fn=lambda t, x: x, divergence_free=False)
    assert divergence_numeric(b, 0.0, np.array([0.3, -0.7]), h=1e-4) == pytest.approx(2.0, abs=1e-8)


@pytest.mark.parametrize("kind", DIV_FREE)
def test_divergence_free_catalog(kind):
    b = make_drift(kind)
    rng = np.random.default_rng(1)
    x = rng.uniform(-9, 9, size=(100, 2))
    x = x[np.linalg.norm(x, axis=-1) > 1e-3]
    div = divergence_numeric(b, 0.0, x, h=1e-5)
    assert np.all(np.abs(div) <= 1e-6 * (1 + np.linalg.norm(x, axis=-1)))


def test_zero_and_shear_divergence_exact():
    assert divergence_numeric(make_drift("zero"), 0.0, np.array([1.0, 2.0])) == 0.0
    b = make_drift("custom_callable", fn=lambda t, x: np.stack([np.sin(x[..., 1]), 0 * x[..., 0]], -1))
    assert abs(divergence_numeric(b, 0.0, np.array([0.2, 0.4]))) < 1e-12


def test_all_kinds_constructible():
    for kind in DRIFT_KINDS:
        kw = {"fn": lambda t, x: 0 * x} if kind == "custom_callable" else {}
        assert make_drift(kind, **kw).kind == kind
    with pytest.raises(ValueError):
        make_drift("vortex")


# --- mollification -------------------------------------------------------


@pytest.mark.parametrize("delta", [0.4, 0.2, 0.1, 0.05])
def test_kernel_mass_and_symmetry(delta):
    k = MollifierKernel(delta)
    y, w = k.nodes(2)
    assert abs(w.sum() - 1) <= 1e-8
    assert np.allclose(w @ y, 0, atol=1e-15)
    assert np.allclose(k.density(y), k.density(-y), rtol=0, atol=0)
    assert abs(k.continuous_mass(2) - 1) < 1e-4


def test_mollify_zero_and_linear():
    k = MollifierKernel(0.2)
    x = np.random.default_rng(2).uniform(-2, 2, (20, 2))
    assert np.all(mollify_drift(make_drift("zero"), k)(0.0, x) == 0)
    A = np.array([[0.0, -0.7], [0.7, 0.0]])
    lin = mollify_drift(make_drift("linear_skew", A=A), k)
    assert np.allclose(lin(0.0, x), x @ A.T, atol=1e-12)


def test_mollified_singular_field_oracle():
    b = make_drift("rotational_singular", alpha=0.5)
    k = MollifierKernel(0.1)
    bd = mollify_drift(b, k)
    x = np.array([1.0, 0.0])
    v = bd(0.0, x)
    assert np.all(np.isfinite(v))
    assert np.linalg.norm(v - b(0.0, x)) < 1e-3
    oracle = direct_mollification(b, x, 0.1, 330)  # 10x the default node density
    assert np.linalg.norm(v - oracle) < 1e-5


def test_mollified_singular_field_defined_at_origin():
    bd = mollify_drift(make_drift("rotational_singular", alpha=1.5), MollifierKernel(0.1))
    v = bd(0.0, np.array([[0.0, 0.0], [0.01, 0.0]]))
    assert np.all(np.isfinite(v))
    assert np.allclose(v[0], 0, atol=1e-12)


@pytest.mark.parametrize("kind", ["shear", "rotational_singular", "holder_rotational"])
def test_mollification_keeps_divergence_free(kind):
    bd = mollify_drift(make_drift(kind), MollifierKernel(0.2))
    x = np.random.default_rng(3).uniform(-2, 2, (30, 2))
    # the mollified Holder profile has large third derivatives near r0, so use a small step
    assert np.max(np.abs(divergence_numeric(bd, 0.0, x, h=1e-5))) < 1e-5


def test_fast_path_matches_direct_quadrature():
    for kind in ("shear", "rotational_singular", "constant"):
        bd = mollify_drift(make_drift(kind), MollifierKernel(0.2))
        x = np.random.default_rng(4).uniform(-2, 2, (25, 2))
        x = x[np.linalg.norm(x, axis=-1) > 0.3]
        assert np.allclose(bd(0.0, x), bd.fn.direct(0.0, x), atol=1e-6), kind


# --- norms ---------------------------------------------------------------


def test_lp_norm_trivial_cases():
    box = ((0.0, 1.0), (0.0, 1.0))
    assert lp_norm_estimate(make_drift("zero"), 0.0, 2.0, box, 11).value == 0.0
    c = make_drift("constant", c=(3.0, 4.0))
    for p in (1.0, 2.0, 7.0):
        assert lp_norm_estimate(c, 0.0, p, box, 11).value == pytest.approx(5.0, rel=1e-12)


def test_lp_norm_singular_field_against_refined_grid():
    b = make_drift("rotational_singular", alpha=0.5)
    box = ((-1.0, 1.0), (-1.0, 1.0))
    est = lp_norm_estimate(b, 0.0, 2.0, box, 401)
    assert est.skipped_nodes == 1
    oracle = lp_norm_grid(b, 2.0, box, 3201)
    assert est.value == pytest.approx(oracle, rel=1e-2)
