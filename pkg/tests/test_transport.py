import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import rotation_matrix, rotation_flow_exact, shifted_pairing
from stochlab.brownian import BrownianPath, refine, sample_path
from stochlab.drift import make_drift
from stochlab.transport import (
    QuadratureSpec,
    TestFunction,
    auxiliary_solution,
    bump_peak_slope,
    drift_term,
    enclosing_box,
    evaluate_solution,
    foot_points,
    frozen_candidate,
    lagrangian_pairing,
    make_datum,
    pairing,
    pairing_trace,
    phi_battery,
    pushforward_defect,
    representation_solution,
    residual_battery,
    sequence_member,
    stratonovich_term,
    weak_residual,
)


@pytest.fixture
def path():
    return sample_path(31, 2, 1.0, 128)


@pytest.fixture
def bump():
    return make_datum("radial_bump", center=(0.25, 0.0), radius=0.75)


def grid(n=15, half=1.5):
    g = np.linspace(-half, half, n)
    return np.stack(np.meshgrid(g, g, indexing="ij"), axis=-1).reshape(-1, 2)


# --- data and test functions ---------------------------------------------


def test_datum_catalog_values():
    assert make_datum("radial_bump", amplitude=2.0)(np.zeros(2)) == 2.0
    assert make_datum("radial_bump")(np.array([1.0, 0.0])) == 0.0
    ind = make_datum("indicator_halfspace", normal=(1, 0), offset=0.1)
    assert np.array_equal(ind(np.array([[0.2, 5.0], [0.0, 5.0]])), [1.0, 0.0])
    cb = make_datum("continuous_bounded", radius=2.0)
    assert cb(np.array([1.0, 0.0])) == 0.5
    with pytest.raises(ValueError):
        make_datum("gaussian")


def test_bump_lipschitz_constant(bump):
    x = np.random.default_rng(0).uniform(-1, 1.5, (4000, 2))
    y = x + np.random.default_rng(1).normal(scale=1e-3, size=x.shape)
    ratio = np.abs(bump(x) - bump(y)) / np.linalg.norm(x - y, axis=-1)
    assert ratio.max() <= bump.lipschitz
    s = np.linspace(0, 1, 200_001)[1:-1]
    profile = np.exp(1 - 1 / (1 - s**2))
    assert bump_peak_slope() == pytest.approx(np.max(-np.gradient(profile, s)), rel=1e-6)


@pytest.mark.parametrize("mode", ["oscillatory", "offset", "scaled", "additive", "constant"])
def test_sequence_members(bump, mode):
    x = grid(41)
    seq = [sequence_member(bump, n, mode) for n in (1, 4, 16)]
    for u in seq:
        assert np.allclose(u(x), u.limit()(x) + u.difference(x), rtol=0, atol=1e-15)
        assert np.max(np.abs(u.difference(x))) <= u.sup_distance() + 1e-15
        assert np.max(np.abs(u(x))) <= u.sup_norm + 1e-15
    if mode == "oscillatory":
        assert seq[0].limit()(x).max() == 0.0
    elif mode == "offset":
        assert [u.sup_distance() for u in seq] == [1.0, 0.25, 0.0625]
    with pytest.raises(ValueError):
        sequence_member(bump, 0, mode)


def test_test_function_gradient_and_support():
    phi = TestFunction((0.2, -0.1), 0.5, 2.0)
    x = np.random.default_rng(2).uniform(-0.4, 0.8, (50, 2))
    h = 1e-6
    fd = np.stack([(phi(x + h * e) - phi(x - h * e)) / (2 * h) for e in np.eye(2)], axis=-1)
    assert np.allclose(phi.gradient(x), fd, rtol=0, atol=1e-6)
    far = np.array([[0.2 + 0.5, -0.1], [2.0, 2.0]])
    assert np.all(phi(far) == 0) and np.all(phi.gradient(far) == 0)
    quad = QuadratureSpec(((-0.3, 0.7), (-0.6, 0.4)), 401)
    nodes, w = quad.nodes()
    assert np.sum(w * phi(nodes)) == pytest.approx(phi.integral(), rel=1e-10)


def test_battery_and_box():
    phis = phi_battery(8, 0.5, 0.5)
    assert len(phis) == 8
    box = enclosing_box(phis)
    quad = QuadratureSpec(box, 33)
    assert all(quad.contains(p) for p in phis)
    assert quad.refined().nodes_per_axis == 65
    narrow = QuadratureSpec(((-0.5, 0.5), (-0.5, 0.5)), 33)
    ws = representation_solution(make_drift("zero"), BrownianPath.zeros(2, 1.0, 4), make_datum("constant"))
    with pytest.raises(ValueError):
        pairing(ws, phis[0], 0.0, narrow)


# --- solution evaluation -------------------------------------------------


def test_zero_drift_solution_is_shifted_datum(path, bump):
    ws = representation_solution(make_drift("zero"), path, bump)
    x = grid()
    for t in (0.0, 0.375, 1.0):
        expect = bump(x - path.values[path.knot(t)])
        assert np.allclose(evaluate_solution(ws, t, x), expect, rtol=0, atol=1e-15)


def test_indicator_under_zero_drift(path):
    u0 = make_datum("indicator_halfspace", normal=(0, 1), offset=0.2)
    ws = representation_solution(make_drift("zero"), path, u0)
    x = grid(31)
    shifted = x[:, 1] - path.values[-1, 1]
    u = evaluate_solution(ws, 1.0, x)
    clear = np.abs(shifted - 0.2) > 1e-12
    assert np.array_equal(u[clear], (shifted[clear] > 0.2).astype(float))


@pytest.mark.parametrize("kind", ["shear", "linear_skew", "rotational_singular"])
def test_constant_datum_stays_constant(path, kind):
    u0 = make_datum("constant", level=0.7)
    x = grid()
    for ws in (representation_solution(make_drift(kind), path, u0), auxiliary_solution(make_drift(kind), path, u0)):
        assert np.all(evaluate_solution(ws, 1.0, x) == 0.7)


def test_constant_drift_both_routes_exact(path, bump):
    c = np.array([0.3, -0.4])
    b = make_drift("constant", c=c)
    x = grid()
    for t in (0.5, 1.0):
        expect = bump(x - c * t - path.values[path.knot(t)])
        for ws in (representation_solution(b, path, bump), auxiliary_solution(b, path, bump)):
            assert np.allclose(evaluate_solution(ws, t, x), expect, rtol=0, atol=1e-12)


def test_rotation_solution_against_exact_backward_map(bump):
    w = sample_path(8, 2, 1.0, 64)
    while w.n_steps < 4096:
        w = refine(w)
    x = grid(9, 1.0)
    _, conv = rotation_flow_exact(np.zeros(2), w, 1.0, 1.0)
    y = (x - conv) @ rotation_matrix(1.0, -1.0).T
    u = evaluate_solution(representation_solution(make_drift("linear_skew"), w, bump), 1.0, x)
    assert np.max(np.abs(u - bump(y))) <= 1e-3


def test_route_equivalence(bump):
    x = np.random.default_rng(3).uniform(-1, 1.5, (40, 2))
    errs = []
    w = sample_path(9, 2, 1.0, 64)
    for _ in range(3):
        b = make_drift("linear_skew")
        rep = foot_points(representation_solution(b, w, bump), [w.n_steps], x)
        aux_ws = auxiliary_solution(b, w, bump)
        aux = foot_points(aux_ws, [w.n_steps], x)
        assert aux_ws.fallback_steps == 0
        errs.append(np.max(np.abs(rep - aux)))
        w = refine(w)
    assert errs[0] > errs[1] > errs[2]
    b = make_drift("shear")
    rep = foot_points(representation_solution(b, w, bump), [w.n_steps], x)
    aux = foot_points(auxiliary_solution(b, w, bump), [w.n_steps], x)
    assert np.max(np.abs(rep - aux)) < 5e-3


def test_auxiliary_needs_divergence_free(path, bump):
    b = make_drift("custom_callable", fn=lambda t, x: x, divergence_free=False)
    with pytest.raises(ValueError):
        auxiliary_solution(b, path, bump)


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 2**32), kind=st.sampled_from(["shear", "linear_skew", "holder_rotational"]))
def test_solution_keeps_datum_range(seed, kind):
    u0 = make_datum("continuous_bounded", center=(0.1, 0.2), radius=0.8, amplitude=1.5)
    w = sample_path(seed, 2, 1.0, 64)
    u = evaluate_solution(representation_solution(make_drift(kind), w, u0), 1.0, grid(21, 2.5))
    assert u.min() >= 0.0 and u.max() <= 1.5


# --- pairings and weak-form terms ----------------------------------------


def test_pairing_matches_shifted_oracle(path, bump):
    phi = TestFunction((0.3, 0.2), 0.6)
    ws = representation_solution(make_drift("zero"), path, bump)
    quad = QuadratureSpec(((-0.5, 1.1), (-0.6, 1.0)), 257)
    for t in (0.25, 1.0):
        shift = path.values[path.knot(t)]
        assert pairing(ws, phi, t, quad) == pytest.approx(shifted_pairing(bump, phi, shift), abs=1e-6)


def test_weak_terms_vanish_for_constant_datum(path):
    u0 = make_datum("constant", level=2.0)
    phi = TestFunction((0.1, -0.2), 0.7)
    quad = QuadratureSpec(enclosing_box([phi], 0.1), 65)
    ws = representation_solution(make_drift("shear"), path, u0)
    assert abs(drift_term(ws, phi, 1.0, quad)) < 1e-12
    assert abs(stratonovich_term(ws, phi, 1.0, quad)) < 1e-12
    assert abs(weak_residual(ws, phi, 1.0, quad)) < 1e-12


def test_stratonovich_term_zero_on_zero_path(bump):
    ws = representation_solution(make_drift("shear"), BrownianPath.zeros(2, 1.0, 64), bump)
    phi = TestFunction((0.0, 0.0), 0.5)
    assert stratonovich_term(ws, phi, 1.0, QuadratureSpec(enclosing_box([phi]), 33)) == 0.0


def test_drift_term_quadrature_converges(path, bump):
    phi = TestFunction((0.4, 0.1), 0.5)
    ws = representation_solution(make_drift("shear"), path, bump)
    box = enclosing_box([phi])
    coarse = drift_term(ws, phi, 0.25, QuadratureSpec(box, 49))
    fine = drift_term(ws, phi, 0.25, QuadratureSpec(box, 193))
    assert coarse == pytest.approx(fine, rel=1e-2)


def test_stratonovich_term_stable_under_path_refinement(bump):
    phi = TestFunction((0.4, 0.1), 0.5)
    quad = QuadratureSpec(enclosing_box([phi]), 65)
    w = sample_path(12, 2, 1.0, 64)
    vals = []
    for _ in range(3):
        vals.append(stratonovich_term(representation_solution(make_drift("zero"), w, bump), phi, 1.0, quad))
        w = refine(w)
    assert abs(vals[2] - vals[1]) < abs(vals[1] - vals[0]) + 1e-3
    assert abs(vals[2] - vals[1]) < 5e-3


def test_residual_smaller_than_frozen_control(bump):
    b = make_drift("linear_skew")
    w = sample_path(13, 2, 1.0, 128)
    phis = phi_battery(4, 0.5, 0.5)
    quad = QuadratureSpec(enclosing_box(phis), 49)
    good = residual_battery(representation_solution(b, w, bump), phis, 1.0, quad)
    bad = residual_battery(frozen_candidate(b, w, bump), phis, 1.0, quad)
    assert max(abs(r.residual) for r in good) * 5 < max(abs(r.residual) for r in bad)
    assert all(r.steps == 128 and r.nodes == 49**2 and r.skipped == 0 for r in good)


def test_pairing_trace_continuity(bump):
    phi = TestFunction((0.0, 0.0), 0.6)
    quad = QuadratureSpec(enclosing_box([phi]), 33)
    w = sample_path(14, 2, 1.0, 64)
    moduli = []
    for _ in range(2):
        tr = pairing_trace(representation_solution(make_drift("shear"), w, bump), phi, 1.0, quad)
        assert len(tr) == w.n_steps + 1
        moduli.append(np.max(np.abs(np.diff(tr))))
        w = refine(w)
    assert moduli[1] < moduli[0]


def test_pushforward_identity_and_lagrangian_pairing(bump):
    b = make_drift("shear")
    w = sample_path(15, 2, 1.0, 512)
    phi = TestFunction((0.2, 0.1), 0.6)
    quad = QuadratureSpec(((-2.5, 2.5), (-2.5, 2.5)), 129)
    assert pushforward_defect(b, w, bump, phi, 1.0, quad) < 1e-3
    ws = representation_solution(b, w, bump)
    lag = lagrangian_pairing(b, w, bump, phi, 1.0, quad)
    eul = pairing(ws, phi, 1.0, quad)
    assert lag == pytest.approx(eul, abs=2e-3)
