"""Symbolic tensor fields, Lie derivatives and transport contractions."""

import numpy as np
import pytest
import sympy as sp
from numpy.testing import assert_allclose

from flowtensor.fields import (
    coordinate_one_form,
    euclidean_metric,
    gbm_vector_field,
    linear_vector_field,
    random_tensor_field,
    random_vector_field,
    rotation_field_2d,
    scalar_field,
    sphere_rotation_fields,
    sphere_round_metric,
    tensor_field,
    vector_field,
)
from flowtensor.geometry import JacobianData, TensorValue
from flowtensor.tensor_calculus import (
    InsufficientSmoothness,
    TensorFieldSpec,
    ValenceMismatch,
    coord_symbols,
    fd_jets_from_stencil,
    lie_derivative,
    lie_derivative_fd_oracle,
    lie_jet,
    pair,
    pair_batch,
    pullback,
    pullback_batch,
    pushforward,
    pushforward_batch,
    stencil_offsets,
)

X0, X1 = coord_symbols(2)


# ---------------------------------------------------------------------------
# field evaluation and jets
# ---------------------------------------------------------------------------


def test_eval_batch_polynomial_values():
    f = scalar_field(2, X0**2 + 3 * X1, name="quad")
    pts = np.array([[1.0, 2.0], [0.5, -1.0]])
    assert_allclose(f.eval_batch(0.0, pts, 0), [7.0, -2.75])


def test_jet_batch_matches_hand_derivatives():
    f = scalar_field(2, X0**2 * X1, name="cubic")
    pts = np.array([[1.5, -2.0]])
    val, d1, d2 = f.jet_batch(0.0, pts, 0, 2)
    assert_allclose(val, [1.5**2 * -2.0])
    assert_allclose(d1[0], [2 * 1.5 * -2.0, 1.5**2])
    assert_allclose(d2[0], [[2 * -2.0, 2 * 1.5], [2 * 1.5, 0.0]])


def test_jet_order_capped_by_smoothness():
    f = scalar_field(2, X0 * X1, name="low", smoothness_order=1)
    with pytest.raises(InsufficientSmoothness):
        f.jet_batch(0.0, np.zeros((1, 2)), 0, 2)


def test_with_order_only_lowers():
    f = scalar_field(2, X0, name="s")
    g = f.with_order(3)
    assert g.smoothness_order == 3
    with pytest.raises(InsufficientSmoothness):
        g.with_order(5)


def test_unbound_symbols_rejected():
    rogue = sp.Symbol("amp", real=True)
    with pytest.raises(ValueError, match="unbound symbols"):
        scalar_field(2, rogue * X0, name="bad")
    # binding the symbol as a parameter makes the same expression legal
    ok = scalar_field(2, rogue * X0, params={rogue: 2.0}, name="good")
    assert_allclose(ok.eval_batch(0.0, np.array([[3.0, 0.0]]), 0), [6.0])


def test_missing_chart_components_raise():
    f = scalar_field(2, X0, name="s")
    with pytest.raises(KeyError):
        f.eval_batch(0.0, np.zeros((1, 2)), 7)


# ---------------------------------------------------------------------------
# Lie derivative, symbolic route
# ---------------------------------------------------------------------------


def test_lie_derivative_one_form_on_line():
    # L_{x d/dx} dx = dx and L_{x d/dx} (x dx) = 2 x dx
    x = coord_symbols(1)[0]
    X = vector_field(1, [x], name="euler")
    dx = coordinate_one_form(1, 0)
    xdx = tensor_field((0, 1), 1, [x], name="x_dx")
    pt = np.array([1.7])
    assert_allclose(lie_derivative(dx, X).eval(0.0, pt).components, [1.0])
    assert_allclose(lie_derivative(xdx, X).eval(0.0, pt).components, [2 * 1.7])


def test_lie_derivative_vector_picks_up_commutator_sign():
    x = coord_symbols(1)[0]
    X = vector_field(1, [x], name="euler")
    ddx = tensor_field((1, 0), 1, [sp.Integer(1)], name="ddx")
    assert_allclose(lie_derivative(ddx, X).eval(0.0, np.array([0.3])).components, [-1.0])


def test_lie_derivative_rotation_preserves_euclidean_metric():
    g = euclidean_metric(2)
    rot = rotation_field_2d(1.3)
    lg = lie_derivative(g, rot)
    pts = np.random.default_rng(3).uniform(-2, 2, size=(16, 2))
    assert_allclose(lg.eval_batch(0.0, pts, 0), 0.0, atol=1e-14)


def test_lie_derivative_rotations_preserve_round_metric():
    """All three rotation generators are Killing fields of the round metric."""
    g = sphere_round_metric()
    for gen in sphere_rotation_fields((1.0, 1.0, 1.0)):
        lg = lie_derivative(g, gen)
        for chart in (0, 1):
            pts = np.random.default_rng(11).uniform(-1.2, 1.2, size=(8, 2))
            assert_allclose(lg.eval_batch(0.0, pts, chart), 0.0, atol=1e-12)


def test_lie_derivative_scaling_of_metric():
    # L_{x0 d0 + x1 d1} g = 2 g for the flat metric
    g = euclidean_metric(2)
    dil = linear_vector_field(np.eye(2), name="dilation")
    lg = lie_derivative(g, dil)
    out = lg.eval(0.0, np.array([0.4, -0.9]))
    assert_allclose(out.components, 2 * np.eye(2), atol=1e-14)


def test_lie_derivative_shape_and_smoothness_bookkeeping():
    K = random_tensor_field((1, 1), 2, np.random.default_rng(0), smoothness_order=4)
    X = random_vector_field(2, np.random.default_rng(1), smoothness_order=6)
    L = lie_derivative(K, X)
    assert L.valence == (1, 1)
    assert L.smoothness_order == 3
    with pytest.raises(ValenceMismatch):
        lie_derivative(K, K)


def test_lie_derivative_requires_c1():
    K = scalar_field(2, X0, name="s", smoothness_order=0)
    X = vector_field(2, [X1, -X0], name="r")
    with pytest.raises(InsufficientSmoothness):
        lie_derivative(K, X)


def test_lie_derivative_against_fd_oracle_smoke():
    rng = np.random.default_rng(8)
    K = random_tensor_field((0, 2), 2, rng, kind="trig", scale=0.5)
    X = random_vector_field(2, rng, kind="poly", scale=0.5)
    L = lie_derivative(K, X)
    for pt in rng.uniform(-0.5, 0.5, size=(4, 2)):
        sym = L.eval(0.0, pt).components
        fd = lie_derivative_fd_oracle(K, X, 0.0, pt).components
        assert_allclose(sym, fd, atol=1e-7, rtol=1e-7)


# ---------------------------------------------------------------------------
# jets-only Lie derivative (no symbolic differentiation)
# ---------------------------------------------------------------------------


def test_lie_jet_matches_symbolic_route():
    rng = np.random.default_rng(21)
    K = random_tensor_field((1, 1), 2, rng, scale=0.7)
    X = random_vector_field(2, rng, scale=0.7)
    pts = rng.uniform(-0.8, 0.8, size=(32, 2))
    t_jets = K.jet_batch(0.0, pts, 0, 1)
    x_jets = X.jet_batch(0.0, pts, 0, 1)
    got = lie_jet(t_jets, x_jets, (1, 1))[0]
    want = lie_derivative(K, X).eval_batch(0.0, pts, 0)
    assert_allclose(got, want, rtol=1e-12, atol=1e-12)


def test_lie_jet_first_derivative_consistency():
    """Jet output order 1 equals the derivative of the symbolic Lie field."""
    rng = np.random.default_rng(22)
    K = random_tensor_field((0, 1), 2, rng, scale=0.5)
    X = random_vector_field(2, rng, scale=0.5)
    pts = rng.uniform(-0.5, 0.5, size=(8, 2))
    got = lie_jet(K.jet_batch(0.0, pts, 0, 2), X.jet_batch(0.0, pts, 0, 2), (0, 1), 1)[1]
    want = lie_derivative(K, X).jet_batch(0.0, pts, 0, 1)[1]
    assert_allclose(got, want, rtol=1e-11, atol=1e-11)


def test_lie_jet_from_fd_stencil():
    rng = np.random.default_rng(23)
    K = random_tensor_field((0, 1), 2, rng, kind="trig", scale=0.5)
    X = random_vector_field(2, rng, kind="trig", scale=0.5)
    pts = rng.uniform(-0.4, 0.4, size=(6, 2))
    eps = 1e-4
    lattice = pts[:, None, :] + eps * stencil_offsets(2)[None, :, :]
    flat = lattice.reshape(-1, 2)
    kv = K.eval_batch(0.0, flat, 0).reshape(6, 9, 2)
    xv = X.eval_batch(0.0, flat, 0).reshape(6, 9, 2)
    t_jets = fd_jets_from_stencil(kv, 2, eps, order=1, ncomp_axes=1)
    x_jets = fd_jets_from_stencil(xv, 2, eps, order=1, ncomp_axes=1)
    got = lie_jet(t_jets, x_jets, (0, 1))[0]
    want = lie_derivative(K, X).eval_batch(0.0, pts, 0)
    assert_allclose(got, want, atol=1e-7)


def test_fd_jets_reproduce_polynomial_derivatives():
    # quadratic data: order-2 central differences are exact up to roundoff
    eps = 1e-3
    offs = stencil_offsets(2) * eps
    vals = 2.0 + offs[:, 0] + 3.0 * offs[:, 1] + offs[:, 0] * offs[:, 1]
    v, d1, d2 = fd_jets_from_stencil(vals, 2, eps, order=2)
    assert_allclose(v, 2.0, rtol=1e-12)
    assert_allclose(d1, [1.0, 3.0], rtol=1e-9)
    assert_allclose(d2, [[0.0, 1.0], [1.0, 0.0]], atol=1e-9)


def test_lie_jet_needs_one_extra_jet_order():
    rng = np.random.default_rng(4)
    K = random_tensor_field((0, 1), 2, rng)
    X = random_vector_field(2, rng)
    pts = np.zeros((1, 2))
    with pytest.raises(InsufficientSmoothness):
        lie_jet(K.jet_batch(0.0, pts, 0, 0), X.jet_batch(0.0, pts, 0, 0), (0, 1))


# ---------------------------------------------------------------------------
# transport contractions and pairing
# ---------------------------------------------------------------------------


def test_pullback_one_form_on_line_scales_with_jacobian():
    data = JacobianData(np.array([[2.0]]), np.array([[0.5]]), np.zeros(1), np.zeros(1))
    w = TensorValue((0, 1), np.array([1.0]))
    v = TensorValue((1, 0), np.array([1.0]))
    assert_allclose(pullback(w, data).components, [2.0])
    assert_allclose(pullback(v, data).components, [0.5])
    assert_allclose(pushforward(w, data).components, [0.5])
    assert_allclose(pushforward(v, data).components, [2.0])


@pytest.mark.parametrize("valence", [(0, 1), (1, 0), (1, 1), (0, 2), (2, 0)])
def test_pullback_then_pushforward_is_identity(valence):
    rng = np.random.default_rng(17)
    comps = rng.standard_normal((3,) * sum(valence))
    jac = rng.standard_normal((3, 3)) + 3.0 * np.eye(3)
    inv = np.linalg.inv(jac)
    back = pullback_batch(comps, valence, jac, inv)
    forth = pushforward_batch(back, valence, jac, inv)
    assert_allclose(forth, comps, rtol=1e-10, atol=1e-10)


@pytest.mark.parametrize("valence", [(0, 1), (1, 1), (2, 0), (1, 2)])
def test_transport_duality_under_pairing(valence):
    """Pairing is invariant: <pullback K, S> = <K, pushforward S>."""
    rng = np.random.default_rng(29)
    r, s = valence
    K = rng.standard_normal((2,) * (r + s))
    S = rng.standard_normal((2,) * (r + s))
    jac = rng.standard_normal((2, 2)) + 2.5 * np.eye(2)
    inv = np.linalg.inv(jac)
    lhs = pair_batch(pullback_batch(K, valence, jac, inv), valence, S, (s, r))
    rhs = pair_batch(K, valence, pushforward_batch(S, (s, r), jac, inv), (s, r))
    assert_allclose(lhs, rhs, rtol=1e-10, atol=1e-10)


def test_pair_single_entry():
    K = np.zeros((2, 2))
    K[0, 1] = 3.0
    S = np.zeros((2, 2))
    S[1, 0] = 5.0
    got = pair(TensorValue((1, 1), K), TensorValue((1, 1), S))
    assert got == pytest.approx(15.0)


def test_pair_matches_loop_reference():
    rng = np.random.default_rng(31)
    K = rng.standard_normal((2, 2, 2))
    S = rng.standard_normal((2, 2, 2))
    got = pair_batch(K, (1, 2), S, (2, 1))
    want = 0.0
    for i, j, k in np.ndindex(2, 2, 2):
        want += K[i, j, k] * S[j, k, i]
    assert_allclose(got, want, rtol=1e-13)


def test_pair_valence_mismatch():
    K = TensorValue((0, 2), np.eye(2))
    with pytest.raises(ValenceMismatch):
        pair(K, K)  # the test slot needs valence (2, 0)


def test_scalar_pair_is_product():
    assert pair_batch(np.array(3.0), (0, 0), np.array(4.0), (0, 0)) == pytest.approx(12.0)


# ---------------------------------------------------------------------------
# parameterised fields
# ---------------------------------------------------------------------------


def test_with_params_rebinds_without_recompiling():
    rng = np.random.default_rng(2)
    K = random_tensor_field((0, 1), 2, rng)
    syms = [s for s, _ in K.params]
    K2 = K.with_params({syms[0]: 0.0})
    assert K2.params != K.params
    # zeroing one coefficient changes the value
    pt = np.array([[0.7, 0.3]])
    assert not np.allclose(K.eval_batch(0.0, pt, 0), K2.eval_batch(0.0, pt, 0))


def test_gbm_field_scales_linearly():
    f = gbm_vector_field(0.4)
    assert_allclose(f.eval_batch(0.0, np.array([[2.0]]), 0), [[0.8]])


def test_lie_derivative_param_name_collision():
    a = sp.Symbol("amp", real=True)
    K = scalar_field(1, a * coord_symbols(1)[0], params={a: 1.0}, name="k")
    Xc = vector_field(1, [a * coord_symbols(1)[0]], params={a: 2.0}, name="x")
    with pytest.raises(ValueError, match="conflict"):
        lie_derivative(K, Xc)
