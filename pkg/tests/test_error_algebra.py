import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dirichlet_errors import error_algebra as ea
from dirichlet_errors.errors import CapabilityError, InputError, NumericError
from helpers import random_error_vector, random_map, rel


# ErrorVector ---------------------------------------------------------------

def test_error_vector_rejects_asymmetric():
    with pytest.raises(InputError):
        ea.ErrorVector([0.0, 1.0], [[1.0, 0.5], [0.0, 1.0]])


def test_error_vector_rejects_non_psd():
    with pytest.raises(InputError):
        ea.ErrorVector([0.0, 1.0], [[1.0, 2.0], [2.0, 1.0]])


def test_error_vector_rejects_nonfinite_and_shape():
    with pytest.raises(InputError):
        ea.ErrorVector([np.nan], [[1.0]])
    with pytest.raises(InputError):
        ea.ErrorVector([1.0, 2.0], [[1.0]])
    with pytest.raises(InputError):
        ea.ErrorVector([1.0], [[1.0]], bias=[1.0, 2.0])


def test_psd_tolerance_accepts_rounding():
    g = np.array([[1.0, 1.0], [1.0, 1.0]]) - 1e-13 * np.eye(2)
    assert ea.ErrorVector([0, 0], g).dim == 2


# propagate_gamma -------------------------------------------------------------

def test_identity_keeps_gamma():
    x = ea.ErrorVector([1.0, 2.0], [[2.0, 0.3], [0.3, 1.0]])
    out = ea.propagate_gamma(ea.SmoothMap.identity(2), x)
    np.testing.assert_allclose(out.gamma, x.gamma)
    np.testing.assert_allclose(out.values, x.values)


def test_sum_of_independent():
    x = ea.ErrorVector.independent([1.0, 2.0], [1.0, 4.0], bias=[0.0, 0.0])
    F = ea.SmoothMap.linear([[1.0, 1.0]])
    out = ea.propagate_gamma(F, x)
    assert out.gamma[0, 0] == 5.0
    assert out.bias[0] == 0.0


def test_constant_is_error_free():
    x = random_error_vector(np.random.default_rng(0), 3)
    out = ea.propagate_gamma(ea.SmoothMap.constant(7.0, 3), x)
    assert out.gamma[0, 0] == 0.0 and out.bias[0] == 0.0
    assert out.values[0] == 7.0


def test_bias_absent_without_hessians():
    x = ea.ErrorVector.independent([1.0], [1.0], bias=[0.5])
    F = ea.SmoothMap.from_function(lambda v: np.array([np.sin(v[0])]), 1)
    assert ea.propagate_gamma(F, x).bias is None
    with pytest.raises(CapabilityError):
        ea.propagate_bias(F, x)


def test_dimension_mismatch():
    x = ea.ErrorVector.independent([1.0, 2.0], [1.0, 1.0])
    with pytest.raises(InputError):
        ea.propagate_gamma(ea.SmoothMap.identity(3), x)


def test_nonfinite_jacobian():
    F = ea.SmoothMap(1, 1, lambda v: v, lambda v: np.array([[np.inf]]))
    with pytest.raises(NumericError):
        ea.propagate_gamma(F, ea.ErrorVector.independent([1.0], [1.0]))


def test_fd_jacobian_fallback_matches_analytic():
    F = ea.SmoothMap.from_function(lambda v: np.array([v[0] ** 2 * v[1], np.exp(v[1])]), 2, 2)
    x = np.array([1.3, -0.4])
    np.testing.assert_allclose(F.jac(x), [[2 * 1.3 * -0.4, 1.3 ** 2], [0.0, np.exp(-0.4)]], rtol=1e-8)


# propagate_bias -------------------------------------------------------------

def test_linear_map_no_bias():
    x = ea.ErrorVector.independent([1.0, 2.0], [3.0, 4.0], bias=[0.0, 0.0])
    assert np.all(ea.propagate_bias(ea.SmoothMap.linear([[2.0, -1.0]]), x) == 0.0)


@pytest.mark.parametrize("f,t", [(0.7, 0.3), (-1.2, 2.0)])
def test_square_with_ou_style_bias(f, t):
    # A f = -f, Gamma[f] = t, F(u) = u^2  ->  -2 f^2 + t
    x = ea.ErrorVector([f], [[t]], [-f])
    F = ea.SmoothMap.scalar(lambda u: u * u, lambda u: 2 * u, lambda u: 2.0)
    assert ea.propagate_bias(F, x)[0] == pytest.approx(-2 * f * f + t, rel=1e-14)


def test_exponential_with_generator_bias():
    B, t, s = 0.4, 0.8, 0.25
    x = ea.ErrorVector([B], [[t]], [-0.5 * B])
    F = ea.SmoothMap.scalar(lambda u: np.exp(s * u), lambda u: s * np.exp(s * u),
                            lambda u: s * s * np.exp(s * u))
    want = np.exp(s * B) * (-0.5 * s * B + 0.5 * s * s * t)
    assert ea.propagate_bias(F, x)[0] == pytest.approx(want, rel=1e-14)


# coherence ------------------------------------------------------------------

@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.integers(1, 4), st.integers(1, 4), st.integers(1, 4))
def test_coherence_random_maps(seed, d, m, k):
    rng = np.random.default_rng(seed)
    G, F = random_map(rng, d, m), random_map(rng, m, k)
    x = random_error_vector(rng, d)
    seq = ea.propagate_gamma(F, ea.propagate_gamma(G, x))
    one = ea.propagate_gamma(ea.compose(F, G), x)
    scale = max(np.max(np.abs(one.gamma)), 1e-300)
    assert np.max(np.abs(seq.gamma - one.gamma)) <= 1e-10 * scale
    bscale = max(np.max(np.abs(one.bias)), 1.0)
    assert np.max(np.abs(seq.bias - one.bias)) <= 1e-8 * bscale


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.integers(1, 4), st.integers(1, 4))
def test_propagated_gamma_is_psd(seed, d, k):
    rng = np.random.default_rng(seed)
    out = ea.propagate_gamma(random_map(rng, d, k), random_error_vector(rng, d))
    assert np.allclose(out.gamma, out.gamma.T)
    assert np.linalg.eigvalsh(out.gamma).min() >= -1e-10 * max(np.trace(out.gamma), 1e-300)


def test_random_map_derivatives_self_test():
    rng = np.random.default_rng(3)
    F = random_map(rng, 3, 2)
    assert ea.check_derivatives(F, rng.normal(size=(5, 3)))
    G = random_map(rng, 2, 2)
    assert ea.check_derivatives(ea.compose(G, F), rng.normal(size=(5, 3)))


def test_check_derivatives_flags_wrong_jacobian():
    F = ea.SmoothMap(1, 1, lambda v: v ** 2, lambda v: np.array([[3 * v[0]]]))
    assert not ea.check_derivatives(F, [[1.0]])


def test_contraction_bound():
    # smoothed sum of absolute values is 1-Lipschitz in each coordinate
    eps = 1e-3
    F = ea.SmoothMap.from_function(lambda v: np.array([np.sum(np.sqrt(v * v + eps * eps))]), 3)
    rng = np.random.default_rng(5)
    for _ in range(50):
        var = rng.uniform(0, 2, 3)
        x = ea.ErrorVector.independent(rng.normal(size=3), var)
        g = ea.propagate_gamma(F, x).gamma[0, 0]
        assert np.sqrt(g) <= np.sum(np.sqrt(var)) + 1e-9


# transport recursion ---------------------------------------------------------

def _square():
    return ea.SmoothMap.scalar(lambda u: u * u, lambda u: 2 * u, lambda u: 2.0)


def test_transport_identity_is_constant():
    ident = ea.SmoothMap.identity(1)
    out = ea.transport_sequence([ident] * 5, 0.3, 0.1, 0.2)
    assert out == [(0.1, 0.2)] * 5


def test_transport_single_square():
    v = 0.37
    assert ea.transport_sequence([_square()], 1.0, 0.0, v) == [(v, 4 * v)]


def test_transport_two_steps_equals_composition():
    v, b, x0 = 0.2, 0.05, 1.1
    seq = ea.transport_sequence([_square(), _square()], x0, b, v)[-1]
    comp = ea.compose(_square(), _square())
    x = ea.ErrorVector([x0], [[v]], [b])
    out = ea.propagate_gamma(comp, x)
    assert seq[0] == pytest.approx(out.bias[0], rel=1e-13)
    assert seq[1] == pytest.approx(out.gamma[0, 0], rel=1e-13)


def test_transport_overflow():
    big = ea.SmoothMap.scalar(lambda u: u ** 8, lambda u: 8 * u ** 7, lambda u: 56 * u ** 6)
    with pytest.raises(NumericError), np.errstate(over="ignore"):
        ea.transport_sequence([big] * 10, 10.0, 1.0, 1.0)


# product structures -----------------------------------------------------------

def test_product_single_factor():
    g = ea.GammaField.proportional()
    assert ea.product_structure([g]) is g


def test_product_two_unit_blocks():
    unit = ea.GammaField.constant([[1.0]])
    P = ea.product_structure([unit, unit])
    F = ea.SmoothMap.linear([[1.0, 1.0]])
    assert P.gamma_of(F, np.array([0.3, 0.4]))[0, 0] == 2.0


def test_product_block_diagonal():
    P = ea.product_structure([ea.GammaField.constant(np.eye(2) * 3), ea.GammaField.proportional()])
    m = P(np.array([1.0, 2.0, 5.0]))
    np.testing.assert_array_equal(m, [[3, 0, 0], [0, 3, 0], [0, 0, 25]])
    assert P.is_psd_at(np.array([1.0, 2.0, 5.0]))


def test_product_of_four_sources_splits_gamma():
    # F(b, s0, sigma, r): OU block for b, proportional blocks for the rest
    t = 0.7
    fields = [ea.GammaField.constant([[t]])] + [ea.GammaField.proportional()] * 3
    P = ea.product_structure(fields)

    def f(v):
        b, s0, sig, r = v
        return np.array([s0 * np.exp(sig * b + (r - 0.5 * sig * sig) * t)])

    F = ea.SmoothMap.from_function(f, 4)
    v = np.array([0.2, 100.0, 0.25, 0.03])
    j = F.jac(v)[0]
    want = j[0] ** 2 * t + (j[1] * v[1]) ** 2 + (j[2] * v[2]) ** 2 + (j[3] * v[3]) ** 2
    assert P.gamma_of(F, v)[0, 0] == pytest.approx(want, rel=1e-12)


def test_product_empty():
    with pytest.raises(InputError):
        ea.product_structure([])


# triangle ---------------------------------------------------------------------

def test_triangle_right_angle():
    gx, gy, _ = ea.triangle_errors(1.0, 1.0, 0.0, np.pi / 2)
    assert gx == pytest.approx(4.0, abs=1e-14)
    assert gy == pytest.approx(2.0, abs=1e-14)


def test_triangle_field_is_psd():
    for l1, l2 in [(1.0, 1.0), (0.1, 5.0), (3.0, 0.2)]:
        m = ea.triangle_gamma_field(l1, l2)
        assert np.linalg.eigvalsh(m).min() > 0


@settings(max_examples=200, deadline=None)
@given(st.floats(0.01, 10), st.floats(0.01, 10), st.floats(0, 3.14), st.floats(0, 3.14))
def test_triangle_closed_form_equals_propagation(l1, l2, a1, a2):
    gx, gy, gxy = ea.triangle_errors(l1, l2, a1, a2)
    m = ea.triangle_errors_matrix(l1, l2, a1, a2)
    assert rel([[gx, gxy], [gxy, gy]], m) <= 1e-12


@pytest.mark.parametrize("args", [(0.0, 1.0, 0.1, 0.1), (1.0, 2.0, 0.1, 0.1, 1.5),
                                  (1.0, 1.0, -0.1, 0.1), (1.0, 1.0, 0.1, np.pi)])
def test_triangle_rejects_out_of_range(args):
    with pytest.raises(InputError):
        ea.triangle_errors(*args)


def test_triangle_matrix_batch_matches_scalar_route():
    rng = np.random.default_rng(11)
    l1, l2 = rng.uniform(0.1, 5, 30), rng.uniform(0.1, 5, 30)
    a1, a2 = rng.uniform(0, 3, 30), rng.uniform(0, 3, 30)
    batch = ea.triangle_errors_matrix(l1, l2, a1, a2)
    assert batch.shape == (30, 2, 2)
    for k in range(30):
        assert rel(batch[k], ea.triangle_errors_matrix(l1[k], l2[k], a1[k], a2[k])) <= 1e-14
