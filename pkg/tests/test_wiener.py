import mpmath
import numpy as np
import pytest
from scipy import integrate

from dirichlet_errors import black_scholes as bs
from dirichlet_errors import wiener as wn
from dirichlet_errors.errors import CapabilityError, InputError


def _fractional_oracle(t, q):
    """Full series through the polylogarithm: sum (1 - cos 2 pi n t) / n^p = zeta(p) - Re Li_p(e^{2 pi i t})."""
    mpmath.mp.dps = 30
    p = 2 * (1 - q)
    s = mpmath.zeta(p) - mpmath.re(mpmath.polylog(p, mpmath.exp(2j * mpmath.pi * t)))
    return float(4 * s / (2 * mpmath.pi) ** p)


# grid and paths -------------------------------------------------------------

def test_grid_validation():
    with pytest.raises(InputError):
        wn.TimeGrid([0.0])
    with pytest.raises(InputError):
        wn.TimeGrid([0.1, 0.2])
    with pytest.raises(InputError):
        wn.TimeGrid([0.0, 0.5, 0.5])
    g = wn.TimeGrid.uniform(1.0, 4, extra=[0.3])
    assert g.index(0.3) == 2 and g.n_steps == 5
    with pytest.raises(InputError):
        g.index(0.31)


def test_sample_paths_deterministic_and_thread_independent():
    g = wn.TimeGrid.uniform(1.0, 7)
    a = wn.sample_paths(g, 9000, 11, workers=1)
    b = wn.sample_paths(g, 9000, 11, workers=3)
    assert np.array_equal(a.dB, b.dB) and np.array_equal(a.dB_hat, b.dB_hat)
    c = wn.sample_paths(g, 9000, 12)
    assert not np.array_equal(a.dB, c.dB)


def test_prefix_stability():
    g = wn.TimeGrid.uniform(1.0, 3)
    a = wn.sample_paths(g, 5000, 3)
    b = wn.sample_paths(g, 100, 3)
    assert np.array_equal(a.dB[:100], b.dB)


def test_sample_path_moments():
    g = wn.TimeGrid.uniform(1.0, 100)
    B1 = wn.sample_paths(g, 10 ** 5, 0).at(1.0)
    assert abs(B1.mean()) < 4 / np.sqrt(1e5)
    assert abs(B1.var() - 1.0) < 0.05


def test_single_step_variance():
    g = wn.TimeGrid([0.0, 0.25])
    p = wn.sample_paths(g, 50_000, 1)
    assert p.dB.shape == (50_000, 1)
    assert p.dB.var() == pytest.approx(0.25, rel=0.03)
    with pytest.raises(InputError):
        wn.sample_paths(g, 0, 1)


def test_bundle_indexing():
    p = wn.sample_paths(wn.TimeGrid.uniform(1.0, 4), 10, 0)
    assert len(p) == 10 and len(p[3]) == 1 and len(p[2:5]) == 3
    assert np.allclose(p.B[:, -1], p.at(1.0))


# kernels ---------------------------------------------------------------------

@pytest.mark.parametrize("t", [0.0, 0.3, 1.7])
def test_ou_gamma_of_brownian(t):
    assert wn.gamma_wiener_integral(wn.indicator(t), wn.ErrorKernel.ou()) == t


def test_ou_general_integrand():
    g = wn.TimeGrid.uniform(1.0, 2000)
    val = wn.gamma_wiener_integral(lambda s: np.sin(3 * s), wn.ErrorKernel.ou(), g)
    want = integrate.quad(lambda s: np.sin(3 * s) ** 2, 0, 1)[0]
    assert val == pytest.approx(want, rel=1e-6)


def test_weighted_ou():
    zero = wn.ErrorKernel.weighted_ou(lambda s: 0.0 * s)
    assert wn.gamma_wiener_integral(wn.indicator(0.7), zero) == 0.0
    lin = wn.ErrorKernel.weighted_ou(lambda s: s)
    assert wn.gamma_wiener_integral(wn.indicator(0.7), lin) == pytest.approx(0.245, rel=1e-12)
    with pytest.raises(InputError):
        wn.ErrorKernel.weighted_ou(lambda s: -1 + 0 * s).weight(np.array([0.1]))


def test_beta_kernel_exponential():
    k = wn.ErrorKernel.beta_kernel(lambda s: np.exp(-s))
    t = 0.6
    want = 2 * (1 - np.exp(-t)) * np.exp(-t)
    assert k.gamma_brownian(t) == pytest.approx(want, rel=1e-12)


def test_beta_kernel_general_integrand_matches_indicator():
    k = wn.ErrorKernel.beta_kernel(lambda s: 1 / (1 + np.asarray(s)) ** 2)
    g = wn.TimeGrid.uniform(2.0, 4000, extra=[0.8])
    # h is the indicator of [0, 0.8] sampled on the grid: double trapezoid over the jump is O(dt)
    val = wn.gamma_wiener_integral(lambda s: (np.asarray(s) <= 0.8).astype(float), k, g)
    assert val == pytest.approx(k.gamma_brownian(0.8), rel=2e-3)


def test_beta_check_rejects_negative():
    k = wn.ErrorKernel.beta_kernel(lambda s: np.asarray(s) - 0.5)
    with pytest.raises(InputError):
        k.check_beta(wn.TimeGrid.uniform(1.0, 10))


@pytest.mark.parametrize("t,q", [(0.5, 0.25), (0.2, 0.1), (0.9, 0.4)])
def test_fractional_against_polylog(t, q):
    k = wn.ErrorKernel.fractional(q)
    assert k.gamma_brownian(t) == pytest.approx(_fractional_oracle(t, q), rel=1e-6)


def test_fractional_truncation_self_convergence():
    a = wn.fractional_series(0.5, 0.25, 10 ** 5)[0]
    b = wn.fractional_series(0.5, 0.25, 10 ** 6)[0]
    assert abs(a - b) <= 1e-6 * abs(b)


def test_fractional_bound_covers_error():
    for N in (10, 100, 1000):
        v, bound = wn.fractional_series(0.3, 0.2, N)
        assert abs(v - _fractional_oracle(0.3, 0.2)) <= bound


def test_fractional_domain():
    with pytest.raises(InputError):
        wn.fractional_series(1.5, 0.25)
    with pytest.raises(InputError):
        wn.ErrorKernel.fractional(0.6)


def test_fractional_general_integrand():
    k = wn.ErrorKernel.fractional(0.25)
    g = wn.TimeGrid.uniform(1.0, 4096)
    val = wn.gamma_wiener_integral(wn.Indicator(0.5).__call__, k, g)
    assert val == pytest.approx(k.gamma_brownian(0.5), rel=0.02)


def test_general_integrand_needs_grid():
    with pytest.raises(InputError):
        wn.gamma_wiener_integral(lambda s: s, wn.ErrorKernel.ou())


# perturbation ------------------------------------------------------------------

def test_ou_perturb_limits():
    p = wn.sample_paths(wn.TimeGrid.uniform(1.0, 5), 20, 0)
    assert wn.ou_perturb(p, 0.0) is p
    far = wn.ou_perturb(p, 800.0)
    np.testing.assert_allclose(far.dB, p.dB_hat, rtol=0, atol=1e-15)
    with pytest.raises(InputError):
        wn.ou_perturb(p, -1.0)


def test_perturbation_gamma_terminal_value():
    p = wn.sample_paths(wn.TimeGrid.uniform(1.0, 10), 10 ** 5, 4)
    m, se = wn.perturbation_gamma(lambda q: q.at(1.0), p, 1e-3)
    assert abs(m - 1.0) <= 3 * se


def test_perturbation_bias_of_brownian():
    p = wn.sample_paths(wn.TimeGrid.uniform(1.0, 4), 2000, 4)
    theta = 1e-3
    b = wn.perturbation_bias(lambda q: q.at(0.5), p, theta)
    # antithetic companion removes the noise: exactly (e^{-theta/2} - 1) B / theta
    np.testing.assert_allclose(b, np.expm1(-theta / 2) * p.at(0.5) / theta, rtol=1e-8, atol=1e-12)
    assert wn.regression_slope(b, -0.5 * p.at(0.5)) == pytest.approx(1.0, abs=1e-3)


def test_bias_wiener_integral_normalisations():
    p = wn.sample_paths(wn.TimeGrid.uniform(1.0, 4), 5, 0)
    h = wn.indicator(1.0)
    np.testing.assert_allclose(wn.bias_wiener_integral(h, p), -0.5 * p.at(1.0))
    np.testing.assert_allclose(wn.bias_wiener_integral(h, p, normalization=wn.BIAS_TABLE), -p.at(1.0))


def test_regression_slope():
    x = np.arange(10.0)
    assert wn.regression_slope(3 * x + 1, x) == pytest.approx(3.0)


# sharp ----------------------------------------------------------------------------

def test_sharp_basic():
    p = wn.sample_paths(wn.TimeGrid.uniform(1.0, 8), 10, 2)
    assert np.all(wn.sharp_wiener_integral(lambda s: 0 * s, p) == 0)
    np.testing.assert_allclose(wn.sharp_wiener_integral(wn.indicator(0.5), p), p.B_hat[:, 4])
    with pytest.raises(CapabilityError):
        wn.sharp_wiener_integral(wn.indicator(0.5), p, wn.ErrorKernel.fractional(0.2))


@pytest.mark.parametrize("kernel", [wn.ErrorKernel.ou(), wn.ErrorKernel.weighted_ou(lambda s: 1 + np.asarray(s))])
def test_sharp_square_mean_is_gamma(kernel):
    g = wn.TimeGrid.uniform(1.0, 200)
    p = wn.sample_paths(g, 10 ** 4, 8)
    h = lambda s: np.cos(2 * np.asarray(s))
    sq = wn.sharp_wiener_integral(h, p, kernel) ** 2
    # left-point sums on the grid
    gam = float(np.sum(kernel.weight(g.t[:-1]) * h(g.t[:-1]) ** 2 * g.dt))
    assert abs(sq.mean() - gam) <= 3 * sq.std(ddof=1) / np.sqrt(sq.size)


def test_wiener_integral_refinement_first_order():
    h = lambda s: np.exp(np.asarray(s))
    errs = []
    for n in (50, 100, 200):
        g = wn.TimeGrid.uniform(1.0, n)
        # gamma by the same left-point rule, compared with the exact integral
        errs.append(abs(np.sum(h(g.t[:-1]) ** 2 * g.dt) - (np.e ** 2 - 1) / 2))
    assert errs[1] / errs[2] == pytest.approx(2.0, rel=0.05)


# Lipschitz screening and Clark -------------------------------------------------

def test_screen_lipschitz():
    assert wn.screen_lipschitz(np.abs, -1, 1) <= 1.0 + 1e-12
    with pytest.raises(InputError):
        wn.screen_lipschitz(lambda x: x ** 3, -100, 100, bound=10.0)


def test_clark_brownian_terminal():
    p = wn.sample_paths(wn.TimeGrid.uniform(1.0, 16), 50, 0)
    psi = wn.clark_integrand(bs.forward(), "brownian", p)
    np.testing.assert_allclose(psi, 1.0, rtol=1e-12)


def test_clark_brownian_square_reconstruction():
    g = wn.TimeGrid.uniform(1.0, 400)
    p = wn.sample_paths(g, 4000, 1)
    sq = bs.polynomial([0.0, 0.0, 1.0])
    psi = wn.clark_integrand(sq, "brownian", p)
    np.testing.assert_allclose(psi, 2 * p.B[:, :-1], atol=1e-10)
    rec = wn.clark_reconstruct(sq, "brownian", p)
    err = rec - p.at(1.0) ** 2
    # discretisation error of int 2B dB is the quadratic-variation gap, O(sqrt(dt))
    assert np.sqrt(np.mean(err ** 2)) < 0.1


def test_clark_black_scholes_reconstruction():
    model = bs.BSModel(100.0, 0.2, 0.03, 1.0)
    g = wn.TimeGrid.uniform(1.0, 400)
    p = wn.sample_paths(g, 2000, 3)
    pay = bs.softplus_call(100.0, 5.0)
    rec = wn.clark_reconstruct(pay, model, p)
    ST = bs.stock_price(model, p.at(1.0), 1.0)
    err = rec - pay.f(ST)
    assert abs(err.mean()) < 3 * err.std() / np.sqrt(err.size) + 1e-2
    assert np.sqrt(np.mean(err ** 2)) < 0.05 * np.std(pay.f(ST))


def test_clark_rejects_unknown_model():
    p = wn.sample_paths(wn.TimeGrid.uniform(1.0, 4), 2, 0)
    with pytest.raises(InputError):
        wn.clark_integrand(bs.forward(), "heston", p)


# Lemmas on conditional expectations ---------------------------------------------

def _lemma_setup(t=0.4, n=20_000):
    g = wn.TimeGrid.uniform(1.0, 10)
    p = wn.sample_paths(g, n, 21)
    f = bs.softplus_call(0.0, 0.3)
    return g, p, f, t


def test_conditional_expectation_contracts_gamma():
    g, p, f, t = _lemma_setup()
    Bt, BT = p.at(t), p.at(1.0)
    gprime = wn.brownian_conditional(f.f_prime, Bt, 1.0 - t)
    lhs = np.mean(gprime ** 2 * t)
    rhs = np.mean(f.f_prime(BT) ** 2 * 1.0)
    assert lhs <= rhs


def test_projection_derivative_matches_chain_rule():
    # Gamma[E[U|F_t]] via the chain rule versus E[U^{#_t} | F_t] squared over the companion
    g, p, f, t = _lemma_setup(n=5000)
    Bt = p.at(t)
    gprime = wn.brownian_conditional(f.f_prime, Bt, 1.0 - t)
    chain = gprime ** 2 * t
    sharp_t = gprime * p.B_hat[:, g.index(t)]
    est = sharp_t ** 2
    d = est - chain
    assert abs(d.mean()) <= 3 * d.std(ddof=1) / np.sqrt(d.size)
