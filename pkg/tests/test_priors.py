import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate

from bamp_ris import InvalidParameterError, MixturePrior, bernoulli_gaussian, ep_project, gaussian, qpsk_mixture


def real_moments(prior, r, sigma):
    """Posterior moments of prior(x) N(x; r, sigma) for real x by quadrature.

    Point masses are added in closed form; continuous components go through
    adaptive quadrature.
    """
    z = m1 = m2 = 0.0
    for w, mu, v in zip(prior.weights, prior.means, prior.variances):
        mu = mu.real
        lik = lambda x: np.exp(-0.5 * (x - r) ** 2 / sigma) / np.sqrt(2 * np.pi * sigma)
        if v == 0:
            z += w * lik(mu)
            m1 += w * mu * lik(mu)
            m2 += w * mu * mu * lik(mu)
            continue
        pdf = lambda x: np.exp(-0.5 * (x - mu) ** 2 / v) / np.sqrt(2 * np.pi * v) * lik(x)
        lo, hi = min(mu, r) - 12 * np.sqrt(max(v, sigma)), max(mu, r) + 12 * np.sqrt(max(v, sigma))
        opts = dict(epsabs=1e-14, epsrel=1e-12, limit=200, points=[mu, r])
        z += w * integrate.quad(pdf, lo, hi, **opts)[0]
        m1 += w * integrate.quad(lambda x: x * pdf(x), lo, hi, **opts)[0]
        m2 += w * integrate.quad(lambda x: x * x * pdf(x), lo, hi, **opts)[0]
    mean = m1 / z
    return mean, m2 / z - mean ** 2


def real_mixture(rng):
    k = rng.integers(2, 4)
    w = rng.dirichlet(np.ones(k))
    return MixturePrior(tuple(w), tuple(complex(m) for m in rng.normal(0, 1.5, k)),
                        tuple(rng.uniform(0.1, 2.0, k)))


@pytest.mark.parametrize("family", ["gaussian", "bernoulli_gaussian", "mixture"])
def test_ep_project_matches_quadrature(family, rng):
    for _ in range(100):
        if family == "gaussian":
            prior = gaussian(rng.normal(), rng.uniform(0.2, 3.0))
        elif family == "bernoulli_gaussian":
            prior = bernoulli_gaussian(rng.uniform(0.05, 0.95), rng.uniform(0.2, 5.0))
        else:
            prior = real_mixture(rng)
        r, sigma = rng.normal(0, 2), rng.uniform(0.05, 3.0)
        mean, var = ep_project(prior, np.array([r]), np.array([sigma]), real=True)
        ref_mean, ref_var = real_moments(prior, r, sigma)
        assert abs(mean[0] - ref_mean) < 1e-6
        assert abs(var[0] - ref_var) < 1e-6


def test_bernoulli_gaussian_example():
    prior = bernoulli_gaussian(0.5, 1.0)
    mean, var = ep_project(prior, np.array([1.0]), np.array([1.0]), real=True)
    ref_mean, ref_var = real_moments(prior, 1.0, 1.0)
    assert mean[0] == pytest.approx(ref_mean, abs=1e-6)
    assert var[0] == pytest.approx(ref_var, abs=1e-6)


def test_complex_ep_project_matches_2d_quadrature():
    prior = bernoulli_gaussian(0.4, 2.0)
    r, sigma = 0.7 - 0.3j, 0.8
    slab = lambda a, b: np.exp(-(a * a + b * b) / 2.0) / (np.pi * 2.0)
    lik = lambda a, b: np.exp(-abs(a + 1j * b - r) ** 2 / sigma) / (np.pi * sigma)
    opts = dict(epsabs=1e-13, epsrel=1e-11)
    lim = 10.0
    z_s = integrate.dblquad(lambda b, a: slab(a, b) * lik(a, b), -lim, lim, -lim, lim, **opts)[0]
    re_s = integrate.dblquad(lambda b, a: a * slab(a, b) * lik(a, b), -lim, lim, -lim, lim, **opts)[0]
    im_s = integrate.dblquad(lambda b, a: b * slab(a, b) * lik(a, b), -lim, lim, -lim, lim, **opts)[0]
    sq_s = integrate.dblquad(lambda b, a: (a * a + b * b) * slab(a, b) * lik(a, b), -lim, lim, -lim, lim, **opts)[0]
    z0 = 0.6 * np.exp(-abs(r) ** 2 / sigma) / (np.pi * sigma)
    z = z0 + 0.4 * z_s
    ref_mean = 0.4 * (re_s + 1j * im_s) / z
    ref_var = 0.4 * sq_s / z - abs(ref_mean) ** 2
    mean, var = ep_project(prior, np.array([r]), np.array([sigma]))
    assert abs(mean[0] - ref_mean) < 1e-6
    assert abs(var[0] - ref_var) < 1e-6


def test_gaussian_conjugate_closed_form():
    v0, r, s = 2.0, 1.5 + 0.5j, 0.5
    mean, var = ep_project(gaussian(0.0, v0), np.array([r]), np.array([s]))
    assert mean[0] == pytest.approx(r * v0 / (v0 + s))
    assert var[0] == pytest.approx(v0 * s / (v0 + s))


def test_symmetric_mixture_zero_cavity_gives_zero_mean():
    prior = MixturePrior((0.5, 0.5), (1.3, -1.3), (0.2, 0.2))
    mean, _ = ep_project(prior, np.zeros(3), np.array([0.1, 1.0, 10.0]))
    assert np.allclose(mean, 0.0, atol=1e-15)


def test_flat_cavity_returns_prior_moments():
    prior = qpsk_mixture()
    mean, var = ep_project(prior, np.array([3.0]), np.array([np.inf]))
    assert mean[0] == pytest.approx(prior.mean)
    assert var[0] == pytest.approx(prior.var)


def test_invalid_priors_rejected():
    with pytest.raises(InvalidParameterError):
        MixturePrior((0.0, 0.0), (0j, 1j), (1.0, 1.0))
    with pytest.raises(InvalidParameterError):
        bernoulli_gaussian(0.0, 1.0)
    with pytest.raises(InvalidParameterError):
        bernoulli_gaussian(1.2, 1.0)
    with pytest.raises(InvalidParameterError):
        gaussian(0.0, 0.0)
    with pytest.raises(InvalidParameterError):
        ep_project(gaussian(), np.array([0.0]), np.array([0.0]))


def test_qpsk_mixture_power():
    assert qpsk_mixture(power=2.0).var == pytest.approx(2.0)
    assert qpsk_mixture().mean == pytest.approx(0.0)


@pytest.mark.parametrize("prior", [gaussian(0.5 - 1j, 2.0), bernoulli_gaussian(0.2, 5.0), qpsk_mixture()])
def test_dict_round_trip(prior):
    assert MixturePrior.from_dict(prior.to_dict()) == prior


@settings(max_examples=60, deadline=None)
@given(r=st.complex_numbers(max_magnitude=50, allow_nan=False, allow_infinity=False),
       sigma=st.floats(1e-6, 1e6), rho=st.floats(0.01, 1.0))
def test_spike_and_slab_shrinks_towards_zero(r, sigma, rho):
    # the posterior mean is a slab weight in [0, 1] times a Wiener-shrunk r
    prior = bernoulli_gaussian(rho, 1.0 / rho)
    mean, var = ep_project(prior, np.array([r]), np.array([sigma]))
    assert np.isfinite(mean).all() and np.isfinite(var).all()
    assert abs(mean[0]) <= abs(r) * (1 + 1e-12)
    assert var[0] >= 0.0
