import numpy as np
import pytest

from mimocdma import priors as pr
from mimocdma.errors import InvalidPower, InvalidPrior


def test_qpsk_points():
    q = pr.qpsk(2.0)
    assert sorted(map(complex, q.points), key=lambda z: (z.real, z.imag)) == [-1 - 1j, -1 + 1j, 1 - 1j, 1 + 1j]
    np.testing.assert_array_equal(q.probs, 0.25)


def test_qpsk_moments_exact():
    q = pr.qpsk(1.0)
    assert np.sum(q.probs * np.abs(q.points) ** 2) == pytest.approx(1.0, abs=1e-15)
    assert abs(np.sum(q.probs * q.points)) < 1e-15
    assert abs(np.sum(q.probs * q.points ** 2)) < 1e-15


def test_qpsk_rejects_bad_power():
    with pytest.raises(InvalidPower):
        pr.qpsk(0.0)


@pytest.mark.parametrize("prior, p", [(pr.gaussian(3.0), 3.0), (pr.qpsk(2.0), 2.0),
                                      (pr.discrete([0.0], [1.0]), 0.0)])
def test_power(prior, p):
    assert pr.power(prior) == pytest.approx(p, abs=1e-15)


def test_discrete_probabilities_validated():
    with pytest.raises(InvalidPrior):
        pr.discrete([1.0, -1.0], [0.7, 0.7])


def test_sample_gaussian_power(rng):
    x = pr.sample(pr.gaussian(1.0), rng, 100_000)
    p = np.abs(x) ** 2
    assert abs(p.mean() - 1.0) < 3 * p.std() / np.sqrt(p.size)


def test_sample_qpsk_frequencies(rng):
    q = pr.qpsk(1.0)
    x = pr.sample(q, rng, 100_000)
    for pt in q.points:
        f = np.mean(np.isclose(x, pt))
        assert abs(f - 0.25) < 3 * np.sqrt(0.25 * 0.75 / x.size)


def test_sample_empty_and_reproducible():
    assert pr.sample(pr.qpsk(1.0), np.random.default_rng(0), 0).size == 0
    a = pr.sample(pr.gaussian(2.0), np.random.default_rng(7), 50)
    b = pr.sample(pr.gaussian(2.0), np.random.default_rng(7), 50)
    assert np.array_equal(a, b)


def test_vector_prior_enumeration():
    vp = pr.VectorPrior.iid(pr.bpsk(1.0), 2)
    X, logp = vp.enumerate()
    assert X.shape == (4, 2)
    np.testing.assert_allclose(np.exp(logp), 0.25)
    assert vp.product_size() == 4
