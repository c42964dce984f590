import itertools

import numpy as np
import pytest

from mimocdma import mc_sim as mc
from mimocdma import priors as pr
from mimocdma import single_user as su
from mimocdma.errors import EnumerationTooLarge, InvalidPrior


def brute_force_gpme(A, y, constellations, nt0):
    """Posterior mean by explicit enumeration with plain Python scalars.

    Products, sums and the final division follow the textbook order: columns
    are accumulated left to right, residual energies row by row, and the
    weighted sums candidate by candidate.
    """
    rows, cols = A.shape
    cands = []
    for combo in itertools.product(*[range(len(pts)) for pts, _ in constellations]):
        x = [complex(constellations[c][0][i]) for c, i in enumerate(combo)]
        lp = 0.0
        for c, i in enumerate(combo):
            lp = lp + float(np.log(constellations[c][1][i]))
        acc = [complex(A[n, 0]) * x[0] for n in range(rows)]
        for c in range(1, cols):
            acc = [acc[n] + complex(A[n, c]) * x[c] for n in range(rows)]
        r = [complex(y[n]) - acc[n] for n in range(rows)]
        m = r[0].real * r[0].real + r[0].imag * r[0].imag
        for n in range(1, rows):
            m = m + (r[n].real * r[n].real + r[n].imag * r[n].imag)
        cands.append((x, lp - m / nt0))
    top = max(e for _, e in cands)
    w = [float(np.exp(e - top)) for _, e in cands]
    den = w[0]
    for v in w[1:]:
        den = den + v
    num = [w[0] * xc for xc in cands[0][0]]
    for j in range(1, len(cands)):
        num = [num[c] + w[j] * cands[j][0][c] for c in range(cols)]
    return np.array([complex(v.real / den, v.imag / den) for v in num])


def test_single_entry_ensemble():
    p = mc.SimParams(K=1, L=1, scheme="STS", n_rx=1, antennas=1, true_prior=pr.qpsk(1.0))
    ens = mc.gen_ensemble(p)
    assert ens.A.shape == (1, 1)
    assert abs(abs(ens.chips[0][0, 0]) - 1.0) < 1e-15
    assert ens.A[0, 0] == ens.chips[0][0, 0] * ens.channels[0][0, 0]


def test_column_layout_is_kronecker():
    p = mc.SimParams(K=3, L=4, scheme="STS", n_rx=2, antennas=2, true_prior=pr.qpsk(1.0), seed=5)
    ens = mc.gen_ensemble(p)
    assert ens.A.shape == (8, 6)
    for k in range(3):
        for m in range(2):
            np.testing.assert_array_equal(ens.A[:, 2 * k + m], np.kron(ens.chips[k][m], ens.channels[k][:, m]))


def test_ts_shares_chips():
    p = mc.SimParams(K=4, L=8, scheme="TS", n_rx=2, antennas=3, true_prior=pr.qpsk(1.0), seed=1)
    ens = mc.gen_ensemble(p)
    for s in ens.chips:
        assert np.array_equal(s[0], s[1]) and np.array_equal(s[0], s[2])


def test_column_second_moment(rng):
    # [DERIVED] E ||column||^2 = E ||h||^2 = 1
    p = mc.SimParams(K=2, L=8, scheme="STS", n_rx=2, antennas=1, true_prior=pr.qpsk(1.0), chip_law="gaussian")
    norms = np.concatenate([np.sum(np.abs(mc.gen_ensemble(p, rng).A) ** 2, axis=0) for _ in range(4000)])
    assert abs(norms.mean() - 1.0) < 3 * norms.std() / np.sqrt(norms.size)


def test_sts_and_ts_column_norms_match_for_single_antenna():
    kw = dict(K=4, L=8, n_rx=2, antennas=1, true_prior=pr.qpsk(1.0))
    a = [mc.gen_ensemble(mc.SimParams(scheme="STS", seed=s, **kw)).A for s in range(300)]
    b = [mc.gen_ensemble(mc.SimParams(scheme="TS", seed=s, **kw)).A for s in range(300)]
    na = np.sort(np.concatenate([np.sum(np.abs(x) ** 2, axis=0) for x in a]))
    nb = np.sort(np.concatenate([np.sum(np.abs(x) ** 2, axis=0) for x in b]))
    from scipy.stats import ks_2samp

    assert ks_2samp(na, nb).pvalue > 1e-3


def test_exact_gpme_bit_exact():
    # [DERIVED] brute-force enumeration with identical arithmetic, 5 QPSK symbols
    q = pr.qpsk(1.0)
    for seed in range(10):
        p = mc.SimParams(K=5, L=4, scheme="STS", n_rx=2, antennas=1, true_prior=q, n0=0.3, seed=seed)
        ens = mc.gen_ensemble(p)
        rng = np.random.default_rng(seed)
        y = ens.A @ pr.sample(q, rng, 5) + 0.4 * (rng.standard_normal(8) + 1j * rng.standard_normal(8))
        X, logp = mc.joint_constellation(p.post_prior)
        got = mc.exact_gpme(ens.A, y, X, logp, 0.3)
        want = brute_force_gpme(ens.A, y, [(q.points, q.probs)] * 5, 0.3)
        assert np.array_equal(got, want)


def test_exact_gpme_two_symbol_toy():
    # 2 QPSK symbols: 16-term posterior mean
    q = pr.qpsk(2.0)
    A = np.array([[1.0, 0.3j], [0.2, -0.8]])
    y = np.array([0.7 - 0.1j, -0.4 + 0.9j])
    X, logp = mc.joint_constellation([pr.VectorPrior.iid(q, 1)] * 2)
    assert X.shape == (16, 2)
    w = np.exp(-np.sum(np.abs(y[None, :] - X @ A.T) ** 2, axis=1) / 0.5)
    np.testing.assert_allclose(mc.exact_gpme(A, y, X, logp, 0.5), w @ X / w.sum(), rtol=1e-13)


def test_enumeration_cap_and_prior_checks():
    big = mc.SimParams(K=11, L=4, scheme="STS", n_rx=1, antennas=1, true_prior=pr.qpsk(1.0))
    with pytest.raises(EnumerationTooLarge):
        mc.run_trials(big, "exact", 1)
    with pytest.raises(InvalidPrior):
        mc.run_trials(big, "lmmse", 1)


def test_lmmse_noiseless_recovers_symbols():
    p = mc.SimParams(K=3, L=8, scheme="STS", n_rx=1, antennas=1, true_prior=pr.qpsk(1.0),
                     post_prior=pr.gaussian(1.0), n0=1e-12, nt0=1e-12, seed=2)
    rec = mc.run_trials(p, "lmmse", 20)
    assert np.max(np.abs(rec.x - rec.xhat)) < 1e-4


def test_single_user_large_l_matches_single_user_mmse():
    # [DERIVED] K=1: the LMMSE estimate is the single-user estimate on y projected onto the column
    p = mc.SimParams(K=1, L=64, scheme="STS", n_rx=2, antennas=1, true_prior=pr.gaussian(2.0), n0=0.5, seed=4)
    ens = mc.gen_ensemble(p)
    rng = np.random.default_rng(0)
    y = ens.A @ np.array([0.3 - 0.2j]) + np.sqrt(0.25) * (rng.standard_normal(128) + 1j * rng.standard_normal(128))
    got = mc.lmmse(ens.A, y[None, :], [2.0], 0.5)[0, 0]
    ch = su.SimoChannel(ens.A[:, 0], pr.gaussian(2.0), pr.gaussian(2.0), 0.5 * np.eye(128))
    assert got == pytest.approx(su.gpme_simo(ch, y), rel=1e-10)


def test_records_reproducible_and_chunk_independent():
    p = mc.SimParams(K=4, L=4, scheme="TS", n_rx=2, antennas=2, true_prior=pr.gaussian(1.0), seed=9)
    a = mc.run_trials(p, "lmmse", 300)
    b = mc.run_trials(p, "lmmse", 300)
    assert np.array_equal(a.x, b.x) and np.array_equal(a.xhat, b.xhat)
    c = mc.run_trials(p, "lmmse", 10)
    assert np.array_equal(a.x[:10], c.x)


def test_empirical_moments_basics():
    p = mc.SimParams(K=4, L=8, scheme="STS", n_rx=2, antennas=2, true_prior=pr.qpsk(2.0),
                     post_prior=pr.gaussian(2.0), seed=3)
    rec = mc.run_trials(p, "lmmse", 2000)
    assert mc.empirical_moments(rec, 0, np.zeros((2, 4), int))[0] == 1.0
    v, s = mc.empirical_moments(rec, 0, [[1, 0, 0, 0], [0, 0, 0, 0]])
    assert abs(v) < 3 * s


def test_jackknife_matches_classical_stderr(rng):
    f = rng.standard_normal(500)
    m, s = mc.jackknife_mean(f)
    assert m == pytest.approx(f.mean())
    assert s == pytest.approx(f.std(ddof=1) / np.sqrt(500), rel=1e-10)


def test_lmmse_residual_orthogonality():
    p = mc.SimParams(K=8, L=8, scheme="STS", n_rx=2, antennas=1, true_prior=pr.gaussian(4.0), seed=11)
    rec = mc.run_trials(p, "lmmse", 4000)
    f = ((rec.x - rec.xhat) * rec.xhat.conj())[:, 0]
    for part in (f.real, f.imag):
        m, s = mc.jackknife_mean(part)
        assert abs(m) < 3 * s


def test_moment_list_and_labels():
    lst = mc.moment_list(1)
    assert len(lst) == 14
    assert mc.moment_label(np.array([[1, 0, 1, 0]])) == "[0] Re x Re xh"
    assert len(mc.moment_list(2)) == 28


def test_deterministic_moment_z_is_finite():
    # |x|^2 of a constant-modulus symbol has zero spread; rounding must not dominate z
    row = mc.ReportRow("Re x^2", 5.0, 0.0, 5.0 - 9e-16, 1.4e-17)
    assert abs(row.z) < 1e-2
    assert abs(mc.ReportRow("m", 5.0, 0.0, 4.9, 0.0).z) > 1e6
