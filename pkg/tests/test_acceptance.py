"""Acceptance criteria, each checked at its stated tolerance.

Every test records one PASS/FAIL line (see the ``verdict`` fixture); the
lines are repeated in a summary section at the end of the pytest run.
"""

import time

import numpy as np
import pytest

from mimocdma import hermlin as hl
from mimocdma import mc_sim as mc
from mimocdma import priors as pr
from mimocdma import rmt_gaussian as rg
from mimocdma import single_user as su
from mimocdma import state_evolution as se

pytestmark = pytest.mark.slow

PHI = (1 + np.sqrt(5)) / 2
SNR10 = 10.0  # P / N0 = 10 dB with N0 = 1
BETAS = (0.5, 1.0, 1.5, 2.0)


def bisect(f, lo, hi, tol=1e-14):
    flo = f(lo)
    while hi - lo > tol * max(1.0, abs(hi)):
        mid = 0.5 * (lo + hi)
        if (f(mid) > 0) == (flo > 0):
            lo, flo = mid, f(mid)
        else:
            hi = mid
    return 0.5 * (lo + hi)


# ---------------------------------------------------------------------------
# 1. golden ratio


def test_c1_golden_ratio(verdict):
    t = time.perf_counter()
    scn = se.Scenario.single("STS", 1.0, 1, 1, pr.gaussian(1.0), n0=1.0,
                             channel_law=se.FixedRealizations([np.ones((1, 1))]))
    fp = se.solve(scn)
    elapsed = time.perf_counter() - t
    oracle = bisect(lambda r: 1 + r / (r + 1) - r, 1.0, 3.0)
    err = abs(fp.A[0, 0].real - oracle)
    ok = err < 1e-6 and elapsed < 1.0
    verdict("C1 golden-ratio fixed point", ok, f"|r - oracle| = {err:.1e} (< 1e-6), {elapsed:.3f} s (< 1 s)")
    assert ok


# ---------------------------------------------------------------------------
# 2, 3. corollary cross-checks


def _corollary(scheme):
    t = time.perf_counter()
    rels = []
    for b in BETAS:
        scn = se.Scenario.single(scheme, b, 2, 2, pr.gaussian(SNR10), n0=1.0,
                                 channel_samples=10_000, sampler="qmc")
        fp = se.solve(scn, with_free_energy=False)
        gs = rg.GaussianScenario(b, 2, 2, SNR10, 1.0, eig_samples=100_000)
        ref = rg.c_lmmse_sts(gs) if scheme == "STS" else rg.c_lmmse_ts(gs)
        rels.append(abs(se.c_sep(scn, fp) - ref) / ref)
    return max(rels), time.perf_counter() - t


def test_c2_corollary_sts(verdict):
    rel, elapsed = _corollary("STS")
    ok = rel < 1e-2 and elapsed < 60
    verdict("C2 STS c_sep vs closed form", ok, f"max rel err {rel:.1e} (< 1e-2), {elapsed:.1f} s (< 60 s)")
    assert ok


def test_c3_corollary_ts(verdict):
    rel, elapsed = _corollary("TS")
    ok = rel < 1e-2 and elapsed < 120
    verdict("C3 TS c_sep vs closed form", ok, f"max rel err {rel:.1e} (< 1e-2), {elapsed:.1f} s (< 120 s)")
    assert ok


# ---------------------------------------------------------------------------
# 4. single-antenna scheme equivalence


def test_c4_single_antenna_equivalence(verdict):
    worst = 0.0
    for b in (0.5, 1.0, 1.5, 2.0, 2.5):
        kw = dict(n0=1.0, channel_samples=2000, sampler="qmc")
        s = se.Scenario.single("STS", b, 2, 1, pr.qpsk(SNR10), **kw)
        t = se.Scenario.single("TS", b, 2, 1, pr.qpsk(SNR10), **kw)
        fs, ft = se.solve(s, with_free_energy=False), se.solve(t, with_free_energy=False)
        worst = max(worst,
                    np.linalg.norm(fs.A - ft.A) / np.linalg.norm(fs.A),
                    abs(se.c_joint(s, fs) - se.c_joint(t, ft)) / se.c_joint(s, fs),
                    abs(se.c_sep(s, fs) - se.c_sep(t, ft)) / se.c_sep(s, fs))
    ok = worst < 1e-3
    verdict("C4 M=1 STS/TS equivalence", ok, f"max rel diff {worst:.1e} (< 1e-3) over 5 loads")
    assert ok


# ---------------------------------------------------------------------------
# 5. matched identities


SCENARIOS = {"gaussian": pr.gaussian(SNR10), "qpsk": pr.qpsk(SNR10)}


@pytest.mark.parametrize("name", list(SCENARIOS))
def test_c5_matched_identities(name, verdict):
    prior = SCENARIOS[name]
    rng = np.random.default_rng(5)
    # (a) E = V for single-user channels, SIMO and MIMO
    h = (rng.standard_normal(2) + 1j * rng.standard_normal(2)) / 2
    R = hl.random_pd(2, rng, 4.0)
    m = su.moments_simo(su.SimoChannel(h, prior, prior, R))
    gap_a = abs(m.E - m.V) / max(3 * np.hypot(m.err_E, m.err_V), 1e-12 * prior.P)
    H = (rng.standard_normal((2, 2)) + 1j * rng.standard_normal((2, 2))) / 2
    mm = su.moments_mimo(su.MimoChannel(H, prior, prior, R),
                         su.Integrator(method="quasi-monte-carlo", samples=8192))
    err = np.hypot(mm.err_E, mm.err_V)
    gap_a = max(gap_a, float(np.max(np.abs(mm.E - mm.V) / np.maximum(3 * err, 1e-12 * prior.P))))

    scn = se.Scenario.single("STS", 1.0, 2, 2, prior, n0=1.0, channel_samples=2000, sampler="qmc")
    fp = se.solve(scn, se.SolverConfig(tol=1e-10))
    # (b) collapse
    collapse = np.linalg.norm(fp.A - fp.At) / np.linalg.norm(fp.A)
    # (c) separation loss
    cj, ej = se.c_joint(scn, fp, return_stderr=True)
    cs, es = se.c_sep(scn, fp, return_stderr=True)
    loss = abs(cj - cs - hl.kl_gauss(scn.n0 * np.eye(2), fp.A))
    tol_c = 3 * np.hypot(ej, es) + 1e-8
    # (d) free energy relation
    F, eF = se.free_energy(scn, fp, return_stderr=True)
    rel = abs(F - 2 * np.log2(np.pi * np.e * scn.n0) - cj)
    tol_d = 3 * np.hypot(eF, ej) + 1e-6
    ok = gap_a <= 1 and collapse < 1e-6 and loss <= tol_c and rel <= tol_d
    verdict(f"C5 matched identities ({name})", ok,
            f"(a) |E-V| / 3 sigma = {gap_a:.2f} (<= 1); (b) ||A-At||/||A|| = {collapse:.1e} (< 1e-6); "
            f"(c) {loss:.1e} (<= {tol_c:.1e}); (d) {rel:.1e} (<= {tol_d:.1e})")
    assert ok


# ---------------------------------------------------------------------------
# 6. QPSK waterfall


def _sel_csep(scn, pts):
    return np.array([se.c_sep(scn.with_beta(p.beta), p.chosen) if p.chosen else np.nan for p in pts])


@pytest.fixture(scope="module")
def waterfall():
    """Coarse sweep to bracket the jump in selected c_sep, then refine until two branches coexist."""
    t = time.perf_counter()
    scn = se.Scenario.single("STS", 1.0, 2, 2, pr.qpsk(SNR10), n0=1.0, channel_samples=1000, sampler="qmc")
    cfg = se.SolverConfig(tol=1e-8)
    grid = np.round(np.arange(1.6, 2.4001, 0.05), 6)
    pts = se.branch_sweep(scn, grid, cfg)
    step = 0.05
    while step > 2.5e-4:
        cs = _sel_csep(scn, pts)
        jumps = np.abs(np.diff(cs))
        k = int(np.nanargmax(jumps))
        lo, hi = pts[k].beta, pts[k + 1].beta
        coexist = [p for p in pts if len(p.solutions) == 2]
        signs = {np.sign(p.solutions[0].free_energy - p.solutions[1].free_energy) for p in coexist}
        if len(signs) == 2:
            break
        step = min(step / 10, 0.002) if step >= 0.02 else step / 4
        fine = np.round(np.arange(lo, hi + step / 2, step), 7)
        pts = sorted([p for p in pts if p.beta < lo or p.beta > hi] + se.branch_sweep(scn, fine, cfg),
                     key=lambda p: p.beta)
    return scn, pts, time.perf_counter() - t


def test_c6a_coexisting_branches(waterfall, verdict):
    scn, pts, elapsed = waterfall
    co = [p.beta for p in pts if len(p.solutions) == 2]
    ok = len(co) >= 1 and elapsed < 1800
    verdict("C6a two coexisting fixed points", ok,
            f"{len(co)} loads with two branches in [{min(co, default=np.nan):.4f}, {max(co, default=np.nan):.4f}], "
            f"sweep {elapsed:.0f} s (< 1800 s)")
    assert ok


def test_c6b_free_energy_crossing(waterfall, verdict):
    scn, pts, _ = waterfall
    co = [p for p in pts if len(p.solutions) == 2]

    def low_minus_high(p):
        lo, hi = sorted(p.solutions, key=lambda s: np.trace(s.A).real)
        return lo.free_energy - hi.free_energy

    d = [low_minus_high(p) for p in co]
    ok = any(a < 0 < b for a, b in zip(d, d[1:]))
    verdict("C6b free energies cross", ok,
            "F_low - F_high = " + ", ".join(f"{p.beta:.4f}:{v:+.1e}" for p, v in zip(co, d)))
    assert ok


def test_c6c_selected_csep_discontinuous(waterfall, verdict):
    scn, pts, _ = waterfall
    cs = _sel_csep(scn, pts)
    betas = np.array([p.beta for p in pts])
    fine = np.diff(betas) < 0.0021
    slopes = np.abs(np.diff(cs)) / np.diff(betas)
    k = int(np.nanargmax(np.where(fine, np.abs(np.diff(cs)), 0)))
    jump = abs(cs[k + 1] - cs[k])
    typical = np.nanmedian(slopes[fine]) * (betas[k + 1] - betas[k])
    ok = bool(fine.any()) and jump > 10 * typical
    verdict("C6c selected c_sep discontinuous", ok,
            f"jump {jump:.3f} bits between {betas[k]:.4f} and {betas[k + 1]:.4f}; "
            f"smooth change over that step {typical:.4f} (jump > 10x)")
    assert ok


def test_c6d_csep_close_to_cjoint_below_transition(waterfall, verdict):
    scn, pts, _ = waterfall
    cs = _sel_csep(scn, pts)
    k = int(np.nanargmax(np.abs(np.diff(cs))))
    p = pts[k]
    s = scn.with_beta(p.beta)
    cj = se.c_joint(s, p.chosen)
    ratio = cs[k] / cj
    ok = ratio >= 0.95
    verdict("C6d c_sep within 5% of c_joint below transition", ok,
            f"beta={p.beta:.4f}: c_sep={cs[k]:.4f}, c_joint={cj:.4f}, ratio {ratio:.3f} (>= 0.95)")
    assert ok


# ---------------------------------------------------------------------------
# 7. decoupling


def _decoupling(true, post, seed):
    t = time.perf_counter()
    p = mc.SimParams(K=48, L=32, scheme="STS", n_rx=2, antennas=2, true_prior=true, post_prior=post, seed=seed)
    rows = mc.decoupling_report(p, trials=10_000)
    return max(abs(r.z) for r in rows), len(rows), time.perf_counter() - t


def test_c7a_decoupling_matched_gaussian(verdict):
    zmax, n, elapsed = _decoupling(pr.gaussian(SNR10), None, 1)
    ok = zmax < 3 and elapsed < 600
    verdict("C7a decoupling, matched Gaussian", ok, f"max |z| {zmax:.2f} over {n} moments (< 3), {elapsed:.0f} s")
    assert ok


def test_c7b_decoupling_mismatched(verdict):
    zmax, n, elapsed = _decoupling(pr.qpsk(SNR10), pr.gaussian(SNR10), 2)
    ok = zmax < 3 and elapsed < 600
    verdict("C7b decoupling, QPSK true / Gaussian postulated", ok,
            f"max |z| {zmax:.2f} over {n} moments (< 3), {elapsed:.0f} s")
    assert ok


def test_c7c_error_shrinks_with_size(verdict):
    t = time.perf_counter()
    med = []
    for K in (24, 48, 96):
        p = mc.SimParams(K=K, L=2 * K // 3, scheme="STS", n_rx=2, antennas=2, true_prior=pr.gaussian(SNR10), seed=1)
        rows = mc.decoupling_report(p, trials=10_000, user=None)
        med.append(float(np.median([abs(r.estimate - r.prediction) for r in rows])))
    elapsed = time.perf_counter() - t
    ok = med[0] > med[1] > med[2] and elapsed < 600
    verdict("C7c median moment error shrinks with K", ok,
            "K=24,48,96: " + ", ".join(f"{m:.4f}" for m in med) + f", {elapsed:.0f} s")
    assert ok


# ---------------------------------------------------------------------------
# 8. exact GPME


def _enumerate(A, y, pts, probs, nt0):
    """Scalar posterior-mean enumeration in the canonical operation order."""
    import itertools

    rows, cols = A.shape
    cands = []
    for combo in itertools.product(range(len(pts)), repeat=cols):
        x = [complex(pts[i]) for i in combo]
        lp = 0.0
        for i in combo:
            lp = lp + float(np.log(probs[i]))
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
    num = list(cands[0][0])
    num = [w[0] * v for v in num]
    for j in range(1, len(cands)):
        num = [num[c] + w[j] * cands[j][0][c] for c in range(cols)]
    return np.array([complex(v.real / den, v.imag / den) for v in num])


def test_c8_exact_gpme_oracle(verdict):
    q = pr.qpsk(2.0)
    mismatches = 0
    cases = 0
    for scheme, K, M in (("STS", 5, 1), ("STS", 2, 2), ("TS", 2, 2)):
        for seed in range(8):
            p = mc.SimParams(K=K, L=4, scheme=scheme, n_rx=2, antennas=M, true_prior=q, n0=0.5, seed=seed)
            ens = mc.gen_ensemble(p)
            rng = np.random.default_rng(100 + seed)
            y = ens.A @ pr.sample(q, rng, p.columns) + 0.5 * (rng.standard_normal(8) + 1j * rng.standard_normal(8))
            X, logp = mc.joint_constellation(p.post_prior)
            got = mc.exact_gpme(ens.A, y, X, logp, 0.5)
            mismatches += not np.array_equal(got, _enumerate(ens.A, y, q.points, q.probs, 0.5))
            cases += 1
    # K = 1, long spreading: conditional moments against the single-user formulas
    p = mc.SimParams(K=1, L=64, scheme="STS", n_rx=1, antennas=1, true_prior=q, n0=1.0, seed=8, fresh=False)
    ens = mc.gen_ensemble(p)
    rec = mc.run_trials(p, "exact", 20_000, ensemble=ens)
    ch = su.SimoChannel(ens.A[:, 0], q, q, np.eye(64))
    zs = []
    for ex in mc.moment_list(1):
        est, err = mc.empirical_moments(rec, 0, ex)
        pred, perr = su.joint_moment_simo(ch, ex[0])
        zs.append(mc.ReportRow("", est, err, float(np.real(pred)), perr).z)
    m, s = mc.jackknife_mean(np.abs(rec.x - rec.xhat)[:, 0] ** 2)
    zs.append((m - su.moments_simo(ch).E) / s)
    zmax = float(np.max(np.abs(zs)))
    ok = mismatches == 0 and zmax < 3
    verdict("C8 exact GPME oracle", ok,
            f"{mismatches}/{cases} toy systems differ from enumeration (== 0); "
            f"K=1 L=64 max |z| {zmax:.2f} over {len(zs)} moments (< 3)")
    assert ok


# ---------------------------------------------------------------------------
# 9. scheme ordering


def test_c9_scheme_ordering(verdict):
    joint_gaps, sep_gaps = [], []
    for b in (0.5, 1.0, 1.5, 2.0, 2.5, 3.0):
        c = {}
        for scheme in ("STS", "TS"):
            scn = se.Scenario.single(scheme, b, 2, 2, pr.gaussian(SNR10), n0=1.0,
                                     channel_samples=10_000, sampler="qmc")
            fp = se.solve(scn, with_free_energy=False)
            c[scheme] = (se.c_joint(scn, fp) / 2, se.c_sep(scn, fp) / 2)
        joint_gaps.append(c["STS"][0] - c["TS"][0])
        if b >= 2:
            sep_gaps.append(c["TS"][1] - c["STS"][1])
    ok = min(joint_gaps) > 0 and min(sep_gaps) > 0
    verdict("C9 STS/TS ordering", ok,
            f"min joint gap STS-TS {min(joint_gaps):+.3f}; min MMSE-front-end gap TS-STS (beta >= 2) "
            f"{min(sep_gaps):+.3f} bits/antenna (both > 0)")
    assert ok
