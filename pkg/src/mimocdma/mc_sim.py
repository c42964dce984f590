"""Finite-size MIMO DS-CDMA simulation with exact posterior-mean detection.

Each user ``k`` with ``M_k`` transmit antennas sends ``x_k`` through chip
sequences ``s_{k,m}`` (length ``L``) and a flat channel ``H_k`` (``N x M_k``).
The received chip-rate vector stacks the ``L`` chips of ``N`` receive
antennas, so the whole system is ``y = A x + n`` with ``A`` of shape
``(N L, sum_k M_k)`` and column ``(k, m)`` equal to ``kron(s_{k,m}, h_{k,m})``.
STS gives each antenna its own sequence, TS reuses one sequence per user.

Detection is the exact posterior mean under the postulated model: the linear
MMSE estimate when postulated priors are Gaussian, or full enumeration of
the joint constellation otherwise.
"""

import itertools
from dataclasses import dataclass, field

import numpy as np

from . import priors as pr
from . import single_user as su
from . import state_evolution as se
from .errors import EnumerationTooLarge, InvalidPrior
from .hermlin import hermitian

DETECTORS = ("lmmse", "exact")
ENUM_BITS = 20
_CHIP_LAWS = ("qpsk", "gaussian")


@dataclass(frozen=True)
class SimParams:
    """Finite system description.

    ``antennas`` is one count for every user or one per user. Priors may be a
    single :class:`~mimocdma.priors.Prior` (applied to every antenna of every
    user) or a list with one :class:`~mimocdma.priors.VectorPrior` per user.
    """

    K: int
    L: int
    scheme: str
    n_rx: int
    antennas: object
    true_prior: object
    post_prior: object = None
    n0: float = 1.0
    nt0: float = None
    chip_law: str = "qpsk"
    seed: int = 0
    fresh: bool = True

    def __post_init__(self):
        if self.K < 1 or self.L < 1 or self.n_rx < 1:
            raise ValueError("need K, L, N >= 1")
        if self.scheme not in se.SCHEMES:
            raise ValueError(f"scheme must be one of {se.SCHEMES}")
        if self.chip_law not in _CHIP_LAWS:
            raise ValueError(f"chip_law must be one of {_CHIP_LAWS}")
        ants = [int(self.antennas)] * self.K if np.ndim(self.antennas) == 0 else [int(m) for m in self.antennas]
        if len(ants) != self.K or min(ants) < 1:
            raise ValueError("antennas must be a positive count or one count per user")
        object.__setattr__(self, "antennas", tuple(ants))
        object.__setattr__(self, "true_prior", self._per_user(self.true_prior, ants))
        post = self.true_prior if self.post_prior is None else self._per_user(self.post_prior, ants)
        object.__setattr__(self, "post_prior", post)
        object.__setattr__(self, "nt0", self.n0 if self.nt0 is None else float(self.nt0))
        if not (self.n0 > 0 and self.nt0 > 0):
            raise ValueError("noise levels must be positive")

    @staticmethod
    def _per_user(p, ants):
        if isinstance(p, (pr.Prior, pr.VectorPrior)):
            return tuple(su._as_vector_prior(p, m) for m in ants)
        p = tuple(p)
        if len(p) != len(ants):
            raise ValueError("need one prior per user")
        return tuple(su._as_vector_prior(q, m) for q, m in zip(p, ants))

    @property
    def beta(self):
        return self.K / self.L

    @property
    def columns(self):
        return int(sum(self.antennas))

    def user_slices(self):
        edges = np.concatenate([[0], np.cumsum(self.antennas)])
        return [slice(int(a), int(b)) for a, b in zip(edges[:-1], edges[1:])]


@dataclass(eq=False)
class SimEnsemble:
    """One realisation of chips and channels and the stacked system matrix."""

    params: SimParams
    chips: list
    channels: list
    A: np.ndarray


@dataclass(eq=False)
class DetectionRecords:
    """Stacked trial outputs: ``x`` and ``xhat`` have shape ``(trials, sum_k M_k)``."""

    params: SimParams
    detector: str
    x: np.ndarray
    xhat: np.ndarray
    seeds: list = field(default_factory=list)

    def __len__(self):
        return self.x.shape[0]


def _chips(rng, law, n, L):
    if law == "qpsk":
        bits = rng.integers(0, 2, size=(n, L, 2))
        return ((1 - 2 * bits[..., 0]) + 1j * (1 - 2 * bits[..., 1])) / np.sqrt(2.0 * L)
    return (rng.standard_normal((n, L)) + 1j * rng.standard_normal((n, L))) / np.sqrt(2.0 * L)


def gen_ensemble(params, rng=None):
    """Draw chips and channels and build the stacked matrix ``A`` (NL x sum M_k).

    All chips are drawn in one call, then all channels, so the random stream
    consumed per ensemble is fixed by ``K``, ``L``, ``N`` and the antenna counts.
    """
    rng = np.random.default_rng(params.seed) if rng is None else rng
    N, L, ants = params.n_rx, params.L, params.antennas
    n_seq = params.K if params.scheme == "TS" else params.columns
    seqs = _chips(rng, params.chip_law, n_seq, L)
    if params.scheme == "TS":
        seqs = np.repeat(seqs, ants, axis=0)
    g = (rng.standard_normal((N, params.columns)) + 1j * rng.standard_normal((N, params.columns)))
    g /= np.sqrt(2.0 * N)
    # column c is kron(seqs[c], g[:, c]): chip index major, receive antenna minor
    A = (seqs[:, :, None] * g.T[:, None, :]).reshape(params.columns, L * N).T
    sl = params.user_slices()
    return SimEnsemble(params, [seqs[s] for s in sl], [g[:, s] for s in sl], A)


def _column_groups(priors):
    """Map each distinct per-antenna law to the flat column indices using it."""
    groups = {}
    for c, p in enumerate(p for vp in priors for p in vp.per_antenna):
        groups.setdefault(p.key(), (p, []))[1].append(c)
    return [(p, np.array(cols)) for p, cols in groups.values()]


def _sample_symbols(groups, rng, n_cols):
    x = np.empty(n_cols, dtype=complex)
    for p, cols in groups:
        x[cols] = pr.sample(p, rng, cols.size)
    return x


def joint_constellation(priors):
    """All candidate symbol vectors of the whole system and their log-probabilities.

    Candidates are listed with the last column varying fastest.
    """
    per_col = [p for vp in priors for p in vp.per_antenna]
    if any(p.is_gaussian for p in per_col):
        raise InvalidPrior("exact enumeration needs finite postulated constellations")
    bits = sum(np.log2(p.size) for p in per_col)
    if bits > ENUM_BITS + 1e-9:
        raise EnumerationTooLarge(
            f"joint constellation needs {bits:.1f} bits, above the cap of {ENUM_BITS}")
    idx = np.array(list(itertools.product(*[range(p.size) for p in per_col])), dtype=int)
    X = np.stack([p.points[idx[:, c]] for c, p in enumerate(per_col)], axis=1)
    logp = np.zeros(idx.shape[0])
    for c, p in enumerate(per_col):
        with np.errstate(divide="ignore"):
            logp = logp + np.log(p.probs[idx[:, c]])
    return X, logp


def exact_gpme(A, y, X, logp, nt0):
    """Posterior mean of ``x`` given ``y = A x + n`` under candidates ``X`` and noise ``nt0``.

    All sums are accumulated in a fixed sequential order (columns, then rows,
    then candidates) and complex products are written out in real arithmetic,
    because vectorised complex multiplication may fuse operations. The result
    therefore matches a scalar textbook evaluation operation by operation and
    does not depend on array layout.
    """
    Ar, Ai, Xr, Xi = A.real, A.imag, X.real, X.imag
    acc_r = Ar[None, :, 0] * Xr[:, 0, None] - Ai[None, :, 0] * Xi[:, 0, None]
    acc_i = Ar[None, :, 0] * Xi[:, 0, None] + Ai[None, :, 0] * Xr[:, 0, None]
    for c in range(1, X.shape[1]):
        acc_r = acc_r + (Ar[None, :, c] * Xr[:, c, None] - Ai[None, :, c] * Xi[:, c, None])
        acc_i = acc_i + (Ar[None, :, c] * Xi[:, c, None] + Ai[None, :, c] * Xr[:, c, None])
    rr = y.real[None, :] - acc_r
    ri = y.imag[None, :] - acc_i
    metric = np.cumsum(rr * rr + ri * ri, axis=1)[:, -1]
    ell = logp - metric / nt0
    w = np.exp(ell - np.max(ell))
    den = np.cumsum(w)[-1]
    num_r = np.cumsum(w[:, None] * Xr, axis=0)[-1]
    num_i = np.cumsum(w[:, None] * Xi, axis=0)[-1]
    return (num_r / den) + 1j * (num_i / den)


def lmmse(A, Y, powers, nt0):
    """Linear MMSE estimates ``D A^H (A D A^H + nt0 I)^-1 y`` for the rows of ``Y``."""
    D = np.asarray(powers, dtype=float)
    cov = hermitian((A * D) @ A.conj().T + nt0 * np.eye(A.shape[0]))
    sol = np.linalg.solve(cov, Y.T)
    return (D[:, None] * (A.conj().T @ sol)).T


def run_trials(params, detector="lmmse", trials=1000, ensemble=None):
    """Simulate ``trials`` independent transmissions and detect them.

    Trial ``t`` uses a generator seeded by the ``t``-th child of
    ``SeedSequence(params.seed)``, so records are reproducible and do not
    depend on chunking. With ``params.fresh`` each trial draws new chips and
    channels; otherwise ``ensemble`` (or one drawn from the seed) is reused.
    """
    if detector not in DETECTORS:
        raise ValueError(f"detector must be one of {DETECTORS}")
    trials = int(trials)
    post = params.post_prior
    if detector == "lmmse":
        if not all(vp.all_gaussian for vp in post):
            raise InvalidPrior("the LMMSE detector needs Gaussian postulated priors")
        powers = np.concatenate([vp.powers() for vp in post])
    else:
        X, logp = joint_constellation(post)
    fixed = None
    if not params.fresh:
        fixed = gen_ensemble(params) if ensemble is None else ensemble
    groups = _column_groups(params.true_prior)
    children = np.random.SeedSequence(params.seed).spawn(trials)
    nl = params.n_rx * params.L
    xs = np.empty((trials, params.columns), dtype=complex)
    xh = np.empty_like(xs)
    chunk = 256
    for t0 in range(0, trials, chunk):
        block = range(t0, min(trials, t0 + chunk))
        As, Ys = [], []
        for t in block:
            rng = np.random.default_rng(children[t])
            ens = fixed if fixed is not None else gen_ensemble(params, rng)
            x = _sample_symbols(groups, rng, params.columns)
            n = np.sqrt(params.n0 / 2.0) * (rng.standard_normal(nl) + 1j * rng.standard_normal(nl))
            y = ens.A @ x + n
            xs[t] = x
            As.append(ens.A)
            Ys.append(y)
        if detector == "lmmse":
            if fixed is not None:
                xh[t0:t0 + len(block)] = lmmse(fixed.A, np.stack(Ys), powers, params.nt0)
            else:
                A3 = np.stack(As)
                cov = (A3 * powers) @ np.conj(np.swapaxes(A3, -1, -2)) + params.nt0 * np.eye(nl)
                sol = np.linalg.solve(hermitian(cov), np.stack(Ys)[..., None])[..., 0]
                xh[t0:t0 + len(block)] = powers * np.einsum("tnk,tn->tk", np.conj(A3), sol)
        else:
            for i, (A, y) in enumerate(zip(As, Ys)):
                xh[t0 + i] = exact_gpme(A, y, X, logp, params.nt0)
    return DetectionRecords(params, detector, xs, xh, [c.entropy for c in children[:1]])


# ---------------------------------------------------------------------------
# moments


def _moment_samples(x, xh, exps):
    """Per-row product ``prod_m Re(x_m)^i Im(x_m)^k Re(xh_m)^j Im(xh_m)^l``."""
    out = np.ones(x.shape[:-1])
    for m, (ir, ii, jr, ji) in enumerate(np.asarray(exps, dtype=int).reshape(-1, 4)):
        out = out * (x[..., m].real ** ir * x[..., m].imag ** ii
                     * xh[..., m].real ** jr * xh[..., m].imag ** ji)
    return out


def jackknife_mean(samples):
    """Mean and delete-one jackknife standard error of 1-D ``samples``."""
    f = np.asarray(samples, dtype=float)
    n = f.size
    mean = float(f.mean())
    if n < 2:
        return mean, float("inf")
    loo = (n * mean - f) / (n - 1)
    return mean, float(np.sqrt((n - 1) / n * np.sum((loo - loo.mean()) ** 2)))


def empirical_moments(records, k, exps):
    """Sample joint moment for user ``k`` (or pooled over users when ``k is None``).

    ``exps`` holds one ``(i_r, i_i, j_r, j_i)`` row per antenna of the user.
    Pooling first averages over users within each trial, so the jackknife runs
    over independent trials. Returns ``(value, stderr)``.
    """
    sl = records.params.user_slices()
    if k is not None:
        vals = _moment_samples(records.x[:, sl[k]], records.xhat[:, sl[k]], exps)
    else:
        M = len(range(*sl[0].indices(records.x.shape[1])))
        per = [_moment_samples(records.x[:, s], records.xhat[:, s], exps) for s in sl
               if s.stop - s.start == M]
        vals = np.mean(per, axis=0)
    return jackknife_mean(vals)


def moment_list(M=1, max_order=2):
    """All per-antenna joint moments of total order 1..max_order on each antenna.

    Each entry is an ``(M, 4)`` exponent array with a single non-zero row.
    """
    out = []
    for m in range(M):
        for tot in range(1, max_order + 1):
            for e in itertools.product(range(tot + 1), repeat=4):
                if sum(e) == tot:
                    ex = np.zeros((M, 4), dtype=int)
                    ex[m] = e
                    out.append(ex)
    return out


def moment_label(exps):
    parts = []
    for m, (ir, ii, jr, ji) in enumerate(np.asarray(exps).reshape(-1, 4)):
        fac = [f"{n}^{p}" if p > 1 else n
               for n, p in (("Re x", ir), ("Im x", ii), ("Re xh", jr), ("Im xh", ji)) if p]
        if fac:
            parts.append(f"[{m}] " + " ".join(fac))
    return "; ".join(parts) or "1"


def predicted_moment(scn, fp, group, exps, integ=None, seed=0):
    """Decoupled-channel prediction of a joint moment, averaged over channel draws.

    Returns ``(value, stderr)`` where the error combines channel sampling and
    any Monte Carlo integration error.
    """
    integ = su.Integrator() if integ is None else integ
    g = scn.groups[group]
    H = se.draw_channels(scn, group, seed)
    exps = np.asarray(exps, dtype=int).reshape(g.antennas, 4)
    Ati = su.herm_inv(fp.At)
    if scn.scheme == "STS":
        val = np.ones(H.shape[0])
        ierr2 = np.zeros(H.shape[0])
        for m in range(g.antennas):
            if not exps[m].any():
                continue
            a, b = se._simo_stats(H[:, :, m], fp.A, Ati)
            v, s = su.simo_joint_moment_batch(g.true_prior.per_antenna[m], g.post_prior.per_antenna[m],
                                              a, b, exps[m], integ)
            ierr2 = ierr2 * v ** 2 + s ** 2 * val ** 2
            val = val * v
    else:
        G, B = se._mimo_stats(H, fp.A, Ati)
        val, s = su.mimo_joint_moment_batch(g.true_prior, g.post_prior, G, B, exps, integ)
        val, ierr2 = np.real(val), np.real(s) ** 2
    mean = float(val.mean())
    if isinstance(scn.channel_law, se.FixedRealizations) or val.size < 2:
        chan = 0.0
    else:
        chan = float(val.std(ddof=1) / np.sqrt(val.size))
    return mean, float(np.sqrt(chan ** 2 + ierr2.mean() / max(val.size, 1)))


def asymptotic_scenario(params, channel_samples=4000, sampler="qmc"):
    """Many-user counterpart of a homogeneous simulation (same load, priors and noise)."""
    if len(set(params.antennas)) != 1 or len({(t.per_antenna, p.per_antenna) for t, p in
                                                zip(params.true_prior, params.post_prior)}) != 1:
        raise ValueError("the asymptotic counterpart needs identical users")
    return se.Scenario.single(params.scheme, params.beta, params.n_rx, params.antennas[0],
                              params.true_prior[0], params.post_prior[0], n0=params.n0,
                              nt0=params.nt0, channel_samples=channel_samples, sampler=sampler)


@dataclass
class ReportRow:
    label: str
    estimate: float
    stderr: float
    prediction: float
    prediction_stderr: float

    @property
    def z(self):
        """Standardised difference.

        The spread is floored at ``1e-10`` of the compared values, the
        accumulated rounding level of a prediction averaged over thousands of
        quadratures, so a moment that is deterministic under the true prior
        (``(Re x)^2`` for QPSK) does not turn rounding into a large z.
        """
        scale = max(abs(self.estimate), abs(self.prediction))
        den = max(np.hypot(self.stderr, self.prediction_stderr), 1e-10 * scale)
        diff = self.estimate - self.prediction
        if den == 0:
            return 0.0 if diff == 0 else float(np.sign(diff) * np.inf)
        return float(diff / den)


def decoupling_report(params, scn=None, moments=None, trials=10_000, detector=None,
                      cfg=None, user=0, records=None):
    """Compare finite-size joint moments with their decoupled-channel predictions.

    ``user=None`` pools all users of the (homogeneous) system. Returns a list
    of :class:`ReportRow`.
    """
    scn = asymptotic_scenario(params) if scn is None else scn
    cfg = se.SolverConfig() if cfg is None else cfg
    if detector is None:
        detector = "lmmse" if all(vp.all_gaussian for vp in params.post_prior) else "exact"
    M = params.antennas[0 if user is None else user]
    moments = moment_list(M) if moments is None else moments
    fp = se.solve(scn, cfg, with_free_energy=False)
    recs = run_trials(params, detector, trials) if records is None else records
    rows = []
    for ex in moments:
        est, err = empirical_moments(recs, user, ex)
        pred, perr = predicted_moment(scn, fp, 0, ex, cfg.integrator, cfg.seed)
        rows.append(ReportRow(moment_label(ex), est, err, pred, perr))
    return rows
