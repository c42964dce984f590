"""Replica-symmetric fixed points for space-time (STS) and time (TS) spreading.

The effective noise covariances ``(R, Rt)`` for STS, or ``(W, Wt)`` for TS,
solve

    A  = N0 I  + sum_p beta_p E_H[ sum of per-user error terms ]
    At = Nt0 I + sum_p beta_p E_H[ sum of per-user posterior-variance terms ]

where a per-user term is ``E_m h_m h_m^H`` summed over antennas (STS) or
``H E H^H`` (TS). The expectation over channel matrices is a sample average
over a fixed set of draws, so the map iterated by :func:`solve` is
deterministic. When several solutions coexist the one with the smallest free
energy is the physical one; :func:`branch_sweep` finds both branches by
continuation in the load.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from functools import lru_cache

import numpy as np
from scipy.special import ndtri
from scipy.stats import qmc

from . import priors as pr
from . import single_user as su
from .errors import DimMismatch, MismatchedScenario, NoConvergence
from .hermlin import LN2, f_penalty, herm_inv, hermitian, kl_gauss
from .integration import Integrator

log = logging.getLogger(__name__)

SCHEMES = ("STS", "TS")


@dataclass(frozen=True)
class IidGaussian:
    """i.i.d. ``CN(0, variance)`` channel entries; ``variance=None`` means ``1/N``."""

    variance: float = None


@dataclass(frozen=True, eq=False)
class FixedRealizations:
    """An explicit list of channel matrices, each ``N x M``, averaged exactly."""

    channels: tuple

    def __post_init__(self):
        chans = tuple(np.atleast_2d(np.asarray(h, dtype=complex)) for h in self.channels)
        if not chans:
            raise ValueError("need at least one channel realization")
        object.__setattr__(self, "channels", chans)


@dataclass(frozen=True)
class Group:
    """Users sharing a load share ``weight`` (beta_p), antenna count and priors."""

    weight: float
    antennas: int
    true_prior: pr.VectorPrior
    post_prior: pr.VectorPrior = None

    def __post_init__(self):
        if self.antennas < 1:
            raise ValueError("each group needs at least one antenna")
        if self.weight < 0:
            raise ValueError("group weights must be non-negative")
        tp = su._as_vector_prior(self.true_prior, self.antennas)
        pp = tp if self.post_prior is None else su._as_vector_prior(self.post_prior, self.antennas)
        object.__setattr__(self, "true_prior", tp)
        object.__setattr__(self, "post_prior", pp)


@dataclass(frozen=True)
class Scenario:
    """Asymptotic problem statement.

    ``groups`` weights sum to ``beta``. ``nt0=None`` means the postulated noise
    equals ``n0``. ``channel_samples`` draws from ``channel_law`` realise the
    average over users; ``sampler`` is ``'mc'`` or ``'qmc'``.
    """

    scheme: str
    beta: float
    n_rx: int
    n0: float
    groups: tuple
    nt0: float = None
    channel_law: object = field(default_factory=IidGaussian)
    channel_samples: int = 2000
    sampler: str = "mc"

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ValueError(f"scheme must be one of {SCHEMES}, got {self.scheme!r}")
        if self.beta < 0 or self.n_rx < 1 or not self.n0 > 0:
            raise ValueError("need beta >= 0, n_rx >= 1 and n0 > 0")
        nt0 = self.n0 if self.nt0 is None else float(self.nt0)
        if not nt0 > 0:
            raise ValueError("nt0 must be positive")
        object.__setattr__(self, "nt0", nt0)
        groups = tuple(self.groups)
        if not groups:
            raise ValueError("a scenario needs at least one group")
        total = sum(g.weight for g in groups)
        if abs(total - self.beta) > 1e-9 * max(1.0, self.beta):
            raise ValueError(f"group weights sum to {total}, expected beta = {self.beta}")
        object.__setattr__(self, "groups", groups)
        if self.channel_samples < 1:
            raise ValueError("channel_samples must be at least 1")
        if self.sampler not in ("mc", "qmc"):
            raise ValueError("sampler must be 'mc' or 'qmc'")
        if isinstance(self.channel_law, FixedRealizations):
            for g in groups:
                for h in self.channel_law.channels:
                    if h.shape != (self.n_rx, g.antennas):
                        raise DimMismatch(
                            f"fixed channel of shape {h.shape} does not fit N={self.n_rx}, M={g.antennas}")

    @classmethod
    def single(cls, scheme, beta, n_rx, antennas, true_prior, post_prior=None, n0=1.0,
               nt0=None, **kw):
        """One group of identical users."""
        return cls(scheme, beta, n_rx, n0, (Group(beta, antennas, true_prior, post_prior),),
                   nt0=nt0, **kw)

    def with_beta(self, beta):
        """Same scenario at load ``beta`` (group shares kept in proportion)."""
        if self.beta > 0:
            groups = tuple(replace(g, weight=g.weight * beta / self.beta) for g in self.groups)
        else:
            share = 1.0 / len(self.groups)
            groups = tuple(replace(g, weight=beta * share) for g in self.groups)
        return replace(self, beta=float(beta), groups=groups)

    def matched(self):
        """True when every postulated prior equals the true one and ``nt0 == n0``."""
        return self.nt0 == self.n0 and all(g.true_prior.same_law(g.post_prior) for g in self.groups)

    def matched_version(self):
        """The scenario with postulated model replaced by the true one."""
        groups = tuple(replace(g, post_prior=g.true_prior) for g in self.groups)
        return replace(self, nt0=self.n0, groups=groups)


@dataclass(frozen=True)
class NoiseOnly:
    pass


@dataclass(frozen=True)
class FullInterference:
    pass


@dataclass(frozen=True, eq=False)
class Explicit:
    A: np.ndarray
    At: np.ndarray


@dataclass(frozen=True)
class SolverConfig:
    """Damped fixed-point iteration settings.

    ``seed`` drives the channel draws (shared by every iteration and every
    load in a sweep) and the integrator's random points.
    """

    damping: float = 0.5
    tol: float = 1e-9
    max_iter: int = 5000
    integrator: Integrator = field(default_factory=Integrator)
    seed: int = 0
    init: object = field(default_factory=NoiseOnly)
    raise_on_failure: bool = True

    def __post_init__(self):
        if not 0 < self.damping <= 1:
            raise ValueError("damping must lie in (0, 1]")
        if not self.tol > 0 or self.max_iter < 1:
            raise ValueError("need tol > 0 and max_iter >= 1")


@dataclass(eq=False)
class FixedPoint:
    """A solution ``(A, At)`` of the fixed-point equations with diagnostics."""

    A: np.ndarray
    At: np.ndarray
    residual: float
    iterations: int
    branch: str
    converged: bool = True
    free_energy: float = float("nan")
    scheme: str = ""
    beta: float = float("nan")

    def distance(self, other):
        """Relative Frobenius distance between two solutions."""
        num = np.linalg.norm(self.A - other.A) + np.linalg.norm(self.At - other.At)
        den = np.linalg.norm(self.A) + np.linalg.norm(self.At)
        return float(num / den)


# ---------------------------------------------------------------------------
# channel draws


@lru_cache(maxsize=32)
def _iid_draws(n, N, M, variance, sampler, seed, group):
    if sampler == "qmc":
        m = int(np.ceil(np.log2(max(n, 2))))
        u = qmc.Sobol(d=2 * N * M, scramble=True, seed=np.random.default_rng([seed, group])).random_base2(m)[:n]
        t = ndtri(np.clip(u, 1e-16, 1 - 1e-16))
    else:
        t = np.random.default_rng([seed, group]).standard_normal((n, 2 * N * M))
    H = (t[:, :N * M] + 1j * t[:, N * M:]) * np.sqrt(variance / 2.0)
    H = H.reshape(n, N, M)
    H.setflags(write=False)
    return H


def draw_channels(scn, group, seed=0):
    """Channel matrices for group index ``group``, shape ``(S, N, M)``."""
    g = scn.groups[group]
    law = scn.channel_law
    if isinstance(law, FixedRealizations):
        return np.stack(law.channels)
    var = 1.0 / scn.n_rx if law.variance is None else float(law.variance)
    return _iid_draws(scn.channel_samples, scn.n_rx, g.antennas, var, scn.sampler, int(seed), group)


def _all_draws(scn, seed):
    return [draw_channels(scn, i, seed) for i in range(len(scn.groups))]


# ---------------------------------------------------------------------------
# right-hand sides


def _simo_stats(h, A, Ati):
    """``a`` and ``b`` for a batch of gain vectors ``h`` (S, N)."""
    u = h @ Ati.T
    a = np.real(np.einsum("sn,sn->s", np.conj(h), u))
    b = np.real(np.einsum("sn,nk,sk->s", np.conj(u), A, u))
    return a, b


def _mimo_stats(H, A, Ati):
    T = np.conj(np.swapaxes(H, -1, -2)) @ Ati
    G = hermitian(T @ H)
    B = hermitian(T @ A @ np.conj(np.swapaxes(T, -1, -2)))
    return G, B


def _outer_mean(h, w):
    """``mean_s w_s h_s h_s^H``."""
    return np.einsum("s,sn,sk->nk", w, h, np.conj(h)) / h.shape[0]


def rhs_sts(scn, A, At, integ=Integrator(), channel_draws=None, seed=0):
    """One application of the STS map, returning the new ``(R, Rt)``."""
    A, At = hermitian(A), hermitian(At)
    N = scn.n_rx
    if A.shape != (N, N) or At.shape != (N, N):
        raise DimMismatch(f"expected {N}x{N} matrices, got {A.shape} and {At.shape}")
    draws = _all_draws(scn, seed) if channel_draws is None else channel_draws
    Ati = herm_inv(At)
    newA = scn.n0 * np.eye(N, dtype=complex)
    newAt = scn.nt0 * np.eye(N, dtype=complex)
    for g, H in zip(scn.groups, draws):
        if g.weight == 0:
            continue
        for m in range(g.antennas):
            h = H[:, :, m]
            a, b = _simo_stats(h, A, Ati)
            E, V = su.simo_moments_batch(g.true_prior.per_antenna[m], g.post_prior.per_antenna[m],
                                         a, b, integ)
            newA = newA + g.weight * _outer_mean(h, E)
            newAt = newAt + g.weight * _outer_mean(h, V)
    return hermitian(newA), hermitian(newAt)


def rhs_ts(scn, A, At, integ=Integrator(), channel_draws=None, seed=0):
    """One application of the TS map, returning the new ``(W, Wt)``."""
    A, At = hermitian(A), hermitian(At)
    N = scn.n_rx
    if A.shape != (N, N) or At.shape != (N, N):
        raise DimMismatch(f"expected {N}x{N} matrices, got {A.shape} and {At.shape}")
    draws = _all_draws(scn, seed) if channel_draws is None else channel_draws
    Ati = herm_inv(At)
    newA = scn.n0 * np.eye(N, dtype=complex)
    newAt = scn.nt0 * np.eye(N, dtype=complex)
    for g, H in zip(scn.groups, draws):
        if g.weight == 0:
            continue
        G, B = _mimo_stats(H, A, Ati)
        E, V = su.mimo_moments_batch(g.true_prior, g.post_prior, G, B, integ)
        Hh = np.conj(np.swapaxes(H, -1, -2))
        newA = newA + g.weight * np.mean(H @ E @ Hh, axis=0)
        newAt = newAt + g.weight * np.mean(H @ V @ Hh, axis=0)
    return hermitian(newA), hermitian(newAt)


def _rhs(scn):
    return rhs_sts if scn.scheme == "STS" else rhs_ts


def _initial(scn, init, draws):
    N = scn.n_rx
    eye = np.eye(N, dtype=complex)
    if isinstance(init, Explicit):
        return hermitian(init.A), hermitian(init.At), "user_init"
    if isinstance(init, FullInterference):
        A, At = scn.n0 * eye, scn.nt0 * eye
        for g, H in zip(scn.groups, draws):
            Hh = np.conj(np.swapaxes(H, -1, -2))
            A = A + g.weight * np.mean((H * g.true_prior.powers()) @ Hh, axis=0)
            At = At + g.weight * np.mean((H * g.post_prior.powers()) @ Hh, axis=0)
        return hermitian(A), hermitian(At), "from_high_noise"
    return scn.n0 * eye, scn.nt0 * eye, "from_low_noise"


def _residual(new, old):
    N = old.shape[0]
    return float(np.linalg.norm(new - old, 2) / (np.real(np.trace(old)) / N))


def solve(scn, cfg=SolverConfig(), with_free_energy=True):
    """Damped iteration of the fixed-point map from ``cfg.init``.

    The step size starts at ``cfg.damping``. It halves when the residual grows
    while successive steps point in opposing directions (oscillation), and
    doubles, up to 1, after ten consecutive steps that keep their direction.
    A growing residual with aligned steps is a slow drift away from a
    vanished branch and is not damped further. Raises :class:`NoConvergence`
    carrying the last state when ``max_iter`` is reached and
    ``cfg.raise_on_failure`` is set.
    """
    integ = cfg.integrator
    draws = _all_draws(scn, cfg.seed)
    rhs = _rhs(scn)
    A, At, branch = _initial(scn, cfg.init, draws)
    gamma, best, streak = cfg.damping, np.inf, 0
    res = np.inf
    prev_step = None
    it = 0
    for it in range(1, cfg.max_iter + 1):
        nA, nAt = rhs(scn, A, At, integ, draws)
        res = max(_residual(nA, A), _residual(nAt, At))
        if res < cfg.tol:
            A, At = nA, nAt
            break
        step = np.concatenate([(nA - A).ravel(), (nAt - At).ravel()])
        aligned = True
        if prev_step is not None:
            aligned = np.real(np.vdot(step, prev_step)) > 0
        if res > best and not aligned:
            gamma = max(gamma / 2.0, 1e-4)
            streak = 0
        elif aligned:
            streak += 1
            if streak >= 10:
                gamma = min(1.0, 2.0 * gamma)
                streak = 0
        else:
            streak = 0
        best = res
        prev_step = step
        A = hermitian((1.0 - gamma) * A + gamma * nA)
        At = hermitian((1.0 - gamma) * At + gamma * nAt)
    fp = FixedPoint(A, At, res, it, branch, converged=res < cfg.tol, scheme=scn.scheme,
                    beta=scn.beta)
    if not fp.converged:
        if cfg.raise_on_failure:
            raise NoConvergence(
                f"{scn.scheme} solve at beta={scn.beta:g} stopped after {it} iterations "
                f"with residual {res:.3e} (tol {cfg.tol:g})", state=fp)
        return fp
    if with_free_energy:
        fp.free_energy = free_energy(scn, fp, integ, seed=cfg.seed)
    return fp


# ---------------------------------------------------------------------------
# capacities and free energy


def _per_user(scn, fp, seed, fn_sts, fn_ts):
    """``sum_p beta_p mean_k f_k`` and its standard error over channel draws."""
    draws = _all_draws(scn, seed)
    total, var = 0.0, 0.0
    exact = isinstance(scn.channel_law, FixedRealizations)
    for i, (g, H) in enumerate(zip(scn.groups, draws)):
        if g.weight == 0:
            continue
        if scn.scheme == "STS":
            vals = sum(fn_sts(g, m, H[:, :, m]) for m in range(g.antennas))
        else:
            vals = fn_ts(g, H)
        vals = np.asarray(vals, dtype=float)
        total += g.weight * vals.mean()
        if not exact and vals.size > 1:
            var += (g.weight * vals.std(ddof=1)) ** 2 / vals.size
    return total, float(np.sqrt(var))


def avg_ctilde(scn, fp, integ=Integrator(), seed=0):
    """``sum_p beta_p`` times the user-averaged mismatched information, in bits."""
    A, At = fp.A, fp.At
    Ati = herm_inv(At)

    def sts(g, m, h):
        a, b = _simo_stats(h, A, Ati)
        return su.simo_ctilde_batch(g.true_prior.per_antenna[m], g.post_prior.per_antenna[m],
                                    a, b, integ) / LN2

    def ts(g, H):
        G, B = _mimo_stats(H, A, Ati)
        return su.mimo_ctilde_batch(g.true_prior, g.post_prior, G, B, integ) / LN2

    return _per_user(scn, fp, seed, sts, ts)


def free_energy(scn, fp, integ=Integrator(), seed=0, return_stderr=False):
    """Free energy in bits: ``beta avg C~ + N log2(pi e N0) + F(A, At)``."""
    cbar, err = avg_ctilde(scn, fp, integ, seed)
    N = scn.n_rx
    val = cbar + N * np.log2(np.pi * np.e * scn.n0) + f_penalty(fp.A, fp.At, scn.n0, scn.nt0)
    return (float(val), err) if return_stderr else float(val)


def c_joint(scn, fp, integ=Integrator(), seed=0, return_stderr=False):
    """Joint-decoding spectral efficiency (bits per chip); matched scenarios only."""
    if not scn.matched():
        raise MismatchedScenario("c_joint is defined for the true (matched) model only")
    A = fp.A
    Ai = herm_inv(A)

    def sts(g, m, h):
        snr, _ = _simo_stats(h, A, Ai)
        return su.scalar_mi_batch(g.true_prior.per_antenna[m], snr, integ) / LN2

    def ts(g, H):
        S = H.shape[0]
        val, _ = su.mi_linear_gaussian(g.true_prior, H, np.broadcast_to(A, (S,) + A.shape), integ)
        return val / LN2

    cap, err = _per_user(scn, fp, seed, sts, ts)
    val = cap + kl_gauss(scn.n0 * np.eye(scn.n_rx), A)
    return (float(val), err) if return_stderr else float(val)


def c_sep(scn, fp, integ=Integrator(), seed=0, return_stderr=False):
    """Spectral efficiency with the GPME front end followed by single-user decoding (bits per chip)."""
    A, At = fp.A, fp.At
    Ati = herm_inv(At)

    def sts(g, m, h):
        a, b = _simo_stats(h, A, Ati)
        return su.simo_gpme_mi_batch(g.true_prior.per_antenna[m], g.post_prior.per_antenna[m],
                                     a, b, integ) / LN2

    def ts(g, H):
        return su.mimo_gpme_mi_batch(g.true_prior, g.post_prior, H, A, At, integ) / LN2

    val, err = _per_user(scn, fp, seed, sts, ts)
    return (float(val), err) if return_stderr else float(val)


def gpme_mi_methods(scn):
    """Evaluation path used by :func:`c_sep` for each group (reported in output metadata)."""
    return [su.gpme_mi_method(g.post_prior) for g in scn.groups]


# ---------------------------------------------------------------------------
# branch continuation


@dataclass(eq=False)
class SweepPoint:
    """All distinct fixed points found at one load, with the selected one marked."""

    beta: float
    solutions: list
    selected: int = -1
    failures: list = field(default_factory=list)
    tie: bool = False

    @property
    def chosen(self):
        return self.solutions[self.selected] if self.selected >= 0 else None


def _continuation(scn, betas, cfg, init):
    label = "from_high_noise" if isinstance(init, FullInterference) else "from_low_noise"
    out = []
    prev = None
    for beta in betas:
        s = scn.with_beta(beta)
        start = init if prev is None else Explicit(prev.A, prev.At)
        try:
            fp = solve(s, replace(cfg, init=start, raise_on_failure=True))
            fp.branch = label
            prev = fp
            out.append((beta, fp, None))
        except NoConvergence as exc:
            out.append((beta, None, exc))
    return out


def select_branch(solutions, tie_tol=1e-10):
    """Index of the minimum-free-energy solution and whether the minimum was a tie.

    Ties go to the solution with the larger ``||A||`` (interference-dominated).
    """
    if not solutions:
        return -1, False
    fe = np.array([s.free_energy for s in solutions])
    best = float(np.min(fe))
    scale = max(1.0, abs(best))
    tied = [i for i, f in enumerate(fe) if f - best <= tie_tol * scale]
    if len(tied) == 1:
        return tied[0], False
    idx = max(tied, key=lambda i: np.linalg.norm(solutions[i].A))
    log.warning("free energies tie within %.1e at beta=%g; choosing the larger-||A|| branch",
                tie_tol, solutions[idx].beta)
    return idx, True


def branch_sweep(scn, beta_grid, cfg=SolverConfig(), dedup_tol=1e-5, threads=1):
    """Continuation over ``beta_grid`` from both sides of any hysteresis region.

    An upward pass starts from the noise-only initialisation at the smallest
    load and a downward pass from the full-interference initialisation at the
    largest; each warm-starts from its previous solution. Returns one
    :class:`SweepPoint` per load, with duplicate solutions (relative Frobenius
    distance below ``dedup_tol``) merged.
    """
    betas = [float(b) for b in beta_grid]
    if any(b2 <= b1 for b1, b2 in zip(betas, betas[1:])):
        raise ValueError("beta_grid must be strictly increasing")
    if not betas:
        return []
    jobs = [(betas, NoiseOnly()), (betas[::-1], FullInterference())]
    if threads > 1:
        with ThreadPoolExecutor(max_workers=2) as ex:
            up, down = ex.map(lambda j: _continuation(scn, j[0], cfg, j[1]), jobs)
    else:
        up, down = (_continuation(scn, b, cfg, i) for b, i in jobs)
    down = down[::-1]
    points = []
    for (beta, fp_up, err_up), (_, fp_down, err_down) in zip(up, down):
        sols, fails = [], []
        for fp, err in ((fp_up, err_up), (fp_down, err_down)):
            if fp is None:
                fails.append(err)
                continue
            if all(fp.distance(s) > dedup_tol for s in sols):
                sols.append(fp)
        idx, tie = select_branch(sols)
        points.append(SweepPoint(beta, sols, idx, fails, tie))
    return points
