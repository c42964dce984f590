"""Scalar fixed points for Gaussian symbols with linear MMSE detection.

With i.i.d. ``CN(0, P)`` symbols and ``CN(0, 1/N)`` channel entries the
effective noise covariances are multiples of the identity, ``R = N_R I`` and
``W = N_W I``, and the fixed-point equations become scalar:

    N_R = N0 + (beta M / N) E[ P g / (1 + P g / N_R) ],      g = ||h||^2,
    N_W = N0 + (beta r / N) E[ P l / (1 + P l / N_W) ],      r = min(N, M),

where ``l`` is an unordered non-zero eigenvalue of ``H H^H``. ``g`` follows a
Gamma(N, 1/N) law and is integrated by generalized Gauss-Laguerre
quadrature; ``l`` is sampled from a cached pool of random channel draws.
Both maps are increasing and concave in the unknown, so bracketing root
finding on ``[N0, N0 + beta r P E[l] / N]`` always succeeds.
"""

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.optimize import brentq
from scipy.special import gammaln, roots_genlaguerre

from .errors import EigPoolTooSmall

GAIN_LAWS = ("iid", "unit")


@dataclass(frozen=True)
class GaussianScenario:
    """Gaussian-symbol scenario.

    ``gain_law='iid'`` draws channel entries ``CN(0, 1/N)``; ``'unit'`` fixes
    every column norm and every non-zero eigenvalue of ``H H^H`` to one.
    """

    beta: float
    M: int
    N: int
    P: float
    n0: float
    gain_law: str = "iid"
    eig_samples: int = 100_000
    seed: int = 0
    quad_order: int = 64
    target_rel_err: float = None

    def __post_init__(self):
        if self.beta < 0 or self.M < 1 or self.N < 1 or self.P < 0 or not self.n0 > 0:
            raise ValueError("need beta >= 0, M, N >= 1, P >= 0 and n0 > 0")
        if self.gain_law not in GAIN_LAWS:
            raise ValueError(f"gain_law must be one of {GAIN_LAWS}")
        if self.eig_samples < 1:
            raise ValueError("eig_samples must be positive")


@lru_cache(maxsize=16)
def _gamma_rule(N, order):
    """Nodes and weights for expectations over ``g ~ Gamma(N, 1/N)``."""
    x, w = roots_genlaguerre(order, N - 1)
    w = w * np.exp(-gammaln(N))
    return x / N, w / w.sum()


def _norm_rule(gs):
    if gs.gain_law == "unit":
        return np.ones(1), np.ones(1)
    return _gamma_rule(gs.N, gs.quad_order)


@lru_cache(maxsize=8)
def eigen_pool(N, M, samples, seed=0):
    """Non-zero eigenvalues of ``H H^H`` for ``samples`` draws, shape ``(samples, min(N, M))``."""
    rng = np.random.default_rng(seed)
    r = min(N, M)
    out = np.empty((samples, r))
    step = 20_000
    for s0 in range(0, samples, step):
        n = min(step, samples - s0)
        H = (rng.standard_normal((n, N, M)) + 1j * rng.standard_normal((n, N, M))) / np.sqrt(2.0 * N)
        small = H if N <= M else np.conj(np.swapaxes(H, -1, -2))
        lam = np.linalg.eigvalsh(small @ np.conj(np.swapaxes(small, -1, -2)))
        out[s0:s0 + n] = lam[:, -r:]
    out.setflags(write=False)
    return out


def _solve_scalar(n0, kappa, P, nodes, weights):
    """Root of ``n0 + kappa E[P l / (1 + P l / x)] - x`` for ``x >= n0``."""
    if kappa == 0 or P == 0:
        return float(n0)

    def f(x):
        return n0 + kappa * np.dot(weights, P * nodes / (1.0 + P * nodes / x)) - x

    hi = n0 + kappa * P * np.dot(weights, nodes)
    if f(hi) >= 0:
        return float(hi)
    return float(brentq(f, n0, hi, xtol=1e-15 * hi, rtol=4 * np.finfo(float).eps, maxiter=500))


def nr_fixed_point(gs):
    """Effective noise level ``N_R`` for STS."""
    g, w = _norm_rule(gs)
    return _solve_scalar(gs.n0, gs.beta * gs.M / gs.N, gs.P, g, w)


def c_lmmse_sts(gs):
    """STS spectral efficiency with the linear MMSE front end, bits per chip."""
    g, w = _norm_rule(gs)
    nr = nr_fixed_point(gs)
    return float(gs.beta * gs.M * np.dot(w, np.log2(1.0 + gs.P * g / nr)))


def _eig_rule(gs):
    """Eigenvalue nodes (uniform weights) for TS."""
    if gs.M == 1 or gs.gain_law == "unit":
        return _norm_rule(gs)
    lam = eigen_pool(gs.N, gs.M, gs.eig_samples, gs.seed).ravel()
    return lam, np.full(lam.size, 1.0 / lam.size)


def nw_fixed_point(gs):
    """Effective noise level ``N_W`` for TS."""
    lam, w = _eig_rule(gs)
    return _solve_scalar(gs.n0, gs.beta * min(gs.N, gs.M) / gs.N, gs.P, lam, w)


def c_lmmse_ts(gs, return_stderr=False):
    """TS spectral efficiency with the linear MMSE front end, bits per chip.

    Raises :class:`EigPoolTooSmall` when ``target_rel_err`` is set and the
    pool's standard error exceeds it.
    """
    nw = nw_fixed_point(gs)
    r = min(gs.N, gs.M)
    if gs.M == 1 or gs.gain_law == "unit":
        lam, w = _norm_rule(gs)
        val = float(gs.beta * r * np.dot(w, np.log2(1.0 + gs.P * lam / nw)))
        err = 0.0
    else:
        pool = eigen_pool(gs.N, gs.M, gs.eig_samples, gs.seed)
        per_draw = gs.beta * np.sum(np.log2(1.0 + gs.P * pool / nw), axis=1)
        val = float(per_draw.mean())
        err = float(per_draw.std(ddof=1) / np.sqrt(per_draw.size)) if per_draw.size > 1 else np.inf
    if gs.target_rel_err is not None and err > gs.target_rel_err * max(abs(val), 1e-300):
        raise EigPoolTooSmall(
            f"eigenvalue pool of {gs.eig_samples} draws gives relative error {err / val:.2e}, "
            f"above the target {gs.target_rel_err:g}")
    return (val, err) if return_stderr else val
