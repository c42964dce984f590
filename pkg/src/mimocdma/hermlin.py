"""Dense Hermitian matrix helpers and complex-Gaussian divergences.

Matrices are plain ``numpy`` arrays. Every routine that needs a factorisation
goes through :func:`numpy.linalg.eigh` so that near-singular inputs are caught
by an explicit eigenvalue floor instead of failing inside a Cholesky.
All divergences are returned in bits.
"""

import numpy as np

from .errors import DimMismatch, NotPositiveDefinite

EPS_PD = 1e-12
LN2 = np.log(2.0)


def hermitian(a):
    """Return ``a`` as a complex Hermitian array, symmetrised exactly."""
    a = np.asarray(a, dtype=complex)
    if a.ndim == 0:
        a = a.reshape(1, 1)
    if a.shape[-1] != a.shape[-2]:
        raise DimMismatch(f"matrix must be square, got shape {a.shape}")
    return 0.5 * (a + np.conj(np.swapaxes(a, -1, -2)))


def _eig_pd(a, eps_pd=EPS_PD):
    a = hermitian(a)
    w, v = np.linalg.eigh(a)
    n = a.shape[-1]
    scale = np.abs(np.trace(a, axis1=-2, axis2=-1)).real / n
    floor = eps_pd * np.maximum(np.asarray(scale), np.finfo(float).tiny)
    if np.any(w <= floor[..., None]):
        raise NotPositiveDefinite(
            f"minimum eigenvalue {np.min(w):.3e} is below the floor {np.min(floor):.3e}")
    return w, v


def is_pd(a, eps_pd=EPS_PD):
    try:
        _eig_pd(a, eps_pd)
    except NotPositiveDefinite:
        return False
    return True


def herm_sqrt(a, eps_pd=EPS_PD):
    """Principal square root ``S`` of a positive-definite ``a`` (``S @ S^H == a``)."""
    w, v = _eig_pd(a, eps_pd)
    s = (v * np.sqrt(w)[..., None, :]) @ np.conj(np.swapaxes(v, -1, -2))
    return hermitian(s)


def herm_inv(a, eps_pd=EPS_PD):
    w, v = _eig_pd(a, eps_pd)
    return hermitian((v / w[..., None, :]) @ np.conj(np.swapaxes(v, -1, -2)))


def herm_inv_sqrt(a, eps_pd=EPS_PD):
    w, v = _eig_pd(a, eps_pd)
    return hermitian((v / np.sqrt(w)[..., None, :]) @ np.conj(np.swapaxes(v, -1, -2)))


def logdet(a, eps_pd=EPS_PD):
    """Natural log-determinant of a positive-definite Hermitian matrix."""
    w, _ = _eig_pd(a, eps_pd)
    return np.sum(np.log(w), axis=-1)


def _check_pair(s0, s1):
    s0 = hermitian(s0)
    s1 = hermitian(s1)
    if s0.shape != s1.shape:
        raise DimMismatch(f"covariances differ in shape: {s0.shape} vs {s1.shape}")
    return s0, s1


def kl_gauss(s0, s1, eps_pd=EPS_PD):
    """KL divergence ``KL(CN(0, s0) || CN(0, s1))`` in bits.

    Parameters
    ----------
    s0, s1 : array_like, shape (N, N)
        Positive-definite Hermitian covariance matrices.

    Returns
    -------
    float
        ``[tr(s1^-1 s0) - N - ln det(s1^-1 s0)] / ln 2``.
    """
    s0, s1 = _check_pair(s0, s1)
    # work in the whitened frame so the result is exactly zero for s0 == s1
    w = herm_inv_sqrt(s1, eps_pd)
    m = hermitian(w @ s0 @ w)
    lam, _ = _eig_pd(m, eps_pd)
    nats = np.sum(lam - 1.0 - np.log(lam), axis=-1)
    return float(nats / LN2) if np.ndim(nats) == 0 else nats / LN2


def f_penalty(a, at, n0, nt0, eps_pd=EPS_PD):
    """Four-term divergence combination that enters the replica free energy.

    ``KL(n0 I || At) + KL(A || At) + KL(nt0 I || At) - KL(nt0 I || At A^-1 At)``,
    all in bits.
    """
    a, at = _check_pair(a, at)
    if n0 <= 0 or nt0 <= 0:
        raise ValueError("noise levels must be positive")
    eye = np.eye(a.shape[-1])
    at_a_at = hermitian(at @ herm_inv(a, eps_pd) @ at)
    return (kl_gauss(n0 * eye, at, eps_pd) + kl_gauss(a, at, eps_pd)
            + kl_gauss(nt0 * eye, at, eps_pd) - kl_gauss(nt0 * eye, at_a_at, eps_pd))


def spectral_norm(a):
    return float(np.linalg.norm(a, 2))


def random_pd(n, rng, cond=10.0):
    """Random Hermitian PD matrix with eigenvalues spread over ``[1, cond]``; test helper."""
    z = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    q, _ = np.linalg.qr(z)
    lam = np.exp(rng.uniform(0.0, np.log(cond), n))
    return hermitian((q * lam) @ q.conj().T)
