"""Decoupled single-user channels: GPMEs, error moments and (mis)matched informations.

A SIMO channel ``y = h x + n`` with ``n ~ CN(0, R)`` seen through a postulated
model with noise covariance ``Rt`` depends on the observation only through the
matched-filter statistic ``z = h^H Rt^-1 y``. Writing

    a = h^H Rt^-1 h,        b = h^H Rt^-1 R Rt^-1 h,

the statistic is ``z = a x + w`` with ``w ~ CN(0, b)`` and the postulated
posterior is proportional to ``p~(x~) exp(2 Re(x~* z) - a |x~|^2)``. Every
per-user quantity (error, posterior variance, mismatched information) is
therefore a two-dimensional integral over ``z`` whatever the receive dimension
``N``. When both priors factor over the real and imaginary parts (Gaussian,
QPSK, square QAM) the integral splits into two one-dimensional ones.

The MIMO analogue uses ``G = H^H Wt^-1 H`` and ``B = H^H Wt^-1 W Wt^-1 H``.
Gaussian postulated priors give closed forms; finite postulated constellations
with ``M >= 2`` are integrated by (quasi-)Monte Carlo over the noise.

Batched ``*_batch`` functions take arrays of ``(a, b)`` or ``(G, B)`` and are
what the fixed-point solver calls. Information quantities are returned in nats
by the batched functions and in bits by the single-channel functions.
"""

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import ndtr

from . import priors as pr
from .errors import (DimMismatch, EnumerationTooLarge, EstimatorUnreliable,
                     IntegrationBudgetExceeded, InvalidPrior)
from .hermlin import LN2, herm_inv, hermitian, logdet
from .integration import (Integrator, complex_noise_rule, complex_vector_samples,
                          real_noise_rule, std_normal_rule)

ENUM_CAP = 4 ** 10
# largest true product constellation enumerated (rather than sampled) by the vector engine
ENUM_TRUE_MAX = 64
_CHUNK = 2_000_000


# ---------------------------------------------------------------------------
# channel types


def _as_vector_prior(p, M):
    if isinstance(p, pr.VectorPrior):
        if p.M != M:
            raise DimMismatch(f"prior has {p.M} antennas but the channel has {M} columns")
        return p
    return pr.VectorPrior.iid(p, M)


@dataclass(frozen=True, eq=False)
class SimoChannel:
    """``y = h x + n``, ``n ~ CN(0, R)``, detected under the postulated ``(post_prior, Rt)``.

    ``Rt`` defaults to ``R`` (matched noise).
    """

    h: np.ndarray
    true_prior: pr.Prior
    post_prior: pr.Prior
    R: np.ndarray
    Rt: np.ndarray = None

    def __post_init__(self):
        h = np.atleast_1d(np.asarray(self.h, dtype=complex)).ravel()
        R = hermitian(self.R)
        Rt = R if self.Rt is None else hermitian(self.Rt)
        if R.shape != (h.size, h.size) or Rt.shape != R.shape:
            raise DimMismatch(f"h has length {h.size} but R is {R.shape} and Rt is {Rt.shape}")
        object.__setattr__(self, "h", h)
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "Rt", Rt)

    @property
    def N(self):
        return self.h.size

    def stats(self):
        """``(a, b, snr)``: postulated gain, statistic noise variance, true SNR ``h^H R^-1 h``."""
        Rti_h = herm_inv(self.Rt) @ self.h
        a = float(np.real(np.vdot(self.h, Rti_h)))
        b = float(np.real(np.vdot(Rti_h, self.R @ Rti_h)))
        snr = float(np.real(np.vdot(self.h, herm_inv(self.R) @ self.h)))
        return a, b, snr


@dataclass(frozen=True, eq=False)
class MimoChannel:
    """``y = H x + n``, ``n ~ CN(0, W)``, detected under the postulated ``(post_prior, Wt)``."""

    H: np.ndarray
    true_prior: pr.VectorPrior
    post_prior: pr.VectorPrior
    W: np.ndarray
    Wt: np.ndarray = None

    def __post_init__(self):
        H = np.asarray(self.H, dtype=complex)
        if H.ndim == 1:
            H = H[:, None]
        W = hermitian(self.W)
        Wt = W if self.Wt is None else hermitian(self.Wt)
        if W.shape != (H.shape[0],) * 2 or Wt.shape != W.shape:
            raise DimMismatch(f"H is {H.shape} but W is {W.shape} and Wt is {Wt.shape}")
        object.__setattr__(self, "H", H)
        object.__setattr__(self, "W", W)
        object.__setattr__(self, "Wt", Wt)
        object.__setattr__(self, "true_prior", _as_vector_prior(self.true_prior, H.shape[1]))
        object.__setattr__(self, "post_prior", _as_vector_prior(self.post_prior, H.shape[1]))

    @property
    def N(self):
        return self.H.shape[0]

    @property
    def M(self):
        return self.H.shape[1]

    def stats(self):
        """``(G, B)`` with ``G = H^H Wt^-1 H`` and ``B = H^H Wt^-1 W Wt^-1 H``."""
        T = self.H.conj().T @ herm_inv(self.Wt)
        return hermitian(T @ self.H), hermitian(T @ self.W @ T.conj().T)

    def column(self, m=0):
        return SimoChannel(self.H[:, m], self.true_prior.per_antenna[m],
                           self.post_prior.per_antenna[m], self.W, self.Wt)


@dataclass(frozen=True)
class MIEstimator:
    """How ``I(x; <x~>)`` is evaluated.

    ``method='exact'`` uses the fact that the GPME is an invertible function of
    the projection of the matched-filter statistic onto the span of the
    postulated constellation, so the information reduces to that of a linear
    Gaussian channel. ``method='histogram'`` is a plug-in estimator on sampled
    ``(x, <x~>)`` pairs with equal-mass bins; it raises
    :class:`EstimatorUnreliable` when halving the bin count moves the estimate
    by more than ``drift_tol`` bits.
    """

    method: str = "exact"
    bins: int = 32
    samples: int = 200_000
    seed: int = 0
    drift_tol: float = 0.02

    def __post_init__(self):
        if self.method not in ("exact", "histogram"):
            raise ValueError(f"unknown MI estimator {self.method!r}")
        if self.bins < 2 or self.samples < 10:
            raise ValueError("need bins >= 2 and samples >= 10")


class Moments:
    """``E`` and ``V`` with integration error estimates; unpacks as ``E, V``."""

    def __init__(self, E, V, err_E=0.0, err_V=0.0):
        self.E, self.V, self.err_E, self.err_V = E, V, err_E, err_V

    def __iter__(self):
        return iter((self.E, self.V))

    def __repr__(self):
        return f"Moments(E={self.E!r}, V={self.V!r}, err_E={self.err_E!r}, err_V={self.err_V!r})"


# ---------------------------------------------------------------------------
# scalar engine


def _law(p, field):
    """Engine representation ``('gaussian', Pe)`` or ``('discrete', points, probs)``.

    ``Pe`` is the complex power for ``field='complex'`` and twice the variance
    for one real component, which makes the Gaussian formulas field-independent.
    """
    if p.kind == "gaussian":
        return ("gaussian", float(p.P if field == "complex" else 2.0 * p.var))
    dtype = complex if field == "complex" else float
    pts = np.asarray(p.points, dtype=dtype)
    probs = np.asarray(p.probs, dtype=float)
    keep = probs > 0
    return ("discrete", pts[keep], probs[keep])


def _posterior(z, a, post, d):
    """Postulated posterior mean, variance and log-partition at statistic ``z``.

    ``d`` is 1 for complex symbols and 1/2 for one real component.
    """
    if post[0] == "gaussian":
        Pe = post[1]
        g = 1.0 + Pe * a
        m = Pe * z / g
        v = np.broadcast_to(d * Pe / g, np.shape(z))
        logZ = -d * np.log(g) + Pe * np.abs(z) ** 2 / g
        return m, v, logZ
    pts, probs = post[1], post[2]
    if pts.size == 2 and not np.iscomplexobj(pts):
        # two real points: the posterior is logistic in z
        x0, x1 = pts
        l0 = 2.0 * x0 * z - a * x0 * x0 + np.log(probs[0])
        l1 = 2.0 * x1 * z - a * x1 * x1 + np.log(probs[1])
        logZ = np.logaddexp(l0, l1)
        p1 = np.exp(l1 - logZ)
        m = x0 + (x1 - x0) * p1
        v = (x1 - x0) ** 2 * p1 * (1.0 - p1)
        return m, v, logZ
    ell = (2.0 * np.real(np.conj(pts) * z[..., None]) - a[..., None] * np.abs(pts) ** 2
           + np.log(probs))
    top = ell.max(axis=-1, keepdims=True)
    e = np.exp(ell - top)
    tot = e.sum(axis=-1, keepdims=True)
    pi = e / tot
    m = pi @ pts
    v = np.sum(pi * np.abs(pts - m[..., None]) ** 2, axis=-1)
    logZ = top[..., 0] + np.log(tot[..., 0])
    return m, v, logZ


def _nodes(field, integ):
    return complex_noise_rule(integ) if field == "complex" else real_noise_rule(integ)


def _reduce(vals, q, random):
    """Weighted mean over the last axis and its Monte Carlo standard error."""
    mean = vals @ q
    if not random or vals.shape[-1] < 2:
        return mean, np.zeros_like(mean)
    n = vals.shape[-1]
    sd = np.sqrt(np.sum((vals - mean[..., None]) ** 2, axis=-1) / (n - 1))
    return mean, sd / np.sqrt(n)


@lru_cache(maxsize=16)
def _legendre(n):
    x, w = np.polynomial.legendre.leggauss(n)
    x.setflags(write=False)
    w.setflags(write=False)
    return x, w


def _transition_rule(tstar, width, n, far=12.0):
    """Nodes and weights for ``N(0, 1)`` resolving a sharp feature at ``tstar``.

    The line is split halfway between ``tstar`` and the origin. The piece
    holding the feature uses Gauss-Legendre in ``asinh((t - tstar) / width)``,
    the piece holding the Gaussian bulk uses Gauss-Legendre in ``asinh(t)``.
    Both are accurate far beyond what fixed Gauss-Hermite nodes achieve when
    a posterior switches abruptly in the noise tail.
    """
    x, wl = _legendre(n)
    tstar = np.asarray(tstar, dtype=float)[..., None]
    width = np.asarray(width, dtype=float)[..., None]
    mid = 0.5 * tstar
    sgn = np.where(tstar < 0, -1.0, 1.0)
    ts, ws = [], []
    for centre, scale, e1, e2 in ((tstar, width, mid, tstar + sgn * far),
                                  (np.zeros_like(tstar), np.ones_like(tstar), mid, -sgn * far)):
        lo, hi = np.minimum(e1, e2), np.maximum(e1, e2)
        u0, u1 = np.arcsinh((lo - centre) / scale), np.arcsinh((hi - centre) / scale)
        half = 0.5 * (u1 - u0)
        u = half * x + 0.5 * (u0 + u1)
        t = centre + scale * np.sinh(u)
        ts.append(t)
        ws.append(np.exp(-0.5 * t * t) / np.sqrt(2.0 * np.pi) * scale * np.cosh(u) * half * wl)
    return np.concatenate(ts, axis=-1), np.concatenate(ws, axis=-1)


def _binary_real(post):
    return post[0] == "discrete" and post[1].size == 2 and not np.iscomplexobj(post[1])


def _noise_grid(aa, bb, true, post, field, integ):
    """Noise nodes (scaled like the engine's unit noise) and weights for one chunk.

    Shapes broadcast to ``(s, I, J)``. For two-point real postulated laws and
    quadrature rules the nodes follow the posterior's switching point.
    """
    if field == "real" and _binary_real(post) and not integ.is_random:
        (x0, x1), (p0, p1) = post[1], post[2]
        zstar = (aa[..., 0] * (x1 * x1 - x0 * x0) - np.log(p1 / p0)) / (2.0 * (x1 - x0))
        if true[0] == "gaussian":
            sig = np.sqrt(0.5 * (aa[..., 0] ** 2 * true[1] + bb[..., 0]))
            tstar = zstar / sig
        else:
            sig = np.sqrt(0.5 * bb[..., 0])
            tstar = (zstar - aa[..., 0] * true[1][None, :]) / sig
        width = np.minimum(1.0, 1.0 / (2.0 * abs(x1 - x0) * sig))
        t, w = _transition_rule(tstar, np.broadcast_to(width, tstar.shape), max(integ.order // 2, 2))
        return t / np.sqrt(2.0), w
    nodes, q = _nodes(field, integ)
    return nodes[None, None, :], q[None, None, :]


def _symmetric(law):
    """True when a discrete law is invariant under ``x -> -x``."""
    pts, probs = law[1], law[2]
    order = np.lexsort((pts.imag, pts.real)) if np.iscomplexobj(pts) else np.argsort(pts)
    neg = -pts
    order_neg = np.lexsort((neg.imag, neg.real)) if np.iscomplexobj(neg) else np.argsort(neg)
    return (np.allclose(pts[order], neg[order_neg], rtol=0, atol=1e-12 * max(1.0, np.abs(pts).max()))
            and np.allclose(probs[order], probs[order_neg], rtol=0, atol=1e-15))


def _half_plane(pts):
    return (pts.real > 0) | ((pts.real == 0) & (pts.imag > 0))


def _scalar_engine(a, b, true, post, field, integ):
    """``E``, ``V`` and mismatched information (nats) of ``z = a x + w``, ``w ~ (C)N(0, b)``.

    Returns six arrays shaped like ``a``: the three values and their standard
    errors (zero for quadrature rules).
    """
    d = 1.0 if field == "complex" else 0.5
    S = a.size
    if true[0] == "gaussian":
        n_true = 1
        px = np.ones(1)
    else:
        if _symmetric(true) and (post[0] == "gaussian" or _symmetric(post)):
            # (x, w) -> (-x, -w) leaves every integrand unchanged and maps the
            # node sets onto each other, so half of the support suffices
            keep = true[1].real > 0 if field == "real" else _half_plane(true[1])
            zero = true[1] == 0
            true = ("discrete", true[1][keep | zero],
                    np.where(zero, 1.0, 2.0)[keep | zero] * true[2][keep | zero])
        n_true = true[1].size
        px = true[2]
    n_post = 1 if post[0] == "gaussian" else post[1].size
    J = _nodes(field, integ)[0].size
    step = max(1, _CHUNK // (n_true * J * n_post))
    out = np.empty((3, S, J))
    for s0 in range(0, S, step):
        sl = slice(s0, s0 + step)
        aa, bb = a[sl, None, None], b[sl, None, None]
        nodes, q = _noise_grid(aa, bb, true, post, field, integ)
        if true[0] == "gaussian":
            P = true[1]
            tot = aa * aa * P + bb
            z = np.sqrt(tot) * nodes
            mu = (aa * P / tot) * z
            tau = d * P * bb / tot
            nu = tau + np.abs(mu) ** 2
        else:
            x = true[1][None, :, None]
            z = aa * x + np.sqrt(bb) * nodes
            mu, tau, nu = x, 0.0, np.abs(x) ** 2
        m, v, logZ = _posterior(z, np.broadcast_to(aa, z.shape), post, d)
        err = tau + np.abs(mu - m) ** 2
        ctil = 2.0 * np.real(np.conj(mu) * z) - aa * nu - logZ
        shape = (z.shape[0], n_true, z.shape[-1])
        # node weights are folded in here; the remaining reduction is a plain sum
        wq = np.broadcast_to(q, shape) * z.shape[-1]
        for i, arr in enumerate((err, v, ctil)):
            out[i, sl] = np.einsum("sij,sij,i->sj", np.broadcast_to(arr, shape), wq, px)
    uniform = np.full(J, 1.0 / J)
    res = [_reduce(out[i], uniform, integ.is_random) for i in range(3)]
    return res[0][0], res[1][0], res[2][0], res[0][1], res[1][1], res[2][1]


def _gaussian_post_closed(P, Pt, a, b):
    c = Pt / (1.0 + Pt * a)
    E = (1.0 - c * a) ** 2 * P + c * c * b
    V = c * np.ones_like(a)
    C = a * P + np.log1p(Pt * a) - Pt * (a * a * P + b) / (1.0 + Pt * a)
    return E, V, C


def simo_eval(true_prior, post_prior, a, b, integ=Integrator()):
    """Batched ``(E, V, C~_nats, sE, sV, sC)`` for scalar symbols at gains ``a`` and noise ``b``."""
    a = np.atleast_1d(np.asarray(a, dtype=float))
    b = np.broadcast_to(np.asarray(b, dtype=float), a.shape).copy()
    if post_prior.is_gaussian:
        E, V, C = _gaussian_post_closed(true_prior.P, post_prior.P, a, b)
        z = np.zeros_like(a)
        return E, V, C, z, z, z
    split_t, split_p = pr.split_components(true_prior), pr.split_components(post_prior)
    if split_t is not None and split_p is not None:
        parts = [_scalar_engine(a, b, _law(t, "real"), _law(p, "real"), "real", integ)
                 for t, p in zip(split_t, split_p)]
        vals = [parts[0][i] + parts[1][i] for i in range(3)]
        errs = [np.hypot(parts[0][i], parts[1][i]) for i in range(3, 6)]
        return (*vals, *errs)
    return _scalar_engine(a, b, _law(true_prior, "complex"), _law(post_prior, "complex"),
                          "complex", integ)


def simo_moments_batch(true_prior, post_prior, a, b, integ=Integrator()):
    """``(E, V)`` arrays over a batch of ``(a, b)``."""
    E, V, _, _, _, _ = simo_eval(true_prior, post_prior, a, b, integ)
    return E, V


def simo_ctilde_batch(true_prior, post_prior, a, b, integ=Integrator()):
    """Mismatched information in nats over a batch of ``(a, b)``."""
    return simo_eval(true_prior, post_prior, a, b, integ)[2]


def scalar_mi_batch(prior, snr, integ=Integrator()):
    """``I(x; sqrt(snr) x + n)`` in nats for ``n ~ CN(0, 1)``."""
    snr = np.atleast_1d(np.asarray(snr, dtype=float))
    if prior.is_gaussian:
        return np.log1p(prior.P * snr)
    return simo_eval(prior, prior, snr, snr, integ)[2]


def _real_mi(values, probs, a, b, integ):
    """Information (nats) of the real channel ``s = a v + w``, ``w ~ N(0, b/2)``, ``v`` discrete."""
    law = ("discrete", np.asarray(values, dtype=float), np.asarray(probs, dtype=float))
    return _scalar_engine(a, b, law, law, "real", integ)[2]


# ---------------------------------------------------------------------------
# explicit-symbol expectations (joint moments)


def _explicit_true(law, field, integ, order=None):
    """Nodes and weights for the symbol itself (quadrature for Gaussian laws)."""
    if law[0] == "discrete":
        return law[1], law[2]
    Pe = law[1]
    if field == "real":
        t, w = std_normal_rule(order or integ.order)
        return np.sqrt(Pe / 2.0) * t, w
    t, w = std_normal_rule(order or min(integ.order, 32))
    u = (t[:, None] + 1j * t[None, :]).ravel() / np.sqrt(2.0)
    return np.sqrt(Pe) * u, np.outer(w, w).ravel()


def _component_moment(a, b, true, post, field, integ, fn):
    d = 1.0 if field == "complex" else 0.5
    xs, px = _explicit_true(true, field, integ)
    nodes, q = _nodes(field, integ)
    n_post = 1 if post[0] == "gaussian" else post[1].size
    step = max(1, _CHUNK // (xs.size * nodes.size * n_post))
    out = np.empty((a.size, nodes.size))
    for s0 in range(0, a.size, step):
        sl = slice(s0, s0 + step)
        aa, bb = a[sl, None, None], b[sl, None, None]
        x = xs[None, :, None]
        z = aa * x + np.sqrt(bb) * nodes[None, None, :]
        m, _, _ = _posterior(z, np.broadcast_to(aa, z.shape), post, d)
        out[sl] = np.einsum("sij,i->sj", fn(np.broadcast_to(x, m.shape), m), px)
    return _reduce(out, q, integ.is_random)


def simo_joint_moment_batch(true_prior, post_prior, a, b, exps, integ=Integrator()):
    """``E[Re(x)^i Im(x)^k Re(m)^j Im(m)^l]`` with ``exps = (i, k, j, l)`` and ``m`` the GPME.

    Returns ``(value, stderr)`` arrays over the batch of ``(a, b)``.
    """
    a = np.atleast_1d(np.asarray(a, dtype=float))
    b = np.broadcast_to(np.asarray(b, dtype=float), a.shape).copy()
    ir, ii, jr, ji = (int(e) for e in exps)
    split_t, split_p = pr.split_components(true_prior), pr.split_components(post_prior)
    if split_t is not None and split_p is not None:
        val, var = np.ones_like(a), np.zeros_like(a)
        for (t, p), (i, j) in zip(zip(split_t, split_p), ((ir, jr), (ii, ji))):
            if i == 0 and j == 0:
                continue
            v, s = _component_moment(a, b, _law(t, "real"), _law(p, "real"), "real", integ,
                                     lambda x, m, i=i, j=j: x ** i * m ** j)
            var = var * v ** 2 + s ** 2 * val ** 2 + var * s ** 2
            val = val * v
        return val, np.sqrt(var)

    def fn(x, m):
        return x.real ** ir * x.imag ** ii * m.real ** jr * m.imag ** ji

    return _component_moment(a, b, _law(true_prior, "complex"), _law(post_prior, "complex"),
                             "complex", integ, fn)


# ---------------------------------------------------------------------------
# vector engine


def _psd_sqrt(B):
    w, v = np.linalg.eigh(hermitian(B))
    return (v * np.sqrt(np.clip(w, 0.0, None))[..., None, :]) @ np.conj(np.swapaxes(v, -1, -2))


def _check_enum(vp):
    if vp.product_size() > ENUM_CAP:
        raise EnumerationTooLarge(
            f"product constellation has {vp.product_size()} points, above the cap {ENUM_CAP}")
    return vp.enumerate()


def _uniform_to_points(prior, u):
    cdf = np.cumsum(prior.probs)
    idx = np.minimum(np.searchsorted(cdf, u * cdf[-1], side="right"), prior.size - 1)
    return prior.points[idx]


def _true_vector_grid(true, integ):
    """Symbol nodes ``X`` (I, J, M) or (I, 1, M), weights ``px`` and noise draws ``U`` (1, J, M)."""
    M = true.M
    if true.all_discrete and true.product_size() <= ENUM_TRUE_MAX:
        X, logp = true.enumerate()
        U = complex_vector_samples(integ, M)
        return X[:, None, :], np.exp(logp), U[None]
    draws = complex_vector_samples(integ, 2 * M)
    U, Z = draws[:, :M], draws[:, M:]
    cols = []
    for m, p in enumerate(true.per_antenna):
        if p.is_gaussian:
            cols.append(np.sqrt(p.P) * Z[:, m])
        else:
            cols.append(_uniform_to_points(p, ndtr(np.sqrt(2.0) * Z[:, m].real)))
    return np.stack(cols, axis=-1)[None], np.ones(1), U[None]


def _vector_posterior(z, G, post, Xt=None, logpt=None):
    """Postulated posterior mean, covariance and log-partition for vector statistics.

    ``z`` has shape ``(s, I, J, M)`` and ``G`` shape ``(s, M, M)``.
    """
    M = G.shape[-1]
    if post.all_gaussian:
        Dinv = np.diag(1.0 / post.powers())
        C = herm_inv(Dinv + G)
        m = np.einsum("smn,sijn->sijm", C, z)
        Dh = np.sqrt(post.powers())
        ld = logdet(np.eye(M) + Dh[:, None] * G * Dh[None, :])
        logZ = -ld[:, None, None] + np.real(np.einsum("sijm,sijm->sij", np.conj(z), m))
        V = np.broadcast_to(C[:, None, None], z.shape + (M,))
        return m, V, logZ
    quad = np.real(np.einsum("km,smn,kn->sk", np.conj(Xt), G, Xt))
    ell = (2.0 * np.real(np.einsum("km,sijm->sijk", np.conj(Xt), z))
           - quad[:, None, None, :] + logpt)
    top = ell.max(axis=-1, keepdims=True)
    e = np.exp(ell - top)
    tot = e.sum(axis=-1, keepdims=True)
    pi = e / tot
    m = pi @ Xt
    second = np.einsum("sijk,km,kn->sijmn", pi, Xt, np.conj(Xt))
    V = second - m[..., :, None] * np.conj(m[..., None, :])
    logZ = top[..., 0] + np.log(tot[..., 0])
    return m, V, logZ


def _vector_samples(true, post, G, B, integ, fn):
    """Apply ``fn(x, z, m, V, logZ, G)`` on the sample grid and average.

    ``fn`` returns an array of shape ``(s, I, J, ...)``; the result is
    ``(mean, stderr)`` with shape ``(S, ...)``.
    """
    rule = integ.vector_rule()
    X, px, U = _true_vector_grid(true, rule)
    if post.all_gaussian:
        Xt = logpt = None
        K = 1
    elif post.all_discrete:
        Xt, logpt = _check_enum(post)
        K = Xt.shape[0]
    else:
        raise InvalidPrior("postulated priors must be all Gaussian or all finite per user")
    I, J = px.size, U.shape[1]
    Bh = _psd_sqrt(B)
    step = max(1, _CHUNK // (I * J * K * G.shape[-1]))
    means, errs = [], []
    for s0 in range(0, G.shape[0], step):
        Gs, Bs = G[s0:s0 + step], Bh[s0:s0 + step]
        x = np.broadcast_to(X, (I, J, X.shape[-1]))[None]
        z = np.einsum("smn,sijn->sijm", Gs, x) + np.einsum("smn,sijn->sijm", Bs, U[None])
        m, V, logZ = _vector_posterior(z, Gs, post, Xt, logpt)
        vals = fn(np.broadcast_to(x, z.shape), z, m, V, logZ, Gs)
        vals = np.moveaxis(np.einsum("sij...,i->sj...", vals, px), 1, -1)
        mean, err = _reduce(vals, np.full(J, 1.0 / J), True)
        means.append(mean)
        errs.append(err)
    return np.concatenate(means), np.concatenate(errs)


def _vector_closed(true, post, G, B):
    M = G.shape[-1]
    Dinv = np.diag(1.0 / post.powers())
    C = herm_inv(Dinv + G)
    Sx = true.second_moment()
    F = np.eye(M) - C @ G
    E = hermitian(F @ Sx @ np.conj(np.swapaxes(F, -1, -2))
                  + C @ B @ np.conj(np.swapaxes(C, -1, -2)))
    Dh = np.sqrt(post.powers())
    ld = logdet(np.eye(M) + Dh[:, None] * G * Dh[None, :])
    GS = G @ Sx
    Ct = (np.real(np.trace(GS, axis1=-2, axis2=-1)) + ld
          - np.real(np.trace(C @ (GS @ G + B), axis1=-2, axis2=-1)))
    return E, C, Ct


def _psd_floor(A):
    w, v = np.linalg.eigh(hermitian(A))
    return hermitian((v * np.clip(w, 0.0, None)[..., None, :]) @ np.conj(np.swapaxes(v, -1, -2)))


def mimo_eval(true, post, G, B, integ=Integrator()):
    """Batched ``(E, V, C~_nats, sE, sV, sC)`` for vector symbols; ``G, B`` of shape (S, M, M)."""
    G = hermitian(np.asarray(G, dtype=complex))
    B = hermitian(np.asarray(B, dtype=complex))
    if G.ndim == 2:
        G, B = G[None], B[None]
    M = G.shape[-1]
    if M == 1:
        res = simo_eval(true.per_antenna[0], post.per_antenna[0], G[:, 0, 0].real,
                        B[:, 0, 0].real, integ)
        return tuple(r[:, None, None] if i in (0, 1, 3, 4) else r for i, r in enumerate(res))
    if post.all_gaussian:
        E, V, C = _vector_closed(true, post, G, B)
        zero = np.zeros(G.shape[0])
        return E, V, C, np.zeros_like(E.real), np.zeros_like(E.real), zero

    def fn(x, z, m, V, logZ, Gs):
        e = x - m
        err = e[..., :, None] * np.conj(e[..., None, :])
        quad = np.real(np.einsum("sijm,smn,sijn->sij", np.conj(x), Gs, x))
        ct = 2.0 * np.real(np.einsum("sijm,sijm->sij", np.conj(x), z)) - quad - logZ
        return np.concatenate([err.reshape(err.shape[:3] + (-1,)),
                               V.reshape(V.shape[:3] + (-1,)), ct[..., None]], axis=-1)

    mean, err = _vector_samples(true, post, G, B, integ, fn)
    MM = M * M
    E = _psd_floor(mean[:, :MM].reshape(-1, M, M))
    V = _psd_floor(mean[:, MM:2 * MM].reshape(-1, M, M))
    sE = np.abs(err[:, :MM]).reshape(-1, M, M)
    sV = np.abs(err[:, MM:2 * MM]).reshape(-1, M, M)
    return E, V, mean[:, -1].real, sE, sV, err[:, -1].real


def mimo_moments_batch(true, post, G, B, integ=Integrator()):
    E, V, _, _, _, _ = mimo_eval(true, post, G, B, integ)
    return E, V


def mimo_ctilde_batch(true, post, G, B, integ=Integrator()):
    return mimo_eval(true, post, G, B, integ)[2]


def mimo_joint_moment_batch(true, post, G, B, exps, integ=Integrator()):
    """``E[prod_m Re(x_m)^i Im(x_m)^k Re(m_m)^j Im(m_m)^l]``; ``exps`` has shape (M, 4)."""
    G = hermitian(np.asarray(G, dtype=complex))
    B = hermitian(np.asarray(B, dtype=complex))
    if G.ndim == 2:
        G, B = G[None], B[None]
    exps = np.asarray(exps, dtype=int).reshape(G.shape[-1], 4)
    if G.shape[-1] == 1:
        return simo_joint_moment_batch(true.per_antenna[0], post.per_antenna[0],
                                       G[:, 0, 0].real, B[:, 0, 0].real, exps[0], integ)

    def fn(x, z, m, V, logZ, Gs):
        out = np.ones(x.shape[:-1])
        for k, (ir, ii, jr, ji) in enumerate(exps):
            out = out * (x[..., k].real ** ir * x[..., k].imag ** ii
                         * m[..., k].real ** jr * m[..., k].imag ** ji)
        return out

    return _vector_samples(true, post, G, B, integ, fn)


# ---------------------------------------------------------------------------
# linear Gaussian channel information


def _realify_matrix(A):
    """Real representation acting on ``[Re v; Im v]``."""
    return np.block([[A.real, -A.imag], [A.imag, A.real]])


def _real_gaussian_mi(Sx, F, Sigma):
    """``1/2 log det(I + Sigma^-1 F Sx F^T)`` in nats."""
    d = F.shape[-2]
    return 0.5 * np.linalg.slogdet(np.eye(d) + np.linalg.solve(Sigma, F @ Sx @ F.T))[1]


def _real_discrete_mi(Xr, px, F, Sigma, integ):
    """Information (nats) of ``y = F x + n`` with real ``n ~ N(0, Sigma)`` and discrete ``x``.

    ``Xr`` holds all support points (K, n) with probabilities ``px``.
    """
    S, d = F.shape[0], F.shape[-2]
    w, v = np.linalg.eigh(Sigma)
    Wh = (v / np.sqrt(w)[..., None, :]) @ np.swapaxes(v, -1, -2)
    Fw = Wh @ F
    rule = integ.vector_rule()
    K = Xr.shape[0]
    logp = np.log(px)
    if K <= ENUM_TRUE_MAX:
        xs, wx = Xr, px
        t = complex_vector_samples(rule, d)
        U = np.sqrt(2.0) * t.real
    else:
        t = complex_vector_samples(rule, d + 1)
        U = np.sqrt(2.0) * t[:, :d].real
        idx = np.minimum(np.searchsorted(np.cumsum(px), ndtr(np.sqrt(2.0) * t[:, d].real) * px.sum()), K - 1)
        xs, wx = Xr[idx], None
    out = np.empty((S, U.shape[0]))
    step = max(1, _CHUNK // (U.shape[0] * K * max(d, 1) * (xs.shape[0] if wx is not None else 1)))
    for s0 in range(0, S, step):
        Fs = Fw[s0:s0 + step]
        Yk = np.einsum("sdn,kn->skd", Fs, Xr)
        if wx is not None:
            Yx = np.einsum("sdn,in->sid", Fs, xs)
            r = (Yx[:, :, None, None, :] - Yk[:, None, None, :, :]
                 + U[None, None, :, None, :])
            ell = -0.5 * np.sum(r * r, axis=-1) + logp
            top = ell.max(-1)
            lse = top + np.log(np.exp(ell - top[..., None]).sum(-1))
            vals = -0.5 * np.sum(U * U, axis=-1)[None, None, :] - lse
            out[s0:s0 + step] = np.einsum("sij,i->sj", vals, wx)
        else:
            Yx = np.einsum("sdn,jn->sjd", Fs, xs)
            r = Yx[:, :, None, :] - Yk[:, None, :, :] + U[None, :, None, :]
            ell = -0.5 * np.sum(r * r, axis=-1) + logp
            top = ell.max(-1)
            lse = top + np.log(np.exp(ell - top[..., None]).sum(-1))
            out[s0:s0 + step] = -0.5 * np.sum(U * U, axis=-1)[None, :] - lse
    mean, err = _reduce(out, np.full(out.shape[1], 1.0 / out.shape[1]), True)
    return mean, err


def _real_prior_points(vp):
    X, logp = _check_enum(vp)
    return np.concatenate([X.real, X.imag], axis=-1), np.exp(logp)


def mi_linear_gaussian(prior, Heff, Sigma, integ=Integrator()):
    """``I(x; Heff x + n)`` in nats with ``n ~ CN(0, Sigma)``, batched over leading axes.

    ``prior`` is a :class:`~mimocdma.priors.VectorPrior` (or a scalar prior for
    one column). Returns ``(value, stderr)``.
    """
    Heff = np.asarray(Heff, dtype=complex)
    Sigma = hermitian(np.asarray(Sigma, dtype=complex))
    if Heff.ndim == 2:
        Heff, Sigma = Heff[None], Sigma[None]
    prior = _as_vector_prior(prior, Heff.shape[-1])
    if prior.all_gaussian:
        D = prior.powers()
        val = logdet(Sigma + (Heff * D) @ np.conj(np.swapaxes(Heff, -1, -2))) - logdet(Sigma)
        return val, np.zeros_like(val)
    if not prior.all_discrete:
        raise InvalidPrior("true priors must be all Gaussian or all finite per user")
    if Heff.shape[-1] == 1:
        Si = herm_inv(Sigma)
        h = Heff[..., 0]
        snr = np.real(np.einsum("sn,snm,sm->s", np.conj(h), Si, h))
        res = simo_eval(prior.per_antenna[0], prior.per_antenna[0], snr, snr, integ)
        return res[2], res[5]
    Xr, px = _real_prior_points(prior)
    return _real_discrete_mi(Xr, px, _realify_matrix(Heff), 0.5 * _realify_matrix(Sigma).real,
                             integ)


def scalar_real_mi_gaussian(a, b, P):
    return 0.5 * np.log1p(a * a * P / b)


# ---------------------------------------------------------------------------
# GPME sufficient-statistic reduction


def _span_basis(post):
    """Orthonormal real basis of the span of postulated constellation differences.

    Acts on ``[Re v; Im v]`` (length 2M). Returns an array of shape (2M, r).
    """
    M = post.M
    cols = []
    for m, p in enumerate(post.per_antenna):
        if p.is_gaussian or pr.spans_plane(p):
            e = np.zeros((2 * M, 2))
            e[m, 0] = 1.0
            e[M + m, 1] = 1.0
            cols.append(e)
            continue
        pts = p.points[p.probs > 0]
        diff = pts - pts[0]
        if pts.size < 2 or np.max(np.abs(diff)) == 0:
            continue
        dvec = diff[np.argmax(np.abs(diff))]
        dvec = dvec / abs(dvec)
        e = np.zeros((2 * M, 1))
        e[m, 0] = dvec.real
        e[M + m, 0] = dvec.imag
        cols.append(e)
    if not cols:
        return np.zeros((2 * M, 0))
    return np.concatenate(cols, axis=1)


def gpme_mi_method(post):
    """Which evaluation path ``cap_gpme_*`` takes for this postulated law."""
    basis = _span_basis(post if isinstance(post, pr.VectorPrior) else pr.VectorPrior((post,)))
    if basis.shape[1] == 0:
        return "constant-estimate"
    if basis.shape[1] == basis.shape[0]:
        return "sufficient-statistic"
    return "projected-statistic"


def simo_gpme_mi_batch(true_prior, post_prior, a, b, integ=Integrator()):
    """``I(x; <x~>)`` in nats at statistic parameters ``(a, b)``.

    The GPME is the gradient of a strictly convex log-partition along the
    span of the postulated support, so it carries exactly the information
    in the projection of ``z`` onto that span.
    """
    a = np.atleast_1d(np.asarray(a, dtype=float))
    b = np.broadcast_to(np.asarray(b, dtype=float), a.shape).copy()
    basis = _span_basis(pr.VectorPrior((post_prior,)))
    if basis.shape[1] == 0:
        return np.zeros_like(a)
    if basis.shape[1] == 2:
        return scalar_mi_batch(true_prior, a * a / b, integ)
    dvec = basis[0, 0] + 1j * basis[1, 0]
    if true_prior.is_gaussian:
        return scalar_real_mi_gaussian(a, b, true_prior.P)
    vals = np.real(np.conj(dvec) * true_prior.points)
    uv, inv = np.unique(np.round(vals, 14), return_inverse=True)
    probs = np.bincount(inv, weights=true_prior.probs, minlength=uv.size)
    keep = probs > 0
    return _real_mi(uv[keep], probs[keep], a, b, integ)


def mimo_gpme_mi_batch(true, post, H, W, Wt, integ=Integrator()):
    """``I(x; <x~>)`` in nats for a batch of MIMO channels ``H`` (S, N, M)."""
    H = np.asarray(H, dtype=complex)
    W = hermitian(np.asarray(W, dtype=complex))
    Wt = hermitian(np.asarray(Wt, dtype=complex))
    if H.ndim == 2:
        H = H[None]
    S, N, M = H.shape
    W = np.broadcast_to(W, (S, N, N))
    Wt = np.broadcast_to(Wt, (S, N, N))
    T = np.conj(np.swapaxes(H, -1, -2)) @ herm_inv(Wt)
    if M == 1:
        a = np.real(np.einsum("smn,snk->s", T, H))
        b = np.real(np.einsum("smn,snk,skm->s", T, W, np.conj(np.swapaxes(T, -1, -2))))
        return simo_gpme_mi_batch(true.per_antenna[0], post.per_antenna[0], a, b, integ)
    basis = _span_basis(post)
    if basis.shape[1] == 0:
        return np.zeros(S)
    Kmat = basis.T @ _realify_matrix(T)
    Hr, Wr = _realify_matrix(H), 0.5 * _realify_matrix(W).real
    out = np.empty(S)
    for s in range(S):
        U, sv, Vt = np.linalg.svd(Kmat[s])
        r = int(np.sum(sv > sv[0] * 1e-10)) if sv.size else 0
        Vr = Vt[:r].T
        F = Vr.T @ Hr[s]
        Sig = Vr.T @ Wr[s] @ Vr
        if true.all_gaussian:
            Sx = 0.5 * np.diag(np.concatenate([true.powers(), true.powers()]))
            out[s] = _real_gaussian_mi(Sx, F, Sig)
        else:
            Xr, px = _real_prior_points(true)
            out[s] = _real_discrete_mi(Xr, px, F[None], Sig[None], integ)[0][0]
    return out


# ---------------------------------------------------------------------------
# single-channel public API


def _budget(name, fine, coarse_or_err, integ, scale):
    err = np.max(np.abs(coarse_or_err))
    if integ.target_rel_err is not None and err > integ.target_rel_err * max(scale, 1e-300):
        raise IntegrationBudgetExceeded(
            f"{name}: error estimate {err:.3e} exceeds target {integ.target_rel_err:g} x {scale:.3e}")
    return err


def _error_estimate(fn, integ, index):
    """Run ``fn(integ)`` and return (values, error estimate) for the given output index."""
    fine = fn(integ)
    if integ.is_random:
        return fine, np.abs(fine[index + 3])
    coarse = fn(integ.coarse())
    return fine, np.abs(fine[index] - coarse[index])


def gpme_simo(ch, y):
    """Postulated posterior mean of ``x`` given observations ``y`` (shape (N,) or (n, N))."""
    y = np.asarray(y, dtype=complex)
    if y.shape[-1] != ch.N:
        raise DimMismatch(f"observation has length {y.shape[-1]}, channel has N = {ch.N}")
    Rti = herm_inv(ch.Rt)
    post = ch.post_prior
    if post.is_gaussian:
        a = np.real(np.vdot(ch.h, Rti @ ch.h))
        z = y @ (Rti @ ch.h).conj()
        return post.P * z / (1.0 + post.P * a)
    pts, probs = post.points, post.probs
    r = y[..., None, :] - pts[:, None] * ch.h
    quad = np.real(np.einsum("...kn,nm,...km->...k", np.conj(r), Rti, r))
    with np.errstate(divide="ignore"):
        ell = np.log(probs) - quad
    ell = ell - ell.max(axis=-1, keepdims=True)
    e = np.exp(ell)
    return (e @ pts) / e.sum(axis=-1)


def gpme_mimo(ch, y, enum_cap=ENUM_CAP):
    """Postulated posterior mean of the symbol vector given ``y`` (shape (N,) or (n, N))."""
    y = np.asarray(y, dtype=complex)
    if y.shape[-1] != ch.N:
        raise DimMismatch(f"observation has length {y.shape[-1]}, channel has N = {ch.N}")
    post = ch.post_prior
    Wti = herm_inv(ch.Wt)
    if post.all_gaussian:
        G = hermitian(ch.H.conj().T @ Wti @ ch.H)
        C = herm_inv(np.diag(1.0 / post.powers()) + G)
        z = y @ (Wti @ ch.H).conj()
        return z @ C.T
    if not post.all_discrete:
        raise InvalidPrior("postulated priors must be all Gaussian or all finite per user")
    if post.product_size() > enum_cap:
        raise EnumerationTooLarge(
            f"product constellation has {post.product_size()} points, above the cap {enum_cap}")
    Xt, logp = post.enumerate()
    r = y[..., None, :] - Xt @ ch.H.T
    quad = np.real(np.einsum("...kn,nm,...km->...k", np.conj(r), Wti, r))
    ell = logp - quad
    ell = ell - ell.max(axis=-1, keepdims=True)
    e = np.exp(ell)
    return (e @ Xt) / e.sum(axis=-1)[..., None]


def moments_simo(ch, integ=Integrator()):
    """Error ``E`` and postulated posterior variance ``V`` of the GPME on ``ch``."""
    a, b, _ = ch.stats()

    def fn(rule):
        return [r[0] for r in simo_eval(ch.true_prior, ch.post_prior, a, b, rule)]

    fine, eE = _error_estimate(fn, integ, 0)
    eV = np.abs(fine[4]) if integ.is_random else np.abs(fine[1] - fn(integ.coarse())[1])
    scale = max(ch.true_prior.P, 1e-300)
    _budget("moments_simo", fine[0], eE, integ, scale)
    _budget("moments_simo", fine[1], eV, integ, scale)
    return Moments(float(fine[0]), float(fine[1]), float(eE), float(eV))


def moments_mimo(ch, integ=Integrator()):
    """Error covariance ``E`` and posterior covariance ``V`` (M x M) of the GPME on ``ch``."""
    G, B = ch.stats()
    res = mimo_eval(ch.true_prior, ch.post_prior, G, B, integ)
    E, V = res[0][0], res[1][0]
    if ch.M == 1 and not integ.is_random:
        coarse = mimo_eval(ch.true_prior, ch.post_prior, G, B, integ.coarse())
        eE, eV = np.abs(E - coarse[0][0]), np.abs(V - coarse[1][0])
    else:
        eE, eV = res[3][0], res[4][0]
    scale = max(float(np.sum(ch.true_prior.powers())), 1e-300)
    _budget("moments_mimo", E, eE, integ, scale)
    _budget("moments_mimo", V, eV, integ, scale)
    return Moments(E, V, eE, eV)


def cap_simo(ch, integ=Integrator()):
    """``I(x; y)`` in bits for the true channel (true prior and ``R`` only)."""
    _, _, snr = ch.stats()

    def fn(rule):
        return simo_eval(ch.true_prior, ch.true_prior, snr, snr, rule)

    fine, err = _error_estimate(fn, integ, 2)
    val = float(fine[2][0]) / LN2
    _budget("cap_simo", val, err / LN2, integ, max(abs(val), 1e-6))
    return val


def cap_mimo(ch, integ=Integrator()):
    """``I(x; y)`` in bits for the true MIMO channel."""
    val, err = mi_linear_gaussian(ch.true_prior, ch.H, ch.W, integ)
    val = float(val[0]) / LN2
    _budget("cap_mimo", val, float(err[0]) / LN2, integ, max(abs(val), 1e-6))
    return val


def cap_tilde_simo(ch, integ=Integrator()):
    """Mismatched cross-information in bits (equals :func:`cap_simo` when matched)."""
    a, b, _ = ch.stats()

    def fn(rule):
        return simo_eval(ch.true_prior, ch.post_prior, a, b, rule)

    fine, err = _error_estimate(fn, integ, 2)
    val = float(fine[2][0]) / LN2
    _budget("cap_tilde_simo", val, err / LN2, integ, max(abs(val), 1e-6))
    return val


def cap_tilde_mimo(ch, integ=Integrator()):
    """Vector version of :func:`cap_tilde_simo`, in bits."""
    G, B = ch.stats()
    res = mimo_eval(ch.true_prior, ch.post_prior, G, B, integ)
    val = float(res[2][0]) / LN2
    _budget("cap_tilde_mimo", val, float(res[5][0]) / LN2, integ, max(abs(val), 1e-6))
    return val


def plugin_mi(labels, feats, bins):
    """Plug-in information (bits) between integer ``labels`` and binned continuous ``feats``.

    Each feature column gets ``bins`` equal-mass bins.
    """
    feats = np.asarray(feats, dtype=float).reshape(len(labels), -1)
    codes = np.zeros(len(labels), dtype=np.int64)
    for col in feats.T:
        edges = np.unique(np.quantile(col, np.linspace(0.0, 1.0, bins + 1)[1:-1]))
        codes = codes * (bins + 1) + np.searchsorted(edges, col, side="right")
    _, xc = np.unique(labels, return_inverse=True)
    _, yc = np.unique(codes, return_inverse=True)
    n = len(labels)
    joint = np.bincount(xc * (yc.max() + 1) + yc)
    nz = np.nonzero(joint)[0]
    cx = np.bincount(xc)[nz // (yc.max() + 1)]
    cy = np.bincount(yc)[nz % (yc.max() + 1)]
    c = joint[nz]
    return float(np.sum(c / n * np.log2(c * n / (cx * cy))))


def _histogram_labels(prior, rng, n, bins):
    if prior.is_gaussian:
        x = pr.sample(prior, rng, n)
        lab = np.zeros(n, dtype=np.int64)
        for col in (x.real, x.imag):
            edges = np.unique(np.quantile(col, np.linspace(0.0, 1.0, bins + 1)[1:-1]))
            lab = lab * (bins + 1) + np.searchsorted(edges, col, side="right")
        return x, lab
    idx = rng.choice(prior.size, size=n, p=prior.probs)
    return prior.points[idx], idx


def _histogram_simo(ch, est):
    a, b, _ = ch.stats()
    rng = np.random.default_rng(est.seed)
    results = []
    for bins in (est.bins, max(est.bins // 2, 2)):
        rng = np.random.default_rng(est.seed)
        x, lab = _histogram_labels(ch.true_prior, rng, est.samples, bins)
        u = (rng.standard_normal(est.samples) + 1j * rng.standard_normal(est.samples)) / np.sqrt(2.0)
        z = a * x + np.sqrt(b) * u
        m, _, _ = _posterior(z, np.full(z.shape, a), _law(ch.post_prior, "complex"), 1.0)
        results.append(plugin_mi(lab, np.column_stack([m.real, m.imag]), bins))
    drift = abs(results[0] - results[1])
    if drift > est.drift_tol:
        raise EstimatorUnreliable(
            f"plug-in estimate moved by {drift:.3g} bits when halving the bins (tolerance {est.drift_tol:g})")
    return results[0]


def cap_gpme_simo(ch, integ=Integrator(), mi_estimator=MIEstimator()):
    """``I(x; <x~>)`` in bits: the information left after the GPME front end."""
    if mi_estimator.method == "histogram":
        return _histogram_simo(ch, mi_estimator)
    a, b, _ = ch.stats()
    val = float(simo_gpme_mi_batch(ch.true_prior, ch.post_prior, a, b, integ)[0]) / LN2
    if not integ.is_random and integ.target_rel_err is not None:
        coarse = float(simo_gpme_mi_batch(ch.true_prior, ch.post_prior, a, b, integ.coarse())[0]) / LN2
        _budget("cap_gpme_simo", val, abs(val - coarse), integ, max(abs(val), 1e-6))
    return val


def cap_gpme_mimo(ch, integ=Integrator(), mi_estimator=MIEstimator()):
    """Vector version of :func:`cap_gpme_simo`, in bits.

    The histogram estimator bins each antenna separately and returns the sum
    of per-antenna informations, which matches ``I(x; <x~>)`` only when the
    estimate factorises across antennas.
    """
    if mi_estimator.method == "histogram":
        if ch.M == 1:
            return _histogram_simo(ch.column(0), mi_estimator)
        return _histogram_mimo(ch, mi_estimator)
    return float(mimo_gpme_mi_batch(ch.true_prior, ch.post_prior, ch.H, ch.W, ch.Wt, integ)[0]) / LN2


def _histogram_mimo(ch, est):
    results = []
    for bins in (est.bins, max(est.bins // 2, 2)):
        rng = np.random.default_rng(est.seed)
        xs, labs = zip(*[_histogram_labels(p, rng, est.samples, bins)
                         for p in ch.true_prior.per_antenna])
        x = np.stack(xs, axis=-1)
        Wh = _psd_sqrt(ch.W)
        u = (rng.standard_normal((est.samples, ch.N))
             + 1j * rng.standard_normal((est.samples, ch.N))) / np.sqrt(2.0)
        y = x @ ch.H.T + u @ Wh.T
        m = gpme_mimo(ch, y)
        results.append(sum(plugin_mi(labs[k], np.column_stack([m[:, k].real, m[:, k].imag]), bins)
                           for k in range(ch.M)))
    drift = abs(results[0] - results[1])
    if drift > est.drift_tol:
        raise EstimatorUnreliable(
            f"plug-in estimate moved by {drift:.3g} bits when halving the bins (tolerance {est.drift_tol:g})")
    return results[0]


def joint_moment_simo(ch, exps, integ=Integrator()):
    """``(value, stderr)`` of ``E[Re(x)^i Im(x)^k Re(m)^j Im(m)^l]`` on one SIMO channel."""
    a, b, _ = ch.stats()
    v, s = simo_joint_moment_batch(ch.true_prior, ch.post_prior, a, b, exps, integ)
    return float(v[0]), float(s[0])


def joint_moment_mimo(ch, exps, integ=Integrator()):
    """``(value, stderr)`` of a product joint moment over antennas; ``exps`` shape (M, 4)."""
    G, B = ch.stats()
    v, s = mimo_joint_moment_batch(ch.true_prior, ch.post_prior, G, B, exps, integ)
    return float(np.real(v[0])), float(np.real(s[0]))
