"""Symbol laws for the true and the postulated transmitter models."""

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidPower, InvalidPrior

PROB_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class Prior:
    """Per-antenna symbol law.

    Either circularly-symmetric Gaussian with power ``P`` or a finite
    constellation given by ``points`` and ``probs``. Use :func:`gaussian`,
    :func:`qpsk` or :func:`discrete` rather than the raw constructor.
    """

    kind: str
    P: float = 0.0
    points: np.ndarray = field(default=None, repr=False)
    probs: np.ndarray = field(default=None, repr=False)
    name: str = ""

    def __post_init__(self):
        if self.kind == "gaussian":
            if not self.P > 0:
                raise InvalidPower(f"Gaussian prior needs P > 0, got {self.P}")
        elif self.kind == "discrete":
            pts = np.asarray(self.points, dtype=complex).ravel()
            pr = np.asarray(self.probs, dtype=float).ravel()
            if pts.size == 0 or pts.shape != pr.shape:
                raise InvalidPrior("need at least one point and one probability per point")
            if np.any(pr < 0) or abs(pr.sum() - 1.0) > PROB_TOL:
                raise InvalidPrior(f"probabilities must be non-negative and sum to 1, got {pr.sum()!r}")
            pts.setflags(write=False)
            pr.setflags(write=False)
            object.__setattr__(self, "points", pts)
            object.__setattr__(self, "probs", pr)
            object.__setattr__(self, "P", float(np.sum(pr * np.abs(pts) ** 2)))
        else:
            raise InvalidPrior(f"unknown prior kind {self.kind!r}")

    @property
    def is_gaussian(self):
        return self.kind == "gaussian"

    @property
    def size(self):
        return 0 if self.is_gaussian else self.points.size

    @property
    def mean(self):
        return 0j if self.is_gaussian else complex(np.sum(self.probs * self.points))

    def same_law(self, other):
        if self.kind != other.kind:
            return False
        if self.is_gaussian:
            return self.P == other.P
        return (self.points.shape == other.points.shape
                and np.array_equal(self.points, other.points)
                and np.array_equal(self.probs, other.probs))

    def key(self):
        """Hashable identity of the law (used to batch antennas sharing a prior)."""
        if self.is_gaussian:
            return ("gaussian", self.P)
        return ("discrete", self.points.tobytes(), self.probs.tobytes())

    def __repr__(self):
        if self.is_gaussian:
            return f"Prior(gaussian, P={self.P:g})"
        label = self.name or f"{self.size}-point"
        return f"Prior({label}, P={self.P:g})"


def gaussian(P):
    return Prior("gaussian", P=float(P), name="gaussian")


def discrete(points, probs=None, name=""):
    points = np.asarray(points, dtype=complex).ravel()
    if probs is None:
        probs = np.full(points.size, 1.0 / max(points.size, 1))
    return Prior("discrete", points=points, probs=probs, name=name)


def qpsk(P):
    """Equiprobable square QPSK ``(+-1 +- j) sqrt(P/2)``, power ``P``."""
    if not P > 0:
        raise InvalidPower(f"QPSK needs P > 0, got {P}")
    s = np.sqrt(P / 2.0)
    pts = s * np.array([1 + 1j, 1 - 1j, -1 + 1j, -1 - 1j])
    return discrete(pts, np.full(4, 0.25), name="qpsk")


def bpsk(P):
    if not P > 0:
        raise InvalidPower(f"BPSK needs P > 0, got {P}")
    s = np.sqrt(P)
    return discrete([s, -s], [0.5, 0.5], name="bpsk")


def power(prior):
    """Average symbol energy ``E[|x|^2]``."""
    return float(prior.P)


def sample(prior, rng, n):
    """Draw ``n`` i.i.d. symbols from ``prior`` using the generator ``rng``."""
    n = int(n)
    if n < 0:
        raise ValueError("n must be non-negative")
    if prior.is_gaussian:
        s = np.sqrt(prior.P / 2.0)
        return s * (rng.standard_normal(n) + 1j * rng.standard_normal(n))
    idx = rng.choice(prior.points.size, size=n, p=prior.probs)
    return prior.points[idx]


@dataclass(frozen=True)
class RealLaw:
    """Law of one real quadrature component (used by the separable fast paths)."""

    kind: str
    var: float = 0.0
    points: tuple = ()
    probs: tuple = ()


def split_components(prior):
    """Factor ``prior`` into independent real and imaginary laws, or return ``None``.

    Circular Gaussians always factor. A constellation factors when it is the
    full product grid of its real and imaginary projections with product
    probabilities (square QAM and QPSK do, PSK-8 does not).
    """
    if prior.is_gaussian:
        half = RealLaw("gaussian", var=prior.P / 2.0)
        return half, half
    pts, pr = prior.points, prior.probs
    re_vals, re_idx = np.unique(np.round(pts.real, 12), return_inverse=True)
    im_vals, im_idx = np.unique(np.round(pts.imag, 12), return_inverse=True)
    if re_vals.size * im_vals.size != pts.size:
        return None
    p_re = np.bincount(re_idx, weights=pr, minlength=re_vals.size)
    p_im = np.bincount(im_idx, weights=pr, minlength=im_vals.size)
    grid = np.zeros((re_vals.size, im_vals.size))
    grid[re_idx, im_idx] = pr
    if np.max(np.abs(grid - np.outer(p_re, p_im))) > 1e-12:
        return None
    keep_r, keep_i = p_re > 0, p_im > 0
    return (RealLaw("discrete", points=tuple(re_vals[keep_r]), probs=tuple(p_re[keep_r])),
            RealLaw("discrete", points=tuple(im_vals[keep_i]), probs=tuple(p_im[keep_i])))


def spans_plane(prior):
    """True when the support is not contained in a line (affine span is all of C)."""
    if prior.is_gaussian:
        return True
    pts = prior.points[prior.probs > 0]
    if pts.size < 3:
        return False
    d = pts[1:] - pts[0]
    return np.linalg.matrix_rank(np.column_stack([d.real, d.imag]), tol=1e-12) == 2


@dataclass(frozen=True)
class VectorPrior:
    """Law of one user's symbol vector: independent per-antenna laws."""

    per_antenna: tuple
    independent: bool = True

    def __post_init__(self):
        per = tuple(self.per_antenna)
        if len(per) < 1:
            raise InvalidPrior("a vector prior needs at least one antenna")
        if not self.independent:
            raise InvalidPrior("only antenna-independent vector priors are supported")
        object.__setattr__(self, "per_antenna", per)

    @classmethod
    def iid(cls, prior, M):
        return cls(tuple([prior] * int(M)))

    @property
    def M(self):
        return len(self.per_antenna)

    @property
    def all_gaussian(self):
        return all(p.is_gaussian for p in self.per_antenna)

    @property
    def all_discrete(self):
        return not any(p.is_gaussian for p in self.per_antenna)

    def powers(self):
        return np.array([p.P for p in self.per_antenna])

    def second_moment(self):
        """``E[x x^H]`` for independent antennas."""
        mu = np.array([p.mean for p in self.per_antenna])
        s = np.outer(mu, mu.conj())
        s[np.diag_indices_from(s)] = self.powers()
        return s

    def same_law(self, other):
        return self.M == other.M and all(
            a.same_law(b) for a, b in zip(self.per_antenna, other.per_antenna))

    def product_size(self):
        return int(np.prod([p.size for p in self.per_antenna]))

    def enumerate(self):
        """All product-constellation vectors and their log-probabilities.

        Returns ``(X, logp)`` with ``X`` of shape ``(prod |X_m|, M)``.
        """
        if not self.all_discrete:
            raise InvalidPrior("enumeration needs finite constellations on every antenna")
        grids = np.meshgrid(*[p.points for p in self.per_antenna], indexing="ij")
        pgrids = np.meshgrid(*[p.probs for p in self.per_antenna], indexing="ij")
        X = np.stack([g.ravel() for g in grids], axis=-1)
        with np.errstate(divide="ignore"):
            logp = np.sum([np.log(g.ravel()) for g in pgrids], axis=0)
        return X, logp

    def sample(self, rng, n):
        """``n`` draws, shape ``(n, M)``."""
        return np.stack([sample(p, rng, n) for p in self.per_antenna], axis=-1)
