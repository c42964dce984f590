"""Integration rules for Gaussian expectations.

Scalar channels need expectations over one complex (or one real) Gaussian
variable; those use Gauss-Hermite rules. Vector channels integrate over
``2M`` real dimensions and use Monte Carlo or scrambled Sobol points.
Every rule is a pair ``(nodes, weights)`` with weights summing to one, and
random rules are re-generated from ``seed`` on each call so repeated
evaluations reuse the same points.
"""

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import ndtri
from scipy.stats import qmc

METHODS = ("gauss-hermite", "monte-carlo", "quasi-monte-carlo")


@dataclass(frozen=True)
class Integrator:
    """How expectations over the noise (and Gaussian symbols) are evaluated.

    Attributes
    ----------
    method : {'gauss-hermite', 'monte-carlo', 'quasi-monte-carlo'}
    order : int
        Gauss-Hermite nodes per real dimension.
    samples : int
        Sample count for the random rules, and for vector channels when
        ``method`` is Gauss-Hermite.
    seed : int
    target_rel_err : float or None
        When set, single-channel evaluations raise
        :class:`~mimocdma.errors.IntegrationBudgetExceeded` if their error
        estimate exceeds this fraction of the quantity's scale.
    """

    method: str = "gauss-hermite"
    order: int = 64
    samples: int = 4096
    seed: int = 0
    target_rel_err: float = None

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown integration method {self.method!r}; choose from {METHODS}")
        if self.order < 2 or self.samples < 1:
            raise ValueError("need order >= 2 and samples >= 1")

    @property
    def is_random(self):
        return self.method != "gauss-hermite"

    def coarse(self):
        """A cheaper rule of the same family, used for a posteriori error estimates."""
        if self.is_random:
            return self
        return Integrator(self.method, max(self.order // 2, 2), self.samples, self.seed,
                          self.target_rel_err)

    def vector_rule(self):
        """Rule used for 2M-dimensional expectations (M >= 2)."""
        if self.is_random:
            return self
        return Integrator("quasi-monte-carlo", self.order, self.samples, self.seed,
                          self.target_rel_err)


@lru_cache(maxsize=64)
def _hermite_e(order):
    t, w = np.polynomial.hermite_e.hermegauss(order)
    w = w / w.sum()
    t.setflags(write=False)
    w.setflags(write=False)
    return t, w


def std_normal_rule(order):
    """Gauss-Hermite rule for ``N(0, 1)``."""
    return _hermite_e(int(order))


def _standard_normals(integ, n, dim):
    if integ.method == "quasi-monte-carlo":
        m = int(np.ceil(np.log2(max(n, 2))))
        pts = qmc.Sobol(d=dim, scramble=True, seed=integ.seed).random_base2(m)[:n]
        return ndtri(np.clip(pts, 1e-16, 1 - 1e-16))
    rng = np.random.default_rng(integ.seed)
    return rng.standard_normal((n, dim))


def real_noise_rule(integ):
    """Nodes for ``N(0, 1/2)``: one quadrature component of ``CN(0, 1)``."""
    if integ.is_random:
        t = _standard_normals(integ, integ.samples, 1)[:, 0]
        return t / np.sqrt(2.0), np.full(t.size, 1.0 / t.size)
    t, w = std_normal_rule(integ.order)
    return t / np.sqrt(2.0), w


def complex_noise_rule(integ):
    """Nodes for ``CN(0, 1)`` (tensor Gauss-Hermite or random points)."""
    if integ.is_random:
        t = _standard_normals(integ, integ.samples, 2)
        u = (t[:, 0] + 1j * t[:, 1]) / np.sqrt(2.0)
        return u, np.full(u.size, 1.0 / u.size)
    t, w = std_normal_rule(integ.order)
    u = (t[:, None] + 1j * t[None, :]).ravel() / np.sqrt(2.0)
    return u, np.outer(w, w).ravel()


def complex_vector_samples(integ, dim, n=None):
    """``n`` draws of ``CN(0, I_dim)``, shape ``(n, dim)``."""
    rule = integ.vector_rule()
    n = rule.samples if n is None else n
    t = _standard_normals(rule, n, 2 * dim)
    return (t[:, :dim] + 1j * t[:, dim:]) / np.sqrt(2.0)
