"""Latent-variable distribution families for frailty and effect modification.

Four families are supported, each with an exact Laplace transform
L(c) = E[exp(-c X)] and its first two derivatives, a CDF, a quantile
function, a sampler, and a mean/variance reparameterization:

* ``Gamma(k, theta)`` -- shape/scale gamma.
* ``InverseGaussian(mu, lam)`` -- mean/shape inverse Gaussian.
* ``CompoundPoisson(rho, eta, nu)`` -- sum of N ~ Poisson(rho) i.i.d.
  Gamma(eta, nu) jumps, with an atom at 0 of mass exp(-rho).
* ``BHN(p1, mu1, p2, mu2)`` -- three-atom benefit/harm/neutral law taking
  value mu1 < 1 with probability p1, mu2 >= 1 with probability p2 and 1
  otherwise.

``Degenerate(value)`` is provided for point masses (no heterogeneity).

All transform/CDF/quantile methods are pure and accept scalars or numpy
arrays; samplers consume only the generator passed to them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import special

__all__ = [
    "LatentDistribution",
    "Gamma",
    "InverseGaussian",
    "CompoundPoisson",
    "BHN",
    "Degenerate",
    "InfeasibleMomentsError",
    "from_mean_var",
    "bhn_from_moments",
    "FAMILY_NAMES",
]

_POISSON_RHO_CAP = 200.0  # inversion table stays small for every case we ship
_QUANTILE_PROB_TOL = 1e-10


class InfeasibleMomentsError(ValueError):
    """Requested moment combination cannot be realized by the family."""


def _load(c):
    c = np.asarray(c, dtype=float)
    if np.any(c < 0):
        raise ValueError("Laplace argument must be nonnegative")
    return c


def _maybe_scalar(x, template):
    if np.ndim(template) == 0:
        return float(x)
    return x


def _check_prob(u):
    u = np.asarray(u, dtype=float)
    if np.any((u <= 0.0) | (u >= 1.0)):
        raise ValueError("quantile argument must lie strictly inside (0, 1)")
    return u


def _cdf_table(cdf, table_size=8192):
    """Tabulate a continuous CDF on [0, hi] with hi found by doubling.

    The grid stops once the CDF saturates (to within 1e-15 of its
    reachable maximum), which bounds every bracket the inverter needs.
    """
    hi = 1.0
    for _ in range(400):
        if float(cdf(np.array([hi]))[0]) >= 1.0 - 1e-15:
            break
        hi *= 2.0
    xs = np.linspace(0.0, hi, table_size + 1)
    fs = np.maximum.accumulate(cdf(xs))  # guard monotonicity against roundoff
    return xs, fs


def _invert_cdf(cdf, u, table, pdf=None, newton_steps=2):
    """Generalized inverse of a continuous CDF on [0, inf).

    Bracket via the precomputed table, warm-start by inverse-linear
    interpolation, polish with Newton when a density is available, and
    verify to absolute tolerance on the probability scale (bisection
    fallback for any stragglers).
    """
    u = np.atleast_1d(np.asarray(u, dtype=float))
    xs, fs = table
    # targets beyond the tabulated maximum differ from it by < 1e-12,
    # inside the probability tolerance
    uu = np.minimum(u, fs[-1])
    idx = np.clip(np.searchsorted(fs, uu, side="left"), 1, len(xs) - 1)
    lo_x, hi_x = xs[idx - 1], xs[idx]
    f_lo, f_hi = fs[idx - 1], fs[idx]
    width = np.where(f_hi > f_lo, f_hi - f_lo, 1.0)
    x = lo_x + (uu - f_lo) * (hi_x - lo_x) / width

    if pdf is not None:
        for _ in range(newton_steps):
            dens = pdf(x)
            step = np.where(dens > 0, (cdf(x) - uu) / np.where(dens > 0, dens, 1.0), 0.0)
            x = np.clip(x - step, lo_x, hi_x)

    err = np.abs(cdf(x) - uu)
    bad = np.flatnonzero(err > _QUANTILE_PROB_TOL)
    for i in bad:
        a, b = lo_x[i], hi_x[i]
        xi = x[i]
        for _ in range(200):
            fm = float(cdf(np.array([xi]))[0])
            if abs(fm - uu[i]) <= _QUANTILE_PROB_TOL:
                break
            if fm < uu[i]:
                a = xi
            else:
                b = xi
            xi = 0.5 * (a + b)
        x[i] = xi
    return x


class LatentDistribution:
    """Base interface shared by all latent-variable laws."""

    family = "base"

    # -- transforms ----------------------------------------------------

    def laplace(self, c):
        """E[exp(-c X)] for c >= 0; lies in (0, 1]."""
        raise NotImplementedError

    def laplace_d1(self, c):
        """First derivative of :meth:`laplace`; -laplace_d1(0) is the mean."""
        raise NotImplementedError

    def laplace_d2(self, c):
        """Second derivative of :meth:`laplace`; laplace_d2(0) is E[X^2]."""
        raise NotImplementedError

    # -- moments ---------------------------------------------------------

    def mean(self) -> float:
        raise NotImplementedError

    def variance(self) -> float:
        raise NotImplementedError

    # -- law -------------------------------------------------------------

    def cdf(self, x):
        raise NotImplementedError

    def quantile(self, u):
        """Generalized inverse CDF, monotone nondecreasing on (0, 1)."""
        raise NotImplementedError

    def sample(self, rng, size=None):
        """i.i.d. draws using ``rng`` (numpy Generator) only."""
        raise NotImplementedError

    def pdf(self, x):
        """Density on (0, inf) where one exists (continuous families)."""
        raise NotImplementedError(f"{self.family} has no density")

    # -- serialization ----------------------------------------------------

    def config_params(self) -> dict:
        """Named parameters as they appear in config fragments."""
        raise NotImplementedError

    @property
    def atoms(self):
        """(probability, value) pairs for purely atomic families, else None."""
        return None


@dataclass(frozen=True)
class Gamma(LatentDistribution):
    """Gamma law with shape ``k`` and scale ``theta``: L(c) = (1 + theta c)^-k."""

    k: float
    theta: float
    family = "gamma"

    def __post_init__(self):
        if not (self.k > 0 and self.theta > 0):
            raise ValueError("gamma requires k > 0 and theta > 0")

    def laplace(self, c):
        c = _load(c)
        return _maybe_scalar(np.exp(-self.k * np.log1p(self.theta * c)), c)

    def laplace_d1(self, c):
        c = _load(c)
        out = -(self.theta * self.k / (self.theta * c + 1.0)) * np.exp(
            -self.k * np.log1p(self.theta * c)
        )
        return _maybe_scalar(out, c)

    def laplace_d2(self, c):
        c = _load(c)
        out = (
            self.theta**2
            * self.k
            * (self.k + 1.0)
            / (self.theta * c + 1.0) ** 2
            * np.exp(-self.k * np.log1p(self.theta * c))
        )
        return _maybe_scalar(out, c)

    def mean(self):
        return self.k * self.theta

    def variance(self):
        return self.k * self.theta**2

    def cdf(self, x):
        x = np.asarray(x, dtype=float)
        return _maybe_scalar(special.gammainc(self.k, np.maximum(x, 0.0) / self.theta), x)

    def pdf(self, x):
        x = np.asarray(x, dtype=float)
        with np.errstate(divide="ignore"):
            logp = (
                (self.k - 1.0) * np.log(x)
                - x / self.theta
                - special.gammaln(self.k)
                - self.k * math.log(self.theta)
            )
        out = np.where(x > 0, np.exp(logp), 0.0)
        return _maybe_scalar(out, x)

    def quantile(self, u):
        u = _check_prob(u)
        return _maybe_scalar(special.gammaincinv(self.k, u) * self.theta, u)

    def sample(self, rng, size=None):
        return rng.gamma(self.k, self.theta, size=size)

    def config_params(self):
        return {"k": self.k, "theta": self.theta}


@dataclass(frozen=True)
class InverseGaussian(LatentDistribution):
    """Inverse Gaussian with mean ``mu`` and shape ``lam``."""

    mu: float
    lam: float
    family = "invgauss"

    def __post_init__(self):
        if not (self.mu > 0 and self.lam > 0):
            raise ValueError("invgauss requires mu > 0 and lam > 0")

    def laplace(self, c):
        c = _load(c)
        root = np.sqrt(1.0 + 2.0 * self.mu**2 * c / self.lam)
        return _maybe_scalar(np.exp((self.lam / self.mu) * (1.0 - root)), c)

    def laplace_d1(self, c):
        c = _load(c)
        root = np.sqrt(1.0 + 2.0 * self.mu**2 * c / self.lam)
        out = -(self.mu / root) * np.exp((self.lam / self.mu) * (1.0 - root))
        return _maybe_scalar(out, c)

    def laplace_d2(self, c):
        # d/dc of -mu (1+Bc)^{-1/2} L with B = 2 mu^2 / lam gives
        # (mu^2/(1+Bc) + (mu^3/lam) (1+Bc)^{-3/2}) L.
        c = _load(c)
        w = 1.0 + 2.0 * self.mu**2 * c / self.lam
        out = (self.mu**2 / w + (self.mu**3 / self.lam) * w**-1.5) * np.exp(
            (self.lam / self.mu) * (1.0 - np.sqrt(w))
        )
        return _maybe_scalar(out, c)

    def mean(self):
        return self.mu

    def variance(self):
        return self.mu**3 / self.lam

    def cdf(self, x):
        x = np.asarray(x, dtype=float)
        xp = np.where(x > 0, x, np.nan)
        a = np.sqrt(self.lam / xp)
        term1 = special.ndtr(a * (xp / self.mu - 1.0))
        # exp(2 lam/mu) * Phi(-...) computed in log space to dodge overflow
        term2 = np.exp(
            2.0 * self.lam / self.mu + special.log_ndtr(-a * (xp / self.mu + 1.0))
        )
        out = np.where(x > 0, np.clip(term1 + term2, 0.0, 1.0), 0.0)
        return _maybe_scalar(out, x)

    def pdf(self, x):
        x = np.asarray(x, dtype=float)
        xp = np.where(x > 0, x, np.nan)
        out = np.sqrt(self.lam / (2.0 * np.pi * xp**3)) * np.exp(
            -self.lam * (xp - self.mu) ** 2 / (2.0 * self.mu**2 * xp)
        )
        return _maybe_scalar(np.where(x > 0, out, 0.0), x)

    def quantile(self, u):
        u = _check_prob(u)
        out = _invert_cdf(self.cdf, u, _spec_cdf_table(self), pdf=self.pdf)
        return _maybe_scalar(out, u)

    def sample(self, rng, size=None):
        return rng.wald(self.mu, self.lam, size=size)

    def config_params(self):
        return {"mu": self.mu, "lam": self.lam}


def _poisson_cdf_table(rho):
    """Cumulative Poisson(rho) probabilities up to float saturation."""
    if rho > _POISSON_RHO_CAP:
        raise ValueError(f"Poisson rate {rho} exceeds inversion cap {_POISSON_RHO_CAP}")
    n_max = int(math.ceil(rho + 12.0 * math.sqrt(rho) + 50.0))
    pmf = np.empty(n_max + 1)
    pmf[0] = math.exp(-rho)
    for n in range(1, n_max + 1):
        pmf[n] = pmf[n - 1] * rho / n
    return np.minimum(np.cumsum(pmf), 1.0)


@dataclass(frozen=True)
class CompoundPoisson(LatentDistribution):
    """Compound Poisson: Gamma(N eta, nu) given N ~ Poisson(rho), atom at 0."""

    rho: float
    eta: float
    nu: float
    family = "cpoisson"

    def __post_init__(self):
        if not (self.rho > 0 and self.eta > 0 and self.nu > 0):
            raise ValueError("cpoisson requires rho, eta, nu > 0")

    def laplace(self, c):
        c = _load(c)
        out = np.exp(self.rho * ((1.0 + self.nu * c) ** -self.eta - 1.0))
        return _maybe_scalar(out, c)

    def laplace_d1(self, c):
        c = _load(c)
        w = 1.0 + self.nu * c
        out = (
            -self.rho
            * self.eta
            * self.nu
            * w ** -(self.eta + 1.0)
            * np.exp(self.rho * (w**-self.eta - 1.0))
        )
        return _maybe_scalar(out, c)

    def laplace_d2(self, c):
        c = _load(c)
        w = 1.0 + self.nu * c
        out = (
            self.eta
            * self.nu**2
            * self.rho
            * w ** -(self.eta + 2.0)
            * (self.eta * self.rho * w**-self.eta + self.eta + 1.0)
            * np.exp(self.rho * (w**-self.eta - 1.0))
        )
        return _maybe_scalar(out, c)

    def mean(self):
        return self.rho * self.eta * self.nu

    def variance(self):
        return self.rho * self.eta * self.nu**2 * (1.0 + self.eta)

    @property
    def zero_mass(self) -> float:
        return math.exp(-self.rho)

    def _series_weights(self, tail=1e-12):
        cdf = _poisson_cdf_table(self.rho)
        n_stop = int(np.searchsorted(cdf, 1.0 - tail)) + 1
        pmf = np.diff(cdf[: n_stop + 1], prepend=0.0)
        pmf[0] = math.exp(-self.rho)
        return pmf  # index n = P(N = n)

    def cdf(self, x, _chunk=262144):
        x = np.asarray(x, dtype=float)
        pmf = self._series_weights()
        ns = np.arange(1, len(pmf))
        flat = np.atleast_1d(x).ravel()
        out = np.empty_like(flat)
        for start in range(0, flat.size, max(1, _chunk // len(ns))):
            blk = flat[start : start + max(1, _chunk // len(ns))]
            g = special.gammainc(
                ns[:, None] * self.eta, np.maximum(blk, 0.0)[None, :] / self.nu
            )
            out[start : start + blk.size] = pmf[0] + pmf[1:] @ g
        out = np.where(flat >= 0, np.minimum(out, 1.0), 0.0)
        out = out.reshape(np.shape(x)) if np.ndim(x) else out[0]
        return out

    def pdf(self, x, _chunk=262144):
        """Density of the continuous part (excludes the atom at 0)."""
        x = np.asarray(x, dtype=float)
        pmf = self._series_weights()
        ns = np.arange(1, len(pmf))
        shapes = ns * self.eta
        flat = np.atleast_1d(x).ravel()
        out = np.zeros_like(flat)
        pos = flat > 0
        if pos.any():
            xp = flat[pos]
            logx = np.log(xp)
            acc = np.zeros_like(xp)
            for n, w in zip(ns, pmf[1:]):
                s = n * self.eta
                acc += w * np.exp(
                    (s - 1.0) * logx - xp / self.nu - special.gammaln(s) - s * math.log(self.nu)
                )
            out[pos] = acc
        out = out.reshape(np.shape(x)) if np.ndim(x) else out[0]
        return out

    def quantile(self, u):
        u = _check_prob(u)
        uu = np.atleast_1d(u)
        out = np.zeros_like(uu)
        above = uu > self.zero_mass  # atom at zero absorbs u <= exp(-rho)
        if above.any():
            out[above] = _invert_cdf(self.cdf, uu[above], _spec_cdf_table(self), pdf=self.pdf)
        return _maybe_scalar(out if np.ndim(u) else out[0], u)

    def sample(self, rng, size=None):
        scalar = size is None
        n = 1 if scalar else int(np.prod(size))
        counts = np.searchsorted(
            _poisson_cdf_table(self.rho), rng.random(n), side="left"
        )
        out = np.zeros(n)
        pos = counts > 0
        if pos.any():
            out[pos] = rng.gamma(counts[pos] * self.eta, self.nu)
        if scalar:
            return float(out[0])
        return out.reshape(size)

    def config_params(self):
        return {"rho": self.rho, "eta": self.eta, "nu": self.nu}


@dataclass(frozen=True)
class BHN(LatentDistribution):
    """Benefit/harm/neutral three-atom modifier law.

    Takes value ``mu1`` (< 1, benefit) with probability ``p1``, ``mu2``
    (>= 1, harm) with probability ``p2``, and 1 (neutral) otherwise.
    """

    p1: float
    mu1: float
    p2: float
    mu2: float
    family = "bhn"

    def __post_init__(self):
        if not (0.0 <= self.p1 <= 1.0 and 0.0 <= self.p2 <= 1.0):
            raise ValueError("bhn requires p1, p2 in [0, 1]")
        if self.p1 + self.p2 > 1.0 + 1e-12:
            raise ValueError("bhn requires p1 + p2 <= 1")
        if not (0.0 < self.mu1 < 1.0):
            raise ValueError("bhn requires mu1 in (0, 1)")
        if self.mu2 < 1.0:
            raise ValueError("bhn requires mu2 >= 1")

    @property
    def atoms(self):
        # ascending value order (mu1, 1, mu2); ties at 1 keep this order
        return (
            (self.p1, self.mu1),
            (1.0 - self.p1 - self.p2, 1.0),
            (self.p2, self.mu2),
        )

    def _pv(self):
        probs = np.array([a[0] for a in self.atoms])
        vals = np.array([a[1] for a in self.atoms])
        return probs, vals

    def laplace(self, c):
        c = _load(c)
        probs, vals = self._pv()
        out = np.exp(-np.multiply.outer(c, vals)) @ probs
        return _maybe_scalar(out, c)

    def laplace_d1(self, c):
        c = _load(c)
        probs, vals = self._pv()
        out = -np.exp(-np.multiply.outer(c, vals)) @ (probs * vals)
        return _maybe_scalar(out, c)

    def laplace_d2(self, c):
        c = _load(c)
        probs, vals = self._pv()
        out = np.exp(-np.multiply.outer(c, vals)) @ (probs * vals**2)
        return _maybe_scalar(out, c)

    def mean(self):
        probs, vals = self._pv()
        return float(probs @ vals)

    def variance(self):
        probs, vals = self._pv()
        return float(probs @ vals**2 - (probs @ vals) ** 2)

    def cdf(self, x):
        x = np.asarray(x, dtype=float)
        probs, vals = self._pv()
        out = np.where(np.greater_equal.outer(x, vals), probs, 0.0).sum(axis=-1)
        return _maybe_scalar(out, x)

    def quantile(self, u):
        u = _check_prob(u)
        probs, vals = self._pv()
        cum = np.cumsum(probs)
        cum[-1] = 1.0
        idx = np.searchsorted(cum, u, side="left")
        return _maybe_scalar(vals[idx], u)

    def sample(self, rng, size=None):
        u = rng.random(size)
        if size is None:
            return float(self.quantile(np.array([u]))[0])
        return self.quantile(u)

    def config_params(self):
        return {"p1": self.p1, "mu1": self.mu1, "p2": self.p2, "mu2": self.mu2}


@dataclass(frozen=True)
class Degenerate(LatentDistribution):
    """Point mass at ``value`` (no heterogeneity)."""

    value: float
    family = "degenerate"

    def __post_init__(self):
        if not self.value > 0:
            raise ValueError("degenerate requires value > 0")

    @property
    def atoms(self):
        return ((1.0, self.value),)

    def laplace(self, c):
        c = _load(c)
        return _maybe_scalar(np.exp(-c * self.value), c)

    def laplace_d1(self, c):
        c = _load(c)
        return _maybe_scalar(-self.value * np.exp(-c * self.value), c)

    def laplace_d2(self, c):
        c = _load(c)
        return _maybe_scalar(self.value**2 * np.exp(-c * self.value), c)

    def mean(self):
        return self.value

    def variance(self):
        return 0.0

    def cdf(self, x):
        x = np.asarray(x, dtype=float)
        return _maybe_scalar((x >= self.value).astype(float), x)

    def quantile(self, u):
        u = _check_prob(u)
        return _maybe_scalar(np.full_like(u, self.value), u)

    def sample(self, rng, size=None):
        if size is None:
            return self.value
        return np.full(size, self.value)

    def config_params(self):
        return {"value": self.value}


FAMILY_NAMES = ("gamma", "invgauss", "cpoisson", "bhn", "degenerate")


def from_mean_var(family, mean, var, p1=None, mu1=None):
    """Build a spec with the requested mean and variance.

    Continuous families use the closed-form reparameterizations (compound
    Poisson keeps its gamma-jump shape fixed at 1/2, the only value used
    here); ``bhn`` needs the benefit atom (``p1``, ``mu1``) and delegates
    to :func:`bhn_from_moments`.
    """
    if family == "degenerate":
        if var != 0.0:
            raise InfeasibleMomentsError("degenerate law has zero variance")
        return Degenerate(mean)
    if not (mean > 0 and var > 0):
        raise ValueError("mean and var must be positive")
    if family == "gamma":
        return Gamma(k=mean**2 / var, theta=var / mean)
    if family == "invgauss":
        return InverseGaussian(mu=mean, lam=mean**3 / var)
    if family == "cpoisson":
        return CompoundPoisson(rho=3.0 * mean**2 / var, eta=0.5, nu=2.0 * var / (3.0 * mean))
    if family == "bhn":
        if p1 is None or mu1 is None:
            raise ValueError("bhn moment matching needs p1 and mu1")
        return bhn_from_moments(p1, mu1, mean, var)
    raise ValueError(f"unknown family {family!r}; expected one of {FAMILY_NAMES}")


def bhn_from_moments(p1, mu1, mean, var):
    """Solve for (p2, mu2) so the BHN law has the exact target moments.

    Raises :class:`InfeasibleMomentsError` naming the violated constraint
    when no valid three-atom law exists.
    """
    if not (0.0 <= p1 <= 1.0):
        raise InfeasibleMomentsError(f"p1 = {p1} outside [0, 1]")
    if not (0.0 < mu1 < 1.0):
        raise InfeasibleMomentsError(f"mu1 = {mu1} outside (0, 1)")
    if var < 0:
        raise InfeasibleMomentsError(f"var = {var} negative")

    denom = mean - mu1 * p1 + p1 - 1.0
    if abs(denom) < 1e-12:
        # mean already matched by the (mu1, 1) atoms alone, so p2 must be 0
        implied = p1 * mu1**2 + (1.0 - p1) - mean**2
        if abs(var - implied) > 1e-9:
            raise InfeasibleMomentsError(
                f"mean forces p2 = 0 but that implies var = {implied}, not {var}"
            )
        return BHN(p1=p1, mu1=mu1, p2=0.0, mu2=1.0)
    if denom < 0:
        raise InfeasibleMomentsError(
            f"mean - mu1 p1 + p1 - 1 = {denom} < 0: target mean needs mu2 < 1"
        )

    p2 = denom**2 / (
        mean**2 - 2.0 * mean - mu1**2 * p1 + 2.0 * mu1 * p1 - p1 + var + 1.0
    )
    mu2 = (mean**2 - mean - mu1**2 * p1 + mu1 * p1 + var) / denom
    if not (0.0 <= p2 <= 1.0):
        raise InfeasibleMomentsError(f"solved p2 = {p2} outside [0, 1]")
    if p1 + p2 > 1.0:
        raise InfeasibleMomentsError(f"solved p1 + p2 = {p1 + p2} exceeds 1")
    if mu2 < 1.0:
        raise InfeasibleMomentsError(f"solved mu2 = {mu2} below 1")
    return BHN(p1=p1, mu1=mu1, p2=p2, mu2=mu2)
