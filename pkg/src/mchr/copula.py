"""Gaussian-copula coupling of the frailty and modifier pair.

Dependence is parameterized by Kendall's tau; for the Gaussian copula the
normal correlation is rho = sin(pi tau / 2).  tau = +/-1 short-circuits to
exact (counter)monotone quantile coupling since a normal pair with
|rho| = 1 is degenerate anyway.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import special

from .distributions import LatentDistribution

__all__ = [
    "CopulaSpec",
    "INDEPENDENT",
    "rho_from_tau",
    "tau_from_rho",
    "sample_pair",
]

COPULA_FAMILIES = ("independent", "gaussian")


def rho_from_tau(tau: float) -> float:
    """Gaussian-copula correlation giving Kendall's tau."""
    return math.sin(math.pi * tau / 2.0)


def tau_from_rho(rho: float) -> float:
    return 2.0 * math.asin(rho) / math.pi


@dataclass(frozen=True)
class CopulaSpec:
    family: str = "independent"
    kendall_tau: float = 0.0

    def __post_init__(self):
        if self.family not in COPULA_FAMILIES:
            raise ValueError(f"unknown copula family {self.family!r}")
        if not -1.0 <= self.kendall_tau <= 1.0:
            raise ValueError("kendall_tau must lie in [-1, 1]")
        if self.family == "independent" and self.kendall_tau != 0.0:
            raise ValueError("independent copula requires kendall_tau = 0")

    @property
    def rho(self) -> float:
        return rho_from_tau(self.kendall_tau) if self.family == "gaussian" else 0.0

    @property
    def is_effectively_independent(self) -> bool:
        """True when the joint law factorizes (independent, or Gaussian tau=0)."""
        return self.family == "independent" or self.kendall_tau == 0.0

    def config_params(self) -> dict:
        return {"copula": self.family, "kendall_tau": self.kendall_tau}


INDEPENDENT = CopulaSpec()


def sample_pair(copula: CopulaSpec, marg0: LatentDistribution,
                marg1: LatentDistribution, rng, size=None):
    """Draw (U0, U1) with the given marginals and copula.

    Gaussian path: Z1 = rho Z0 + sqrt(1 - rho^2) W for a fresh standard
    normal W, then each coordinate is the marginal quantile of the normal
    CDF value.  Draw order is fixed (Z0 before W; marg0 before marg1 in
    the independent case) so streams replay identically.
    """
    scalar = size is None
    n = 1 if scalar else size

    if copula.family == "independent":
        u0 = marg0.sample(rng, size=n)
        u1 = marg1.sample(rng, size=n)
    else:
        tau = copula.kendall_tau
        z0 = rng.standard_normal(n)
        if tau == 1.0:
            z1 = z0
        elif tau == -1.0:
            z1 = -z0
        elif tau == 0.0:
            z1 = rng.standard_normal(n)
        else:
            rho = copula.rho
            z1 = rho * z0 + math.sqrt(1.0 - rho * rho) * rng.standard_normal(n)
        u0 = marg0.quantile(_clip_unit(special.ndtr(z0)))
        u1 = marg1.quantile(_clip_unit(special.ndtr(z1)))

    if scalar:
        return float(np.asarray(u0).reshape(-1)[0]), float(np.asarray(u1).reshape(-1)[0])
    return np.asarray(u0), np.asarray(u1)


def _clip_unit(u):
    # ndtr can round to exactly 0 or 1 in the extreme tails
    tiny = np.finfo(float).tiny
    return np.clip(u, tiny, 1.0 - 1e-16)
