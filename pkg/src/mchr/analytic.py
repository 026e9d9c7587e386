"""Closed-form estimands built from Laplace transforms.

Everything here rests on one identity: conditioning a latent multiplier U
on survival to time t multiplies its density by exp(-U * load) for the
accumulated hazard load, so

    E[U | T >= t] = -L'(load) / L(load).

The marginal hazard ratio among survivors of each potential-outcome world
("MCHR") is then c * E[U0 U1 | T^1 >= t] / E[U0 | T^0 >= t].  For a
three-atom modifier the product transform is a finite mixture of frailty
transforms; for a continuous independent modifier it is an integral that
we evaluate by adaptive quadrature; for dependent latent pairs no closed
form exists and this module refuses rather than silently approximating
(use the Monte Carlo estimators in :mod:`mchr.simulate`).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, special

from .copula import CopulaSpec
from .distributions import CompoundPoisson, Degenerate, LatentDistribution
from .hazard import BaselineHazard, Scenario

__all__ = [
    "AnalyticUnavailableError",
    "QuadratureError",
    "CurveSample",
    "cond_exp_given_survival",
    "mchr_frailty_only",
    "mchr_modifier_only",
    "cond_exp_product",
    "product_laplace",
    "product_laplace_d1",
    "mchr",
    "causal_hazard_ratio",
    "mean_product",
    "survival_curve",
]

ESTIMANDS = (
    "mchr",
    "chr",
    "cond_exp_frailty_a0",
    "cond_exp_frailty_a1",
    "cond_exp_modifier",
    "cond_exp_product",
    "survival_a0",
    "survival_a1",
    "cox_estimand",
)


class AnalyticUnavailableError(ValueError):
    """No closed form exists for this scenario; use the simulate module."""


class QuadratureError(RuntimeError):
    """Adaptive quadrature failed to converge; carries the solver message."""


@dataclass(frozen=True)
class CurveSample:
    """A named estimand evaluated on a strictly ascending time grid."""

    estimand: str
    times: np.ndarray
    values: np.ndarray
    scenario_hash: str = ""
    std_errors: np.ndarray | None = field(default=None, compare=False)

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        values = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "values", values)
        if times.ndim != 1 or values.shape != times.shape:
            raise ValueError("times and values must be 1-D arrays of equal length")
        if times.size and np.any(np.diff(times) <= 0):
            raise ValueError("times must be strictly ascending")
        if not np.all(np.isfinite(values)):
            raise ValueError("values must be finite")
        if self.estimand.startswith("survival"):
            if np.any((values <= 0) | (values > 1)):
                raise ValueError("survival values must lie in (0, 1]")
            if np.any(np.diff(values) > 1e-12):
                raise ValueError("survival values must be nonincreasing")
        if self.std_errors is not None:
            se = np.asarray(self.std_errors, dtype=float)
            object.__setattr__(self, "std_errors", se)
            if se.shape != times.shape:
                raise ValueError("std_errors must match the grid")

    def write_csv(self, path):
        """RFC-4180 CSV with header t,value,estimand,scenario_hash."""
        import csv

        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "value", "estimand", "scenario_hash"])
            for t, v in zip(self.times, self.values):
                w.writerow([f"{t:.17g}", f"{v:.17g}", self.estimand, self.scenario_hash])


# ---------------------------------------------------------------------------
# survivor-conditioned expectations
# ---------------------------------------------------------------------------


def cond_exp_given_survival(spec: LatentDistribution, cum_hazard):
    """E[U | survived a cumulative hazard load of ``cum_hazard`` * U].

    Equals -L'(load)/L(load); at load 0 this is the unconditional mean and
    it decays monotonically as the load grows.
    """
    load = np.asarray(cum_hazard, dtype=float)
    if np.any(load < 0):
        raise ValueError("cumulative hazard must be nonnegative")
    return -spec.laplace_d1(cum_hazard) / spec.laplace(cum_hazard)


def mchr_frailty_only(frailty, effect_c, baseline, t):
    """Marginal hazard ratio under a homogeneous effect c with frailty only.

    c * E[U0 | T^1 >= t] / E[U0 | T^0 >= t]; equals c at t = 0 and drifts
    toward the family-specific limit as the survivors diverge.
    """
    lam = baseline.cumulative(t)
    num = cond_exp_given_survival(frailty, effect_c * lam)
    den = cond_exp_given_survival(frailty, lam)
    return effect_c * num / den


def mchr_modifier_only(modifier, baseline, t):
    """E[U1 | T^1 >= t]: the marginal ratio when only the effect varies."""
    return cond_exp_given_survival(modifier, baseline.cumulative(t))


# ---------------------------------------------------------------------------
# product transform of U0 * U1 (independent pair)
# ---------------------------------------------------------------------------


def _quad(fun, a, b):
    val, err, info, *msg = integrate.quad(
        fun, a, b, epsabs=1e-9, epsrel=1e-9, limit=200, full_output=1
    )
    if msg:
        raise QuadratureError(
            f"quadrature did not converge (abserr={err:.3g}): {msg[0]}"
        )
    return val


def product_laplace(frailty, modifier, s):
    """Laplace transform of V = U0 * U1 for an independent pair."""
    return _product_transform(frailty, modifier, s, derivative=False)


def product_laplace_d1(frailty, modifier, s):
    """First derivative of :func:`product_laplace` in s."""
    return _product_transform(frailty, modifier, s, derivative=True)


def _product_transform(frailty, modifier, s, derivative):
    s = np.asarray(s, dtype=float)
    if np.any(s < 0):
        raise ValueError("transform argument must be nonnegative")

    atoms = modifier.atoms
    if atoms is not None:
        total = np.zeros_like(s, dtype=float)
        for p, v in atoms:
            if p == 0.0:
                continue
            if derivative:
                total += p * v * frailty.laplace_d1(v * s)
            else:
                total += p * frailty.laplace(v * s)
        return float(total) if total.ndim == 0 else total

    if isinstance(frailty, Degenerate):
        v = frailty.value
        if derivative:
            return v * modifier.laplace_d1(v * s)
        return modifier.laplace(v * s)

    # continuous independent modifier: integrate the frailty transform
    # against the modifier law (atom at zero contributes only to level 0)
    zero_mass = modifier.zero_mass if isinstance(modifier, CompoundPoisson) else 0.0

    def one(si):
        if derivative:
            val = _quad(lambda y: y * frailty.laplace_d1(si * y) * modifier.pdf(y), 0.0, np.inf)
        else:
            val = zero_mass + _quad(
                lambda y: frailty.laplace(si * y) * modifier.pdf(y), 0.0, np.inf
            )
        return val

    flat = np.atleast_1d(s)
    out = np.array([one(float(si)) for si in flat])
    return float(out[0]) if s.ndim == 0 else out.reshape(s.shape)


def cond_exp_product(frailty, modifier, baseline, t):
    """E[U0 U1 | T^1 >= t] for an independent pair with an atomic modifier.

    Equals sum_i p_i mu_i (-L'_U0)(mu_i Lambda0) / sum_i p_i L_U0(mu_i Lambda0);
    continuous modifiers are not supported here (go through :func:`mchr`,
    which dispatches to quadrature, or the simulate module).
    """
    if modifier.atoms is None:
        raise AnalyticUnavailableError(
            "cond_exp_product needs an atomic (BHN/degenerate) modifier"
        )
    lam = baseline.cumulative(t)
    return -product_laplace_d1(frailty, modifier, lam) / product_laplace(
        frailty, modifier, lam
    )


# ---------------------------------------------------------------------------
# headline estimands
# ---------------------------------------------------------------------------


def _require_independent(scenario, what):
    if not scenario.dependence.is_effectively_independent:
        raise AnalyticUnavailableError(
            f"{what} has no closed form for dependent (U0, U1); "
            "estimate it with mchr.simulate instead"
        )


def mchr(scenario: Scenario, t):
    """Marginal causal hazard ratio at time t.

    c * E[U0 U1 | T^1 >= t] / E[U0 | T^0 >= t]; equals the causal ratio at
    t = 0.  Atomic modifiers use the mixture closed form, continuous
    independent modifiers adaptive quadrature; dependent pairs are refused.
    """
    _require_independent(scenario, "the marginal hazard ratio")
    lam = scenario.baseline.cumulative(t)
    load1 = scenario.effect_c * lam
    num = -product_laplace_d1(scenario.frailty, scenario.modifier, load1) / product_laplace(
        scenario.frailty, scenario.modifier, load1
    )
    den = cond_exp_given_survival(scenario.frailty, lam)
    return scenario.effect_c * num / den


def causal_hazard_ratio(scenario: Scenario) -> float:
    """c * E[U0 U1] / E[U0]; constant in time for these hazard forms."""
    return scenario.effect_c * mean_product(scenario) / scenario.frailty.mean()


def survival_curve(scenario: Scenario, a: int, t):
    """Marginal survival P(T^a >= t); Laplace transform of the hazard load."""
    if a not in (0, 1):
        raise ValueError("exposure level must be 0 or 1")
    lam = scenario.baseline.cumulative(t)
    if a == 0:
        return scenario.frailty.laplace(lam)
    _require_independent(scenario, "the exposed survival curve")
    return product_laplace(scenario.frailty, scenario.modifier, scenario.effect_c * lam)


# ---------------------------------------------------------------------------
# E[U0 U1] under the copula (for the causal ratio)
# ---------------------------------------------------------------------------

_GH_NODES, _GH_WEIGHTS = np.polynomial.hermite_e.hermegauss(201)
_GH_WEIGHTS = _GH_WEIGHTS / math.sqrt(2.0 * math.pi)
_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(128)


def _atom_bands(spec):
    """Merged atoms in ascending value order with cumulative probabilities."""
    pairs = sorted((v, p) for p, v in spec.atoms if p > 0)
    vals = np.array([v for v, _ in pairs])
    probs = np.array([p for _, p in pairs])
    cum = np.cumsum(probs)
    cum[-1] = 1.0
    return vals, probs, cum


def _gl_on(a, b, f):
    x = 0.5 * (b - a) * _GL_NODES + 0.5 * (a + b)
    return 0.5 * (b - a) * float(_GL_WEIGHTS @ f(x))


def _quantile_of_unit(spec, u):
    tiny = np.finfo(float).tiny
    return spec.quantile(np.clip(u, tiny, 1.0 - 1e-16))


def mean_product(scenario: Scenario) -> float:
    """E[U0 U1] under the scenario's copula.

    Independent pairs factorize; Kendall tau = +/-1 reduces to a
    one-dimensional (counter)monotone integral; intermediate Gaussian
    dependence is evaluated by Gauss-Hermite quadrature with exact band
    probabilities for atomic marginals.
    """
    m0, m1 = scenario.frailty, scenario.modifier
    dep = scenario.dependence
    if dep.is_effectively_independent:
        return m0.mean() * m1.mean()

    tau = dep.kendall_tau
    if abs(tau) == 1.0:
        return _mean_product_monotone(m0, m1, countermonotone=tau < 0)
    return _mean_product_gaussian(m0, m1, dep.rho)


def _mean_product_monotone(m0, m1, countermonotone):
    sign = -1.0 if countermonotone else 1.0

    if m0.atoms is not None and m1.atoms is not None:
        # exact: merge both atom partitions of (0, 1)
        breaks = {0.0, 1.0}
        for spec, flip in ((m0, False), (m1, countermonotone)):
            _, _, cum = _atom_bands(spec)
            for c in cum[:-1]:
                breaks.add(1.0 - c if flip else c)
        breaks = sorted(breaks)
        total = 0.0
        for a, b in zip(breaks[:-1], breaks[1:]):
            if b > a:
                mid = 0.5 * (a + b)
                total += (b - a) * float(
                    _quantile_of_unit(m0, mid)
                    * _quantile_of_unit(m1, 1.0 - mid if countermonotone else mid)
                )
        return total

    if m0.atoms is None and m1.atoms is None:
        # integrate q0(Phi(z)) q1(Phi(+/-z)) against the normal weight
        vals = _quantile_of_unit(m0, special.ndtr(_GH_NODES)) * _quantile_of_unit(
            m1, special.ndtr(sign * _GH_NODES)
        )
        return float(_GH_WEIGHTS @ vals)

    # mixed: sum the continuous quantile over each atomic band in z-space
    atom, cont, flip_cont = (
        (m0, m1, countermonotone) if m0.atoms is not None else (m1, m0, countermonotone)
    )
    vals, _, cum = _atom_bands(atom)
    edges = np.concatenate(([-9.0], special.ndtri(np.clip(cum[:-1], 1e-300, 1.0)), [9.0]))
    total = 0.0
    for v, lo, hi in zip(vals, edges[:-1], edges[1:]):
        if hi > lo:
            zsign = sign if flip_cont else 1.0
            total += v * _gl_on(
                lo,
                hi,
                lambda z: np.exp(-0.5 * z * z)
                / math.sqrt(2.0 * math.pi)
                * _quantile_of_unit(cont, special.ndtr(zsign * z)),
            )
    return total


def _conditional_mean_inner(spec, rho, z):
    """E[q(Phi(Z1)) | Z0 = z] for Z1 = rho z + sqrt(1-rho^2) W, vectorized in z."""
    s = math.sqrt(1.0 - rho * rho)
    z = np.asarray(z, dtype=float)
    if spec.atoms is not None:
        vals, _, cum = _atom_bands(spec)
        edges = special.ndtri(np.clip(cum, 1e-300, 1.0))  # last edge -> +inf
        upper = special.ndtr((edges[None, :] - rho * z[:, None]) / s)
        upper[:, -1] = 1.0
        probs = np.diff(upper, prepend=0.0)
        return probs @ vals
    inner = np.zeros_like(z)
    for w, x in zip(_GH_WEIGHTS, _GH_NODES):
        inner += w * _quantile_of_unit(spec, special.ndtr(rho * z + s * x))
    return inner


def _mean_product_gaussian(m0, m1, rho):
    # keep an atomic law on the inner (exact-band) side when possible
    if m0.atoms is not None and m1.atoms is None:
        m0, m1 = m1, m0
    if m0.atoms is None:
        vals = _quantile_of_unit(m0, special.ndtr(_GH_NODES)) * _conditional_mean_inner(
            m1, rho, _GH_NODES
        )
        return float(_GH_WEIGHTS @ vals)
    # both atomic: integrate the smooth inner mean over each outer band
    vals0, _, cum0 = _atom_bands(m0)
    total = 0.0
    lo = 0.0
    for v0, hi in zip(vals0, cum0):
        if hi > lo:
            total += v0 * _gl_on(
                lo, hi, lambda u: _conditional_mean_inner(m1, rho, special.ndtri(u))
            )
        lo = hi
    return total
