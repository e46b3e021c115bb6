"""Stability constant, its change under model mismatch, and trajectory-deviation bounds.

Each function computes the analytic constants and, where a trajectory is
involved, the simulated quantity they are supposed to bound, so the caller can
audit the inequality instead of assuming it.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .filters import default_interval
from .gnn import GnnParams, c_phi, gamma_phi
from .network import DistributedSystem, system_distance
from .numerics import inf_norm, l21_norm, spectral_norm
from .simulation import NotApplicableError, rollout_batch


@dataclass
class StabilityReport:
    xi: float
    c_phi: float
    gamma_phi: float
    is_sufficiently_stable: bool
    beta1: float | None = None
    a_term: float = 0.0  # ‖A‖₂‖Ā‖_∞
    b_term: float = 0.0  # ‖B‖₂‖B̄‖_∞

    def beta0(self, x0):
        """‖X(0)‖/(1−ξ); only defined when ξ < 1."""
        if not self.is_sufficiently_stable:
            raise NotApplicableError("beta0 needs xi < 1")
        return l21_norm(x0) / (1.0 - self.xi)

    def to_dict(self):
        return {
            "xi": self.xi,
            "c_phi": self.c_phi,
            "gamma_phi": self.gamma_phi,
            "is_sufficiently_stable": self.is_sufficiently_stable,
            "beta1": self.beta1,
        }


def _terms(d: DistributedSystem):
    a = spectral_norm(d.sys_graph) * inf_norm(d.sys_feat)
    b = spectral_norm(d.ctrl_graph) * inf_norm(d.ctrl_feat)
    return a, b


def stability_constant(d: DistributedSystem, p: GnnParams, interval=None):
    """ξ = ‖A‖₂‖Ā‖_∞ + C_Φ‖B‖₂‖B̄‖_∞, with C_Φ measured on ``interval``.

    The interval defaults to the spectrum of the system's support, which is
    what the output bound behind ξ needs.
    """
    if interval is None:
        interval = default_interval([d.support])
    pi = p.with_interval(interval)
    cphi = c_phi(pi)
    a_term, b_term = _terms(d)
    xi = a_term + cphi * b_term
    ok = xi < 1.0
    return StabilityReport(
        xi=xi,
        c_phi=cphi,
        gamma_phi=gamma_phi(pi),
        is_sufficiently_stable=ok,
        beta1=b_term / (1.0 - xi) if ok else None,
        a_term=a_term,
        b_term=b_term,
    )


def c_xi_hat(d: DistributedSystem, d_hat: DistributedSystem, cphi, subsumed=None):
    """Ĉ_ξ = ‖A‖₂ + ‖Ā̂‖_∞ + C_Φ(‖B‖₂ + ‖B̄̂‖_∞).

    When both systems share their feature matrices exactly (``subsumed``,
    detected automatically) the feature-mismatch terms vanish and the constant
    reduces to ‖Ā̂‖_∞ + C_Φ‖B̄̂‖_∞, i.e. 1 + C_Φ for scalar features equal to 1.
    """
    if subsumed is None:
        subsumed = (np.array_equal(d.sys_feat, d_hat.sys_feat)
                    and np.array_equal(d.ctrl_feat, d_hat.ctrl_feat))
    abar_hat = inf_norm(d_hat.sys_feat)
    bbar_hat = inf_norm(d_hat.ctrl_feat)
    if subsumed:
        return abar_hat + cphi * bbar_hat
    return spectral_norm(d.sys_graph) + abar_hat + cphi * (spectral_norm(d.ctrl_graph) + bbar_hat)


def stability_change_bound(d, d_hat, p: GnnParams, interval=None):
    """Returns ``(|ξ − ξ̂|, Ĉ_ξ·d(D, D̂), holds)``.

    Both stability constants use one C_Φ measured on an interval covering the
    spectra of S and Ŝ.
    """
    if interval is None:
        interval = default_interval([d.support, d_hat.support])
    r1 = stability_constant(d, p, interval)
    r2 = stability_constant(d_hat, p, interval)
    lhs = abs(r1.xi - r2.xi)
    rhs = c_xi_hat(d, d_hat, r1.c_phi) * system_distance(d, d_hat)
    return lhs, rhs, bool(lhs <= rhs + 1e-9)


@dataclass
class DeviationReport:
    xi: float
    xi_hat: float
    eps: float
    c_xi_hat: float
    c_phi_hat: float
    cor_c: float | None
    empirical_deviation: np.ndarray
    bound: np.ndarray
    weak: bool = False  # max(ξ, ξ̂) >= 1: the bound grows with t
    cor_undefined: bool = False
    extra: dict = field(default_factory=dict)

    def c_t(self, t):
        """Ĉ_t = t·max(ξ, ξ̂)^{t−1}, Ĉ₀ = 0."""
        return c_t(t, max(self.xi, self.xi_hat))

    def holds(self, slack=1.0):
        return bool(np.all(self.empirical_deviation <= slack * self.bound + 1e-12))

    def to_dict(self):
        return {
            "xi": self.xi,
            "xi_hat": self.xi_hat,
            "eps": self.eps,
            "c_xi_hat": self.c_xi_hat,
            "c_phi_hat": self.c_phi_hat,
            "cor_c": self.cor_c,
            "weak": self.weak,
            "empirical_deviation": self.empirical_deviation.tolist(),
            "bound": self.bound.tolist(),
        }

    def to_json(self):
        return json.dumps(self.to_dict())


def c_t(t, m):
    t = np.asarray(t, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(t > 0, t * np.power(m, np.maximum(t - 1.0, 0.0)), 0.0)
    return out


def long_run_constant(c_phi_hat, m):
    """−e⁻¹ Ĉ_Φ / (m log m), defined for 0 < m < 1; None otherwise."""
    if not (0.0 < m < 1.0):
        return None
    return -math.exp(-1.0) * c_phi_hat / (m * math.log(m))


def _paired_rollouts(d, d_hat, p, x0, horizon):
    x0 = np.asarray(x0, dtype=float)
    r1 = rollout_batch(d, p, x0[None], horizon)
    r2 = rollout_batch(d_hat, p, x0[None], horizon)
    return r1["states"][0], r2["states"][0]


def deviation_bound(d, d_hat, p: GnnParams, x0, horizon, interval=None):
    """Simulated ‖X(t) − X̂(t)‖ next to the bound Ĉ_Φ·Ĉ_t·‖X(0)‖·d(D, D̂)."""
    if interval is None:
        interval = default_interval([d.support, d_hat.support])
    r1 = stability_constant(d, p, interval)
    r2 = stability_constant(d_hat, p, interval)
    eps = system_distance(d, d_hat)
    cxi = c_xi_hat(d, d_hat, r1.c_phi)
    bhat = spectral_norm(d_hat.ctrl_graph) * inf_norm(d_hat.ctrl_feat)
    cphi_hat = cxi + r1.c_phi * r1.gamma_phi * bhat * (1.0 + 8.0 * math.sqrt(d.n))
    m = max(r1.xi, r2.xi)
    ts = np.arange(horizon + 1)
    bound = cphi_hat * c_t(ts, m) * l21_norm(x0) * eps
    xs, xs_hat = _paired_rollouts(d, d_hat, p, x0, horizon)
    emp = l21_norm(xs - xs_hat)
    cor = long_run_constant(cphi_hat, m)
    return DeviationReport(
        xi=r1.xi,
        xi_hat=r2.xi,
        eps=eps,
        c_xi_hat=cxi,
        c_phi_hat=cphi_hat,
        cor_c=cor,
        empirical_deviation=np.asarray(emp, dtype=float),
        bound=bound,
        weak=m >= 1.0,
        cor_undefined=cor is None,
    )


def long_run_limit_check(d, d_hat, p: GnnParams, x0, horizon_long=500, interval=None, rtol=1e-6):
    """True iff ‖X(T) − X̂(T)‖ < rtol·‖X(0)‖ at T = ``horizon_long``.

    Raises :class:`NotApplicableError` unless both ξ and ξ̂ are below one.
    """
    if interval is None:
        interval = default_interval([d.support, d_hat.support])
    r1 = stability_constant(d, p, interval)
    r2 = stability_constant(d_hat, p, interval)
    if not (r1.is_sufficiently_stable and r2.is_sufficiently_stable):
        raise NotApplicableError(f"need xi < 1 and xi_hat < 1 (got {r1.xi:.4g}, {r2.xi:.4g})")
    xs, xs_hat = _paired_rollouts(d, d_hat, p, x0, horizon_long)
    return bool(l21_norm(xs[-1] - xs_hat[-1]) < rtol * l21_norm(x0))
