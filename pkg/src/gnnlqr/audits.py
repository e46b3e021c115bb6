"""Fuzz campaigns that test the stability inequalities against simulation.

Each campaign draws random instances from its own seeded stream, evaluates
both sides of one inequality and records ``(instance, eps, lhs, rhs, holds)``.
Nothing here assumes a bound is true; a violation is simply counted.
"""

from __future__ import annotations

import csv
import functools
import inspect
import io
import math
import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import stability
from .controllers import closed_loop_radius, solve_dare
from .filters import FilterBank, apply_filter, default_interval, filter_lipschitz, filter_size
from .gnn import GnnParams, c_phi, closed_loop_gradient, gamma_phi, gnn_forward, init_gnn
from .network import CostSpec, DistributedSystem, _symmetric_direction, perturb_system, random_system
from .numerics import RngStream, inf_norm, l21_norm, spectral_norm
from .simulation import Disturbance, NotApplicableError, iss_check

BOUND_SLACK = 1e-9


@dataclass
class CampaignResult:
    name: str
    rows: list = field(default_factory=list)
    seconds: float = 0.0
    minimum: int = 0

    @property
    def instances(self):
        return len(self.rows)

    @property
    def violations(self):
        return sum(not r["holds"] for r in self.rows)

    @property
    def passed(self):
        return self.violations == 0 and self.instances >= self.minimum

    def add(self, instance, eps, lhs, rhs, holds):
        self.rows.append({"instance": instance, "eps": float(eps), "lhs": float(lhs),
                          "rhs": float(rhs), "holds": bool(holds)})

    def summary(self):
        return {"name": self.name, "instances": self.instances, "minimum": self.minimum,
                "violations": self.violations, "passed": self.passed,
                "seconds": round(self.seconds, 3)}

    def to_csv(self, fh=None):
        out = fh if fh is not None else io.StringIO()
        w = csv.writer(out, lineterminator="\n")
        w.writerow(["instance", "eps", "lhs", "rhs", "holds"])
        for r in self.rows:
            w.writerow([r["instance"], repr(r["eps"]), repr(r["lhs"]), repr(r["rhs"]), int(r["holds"])])
        return out.getvalue() if fh is None else None


def _timed(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kw):
        t0 = time.perf_counter()
        res = fn(*args, **kw)
        res.seconds = time.perf_counter() - t0
        return res
    return wrapper


# ----------------------------------------------------------------------------
# random instances


def fuzz_system(rng: RngStream, n_range=(4, 25), a_norm=None, features=False):
    """Random connected system; with ``features`` the feature matrices are random too."""
    n = int(rng.integers(*n_range))
    k = int(rng.integers(2, min(6, n - 1) + 1))
    if a_norm is None:
        a_norm = float(rng.uniform(0.1, 0.9))
    d = random_system(n, k, a_norm, 1.0, rng.child("system"))
    if not features:
        return d
    f = int(rng.integers(1, 4))
    g = int(rng.integers(1, 3))
    abar = rng.child("abar").normal((f, f))
    bbar = rng.child("bbar").normal((g, f))
    # keep ‖A‖₂‖Ā‖_∞ equal to a_norm so the open-loop part stays contracting
    return replace(d, sys_feat=abar / inf_norm(abar), ctrl_feat=bbar / inf_norm(bbar))


def fuzz_filter(rng: RngStream, interval, fin=None, fout=None):
    fin = fin or int(rng.integers(1, 5))
    fout = fout or int(rng.integers(1, 5))
    order = int(rng.integers(0, 5))
    return FilterBank(rng.normal((order + 1, fin, fout)), interval)


def fuzz_gnn(rng: RngStream, interval, fin, fout):
    depth = int(rng.integers(1, 4))
    feats = [fin] + [int(v) for v in rng.integers(1, 7, depth - 1)] + [fout]
    orders = [int(v) for v in rng.integers(0, 5, depth)]
    nonlin = "tanh" if rng.uniform() < 0.8 else "identity"
    return init_gnn(feats, orders, rng.child("taps"), nonlinearity=nonlin, interval=interval)


def scale_to_size(p: GnnParams, target):
    """Rescale the last layer so that C_Φ equals ``target`` (on p's interval)."""
    c = c_phi(p)
    if c == 0.0:
        return p
    arrays = p.arrays()
    arrays[-1] = arrays[-1] * (target / c)
    return p.with_arrays(arrays)


def _controlled_pair(rng: RngStream, xi_range, features=False, eps=None):
    """A system and a GNN whose stability constant is drawn from ``xi_range``."""
    d = fuzz_system(rng.child("d"), a_norm=float(rng.uniform(0.1, 0.8)), features=features)
    a_term, b_term = stability._terms(d)
    target = float(rng.uniform(*xi_range))
    supports = [d.support]
    d_hat = None
    if eps is not None:
        d_hat = perturb_system(d, eps, rng.child("perturb"))
        supports.append(d_hat.support)
    p = fuzz_gnn(rng.child("gnn"), default_interval(supports), d.f_dim, d.g_dim)
    p = scale_to_size(p, max(target - a_term, 0.0) / b_term)
    return d, d_hat, p


# ----------------------------------------------------------------------------
# campaigns


@_timed
def filter_output_campaign(n_instances=1000, seed=0):
    """‖H(X; S)‖ ≤ C_H ‖X‖ with the spectrum of S inside the filter interval."""
    res = CampaignResult("filter_output", minimum=n_instances)
    root = RngStream(seed).child("filter_output")
    for i in range(n_instances):
        rng = root.child(i)
        d = fuzz_system(rng.child("d"))
        fb = fuzz_filter(rng.child("fb"), default_interval([d.support]))
        x = rng.child("x").normal((d.n, fb.in_dim))
        lhs = l21_norm(apply_filter(fb, d.support, x))
        rhs = filter_size(fb) * l21_norm(x)
        res.add(i, 0.0, lhs, rhs, lhs <= rhs + BOUND_SLACK)
    return res


@_timed
def gnn_output_campaign(n_instances=1000, seed=0):
    """‖Φ(X; S)‖ ≤ C_Φ ‖X‖ for tanh or linear GNNs."""
    res = CampaignResult("gnn_output", minimum=n_instances)
    root = RngStream(seed).child("gnn_output")
    for i in range(n_instances):
        rng = root.child(i)
        d = fuzz_system(rng.child("d"))
        fin, fout = (int(v) for v in rng.integers(1, 5, 2))
        p = fuzz_gnn(rng.child("p"), default_interval([d.support]), fin, fout)
        x = 3.0 * rng.child("x").normal((d.n, fin))
        lhs = l21_norm(gnn_forward(p, d.support, x))
        rhs = c_phi(p) * l21_norm(x)
        res.add(i, 0.0, lhs, rhs, lhs <= rhs + BOUND_SLACK)
    return res


def _perturbed_support(rng, s, eps):
    return s + eps * _symmetric_direction(rng, s.shape[0])


@_timed
def filter_lipschitz_campaign(n_instances=200, eps_grid=(1e-4, 1e-3), slack=1.1, seed=0):
    """‖H(X; Ŝ) − H(X; S)‖ ≤ slack·ε(1 + 8√N)Γ_H‖X‖ for ‖S − Ŝ‖₂ = ε."""
    res = CampaignResult("filter_lipschitz", minimum=n_instances * len(eps_grid))
    root = RngStream(seed).child("filter_lipschitz")
    for i in range(n_instances):
        rng = root.child(i)
        d = fuzz_system(rng.child("d"))
        for eps in eps_grid:
            s_hat = _perturbed_support(rng.child("S", eps), d.support, eps)
            fb = fuzz_filter(rng.child("fb"), default_interval([d.support, s_hat]))
            x = rng.child("x").normal((d.n, fb.in_dim))
            lhs = l21_norm(apply_filter(fb, s_hat, x) - apply_filter(fb, d.support, x))
            rhs = eps * (1 + 8 * math.sqrt(d.n)) * filter_lipschitz(fb) * l21_norm(x)
            res.add(i, eps, lhs, rhs, lhs <= slack * rhs + BOUND_SLACK)
    return res


@_timed
def gnn_lipschitz_campaign(n_instances=200, eps_grid=(1e-4, 1e-3), slack=1.1, seed=0):
    """‖Φ(X; Ŝ) − Φ(X; S)‖ ≤ slack·ε(1 + 8√N)C_Φ Γ_Φ‖X‖."""
    res = CampaignResult("gnn_lipschitz", minimum=n_instances * len(eps_grid))
    root = RngStream(seed).child("gnn_lipschitz")
    for i in range(n_instances):
        rng = root.child(i)
        d = fuzz_system(rng.child("d"))
        for eps in eps_grid:
            s_hat = _perturbed_support(rng.child("S", eps), d.support, eps)
            fin, fout = (int(v) for v in rng.integers(1, 4, 2))
            p = fuzz_gnn(rng.child("p"), default_interval([d.support, s_hat]), fin, fout)
            x = rng.child("x").normal((d.n, fin))
            lhs = l21_norm(gnn_forward(p, s_hat, x) - gnn_forward(p, d.support, x))
            rhs = eps * (1 + 8 * math.sqrt(d.n)) * c_phi(p) * gamma_phi(p) * l21_norm(x)
            res.add(i, eps, lhs, rhs, lhs <= slack * rhs + BOUND_SLACK)
    return res


@_timed
def permutation_campaign(n_instances=200, tol=1e-12, seed=0):
    """Filter and GNN outputs commute with relabelling the nodes."""
    res = CampaignResult("permutation_equivariance", minimum=n_instances)
    root = RngStream(seed).child("perm")
    for i in range(n_instances):
        rng = root.child(i)
        d = fuzz_system(rng.child("d"))
        s = d.support
        perm = rng.child("perm").permutation(d.n)
        sp = s[np.ix_(perm, perm)]
        fb = fuzz_filter(rng.child("fb"), default_interval([s]))
        x = rng.child("x").normal((d.n, fb.in_dim))
        err_f = np.max(np.abs(apply_filter(fb, sp, x[perm]) - apply_filter(fb, s, x)[perm]))
        p = fuzz_gnn(rng.child("p"), default_interval([s]), fb.in_dim, 2)
        err_g = np.max(np.abs(gnn_forward(p, sp, x[perm]) - gnn_forward(p, s, x)[perm]))
        lhs = max(err_f, err_g)
        res.add(i, 0.0, lhs, tol, lhs <= tol)
    return res


@_timed
def iss_campaign(n_instances=500, horizon=40, seed=0):
    """Input-state stability: Σ‖X(t)‖ ≤ β₀ + β₁Σ‖E(t)‖ whenever ξ < 1."""
    res = CampaignResult("input_state_stability", minimum=n_instances)
    root = RngStream(seed).child("iss")
    i = 0
    while res.instances < n_instances:
        rng = root.child(i)
        d, _, p = _controlled_pair(rng, (0.3, 0.99), features=bool(i % 2))
        x0 = rng.child("x0").normal((d.n, d.f_dim))
        rate = float(rng.uniform(0.0, 0.95))
        e0 = rng.uniform(0.0, 3.0) * rng.child("e0").normal((d.n, d.g_dim))
        dist = Disturbance.geometric(e0, rate, horizon)
        try:
            lhs, rhs, holds = iss_check(d, p, x0, dist, horizon)
        except NotApplicableError:
            i += 1
            continue
        res.add(i, 0.0, lhs, rhs, holds)
        i += 1
    return res


@_timed
def stability_change_campaign(n_instances=500, eps_grid=(1e-3, 1e-2, 1e-1), seed=0):
    """|ξ − ξ̂| ≤ Ĉ_ξ d(D, D̂), including pairs whose feature matrices differ."""
    res = CampaignResult("stability_change", minimum=n_instances * len(eps_grid))
    root = RngStream(seed).child("stability_change")
    for i in range(n_instances):
        for eps in eps_grid:
            rng = root.child(i, eps)
            d, d_hat, p = _controlled_pair(rng, (0.3, 1.2), features=bool(i % 2), eps=eps)
            if i % 4 == 3:
                # also move the feature matrices
                z = rng.child("feat").normal(d.sys_feat.shape)
                d_hat = replace(d_hat, sys_feat=d.sys_feat + eps * z / inf_norm(z))
            lhs, rhs, holds = stability.stability_change_bound(d, d_hat, p)
            res.add(i, eps, lhs, rhs, holds)
    return res


@_timed
def deviation_campaign(n_instances=200, eps_grid=(1e-4, 1e-3), horizon=50, slack=1.1, seed=0):
    """‖X(t) − X̂(t)‖ ≤ slack·Ĉ_Φ Ĉ_t ‖X(0)‖ ε for every t ≤ horizon."""
    res = CampaignResult("trajectory_deviation", minimum=n_instances * len(eps_grid))
    root = RngStream(seed).child("deviation")
    for i in range(n_instances):
        for eps in eps_grid:
            rng = root.child(i, eps)
            d, d_hat, p = _controlled_pair(rng, (0.3, 0.99), eps=eps)
            x0 = rng.child("x0").normal((d.n, d.f_dim))
            rep = stability.deviation_bound(d, d_hat, p, x0, horizon)
            ratio = rep.empirical_deviation[1:] / np.maximum(rep.bound[1:], 1e-300)
            worst = int(np.argmax(ratio)) + 1
            res.add(i, eps, rep.empirical_deviation[worst], rep.bound[worst], rep.holds(slack))
    return res


@_timed
def long_run_campaign(n_instances=200, eps_grid=(1e-4, 1e-3), horizon_long=500, seed=0):
    """Stable pairs: the deviation vanishes (below 1e-6‖X(0)‖ at t = 500).

    Also checks that the long-run constant dominates max_t Ĉ_Φ Ĉ_t over
    integer t.
    """
    res = CampaignResult("long_run_limit", minimum=n_instances * len(eps_grid))
    root = RngStream(seed).child("long_run")
    i = 0
    while res.instances < n_instances * len(eps_grid):
        for eps in eps_grid:
            rng = root.child(i, eps)
            d, d_hat, p = _controlled_pair(rng, (0.3, 0.95), eps=eps)
            x0 = rng.child("x0").normal((d.n, d.f_dim))
            try:
                ok = stability.long_run_limit_check(d, d_hat, p, x0, horizon_long)
            except NotApplicableError:
                continue
            rep = stability.deviation_bound(d, d_hat, p, x0, 1)
            m = max(rep.xi, rep.xi_hat)
            ts = np.arange(0, int(10 / max(-math.log(m), 1e-3)) + 2)
            peak = rep.c_phi_hat * float(np.max(stability.c_t(ts, m)))
            ok = ok and rep.cor_c is not None and peak <= rep.cor_c * (1 + 1e-12)
            res.add(i, eps, peak, rep.cor_c, ok)
        i += 1
    return res


@_timed
def dare_campaign(n_instances=50, seed=0):
    """Riccati residual below 1e-9 and a stabilizing closed loop."""
    res = CampaignResult("dare_residual", minimum=n_instances)
    root = RngStream(seed).child("dare")
    for i in range(n_instances):
        rng = root.child(i)
        d = fuzz_system(rng, n_range=(5, 31), a_norm=float(rng.uniform(0.5, 1.05)))
        n = d.n
        sol = solve_dare(d.sys_graph, d.ctrl_graph, np.eye(n), np.eye(n))
        radius = closed_loop_radius(d, sol.gain)
        res.add(i, 0.0, sol.residual, 1e-9, sol.residual < 1e-9 and radius < 1.0)
    return res


@_timed
def gradient_campaign(n_instances=3, step=1e-6, tol=1e-5, seed=0):
    """Back-propagated gradient against central finite differences."""
    res = CampaignResult("gradient_exactness", minimum=n_instances)
    root = RngStream(seed).child("grad")
    for i in range(n_instances):
        rng = root.child(i)
        d = random_system(10, 4, 0.995, 1.0, rng.child("d"))
        p = init_gnn([1, 4, 1], [2, 0], rng.child("p"))
        x0 = rng.child("x0").normal((d.n, 1))
        worst = finite_difference_error(p, d, CostSpec.identity(), x0, 5, step)
        res.add(i, step, worst, tol, worst < tol)
    return res


def finite_difference_error(p, d: DistributedSystem, cost, x0, horizon, step=1e-6):
    """Largest relative error between the exact gradient and central differences."""
    _, grads = closed_loop_gradient(p, d, cost, x0, horizon)
    arrays = p.arrays()
    worst = 0.0
    for li, a in enumerate(arrays):
        for idx in np.ndindex(a.shape):
            plus = [b.copy() for b in arrays]
            minus = [b.copy() for b in arrays]
            plus[li][idx] += step
            minus[li][idx] -= step
            lp, _ = closed_loop_gradient(p.with_arrays(plus), d, cost, x0, horizon)
            lm, _ = closed_loop_gradient(p.with_arrays(minus), d, cost, x0, horizon)
            fd = (lp - lm) / (2 * step)
            g = grads[li][idx]
            worst = max(worst, abs(fd - g) / max(abs(fd), abs(g), 1e-8))
    return worst


CAMPAIGNS = {
    "filter_output": filter_output_campaign,
    "gnn_output": gnn_output_campaign,
    "filter_lipschitz": filter_lipschitz_campaign,
    "gnn_lipschitz": gnn_lipschitz_campaign,
    "permutation": permutation_campaign,
    "input_state": iss_campaign,
    "stability_change": stability_change_campaign,
    "deviation": deviation_campaign,
    "long_run": long_run_campaign,
    "dare": dare_campaign,
    "gradient": gradient_campaign,
}


def run_all(seed=0, names=None, scale=1.0):
    """Run every campaign (or ``names``); ``scale`` shrinks instance counts for smoke runs."""
    out = []
    for name in names or CAMPAIGNS:
        fn = CAMPAIGNS[name]
        n = inspect.signature(fn).parameters["n_instances"].default
        out.append(fn(max(1, int(round(n * scale))), seed=seed))
    return out
