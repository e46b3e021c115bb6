"""Closed-loop rollouts, quadratic costs and trajectory stability classification."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

from .gnn import DIVERGENCE_THRESHOLD
from .network import CostSpec, DistributedSystem
from .numerics import PreconditionError, l21_norm, sym_sqrt

BLOWUP_FACTOR = 1e3


@dataclass(frozen=True)
class Disturbance:
    """Additive control disturbance E(t), t = 0..T-1, stacked as (T, N, G)."""

    signals: np.ndarray

    def __post_init__(self):
        sig = np.asarray(self.signals, dtype=float)
        if sig.ndim != 3 or not np.all(np.isfinite(sig)):
            raise PreconditionError("disturbance must be a finite (T, N, G) array")
        object.__setattr__(self, "signals", sig)

    @property
    def summable_norm(self):
        return float(np.sum(l21_norm(self.signals)))

    @classmethod
    def geometric(cls, e0, rate, horizon):
        e0 = np.asarray(e0, dtype=float)
        return cls(np.stack([rate**t * e0 for t in range(horizon)]))


@dataclass
class TrajectoryRecord:
    states: list
    controls: list
    step_costs: list
    total_cost: float
    state_norms: list
    stable: bool
    diverged_at: int | None = None

    @property
    def horizon(self):
        return len(self.controls)

    def to_csv(self, fh=None):
        """Write ``t, state_norm, control_norm, step_cost`` rows; returns the text if ``fh`` is None."""
        out = fh if fh is not None else io.StringIO()
        w = csv.writer(out, lineterminator="\n")
        w.writerow(["t", "state_norm", "control_norm", "step_cost"])
        for t, xn in enumerate(self.state_norms):
            if t < len(self.controls):
                w.writerow([t, repr(float(xn)), repr(l21_norm(self.controls[t])), repr(float(self.step_costs[t]))])
            else:
                w.writerow([t, repr(float(xn)), "", ""])
        if fh is None:
            return out.getvalue()
        return None


def _weighted_sq(x, root):
    y = x @ root
    return np.sum(y * y, axis=(-2, -1))


def rollout_batch(d: DistributedSystem, ctrl, x0, horizon, cost: CostSpec | None = None, disturbance=None):
    """Vectorized rollout of a stack of initial states ``(B, N, F)``.

    Returns a dict with ``states (B, T+1, N, F)``, ``controls (B, T, N, G)``,
    ``step_costs (B, T)`` and ``diverged_at (B,)`` (-1 when finite). Entries
    after a divergence are zero.
    """
    if horizon < 1:
        raise PreconditionError("horizon must be >= 1")
    cost = cost or CostSpec.identity(d.f_dim, d.g_dim)
    q_half, r_half = sym_sqrt(cost.q_mat), sym_sqrt(cost.r_mat)
    x = np.array(x0, dtype=float)
    if x.ndim == 2:
        x = x[None]
    nb = x.shape[0]
    if x.shape[1:] != (d.n, d.f_dim):
        raise PreconditionError(f"initial states have shape {x.shape}, expected (B, {d.n}, {d.f_dim})")
    if disturbance is not None:
        e = np.asarray(disturbance.signals if isinstance(disturbance, Disturbance) else disturbance, dtype=float)
        if e.ndim == 3:
            e = np.broadcast_to(e, (nb,) + e.shape)
        if e.shape[1] < horizon:
            raise PreconditionError("disturbance shorter than the horizon")
    states = np.zeros((nb, horizon + 1, d.n, d.f_dim))
    controls = np.zeros((nb, horizon, d.n, d.g_dim))
    step_costs = np.zeros((nb, horizon))
    diverged_at = np.full(nb, -1)
    alive = np.ones(nb, dtype=bool)
    for t in range(horizon + 1):
        bad = alive & ~(l21_norm(x) <= DIVERGENCE_THRESHOLD)
        states[:, t] = x
        if bad.any():
            diverged_at[bad] = t
            alive &= ~bad
            x[~alive] = 0.0
        if t == horizon:
            break
        if getattr(ctrl, "time_varying", False):
            u = np.asarray(ctrl.at(t, x), dtype=float)
        else:
            u = np.asarray(ctrl(x, d.support), dtype=float)
        if disturbance is not None:
            u = u + e[:, t]
        u[~alive] = 0.0
        controls[:, t] = u
        step_costs[:, t] = _weighted_sq(x, q_half) + _weighted_sq(u, r_half)
        x = d.step(x, u)
    return {"states": states, "controls": controls, "step_costs": step_costs, "diverged_at": diverged_at}


def _stable_from_norms(norms, diverged):
    if diverged:
        return False
    n0 = norms[0]
    if n0 == 0.0:
        return bool(np.all(np.asarray(norms) == 0.0))
    return bool(max(norms) <= BLOWUP_FACTOR * n0 and norms[-1] < n0)


def stable_mask(batch):
    """Per-trajectory stability for the output of :func:`rollout_batch`."""
    norms = l21_norm(batch["states"])
    return np.array([_stable_from_norms(list(nr), dv >= 0) for nr, dv in zip(norms, batch["diverged_at"])])


def record_from_batch(batch, i):
    dv = int(batch["diverged_at"][i])
    stop = dv if dv >= 0 else batch["states"].shape[1] - 1
    states = list(batch["states"][i, : stop + 1])
    controls = list(batch["controls"][i, :stop])
    costs = [float(c) for c in batch["step_costs"][i, :stop]]
    norms = [float(v) for v in l21_norm(np.asarray(states))]
    rec = TrajectoryRecord(states, controls, costs, float(np.sum(costs)), norms, False,
                           dv if dv >= 0 else None)
    rec.stable = classify_stable(rec)
    return rec


def rollout(d: DistributedSystem, ctrl, x0, horizon, cost: CostSpec | None = None, dist: Disturbance | None = None):
    """Simulate X(t+1) = A X Ā + B U B̄ with U = ctrl(X, S) (+ E) for ``horizon`` steps."""
    x0 = np.asarray(x0, dtype=float)
    if x0.ndim != 2:
        raise PreconditionError("x0 must be a single (N, F) signal")
    batch = rollout_batch(d, ctrl, x0[None], horizon, cost, None if dist is None else dist.signals[None])
    return record_from_batch(batch, 0)


def classify_stable(rec: TrajectoryRecord):
    """Stable iff no divergence, no 10³ blow-up, and the final norm is below the initial one.

    A trajectory that starts and stays at zero counts as stable.
    """
    return _stable_from_norms(rec.state_norms, rec.diverged_at is not None)


class NotApplicableError(ValueError):
    """A sufficient-condition check was requested where its hypothesis fails."""


def iss_check(d: DistributedSystem, p, x0, dist: Disturbance, horizon, interval=None):
    """Audit Σ_{t≤T} ‖X(t)‖ ≤ β₀ + β₁ Σ_t ‖E(t)‖ on a disturbed GNN rollout.

    β₀ = ‖X(0)‖/(1−ξ), β₁ = ‖B‖₂‖B̄‖_∞/(1−ξ). Raises
    :class:`NotApplicableError` when ξ ≥ 1.
    """
    from .stability import stability_constant

    rep = stability_constant(d, p, interval=interval)
    if not rep.is_sufficiently_stable:
        raise NotApplicableError(f"stability constant xi = {rep.xi:.4g} >= 1")
    rec = rollout(d, p, x0, horizon, dist=dist)
    lhs = float(np.sum(rec.state_norms))
    e = dist.signals[:horizon]
    rhs = rep.beta0(x0) + rep.beta1 * float(np.sum(l21_norm(e)))
    return lhs, rhs, bool(lhs <= rhs + 1e-9)


def write_records_csv(records, fh, labels=None):
    """Concatenate several trajectory records into one long CSV table."""
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["trajectory", "t", "state_norm", "control_norm", "step_cost"])
    for i, rec in enumerate(records):
        label = labels[i] if labels is not None else i
        for t, xn in enumerate(rec.state_norms):
            if t < len(rec.controls):
                w.writerow([label, t, repr(float(xn)), repr(l21_norm(rec.controls[t])), repr(float(rec.step_costs[t]))])
            else:
                w.writerow([label, t, repr(float(xn)), "", ""])
