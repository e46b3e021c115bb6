"""Graph neural network controllers and exact gradients through closed-loop rollouts.

Every trainable controller in the package exposes the same small surface so
that :func:`batch_loss_and_gradient` can back-propagate through time without
knowing which model it is driving:

``forward_cache(s, x) -> (u, cache)``
    evaluate on a stack of states ``(B, N, F)`` and keep what backward needs;
``backward(s, cache, du) -> (dx, grads)``
    vector-Jacobian product w.r.t. the input and the parameters (summed over
    the batch);
``arrays()`` / ``with_arrays(list)``
    flat view of the learnable parameters and its inverse.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .filters import (
    FilterBank,
    filter_lipschitz,
    filter_size,
    lipschitz_matrix,
    shift_sequence,
    size_matrix,
)
from .network import CostSpec, DistributedSystem
from .numerics import PreconditionError, RngStream, l21_norm

DIVERGENCE_THRESHOLD = 1e12


class DivergenceError(ArithmeticError):
    """The rollout state norm exceeded the divergence threshold."""

    def __init__(self, step, norm=float("inf")):
        super().__init__(f"rollout diverged at step {step} (|X| = {norm:.3g})")
        self.step = step
        self.norm = norm


def _tanh_grad(z, out):
    return 1.0 - out * out


NONLINEARITIES = {
    "tanh": (np.tanh, _tanh_grad),
    "identity": (lambda z: z, lambda z, out: np.ones_like(z)),
}


@dataclass(frozen=True)
class GnnParams:
    """A cascade of graph filters with a pointwise nonlinearity in between.

    With ``apply_nonlin_on_last=False`` (the default) the readout layer is
    linear, so a two-layer model is ``Φ(X) = H₂(σ(H₁(X)))``.
    """

    layers: tuple
    nonlinearity: str = "tanh"
    apply_nonlin_on_last: bool = False
    kind: str = field(default="gnn", compare=False)

    def __post_init__(self):
        layers = tuple(self.layers)
        if not layers:
            raise PreconditionError("need at least one layer")
        for a, b in zip(layers, layers[1:]):
            if a.out_dim != b.in_dim:
                raise PreconditionError("consecutive layer dimensions do not chain")
        if self.nonlinearity not in NONLINEARITIES:
            raise PreconditionError(f"unknown nonlinearity {self.nonlinearity!r}")
        object.__setattr__(self, "layers", layers)

    @property
    def in_dim(self):
        return self.layers[0].in_dim

    @property
    def out_dim(self):
        return self.layers[-1].out_dim

    @property
    def param_count(self):
        return int(sum(fb.taps.size for fb in self.layers))

    def arrays(self):
        return [fb.taps for fb in self.layers]

    def with_arrays(self, arrays):
        layers = tuple(fb.with_taps(a) for fb, a in zip(self.layers, arrays))
        return GnnParams(layers, self.nonlinearity, self.apply_nonlin_on_last, self.kind)

    def with_interval(self, interval):
        layers = tuple(fb.with_interval(interval) for fb in self.layers)
        return GnnParams(layers, self.nonlinearity, self.apply_nonlin_on_last, self.kind)

    def _activated(self, index):
        return index < len(self.layers) - 1 or self.apply_nonlin_on_last

    # controller interface
    def __call__(self, x, s):
        return gnn_forward(self, s, x)

    evaluate = __call__

    def describe(self):
        return {
            "kind": self.kind,
            "features": [fb.out_dim for fb in self.layers],
            "orders": [fb.order for fb in self.layers],
            "nonlinearity": self.nonlinearity,
            "param_count": self.param_count,
        }

    def forward_cache(self, s, x):
        sigma, _ = NONLINEARITIES[self.nonlinearity]
        cache = []
        for i, fb in enumerate(self.layers):
            shifts = shift_sequence(s, x, fb.order)
            z = shifts[0] @ fb.taps[0]
            for k in range(1, fb.order + 1):
                z = z + shifts[k] @ fb.taps[k]
            out = sigma(z) if self._activated(i) else z
            cache.append((shifts, z, out))
            x = out
        return x, cache

    def backward(self, s, cache, du):
        _, dsigma = NONLINEARITIES[self.nonlinearity]
        grads = [None] * len(self.layers)
        g = du
        for i in range(len(self.layers) - 1, -1, -1):
            fb = self.layers[i]
            shifts, z, out = cache[i]
            dz = g * dsigma(z, out) if self._activated(i) else g
            dz2 = dz.reshape(-1, dz.shape[-1])
            grads[i] = np.stack([sk.reshape(-1, sk.shape[-1]).T @ dz2 for sk in shifts])
            # Σ_k (Sᵀ)^k dz H_kᵀ in Horner form
            w = dz @ fb.taps[fb.order].T
            for k in range(fb.order - 1, -1, -1):
                w = s.T @ w + dz @ fb.taps[k].T
            g = w
        return g, grads

    # serialization
    def to_dict(self):
        return {
            "kind": self.kind,
            "nonlinearity": self.nonlinearity,
            "apply_nonlin_on_last": self.apply_nonlin_on_last,
            "layers": [fb.to_dict() for fb in self.layers],
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            tuple(FilterBank.from_dict(fb) for fb in d["layers"]),
            d["nonlinearity"],
            d["apply_nonlin_on_last"],
            d.get("kind", "gnn"),
        )

    def to_json(self):
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))


def init_gnn(features, orders, rng: RngStream, nonlinearity="tanh", interval=(-1.0, 1.0),
             apply_nonlin_on_last=False, kind="gnn"):
    """Random GNN with ``features = [F0, F1, ..., FL]`` and ``orders = [K1, ..., KL]``.

    Taps are uniform on ±(F_{l-1}(K_l+1))^{-1/2}.
    """
    if len(features) != len(orders) + 1:
        raise PreconditionError("need len(features) == len(orders) + 1")
    layers = []
    for i, k in enumerate(orders):
        fin, fout = features[i], features[i + 1]
        alpha = 1.0 / np.sqrt(fin * (k + 1))
        taps = rng.child("layer", i).uniform(-alpha, alpha, size=(k + 1, fin, fout))
        layers.append(FilterBank(taps, interval))
    return GnnParams(tuple(layers), nonlinearity, apply_nonlin_on_last, kind)


def gnn_forward(p: GnnParams, s, x):
    """Φ(X; S, H) on a single signal ``(N, F)`` or a stack ``(..., N, F)``."""
    s = np.asarray(s, dtype=float)
    x = np.asarray(x, dtype=float)
    if x.ndim < 2 or x.shape[-2] != s.shape[0] or x.shape[-1] != p.in_dim:
        raise PreconditionError(f"signal shape {x.shape} incompatible with the model")
    return p.forward_cache(s, x)[0]


def c_phi(p: GnnParams):
    """Product of the layer sizes."""
    return float(np.prod([filter_size(fb) for fb in p.layers]))


def gamma_phi(p: GnnParams):
    """Σ_l Γ_l / C_l (a layer with C_l = 0 also has Γ_l = 0 and adds nothing)."""
    total = 0.0
    for fb in p.layers:
        c = filter_size(fb)
        if c > 0.0:
            total += filter_lipschitz(fb) / c
    return total


# ----------------------------------------------------------------------------
# penalties


def _size_subgradient(fb: FilterBank):
    cmat, lam = size_matrix(fb)
    f = int(np.argmax(cmat.sum(axis=1)))
    grad = np.zeros_like(fb.taps)
    powers = np.arange(fb.order + 1)
    for g in range(fb.out_dim):
        h = np.polynomial.polynomial.polyval(lam[f, g], fb.taps[:, f, g])
        grad[:, f, g] = np.sign(h) * lam[f, g] ** powers
    return float(cmat[f].sum()), grad


def _lipschitz_subgradient(fb: FilterBank):
    gmat, lam = lipschitz_matrix(fb)
    grad = np.zeros_like(fb.taps)
    if fb.order == 0:
        return 0.0, grad
    f = int(np.argmax(gmat.sum(axis=1)))
    ks = np.arange(1, fb.order + 1)
    for g in range(fb.out_dim):
        dh = np.polynomial.polynomial.polyder(fb.taps[:, f, g])
        slope = np.polynomial.polynomial.polyval(lam[f, g], dh)
        grad[1:, f, g] = np.sign(slope) * ks * lam[f, g] ** (ks - 1)
    return float(gmat[f].sum()), grad


PENALTY_KINDS = ("none", "size", "lipschitz", "both")


def penalty_and_gradient(p: GnnParams, kind):
    """Value and subgradient of the stability penalties.

    ``size``: C_Φ = Π_l C_l;  ``lipschitz``: Σ_l Γ_l;
    ``both``: 0.5 (Σ_l Γ_l + C_Φ);  ``none``: 0.
    The maximizing row, polynomial and λ are held fixed when differentiating.
    """
    if kind not in PENALTY_KINDS:
        raise ValueError(f"unknown penalty kind {kind!r}")
    zeros = [np.zeros_like(fb.taps) for fb in p.layers]
    if kind == "none":
        return 0.0, zeros
    value = 0.0
    grads = zeros
    if kind in ("size", "both"):
        parts = [_size_subgradient(fb) for fb in p.layers]
        sizes = np.array([c for c, _ in parts])
        cphi = float(np.prod(sizes))
        w = 0.5 if kind == "both" else 1.0
        value += w * cphi
        for i, (_, g) in enumerate(parts):
            others = float(np.prod(np.delete(sizes, i)))
            grads[i] = grads[i] + w * others * g
    if kind in ("lipschitz", "both"):
        w = 0.5 if kind == "both" else 1.0
        for i, fb in enumerate(p.layers):
            gam, g = _lipschitz_subgradient(fb)
            value += w * gam
            grads[i] = grads[i] + w * g
    return value, grads


# ----------------------------------------------------------------------------
# back-propagation through the closed loop


def _stage_cost(x, u, cost: CostSpec):
    return (np.einsum("...nf,fg,...ng->...", x, cost.q_mat, x)
            + np.einsum("...nf,fg,...ng->...", u, cost.r_mat, u))


def batch_loss_and_gradient(model, d: DistributedSystem, cost: CostSpec, x0, horizon):
    """Rollout costs and their parameter gradient for a stack of initial states.

    Returns ``(losses, grads, diverged_at)``: ``losses`` has one entry per
    trajectory (``inf`` if it diverged), ``grads`` is the mean over the batch
    of the per-trajectory gradients with diverged trajectories contributing
    zero, and ``diverged_at`` holds the divergence step or -1.
    """
    if horizon < 1:
        raise PreconditionError("horizon must be >= 1")
    x = np.array(x0, dtype=float)
    if x.ndim == 2:
        x = x[None]
    nb = x.shape[0]
    s = d.support
    alive = np.ones(nb, dtype=bool)
    diverged_at = np.full(nb, -1)
    xs, us, caches = [], [], []
    for t in range(horizon):
        norms = l21_norm(x)
        bad = alive & ~(norms <= DIVERGENCE_THRESHOLD)
        if bad.any():
            diverged_at[bad] = t
            alive &= ~bad
            x[~alive] = 0.0
        u, cache = model.forward_cache(s, x)
        xs.append(x)
        us.append(u)
        caches.append(cache)
        x = d.step(x, u)

    mask = alive.astype(float)[:, None, None]
    losses = np.zeros(nb)
    for xt, ut in zip(xs, us):
        losses += _stage_cost(xt, ut, cost)
    losses[~alive] = np.inf

    grads = [np.zeros_like(a) for a in model.arrays()]
    lam_next = np.zeros_like(xs[0])
    q2, r2 = 2.0 * cost.q_mat, 2.0 * cost.r_mat
    a_t, ab_t = d.sys_graph.T, d.sys_feat.T
    b_t, bb_t = d.ctrl_graph.T, d.ctrl_feat.T
    for t in range(horizon - 1, -1, -1):
        du = mask * (us[t] @ r2) + b_t @ lam_next @ bb_t
        dx_ctrl, g = model.backward(s, caches[t], du)
        for acc, gi in zip(grads, g):
            acc += gi
        lam_next = mask * (xs[t] @ q2) + a_t @ lam_next @ ab_t + dx_ctrl
    grads = [g / nb for g in grads]
    return losses, grads, diverged_at


def closed_loop_gradient(p, d: DistributedSystem, cost: CostSpec, x0, horizon):
    """Loss Σ_{t<T} (‖X Q^½‖² + ‖U R^½‖²) of one rollout and its exact gradient.

    Raises :class:`DivergenceError` if the state norm exceeds 1e12.
    """
    x0 = np.asarray(x0, dtype=float)
    if x0.ndim != 2:
        raise PreconditionError("x0 must be a single (N, F) signal")
    losses, grads, div = batch_loss_and_gradient(p, d, cost, x0[None], horizon)
    if div[0] >= 0:
        raise DivergenceError(int(div[0]))
    return float(losses[0]), grads
