"""Comparison controllers: centralized LQR, MLP, per-node D-MLP, graph filter, open loop.

All controllers are callables ``ctrl(x, s) -> u`` on stacks of signals
``(..., N, F)`` and carry a ``describe()`` dictionary. The trainable ones
(:class:`MlpParams`, :class:`DmlpParams` and the GNN/GF models of
:mod:`gnnlqr.gnn`) also implement the forward/backward protocol used for
back-propagation through time.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .gnn import GnnParams, init_gnn
from .network import CostSpec, DistributedSystem
from .numerics import NumericalError, PreconditionError, RngStream, solve_linear


class RiccatiConvergenceError(NumericalError):
    pass


@dataclass(frozen=True)
class RiccatiSolution:
    p_mat: np.ndarray
    gain: np.ndarray
    iterations: int
    residual: float


def riccati_map(p, a, b, q, r):
    """One value-iteration step Q + AᵀPA − AᵀPB(R + BᵀPB)⁻¹BᵀPA."""
    bpa = b.T @ p @ a
    return q + a.T @ p @ a - bpa.T @ solve_linear(r + b.T @ p @ b, bpa)


def dare_residual(p, a, b, q, r):
    """Relative Frobenius residual of P against the Riccati map."""
    return float(np.linalg.norm(riccati_map(p, a, b, q, r) - p) / max(np.linalg.norm(p), 1e-300))


def solve_dare(a, b, q, r, tol=1e-11, max_iter=100_000):
    """Fixed-point value iteration for the discrete algebraic Riccati equation.

    Starts from P₀ = Q and stops when ‖P_{k+1} − P_k‖_F ≤ tol·‖P_k‖_F. The gain
    K* = (R + BᵀPB)⁻¹BᵀPA gives the control law u = −K* x.
    """
    a, b, q, r = (np.atleast_2d(np.asarray(m, dtype=float)) for m in (a, b, q, r))
    p = q.copy()
    for it in range(1, max_iter + 1):
        p_next = riccati_map(p, a, b, q, r)
        p_next = 0.5 * (p_next + p_next.T)
        if not np.all(np.isfinite(p_next)):
            raise RiccatiConvergenceError(f"Riccati iteration overflowed at step {it}")
        delta = np.linalg.norm(p_next - p)
        p = p_next
        scale = np.linalg.norm(p)
        if not (np.isfinite(delta) and np.isfinite(scale)):
            raise RiccatiConvergenceError(f"Riccati iteration overflowed at step {it}")
        if delta <= tol * scale:
            break
    else:
        raise RiccatiConvergenceError(
            f"Riccati iteration did not converge within {max_iter} iterations "
            "(system may not be stabilizable)")
    gain = solve_linear(r + b.T @ p @ b, b.T @ p @ a)
    return RiccatiSolution(p, gain, it, dare_residual(p, a, b, q, r))


class OptimalController:
    """Centralized stationary LQR ``u = −K* x`` for F = G = 1 network systems."""

    kind = "lqr"

    def __init__(self, d: DistributedSystem, cost: CostSpec | None = None):
        a, b, q, r = _scalar_feature_matrices(d, cost)
        self.riccati = solve_dare(a, b, q, r)
        self.gain = self.riccati.gain

    def __call__(self, x, s=None):
        return -(self.gain @ x)

    evaluate = __call__

    def value(self, x0):
        """x₀ᵀ P x₀, the infinite-horizon optimal cost from ``x0``."""
        x = np.asarray(x0, dtype=float)
        return np.einsum("...nf,nm,...mf->...", x, self.riccati.p_mat, x)

    def describe(self):
        return {"kind": self.kind, "param_count": 0}


def make_optimal_controller(d: DistributedSystem, cost: CostSpec | None = None):
    return OptimalController(d, cost)


def _scalar_feature_matrices(d: DistributedSystem, cost: CostSpec | None):
    if d.f_dim != 1 or d.g_dim != 1:
        raise PreconditionError("the optimal baseline is defined for F = G = 1")
    cost = cost or CostSpec.identity()
    n = d.n
    return (d.sys_graph * d.sys_feat[0, 0], d.ctrl_graph * d.ctrl_feat[0, 0],
            cost.q_mat[0, 0] * np.eye(n), cost.r_mat[0, 0] * np.eye(n))


class FiniteHorizonController:
    """Exact minimizer of the cost summed over t < T: the time-varying LQR.

    Gains come from the Riccati map run backward from P = 0, so with k steps
    left the optimal cost-to-go is xᵀP_k x. Over a truncated horizon this
    controller is never beaten, unlike the stationary DARE gain.
    """

    kind = "optim"
    time_varying = True

    def __init__(self, d: DistributedSystem, cost: CostSpec | None, horizon):
        a, b, q, r = _scalar_feature_matrices(d, cost)
        values = [np.zeros_like(q)]
        for _ in range(horizon):
            values.append(riccati_map(values[-1], a, b, q, r))
        self.horizon = horizon
        self.values = values
        # gain at time t uses the value with T - t - 1 steps remaining
        self.gains = [solve_linear(r + b.T @ values[horizon - t - 1] @ b, b.T @ values[horizon - t - 1] @ a)
                      for t in range(horizon)]

    def at(self, t, x):
        if not 0 <= t < self.horizon:
            raise PreconditionError(f"time {t} outside the controller horizon {self.horizon}")
        return -(self.gains[t] @ x)

    def value(self, x0):
        """x₀ᵀ P_T x₀, the minimal cost over the horizon."""
        x = np.asarray(x0, dtype=float)
        return np.einsum("...nf,nm,...mf->...", x, self.values[self.horizon], x)

    def describe(self):
        return {"kind": self.kind, "horizon": self.horizon, "param_count": 0}


class OpenLoopController:
    kind = "open_loop"

    def __init__(self, g_dim=1):
        self.g_dim = g_dim

    def __call__(self, x, s=None):
        x = np.asarray(x, dtype=float)
        return np.zeros(x.shape[:-1] + (self.g_dim,))

    evaluate = __call__

    def describe(self):
        return {"kind": self.kind, "param_count": 0}


def make_open_loop_controller(g_dim=1):
    return OpenLoopController(g_dim)


def make_gf_controller(arch, rng: RngStream, interval=(-1.0, 1.0), in_dim=1, out_dim=1):
    """Two linear graph-filter stages: order-K₁ with F₁ features, then a K₂ = 0 readout."""
    f1, k1 = arch
    return init_gnn([in_dim, f1, out_dim], [k1, 0], rng, nonlinearity="identity",
                    interval=interval, kind="gf")


def make_gnn_controller(arch, rng: RngStream, interval=(-1.0, 1.0), in_dim=1, out_dim=1):
    """Two-layer GNN: (F₁, K₁) tanh layer followed by a linear K₂ = 0 readout."""
    f1, k1 = arch
    return init_gnn([in_dim, f1, out_dim], [k1, 0], rng, nonlinearity="tanh",
                    interval=interval, kind="gnn")


# ----------------------------------------------------------------------------
# centralized MLP


def _as_column_stack(x):
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != 1:
        raise PreconditionError("MLP baselines are defined for F = G = 1")
    return x[..., 0]


def _flat(a, keep=1):
    """Collapse all leading batch axes into one, keeping the last ``keep`` axes."""
    return a.reshape((-1,) + a.shape[a.ndim - keep:])


@dataclass(frozen=True)
class MlpParams:
    """u = tanh(x W₁) W₂ on the stacked node states, no biases."""

    w1: np.ndarray  # N x (N F_mlp)
    w2: np.ndarray  # (N F_mlp) x N
    kind: str = "mlp"

    @property
    def param_count(self):
        return int(self.w1.size + self.w2.size)

    def arrays(self):
        return [self.w1, self.w2]

    def with_arrays(self, arrays):
        return MlpParams(arrays[0], arrays[1], self.kind)

    def forward_cache(self, s, x):
        v = _as_column_stack(x)
        h = np.tanh(v @ self.w1)
        return (h @ self.w2)[..., None], (v, h)

    def backward(self, s, cache, du):
        v, h = cache
        g = du[..., 0]
        dw2 = _flat(h).T @ _flat(g)
        dh = (g @ self.w2.T) * (1.0 - h * h)
        dw1 = _flat(v).T @ _flat(dh)
        return (dh @ self.w1.T)[..., None], [dw1, dw2]

    def __call__(self, x, s=None):
        return self.forward_cache(s, x)[0]

    evaluate = __call__

    def describe(self):
        return {"kind": self.kind, "hidden": self.w1.shape[1], "param_count": self.param_count}

    def to_dict(self):
        return {"kind": self.kind, "w1": self.w1.tolist(), "w2": self.w2.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(np.asarray(d["w1"]), np.asarray(d["w2"]))


def make_mlp_controller(n, hidden_factor, rng: RngStream):
    hidden = n * hidden_factor
    w1 = rng.child("w1").uniform(-1.0, 1.0, (n, hidden)) / np.sqrt(n)
    w2 = rng.child("w2").uniform(-1.0, 1.0, (hidden, n)) / np.sqrt(hidden)
    return MlpParams(w1, w2)


# ----------------------------------------------------------------------------
# per-node D-MLP


def neighbor_mean_operator(adjacency):
    """Row-normalized adjacency; isolated nodes get an all-zero row."""
    adj = (np.asarray(adjacency, dtype=float) != 0).astype(float)
    np.fill_diagonal(adj, 0.0)
    deg = adj.sum(axis=1, keepdims=True)
    return np.divide(adj, deg, out=np.zeros_like(adj), where=deg > 0)


@dataclass(frozen=True)
class DmlpParams:
    """One small MLP per node fed with its own state and its neighbours' mean.

    ``w1[i]`` is 2 x F_hidden and ``w2[i]`` has F_hidden entries; no weights
    are shared across nodes and there are no biases.
    """

    w1: np.ndarray  # N x 2 x H
    w2: np.ndarray  # N x H
    mean_op: np.ndarray  # N x N, fixed (not learned)
    positions: np.ndarray | None = None
    kind: str = "dmlp"

    @property
    def param_count(self):
        return int(self.w1.size + self.w2.size)

    def arrays(self):
        return [self.w1, self.w2]

    def with_arrays(self, arrays):
        return DmlpParams(arrays[0], arrays[1], self.mean_op, self.positions, self.kind)

    def forward_cache(self, s, x):
        v = _as_column_stack(x)
        z = np.stack([v, v @ self.mean_op.T], axis=-1)  # (..., N, 2)
        h = np.tanh(np.einsum("...nc,nch->...nh", z, self.w1))
        u = np.einsum("...nh,nh->...n", h, self.w2)
        return u[..., None], (z, h)

    def backward(self, s, cache, du):
        z, h = cache
        g = du[..., 0]
        dw2 = np.einsum("bn,bnh->nh", _flat(g), _flat(h, 2))
        dh = g[..., None] * self.w2 * (1.0 - h * h)
        dw1 = np.einsum("bnc,bnh->nch", _flat(z, 2), _flat(dh, 2))
        dz = np.einsum("...nh,nch->...nc", dh, self.w1)
        dv = dz[..., 0] + dz[..., 1] @ self.mean_op
        return dv[..., None], [dw1, dw2]

    def __call__(self, x, s=None):
        return self.forward_cache(s, x)[0]

    evaluate = __call__

    def describe(self):
        return {"kind": self.kind, "hidden": self.w1.shape[2], "inputs_per_node": 2,
                "param_count": self.param_count}

    def transfer_to(self, d: DistributedSystem):
        """Replicate per-node weights on another system by nearest node position."""
        if self.positions is None or d.graph is None or d.graph.positions is None:
            raise PreconditionError("transfer needs node positions on both systems")
        src, dst = self.positions, d.graph.positions
        dist = np.sum((dst[:, None, :] - src[None, :, :]) ** 2, axis=-1)
        nearest = np.argmin(dist, axis=1)
        return DmlpParams(self.w1[nearest], self.w2[nearest],
                          neighbor_mean_operator(d.graph.adjacency()), dst, self.kind)

    def to_dict(self):
        return {
            "kind": self.kind,
            "w1": self.w1.tolist(),
            "w2": self.w2.tolist(),
            "mean_op": self.mean_op.tolist(),
            "positions": None if self.positions is None else self.positions.tolist(),
        }

    @classmethod
    def from_dict(cls, d):
        pos = d.get("positions")
        return cls(np.asarray(d["w1"]), np.asarray(d["w2"]), np.asarray(d["mean_op"]),
                   None if pos is None else np.asarray(pos))


def make_dmlp_controller(n, hidden, rng: RngStream, adjacency=None, positions=None):
    """Per-node MLPs; the neighbourhood comes from ``adjacency`` (a graph's pattern)."""
    if adjacency is None:
        adjacency = np.zeros((n, n))
    w1 = rng.child("w1").uniform(-1.0, 1.0, (n, 2, hidden)) / np.sqrt(2.0)
    w2 = rng.child("w2").uniform(-1.0, 1.0, (n, hidden)) / np.sqrt(hidden)
    return DmlpParams(w1, w2, neighbor_mean_operator(adjacency), positions)


def controller_from_dict(d):
    kind = d.get("kind")
    if kind in ("gnn", "gf"):
        return GnnParams.from_dict(d)
    if kind == "mlp":
        return MlpParams.from_dict(d)
    if kind == "dmlp":
        return DmlpParams.from_dict(d)
    raise ValueError(f"unknown controller kind {kind!r}")


def controller_to_json(ctrl):
    return json.dumps(ctrl.to_dict())


def controller_from_json(text):
    return controller_from_dict(json.loads(text))


def closed_loop_radius(d: DistributedSystem, gain):
    """Spectral radius of A − B K for the F = G = 1 case."""
    m = d.sys_graph * d.sys_feat[0, 0] - (d.ctrl_graph * d.ctrl_feat[0, 0]) @ gain
    return float(np.max(np.abs(np.linalg.eigvals(m))))


def open_loop_radius(d: DistributedSystem):
    """Spectral radius of the uncontrolled map X ↦ A X Ā."""
    ra = np.max(np.abs(np.linalg.eigvals(d.sys_graph)))
    rf = np.max(np.abs(np.linalg.eigvals(d.sys_feat)))
    return float(ra * rf)

