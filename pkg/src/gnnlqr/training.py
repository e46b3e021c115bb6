"""Self-supervised training of controllers on random initial states with ADAM.

The loss of a batch is the mean closed-loop cost of its trajectories, plus an
optional stability penalty on the filter taps. Every few updates the model is
scored on a held-out validation set and the best snapshot is kept.
"""

from __future__ import annotations

import csv
import io
from dataclasses import asdict, dataclass, fields, replace

import numpy as np

from .controllers import (
    FiniteHorizonController,
    make_dmlp_controller,
    make_gf_controller,
    make_gnn_controller,
    make_mlp_controller,
)
from .filters import default_interval
from .gnn import PENALTY_KINDS, GnnParams, batch_loss_and_gradient, penalty_and_gradient
from .network import CostSpec, DistributedSystem
from .numerics import PreconditionError, RngStream
from .simulation import rollout_batch, stable_mask

TRAINABLE_KINDS = ("gnn", "gf", "mlp", "dmlp")


class TrainingFailure(RuntimeError):
    """More than half of a training batch diverged."""


@dataclass(frozen=True)
class TrainConfig:
    train_size: int = 500
    valid_size: int = 50
    batch_size: int = 20
    epochs: int = 30
    learning_rate: float = 0.01
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    validate_every: int = 5
    horizon: int = 50
    penalty: str = "none"
    seed: int = 0

    def __post_init__(self):
        for name in ("train_size", "valid_size", "batch_size", "epochs", "validate_every", "horizon"):
            if int(getattr(self, name)) < 1:
                raise PreconditionError(f"{name} must be positive")
        if self.batch_size > self.train_size:
            raise PreconditionError("batch_size must not exceed train_size")
        if self.learning_rate < 0 or self.adam_eps <= 0:
            raise PreconditionError("learning rate must be >= 0 and eps > 0")
        if not (0 <= self.adam_beta1 < 1 and 0 <= self.adam_beta2 < 1):
            raise PreconditionError("ADAM betas must lie in [0, 1)")
        if self.penalty not in PENALTY_KINDS:
            raise PreconditionError(f"penalty must be one of {PENALTY_KINDS}")

    def to_text(self):
        return "".join(f"{k} = {v}\n" for k, v in asdict(self).items())

    @classmethod
    def from_mapping(cls, mapping):
        types = {f.name: f.type for f in fields(cls)}
        kw = {}
        for k, v in mapping.items():
            if k not in types:
                raise KeyError(f"unknown training key {k!r}")
            kw[k] = _coerce(v, types[k])
        return cls(**kw)

    @classmethod
    def from_text(cls, text):
        return cls.from_mapping(parse_key_values(text))

    def updated(self, **kw):
        return replace(self, **kw)


def _coerce(value, type_name):
    if not isinstance(value, str):
        return value
    if type_name in ("int", int):
        return int(value)
    if type_name in ("float", float):
        return float(value)
    return value


def parse_key_values(text):
    """``key = value`` lines; blank lines and ``#`` comments are ignored."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key] = value
    return out


@dataclass
class AdamState:
    m: list
    v: list
    step: int = 0

    @classmethod
    def zeros_like(cls, arrays):
        return cls([np.zeros_like(a) for a in arrays], [np.zeros_like(a) for a in arrays])


def adam_step(params, grads, state: AdamState, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """Bias-corrected ADAM update of a list of arrays; returns the new list.

    ``state`` is advanced in place.
    """
    if len(params) != len(grads) or len(params) != len(state.m):
        raise PreconditionError("params, grads and ADAM state must have the same length")
    state.step += 1
    t = state.step
    out = []
    for i, (p, g) in enumerate(zip(params, grads)):
        if p.shape != g.shape or p.shape != state.m[i].shape:
            raise PreconditionError(f"shape mismatch in slot {i}: {p.shape} vs {g.shape}")
        state.m[i] = beta1 * state.m[i] + (1.0 - beta1) * g
        state.v[i] = beta2 * state.v[i] + (1.0 - beta2) * g * g
        mhat = state.m[i] / (1.0 - beta1**t)
        vhat = state.v[i] / (1.0 - beta2**t)
        out.append(p - lr * mhat / (np.sqrt(vhat) + eps))
    return out


def sample_initial_states(n_states, n_nodes, f_dim, rng: RngStream):
    """I.i.d. standard Gaussian initial states, shape ``(n_states, n_nodes, f_dim)``."""
    if min(n_states, n_nodes, f_dim) < 1:
        raise PreconditionError("counts must be positive")
    return rng.normal((n_states, n_nodes, f_dim))


def init_controller(kind, arch, d: DistributedSystem, rng: RngStream):
    """Fresh controller of the given kind.

    ``arch`` is ``(F1, K1)`` for ``gnn``/``gf``, the hidden-width factor for
    ``mlp`` (N·F units) and the per-node hidden width for ``dmlp``.
    """
    if kind == "gnn":
        return make_gnn_controller(arch, rng, default_interval([d.support]), d.f_dim, d.g_dim)
    if kind == "gf":
        return make_gf_controller(arch, rng, default_interval([d.support]), d.f_dim, d.g_dim)
    if kind == "mlp":
        return make_mlp_controller(d.n, int(arch), rng)
    if kind == "dmlp":
        pos = None if d.graph is None else d.graph.positions
        adj = d.graph.adjacency() if d.graph is not None else (d.support != 0)
        return make_dmlp_controller(d.n, int(arch), rng, adj, pos)
    raise ValueError(f"controller kind must be one of {TRAINABLE_KINDS}")


@dataclass
class TrainingLog:
    rows: list

    def best(self):
        checks = [r for r in self.rows if r["valid_cost"] is not None]
        return min(checks, key=lambda r: r["valid_cost"])

    @property
    def skipped(self):
        return int(sum(r["skipped"] for r in self.rows))

    def to_csv(self, fh=None):
        out = fh if fh is not None else io.StringIO()
        w = csv.writer(out, lineterminator="\n")
        w.writerow(["update", "epoch", "batch_loss", "penalty", "valid_cost", "valid_ratio", "skipped"])
        for r in self.rows:
            w.writerow([
                r["update"], r["epoch"],
                "" if r["batch_loss"] is None else repr(r["batch_loss"]),
                repr(r["penalty"]),
                "" if r["valid_cost"] is None else repr(r["valid_cost"]),
                "" if r.get("valid_ratio") is None else repr(r["valid_ratio"]),
                r["skipped"],
            ])
        return out.getvalue() if fh is None else None


def _trajectory_costs(model, d, cost, states, horizon):
    batch = rollout_batch(d, model, states, horizon, cost)
    costs = np.sum(batch["step_costs"], axis=1)
    costs[batch["diverged_at"] >= 0] = np.inf
    return costs


def validation_cost(model, d, cost, states, horizon):
    """Mean raw closed-loop cost; ``inf`` if any trajectory diverges."""
    return float(np.mean(_trajectory_costs(model, d, cost, states, horizon)))


def _optimal_costs(d, cost, states, horizon):
    """Finite-horizon optimal cost x0'P_T x0 per state, or None when F, G > 1."""
    try:
        opt = FiniteHorizonController(d, cost, horizon)
    except PreconditionError:
        return None
    x = states[..., 0]
    return np.einsum("bi,ij,bj->b", x, opt.values[horizon], x)


def _validate(model, d, cost, states, horizon, ref):
    costs = _trajectory_costs(model, d, cost, states, horizon)
    ratio = None if ref is None else float(np.mean(costs / ref))
    return float(np.mean(costs)), ratio


def train(kind, arch, d: DistributedSystem, cost: CostSpec, cfg: TrainConfig, init=None):
    """Minimize the mean rollout cost over random initial states.

    Returns ``(best_params, log)``. The best parameters are the validation
    checkpoint (taken before the first update and then every
    ``cfg.validate_every`` updates) with the lowest mean raw validation cost.
    The log also records the validation cost normalized by the optimal
    finite-horizon cost when that baseline exists.
    """
    root = RngStream(cfg.seed).child("train", kind)
    model = init if init is not None else init_controller(kind, arch, d, root.child("init"))
    penalized = isinstance(model, GnnParams) and cfg.penalty != "none"
    if isinstance(model, GnnParams):
        model = model.with_interval(default_interval([d.support]))
    train_x = sample_initial_states(cfg.train_size, d.n, d.f_dim, root.child("train_states"))
    valid_x = sample_initial_states(cfg.valid_size, d.n, d.f_dim, root.child("valid_states"))
    adam = AdamState.zeros_like(model.arrays())

    ref = _optimal_costs(d, cost, valid_x, cfg.horizon)
    rows = []
    best_cost, ratio = _validate(model, d, cost, valid_x, cfg.horizon, ref)
    best = model
    rows.append({"update": 0, "epoch": 0, "batch_loss": None, "penalty": 0.0,
                 "valid_cost": best_cost, "valid_ratio": ratio, "skipped": 0})
    update = 0
    for epoch in range(1, cfg.epochs + 1):
        order = root.child("shuffle", epoch).permutation(cfg.train_size)
        for start in range(0, cfg.train_size - cfg.batch_size + 1, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            losses, grads, div = batch_loss_and_gradient(model, d, cost, train_x[idx], cfg.horizon)
            skipped = int(np.sum(div >= 0))
            if skipped * 2 > len(idx):
                raise TrainingFailure(f"{skipped}/{len(idx)} trajectories diverged at update {update + 1}")
            pen = 0.0
            if penalized:
                pen, pgrads = penalty_and_gradient(model, cfg.penalty)
                grads = [g + pg for g, pg in zip(grads, pgrads)]
            arrays = adam_step(model.arrays(), grads, adam, cfg.learning_rate,
                               cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)
            model = model.with_arrays(arrays)
            update += 1
            finite = losses[np.isfinite(losses)]
            row = {"update": update, "epoch": epoch,
                   "batch_loss": float(np.mean(finite)) if finite.size else None,
                   "penalty": float(pen), "valid_cost": None, "valid_ratio": None, "skipped": skipped}
            if update % cfg.validate_every == 0:
                vc, row["valid_ratio"] = _validate(model, d, cost, valid_x, cfg.horizon, ref)
                row["valid_cost"] = vc
                if vc < best_cost:
                    best_cost, best = vc, model
            rows.append(row)
    return best, TrainingLog(rows)


@dataclass
class EvalSummary:
    costs: np.ndarray
    ratios: np.ndarray | None
    stable: np.ndarray

    @property
    def values(self):
        return self.ratios if self.ratios is not None else self.costs

    @property
    def mean(self):
        return float(np.mean(self.values))

    @property
    def median(self):
        return float(np.median(self.values))

    @property
    def std(self):
        return float(np.std(self.values))

    @property
    def stable_ratio(self):
        return float(np.mean(self.stable))

    def to_dict(self):
        return {"mean": self.mean, "median": self.median, "std": self.std,
                "stable_ratio": self.stable_ratio}


def evaluate(ctrl, d: DistributedSystem, cost: CostSpec, test_states, horizon,
             normalizer="optimal_cost", optimal=None):
    """Per-trajectory costs on ``test_states`` and their summary statistics.

    With ``normalizer="optimal_cost"`` each cost is divided by the cost of the
    centralized optimal controller for the same horizon, from the same initial
    state. Diverged trajectories get an infinite cost.
    """
    if normalizer not in ("optimal_cost", "raw"):
        raise ValueError("normalizer must be 'optimal_cost' or 'raw'")
    batch = rollout_batch(d, ctrl, test_states, horizon, cost)
    costs = np.sum(batch["step_costs"], axis=1)
    costs[batch["diverged_at"] >= 0] = np.inf
    ratios = None
    if normalizer == "optimal_cost":
        if optimal is None:
            optimal = FiniteHorizonController(d, cost, horizon)
        ref = np.sum(rollout_batch(d, optimal, test_states, horizon, cost)["step_costs"], axis=1)
        ratios = costs / ref
    return EvalSummary(costs, ratios, stable_mask(batch))
