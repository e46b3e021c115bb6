"""Random network systems: k-NN geometric graphs, system matrices, distances."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.sparse.csgraph import connected_components

from .numerics import (
    PreconditionError,
    RngStream,
    as_matrix,
    inf_norm,
    is_symmetric,
    spectral_norm,
    sym_eig,
)


class DisconnectedGraphError(ValueError):
    """The graph has more than one connected component."""


@dataclass(frozen=True)
class Graph:
    n: int
    edges: frozenset  # of (i, j) with i < j
    positions: np.ndarray | None = None

    def __post_init__(self):
        for i, j in self.edges:
            if i == j:
                raise PreconditionError("self-loops are not allowed")
            if not (0 <= i < j < self.n):
                raise PreconditionError(f"edge {(i, j)} is not a stored pair i < j < n")

    def adjacency(self):
        adj = np.zeros((self.n, self.n))
        for i, j in self.edges:
            adj[i, j] = adj[j, i] = 1.0
        return adj

    def degrees(self):
        return self.adjacency().sum(axis=1).astype(int)

    def is_connected(self):
        ncomp, _ = connected_components(self.adjacency(), directed=False)
        return ncomp == 1


def generate_geometric_graph(n, k, rng: RngStream):
    """Drop ``n`` points on the unit square and connect symmetric k-nearest neighbours.

    Edge {i, j} exists if j is among the k nearest points to i or vice versa.
    """
    if k < 1 or n < k + 1:
        raise PreconditionError(f"need k >= 1 and n >= k + 1 (n={n}, k={k})")
    pos = rng.uniform(size=(n, 2))
    return knn_graph(pos, k)


def knn_graph(positions, k):
    pos = np.asarray(positions, dtype=float)
    n = pos.shape[0]
    if k < 1 or n < k + 1:
        raise PreconditionError(f"need k >= 1 and n >= k + 1 (n={n}, k={k})")
    diff = pos[:, None, :] - pos[None, :, :]
    dist = np.sqrt(np.sum(diff * diff, axis=-1))
    np.fill_diagonal(dist, np.inf)
    # stable sort: ties resolve to the lower index
    nearest = np.argsort(dist, axis=1, kind="stable")[:, :k]
    edges = set()
    for i in range(n):
        for j in nearest[i]:
            edges.add((min(i, int(j)), max(i, int(j))))
    return Graph(n, frozenset(edges), pos)


def build_support(g: Graph):
    """Adjacency matrix divided by its largest-magnitude eigenvalue."""
    if not g.is_connected():
        raise DisconnectedGraphError("graph is disconnected; resample it")
    adj = g.adjacency()
    w = sym_eig(adj).eigenvalues
    top = max(abs(w[0]), abs(w[-1]))
    return adj / top


@dataclass(frozen=True)
class CostSpec:
    q_mat: np.ndarray
    r_mat: np.ndarray

    def __post_init__(self):
        q = as_matrix(self.q_mat, "q_mat")
        r = as_matrix(self.r_mat, "r_mat")
        if not (is_symmetric(q) and is_symmetric(r)):
            raise PreconditionError("cost matrices must be symmetric")
        if sym_eig(q).eigenvalues[0] < -1e-10:
            raise PreconditionError("q_mat must be positive semidefinite")
        if sym_eig(r).eigenvalues[0] <= 1e-10:
            raise PreconditionError("r_mat must be positive definite")
        object.__setattr__(self, "q_mat", q)
        object.__setattr__(self, "r_mat", r)

    @classmethod
    def identity(cls, f_dim=1, g_dim=1):
        return cls(np.eye(f_dim), np.eye(g_dim))


@dataclass(frozen=True)
class DistributedSystem:
    """The matrix tuple {S, A, Ā, B, B̄}.

    Dynamics: X(t+1) = A X(t) Ā + B U(t) B̄ with X N×F, U N×G.
    """

    support: np.ndarray  # S, N x N
    sys_graph: np.ndarray  # A, N x N
    sys_feat: np.ndarray  # Ā, F x F
    ctrl_graph: np.ndarray  # B, N x N
    ctrl_feat: np.ndarray  # B̄, G x F
    graph: Graph | None = field(default=None, compare=False)
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        names = ("support", "sys_graph", "sys_feat", "ctrl_graph", "ctrl_feat")
        for name in names:
            object.__setattr__(self, name, as_matrix(getattr(self, name), name))
        n = self.support.shape[0]
        f = self.sys_feat.shape[0]
        if self.support.shape != (n, n) or self.sys_graph.shape != (n, n) or self.ctrl_graph.shape != (n, n):
            raise PreconditionError("S, A and B must all be N x N")
        if self.sys_feat.shape != (f, f) or self.ctrl_feat.shape[1] != f:
            raise PreconditionError("Ā must be F x F and B̄ must be G x F")

    @property
    def n(self):
        return self.support.shape[0]

    @property
    def f_dim(self):
        return self.sys_feat.shape[0]

    @property
    def g_dim(self):
        return self.ctrl_feat.shape[0]

    def step(self, x, u):
        """One step of the dynamics; works on stacks ``(..., N, F)``."""
        return self.sys_graph @ x @ self.sys_feat + self.ctrl_graph @ u @ self.ctrl_feat

    # -- serialization ---------------------------------------------------
    def to_dict(self):
        d = {
            "n": self.n,
            "f_dim": self.f_dim,
            "g_dim": self.g_dim,
            "support": self.support.tolist(),
            "sys_graph": self.sys_graph.tolist(),
            "sys_feat": self.sys_feat.tolist(),
            "ctrl_graph": self.ctrl_graph.tolist(),
            "ctrl_feat": self.ctrl_feat.tolist(),
            "meta": self.meta,
        }
        if self.graph is not None:
            d["graph"] = {
                "n": self.graph.n,
                "edges": sorted(list(e) for e in self.graph.edges),
                "positions": None if self.graph.positions is None else self.graph.positions.tolist(),
            }
        return d

    @classmethod
    def from_dict(cls, d):
        graph = None
        if d.get("graph") is not None:
            gd = d["graph"]
            pos = None if gd["positions"] is None else np.asarray(gd["positions"])
            graph = Graph(gd["n"], frozenset(tuple(e) for e in gd["edges"]), pos)
        return cls(
            np.asarray(d["support"]),
            np.asarray(d["sys_graph"]),
            np.asarray(d["sys_feat"]),
            np.asarray(d["ctrl_graph"]),
            np.asarray(d["ctrl_feat"]),
            graph=graph,
            meta=dict(d.get("meta", {})),
        )

    def to_json(self):
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))


def _scaled_gaussian(rng, n, target):
    while True:
        v = rng.normal(n)
        top = np.max(np.abs(v))
        if top > 0.0:
            return v * (target / top)


def generate_system(g: Graph, a_norm=0.995, b_norm=1.0, f_dim=1, g_dim=1, rng: RngStream | None = None):
    """Random system whose A and B share the eigenvectors of S.

    The eigenvalues of A and B are standard Gaussian draws rescaled so that
    the largest magnitude equals ``a_norm`` and ``b_norm`` respectively.
    Feature matrices are identity (F = G = 1 in every experiment).
    """
    if a_norm < 0 or b_norm <= 0:
        raise PreconditionError("a_norm must be >= 0 and b_norm > 0")
    if f_dim != g_dim:
        raise PreconditionError("only F = G systems with identity feature matrices are generated")
    if rng is None:
        rng = RngStream(0)
    s = build_support(g)
    v = sym_eig(s).eigenvectors
    a = _scaled_gaussian(rng, g.n, a_norm) if a_norm > 0 else np.zeros(g.n)
    b = _scaled_gaussian(rng, g.n, b_norm)
    return DistributedSystem(
        s,
        (v * a) @ v.T,
        np.eye(f_dim),
        (v * b) @ v.T,
        np.eye(g_dim, f_dim),
        graph=g,
        meta={"a_norm": a_norm, "b_norm": b_norm, "rng_seed": rng.seed, "rng_stream": rng.stream_id},
    )


def random_system(n, k=5, a_norm=0.995, b_norm=1.0, rng: RngStream | None = None, max_tries=100):
    """Generate a connected k-NN graph (resampling if needed) and a system on it."""
    if rng is None:
        rng = RngStream(0)
    for attempt in range(max_tries):
        g = generate_geometric_graph(n, k, rng.child("graph", attempt))
        if g.is_connected():
            return generate_system(g, a_norm, b_norm, rng=rng.child("system"))
    raise DisconnectedGraphError(f"no connected graph after {max_tries} draws")


def system_distance(d1: DistributedSystem, d2: DistributedSystem):
    """Smallest eps bounding all five constitutive matrix differences."""
    pairs = [
        (d1.support, d2.support, spectral_norm),
        (d1.sys_graph, d2.sys_graph, spectral_norm),
        (d1.sys_feat, d2.sys_feat, inf_norm),
        (d1.ctrl_graph, d2.ctrl_graph, spectral_norm),
        (d1.ctrl_feat, d2.ctrl_feat, inf_norm),
    ]
    for m1, m2, _ in pairs:
        if m1.shape != m2.shape:
            raise PreconditionError("systems have different dimensions")
    return max(norm(m1 - m2) for m1, m2, norm in pairs)


def _symmetric_direction(rng, n):
    while True:
        g = rng.normal((n, n))
        z = 0.5 * (g + g.T)
        nz = spectral_norm(z)
        if nz > 0.0:
            return z / nz


def perturb_system(d: DistributedSystem, eps, rng: RngStream):
    """Return D̂ with S, A, B each moved by ``eps`` in spectral norm.

    Each perturbation direction is an independent symmetric Gaussian matrix
    normalized to unit spectral norm; feature matrices are kept exact, so
    ``system_distance(d, result) == eps``.
    """
    if eps < 0:
        raise PreconditionError("eps must be nonnegative")
    if eps == 0:
        return replace(d, meta={**d.meta, "perturbation_eps": 0.0})
    n = d.n
    return replace(
        d,
        support=d.support + eps * _symmetric_direction(rng.child("S"), n),
        sys_graph=d.sys_graph + eps * _symmetric_direction(rng.child("A"), n),
        ctrl_graph=d.ctrl_graph + eps * _symmetric_direction(rng.child("B"), n),
        meta={**d.meta, "perturbation_eps": float(eps)},
    )
