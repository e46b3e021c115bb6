"""FIR graph filters, their frequency response, size and Lipschitz constant."""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from numpy.polynomial import polynomial as P

from .numerics import PreconditionError, inf_norm, sym_eig

_IMAG_TOL = 1e-7


@dataclass(frozen=True, eq=False)
class FilterBank:
    """Taps ``H_0..H_K`` stacked as an array of shape ``(K+1, F, G)``.

    ``interval`` is the spectral interval [λ_l, λ_h] on which the size and
    Lipschitz constant are measured.
    """

    taps: np.ndarray
    interval: tuple = (-1.0, 1.0)

    def __post_init__(self):
        taps = np.asarray(self.taps, dtype=float)
        if taps.ndim == 1:
            taps = taps[:, None, None]
        if taps.ndim != 3 or taps.shape[0] < 1:
            raise PreconditionError(f"taps must have shape (K+1, F, G), got {taps.shape}")
        if not np.all(np.isfinite(taps)):
            raise PreconditionError("filter taps must be finite")
        lo, hi = (float(v) for v in self.interval)
        if not lo <= hi:
            raise PreconditionError("interval must satisfy lo <= hi")
        object.__setattr__(self, "taps", taps)
        object.__setattr__(self, "interval", (lo, hi))

    def __eq__(self, other):
        if not isinstance(other, FilterBank):
            return NotImplemented
        return self.interval == other.interval and np.array_equal(self.taps, other.taps)

    __hash__ = None

    @property
    def order(self):
        return self.taps.shape[0] - 1

    @property
    def in_dim(self):
        return self.taps.shape[1]

    @property
    def out_dim(self):
        return self.taps.shape[2]

    def with_interval(self, interval):
        return FilterBank(self.taps, interval)

    def with_taps(self, taps):
        return FilterBank(taps, self.interval)

    def to_dict(self):
        return {
            "order": self.order,
            "in_dim": self.in_dim,
            "out_dim": self.out_dim,
            "interval": list(self.interval),
            "taps": [h.tolist() for h in self.taps],
        }

    @classmethod
    def from_dict(cls, d):
        taps = np.asarray(d["taps"], dtype=float).reshape(d["order"] + 1, d["in_dim"], d["out_dim"])
        return cls(taps, tuple(d["interval"]))

    def to_json(self):
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))


def shift_sequence(s, x, order):
    """``[x, Sx, S²x, ...]`` up to ``S^order x`` by repeated one-hop shifts."""
    z = [x]
    for _ in range(order):
        z.append(s @ z[-1])
    return z


def apply_filter(fb: FilterBank, s, x):
    """Y = Σ_k S^k X H_k, evaluated with the shift recursion Z_k = S Z_{k-1}.

    ``x`` may be a single signal ``(N, F)`` or a stack ``(..., N, F)``.
    """
    s = np.asarray(s, dtype=float)
    x = np.asarray(x, dtype=float)
    if s.ndim != 2 or s.shape[0] != s.shape[1]:
        raise PreconditionError("support must be square")
    if x.ndim < 2 or x.shape[-2] != s.shape[0] or x.shape[-1] != fb.in_dim:
        raise PreconditionError(f"signal shape {x.shape} incompatible with N={s.shape[0]}, F={fb.in_dim}")
    z = x
    y = z @ fb.taps[0]
    for k in range(1, fb.order + 1):
        z = s @ z
        y = y + z @ fb.taps[k]
    return y


def freq_response(fb: FilterBank, f, g, lam):
    """h_fg(λ) = Σ_k [H_k]_fg λ^k by Horner's rule."""
    if not (0 <= f < fb.in_dim and 0 <= g < fb.out_dim):
        raise IndexError(f"({f}, {g}) outside a {fb.in_dim}x{fb.out_dim} filter bank")
    acc = 0.0
    for k in range(fb.order, -1, -1):
        acc = acc * lam + fb.taps[k, f, g]
    return acc


def _real_roots(coeffs):
    c = np.trim_zeros(np.asarray(coeffs, dtype=float), "b")
    if c.size < 2:
        return np.empty(0)
    r = P.polyroots(c)
    keep = np.abs(r.imag) <= _IMAG_TOL * np.maximum(1.0, np.abs(r.real))
    return r.real[keep]


def abs_max_on_interval(coeffs, lo, hi):
    """max over [lo, hi] of |p(λ)| for ascending coefficients, and its argmax.

    Candidates are the endpoints plus the real critical points inside the
    interval; ties go to the smallest λ.
    """
    coeffs = np.asarray(coeffs, dtype=float)
    crit = _real_roots(P.polyder(coeffs)) if coeffs.size > 1 else np.empty(0)
    crit = crit[(crit > lo) & (crit < hi)]
    cand = np.unique(np.concatenate(([lo, hi], crit)))
    vals = np.abs(P.polyval(cand, coeffs))
    i = int(np.argmax(vals))
    return float(vals[i]), float(cand[i])


def size_matrix(fb: FilterBank):
    """Matrix of per-polynomial maxima |h_fg| and the maximizing λ for each."""
    lo, hi = fb.interval
    c = np.zeros((fb.in_dim, fb.out_dim))
    arg = np.zeros_like(c)
    for f in range(fb.in_dim):
        for g in range(fb.out_dim):
            c[f, g], arg[f, g] = abs_max_on_interval(fb.taps[:, f, g], lo, hi)
    return c, arg


def lipschitz_matrix(fb: FilterBank):
    """Matrix of per-polynomial max |h'_fg| and the maximizing λ for each."""
    lo, hi = fb.interval
    c = np.zeros((fb.in_dim, fb.out_dim))
    arg = np.full_like(c, lo)
    if fb.order == 0:
        return c, arg
    for f in range(fb.in_dim):
        for g in range(fb.out_dim):
            c[f, g], arg[f, g] = abs_max_on_interval(P.polyder(fb.taps[:, f, g]), lo, hi)
    return c, arg


def filter_size(fb: FilterBank):
    """C_H: infinity norm of the matrix of max |h_fg| over the interval."""
    return inf_norm(size_matrix(fb)[0])


def filter_lipschitz(fb: FilterBank):
    """Γ_H: infinity norm of the matrix of max |h'_fg| over the interval."""
    return inf_norm(lipschitz_matrix(fb)[0])


def default_interval(supports):
    """Smallest interval holding every eigenvalue of every given support."""
    supports = list(supports)
    if not supports:
        raise PreconditionError("need at least one support matrix")
    lo, hi = np.inf, -np.inf
    for s in supports:
        w = sym_eig(s).eigenvalues
        lo, hi = min(lo, w[0]), max(hi, w[-1])
    return float(lo), float(hi)
