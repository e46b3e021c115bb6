"""Dense matrix kernels, norms and the seeded random streams used everywhere else.

All functions take plain ``numpy`` arrays and never mutate their inputs.
"""

from __future__ import annotations

import hashlib
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

# tolerance tiers: construction checks, verification checks, iteration stops
TOL_CONSTRUCT = 1e-8
TOL_VERIFY = 1e-10
TOL_ITER = 1e-12


class NumericalError(RuntimeError):
    """A numerical routine failed to produce a trustworthy result."""


class PreconditionError(ValueError):
    """An input violates the documented precondition of an operation."""


class SingularMatrixError(NumericalError):
    pass


def as_matrix(m, name="matrix"):
    """Return ``m`` as a finite 2-D float array, raising otherwise."""
    a = np.atleast_2d(np.asarray(m, dtype=float))
    if a.ndim != 2 or a.shape[0] < 1 or a.shape[1] < 1:
        raise PreconditionError(f"{name} must be a non-empty 2-D array, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise PreconditionError(f"{name} has non-finite entries")
    return a


def inf_norm(m):
    """Maximum absolute row sum."""
    a = as_matrix(m)
    return float(np.max(np.sum(np.abs(a), axis=1)))


def l21_norm(m):
    """Sum over columns of the Euclidean column norms.

    Works on a single ``(N, F)`` signal or on a stack ``(..., N, F)``, in which
    case one value per leading index is returned.
    """
    a = np.asarray(m, dtype=float)
    if a.ndim == 1:
        return float(np.sqrt(np.sum(np.sort(a * a))))
    # sorting fixes the summation order, so relabelling rows cannot change the result
    out = np.sum(np.sqrt(np.sum(np.sort(a * a, axis=-2), axis=-2)), axis=-1)
    return float(out) if a.ndim == 2 else out


@dataclass(frozen=True)
class Spectrum:
    """Ascending eigenvalues and matching orthonormal eigenvectors (columns)."""

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray

    def reconstruct(self):
        v = self.eigenvectors
        return (v * self.eigenvalues) @ v.T


def is_symmetric(m, rtol=TOL_VERIFY):
    a = np.asarray(m, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        return False
    scale = np.linalg.norm(a)
    return np.linalg.norm(a - a.T) <= rtol * max(scale, np.finfo(float).tiny)


def sym_eig(m):
    """Eigendecomposition of a symmetric matrix.

    Backed by LAPACK's symmetric solver; results are re-checked against the
    reconstruction and orthonormality contracts of :class:`Spectrum`.
    """
    a = as_matrix(m)
    if not is_symmetric(a):
        raise PreconditionError("sym_eig requires a symmetric matrix")
    a = 0.5 * (a + a.T)
    w, v = np.linalg.eigh(a)
    scale = max(np.linalg.norm(a), 1.0)
    if (np.linalg.norm((v * w) @ v.T - a) > TOL_CONSTRUCT * scale
            or np.linalg.norm(v.T @ v - np.eye(a.shape[0])) > TOL_CONSTRUCT):
        raise NumericalError("symmetric eigendecomposition failed its reconstruction check")
    return Spectrum(w, v)


def _power_iteration(gram, tol=TOL_ITER, max_iter=10_000):
    n = gram.shape[0]
    v = np.ones(n) / np.sqrt(n)
    lam = 0.0
    for _ in range(max_iter):
        w = gram @ v
        nw = np.linalg.norm(w)
        if nw == 0.0:
            return 0.0
        v = w / nw
        if abs(nw - lam) <= tol * nw:
            return nw
        lam = nw
    return None


def spectral_norm(m, method="eig"):
    """Largest singular value of ``m``.

    ``method="eig"`` takes the top eigenvalue of MᵀM (authoritative path);
    ``method="power"`` runs power iteration on MᵀM and falls back to the
    eigendecomposition when it does not converge.
    """
    a = as_matrix(m)
    gram = a.T @ a if a.shape[0] >= a.shape[1] else a @ a.T
    if method == "power":
        lam = _power_iteration(gram)
        if lam is not None:
            return float(np.sqrt(max(lam, 0.0)))
    elif method != "eig":
        raise ValueError(f"unknown method {method!r}")
    w = sym_eig(gram).eigenvalues
    top = float(w[-1])
    if not np.isfinite(top):
        raise NumericalError("spectral norm is not finite")
    return float(np.sqrt(max(top, 0.0)))


def sym_sqrt(m):
    """Principal square root of a symmetric positive semidefinite matrix."""
    spec = sym_eig(m)
    if spec.eigenvalues[0] < -TOL_CONSTRUCT * max(1.0, abs(spec.eigenvalues[-1])):
        raise PreconditionError("matrix is not positive semidefinite")
    w = np.clip(spec.eigenvalues, 0.0, None)
    v = spec.eigenvectors
    return (v * np.sqrt(w)) @ v.T


def solve_linear(m, rhs):
    """Solve ``M X = rhs`` by LU with partial pivoting.

    Raises :class:`SingularMatrixError` when a pivot falls below 1e-12.
    """
    a = as_matrix(m, "M")
    if a.shape[0] != a.shape[1]:
        raise PreconditionError("solve_linear requires a square matrix")
    b = np.asarray(rhs, dtype=float)
    vector = b.ndim == 1
    b = b.reshape(a.shape[0], -1)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", scipy.linalg.LinAlgWarning)
        lu, piv = scipy.linalg.lu_factor(a, check_finite=True)
    if np.min(np.abs(np.diag(lu))) <= TOL_ITER:
        raise SingularMatrixError("matrix is singular to working tolerance")
    x = scipy.linalg.lu_solve((lu, piv), b)
    return x.ravel() if vector else x


# ----------------------------------------------------------------------------
# random streams

_MASK64 = (1 << 64) - 1


def _mix64(value):
    # splitmix64 finalizer
    z = (value + 0x9E3779B97F4A7C15) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def _tag_to_int(tag):
    if isinstance(tag, (int, np.integer)):
        return int(tag) & _MASK64
    digest = hashlib.blake2b(str(tag).encode(), digest_size=8).digest()
    return int.from_bytes(digest, "little")


@dataclass
class RngStream:
    """A seeded Philox4x64-10 stream identified by ``(seed, stream_id)``.

    Equal ``(seed, stream_id)`` pairs always produce identical draws. Streams
    are single-owner: give each worker its own via :meth:`child`.
    """

    seed: int
    stream_id: int = 0
    algorithm: str = field(default="philox4x64-10", init=False)

    def __post_init__(self):
        self.seed = int(self.seed) & _MASK64
        self.stream_id = int(self.stream_id) & _MASK64
        key = np.array([self.seed, self.stream_id], dtype=np.uint64)
        self.generator = np.random.Generator(np.random.Philox(key=key))

    def child(self, *tags):
        """Deterministically derive an independent stream from this one."""
        sid = self.stream_id
        for tag in tags:
            sid = _mix64(sid ^ _mix64(_tag_to_int(tag)))
        return RngStream(self.seed, sid)

    def normal(self, size=None):
        return self.generator.standard_normal(size)

    def uniform(self, low=0.0, high=1.0, size=None):
        return self.generator.uniform(low, high, size)

    def permutation(self, n):
        return self.generator.permutation(n)

    def integers(self, low, high=None, size=None):
        return self.generator.integers(low, high, size)
