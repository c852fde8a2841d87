"""Banded linear algebra used by the time-stepping loops.

All FETD matrices in this package are tridiagonal, optionally with the two
corner entries of a periodic wrap.  They are stored as ``Bands``: the three
diagonals plus ``top_right = A[0, n-1]`` and ``bottom_left = A[n-1, 0]``.
The numba kernels below work on the raw arrays so they can be called from
inside jitted stepping loops.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from numba import njit


class NumericalError(RuntimeError):
    """Raised when an iterative estimate fails or a run blows up."""


@dataclass(frozen=True)
class Bands:
    lower: np.ndarray
    diag: np.ndarray
    upper: np.ndarray
    top_right: complex = 0.0
    bottom_left: complex = 0.0

    @property
    def n(self) -> int:
        return self.diag.shape[0]

    @property
    def cyclic(self) -> bool:
        return self.top_right != 0 or self.bottom_left != 0

    @classmethod
    def from_matrix(cls, mat) -> "Bands":
        a = mat.toarray() if sp.issparse(mat) else np.asarray(mat)
        n = a.shape[0]
        if n < 3:
            raise ValueError("banded storage needs at least 3 unknowns")
        lower = np.diagonal(a, -1).copy()
        diag = np.diagonal(a).copy()
        upper = np.diagonal(a, 1).copy()
        rest = a.copy()
        for k in (-1, 0, 1):
            idx = np.arange(max(0, -k), min(n, n - k))
            rest[idx, idx + k] = 0
        tr, bl = rest[0, n - 1], rest[n - 1, 0]
        rest[0, n - 1] = rest[n - 1, 0] = 0
        if np.any(rest != 0):
            raise ValueError("matrix is not (cyclic) tridiagonal")
        return cls(lower, diag, upper, tr.item(), bl.item())

    def matvec(self, x: np.ndarray) -> np.ndarray:
        out = np.empty(x.shape, dtype=np.result_type(self.diag, self.lower, x))
        band_matvec(self.lower, self.diag, self.upper,
                    self.top_right, self.bottom_left, x, out)
        return out

    def to_sparse(self) -> sp.csr_matrix:
        n = self.n
        m = sp.diags([self.lower, self.diag, self.upper], [-1, 0, 1],
                     shape=(n, n), format="lil",
                     dtype=np.result_type(self.diag, self.lower))
        if self.cyclic:
            m[0, n - 1] += self.top_right
            m[n - 1, 0] += self.bottom_left
        return m.tocsr()


@njit(cache=True)
def band_matvec(lower, diag, upper, top_right, bottom_left, x, out):
    n = diag.shape[0]
    out[0] = diag[0] * x[0] + upper[0] * x[1] + top_right * x[n - 1]
    for i in range(1, n - 1):
        out[i] = lower[i - 1] * x[i - 1] + diag[i] * x[i] + upper[i] * x[i + 1]
    out[n - 1] = (lower[n - 2] * x[n - 2] + diag[n - 1] * x[n - 1]
                  + bottom_left * x[0])


@njit(cache=True)
def thomas_factor(lower, diag, upper):
    """Forward-elimination factors (modified upper diagonal, 1/pivot)."""
    n = diag.shape[0]
    cp = np.zeros(n, dtype=diag.dtype)
    inv = np.zeros(n, dtype=diag.dtype)
    piv = diag[0]
    if piv == 0:
        raise ZeroDivisionError("zero pivot in tridiagonal factorization")
    inv[0] = 1.0 / piv
    if n > 1:
        cp[0] = upper[0] * inv[0]
    for i in range(1, n):
        piv = diag[i] - lower[i - 1] * cp[i - 1]
        if piv == 0:
            raise ZeroDivisionError("zero pivot in tridiagonal factorization")
        inv[i] = 1.0 / piv
        if i < n - 1:
            cp[i] = upper[i] * inv[i]
    return cp, inv


@njit(cache=True)
def thomas_solve(lower, cp, inv, d, out):
    n = d.shape[0]
    out[0] = d[0] * inv[0]
    for i in range(1, n):
        out[i] = (d[i] - lower[i - 1] * out[i - 1]) * inv[i]
    for i in range(n - 2, -1, -1):
        out[i] -= cp[i] * out[i + 1]


@njit(cache=True)
def cyclic_solve(lower, cp, inv, z, sm_last, sm_scale, d, out):
    """Solve a cyclic tridiagonal system factored by ``TridiagonalSolver``.

    Sherman-Morrison on top of the Thomas factors of the corner-free matrix;
    ``z`` is the precomputed correction vector.
    """
    thomas_solve(lower, cp, inv, d, out)
    s = (out[0] + sm_last * out[out.shape[0] - 1]) * sm_scale
    for i in range(out.shape[0]):
        out[i] -= s * z[i]


class TridiagonalSolver:
    """Prefactored solver for a (cyclic) tridiagonal matrix."""

    def __init__(self, bands: Bands):
        self.bands = bands
        lower = np.ascontiguousarray(bands.lower)
        diag = np.array(bands.diag, copy=True)
        self.lower = lower
        self.cyclic = bands.cyclic
        if self.cyclic:
            gamma = -diag[0]
            alpha, beta = bands.top_right, bands.bottom_left
            diag[0] -= gamma
            diag[-1] -= alpha * beta / gamma
            self.cp, self.inv = thomas_factor(lower, diag, np.ascontiguousarray(bands.upper))
            u = np.zeros(bands.n, dtype=diag.dtype)
            u[0], u[-1] = gamma, beta
            self.z = np.empty_like(u)
            thomas_solve(lower, self.cp, self.inv, u, self.z)
            self.sm_last = alpha / gamma
            vz = self.z[0] + self.sm_last * self.z[-1]
            self.sm_scale = 1.0 / (1.0 + vz)
        else:
            self.cp, self.inv = thomas_factor(lower, diag, np.ascontiguousarray(bands.upper))
            self.z = np.zeros(bands.n, dtype=diag.dtype)
            self.sm_last = 0.0
            self.sm_scale = 0.0

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        rhs = np.ascontiguousarray(rhs)
        out = np.empty(rhs.shape, dtype=np.result_type(rhs, self.inv))
        if self.cyclic:
            cyclic_solve(self.lower, self.cp, self.inv, self.z,
                         self.sm_last, self.sm_scale, rhs, out)
        else:
            thomas_solve(self.lower, self.cp, self.inv, rhs, out)
        return out


def spectral_radius(K, M, rtol=1e-6, maxiter=10_000, seed=0):
    """Spectral radius of M^-1 K for a Hermitian pencil with M positive definite.

    Power iteration on M^-1 K gives the dominant eigenpair estimate; a few
    shifted inverse iterations then polish it, because the top of a 1-D
    finite-element spectrum is clustered and plain power iteration stalls
    well short of ``rtol``.
    """
    K = sp.csc_matrix(K)
    M = sp.csc_matrix(M)
    msolve = TridiagonalSolver(Bands.from_matrix(M))
    dtype = np.result_type(K.dtype, M.dtype)
    x = alternating_start(M.shape[0], seed).astype(dtype)

    def rq(v):
        return (np.vdot(v, K @ v) / np.vdot(v, M @ v)).real

    est = None
    for it in range(1, maxiter + 1):
        y = msolve.solve(K @ x)
        nrm = np.linalg.norm(y)
        if not np.isfinite(nrm) or nrm == 0:
            raise NumericalError("power iteration collapsed")
        x = y / nrm
        new = rq(x)
        if est is not None and abs(new - est) <= rtol * abs(new):
            break
        est = new
    else:
        raise NumericalError(f"power iteration did not converge in {maxiter} iterations")

    lam = new
    for _ in range(50):
        try:
            lu = spla.splu((K - lam * (1 + 1e-9) * M).tocsc())
        except RuntimeError:
            break
        y = lu.solve(M @ x)
        x = y / np.linalg.norm(y)
        new = rq(x)
        done = abs(new - lam) <= 1e-3 * rtol * abs(new)
        lam = new
        if done:
            break
    return abs(lam)


def alternating_start(n: int, seed: int = 0) -> np.ndarray:
    """Start vector close to the highest-frequency mode of a 1-D stencil."""
    rng = np.random.default_rng(seed)
    return (-1.0) ** np.arange(n) * (1.0 + 0.1 * rng.random(n))
