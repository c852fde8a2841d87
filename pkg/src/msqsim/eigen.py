"""Free-qubit eigenbasis and the reduced eigenstate model.

The generalized problem H0 psi = E_n E psi is reduced to a standard Hermitian
one through the Cholesky factor of the mass matrix and solved densely.  The
reduced model keeps the lowest ``n_eig`` states; energies are referenced to
the ground state so the ground coefficient carries no free phase.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
from scipy.constants import e as E_CHARGE, h as PLANCK, hbar as HBAR

from .qubit import QubitOperators, QubitSpec, assemble_operators


@dataclass(frozen=True)
class EigenBasis:
    energies_abs: np.ndarray       # absolute eigenvalues (J)
    vectors: np.ndarray            # (n_psi, n_eig), E-orthonormal columns

    @property
    def n_eig(self) -> int:
        return self.energies_abs.shape[0]

    @property
    def energies(self) -> np.ndarray:
        """Energies relative to the ground state (J)."""
        return self.energies_abs - self.energies_abs[0]

    @property
    def frequencies(self) -> np.ndarray:
        """Level frequencies relative to the ground state (Hz)."""
        return self.energies / PLANCK

    def transition(self, m: int, k: int) -> float:
        """(E_k - E_m)/h in Hz."""
        return (self.energies_abs[k] - self.energies_abs[m]) / PLANCK


def solve_eigenbasis(ops: QubitOperators, n_eig: int) -> EigenBasis:
    if not 1 <= n_eig < ops.n:
        raise ValueError(f"n_eig must lie in [1, {ops.n - 1}]")
    E = ops.E.toarray()
    H = ops.H0.toarray()
    # raises LinAlgError if E is not SPD
    Lc = np.linalg.cholesky(E)
    A = sla.solve_triangular(Lc, sla.solve_triangular(Lc, H, lower=True).conj().T,
                             lower=True).conj().T
    A = 0.5 * (A + A.conj().T)
    w, y = sla.eigh(A, subset_by_index=(0, n_eig - 1))
    vecs = sla.solve_triangular(Lc.conj().T, y, lower=False)
    vecs = vecs.astype(complex)
    for k in range(n_eig):
        col = vecs[:, k]
        i = np.argmax(np.abs(col))
        col *= np.abs(col[i]) / col[i]
        nrm = np.sqrt(np.vdot(col, ops.E @ col).real)
        vecs[:, k] = col / nrm
    return EigenBasis(w, vecs)


def qubit_levels(spec: QubitSpec, n_nodes: int, n_eig: int = 3) -> EigenBasis:
    return solve_eigenbasis(assemble_operators(spec, n_nodes), n_eig)


def converge_mesh(spec: QubitSpec, start: int = 32, rtol: float = 1e-4,
                  max_nodes: int = 8192) -> tuple[int, float]:
    """Double the phase-mesh node count until f01 changes by less than
    ``rtol``; returns (node count, f01 in Hz)."""
    n = start
    prev = qubit_levels(spec, n, 2).transition(0, 1)
    while n < max_nodes:
        n *= 2
        cur = qubit_levels(spec, n, 2).transition(0, 1)
        if abs(cur - prev) <= rtol * abs(cur):
            return n, cur
        prev = cur
    raise RuntimeError(f"f01 not converged to {rtol} at {max_nodes} nodes")


@dataclass(frozen=True)
class ReducedModel:
    energies: np.ndarray       # E_n - E_0 (J), diagonal of the energy matrix
    charge: np.ndarray         # psi_m^H Q psi_n, anti-Hermitian
    beta: float

    @property
    def n_eig(self) -> int:
        return self.energies.shape[0]

    @property
    def omega(self) -> np.ndarray:
        return self.energies / HBAR

    @property
    def n_matrix(self) -> np.ndarray:
        """Charge matrix elements <m|n|k> = -i Q_mk (Hermitian)."""
        return -1j * self.charge

    def truncate(self, n_eig: int) -> "ReducedModel":
        return ReducedModel(self.energies[:n_eig], self.charge[:n_eig, :n_eig], self.beta)


def build_reduced_model(ops: QubitOperators, basis: EigenBasis) -> ReducedModel:
    psi = basis.vectors
    charge = psi.conj().T @ (ops.Q @ psi)
    return ReducedModel(basis.energies.copy(), charge, ops.beta)


@dataclass(frozen=True)
class ReducedState:
    c_now: np.ndarray          # c^(j+1/2)
    c_prev: np.ndarray         # c^(j-1/2)
    step: int = 0


def reduced_rhs(model: ReducedModel, c, v_port):
    return -1j * model.omega * c - (2 * E_CHARGE * model.beta / HBAR) * v_port * (model.charge @ c)


def reduced_start(model: ReducedModel, c0: np.ndarray, dt: float) -> ReducedState:
    """Undriven start: exact phase rotation by +/- dt/2."""
    c0 = np.asarray(c0, dtype=complex)
    ph = np.exp(-1j * model.omega * dt / 2)
    return ReducedState(c0 * ph, c0 / ph, 0)


def step_schrodinger_reduced(model: ReducedModel, state: ReducedState, v_port: float,
                             dt: float) -> ReducedState:
    nxt = state.c_prev + 2 * dt * reduced_rhs(model, state.c_now, v_port)
    return ReducedState(nxt, state.c_now, state.step + 1)


def reduced_stability_dt(model: ReducedModel, v_max: float) -> float:
    """hbar / rho(diag(E) - i 2 e beta Vmax Q); the matrix is Hermitian."""
    K = np.diag(model.energies).astype(complex) \
        - 1j * 2 * E_CHARGE * model.beta * v_max * model.charge
    K = 0.5 * (K + K.conj().T)
    rho = np.max(np.abs(np.linalg.eigvalsh(K)))
    if rho == 0:
        return np.inf
    return HBAR / rho


def transmon_asymptotic_oracle(spec: QubitSpec) -> tuple[float, float]:
    """Large E_J/E_C estimates (f01, anharmonicity) in Hz.

    f01 ~ sqrt(8 E_J E_C) - E_C, anharmonicity ~ -E_C.
    """
    if spec.kind != "transmon":
        raise ValueError("asymptotic oracle applies to transmons only")
    ratio = spec.E_J / spec.E_C
    if ratio < 20:
        raise ValueError(f"E_J/E_C = {ratio:.3g} below the asymptotic range (needs >= 20)")
    return (np.sqrt(8 * spec.E_J * spec.E_C) - spec.E_C) / PLANCK, -spec.E_C / PLANCK
