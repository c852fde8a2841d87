"""Phase-basis FETD operators for transmon and fluxonium qubits.

The wavefunction is expanded in first-order hat functions on a uniform phase
mesh.  Transmon meshes are periodic on [-pi, pi) with the last node
identified with the first; fluxonium meshes span [-6 pi, 6 pi] with
homogeneous Dirichlet ends (boundary nodes removed).  Weighted mass
integrals use 4-point Gauss-Legendre quadrature per element.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp
from scipy.constants import e as E_CHARGE, h as PLANCK, hbar as HBAR

from .linalg import Bands, NumericalError, TridiagonalSolver, spectral_radius

_GL_X, _GL_W = np.polynomial.legendre.leggauss(4)


def ghz(f: float) -> float:
    """Energy in joules of a frequency given in GHz."""
    return PLANCK * f * 1e9


def charging_energy(c_sigma: float) -> float:
    return E_CHARGE**2 / (2 * c_sigma)


@dataclass(frozen=True)
class QubitSpec:
    """Qubit parameters; energies in joules, ``phi_ext`` in radians."""
    kind: str
    E_J: float
    E_C: float
    beta: float = 0.0
    n_g: float = 0.0
    E_L: float | None = None
    phi_ext: float = 0.0
    position: float | None = None

    def __post_init__(self):
        if self.kind not in ("transmon", "fluxonium"):
            raise ValueError(f"unknown qubit kind {self.kind!r}")
        if self.E_J <= 0 or self.E_C <= 0:
            raise ValueError("E_J and E_C must be positive")
        if not 0 <= self.beta < 1:
            raise ValueError("beta must lie in [0, 1)")
        if self.kind == "fluxonium" and (self.E_L is None or self.E_L <= 0):
            raise ValueError("fluxonium needs E_L > 0")

    @classmethod
    def transmon(cls, ej_over_ec: float, c_sigma: float, **kw) -> "QubitSpec":
        ec = charging_energy(c_sigma)
        return cls("transmon", ej_over_ec * ec, ec, **kw)

    @property
    def c_sigma(self) -> float:
        return E_CHARGE**2 / (2 * self.E_C)

    def with_(self, **kw) -> "QubitSpec":
        return replace(self, **kw)


@dataclass(frozen=True)
class PhaseMesh:
    nodes: np.ndarray        # coordinates of the unknowns (rad)
    periodic: bool
    lo: float
    hi: float

    @property
    def n(self) -> int:
        return self.nodes.shape[0]

    @property
    def h(self) -> float:
        return (self.hi - self.lo) / (self.n if self.periodic else self.n + 1)

    @classmethod
    def periodic_mesh(cls, n: int) -> "PhaseMesh":
        if n < 3:
            raise ValueError("periodic mesh needs at least 3 nodes")
        return cls(-np.pi + 2 * np.pi * np.arange(n) / n, True, -np.pi, np.pi)

    @classmethod
    def dirichlet_mesh(cls, n: int, half_width: float = 6 * np.pi) -> "PhaseMesh":
        if n < 3:
            raise ValueError("Dirichlet mesh needs at least 3 interior nodes")
        full = np.linspace(-half_width, half_width, n + 2)
        return cls(full[1:-1], False, -half_width, half_width)

    @classmethod
    def for_spec(cls, spec: QubitSpec, n: int) -> "PhaseMesh":
        return cls.periodic_mesh(n) if spec.kind == "transmon" else cls.dirichlet_mesh(n)

    def elements(self):
        """(left coordinate, left index, right index) per element; -1 marks a
        Dirichlet boundary node."""
        h = self.h
        if self.periodic:
            idx = np.arange(self.n)
            return self.lo + h * idx, idx, (idx + 1) % self.n
        ne = self.n + 1
        left = np.arange(ne) - 1
        right = np.arange(ne)
        right[-1] = -1
        return self.lo + h * np.arange(ne), left, right


def _assemble(mesh: PhaseMesh, weight=None, kind="mass") -> sp.csr_matrix:
    """Element loop for mass-type (optionally weighted), stiffness or
    first-derivative matrices."""
    h = mesh.h
    x0, il, ir = mesh.elements()
    if kind == "mass":
        # shape values at Gauss points on the reference element [0, 1]
        s = 0.5 * (_GL_X + 1)
        n1, n2 = 1 - s, s
        pts = x0[:, None] + h * s[None, :]
        w = np.ones_like(pts) if weight is None else weight(pts)
        wq = 0.5 * h * _GL_W[None, :] * w
        loc = np.stack([(wq * n1 * n1).sum(1), (wq * n1 * n2).sum(1),
                        (wq * n2 * n1).sum(1), (wq * n2 * n2).sum(1)], axis=1)
    elif kind == "stiffness":
        loc = np.tile([1 / h, -1 / h, -1 / h, 1 / h], (x0.size, 1))
    elif kind == "derivative":
        # Q_ij = int N_i dN_j/dphi
        loc = np.tile([-0.5, 0.5, -0.5, 0.5], (x0.size, 1))
    else:
        raise ValueError(kind)
    rows = np.stack([il, il, ir, ir], axis=1).ravel()
    cols = np.stack([il, ir, il, ir], axis=1).ravel()
    vals = loc.ravel()
    keep = (rows >= 0) & (cols >= 0)
    return sp.coo_matrix((vals[keep], (rows[keep], cols[keep])),
                         shape=(mesh.n, mesh.n)).tocsr()


@dataclass
class QubitOperators:
    spec: QubitSpec
    mesh: PhaseMesh
    E: sp.csr_matrix          # mass
    N: sp.csr_matrix          # kinetic (stiffness)
    Q: sp.csr_matrix          # first derivative, real antisymmetric
    V: sp.csr_matrix          # cosine-weighted mass
    H0: sp.csr_matrix         # free Hamiltonian (J)
    W: sp.csr_matrix | None = None   # phi^2-weighted mass (fluxonium)
    _esolve: TridiagonalSolver | None = field(default=None, repr=False)

    @property
    def beta(self) -> float:
        return self.spec.beta

    @property
    def n(self) -> int:
        return self.mesh.n

    @property
    def mass_solver(self) -> TridiagonalSolver:
        if self._esolve is None:
            self._esolve = TridiagonalSolver(Bands.from_matrix(self.E))
        return self._esolve


def assemble_transmon_operators(spec: QubitSpec, mesh: PhaseMesh) -> QubitOperators:
    if spec.kind != "transmon" or not mesh.periodic:
        raise ValueError("transmon operators need a transmon spec and periodic mesh")
    E = _assemble(mesh)
    N = _assemble(mesh, kind="stiffness")
    Q = _assemble(mesh, kind="derivative")
    V = _assemble(mesh, np.cos)
    ec, ng = spec.E_C, spec.n_g
    H0 = 4 * ec * N + 1j * 8 * ng * ec * Q + 4 * ec * ng**2 * E - spec.E_J * V
    if ng == 0:
        H0 = H0.real
    return QubitOperators(spec, mesh, E, N, Q, V, H0.tocsr())


def assemble_fluxonium_operators(spec: QubitSpec, mesh: PhaseMesh) -> QubitOperators:
    if spec.kind != "fluxonium" or mesh.periodic:
        raise ValueError("fluxonium operators need a fluxonium spec and Dirichlet mesh")
    E = _assemble(mesh)
    N = _assemble(mesh, kind="stiffness")
    Q = _assemble(mesh, kind="derivative")
    V = _assemble(mesh, lambda x: np.cos(x + spec.phi_ext))
    W = _assemble(mesh, lambda x: x**2)
    H0 = 4 * spec.E_C * N - spec.E_J * V + 0.5 * spec.E_L * W
    return QubitOperators(spec, mesh, E, N, Q, V, H0.tocsr(), W)


def assemble_operators(spec: QubitSpec, n_nodes: int) -> QubitOperators:
    mesh = PhaseMesh.for_spec(spec, n_nodes)
    if spec.kind == "transmon":
        return assemble_transmon_operators(spec, mesh)
    return assemble_fluxonium_operators(spec, mesh)


def charge_expectation(a: np.ndarray, Q) -> float:
    """<n> = -i a^H Q a; real because Q is real antisymmetric."""
    return (-1j * np.vdot(a, Q @ a)).real


@dataclass(frozen=True)
class WavefunctionState:
    a_now: np.ndarray        # a^(j+1/2)
    a_prev: np.ndarray       # a^(j-1/2)
    step: int = 0


def _rhs(ops: QubitOperators, a, v_port, shift=0.0):
    """E^-1 [ H0 a / (i hbar) - (2 e beta / hbar) v Q a ]."""
    h = ops.H0 @ a - shift * (ops.E @ a)
    r = h / (1j * HBAR) - (2 * E_CHARGE * ops.beta / HBAR) * v_port * (ops.Q @ a)
    return ops.mass_solver.solve(r)


def rk4_half_step(ops: QubitOperators, a0: np.ndarray, dt: float, v_port=0.0,
                  shift=0.0) -> np.ndarray:
    """Advance the semi-discrete equation by dt/2 (dt<0 steps backwards)."""
    hs = dt / 2
    k1 = _rhs(ops, a0, v_port, shift)
    k2 = _rhs(ops, a0 + 0.5 * hs * k1, v_port, shift)
    k3 = _rhs(ops, a0 + 0.5 * hs * k2, v_port, shift)
    k4 = _rhs(ops, a0 + hs * k3, v_port, shift)
    return a0 + hs / 6 * (k1 + 2 * k2 + 2 * k3 + k4)


def start_state(ops: QubitOperators, a0: np.ndarray, dt: float, shift=0.0) -> WavefunctionState:
    """Leapfrog start: a^(-1/2) and a^(1/2) from a(0) by RK4 half steps."""
    a0 = np.asarray(a0, dtype=complex)
    return WavefunctionState(rk4_half_step(ops, a0, dt, 0.0, shift),
                             rk4_half_step(ops, a0, -dt, 0.0, shift), 0)


def step_schrodinger_full(ops: QubitOperators, state: WavefunctionState, v_port: float,
                          dt: float, shift: float = 0.0) -> WavefunctionState:
    """E a^(j+3/2) = E a^(j-1/2) + (2dt/i hbar) H0 a^(j+1/2)
    - (4 e beta dt / hbar) v Q a^(j+1/2)."""
    upd = _rhs(ops, state.a_now, v_port, shift)
    return WavefunctionState(state.a_prev + 2 * dt * upd, state.a_now, state.step + 1)


def norm(a: np.ndarray, ops: QubitOperators) -> float:
    return np.vdot(a, ops.E @ a).real


def full_stability_dt(ops: QubitOperators, v_max: float, shift: float = 0.0,
                      rtol: float = 1e-6, maxiter: int = 10_000) -> float:
    """hbar / rho(E^-1 (H0 - i 2 e beta Vmax Q)); ``shift`` subtracts a
    reference energy times E from H0 as done during stepping."""
    K = ops.H0 - shift * ops.E - 1j * 2 * E_CHARGE * ops.beta * v_max * ops.Q
    rho = spectral_radius(K, ops.E, rtol, maxiter)
    if rho == 0:
        raise NumericalError("zero spectral radius")
    return HBAR / rho
