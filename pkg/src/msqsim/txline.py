"""Node-flux FETD model of a 1-D transmission line.

The line is a chain of uniform sections separated by optional series
(coupling) capacitors.  Unknowns are nodal flux coefficients phi_n(t) of
first-order hat functions.  After testing the flux wave equation with the
same functions and multiplying through by L, the semi-discrete system is

    T phi'' + R phi' + S phi = f

with T = L * (capacitance matrix), R = L * (conductance at resistive
terminations), S = stiffness of the hat functions and f = L * (nodal current
injections).  A series capacitor Ck between two coincident nodes adds the
stamp L * Ck * [[1, -1], [-1, 1]] to T, so every matrix stays tridiagonal.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp
from scipy.constants import e as E_CHARGE

from .linalg import Bands, NumericalError, TridiagonalSolver, spectral_radius


class MeshError(ValueError):
    pass


@dataclass(frozen=True)
class LineSpec:
    """Geometry, terminations and ports of a line (SI units throughout).

    ``series_capacitors`` is a tuple of (position, capacitance) pairs; the
    line is cut at each position and the two halves joined by the capacitor.
    ``load_resistance=None`` leaves that end open (natural boundary).
    """
    inductance_per_length: float
    capacitance_per_length: float
    length: float
    source_resistance: float = 50.0
    source_position: float = 0.0
    load_resistance: float | None = 50.0
    load_position: float | None = None
    coupling_positions: tuple[float, ...] = ()
    series_capacitors: tuple[tuple[float, float], ...] = ()
    elements_per_min_wavelength: float = 20.0

    def __post_init__(self):
        if self.inductance_per_length <= 0 or self.capacitance_per_length <= 0:
            raise ValueError("L and C per length must be positive")
        if self.length <= 0:
            raise ValueError("line length must be positive")
        if self.source_resistance is not None and self.source_resistance <= 0:
            raise ValueError("source resistance must be positive")
        if self.load_resistance is not None and self.load_resistance <= 0:
            raise ValueError("load resistance must be positive")
        object.__setattr__(self, "coupling_positions", tuple(self.coupling_positions))
        object.__setattr__(self, "series_capacitors",
                           tuple(tuple(c) for c in self.series_capacitors))
        for z, ck in self.series_capacitors:
            if ck <= 0:
                raise ValueError("series capacitance must be positive")

    @property
    def speed(self) -> float:
        return 1.0 / np.sqrt(self.inductance_per_length * self.capacitance_per_length)

    @property
    def impedance(self) -> float:
        return np.sqrt(self.inductance_per_length / self.capacitance_per_length)

    @property
    def z_load(self) -> float:
        return self.length if self.load_position is None else self.load_position

    def with_(self, **kw) -> "LineSpec":
        return replace(self, **kw)


@dataclass(frozen=True)
class LineMesh:
    nodes: np.ndarray                 # node coordinates (m); duplicated at series caps
    element_spans: np.ndarray         # (n_el, 2) node index pairs
    source_node: int
    load_node: int | None
    coupling_nodes: tuple[int, ...]
    capacitor_pairs: tuple[tuple[int, int, float], ...] = ()

    @property
    def n_nodes(self) -> int:
        return self.nodes.shape[0]

    @property
    def element_lengths(self) -> np.ndarray:
        return self.nodes[self.element_spans[:, 1]] - self.nodes[self.element_spans[:, 0]]

    def node_at(self, z: float, side: str = "right") -> int:
        """Index of the node exactly at ``z`` (right copy at a series cap)."""
        hits = np.flatnonzero(np.isclose(self.nodes, z, rtol=0, atol=1e-12))
        if hits.size == 0:
            raise MeshError(f"no mesh node at z={z}")
        return int(hits[-1] if side == "right" else hits[0])


def max_element_size(spec: LineSpec, f_max: float) -> float:
    return spec.speed / (f_max * spec.elements_per_min_wavelength)


def build_line_mesh(spec: LineSpec, f_max: float) -> LineMesh:
    """Mesh each interval between breakpoints (ends, caps, ports) uniformly.

    Every element is no longer than v / (f_max * elements_per_min_wavelength)
    and every port lands exactly on a node.
    """
    if f_max <= 0:
        raise ValueError("f_max must be positive")
    if spec.elements_per_min_wavelength < 10:
        raise ValueError("need at least 10 elements per minimum wavelength")
    h_max = max_element_size(spec, f_max)
    ports = [spec.source_position, spec.z_load, *spec.coupling_positions]
    caps = [z for z, _ in spec.series_capacitors]
    for z in ports + caps:
        if not 0.0 <= z <= spec.length:
            raise MeshError(f"position {z} outside [0, {spec.length}]")
    for z in caps:
        if z in (0.0, spec.length):
            raise MeshError("series capacitor cannot sit at a line end")
    for z in spec.coupling_positions:
        if any(np.isclose(z, c, rtol=0, atol=1e-12) for c in caps):
            raise MeshError(f"coupling position {z} coincides with a series capacitor")

    breaks = np.unique(np.round(np.array([0.0, spec.length, *ports, *caps]), 15))
    coords = [0.0]
    for a, b in zip(breaks[:-1], breaks[1:]):
        n = max(1, int(np.ceil((b - a) / h_max * (1 - 1e-12))))
        coords.extend(np.linspace(a, b, n + 1)[1:])
    coords = np.array(coords)

    cap_sorted = sorted(spec.series_capacitors)
    nodes, spans, pairs = [], [], []
    ci = 0
    for i, z in enumerate(coords):
        nodes.append(z)
        if i > 0:
            spans.append((len(nodes) - 2, len(nodes) - 1))
        if ci < len(cap_sorted) and np.isclose(z, cap_sorted[ci][0], rtol=0, atol=1e-12):
            nodes.append(z)
            pairs.append((len(nodes) - 2, len(nodes) - 1, cap_sorted[ci][1]))
            ci += 1
    mesh = LineMesh(np.array(nodes), np.array(spans, dtype=int), 0, None, (), tuple(pairs))
    src = mesh.node_at(spec.source_position, side="left")
    load = mesh.node_at(spec.z_load, side="right") if spec.load_resistance is not None else None
    coup = tuple(mesh.node_at(z) for z in spec.coupling_positions)
    return replace(mesh, source_node=src, load_node=load, coupling_nodes=coup)


@dataclass
class LineSystem:
    """Assembled sparse matrices plus the stepping factorization for ``dt``."""
    spec: LineSpec
    mesh: LineMesh
    T: sp.csr_matrix
    R: sp.csr_matrix
    S: sp.csr_matrix
    mass_integral: sp.csr_matrix          # plain hat-function integral, no L*C
    dt: float | None = None
    _lhs: TridiagonalSolver | None = field(default=None, repr=False)

    @property
    def n(self) -> int:
        return self.mesh.n_nodes

    def with_dt(self, dt: float) -> "LineSystem":
        lhs = Bands.from_matrix(self.T / dt**2 + self.R / (2 * dt))
        try:
            solver = TridiagonalSolver(lhs)
        except ZeroDivisionError as exc:
            raise NumericalError("singular line stepping matrix") from exc
        return replace(self, dt=dt, _lhs=solver)

    @property
    def lhs(self) -> TridiagonalSolver:
        if self._lhs is None:
            raise ValueError("time step not set; call with_dt first")
        return self._lhs

    def stepping_bands(self):
        """(lhs solver, B1 = 2T/dt^2 - S, B0 = T/dt^2 - R/(2dt)) for kernels."""
        dt = self.dt
        b1 = Bands.from_matrix(2 * self.T / dt**2 - self.S)
        b0 = Bands.from_matrix(self.T / dt**2 - self.R / (2 * dt))
        return self.lhs, b1, b0

    @property
    def source_gain(self) -> float:
        return self.spec.inductance_per_length / self.spec.source_resistance

    def coupling_gain(self, beta: float) -> float:
        """Factor multiplying d<n>/dt in the force vector at a coupling node."""
        return self.spec.inductance_per_length * 2 * E_CHARGE * beta


def assemble_line(spec: LineSpec, mesh: LineMesh) -> LineSystem:
    n = mesh.n_nodes
    L, C = spec.inductance_per_length, spec.capacitance_per_length
    h = mesh.element_lengths
    i, j = mesh.element_spans[:, 0], mesh.element_spans[:, 1]
    rows = np.concatenate([i, j, i, j])
    cols = np.concatenate([i, j, j, i])
    mass = sp.coo_matrix((np.concatenate([h / 3, h / 3, h / 6, h / 6]), (rows, cols)),
                         shape=(n, n)).tocsr()
    stiff = sp.coo_matrix((np.concatenate([1 / h, 1 / h, -1 / h, -1 / h]), (rows, cols)),
                          shape=(n, n)).tocsr()
    cap = sp.lil_matrix((n, n))
    for a, b, ck in mesh.capacitor_pairs:
        cap[a, a] += ck
        cap[b, b] += ck
        cap[a, b] -= ck
        cap[b, a] -= ck
    T = (L * C * mass + L * cap.tocsr()).tocsr()
    R = sp.lil_matrix((n, n))
    if spec.source_resistance is not None:
        R[mesh.source_node, mesh.source_node] += L / spec.source_resistance
    if mesh.load_node is not None:
        R[mesh.load_node, mesh.load_node] += L / spec.load_resistance
    return LineSystem(spec, mesh, T, R.tocsr(), stiff, mass)


def line_source_vector(sys: LineSystem, v_source: float, dn_dt=None, beta: float = 0.0):
    """Force vector {f}: Norton source at the source node plus the
    semiclassical current injected at each coupling node."""
    f = np.zeros(sys.n)
    if sys.spec.source_resistance is not None:
        f[sys.mesh.source_node] += sys.source_gain * v_source
    if dn_dt is not None:
        for node, d in zip(sys.mesh.coupling_nodes, np.atleast_1d(dn_dt)):
            f[node] += sys.coupling_gain(beta) * d
    return f


@dataclass(frozen=True)
class LineState:
    phi_now: np.ndarray
    phi_prev: np.ndarray
    step: int = 0

    @classmethod
    def quiescent(cls, n: int) -> "LineState":
        return cls(np.zeros(n), np.zeros(n), 0)


def step_line(sys: LineSystem, state: LineState, f: np.ndarray) -> LineState:
    dt = sys.dt
    rhs = (2 * sys.T / dt**2 - sys.S) @ state.phi_now \
        - (sys.T / dt**2 - sys.R / (2 * dt)) @ state.phi_prev + f
    return LineState(sys.lhs.solve(rhs), state.phi_now, state.step + 1)


def port_voltage(state: LineState, sys: LineSystem, node: int) -> float:
    """Voltage d(phi)/dt at ``node``, centred half a step before ``state.step``."""
    return (state.phi_now[node] - state.phi_prev[node]) / sys.dt


def line_energy(sys: LineSystem, state: LineState) -> float:
    """Discrete energy conserved exactly by the lossless leapfrog update.

    E = (v^T T v + phi_now^T S phi_prev) / (2 L), v = (phi_now - phi_prev)/dt.
    """
    v = (state.phi_now - state.phi_prev) / sys.dt
    return 0.5 * (v @ (sys.T @ v) + state.phi_now @ (sys.S @ state.phi_prev)) \
        / sys.spec.inductance_per_length


def line_stability_dt(sys: LineSystem, rtol: float = 1e-6, maxiter: int = 10_000) -> float:
    """Largest stable step 2 / sqrt(rho(T^-1 S))."""
    return 2.0 / np.sqrt(spectral_radius(sys.S, sys.T, rtol, maxiter))
