"""Staggered leapfrog co-simulation of a transmission line and one qubit.

The line flux lives on integer steps j dt; the qubit state, the port voltage
and every recorded channel live on half steps (j + 1/2) dt.  Two qubit
models are supported: the phase-basis wavefunction ("full") and the reduced
eigenstate expansion ("reduced").  In one-way mode the semiclassical current
source is removed from the line equation while the qubit still sees the
port voltage.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from functools import cached_property
from pathlib import Path

import numpy as np
from scipy.constants import e as E_CHARGE, hbar as HBAR

from . import kernels
from .eigen import (EigenBasis, ReducedModel, build_reduced_model, reduced_stability_dt,
                    solve_eigenbasis)
from .linalg import Bands, NumericalError, TridiagonalSolver
from .qubit import QubitOperators, QubitSpec, assemble_operators, full_stability_dt, rk4_half_step
from .txline import LineSpec, LineSystem, assemble_line, build_line_mesh, line_stability_dt

log = logging.getLogger(__name__)


class StabilityError(NumericalError):
    """A run produced non-finite values."""

    def __init__(self, step: int, dt: float):
        super().__init__(f"non-finite state at step {step} (t = {step * dt:.6g} s, "
                         f"dt = {dt:.6g} s); the time step likely violates a stability bound")
        self.step = step


class CalibrationError(RuntimeError):
    def __init__(self, msg: str, trace=None):
        super().__init__(msg)
        self.trace = trace or []


@dataclass(frozen=True)
class Pulse:
    """A exp(-(t - t0)^2 / (2 sigma^2)) cos(2 pi f_d (t - t0) + phase)."""
    amplitude: float
    t0: float
    sigma: float
    frequency: float
    phase: float = 0.0
    label: str = ""

    def __post_init__(self):
        if self.sigma <= 0:
            raise ValueError("pulse sigma must be positive")
        if self.t0 < 5 * self.sigma * (1 - 1e-12):
            raise ValueError("pulse centre must satisfy t0 >= 5 sigma")
        if self.frequency < 0:
            raise ValueError("drive frequency must be non-negative")

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        u = t - self.t0
        return self.amplitude * np.exp(-u**2 / (2 * self.sigma**2)) \
            * np.cos(2 * np.pi * self.frequency * u + self.phase)

    def scaled(self, factor: float, label: str | None = None) -> "Pulse":
        return replace(self, amplitude=self.amplitude * factor,
                       label=self.label if label is None else label)

    @property
    def end(self) -> float:
        return self.t0 + 5 * self.sigma

    @classmethod
    def centred(cls, amplitude, sigma, frequency, n_sigma=6.0, **kw) -> "Pulse":
        return cls(amplitude, n_sigma * sigma, sigma, frequency, **kw)


@dataclass(frozen=True)
class CoupledConfig:
    """Everything needed to run one coupled simulation (SI units)."""
    line: LineSpec
    qubit: QubitSpec | None
    duration: float
    f_max: float
    model: str = "reduced"              # "reduced" | "full"
    n_eig: int = 3
    n_phase: int = 64
    coupling: str = "two-way"           # "two-way" | "one-way"
    safety: float = 0.5
    record_interval: float = 10e-12
    n_record_levels: int = 3
    initial_level: int = 0
    probes: tuple[float, ...] = ()
    dt: float | None = None             # explicit override of the chosen step

    def __post_init__(self):
        if not 0 < self.safety < 1:
            raise ValueError("safety factor must lie in (0, 1)")
        if self.duration <= 0:
            raise ValueError("simulated time must be positive")
        if self.model not in ("reduced", "full"):
            raise ValueError(f"unknown qubit model {self.model!r}")
        if self.coupling not in ("two-way", "one-way"):
            raise ValueError(f"unknown coupling mode {self.coupling!r}")
        if self.qubit is not None and len(self.line.coupling_positions) != 1:
            raise ValueError("a qubit needs exactly one coupling position on the line")
        if self.n_eig < 1:
            raise ValueError("n_eig must be >= 1")

    def with_(self, **kw) -> "CoupledConfig":
        return replace(self, **kw)


@dataclass
class Recorder:
    """Append-only channels sampled on the half-integer grid."""
    t: np.ndarray
    probe_v: np.ndarray                 # (n_samples, n_probes) V
    probe_z: tuple[float, ...]
    charge: np.ndarray | None = None    # <n>
    occupations: np.ndarray | None = None
    norm: np.ndarray | None = None       # conserved leapfrog form, see the kernels
    phase0: np.ndarray | None = None
    line_norm: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    @property
    def port_voltage(self) -> np.ndarray:
        return self.probe_v[:, self.meta.get("port_probe", 0)]

    @property
    def dt_sample(self) -> float:
        return float(self.t[1] - self.t[0])

    def columns(self):
        cols = [("t", "s", self.t)]
        for k, z in enumerate(self.probe_z):
            cols.append((f"v_probe{k}", f"V at z={z:.6g} m", self.probe_v[:, k]))
        if self.charge is not None:
            cols.append(("n_expect", "charge number (1)", self.charge))
        if self.occupations is not None:
            for k in range(self.occupations.shape[1]):
                cols.append((f"P{k}", "occupation (1)", self.occupations[:, k]))
        if self.norm is not None:
            cols.append(("norm", "leapfrog-conserved norm (1)", self.norm))
        if self.phase0 is not None:
            cols.append(("phase0", "rad", self.phase0))
        return cols

    def to_csv(self, path) -> Path:
        path = Path(path)
        cols = self.columns()
        header = [f"# {name}: {unit}" for name, unit, _ in cols]
        header.append(f"# samples at (j + 1/2) dt, dt = {self.meta.get('dt', float('nan')):.17g} s, "
                      f"every {self.meta.get('every', 1)} steps")
        for k, v in sorted(self.meta.items()):
            if isinstance(v, (int, float, str)):
                header.append(f"# meta {k} = {v}")
        data = np.column_stack([c[2] for c in cols])
        with open(path, "w") as fh:
            fh.write("\n".join(header) + "\n")
            fh.write(",".join(c[0] for c in cols) + "\n")
            np.savetxt(fh, data, delimiter=",", fmt="%.17g")
        return path


def _bands(mat, dtype=None) -> Bands:
    b = Bands.from_matrix(mat)
    if dtype is not None:
        b = Bands(b.lower.astype(dtype), b.diag.astype(dtype), b.upper.astype(dtype),
                  dtype(b.top_right), dtype(b.bottom_left))
    return b


class Simulation:
    """Assembled line and qubit for one configuration; caches the
    qubit-free pre-run used for V_max and all stability bounds."""

    def __init__(self, config: CoupledConfig):
        self.config = config
        self.mesh = build_line_mesh(config.line, config.f_max)
        self.line = assemble_line(config.line, self.mesh)
        self._unit_vmax: dict = {}

    # -- qubit side -------------------------------------------------------
    @cached_property
    def ops(self) -> QubitOperators | None:
        if self.config.qubit is None:
            return None
        return assemble_operators(self.config.qubit, self.config.n_phase)

    @cached_property
    def basis(self) -> EigenBasis | None:
        if self.ops is None:
            return None
        k = max(self.config.n_eig, self.config.n_record_levels, self.config.initial_level + 1)
        return solve_eigenbasis(self.ops, k)

    @cached_property
    def reduced(self) -> ReducedModel | None:
        if self.basis is None:
            return None
        return build_reduced_model(self.ops, self.basis).truncate(self.config.n_eig)

    @property
    def port_node(self) -> int:
        return self.mesh.coupling_nodes[0] if self.mesh.coupling_nodes else -1

    @property
    def port_position(self) -> float:
        return self.config.line.coupling_positions[0]

    # -- time step --------------------------------------------------------
    @cached_property
    def line_bound(self) -> float:
        return line_stability_dt(self.line)

    def v_max(self, pulse: Pulse) -> float:
        """2 x max |dphi/dt| at the coupling node in a qubit-free run."""
        if self.port_node < 0:
            return 0.0
        key = replace(pulse, amplitude=1.0, label="")
        if key not in self._unit_vmax:
            dt = self.config.safety * self.line_bound
            sys = self.line.with_dt(dt)
            n = int(np.ceil(self.config.duration / dt))
            vs = key(np.arange(n) * dt)
            rec = run_line(sys, vs, [self.port_node], every=1)
            self._unit_vmax[key] = float(np.max(np.abs(rec[0][:, 0])))
        return 2.0 * abs(pulse.amplitude) * self._unit_vmax[key]

    @property
    def drive_gain_per_volt(self) -> float:
        """2 e beta / hbar, the qubit drive rate per volt at the port."""
        return 2 * E_CHARGE * self.config.qubit.beta / HBAR

    def qubit_bound(self, v_max: float, model: str | None = None) -> float:
        if self.ops is None:
            return np.inf
        if (model or self.config.model) == "full":
            return full_stability_dt(self.ops, v_max, shift=self.basis.energies_abs[0])
        return reduced_stability_dt(self.reduced, v_max)

    def bounds(self, pulse: Pulse) -> dict:
        vmax = self.v_max(pulse)
        b = {"line": self.line_bound, "v_max": vmax}
        if self.ops is not None:
            b["full"] = full_stability_dt(self.ops, vmax, shift=self.basis.energies_abs[0])
            b["reduced"] = reduced_stability_dt(self.reduced, vmax)
        return b

    def choose_timestep(self, pulse: Pulse) -> tuple[float, dict]:
        """dt = safety * min(line bound, bound of the selected qubit model)."""
        vmax = self.v_max(pulse)
        info = {"line": self.line_bound, "v_max": vmax}
        qb = self.qubit_bound(vmax)
        info[self.config.model] = qb
        dt = self.config.safety * min(self.line_bound, qb)
        if self.config.dt is not None:
            if self.config.dt > min(self.line_bound, qb):
                log.warning("explicit dt %.4g exceeds the stability estimate %.4g",
                            self.config.dt, min(self.line_bound, qb))
            dt = self.config.dt
        info["dt"] = dt
        return dt, info

    # -- runs -------------------------------------------------------------
    def probe_nodes(self):
        zs = list(self.config.probes)
        nodes = [self.mesh.node_at(z, side="left") if z == self.config.line.source_position
                 else self.mesh.node_at(z) for z in zs]
        port_probe = None
        if self.port_node >= 0:
            if self.port_node in nodes:
                port_probe = nodes.index(self.port_node)
            else:
                nodes.append(self.port_node)
                zs.append(self.port_position)
                port_probe = len(nodes) - 1
        return np.array(nodes, dtype=np.int64), tuple(zs), port_probe

    def run(self, pulse: Pulse, initial_state=None, dt: float | None = None) -> Recorder:
        cfg = self.config
        if dt is None:
            dt, info = self.choose_timestep(pulse)
        else:
            info = {"dt": dt}
        sys = self.line.with_dt(dt)
        nsteps = int(np.ceil(cfg.duration / dt))
        every = max(1, int(np.floor(cfg.record_interval / dt)))
        vs = pulse(np.arange(nsteps) * dt)
        probes, probe_z, port_probe = self.probe_nodes()
        meta = dict(info, dt=dt, every=every, nsteps=nsteps, model=cfg.model,
                    coupling=cfg.coupling, port_probe=port_probe or 0,
                    pulse_amplitude=pulse.amplitude)
        t_of = lambda k: np.arange(k) * every * dt + (every - 0.5) * dt
        if cfg.qubit is None:
            v, lnorm = run_line(sys, vs, probes, every)
            return Recorder(t_of(v.shape[0]), v, probe_z, line_norm=lnorm, meta=meta)
        if cfg.model == "reduced":
            out = self._run_reduced(sys, vs, probes, every, dt, initial_state)
        else:
            out = self._run_full(sys, vs, probes, every, dt, initial_state)
        v, n, occ, norm, ph = out
        return Recorder(t_of(v.shape[0]), v, probe_z, n, occ, norm, ph, meta=meta)

    def _line_args(self, sys: LineSystem, vs, probes, every):
        lhs, b1, b0 = sys.stepping_bands()
        n = sys.n
        return (np.zeros(n), np.zeros(n), lhs.lower, lhs.cp, lhs.inv,
                b1.lower, b1.diag, b1.upper, b0.lower, b0.diag, b0.upper,
                sys.mesh.source_node, sys.source_gain, vs, sys.dt, probes, every)

    def _gains(self, sys):
        beta = self.config.qubit.beta
        back = sys.coupling_gain(beta) if self.config.coupling == "two-way" else 0.0
        return back, self.drive_gain_per_volt

    def _alloc(self, nsteps, every, n_probes):
        nrec = nsteps // every
        return (np.zeros((nrec, n_probes)), np.zeros(nrec),
                np.zeros((nrec, self.config.n_record_levels)), np.zeros(nrec), np.zeros(nrec))

    def _run_reduced(self, sys, vs, probes, every, dt, c0):
        model = self.reduced
        m = model.n_eig
        if c0 is None:
            c0 = np.zeros(m, complex)
            c0[self.config.initial_level] = 1.0
        c0 = np.asarray(c0, complex)
        ph = np.exp(-1j * model.omega * dt / 2)
        c_now, c_prev = c0 * ph, c0 / ph
        back, drive = self._gains(sys)
        out = self._alloc(len(vs), every, len(probes))
        if self.config.n_record_levels > m:
            out = (out[0], out[1], np.zeros((out[2].shape[0], m)), out[3], out[4])
        status = kernels.run_reduced_kernel(
            *self._line_args(sys, vs, probes, every), self.port_node, back, drive,
            np.ascontiguousarray(model.omega), np.ascontiguousarray(model.charge),
            c_now, c_prev, *out)
        if status >= 0:
            raise StabilityError(status, dt)
        return out

    def full_arrays(self):
        ops, basis = self.ops, self.basis
        e0 = basis.energies_abs[0]
        hb = _bands(ops.H0 - e0 * ops.E, np.complex128)
        qb = _bands(ops.Q, np.float64)
        eb = _bands(ops.E, np.float64)
        es = TridiagonalSolver(eb)
        proj = np.ascontiguousarray((basis.vectors[:, :self.config.n_record_levels].conj().T
                                     @ ops.E.toarray()))
        return e0, hb, qb, eb, es, proj

    def full_start(self, a0, dt):
        e0 = self.basis.energies_abs[0]
        return (rk4_half_step(self.ops, a0, dt, 0.0, e0),
                rk4_half_step(self.ops, a0, -dt, 0.0, e0))

    def _run_full(self, sys, vs, probes, every, dt, a0):
        e0, hb, qb, eb, es, proj = self.full_arrays()
        if a0 is None:
            a0 = self.basis.vectors[:, self.config.initial_level]
        a_now, a_prev = self.full_start(np.asarray(a0, complex), dt)
        back, drive = self._gains(sys)
        out = self._alloc(len(vs), every, len(probes))
        status = kernels.run_full_kernel(
            *self._line_args(sys, vs, probes, every), self.port_node, back, drive, HBAR,
            hb.lower, hb.diag, hb.upper, hb.top_right, hb.bottom_left,
            qb.lower, qb.diag, qb.upper, float(qb.top_right), float(qb.bottom_left),
            es.lower, es.cp, es.inv, es.z, float(np.real(es.sm_last)),
            float(np.real(es.sm_scale)), es.cyclic, proj, a_now, a_prev,
            *out, eb.lower, eb.diag, eb.upper, float(eb.top_right), float(eb.bottom_left))
        if status >= 0:
            raise StabilityError(status, dt)
        return out


def run_line(sys: LineSystem, v_source: np.ndarray, probes, every: int = 1):
    """Qubit-free line run from rest; returns (probe voltages, flux norms)."""
    probes = np.asarray(probes, dtype=np.int64)
    n = sys.n
    lhs, b1, b0 = sys.stepping_bands()
    nrec = len(v_source) // every
    out_v = np.zeros((nrec, len(probes)))
    out_norm = np.zeros(nrec)
    status = kernels.run_line_kernel(
        np.zeros(n), np.zeros(n), lhs.lower, lhs.cp, lhs.inv,
        b1.lower, b1.diag, b1.upper, b0.lower, b0.diag, b0.upper,
        sys.mesh.source_node, sys.source_gain, np.ascontiguousarray(v_source, dtype=float),
        sys.dt, probes, every, out_v, out_norm)
    if status >= 0:
        raise StabilityError(status, sys.dt)
    return out_v, out_norm


def run_coupled(config: CoupledConfig, pulse: Pulse, initial_state=None) -> Recorder:
    return Simulation(config).run(pulse, initial_state)


def rabi_amplitude_guess(sim: Simulation, sigma: float, frequency: float,
                         target_area: float = 2 * np.pi) -> float:
    """Source amplitude whose port-voltage envelope has the requested area
    (2 e beta |n01| / hbar) * V_peak * sigma * sqrt(2 pi) = area."""
    unit = Pulse.centred(1.0, sigma, frequency)
    vpeak = sim.v_max(unit) / 2.0
    n01 = abs(sim.reduced.n_matrix[0, 1]) if sim.reduced.n_eig > 1 else \
        abs(build_reduced_model(sim.ops, sim.basis).n_matrix[0, 1])
    rate = 2 * E_CHARGE * sim.config.qubit.beta * n01 / HBAR
    return target_area / (rate * vpeak * sigma * np.sqrt(2 * np.pi))


@dataclass(frozen=True)
class Calibration:
    pulse: Pulse                # pulse scaled to the target area
    amplitude_2pi: float
    guess: float
    p0_2pi: float
    trace: tuple = ()


def calibrate_pulse_area(sim: Simulation, target_area: float, sigma: float, frequency: float,
                         rtol: float = 1e-4, scan=(0.6, 1.4), n_scan: int = 17) -> Calibration:
    """Find the 2 pi amplitude (local maximum of the final ground occupation)
    and scale it linearly to ``target_area`` (radians)."""
    from scipy.optimize import minimize_scalar

    guess = rabi_amplitude_guess(sim, sigma, frequency)
    trace = []

    def p0(amp):
        rec = sim.run(Pulse.centred(amp, sigma, frequency))
        val = float(rec.occupations[-1, 0])
        trace.append((amp, val))
        return val

    grid = np.linspace(scan[0], scan[1], n_scan) * guess
    vals = np.array([p0(a) for a in grid])
    k = int(np.argmax(vals))
    if k == 0 or k == len(grid) - 1:
        raise CalibrationError("no interior maximum of the ground occupation in the "
                               "amplitude scan", trace)
    res = minimize_scalar(lambda a: -p0(a), bounds=(grid[k - 1], grid[k + 1]),
                          method="bounded", options={"xatol": rtol * grid[k]})
    a2pi = float(res.x)
    pulse = Pulse.centred(a2pi * target_area / (2 * np.pi), sigma, frequency,
                          label=f"{target_area / np.pi:g}pi")
    return Calibration(pulse, a2pi, guess, float(-res.fun), tuple(trace))
