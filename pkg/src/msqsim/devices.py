"""Device builders: feed line | C_in | half-wave resonator | C_out | feed line.

Circuit values that are not quoted as numbers (coupling capacitances, feed
lengths, resonator lengths) are set here; resonator lengths are calibrated
against the simulated reflection peak.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy.optimize import brentq, least_squares

from .analysis import reflection_spectrum, resonance_peak
from .coupler import Pulse, run_line
from .eigen import qubit_levels
from .qubit import QubitSpec, ghz
from .txline import LineSpec, assemble_line, build_line_mesh, line_stability_dt

L_LINE = 0.7125e-6          # H/m
C_LINE = 285e-12            # F/m

# Frozen calibration results.  Each is reproduced by the calibrate_* function
# named alongside it; the test suite re-runs those calibrations.
CONTROL_F_R = 4.00e9
CONTROL_LENGTH = 8.63319368792479e-3          # calibrate_resonator_length, C_k = 20 fF
READOUT_F_R = 5.971e9
READOUT_LENGTH = 5.738445699518846e-3         # calibrate_resonator_length, C_k = 20 fF
READOUT_C_SIGMA = 8.784484212477145e-14       # calibrate_transmon_capacitance(60, 4.6e9)
FLUXONIUM_F_R = 8.18e9
FLUXONIUM_LENGTH = 4.1873938201105335e-3      # calibrate_resonator_length, C_k = 15 fF
FLUXONIUM_ENERGIES = (8.98879966, 2.5, 0.52864606)   # (E_J, E_C, E_L) in GHz, calibrate_fluxonium


@dataclass(frozen=True)
class ResonatorDevice:
    """Two-port resonator chain; ``qubit_offset`` is measured from the input
    end of the resonator."""
    resonator_length: float
    c_in: float
    c_out: float
    feed_length: float = 2e-3
    qubit_offset: float | None = None
    inductance_per_length: float = L_LINE
    capacitance_per_length: float = C_LINE
    resistance: float = 50.0
    elements_per_min_wavelength: float = 20.0

    @property
    def z_in(self) -> float:
        return self.feed_length

    @property
    def z_out(self) -> float:
        return self.feed_length + self.resonator_length

    @property
    def length(self) -> float:
        return 2 * self.feed_length + self.resonator_length

    @property
    def qubit_position(self) -> float | None:
        return None if self.qubit_offset is None else self.z_in + self.qubit_offset

    def line_spec(self, with_port: bool = True) -> LineSpec:
        ports = (self.qubit_position,) if (with_port and self.qubit_offset is not None) else ()
        return LineSpec(self.inductance_per_length, self.capacitance_per_length, self.length,
                        source_resistance=self.resistance, load_resistance=self.resistance,
                        coupling_positions=ports,
                        series_capacitors=((self.z_in, self.c_in), (self.z_out, self.c_out)),
                        elements_per_min_wavelength=self.elements_per_min_wavelength)

    def reference_spec(self) -> LineSpec:
        """Matched feed line alone: the incident wave at the source node."""
        return LineSpec(self.inductance_per_length, self.capacitance_per_length,
                        self.feed_length, source_resistance=self.resistance,
                        load_resistance=self.resistance,
                        elements_per_min_wavelength=self.elements_per_min_wavelength)

    def with_(self, **kw) -> "ResonatorDevice":
        return replace(self, **kw)

    @property
    def speed(self) -> float:
        return 1 / np.sqrt(self.inductance_per_length * self.capacitance_per_length)


def probe_pulse(f_center: float, sigma: float = 0.3e-9) -> Pulse:
    return Pulse.centred(1.0, sigma, f_center)


def bare_resonance(device: ResonatorDevice, f_max: float, f_guess: float,
                   duration: float = 400e-9, dt: float | None = None,
                   safety: float = 0.5, half_band: float = 0.4) -> float:
    """Loaded first resonance (Hz) from a simulated reflection spectrum."""
    mesh = build_line_mesh(device.line_spec(False), f_max)
    sys = assemble_line(device.line_spec(False), mesh)
    dt = dt or safety * line_stability_dt(sys)
    ref = assemble_line(device.reference_spec(), build_line_mesh(device.reference_spec(), f_max))
    n = int(np.ceil(duration / dt))
    vs = probe_pulse(f_guess)(np.arange(n) * dt)
    tot, _ = run_line(sys.with_dt(dt), vs, [mesh.source_node])
    inc, _ = run_line(ref.with_dt(dt), vs, [0])
    spec = reflection_spectrum(tot[:, 0], inc[:, 0], dt, pad_factor=8)
    return resonance_peak(spec, f_guess * (1 - half_band), f_guess * (1 + half_band)).frequency


def calibrate_resonator_length(device: ResonatorDevice, f_target: float, f_max: float,
                               rtol: float = 1e-5, max_iter: int = 20, **kw) -> tuple:
    """Scale the resonator length until the loaded resonance hits ``f_target``.

    Returns (device, measured frequency, iteration history).
    """
    hist = []
    f = bare_resonance(device, f_max, f_target, **kw)
    hist.append((device.resonator_length, f))
    for _ in range(max_iter):
        if abs(f - f_target) <= rtol * f_target:
            break
        new_len = device.resonator_length * f / f_target
        device = device.with_(resonator_length=new_len)
        f = bare_resonance(device, f_max, f_target, **kw)
        hist.append((device.resonator_length, f))
    else:
        raise RuntimeError(f"resonator length calibration did not converge: {hist}")
    return device, f, hist


# -- qubits -----------------------------------------------------------------

def control_transmon(beta: float, n_g: float = 0.5) -> QubitSpec:
    return QubitSpec.transmon(25.0, 55e-15, beta=beta, n_g=n_g)


def calibrate_transmon_capacitance(ej_over_ec: float, f01: float, n_nodes: int = 256,
                                   n_g: float = 0.5, bracket=(20e-15, 400e-15)) -> float:
    """C_sigma (F) giving transition frequency ``f01`` (Hz) at fixed E_J/E_C."""
    def err(c):
        return qubit_levels(QubitSpec.transmon(ej_over_ec, c, n_g=n_g), n_nodes, 2) \
            .transition(0, 1) - f01
    return brentq(err, *bracket, xtol=1e-22, rtol=1e-12)


def fluxonium_spec(E_J, E_C, E_L, phi_ext_flux: float, beta: float = 0.0) -> QubitSpec:
    """Energies in GHz; ``phi_ext_flux`` in units of the flux quantum."""
    return QubitSpec("fluxonium", ghz(E_J), ghz(E_C), beta=beta, E_L=ghz(E_L),
                     phi_ext=2 * np.pi * phi_ext_flux)


def calibrate_fluxonium(f_half: float = 0.368e9, f_zero: float = 9.17e9,
                        start=(8.93, 2.5, 0.52), n_nodes: int = 400) -> dict:
    """Fit (E_J, E_L) at fixed E_C so that f01(-0.5) and f01(0) hit the targets."""
    ec = start[1]

    def res(x):
        lo = qubit_levels(fluxonium_spec(x[0], ec, x[1], -0.5), n_nodes, 2).transition(0, 1)
        hi = qubit_levels(fluxonium_spec(x[0], ec, x[1], 0.0), n_nodes, 2).transition(0, 1)
        return [lo / f_half - 1, hi / f_zero - 1]

    sol = least_squares(res, [start[0], start[2]], xtol=1e-13, ftol=1e-13, gtol=1e-13)
    return {"E_J": float(sol.x[0]), "E_C": ec, "E_L": float(sol.x[1]),
            "residual": [float(r) for r in sol.fun], "start": list(start), "n_nodes": n_nodes}


# -- the three devices used by the experiments --------------------------------

def control_device(offset_fraction: float = 0.9) -> ResonatorDevice:
    """4.00 GHz resonator used for the driven Rabi runs."""
    return ResonatorDevice(CONTROL_LENGTH, 20e-15, 20e-15,
                           qubit_offset=offset_fraction * CONTROL_LENGTH)


def readout_device(qubit_offset: float | None = None) -> ResonatorDevice:
    """5.971 GHz resonator used for the transmon dispersive experiments."""
    return ResonatorDevice(READOUT_LENGTH, 20e-15, 20e-15, qubit_offset=qubit_offset)


def readout_transmon(beta: float = 0.1) -> QubitSpec:
    return QubitSpec.transmon(60.0, READOUT_C_SIGMA, beta=beta, n_g=0.5)


def fluxonium_device(offset_fraction: float = 0.05) -> ResonatorDevice:
    """8.18 GHz resonator used for the fluxonium sweep."""
    return ResonatorDevice(FLUXONIUM_LENGTH, 15e-15, 15e-15,
                           qubit_offset=offset_fraction * FLUXONIUM_LENGTH)


def calibrated_fluxonium(phi_ext_flux: float, beta: float = 0.1) -> QubitSpec:
    return fluxonium_spec(*FLUXONIUM_ENERGIES, phi_ext_flux, beta)
