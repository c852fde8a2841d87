"""Experiment drivers shared by the CLI, the scripts and the acceptance suite.

Each driver takes a frozen setup dataclass and returns a result dataclass
holding the recorded series and the numbers the acceptance checks need.
Sweeps fan out over a process pool when ``jobs > 1``.
"""
from __future__ import annotations

import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.constants import hbar as HBAR
from scipy.optimize import brentq

from . import kernels
from .analysis import (AnalysisError, DecayFit, amplitude_spectrum,
                       extract_dispersive_shift, fit_exponential_decay, loaded_mode_geometry,
                       perturbation_dispersive_oracle, reflection_spectrum, resonance_peak,
                       resonator_q_oracle, track_oscillation_frequency)
from .coupler import (Calibration, CoupledConfig, Pulse, Recorder, Simulation, calibrate_pulse_area,
                      run_line)
from .devices import (FLUXONIUM_ENERGIES, FLUXONIUM_F_R, READOUT_F_R, READOUT_LENGTH,
                      ResonatorDevice, calibrated_fluxonium, control_device, control_transmon,
                      fluxonium_device, fluxonium_spec, readout_device, readout_transmon)
from .eigen import EigenBasis, qubit_levels
from .linalg import alternating_start
from .qubit import QubitSpec
from .txline import assemble_line, build_line_mesh


def parallel_map(fn, items, jobs: int = 1):
    items = list(items)
    if jobs <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=jobs) as ex:
        return list(ex.map(fn, items))


# -- eigen-spectrum -----------------------------------------------------------

def eigen_table(spec: QubitSpec, n_phase: int, n_eig: int = 5):
    """Rows (level, E_n/h in GHz, f_{n,n+1} in GHz; NaN for the top level)."""
    basis = qubit_levels(spec, n_phase, n_eig)
    f = basis.frequencies / 1e9
    nxt = np.append(np.diff(f), np.nan)
    return [(k, float(f[k]), float(nxt[k])) for k in range(n_eig)], basis


# -- Rabi ---------------------------------------------------------------------

@dataclass(frozen=True)
class RabiSetup:
    beta: float = 0.01
    sigma: float = 5e-9
    area_pi: float = 6.0              # target rotation in units of pi
    duration: float = 70e-9
    n_phase: int = 128
    calibration_n_eig: int = 10
    n_eig: int = 3
    f_max: float = 20e9
    offset_fraction: float = 0.9
    n_eig_sweep: tuple = (2, 3, 4, 5, 6, 8, 10)
    run_full: bool = True
    amplitude: float | None = None    # skip calibration if given (2 pi amplitude)

    def config(self, **kw) -> CoupledConfig:
        dev = control_device(self.offset_fraction)
        base = CoupledConfig(dev.line_spec(), control_transmon(self.beta), self.duration,
                             self.f_max, model="reduced", n_eig=self.calibration_n_eig,
                             n_phase=self.n_phase, coupling="one-way", n_record_levels=3)
        return base.with_(**kw)


@dataclass
class RabiResult:
    setup: RabiSetup
    pulse: Pulse
    calibration: Calibration | None
    one_way: Recorder
    two_way: Recorder
    full: Recorder | None = None
    sweep: dict = field(default_factory=dict)     # n_eig -> Recorder at the full model's dt
    f01: float = float("nan")

    def final(self, rec: Recorder) -> np.ndarray:
        return rec.occupations[-1]

    def n_eig_errors(self) -> dict:
        """n_eig -> (final-state max difference, whole-trace max difference)
        against the full model over the first two levels."""
        out = {}
        ref = self.full.occupations[:, :2]
        for ne, rec in sorted(self.sweep.items()):
            d = np.abs(rec.occupations[:, :2] - ref)
            out[ne] = (float(d[-1].max()), float(d.max()))
        return out


def run_rabi(setup: RabiSetup, base: CoupledConfig | None = None) -> RabiResult:
    """Calibrate a 2 pi pulse (reduced, one-way, ``calibration_n_eig`` levels),
    scale it to the target area, then run reduced one-way and two-way with
    ``n_eig`` levels, the full model, and an n_eig sweep at the full model's
    dt.  ``base`` replaces the control-device configuration."""
    cfg = setup.config() if base is None else base.with_(
        model="reduced", n_eig=setup.calibration_n_eig, coupling="one-way")
    sim = Simulation(cfg)
    f01 = sim.basis.transition(0, 1)
    cal = None
    if setup.amplitude is None:
        cal = calibrate_pulse_area(sim, setup.area_pi * np.pi, setup.sigma, f01)
        pulse = cal.pulse
    else:
        pulse = Pulse.centred(setup.amplitude * setup.area_pi / 2, setup.sigma, f01,
                              label=f"{setup.area_pi:g}pi")
    rc = cfg.with_(n_eig=setup.n_eig)
    one = Simulation(rc).run(pulse)
    two = Simulation(rc.with_(coupling="two-way")).run(pulse)
    res = RabiResult(setup, pulse, cal, one, two, f01=f01)
    if setup.run_full:
        res.full = Simulation(cfg.with_(model="full", coupling="two-way")).run(pulse)
        dt = res.full.meta["dt"]
        for ne in setup.n_eig_sweep:
            res.sweep[ne] = Simulation(cfg.with_(coupling="two-way", n_eig=ne, dt=dt)).run(pulse)
    return res


def post_pulse_band_amplitude(rec: Recorder, pulse: Pulse, f_center: float, level: int = 1,
                              rel_band: float = 0.1) -> float:
    """Largest spectral amplitude of the post-pulse occupation of ``level``
    within f_center * (1 +/- rel_band)."""
    sel = rec.t > pulse.end
    y = rec.occupations[sel, level]
    y = y - y.mean()
    spec = amplitude_spectrum(y, rec.dt_sample, pad_factor=4)
    return float(np.max(np.abs(spec.band(f_center * (1 - rel_band),
                                          f_center * (1 + rel_band)).values)))


def round_trip_frequency(device: ResonatorDevice) -> float:
    return device.speed / (2 * device.resonator_length)


# -- dispersive shift ---------------------------------------------------------

@dataclass(frozen=True)
class DispersiveSetup:
    device: ResonatorDevice
    qubit: QubitSpec
    f_r: float
    n_eig: int = 10
    n_phase: int = 256
    amplitude: float = 1e-6
    sigma: float = 0.3e-9
    duration: float = 400e-9
    f_max: float = 20e9
    levels: tuple = (0, 1)
    rel_band: float = 0.08
    pad_factor: int = 16
    keep_spectra: bool = False
    exclude: tuple = ()              # level pairs left out of the oracle sums


@dataclass
class DispersivePoint:
    qubit_offset: float
    chi: np.ndarray                 # simulated chi_m (Hz), NaN where the peak is ambiguous
    oracle_electrical: np.ndarray   # chi_m with the loaded mode geometry
    oracle_physical: np.ndarray     # chi_m with the bare geometry
    oracle_n_eig3: np.ndarray       # electrical geometry, three-level sums
    bare_frequency: float
    dt: float
    errors: tuple = ()
    spectra: dict = field(default_factory=dict)

    def rel_error(self) -> np.ndarray:
        return self.chi / self.oracle_electrical - 1.0


def _oracles(model, device, f_bare, levels, exclude=()):
    wr = 2 * np.pi * f_bare
    l_eff, delta = loaded_mode_geometry(device.resonator_length, device.speed, f_bare)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        elec = perturbation_dispersive_oracle(model, wr, l_eff, device.capacitance_per_length,
                                              device.qubit_offset + delta, levels, exclude)
        phys = perturbation_dispersive_oracle(model, wr, device.resonator_length,
                                              device.capacitance_per_length, device.qubit_offset,
                                              levels, exclude)
        three = perturbation_dispersive_oracle(model.truncate(3), wr, l_eff,
                                               device.capacitance_per_length,
                                               device.qubit_offset + delta, levels, exclude)
    return elec, phys, three


def dispersive_point(s: DispersiveSetup) -> DispersivePoint:
    """chi_m from reflection spectra of the qubit-loaded resonator started in
    level m, against the same run with beta = 0."""
    cfg = CoupledConfig(s.device.line_spec(), s.qubit, s.duration, s.f_max, model="reduced",
                        n_eig=s.n_eig, n_phase=s.n_phase, probes=(0.0,),
                        record_interval=1e-15, n_record_levels=min(3, s.n_eig))
    pulse = Pulse.centred(s.amplitude, s.sigma, s.f_r)
    sim = Simulation(cfg)
    dt, _ = sim.choose_timestep(pulse)
    bare = Simulation(cfg.with_(qubit=s.qubit.with_(beta=0.0))).run(pulse, dt=dt)
    ref = s.device.reference_spec()
    rsys = assemble_line(ref, build_line_mesh(ref, s.f_max)).with_dt(dt)
    inc, _ = run_line(rsys, pulse(np.arange(bare.meta["nsteps"]) * dt), [0])
    inc = inc[:, 0]
    spec = lambda rec: reflection_spectrum(rec.probe_v[:, 0], inc, dt, pad_factor=s.pad_factor)
    sb = spec(bare)
    lo, hi = s.f_r * (1 - s.rel_band), s.f_r * (1 + s.rel_band)
    spectra = {"bare": sb} if s.keep_spectra else {}
    chis, errs, f_bare = [], [], None
    for m in s.levels:
        rec = Simulation(cfg.with_(initial_level=m)).run(pulse, dt=dt)
        sm = spec(rec)
        if s.keep_spectra:
            spectra[m] = sm
        try:
            r = extract_dispersive_shift(sm, sb, lo, hi, m)
            chis.append(r.chi)
            f_bare = r.bare_frequency
        except AnalysisError as exc:
            chis.append(np.nan)
            errs.append((m, str(exc)))
    if f_bare is None:
        f_bare = resonance_peak(sb, lo, hi).frequency
    elec, phys, three = _oracles(sim.reduced, s.device, f_bare, s.levels, s.exclude)
    return DispersivePoint(s.device.qubit_offset, np.array(chis), elec, phys, three, f_bare, dt,
                           tuple(errs), spectra)


def readout_sweep_offsets(n: int = 9) -> np.ndarray:
    """Qubit positions along the readout resonator, clear of the mode node."""
    fr = np.array([0.05, 0.1, 0.15, 0.2, 0.26, 0.32, 0.37, 0.42, 0.45])
    if n != len(fr):
        fr = np.linspace(0.05, 0.45, n)
    return fr * READOUT_LENGTH


def dispersive_sweep(offsets, beta: float = 0.1, jobs: int = 1, **kw) -> list[DispersivePoint]:
    q = readout_transmon(beta)
    setups = [DispersiveSetup(readout_device(float(z)), q, READOUT_F_R, **kw) for z in offsets]
    return parallel_map(dispersive_point, setups, jobs)


# -- photon-number frequency tracking ----------------------------------------

@dataclass(frozen=True)
class TrackSetup:
    qubit_offset: float = 1.847e-3
    beta: float = 0.1
    device: ResonatorDevice | None = None     # replaces the readout device
    qubit: QubitSpec | None = None            # replaces the readout transmon
    f_r: float = READOUT_F_R
    amplitude: float = 1e-7
    sigma: float = 10e-9
    detuning: float = 3e6
    tail: float = 150e-9
    settle: float = 5e-9             # wait after the pulse before fitting
    n_decay: float = 3.0             # fit window length in units of 1/kappa
    smooth: float = 1e-9
    n_eig: int = 10
    n_phase: int = 256
    f_max: float = 20e9


@dataclass
class TrackResult:
    t: np.ndarray
    offset: np.ndarray               # Hz
    window: tuple
    fit: DecayFit
    kappa_oracle: float
    q_loaded: float
    pulse: Pulse
    meta: dict


def track_frequency(s: TrackSetup) -> TrackResult:
    dev = s.device or readout_device(s.qubit_offset)
    qubit = s.qubit or readout_transmon(s.beta)
    pulse = Pulse.centred(s.amplitude, s.sigma, s.f_r + s.detuning)
    cfg = CoupledConfig(dev.line_spec(), qubit, pulse.end + s.tail, s.f_max,
                        model="reduced", n_eig=s.n_eig, n_phase=s.n_phase, record_interval=10e-12)
    rec = Simulation(cfg).run(pulse)
    off, meta = track_oscillation_frequency(rec.t, rec.phase0, smooth=s.smooth)
    qo = resonator_q_oracle(dev.inductance_per_length, dev.capacitance_per_length,
                            dev.resonator_length, [dev.c_in, dev.c_out],
                            [dev.resistance] * 2, omega=2 * np.pi * s.f_r)
    t0 = pulse.end + s.settle
    window = (t0, t0 + s.n_decay / qo.kappa)
    sel = (rec.t > window[0]) & (rec.t < window[1])
    y = off[sel] * np.sign(np.mean(off[sel]))
    fit = fit_exponential_decay(rec.t[sel], y)
    return TrackResult(rec.t, off, window, fit, qo.kappa, qo.q_loaded, pulse,
                       dict(meta, dt=rec.meta["dt"]))


# -- fluxonium ----------------------------------------------------------------

@dataclass(frozen=True)
class Crossing:
    phi_ext: float                   # flux quanta
    lower: int
    upper: int
    multiple: int                    # transition crosses multiple * f_r


def fluxonium_transitions(phi: float, n_phase: int = 400, n_eig: int = 10,
                          energies=FLUXONIUM_ENERGIES) -> EigenBasis:
    return qubit_levels(fluxonium_spec(*energies, phi), n_phase, n_eig)


def fluxonium_crossings(f_r: float = FLUXONIUM_F_R, lo: float = -0.5, hi: float = 0.0,
                        n_grid: int = 201, levels=(0, 1), multiples=(1, 2),
                        n_phase: int = 400, n_eig: int = 10,
                        energies=FLUXONIUM_ENERGIES) -> list[Crossing]:
    """Flux biases where |f_mk| = multiple * f_r for m in ``levels``."""
    grid = np.linspace(lo, hi, n_grid)
    freqs = np.array([fluxonium_transitions(p, n_phase, n_eig, energies).frequencies
                      for p in grid])
    pairs = sorted({(min(m, k), max(m, k)) for m in levels for k in range(n_eig) if k != m})
    out = []
    for a, b in pairs:
        for mult in multiples:
            d = np.abs(freqs[:, b] - freqs[:, a]) - mult * f_r

            def fn(p):
                f = fluxonium_transitions(p, n_phase, n_eig, energies).frequencies
                return abs(f[b] - f[a]) - mult * f_r

            for i in np.flatnonzero(np.sign(d[:-1]) * np.sign(d[1:]) < 0):
                out.append(Crossing(float(brentq(fn, grid[i], grid[i + 1], xtol=1e-7)),
                                    a, b, mult))
    return sorted(out, key=lambda c: (c.multiple, c.phi_ext, c.lower, c.upper))


def detuned_bias(c: Crossing, detuning: float, f_r: float = FLUXONIUM_F_R, span: float = 0.05,
                 n_phase: int = 400, n_eig: int = 10) -> tuple[float, float]:
    """Flux biases on either side of a crossing where the transition sits
    ``detuning`` (Hz) away from multiple * f_r."""
    def d(p):
        f = fluxonium_transitions(p, n_phase, n_eig).frequencies
        return abs(f[c.upper] - f[c.lower]) - c.multiple * f_r
    out = []
    for direction in (-1, 1):
        target = lambda p: abs(d(p)) - detuning
        step = 1e-4
        p = c.phi_ext + direction * step
        while abs(d(p)) < detuning:
            step *= 1.5
            if step > span:
                raise AnalysisError(f"no bias within {span} of {c.phi_ext} reaches "
                                    f"{detuning:.3g} Hz detuning")
            p = c.phi_ext + direction * step
        out.append(brentq(target, c.phi_ext + direction * step / 1.5, p, xtol=1e-8))
    return out[0], out[1]


@dataclass(frozen=True)
class FluxoniumSetup:
    phi_ext: float
    beta: float = 0.1
    amplitude: float = 1e-7
    n_phase: int = 400
    n_eig: int = 10
    offset_fraction: float = 0.05
    levels: tuple = (0, 1)
    rel_band: float = 0.1
    duration: float = 400e-9
    f_max: float = 24e9
    exclude: tuple = ()

    def dispersive(self) -> DispersiveSetup:
        return DispersiveSetup(fluxonium_device(self.offset_fraction),
                               calibrated_fluxonium(self.phi_ext, self.beta), FLUXONIUM_F_R,
                               n_eig=self.n_eig, n_phase=self.n_phase, amplitude=self.amplitude,
                               levels=self.levels, rel_band=self.rel_band,
                               duration=self.duration, f_max=self.f_max,
                               exclude=self.exclude)


def fluxonium_point(s: FluxoniumSetup) -> DispersivePoint:
    return dispersive_point(s.dispersive())


@dataclass
class FeatureCheck:
    crossing: Crossing
    level: int
    biases: tuple
    chi: tuple                       # simulated chi_level at both biases (Hz)
    background: tuple                # oracle without the resonant pair (Hz)
    ambiguous: tuple                 # peak split or ambiguous at each bias

    @property
    def residual(self) -> tuple:
        return tuple(c - b for c, b in zip(self.chi, self.background))

    @property
    def present(self) -> bool:
        """Resonant feature: the peak splits, or the shift left after removing
        the non-resonant background changes sign across the crossing."""
        if any(self.ambiguous):
            return True
        r = self.residual
        return bool(np.sign(r[0]) * np.sign(r[1]) < 0)


def feature_check(c: Crossing, level: int, detuning: float = 40e6, jobs: int = 1,
                  **kw) -> FeatureCheck:
    biases = detuned_bias(c, detuning)
    pts = parallel_map(fluxonium_point,
                       [FluxoniumSetup(p, levels=(level,), exclude=((c.lower, c.upper),), **kw)
                        for p in biases], jobs)
    chi = tuple(float(p.chi[0]) for p in pts)
    bg = tuple(float(p.oracle_electrical[0]) for p in pts)
    amb = tuple(bool(np.isnan(p.chi[0])) for p in pts)
    return FeatureCheck(c, level, biases, chi, bg, amb)


# -- stability ----------------------------------------------------------------

def stability_bounds(cfg: CoupledConfig, pulse: Pulse) -> dict:
    """Line, full-qubit and reduced-qubit step bounds and the chosen dt."""
    sim = Simulation(cfg)
    b = sim.bounds(pulse)
    dt, _ = sim.choose_timestep(pulse)
    b["dt"] = dt
    return b


@dataclass(frozen=True)
class GrowthCheck:
    kind: str
    factor: float
    steps: int
    growth: float                    # max norm in the last tenth / max in the first tenth
    aborted_at: int                  # -1 when all steps completed

    @property
    def diverged(self) -> bool:
        return self.aborted_at >= 0 or not np.isfinite(self.growth) or self.growth > 1e3

    @property
    def stable(self) -> bool:
        return self.aborted_at < 0 and np.isfinite(self.growth) and self.growth < 2.0


def _growth(norms: np.ndarray, status: int) -> float:
    if status >= 0:
        return float("inf")
    k = max(1, len(norms) // 10)
    return float(np.max(norms[-k:]) / np.max(norms[:k]))


def growth_check(sim: Simulation, pulse: Pulse, kind: str, factor: float,
                 steps: int = 100_000) -> GrowthCheck:
    """Free-run one subsystem at ``factor`` times its stability bound.

    The line starts from an alternating flux pattern with the source off;
    the qubit models are driven by a constant port voltage V_max, the value
    their bound assumes.
    """
    vmax = sim.v_max(pulse)
    if kind == "line":
        dt = factor * sim.line_bound
        sys = sim.line.with_dt(dt)
        lhs, b1, b0 = sys.stepping_bands()
        x = alternating_start(sys.n)
        out_v = np.zeros((steps, 0))
        norms = np.zeros(steps)
        status = kernels.run_line_kernel(
            x.copy(), x.copy(), lhs.lower, lhs.cp, lhs.inv, b1.lower, b1.diag, b1.upper,
            b0.lower, b0.diag, b0.upper, -1, 0.0, np.zeros(steps), dt,
            np.zeros(0, dtype=np.int64), 1, out_v, norms)
    elif kind == "reduced":
        m = sim.reduced
        dt = factor * sim.qubit_bound(vmax, "reduced")
        c = (1.0 + 0.1 * np.arange(m.n_eig)).astype(complex)
        norms = np.zeros(steps)
        status = kernels.drive_reduced_kernel(
            np.ascontiguousarray(m.omega), np.ascontiguousarray(m.charge), c.copy(), c.copy(),
            np.full(steps, vmax), dt, sim.drive_gain_per_volt, norms)
    elif kind == "full":
        dt = factor * sim.qubit_bound(vmax, "full")
        e0, hb, qb, eb, es, _ = sim.full_arrays()
        a = alternating_start(sim.ops.n).astype(complex)
        norms = np.zeros(steps)
        status = kernels.drive_full_kernel(
            hb.lower, hb.diag, hb.upper, hb.top_right, hb.bottom_left,
            qb.lower, qb.diag, qb.upper, float(qb.top_right), float(qb.bottom_left),
            es.lower, es.cp, es.inv, es.z, float(np.real(es.sm_last)),
            float(np.real(es.sm_scale)), es.cyclic,
            eb.lower, eb.diag, eb.upper, float(eb.top_right), float(eb.bottom_left),
            a.copy(), a.copy(), np.full(steps, vmax), dt, sim.drive_gain_per_volt,
            HBAR, norms)
    else:
        raise ValueError(f"unknown subsystem {kind!r}")
    return GrowthCheck(kind, factor, steps, _growth(norms, status), int(status))

