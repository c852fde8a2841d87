"""Post-processing of recorded runs and the analytic cross-check oracles."""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.constants import e as E_CHARGE, hbar as HBAR
from scipy.ndimage import gaussian_filter1d

from .eigen import ReducedModel


class AnalysisError(ValueError):
    pass


@dataclass(frozen=True)
class Spectrum:
    freq: np.ndarray            # Hz, non-negative
    values: np.ndarray          # complex
    meta: dict = field(default_factory=dict)

    @property
    def magnitude(self) -> np.ndarray:
        return np.abs(self.values)

    def band(self, f_lo: float, f_hi: float) -> "Spectrum":
        sel = (self.freq >= f_lo) & (self.freq <= f_hi)
        return Spectrum(self.freq[sel], self.values[sel], self.meta)


def tail_taper(n: int, fraction: float = 0.1) -> np.ndarray:
    """Unit window with a half-Hann roll-off over the last ``fraction``."""
    w = np.ones(n)
    k = int(round(fraction * n))
    if k > 1:
        w[n - k:] = 0.5 * (1 + np.cos(np.pi * np.arange(1, k + 1) / k))
    return w


def amplitude_spectrum(x: np.ndarray, dt: float, pad_factor: int = 1,
                       taper: float = 0.1) -> Spectrum:
    n = len(x)
    nfft = int(2 ** np.ceil(np.log2(n * pad_factor)))
    X = np.fft.rfft(x * tail_taper(n, taper), nfft) * dt
    return Spectrum(np.fft.rfftfreq(nfft, dt), X,
                    {"record_length": n * dt, "nfft": nfft, "window": f"tail-hann {taper}"})


def reflection_spectrum(total: np.ndarray, incident: np.ndarray, dt: float,
                        min_resolution: float | None = None, pad_factor: int = 4,
                        taper: float = 0.1, floor: float = 1e-3) -> Spectrum:
    """Gamma(f) = FFT(total - incident) / FFT(incident).

    ``incident`` is the source-node voltage of a matched reference line with
    the same mesh and time step, so the difference is the reflected wave.
    Bins where the incident spectrum is below ``floor`` times its peak are
    returned as NaN.
    """
    total = np.asarray(total, float)
    incident = np.asarray(incident, float)
    if total.shape != incident.shape:
        raise AnalysisError("total and incident records differ in length")
    T = len(total) * dt
    if min_resolution is not None and T * min_resolution < 1 - 1e-9:
        raise AnalysisError(f"record of {T:.4g} s cannot resolve {min_resolution:.4g} Hz; "
                            f"needs at least {1 / min_resolution:.4g} s")
    inc = amplitude_spectrum(incident, dt, pad_factor, taper)
    ref = amplitude_spectrum(total - incident, dt, pad_factor, taper)
    mag = np.abs(inc.values)
    ok = mag > floor * mag.max()
    gamma = np.full(inc.values.shape, np.nan + 0j)
    gamma[ok] = ref.values[ok] / inc.values[ok]
    meta = dict(inc.meta, resolution=1.0 / T)
    return Spectrum(inc.freq, gamma, meta)


@dataclass(frozen=True)
class PeakFit:
    frequency: float
    height: float
    curvature: float
    bin_index: int
    candidates: tuple = ()


def locate_peak(freq: np.ndarray, response: np.ndarray, rel_ambiguity: float = 0.5,
                guard_bins: int | None = None) -> PeakFit:
    """Parabolic interpolation of log(response) over the three bins around
    the maximum; raises if another local maximum exceeds
    ``rel_ambiguity`` times the main one."""
    y = np.asarray(response, float)
    good = np.isfinite(y) & (y > 0)
    if good.sum() < 3:
        raise AnalysisError("not enough valid bins to locate a peak")
    y = np.where(good, y, 0.0)
    k = int(np.argmax(y))
    if k == 0 or k == len(y) - 1:
        raise AnalysisError("peak lies on the band edge")
    loc = np.flatnonzero((y[1:-1] > y[:-2]) & (y[1:-1] >= y[2:])) + 1
    # a second peak must be separated from the main one by a dip
    others = []
    for i in loc:
        if i == k:
            continue
        lo, hi = sorted((i, k))
        if y[lo:hi + 1].min() < 0.5 * min(y[i], y[k]) and y[i] > rel_ambiguity * y[k]:
            others.append(i)
    if others:
        cands = tuple(float(freq[i]) for i in [k, *others])
        raise AnalysisError(f"ambiguous resonance: comparable peaks at {cands} Hz")
    a, b, c = np.log(y[k - 1:k + 2])
    den = a - 2 * b + c
    delta = 0.5 * (a - c) / den if den != 0 else 0.0
    df = freq[1] - freq[0]
    return PeakFit(float(freq[k] + delta * df), float(np.exp(b - 0.25 * (a - c) * delta)),
                   float(den), k)


def resonance_response(spec: Spectrum) -> np.ndarray:
    """Fraction of incident power not reflected, 1 - |Gamma|^2."""
    return 1.0 - np.abs(spec.values) ** 2


def resonance_peak(spec: Spectrum, f_lo: float, f_hi: float) -> PeakFit:
    b = spec.band(f_lo, f_hi)
    return locate_peak(b.freq, resonance_response(b))


@dataclass(frozen=True)
class DispersiveResult:
    level: int
    frequency: float            # shifted resonator frequency (Hz)
    chi: float                  # shift relative to the bare resonance (Hz)
    bare_frequency: float
    diagnostics: dict = field(default_factory=dict)


def extract_dispersive_shift(spec_m: Spectrum, spec_bare: Spectrum, f_lo: float, f_hi: float,
                             level: int = 0) -> DispersiveResult:
    pm = resonance_peak(spec_m, f_lo, f_hi)
    pb = resonance_peak(spec_bare, f_lo, f_hi)
    return DispersiveResult(level, pm.frequency, pm.frequency - pb.frequency, pb.frequency,
                            {"peak_height": pm.height, "bare_height": pb.height,
                             "curvature": pm.curvature})


def coupling_rates(model: ReducedModel, omega_r: float, resonator_length: float,
                   capacitance_per_length: float, position: float) -> np.ndarray:
    """g_mk (rad/s) for a qubit at distance ``position`` from a resonator end."""
    vzpf = np.sqrt(HBAR * omega_r / (resonator_length * capacitance_per_length))
    return (2 * E_CHARGE * model.beta / HBAR) * vzpf \
        * np.cos(np.pi * position / resonator_length) * model.n_matrix


def loaded_mode_geometry(resonator_length: float, speed: float, f_loaded: float):
    """Electrical length and end correction of a capacitively loaded
    half-wave mode.

    The coupling capacitors pull the resonance below v / (2 l); the mode is
    then cos(pi (z + delta) / l_eff) with l_eff = v / (2 f_loaded) and the
    extra length split evenly between both ends, delta = (l_eff - l) / 2.
    Returns (l_eff, delta).
    """
    l_eff = speed / (2 * f_loaded)
    return l_eff, 0.5 * (l_eff - resonator_length)


def perturbation_dispersive_oracle(model: ReducedModel, omega_r: float, resonator_length: float,
                                   capacitance_per_length: float, position: float,
                                   levels=(0, 1), exclude=()) -> np.ndarray:
    """Second-order dispersive shifts chi_m (Hz) of the resonator.

    chi_mk = |g_mk|^2 / (omega_mk - omega_r) with omega_mk = (E_m - E_k)/hbar
    and chi_m = sum_k (chi_mk - chi_km); the resonator frequency with the
    qubit in level m is omega_r + chi_m.  Level pairs listed in ``exclude``
    are left out of the sums (used to isolate a resonant contribution).
    """
    skip = {frozenset(p) for p in exclude}
    g = coupling_rates(model, omega_r, resonator_length, capacitance_per_length, position)
    w = model.omega
    out = []
    for m in levels:
        tot = 0.0
        for k in range(model.n_eig):
            if k == m or frozenset((m, k)) in skip:
                continue
            g2 = abs(g[m, k]) ** 2
            for d in (w[m] - w[k] - omega_r, w[k] - w[m] - omega_r):
                if g2 > 0 and abs(d) < 10 * abs(g[m, k]):
                    warnings.warn(f"near-resonant denominator for levels ({m}, {k}); "
                                  "second-order perturbation theory is not valid here",
                                  RuntimeWarning, stacklevel=2)
            tot += g2 / (w[m] - w[k] - omega_r) - g2 / (w[k] - w[m] - omega_r)
        out.append(tot / (2 * np.pi))
    return np.array(out)


def track_oscillation_frequency(t: np.ndarray, phase: np.ndarray, smooth: float = 1e-9,
                                reference: float = 0.0):
    """Instantaneous frequency offset (Hz) of a coefficient from its phase.

    A coefficient evolving as exp(-i w t) has offset w / (2 pi), so a
    positive value means the level moved up.  The unwrapped phase is
    smoothed by a unit-sum Gaussian of width ``smooth`` seconds and then
    differenced, which is exact for linear phase; samples within four widths
    of either end are biased by the boundary padding.
    """
    t = np.asarray(t, float)
    phase = np.asarray(phase, float)
    dts = t[1] - t[0]
    jumps = np.angle(np.exp(1j * np.diff(phase)))
    if np.any(np.abs(jumps) > 0.9 * np.pi):
        raise AnalysisError("phase advances by about pi between samples; record the "
                            "phase more densely or reduce dt")
    ph = np.unwrap(phase)
    sig = smooth / dts
    dph = np.gradient(gaussian_filter1d(ph, sig, mode="nearest"), dts)
    return -dph / (2 * np.pi) - reference, {"smoothing_sigma_s": smooth, "sample_dt_s": dts}


@dataclass(frozen=True)
class DecayFit:
    rate: float
    amplitude: float
    residual: float             # rms of log residuals
    r2: float                   # coefficient of determination of the fit in linear scale


def fit_exponential_decay(t: np.ndarray, y: np.ndarray) -> DecayFit:
    """y ~ A exp(-rate t) by linear least squares on log y."""
    t = np.asarray(t, float)
    y = np.asarray(y, float)
    if len(y) < 10:
        raise AnalysisError("need at least 10 samples for a decay fit")
    if np.any(y <= 0) or not np.all(np.isfinite(y)):
        raise AnalysisError("decay fit needs a strictly positive series")
    slope, icpt = np.polyfit(t, np.log(y), 1)
    res = np.log(y) - (slope * t + icpt)
    fit = np.exp(icpt + slope * t)
    ss = np.sum((y - y.mean()) ** 2)
    r2 = 1.0 - np.sum((y - fit) ** 2) / ss if ss > 0 else 1.0
    return DecayFit(float(-slope), float(np.exp(icpt)), float(np.sqrt(np.mean(res**2))), float(r2))


@dataclass(frozen=True)
class ResonatorQ:
    omega_unloaded: float
    omega_loaded: float
    q_loaded: float
    kappa: float                # power decay rate (1/s)


def resonator_q_oracle(inductance_per_length: float, capacitance_per_length: float,
                       length: float, coupling_capacitors, load_resistances,
                       omega: float | None = None, mode: int = 1) -> ResonatorQ:
    """Loaded Q of a capacitively coupled half-wave resonator.

    Each coupling capacitor C_k in series with R is replaced by the parallel
    pair R* = (1 + w^2 C_k^2 R^2)/(w^2 C_k^2 R), C* = C_k/(1 + w^2 C_k^2 R^2)
    across the lumped mode (C = c l / 2, L_n = 2 l_ind l / (n pi)^2).
    """
    caps = list(coupling_capacitors)
    rs = list(load_resistances)
    if not caps or any(c is None or c <= 0 for c in caps):
        raise ValueError("oracle needs a positive coupling capacitor on every port")
    c_eq = capacitance_per_length * length / 2
    l_n = 2 * inductance_per_length * length / (mode * np.pi) ** 2
    w0 = 1 / np.sqrt(l_n * c_eq)
    w = w0 if omega is None else omega
    g_tot, c_tot = 0.0, c_eq
    for ck, r in zip(caps, rs):
        x = (w * ck * r) ** 2
        g_tot += w**2 * ck**2 * r / (1 + x)
        c_tot += ck / (1 + x)
    w_loaded = 1 / np.sqrt(l_n * c_tot)
    kappa = g_tot / c_tot
    q = (w if omega is not None else w_loaded) / kappa
    if q < 10:
        raise ValueError(f"loaded Q = {q:.3g}; the lumped resonator model is not valid")
    return ResonatorQ(w0, w_loaded, q, kappa)
