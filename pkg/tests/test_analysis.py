import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.signal import hilbert

from msqsim.analysis import (AnalysisError, Spectrum, coupling_rates, extract_dispersive_shift,
                             fit_exponential_decay, loaded_mode_geometry, locate_peak,
                             perturbation_dispersive_oracle, reflection_spectrum,
                             resonator_q_oracle, track_oscillation_frequency)
from msqsim.coupler import CoupledConfig, Pulse, Simulation
from msqsim.devices import (C_LINE, CONTROL_F_R, L_LINE, READOUT_F_R, READOUT_LENGTH,
                            control_device, readout_transmon)
from msqsim.eigen import build_reduced_model, solve_eigenbasis
from msqsim.qubit import assemble_operators


def _lorentz_spectrum(f0, width=20e6, n=4001):
    f = np.linspace(f0 - 0.5e9, f0 + 0.5e9, n)
    gamma = np.sqrt(1 - 0.8 / (1 + ((f - f0) / width) ** 2)) + 0j
    return Spectrum(f, gamma)


# -- spectra and peaks ----------------------------------------------------------

def test_identical_spectra_give_zero_shift():
    s = _lorentz_spectrum(6e9)
    r = extract_dispersive_shift(s, s, 5.6e9, 6.4e9)
    assert r.chi == 0.0 and r.frequency == r.bare_frequency


def test_shifted_spectrum_recovered():
    r = extract_dispersive_shift(_lorentz_spectrum(6.0031e9), _lorentz_spectrum(6.0e9),
                                 5.6e9, 6.4e9)
    assert r.chi == pytest.approx(3.1e6, rel=2e-2)


@settings(max_examples=20, deadline=None)
@given(scale=st.floats(1e-6, 1e3), seed=st.integers(0, 2**16))
def test_reflection_invariant_to_amplitude(scale, seed):
    rng = np.random.default_rng(seed)
    inc = Pulse.centred(1.0, 0.3e-9, 6e9)(np.arange(2000) * 1e-12)
    tot = inc + 0.3 * np.roll(inc, 300) + 1e-3 * rng.standard_normal(2000)
    a = reflection_spectrum(tot, inc, 1e-12)
    b = reflection_spectrum(scale * tot, scale * inc, 1e-12)
    ok = np.isfinite(a.values)
    np.testing.assert_array_equal(ok, np.isfinite(b.values))
    np.testing.assert_allclose(a.values[ok], b.values[ok], rtol=1e-9, atol=1e-12)


def test_reflection_rejects_short_records():
    x = np.ones(100)
    with pytest.raises(AnalysisError):
        reflection_spectrum(x, x, 1e-12, min_resolution=1e6)
    with pytest.raises(AnalysisError):
        reflection_spectrum(x, x[:50], 1e-12)


def test_peak_interpolation_between_bins():
    f = np.linspace(0, 1, 101)
    y = np.exp(-((f - 0.4237) / 0.05) ** 2)
    assert locate_peak(f, y).frequency == pytest.approx(0.4237, abs=1e-6)   # exact for Gaussians


def test_ambiguous_peaks_raise():
    f = np.linspace(0, 1, 201)
    y = np.exp(-((f - 0.3) / 0.02) ** 2) + 0.8 * np.exp(-((f - 0.7) / 0.02) ** 2) + 1e-6
    with pytest.raises(AnalysisError, match="ambiguous"):
        locate_peak(f, y)
    # a small side lobe is not ambiguous
    y2 = np.exp(-((f - 0.3) / 0.02) ** 2) + 0.2 * np.exp(-((f - 0.7) / 0.02) ** 2) + 1e-6
    assert locate_peak(f, y2).frequency == pytest.approx(0.3, abs=1e-3)


def test_peak_on_band_edge_raises():
    f = np.linspace(0, 1, 50)
    with pytest.raises(AnalysisError):
        locate_peak(f, np.exp(-f))


# -- decay fits -----------------------------------------------------------------

def test_decay_fit_exact():
    t = np.linspace(0, 1e-7, 200)
    fit = fit_exponential_decay(t, 3.0 * np.exp(-4e7 * t))
    assert fit.rate == pytest.approx(4e7, rel=1e-10)
    assert fit.amplitude == pytest.approx(3.0, rel=1e-10)
    assert fit.r2 == pytest.approx(1.0)


def test_decay_fit_constant_has_zero_rate():
    t = np.linspace(0, 1e-7, 100)
    fit = fit_exponential_decay(t, np.full(100, 2.0))
    assert abs(fit.rate) < 1e-6 and fit.r2 == 1.0


def test_decay_fit_with_five_percent_noise():
    rng = np.random.default_rng(1)
    t = np.linspace(0, 3 / 6.5e7, 400)
    y = np.exp(-6.5e7 * t) * (1 + 0.05 * rng.standard_normal(t.size))
    assert fit_exponential_decay(t, y).rate == pytest.approx(6.5e7, rel=0.02)


def test_decay_fit_input_checks():
    with pytest.raises(AnalysisError):
        fit_exponential_decay(np.arange(5.0), np.ones(5))
    with pytest.raises(AnalysisError):
        fit_exponential_decay(np.arange(20.0), np.linspace(1, -1, 20))


# -- dispersive oracle ----------------------------------------------------------

@pytest.fixture(scope="module")
def readout_model():
    ops = assemble_operators(readout_transmon(0.02), 128)
    return build_reduced_model(ops, solve_eigenbasis(ops, 6))


def _brute_force_shift(model, omega_r, position, n_photons=4):
    """Exact qubit x resonator diagonalisation; chi_m from the one-photon splitting."""
    g = coupling_rates(model, omega_r, READOUT_LENGTH, C_LINE, position)
    a = np.diag(np.sqrt(np.arange(1, n_photons)), 1)
    h = np.kron(np.diag(model.omega), np.eye(n_photons)) \
        + omega_r * np.kron(np.eye(model.n_eig), a.T @ a) + np.kron(g, a + a.T)
    w, v = np.linalg.eigh(h)

    def level(q, n):
        return w[np.argmax(np.abs(v[q * n_photons + n]) ** 2)]

    return np.array([(level(q, 1) - level(q, 0) - omega_r) / (2 * np.pi) for q in (0, 1)])


@pytest.mark.parametrize("fraction", [0.05, 0.2, 0.35])
def test_oracle_matches_brute_force(readout_model, fraction):
    wr = 2 * np.pi * READOUT_F_R
    pos = fraction * READOUT_LENGTH
    oracle = perturbation_dispersive_oracle(readout_model, wr, READOUT_LENGTH, C_LINE, pos)
    np.testing.assert_allclose(oracle, _brute_force_shift(readout_model, wr, pos), rtol=1e-3)


def test_oracle_vanishes_at_the_voltage_node(readout_model):
    wr = 2 * np.pi * READOUT_F_R
    chi = perturbation_dispersive_oracle(readout_model, wr, READOUT_LENGTH, C_LINE,
                                         READOUT_LENGTH / 2)
    ref = perturbation_dispersive_oracle(readout_model, wr, READOUT_LENGTH, C_LINE, 0.0)
    assert np.all(np.abs(chi) < 1e-12 * np.abs(ref))


def test_oracle_exclusion_and_resonance_warning(readout_model):
    wr = 2 * np.pi * READOUT_F_R
    full = perturbation_dispersive_oracle(readout_model, wr, READOUT_LENGTH, C_LINE, 0.0)
    part = perturbation_dispersive_oracle(readout_model, wr, READOUT_LENGTH, C_LINE, 0.0,
                                          exclude=((0, 1),))
    assert not np.allclose(full, part)
    w01 = readout_model.omega[1]
    with pytest.warns(RuntimeWarning, match="near-resonant"):
        perturbation_dispersive_oracle(readout_model, w01 * (1 + 1e-7), READOUT_LENGTH,
                                       C_LINE, 0.0)


def test_loaded_geometry():
    l_eff, delta = loaded_mode_geometry(0.01, 1e8, 4.9e9)
    assert l_eff == pytest.approx(1e8 / 9.8e9)
    assert 0.01 + 2 * delta == pytest.approx(l_eff)


# -- resonator Q ----------------------------------------------------------------

def _q(ck, **kw):
    return resonator_q_oracle(L_LINE, C_LINE, 8.6e-3, [ck, ck], [50.0, 50.0], **kw)


def test_q_scales_with_inverse_square_of_coupling():
    assert _q(20e-15).q_loaded / _q(40e-15).q_loaded == pytest.approx(4.0, rel=0.05)


def test_q_validity_gate():
    with pytest.raises(ValueError):
        _q(5e-12)
    with pytest.raises(ValueError):
        resonator_q_oracle(L_LINE, C_LINE, 8.6e-3, [None], [50.0])


def test_q_matches_simulated_ring_down():
    dev = control_device()
    probe = dev.z_in + 0.1 * dev.resonator_length
    pulse = Pulse.centred(1.0, 2e-9, CONTROL_F_R)
    cfg = CoupledConfig(dev.line_spec(False), None, pulse.end + 150e-9, 20e9,
                        probes=(probe,), record_interval=5e-12)
    rec = Simulation(cfg).run(pulse)
    env2 = np.abs(hilbert(rec.probe_v[:, 0])) ** 2
    sel = (rec.t > pulse.end + 10e-9) & (rec.t < rec.t[-1] - 10e-9)
    rate = fit_exponential_decay(rec.t[sel], env2[sel]).rate
    qo = resonator_q_oracle(L_LINE, C_LINE, dev.resonator_length, [dev.c_in, dev.c_out],
                            [50.0, 50.0], omega=2 * np.pi * CONTROL_F_R)
    assert rate == pytest.approx(qo.kappa, rel=0.05)


# -- frequency tracking ---------------------------------------------------------

def test_free_evolution_tracks_zero_offset():
    t = np.arange(4000) * 10e-12
    f = 1.3e9
    phase = np.angle(np.exp(-2j * np.pi * f * t))
    off, _ = track_oscillation_frequency(t, phase, reference=f)
    assert np.abs(off[500:-500]).max() < 1.0       # Hz, on a 1.3 GHz carrier


def test_tracking_follows_a_frequency_step():
    t = np.arange(4000) * 10e-12
    f = np.where(t < 20e-9, 1e6, 3e6)
    phase = np.angle(np.exp(-2j * np.pi * np.cumsum(f) * 10e-12))
    off, _ = track_oscillation_frequency(t, phase, smooth=0.5e-9)
    assert off[500] == pytest.approx(1e6, rel=1e-3)
    assert off[3500] == pytest.approx(3e6, rel=1e-3)


def test_tracking_rejects_aliased_phase():
    t = np.arange(100) * 1e-9
    phase = np.angle(np.exp(-2j * np.pi * 0.49e9 * t))
    with pytest.raises(AnalysisError, match="about pi"):
        track_oscillation_frequency(t, phase)
