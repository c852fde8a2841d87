import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from msqsim.coupler import Pulse, run_line
from msqsim.devices import C_LINE, L_LINE
from msqsim.txline import (LineSpec, LineState, MeshError, assemble_line, build_line_mesh,
                           line_energy, line_stability_dt, max_element_size, step_line)

F_MAX = 20e9


def test_mesh_resolution_and_ports():
    spec = LineSpec(L_LINE, C_LINE, 0.013, coupling_positions=(0.0041,),
                    series_capacitors=((0.002, 20e-15), (0.011, 20e-15)))
    mesh = build_line_mesh(spec, F_MAX)
    assert mesh.element_lengths.max() <= max_element_size(spec, F_MAX) * (1 + 1e-12)
    assert mesh.element_lengths.min() > 0
    assert mesh.nodes[mesh.coupling_nodes[0]] == pytest.approx(0.0041, abs=1e-15)
    # a series capacitor duplicates its node and joins the two copies
    assert len(mesh.capacitor_pairs) == 2
    for a, b, ck in mesh.capacitor_pairs:
        assert b == a + 1 and mesh.nodes[a] == mesh.nodes[b] and ck == 20e-15
    assert mesh.source_node == 0 and mesh.load_node == mesh.n_nodes - 1


def test_mesh_rejects_bad_positions():
    with pytest.raises(MeshError):
        build_line_mesh(LineSpec(L_LINE, C_LINE, 0.01, coupling_positions=(0.02,)), F_MAX)
    with pytest.raises(MeshError):
        build_line_mesh(LineSpec(L_LINE, C_LINE, 0.01, series_capacitors=((0.01, 1e-15),)), F_MAX)
    with pytest.raises(MeshError):
        build_line_mesh(LineSpec(L_LINE, C_LINE, 0.01, coupling_positions=(0.005,),
                                 series_capacitors=((0.005, 1e-15),)), F_MAX)
    with pytest.raises(ValueError):
        LineSpec(L_LINE, C_LINE, 0.01, load_resistance=-1.0)


def test_matrices_symmetric_and_tridiagonal():
    spec = LineSpec(L_LINE, C_LINE, 0.01, series_capacitors=((0.004, 10e-15),))
    sys = assemble_line(spec, build_line_mesh(spec, F_MAX))
    for m in (sys.T, sys.S, sys.R):
        a = m.toarray()
        np.testing.assert_array_equal(a, a.T)
        assert np.all(np.triu(a, 2) == 0)
    # S annihilates a constant flux; T is positive definite
    assert np.abs(sys.S @ np.ones(sys.n)).max() < 1e-9 * np.abs(sys.S.diagonal()).max()
    assert np.linalg.eigvalsh(sys.T.toarray()).min() > 0


def test_stability_bound_matches_dense_eigenvalues():
    spec = LineSpec(L_LINE, C_LINE, 0.01, series_capacitors=((0.004, 10e-15),))
    sys = assemble_line(spec, build_line_mesh(spec, F_MAX))
    lam = np.linalg.eigvals(np.linalg.solve(sys.T.toarray(), sys.S.toarray())).real.max()
    assert line_stability_dt(sys) == pytest.approx(2 / np.sqrt(lam), rel=1e-6)


def _reflection_ratio(load_resistance):
    spec = LineSpec(L_LINE, C_LINE, 0.02, load_resistance=load_resistance)
    sys = assemble_line(spec, build_line_mesh(spec, F_MAX))
    dt = 0.5 * line_stability_dt(sys)
    sys = sys.with_dt(dt)
    n = int((0.3e-9 + 3 * 0.02 / spec.speed) / dt)
    v, _ = run_line(sys, Pulse.centred(1.0, 25e-12, 0.0)(np.arange(n) * dt), [0])
    t = (np.arange(n) + 0.5) * dt
    split = 0.3e-9 + 0.02 / spec.speed             # between the launch and the echo
    inc, ref = v[t < split, 0], v[t >= split, 0]
    return ref[np.argmax(np.abs(ref))] / inc.max(), inc.max()


def test_open_end_reflects_with_plus_one():
    gamma, v_inc = _reflection_ratio(None)
    assert gamma == pytest.approx(1.0, abs=1e-2)
    assert v_inc == pytest.approx(0.5, rel=1e-2)      # matched divider


def test_near_short_reflects_with_minus_one():
    gamma, _ = _reflection_ratio(1e-4)
    assert gamma == pytest.approx(-1.0, abs=1e-2)


@settings(max_examples=10, deadline=None)
@given(seed=st.integers(0, 2**16), ck=st.floats(1e-15, 100e-15))
def test_lossless_energy_conserved(seed, ck):
    spec = LineSpec(L_LINE, C_LINE, 0.01, source_resistance=None, load_resistance=None,
                    series_capacitors=((0.004, ck),))
    sys = assemble_line(spec, build_line_mesh(spec, F_MAX))
    sys = sys.with_dt(0.9 * line_stability_dt(sys))
    rng = np.random.default_rng(seed)
    phi = rng.standard_normal(sys.n) * 1e-12
    st_ = LineState(phi, phi + rng.standard_normal(sys.n) * 1e-15)
    e0 = line_energy(sys, st_)
    zero = np.zeros(sys.n)
    for _ in range(2000):
        st_ = step_line(sys, st_, zero)
    assert line_energy(sys, st_) == pytest.approx(e0, rel=1e-9)


def test_python_step_matches_kernel():
    spec = LineSpec(L_LINE, C_LINE, 0.01)
    sys = assemble_line(spec, build_line_mesh(spec, F_MAX))
    dt = 0.5 * line_stability_dt(sys)
    sys = sys.with_dt(dt)
    vs = Pulse.centred(1.0, 20e-12, 0.0)(np.arange(400) * dt)
    v, _ = run_line(sys, vs, [sys.n // 2])
    st_ = LineState.quiescent(sys.n)
    out = []
    for j in range(400):
        f = np.zeros(sys.n)
        f[0] = sys.source_gain * vs[j]
        nxt = step_line(sys, st_, f)
        out.append((nxt.phi_now[sys.n // 2] - st_.phi_now[sys.n // 2]) / dt)
        st_ = nxt
    np.testing.assert_allclose(v[:, 0], out, rtol=1e-9, atol=1e-12 * np.abs(out).max())
