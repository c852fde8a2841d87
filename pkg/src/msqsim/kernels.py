"""Jitted leapfrog loops for line-only, reduced-coupled and full-coupled runs.

All loops share ``_line_update`` so that a coupled run with zero coupling
gain reproduces a qubit-free run bit for bit.  Channels are recorded every
``every`` steps at the half-integer time (j + 1/2) dt of the qubit state and
the centred port voltage.  A non-finite value aborts the loop and the step
index is returned as ``status`` (-1 means completed).
"""
from __future__ import annotations

import numpy as np
from numba import njit

from .linalg import band_matvec, cyclic_solve, thomas_solve

# status check cadence (steps)
_CHECK = 256


@njit(cache=True)
def _line_update(phi_now, phi_prev, phi_next, rhs,
                 lhs_lower, lhs_cp, lhs_inv,
                 b1_lower, b1_diag, b1_upper, b0_lower, b0_diag, b0_upper,
                 src_node, src_term, port_node, port_term):
    n = phi_now.shape[0]
    for i in range(n):
        acc = b1_diag[i] * phi_now[i] - b0_diag[i] * phi_prev[i]
        if i > 0:
            acc += b1_lower[i - 1] * phi_now[i - 1] - b0_lower[i - 1] * phi_prev[i - 1]
        if i < n - 1:
            acc += b1_upper[i] * phi_now[i + 1] - b0_upper[i] * phi_prev[i + 1]
        rhs[i] = acc
    if src_node >= 0:
        rhs[src_node] += src_term
    if port_node >= 0:
        rhs[port_node] += port_term
    thomas_solve(lhs_lower, lhs_cp, lhs_inv, rhs, phi_next)


@njit(cache=True)
def run_line_kernel(phi_now, phi_prev, lhs_lower, lhs_cp, lhs_inv,
                    b1_lower, b1_diag, b1_upper, b0_lower, b0_diag, b0_upper,
                    src_node, src_gain, v_source, dt, probes, every, out_v, out_norm):
    """Qubit-free line run; ``v_source[j]`` is V_S at t = j dt."""
    n = phi_now.shape[0]
    phi_next = np.empty(n)
    rhs = np.empty(n)
    nsteps = v_source.shape[0]
    r = 0
    for j in range(nsteps):
        _line_update(phi_now, phi_prev, phi_next, rhs, lhs_lower, lhs_cp, lhs_inv,
                     b1_lower, b1_diag, b1_upper, b0_lower, b0_diag, b0_upper,
                     src_node, src_gain * v_source[j], -1, 0.0)
        if (j + 1) % every == 0 and r < out_v.shape[0]:
            for p in range(probes.shape[0]):
                out_v[r, p] = (phi_next[probes[p]] - phi_now[probes[p]]) / dt
            s = 0.0
            for i in range(n):
                s += phi_next[i] * phi_next[i]
            out_norm[r] = np.sqrt(s)
            r += 1
        if j % _CHECK == 0 and not np.isfinite(phi_next[n // 2] + phi_next[0]):
            return j
        phi_prev[:] = phi_now
        phi_now[:] = phi_next
    return -1


@njit(cache=True)
def run_reduced_kernel(phi_now, phi_prev, lhs_lower, lhs_cp, lhs_inv,
                       b1_lower, b1_diag, b1_upper, b0_lower, b0_diag, b0_upper,
                       src_node, src_gain, v_source, dt, probes, every,
                       port_node, back_gain, drive_gain,
                       omega, charge, c_now, c_prev,
                       out_v, out_n, out_occ, out_norm, out_phase):
    """Line coupled to the reduced eigenstate model.

    The recorded norm is Re(c^(j+3/2)^H c^(j+1/2)), the quadratic form the
    leapfrog update conserves exactly; |c|^2 itself carries a bounded
    O((omega dt)^2) ripple.

    ``back_gain`` multiplies d<n>/dt in the line force (zero for one-way
    coupling), ``drive_gain`` = 2 e beta / hbar.
    """
    n = phi_now.shape[0]
    m = c_now.shape[0]
    phi_next = np.empty(n)
    rhs = np.empty(n)
    w = np.empty(m, dtype=np.complex128)
    c_next = np.empty(m, dtype=np.complex128)
    nsteps = v_source.shape[0]
    n_rec_occ = out_occ.shape[1]

    # <n> at j - 1/2
    n_prev = 0.0
    for a in range(m):
        acc = 0j
        for b in range(m):
            acc += charge[a, b] * c_prev[b]
        n_prev += (np.conj(c_prev[a]) * acc).imag

    r = 0
    for j in range(nsteps):
        n_now = 0.0
        for a in range(m):
            acc = 0j
            for b in range(m):
                acc += charge[a, b] * c_now[b]
            w[a] = acc
            n_now += (np.conj(c_now[a]) * acc).imag
        dn = (n_now - n_prev) / dt
        _line_update(phi_now, phi_prev, phi_next, rhs, lhs_lower, lhs_cp, lhs_inv,
                     b1_lower, b1_diag, b1_upper, b0_lower, b0_diag, b0_upper,
                     src_node, src_gain * v_source[j], port_node, back_gain * dn)
        v = (phi_next[port_node] - phi_now[port_node]) / dt
        k = 2.0 * dt * drive_gain * v
        for a in range(m):
            c_next[a] = c_prev[a] - 2j * dt * omega[a] * c_now[a] - k * w[a]

        if (j + 1) % every == 0 and r < out_v.shape[0]:
            for p in range(probes.shape[0]):
                out_v[r, p] = (phi_next[probes[p]] - phi_now[probes[p]]) / dt
            out_n[r] = n_now
            s = 0.0
            for a in range(m):
                if a < n_rec_occ:
                    out_occ[r, a] = c_now[a].real ** 2 + c_now[a].imag ** 2
                s += (np.conj(c_next[a]) * c_now[a]).real
            out_norm[r] = s
            out_phase[r] = np.angle(c_now[0])
            r += 1
        if j % _CHECK == 0 and not (np.isfinite(phi_next[port_node])
                                    and np.isfinite(c_next[m - 1].real)
                                    and np.isfinite(n_now)):
            return j
        phi_prev[:] = phi_now
        phi_now[:] = phi_next
        c_prev[:] = c_now
        c_now[:] = c_next
        n_prev = n_now
    return -1


@njit(cache=True)
def run_full_kernel(phi_now, phi_prev, lhs_lower, lhs_cp, lhs_inv,
                    b1_lower, b1_diag, b1_upper, b0_lower, b0_diag, b0_upper,
                    src_node, src_gain, v_source, dt, probes, every,
                    port_node, back_gain, drive_gain, hbar,
                    h_lower, h_diag, h_upper, h_tr, h_bl,
                    q_lower, q_diag, q_upper, q_tr, q_bl,
                    e_lower, e_cp, e_inv, e_z, e_last, e_scale, e_cyclic,
                    proj, a_now, a_prev,
                    out_v, out_n, out_occ, out_norm, out_phase, emass_lower,
                    emass_diag, emass_upper, emass_tr, emass_bl):
    """Line coupled to the phase-basis wavefunction.

    ``proj`` holds rows psi_k^H E so occupations are |proj @ a|^2; H0 is
    passed already shifted by the ground energy.  The recorded norm is the
    conserved form Re(a^(j+3/2)^H E a^(j+1/2)).
    """
    n = phi_now.shape[0]
    m = a_now.shape[0]
    phi_next = np.empty(n)
    rhs = np.empty(n)
    qa = np.empty(m, dtype=np.complex128)
    ha = np.empty(m, dtype=np.complex128)
    r_q = np.empty(m, dtype=np.complex128)
    upd = np.empty(m, dtype=np.complex128)
    ea = np.empty(m, dtype=np.complex128)
    nsteps = v_source.shape[0]
    n_rec_occ = out_occ.shape[1]
    inv_ihbar = 1.0 / (1j * hbar)

    band_matvec(q_lower, q_diag, q_upper, q_tr, q_bl, a_prev, qa)
    n_prev = 0.0
    for i in range(m):
        n_prev += (np.conj(a_prev[i]) * qa[i]).imag

    r = 0
    for j in range(nsteps):
        band_matvec(q_lower, q_diag, q_upper, q_tr, q_bl, a_now, qa)
        n_now = 0.0
        for i in range(m):
            n_now += (np.conj(a_now[i]) * qa[i]).imag
        dn = (n_now - n_prev) / dt
        _line_update(phi_now, phi_prev, phi_next, rhs, lhs_lower, lhs_cp, lhs_inv,
                     b1_lower, b1_diag, b1_upper, b0_lower, b0_diag, b0_upper,
                     src_node, src_gain * v_source[j], port_node, back_gain * dn)
        v = (phi_next[port_node] - phi_now[port_node]) / dt

        band_matvec(h_lower, h_diag, h_upper, h_tr, h_bl, a_now, ha)
        kv = drive_gain * v
        for i in range(m):
            r_q[i] = ha[i] * inv_ihbar - kv * qa[i]
        if e_cyclic:
            cyclic_solve(e_lower, e_cp, e_inv, e_z, e_last, e_scale, r_q, upd)
        else:
            thomas_solve(e_lower, e_cp, e_inv, r_q, upd)

        for i in range(m):
            upd[i] = a_prev[i] + 2.0 * dt * upd[i]

        if (j + 1) % every == 0 and r < out_v.shape[0]:
            for p in range(probes.shape[0]):
                out_v[r, p] = (phi_next[probes[p]] - phi_now[probes[p]]) / dt
            out_n[r] = n_now
            band_matvec(emass_lower, emass_diag, emass_upper, emass_tr, emass_bl, a_now, ea)
            s = 0.0
            for i in range(m):
                s += (np.conj(upd[i]) * ea[i]).real
            out_norm[r] = s
            for k in range(n_rec_occ):
                acc = 0j
                for i in range(m):
                    acc += proj[k, i] * a_now[i]
                out_occ[r, k] = acc.real ** 2 + acc.imag ** 2
                if k == 0:
                    out_phase[r] = np.angle(acc)
            r += 1

        if j % _CHECK == 0 and not (np.isfinite(phi_next[port_node])
                                    and np.isfinite(upd[0].real)
                                    and np.isfinite(n_now)):
            return j
        phi_prev[:] = phi_now
        phi_now[:] = phi_next
        a_prev[:] = a_now
        a_now[:] = upd
        n_prev = n_now
    return -1


@njit(cache=True)
def drive_reduced_kernel(omega, charge, c_now, c_prev, v_port, dt, drive_gain, out_norm):
    """Reduced model under a prescribed port voltage ``v_port[j]`` at
    (j + 1/2) dt; records the norm each step.  Returns the abort step or -1."""
    m = c_now.shape[0]
    c_next = np.empty(m, dtype=np.complex128)
    w = np.empty(m, dtype=np.complex128)
    for j in range(v_port.shape[0]):
        for a in range(m):
            acc = 0j
            for b in range(m):
                acc += charge[a, b] * c_now[b]
            w[a] = acc
        k = 2.0 * dt * drive_gain * v_port[j]
        s = 0.0
        for a in range(m):
            c_next[a] = c_prev[a] - 2j * dt * omega[a] * c_now[a] - k * w[a]
            s += c_now[a].real ** 2 + c_now[a].imag ** 2
        out_norm[j] = s
        if not np.isfinite(s):
            return j
        c_prev[:] = c_now
        c_now[:] = c_next
    return -1


@njit(cache=True)
def drive_full_kernel(h_lower, h_diag, h_upper, h_tr, h_bl,
                      q_lower, q_diag, q_upper, q_tr, q_bl,
                      e_lower, e_cp, e_inv, e_z, e_last, e_scale, e_cyclic,
                      emass_lower, emass_diag, emass_upper, emass_tr, emass_bl,
                      a_now, a_prev, v_port, dt, drive_gain, hbar, out_norm):
    """Phase-basis wavefunction under a prescribed port voltage; records
    a^H E a each step."""
    m = a_now.shape[0]
    qa = np.empty(m, dtype=np.complex128)
    ha = np.empty(m, dtype=np.complex128)
    r_q = np.empty(m, dtype=np.complex128)
    upd = np.empty(m, dtype=np.complex128)
    ea = np.empty(m, dtype=np.complex128)
    inv_ihbar = 1.0 / (1j * hbar)
    for j in range(v_port.shape[0]):
        band_matvec(q_lower, q_diag, q_upper, q_tr, q_bl, a_now, qa)
        band_matvec(h_lower, h_diag, h_upper, h_tr, h_bl, a_now, ha)
        kv = drive_gain * v_port[j]
        for i in range(m):
            r_q[i] = ha[i] * inv_ihbar - kv * qa[i]
        if e_cyclic:
            cyclic_solve(e_lower, e_cp, e_inv, e_z, e_last, e_scale, r_q, upd)
        else:
            thomas_solve(e_lower, e_cp, e_inv, r_q, upd)
        band_matvec(emass_lower, emass_diag, emass_upper, emass_tr, emass_bl, a_now, ea)
        s = 0.0
        for i in range(m):
            s += (np.conj(a_now[i]) * ea[i]).real
        out_norm[j] = s
        if not np.isfinite(s):
            return j
        for i in range(m):
            upd[i] = a_prev[i] + 2.0 * dt * upd[i]
        a_prev[:] = a_now
        a_now[:] = upd
    return -1
