"""Recompute the device constants stored in ``msqsim.devices``.

Prints the calibrated resonator lengths, the readout transmon capacitance
and the fluxonium energies next to the stored values.
"""
import argparse

from msqsim import devices as d


def main():
    argparse.ArgumentParser(description=__doc__.split("\n\n")[0]).parse_args()

    # all three lengths are calibrated on the 20 GHz line mesh
    for name, dev, f_r, stored, f_max in [
        ("control", d.control_device(), d.CONTROL_F_R, d.CONTROL_LENGTH, 20e9),
        ("readout", d.readout_device(), d.READOUT_F_R, d.READOUT_LENGTH, 20e9),
        ("fluxonium", d.fluxonium_device(), d.FLUXONIUM_F_R, d.FLUXONIUM_LENGTH, 20e9),
    ]:
        dev, f, hist = d.calibrate_resonator_length(dev.with_(qubit_offset=None), f_r, f_max)
        print(f"{name:9s} length {dev.resonator_length:.15g} m (stored {stored:.15g}), "
              f"f_r {f / 1e9:.6f} GHz after {len(hist) - 1} iterations")

    c = d.calibrate_transmon_capacitance(60.0, 4.6e9)
    print(f"readout   C_sigma {c:.15g} F (stored {d.READOUT_C_SIGMA:.15g})")

    fx = d.calibrate_fluxonium()
    print(f"fluxonium E_J {fx['E_J']:.8f} GHz, E_C {fx['E_C']} GHz, E_L {fx['E_L']:.8f} GHz "
          f"(stored {d.FLUXONIUM_ENERGIES}), residuals {fx['residual']}")


if __name__ == "__main__":
    main()
