"""Locate the fluxonium transitions that cross f_r and 2 f_r between
phi_ext = -0.5 and 0, and test each for a resonant feature in chi."""
import argparse

from msqsim.experiments import feature_check, fluxonium_crossings


def main():
    ap = argparse.ArgumentParser(description=__doc__.split("\n\n")[0])
    ap.add_argument("--amplitude", type=float, default=1e-7, help="probe amplitude (V)")
    ap.add_argument("--detuning", type=float, default=40e6, help="bias detuning (Hz)")
    ap.add_argument("--jobs", type=int, default=1)
    ap.add_argument("--list-only", action="store_true", help="only print the crossings")
    a = ap.parse_args()

    crossings = fluxonium_crossings()
    print("phi_ext,lower,upper,multiple,level,chi_minus_Hz,chi_plus_Hz,"
          "residual_minus_Hz,residual_plus_Hz,feature")
    for c in crossings:
        if a.list_only:
            print(f"{c.phi_ext:.6f},{c.lower},{c.upper},{c.multiple}")
            continue
        for level in sorted({c.lower, c.upper} & {0, 1}):
            fc = feature_check(c, level, a.detuning, a.jobs, amplitude=a.amplitude)
            print(f"{c.phi_ext:.6f},{c.lower},{c.upper},{c.multiple},{level},"
                  f"{fc.chi[0]:.6g},{fc.chi[1]:.6g},{fc.residual[0]:.6g},{fc.residual[1]:.6g},"
                  f"{fc.present}", flush=True)


if __name__ == "__main__":
    main()
