"""Command-line entry point.

    msqsim <eigen|simulate|rabi|dispersive|trackfreq|stability|sweep>
           --config PATH [--out DIR] [--jobs N] [--seedless]

Exit codes: 0 success, 2 configuration error, 3 numerical or stability
abort, 4 calibration failure.  Every run directory receives
``manifest.json`` (written before the run, finalized after) and CSV files
whose header lines give each column's unit.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import platform
import sys
import tempfile
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import AnalysisError
from .config import (SECTIONS, UNITS, ConfigError, ExperimentConfig, dump_config, parse_config,
                     parse_quantity, pulse_from_spec, resolved_defaults)
from .coupler import CalibrationError, Recorder, Simulation
from .devices import calibrate_transmon_capacitance
from .experiments import (DispersiveSetup, RabiSetup, TrackSetup, dispersive_point, eigen_table,
                          growth_check, parallel_map, run_rabi, stability_bounds, track_frequency)
from .linalg import NumericalError
from .qubit import QubitSpec

log = logging.getLogger("msqsim")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_CALIBRATION = 0, 2, 3, 4


# -- output helpers -------------------------------------------------------------

def write_csv(path: Path, columns, comments=()) -> Path:
    """``columns`` is a list of (name, unit, values)."""
    path = Path(path)
    lines = [f"# {c}" for c in comments]
    lines += [f"# {name}: {unit}" for name, unit, _ in columns]
    data = np.column_stack([np.asarray(v, dtype=float) for _, _, v in columns])
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
        fh.write(",".join(name for name, _, _ in columns) + "\n")
        np.savetxt(fh, data, delimiter=",", fmt="%.17g")
    return path


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (np.floating, float)):
        return float(x) if np.isfinite(x) else str(float(x))
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    return x


@dataclass
class RunManifest:
    experiment: str
    config_text: str
    resolved: dict
    version: str = __version__
    status: str = "running"
    exit_code: int | None = None
    started: float = field(default_factory=time.time)
    wall_clock_s: float | None = None
    dt: float | None = None
    bounds: dict = field(default_factory=dict)
    calibrations: dict = field(default_factory=dict)
    results: dict = field(default_factory=dict)
    outputs: list = field(default_factory=list)
    error: str | None = None
    python: str = platform.python_version()
    numpy: str = np.__version__

    def write(self, out: Path):
        (out / "manifest.json").write_text(json.dumps(_jsonable(asdict(self)), indent=2) + "\n")


# -- experiments ---------------------------------------------------------------

def _recorder_outputs(rec: Recorder, path: Path, man: RunManifest):
    rec.to_csv(path)
    man.outputs.append(path.name)


def run_eigen(cfg: ExperimentConfig, out: Path, man: RunManifest):
    opts = cfg.options("eigen")
    sim = cfg.get("simulation") or {}
    n_phase = sim.get("n_phase", 256)
    q = cfg.qubit
    if opts["calibrate_f01"] is not None:
        qs = cfg.get("qubit")
        if qs["ej_over_ec"] is None:
            raise ConfigError("eigen.calibrate_f01 needs qubit.ej_over_ec")
        try:
            c = calibrate_transmon_capacitance(qs["ej_over_ec"], opts["calibrate_f01"],
                                               n_nodes=n_phase, n_g=qs["n_g"])
        except ValueError as exc:
            raise CalibrationError(f"C_sigma calibration failed: {exc}") from None
        q = QubitSpec.transmon(qs["ej_over_ec"], c, beta=qs["beta"], n_g=qs["n_g"])
        man.calibrations["c_sigma_F"] = c
        man.calibrations["target_f01_Hz"] = opts["calibrate_f01"]
    rows, basis = eigen_table(q, n_phase, opts["n_levels"])
    cols = [("level", "index", [r[0] for r in rows]),
            ("E_GHz", "E_n / h relative to the ground state (GHz)", [r[1] for r in rows]),
            ("f_next_GHz", "E_(n+1) - E_n over h (GHz)", [r[2] for r in rows])]
    write_csv(out / "eigen.csv", cols, [f"n_phase = {n_phase}"])
    man.outputs.append("eigen.csv")
    man.results["f01_Hz"] = basis.transition(0, 1)
    if basis.n_eig > 2:
        man.results["f12_Hz"] = basis.transition(1, 2)
    print("level,E_GHz,f_next_GHz")
    for r in rows:
        print(f"{r[0]},{r[1]:.6f},{r[2]:.6f}")


def _pulse(cfg: ExperimentConfig, sim: Simulation, amplitude=None):
    f01 = sim.basis.transition(0, 1) if sim.basis is not None else None
    return pulse_from_spec(cfg.pulse, f01, amplitude)


def run_simulate(cfg: ExperimentConfig, out: Path, man: RunManifest):
    sim = Simulation(cfg.coupled())
    pulse = _pulse(cfg, sim)
    rec = sim.run(pulse)
    man.dt = rec.meta["dt"]
    man.bounds = {k: v for k, v in rec.meta.items() if k in ("line", "full", "reduced", "v_max")}
    _recorder_outputs(rec, out / "recorder.csv", man)


def run_rabi_kind(cfg: ExperimentConfig, out: Path, man: RunManifest):
    opts = cfg.options("rabi")
    base = cfg.coupled()
    p = cfg.pulse
    setup = RabiSetup(beta=base.qubit.beta, sigma=p.sigma, area_pi=p.area_pi,
                      duration=base.duration, n_phase=base.n_phase,
                      calibration_n_eig=opts["calibration_n_eig"], n_eig=base.n_eig,
                      f_max=base.f_max, n_eig_sweep=tuple(opts["n_eig_sweep"]),
                      run_full=opts["run_full"], amplitude=opts["amplitude_2pi"])
    res = run_rabi(setup, base=base)
    if res.calibration is not None:
        man.calibrations["amplitude_2pi_V"] = res.calibration.amplitude_2pi
        man.calibrations["amplitude_guess_V"] = res.calibration.guess
        man.calibrations["p0_after_2pi"] = res.calibration.p0_2pi
    man.calibrations["pulse_amplitude_V"] = res.pulse.amplitude
    man.dt = res.two_way.meta["dt"]
    man.bounds = {k: res.two_way.meta.get(k) for k in ("line", "reduced", "v_max")}
    _recorder_outputs(res.one_way, out / "rabi_one_way.csv", man)
    _recorder_outputs(res.two_way, out / "rabi_two_way.csv", man)
    man.results["final_one_way"] = res.one_way.occupations[-1]
    man.results["final_two_way"] = res.two_way.occupations[-1]
    if res.full is not None:
        _recorder_outputs(res.full, out / "rabi_full.csv", man)
        man.results["final_full"] = res.full.occupations[-1]
        man.bounds["full"] = res.full.meta.get("full")
        errs = res.n_eig_errors()
        write_csv(out / "rabi_n_eig.csv",
                  [("n_eig", "levels", list(errs)),
                   ("final_diff", "max |P_k - P_k(full)| at the end, k=0,1 (1)",
                    [v[0] for v in errs.values()]),
                   ("max_diff", "max |P_k - P_k(full)| over the run, k=0,1 (1)",
                    [v[1] for v in errs.values()])],
                  [f"reduced model, two-way coupling, dt = {res.full.meta['dt']!r} s"])
        man.outputs.append("rabi_n_eig.csv")


def _dispersive_setup(cfg: ExperimentConfig) -> DispersiveSetup:
    opts = cfg.options("dispersive")
    sim = cfg.get("simulation")
    dev = cfg.device
    if dev is None or dev.qubit_offset is None:
        raise ConfigError("dispersive needs a 'device' section with qubit_offset")
    return DispersiveSetup(dev, cfg.qubit, opts["f_r"], n_eig=sim["n_eig"],
                           n_phase=sim["n_phase"], amplitude=opts["amplitude"],
                           sigma=opts["sigma"], duration=sim["duration"], f_max=sim["f_max"],
                           levels=tuple(opts["levels"]), rel_band=opts["rel_band"],
                           pad_factor=opts["pad_factor"], keep_spectra=True)


def run_dispersive(cfg: ExperimentConfig, out: Path, man: RunManifest):
    s = _dispersive_setup(cfg)
    pt = dispersive_point(s)
    man.dt = pt.dt
    for key, spec in pt.spectra.items():
        sel = np.isfinite(spec.values)
        name = f"reflection_{key if key == 'bare' else f'level{key}'}.csv"
        write_csv(out / name, [("f", "Hz", spec.freq[sel]),
                               ("abs_gamma", "|reflection coefficient| (1)",
                                np.abs(spec.values[sel])),
                               ("phase", "rad", np.angle(spec.values[sel]))],
                  [f"record {spec.meta.get('record_length')!r} s, "
                   f"window {spec.meta.get('window')}"])
        man.outputs.append(name)
    _write_dispersive_table(out / "dispersive.csv", [pt], s.levels)
    man.outputs.append("dispersive.csv")
    man.results["chi_Hz"] = pt.chi
    man.results["chi_oracle_Hz"] = pt.oracle_electrical
    man.results["chi_oracle_bare_geometry_Hz"] = pt.oracle_physical
    man.results["bare_frequency_Hz"] = pt.bare_frequency
    man.results["peak_errors"] = [list(e) for e in pt.errors]


def _write_dispersive_table(path, points, levels, xname="qubit_offset", xunit="m", xs=None):
    xs = [p.qubit_offset for p in points] if xs is None else xs
    cols = [(xname, xunit, xs),
            ("f_bare", "Hz", [p.bare_frequency for p in points])]
    for i, m in enumerate(levels):
        cols += [(f"chi{m}_sim", "Hz", [p.chi[i] for p in points]),
                 (f"chi{m}_oracle", "Hz, loaded mode geometry",
                  [p.oracle_electrical[i] for p in points]),
                 (f"chi{m}_oracle_bare_geometry", "Hz",
                  [p.oracle_physical[i] for p in points]),
                 (f"chi{m}_oracle_3level", "Hz", [p.oracle_n_eig3[i] for p in points])]
    write_csv(path, cols, ["chi_m = f_peak(level m) - f_peak(beta = 0); NaN marks an "
                           "ambiguous or split peak"])


def run_trackfreq(cfg: ExperimentConfig, out: Path, man: RunManifest):
    o = cfg.options("trackfreq")
    sim = cfg.get("simulation") or {}
    dev = cfg.device
    if dev is None or dev.qubit_offset is None:
        raise ConfigError("trackfreq needs a 'device' section with qubit_offset")
    kw = {k: sim[k] for k in ("n_eig", "n_phase", "f_max") if k in sim}
    s = TrackSetup(qubit_offset=dev.qubit_offset, device=dev, qubit=cfg.qubit, f_r=o["f_r"],
                   amplitude=o["amplitude"], sigma=o["sigma"], detuning=o["detuning"],
                   tail=o["tail"], settle=o["settle"], n_decay=o["n_decay"],
                   smooth=o["smooth"], **kw)
    r = track_frequency(s)
    man.dt = r.meta["dt"]
    write_csv(out / "trackfreq.csv", [("t", "s", r.t), ("offset", "Hz", r.offset)],
              [f"offset = -d(phase of c0)/dt / 2 pi after Gaussian smoothing, sigma "
               f"{r.meta['smoothing_sigma_s']!r} s"])
    man.outputs.append("trackfreq.csv")
    man.results.update(decay_rate=r.fit.rate, decay_r2=r.fit.r2, kappa_oracle=r.kappa_oracle,
                       q_loaded=r.q_loaded, fit_window_s=list(r.window),
                       rate_rel_error=r.fit.rate / r.kappa_oracle - 1)


def run_stability(cfg: ExperimentConfig, out: Path, man: RunManifest):
    cc = cfg.coupled()
    sim = Simulation(cc)
    pulse = _pulse(cfg, sim)
    b = stability_bounds(cc, pulse)
    man.bounds = {k: v for k, v in b.items() if k != "dt"}
    man.dt = b["dt"]
    names = [k for k in ("line", "full", "reduced") if k in b]
    for k in names:
        print(f"{k} bound: {b[k]:.6e} s")
    print(f"chosen dt ({cc.model} model, safety {cc.safety}): {b['dt']:.6e} s")
    cols = [("bound", "0 line, 1 full qubit, 2 reduced qubit", [("line", "full", "reduced")
                                                                  .index(k) for k in names]),
            ("dt_max", "s", [b[k] for k in names])]
    write_csv(out / "stability.csv", cols, [f"v_max = {b['v_max']!r} V"])
    man.outputs.append("stability.csv")
    steps = cfg.options("stability")["check_steps"]
    if steps:
        checks = {}
        for k in names:
            for fct in (0.99, 1.05):
                g = growth_check(sim, pulse, k, fct, steps)
                checks[f"{k}@{fct}"] = {"growth": g.growth, "aborted_at": g.aborted_at}
                print(f"{k} at {fct} x bound: growth {g.growth:.3g}, aborted at {g.aborted_at}")
        man.results["growth_checks"] = checks


RUNNERS = {"eigen": run_eigen, "simulate": run_simulate, "rabi": run_rabi_kind,
           "dispersive": run_dispersive, "trackfreq": run_trackfreq,
           "stability": run_stability}


def _sweep_point(args):
    text, kind, out = args
    cfg = parse_config(text)
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    return execute(cfg, out, kind)


def run_sweep(cfg: ExperimentConfig, out: Path, man: RunManifest, jobs: int = 1):
    sw = cfg.sweep
    jobs_in = []
    for i, raw in enumerate(sw.values):
        pc = cfg.with_value(sw.parameter, raw, sw.experiment)
        jobs_in.append((dump_config(pc), sw.experiment, str(out / f"point_{i:03d}")))
    codes = parallel_map(_sweep_point, jobs_in, jobs)
    man.results["point_exit_codes"] = codes
    rows = []
    for i, (raw, code) in enumerate(zip(sw.values, codes)):
        m = json.loads((out / f"point_{i:03d}" / "manifest.json").read_text())
        rows.append((raw, code, m))
    man.outputs.append("sweep.csv")
    cols = [("index", "sweep point", list(range(len(rows)))),
            ("exit_code", "point exit status", [r[1] for r in rows])]
    if sw.experiment == "dispersive":
        sec, key = sw.parameter.split(".", 1)
        dim = SECTIONS[sec][key].dim
        xs = [parse_quantity(r[0], dim) if dim in UNITS else r[0] for r in rows]
        cols.insert(1, (sw.parameter, UNITS.get(dim, ("",))[0] or "1", xs))
        levels = cfg.options("dispersive")["levels"]
        for j, lv in enumerate(levels):
            cols.append((f"chi{lv}_sim", "Hz", [_pick(r[2], "chi_Hz", j) for r in rows]))
            cols.append((f"chi{lv}_oracle", "Hz, loaded mode geometry",
                         [_pick(r[2], "chi_oracle_Hz", j) for r in rows]))
    write_csv(out / "sweep.csv", cols, [f"sweep over {sw.parameter}; per-point artifacts in "
                                        "point_NNN/"])
    return max(codes) if codes else EXIT_OK


def _pick(manifest, key, j):
    v = manifest.get("results", {}).get(key)
    if v is None:
        return np.nan
    v = v[j]
    return float(v) if not isinstance(v, str) else float("nan")


def execute(cfg: ExperimentConfig, out: Path, kind: str | None = None, jobs: int = 1) -> int:
    """Run one experiment into ``out``; returns the exit code."""
    kind = kind or cfg.experiment
    out.mkdir(parents=True, exist_ok=True)
    man = RunManifest(kind, dump_config(cfg), resolved_defaults(cfg))
    man.write(out)
    t0 = time.time()
    code = EXIT_OK
    try:
        if kind == "sweep":
            code = run_sweep(cfg, out, man, jobs)
        else:
            RUNNERS[kind](cfg, out, man)
    except ConfigError as exc:
        code, man.error = EXIT_CONFIG, str(exc)
    except CalibrationError as exc:
        code, man.error = EXIT_CALIBRATION, str(exc)
        man.calibrations["scan_trace"] = [list(t) for t in exc.trace]
    except (NumericalError, AnalysisError, FloatingPointError, np.linalg.LinAlgError) as exc:
        code, man.error = EXIT_NUMERICAL, f"{type(exc).__name__}: {exc}"
    man.exit_code = code
    man.status = "ok" if code == EXIT_OK else "failed"
    man.wall_clock_s = time.time() - t0
    man.write(out)
    if man.error:
        print(f"error: {man.error}", file=sys.stderr)
    return code


def _digest(out: Path) -> dict:
    return {p.name: hashlib.sha256(p.read_bytes()).hexdigest()
            for p in sorted(out.rglob("*.csv"))}


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="msqsim", description=__doc__.split("\n\n")[0])
    ap.add_argument("command", choices=("eigen", "simulate", "rabi", "dispersive", "trackfreq",
                                        "stability", "sweep"))
    ap.add_argument("--config", required=True, type=Path, help="YAML experiment file")
    ap.add_argument("--out", type=Path, default=Path("runs"), help="output directory")
    ap.add_argument("--jobs", type=int, default=1, help="parallel sweep points")
    ap.add_argument("--seedless", action="store_true",
                    help="run twice and assert bit-identical CSV output")
    ap.add_argument("-v", "--verbose", action="store_true")
    a = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if a.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = parse_config(a.config.read_text())
    except OSError as exc:
        print(f"error: cannot read config: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ConfigError as exc:
        print(f"error: {a.config}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if cfg.experiment != a.command:
        print(f"error: {a.config}: config describes experiment {cfg.experiment!r}, "
              f"not {a.command!r}", file=sys.stderr)
        return EXIT_CONFIG
    code = execute(cfg, a.out, a.command, a.jobs)
    if a.seedless and code == EXIT_OK:
        with tempfile.TemporaryDirectory() as tmp:
            code2 = execute(cfg, Path(tmp), a.command, a.jobs)
            same = code2 == EXIT_OK and _digest(Path(tmp)) == _digest(a.out)
        if not same:
            print("error: repeated run is not bit-identical", file=sys.stderr)
            return EXIT_NUMERICAL
        print("determinism check: repeated run is bit-identical")
    return code


if __name__ == "__main__":
    sys.exit(main())
