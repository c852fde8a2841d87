"""Experiment configuration: a YAML document with unit-suffixed quantities.

Grammar
-------
Top-level keys::

    experiment: eigen | simulate | rabi | dispersive | trackfreq | stability | sweep
    device:     resonator chain (feed | C_in | resonator | C_out | feed)
    line:       explicit line instead of ``device``
    qubit:      transmon or fluxonium
    pulse:      modulated Gaussian source
    simulation: coupled-run settings
    eigen / rabi / dispersive / trackfreq / stability: per-experiment options
    sweep:      {parameter: section.key, values: [...], experiment: kind}

Quantities are ``<number> <unit>`` strings, e.g. ``0.7125 uH/m``, ``55 fF``,
``5 ns``; a bare number is taken in SI.  Qubit energies are given as
frequencies (E / h), e.g. ``E_J: 8.99 GHz``.  Flux bias ``phi_ext`` is in
flux quanta.  Every error carries the line and column of the offending
node.
"""
from __future__ import annotations

import re
from decimal import Decimal
from dataclasses import dataclass, field

import numpy as np
import yaml
from scipy.constants import h as PLANCK

from .coupler import CoupledConfig
from .devices import L_LINE, C_LINE, ResonatorDevice
from .qubit import QubitSpec
from .txline import LineSpec

KINDS = ("eigen", "simulate", "rabi", "dispersive", "trackfreq", "stability", "sweep")


class ConfigError(ValueError):
    def __init__(self, msg: str, mark=None):
        self.line = mark.line + 1 if mark is not None else None
        self.column = mark.column + 1 if mark is not None else None
        where = f"line {self.line}, column {self.column}: " if mark is not None else ""
        super().__init__(where + msg)


# -- units --------------------------------------------------------------------

_PREFIX = {"": 0, "k": 3, "M": 6, "G": 9, "m": -3, "u": -6, "n": -9, "p": -12, "f": -15}
UNITS = _BASE = {
    "frequency": ("Hz", ("Hz",)),
    "time": ("s", ("s",)),
    "length": ("m", ("m",)),
    "capacitance": ("F", ("F",)),
    "inductance_per_length": ("H/m", ("H/m",)),
    "capacitance_per_length": ("F/m", ("F/m",)),
    "voltage": ("V", ("V",)),
    "resistance": ("Ohm", ("Ohm", "ohm")),
    "one": ("", ()),
}
_NUMBER = r"[-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?"
_QUANTITY = re.compile(rf"^\s*({_NUMBER})\s*([A-Za-z/]*)\s*$")


def parse_quantity(text, dimension: str, mark=None) -> float:
    """``"0.7125 uH/m"`` -> 7.125e-07 for dimension ``inductance_per_length``."""
    if isinstance(text, bool):
        raise ConfigError(f"expected a {dimension} quantity, got {text!r}", mark)
    if isinstance(text, (int, float)):
        return float(text)
    m = _QUANTITY.match(str(text))
    if not m:
        raise ConfigError(f"cannot parse {text!r} as a {dimension} quantity", mark)
    number, unit = m.group(1), m.group(2)
    if unit == "" or dimension == "one":
        if unit:
            raise ConfigError(f"{dimension} value {text!r} must not carry a unit", mark)
        return float(number)
    for base in _BASE[dimension][1]:
        if unit.endswith(base) and unit[:-len(base)] in _PREFIX:
            # decimal scaling so that "20 fF" is exactly float("20e-15")
            return float(Decimal(number).scaleb(_PREFIX[unit[:-len(base)]]))
    raise ConfigError(f"unit {unit!r} is not a {dimension} unit "
                      f"(expected a prefix of {_BASE[dimension][0]!r})", mark)


def format_quantity(value: float, dimension: str):
    unit = _BASE[dimension][0]
    return f"{float(value)!r} {unit}" if unit else float(value)


# -- schema -------------------------------------------------------------------

@dataclass(frozen=True)
class F:
    """Field schema: dimension (or python type name), default, requirement."""
    dim: str
    default: object = None
    required: bool = False
    positive: bool = False
    choices: tuple = ()


_LINE = {
    "inductance_per_length": F("inductance_per_length", L_LINE, positive=True),
    "capacitance_per_length": F("capacitance_per_length", C_LINE, positive=True),
    "length": F("length", required=True, positive=True),
    "source_resistance": F("resistance", 50.0, positive=True),
    "source_position": F("length", 0.0),
    "load_resistance": F("resistance", 50.0),
    "load_position": F("length", None),
    "coupling_positions": F("list:length", ()),
    "series_capacitors": F("pairs:length,capacitance", ()),
    "elements_per_min_wavelength": F("one", 20.0, positive=True),
}
_DEVICE = {
    "resonator_length": F("length", required=True, positive=True),
    "c_in": F("capacitance", 20e-15, positive=True),
    "c_out": F("capacitance", 20e-15, positive=True),
    "feed_length": F("length", 2e-3, positive=True),
    "qubit_offset": F("length", None),
    "inductance_per_length": F("inductance_per_length", L_LINE, positive=True),
    "capacitance_per_length": F("capacitance_per_length", C_LINE, positive=True),
    "resistance": F("resistance", 50.0, positive=True),
    "elements_per_min_wavelength": F("one", 20.0, positive=True),
}
_QUBIT = {
    "kind": F("str", "transmon", choices=("transmon", "fluxonium")),
    "E_J": F("frequency", None, positive=True),
    "E_C": F("frequency", None, positive=True),
    "E_L": F("frequency", None, positive=True),
    "ej_over_ec": F("one", None, positive=True),
    "c_sigma": F("capacitance", None, positive=True),
    "beta": F("one", 0.0),
    "n_g": F("one", 0.0),
    "phi_ext": F("one", 0.0),
}
_PULSE = {
    "amplitude": F("voltage", 1e-6),
    "sigma": F("time", required=True, positive=True),
    "frequency": F("frequency_or_f01", "f01"),
    "t0": F("time", None, positive=True),
    "phase": F("one", 0.0),
    "area_pi": F("one", None, positive=True),
}
_SIMULATION = {
    "duration": F("time", required=True, positive=True),
    "f_max": F("frequency", 20e9, positive=True),
    "model": F("str", "reduced", choices=("reduced", "full")),
    "n_eig": F("int", 3, positive=True),
    "n_phase": F("int", 128, positive=True),
    "coupling": F("str", "two-way", choices=("two-way", "one-way")),
    "safety": F("one", 0.5, positive=True),
    "record_interval": F("time", 10e-12, positive=True),
    "n_record_levels": F("int", 3, positive=True),
    "initial_level": F("int", 0),
    "probes": F("list:length", ()),
    "dt": F("time", None, positive=True),
}
_EIGEN = {
    "n_levels": F("int", 5, positive=True),
    "calibrate_f01": F("frequency", None, positive=True),
}
_RABI = {
    "calibration_n_eig": F("int", 10, positive=True),
    "n_eig_sweep": F("list:int", (2, 3, 4, 5, 6, 8, 10)),
    "run_full": F("bool", True),
    "amplitude_2pi": F("voltage", None, positive=True),
}
_DISPERSIVE = {
    "f_r": F("frequency", required=True, positive=True),
    "levels": F("list:int", (0, 1)),
    "amplitude": F("voltage", 1e-6, positive=True),
    "sigma": F("time", 0.3e-9, positive=True),
    "rel_band": F("one", 0.08, positive=True),
    "pad_factor": F("int", 16, positive=True),
}
_TRACK = {
    "f_r": F("frequency", required=True, positive=True),
    "amplitude": F("voltage", 1e-7, positive=True),
    "sigma": F("time", 10e-9, positive=True),
    "detuning": F("frequency", 3e6),
    "tail": F("time", 150e-9, positive=True),
    "settle": F("time", 5e-9),
    "n_decay": F("one", 3.0, positive=True),
    "smooth": F("time", 1e-9, positive=True),
}
_STABILITY = {
    "check_steps": F("int", 0),
}
_SWEEP = {
    "parameter": F("str", required=True),
    "values": F("list:raw", required=True),
    "experiment": F("str", "dispersive", choices=KINDS[:-1]),
}
SECTIONS = {"line": _LINE, "device": _DEVICE, "qubit": _QUBIT, "pulse": _PULSE,
            "simulation": _SIMULATION, "eigen": _EIGEN, "rabi": _RABI,
            "dispersive": _DISPERSIVE, "trackfreq": _TRACK, "stability": _STABILITY,
            "sweep": _SWEEP}
ORDER = ("experiment", "device", "line", "qubit", "pulse", "simulation", "eigen", "rabi",
         "dispersive", "trackfreq", "stability", "sweep")


# -- YAML node helpers ----------------------------------------------------------

def _scalar(node):
    if not isinstance(node, yaml.ScalarNode):
        raise ConfigError("expected a scalar value", node.start_mark)
    return yaml.SafeLoader("").construct_object(node)


def _convert(dim: str, node, path: str):
    mark = node.start_mark
    if dim.startswith("list:"):
        if not isinstance(node, yaml.SequenceNode):
            raise ConfigError(f"{path} must be a list", mark)
        sub = dim[5:]
        if sub == "raw":
            if not node.value:
                raise ConfigError(f"{path} must not be empty", mark)
            return tuple(_scalar(n) for n in node.value)
        return tuple(_convert(sub, n, path) for n in node.value)
    if dim.startswith("pairs:"):
        a, b = dim[6:].split(",")
        if not isinstance(node, yaml.SequenceNode):
            raise ConfigError(f"{path} must be a list of pairs", mark)
        out = []
        for n in node.value:
            if not isinstance(n, yaml.SequenceNode) or len(n.value) != 2:
                raise ConfigError(f"{path} entries must be [position, value] pairs", n.start_mark)
            out.append((_convert(a, n.value[0], path), _convert(b, n.value[1], path)))
        return tuple(out)
    v = _scalar(node)
    if v is None:
        return None
    if dim == "str":
        return str(v)
    if dim == "bool":
        if not isinstance(v, bool):
            raise ConfigError(f"{path} must be true or false", mark)
        return v
    if dim == "int":
        if isinstance(v, bool) or not isinstance(v, int):
            raise ConfigError(f"{path} must be an integer", mark)
        return v
    if dim == "frequency_or_f01":
        return "f01" if v == "f01" else parse_quantity(v, "frequency", mark)
    return parse_quantity(v, dim, mark)


def _section(node, schema: dict, name: str) -> dict:
    if not isinstance(node, yaml.MappingNode):
        raise ConfigError(f"section {name!r} must be a mapping", node.start_mark)
    out, seen = {}, {}
    for k, v in node.value:
        key = k.value
        if key not in schema:
            raise ConfigError(f"unknown key {name}.{key} (allowed: {', '.join(schema)})",
                              k.start_mark)
        if key in seen:
            raise ConfigError(f"duplicate key {name}.{key}", k.start_mark)
        seen[key] = v.start_mark
        if isinstance(v, yaml.SequenceNode):
            seen[key + "[]"] = [n.start_mark for n in v.value]
        f = schema[key]
        val = _convert(f.dim, v, f"{name}.{key}")
        if f.choices and val not in f.choices:
            raise ConfigError(f"{name}.{key} must be one of {f.choices}, got {val!r}",
                              v.start_mark)
        if f.positive and val is not None and not isinstance(val, (str, tuple)) and val <= 0:
            raise ConfigError(f"{name}.{key} must be positive, got {val!r}", v.start_mark)
        out[key] = val
    for key, f in schema.items():
        if key not in out:
            if f.required:
                raise ConfigError(f"missing required key {name}.{key}", node.start_mark)
            out[key] = f.default
    out["_marks"] = seen
    out["_mark"] = node.start_mark
    return out


# -- typed config -------------------------------------------------------------

@dataclass(frozen=True)
class PulseSpec:
    amplitude: float
    sigma: float
    frequency: float | str                # Hz, or "f01" for the qubit's first transition
    t0: float | None = None
    phase: float = 0.0
    area_pi: float | None = None


@dataclass(frozen=True)
class SweepSpec:
    parameter: str                        # "section.key"
    values: tuple                         # raw values, parsed per point
    experiment: str = "dispersive"


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: str
    sections: dict = field(default_factory=dict, compare=False, hash=False)
    resolved: tuple = ()                  # ((section, ((key, value), ...)), ...)

    def get(self, section: str) -> dict | None:
        for name, items in self.resolved:
            if name == section:
                return dict(items)
        return None

    def __eq__(self, other):
        return isinstance(other, ExperimentConfig) and self.experiment == other.experiment \
            and self.resolved == other.resolved

    # typed views ----------------------------------------------------------------
    @property
    def device(self) -> ResonatorDevice | None:
        d = self.get("device")
        return None if d is None else ResonatorDevice(**d)

    @property
    def line(self) -> LineSpec | None:
        d = self.get("line")
        if d is not None:
            return LineSpec(**d)
        dev = self.device
        return None if dev is None else dev.line_spec()

    @property
    def qubit(self) -> QubitSpec | None:
        d = self.get("qubit")
        if d is None:
            return None
        return qubit_from_section(d)

    @property
    def pulse(self) -> PulseSpec | None:
        d = self.get("pulse")
        return None if d is None else PulseSpec(**d)

    @property
    def sweep(self) -> SweepSpec | None:
        d = self.get("sweep")
        return None if d is None else SweepSpec(**d)

    def options(self, kind: str) -> dict:
        d = self.get(kind)
        if d is None:
            d = {k: f.default for k, f in SECTIONS[kind].items()}
        return d

    def coupled(self) -> CoupledConfig:
        s = self.get("simulation")
        if s is None:
            raise ConfigError("this experiment needs a 'simulation' section")
        line = self.line
        if line is None:
            raise ConfigError("this experiment needs a 'device' or 'line' section")
        return CoupledConfig(line, self.qubit, **s)

    def with_value(self, path: str, raw, experiment: str | None = None) -> "ExperimentConfig":
        """Copy with ``section.key`` replaced by the raw (unparsed) value;
        the sweep section is dropped and ``experiment`` replaces the kind."""
        doc = to_document(self)
        sec, key = path.split(".", 1)
        doc.setdefault(sec, {})[key] = raw
        doc.pop("sweep", None)
        if experiment is not None:
            doc["experiment"] = experiment
        return parse_config(yaml.safe_dump(doc, sort_keys=False))


def qubit_from_section(d: dict) -> QubitSpec:
    E_J = d["E_J"] * PLANCK if d["E_J"] is not None else None
    E_C = d["E_C"] * PLANCK if d["E_C"] is not None else None
    if d["ej_over_ec"] is not None:
        if d["c_sigma"] is None:
            raise ConfigError("qubit.ej_over_ec needs qubit.c_sigma")
        return QubitSpec.transmon(d["ej_over_ec"], d["c_sigma"], beta=d["beta"], n_g=d["n_g"])
    if E_J is None or E_C is None:
        raise ConfigError("qubit needs E_J and E_C, or ej_over_ec with c_sigma")
    E_L = d["E_L"] * PLANCK if d["E_L"] is not None else None
    return QubitSpec(d["kind"], E_J, E_C, beta=d["beta"], n_g=d["n_g"], E_L=E_L,
                     phi_ext=2 * np.pi * d["phi_ext"])


def parse_config(text: str) -> ExperimentConfig:
    try:
        root = yaml.compose(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"YAML syntax error: {exc.problem}",
                          getattr(exc, "problem_mark", None)) from None
    if not isinstance(root, yaml.MappingNode):
        raise ConfigError("configuration must be a mapping", root.start_mark if root else None)
    kind, parsed, kind_mark = None, {}, root.start_mark
    for k, v in root.value:
        key = k.value
        if key == "experiment":
            kind = _scalar(v)
            kind_mark = v.start_mark
            if kind not in KINDS:
                raise ConfigError(f"experiment must be one of {KINDS}, got {kind!r}", kind_mark)
        elif key in SECTIONS:
            if key in parsed:
                raise ConfigError(f"duplicate section {key!r}", k.start_mark)
            parsed[key] = _section(v, SECTIONS[key], key)
        else:
            raise ConfigError(f"unknown section {key!r} (allowed: experiment, "
                              f"{', '.join(SECTIONS)})", k.start_mark)
    if kind is None:
        raise ConfigError("missing required key 'experiment'", root.start_mark)
    if "line" in parsed and "device" in parsed:
        raise ConfigError("give either 'line' or 'device', not both", parsed["line"]["_mark"])
    _validate(kind, parsed, kind_mark)
    resolved = []
    for name in ORDER[1:]:
        if name in parsed:
            items = tuple((k, v) for k, v in parsed[name].items() if not k.startswith("_"))
            resolved.append((name, items))
    cfg = ExperimentConfig(kind, parsed, tuple(resolved))
    _build_check(cfg, parsed)
    return cfg


def _need(parsed, names, kind, mark):
    for n in names:
        if isinstance(n, tuple):
            if not any(x in parsed for x in n):
                raise ConfigError(f"experiment {kind!r} needs one of the sections {n}", mark)
        elif n not in parsed:
            raise ConfigError(f"experiment {kind!r} needs a {n!r} section", mark)


_REQUIRED = {
    "eigen": ("qubit",),
    "simulate": (("device", "line"), "qubit", "pulse", "simulation"),
    "rabi": (("device", "line"), "qubit", "pulse", "simulation"),
    "dispersive": (("device", "line"), "qubit", "simulation", "dispersive"),
    "trackfreq": (("device", "line"), "qubit", "trackfreq"),
    "stability": (("device", "line"), "qubit", "pulse", "simulation"),
    "sweep": ("sweep",),
}


def _validate(kind, parsed, mark):
    _need(parsed, _REQUIRED[kind], kind, mark)
    if kind == "sweep":
        sw = parsed["sweep"]
        _need(parsed, _REQUIRED[sw["experiment"]], sw["experiment"], sw["_mark"])
        sec, _, key = sw["parameter"].partition(".")
        if sec not in SECTIONS or key not in SECTIONS[sec]:
            raise ConfigError(f"sweep parameter {sw['parameter']!r} is not a known "
                              "section.key path", sw["_marks"]["parameter"])
        if sec not in parsed:
            raise ConfigError(f"sweep parameter refers to absent section {sec!r}",
                              sw["_marks"]["parameter"])
        dim = SECTIONS[sec][key].dim
        for raw, m in zip(sw["values"], sw["_marks"]["values[]"]):
            if dim in ("str", "int", "bool") or dim.startswith(("list:", "pairs:")):
                continue
            parse_quantity(raw, "frequency" if dim == "frequency_or_f01" else dim, m)
    if kind == "rabi" and parsed["pulse"]["area_pi"] is None:
        raise ConfigError("rabi needs pulse.area_pi (target rotation in units of pi)",
                          parsed["pulse"]["_mark"])


def _build_check(cfg: ExperimentConfig, parsed: dict):
    """Construct the typed objects once so that their own invariants are
    reported against the section that produced them."""
    for name, build in (("device", lambda: cfg.device), ("line", lambda: cfg.line),
                        ("qubit", lambda: cfg.qubit), ("pulse", lambda: cfg.pulse)):
        if name not in parsed:
            continue
        try:
            obj = build()
        except ConfigError as exc:
            raise ConfigError(str(exc), parsed[name]["_mark"]) from None
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid {name}: {exc}", parsed[name]["_mark"]) from None
        if name == "pulse" and obj.t0 is not None and obj.t0 < 5 * obj.sigma:
            raise ConfigError("pulse.t0 must be at least 5 sigma",
                              parsed[name]["_marks"].get("t0", parsed[name]["_mark"]))
    if "simulation" in parsed and ("device" in parsed or "line" in parsed):
        try:
            cfg.coupled()
        except ValueError as exc:
            raise ConfigError(f"invalid simulation: {exc}", parsed["simulation"]["_mark"]) \
                from None


# -- serialization ------------------------------------------------------------

def _format(f: F, v):
    if v is None:
        return None
    if f.dim.startswith("list:"):
        sub = f.dim[5:]
        if sub == "raw":
            return list(v)
        return [_format(F(sub), x) for x in v]
    if f.dim.startswith("pairs:"):
        a, b = f.dim[6:].split(",")
        return [[_format(F(a), x), _format(F(b), y)] for x, y in v]
    if f.dim in ("str", "int", "bool"):
        return v
    if f.dim == "frequency_or_f01":
        return v if v == "f01" else format_quantity(v, "frequency")
    return format_quantity(v, f.dim)


def to_document(cfg: ExperimentConfig) -> dict:
    doc = {"experiment": cfg.experiment}
    for name, items in cfg.resolved:
        doc[name] = {k: _format(SECTIONS[name][k], v) for k, v in items}
    return doc


def dump_config(cfg: ExperimentConfig) -> str:
    """Canonical text: every key present, SI units, exact float repr."""
    return yaml.safe_dump(to_document(cfg), sort_keys=False)


def pulse_from_spec(p: PulseSpec, f01: float | None = None, amplitude: float | None = None):
    from .coupler import Pulse
    freq = f01 if p.frequency == "f01" else p.frequency
    if freq is None:
        raise ConfigError("pulse.frequency is 'f01' but no qubit transition is available")
    amp = p.amplitude if amplitude is None else amplitude
    t0 = 6 * p.sigma if p.t0 is None else p.t0
    label = "" if p.area_pi is None else f"{p.area_pi:g}pi"
    return Pulse(amp, t0, p.sigma, freq, p.phase, label)


def resolved_defaults(cfg: ExperimentConfig) -> dict:
    """Plain dict of every resolved value (for the run manifest)."""
    return {name: {k: _format(SECTIONS[name][k], v) for k, v in items}
            for name, items in cfg.resolved}


__all__ = ["ConfigError", "ExperimentConfig", "PulseSpec", "SweepSpec", "parse_config",
           "dump_config", "parse_quantity", "format_quantity", "pulse_from_spec", "KINDS"]
