"""Config text format: hierarchical key-value blocks with unit suffixes.

Grammar (one statement per line, ``#`` starts a comment)::

    schema = 1
    ion { species = Yb171 }
    rf {
        frequency = 20 MHz
        amplitude = 150 V
    }

Values are numbers with an optional SI unit suffix, booleans, or bare words.
Every block is optional; omitted entries fall back to the published defaults
(Yb171 ion, 20 MHz / 150 V drive, reference chip layout, per-scenario DC
voltage set and fiber height).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

from scipy.constants import u as ATOMIC_MASS

from .model import (
    DEFAULT_FIBER_HEIGHT,
    DEFAULT_RF,
    DEFAULT_VOLTAGES,
    DomainBox,
    FiberAssembly,
    IonSpecies,
    RFDrive,
    TrapGeometry,
    ValidationError,
    VoltageSet,
    reference_layout,
)

SCHEMA_VERSION = 1

# suffix -> (dimension, scale to SI)
UNITS = {
    "m": ("length", 1.0), "mm": ("length", 1e-3), "um": ("length", 1e-6),
    "nm": ("length", 1e-9),
    "V": ("voltage", 1.0), "mV": ("voltage", 1e-3), "kV": ("voltage", 1e3),
    "Hz": ("frequency", 1.0), "kHz": ("frequency", 1e3),
    "MHz": ("frequency", 1e6), "GHz": ("frequency", 1e9),
    "kg": ("mass", 1.0), "g": ("mass", 1e-3), "mg": ("mass", 1e-6),
    "ug": ("mass", 1e-9), "u": ("mass", ATOMIC_MASS),
    "Pa": ("pressure", 1.0), "MPa": ("pressure", 1e6),
    "GPa": ("pressure", 1e9),
    "s": ("time", 1.0), "ms": ("time", 1e-3), "us": ("time", 1e-6),
    "N": ("force", 1.0),
}


class ConfigError(ValueError):
    """Parse failure, with the offending line and column."""

    def __init__(self, message: str, line: int, column: int = 1):
        super().__init__(f"line {line}, column {column}: {message}")
        self.line = line
        self.column = column


@dataclass
class Quantity:
    value: float
    unit: str = ""

    def to(self, dimension: str, key: str, line: int) -> float:
        if self.unit == "":
            if dimension == "none":
                return self.value
            raise ConfigError(
                f"{key!r} needs a {dimension} unit", line)
        dim, scale = UNITS[self.unit]
        if dim != dimension:
            raise ConfigError(
                f"{key!r} expects a {dimension} unit, got {self.unit!r}",
                line)
        return self.value * scale


def _parse_value(text: str, line: int, col: int):
    text = text.strip()
    if not text:
        raise ConfigError("missing value", line, col)
    if text in ("true", "false"):
        return text == "true"
    parts = text.split()
    try:
        num = float(parts[0])
    except ValueError:
        if len(parts) == 1:
            return text  # bare word (enum, species name)
        raise ConfigError(f"bad value {text!r}", line, col)
    if len(parts) == 1:
        return Quantity(num)
    if len(parts) == 2:
        if parts[1] not in UNITS:
            raise ConfigError(f"unknown unit {parts[1]!r}", line,
                              col + len(parts[0]) + 1)
        return Quantity(num, parts[1])
    raise ConfigError(f"bad value {text!r}", line, col)


def parse_text(text: str) -> dict:
    """Parse config text into a nested dict of Quantity/bool/str values."""
    root: dict = {}
    stack = [root]
    for lineno, raw in enumerate(text.splitlines(), start=1):
        stripped = raw.split("#", 1)[0].rstrip()
        if not stripped.strip():
            continue
        body = stripped.strip()
        col = len(stripped) - len(stripped.lstrip()) + 1
        if body == "}":
            if len(stack) == 1:
                raise ConfigError("unmatched '}'", lineno, col)
            stack.pop()
            continue
        if body.endswith("{"):
            name = body[:-1].strip()
            if not name.isidentifier():
                raise ConfigError(f"bad block name {name!r}", lineno, col)
            if name in stack[-1]:
                raise ConfigError(f"duplicate block {name!r}", lineno, col)
            block: dict = {}
            stack[-1][name] = block
            stack.append(block)
            continue
        if "=" not in body:
            raise ConfigError("expected 'key = value' or 'name {'",
                              lineno, col)
        key, _, val = body.partition("=")
        key = key.strip()
        if not key.isidentifier():
            raise ConfigError(f"bad key {key!r}", lineno, col)
        if key in stack[-1]:
            raise ConfigError(f"duplicate key {key!r}", lineno, col)
        stack[-1][key] = (_parse_value(val, lineno, col + body.index("=") + 1),
                          lineno)
    if len(stack) > 1:
        raise ConfigError("unclosed block at end of file",
                          len(text.splitlines()) + 1)
    return root


@dataclass(frozen=True)
class GridParams:
    """Solver grid construction knobs (see electrostatics for semantics)."""

    spacing: float = 4e-6
    fine_x: float = 300e-6
    fine_y: float = 300e-6
    fine_z: float = 280e-6
    stretch: float = 1.3

    def __post_init__(self):
        if self.spacing <= 0:
            raise ValidationError("grid spacing must be > 0")
        if self.stretch < 1.0:
            raise ValidationError("grid stretch must be >= 1")


@dataclass(frozen=True)
class TrapConfig:
    """Fully resolved configuration: geometry, drive, voltages, species."""

    geometry: TrapGeometry
    drive: RFDrive
    volts: VoltageSet
    species: IonSpecies
    grid: GridParams = field(default_factory=GridParams)


class _Block:
    """Typed accessor over one parsed block, tracking consumed keys."""

    def __init__(self, data: dict, path: str):
        self.data = data or {}
        self.path = path
        self.seen = set()

    def get(self, key, dimension, default=None):
        if key not in self.data:
            if default is None:
                raise ValidationError(f"{self.path}.{key} is required")
            return default
        self.seen.add(key)
        val, line = self.data[key]
        if dimension == "bool":
            if not isinstance(val, bool):
                raise ConfigError(f"{self.path}.{key} expects true/false",
                                  line)
            return val
        if dimension == "word":
            if not isinstance(val, str):
                raise ConfigError(f"{self.path}.{key} expects a word", line)
            return val
        if not isinstance(val, Quantity):
            raise ConfigError(f"{self.path}.{key} expects a number", line)
        return val.to(dimension, f"{self.path}.{key}", line)

    def finish(self):
        extra = set(self.data) - self.seen
        if extra:
            key = sorted(extra)[0]
            _, line = self.data[key]
            raise ConfigError(f"unknown key {self.path}.{key}", line)


def build_config(tree: dict) -> TrapConfig:
    """Resolve a parsed tree into a validated TrapConfig."""
    known_blocks = {"ion", "rf", "chip", "fiber", "voltages", "domain",
                    "grid"}
    for name, val in tree.items():
        if isinstance(val, dict):
            if name not in known_blocks:
                raise ValidationError(f"unknown block {name!r}")
        elif name != "schema":
            raise ValidationError(f"unknown top-level key {name!r}")
    if "schema" in tree:
        q, line = tree["schema"]
        if not isinstance(q, Quantity) or q.unit:
            raise ConfigError("schema must be a bare integer", line)
        if int(q.value) != SCHEMA_VERSION:
            raise ConfigError(
                f"unsupported schema version {int(q.value)} "
                f"(this build reads {SCHEMA_VERSION})", line)

    ion = _Block(tree.get("ion"), "ion")
    if "mass" in ion.data or "charge" in ion.data:
        mass = ion.get("mass", "mass")
        charge_n = ion.get("charge", "none")
        from scipy.constants import e
        species = IonSpecies(mass=mass, charge=charge_n * e)
    else:
        species = IonSpecies.from_name(ion.get("species", "word", "Yb171"))
    ion.finish()

    rf = _Block(tree.get("rf"), "rf")
    freq = rf.get("frequency", "frequency", DEFAULT_RF.omega / (2 * math.pi))
    amp = rf.get("amplitude", "voltage", DEFAULT_RF.amplitude)
    drive = RFDrive(amplitude=amp, omega=2 * math.pi * freq)
    rf.finish()

    chip = _Block(tree.get("chip"), "chip")
    layout = reference_layout(
        gap=chip.get("gap", "length", 8e-6),
        slot_width=chip.get("slot_width", "length", 50e-6),
        inner_rail_width=chip.get("inner_rail_width", "length", 60e-6),
        rf_rail_width=chip.get("rf_rail_width", "length", 182e-6),
        outer_width=chip.get("outer_width", "length", 300e-6),
        outer_pitch=chip.get("outer_pitch", "length", 130e-6),
        outer_count=int(chip.get("outer_count", "none", 10)),
        outer_b_count=int(chip.get("outer_b_count", "none", 2)),
        chip_extent=chip.get("extent", "length", 1.4e-3),
        thickness=chip.get("thickness", "length", 40e-6),
        outer_offset=chip.get("outer_offset", "length", 0.0))
    chip.finish()

    fiber = None
    fb = _Block(tree.get("fiber"), "fiber")
    if fb.data and fb.get("present", "bool", True):
        coating = fb.get("coating", "word", "bare")
        if coating not in ("bare", "grounded", "biased"):
            raise ValidationError(
                "fiber.coating must be bare, grounded or biased")
        density = fb.get("facet_charge_density", "none", 0.0)
        case = ("bare" if coating == "bare"
                else ("charged" if density else "coated"))
        fiber = FiberAssembly(
            cavity_length=fb.get("cavity_length", "length", 1e-3),
            height=fb.get("height", "length", DEFAULT_FIBER_HEIGHT[case]),
            diameter=fb.get("diameter", "length", 250e-6),
            permittivity=fb.get("permittivity", "none", 3.8),
            coating=coating,
            bias=fb.get("bias", "voltage", 0.0),
            facet_charge_density=density)
    else:
        fb.get("present", "bool", True)
    fb.finish()

    case = fiber.case if fiber is not None else "bare"
    base = DEFAULT_VOLTAGES[case]
    vb = _Block(tree.get("voltages"), "voltages")
    volts = VoltageSet(
        V_A=vb.get("V_A", "voltage", base.V_A),
        V_B=vb.get("V_B", "voltage", base.V_B),
        V_offset=vb.get("V_offset", "voltage", base.V_offset),
        dU_x=vb.get("dU_x", "voltage", 0.0),
        dU_y=vb.get("dU_y", "voltage", 0.0),
        dU_z=vb.get("dU_z", "voltage", 0.0),
        V_inner=vb.get("V_inner", "voltage", 0.0))
    vb.finish()

    db = _Block(tree.get("domain"), "domain")
    domain = DomainBox(
        x=db.get("x", "length", 1.8e-3),
        y=db.get("y", "length", 2.0e-3),
        z_min=db.get("z_min", "length", -0.12e-3),
        z_max=db.get("z_max", "length", 1.4e-3))
    db.finish()

    gb = _Block(tree.get("grid"), "grid")
    grid = GridParams(
        spacing=gb.get("spacing", "length", 4e-6),
        fine_x=gb.get("fine_x", "length", 300e-6),
        fine_y=gb.get("fine_y", "length", 300e-6),
        fine_z=gb.get("fine_z", "length", 280e-6),
        stretch=gb.get("stretch", "none", 1.3))
    gb.finish()

    geometry = TrapGeometry(layout=layout, fiber=fiber, domain=domain)
    return TrapConfig(geometry=geometry, drive=drive, volts=volts,
                      species=species, grid=grid)


def loads_config(text: str) -> TrapConfig:
    return build_config(parse_text(text))


def load_config(path) -> TrapConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return loads_config(fh.read())


def _fmt(value: float, unit: str = "") -> str:
    if unit:
        dim, scale = UNITS[unit]
        value = value / scale
    text = repr(float(value))
    if text.endswith(".0"):
        text = text[:-2]
    return f"{text} {unit}".rstrip()


def dumps_config(cfg: TrapConfig) -> str:
    """Serialize so that loads_config(dumps_config(cfg)) == cfg."""
    lay = cfg.geometry.layout
    drv = cfg.drive
    sp = cfg.species
    v = cfg.volts
    d = cfg.geometry.domain
    g = cfg.grid
    lines = [f"schema = {SCHEMA_VERSION}", ""]
    if sp.name in ("custom",):
        lines += ["ion {", f"  mass = {_fmt(sp.mass, 'kg')}",
                  f"  charge = {sp.charge_number}", "}"]
    else:
        lines += ["ion {", f"  species = {sp.name}", "}"]
    lines += ["rf {",
              f"  frequency = {_fmt(drv.omega / (2 * math.pi), 'Hz')}",
              f"  amplitude = {_fmt(drv.amplitude, 'V')}", "}"]
    lines += ["chip {",
              f"  gap = {_fmt(lay.gap, 'm')}",
              f"  slot_width = {_fmt(lay.slot_width, 'm')}",
              f"  inner_rail_width = {_fmt(lay.inner_rail_width, 'm')}",
              f"  rf_rail_width = {_fmt(lay.rf_rail_width, 'm')}",
              f"  outer_width = {_fmt(lay.outer_width, 'm')}",
              f"  outer_pitch = {_fmt(lay.outer_pitch, 'm')}",
              f"  outer_count = {lay.outer_count}",
              f"  outer_b_count = {lay.outer_b_count}",
              f"  extent = {_fmt(lay.chip_extent, 'm')}",
              f"  thickness = {_fmt(lay.thickness, 'm')}",
              f"  outer_offset = {_fmt(lay.outer_offset, 'm')}", "}"]
    f = cfg.geometry.fiber
    if f is None:
        lines += ["fiber {", "  present = false", "}"]
    else:
        lines += ["fiber {",
                  f"  cavity_length = {_fmt(f.cavity_length, 'm')}",
                  f"  height = {_fmt(f.height, 'm')}",
                  f"  diameter = {_fmt(f.diameter, 'm')}",
                  f"  permittivity = {_fmt(f.permittivity)}",
                  f"  coating = {f.coating}",
                  f"  bias = {_fmt(f.bias, 'V')}",
                  f"  facet_charge_density = {_fmt(f.facet_charge_density)}",
                  "}"]
    lines += ["voltages {",
              f"  V_A = {_fmt(v.V_A, 'V')}",
              f"  V_B = {_fmt(v.V_B, 'V')}",
              f"  V_offset = {_fmt(v.V_offset, 'V')}",
              f"  dU_x = {_fmt(v.dU_x, 'V')}",
              f"  dU_y = {_fmt(v.dU_y, 'V')}",
              f"  dU_z = {_fmt(v.dU_z, 'V')}",
              f"  V_inner = {_fmt(v.V_inner, 'V')}", "}"]
    lines += ["domain {",
              f"  x = {_fmt(d.x, 'm')}",
              f"  y = {_fmt(d.y, 'm')}",
              f"  z_min = {_fmt(d.z_min, 'm')}",
              f"  z_max = {_fmt(d.z_max, 'm')}", "}"]
    lines += ["grid {",
              f"  spacing = {_fmt(g.spacing, 'm')}",
              f"  fine_x = {_fmt(g.fine_x, 'm')}",
              f"  fine_y = {_fmt(g.fine_y, 'm')}",
              f"  fine_z = {_fmt(g.fine_z, 'm')}",
              f"  stretch = {_fmt(g.stretch)}", "}"]
    return "\n".join(lines) + "\n"
