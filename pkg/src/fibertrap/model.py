"""Domain model: ion species, RF drive, chip layout, fibers, voltages.

All quantities are SI (meters, volts, kilograms, rad/s) unless a field name
says otherwise.  Everything here is immutable after construction so objects
can be shared freely between workers.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

from scipy.constants import e as ELEMENTARY_CHARGE
from scipy.constants import u as ATOMIC_MASS


class ValidationError(ValueError):
    """A constructed object violates one of its invariants."""


# mass numbers follow the common isotope labels; charge in units of e
SPECIES_TABLE = {
    "Yb171": (171.0, 1),
    "Yb174": (174.0, 1),
    "Ca40": (40.0, 1),
}


@dataclass(frozen=True)
class IonSpecies:
    """A single trapped ion: mass in kg, charge in coulomb."""

    mass: float
    charge: float
    name: str = "custom"

    def __post_init__(self):
        if self.mass <= 0:
            raise ValidationError("IonSpecies.mass must be > 0")
        if self.charge == 0:
            raise ValidationError("IonSpecies.charge must be nonzero")
        n = self.charge / ELEMENTARY_CHARGE
        if abs(n - round(n)) > 1e-6:
            raise ValidationError(
                "IonSpecies.charge must be an integer multiple of e")

    @property
    def charge_number(self) -> int:
        return int(round(self.charge / ELEMENTARY_CHARGE))

    @classmethod
    def from_name(cls, name: str) -> "IonSpecies":
        try:
            mass_u, z = SPECIES_TABLE[name]
        except KeyError:
            raise ValidationError(
                f"unknown species {name!r}; known: {sorted(SPECIES_TABLE)}")
        return cls(mass=mass_u * ATOMIC_MASS, charge=z * ELEMENTARY_CHARGE,
                   name=name)


@dataclass(frozen=True)
class RFDrive:
    """RF rail drive: amplitude in volts, angular frequency in rad/s."""

    amplitude: float
    omega: float

    def __post_init__(self):
        if self.amplitude < 0:
            raise ValidationError("RFDrive.amplitude must be >= 0")
        if self.omega <= 0:
            raise ValidationError("RFDrive.omega must be > 0")


@dataclass(frozen=True)
class Region:
    """Axis-aligned rectangle on the chip plane belonging to one electrode group."""

    name: str
    group: str
    x0: float
    x1: float
    y0: float
    y1: float

    def mirrored_x(self) -> "Region":
        return replace(self, x0=-self.x1, x1=-self.x0)


@dataclass(frozen=True)
class ElectrodeLayout:
    """Planar electrode set of the trapping chip.

    The chip plane is z = 0; the trap axis (and cavity axis) is y.  Regions
    must be non-overlapping and the set is mirror symmetric about x = 0.
    """

    regions: tuple
    gap: float
    slot_width: float
    inner_rail_width: float
    rf_rail_width: float
    outer_width: float
    outer_pitch: float
    outer_count: int
    outer_b_count: int
    chip_extent: float
    thickness: float = 40e-6
    outer_offset: float = 0.0  # grounded spacer between RF rail and outer DCs

    def __post_init__(self):
        if self.gap <= 0:
            raise ValidationError("ElectrodeLayout.gap must be > 0")
        if self.thickness < 0:
            raise ValidationError("ElectrodeLayout.thickness must be >= 0")
        if self.outer_count < 2 or self.outer_count % 2:
            raise ValidationError("outer_count must be even and >= 2")
        if self.outer_b_count < 2 or self.outer_b_count % 2:
            raise ValidationError("outer_b_count must be even and >= 2")
        if self.outer_b_count > self.outer_count:
            raise ValidationError("outer_b_count cannot exceed outer_count")
        self._check_no_overlap()
        self._check_mirror_symmetry()

    def _check_no_overlap(self):
        rs = self.regions
        for i in range(len(rs)):
            for j in range(i + 1, len(rs)):
                a, b = rs[i], rs[j]
                if (a.x0 < b.x1 and b.x0 < a.x1
                        and a.y0 < b.y1 and b.y0 < a.y1):
                    raise ValidationError(
                        f"regions {a.name} and {b.name} overlap")

    def _check_mirror_symmetry(self):
        boxes = {(round(r.x0, 12), round(r.x1, 12),
                  round(r.y0, 12), round(r.y1, 12)) for r in self.regions}
        for r in self.regions:
            m = r.mirrored_x()
            key = (round(m.x0, 12), round(m.x1, 12),
                   round(m.y0, 12), round(m.y1, 12))
            if key not in boxes:
                raise ValidationError(
                    f"layout not mirror symmetric about the trap axis "
                    f"(no image for {r.name})")

    @property
    def groups(self) -> tuple:
        seen = []
        for r in self.regions:
            if r.group not in seen and r.group != "gnd":
                seen.append(r.group)
        return tuple(seen)

    @property
    def rf_inner_edge(self) -> float:
        return self.slot_width / 2 + 2 * self.gap + self.inner_rail_width

    @property
    def rf_outer_edge(self) -> float:
        return self.rf_inner_edge + self.rf_rail_width


def reference_layout(gap: float = 8e-6,
                     slot_width: float = 50e-6,
                     inner_rail_width: float = 60e-6,
                     rf_rail_width: float = 182e-6,
                     outer_width: float = 300e-6,
                     outer_pitch: float = 130e-6,
                     outer_count: int = 10,
                     outer_b_count: int = 2,
                     chip_extent: float = 1.4e-3,
                     thickness: float = 40e-6,
                     outer_offset: float = 0.0) -> ElectrodeLayout:
    """Build the reference chip layout.

    The published design does not state electrode dimensions.  The defaults
    here are chosen so that the bare-chip ion height lands at the published
    169 um: for a symmetric rail pair spanning [a, b] in |x| over a grounded
    center, the RF null sits near sqrt(a*b) above the electrode top surface.
    Electrodes are extruded by `thickness`: the patterned MEMS device layer
    is tens of microns tall, and a flat-patch model cannot reproduce the
    published secular frequencies at the published ion height.
    All dimensions are config knobs.
    """
    regions = []
    g = gap
    sh = slot_width / 2
    xe = chip_extent

    # full-length rails: slot termination (grounded), inner DC, RF
    regions.append(Region("slot", "gnd", -sh, sh, -xe, xe))
    xi0 = sh + g
    xi1 = xi0 + inner_rail_width
    a = xi1 + g
    b = a + rf_rail_width
    for sx, tag in ((1, "px"), (-1, "mx")):
        def span(lo, hi):
            return (lo, hi) if sx > 0 else (-hi, -lo)

        x0, x1 = span(xi0, xi1)
        regions.append(Region(f"inner_{tag}", "inner", x0, x1, -xe, xe))
        x0, x1 = span(a, b)
        regions.append(Region(f"rf_{tag}", "rf", x0, x1, -xe, xe))

        # outer DC column, segmented along y, behind an optional grounded
        # spacer strip
        if outer_offset > 0:
            x0, x1 = span(b + g, b + g + outer_offset)
            regions.append(Region(f"spacer_{tag}", "gnd", x0, x1, -xe, xe))
        shift = outer_offset + g if outer_offset > 0 else 0.0
        c0, c1 = span(b + g + shift, b + g + shift + outer_width)
        n2 = outer_count // 2
        b2 = outer_b_count // 2
        for j in range(-n2, n2):
            y0 = j * outer_pitch + g / 2
            y1 = (j + 1) * outer_pitch - g / 2
            ab = "B" if -b2 <= j < b2 else "A"
            ysign = "py" if j >= 0 else "my"
            regions.append(Region(f"out_{tag}_{j}", f"out_{tag}_{ysign}_{ab}",
                                  c0, c1, y0, y1))
        # grounded continuation of the outer column beyond the segments
        regions.append(Region(f"outgnd_{tag}_py", "gnd",
                              c0, c1, n2 * outer_pitch + g / 2, xe))
        regions.append(Region(f"outgnd_{tag}_my", "gnd",
                              c0, c1, -xe, -n2 * outer_pitch - g / 2))
        # ground plane between the outer column and the chip edge; the
        # plane beyond the chip is grounded implicitly by the solver
        outer_end = b + 2 * g + shift + outer_width
        if outer_end < xe:
            x0, x1 = span(outer_end, xe)
            regions.append(Region(f"gnd_{tag}", "gnd", x0, x1, -xe, xe))

    return ElectrodeLayout(
        regions=tuple(regions), gap=gap, slot_width=slot_width,
        inner_rail_width=inner_rail_width, rf_rail_width=rf_rail_width,
        outer_width=outer_width, outer_pitch=outer_pitch,
        outer_count=outer_count, outer_b_count=outer_b_count,
        chip_extent=chip_extent, thickness=thickness,
        outer_offset=outer_offset)


COATINGS = ("bare", "grounded", "biased")


@dataclass(frozen=True)
class FiberAssembly:
    """Two coaxial fiber mirrors on the trap axis.

    Both fiber axes lie along y at (x=0, z=height); tips sit at
    y = +-cavity_length/2 and the bodies extend outward.  Tips are modeled
    as flat-ended cylinders (the ~um mirror indentation is below grid
    resolution).  facet_charge_density is in elementary charges per um^2,
    signed, applied to both facets.
    """

    cavity_length: float
    height: float
    diameter: float = 250e-6
    permittivity: float = 3.8
    coating: str = "bare"
    bias: float = 0.0
    facet_charge_density: float = 0.0

    def __post_init__(self):
        if self.diameter <= 0:
            raise ValidationError("FiberAssembly.diameter must be > 0")
        if self.permittivity < 1:
            raise ValidationError("FiberAssembly.permittivity must be >= 1")
        if self.cavity_length <= 0:
            raise ValidationError("FiberAssembly.cavity_length must be > 0")
        if self.height <= 0:
            raise ValidationError("FiberAssembly.height must be > 0")
        if self.coating not in COATINGS:
            raise ValidationError(
                f"FiberAssembly.coating must be one of {COATINGS}")

    @property
    def radius(self) -> float:
        return self.diameter / 2

    @property
    def tip_y(self) -> float:
        return self.cavity_length / 2

    @property
    def case(self) -> str:
        """Tag matching the three published scenarios."""
        if self.coating == "bare":
            return "bare"
        return "charged" if self.facet_charge_density else "coated"


@dataclass(frozen=True)
class VoltageSet:
    """DC electrode voltages.

    V_A + V_offset drives the outer A electrodes, V_B + V_offset the outer
    B electrodes.  Compensation deltas are applied antisymmetrically:
    dU_x with the sign of the electrode's x side, dU_y with the sign of its
    y position, dU_z on all outer electrodes.
    """

    V_A: float = 0.0
    V_B: float = 0.0
    V_offset: float = 0.0
    dU_x: float = 0.0
    dU_y: float = 0.0
    dU_z: float = 0.0
    V_inner: float = 0.0

    def __post_init__(self):
        import math
        for f in ("V_A", "V_B", "V_offset", "dU_x", "dU_y", "dU_z",
                  "V_inner"):
            if not math.isfinite(getattr(self, f)):
                raise ValidationError(f"VoltageSet.{f} must be finite")

    def group_value(self, group: str) -> float:
        """DC voltage applied to an electrode group."""
        if group in ("gnd", "rf"):
            return 0.0
        if group == "inner":
            return self.V_inner
        if group == "coating":
            return 0.0  # bias handled by the geometry's fiber
        # outer groups: out_{px|mx}_{py|my}_{A|B}
        _, sx, sy, ab = group.split("_")
        v = (self.V_A if ab == "A" else self.V_B) + self.V_offset
        v += self.dU_x if sx == "px" else -self.dU_x
        v += self.dU_y if sy == "py" else -self.dU_y
        v += self.dU_z
        return v


# Published voltage sets for the three fiber scenarios
DEFAULT_VOLTAGES = {
    "bare": VoltageSet(V_A=24.3, V_B=-65.7, V_offset=0.0),
    "coated": VoltageSet(V_A=26.6, V_B=-63.5, V_offset=0.0),
    "charged": VoltageSet(V_A=19.4, V_B=-70.7, V_offset=0.0),
}

# fiber center height above the chip: matches the bare-chip ion height for
# bare fibers; lowered so it tracks the ion for coated/charged fibers
DEFAULT_FIBER_HEIGHT = {"bare": 169e-6, "coated": 138e-6, "charged": 138e-6}

DEFAULT_RF = RFDrive(amplitude=150.0, omega=2 * 3.141592653589793 * 20e6)


@dataclass(frozen=True)
class DomainBox:
    """Axis-aligned solver domain; the chip plane z=0 must be inside."""

    x: float = 1.8e-3
    y: float = 2.0e-3
    z_min: float = -0.12e-3
    z_max: float = 1.4e-3

    def __post_init__(self):
        if self.x <= 0 or self.y <= 0:
            raise ValidationError("DomainBox half-extents must be > 0")
        if not (self.z_min < 0 < self.z_max):
            raise ValidationError("DomainBox must straddle the chip plane")


@dataclass(frozen=True)
class TrapGeometry:
    """Everything the field solver needs: chip layout, fibers, domain."""

    layout: ElectrodeLayout
    fiber: Optional[FiberAssembly] = None
    domain: DomainBox = field(default_factory=DomainBox)

    def __post_init__(self):
        d = self.domain
        for r in self.layout.regions:
            if max(abs(r.x0), abs(r.x1)) > d.x + 1e-12 or \
               max(abs(r.y0), abs(r.y1)) > d.y + 1e-12:
                raise ValidationError(
                    f"electrode {r.name} extends outside the domain box")
        f = self.fiber
        if f is not None:
            if f.tip_y + f.radius > d.y:
                raise ValidationError("fiber tips outside the domain box")
            if f.height + f.radius > d.z_max:
                raise ValidationError("fiber body outside the domain box")

    @property
    def conductor_groups(self) -> tuple:
        groups = list(self.layout.groups)
        if self.fiber is not None and self.fiber.coating != "bare":
            groups.append("coating")
        return tuple(groups)

    def group_voltages(self, volts: VoltageSet) -> dict:
        out = {g: volts.group_value(g) for g in self.conductor_groups}
        if self.fiber is not None and self.fiber.coating == "biased":
            out["coating"] = self.fiber.bias
        return out
