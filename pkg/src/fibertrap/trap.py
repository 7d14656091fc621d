"""Total trapping potential analysis.

The total potential is the RF pseudopotential plus the static potential,
phi_total = q |E|^2 / (4 m Omega^2) + phi_DC, handled here as energy in eV
so depths read directly in electron volts.  Frequencies come from 1D
quadratic fits over the published ranges (x: +-70 um, y: +-100 um,
z: -18..+6 um about the minimum) rather than from the local Hessian, which
also records the anharmonicity honestly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.constants import e as ELEMENTARY_CHARGE
from scipy.optimize import brentq

from .configio import GridParams, TrapConfig
from .grids import Grid3D, OutOfDomainError, ScalarField3D, build_grid, probe
from .model import (
    DEFAULT_FIBER_HEIGHT,
    DEFAULT_VOLTAGES,
    FiberAssembly,
    IonSpecies,
    RFDrive,
    TrapGeometry,
    ValidationError,
    VoltageSet,
)
from .solver import FieldSolver

# published quadratic-fit windows about the minimum, meters
FIT_RANGES = {
    "x": (-70e-6, 70e-6),
    "y": (-100e-6, 100e-6),
    "z": (-18e-6, 6e-6),
}
GRADIENT_TOL = 1.0  # eV/m  (= 1e-3 eV/mm)
FIT_TOLERANCE = 0.25  # declared ceiling for relative fit residuals
CHARGED_FACET_DENSITY = 5.0  # e per um^2, the published median


class MinimumNotFoundError(RuntimeError):
    """Descent left the search region or found no interior minimum."""

    def __init__(self, message, trajectory=None):
        super().__init__(message)
        self.trajectory = [] if trajectory is None else list(trajectory)


class NegativeCurvatureError(RuntimeError):
    """A fitted axis has non-positive curvature at the reported minimum."""


def pseudopotential(rf_basis: ScalarField3D, drive: RFDrive,
                    species: IonSpecies) -> ScalarField3D:
    """Ponderomotive energy q^2 V^2 |grad b|^2 / (4 m Omega^2), in eV."""
    gx, gy, gz = rf_basis.gradient_field()
    e_sq = gx ** 2 + gy ** 2 + gz ** 2
    scale = (species.charge ** 2 * drive.amplitude ** 2 /
             (4 * species.mass * drive.omega ** 2 * ELEMENTARY_CHARGE))
    return ScalarField3D(rf_basis.grid, scale * e_sq, "energy")


def dc_energy(dc_potential: ScalarField3D,
              species: IonSpecies) -> ScalarField3D:
    """Static potential (V) -> potential energy of the ion (eV)."""
    return dc_potential.scaled(species.charge_number, kind="energy")


def find_minimum(total: ScalarField3D, seed: Sequence[float],
                 tol: float = GRADIENT_TOL, scan_cells: int = 20,
                 max_iter: int = 80) -> np.ndarray:
    """Locate the local minimum near `seed`.

    A node scan over a +-scan_cells box seeds a damped Newton descent on
    the interpolated field; converged when |grad| <= tol (eV/m).
    """
    grid = total.grid
    seed = np.asarray(seed, dtype=float)
    if not grid.contains(seed):
        raise OutOfDomainError("seed outside the sampled grid")
    # coarse scan for the best node near the seed
    idx = [int(np.argmin(np.abs(ax - seed[k])))
           for k, ax in enumerate(grid.axes())]
    sl = tuple(slice(max(i - scan_cells, 1),
                     min(i + scan_cells + 1, n - 1))
               for i, n in zip(idx, grid.shape))
    sub = total.values[sl]
    rel = np.unravel_index(int(np.argmin(sub)), sub.shape)
    pos = np.array([grid.axes()[k][sl[k].start + rel[k]] for k in range(3)])

    traj = [pos.copy()]
    p = probe(total, pos)
    for _ in range(max_iter):
        gnorm = float(np.linalg.norm(p.gradient))
        if gnorm <= tol:
            return pos
        h = grid.spacing_at(pos)
        # Newton step with an eigenvalue floor: nearly flat directions
        # (the RF tube axis) must not produce wild steps
        evals, evecs = np.linalg.eigh(p.hessian)
        floor = max(1e-3 * float(np.abs(evals).max()), 1e-30)
        inv = 1.0 / np.maximum(evals, floor)
        step = -evecs @ (inv * (evecs.T @ p.gradient))
        step = np.clip(step, -2.0 * h, 2.0 * h)
        # accept only steps that reduce |grad|; otherwise backtrack
        improved = False
        for _ in range(6):
            new = pos + step
            for k, ax in enumerate(grid.axes()):
                new[k] = min(max(new[k], ax[1]), ax[-2])
            p_new = probe(total, new)
            if float(np.linalg.norm(p_new.gradient)) < gnorm:
                pos, p = new, p_new
                improved = True
                break
            step = step / 2
        traj.append(pos.copy())
        if not improved:
            break
    if float(np.linalg.norm(p.gradient)) <= tol:
        return pos
    raise MinimumNotFoundError(
        f"no minimum near seed {seed}: |grad| = "
        f"{np.linalg.norm(p.gradient):.3g} eV/m after {len(traj)} steps",
        trajectory=traj)


@dataclass(frozen=True)
class AxisFit:
    """1D quadratic fit U ~ a (s - s0)^2 + c along one axis."""

    curvature: float  # eV / m^2
    vertex: float  # m, offset from the fit origin
    offset: float  # eV
    residual: float  # relative RMS
    harmonic_range: Tuple[float, float]  # m, 5% deviation window


def _axis_samples(total: ScalarField3D, origin: np.ndarray, axis: int,
                  lo: float, hi: float) -> Tuple[np.ndarray, np.ndarray]:
    grid = total.grid
    h = grid.spacing_at(origin)[axis] / 2
    ax = grid.axes()[axis]
    lo = max(lo, ax[0] - origin[axis] + h)
    hi = min(hi, ax[-1] - origin[axis] - h)
    s = np.arange(lo, hi + h / 2, h)
    pts = np.tile(origin, (s.size, 1))
    pts[:, axis] += s
    return s, total.interpolate_many(pts)


def fit_axis(total: ScalarField3D, minimum: np.ndarray, axis: int,
             fit_range: Tuple[float, float],
             harmonic_tol: float = 0.05) -> AxisFit:
    s, u = _axis_samples(total, minimum, axis, *fit_range)
    coeffs = np.polyfit(s, u, 2)
    a = float(coeffs[0])
    if a <= 0:
        raise NegativeCurvatureError(
            f"non-positive curvature along {'xyz'[axis]}: {a:.3g} eV/m^2")
    s0 = float(-coeffs[1] / (2 * a))
    c = float(coeffs[2] - a * s0 ** 2)
    pred = np.polyval(coeffs, s)
    scale = float(np.ptp(u)) or 1.0
    residual = float(np.sqrt(np.mean((u - pred) ** 2))) / scale

    # widen the scan to find where the profile departs from the fitted
    # harmonic bowl by harmonic_tol
    span = 4 * max(abs(fit_range[0]), abs(fit_range[1]))
    sw, uw = _axis_samples(total, minimum, axis, -span, span)
    harm = a * (sw - s0) ** 2
    dev = np.abs(uw - c - harm)
    h = total.grid.spacing_at(minimum)[axis]
    inner = np.abs(sw - s0) <= 2 * h
    ok = (dev <= harmonic_tol * harm) | inner
    i0 = int(np.argmin(np.abs(sw - s0)))
    lo_i = i0
    while lo_i > 0 and ok[lo_i - 1]:
        lo_i -= 1
    hi_i = i0
    while hi_i < ok.size - 1 and ok[hi_i + 1]:
        hi_i += 1
    return AxisFit(curvature=a, vertex=s0, offset=c, residual=residual,
                   harmonic_range=(float(sw[lo_i]), float(sw[hi_i])))


@dataclass(frozen=True)
class DepthRay:
    """Escape barrier along one ray from the minimum."""

    direction: str
    depth: float  # eV
    barrier_offset: float  # m from the minimum, signed coordinate offset
    edge_limited: bool


@dataclass(frozen=True)
class TrapReport:
    """Analysis of one trapping configuration."""

    ion_position: np.ndarray
    frequencies: Tuple[float, float, float]  # omega_i / 2pi, Hz
    depths: Dict[str, DepthRay]
    residuals: Tuple[float, float, float]
    harmonic_ranges: Tuple[Tuple[float, float], ...]
    tag: str = ""
    fit_tolerance: float = FIT_TOLERANCE

    def __post_init__(self):
        if any(f <= 0 for f in self.frequencies):
            raise ValidationError("frequencies must be > 0 at a minimum")
        if any(r.depth < -1e-12 for r in self.depths.values()):
            raise ValidationError("trap depths must be >= 0")
        if any(r > self.fit_tolerance for r in self.residuals):
            raise ValidationError(
                f"fit residuals {self.residuals} exceed the declared "
                f"tolerance {self.fit_tolerance}")

    @property
    def ion_height(self) -> float:
        return float(self.ion_position[2])

    @property
    def min_depth(self) -> DepthRay:
        return min(self.depths.values(), key=lambda r: r.depth)


def fit_frequencies(total: ScalarField3D, minimum: np.ndarray,
                    species: IonSpecies, tag: str = "",
                    ranges: Dict[str, Tuple[float, float]] = None,
                    depths: Optional[Dict[str, DepthRay]] = None
                    ) -> TrapReport:
    """Quadratic-fit secular frequencies over the published windows.

    omega_i = sqrt(2 a_i e / m) for curvature a_i in eV/m^2 (the charge
    state already scaled the energy field).
    """
    ranges = FIT_RANGES if ranges is None else ranges
    fits = [fit_axis(total, minimum, axis, ranges["xyz"[axis]])
            for axis in range(3)]
    freqs = tuple(
        math.sqrt(2 * f.curvature * ELEMENTARY_CHARGE / species.mass) /
        (2 * math.pi) for f in fits)
    if depths is None:
        depths = trap_depth(total, minimum)
    return TrapReport(
        ion_position=np.asarray(minimum, dtype=float),
        frequencies=freqs,
        depths=depths,
        residuals=tuple(f.residual for f in fits),
        harmonic_ranges=tuple(f.harmonic_range for f in fits),
        tag=tag)


def trap_depth(total: ScalarField3D, minimum: np.ndarray,
               margin_cells: int = 2) -> Dict[str, DepthRay]:
    """Scan the six axis rays for the first local maximum.

    Sampled at half the local spacing with a three-point parabolic
    refinement of the barrier top; rays that leave the domain without a
    maximum report the edge value, flagged edge_limited.
    """
    grid = total.grid
    minimum = np.asarray(minimum, dtype=float)
    u_min = total.interpolate(minimum)
    out: Dict[str, DepthRay] = {}
    for axis in range(3):
        ax = grid.axes()[axis]
        for sign, label in ((+1, "+"), (-1, "-")):
            name = f"{label}{'xyz'[axis]}"
            if sign > 0:
                limit = ax[-1 - margin_cells] - minimum[axis]
            else:
                limit = minimum[axis] - ax[margin_cells]
            h = grid.spacing_at(minimum)[axis] / 2
            n = max(int(limit / h), 4)
            s = np.linspace(h, limit, n)
            pts = np.tile(minimum, (n, 1))
            pts[:, axis] += sign * s
            u = total.interpolate_many(pts)
            barrier = None
            for i in range(1, n - 1):
                if u[i] >= u[i + 1] and u[i] > u_min:
                    # parabolic refinement of the local top
                    denom = u[i - 1] - 2 * u[i] + u[i + 1]
                    if denom < 0:
                        ds = 0.5 * (u[i - 1] - u[i + 1]) / denom
                        ds = float(np.clip(ds, -1, 1))
                        u_top = u[i] - 0.25 * (u[i - 1] - u[i + 1]) * ds
                        barrier = (s[i] + ds * (s[1] - s[0]), u_top)
                    else:
                        barrier = (s[i], u[i])
                    break
            if barrier is None:
                out[name] = DepthRay(
                    direction=name, depth=float(u[-1] - u_min),
                    barrier_offset=float(sign * s[-1]), edge_limited=True)
            else:
                out[name] = DepthRay(
                    direction=name, depth=float(barrier[1] - u_min),
                    barrier_offset=float(sign * barrier[0]),
                    edge_limited=False)
    return out


class TrapSystem:
    """Solved field bundle for one geometry/drive/species combination.

    Basis solutions are computed lazily and cached; composing voltage sets
    and re-deriving reports is cheap array work after the first solve.
    """

    def __init__(self, geometry: TrapGeometry, drive: RFDrive,
                 species: IonSpecies, grid: Grid3D = None,
                 grid_params: GridParams = None, tol: float = 1e-8):
        if grid is None:
            gp = grid_params or GridParams()
            grid = build_grid(geometry.domain, gp.spacing, gp.fine_x,
                              gp.fine_y, gp.fine_z, gp.stretch)
        self.geometry = geometry
        self.drive = drive
        self.species = species
        self.solver = FieldSolver(geometry, grid, tol=tol)
        self.grid = self.solver.grid
        self._pseudo: Optional[ScalarField3D] = None

    @classmethod
    def from_config(cls, cfg: TrapConfig, tol: float = 1e-8
                    ) -> "TrapSystem":
        return cls(cfg.geometry, cfg.drive, cfg.species,
                   grid_params=cfg.grid, tol=tol)

    # --- field building blocks -------------------------------------------
    def rf_basis(self) -> ScalarField3D:
        return self.solver.basis("rf")

    def pseudo(self) -> ScalarField3D:
        if self._pseudo is None:
            self._pseudo = pseudopotential(self.rf_basis(), self.drive,
                                           self.species)
        return self._pseudo

    def _merged_outer(self, which: str) -> ScalarField3D:
        groups = tuple(g for g in self.solver.groups
                       if g.startswith("out_") and g.endswith(which))
        return self.solver.basis_union(groups, key=f"outer_{which}")

    def dc_potential(self, volts: VoltageSet) -> ScalarField3D:
        """Static potential for a voltage set, in volts (linear in all)."""
        fiber = self.geometry.fiber
        parts: List[Tuple[float, ScalarField3D]] = []
        if volts.dU_x == 0.0 and volts.dU_y == 0.0:
            parts.append((volts.V_A + volts.V_offset + volts.dU_z,
                          self._merged_outer("A")))
            parts.append((volts.V_B + volts.V_offset + volts.dU_z,
                          self._merged_outer("B")))
        else:
            for g in self.solver.groups:
                if g.startswith("out_"):
                    parts.append((volts.group_value(g), self.solver.basis(g)))
        if volts.V_inner:
            parts.append((volts.V_inner, self.solver.basis("inner")))
        if fiber is not None and fiber.coating == "biased" and fiber.bias:
            parts.append((fiber.bias, self.solver.basis("coating")))
        total = np.zeros(self.grid.shape)
        for w, f in parts:
            if w != 0.0:
                total += w * f.values
        if fiber is not None and fiber.facet_charge_density:
            total += self.solver.charge_field().values
        return ScalarField3D(self.grid, total, "potential")

    def total_energy(self, volts: VoltageSet) -> ScalarField3D:
        dc = dc_energy(self.dc_potential(volts), self.species)
        return ScalarField3D(self.grid, self.pseudo().values + dc.values,
                             "energy")

    # --- analysis ---------------------------------------------------------
    def seed(self) -> np.ndarray:
        return np.array([0.0, 0.0, 169e-6])

    def rf_null(self) -> np.ndarray:
        return find_minimum(self.pseudo(), self.seed())

    def minimum(self, volts: VoltageSet) -> np.ndarray:
        return find_minimum(self.total_energy(volts), self.seed())

    def report(self, volts: VoltageSet, tag: str = "") -> TrapReport:
        total = self.total_energy(volts)
        pos = find_minimum(total, self.seed())
        return fit_frequencies(total, pos, self.species, tag=tag)

    def dc_min_height(self, volts: VoltageSet,
                      z_range: Tuple[float, float] = (40e-6, 500e-6)
                      ) -> float:
        """Height of the on-axis minimum of the DC potential energy."""
        dc = dc_energy(self.dc_potential(volts), self.species)
        z_lo = max(z_range[0], self.grid.z[2])
        z_hi = min(z_range[1], self.grid.z[-3])
        zs = np.linspace(z_lo, z_hi, 400)
        pts = np.zeros((zs.size, 3))
        pts[:, 2] = zs
        u = dc.interpolate_many(pts)
        i = int(np.argmin(u))
        if i in (0, zs.size - 1):
            raise MinimumNotFoundError(
                "DC potential has no interior on-axis minimum in "
                f"[{z_lo * 1e6:.0f}, {z_hi * 1e6:.0f}] um")
        denom = u[i - 1] - 2 * u[i] + u[i + 1]
        dz = 0.5 * (u[i - 1] - u[i + 1]) / denom if denom > 0 else 0.0
        return float(zs[i] + np.clip(dz, -1, 1) * (zs[1] - zs[0]))

    def tune_offset(self, volts: VoltageSet = None,
                    bracket: Tuple[float, float] = (-50.0, 50.0),
                    height_tol: float = 0.1e-6) -> float:
        """V_offset that aligns the DC on-axis minimum with the RF null."""
        if volts is None:
            case = (self.geometry.fiber.case if self.geometry.fiber
                    else "bare")
            volts = DEFAULT_VOLTAGES[case]
        z_null = float(self.rf_null()[2])

        def mismatch(v_off):
            return self.dc_min_height(
                replace(volts, V_offset=v_off)) - z_null

        lo, hi = bracket
        f_lo, f_hi = mismatch(lo), mismatch(hi)
        if f_lo * f_hi > 0:
            raise MinimumNotFoundError(
                f"no offset in [{lo}, {hi}] V aligns the DC minimum "
                f"({f_lo * 1e6:+.2f} um at {lo} V, "
                f"{f_hi * 1e6:+.2f} um at {hi} V)")
        v = float(brentq(mismatch, lo, hi, xtol=1e-4))
        if abs(mismatch(v)) > height_tol:
            raise MinimumNotFoundError(
                "offset root does not meet the height tolerance")
        return v

    def compensation_response(self, volts: VoltageSet, dU_x: float = 0.0,
                              dU_y: float = 0.0, dU_z: float = 0.0
                              ) -> np.ndarray:
        """Ion displacement (m) produced by compensation deltas."""
        base = self.minimum(volts)
        shifted = self.minimum(replace(volts, dU_x=volts.dU_x + dU_x,
                                       dU_y=volts.dU_y + dU_y,
                                       dU_z=volts.dU_z + dU_z))
        return shifted - base


# --- cavity-length sweeps --------------------------------------------------

@dataclass(frozen=True)
class SweepRow:
    """One cavity length in a Fig.-6-style sweep."""

    length: float
    case: str
    ok: bool
    height: float = math.nan
    frequencies: Tuple[float, float, float] = (math.nan,) * 3
    min_depth: float = math.nan
    min_depth_direction: str = ""
    v_offset: float = 0.0
    error: str = ""

    def __post_init__(self):
        if self.length <= 0:
            raise ValidationError("SweepRow.length must be > 0")


def fiber_for_case(case: str, length: float) -> FiberAssembly:
    if case == "bare":
        return FiberAssembly(cavity_length=length,
                             height=DEFAULT_FIBER_HEIGHT["bare"])
    if case == "coated":
        return FiberAssembly(cavity_length=length,
                             height=DEFAULT_FIBER_HEIGHT["coated"],
                             coating="grounded")
    if case == "charged":
        return FiberAssembly(
            cavity_length=length, height=DEFAULT_FIBER_HEIGHT["charged"],
            coating="grounded",
            facet_charge_density=CHARGED_FACET_DENSITY)
    raise ValidationError(f"unknown fiber case {case!r}")


def sweep_task(case: str, length: float, cfg: TrapConfig,
               tune: Optional[bool] = None) -> SweepRow:
    """Solve one sweep row; failures are captured in the row."""
    geometry = replace(cfg.geometry, fiber=fiber_for_case(case, length))
    volts = DEFAULT_VOLTAGES[fiber_for_case(case, length).case]
    if tune is None:
        tune = case == "charged"  # published offsets vary only when charged
    try:
        system = TrapSystem(geometry, cfg.drive, cfg.species,
                            grid_params=cfg.grid)
        v_off = system.tune_offset(volts) if tune else volts.V_offset
        report = system.report(replace(volts, V_offset=v_off),
                               tag=f"{case}_L{length * 1e6:.0f}um")
        ray = report.min_depth
        return SweepRow(length=length, case=case, ok=True,
                        height=report.ion_height,
                        frequencies=report.frequencies,
                        min_depth=ray.depth,
                        min_depth_direction=ray.direction,
                        v_offset=v_off)
    except Exception as exc:  # row failure must not kill the sweep
        return SweepRow(length=length, case=case, ok=False,
                        error=f"{type(exc).__name__}: {exc}")


def sweep_cavity_length(case: str, lengths: Sequence[float],
                        cfg: TrapConfig, jobs: int = 1,
                        tune: Optional[bool] = None) -> List[SweepRow]:
    """Fig. 6 sweep: one row per cavity length, optionally in parallel."""
    lengths = sorted(float(v) for v in lengths)
    if any(v <= 0 for v in lengths):
        raise ValidationError("cavity lengths must be > 0")
    if jobs > 1:
        import concurrent.futures as cf
        with cf.ProcessPoolExecutor(max_workers=jobs) as pool:
            futs = [pool.submit(sweep_task, case, L, cfg, tune)
                    for L in lengths]
            rows = [f.result() for f in futs]
    else:
        rows = [sweep_task(case, L, cfg, tune) for L in lengths]
    return sorted(rows, key=lambda r: r.length)
