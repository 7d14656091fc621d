"""Electrostatic actuator models: comb drive and parallel-plate z stage.

The comb force is displacement independent (constant dC/dx), so the stroke
is exactly quadratic in voltage.  The plate actuator's gap shrinks as it
moves, giving the familiar deviation from V^2 and pull-in at one third of
the rest gap.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np
from scipy.constants import epsilon_0

from .model import ValidationError

# soft drive limits used by the published design
MAX_COMB_VOLTAGE = 300.0
MAX_PLATE_VOLTAGE = 240.0


@dataclass(frozen=True)
class CombSpec:
    """Interdigitated comb bank: N units of finger thickness h, gap d,
    rest overlap x0.  Gap and overlap are not published; the defaults are
    calibration-neutral because only N*h/d enters the force."""

    N: int = 240
    h: float = 30e-6
    d: float = 3e-6
    x0: float = 20e-6

    def __post_init__(self):
        if self.N < 1:
            raise ValidationError("CombSpec.N must be >= 1")
        if min(self.h, self.d, self.x0) <= 0:
            raise ValidationError("CombSpec.h, d, x0 must be > 0")


@dataclass(frozen=True)
class PlateSpec:
    """Parallel-plate z actuator: overlap area A, rest gap d0.

    The default area is the effective stage footprint calibrated so a
    4 um beam suspension moves 5 um at 160 V.
    """

    A: float = 4.0276e-7
    d0: float = 30e-6

    def __post_init__(self):
        if self.A <= 0 or self.d0 <= 0:
            raise ValidationError("PlateSpec.A and d0 must be > 0")


class PullInError(RuntimeError):
    """No stable equilibrium: drive voltage exceeds pull-in."""


def comb_capacitance(spec: CombSpec, x: float) -> float:
    """C(x) = 2 N eps0 h (x + x0) / d."""
    if x + spec.x0 <= 0:
        raise ValidationError("comb fingers fully withdrawn: x + x0 <= 0")
    return 2 * spec.N * epsilon_0 * spec.h * (x + spec.x0) / spec.d


def comb_force(spec: CombSpec, V: float) -> float:
    """F = (1/2) dC/dx V^2 = N eps0 h V^2 / d, independent of x."""
    return spec.N * epsilon_0 * spec.h * V ** 2 / spec.d


def comb_displacement(spec: CombSpec, k: float, V: float) -> float:
    """Equilibrium stroke x = N eps0 h V^2 / (k d)."""
    if k <= 0:
        raise ValidationError("spring constant must be > 0")
    return comb_force(spec, V) / k


def pull_in_voltage(spec: PlateSpec, k: float) -> float:
    """V_pi = sqrt(8 k d0^3 / (27 eps0 A)); above it the plate snaps."""
    if k <= 0:
        raise ValidationError("spring constant must be > 0")
    return math.sqrt(8 * k * spec.d0 ** 3 / (27 * epsilon_0 * spec.A))


def zplate_equilibrium(spec: PlateSpec, k: float, V: float,
                       tol: float = 1e-12) -> float:
    """Smallest positive root of k z = eps0 A V^2 / (2 (d0 - z)^2).

    Raises PullInError when no stable root exists.  g(z) = k z (d0-z)^2 is
    strictly increasing on [0, d0/3], so bisection there is safe; Newton
    polishes the root to `tol` meters.
    """
    if k <= 0:
        raise ValidationError("spring constant must be > 0")
    if V == 0:
        return 0.0
    rhs = epsilon_0 * spec.A * V ** 2 / 2
    zc = spec.d0 / 3

    def g(z):
        return k * z * (spec.d0 - z) ** 2 - rhs

    if g(zc) < 0:
        raise PullInError(
            f"V = {abs(V):.6g} V exceeds pull-in "
            f"({pull_in_voltage(spec, k):.6g} V)")
    lo, hi = 0.0, zc
    for _ in range(200):
        mid = (lo + hi) / 2
        if g(mid) < 0:
            lo = mid
        else:
            hi = mid
        if hi - lo < max(tol, 1e-18):
            break
    z = (lo + hi) / 2
    for _ in range(50):
        dg = k * (spec.d0 - z) * (spec.d0 - 3 * z)
        if dg <= 0:
            break
        step = g(z) / dg
        z_new = min(max(z - step, 0.0), zc)
        if abs(z_new - z) < tol:
            z = z_new
            break
        z = z_new
    return z


@dataclass(frozen=True)
class ActuatorCurve:
    """Sampled stroke curve with its quadratic fit x = a V^2."""

    voltages: np.ndarray
    displacements: np.ndarray
    quad_coeff: float
    fit_residual: float  # relative RMS over the fit window
    fit_v_max: float  # upper edge of the window where V^2 scaling holds
    truncated_at: Optional[float] = None  # pull-in voltage if curve stopped

    def __post_init__(self):
        v = np.asarray(self.voltages, dtype=float)
        if np.any(v < 0) or np.any(np.diff(v) <= 0):
            raise ValidationError("voltages must be non-negative ascending")
        if self.displacements[0] != 0.0:
            raise ValidationError("displacement(0) must be 0")


def _quad_fit(v: np.ndarray, x: np.ndarray) -> Tuple[float, float]:
    """Least-squares x = a v^2; returns (a, relative RMS residual)."""
    v2 = v ** 2
    denom = float(v2 @ v2)
    a = float(v2 @ x) / denom if denom else 0.0
    resid = x - a * v2
    scale = float(np.max(np.abs(x))) or 1.0
    return a, float(np.sqrt(np.mean(resid ** 2))) / scale


def stroke_curve(kind: str, spec, k: float, V_max: float,
                 steps: int = 61) -> ActuatorCurve:
    """Displacement vs drive voltage with a quadratic fit.

    For the plate the fit window is restricted to the small-deflection
    region and the reported fit_v_max is the onset voltage where the
    stroke departs from V^2 scaling by 1%.
    """
    if V_max <= 0:
        raise ValidationError("V_max must be > 0")
    volts = np.linspace(0.0, V_max, steps)
    truncated = None
    if kind == "comb":
        disp = np.array([comb_displacement(spec, k, v) for v in volts])
    elif kind == "plate":
        disp = []
        for v in volts:
            try:
                disp.append(zplate_equilibrium(spec, k, v))
            except PullInError:
                truncated = pull_in_voltage(spec, k)
                break
        disp = np.asarray(disp)
        volts = volts[:disp.size]
    else:
        raise ValidationError("kind must be 'comb' or 'plate'")

    if kind == "comb":
        a, resid = _quad_fit(volts, disp)
        fit_v_max = float(volts[-1])
    else:
        # small-signal coefficient, then find the 1% deviation onset
        a0 = epsilon_0 * spec.A / (2 * k * spec.d0 ** 2)
        with np.errstate(invalid="ignore", divide="ignore"):
            dev = np.abs(disp - a0 * volts ** 2) / \
                np.where(disp > 0, disp, np.inf)
        beyond = np.nonzero(dev > 0.01)[0]
        cut = beyond[0] if beyond.size else volts.size
        window = slice(0, max(cut, 3))
        a, resid = _quad_fit(volts[window], disp[window])
        fit_v_max = float(volts[window][-1])
    return ActuatorCurve(voltages=volts, displacements=disp, quad_coeff=a,
                         fit_residual=resid, fit_v_max=fit_v_max,
                         truncated_at=truncated)


def curve_rows(curve: ActuatorCurve) -> List[tuple]:
    """CSV rows (V, displacement_um, fit_value_um)."""
    return [(float(v), float(x * 1e6),
             float(curve.quad_coeff * v ** 2 * 1e6))
            for v, x in zip(curve.voltages, curve.displacements)]
