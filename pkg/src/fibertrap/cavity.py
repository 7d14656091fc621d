"""Fiber Fabry-Perot mode geometry and ion-cavity rates.

Conventions: kappa is the cavity *field* decay rate, half the FWHM
linewidth, so kappa/2pi = c / (4 L F).  gamma is the atomic *amplitude*
decay rate (HWHM).  g uses the partial-linewidth form

    g = eta * sqrt(3 c lambda^2 beta gamma / (pi^2 w0^2 L))

with beta the branching fraction of the upper state into the cavity
transition and eta a dipole/polarization correction.  The published rate
tables do not state their dipole conventions, so beta for the two Yb
transitions is calibrated once against the published 500 um rates and
frozen (see TRANSITIONS); the Ca 854 nm row needs no calibration.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Iterable, List, Optional, Tuple

from scipy.constants import c as SPEED_OF_LIGHT

from .model import ValidationError


@dataclass(frozen=True)
class CavitySpec:
    """Two-mirror cavity: length, mirror curvatures, finesse, and the
    effective mirror diameter available to the mode."""

    length: float
    finesse: float
    R1: float = 350e-6
    R2: float = 350e-6
    mirror_diameter: float = 100e-6

    def __post_init__(self):
        for name in ("length", "finesse", "R1", "R2", "mirror_diameter"):
            if getattr(self, name) <= 0:
                raise ValidationError(f"CavitySpec.{name} must be > 0")


@dataclass(frozen=True)
class TransitionSpec:
    """Atomic transition feeding the cavity mode.

    gamma_hz is gamma/2pi in Hz (amplitude decay, HWHM convention);
    branching is the upper-state decay fraction on this transition;
    eta is an effective dipole factor (Clebsch-Gordan / polarization).
    """

    name: str
    wavelength: float
    gamma_hz: float
    branching: float
    eta: float = 1.0

    def __post_init__(self):
        if self.wavelength <= 0:
            raise ValidationError("TransitionSpec.wavelength must be > 0")
        if self.gamma_hz <= 0:
            raise ValidationError("TransitionSpec.gamma_hz must be > 0")
        if not 0 < self.branching <= 1:
            raise ValidationError("TransitionSpec.branching must be in (0,1]")
        if not 0 < self.eta <= 1:
            raise ValidationError("TransitionSpec.eta must be in (0,1]")


# Published L = 500 um rate triples: (3.0, 1.0, 1.5) MHz at 935 nm,
# (46, 25, 9.9) MHz at 369 nm, (18, 1.5, 11.5) MHz at 854 nm.  The 935
# branching is calibrated to the 3.0 MHz coupling; 369 uses the physical
# P1/2 -> S1/2 branching (the remaining ~1% mismatch against 46 MHz is
# accepted); 854 uses the D5/2 <- P3/2 branching from the g formula check.
TRANSITIONS = {
    "yb174_935": TransitionSpec("yb174_935", 935e-9, 1.5e6, 0.01113),
    "yb174_369": TransitionSpec("yb174_369", 369e-9, 9.9e6, 0.995),
    "ca40_854": TransitionSpec("ca40_854", 854e-9, 11.5e6, 0.0587),
}

# finesse assumed by the published design per transition
TRANSITION_FINESSE = {"yb174_935": 97000.0, "yb174_369": 10000.0,
                      "ca40_854": 97000.0}


class UnstableCavityError(ValueError):
    """Geometry outside the resonator stability range."""


def stability(length: float, R1: float, R2: float) -> Tuple[float, bool]:
    """g1*g2 stability product, with gi = 1 - L/Ri; stable iff in [0, 1]."""
    if min(length, R1, R2) <= 0:
        raise ValidationError("length and curvatures must be > 0")
    g1 = 1 - length / R1
    g2 = 1 - length / R2
    prod = g1 * g2
    return prod, 0.0 <= prod <= 1.0


def mode_waist(spec: CavitySpec, wavelength: float
               ) -> Tuple[float, Tuple[float, float]]:
    """Gaussian waist w0 and the spot sizes on both mirrors."""
    L = spec.length
    prod, stable = stability(L, spec.R1, spec.R2)
    if not stable:
        raise UnstableCavityError(
            f"unstable geometry: g1*g2 = {prod:.6g} at L = {L * 1e6:.4g} um")
    if abs(spec.R1 - spec.R2) <= 1e-9 * spec.R1:
        # symmetric closed form, regular through the confocal point
        R = spec.R1
        arg = L * (2 * R - L)
        if arg <= 0:
            raise UnstableCavityError(
                f"marginal geometry at L = {L * 1e6:.4g} um")
        z_r = math.sqrt(arg) / 2  # Rayleigh range
        w0_sq = wavelength / math.pi * z_r
        wm_sq = w0_sq * (1 + (L / 2 / z_r) ** 2)
        wm = math.sqrt(wm_sq)
        return math.sqrt(w0_sq), (wm, wm)
    g1 = 1 - L / spec.R1
    g2 = 1 - L / spec.R2
    scale = L * wavelength / math.pi
    denom = (g1 + g2 - 2 * g1 * g2) ** 2
    if denom == 0 or g1 * g2 * (1 - g1 * g2) <= 0:
        raise UnstableCavityError(
            f"marginal geometry: g1*g2 = {prod:.6g} at L = {L * 1e6:.4g} um")
    w0_sq = scale * math.sqrt(g1 * g2 * (1 - g1 * g2) / denom)
    w1_sq = scale * math.sqrt(g2 / (g1 * (1 - g1 * g2)))
    w2_sq = scale * math.sqrt(g1 / (g2 * (1 - g1 * g2)))
    return math.sqrt(w0_sq), (math.sqrt(w1_sq), math.sqrt(w2_sq))


def kappa(spec: CavitySpec) -> float:
    """Cavity field decay rate over 2pi: c / (4 L F), in Hz."""
    return SPEED_OF_LIGHT / (4 * spec.length * spec.finesse)


def coupling_g(spec: CavitySpec, transition: TransitionSpec) -> float:
    """Ion-cavity coupling g/2pi in Hz at a mode antinode."""
    w0, _ = mode_waist(spec, transition.wavelength)
    gamma_ang = 2 * math.pi * transition.gamma_hz
    g_sq = (3 * SPEED_OF_LIGHT * transition.wavelength ** 2 *
            transition.branching * gamma_ang /
            (math.pi ** 2 * w0 ** 2 * spec.length))
    return transition.eta * math.sqrt(g_sq) / (2 * math.pi)


def clipping_margin(spec: CavitySpec, wavelength: float) -> float:
    """Effective mirror radius over the larger mirror spot; below 2 the
    mode starts to see significant clipping loss."""
    _, (w1, w2) = mode_waist(spec, wavelength)
    return (spec.mirror_diameter / 2) / max(w1, w2)


CLIPPING_WARN_MARGIN = 2.0


@dataclass(frozen=True)
class CavityPoint:
    """Rates and mode geometry at one cavity length."""

    length: float
    stable: bool
    waist: float = math.nan
    mirror_spots: Tuple[float, float] = (math.nan, math.nan)
    g_hz: float = math.nan
    kappa_hz: float = math.nan
    gamma_hz: float = math.nan
    strong_coupling: bool = False
    clip_margin: float = math.nan
    clipping_warning: bool = False

    def __post_init__(self):
        if self.stable:
            expect = (self.g_hz > self.kappa_hz
                      and self.g_hz > self.gamma_hz)
            if self.strong_coupling != expect:
                raise ValidationError(
                    "strong_coupling flag inconsistent with rates")


def cavity_point(spec: CavitySpec,
                 transition: TransitionSpec) -> CavityPoint:
    _, stable = stability(spec.length, spec.R1, spec.R2)
    if not stable:
        return CavityPoint(length=spec.length, stable=False)
    try:
        w0, spots = mode_waist(spec, transition.wavelength)
    except UnstableCavityError:
        return CavityPoint(length=spec.length, stable=False)
    g = coupling_g(spec, transition)
    k = kappa(spec)
    margin = (spec.mirror_diameter / 2) / max(spots)
    return CavityPoint(
        length=spec.length, stable=True, waist=w0, mirror_spots=spots,
        g_hz=g, kappa_hz=k, gamma_hz=transition.gamma_hz,
        strong_coupling=g > k and g > transition.gamma_hz,
        clip_margin=margin,
        clipping_warning=margin < CLIPPING_WARN_MARGIN)


def sweep_length(spec: CavitySpec, transition: TransitionSpec,
                 lengths: Iterable[float]) -> List[CavityPoint]:
    """One CavityPoint per length; unstable lengths are marked, not fatal."""
    return [cavity_point(replace(spec, length=float(L)), transition)
            for L in lengths]


def sweep_rows(points: List[CavityPoint]) -> List[tuple]:
    """CSV rows (L_um, g_MHz, kappa_MHz, gamma_MHz, strong_coupling,
    waist_um, clip_margin)."""
    rows = []
    for p in points:
        rows.append((p.length * 1e6, p.g_hz / 1e6, p.kappa_hz / 1e6,
                     p.gamma_hz / 1e6, int(p.strong_coupling),
                     p.waist * 1e6, p.clip_margin))
    return rows
