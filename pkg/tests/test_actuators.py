import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.constants import epsilon_0

from fibertrap.actuators import (
    ActuatorCurve,
    CombSpec,
    PlateSpec,
    PullInError,
    comb_capacitance,
    comb_displacement,
    comb_force,
    pull_in_voltage,
    stroke_curve,
    zplate_equilibrium,
)
from fibertrap.mechanics import BeamSpec, SuspensionSpec, suspension_stiffness
from fibertrap.model import ValidationError

COMB = CombSpec()


def k_inplane(width):
    return suspension_stiffness(SuspensionSpec(beam=BeamSpec(width=width)),
                                "in_plane")


def k_vertical(width):
    return suspension_stiffness(SuspensionSpec(beam=BeamSpec(width=width)),
                                "vertical")


class TestCombCapacitance:
    def test_rest_overlap_value(self):
        assert comb_capacitance(COMB, 0.0) == pytest.approx(
            2 * COMB.N * epsilon_0 * COMB.h * COMB.x0 / COMB.d)

    def test_reference_arithmetic(self):
        # N=240, h=30 um, d=3 um, x0=20 um evaluated by hand
        expected = 2 * 240 * epsilon_0 * 30e-6 * 20e-6 / 3e-6
        assert comb_capacitance(COMB, 0.0) == pytest.approx(expected)

    def test_dcdx_independent_of_x(self):
        d = 1e-9
        slopes = [(comb_capacitance(COMB, x + d) -
                   comb_capacitance(COMB, x - d)) / (2 * d)
                  for x in (0.0, 5e-6, 17e-6)]
        assert slopes[0] == pytest.approx(slopes[1], rel=1e-9)
        assert slopes[0] == pytest.approx(slopes[2], rel=1e-9)

    def test_withdrawn_fingers_rejected(self):
        with pytest.raises(ValidationError):
            comb_capacitance(COMB, -COMB.x0)


class TestCombForce:
    def test_zero_voltage(self):
        assert comb_force(COMB, 0.0) == 0.0

    def test_quadratic_scaling(self):
        assert comb_force(COMB, 40.0) == pytest.approx(
            4 * comb_force(COMB, 20.0), rel=1e-12)

    @given(st.floats(1.0, 300.0), st.integers(1, 500),
           st.floats(5e-6, 60e-6), st.floats(1e-6, 10e-6))
    @settings(max_examples=40, deadline=None)
    def test_matches_capacitance_derivative(self, V, N, h, d):
        spec = CombSpec(N=N, h=h, d=d)
        delta = 1e-9
        dcdx = (comb_capacitance(spec, delta) -
                comb_capacitance(spec, -delta)) / (2 * delta)
        assert comb_force(spec, V) == pytest.approx(0.5 * dcdx * V ** 2,
                                                    rel=1e-9)


class TestCombDisplacement:
    def test_zero_voltage(self):
        assert comb_displacement(COMB, 20.0, 0.0) == 0.0

    def test_published_stroke_at_20v(self):
        # 4 um beams cover one free spectral range (~400 nm) at 20 V
        x = comb_displacement(COMB, k_inplane(4e-6), 20.0)
        assert x == pytest.approx(400e-9, rel=0.15)

    def test_equilibrium_force_balance(self):
        # comb force is displacement independent, so equilibrium means
        # F(V) = k x exactly (not 1/2 k x^2 path-work equality)
        k = k_inplane(5e-6)
        for V in (10.0, 100.0, 250.0):
            x = comb_displacement(COMB, k, V)
            assert comb_force(COMB, V) == pytest.approx(k * x, rel=1e-12)

    def test_independent_of_rest_overlap(self):
        a = comb_displacement(CombSpec(x0=10e-6), 20.0, 100.0)
        b = comb_displacement(CombSpec(x0=40e-6), 20.0, 100.0)
        assert a == b

    def test_exactly_quadratic_exponent(self):
        k = k_inplane(4e-6)
        v = np.linspace(10.0, 300.0, 40)
        x = np.array([comb_displacement(COMB, k, vi) for vi in v])
        slope = np.polyfit(np.log(v), np.log(x), 1)[0]
        assert slope == pytest.approx(2.0, abs=1e-3)


class TestZPlate:
    def test_zero_voltage(self):
        assert zplate_equilibrium(PlateSpec(), 10.0, 0.0) == 0.0

    def test_published_stroke_at_160v(self):
        z = zplate_equilibrium(PlateSpec(), k_vertical(4e-6), 160.0)
        assert z == pytest.approx(5e-6, rel=0.20)

    def test_stable_roots_below_third_gap(self):
        spec = PlateSpec()
        k = k_vertical(4e-6)
        v_pi = pull_in_voltage(spec, k)
        for frac in (0.2, 0.5, 0.8, 0.95, 0.999):
            z = zplate_equilibrium(spec, k, frac * v_pi)
            assert z < spec.d0 / 3
        # z approaches d0/3 at the pull-in voltage
        z_edge = zplate_equilibrium(spec, k, 0.99999 * v_pi)
        assert z_edge == pytest.approx(spec.d0 / 3, rel=0.02)

    def test_force_balance_residual(self):
        spec = PlateSpec()
        k = k_vertical(6e-6)
        z = zplate_equilibrium(spec, k, 120.0)
        lhs = k * z
        rhs = epsilon_0 * spec.A * 120.0 ** 2 / (2 * (spec.d0 - z) ** 2)
        assert lhs == pytest.approx(rhs, rel=1e-9)

    def test_small_signal_matches_comb_law(self):
        # for z << d0 the plate reduces to the constant-gap V^2 law
        spec = PlateSpec()
        k = k_vertical(8e-6)
        a0 = epsilon_0 * spec.A / (2 * k * spec.d0 ** 2)
        v = math.sqrt(spec.d0 / 100 / a0)  # voltage giving z ~ d0/100
        z = zplate_equilibrium(spec, k, v)
        assert z == pytest.approx(a0 * v ** 2, rel=0.01)


class TestPullIn:
    def test_formula_value(self):
        spec = PlateSpec()
        assert pull_in_voltage(spec, 10.0) == pytest.approx(
            math.sqrt(8 * 10.0 * spec.d0 ** 3 / (27 * epsilon_0 * spec.A)))

    def test_stiffness_scaling(self):
        spec = PlateSpec()
        assert pull_in_voltage(spec, 20.0) == pytest.approx(
            math.sqrt(2) * pull_in_voltage(spec, 10.0))

    def test_gap_scaling(self):
        k = 15.0
        a = pull_in_voltage(PlateSpec(d0=30e-6), k)
        b = pull_in_voltage(PlateSpec(d0=15e-6), k)
        assert a / b == pytest.approx(2 ** 1.5, rel=1e-12)

    def test_root_existence_boundary(self):
        # the equilibrium solver agrees with the analytic pull-in edge
        spec = PlateSpec()
        k = k_vertical(4e-6)
        v_pi = pull_in_voltage(spec, k)
        zplate_equilibrium(spec, k, 0.999 * v_pi)  # converges
        with pytest.raises(PullInError):
            zplate_equilibrium(spec, k, 1.001 * v_pi)

    def test_scan_oracle_for_pull_in_edge(self):
        # dense voltage scan bracketing the loss of a force balance root
        spec = PlateSpec()
        k = 12.0
        v_pi = pull_in_voltage(spec, k)
        zc = spec.d0 / 3
        g_peak = k * zc * (spec.d0 - zc) ** 2

        def has_root(v):
            return epsilon_0 * spec.A * v ** 2 / 2 <= g_peak

        vs = np.linspace(0.5 * v_pi, 1.5 * v_pi, 20001)
        flips = np.nonzero(np.diff([has_root(v) for v in vs]))[0]
        assert len(flips) == 1
        v_edge = vs[flips[0]]
        assert v_edge == pytest.approx(v_pi, rel=1e-3)


class TestStrokeCurve:
    def test_comb_fit_is_exact(self):
        curve = stroke_curve("comb", COMB, k_inplane(5e-6), 300.0)
        assert curve.fit_residual < 1e-9

    def test_plate_residual_grows_with_vmax(self):
        spec = PlateSpec()
        k = k_vertical(4e-6)

        def full_resid(v_max):
            curve = stroke_curve("plate", spec, k, v_max)
            pred = curve.quad_coeff * curve.voltages ** 2
            scale = np.max(np.abs(curve.displacements))
            return np.sqrt(np.mean(
                (curve.displacements - pred) ** 2)) / scale

        assert full_resid(170.0) > full_resid(80.0) > full_resid(20.0)

    def test_plate_reports_deviation_onset(self):
        curve = stroke_curve("plate", PlateSpec(), k_vertical(4e-6), 170.0)
        assert 0 < curve.fit_v_max < 170.0

    def test_thinner_beams_move_farther(self):
        curves = {w: stroke_curve("comb", COMB, k_inplane(w * 1e-6), 300.0)
                  for w in (4, 5, 6, 8)}
        for v_idx in (10, 30, 60):
            d = [curves[w].displacements[v_idx] for w in (4, 5, 6, 8)]
            assert d[0] > d[1] > d[2] > d[3]

    def test_pull_in_truncates_curve(self):
        spec = PlateSpec()
        k = k_vertical(4e-6)
        v_pi = pull_in_voltage(spec, k)
        curve = stroke_curve("plate", spec, k, 1.5 * v_pi, steps=101)
        assert curve.truncated_at == pytest.approx(v_pi)
        assert curve.voltages[-1] < 1.5 * v_pi

    def test_rejects_descending_voltages(self):
        with pytest.raises(ValidationError):
            ActuatorCurve(voltages=np.array([0.0, 2.0, 1.0]),
                          displacements=np.array([0.0, 1e-9, 2e-9]),
                          quad_coeff=1.0, fit_residual=0.0, fit_v_max=2.0)
