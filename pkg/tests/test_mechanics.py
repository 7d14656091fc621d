import math
from dataclasses import replace

import pytest

from fibertrap.actuators import CombSpec, PlateSpec, comb_force, \
    zplate_equilibrium
from fibertrap.mechanics import (
    AxisTopology,
    BeamSpec,
    CalibrationError,
    GRAVITY,
    LoadSpec,
    SuspensionSpec,
    beam_stiffness,
    calibrate_beam_length,
    factor_of_safety,
    gravity_sag,
    max_bending_stress,
    modal_frequencies,
    suspension_stiffness,
)
from fibertrap.model import ValidationError

LOAD = LoadSpec()


def susp(width):
    return SuspensionSpec(beam=BeamSpec(width=width))


class TestBeamStiffness:
    def test_hand_calculation_vertical(self):
        # E w t^3 / L^3 for E=169 GPa, w=5 um, t=20 um, L=1 mm -> 6.76 N/m
        beam = BeamSpec(width=5e-6, length=1e-3)
        assert beam_stiffness(beam, "vertical") == pytest.approx(6.76)

    def test_inplane_cubic_in_width(self):
        k8 = beam_stiffness(BeamSpec(width=8e-6), "in_plane")
        k4 = beam_stiffness(BeamSpec(width=4e-6), "in_plane")
        assert k8 / k4 == pytest.approx(8.0, rel=1e-12)

    def test_vertical_linear_in_width(self):
        k8 = beam_stiffness(BeamSpec(width=8e-6), "vertical")
        k4 = beam_stiffness(BeamSpec(width=4e-6), "vertical")
        assert k8 / k4 == pytest.approx(2.0, rel=1e-12)

    def test_unknown_axis(self):
        with pytest.raises(ValidationError):
            beam_stiffness(BeamSpec(width=5e-6), "diagonal")


class TestSuspensionStiffness:
    def test_parallel_beams_add(self):
        s = SuspensionSpec(beam=BeamSpec(width=5e-6),
                           in_plane=AxisTopology("parallel"))
        one = beam_stiffness(s.beam, "in_plane")
        assert suspension_stiffness(s, "in_plane") == pytest.approx(
            160 * one)

    def test_folded_pair_halves_chain_stiffness(self):
        folded = SuspensionSpec(
            beam=BeamSpec(width=5e-6),
            vertical=AxisTopology("folded", n_series=2))
        one = beam_stiffness(folded.beam, "vertical")
        # 80 chains, each a 2-segment series of stiffness one/2
        assert suspension_stiffness(folded, "vertical") == pytest.approx(
            80 * one / 2)

    def test_parallel_topology_rejects_series(self):
        with pytest.raises(ValidationError):
            AxisTopology("parallel", n_series=3)


class TestGravitySag:
    def test_published_sag_at_5um(self):
        assert gravity_sag(susp(5e-6), LOAD) == pytest.approx(0.97e-6,
                                                              rel=0.02)

    def test_inverse_width_scaling(self):
        d4 = gravity_sag(susp(4e-6), LOAD)
        d5 = gravity_sag(susp(5e-6), LOAD)
        assert d4 / d5 == pytest.approx(1.25, rel=1e-6)

    def test_vanishing_load(self):
        tiny = LoadSpec(stage=1e-15, stage_bench=2e-15,
                        stage_bench_fiber=3e-15)
        assert gravity_sag(susp(5e-6), tiny) < 1e-12

    def test_load_must_increase(self):
        with pytest.raises(ValidationError):
            LoadSpec(stage=2e-6, stage_bench=1e-6, stage_bench_fiber=3e-6)


class TestBendingStress:
    def test_zero_deflection(self):
        assert max_bending_stress(susp(5e-6), 0.0, "in_plane") == 0.0

    def test_linear_in_deflection(self):
        s = susp(5e-6)
        one = max_bending_stress(s, 1e-6, "in_plane")
        two = max_bending_stress(s, 2e-6, "in_plane")
        assert two == pytest.approx(2 * one, rel=1e-12)

    def test_below_third_of_yield_at_max_stroke(self):
        for w in (4e-6, 5e-6, 6e-6, 8e-6):
            s = susp(w)
            x = comb_force(CombSpec(), 300.0) / \
                suspension_stiffness(s, "in_plane")
            sigma = max_bending_stress(s, x, "in_plane")
            assert sigma < s.beam.yield_stress / 3


class TestFactorOfSafety:
    def test_stress_equals_yield(self):
        assert factor_of_safety(7e9, 7e9).value == pytest.approx(1.0)
        assert not factor_of_safety(7e9, 7e9).stable

    def test_zero_stress_flagged_unbounded(self):
        fos = factor_of_safety(0.0, 7e9)
        assert math.isinf(fos.value) and fos.unbounded

    def _inplane_fos(self, width):
        s = susp(width)
        x = comb_force(CombSpec(), 300.0) / \
            suspension_stiffness(s, "in_plane")
        sigma = max_bending_stress(s, x, "in_plane")
        return factor_of_safety(sigma, s.beam.yield_stress).value

    def test_published_inplane_values_at_300v(self):
        published = {4e-6: 13.0, 5e-6: 21.0, 6e-6: 32.0, 8e-6: 61.0}
        for w, target in published.items():
            assert self._inplane_fos(w) == pytest.approx(target, rel=0.40)

    def test_inplane_ordering_exact(self):
        values = [self._inplane_fos(w) for w in (4e-6, 5e-6, 6e-6, 8e-6)]
        assert values == sorted(values)
        assert len(set(values)) == 4

    def test_published_vertical_values_at_max_voltages(self):
        published = {4e-6: (180.0, 81.0), 6e-6: (210.0, 95.0),
                     8e-6: (240.0, 99.0)}
        for w, (v_max, target) in published.items():
            s = susp(w)
            k = suspension_stiffness(s, "vertical")
            z = zplate_equilibrium(PlateSpec(), k, v_max)
            sigma = max_bending_stress(s, z, "vertical")
            fos = factor_of_safety(sigma, s.beam.yield_stress).value
            assert fos == pytest.approx(target, rel=0.40)


class TestModalFrequencies:
    def test_lowest_mode_matches_publication(self):
        freqs = modal_frequencies(susp(8e-6), LOAD, with_fiber=False)
        assert freqs[0] == pytest.approx(985.0, rel=0.35)

    def test_mass_loading_ratio(self):
        bare = modal_frequencies(susp(8e-6), LOAD, with_fiber=False)
        loaded = modal_frequencies(susp(8e-6), LOAD, with_fiber=True)
        for f0, f1 in zip(bare, loaded):
            ratio = f1 / f0
            assert ratio == pytest.approx(math.sqrt(806.0 / 1806.0),
                                          rel=1e-9)
            # published six-mode mean of the loading ratio is 0.66
            assert ratio == pytest.approx(0.66, rel=0.15)

    def test_inverse_sqrt_mass(self):
        heavy = LoadSpec(stage=LOAD.stage * 4,
                         stage_bench=LOAD.stage_bench * 4,
                         stage_bench_fiber=LOAD.stage_bench_fiber * 4)
        f = modal_frequencies(susp(6e-6), LOAD, True)
        g = modal_frequencies(susp(6e-6), heavy, True)
        for a, b in zip(f, g):
            assert b == pytest.approx(a / 2, rel=1e-12)

    def test_three_ascending_modes(self):
        freqs = modal_frequencies(susp(5e-6), LOAD, False)
        assert len(freqs) == 3
        assert freqs == sorted(freqs)


class TestCalibration:
    def test_round_trip(self):
        length = calibrate_beam_length(0.97e-6, 5e-6, LOAD)
        s = SuspensionSpec(beam=BeamSpec(width=5e-6, length=length))
        assert gravity_sag(s, LOAD) == pytest.approx(0.97e-6, rel=1e-6)

    def test_default_length_is_the_calibrated_one(self):
        length = calibrate_beam_length(0.97e-6, 5e-6, LOAD)
        assert BeamSpec(width=5e-6).length == pytest.approx(length,
                                                            rel=1e-3)

    def test_cube_root_scaling(self):
        a = calibrate_beam_length(0.5e-6, 5e-6, LOAD)
        b = calibrate_beam_length(1.0e-6, 5e-6, LOAD)
        assert b / a == pytest.approx(2 ** (1 / 3), rel=1e-9)

    def test_infeasible_target(self):
        with pytest.raises(CalibrationError):
            calibrate_beam_length(1e-12, 5e-6, LOAD)


class TestConsistencyAcrossWidth:
    def test_width_change_propagates_everywhere(self):
        # one suspension object feeds sag, stress, FOS and modes; swapping
        # the beam width must move all of them coherently (no stale state)
        s5 = susp(5e-6)
        s8 = replace(s5, beam=replace(s5.beam, width=8e-6))
        assert gravity_sag(s8, LOAD) == pytest.approx(
            gravity_sag(s5, LOAD) * 5 / 8, rel=1e-9)
        k_ratio = suspension_stiffness(s8, "in_plane") / \
            suspension_stiffness(s5, "in_plane")
        assert k_ratio == pytest.approx((8 / 5) ** 3, rel=1e-9)
        f_ratio = modal_frequencies(s8, LOAD, False)[0] / \
            modal_frequencies(s5, LOAD, False)[0]
        assert f_ratio == pytest.approx(math.sqrt(8 / 5), rel=1e-9)

    def test_fos_increases_with_width_at_fixed_drive(self):
        # at fixed drive voltage the stroke shrinks ~1/w^3, so the root
        # stress falls ~1/w^2 and the safety factor grows with width
        values = []
        for w in (4e-6, 5e-6, 6e-6, 8e-6):
            s = susp(w)
            x = comb_force(CombSpec(), 150.0) / \
                suspension_stiffness(s, "in_plane")
            sigma = max_bending_stress(s, x, "in_plane")
            values.append(factor_of_safety(sigma,
                                           s.beam.yield_stress).value)
        assert values == sorted(values)
