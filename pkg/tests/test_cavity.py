import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.constants import c as SPEED_OF_LIGHT

from fibertrap.cavity import (
    TRANSITIONS,
    TRANSITION_FINESSE,
    CavityPoint,
    CavitySpec,
    TransitionSpec,
    UnstableCavityError,
    cavity_point,
    clipping_margin,
    coupling_g,
    kappa,
    mode_waist,
    stability,
    sweep_length,
)
from fibertrap.model import ValidationError


def spec_500(finesse=97000.0):
    return CavitySpec(length=500e-6, finesse=finesse)


class TestStability:
    def test_reference_length(self):
        prod, stable = stability(500e-6, 350e-6, 350e-6)
        assert prod == pytest.approx((1 - 10 / 7) ** 2, rel=1e-12)
        assert prod == pytest.approx(0.18367, abs=1e-5)
        assert stable

    def test_concentric_boundary(self):
        prod, stable = stability(700e-6, 350e-6, 350e-6)
        assert prod == pytest.approx(1.0)
        assert stable

    def test_planar_limit(self):
        prod, _ = stability(1e-9, 350e-6, 350e-6)
        assert prod == pytest.approx(1.0, abs=1e-5)

    def test_beyond_concentric_unstable(self):
        _, stable = stability(705e-6, 350e-6, 350e-6)
        assert not stable

    def test_sweep_boundary(self):
        R = 350e-6
        for L in (1e-6, 350e-6, 699e-6):
            assert stability(L, R, R)[1]
        for L in (701e-6, 1e-3):
            assert not stability(L, R, R)[1]


class TestModeWaist:
    def test_reference_waist_854(self):
        # (lambda/pi) * sqrt(L (2R - L)) / 2 evaluated by hand
        w0, _ = mode_waist(spec_500(), 854e-9)
        expected = math.sqrt(854e-9 / math.pi *
                             math.sqrt(500e-6 * 200e-6) / 2)
        assert w0 == pytest.approx(expected, rel=1e-9)
        assert w0 == pytest.approx(6.556e-6, rel=1e-3)

    def test_symmetric_L_equals_R(self):
        lam = 935e-9
        w0, _ = mode_waist(CavitySpec(length=350e-6, finesse=1e4), lam)
        assert w0 ** 2 == pytest.approx(lam / math.pi * 350e-6 / 2,
                                        rel=1e-9)

    def test_waist_collapses_toward_concentric(self):
        lam = 854e-9
        waists = [mode_waist(CavitySpec(length=L, finesse=1e4), lam)[0]
                  for L in (690e-6, 696e-6, 699e-6, 699.9e-6)]
        assert all(np.diff(waists) < 0)
        assert waists[-1] < 1e-6

    def test_unstable_geometry_raises(self):
        with pytest.raises(UnstableCavityError):
            mode_waist(CavitySpec(length=720e-6, finesse=1e4), 854e-9)

    def test_mirror_spots_symmetric(self):
        _, (w1, w2) = mode_waist(spec_500(), 854e-9)
        assert w1 == pytest.approx(w2, rel=1e-12)


class TestKappa:
    def test_reference_value(self):
        # c / (4 L F) at 500 um, F = 97,000
        k = kappa(spec_500())
        assert k == pytest.approx(SPEED_OF_LIGHT / (4 * 500e-6 * 97000),
                                  rel=1e-12)
        assert k == pytest.approx(1.5453e6, rel=1e-4)
        assert k == pytest.approx(1.5e6, rel=0.05)  # published Ca+ row

    def test_halves_with_length(self):
        assert kappa(CavitySpec(length=1e-3, finesse=97000.0)) == \
            pytest.approx(kappa(spec_500()) / 2, rel=1e-12)

    def test_halves_with_finesse(self):
        assert kappa(spec_500(finesse=194000.0)) == pytest.approx(
            kappa(spec_500()) / 2, rel=1e-12)


class TestCouplingG:
    def test_ca854_published_value(self):
        g = coupling_g(spec_500(), TRANSITIONS["ca40_854"])
        assert g == pytest.approx(18e6, rel=0.10)

    def test_yb935_published_value(self):
        g = coupling_g(spec_500(), TRANSITIONS["yb174_935"])
        assert g == pytest.approx(3.0e6, rel=0.10)

    def test_yb369_published_value(self):
        g = coupling_g(spec_500(finesse=10000.0), TRANSITIONS["yb174_369"])
        assert g == pytest.approx(46e6, rel=0.10)

    def test_monotone_decrease_below_R(self):
        tr = TRANSITIONS["ca40_854"]
        gs = [coupling_g(CavitySpec(length=L, finesse=97000.0), tr)
              for L in np.linspace(60e-6, 340e-6, 12)]
        assert all(np.diff(gs) < 0)

    def test_vanishes_with_gamma(self):
        tr = TRANSITIONS["ca40_854"]
        weak = replace(tr, gamma_hz=tr.gamma_hz * 1e-8)
        ratio = coupling_g(spec_500(), weak) / coupling_g(spec_500(), tr)
        assert ratio == pytest.approx(1e-4, rel=1e-6)

    def test_invariant_g_sqrtL_w0(self):
        # g * sqrt(L) * w0(L) is constant in L for fixed transition
        tr = TRANSITIONS["yb174_935"]
        vals = []
        for L in (150e-6, 300e-6, 500e-6, 650e-6):
            spec = CavitySpec(length=L, finesse=97000.0)
            w0, _ = mode_waist(spec, tr.wavelength)
            vals.append(coupling_g(spec, tr) * math.sqrt(L) * w0)
        assert np.ptp(vals) / vals[0] < 1e-9


class TestClipping:
    def test_no_clipping_at_reference(self):
        assert clipping_margin(spec_500(), 854e-9) > 2.0

    def test_margin_vanishes_toward_concentric(self):
        margins = [clipping_margin(CavitySpec(length=L, finesse=1e4),
                                   854e-9)
                   for L in (500e-6, 650e-6, 690e-6, 699e-6)]
        assert all(np.diff(margins) < 0)
        assert margins[-1] < 0.3

    def test_doubling_diameter_doubles_margin(self):
        a = clipping_margin(spec_500(), 854e-9)
        b = clipping_margin(replace(spec_500(), mirror_diameter=200e-6),
                            854e-9)
        assert b == pytest.approx(2 * a, rel=1e-12)


class TestSweep:
    def test_strong_coupling_at_500um_all_transitions(self):
        for name, tr in TRANSITIONS.items():
            spec = spec_500(finesse=TRANSITION_FINESSE[name])
            point = cavity_point(spec, tr)
            assert point.strong_coupling, name

    def test_369_rate_ordering(self):
        point = cavity_point(spec_500(finesse=10000.0),
                             TRANSITIONS["yb174_369"])
        assert point.g_hz > point.kappa_hz > point.gamma_hz

    def test_kappa_inverse_length_across_sweep(self):
        lengths = np.linspace(100e-6, 650e-6, 12)
        pts = sweep_length(spec_500(), TRANSITIONS["ca40_854"], lengths)
        prods = [p.kappa_hz * p.length for p in pts]
        assert np.ptp(prods) / prods[0] < 1e-12

    def test_unstable_lengths_marked_not_fatal(self):
        pts = sweep_length(spec_500(), TRANSITIONS["ca40_854"],
                           [500e-6, 710e-6, 900e-6])
        assert pts[0].stable and not pts[1].stable and not pts[2].stable

    def test_flag_consistency_enforced(self):
        with pytest.raises(ValidationError):
            CavityPoint(length=500e-6, stable=True, g_hz=1e6,
                        kappa_hz=2e6, gamma_hz=0.5e6, strong_coupling=True)

    @given(st.floats(1e-3, 1e3))
    @settings(max_examples=50, deadline=None)
    def test_verdict_invariant_under_common_scaling(self, scale):
        base = cavity_point(spec_500(), TRANSITIONS["ca40_854"])
        scaled_strong = (base.g_hz * scale > base.kappa_hz * scale
                         and base.g_hz * scale > base.gamma_hz * scale)
        assert scaled_strong == base.strong_coupling


class TestValidation:
    def test_branching_range(self):
        with pytest.raises(ValidationError):
            TransitionSpec("bad", 854e-9, 1e6, branching=1.5)

    def test_positive_dimensions(self):
        with pytest.raises(ValidationError):
            CavitySpec(length=-1e-6, finesse=1e4)
