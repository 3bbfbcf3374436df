import numpy as np
import pytest

from cardiowave.arterial import (
    VesselSegment,
    apply_stenosis_profile,
    stiffness_coefficient,
    tube_pressure,
    wave_speed,
)
from cardiowave.errors import DomainError, ValidationError

A0 = 3.14159e-4
E = 0.25e6
H = 1.5e-3
RHO = 1060.0


def test_tube_pressure_at_reference_is_zero():
    K = stiffness_coefficient(E, H)
    assert tube_pressure(A0, 0.0, K, A0) == 0.0


def test_viscous_term_vanishes_with_zero_rate():
    K = stiffness_coefficient(E, H)
    for gamma in (0.0, 1.0, 1e3):
        p_el = tube_pressure(1.2 * A0, 0.0, K, A0, gamma=gamma)
        assert p_el == tube_pressure(1.2 * A0, 0.0, K, A0, gamma=0.0)


def test_tube_pressure_matches_high_precision_oracle():
    # 40-digit evaluation of K (sqrt(A) - sqrt(A0)) / A0 at A = 1.1 A0,
    # K = (4/3) sqrt(pi) E h, frozen:
    expected = 2440.4434391849888999
    K = stiffness_coefficient(E, H)
    p = tube_pressure(1.1 * A0, 0.0, K, A0)
    assert abs(p - expected) <= 1e-12 * expected


def test_tube_pressure_rejects_nonpositive_area():
    K = stiffness_coefficient(E, H)
    with pytest.raises(DomainError):
        tube_pressure(0.0, 0.0, K, A0)
    with pytest.raises(DomainError):
        tube_pressure(-1e-5, 0.0, K, A0)


def test_viscous_term_value():
    K = stiffness_coefficient(E, H)
    gamma, dadt = 7.5, 3.2e-6
    p = tube_pressure(A0, dadt, K, A0, gamma=gamma)
    assert p == pytest.approx(gamma * dadt / (A0 * np.sqrt(A0)), rel=1e-14)


def test_wave_speed_scaling_with_stiffness():
    K = stiffness_coefficient(E, H)
    c1 = wave_speed(A0, K, A0, RHO)
    c2 = wave_speed(A0, 2.0 * K, A0, RHO)
    assert c2**2 == pytest.approx(2.0 * c1**2, rel=1e-14)


def test_wave_speed_E_sweep_sqrt3():
    c1 = wave_speed(A0, stiffness_coefficient(0.25e6, H), A0, RHO)
    c3 = wave_speed(A0, stiffness_coefficient(0.75e6, H), A0, RHO)
    assert c3 == pytest.approx(np.sqrt(3.0) * c1, rel=1e-14)


def test_wave_speed_matches_finite_difference_of_tube_law():
    K = stiffness_coefficient(E, H)
    for A in (0.8 * A0, A0, 1.3 * A0):
        c = wave_speed(A, K, A0, RHO)
        dA = 1e-7 * A0
        dPdA = (
            tube_pressure(A + dA, 0.0, K, A0) - tube_pressure(A - dA, 0.0, K, A0)
        ) / (2.0 * dA)
        c_fd = np.sqrt(A / RHO * dPdA)
        assert c == pytest.approx(c_fd, rel=1e-8)


def _segment(n_elems=20, length=0.126):
    return VesselSegment(
        id="s", length=length, n_elems=n_elems, A0=A0, E=E, h=H,
        wall_visc=0.0, p_ext=0.0, rho=RHO, mu=4e-3,
    )


class TestStenosisProfile:
    def test_throat_area_for_30_percent_radius_reduction(self):
        seg = _segment(n_elems=40)
        apply_stenosis_profile(seg, 0.3)
        assert seg.A0.min() == pytest.approx(0.49 * A0, rel=1e-3)

    def test_zero_severity_limit_leaves_profile_unchanged(self):
        seg = _segment()
        ref = seg.A0.copy()
        apply_stenosis_profile(seg, 1e-12)
        assert np.allclose(seg.A0, ref, rtol=1e-9)

    def test_profile_is_c1(self):
        # slope of the area profile stays below the analytic bound of the
        # cosine taper: |dA0/dx| <= dip * A0 * pi / width
        seg = _segment(n_elems=400, length=0.126)
        width = 0.2 * seg.length
        apply_stenosis_profile(seg, 0.3, width=width)
        # element-interface nodes coincide; keep one sample per position
        x, keep = np.unique(np.round(seg.x.reshape(-1), 12), return_index=True)
        a = seg.A0.reshape(-1)[keep]
        slopes = np.diff(a) / np.diff(x)
        dip = 1.0 - 0.49
        bound = dip * A0 * np.pi / width
        assert np.max(np.abs(slopes)) <= bound * (1.0 + 1e-6)
        # and the slope has no jumps beyond discretization error
        jumps = np.abs(np.diff(slopes))
        dx = seg.length / (len(x) - 1)
        curvature_bound = dip * A0 * 2 * (np.pi / width) ** 2
        assert np.max(jumps) <= curvature_bound * dx * 4.0

    def test_severity_out_of_range_rejected(self):
        seg = _segment()
        for bad in (0.0, 1.0, -0.2, 1.4):
            with pytest.raises(ValidationError):
                apply_stenosis_profile(seg, bad)

    def test_region_must_fit_inside_segment(self):
        seg = _segment()
        with pytest.raises(ValidationError):
            apply_stenosis_profile(seg, 0.3, center=0.01, width=0.1)
