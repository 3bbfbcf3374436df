import numpy as np
import pytest

from cardiowave.errors import InvertedElementError
from cardiowave.fem.material import (
    ActiveParams,
    GuccioneParams,
    active_scalar,
    active_stress,
    mandel_to_tensor4,
    passive_stress,
    strain_energy,
    sym_to_mandel,
)


def random_frames(rng, n):
    a = rng.normal(size=(n, 3))
    a /= np.linalg.norm(a, axis=1, keepdims=True)
    b = rng.normal(size=(n, 3))
    b -= a * np.sum(a * b, axis=1, keepdims=True)
    b /= np.linalg.norm(b, axis=1, keepdims=True)
    return np.stack([a, b, np.cross(a, b)], axis=2)


def random_C(rng, n, scale=0.08):
    h = scale * rng.normal(size=(n, 3, 3))
    return np.eye(3) + h + np.transpose(h, (0, 2, 1)) + 0.5 * np.einsum(
        "nij,nkj->nik", h, h
    )


@pytest.fixture(params=["transverse", "orthotropic"])
def material(request):
    if request.param == "transverse":
        return GuccioneParams.transverse()
    return GuccioneParams.orthotropic()


class TestPassive:
    def test_reference_is_stress_free(self, rng, material):
        R = random_frames(rng, 4)
        C = np.broadcast_to(np.eye(3), (4, 3, 3)).copy()
        S, _ = passive_stress(C, R, material)
        assert np.max(np.abs(S)) == 0.0

    def test_stress_matches_energy_gradient(self, rng, material):
        # central differences of Psi with respect to the Green-Lagrange
        # strain: dPsi = S : dE
        R = random_frames(rng, 5)
        C = random_C(rng, 5)
        S, _ = passive_stress(C, R, material)
        eps = 1e-7
        for i in range(3):
            for j in range(3):
                dC = np.zeros((3, 3))
                dC[i, j] += 1.0
                dC[j, i] += 1.0
                wp = strain_energy(C + eps * dC, R, material)
                wm = strain_energy(C - eps * dC, R, material)
                fd = (wp - wm) / (2.0 * eps)     # = S : dC / 2 = S_ij
                ref = S[:, i, j] if i == j else S[:, i, j]
                assert np.max(np.abs(fd - ref) / (np.abs(ref) + 1.0)) < 1e-6

    def test_tangent_matches_stress_differences(self, rng, material):
        R = random_frames(rng, 5)
        C = random_C(rng, 5)
        _, CC = passive_stress(C, R, material)
        CC4 = mandel_to_tensor4(CC)
        eps = 1e-7
        err = 0.0
        for i in range(3):
            for j in range(i, 3):
                dC = np.zeros((3, 3))
                dC[i, j] += 1.0
                dC[j, i] += 1.0
                sp, _ = passive_stress(C + eps * dC, R, material, with_tangent=False)
                sm, _ = passive_stress(C - eps * dC, R, material, with_tangent=False)
                fd = (sp - sm) / (2.0 * eps)
                an = 0.5 * np.einsum("nijkl,kl->nij", CC4, dC)
                err = max(err, np.max(np.abs(fd - an)) / np.max(np.abs(an)))
        assert err < 1e-6

    def test_pure_volumetric_state(self, rng, material):
        # C = lambda^2 I has zero isochoric strain: only the kappa term acts
        lam2 = 1.21
        R = random_frames(rng, 3)
        C = np.broadcast_to(lam2 * np.eye(3), (3, 3, 3)).copy()
        S, _ = passive_stress(C, R, material)
        logj = 0.5 * np.log(lam2**3)
        expected = material.kappa * logj / lam2
        assert np.max(np.abs(S[:, (0, 1, 2), (0, 1, 2)] - expected)) < 1e-8 * abs(
            expected
        )
        off = S.copy()
        off[:, (0, 1, 2), (0, 1, 2)] = 0.0
        assert np.max(np.abs(off)) < 1e-10 * abs(expected)

    def test_inverted_state_rejected(self, rng, material):
        R = random_frames(rng, 1)
        C = -np.eye(3)[None, :, :]
        with pytest.raises(InvertedElementError):
            passive_stress(C, R, material)


class TestActiveScalar:
    PARAMS = ActiveParams()

    def test_zero_outside_transient(self):
        for t_s in (-0.01, 0.0, 0.575, 0.6):
            sa, dsa = active_scalar(t_s, 1.0, self.PARAMS)
            assert sa == 0.0
            assert dsa == 0.0

    def test_zero_below_stretch_floor(self):
        sa, _ = active_scalar(0.2875, 0.7, self.PARAMS)
        assert sa == 0.0
        sa, _ = active_scalar(0.2875, 0.55, self.PARAMS)
        assert sa == 0.0

    def test_frozen_mid_transient_value(self):
        # 40-digit evaluation with the published transient constants at
        # t_s = t_dur / 2 and lambda = 1:
        expected = 58608.690992119456558
        sa, _ = active_scalar(0.2875, 1.0, self.PARAMS)
        assert abs(sa - expected) <= 1e-12 * expected

    def test_nonnegative_inside_transient(self, rng):
        ts = rng.uniform(0.0, self.PARAMS.t_dur, size=200)
        lam = rng.uniform(0.5, 1.4, size=200)
        sa, _ = active_scalar(ts, lam, self.PARAMS)
        assert np.all(sa >= 0.0)


class TestActiveStress:
    def test_tangent_matches_stress_differences(self, rng):
        p = ActiveParams(t_dur=0.375, tau_c0=0.07, tau_r=0.06, ld_up=0.065)
        R = random_frames(rng, 5)
        f0, s0 = R[:, :, 0], R[:, :, 1]
        C = random_C(rng, 5, scale=0.05)
        t_s = np.full(5, 0.2)
        S, CC = active_stress(t_s, C, f0, s0, p)
        CC4 = mandel_to_tensor4(CC)
        eps = 1e-7
        err = 0.0
        for i in range(3):
            for j in range(i, 3):
                dC = np.zeros((3, 3))
                dC[i, j] += 1.0
                dC[j, i] += 1.0
                sp, _ = active_stress(t_s, C + eps * dC, f0, s0, p, with_tangent=False)
                sm, _ = active_stress(t_s, C - eps * dC, f0, s0, p, with_tangent=False)
                fd = (sp - sm) / (2.0 * eps)
                an = 0.5 * np.einsum("nijkl,kl->nij", CC4, dC)
                err = max(err, np.max(np.abs(fd - an)) / np.max(np.abs(an)))
        assert err < 1e-6

    def test_sheet_component_is_40_percent(self, rng):
        p = ActiveParams()
        R = random_frames(rng, 1)
        f0, s0 = R[:, :, 0], R[:, :, 1]
        C = np.broadcast_to(np.eye(3), (1, 3, 3)).copy()
        S, _ = active_stress(np.array([0.2875]), C, f0, s0, p)
        sa_f = float(f0[0] @ S[0] @ f0[0])
        sa_s = float(s0[0] @ S[0] @ s0[0])
        assert sa_s == pytest.approx(0.4 * sa_f, rel=1e-12)


def test_mandel_roundtrip(rng):
    x = rng.normal(size=(4, 3, 3))
    sym = 0.5 * (x + np.transpose(x, (0, 2, 1)))
    m = sym_to_mandel(sym)
    from cardiowave.fem.material import mandel_to_sym

    assert np.allclose(mandel_to_sym(m), sym, atol=1e-15)
