"""Myocardial constitutive laws, vectorized over elements.

Passive: Fung-type exponential energy on the modified isochoric strain,

    Psi = kappa/2 (log J)^2 + c/2 (exp(Q) - 1),
    Q   = sum_ij W_ij (R^T Ebar R)_ij^2,

where R = [f0 | s0 | n0] rotates into the fiber frame and W is a 3x3
weight matrix.  The transversely isotropic three-parameter variant and
the orthotropic six-parameter variant only differ in W, so both share
the same stress/tangent path.

Active: length- and time-dependent scalar tension applied along the
fiber direction with a 40% component along the sheet direction, each
divided by its squared stretch so the Cauchy tension stays bounded.

Tangents are returned in orthonormal Mandel notation: a minor-symmetric
fourth-order tensor becomes a 6x6 matrix whose double contractions with
symmetrized strain variations are exact, which keeps element stiffness
assembly dense-BLAS shaped.
"""

import math
from dataclasses import dataclass

import numpy as np

from ..errors import InvertedElementError, ValidationError

_EYE = np.eye(3)
_SQ2 = math.sqrt(2.0)
# Mandel component ordering and weights
_MI = np.array([0, 1, 2, 1, 0, 0])
_MJ = np.array([0, 1, 2, 2, 2, 1])
_MW = np.array([1.0, 1.0, 1.0, _SQ2, _SQ2, _SQ2])


def sym_to_mandel(X):
    """(..., 3, 3) symmetric tensor -> (..., 6) Mandel vector."""
    return _MW * X[..., _MI, _MJ]


def mandel_to_sym(x):
    """Inverse of sym_to_mandel."""
    X = np.zeros(x.shape[:-1] + (3, 3))
    vals = x / _MW
    X[..., _MI, _MJ] = vals
    X[..., _MJ, _MI] = vals
    return X


def mandel_to_tensor4(M):
    """(..., 6, 6) Mandel matrix -> full (..., 3, 3, 3, 3) tensor (tests)."""
    T = np.zeros(M.shape[:-2] + (3, 3, 3, 3))
    for p in range(6):
        for q in range(6):
            v = M[..., p, q] / (_MW[p] * _MW[q])
            for (i, j) in {(_MI[p], _MJ[p]), (_MJ[p], _MI[p])}:
                for (k, l) in {(_MI[q], _MJ[q]), (_MJ[q], _MI[q])}:
                    T[..., i, j, k, l] = v
    return T


def sym_kron_mandel(A):
    """Mandel matrix of T_ijkl = (A_ik A_jl + A_il A_jk) / 2 for symmetric A."""
    Aik = A[..., _MI[:, None], _MI[None, :]]
    Ajl = A[..., _MJ[:, None], _MJ[None, :]]
    Ail = A[..., _MI[:, None], _MJ[None, :]]
    Ajk = A[..., _MJ[:, None], _MI[None, :]]
    w = _MW[:, None] * _MW[None, :]
    return 0.5 * w * (Aik * Ajl + Ail * Ajk)


def rotation_mandel(R):
    """Q such that sym_to_mandel(R^T X R) = Q @ sym_to_mandel(X)."""
    cols = []
    for q in range(6):
        B = np.zeros((3, 3))
        i, j = _MI[q], _MJ[q]
        if i == j:
            B[i, i] = 1.0
        else:
            B[i, j] = B[j, i] = 1.0 / _SQ2
        cols.append(sym_to_mandel(np.swapaxes(R, -1, -2) @ B @ R))
    return np.stack(cols, axis=-1)


def _outer6(x, y):
    return x[..., :, None] * y[..., None, :]


@dataclass(frozen=True)
class GuccioneParams:
    """Bulk modulus, stiffness scale and exponent weight matrix."""

    kappa: float
    c_scale: float
    weights: np.ndarray  # (3, 3) symmetric, fiber frame ordering (f, s, n)

    def __post_init__(self):
        if self.kappa <= 0.0 or self.c_scale <= 0.0:
            raise ValidationError("kappa and the stiffness scale must be positive")
        w = np.asarray(self.weights, dtype=float)
        if w.shape != (3, 3) or not np.allclose(w, w.T):
            raise ValidationError("weight matrix must be symmetric 3x3")
        if np.any(w < 0.0):
            raise ValidationError("weight coefficients must be non-negative")
        object.__setattr__(self, "weights", w)

    @classmethod
    def transverse(cls, kappa=650e3, c_scale=1.5e3, b_f=18.48, b_t=3.58, b_fs=1.627):
        w = np.array([[b_f, b_fs, b_fs], [b_fs, b_t, b_t], [b_fs, b_t, b_t]])
        return cls(kappa=kappa, c_scale=c_scale, weights=w)

    @classmethod
    def orthotropic(
        cls, kappa=650e3, a=0.8e3, b_ff=5.0, b_ss=6.0, b_nn=3.0,
        b_fs=10.0, b_fn=2.0, b_ns=2.0,
    ):
        w = np.array([[b_ff, b_fs, b_fn], [b_fs, b_ss, b_ns], [b_fn, b_ns, b_nn]])
        return cls(kappa=kappa, c_scale=a, weights=w)


def strain_energy(C, R, params):
    """Energy density per element; reference for derivative checks."""
    detC = np.linalg.det(C)
    if np.any(detC <= 0.0):
        raise InvertedElementError("det C <= 0")
    logJ = 0.5 * np.log(detC)
    Cbar = detC[..., None, None] ** (-1.0 / 3.0) * C
    Ebar = 0.5 * (Cbar - _EYE)
    Et = np.einsum("...ia,...ij,...jb->...ab", R, Ebar, R)
    Q = np.einsum("ab,...ab->...", params.weights, Et**2)
    return 0.5 * params.kappa * logJ**2 + 0.5 * params.c_scale * np.expm1(Q)


def passive_stress(C, R, params, with_tangent=True):
    """Second Piola-Kirchhoff stress S = 2 dPsi/dC and Mandel tangent 2 dS/dC."""
    C = np.asarray(C, dtype=float)
    detC = np.linalg.det(C)
    if np.any(detC <= 0.0):
        raise InvertedElementError("det C <= 0 in passive stress evaluation")
    invC = np.linalg.inv(C)
    logJ = 0.5 * np.log(detC)
    j23 = detC ** (-1.0 / 3.0)          # J^(-2/3)

    Cbar = j23[..., None, None] * C
    Ebar = 0.5 * (Cbar - _EYE)
    Rt = np.swapaxes(R, -1, -2)
    Et = Rt @ Ebar @ R
    Q = np.einsum("ab,...ab->...", params.weights, Et**2)
    # H = dQ/dEbar rotated back to the reference frame
    H = R @ (2.0 * params.weights * Et) @ Rt

    expQ = np.exp(Q)
    Sbar = 0.5 * params.c_scale * expQ[..., None, None] * H
    trSC = np.einsum("...ij,...ij->...", Sbar, C)
    S_iso = j23[..., None, None] * (Sbar - (trSC / 3.0)[..., None, None] * invC)
    S_vol = (params.kappa * logJ)[..., None, None] * invC
    S = S_vol + S_iso
    if not with_tangent:
        return S, None

    ic6 = sym_to_mandel(invC)
    kron_ic = sym_kron_mandel(invC)
    CC = params.kappa * _outer6(ic6, ic6)
    CC -= (2.0 * params.kappa * logJ)[..., None, None] * kron_ic

    # fictitious tangent 2 dSbar/dCbar = c/2 e^Q (H x H + L) with
    # L(X) = R (2 W o (R^T X R)) R^T, diagonal in the rotated Mandel frame
    Qr = rotation_mandel(R)
    dvals = 2.0 * params.weights[_MI, _MJ]
    L6 = np.swapaxes(Qr, -1, -2) @ (dvals[:, None] * Qr)
    h6 = sym_to_mandel(H)
    Ct6 = 0.5 * params.c_scale * expQ[..., None, None] * (_outer6(h6, h6) + L6)

    # projection P : Ct : P^T expanded algebraically
    c6 = sym_to_mandel(C)
    y6 = np.einsum("...pq,...q->...p", Ct6, c6)
    cYc = np.einsum("...p,...p->...", y6, c6)
    siso6 = sym_to_mandel(S_iso)
    j43 = j23 * j23
    CC += j43[..., None, None] * (
        Ct6
        - _outer6(ic6, y6) / 3.0
        - _outer6(y6, ic6) / 3.0
        + (cYc / 9.0)[..., None, None] * _outer6(ic6, ic6)
    )
    CC += (2.0 / 3.0) * (j23 * trSC)[..., None, None] * (
        kron_ic - _outer6(ic6, ic6) / 3.0
    )
    CC -= (2.0 / 3.0) * (_outer6(ic6, siso6) + _outer6(siso6, ic6))
    return S, CC


@dataclass(frozen=True)
class ActiveParams:
    """Length-dependent active tension transient."""

    S_peak: float = 60e3       # Pa
    t_dur: float = 0.575       # s
    tau_c0: float = 0.105      # s
    tau_r: float = 0.090       # s
    ld: float = 35.0           # length dependence degree
    ld_up: float = 0.100       # s
    lambda_0: float = 0.7      # stretch floor of tension generation
    t_emd: float = 0.015       # s, electromechanical delay

    def __post_init__(self):
        if self.S_peak < 0.0:
            raise ValidationError("S_peak must be >= 0")
        if self.t_dur <= 0.0 or self.tau_c0 <= 0.0 or self.tau_r <= 0.0:
            raise ValidationError("active time constants must be positive")


def active_scalar(t_s, lam, p):
    """Scalar active tension and its stretch derivative at onset time t_s."""
    t_s = np.asarray(t_s, dtype=float)
    lam = np.asarray(lam, dtype=float)
    inside = (t_s > 0.0) & (t_s < p.t_dur)
    phi_raw = np.tanh(p.ld * (lam - p.lambda_0))
    pos = phi_raw > 0.0
    phi = np.where(pos, phi_raw, 0.0)
    dphi = np.where(pos & inside, p.ld * (1.0 - phi_raw**2), 0.0)
    tau_c = p.tau_c0 + p.ld_up * (1.0 - phi)
    ts_safe = np.where(inside, t_s, 0.5 * p.t_dur)
    x = ts_safe / tau_c
    tx = np.tanh(x)
    g = tx**2
    r = np.tanh((p.t_dur - ts_safe) / p.tau_r) ** 2
    sa = np.where(inside, p.S_peak * phi * g * r, 0.0)
    # dS/dlam: phi enters directly and through tau_c
    dg_dtau = -2.0 * tx * (1.0 - tx**2) * ts_safe / tau_c**2
    dsa = np.where(
        inside,
        p.S_peak * r * dphi * (g - phi * dg_dtau * p.ld_up),
        0.0,
    )
    return sa, dsa


def active_stress(t_s, C, f0, s0, params, with_tangent=True):
    """Active second Piola-Kirchhoff stress and its Mandel tangent.

    Full tension acts along f0, 40% along s0.
    """
    c_ff = np.einsum("...i,...ij,...j->...", f0, C, f0)
    c_ss = np.einsum("...i,...ij,...j->...", s0, C, s0)
    lam = np.sqrt(c_ff)
    sa, dsa = active_scalar(t_s, lam, params)

    ff = f0[..., :, None] * f0[..., None, :]
    ss = s0[..., :, None] * s0[..., None, :]
    T = (1.0 / c_ff)[..., None, None] * ff + (0.4 / c_ss)[..., None, None] * ss
    S = sa[..., None, None] * T
    if not with_tangent:
        return S, None

    ff6 = sym_to_mandel(ff)
    ss6 = sym_to_mandel(ss)
    t6 = sym_to_mandel(T)
    CC = (dsa / lam)[..., None, None] * _outer6(t6, ff6)
    CC -= (2.0 * sa / c_ff**2)[..., None, None] * _outer6(ff6, ff6)
    CC -= (0.8 * sa / c_ss**2)[..., None, None] * _outer6(ss6, ss6)
    return S, CC
