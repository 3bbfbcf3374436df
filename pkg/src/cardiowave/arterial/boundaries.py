"""Boundary operators of the 1D scheme: inlet, RCR terminal, junctions.

Every operator turns the outgoing characteristic of the adjacent segment
plus its own closure relation into a boundary state (A, u) whose flux is
imposed on the element face.  With c = kc A^(1/4) the Riemann invariants
of the elastic system are W1 = u + 4c (running towards +x) and
W2 = u - 4c (running towards -x).
"""

import math

import numpy as np

from ..errors import JunctionError, SolverBlowup
from .network import DISTAL, PROXIMAL

_MAX_SCALAR_ITER = 60


def _kc(K, A0, rho):
    return math.sqrt(K / (2.0 * rho * A0))


def inlet_state(mode, value, A_in, u_in, K, A0, rho, p_ext, end):
    """Boundary (A, u) at an inlet from a prescribed flow or pressure.

    `value` is the prescribed flow (m^3/s, positive into the segment) or
    pressure (Pa).  `A_in`, `u_in` is the interior trace at the boundary
    node; `end` selects which characteristic leaves the domain.
    """
    kc = _kc(K, A0, rho)
    sgn = 1.0 if end == PROXIMAL else -1.0
    # outgoing invariant: W2 at a proximal end, W1 at a distal end
    w_out = u_in - sgn * 4.0 * kc * A_in**0.25

    if mode == "prescribed_pressure":
        sq = math.sqrt(A0) + A0 * (value - p_ext) / K
        if sq <= 0.0:
            raise SolverBlowup("prescribed inlet pressure collapses the vessel")
        A = sq * sq
        return A, w_out + sgn * 4.0 * kc * A**0.25

    # prescribed flow (coupled_valve feeds the instantaneous valve flow here)
    q = value * sgn
    A = A_in
    for _ in range(_MAX_SCALAR_ITER):
        c = kc * A**0.25
        g = A * (w_out + sgn * 4.0 * c) - q
        dg = w_out + sgn * 5.0 * c
        dA = -g / dg
        # keep the iterate physical
        A_new = A + dA
        if A_new <= 0.0:
            A_new = 0.5 * A
        if abs(A_new - A) <= 1e-14 * A0 + 1e-12 * A:
            A = A_new
            break
        A = A_new
    u = w_out + sgn * 4.0 * kc * A**0.25
    return A, u


def terminal_state(term, A_in, u_in, K, A0, rho, p_ext, dt):
    """Boundary (A, u) and updated capacitor pressure of an RCR terminal.

    The capacitor obeys C dp_c/dt = Q - (p_c - p_out)/R (implicit Euler);
    the boundary pressure is p_c + Z Q with Q = A u counted positive out
    of the segment.
    """
    sgn = 1.0 if term.end == DISTAL else -1.0
    kc = _kc(K, A0, rho)
    w_out = u_in + sgn * 4.0 * kc * A_in**0.25
    beta = 1.0 + dt / (term.R * term.C)
    alpha = (dt / term.C) / beta

    def p_cap(q):
        return (term.p_c + (dt / term.C) * (q + term.p_out / term.R)) / beta

    A = A_in
    for _ in range(_MAX_SCALAR_ITER):
        c = kc * A**0.25
        u = w_out - sgn * 4.0 * c
        q = sgn * A * u
        res = K * (math.sqrt(A) - math.sqrt(A0)) / A0 + p_ext - p_cap(q) - term.Z * q
        dq = sgn * (u - sgn * c)
        dres = K / (2.0 * A0 * math.sqrt(A)) - (alpha + term.Z) * dq
        dA = -res / dres
        A_new = A + dA
        if A_new <= 0.0:
            A_new = 0.5 * A
        if abs(A_new - A) <= 1e-14 * A0 + 1e-12 * A:
            A = A_new
            break
        A = A_new
    c = kc * A**0.25
    u = w_out - sgn * 4.0 * c
    q = sgn * A * u
    return A, u, p_cap(q)


def junction_states(ends, tol=1e-12, max_iter=50):
    """Boundary states for every end meeting at a junction.

    `ends` is a list of dictionaries with keys A, u (interior trace),
    K, A0, rho, p_ext and sigma (+1 when the segment's distal end feeds
    the junction, -1 for a daughter's proximal end).  Enforces mass
    conservation and total-pressure continuity; the outgoing
    characteristic of each segment is preserved.

    Returns (states, mass_residual) where states is a list of (A, u).
    """
    n = len(ends)
    rho = ends[0]["rho"]
    kcs = np.array([_kc(e["K"], e["A0"], e["rho"]) for e in ends])
    sig = np.array([e["sigma"] for e in ends], dtype=float)
    K = np.array([e["K"] for e in ends])
    A0 = np.array([e["A0"] for e in ends])
    p_ext = np.array([e["p_ext"] for e in ends])
    A_int = np.array([e["A"] for e in ends])
    u_int = np.array([e["u"] for e in ends])

    w_out = u_int + sig * 4.0 * kcs * A_int**0.25

    c_ref = float(np.max(kcs * A_int**0.25))
    # mass equation scaled against the parent flow so the converged residual
    # sits well inside the 1e-10 relative conservation budget
    q_scale = max(abs(A_int[0] * u_int[0]), 1e-6)
    p_scale = rho * max(c_ref, 1e-6) ** 2

    A = A_int.copy()
    u = u_int.copy()

    def residual(A, u):
        c = kcs * A**0.25
        r = np.empty(2 * n)
        r[:n] = (u + sig * 4.0 * c - w_out) / c_ref
        r[n] = np.dot(sig, A * u) / q_scale
        p_tot = K * (np.sqrt(A) - np.sqrt(A0)) / A0 + p_ext + 0.5 * rho * u * u
        r[n + 1:] = (p_tot[1:] - p_tot[0]) / p_scale
        return r

    for it in range(max_iter):
        r = residual(A, u)
        if np.max(np.abs(r)) < tol:
            break
        c = kcs * A**0.25
        J = np.zeros((2 * n, 2 * n))
        # characteristic rows: d/dA = sig * c / A, d/du = 1
        J[np.arange(n), np.arange(n)] = sig * c / A / c_ref
        J[np.arange(n), n + np.arange(n)] = 1.0 / c_ref
        # mass row
        J[n, :n] = sig * u / q_scale
        J[n, n:] = sig * A / q_scale
        # total-pressure rows
        dpdA = K / (2.0 * A0 * np.sqrt(A))
        for k in range(1, n):
            J[n + k, k] = dpdA[k] / p_scale
            J[n + k, 0] = -dpdA[0] / p_scale
            J[n + k, n + k] = rho * u[k] / p_scale
            J[n + k, n] = -rho * u[0] / p_scale
        try:
            dx = np.linalg.solve(J, -r)
        except np.linalg.LinAlgError as exc:
            raise JunctionError(f"singular junction Jacobian: {exc}") from None
        A_new = A + dx[:n]
        bad = A_new <= 0.0
        A_new[bad] = 0.5 * A[bad]
        A, u = A_new, u + dx[n:]
    else:
        raise JunctionError(
            f"junction Newton did not converge: residual {np.max(np.abs(r)):.3e}"
        )

    mass = float(np.dot(sig, A * u))
    return list(zip(A, u)), mass
