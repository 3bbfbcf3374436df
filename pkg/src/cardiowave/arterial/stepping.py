"""Explicit time stepping of the 1D network.

Space: nodal DG with upwind interface fluxes computed from the Riemann
invariants W = u +- 4c.  Time: two-step Adams-Bashforth, bootstrapped by
one forward-Euler step.  The Voigt wall-viscosity pressure is evaluated
with the previous step's area rate so the update stays fully explicit;
friction follows the flat-profile convention f = -2(zeta+2) pi mu u with
zeta = 9.
"""

import math

import numpy as np

from ..errors import SolverBlowup, StabilityError
from .boundaries import inlet_state, junction_states, terminal_state
from .dg import ReferenceElement
from .network import DISTAL, PROXIMAL

_FRICTION_ZETA = 9.0

# Largest stable Courant number c dt / h of the two-step Adams-Bashforth
# integrator against the consistent-mass upwind DG operator, measured from
# the linear spectrum per polynomial order.  The runtime guard scales the
# user CFL (a fraction of the order-1 budget) by these ratios.
_AB2_DG_COURANT = {1: 0.1667, 2: 0.0241, 3: 0.0048}


def _segment_ops(seg):
    """Cache the per-segment DG operators on first use."""
    ops = getattr(seg, "_dg_ops", None)
    if ops is None:
        ref = ReferenceElement(seg.order)
        # weak-form operators with the exact mass inverse:
        #   du/dt = (2/h) Minv (D^T diag(w) f - e_N f*_R + e_0 f*_L) + s
        stiff = ref.diff.T * ref.weights[None, :]
        vol = (2.0 / seg.h_elem) * ref.mass_inv @ stiff
        ops = {
            "vol": vol,
            "lift0": (2.0 / seg.h_elem) * ref.mass_inv[:, 0],
            "liftN": (2.0 / seg.h_elem) * ref.mass_inv[:, -1],
            "kc": np.sqrt(seg.K / (2.0 * seg.rho * seg.A0)),
            "min_dx": seg.h_elem
            * _AB2_DG_COURANT.get(seg.order, _AB2_DG_COURANT[3])
            / _AB2_DG_COURANT[1],
            "fric": 2.0 * (_FRICTION_ZETA + 2.0) * math.pi * seg.mu / seg.rho,
        }
        seg._dg_ops = ops
    return ops


def invalidate_ops(network):
    """Drop cached operators (call after editing A0/E/h in place)."""
    for s in network.segments:
        if hasattr(s, "_dg_ops"):
            del s._dg_ops
        s.refresh_stiffness()


def cfl_limit(network):
    """Largest stable step: CFL * min(dx / (|u| + c)), capped by the
    parabolic limit of the explicitly-lagged wall-viscosity term."""
    dt = math.inf
    for i, seg in enumerate(network.segments):
        ops = _segment_ops(seg)
        c = ops["kc"] * network.A[i] ** 0.25
        speed = np.abs(network.u[i]) + c
        dt = min(dt, network.cfl * ops["min_dx"] / float(np.max(speed)))
        if np.any(seg.wall_visc > 0.0):
            # the lagged Voigt term behaves like a delayed diffusion source;
            # its measured stability boundary sits near dt nu / h^2 = 0.03
            nu = seg.wall_visc * np.sqrt(network.A[i]) / (seg.rho * seg.A0)
            h = seg.h_elem
            dt = min(dt, 0.015 * h * h / float(np.max(nu)))
    return dt


def _upwind_star(A_L, u_L, A_R, u_R, kc):
    w1 = u_L + 4.0 * kc * A_L**0.25
    w2 = u_R - 4.0 * kc * A_R**0.25
    u_s = 0.5 * (w1 + w2)
    c_s = 0.125 * (w1 - w2)
    if np.any(c_s <= 0.0):
        raise SolverBlowup("characteristics crossed at an element interface")
    A_s = (c_s / kc) ** 4
    # continuous traces stay bit-exact (keeps uniform states true fixed points)
    same = (A_L == A_R) & (u_L == u_R)
    if np.any(same):
        A_s = np.where(same, A_L, A_s)
        u_s = np.where(same, u_L, u_s)
    return A_s, u_s


def compute_rhs(network, dt, inlet_value=None):
    """Semi-discrete RHS d(A, u)/dt for every segment at the current state.

    Boundary closures are evaluated here as well; the updated terminal
    capacitor pressures are returned in `aux` and committed by `step`
    (the RHS evaluation itself does not mutate the network).
    """
    boundary_flux = {}   # (segment, end) -> (f_A, f_u, A*, u*)
    aux = {"p_c": {}, "junction_mass": 0.0}

    def end_trace(i, end):
        node = 0 if end == PROXIMAL else -1
        seg = network.segments[i]
        flat_A = network.A[i].reshape(-1)
        flat_u = network.u[i].reshape(-1)
        return (
            float(flat_A[node]),
            float(flat_u[node]),
            float(seg.K.reshape(-1)[node]),
            float(seg.A0.reshape(-1)[node]),
        )

    def visc_pressure_at(i, end):
        seg = network.segments[i]
        node = 0 if end == PROXIMAL else -1
        return float(
            seg.wall_visc.reshape(-1)[node]
            * network.dA_dt[i].reshape(-1)[node]
            / (seg.A0.reshape(-1)[node] * math.sqrt(network.A[i].reshape(-1)[node]))
        )

    def star_flux(i, end, A_s, u_s, K, A0):
        seg = network.segments[i]
        p = (
            K * (math.sqrt(A_s) - math.sqrt(A0)) / A0
            + seg.p_ext
            + visc_pressure_at(i, end)
        )
        return A_s * u_s, 0.5 * u_s * u_s + p / seg.rho

    # inlet
    if network.inlet is not None:
        bc = network.inlet
        if bc.mode == "coupled_valve":
            if inlet_value is None:
                raise SolverBlowup("coupled_valve inlet requires an explicit flow value")
            mode, value = "prescribed_flow", float(inlet_value)
        else:
            mode = bc.mode
            value = bc.value_at(network.time) if inlet_value is None else float(inlet_value)
        A_in, u_in, K, A0 = end_trace(bc.segment, bc.end)
        seg = network.segments[bc.segment]
        A_s, u_s = inlet_state(mode, value, A_in, u_in, K, A0, seg.rho, seg.p_ext, bc.end)
        boundary_flux[(bc.segment, bc.end)] = star_flux(bc.segment, bc.end, A_s, u_s, K, A0)

    # terminals
    for ti, term in enumerate(network.terminals):
        A_in, u_in, K, A0 = end_trace(term.segment, term.end)
        seg = network.segments[term.segment]
        A_s, u_s, p_c_new = terminal_state(term, A_in, u_in, K, A0, seg.rho, seg.p_ext, dt)
        aux["p_c"][ti] = p_c_new
        boundary_flux[(term.segment, term.end)] = star_flux(
            term.segment, term.end, A_s, u_s, K, A0
        )

    # junctions
    for jc in network.junctions:
        ends = []
        for (i, end) in [jc.parent_end] + list(jc.daughter_ends):
            A_in, u_in, K, A0 = end_trace(i, end)
            seg = network.segments[i]
            ends.append(
                {
                    "A": A_in,
                    "u": u_in,
                    "K": K,
                    "A0": A0,
                    "rho": seg.rho,
                    "p_ext": seg.p_ext,
                    "sigma": 1.0 if end == DISTAL else -1.0,
                }
            )
        states, mass = junction_states(ends)
        q_ref = max(abs(states[0][0] * states[0][1]), 1e-6)
        aux["junction_mass"] = max(aux["junction_mass"], abs(mass) / q_ref)
        for (i, end), (A_s, u_s), e in zip(
            [jc.parent_end] + list(jc.daughter_ends), states, ends
        ):
            boundary_flux[(i, end)] = star_flux(i, end, A_s, u_s, e["K"], e["A0"])

    rhs = []
    for i, seg in enumerate(network.segments):
        ops = _segment_ops(seg)
        A, u = network.A[i], network.u[i]
        p_tot = (
            seg.K * (np.sqrt(A) - np.sqrt(seg.A0)) / seg.A0
            + seg.p_ext
            + seg.wall_visc * network.dA_dt[i] / (seg.A0 * np.sqrt(A))
        )
        f_A = A * u
        f_u = 0.5 * u * u + p_tot / seg.rho

        rhs_A = f_A @ ops["vol"].T
        rhs_u = f_u @ ops["vol"].T

        # interior faces (right end of element e against left end of e + 1)
        if seg.n_elems > 1:
            kc_face = 0.5 * (ops["kc"][:-1, -1] + ops["kc"][1:, 0])
            A0_face = 0.5 * (seg.A0[:-1, -1] + seg.A0[1:, 0])
            K_face = 0.5 * (seg.K[:-1, -1] + seg.K[1:, 0])
            A_s, u_s = _upwind_star(A[:-1, -1], u[:-1, -1], A[1:, 0], u[1:, 0], kc_face)
            pv = 0.5 * (
                seg.wall_visc[:-1, -1] * network.dA_dt[i][:-1, -1]
                / (seg.A0[:-1, -1] * np.sqrt(A[:-1, -1]))
                + seg.wall_visc[1:, 0] * network.dA_dt[i][1:, 0]
                / (seg.A0[1:, 0] * np.sqrt(A[1:, 0]))
            )
            p_s = K_face * (np.sqrt(A_s) - np.sqrt(A0_face)) / A0_face + seg.p_ext + pv
            fs_A = A_s * u_s
            fs_u = 0.5 * u_s * u_s + p_s / seg.rho
            rhs_A[:-1] -= fs_A[:, None] * ops["liftN"][None, :]
            rhs_u[:-1] -= fs_u[:, None] * ops["liftN"][None, :]
            rhs_A[1:] += fs_A[:, None] * ops["lift0"][None, :]
            rhs_u[1:] += fs_u[:, None] * ops["lift0"][None, :]

        # segment end faces
        fpx = boundary_flux[(i, PROXIMAL)]
        rhs_A[0] += ops["lift0"] * fpx[0]
        rhs_u[0] += ops["lift0"] * fpx[1]
        fdx = boundary_flux[(i, DISTAL)]
        rhs_A[-1] -= ops["liftN"] * fdx[0]
        rhs_u[-1] -= ops["liftN"] * fdx[1]

        # friction source on the velocity equation
        rhs_u -= ops["fric"] * u / A

        rhs.append((rhs_A, rhs_u))
    return rhs, aux


def step(network, dt, inlet_value=None, check_cfl=True):
    """Advance the whole network by one Adams-Bashforth step of size dt."""
    if check_cfl:
        limit = cfl_limit(network)
        if dt > limit * (1.0 + 1e-9):
            raise StabilityError(
                f"dt = {dt:g} s exceeds the CFL bound {limit:g} s"
            )
    rhs, aux = compute_rhs(network, dt, inlet_value=inlet_value)

    new_A, new_u = [], []
    for i in range(len(network.segments)):
        rA, rU = rhs[i]
        if network.rhs_prev is None:
            A = network.A[i] + dt * rA
            u = network.u[i] + dt * rU
        else:
            pA, pU = network.rhs_prev[i]
            A = network.A[i] + dt * (1.5 * rA - 0.5 * pA)
            u = network.u[i] + dt * (1.5 * rU - 0.5 * pU)
        if not (np.all(np.isfinite(A)) and np.all(np.isfinite(u))):
            raise SolverBlowup(f"non-finite state in segment '{network.segments[i].id}'")
        if np.any(A <= 0.0):
            raise SolverBlowup(f"non-positive area in segment '{network.segments[i].id}'")
        new_A.append(A)
        new_u.append(u)

    for i in range(len(network.segments)):
        network.dA_dt[i] = (new_A[i] - network.A[i]) / dt
        network.A[i] = new_A[i]
        network.u[i] = new_u[i]
    network.rhs_prev = rhs
    for ti, p_c in aux["p_c"].items():
        network.terminals[ti].p_c = p_c
    network.junction_mass_residual_max = max(
        network.junction_mass_residual_max, aux["junction_mass"]
    )
    network.time += dt
    network.steps_taken += 1


def init_periodic(network, n_cycles=20, period=0.8, dt=1e-4, record_probe=None):
    """Cycle the standalone network to a periodic state.

    Runs n_cycles of length `period` with the configured inlet waveform and
    returns (final NetworkState, relative cycle-to-cycle Linf pressure
    drift of the last two cycles at the inlet).
    """
    if n_cycles < 1:
        raise ValueError("n_cycles must be >= 1")
    steps = int(round(period / dt))
    if abs(steps * dt - period) > 1e-9 * period:
        raise ValueError("period must be an integer multiple of dt")
    prev_trace = None
    drift = math.inf
    for _ in range(n_cycles):
        trace = np.empty(steps)
        for k in range(steps):
            step(network, dt)
            if record_probe is not None:
                trace[k] = network.probe(*record_probe)[0]
            else:
                trace[k] = network.inlet_pressure()
        if prev_trace is not None:
            pulse = float(np.max(trace) - np.min(trace))
            diff = float(np.max(np.abs(trace - prev_trace)))
            drift = diff / pulse if pulse > 0.0 else diff
        prev_trace = trace
    return network.snapshot(), drift
