"""Lumped valve with smooth opening/closing dynamics.

The through-flow obeys a Bernoulli pressure-drop law

    dP = B Q |Q| + L dQ/dt,   B = rho / (2 A_eff^2),   L = rho l_eff / A_eff

with l_eff the diameter of A_eff.  The effective area follows a state
index xi in [xi_min, 1]:

    A_eff = (M_st - M_rg) A_ann xi + M_rg A_ann

driven by  dxi/dt = (1 - xi) K_vo (dP - dP_open)   while opening and
           dxi/dt = xi K_vc (dP - dP_close)        while closing.

Within one substep dP is held fixed, which makes the xi equation linear;
it is integrated exactly by its exponential solution.  The flow update
linearises the quadratic drag semi-implicitly: B |Q_n| Q_{n+1}.
"""

import math
from dataclasses import dataclass, replace

from .errors import AtreticValveError, DomainError, ValidationError


@dataclass(frozen=True)
class ValveParams:
    """Static parameters of one valve."""

    K_vo: float                # opening rate coefficient, 1/(Pa s)
    K_vc: float                # closing rate coefficient, 1/(Pa s)
    dP_open: float = 0.0       # Pa
    dP_close: float = 0.0      # Pa
    M_st: float = 1.0          # stenosis coefficient, 1 = healthy
    M_rg: float = 0.0          # regurgitation coefficient, 0 = healthy
    A_ann: float = 5.0e-4      # annulus area, m^2
    rho: float = 1060.0        # kg/m^3
    xi_min: float = 1.0e-6     # floor keeping A_eff strictly positive

    def __post_init__(self):
        if self.K_vo <= 0.0 or self.K_vc <= 0.0:
            raise ValidationError("valve rate coefficients must be positive")
        if not 0.0 <= self.M_st <= 1.0 or not 0.0 <= self.M_rg <= 1.0:
            raise ValidationError("M_st and M_rg must lie in [0, 1]")
        if self.M_st == 0.0 and self.M_rg == 0.0:
            raise ValidationError("atretic valve with no leak (M_st = M_rg = 0)")
        if self.A_ann <= 0.0:
            raise ValidationError("annulus area must be positive")
        if not 0.0 < self.xi_min < 1.0:
            raise ValidationError("xi_min must lie strictly between 0 and 1")


@dataclass(frozen=True)
class ValveState:
    """Dynamic state: opening index and through-flow."""

    xi: float
    Q: float = 0.0

    @classmethod
    def closed(cls, params):
        return cls(xi=params.xi_min, Q=0.0)


def effective_area(xi, params):
    """Instantaneous effective orifice area for opening index xi."""
    a_eff = (params.M_st - params.M_rg) * params.A_ann * xi + params.M_rg * params.A_ann
    if a_eff <= 0.0:
        raise AtreticValveError("non-positive effective valve area")
    return a_eff


def bernoulli_coeffs(a_eff, params):
    """Bernoulli drag B and blood inertance L for an effective area."""
    if a_eff <= 0.0:
        raise AtreticValveError("non-positive effective valve area")
    b = params.rho / (2.0 * a_eff * a_eff)
    l_eff = 2.0 * math.sqrt(a_eff / math.pi)
    return b, params.rho * l_eff / a_eff


def advance_valve(state, dP, dt, params):
    """Advance (xi, Q) over one substep of length dt at fixed dP."""
    if dt <= 0.0:
        raise DomainError("valve substep must have dt > 0")
    xi = state.xi
    if dP > params.dP_open:
        rate = params.K_vo * (dP - params.dP_open)
        xi = 1.0 - (1.0 - xi) * math.exp(-rate * dt)
    elif dP < params.dP_close:
        rate = params.K_vc * (params.dP_close - dP)
        xi = xi * math.exp(-rate * dt)
    xi = min(max(xi, params.xi_min), 1.0)

    b, l = bernoulli_coeffs(effective_area(xi, params), params)
    q = (state.Q + dt * dP / l) / (1.0 + dt * b * abs(state.Q) / l)
    return ValveState(xi=xi, Q=q)


def steady_flow(dP, xi, params):
    """Equilibrium flow B Q |Q| = dP at fixed opening index."""
    b, _ = bernoulli_coeffs(effective_area(xi, params), params)
    return math.copysign(math.sqrt(abs(dP) / b), dP)


def params_from_config(block, rho=1060.0):
    """Build ValveParams from a case-file dictionary."""
    known = {"K_vo", "K_vc", "dP_open", "dP_close", "M_st", "M_rg", "A_ann", "xi_min"}
    extra = set(block) - known
    if extra:
        raise ValidationError(f"unknown valve parameter(s): {sorted(extra)}")
    defaults = ValveParams(K_vo=1.0, K_vc=1.0, rho=rho)
    return replace(defaults, rho=rho, **{k: float(v) for k, v in block.items()})
