"""Per-step saddle-point coupling of a cavity model to the circulation.

Each 3D step enforces V_heart(u) = V_CS(p) by a Newton iteration on the
block system

    [ K   a ] [ du  ]   [ -R_u ]
    [ b   C'] [ dp~ ] = [ -R_p ],      u <- u + du,   p <- p - dp~,

where K is the (dynamic) tangent, b = dV_heart/du, a = b^T (closed-cavity
identity), C' = dV_CS/dp by finite differences, R_u the momentum residual
and R_p = V_heart - V_CS.  The sign flip on the pressure update makes the
literal block solve equivalent to the Newton step of (R_u, R_p).

V_CS(p) is evaluated by rolling the circulation and both valves back to
the step-start snapshot and re-advancing them over the window with the
trial cavity pressure, so repeated evaluations are bit-identical and the
finite-difference compliance is well defined.  If both valves stay at
their opening-index floor for the whole window the step is isovolumetric:
V_CS equals the start volume exactly and C' = 0.
"""

import json
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .arterial import stepping as artstep
from .errors import (
    ConfigError,
    LinearSolveError,
    NewtonDivergence,
    SingularCouplingError,
    ValidationError,
)
from .valves import ValveState, advance_valve


@dataclass
class SolverConfig:
    """Coupled-solver settings (tolerances per the solver contract)."""

    dt3d: float = 1.0e-3
    dt1d: float = 1.0e-4
    newton_abs_tol: float = 1.0e-6
    k_max: int = 10
    lin_rtol: float = 1.0e-8
    eps_floor: float = 1.0e-3          # Pa, compliance FD step floor at p ~ 0
    # nondimensionalization of the mixed residual norm: forces divided by
    # force_scale, the volume row by a reference compliance ref_volume/ref_pressure
    force_scale: float = 1.0
    ref_volume: float = 1.2e-4
    ref_pressure: float = 1.0e4
    linear_solver: str = "gmres"       # gmres | direct
    rho_inf: float = 0.0
    beta_mass: float = 0.1
    beta_stiff: float = 0.1
    quasi_static: bool = False

    def __post_init__(self):
        if self.newton_abs_tol <= 0 or self.lin_rtol <= 0:
            raise ValidationError("tolerances must be positive")
        if self.k_max < 1:
            raise ValidationError("k_max must be >= 1")
        n_sub = self.dt3d / self.dt1d
        if abs(n_sub - round(n_sub)) > 1e-9 * n_sub:
            raise ConfigError("dt3d must be an integer multiple of dt1d")

    @property
    def n_substeps(self):
        return int(round(self.dt3d / self.dt1d))

    @property
    def volume_scale(self):
        return self.ref_volume / self.ref_pressure


@dataclass
class BlockSystem:
    """One Newton iteration's assembled block system."""

    K: object                  # (n, n) sparse or dense tangent
    a: np.ndarray              # coupling column (= b for closed cavities)
    b: np.ndarray              # volume-gradient row
    c_prime: float             # dV_CS/dp (<= 0 expected during ejection)
    r_u: np.ndarray
    r_p: float


def _linear_solver(K, config):
    """Return a solve(rhs) callable honoring the configured inner method."""
    if isinstance(K, np.ndarray):
        if K.shape == (1, 1):
            k00 = K[0, 0]
            return lambda rhs: rhs / k00
        import scipy.linalg as sla

        lu, piv = sla.lu_factor(K)
        return lambda rhs: sla.lu_solve((lu, piv), rhs)
    Kc = K.tocsc()
    if config.linear_solver == "direct":
        lu = spla.splu(Kc)
        return lu.solve

    ilu = spla.spilu(Kc, drop_tol=1e-6, fill_factor=12)
    prec = spla.LinearOperator(K.shape, ilu.solve)

    def solve(rhs):
        x, info = spla.gmres(
            Kc, rhs, rtol=config.lin_rtol, atol=0.0, M=prec, maxiter=300,
            restart=60,
        )
        if info != 0:
            raise LinearSolveError(f"GMRES stalled (info={info})")
        return x

    return solve


def schur_solve(block, config=None):
    """Solve the block system by displacement-space elimination.

    Returns (du, dp) of [[K, a], [b, C']] (du, dp) = (-R_u, -R_p), using
    one solve for the residual and one per coupling column.
    """
    config = config or SolverConfig()
    solve = _linear_solver(block.K, config)
    f = -np.asarray(block.r_u, dtype=float)
    n = f.shape[0]
    a = np.asarray(block.a, dtype=float).reshape(n, -1)
    b = np.asarray(block.b, dtype=float).reshape(-1, n)
    m = a.shape[1]
    g = -np.atleast_1d(np.asarray(block.r_p, dtype=float))
    cp = np.atleast_1d(np.asarray(block.c_prime, dtype=float))

    r = solve(f)
    s = np.column_stack([solve(a[:, i]) for i in range(m)])
    red = np.diag(cp) - b @ s            # (m, m) reduced pressure system
    rhs = g - b @ r
    scale = max(np.max(np.abs(red)), np.max(np.abs(b @ s)), 1e-300)
    if m == 1 and abs(red[0, 0]) < 1e-14 * scale:
        raise SingularCouplingError("reduced coupling scalar is singular")
    try:
        dp = np.linalg.solve(red, rhs)
    except np.linalg.LinAlgError as exc:
        raise SingularCouplingError(str(exc)) from None
    du = r - s @ dp
    return du, (float(dp[0]) if m == 1 else dp)


class ElastanceCavity:
    """0D cavity with time-varying elastance, exposed as a 1-dof backend.

    V(p, t) = V0 + (p - p0)/E(t); the single displacement dof is the
    volume offset u = V - V0, so the momentum residual is
    E(t) u - (p - p0) and the tangent is E(t).
    """

    def __init__(self, V0, p0, elastance_table, period=None):
        self.V0 = float(V0)
        self.p0 = float(p0)
        tab = np.asarray(elastance_table, dtype=float)
        if tab.ndim != 2 or tab.shape[1] != 2 or len(tab) < 2:
            raise ValidationError("elastance table must be (n, 2) with n >= 2")
        if np.any(tab[:, 1] <= 0.0):
            raise ValidationError("elastance must be positive")
        self.table = tab
        self.period = float(period) if period else float(tab[-1, 0])
        self.u = np.zeros(1)
        self.t = 0.0
        self._t_new = 0.0
        self.residual_scale = 1.0

    def elastance(self, t):
        tt = math.fmod(t, self.period)
        if tt < 0:
            tt += self.period
        return float(np.interp(tt, self.table[:, 0], self.table[:, 1]))

    def volume(self, u):
        return self.V0 + float(u[0])

    def residual(self, u, p):
        return np.array([self.elastance(self._t_new) * u[0] - (p - self.p0)])

    def tangent(self, u, p):
        return np.array([[self.elastance(self._t_new)]])

    def coupling_row(self, u):
        return np.ones(1)

    def pressure_column(self, u):
        return np.ones(1)

    def begin_step(self, dt, t_new):
        self._t_new = t_new
        return self.u.copy()

    def finalize_step(self, u):
        self.u = u.copy()
        self.t = self._t_new

    def state_dict(self):
        return {"u": self.u.tolist(), "t": self.t}

    def load_state(self, state):
        self.u = np.asarray(state["u"], dtype=float)
        self.t = float(state["t"])


def elastance_volume(cavity, p, t):
    """Volume predicted by an elastance cavity at pressure p and time t."""
    return cavity.V0 + (p - cavity.p0) / cavity.elastance(t)


class FECavity:
    """Finite-element ventricle backend with generalised-alpha dynamics.

    The spectral radius rho_inf sets the acceleration weighting
    (alpha_f is kept at zero: static terms are evaluated at the end of
    the step, where the volume constraint is enforced).
    """

    def __init__(self, model, config, cycle_period=None):
        self.model = model
        self.cfg = config
        self.period = cycle_period
        rho = config.rho_inf
        self.alpha_m = (2.0 * rho - 1.0) / (rho + 1.0)
        self.beta = 0.25 * (1.0 - self.alpha_m) ** 2
        self.gamma = 0.5 - self.alpha_m
        self.u = np.zeros(model.n_dof)
        self.v = np.zeros(model.n_dof)
        self.acc = np.zeros(model.n_dof)
        self.t = 0.0
        self.residual_scale = config.force_scale
        if config.quasi_static:
            self.c_ray = None
        else:
            k0 = model.tangent(np.zeros(model.n_dof), 0.0, None)
            self.c_ray = config.beta_mass * model.mass + config.beta_stiff * k0
        self._step = None

    def _wrap(self, t):
        if self.period is None:
            return t
        return math.fmod(t, self.period)

    def begin_step(self, dt, t_new):
        self._step = {"dt": dt, "t_new": t_new, "u_n": self.u.copy(),
                      "v_n": self.v.copy(), "a_n": self.acc.copy()}
        return self.u.copy()

    def _newmark(self, u):
        s = self._step
        dt, beta, gamma = s["dt"], self.beta, self.gamma
        a_new = (u - s["u_n"] - dt * s["v_n"] - dt * dt * (0.5 - beta) * s["a_n"]) / (
            beta * dt * dt
        )
        v_new = s["v_n"] + dt * ((1.0 - gamma) * s["a_n"] + gamma * a_new)
        return v_new, a_new

    def residual(self, u, p):
        t = self._wrap(self._step["t_new"])
        r = self.model.residual(u, p, t)
        if not self.cfg.quasi_static:
            v_new, a_new = self._newmark(u)
            am = self.alpha_m
            acc_eff = (1.0 - am) * a_new + am * self._step["a_n"]
            r = r + self.model.mass @ acc_eff + self.c_ray @ v_new
            r[self.model.fixed_dofs] = 0.0
        return r

    def tangent(self, u, p):
        t = self._wrap(self._step["t_new"])
        k = self.model.tangent(u, p, t)
        if not self.cfg.quasi_static:
            dt = self._step["dt"]
            c_a = (1.0 - self.alpha_m) / (self.beta * dt * dt)
            c_v = self.gamma / (self.beta * dt)
            k = k + c_a * self.model.mass + c_v * self.c_ray
            k = self.model._apply_fixed(k)
        return k

    def volume(self, u):
        return self.model.cavity_volume(u)

    def coupling_row(self, u):
        return self.model.coupling_row(u)

    def pressure_column(self, u):
        a = self.model.pressure_column(u)
        b = self.model.coupling_row(u)
        nb = np.linalg.norm(b)
        if nb > 0 and np.linalg.norm(a - b) > 1e-10 * nb:
            raise ValidationError(
                "closed-cavity transpose identity violated; surface not closed?"
            )
        return b

    def finalize_step(self, u):
        if not self.cfg.quasi_static:
            self.v, self.acc = self._newmark(u)
        self.u = u
        self.t = self._step["t_new"]
        self._step = None

    def static_solve(self, p, t=None, tol=1e-8, max_iter=30, history=False):
        """Plain displacement Newton at fixed cavity pressure (no coupling)."""
        u = self.u.copy()
        hist = []
        for _ in range(max_iter):
            r = self.model.residual(u, p, t)
            hist.append(float(np.linalg.norm(r)))
            if hist[-1] < tol:
                break
            solve = _linear_solver(self.model.tangent(u, p, t), self.cfg)
            u = u + solve(-r)
        else:
            raise NewtonDivergence("static solve did not converge", hist)
        self.u = u
        return (u, hist) if history else u

    def inflate(self, p_target, n_ramp=5, t=None):
        """Quasi-static pressure ramp used to initialize the cavity state."""
        for p in np.linspace(p_target / n_ramp, p_target, n_ramp):
            self.static_solve(p, t=t)
        self.v[:] = 0.0
        self.acc[:] = 0.0
        return self.u

    def state_dict(self):
        return {
            "u": self.u.tolist(),
            "v": self.v.tolist(),
            "a": self.acc.tolist(),
            "t": self.t,
        }

    def load_state(self, state):
        self.u = np.asarray(state["u"], dtype=float)
        self.v = np.asarray(state["v"], dtype=float)
        self.acc = np.asarray(state["a"], dtype=float)
        self.t = float(state["t"])


class CirculationAdapter:
    """Valves plus 1D network advanced in dt1d substeps per coupled window."""

    def __init__(self, network, aortic_params, mitral_params, p_atrial, config):
        self.network = network
        self.ao_params = aortic_params
        self.mit_params = mitral_params
        self.p_atrial = float(p_atrial)
        self.cfg = config
        self.aortic = ValveState.closed(aortic_params)
        self.mitral = ValveState.closed(mitral_params)
        self._snap = None
        self._v_start = None
        self.last_window = {}
        if network.inlet is None or network.inlet.mode != "coupled_valve":
            raise ConfigError("coupled runs need an inlet in coupled_valve mode")

    def take_snapshot(self, v_start):
        self._snap = (self.network.snapshot(), self.aortic, self.mitral)
        self._v_start = float(v_start)

    def restore_snapshot(self):
        net_state, ao, mit = self._snap
        self.network.restore(net_state)
        self.aortic = ao
        self.mitral = mit

    def evaluate_vcs(self, p_trial):
        """Predicted cavity volume after one coupled window at pressure p_trial.

        Restores the step-start snapshot first, so consecutive calls with
        the same argument are bit-identical.
        """
        if self._snap is None:
            raise ConfigError("evaluate_vcs called before take_snapshot")
        self.restore_snapshot()
        dt = self.cfg.dt1d
        floor_ao = self.ao_params.xi_min * (1.0 + 1e-9)
        floor_mit = self.mit_params.xi_min * (1.0 + 1e-9)
        q_ao = 0.0
        q_mit = 0.0
        iso = True
        for _ in range(self.cfg.n_substeps):
            p_inlet = self.network.inlet_pressure()
            self.aortic = advance_valve(
                self.aortic, p_trial - p_inlet, dt, self.ao_params
            )
            self.mitral = advance_valve(
                self.mitral, self.p_atrial - p_trial, dt, self.mit_params
            )
            iso = iso and self.aortic.xi <= floor_ao and self.mitral.xi <= floor_mit
            artstep.step(self.network, dt, inlet_value=self.aortic.Q)
            q_ao += self.aortic.Q * dt
            q_mit += self.mitral.Q * dt
        self.last_window = {
            "q_ao_int": q_ao,
            "q_mit_int": q_mit,
            "iso": iso,
            "p_inlet": self.network.inlet_pressure(),
        }
        if iso:
            return self._v_start, True
        return self._v_start + q_mit - q_ao, False


def fd_pressure_step(p_k, eps_floor=1.0e-3):
    """Finite-difference step eps = |p| sqrt(eps_machine) = |p| 2^-26.

    The formula degenerates as p approaches zero; below 100 Pa (where no
    cardiovascular pressure scale survives) the floor takes over.
    """
    if abs(p_k) > 100.0:
        return abs(p_k) * 2.0**-26
    return eps_floor


def compliance_derivative(adapter, p_k, v_at_pk=None, config=None):
    """dV_CS/dp by one-sided finite differences of the rollback evaluation."""
    config = config or adapter.cfg
    if v_at_pk is None:
        v_at_pk, iso = adapter.evaluate_vcs(p_k)
        if iso:
            return 0.0
    eps = fd_pressure_step(p_k, config.eps_floor)
    v_eps, _ = adapter.evaluate_vcs(p_k + eps)
    return (v_eps - v_at_pk) / eps


@dataclass
class StepReport:
    iterations: int
    residuals: list
    converged: bool
    isovolumetric: bool
    v_heart: float
    v_cs: float
    p: float
    window: dict = field(default_factory=dict)


def newton_timestep(backend, adapter, config, t, p_prev):
    """Advance the coupled system from t to t + dt3d.

    Returns (u, p, StepReport); the circulation inside `adapter` is left
    committed at the converged pressure.
    """
    t_new = t + config.dt3d
    adapter.take_snapshot(backend.volume(backend.u))
    u = backend.begin_step(config.dt3d, t_new)
    p = float(p_prev)
    history = []
    converged = False
    v_cs = iso = None
    for k in range(config.k_max + 1):
        v_cs, iso = adapter.evaluate_vcs(p)
        r_u = backend.residual(u, p)
        v_heart = backend.volume(u)
        r_p = v_heart - v_cs
        norm = math.sqrt(
            float(np.dot(r_u, r_u)) / backend.residual_scale**2
            + (r_p / config.volume_scale) ** 2
        )
        history.append(norm)
        if norm < config.newton_abs_tol:
            converged = True
            break
        if k == config.k_max:
            raise NewtonDivergence(
                f"coupled Newton exceeded k_max = {config.k_max}"
                f" (residual {norm:.3e} at t = {t_new:.6f})",
                history,
            )
        c_prime = 0.0 if iso else compliance_derivative(adapter, p, v_cs, config)
        if c_prime > 1e-3 * config.volume_scale:
            # physical circulation volume falls with cavity pressure; a
            # genuinely positive slope flags a broken closure
            import warnings

            warnings.warn(
                f"circulation volume increases with cavity pressure "
                f"(C' = {c_prime:.3e} at t = {t_new:.4f})",
                stacklevel=2,
            )
        block = BlockSystem(
            K=backend.tangent(u, p),
            a=backend.pressure_column(u),
            b=backend.coupling_row(u),
            c_prime=c_prime,
            r_u=r_u,
            r_p=r_p,
        )
        du, dp = schur_solve(block, config)
        u = u + du
        p = p - dp
    backend.finalize_step(u)
    report = StepReport(
        iterations=len(history),
        residuals=history,
        converged=converged,
        isovolumetric=bool(iso),
        v_heart=backend.volume(u),
        v_cs=v_cs,
        p=p,
        window=dict(adapter.last_window),
    )
    return u, p, report


def run_simulation(
    backend, adapter, config, n_cycles, period, p_init, probes=(), on_step=None
):
    """March the coupled system and record one row per 3D step.

    `probes` is a sequence of (name, segment_id, x) triples resolved on the
    adapter's network.  Returns a dict of columns plus run statistics.
    """
    steps_per_cycle = int(round(period / config.dt3d))
    if abs(steps_per_cycle * config.dt3d - period) > 1e-9 * period:
        raise ConfigError("period must be an integer multiple of dt3d")
    n_steps = n_cycles * steps_per_cycle
    cols = {
        "t": np.empty(n_steps),
        "p_lv": np.empty(n_steps),
        "v_lv": np.empty(n_steps),
        "xi_aortic": np.empty(n_steps),
        "q_aortic": np.empty(n_steps),
        "xi_mitral": np.empty(n_steps),
        "q_mitral": np.empty(n_steps),
        "p_inlet": np.empty(n_steps),
        "newton_iters": np.empty(n_steps),
        "isovolumetric": np.empty(n_steps),
    }
    for name, _, _ in probes:
        for q in ("p", "q", "a"):
            cols[f"{q}_{name}"] = np.empty(n_steps)

    p = float(p_init)
    t = backend.t
    max_iters = 0
    for k in range(n_steps):
        u, p, rep = newton_timestep(backend, adapter, config, t, p)
        t = t + config.dt3d
        max_iters = max(max_iters, rep.iterations)
        cols["t"][k] = t
        cols["p_lv"][k] = p
        cols["v_lv"][k] = rep.v_heart
        cols["xi_aortic"][k] = adapter.aortic.xi
        cols["q_aortic"][k] = rep.window["q_ao_int"] / config.dt3d
        cols["xi_mitral"][k] = adapter.mitral.xi
        cols["q_mitral"][k] = rep.window["q_mit_int"] / config.dt3d
        cols["p_inlet"][k] = rep.window["p_inlet"]
        cols["newton_iters"][k] = rep.iterations
        cols["isovolumetric"][k] = 1.0 if rep.isovolumetric else 0.0
        for name, seg, x in probes:
            pp, qq, aa = adapter.network.probe(seg, x)
            cols[f"p_{name}"][k] = pp
            cols[f"q_{name}"][k] = qq
            cols[f"a_{name}"][k] = aa
        if on_step is not None:
            on_step(k, rep)
    stats = {
        "max_newton_iters": int(max_iters),
        "steps": n_steps,
        "steps_per_cycle": steps_per_cycle,
        "junction_mass_residual_max": adapter.network.junction_mass_residual_max,
    }
    return cols, stats


# -- checkpointing -------------------------------------------------------------


def _fmt(x):
    return format(float(x), ".17g")


def _fmt_array(a):
    return [_fmt(v) for v in np.asarray(a, dtype=float).ravel()]


def save_checkpoint(path, backend, adapter, p, t):
    """Serialize all solver state with 17-significant-digit decimals."""
    net = adapter.network
    state = {
        "format": "cardiowave-checkpoint 1",
        "t": _fmt(t),
        "p": _fmt(p),
        "backend": {
            k: (_fmt_array(v) if isinstance(v, list) else _fmt(v))
            for k, v in backend.state_dict().items()
        },
        "network": {
            "time": _fmt(net.time),
            "steps_taken": net.steps_taken,
            "A": [_fmt_array(a) for a in net.A],
            "u": [_fmt_array(u) for u in net.u],
            "dA_dt": [_fmt_array(d) for d in net.dA_dt],
            "rhs_prev": None
            if net.rhs_prev is None
            else [[_fmt_array(ra), _fmt_array(ru)] for ra, ru in net.rhs_prev],
            "p_c": _fmt_array([term.p_c for term in net.terminals]),
        },
        "valves": {
            "aortic": {"xi": _fmt(adapter.aortic.xi), "Q": _fmt(adapter.aortic.Q)},
            "mitral": {"xi": _fmt(adapter.mitral.xi), "Q": _fmt(adapter.mitral.Q)},
        },
    }
    with open(path, "w") as f:
        json.dump(state, f, indent=1)


def load_checkpoint(path, backend, adapter):
    """Restore solver state saved by save_checkpoint; returns (p, t)."""
    with open(path) as f:
        state = json.load(f)
    if state.get("format") != "cardiowave-checkpoint 1":
        raise ConfigError(f"unrecognized checkpoint file {path}")
    backend.load_state(
        {
            k: ([float(x) for x in v] if isinstance(v, list) else float(v))
            for k, v in state["backend"].items()
        }
    )
    net = adapter.network
    ns = state["network"]
    net.time = float(ns["time"])
    net.steps_taken = int(ns["steps_taken"])
    for i in range(len(net.segments)):
        shape = net.A[i].shape
        net.A[i] = np.array([float(x) for x in ns["A"][i]]).reshape(shape)
        net.u[i] = np.array([float(x) for x in ns["u"][i]]).reshape(shape)
        net.dA_dt[i] = np.array([float(x) for x in ns["dA_dt"][i]]).reshape(shape)
    if ns["rhs_prev"] is None:
        net.rhs_prev = None
    else:
        net.rhs_prev = [
            (
                np.array([float(x) for x in ra]).reshape(net.A[i].shape),
                np.array([float(x) for x in ru]).reshape(net.A[i].shape),
            )
            for i, (ra, ru) in enumerate(ns["rhs_prev"])
        ]
    for term, pc in zip(net.terminals, ns["p_c"]):
        term.p_c = float(pc)
    adapter.aortic = ValveState(
        xi=float(state["valves"]["aortic"]["xi"]), Q=float(state["valves"]["aortic"]["Q"])
    )
    adapter.mitral = ValveState(
        xi=float(state["valves"]["mitral"]["xi"]), Q=float(state["valves"]["mitral"]["Q"])
    )
    return float(state["p"]), float(state["t"])
