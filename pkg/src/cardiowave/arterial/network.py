"""Compliant-vessel network: geometry, tube law, state and snapshots.

Each segment carries per-node reference area A0(x), wall stiffness
K(x) = (4/3) sqrt(pi) E h and wall viscosity coefficient gamma(x).  The
pressure closure is

    P = p_ext + K (sqrt(A) - sqrt(A0)) / A0 + gamma * dA/dt / (A0 sqrt(A))

with the viscous part evaluated from the lagged area rate.  The elastic
part alone defines the wave speed c = sqrt(K sqrt(A) / (2 rho A0)).
"""

import math
from dataclasses import dataclass, field

import numpy as np

from ..errors import DomainError, StateError, TopologyError, ValidationError
from .dg import ReferenceElement

PROXIMAL = 0
DISTAL = 1

_END_NAMES = {"proximal": PROXIMAL, "distal": DISTAL, 0: PROXIMAL, 1: DISTAL}


def stiffness_coefficient(E, h):
    """Elastic tube-law coefficient K = (4/3) sqrt(pi) E h."""
    return (4.0 / 3.0) * math.sqrt(math.pi) * np.asarray(E) * np.asarray(h)


def tube_pressure(A, dA_dt, K, A0, gamma=0.0, p_ext=0.0):
    """Wall pressure from the tube law (elastic plus Voigt viscous term)."""
    A = np.asarray(A, dtype=float)
    if np.any(A <= 0.0):
        raise DomainError("tube law evaluated at non-positive area")
    sqA = np.sqrt(A)
    p = p_ext + K * (sqA - np.sqrt(A0)) / A0 + gamma * dA_dt / (A0 * sqA)
    return p if p.ndim else float(p)

def wave_speed(A, K, A0, rho):
    """Elastic pulse-wave speed c = sqrt(K sqrt(A) / (2 rho A0))."""
    A = np.asarray(A, dtype=float)
    if np.any(A <= 0.0):
        raise DomainError("wave speed evaluated at non-positive area")
    c = np.sqrt(K * np.sqrt(A) / (2.0 * rho * A0))
    return c if c.ndim else float(c)


@dataclass
class VesselSegment:
    """Geometry and wall-law data of one 1D segment (per-node arrays)."""

    id: str
    length: float
    n_elems: int
    A0: np.ndarray           # (n_elems, order+1)
    E: np.ndarray
    h: np.ndarray
    wall_visc: np.ndarray    # gamma(x), coefficient of the Voigt term
    p_ext: float
    rho: float
    mu: float
    order: int = 1
    K: np.ndarray = field(init=False)
    x: np.ndarray = field(init=False)      # physical node coordinates
    h_elem: float = field(init=False)

    def __post_init__(self):
        if self.length <= 0.0:
            raise ValidationError(f"segment {self.id}: length must be positive")
        if self.n_elems < 1:
            raise ValidationError(f"segment {self.id}: n_elems must be >= 1")
        if self.rho <= 0.0:
            raise ValidationError(f"segment {self.id}: rho must be positive")
        ref = ReferenceElement(self.order)
        shape = (self.n_elems, self.order + 1)
        self.A0 = _per_node(self.A0, shape, self.id, "A0")
        self.E = _per_node(self.E, shape, self.id, "E")
        self.h = _per_node(self.h, shape, self.id, "h")
        self.wall_visc = _per_node(self.wall_visc, shape, self.id, "wall_visc")
        for name, arr in (("A0", self.A0), ("E", self.E), ("h", self.h)):
            if np.any(arr <= 0.0):
                raise ValidationError(f"segment {self.id}: {name} must be positive")
        self.h_elem = self.length / self.n_elems
        left = np.arange(self.n_elems)[:, None] * self.h_elem
        self.x = left + (ref.nodes[None, :] + 1.0) * (self.h_elem / 2.0)
        self.refresh_stiffness()

    def refresh_stiffness(self):
        self.K = stiffness_coefficient(self.E, self.h)

    def rest_wave_speed(self):
        return wave_speed(self.A0, self.K, self.A0, self.rho)


def _per_node(value, shape, seg_id, name):
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        return np.full(shape, float(arr))
    flat = arr.reshape(-1)
    n_nodes = shape[0] * shape[1]
    if flat.size == n_nodes:
        return flat.reshape(shape).copy()
    # per-element-boundary table: interpolate linearly onto the DG nodes
    if flat.size == shape[0] + 1:
        xs = np.linspace(0.0, 1.0, flat.size)
        ref = ReferenceElement(shape[1] - 1)
        pts = (np.arange(shape[0])[:, None] + (ref.nodes[None, :] + 1.0) / 2.0) / shape[0]
        return np.interp(pts.ravel(), xs, flat).reshape(shape)
    raise ValidationError(
        f"segment {seg_id}: {name} must be scalar, per-node ({n_nodes}) "
        f"or per-element-boundary ({shape[0] + 1}) valued"
    )


@dataclass
class Junction:
    """Branch point: one parent end feeding one or more daughter ends."""

    parent_end: tuple    # (segment index, PROXIMAL/DISTAL)
    daughter_ends: list  # [(segment index, end), ...]


@dataclass
class TerminalRCR:
    """Three-element Windkessel closure attached to one segment end."""

    segment: int
    end: int
    Z: float
    R: float
    C: float
    p_out: float
    p_c: float = 0.0

    def __post_init__(self):
        if self.Z < 0.0 or self.R <= 0.0 or self.C <= 0.0:
            raise ValidationError("terminal requires Z >= 0, R > 0, C > 0")


@dataclass
class InletBC:
    """Inlet closure: prescribed flow/pressure table or externally fed flow."""

    segment: int
    end: int
    mode: str                 # prescribed_flow | prescribed_pressure | coupled_valve
    waveform: np.ndarray | None = None   # (n, 2) table of (t, value)
    periodic: bool = False

    def value_at(self, t):
        from ..errors import ConfigError

        if self.waveform is None:
            raise ConfigError("inlet has no waveform table")
        tt = self.waveform[:, 0]
        if self.periodic:
            period = tt[-1] - tt[0]
            t = tt[0] + math.fmod(t - tt[0], period)
            if t < tt[0]:
                t += period
        elif t > tt[-1] + 1e-12 or t < tt[0] - 1e-12:
            raise ConfigError(
                f"inlet waveform does not cover t = {t:g} s (ends at {tt[-1]:g} s)"
            )
        return float(np.interp(t, tt, self.waveform[:, 1]))


@dataclass
class NetworkState:
    """Snapshot of every time-dependent field of a network."""

    fingerprint: tuple
    time: float
    A: list
    u: list
    dA_dt: list
    rhs_prev: list | None
    p_c: np.ndarray
    steps_taken: int


class Network:
    """A validated arterial network with its current (A, u) state.

    The default CFL number reflects the measured stability budget of the
    Adams-Bashforth/consistent-mass DG pairing (about 0.167 at order 1).
    """

    def __init__(self, segments, junctions, terminals, inlet, cfl=0.15, alpha=1.0):
        self.segments = list(segments)
        self.junctions = list(junctions)
        self.terminals = list(terminals)
        self.inlet = inlet
        self.cfl = cfl
        self.alpha = alpha
        if abs(alpha - 1.0) > 1e-12:
            import warnings

            warnings.warn(
                "only a flat velocity profile (alpha = 1) is implemented; "
                f"alpha = {alpha} is recorded but not used",
                stacklevel=2,
            )
        self._index = {s.id: i for i, s in enumerate(self.segments)}
        if len(self._index) != len(self.segments):
            raise TopologyError("duplicate segment ids")
        self._validate_topology()
        self._fingerprint = (
            tuple((s.id, s.n_elems, s.order) for s in self.segments),
            len(self.terminals),
        )
        self.junction_mass_residual_max = 0.0
        self.reset_state()

    # -- construction ------------------------------------------------------

    def _validate_topology(self):
        seen = {}
        for j, jc in enumerate(self.junctions):
            if len(jc.daughter_ends) < 1:
                raise TopologyError(f"junction {j} has no daughters")
            for end in [jc.parent_end] + list(jc.daughter_ends):
                if end in seen:
                    raise TopologyError(f"segment end {end} used more than once")
                seen[end] = f"junction {j}"
        for t in self.terminals:
            end = (t.segment, t.end)
            if end in seen:
                raise TopologyError(f"segment end {end} used more than once")
            seen[end] = "terminal"
        if self.inlet is not None:
            end = (self.inlet.segment, self.inlet.end)
            if end in seen:
                raise TopologyError(f"segment end {end} used more than once")
            seen[end] = "inlet"
        for i in range(len(self.segments)):
            for e in (PROXIMAL, DISTAL):
                if (i, e) not in seen:
                    raise TopologyError(
                        f"segment '{self.segments[i].id}' end {e} is not attached "
                        "to any junction, terminal or inlet"
                    )

    def segment_index(self, seg_id):
        try:
            return self._index[seg_id]
        except KeyError:
            raise TopologyError(f"unknown segment id '{seg_id}'") from None

    # -- state management ---------------------------------------------------

    def reset_state(self, time=0.0):
        """Return every field to the stress-free rest state A = A0, u = 0."""
        self.A = [s.A0.copy() for s in self.segments]
        self.u = [np.zeros_like(s.A0) for s in self.segments]
        self.dA_dt = [np.zeros_like(s.A0) for s in self.segments]
        self.rhs_prev = None
        self.time = time
        self.steps_taken = 0
        self.junction_mass_residual_max = 0.0

    def snapshot(self):
        return NetworkState(
            fingerprint=self._fingerprint,
            time=self.time,
            A=[a.copy() for a in self.A],
            u=[u.copy() for u in self.u],
            dA_dt=[d.copy() for d in self.dA_dt],
            rhs_prev=None
            if self.rhs_prev is None
            else [(ra.copy(), ru.copy()) for ra, ru in self.rhs_prev],
            p_c=np.array([t.p_c for t in self.terminals]),
            steps_taken=self.steps_taken,
        )

    def restore(self, state):
        if state.fingerprint != self._fingerprint:
            raise StateError("snapshot belongs to a different network topology")
        self.time = state.time
        self.A = [a.copy() for a in state.A]
        self.u = [u.copy() for u in state.u]
        self.dA_dt = [d.copy() for d in state.dA_dt]
        self.rhs_prev = (
            None
            if state.rhs_prev is None
            else [(ra.copy(), ru.copy()) for ra, ru in state.rhs_prev]
        )
        for t, pc in zip(self.terminals, state.p_c):
            t.p_c = float(pc)
        self.steps_taken = state.steps_taken

    # -- derived quantities --------------------------------------------------

    def pressure(self, i):
        """Full nodal pressure field of segment i (viscous term lagged)."""
        s = self.segments[i]
        return tube_pressure(self.A[i], self.dA_dt[i], s.K, s.A0, s.wall_visc, s.p_ext)

    def probe(self, seg_id, x):
        """Interpolated (P, Q, A) at position x of a segment."""
        i = self.segment_index(seg_id)
        s = self.segments[i]
        if x < -1e-12 or x > s.length + 1e-12:
            raise DomainError(f"probe position {x} outside segment '{seg_id}'")
        x = min(max(x, 0.0), s.length)
        e = min(int(x / s.h_elem), s.n_elems - 1)
        xi = 2.0 * (x - e * s.h_elem) / s.h_elem - 1.0
        from .dg import lagrange_eval

        ref = ReferenceElement(s.order)
        basis = lagrange_eval(ref.nodes, xi)
        A = float(basis @ self.A[i][e])
        u = float(basis @ self.u[i][e])
        dAdt = float(basis @ self.dA_dt[i][e])
        K = float(basis @ s.K[e])
        A0 = float(basis @ s.A0[e])
        g = float(basis @ s.wall_visc[e])
        P = tube_pressure(A, dAdt, K, A0, g, s.p_ext)
        return P, A * u, A

    def inlet_pressure(self):
        """Pressure at the inlet boundary node (used by the valve coupling)."""
        i = self.inlet.segment
        node = 0 if self.inlet.end == PROXIMAL else -1
        s = self.segments[i]
        A = self.A[i].reshape(-1)[node]
        dAdt = self.dA_dt[i].reshape(-1)[node]
        return float(
            tube_pressure(
                A,
                dAdt,
                s.K.reshape(-1)[node],
                s.A0.reshape(-1)[node],
                s.wall_visc.reshape(-1)[node],
                s.p_ext,
            )
        )

    def total_blood_volume(self):
        ref_w = {s.order: ReferenceElement(s.order).weights for s in self.segments}
        vol = 0.0
        for i, s in enumerate(self.segments):
            w = ref_w[s.order]
            vol += float(np.sum(self.A[i] * w[None, :]) * s.h_elem / 2.0)
        return vol


def apply_stenosis_profile(segment, severity, center=None, width=None):
    """Narrow A0(x) with a C1 cosine dip; severity is the radius reduction.

    The throat keeps (1 - severity)^2 of the local reference area.
    """
    if not 0.0 < severity < 1.0:
        raise ValidationError("stenosis severity must lie in (0, 1)")
    if center is None:
        center = 0.5 * segment.length
    if width is None:
        width = 0.2 * segment.length
    if center - width / 2.0 < -1e-12 or center + width / 2.0 > segment.length + 1e-12:
        raise ValidationError("stenotic region must lie inside the segment")
    dip = 1.0 - (1.0 - severity) ** 2
    arg = (segment.x - center) * (math.pi / width)
    factor = np.where(np.abs(segment.x - center) <= width / 2.0,
                      1.0 - dip * np.cos(arg) ** 2, 1.0)
    segment.A0 = segment.A0 * factor
    return segment.A0


def build_network(spec, cfl=0.15):
    """Build a validated Network from a description dictionary.

    The description mirrors the JSON network file: `segments`, `junctions`,
    `terminals`, `inlet` plus an optional `blood` block with shared fluid
    properties (rho, mu, alpha).
    """
    from ..errors import ConfigError

    blood = spec.get("blood", {})
    rho = float(blood.get("rho", 1060.0))
    mu = float(blood.get("mu", 4.0e-3))
    alpha = float(blood.get("alpha", 1.0))
    order = int(spec.get("order", 1))

    segments = []
    for row in spec.get("segments", []):
        try:
            segments.append(
                VesselSegment(
                    id=str(row["id"]),
                    length=float(row["length_m"]),
                    n_elems=int(row["n_elems"]),
                    A0=row["A0_m2"],
                    E=row["E_Pa"],
                    h=row["h_m"],
                    wall_visc=row.get("gamma_wall", 0.0),
                    p_ext=float(row.get("p_ext_Pa", 0.0)),
                    rho=float(row.get("rho", rho)),
                    mu=float(row.get("mu", mu)),
                    order=int(row.get("order", order)),
                )
            )
        except KeyError as exc:
            raise ConfigError(f"segment entry missing field {exc}") from None
    if not segments:
        raise ConfigError("network description contains no segments")
    index = {s.id: i for i, s in enumerate(segments)}

    def resolve_end(seg_id, end_name, default):
        if seg_id not in index:
            raise TopologyError(f"unknown segment id '{seg_id}'")
        end = _END_NAMES.get(end_name if end_name is not None else default)
        if end is None:
            raise ConfigError(f"invalid segment end '{end_name}'")
        return index[seg_id], end

    junctions = []
    for row in spec.get("junctions", []):
        parent = resolve_end(row["parent"], row.get("parent_end"), "distal")
        daughters = [
            resolve_end(d, None, "proximal") if isinstance(d, str)
            else resolve_end(d["segment"], d.get("end"), "proximal")
            for d in row["daughters"]
        ]
        junctions.append(Junction(parent_end=parent, daughter_ends=daughters))

    terminals = []
    for row in spec.get("terminals", []):
        seg, end = resolve_end(row["segment"], row.get("end"), "distal")
        terminals.append(
            TerminalRCR(
                segment=seg,
                end=end,
                Z=float(row["Z"]),
                R=float(row["R"]),
                C=float(row["C"]),
                p_out=float(row.get("p_out", 0.0)),
                p_c=float(row.get("p_c", row.get("p_out", 0.0))),
            )
        )

    inlet = None
    if "inlet" in spec and spec["inlet"] is not None:
        row = spec["inlet"]
        seg, end = resolve_end(row["segment"], row.get("end"), "proximal")
        waveform = row.get("waveform")
        if waveform is not None:
            waveform = np.asarray(waveform, dtype=float)
            if waveform.ndim != 2 or waveform.shape[1] != 2:
                raise ConfigError("inlet waveform must be an (n, 2) table")
        inlet = InletBC(
            segment=seg,
            end=end,
            mode=str(row.get("mode", "prescribed_flow")),
            waveform=waveform,
            periodic=bool(row.get("periodic", False)),
        )
        if inlet.mode not in ("prescribed_flow", "prescribed_pressure", "coupled_valve"):
            raise ConfigError(f"unknown inlet mode '{inlet.mode}'")

    return Network(segments, junctions, terminals, inlet,
                   cfl=float(spec.get("cfl", cfl)), alpha=alpha)
