"""Case configuration, network import, metric extraction and persistence.

A case file is a JSON document validated against a strict key schema
(unknown keys are rejected with their path).  Sweeps replace one dotted
path with each value from a list and run the points independently; a
failing point is reported in its manifest without aborting its siblings.

Units are SI throughout the solver; human-facing metric summaries add
ml and mmHg (1 mmHg = 133.322387415 Pa).
"""

import copy
import hashlib
import json
import math
import os
import time
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from .arterial import apply_stenosis_profile, build_network, init_periodic
from .coupling import (
    CirculationAdapter,
    ElastanceCavity,
    FECavity,
    SolverConfig,
    run_simulation,
)
from .errors import (
    CardiowaveError,
    ConfigError,
    FormatError,
    MetricsError,
    TopologyError,
)
from .fem import (
    ActiveParams,
    FEModel,
    GuccioneParams,
    generate_idealized_lv,
    load_mesh,
    prescribe_activation,
)
from .valves import params_from_config

MMHG = 133.322387415
ML = 1.0e-6

# -- configuration schema ------------------------------------------------------

_SCHEMA = {
    "case": str,
    "description": str,
    "backend": str,
    "cycle": {"period_s": float, "n_cycles": int, "pre_cycles": int},
    "mesh": {
        "file": str,
        "generator": {
            "r_endo_short_m": float,
            "r_endo_long_m": float,
            "wall_thickness_m": float,
            "base_height_frac": float,
            "n_lat": int,
            "n_azi": int,
            "n_trans": int,
            "fiber_angle_endo_deg": float,
            "fiber_angle_epi_deg": float,
            "target_elem_size_m": float,
        },
    },
    "material": {
        "model": str,
        "kappa_Pa": float,
        "C_guc_Pa": float,
        "b_f": float,
        "b_t": float,
        "b_fs": float,
        "a_Pa": float,
        "b_ff": float,
        "b_ss": float,
        "b_nn": float,
        "b_fn": float,
        "b_ns": float,
    },
    "active": {
        "S_peak_Pa": float,
        "t_dur_s": float,
        "tau_c0_s": float,
        "tau_r_s": float,
        "ld": float,
        "ld_up_s": float,
        "lambda_0": float,
        "t_emd_s": float,
        "activation": {"mode": str, "t0_s": float, "velocity_m_s": float},
    },
    "boundary": {"k_base_Pa_m": float, "k_epi_Pa_m": float},
    "valves": {"aortic": dict, "mitral": dict},
    "preload": {"p_atrial_Pa": float, "p_init_Pa": float},
    "circulation": {"network_file": str, "network": dict},
    "precycle_inlet": {
        "mode": str,
        "waveform_file": str,
        "waveform": list,
        "periodic": bool,
    },
    "stenosis": {
        "segment": str,
        "severity": float,
        "center_frac": float,
        "width_frac": float,
    },
    "elastance": {"V0_m3": float, "p0_Pa": float, "table": list},
    "solver": {
        "dt3d_s": float,
        "dt1d_s": float,
        "newton_abs_tol": float,
        "k_max": int,
        "lin_rtol": float,
        "linear_solver": str,
        "rho_inf": float,
        "beta_mass": float,
        "beta_stiff": float,
        "quasi_static": bool,
        "ref_volume_m3": float,
        "ref_pressure_Pa": float,
    },
    "probes": list,
    "pwv_probe_pair": list,
    "amplification_probe_pair": list,
    "sweep": {"path": str, "values": list, "labels": list},
    "output": {"dir": str},
}

_DEFAULTS = {
    "backend": "fe",
    "cycle": {"period_s": 0.8, "n_cycles": 3, "pre_cycles": 20},
    "material": {"model": "transverse"},
    "boundary": {"k_base_Pa_m": 5.0e6, "k_epi_Pa_m": 2.0e4},
    "preload": {"p_atrial_Pa": 1400.0, "p_init_Pa": 1400.0},
    "solver": {},
    "probes": [],
}


def _check_keys(block, schema, path):
    if not isinstance(block, dict):
        raise ConfigError(f"{path or 'config'}: expected an object")
    for key, val in block.items():
        if key not in schema:
            raise ConfigError(f"unknown config key '{path + key}'")
        sub = schema[key]
        if isinstance(sub, dict) and sub and not isinstance(
            next(iter(sub.values())), type
        ):
            _check_keys(val, sub, path + key + ".")
        elif isinstance(sub, dict) and isinstance(val, dict):
            _check_keys(val, sub, path + key + ".")


@dataclass
class CaseConfig:
    """Validated case description plus the directory it was loaded from."""

    raw: dict
    base_dir: str = "."

    def get(self, *path, default=None):
        node = self.raw
        for key in path:
            if not isinstance(node, dict) or key not in node:
                return default
            node = node[key]
        return node

    def resolve_path(self, rel):
        return rel if os.path.isabs(rel) else os.path.join(self.base_dir, rel)


def load_config(path):
    """Read, validate and default-fill a case file."""
    try:
        with open(path) as f:
            raw = json.load(f)
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"malformed JSON in {path}: {exc}") from None
    _check_keys(raw, _SCHEMA, "")
    merged = copy.deepcopy(_DEFAULTS)
    for key, val in raw.items():
        if isinstance(val, dict) and isinstance(merged.get(key), dict):
            merged[key].update(val)
        else:
            merged[key] = val
    cfg = CaseConfig(raw=merged, base_dir=os.path.dirname(os.path.abspath(path)))
    _validate_config(cfg)
    return cfg


def _validate_config(cfg):
    if "case" not in cfg.raw:
        raise ConfigError("config missing 'case' identifier")
    if cfg.get("backend") not in ("fe", "elastance"):
        raise ConfigError("backend must be 'fe' or 'elastance'")
    if "circulation" not in cfg.raw:
        raise ConfigError("config missing 'circulation' block")
    circ = cfg.raw["circulation"]
    if "network" in circ:
        net = circ["network"]
    elif "network_file" in circ:
        path = cfg.resolve_path(circ["network_file"])
        if not os.path.exists(path):
            raise ConfigError(f"circulation.network_file not found: {path}")
        with open(path) as f:
            net = json.load(f)
    else:
        raise ConfigError("circulation needs 'network' or 'network_file'")
    if not net.get("terminals"):
        raise ConfigError("network description missing 'terminals'")
    if "valves" not in cfg.raw and cfg.get("backend") == "fe":
        raise ConfigError("config missing 'valves' block")
    solver = cfg.get("solver", default={})
    for key in ("dt3d_s", "dt1d_s"):
        if key in solver and solver[key] <= 0.0:
            raise ConfigError(f"solver.{key} must be positive")
    if cfg.get("cycle", "period_s", default=0.8) <= 0.0:
        raise ConfigError("cycle.period_s must be positive")
    for probe in cfg.get("probes", default=[]):
        for key in ("name", "segment", "x_m"):
            if key not in probe:
                raise ConfigError(f"probe entry missing '{key}'")
    sweep = cfg.get("sweep")
    if sweep is not None:
        if not sweep.get("values"):
            raise ConfigError("sweep.values must be a non-empty list")
        if "path" not in sweep:
            raise ConfigError("sweep.path is required")


def sweep_points(cfg):
    """Expand the sweep block into (label, CaseConfig) points."""
    sweep = cfg.get("sweep")
    if sweep is None:
        return [(cfg.get("case"), cfg)]
    labels = sweep.get("labels") or [
        f"{cfg.get('case')}_{k}" for k in range(len(sweep["values"]))
    ]
    points = []
    for label, value in zip(labels, sweep["values"]):
        raw = copy.deepcopy(cfg.raw)
        raw.pop("sweep")
        node = raw
        keys = sweep["path"].split(".")
        for key in keys[:-1]:
            node = node[int(key)] if isinstance(node, list) else node[key]
        last = keys[-1]
        if isinstance(node, list):
            node[int(last)] = value
        else:
            node[last] = value
        points.append((label, CaseConfig(raw=raw, base_dir=cfg.base_dir)))
    return points


# -- network importer ----------------------------------------------------------

_IMPORT_COLUMNS = ("id", "parent", "length_m", "r_prox_m", "r_dist_m", "Eh_Pa_m")


def import_network(path, fmt="radius-table", target_dx=0.01):
    """Convert a tabular per-segment CSV into the JSON network model.

    Expected columns: id, parent (empty for the root), length_m, r_prox_m,
    r_dist_m, Eh_Pa_m, and Z, R, C (plus optional p_out) on terminal rows.
    Radii taper linearly along each segment.  Wall thickness is taken as
    a tenth of the mean radius; only the product E h enters the wave
    physics, so the split is presentational.
    """
    if fmt not in ("radius-table",):
        raise FormatError(f"unknown import format '{fmt}'")
    import csv

    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        if reader.fieldnames is None:
            raise FormatError("empty network table")
        missing = [c for c in _IMPORT_COLUMNS if c not in reader.fieldnames]
        if missing:
            raise FormatError(f"network table missing column(s): {missing}")
        rows = list(reader)
    if not rows:
        raise FormatError("network table has no rows")

    ids = [r["id"].strip() for r in rows]
    if len(set(ids)) != len(ids):
        raise TopologyError("duplicate segment ids in network table")
    known = set(ids)
    children = {i: [] for i in ids}
    roots = []
    for r in rows:
        parent = (r.get("parent") or "").strip()
        if parent in ("", "-", "none", "0") and parent not in known:
            roots.append(r["id"].strip())
        elif parent in known:
            children[parent].append(r["id"].strip())
        else:
            raise TopologyError(f"segment '{r['id']}' references unknown parent '{parent}'")
    if len(roots) != 1:
        raise TopologyError(f"expected exactly one root segment, found {len(roots)}")

    # reject cycles: walk from the root and require full coverage
    seen = set()
    stack = [roots[0]]
    while stack:
        seg = stack.pop()
        if seg in seen:
            raise TopologyError(f"cyclic topology at segment '{seg}'")
        seen.add(seg)
        stack.extend(children[seg])
    if seen != known:
        raise TopologyError("network table contains segments unreachable from the root")

    segments, junctions, terminals = [], [], []
    for r in rows:
        sid = r["id"].strip()
        length = float(r["length_m"])
        rp, rd = float(r["r_prox_m"]), float(r["r_dist_m"])
        eh = float(r["Eh_Pa_m"])
        h = 0.1 * 0.5 * (rp + rd)
        n_elems = max(2, int(round(length / target_dx)))
        radii = np.linspace(rp, rd, n_elems + 1)
        segments.append(
            {
                "id": sid,
                "length_m": length,
                "n_elems": n_elems,
                "A0_m2": (math.pi * radii**2).tolist(),
                "E_Pa": eh / h,
                "h_m": h,
                "gamma_wall": float(r.get("gamma_wall") or 0.0),
                "p_ext_Pa": 0.0,
            }
        )
        kids = children[sid]
        if kids:
            junctions.append({"parent": sid, "daughters": kids})
        else:
            try:
                terminals.append(
                    {
                        "segment": sid,
                        "Z": float(r["Z"]),
                        "R": float(r["R"]),
                        "C": float(r["C"]),
                        "p_out": float(r.get("p_out") or 0.0),
                    }
                )
            except (KeyError, TypeError, ValueError):
                raise FormatError(
                    f"terminal segment '{sid}' lacks Z/R/C values"
                ) from None

    model = {
        "segments": segments,
        "junctions": junctions,
        "terminals": terminals,
        "inlet": {"segment": roots[0], "mode": "coupled_valve"},
    }
    net = build_network(model)  # validates
    report = {
        "segments": len(segments),
        "junctions": len(junctions),
        "terminals": len(terminals),
        "total_volume_m3": net.total_blood_volume(),
    }
    return model, report


# -- metrics -------------------------------------------------------------------


@dataclass
class Metrics:
    EDV: float = math.nan              # m^3
    ESV: float = math.nan
    SV: float = math.nan
    peak_lv_pressure: float = math.nan  # Pa
    peak_aortic_pressure: float = math.nan
    pulse_pressure: float = math.nan
    pwv: float = math.nan               # m/s
    amplification: float = math.nan
    warnings: list = field(default_factory=list)

    def as_dict(self):
        out = {
            "EDV_m3": self.EDV,
            "ESV_m3": self.ESV,
            "SV_m3": self.SV,
            "EDV_ml": self.EDV / ML,
            "ESV_ml": self.ESV / ML,
            "SV_ml": self.SV / ML,
            "peak_lv_pressure_Pa": self.peak_lv_pressure,
            "peak_lv_pressure_mmHg": self.peak_lv_pressure / MMHG,
            "peak_aortic_pressure_Pa": self.peak_aortic_pressure,
            "peak_aortic_pressure_mmHg": self.peak_aortic_pressure / MMHG,
            "pulse_pressure_Pa": self.pulse_pressure,
            "pulse_pressure_mmHg": self.pulse_pressure / MMHG,
            "pwv_m_s": self.pwv,
            "pulse_pressure_amplification": self.amplification,
            "warnings": self.warnings,
        }
        return out


@dataclass
class TraceSet:
    """Constant-rate columns recorded at every coupled step."""

    columns: dict
    dt: float
    period: float
    probes: dict = field(default_factory=dict)   # name -> (segment, x)

    def last_cycle(self, name):
        n = int(round(self.period / self.dt))
        col = self.columns[name]
        if len(col) < n:
            raise MetricsError("trace shorter than one cycle")
        return np.asarray(col[-n:])


def foot_time(t, signal):
    """Foot of the upstroke: first upward crossing of 20% pulse amplitude.

    The cycle is rotated to start at its minimum; crossings are located
    with linear interpolation.
    """
    s = np.asarray(signal, dtype=float)
    i_min = int(np.argmin(s))
    rot = np.roll(s, -i_min)
    t_rot = (np.arange(len(s)) * (t[1] - t[0]))
    thresh = rot.min() + 0.2 * (rot.max() - rot.min())
    above = rot >= thresh
    idx = np.argmax(above)
    if idx == 0:
        raise MetricsError("no upstroke found in trace")
    f = (thresh - rot[idx - 1]) / (rot[idx] - rot[idx - 1])
    return float(t[i_min] + t_rot[idx - 1] + f * (t[1] - t[0]))


def compute_metrics(traces, pwv_pair=None, amp_pair=None):
    """Cycle metrics from the last full cycle of a TraceSet."""
    n = int(round(traces.period / traces.dt))
    if len(traces.columns["t"]) < n:
        raise MetricsError("need at least one full cycle of traces")
    v = traces.last_cycle("v_lv")
    p = traces.last_cycle("p_lv")
    t = traces.last_cycle("t")
    m = Metrics(
        EDV=float(v.max()),
        ESV=float(v.min()),
        SV=float(v.max() - v.min()),
        peak_lv_pressure=float(p.max()),
    )
    if "p_inlet" in traces.columns:
        pin = traces.last_cycle("p_inlet")
        m.peak_aortic_pressure = float(pin.max())
        m.pulse_pressure = float(pin.max() - pin.min())
    if pwv_pair:
        name_a, name_b = pwv_pair
        pa = traces.last_cycle(f"p_{name_a}")
        pb = traces.last_cycle(f"p_{name_b}")
        dx = abs(traces.probes[name_b][1] - traces.probes[name_a][1])
        dt_foot = foot_time(t, pb) - foot_time(t, pa)
        if dt_foot != 0.0:
            m.pwv = dx / dt_foot
    if amp_pair:
        name_a, name_b = amp_pair
        pa = traces.last_cycle(f"p_{name_a}")
        pb = traces.last_cycle(f"p_{name_b}")
        pp_a = float(pa.max() - pa.min())
        if pp_a > 0:
            m.amplification = float(pb.max() - pb.min()) / pp_a
    if not 50.0 * ML <= m.EDV <= 300.0 * ML:
        m.warnings.append(f"EDV {m.EDV / ML:.1f} ml outside [50, 300] ml")
    if not 5.0e3 <= m.peak_lv_pressure <= 40.0e3:
        m.warnings.append(
            f"peak LV pressure {m.peak_lv_pressure / 1e3:.2f} kPa outside [5, 40] kPa"
        )
    return m


# -- persistence ---------------------------------------------------------------


def write_traces(traces, metrics, out_dir, label, config_dict, stats=None, events=None):
    """CSV trace + metrics JSON + run manifest (and optional NDJSON log)."""
    os.makedirs(out_dir, exist_ok=True)
    csv_path = os.path.join(out_dir, f"{label}_traces.csv")
    names = list(traces.columns.keys())
    cols = [np.asarray(traces.columns[k]) for k in names]
    with open(csv_path, "w") as f:
        f.write(",".join(names) + "\n")
        for row in zip(*cols):
            f.write(",".join(format(v, ".17g") for v in row) + "\n")
    metrics_path = os.path.join(out_dir, f"{label}_metrics.json")
    with open(metrics_path, "w") as f:
        json.dump(metrics.as_dict() if metrics is not None else None, f, indent=1)
    manifest = {
        "label": label,
        "config_sha256": hashlib.sha256(
            json.dumps(config_dict, sort_keys=True).encode()
        ).hexdigest(),
        "cardiowave_version": __version__,
        "wall_time_s": (stats or {}).get("wall_time_s"),
        "stats": stats or {},
    }
    with open(os.path.join(out_dir, f"{label}_manifest.json"), "w") as f:
        json.dump(manifest, f, indent=1)
    if events is not None:
        with open(os.path.join(out_dir, f"{label}_events.ndjson"), "w") as f:
            for ev in events:
                f.write(json.dumps(ev) + "\n")
    return csv_path


def read_traces(csv_path, dt=None, period=None, probes=None):
    """Load a trace CSV written by write_traces (decimal round trip)."""
    with open(csv_path) as f:
        header = f.readline().strip().split(",")
        data = np.array(
            [[float(v) for v in line.split(",")] for line in f if line.strip()]
        )
    columns = {name: data[:, k] for k, name in enumerate(header)}
    if dt is None and len(columns["t"]) > 1:
        dt = float(columns["t"][1] - columns["t"][0])
    return TraceSet(columns=columns, dt=dt, period=period or math.nan, probes=probes or {})


# -- case assembly and execution -----------------------------------------------


def _waveform_from(cfg, block):
    if block is None:
        return None
    if "waveform" in block:
        return np.asarray(block["waveform"], dtype=float)
    if "waveform_file" in block:
        path = cfg.resolve_path(block["waveform_file"])
        try:
            data = np.loadtxt(path, delimiter=",", comments="#")
        except OSError as exc:
            raise ConfigError(f"cannot read waveform: {exc}") from None
        if data.ndim != 2 or data.shape[1] != 2:
            raise FormatError("waveform CSV must have two columns (t_s, value)")
        return data
    return None


def build_case(cfg):
    """Instantiate (backend, adapter, solver config, run context) for a case."""
    solver_block = dict(cfg.get("solver", default={}))
    rename = {
        "dt3d_s": "dt3d",
        "dt1d_s": "dt1d",
        "ref_volume_m3": "ref_volume",
        "ref_pressure_Pa": "ref_pressure",
    }
    solver = SolverConfig(
        **{rename.get(k, k): v for k, v in solver_block.items()}
    )
    period = cfg.get("cycle", "period_s")

    circ = cfg.raw["circulation"]
    if "network" in circ:
        net_model = copy.deepcopy(circ["network"])
    else:
        with open(cfg.resolve_path(circ["network_file"])) as f:
            net_model = json.load(f)
    network = build_network(net_model)

    sten = cfg.get("stenosis")
    if sten is not None:
        seg = network.segments[network.segment_index(sten["segment"])]
        apply_stenosis_profile(
            seg,
            float(sten["severity"]),
            center=float(sten.get("center_frac", 0.5)) * seg.length,
            width=float(sten.get("width_frac", 0.2)) * seg.length,
        )
        network.reset_state()
        from .arterial import invalidate_ops

        invalidate_ops(network)

    rho = 1060.0
    aortic = params_from_config(cfg.get("valves", "aortic", default={}), rho=rho)
    mitral = params_from_config(cfg.get("valves", "mitral", default={}), rho=rho)
    adapter = CirculationAdapter(
        network,
        aortic,
        mitral,
        p_atrial=cfg.get("preload", "p_atrial_Pa"),
        config=solver,
    )

    if cfg.get("backend") == "elastance":
        el = cfg.get("elastance")
        if el is None:
            raise ConfigError("elastance backend requires an 'elastance' block")
        backend = ElastanceCavity(
            V0=el["V0_m3"], p0=el.get("p0_Pa", 0.0),
            elastance_table=el["table"], period=period,
        )
        p_init = cfg.get("preload", "p_init_Pa")
        backend.u[0] = (p_init - backend.p0) / backend.elastance(0.0)
    else:
        mesh_block = cfg.get("mesh", default={})
        if "file" in mesh_block:
            mesh = load_mesh(cfg.resolve_path(mesh_block["file"]))
        else:
            gen = dict(mesh_block.get("generator", {}))
            rename_gen = {
                "r_endo_short_m": "r_endo_short",
                "r_endo_long_m": "r_endo_long",
                "wall_thickness_m": "wall_thickness",
                "fiber_angle_endo_deg": "fiber_angle_endo",
                "fiber_angle_epi_deg": "fiber_angle_epi",
                "target_elem_size_m": "target_elem_size",
            }
            mesh = generate_idealized_lv(
                **{rename_gen.get(k, k): v for k, v in gen.items()}
            )
        mat_block = dict(cfg.get("material", default={}))
        model_kind = mat_block.pop("model", "transverse")
        if model_kind == "transverse":
            passive = GuccioneParams.transverse(
                kappa=mat_block.get("kappa_Pa", 650e3),
                c_scale=mat_block.get("C_guc_Pa", 1.5e3),
                b_f=mat_block.get("b_f", 18.48),
                b_t=mat_block.get("b_t", 3.58),
                b_fs=mat_block.get("b_fs", 1.627),
            )
        elif model_kind == "orthotropic":
            passive = GuccioneParams.orthotropic(
                kappa=mat_block.get("kappa_Pa", 650e3),
                a=mat_block.get("a_Pa", 0.8e3),
                b_ff=mat_block.get("b_ff", 5.0),
                b_ss=mat_block.get("b_ss", 6.0),
                b_nn=mat_block.get("b_nn", 3.0),
                b_fs=mat_block.get("b_fs", 10.0),
                b_fn=mat_block.get("b_fn", 2.0),
                b_ns=mat_block.get("b_ns", 2.0),
            )
        else:
            raise ConfigError(f"unknown material model '{model_kind}'")
        act_block = dict(cfg.get("active", default={}))
        act_mode = act_block.pop("activation", {"mode": "uniform", "t0_s": 0.0})
        active = ActiveParams(
            S_peak=act_block.get("S_peak_Pa", 60e3),
            t_dur=act_block.get("t_dur_s", 0.575),
            tau_c0=act_block.get("tau_c0_s", 0.105),
            tau_r=act_block.get("tau_r_s", 0.090),
            ld=act_block.get("ld", 35.0),
            ld_up=act_block.get("ld_up_s", 0.100),
            lambda_0=act_block.get("lambda_0", 0.7),
            t_emd=act_block.get("t_emd_s", 0.015),
        )
        activation = prescribe_activation(
            mesh,
            mode=act_mode.get("mode", "uniform"),
            t0=act_mode.get("t0_s", 0.0),
            velocity=act_mode.get("velocity_m_s"),
        )
        model = FEModel(
            mesh,
            passive,
            active,
            activation,
            k_base=cfg.get("boundary", "k_base_Pa_m"),
            k_epi=cfg.get("boundary", "k_epi_Pa_m"),
        )
        backend = FECavity(model, solver, cycle_period=period)

    probes = [
        (p["name"], p["segment"], float(p["x_m"]))
        for p in cfg.get("probes", default=[])
    ]
    return backend, adapter, solver, {
        "period": period,
        "network": network,
        "probes": probes,
        "precycle_inlet": cfg.get("precycle_inlet"),
        "pre_cycles": cfg.get("cycle", "pre_cycles", default=20),
        "n_cycles": cfg.get("cycle", "n_cycles", default=3),
        "p_init": cfg.get("preload", "p_init_Pa"),
        "p_atrial": cfg.get("preload", "p_atrial_Pa"),
    }


def run_point(cfg, label, out_dir, n_cycles=None, verbose=False):
    """Run one sweep point end to end and persist its outputs."""
    t_start = time.time()
    backend, adapter, solver, ctx = build_case(cfg)
    network = ctx["network"]

    pre = ctx["precycle_inlet"]
    drift = None
    if pre is not None and ctx["pre_cycles"] > 0:
        wave = _waveform_from(cfg, pre)
        if wave is None:
            raise ConfigError("precycle_inlet requires a waveform")
        inlet = network.inlet
        saved_mode = inlet.mode
        inlet.mode = pre.get("mode", "prescribed_flow")
        inlet.waveform = wave
        inlet.periodic = bool(pre.get("periodic", True))
        _, drift = init_periodic(
            network, ctx["pre_cycles"], ctx["period"], solver.dt1d
        )
        inlet.mode = saved_mode
        network.time = 0.0

    if isinstance(backend, FECavity):
        backend.inflate(ctx["p_init"])

    events = [] if verbose else None

    def on_step(k, rep):
        if events is not None:
            events.append(
                {
                    "step": k,
                    "iterations": rep.iterations,
                    "residual": rep.residuals[-1],
                    "isovolumetric": rep.isovolumetric,
                    "p": rep.p,
                }
            )

    cols, stats = run_simulation(
        backend,
        adapter,
        solver,
        n_cycles=n_cycles or ctx["n_cycles"],
        period=ctx["period"],
        p_init=ctx["p_init"],
        probes=ctx["probes"],
        on_step=on_step,
    )
    traces = TraceSet(
        columns=cols,
        dt=solver.dt3d,
        period=ctx["period"],
        probes={name: (seg, x) for name, seg, x in ctx["probes"]},
    )
    metrics = compute_metrics(
        traces,
        pwv_pair=cfg.get("pwv_probe_pair"),
        amp_pair=cfg.get("amplification_probe_pair"),
    )
    stats["wall_time_s"] = time.time() - t_start
    stats["precycle_drift"] = drift
    csv_path = write_traces(traces, metrics, out_dir, label, cfg.raw, stats, events)
    return {"label": label, "status": "ok", "csv": csv_path,
            "metrics": metrics, "stats": stats}


def run_case(cfg, out_dir=None, n_cycles=None, verbose=False):
    """Run all sweep points of a case; a failing point does not abort others."""
    out_dir = out_dir or cfg.get("output", "dir", default="out")
    results = []
    for label, point_cfg in sweep_points(cfg):
        try:
            results.append(run_point(point_cfg, label, out_dir, n_cycles, verbose))
        except CardiowaveError as exc:
            results.append({"label": label, "status": "failed", "error": str(exc)})
            os.makedirs(out_dir, exist_ok=True)
            with open(os.path.join(out_dir, f"{label}_manifest.json"), "w") as f:
                json.dump({"label": label, "status": "failed", "error": str(exc)}, f)
    return results
