"""Tetrahedral ventricle meshes: idealized generator, activation maps, I/O.

The generator builds a truncated-ellipsoid shell on a structured
(latitude, azimuth, transmural) grid, splits every cell with the
Freudenthal/Kuhn six-tet pattern (face-conforming by construction, also
across the periodic seam), and collapses the grid at the apex pole.
`base_height_frac = 1` degenerates to a closed shell, which is how the
thick-sphere verification mesh is produced.

Surfaces carry orientation: tag faces point out of the tissue, while
`cavity_faces` (endocardium plus the flat closure cap over the basal
ring) point away from the enclosed blood pool, so the divergence-theorem
volume of the cavity is positive.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from ..errors import GeometryError, TopologyError, ValidationError

# Kuhn split: six tets around the (0,0,0)-(1,1,1) diagonal of a unit cell
_KUHN_PATHS = [
    (0, 1, 2), (0, 2, 1), (1, 0, 2), (1, 2, 0), (2, 0, 1), (2, 1, 0),
]


@dataclass
class TetMesh:
    nodes: np.ndarray                 # (N, 3) reference coordinates
    tets: np.ndarray                  # (M, 4) connectivity
    f0: np.ndarray                    # (M, 3) fiber direction
    s0: np.ndarray                    # (M, 3) sheet (transmural) direction
    n0: np.ndarray                    # (M, 3) sheet-normal direction
    tags: dict                        # surface name -> (F, 3) faces, outward of tissue
    cavity_faces: np.ndarray          # (F, 3), outward of the cavity volume
    apex_node: int = 0
    meta: dict = field(default_factory=dict)

    @property
    def n_nodes(self):
        return len(self.nodes)

    @property
    def n_tets(self):
        return len(self.tets)

    def tet_volumes(self):
        x = self.nodes[self.tets]
        return np.linalg.det(x[:, 1:] - x[:, :1]) / 6.0

    def centroids(self):
        return self.nodes[self.tets].mean(axis=1)


def _cell_corner(node_id, k, i, j):
    """Global id of grid corner (layer k, latitude i, azimuth j)."""
    return node_id(k, i, j)


def generate_idealized_lv(
    r_endo_short=0.025,
    r_endo_long=0.06,
    wall_thickness=0.009,
    base_height_frac=0.25,
    n_lat=10,
    n_azi=14,
    n_trans=2,
    fiber_angle_endo=60.0,
    fiber_angle_epi=-60.0,
    target_elem_size=None,
):
    """Truncated-ellipsoid left-ventricle mesh with rule-based fibers.

    The cavity is the ellipsoid x^2/a^2 + y^2/a^2 + z^2/c^2 < 1 below the
    base plane z = base_height_frac * c; the wall adds `wall_thickness`
    to both semi-axes.  Fiber angles rotate linearly across the wall.
    """
    a_en, c_en = float(r_endo_short), float(r_endo_long)
    t = float(wall_thickness)
    if a_en <= 0 or c_en <= 0:
        raise GeometryError("cavity radii must be positive")
    if t <= 0:
        raise GeometryError("wall thickness must be positive")
    b = float(base_height_frac)
    if not -0.9 < b <= 1.0:
        raise GeometryError("base_height_frac must lie in (-0.9, 1]")
    closed = b >= 1.0 - 1e-12
    a_ep, c_ep = a_en + t, c_en + t
    z_base = b * c_en
    if not closed and z_base >= c_en - 1e-12:
        raise GeometryError("base plane does not cut the cavity")

    if target_elem_size is not None:
        s = float(target_elem_size)
        if s <= 0:
            raise GeometryError("target element size must be positive")
        n_azi = max(8, int(round(2.0 * math.pi * a_en / s)))
        n_lat = max(4, int(round(0.5 * math.pi * c_en / s)))
        n_trans = max(1, int(round(t / s)))
    if n_lat < 2 or n_azi < 3 or n_trans < 1:
        raise GeometryError("grid resolution too coarse")

    nl, na, nt = int(n_lat), int(n_azi), int(n_trans)

    # layer geometry: each transmural layer is its own ellipsoid, cut at
    # the common base plane
    frac = np.linspace(0.0, 1.0, nt + 1)
    a_k = a_en + frac * t
    c_k = c_en + frac * t
    mu_top = np.full(nt + 1, 0.5 * math.pi) if closed else np.arcsin(z_base / c_k)
    # equal-area ring placement: the inscribed n-gon of each azimuthal ring
    # is widened to the area of its circle, which removes the dominant
    # volume deficit of the faceted surface
    f_azi = math.sqrt((2.0 * math.pi / na) / math.sin(2.0 * math.pi / na))

    nodes = []
    index = {}

    def node_id(k, i, j):
        if i == 0:
            key = (k, 0, 0)
        elif closed and i == nl:
            key = (k, nl, 0)
        else:
            key = (k, i, j % na)
        if key not in index:
            k_, i_, j_ = key
            mu = -0.5 * math.pi + (mu_top[k_] + 0.5 * math.pi) * (i_ / nl)
            th = 2.0 * math.pi * j_ / na
            if i_ == 0:
                xyz = (0.0, 0.0, -c_k[k_])
            elif closed and i_ == nl:
                xyz = (0.0, 0.0, c_k[k_])
            else:
                xyz = (
                    f_azi * a_k[k_] * math.cos(mu) * math.cos(th),
                    f_azi * a_k[k_] * math.cos(mu) * math.sin(th),
                    c_k[k_] * math.sin(mu),
                )
            index[key] = len(nodes)
            nodes.append(xyz)
        return index[key]

    tets = []
    for k in range(nt):
        for i in range(nl):
            for j in range(na):
                corner = {}
                for dk in (0, 1):
                    for di in (0, 1):
                        for dj in (0, 1):
                            corner[(di, dj, dk)] = node_id(k + dk, i + di, j + dj)
                for path in _KUHN_PATHS:
                    loc = [(0, 0, 0)]
                    cur = [0, 0, 0]
                    for axis in path:
                        cur[axis] += 1
                        loc.append(tuple(cur))
                    tet = [corner[p] for p in loc]
                    if len(set(tet)) == 4:
                        tets.append(tet)

    nodes = np.asarray(nodes, dtype=float)
    tets = np.asarray(tets, dtype=np.int64)

    # orient all tets positive and drop slivers
    x = nodes[tets]
    vol = np.linalg.det(x[:, 1:] - x[:, :1]) / 6.0
    neg = vol < 0
    tets[neg] = tets[neg][:, [0, 2, 1, 3]]
    vol = np.abs(vol)
    keep = vol > 1e-6 * np.max(vol)
    tets = tets[keep]

    tags = _extract_boundary(nodes, tets, a_en, c_en, a_ep, c_ep, z_base, closed)

    # cavity surface: flipped endo faces plus the basal closure fan
    cavity = [tags["endo"][:, [0, 2, 1]]]
    if not closed:
        ring = [node_id(0, nl, j) for j in range(na)]
        fan = [(ring[0], ring[j], ring[j + 1]) for j in range(1, na - 1)]
        fan = np.asarray(fan, dtype=np.int64)
        # orient the cap away from the cavity (normals towards +z)
        e1 = nodes[fan[:, 1]] - nodes[fan[:, 0]]
        e2 = nodes[fan[:, 2]] - nodes[fan[:, 0]]
        flip = np.cross(e1, e2)[:, 2] < 0.0
        fan[flip] = fan[flip][:, [0, 2, 1]]
        cavity.append(fan)
    cavity_faces = np.concatenate(cavity, axis=0)

    f0, s0, n0 = _rule_based_fibers(
        nodes, tets, a_en, c_en, t, fiber_angle_endo, fiber_angle_epi
    )

    apex = int(np.argmin(nodes[:, 2]))
    mesh = TetMesh(
        nodes=nodes,
        tets=tets,
        f0=f0,
        s0=s0,
        n0=n0,
        tags=tags,
        cavity_faces=cavity_faces,
        apex_node=apex,
        meta={
            "r_endo_short": a_en,
            "r_endo_long": c_en,
            "wall_thickness": t,
            "base_height_frac": b,
        },
    )
    if np.any(mesh.tet_volumes() <= 0.0):
        raise GeometryError("generator produced non-positive element volumes")
    check_closed_surface(mesh.cavity_faces)
    return mesh


def _extract_boundary(nodes, tets, a_en, c_en, a_ep, c_ep, z_base, closed):
    """Boundary faces oriented out of the tissue, tagged endo/epi/base."""
    faces = {}
    # outward faces of a positively oriented tet (n0, n1, n2, n3)
    pattern = [(1, 2, 3), (0, 3, 2), (0, 1, 3), (0, 2, 1)]
    for tet in tets:
        for p in pattern:
            tri = (tet[p[0]], tet[p[1]], tet[p[2]])
            key = tuple(sorted(tri))
            if key in faces:
                del faces[key]
            else:
                faces[key] = tri
    boundary = np.asarray(list(faces.values()), dtype=np.int64)
    cent = nodes[boundary].mean(axis=1)
    on_base = np.zeros(len(boundary), dtype=bool)
    if not closed:
        zmax = np.max(nodes[boundary][:, :, 2], axis=1)
        zmin = np.min(nodes[boundary][:, :, 2], axis=1)
        on_base = (np.abs(zmax - z_base) < 1e-6 * c_ep) & (
            np.abs(zmin - z_base) < 1e-6 * c_ep
        )
    rho_en = (cent[:, 0] ** 2 + cent[:, 1] ** 2) / a_en**2 + cent[:, 2] ** 2 / c_en**2
    rho_ep = (cent[:, 0] ** 2 + cent[:, 1] ** 2) / a_ep**2 + cent[:, 2] ** 2 / c_ep**2
    is_endo = (~on_base) & (np.abs(rho_en - 1.0) < np.abs(rho_ep - 1.0))
    is_epi = (~on_base) & ~is_endo
    return {
        "endo": boundary[is_endo],
        "epi": boundary[is_epi],
        "base": boundary[on_base],
    }


def _rule_based_fibers(nodes, tets, a_en, c_en, thickness, ang_endo, ang_epi):
    cent = nodes[tets].mean(axis=1)
    # transmural coordinate: bisect for the interpolated ellipsoid through
    # each centroid
    lo = np.zeros(len(cent))
    hi = np.ones(len(cent))
    for _ in range(50):
        mid = 0.5 * (lo + hi)
        a = a_en + mid * thickness
        c = c_en + mid * thickness
        rho = (cent[:, 0] ** 2 + cent[:, 1] ** 2) / a**2 + cent[:, 2] ** 2 / c**2
        inside = rho < 1.0
        hi = np.where(inside, mid, hi)
        lo = np.where(inside, lo, mid)
    depth = 0.5 * (lo + hi)

    a = a_en + depth * thickness
    c = c_en + depth * thickness
    normal = np.column_stack(
        (2 * cent[:, 0] / a**2, 2 * cent[:, 1] / a**2, 2 * cent[:, 2] / c**2)
    )
    normal /= np.linalg.norm(normal, axis=1, keepdims=True)

    zhat = np.array([0.0, 0.0, 1.0])
    circ = np.cross(np.broadcast_to(zhat, normal.shape), normal)
    nrm = np.linalg.norm(circ, axis=1)
    bad = nrm < 1e-8
    if np.any(bad):
        # near the apex the axis is parallel to the normal; any tangent works
        seed = np.array([1.0, 0.0, 0.0])
        alt = seed - normal[bad] * (normal[bad] @ seed)[:, None]
        circ[bad] = alt
        nrm[bad] = np.linalg.norm(circ[bad], axis=1)
    circ /= nrm[:, None]
    longi = np.cross(normal, circ)
    longi /= np.linalg.norm(longi, axis=1, keepdims=True)

    ang = np.deg2rad(ang_endo + (ang_epi - ang_endo) * depth)
    f0 = np.cos(ang)[:, None] * circ + np.sin(ang)[:, None] * longi
    f0 /= np.linalg.norm(f0, axis=1, keepdims=True)
    # s0 is the cross-fiber in-plane direction, n0 the transmural (radial)
    # one; the orthotropic weight table and the sheet component of the
    # active stress both rely on this ordering
    s0 = np.cross(normal, f0)
    s0 /= np.linalg.norm(s0, axis=1, keepdims=True)
    n0 = np.cross(f0, s0)
    n0 /= np.linalg.norm(n0, axis=1, keepdims=True)
    return f0, s0, n0


def check_closed_surface(faces):
    """Every edge of an orientable closed surface is shared by exactly two
    faces with opposite direction."""
    edges = {}
    for tri in faces:
        for a, b in ((tri[0], tri[1]), (tri[1], tri[2]), (tri[2], tri[0])):
            edges[(a, b)] = edges.get((a, b), 0) + 1
    for (a, b), count in edges.items():
        if count != 1 or edges.get((b, a), 0) != 1:
            raise TopologyError("cavity surface is not a closed orientable surface")


def prescribe_activation(mesh, mode="uniform", t0=0.0, velocity=None):
    """Per-element activation-time field.

    `uniform` stamps t0 everywhere; `apex_to_base` divides the straight
    line distance from the apex node by the conduction velocity.
    """
    if mode == "uniform":
        return np.full(mesh.n_tets, float(t0))
    if mode == "apex_to_base":
        if velocity is None or velocity <= 0.0:
            raise ValidationError("apex_to_base activation needs velocity > 0")
        apex = mesh.nodes[mesh.apex_node]
        dist = np.linalg.norm(mesh.centroids() - apex, axis=1)
        return dist / float(velocity)
    raise ValidationError(f"unknown activation mode '{mode}'")


def save_mesh(mesh, path):
    """Plain-text mesh file, 17 significant digits (decimal round-trip safe)."""
    with open(path, "w") as f:
        f.write("cardiowave-mesh 1\n")
        f.write(f"nodes {mesh.n_nodes}\n")
        for x, y, z in mesh.nodes:
            f.write(f"{x:.17g} {y:.17g} {z:.17g}\n")
        f.write(f"elements {mesh.n_tets}\n")
        for tet, f0, s0, n0 in zip(mesh.tets, mesh.f0, mesh.s0, mesh.n0):
            vals = " ".join(f"{v:.17g}" for v in (*f0, *s0, *n0))
            f.write(f"{tet[0]} {tet[1]} {tet[2]} {tet[3]} {vals}\n")
        surf = dict(mesh.tags)
        surf["cavity"] = mesh.cavity_faces
        f.write(f"surfaces {len(surf)}\n")
        for name, faces in surf.items():
            f.write(f"{name} {len(faces)}\n")
            for a, b, c in faces:
                f.write(f"{a} {b} {c}\n")
        f.write(f"apex {mesh.apex_node}\n")


def load_mesh(path):
    with open(path) as f:
        tokens = f.read().split("\n")
    it = iter(tokens)
    header = next(it)
    if not header.startswith("cardiowave-mesh"):
        raise ValidationError(f"not a cardiowave mesh file: {path}")
    n = int(next(it).split()[1])
    nodes = np.array([[float(v) for v in next(it).split()] for _ in range(n)])
    m = int(next(it).split()[1])
    raw = np.array([[float(v) for v in next(it).split()] for _ in range(m)])
    tets = raw[:, :4].astype(np.int64)
    f0, s0, n0 = raw[:, 4:7], raw[:, 7:10], raw[:, 10:13]
    n_surf = int(next(it).split()[1])
    tags = {}
    for _ in range(n_surf):
        name, cnt = next(it).split()
        faces = np.array(
            [[int(v) for v in next(it).split()] for _ in range(int(cnt))],
            dtype=np.int64,
        ).reshape(int(cnt), 3)
        tags[name] = faces
    apex_line = next(it)
    apex = int(apex_line.split()[1]) if apex_line.startswith("apex") else 0
    cavity = tags.pop("cavity")
    return TetMesh(
        nodes=nodes, tets=tets, f0=f0, s0=s0, n0=n0,
        tags=tags, cavity_faces=cavity, apex_node=apex,
    )
