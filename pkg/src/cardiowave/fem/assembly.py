"""Global FE operators of the ventricle model.

Linear tetrahedra with constant per-element gradients, so every volume
integral is exact with a single point.  Pressure acts as a follower load
on the closed cavity surface (endocardium plus closure cap); its own
linearization and the volume-gradient row are assembled from deformed
face geometry.  Boundary springs: omni-directional at the base, normal
(Robin) at the epicardium with an apex-to-base ramp.

Sign conventions used throughout the coupled solve:
  residual(u, p) = f_int(u) + f_springs(u) - f_pressure(u, p)
  cavity_volume(u) > 0,  coupling row b = dV/du,
  coupling column a = -d residual/dp = b^T  (closed-surface identity).
"""

import numpy as np
import scipy.sparse as sp

from ..errors import InvertedElementError, TopologyError
from . import material
from .mesh import check_closed_surface


def _face_geometry(nodes, faces, disp=None):
    """Deformed face corner coordinates, area vectors and centroids."""
    x = nodes[faces]
    if disp is not None:
        x = x + disp.reshape(-1, 3)[faces]
    a = 0.5 * np.cross(x[:, 1] - x[:, 0], x[:, 2] - x[:, 0])
    return x, a, x.mean(axis=1)


class FEModel:
    """Assembly of residual/tangent/volume operators on one mesh."""

    def __init__(
        self,
        mesh,
        passive_params,
        active_params=None,
        activation=None,          # per-element activation times t_a
        rho0=1060.0,
        k_base=5.0e6,             # Pa/m, omni-directional base springs
        k_epi=2.0e4,              # Pa/m, peak normal epicardial stiffness
        fixed_nodes=(),
    ):
        self.mesh = mesh
        self.passive = passive_params
        self.active = active_params
        self.t_a = (
            np.zeros(mesh.n_tets) if activation is None else np.asarray(activation)
        )
        self.rho0 = rho0
        self.n_dof = 3 * mesh.n_nodes

        x = mesh.nodes[mesh.tets]
        dm = np.transpose(x[:, 1:] - x[:, :1], (0, 2, 1))  # edge columns
        det = np.linalg.det(dm)
        if np.any(det <= 0.0):
            raise InvertedElementError("mesh contains inverted tetrahedra")
        self.vol = det / 6.0
        dm_inv = np.linalg.inv(dm)
        grads = np.empty((mesh.n_tets, 4, 3))
        grads[:, 1:, :] = dm_inv
        grads[:, 0, :] = -dm_inv.sum(axis=1)
        self.grads = grads

        # frame matrix with fiber/sheet/normal as columns
        self.frames = np.stack([mesh.f0, mesh.s0, mesh.n0], axis=2)

        dofs = (3 * mesh.tets[:, :, None] + np.arange(3)[None, None, :]).reshape(
            mesh.n_tets, 12
        )
        self._rows = np.repeat(dofs, 12, axis=1).ravel()
        self._cols = np.tile(dofs, (1, 12)).ravel()
        self._edofs = dofs

        check_closed_surface(mesh.cavity_faces)
        self._cavity_dofs = (
            3 * mesh.cavity_faces[:, :, None] + np.arange(3)[None, None, :]
        )

        self.fixed_dofs = np.asarray(
            [3 * n + d for n in fixed_nodes for d in range(3)], dtype=int
        )

        self.mass = self._assemble_mass()
        self.k_springs = self._assemble_springs(k_base, k_epi)

    # -- constant operators --------------------------------------------------

    def _assemble_mass(self):
        me = (np.ones((4, 4)) + np.eye(4)) / 20.0
        data = (
            self.rho0
            * self.vol[:, None, None, None, None]
            * me[None, :, None, :, None]
            * np.eye(3)[None, None, :, None, :]
        )
        m = sp.coo_matrix(
            (data.ravel(), (self._rows, self._cols)), shape=(self.n_dof, self.n_dof)
        ).tocsr()
        return m

    def _surface_spring(self, faces, stiffness, normals=None):
        """sum_f k_f int N_a N_b (dyad or identity) over a face set."""
        x, a, _ = _face_geometry(self.mesh.nodes, faces)
        area = np.linalg.norm(a, axis=1)
        sm = (np.ones((3, 3)) + np.eye(3)) / 12.0
        if normals is None:
            dyad = np.broadcast_to(np.eye(3), (len(faces), 3, 3))
        else:
            dyad = np.einsum("fi,fj->fij", normals, normals)
        blocks = (
            (stiffness * area)[:, None, None, None, None]
            * sm[None, :, None, :, None]
            * dyad[:, None, :, None, :]
        )
        fdofs = (3 * faces[:, :, None] + np.arange(3)[None, None, :]).reshape(-1, 9)
        rows = np.repeat(fdofs, 9, axis=1).ravel()
        cols = np.tile(fdofs, (1, 9)).ravel()
        return sp.coo_matrix(
            (blocks.ravel(), (rows, cols)), shape=(self.n_dof, self.n_dof)
        ).tocsr()

    def _assemble_springs(self, k_base, k_epi):
        k = sp.csr_matrix((self.n_dof, self.n_dof))
        base = self.mesh.tags.get("base")
        if base is not None and len(base) and k_base > 0.0:
            k = k + self._surface_spring(base, np.full(len(base), k_base))
        epi = self.mesh.tags.get("epi")
        if epi is not None and len(epi) and k_epi > 0.0:
            x, a, cent = _face_geometry(self.mesh.nodes, epi)
            normals = a / np.linalg.norm(a, axis=1, keepdims=True)
            # stiffness ramps from zero at the apex to k_epi at the base,
            # measured along the mesh's own apico-basal axis
            apex = self.mesh.nodes[self.mesh.apex_node]
            base = self.mesh.tags.get("base")
            if base is not None and len(base):
                top = self.mesh.nodes[np.unique(base)].mean(axis=0)
            else:
                top = self.mesh.nodes.mean(axis=0)
            axis = top - apex
            span = float(np.linalg.norm(axis))
            axis = axis / max(span, 1e-12)
            ramp = (cent - apex) @ axis / max(span, 1e-12)
            k = k + self._surface_spring(epi, k_epi * np.clip(ramp, 0.0, 1.0), normals)
        return k

    # -- kinematics ------------------------------------------------------------

    def _deformation(self, u):
        ue = u.reshape(-1, 3)[self.mesh.tets]
        F = np.eye(3) + np.einsum("eai,eaJ->eiJ", ue, self.grads)
        C = np.einsum("ekI,ekJ->eIJ", F, F)
        return F, C

    def _total_stress(self, C, t, with_tangent):
        S, CC = material.passive_stress(C, self.frames, self.passive, with_tangent)
        if self.active is not None and self.active.S_peak > 0.0 and t is not None:
            t_s = t - self.t_a - self.active.t_emd
            Sa, CCa = material.active_stress(
                t_s, C, self.mesh.f0, self.mesh.s0, self.active, with_tangent
            )
            S = S + Sa
            if with_tangent:
                CC = CC + CCa
        return S, CC

    # -- residual / tangent -----------------------------------------------------

    def internal_force(self, u, t=None):
        F, C = self._deformation(u)
        S, _ = self._total_stress(C, t, with_tangent=False)
        fe = np.einsum("e,eiI,eIJ,eaJ->eai", self.vol, F, S, self.grads)
        r = np.zeros(self.n_dof)
        np.add.at(r, self._edofs.reshape(-1), fe.reshape(-1))
        return r

    def pressure_force(self, u, p):
        """Follower load of cavity pressure p; push is outward of the cavity."""
        _, a, _ = _face_geometry(self.mesh.nodes, self.mesh.cavity_faces, disp=u)
        f = np.zeros(self.n_dof)
        contrib = np.broadcast_to((p / 3.0) * a[:, None, :], self._cavity_dofs.shape)
        np.add.at(f, self._cavity_dofs.reshape(-1), contrib.reshape(-1).copy())
        return f

    def residual(self, u, p, t=None):
        r = self.internal_force(u, t) + self.k_springs @ u - self.pressure_force(u, p)
        r[self.fixed_dofs] = 0.0
        return r

    def tangent(self, u, p, t=None):
        F, C = self._deformation(u)
        S, CC = self._total_stress(C, t, with_tangent=True)

        kgeo = np.einsum("e,eaJ,eJK,ebK->eab", self.vol, self.grads, S, self.grads)
        ke = np.einsum("eab,ij->eaibj", kgeo, np.eye(3))
        # strain-variation operator in Mandel form: B6[e, (a,i), q]
        mi, mj, mw = material._MI, material._MJ, material._MW
        b6 = 0.5 * mw * (
            F[:, None, :, mi] * self.grads[:, :, None, mj]
            + F[:, None, :, mj] * self.grads[:, :, None, mi]
        )
        b6 = b6.reshape(-1, 12, 6)
        ke = ke + (
            self.vol[:, None, None] * (b6 @ CC @ b6.transpose(0, 2, 1))
        ).reshape(-1, 4, 3, 4, 3)
        k = sp.coo_matrix(
            (ke.reshape(-1), (self._rows, self._cols)), shape=(self.n_dof, self.n_dof)
        ).tocsr()
        k = k + self.k_springs
        if p != 0.0:
            k = k + self._follower_stiffness(u, p)
        return self._apply_fixed(k)

    def _follower_stiffness(self, u, p):
        """-d(pressure_force)/du: each face node's force varies with the
        deformed edge opposite to the perturbed node."""
        x, _, _ = _face_geometry(self.mesh.nodes, self.mesh.cavity_faces, disp=u)
        w = np.stack(
            [x[:, 1] - x[:, 2], x[:, 2] - x[:, 0], x[:, 0] - x[:, 1]], axis=1
        )
        skew = np.zeros((len(w), 3, 3, 3))
        skew[:, :, 0, 1] = -w[:, :, 2]
        skew[:, :, 0, 2] = w[:, :, 1]
        skew[:, :, 1, 0] = w[:, :, 2]
        skew[:, :, 1, 2] = -w[:, :, 0]
        skew[:, :, 2, 0] = -w[:, :, 1]
        skew[:, :, 2, 1] = w[:, :, 0]
        # d f_a / d u_b = -(p/6) [w_b]_x for every receiving node a
        blocks = np.broadcast_to(
            (p / 6.0) * skew[:, None, :, :, :], (len(w), 3, 3, 3, 3)
        )
        fdofs = self._cavity_dofs.reshape(-1, 9)
        rows = np.repeat(fdofs, 9, axis=1).ravel()
        cols = np.tile(fdofs, (1, 9)).ravel()
        blk = np.transpose(blocks, (0, 1, 3, 2, 4))  # (f, a, i, b, j)
        return sp.coo_matrix(
            (blk.ravel(), (rows, cols)), shape=(self.n_dof, self.n_dof)
        ).tocsr()

    def _apply_fixed(self, k):
        if len(self.fixed_dofs) == 0:
            return k
        k = k.tolil()
        for d in self.fixed_dofs:
            k.rows[d] = [d]
            k.data[d] = [1.0]
        k = k.tocsc()
        for d in self.fixed_dofs:
            col = k[:, d].toarray().ravel()
            col[d] = 1.0
            k[:, d] = sp.csc_matrix(
                (np.array([1.0]), (np.array([d]), np.array([0]))), shape=(self.n_dof, 1)
            )
        return k.tocsr()

    # -- cavity volume and coupling ----------------------------------------------

    def cavity_volume(self, u):
        x, a, cent = _face_geometry(self.mesh.nodes, self.mesh.cavity_faces, disp=u)
        v = float(np.einsum("fi,fi->", cent, a)) / 3.0
        if v <= 0.0:
            raise TopologyError("cavity volume non-positive; check surface orientation")
        return v

    def coupling_row(self, u):
        """b = dV/du as a dense vector."""
        x, a, cent = _face_geometry(self.mesh.nodes, self.mesh.cavity_faces, disp=u)
        b = np.zeros(self.n_dof)
        contrib = np.empty((len(a), 3, 3))
        contrib[:, 0] = a / 9.0 + np.cross(x[:, 1] - x[:, 2], cent) / 6.0
        contrib[:, 1] = a / 9.0 + np.cross(x[:, 2] - x[:, 0], cent) / 6.0
        contrib[:, 2] = a / 9.0 + np.cross(x[:, 0] - x[:, 1], cent) / 6.0
        np.add.at(b, self._cavity_dofs.reshape(-1), contrib.reshape(-1))
        b[self.fixed_dofs] = 0.0
        return b

    def pressure_column(self, u):
        """a = -d residual/dp = d(pressure_force)/dp."""
        a_col = self.pressure_force(u, 1.0)
        a_col[self.fixed_dofs] = 0.0
        return a_col
