"""Reference solutions: structured-grid displacement solver and layered columns.

The grid solver discretizes the same truncated boundary value problem as the
networks with bilinear displacement cells on a tensor grid whose lines pass
through every material breakpoint, so each cell holds a single material and
interface tractions are balanced by construction.  Spacing is graded towards
every breakpoint (pile corners, layer interfaces) and capped far away.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from pilepinn.domain import AXISYMMETRIC, RegionSet
from pilepinn.errors import GeometryError, OracleSetupError
from pilepinn.loss import DISPLACEMENT, ROLLER, TRACTION, BoundaryConditions, DataSet
from pilepinn.problem import PileProblem

_GAUSS = np.array([-1.0, 1.0]) / np.sqrt(3.0)
# corner order: (x0,z0), (x1,z0), (x1,z1), (x0,z1)
_CORNERS = np.array([[-1.0, -1.0], [1.0, -1.0], [1.0, 1.0], [-1.0, 1.0]])


def graded_axis(breaks: Sequence[float], h_min: float, ratio: float = 1.1,
                h_max: float | None = None) -> np.ndarray:
    """Grid coordinates through ``breaks`` with spacing ``h_min`` at each
    breakpoint, growing geometrically by ``ratio`` up to ``h_max``."""
    h_max = max(h_max or np.inf, h_min)
    nodes = [float(breaks[0])]
    for b0, b1 in zip(breaks[:-1], breaks[1:]):
        half = 0.5 * (b1 - b0)
        steps, s, h = [], 0.0, h_min
        while s + h < half * (1 + 1e-12):
            steps.append(h)
            s += h
            h = min(h * ratio, h_max)
        if not steps:
            steps = [half]
        steps = np.array(steps) * (half / sum(steps))
        full = np.concatenate([steps, steps[::-1]])
        nodes.extend(b0 + np.cumsum(full)[:-1])
        nodes.append(float(b1))
    return np.array(nodes)


def _refine(coords: np.ndarray, times: int) -> np.ndarray:
    for _ in range(times):
        mids = 0.5 * (coords[:-1] + coords[1:])
        coords = np.insert(coords, np.arange(1, len(coords)), mids)
    return coords


@dataclass
class GridField:
    """Nodal displacements on a tensor grid plus per-cell corner stresses.

    ``u`` has shape ``(nz + 1, nx + 1, 2)``; ``corner_stress`` and
    ``corner_strain`` have shape ``(nz, nx, 4, k)`` with components
    ``(11, 22, 12[, 33])`` (tensor shear strain).
    """

    region_set: RegionSet
    xs: np.ndarray
    zs: np.ndarray
    u: np.ndarray
    cell_region: np.ndarray
    corner_strain: np.ndarray = field(repr=False)
    corner_stress: np.ndarray = field(repr=False)
    base_reaction: float = 0.0
    applied_load: float = 0.0

    @property
    def coordinate_system(self) -> str:
        return self.region_set.coordinate_system

    @property
    def spacing(self) -> tuple[np.ndarray, np.ndarray]:
        return np.diff(self.xs), np.diff(self.zs)

    def nodal(self, quantity: str = "stress", region: str | None = None) -> np.ndarray:
        """Corner values averaged at nodes over the cells of ``region``
        (all cells if ``None``); NaN at nodes the region does not touch."""
        corner = self.corner_stress if quantity == "stress" else self.corner_strain
        nz, nx = self.cell_region.shape
        total = np.zeros((nz + 1, nx + 1, corner.shape[-1]))
        count = np.zeros((nz + 1, nx + 1, 1))
        sel = np.ones((nz, nx), bool) if region is None else (
            self.cell_region == self.region_set.index(region))
        w = sel[..., None].astype(float)
        for c, (dz, dx) in enumerate([(0, 0), (0, 1), (1, 1), (1, 0)]):
            total[dz:dz + nz, dx:dx + nx] += corner[:, :, c] * w
            count[dz:dz + nz, dx:dx + nx] += w
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(count > 0, total / count, np.nan)

    def _cells(self, points: np.ndarray, region: str | None):
        tol = 1e-9 * self.region_set.extent
        nx, nz = len(self.xs) - 1, len(self.zs) - 1
        out_x = np.empty(len(points), int)
        out_z = np.empty(len(points), int)
        want = None if region is None else self.region_set.index(region)
        for i, (x, z) in enumerate(points):
            ix = int(np.clip(np.searchsorted(self.xs, x, side="right") - 1, 0, nx - 1))
            iz = int(np.clip(np.searchsorted(self.zs, z, side="right") - 1, 0, nz - 1))
            cands = [(iz, ix)]
            for dz in (0, -1, 1):
                for dx in (0, -1, 1):
                    jz, jx = iz + dz, ix + dx
                    if 0 <= jz < nz and 0 <= jx < nx and (jz, jx) not in cands:
                        if (self.xs[jx] - tol <= x <= self.xs[jx + 1] + tol
                                and self.zs[jz] - tol <= z <= self.zs[jz + 1] + tol):
                            cands.append((jz, jx))
            if want is not None:
                cands = [c for c in cands if self.cell_region[c] == want]
                if not cands:
                    raise GeometryError(f"point ({x}, {z}) is not in region {region}")
            out_z[i], out_x[i] = cands[0]
        return out_z, out_x

    def _interp(self, nodal: np.ndarray, points: Any, region: str | None) -> np.ndarray:
        p = np.atleast_2d(np.asarray(points, dtype=float))
        iz, ix = self._cells(p, region)
        x0, x1 = self.xs[ix], self.xs[ix + 1]
        z0, z1 = self.zs[iz], self.zs[iz + 1]
        s = np.clip((p[:, 0] - x0) / (x1 - x0), 0.0, 1.0)[:, None]
        t = np.clip((p[:, 1] - z0) / (z1 - z0), 0.0, 1.0)[:, None]
        return ((1 - s) * (1 - t) * nodal[iz, ix] + s * (1 - t) * nodal[iz, ix + 1]
                + s * t * nodal[iz + 1, ix + 1] + (1 - s) * t * nodal[iz + 1, ix])

    def displacement_at(self, points: Any) -> np.ndarray:
        return self._interp(self.u, points, None)

    def stress_at(self, points: Any, region: str | None = None) -> np.ndarray:
        return self._interp(self.nodal("stress", region), points, region)

    def strain_at(self, points: Any, region: str | None = None) -> np.ndarray:
        return self._interp(self.nodal("strain", region), points, region)


def _material_matrix(lam: np.ndarray, mu: np.ndarray, axisymmetric: bool) -> np.ndarray:
    """Constitutive matrices for strain vectors (11, 22, gamma_12[, 33])."""
    k = 4 if axisymmetric else 3
    D = np.zeros(lam.shape + (k, k))
    D[..., 0, 0] = D[..., 1, 1] = lam + 2 * mu
    D[..., 0, 1] = D[..., 1, 0] = lam
    D[..., 2, 2] = mu
    if axisymmetric:
        D[..., 3, 3] = lam + 2 * mu
        D[..., 0, 3] = D[..., 3, 0] = D[..., 1, 3] = D[..., 3, 1] = lam
    return D


def _b_matrix(xi, eta, hx, hz, r, axisymmetric):
    """Strain-displacement matrices for all cells at local point (xi, eta)."""
    sx, sz = _CORNERS[:, 0], _CORNERS[:, 1]
    N = 0.25 * (1 + sx * xi) * (1 + sz * eta)
    dNx = (0.25 * sx * (1 + sz * eta))[None, :] * (2.0 / hx)[:, None]
    dNz = (0.25 * sz * (1 + sx * xi))[None, :] * (2.0 / hz)[:, None]
    ne = len(hx)
    B = np.zeros((ne, 4 if axisymmetric else 3, 8))
    B[:, 0, 0::2] = dNx
    B[:, 1, 1::2] = dNz
    B[:, 2, 0::2] = dNz
    B[:, 2, 1::2] = dNx
    if axisymmetric:
        with np.errstate(divide="ignore", invalid="ignore"):
            B[:, 3, 0::2] = N[None, :] / r[:, None]
    return B, N


def fd_solve(problem: PileProblem, resolution: int = 16, grading: float = 1.1,
             bcs: BoundaryConditions | None = None, refine: int = 0) -> GridField:
    """Solve the elasticity problem on a graded structured grid.

    ``resolution`` is the number of cells along the shortest region edge;
    ``refine`` bisects every cell that many times (nested grids for
    convergence studies).
    """
    if resolution < 16:
        raise OracleSetupError(f"resolution must be at least 16 cells per edge, got {resolution}")
    rs = problem.region_set
    axi = rs.coordinate_system == AXISYMMETRIC
    bcs = bcs or problem.bcs
    edges = np.concatenate([np.diff(rs.xs), np.diff(rs.zs)])
    h0 = edges.min() / resolution
    h_max = rs.extent / (4 * resolution)
    xs = _refine(graded_axis(rs.xs, h0, grading, h_max), refine)
    zs = _refine(graded_axis(rs.zs, h0, grading, h_max), refine)
    nx, nz = len(xs) - 1, len(zs) - 1
    n_nodes = (nx + 1) * (nz + 1)

    node = np.arange(n_nodes).reshape(nz + 1, nx + 1)
    conn = np.stack([node[:-1, :-1], node[:-1, 1:], node[1:, 1:], node[1:, :-1]], axis=-1).reshape(-1, 4)
    dofs = np.stack([2 * conn, 2 * conn + 1], axis=-1).reshape(-1, 8)
    hx = np.tile(np.diff(xs), nz)
    hz = np.repeat(np.diff(zs), nx)
    x0 = np.tile(xs[:-1], nz)
    xc = x0 + 0.5 * hx
    zc = np.repeat(zs[:-1], nx) + 0.5 * hz
    cell_region = rs.locate(np.column_stack([xc, zc]))

    lam = np.empty(len(cell_region))
    mu = np.empty(len(cell_region))
    for k, name in enumerate(rs.names):
        m = problem.materials[name]
        lam[cell_region == k] = float(m.lam)
        mu[cell_region == k] = float(m.mu)
    D = _material_matrix(lam, mu, axi)

    K = np.zeros((len(hx), 8, 8))
    for xi in _GAUSS:
        for eta in _GAUSS:
            r = x0 + 0.5 * (xi + 1) * hx
            B, _ = _b_matrix(xi, eta, hx, hz, r, axi)
            w = 0.25 * hx * hz * (r if axi else 1.0)
            K += np.einsum("eki,ekl,elj->eij", B, D, B) * w[:, None, None]
    rows = np.repeat(dofs, 8, axis=1).ravel()
    cols = np.tile(dofs, (1, 8)).ravel()
    n_dof = 2 * n_nodes
    Kg = sp.csr_matrix((K.ravel(), (rows, cols)), shape=(n_dof, n_dof))

    f = np.zeros(n_dof)
    fixed: dict[int, float] = {}
    owner = cell_region.reshape(nz, nx)
    tol = 1e-12 * rs.extent

    def edge_cells(side):
        if side == "top":
            return [(node[0, i], node[0, i + 1], owner[0, i], xs[i], xs[i + 1], (0.0, -1.0)) for i in range(nx)]
        if side == "bottom":
            return [(node[nz, i], node[nz, i + 1], owner[nz - 1, i], xs[i], xs[i + 1], (0.0, 1.0)) for i in range(nx)]
        if side == "axis":
            return [(node[j, 0], node[j + 1, 0], owner[j, 0], 0.0, 0.0, (-1.0, 0.0)) for j in range(nz)]
        return [(node[j, nx], node[j + 1, nx], owner[j, nx - 1], xs[-1], xs[-1], (1.0, 0.0)) for j in range(nz)]

    for side in ("top", "bottom", "axis", "lateral"):
        for na, nb, reg, xa, xb, normal in edge_cells(side):
            bc = bcs.lookup(side, rs.names[reg])
            if bc.kind == TRACTION:
                if side in ("top", "bottom"):
                    length = xb - xa
                    for g in _GAUSS:
                        s = 0.5 * (g + 1)
                        r = xa + s * length
                        w = 0.5 * length * (r if axi else 1.0)
                        for nd, shape in ((na, 1 - s), (nb, s)):
                            f[2 * nd] += w * shape * bc.value[0]
                            f[2 * nd + 1] += w * shape * bc.value[1]
                else:
                    j = np.nonzero(node[:, 0 if side == "axis" else nx] == na)[0][0]
                    length = zs[j + 1] - zs[j]
                    rw = xa if axi else 1.0
                    for nd in (na, nb):
                        f[2 * nd] += 0.5 * length * rw * bc.value[0]
                        f[2 * nd + 1] += 0.5 * length * rw * bc.value[1]
            elif bc.kind == DISPLACEMENT:
                for nd in (na, nb):
                    fixed[2 * nd] = bc.value[0]
                    fixed[2 * nd + 1] = bc.value[1]
            elif bc.kind == ROLLER:
                comp = int(np.argmax(np.abs(normal)))
                for nd in (na, nb):
                    fixed.setdefault(2 * nd + comp, 0.0)

    fixed_dofs = np.array(sorted(fixed), dtype=int)
    _check_rigid_modes(xs, zs, fixed_dofs, axi)
    free = np.setdiff1d(np.arange(n_dof), fixed_dofs)
    u = np.zeros(n_dof)
    u[fixed_dofs] = [fixed[d] for d in fixed_dofs]
    rhs = f[free] - Kg[free][:, fixed_dofs] @ u[fixed_dofs]
    with warnings.catch_warnings():
        warnings.simplefilter("error", spla.MatrixRankWarning)
        try:
            u[free] = spla.spsolve(Kg[free][:, free].tocsc(), rhs)
        except (spla.MatrixRankWarning, RuntimeError) as exc:
            raise OracleSetupError(f"reference system is singular: {exc}") from exc
    if not np.all(np.isfinite(u)):
        raise OracleSetupError("reference solve produced non-finite displacements")

    reaction = Kg @ u - f
    bottom_z = 2 * node[nz, :] + 1
    applied = float(np.sum(f[1::2]))

    # corner strains and stresses, hoop strain on the axis by its limit du_r/dr
    ue = u[dofs]
    n_str = 4 if axi else 3
    strain = np.zeros((len(hx), 4, n_str))
    for c, (xi, eta) in enumerate(_CORNERS):
        r = x0 + 0.5 * (xi + 1) * hx
        B, _ = _b_matrix(xi, eta, hx, hz, r, axi)
        if axi:
            on_axis = r <= tol
            B[on_axis, 3] = B[on_axis, 0]
        strain[:, c] = np.einsum("eki,ei->ek", B, ue)
    stress = np.einsum("ekl,ecl->eck", D, strain)
    strain[..., 2] *= 0.5
    return GridField(
        region_set=rs, xs=xs, zs=zs, u=u.reshape(nz + 1, nx + 1, 2), cell_region=owner,
        corner_strain=strain.reshape(nz, nx, 4, n_str),
        corner_stress=stress.reshape(nz, nx, 4, n_str),
        base_reaction=float(np.sum(reaction[bottom_z])), applied_load=applied,
    )


def _check_rigid_modes(xs, zs, fixed_dofs, axisymmetric):
    X, Z = np.meshgrid(xs, zs)
    X, Z = X.ravel(), Z.ravel()
    zero, one = np.zeros_like(X), np.ones_like(X)
    modes = {"vertical translation": (zero, one)}
    if not axisymmetric:
        modes["horizontal translation"] = (one, zero)
        modes["rotation"] = (-(Z - Z.mean()), X - X.mean())
    for name, (mx, mz) in modes.items():
        vec = np.empty(2 * len(X))
        vec[0::2], vec[1::2] = mx, mz
        if len(fixed_dofs) == 0 or np.max(np.abs(vec[fixed_dofs])) < 1e-12:
            raise OracleSetupError(f"boundary conditions leave the {name} unconstrained")


@dataclass(frozen=True)
class ColumnSolution:
    """Laterally confined layered column; ``z`` is depth, displacement is
    positive downwards and the base (``z = total depth``) is fixed."""

    interfaces: np.ndarray  # depths of layer tops plus the base
    strains: np.ndarray  # per layer
    stress: float

    def displacement(self, z: Any) -> np.ndarray:
        u_nodes = np.concatenate([-np.cumsum((np.diff(self.interfaces) * self.strains)[::-1])[::-1], [0.0]])
        return np.interp(np.asarray(z, dtype=float), self.interfaces, u_nodes)

    def strain(self, z: Any) -> np.ndarray:
        k = np.clip(np.searchsorted(self.interfaces, np.asarray(z, dtype=float), side="right") - 1,
                    0, len(self.strains) - 1)
        return self.strains[k]


def layered_column_exact(q: float, layers: Sequence[tuple[float, float]]) -> ColumnSolution:
    """Column of layers ``(thickness, constrained modulus)`` (top-down) under
    a surface pressure ``q``: ``sigma_zz = -q`` and ``eps_zz = -q / M_k``."""
    thick = np.array([t for t, _ in layers], dtype=float)
    moduli = np.array([m for _, m in layers], dtype=float)
    if np.any(thick <= 0) or np.any(moduli <= 0):
        raise ValueError("layer thicknesses and moduli must be positive")
    interfaces = np.concatenate([[0.0], np.cumsum(thick)])
    return ColumnSolution(interfaces, -q / moduli, -q)


def synth_stress_profile(field: GridField, n_points: int = 2000) -> DataSet:
    """Axial stress at ``n_points`` equally spaced depths on the pile centerline."""
    rs = field.region_set
    if not rs.has_pile:
        raise GeometryError("the field has no pile, so there is no centerline profile")
    if n_points < 2:
        raise ValueError("need at least two profile points")
    z = np.linspace(0.0, rs.pile_length, n_points)
    points = np.column_stack([np.zeros(n_points), z])
    values = field.stress_at(points, "P")[:, 1]
    return DataSet(points, values, "P")
