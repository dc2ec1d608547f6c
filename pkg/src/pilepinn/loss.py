"""Weighted multi-term physics loss and adaptive term weights.

The roster follows a fixed order so that weights and histories line up
between runs: equilibrium residuals (direction 1 for every region, then
direction 2), external boundary mismatches (same layout), displacement
continuity per interface pair, traction continuity per pair and finally the
optional data term.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Mapping, Sequence

import jax.numpy as jnp
import numpy as np

from pilepinn.autodiff import NetJet2, NetworkParams, propagate
from pilepinn.domain import (AXISYMMETRIC, BOUNDARY, INTERFACE, INTERIOR, SIDES,
                             CollocationSet, RegionSet)
from pilepinn.errors import AssemblyError, DataError
from pilepinn.mechanics import (EPS_BAR, ElasticMaterial, StressState, residual_axisymmetric,
                                residual_plane, strain_axisymmetric, strain_plane,
                                stress_from_strain, traction_components)

NTK_FLOOR = 1e-12
NTK_BOUNDS = (1e-3, 1e3)

TRACTION, DISPLACEMENT, ROLLER = "traction", "displacement", "roller"


@dataclass(frozen=True)
class BoundaryCondition:
    """Condition on one external edge.

    ``value`` is the prescribed traction (``traction``) or displacement
    (``displacement``) vector.  A ``roller`` fixes the normal displacement
    and leaves the tangential traction free.
    """

    kind: str
    value: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        if self.kind not in (TRACTION, DISPLACEMENT, ROLLER):
            raise ValueError(f"unknown boundary condition kind {self.kind!r}")


class BoundaryConditions:
    """Boundary conditions per external side, optionally overridden per region."""

    def __init__(self, by_side: Mapping[str, BoundaryCondition],
                 overrides: Mapping[tuple[str, str], BoundaryCondition] | None = None):
        missing = set(SIDES) - set(by_side)
        if missing:
            raise ValueError(f"no boundary condition for sides {sorted(missing)}")
        self.by_side = dict(by_side)
        self.overrides = dict(overrides or {})

    def lookup(self, side: str, region: str) -> BoundaryCondition:
        return self.overrides.get((side, region), self.by_side[side])

    @classmethod
    def standard(cls, region_set: RegionSet, pressure: float, loaded: str = "pile_head"):
        """Truncated-domain conditions for a vertically loaded pile.

        Rollers on the symmetry axis and the far lateral edge, a fixed base,
        and a free top surface except where the downward ``pressure`` acts
        (the pile head, or the whole surface for ``loaded="surface"``).
        """
        load = BoundaryCondition(TRACTION, (0.0, float(pressure)))
        by_side = {
            "top": load if loaded == "surface" else BoundaryCondition(TRACTION),
            "bottom": BoundaryCondition(DISPLACEMENT),
            "axis": BoundaryCondition(ROLLER),
            "lateral": BoundaryCondition(ROLLER),
        }
        overrides = {}
        if loaded == "pile_head":
            if not region_set.has_pile:
                raise ValueError("pile-head loading needs a pile region")
            overrides[("top", "P")] = load
        elif loaded != "surface":
            raise ValueError(f"unknown load rule {loaded!r}")
        return cls(by_side, overrides)


@dataclass(frozen=True)
class DataSet:
    """Observed axial stress ``values`` at ``points`` (inside the pile)."""

    points: np.ndarray
    values: np.ndarray
    region: str = "P"

    def __post_init__(self):
        if len(self.points) == 0 or len(self.points) != len(self.values):
            raise DataError("data set needs matching, non-empty points and values")

    def __len__(self) -> int:
        return len(self.values)


@dataclass(frozen=True)
class LossBreakdown:
    names: tuple[str, ...]
    raw: np.ndarray
    weights: np.ndarray

    @property
    def weighted(self) -> np.ndarray:
        return self.weights * self.raw

    @property
    def total(self) -> float:
        return float(np.sum(self.weighted))

    @property
    def terms(self) -> list[tuple[str, float, float, float]]:
        return [(n, float(r), float(w), float(w * r))
                for n, r, w in zip(self.names, self.raw, self.weights)]

    def __getitem__(self, name: str) -> float:
        return float(self.raw[self.names.index(name)])

    def __len__(self) -> int:
        return len(self.names)


def mse(residuals: Any) -> Any:
    """Mean of squares over all entries."""
    r = jnp.asarray(residuals)
    if r.size == 0:
        raise AssemblyError("mean squared error of an empty residual list")
    return jnp.mean(jnp.square(r))


@dataclass(frozen=True)
class InputFrame:
    """Separable map from physical coordinates to network inputs.

    Axis ``i`` is affine, ``xi = (x - center) * scale``, when ``delta[i]`` is
    infinite; otherwise it is stretched around ``anchor[i]``,
    ``xi = scale * (asinh((x - anchor) / delta) - center)``, which spends
    more of the input range close to the anchor.
    """

    center: np.ndarray
    scale: np.ndarray
    anchor: np.ndarray
    delta: np.ndarray

    def apply(self, x: Any) -> tuple[Any, Any, Any]:
        """Inputs and the first and second derivatives of each axis map."""
        cols, d1, d2 = [], [], []
        for i in range(2):
            xi = x[:, i]
            c, s = float(self.center[i]), float(self.scale[i])
            if np.isinf(self.delta[i]):
                cols.append((xi - c) * s)
                d1.append(jnp.full_like(xi, s))
                d2.append(jnp.zeros_like(xi))
            else:
                dx, dl = xi - float(self.anchor[i]), float(self.delta[i])
                r2 = dl * dl + dx * dx
                cols.append(s * (jnp.arcsinh(dx / dl) - c))
                d1.append(s / jnp.sqrt(r2))
                d2.append(-s * dx / (r2 * jnp.sqrt(r2)))
        return jnp.stack(cols, axis=-1), jnp.stack(d1, axis=-1), jnp.stack(d2, axis=-1)


def input_frame(region_set: RegionSet, name: str, gain: float = 1.0,
                stretch: tuple[float, float] | None = None) -> InputFrame:
    """Map a region's bounding box into [-1, 1]^2.

    Without ``stretch`` the map is isotropic (the longer side spans the
    range).  ``stretch = (sx, sz)`` stretches soil regions of a pile problem
    around the pile edge ``x = a`` and tip ``z = l0`` with widths ``sx * a``
    and ``sz * a``; each stretched axis is then normalized on its own.
    """
    boxes = region_set.region(name).boxes
    lo = np.array([min(b.x0 for b in boxes), min(b.z0 for b in boxes)])
    hi = np.array([max(b.x1 for b in boxes), max(b.z1 for b in boxes)])
    center = 0.5 * (lo + hi)
    scale = np.full(2, 2.0 * gain / np.max(hi - lo))
    anchor = np.zeros(2)
    delta = np.full(2, np.inf)
    if stretch is not None and region_set.has_pile and region_set.region(name).role == "soil":
        a = region_set.pile_radius
        anchor = np.array([a, region_set.pile_length])
        for i, factor in enumerate(stretch):
            if factor is None or not np.isfinite(factor):
                continue
            if not factor > 0:
                raise ValueError(f"stretch factors must be positive, got {stretch}")
            delta[i] = factor * a
            g_lo = np.arcsinh((lo[i] - anchor[i]) / delta[i])
            g_hi = np.arcsinh((hi[i] - anchor[i]) / delta[i])
            center[i] = 0.5 * (g_lo + g_hi)
            scale[i] = 2.0 * gain / (g_hi - g_lo)
    return InputFrame(center, scale, anchor, delta)


def field_jet(nets: Sequence[NetworkParams], x: Any, order: int,
              frame: InputFrame | tuple[Any, Any] | None = None) -> NetJet2:
    """Jet of a two-component field made of one or more networks.

    With a ``frame`` the networks see the mapped inputs and the derivatives
    are returned with respect to ``x``.  A ``(center, scale)`` pair stands for
    an affine frame.
    """
    if frame is not None and not isinstance(frame, InputFrame):
        frame = InputFrame(np.asarray(frame[0], float), np.asarray(frame[1], float),
                           np.zeros(2), np.full(2, np.inf))
    g1 = g2 = None
    if frame is not None:
        x, g1, g2 = frame.apply(jnp.asarray(x))
    values, grads, hesses = [], [], []
    for net in nets:
        value, g, h = propagate(net, x, order=order)
        values.append(value)
        grads.append(jnp.stack(g, axis=-1))
        if order >= 2:
            hesses.append(jnp.stack([jnp.stack([h[(0, 0)], h[(0, 1)]], axis=-1),
                                     jnp.stack([h[(0, 1)], h[(1, 1)]], axis=-1)], axis=-2))
    value = jnp.concatenate(values, axis=-1)
    grad = jnp.concatenate(grads, axis=-2)
    hess = jnp.concatenate(hesses, axis=-3) if order >= 2 else None
    if frame is not None:
        # chain rule for a separable map: H_x = g'_i g'_j H_xi + delta_ij g''_i grad_xi
        if hess is not None:
            hess = (hess * g1[:, None, :, None] * g1[:, None, None, :]
                    + jnp.eye(2) * (grad * g2[:, None, :])[..., None])
        grad = grad * g1[:, None, :]
    return NetJet2(value, grad, hess)


class LossPlan:
    """Static description of every loss term over fixed collocation points.

    :meth:`terms` is a pure function of the networks and materials and can be
    traced and differentiated.
    """

    def __init__(self, region_set: RegionSet, collocation: CollocationSet,
                 bcs: BoundaryConditions, eps_bar: float = EPS_BAR,
                 data: DataSet | None = None, normalize_inputs: bool = True,
                 modulus_scaled_residuals: bool = False, input_gain: float = 1.0,
                 stretch: tuple[float, float] | None = None):
        if tuple(collocation.region_names) != region_set.names:
            raise AssemblyError("collocation set was sampled for different regions")
        self.region_set = region_set
        self.axisymmetric = region_set.coordinate_system == AXISYMMETRIC
        self.eps_bar = float(eps_bar)
        self.modulus_scaled_residuals = modulus_scaled_residuals
        self.regions = region_set.names
        self.frames = {n: input_frame(region_set, n, input_gain, stretch) if normalize_inputs else None
                       for n in self.regions}
        self.pairs = region_set.pairs()
        d1 = "r" if self.axisymmetric else "x"
        names = ([f"pde_{d1}:{r}" for r in self.regions] + [f"pde_z:{r}" for r in self.regions]
                 + [f"bc_{d1}:{r}" for r in self.regions] + [f"bc_z:{r}" for r in self.regions]
                 + [f"cont_u:{a}|{b}" for a, b in self.pairs]
                 + [f"cont_t:{a}|{b}" for a, b in self.pairs])
        if data is not None:
            names.append(f"data_szz:{data.region}")
        self.names = tuple(names)

        pts = collocation.points
        self._interior = {}
        self._first_order = {}
        self._bnd = {}
        for name in self.regions:
            sel = collocation.mask(INTERIOR, name)
            if not np.any(sel):
                raise AssemblyError(f"term pde_*:{name} has no interior points")
            self._interior[name] = jnp.asarray(pts[sel])
            sel = collocation.mask(BOUNDARY, name)
            if not np.any(sel):
                raise AssemblyError(f"term bc_*:{name} has no boundary points")
            disp = np.zeros((sel.sum(), 2), dtype=bool)
            target = np.zeros((sel.sum(), 2))
            for i, (side_ix, normal) in enumerate(zip(collocation.side[sel], collocation.normal[sel])):
                bc = bcs.lookup(SIDES[side_ix], name)
                if bc.kind == DISPLACEMENT:
                    disp[i] = True
                    target[i] = bc.value
                elif bc.kind == TRACTION:
                    target[i] = bc.value
                else:
                    disp[i, int(np.argmax(np.abs(normal)))] = True
            self._bnd[name] = (jnp.asarray(collocation.normal[sel]), jnp.asarray(disp),
                               jnp.asarray(target))
            self._first_order[name] = [("bnd", pts[sel])]

        self._pair_normals = []
        for a, b in self.pairs:
            sel = collocation.mask(INTERFACE, a, b)
            if not np.any(sel):
                raise AssemblyError(f"terms cont_*:{a}|{b} have no interface points")
            key = f"{a}|{b}"
            self._first_order[a].append((key, pts[sel]))
            self._first_order[b].append((key, pts[sel]))
            self._pair_normals.append(jnp.asarray(collocation.normal[sel]))

        self.data = data
        if data is not None:
            if data.region not in self.regions:
                raise DataError(f"data region {data.region!r} does not exist")
            factors = region_set.domain_factor(data.region, np.asarray(data.points))
            if np.any(np.atleast_1d(factors) < 0):
                raise DataError(f"data points lie outside region {data.region}")
            self._first_order[data.region].append(("data", np.asarray(data.points)))
            self._data_values = jnp.asarray(data.values)

        # one batched first-order evaluation per region
        self._fo_points = {}
        self._fo_slices = {}
        for name, chunks in self._first_order.items():
            offset = 0
            slices = {}
            for key, p in chunks:
                slices[key] = slice(offset, offset + len(p))
                offset += len(p)
            self._fo_points[name] = jnp.asarray(np.concatenate([p for _, p in chunks]))
            self._fo_slices[name] = slices

    def __len__(self) -> int:
        return len(self.names)

    def _stress(self, mat: ElasticMaterial, jet: NetJet2, x) -> StressState:
        if self.axisymmetric:
            eps = strain_axisymmetric(jet, x[:, 0], self.eps_bar)
        else:
            eps = strain_plane(jet)
        return stress_from_strain(mat, eps)

    def terms(self, nets: Mapping[str, Sequence[NetworkParams]],
              materials: Mapping[str, ElasticMaterial]) -> Any:
        """Raw (unweighted) term values in roster order."""
        return jnp.stack([mse(r) for r in self.residuals(nets, materials)])

    def residuals(self, nets: Mapping[str, Sequence[NetworkParams]],
                  materials: Mapping[str, ElasticMaterial]) -> list:
        """Residual vectors of every term in roster order; each term is their mean square."""
        pde1, pde2, bc1, bc2 = [], [], [], []
        fo = {}
        for name in self.regions:
            mat = materials[name]
            x = self._interior[name]
            jet = field_jet(nets[name], x, order=2, frame=self.frames[name])
            if self.axisymmetric:
                res = residual_axisymmetric(mat, jet, x[:, 0], self.eps_bar)
            else:
                res = residual_plane(mat, jet)
            scale = 1.0 / mat.E if self.modulus_scaled_residuals else 1.0
            pde1.append(scale * res.first)
            pde2.append(scale * res.second)

            xf = self._fo_points[name]
            jet = field_jet(nets[name], xf, order=1, frame=self.frames[name])
            sig = self._stress(mat, jet, xf)
            fo[name] = (xf, jet, sig)

            s = self._fo_slices[name]["bnd"]
            normal, disp, target = self._bnd[name]
            t1, t2 = traction_components(_slice_stress(sig, s), normal)
            u = jet.value[s]
            r1 = jnp.where(disp[:, 0], u[:, 0], t1) - target[:, 0]
            r2 = jnp.where(disp[:, 1], u[:, 1], t2) - target[:, 1]
            bc1.append(r1)
            bc2.append(r2)

        cont_u, cont_t = [], []
        for (a, b), normal in zip(self.pairs, self._pair_normals):
            key = f"{a}|{b}"
            sa, sb = self._fo_slices[a][key], self._fo_slices[b][key]
            ua, ub = fo[a][1].value[sa], fo[b][1].value[sb]
            cont_u.append(jnp.ravel(ua - ub))
            ta = traction_components(_slice_stress(fo[a][2], sa), normal)
            tb = traction_components(_slice_stress(fo[b][2], sb), normal)
            cont_t.append(jnp.ravel(jnp.stack([ta[0] - tb[0], ta[1] - tb[1]])))

        out = pde1 + pde2 + bc1 + bc2 + cont_u + cont_t
        if self.data is not None:
            sig = fo[self.data.region][2]
            s = self._fo_slices[self.data.region]["data"]
            out.append(sig.s22[s] - self._data_values)
        return out

    def breakdown(self, nets, materials, weights: Any = None) -> LossBreakdown:
        raw = np.asarray(self.terms(nets, materials))
        return LossBreakdown(self.names, raw, _weights(weights, self.names))


def _slice_stress(sig: StressState, s: slice) -> StressState:
    return StressState(sig.s11[s], sig.s22[s], sig.s12[s],
                       None if sig.s33 is None else sig.s33[s])


def _weights(weights: Any, names: Sequence[str]) -> np.ndarray:
    if weights is None:
        return np.ones(len(names))
    if isinstance(weights, Mapping):
        return np.array([float(weights.get(n, 1.0)) for n in names])
    w = np.asarray(weights, dtype=float)
    if w.shape != (len(names),):
        raise AssemblyError(f"expected {len(names)} weights, got shape {w.shape}")
    return w


def assemble_forward_loss(nets, region_set: RegionSet, materials, collocation: CollocationSet,
                          bcs: BoundaryConditions, weights: Any = None,
                          eps_bar: float = EPS_BAR) -> LossBreakdown:
    """Evaluate the forward-problem loss terms for the given networks."""
    plan = LossPlan(region_set, collocation, bcs, eps_bar)
    return plan.breakdown(nets, materials, weights)


def assemble_inverse_loss(nets, region_set: RegionSet, materials, collocation: CollocationSet,
                          bcs: BoundaryConditions, data: DataSet, weights: Any = None,
                          eps_bar: float = EPS_BAR) -> LossBreakdown:
    """Forward loss plus the axial-stress data mismatch."""
    plan = LossPlan(region_set, collocation, bcs, eps_bar, data=data)
    return plan.breakdown(nets, materials, weights)


def ntk_weights(traces: Any, previous: Any = None) -> np.ndarray:
    """Weights ``mean(T) / T_i`` from per-term gradient traces, clamped.

    When every trace is below the floor the previous weights are returned
    unchanged (ones if there are none).
    """
    T = np.asarray(traces, dtype=float)
    if np.all(T < NTK_FLOOR):
        return np.ones_like(T) if previous is None else np.asarray(previous, dtype=float)
    lam = T.mean() / np.maximum(T, NTK_FLOOR)
    return np.clip(lam, *NTK_BOUNDS)


def ntk_update(term_gradients: Any, previous: Any = None) -> np.ndarray:
    """Weights from per-term parameter gradients (one row per term).

    The trace of each term's tangent kernel is approximated by the squared
    norm of its gradient.
    """
    g = np.asarray(term_gradients, dtype=float)
    return ntk_weights(np.sum(g * g, axis=1), previous)
