"""Region geometry, domain factors, composite fields and collocation sampling.

The computational rectangle ``[0, width] x [0, depth]`` (``z`` is depth) is
cut by every geometric breakpoint into a small grid of cells.  Each cell
belongs to exactly one region: the pile ``P`` (``x <= a``, ``z <= l0``) or the
soil layer ``Sk`` spanning its depth.  Region boundaries are the cell edges
whose neighbor belongs elsewhere, which yields external edges (top, bottom,
axis, lateral) and material interfaces without any polygon clipping.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Mapping, Sequence

import numpy as np

from pilepinn.errors import GeometryError

AXISYMMETRIC = "axisymmetric"
PLANE_STRAIN = "plane_strain"
COORDINATE_SYSTEMS = (AXISYMMETRIC, PLANE_STRAIN)

SIDES = ("top", "bottom", "axis", "lateral")
_SIDE_NORMALS = {
    "top": (0.0, -1.0),
    "bottom": (0.0, 1.0),
    "axis": (-1.0, 0.0),
    "lateral": (1.0, 0.0),
}

INTERIOR, BOUNDARY, INTERFACE = 0, 1, 2


@dataclass(frozen=True)
class Box:
    x0: float
    x1: float
    z0: float
    z1: float

    @property
    def area(self) -> float:
        return (self.x1 - self.x0) * (self.z1 - self.z0)


@dataclass(frozen=True)
class Region:
    name: str
    role: str  # "pile" or "soil"
    layer: int | None
    boxes: tuple[Box, ...]

    @property
    def area(self) -> float:
        return sum(b.area for b in self.boxes)


@dataclass(frozen=True)
class Segment:
    """Straight piece of a region boundary.

    ``other`` is the neighboring region for interfaces and ``None`` on the
    external boundary, where ``side`` names the edge of the rectangle.  The
    normal points out of ``region``.
    """

    region: str
    other: str | None
    side: str | None
    start: tuple[float, float]
    end: tuple[float, float]
    normal: tuple[float, float]

    @property
    def length(self) -> float:
        return math.hypot(self.end[0] - self.start[0], self.end[1] - self.start[1])


@dataclass(frozen=True)
class RegionSet:
    coordinate_system: str
    width: float
    depth: float
    layer_thicknesses: tuple[float, ...]
    pile_radius: float | None
    pile_length: float | None
    regions: tuple[Region, ...]
    xs: np.ndarray = field(repr=False)
    zs: np.ndarray = field(repr=False)
    owner: np.ndarray = field(repr=False)  # (nz_cells, nx_cells) region index
    boundary: tuple[Segment, ...] = field(repr=False)
    interfaces: tuple[Segment, ...] = field(repr=False)

    @classmethod
    def build(cls, coordinate_system: str, width: float, depth: float,
              layer_thicknesses: Sequence[float] = (), pile_radius: float | None = None,
              pile_length: float | None = None) -> "RegionSet":
        """Half-domain of a vertically loaded pile in stacked soil layers.

        ``width`` is ``r_T`` (axisymmetric) or the half-width (plane strain),
        ``layer_thicknesses`` run top-down and must add up to ``depth``; an
        empty sequence means one homogeneous layer.  Without a pile the set
        describes a layered column.
        """
        if coordinate_system not in COORDINATE_SYSTEMS:
            raise GeometryError(f"unknown coordinate system {coordinate_system!r}")
        if not (width > 0 and depth > 0):
            raise GeometryError("domain width and depth must be positive")
        layers = tuple(float(t) for t in layer_thicknesses) or (float(depth),)
        if any(t <= 0 for t in layers):
            raise GeometryError(f"layer thicknesses must be positive, got {layers}")
        if not math.isclose(sum(layers), depth, rel_tol=1e-9):
            raise GeometryError(f"layer thicknesses {layers} do not add up to depth {depth}")
        has_pile = pile_radius is not None or pile_length is not None
        if has_pile:
            if pile_radius is None or pile_length is None:
                raise GeometryError("pile needs both radius/half-width and length")
            if not (0 < pile_radius < width):
                raise GeometryError("pile radius must lie strictly inside the domain width")
            if not (0 < pile_length < depth):
                raise GeometryError("pile must end above the bottom of the domain")

        layer_bottoms = np.cumsum(layers)
        layer_bottoms[-1] = depth
        xs = {0.0, float(width)}
        zs = {0.0, float(depth), *map(float, layer_bottoms)}
        if has_pile:
            xs.add(float(pile_radius))
            zs.add(float(pile_length))
        xs = np.array(sorted(xs))
        zs = np.array(sorted(zs))

        names = (["P"] if has_pile else []) + [f"S{k + 1}" for k in range(len(layers))]
        owner = np.empty((len(zs) - 1, len(xs) - 1), dtype=int)
        for iz in range(len(zs) - 1):
            zc = 0.5 * (zs[iz] + zs[iz + 1])
            layer = int(np.searchsorted(layer_bottoms, zc))
            for ix in range(len(xs) - 1):
                xc = 0.5 * (xs[ix] + xs[ix + 1])
                if has_pile and xc < pile_radius and zc < pile_length:
                    owner[iz, ix] = 0
                else:
                    owner[iz, ix] = layer + (1 if has_pile else 0)

        regions = []
        for k, name in enumerate(names):
            boxes = tuple(
                Box(float(xs[ix]), float(xs[ix + 1]), float(zs[iz]), float(zs[iz + 1]))
                for iz, ix in zip(*np.nonzero(owner == k))
            )
            if not boxes:
                raise GeometryError(f"region {name} is empty")
            role = "pile" if name == "P" else "soil"
            layer = None if role == "pile" else int(name[1:])
            regions.append(Region(name, role, layer, boxes))

        boundary, interfaces = _segments(xs, zs, owner, names)
        return cls(coordinate_system, float(width), float(depth), layers,
                   None if not has_pile else float(pile_radius),
                   None if not has_pile else float(pile_length),
                   tuple(regions), xs, zs, owner, boundary, interfaces)

    # ------------------------------------------------------------------
    @property
    def names(self) -> tuple[str, ...]:
        return tuple(r.name for r in self.regions)

    @property
    def has_pile(self) -> bool:
        return self.pile_radius is not None

    @property
    def extent(self) -> float:
        return max(self.width, self.depth)

    @property
    def tolerance(self) -> float:
        return 1e-12 * self.extent

    def region(self, name: str) -> Region:
        for r in self.regions:
            if r.name == name:
                return r
        raise KeyError(name)

    def index(self, name: str) -> int:
        return self.names.index(name)

    def pairs(self) -> list[tuple[str, str]]:
        """Interface pairs in roster order (first region earlier in ``names``)."""
        seen = []
        for seg in self.interfaces:
            key = (seg.region, seg.other)
            if key not in seen:
                seen.append(key)
        order = {n: i for i, n in enumerate(self.names)}
        return sorted(seen, key=lambda p: (order[p[0]], order[p[1]]))

    def segments_of(self, name: str) -> list[Segment]:
        """All boundary pieces of a region: external edges and interfaces."""
        out = [s for s in self.boundary if s.region == name]
        for s in self.interfaces:
            if name in (s.region, s.other):
                out.append(s)
        return out

    def scaled(self, length: float) -> "RegionSet":
        """Same layout with every length divided by ``length``."""
        f = 1.0 / length
        return RegionSet.build(
            self.coordinate_system, self.width * f, self.depth * f,
            [t * f for t in self.layer_thicknesses],
            None if self.pile_radius is None else self.pile_radius * f,
            None if self.pile_length is None else self.pile_length * f,
        )

    def locate(self, points: Any) -> np.ndarray:
        """Region index of the cell containing each point (ties go right/down)."""
        p = np.atleast_2d(np.asarray(points, dtype=float))
        ix = np.clip(np.searchsorted(self.xs, p[:, 0], side="right") - 1, 0, len(self.xs) - 2)
        iz = np.clip(np.searchsorted(self.zs, p[:, 1], side="right") - 1, 0, len(self.zs) - 2)
        return self.owner[iz, ix]

    def _touching(self, coords: np.ndarray, grid: np.ndarray):
        """Up to two cell indices per coordinate whose closure contains it."""
        tol = self.tolerance
        n = len(grid) - 1
        base = np.clip(np.searchsorted(grid, coords, side="right") - 1, 0, n - 1)
        lo = np.where(np.abs(coords - grid[base]) <= tol, base - 1, -1)
        hi = np.where(np.abs(coords - grid[base + 1]) <= tol, base + 1, -1)
        cand = np.stack([base, lo, hi], axis=1)
        valid = (cand >= 0) & (cand < n)
        return np.clip(cand, 0, n - 1), valid

    def domain_factors(self, points: Any) -> np.ndarray:
        """Factors for every region, shape ``(n_points, n_regions)``.

        +1 strictly inside a region, 0 on one of its material interfaces and
        -1 elsewhere.  The outer edges of the computational rectangle count as
        inside the region they bound, so the factors still partition unity
        there.
        """
        p = np.atleast_2d(np.asarray(points, dtype=float))
        tol = self.tolerance
        inside = ((p[:, 0] >= -tol) & (p[:, 0] <= self.width + tol)
                  & (p[:, 1] >= -tol) & (p[:, 1] <= self.depth + tol))
        cx, vx = self._touching(p[:, 0], self.xs)
        cz, vz = self._touching(p[:, 1], self.zs)
        n_reg = len(self.regions)
        hits = np.zeros((len(p), n_reg), dtype=int)
        total = np.zeros(len(p), dtype=int)
        for a in range(3):
            for b in range(3):
                ok = vx[:, a] & vz[:, b]
                own = self.owner[cz[:, b], cx[:, a]]
                total += ok
                for k in range(n_reg):
                    hits[:, k] += ok & (own == k)
        factors = np.where(hits == total[:, None], 1, np.where(hits == 0, -1, 0))
        factors[~inside] = -1
        return factors

    def domain_factor(self, name: str, points: Any) -> np.ndarray | int:
        p = np.asarray(points, dtype=float)
        out = self.domain_factors(p)[:, self.index(name)]
        return int(out[0]) if p.ndim == 1 else out


def _segments(xs, zs, owner, names):
    """Boundary and interface segments from the cell ownership grid."""
    nz, nx = owner.shape
    raw_boundary: dict = {}
    raw_interface: dict = {}

    def add(store, key, fixed, lo, hi):
        store.setdefault(key, []).append((fixed, lo, hi))

    for iz in range(nz):
        for ix in range(nx):
            k = owner[iz, ix]
            # (neighbor index or None, normal, fixed coordinate, span)
            sides = [
                ((iz - 1, ix) if iz > 0 else None, (0.0, -1.0), ("z", zs[iz]), (xs[ix], xs[ix + 1])),
                ((iz + 1, ix) if iz < nz - 1 else None, (0.0, 1.0), ("z", zs[iz + 1]), (xs[ix], xs[ix + 1])),
                ((iz, ix - 1) if ix > 0 else None, (-1.0, 0.0), ("x", xs[ix]), (zs[iz], zs[iz + 1])),
                ((iz, ix + 1) if ix < nx - 1 else None, (1.0, 0.0), ("x", xs[ix + 1]), (zs[iz], zs[iz + 1])),
            ]
            for nb, normal, fixed, span in sides:
                if nb is None:
                    side = next(s for s, nrm in _SIDE_NORMALS.items() if nrm == normal)
                    add(raw_boundary, (k, side, normal), fixed, *span)
                elif owner[nb] != k and k < owner[nb]:
                    add(raw_interface, (k, int(owner[nb]), normal), fixed, *span)

    def merged(pieces):
        pieces = sorted(pieces, key=lambda p: (p[0][0], p[0][1], p[1]))
        out = []
        for fixed, lo, hi in pieces:
            if out and out[-1][0] == fixed and math.isclose(out[-1][2], lo):
                out[-1] = (fixed, out[-1][1], hi)
            else:
                out.append((fixed, lo, hi))
        return out

    def endpoints(fixed, lo, hi):
        axis, value = fixed
        if axis == "z":
            return (float(lo), float(value)), (float(hi), float(value))
        return (float(value), float(lo)), (float(value), float(hi))

    boundary = []
    for (k, side, normal), pieces in sorted(raw_boundary.items(), key=lambda kv: (kv[0][0], SIDES.index(kv[0][1]))):
        for piece in merged(pieces):
            a, b = endpoints(*piece)
            boundary.append(Segment(names[k], None, side, a, b, normal))
    interfaces = []
    for (k, other, normal), pieces in sorted(raw_interface.items()):
        for piece in merged(pieces):
            a, b = endpoints(*piece)
            interfaces.append(Segment(names[k], names[other], None, a, b, normal))
    return tuple(boundary), tuple(interfaces)


# ---------------------------------------------------------------------------
# composite displacement
# ---------------------------------------------------------------------------

def blend_weights(region_set: RegionSet, points: Any) -> np.ndarray:
    """Renormalized blending weights ``Pi_a / sum_b Pi_b`` with ``Pi = (factor + 1) / 2``."""
    pi = 0.5 * (region_set.domain_factors(points) + 1.0)
    total = pi.sum(axis=1)
    if np.any(total <= 0):
        bad = np.atleast_2d(np.asarray(points))[total <= 0][0]
        raise GeometryError(f"point {bad} lies outside every region")
    return pi / total[:, None]


def composite_displacement(fields: Mapping[str, Any], region_set: RegionSet,
                           points: Any) -> np.ndarray:
    """Blend per-region displacement fields into one field.

    ``fields`` maps each region name to a callable returning ``(n, 2)``
    displacements for an ``(n, 2)`` array of points.
    """
    p = np.atleast_2d(np.asarray(points, dtype=float))
    w = blend_weights(region_set, p)
    out = np.zeros((len(p), 2))
    for k, name in enumerate(region_set.names):
        sel = w[:, k] > 0
        if np.any(sel):
            out[sel] += w[sel, k, None] * np.asarray(fields[name](p[sel]))
    return out


# ---------------------------------------------------------------------------
# collocation sampling
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CollocationSet:
    """Tagged sample points.

    ``kind`` is INTERIOR, BOUNDARY or INTERFACE; ``region`` indexes
    ``region_names``; ``other`` is the second region of interface points and
    -1 otherwise; ``side`` indexes :data:`SIDES` for boundary points.
    Normals point out of ``region`` (zero for interior points).
    """

    points: np.ndarray
    kind: np.ndarray
    region: np.ndarray
    other: np.ndarray
    side: np.ndarray
    normal: np.ndarray
    region_names: tuple[str, ...]
    seed: int

    def __len__(self) -> int:
        return len(self.points)

    def mask(self, kind: int, region: str, other: str | None = None) -> np.ndarray:
        sel = (self.kind == kind) & (self.region == self.region_names.index(region))
        if other is not None:
            sel &= self.other == self.region_names.index(other)
        return sel

    def count_for(self, region: str) -> int:
        """Points charged to a region's budget (interface points count for both)."""
        k = self.region_names.index(region)
        return int(np.sum(self.region == k) + np.sum(self.other == k))

    def scaled(self, length: float) -> "CollocationSet":
        return CollocationSet(self.points / length, self.kind, self.region, self.other,
                              self.side, self.normal, self.region_names, self.seed)


def _allocate(total: int, lengths: Sequence[float]) -> np.ndarray:
    """Split ``total`` points over edges proportionally to length.

    Every edge gets at least one point when ``total`` allows it; the rest is
    shared by largest remainder.
    """
    lengths = np.asarray(lengths, dtype=float)
    n = len(lengths)
    base = np.zeros(n, dtype=int)
    if total >= n:
        base[:] = 1
    remaining = total - base.sum()
    share = remaining * lengths / lengths.sum()
    extra = np.floor(share).astype(int)
    leftover = remaining - extra.sum()
    order = np.argsort(-(share - extra), kind="stable")
    extra[order[:leftover]] += 1
    return base + extra


def _near_interfaces(region_set: RegionSet, name: str, n: int, rng) -> np.ndarray:
    """Interior points clustered towards a region's interfaces.

    The offset from the interface is ``band * u**2`` with ``band`` the
    shortest interface segment of the region; points leaving the region are
    redrawn.
    """
    segs = [s for s in region_set.segments_of(name) if s.other is not None]
    k = region_set.index(name)
    band = min(s.length for s in segs)
    lengths = np.array([s.length for s in segs])
    out = np.zeros((0, 2))
    while len(out) < n:
        m = 2 * (n - len(out))
        which = rng.choice(len(segs), size=m, p=lengths / lengths.sum())
        t, u = rng.random(m), rng.random(m)
        start = np.array([segs[i].start for i in which])
        end = np.array([segs[i].end for i in which])
        sign = np.array([1.0 if segs[i].region == name else -1.0 for i in which])
        inward = -sign[:, None] * np.array([segs[i].normal for i in which])
        pts = start + t[:, None] * (end - start) + (band * u * u)[:, None] * inward
        factors = region_set.domain_factors(pts)
        out = np.concatenate([out, pts[factors[:, k] > 0]])
    return out[:n]


def _graded_edge(t: np.ndarray, a: np.ndarray, b: np.ndarray, joints: list[np.ndarray],
                 band: float, fraction: float, rng) -> np.ndarray:
    """Move a ``fraction`` of edge parameters ``t`` next to ends that touch an interface."""
    ends = [k for k, p in enumerate((a, b)) if any(np.allclose(p, j) for j in joints)]
    length = float(np.linalg.norm(b - a))
    n = int(round(fraction * len(t)))
    if not ends or n == 0 or length == 0.0:
        return t
    u = rng.random(n)
    offset = np.minimum(band * u * u / length, 1.0)
    side = np.asarray(ends)[rng.integers(len(ends), size=n)]
    t = t.copy()
    t[:n] = np.where(side == 0, offset, 1.0 - offset)
    return t


def sample_collocation(region_set: RegionSet, counts: int | Mapping[str, int],
                       boundary_fraction: float = 0.5, seed: int = 0,
                       interface_cluster: float = 0.0) -> CollocationSet:
    """Random collocation points, ``ceil(fraction * count)`` of them on boundaries.

    Boundary points are spread uniformly along each region's edges in
    proportion to edge length; the remainder is uniform in the region's
    interior, except that a fraction ``interface_cluster`` of each region's
    interior points is drawn close to its material interfaces.  The same
    fraction of points on an external edge that ends on an interface is
    drawn close to that end, where the stress concentrates.  Points
    falling on an interface are emitted once, tagged with
    both regions and the first region's outward normal.
    """
    if not 0.0 <= boundary_fraction <= 1.0:
        raise GeometryError(f"boundary fraction must lie in [0, 1], got {boundary_fraction}")
    if not 0.0 <= interface_cluster <= 1.0:
        raise GeometryError(f"interface cluster fraction must lie in [0, 1], got {interface_cluster}")
    if isinstance(counts, Mapping):
        count_of = {name: int(counts[name]) for name in region_set.names}
    else:
        count_of = {name: int(counts) for name in region_set.names}
    rng = np.random.default_rng(seed)
    names = region_set.names
    chunks = []

    for name in names:
        region = region_set.region(name)
        count = count_of[name]
        if count <= 0:
            raise GeometryError(f"region {name} needs a positive point count")
        if region.area <= 0:
            raise GeometryError(f"region {name} has zero area")
        n_bnd = math.ceil(boundary_fraction * count)
        n_int = count - n_bnd
        has_interface = any(seg.other is not None for seg in region_set.segments_of(name))
        n_near = int(round(interface_cluster * n_int)) if has_interface else 0
        n_int -= n_near

        areas = np.array([b.area for b in region.boxes])
        which = rng.choice(len(areas), size=n_int, p=areas / areas.sum())
        boxes = np.array([[b.x0, b.x1, b.z0, b.z1] for b in region.boxes])[which]
        u = rng.random((n_int, 2))
        pts = np.column_stack([boxes[:, 0] + u[:, 0] * (boxes[:, 1] - boxes[:, 0]),
                               boxes[:, 2] + u[:, 1] * (boxes[:, 3] - boxes[:, 2])])
        if n_near:
            pts = np.concatenate([pts, _near_interfaces(region_set, name, n_near, rng)])
        k = names.index(name)
        chunks.append((pts, INTERIOR, k, -1, -1, np.zeros((len(pts), 2))))

        segs = region_set.segments_of(name)
        alloc = _allocate(n_bnd, [s.length for s in segs]) if n_bnd else np.zeros(len(segs), int)
        joints = [np.array(p) for s in segs if s.other is not None for p in (s.start, s.end)]
        band = min((s.length for s in segs if s.other is not None), default=0.0)
        for seg, m in zip(segs, alloc):
            if m == 0:
                continue
            t = rng.random(m)
            a, b = np.array(seg.start), np.array(seg.end)
            if seg.other is None and n_near:
                t = _graded_edge(t, a, b, joints, band, interface_cluster, rng)
            pts = a + t[:, None] * (b - a)
            normal = np.tile(seg.normal, (m, 1))
            if seg.other is None:
                chunks.append((pts, BOUNDARY, k, -1, SIDES.index(seg.side), normal))
            else:
                first, second = names.index(seg.region), names.index(seg.other)
                chunks.append((pts, INTERFACE, first, second, -1, normal))

    points = np.concatenate([c[0] for c in chunks])
    sizes = [len(c[0]) for c in chunks]
    return CollocationSet(
        points=points,
        kind=np.repeat([c[1] for c in chunks], sizes).astype(np.int8),
        region=np.repeat([c[2] for c in chunks], sizes).astype(int),
        other=np.repeat([c[3] for c in chunks], sizes).astype(int),
        side=np.repeat([c[4] for c in chunks], sizes).astype(int),
        normal=np.concatenate([c[5] for c in chunks]).astype(float),
        region_names=names,
        seed=seed,
    )
