"""Physical pile-soil boundary value problems and their nondimensional form."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Mapping, Sequence

from pilepinn.domain import AXISYMMETRIC, RegionSet
from pilepinn.errors import ConfigurationError
from pilepinn.loss import BoundaryConditions
from pilepinn.mechanics import EPS_BAR, ElasticMaterial


@dataclass(frozen=True)
class Scales:
    """Reference quantities: lengths by ``length``, stresses by ``stress``,
    moduli by ``modulus``; displacements by ``stress * length / modulus``."""

    length: float
    stress: float
    modulus: float

    @property
    def displacement(self) -> float:
        return self.stress * self.length / self.modulus


@dataclass(frozen=True)
class PileProblem:
    """Region layout, one material per region and a downward surface load.

    ``pressure`` is the vertical traction (Pa) applied on the pile head when
    ``load_rule == "pile_head"`` or on the whole top surface when it is
    ``"surface"``.
    """

    region_set: RegionSet
    materials: Mapping[str, ElasticMaterial]
    pressure: float
    load_rule: str = "pile_head"
    eps_bar: float = EPS_BAR

    def __post_init__(self):
        missing = set(self.region_set.names) - set(self.materials)
        extra = set(self.materials) - set(self.region_set.names)
        if missing or extra:
            raise ConfigurationError(
                f"materials must cover exactly the regions {self.region_set.names}"
                f" (missing {sorted(missing)}, unknown {sorted(extra)})")
        if self.load_rule not in ("pile_head", "surface"):
            raise ConfigurationError(f"unknown load rule {self.load_rule!r}")
        if self.load_rule == "pile_head" and not self.region_set.has_pile:
            raise ConfigurationError("pile-head load needs a pile region")

    @classmethod
    def pile(cls, coordinate_system: str, pile_diameter: float, pile_length: float,
             width: float, depth: float, pile: ElasticMaterial,
             soils: Sequence[ElasticMaterial], load: float,
             layer_thicknesses: Sequence[float] = (), eps_bar: float = EPS_BAR) -> "PileProblem":
        """Pile of diameter (wall thickness) ``d0`` under a head load ``Q``.

        ``load`` is a force (N) for the cylindrical pile and a line load
        (N/m) for the plane-strain wall; the head pressure is ``Q / (pi a^2)``
        or ``Q / d0``.
        """
        a = 0.5 * pile_diameter
        rs = RegionSet.build(coordinate_system, width, depth, layer_thicknesses, a, pile_length)
        if len(soils) != len(rs.regions) - 1:
            raise ConfigurationError(f"need {len(rs.regions) - 1} soil materials, got {len(soils)}")
        materials = {"P": pile}
        materials.update({f"S{k + 1}": m for k, m in enumerate(soils)})
        if coordinate_system == AXISYMMETRIC:
            pressure = load / (math.pi * a * a)
        else:
            pressure = load / pile_diameter
        return cls(rs, materials, pressure, "pile_head", eps_bar)

    @classmethod
    def column(cls, coordinate_system: str, width: float,
               layers: Sequence[tuple[float, ElasticMaterial]], pressure: float,
               eps_bar: float = EPS_BAR) -> "PileProblem":
        """Layered soil column under a uniform surface pressure."""
        thicknesses = [t for t, _ in layers]
        rs = RegionSet.build(coordinate_system, width, sum(thicknesses), thicknesses)
        materials = {f"S{k + 1}": m for k, (_, m) in enumerate(layers)}
        return cls(rs, materials, pressure, "surface", eps_bar)

    @property
    def coordinate_system(self) -> str:
        return self.region_set.coordinate_system

    @property
    def bcs(self) -> BoundaryConditions:
        return BoundaryConditions.standard(self.region_set, self.pressure,
                                           "surface" if self.load_rule == "surface" else "pile_head")

    @property
    def trainable_regions(self) -> list[str]:
        return [n for n in self.region_set.names if self.materials[n].trainable]

    def scales(self) -> Scales:
        modulus = max(float(m.E) for m in self.materials.values())
        stress = self.pressure if self.pressure > 0 else modulus
        return Scales(self.region_set.depth, stress, modulus)

    def nondimensional(self) -> "PileProblem":
        """Same problem in reference units; ``eps_bar`` already refers to them."""
        s = self.scales()
        materials = {n: ElasticMaterial(float(m.E) / s.modulus, m.nu, m.trainable)
                     for n, m in self.materials.items()}
        return replace(self, region_set=self.region_set.scaled(s.length),
                       materials=materials, pressure=self.pressure / s.stress)

    def with_moduli(self, moduli: Mapping[str, float]) -> "PileProblem":
        materials = dict(self.materials)
        for name, E in moduli.items():
            materials[name] = materials[name].with_modulus(float(E))
        return replace(self, materials=materials)
