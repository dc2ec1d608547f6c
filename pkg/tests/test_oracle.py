import numpy as np
import pytest

from pilepinn.domain import AXISYMMETRIC, PLANE_STRAIN, RegionSet
from pilepinn.errors import GeometryError, OracleSetupError
from pilepinn.loss import DISPLACEMENT, ROLLER, TRACTION, BoundaryCondition, BoundaryConditions
from pilepinn.mechanics import ElasticMaterial
from pilepinn.oracle import fd_solve, graded_axis, layered_column_exact, synth_stress_profile
from pilepinn.problem import PileProblem

SOIL = ElasticMaterial(1e8, 0.3)


def column(system, layers, q=1e5, width=1.0):
    return PileProblem.column(system, width, layers, q)


@pytest.mark.parametrize("system", [PLANE_STRAIN, AXISYMMETRIC])
def test_homogeneous_column_matches_constrained_compression(system):
    q = 1e5
    problem = column(system, [(2.0, SOIL)], q)
    field = fd_solve(problem)
    z = np.linspace(0.0, 2.0, 9)
    pts = np.column_stack([np.full_like(z, 0.3), z])
    exact = q * (2.0 - z) / float(SOIL.constrained_modulus)
    got = field.displacement_at(pts)[:, 1]
    assert np.max(np.abs(got - exact)) <= 1e-3 * np.max(exact)


@pytest.mark.parametrize("system", [PLANE_STRAIN, AXISYMMETRIC])
def test_layered_column_agrees_with_closed_form(system):
    soft = ElasticMaterial(2e7, 0.3)
    problem = column(system, [(1.0, SOIL), (1.0, soft)])
    field = fd_solve(problem)
    exact = layered_column_exact(1e5, [(1.0, float(SOIL.constrained_modulus)),
                                       (1.0, float(soft.constrained_modulus))])
    z = np.linspace(0.0, 2.0, 21)
    got = field.displacement_at(np.column_stack([np.full_like(z, 0.5), z]))[:, 1]
    assert np.max(np.abs(got - exact.displacement(z))) <= 5e-3 * np.max(np.abs(exact.displacement(z)))


def test_zero_load_gives_zero_field():
    field = fd_solve(column(PLANE_STRAIN, [(1.0, SOIL)], q=0.0))
    assert np.all(field.u == 0.0)
    assert np.all(field.corner_stress == 0.0)


def test_layered_exact_examples():
    one = layered_column_exact(1.0, [(1.0, 1.0)])
    # depth axis points down, so settlement is positive
    assert float(one.displacement(0.0)) == 1.0
    assert float(one.displacement(1.0)) == 0.0
    two = layered_column_exact(1.0, [(0.5, 2.0), (0.5, 1.0)])
    assert float(two.displacement(0.0)) == pytest.approx(0.75, rel=1e-15)
    assert float(two.strain(0.25) / two.strain(0.75)) == 0.5
    assert two.stress == -1.0
    zero = layered_column_exact(0.0, [(0.5, 2.0), (0.5, 1.0)])
    assert np.all(zero.displacement(np.linspace(0, 1, 5)) == 0.0)
    with pytest.raises(ValueError):
        layered_column_exact(1.0, [(0.0, 1.0)])
    with pytest.raises(ValueError):
        layered_column_exact(1.0, [(1.0, -1.0)])


@pytest.mark.parametrize("system", [PLANE_STRAIN, AXISYMMETRIC])
def test_grid_refinement_convergence(system):
    problem = PileProblem.pile(system, 1.0, 2.0, 2.0, 4.0, ElasticMaterial(5e9, 0.25),
                               [ElasticMaterial(5e8, 0.25)], 1e7)
    head = np.array([[0.0, 0.0], [0.25, 1.0]])
    u = [fd_solve(problem, refine=r).displacement_at(head)[:, 1] for r in range(3)]
    ratio = (u[0] - u[1]) / (u[1] - u[2])
    # second order, slightly reduced by the corner singularities of the loaded pile head
    assert np.all((ratio > 3.0) & (ratio < 5.0))


@pytest.mark.parametrize("system", [PLANE_STRAIN, AXISYMMETRIC])
def test_global_equilibrium_and_interface_traction(system):
    problem = PileProblem.pile(system, 1.0, 5.0, 10.0, 10.0, ElasticMaterial(5e9, 0.25),
                               [ElasticMaterial(5e8, 0.25)], 1e7)
    field = fd_solve(problem, refine=1)
    assert abs(abs(field.base_reaction) - field.applied_load) <= 0.01 * field.applied_load
    # normal traction across the pile shaft, sampled between the corners
    z = np.linspace(0.5, 4.5, 9)
    pts = np.column_stack([np.full_like(z, 0.5), z])
    sp = field.stress_at(pts, "P")[:, 0]
    ss = field.stress_at(pts, "S1")[:, 0]
    assert np.max(np.abs(sp - ss)) <= 0.01 * problem.pressure


def test_profile_sizes_and_constant_column_stress():
    rs = RegionSet.build(PLANE_STRAIN, 2.0, 4.0, (), 0.5, 2.0)
    problem = PileProblem(rs, {"P": SOIL, "S1": SOIL}, 1e5, "surface")
    field = fd_solve(problem)
    data = synth_stress_profile(field, 2000)
    assert len(data) == 2000 and data.points.shape == (2000, 2)
    assert np.allclose(data.values, -1e5, rtol=1e-6)
    ends = synth_stress_profile(field, 2)
    assert np.array_equal(ends.points[:, 1], [0.0, 2.0])
    with pytest.raises(ValueError):
        synth_stress_profile(field, 1)
    with pytest.raises(GeometryError):
        synth_stress_profile(fd_solve(column(PLANE_STRAIN, [(1.0, SOIL)])), 10)


def test_setup_errors():
    problem = column(PLANE_STRAIN, [(1.0, SOIL)])
    with pytest.raises(OracleSetupError):
        fd_solve(problem, resolution=8)
    free = BoundaryConditions({"top": BoundaryCondition(TRACTION, (0.0, 1e5)),
                               "bottom": BoundaryCondition(TRACTION),
                               "axis": BoundaryCondition(ROLLER),
                               "lateral": BoundaryCondition(ROLLER)})
    with pytest.raises(OracleSetupError):
        fd_solve(problem, bcs=free)
    fixed = BoundaryConditions({"top": BoundaryCondition(TRACTION, (0.0, 1e5)),
                                "bottom": BoundaryCondition(DISPLACEMENT),
                                "axis": BoundaryCondition(TRACTION),
                                "lateral": BoundaryCondition(TRACTION)})
    assert np.all(np.isfinite(fd_solve(problem, bcs=fixed).u))


def test_graded_axis_hits_breakpoints():
    axis = graded_axis([0.0, 0.5, 10.0], 0.05, 1.1)
    assert axis[0] == 0.0 and axis[-1] == 10.0 and 0.5 in axis
    h = np.diff(axis)
    assert np.all(h > 0) and h.min() >= 0.05 * (1 - 1e-9)
