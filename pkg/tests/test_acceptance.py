"""Acceptance criteria, one test each.

Every test records a ``criterion N PASS|FAIL`` line, printed in the pytest
terminal summary, before asserting.
"""
import subprocess
import sys
import time
from pathlib import Path

import jax
import jax.numpy as jnp
import numpy as np

from pilepinn.autodiff import flatten_params, loss_grad, mlp_eval, mlp_eval_jet2, mlp_init, unflatten_params
from pilepinn.loss import field_jet, mse
from pilepinn.mechanics import EPS_BAR, ElasticMaterial, residual_axisymmetric, residual_plane
from pilepinn.oracle import fd_solve, layered_column_exact, synth_stress_profile
from pilepinn.problem import PileProblem
from pilepinn.trainer import InversionParam, PinnSetup, TrainConfig, train_forward, train_inverse

from test_mechanics import affine_jet

ROOT = Path(__file__).resolve().parents[1]
ARCH = (2, 20, 20, 20, 20, 2)
PILE = ElasticMaterial(5e9, 0.25)
Q = 1e7

# weighted protocol for pile problems: every stress-type term counts 100x the
# displacement terms, interface displacement continuity 10x
STRESS_WEIGHTS = dict(pde_x=100.0, pde_z=100.0, bc_x=100.0, bc_z=100.0, cont_t=100.0, cont_u=10.0)
FIELD_TRAINING = dict(epochs=20000, ntk_period=0, lr_decay=0.5, lr_decay_every=5000,
                      term_weights=STRESS_WEIGHTS)
FIELD_SETUP = dict(points_per_region=1000)
INVERSE_TRAINING = dict(epochs=3000, ntk_period=0)
INVERSE_POINTS = 3000
INVERSE_ORACLE_RESOLUTION = 32


def record(verdicts, n, ok, detail):
    line = f"criterion {n} {'PASS' if ok else 'FAIL'}: {detail}"
    verdicts.append(line)
    print(line)
    return ok


def rel(a, b):
    return float(np.linalg.norm(np.ravel(a) - np.ravel(b)) / max(np.linalg.norm(np.ravel(b)), 1e-300))


def sheet_pile(soils, layers=(), trainable=False):
    mats = [ElasticMaterial(E, 0.25, trainable=trainable) for E in soils]
    return PileProblem.pile("plane_strain", 1.0, 5.0, 10.0, 10.0, PILE, mats, Q, layers)


# ---------------------------------------------------------------------------
# 1. derivatives against central differences
# ---------------------------------------------------------------------------

def _fd_input(net, x, h=1e-4):
    """Input gradient and Hessian of the raw network from one batched evaluation."""
    n, d = x.shape
    eye = np.eye(d) * h
    shifts = [s * eye[i] for i in range(d) for s in (1, -1)]
    shifts += [si * eye[i] + sj * eye[j] for i in range(d) for j in range(d)
               for si, sj in ((1, 1), (1, -1), (-1, 1), (-1, -1))]
    f = np.asarray(mlp_eval(net, (x[None] + np.asarray(shifts)[:, None]).reshape(-1, d)))
    f = f.reshape(len(shifts), n, -1)
    grad = np.stack([(f[2 * i] - f[2 * i + 1]) / (2 * h) for i in range(d)], axis=-1)
    hess = np.zeros(grad.shape + (d,))
    k = 2 * d
    for i in range(d):
        for j in range(d):
            pp, pm, mp, mm = f[k:k + 4]
            hess[..., i, j] = (pp - pm - mp + mm) / (4 * h * h)
            k += 4
    return grad, hess


def _residual_loss(net, x, mat):
    jet = field_jet([net], x, order=2)
    res = residual_plane(mat, jet)
    return mse(jnp.concatenate([res.first, res.second]))


def test_criterion_1_derivatives_match_finite_differences(verdicts):
    start = time.perf_counter()
    rng = np.random.default_rng(2024)
    mat = ElasticMaterial(1.0, 0.25)
    template = mlp_init(ARCH, 0)
    batched = jax.jit(jax.vmap(lambda th, x: _residual_loss(unflatten_params(th, template), x, mat),
                               in_axes=(0, None)))
    worst = {"grad": 0.0, "hess": 0.0, "param": 0.0}
    n_nets = 100
    for seed in range(n_nets):
        net = mlp_init(ARCH, 1000 + seed)
        x = rng.uniform(-1.5, 1.5, size=(4, 2))
        jet = mlp_eval_jet2(net, x)
        g_fd, h_fd = _fd_input(net, x)
        worst["grad"] = max(worst["grad"], rel(jet.input_grad, g_fd))
        worst["hess"] = max(worst["hess"], rel(jet.input_hess, h_fd))
        _, g = loss_grad(lambda p: _residual_loss(p, jnp.asarray(x), mat), net)
        theta = flatten_params(net)
        h = 1e-5
        eye = jnp.eye(theta.shape[0]) * h
        fd = (batched(theta + eye, jnp.asarray(x)) - batched(theta - eye, jnp.asarray(x))) / (2 * h)
        worst["param"] = max(worst["param"], rel(g, fd))
    seconds = time.perf_counter() - start
    ok = max(worst.values()) <= 1e-5 and seconds < 60
    detail = (f"{n_nets} nets 4x20, worst relative error grad {worst['grad']:.1e}, "
              f"hess {worst['hess']:.1e}, param {worst['param']:.1e}; {seconds:.1f} s")
    assert record(verdicts, 1, ok, detail)


# ---------------------------------------------------------------------------
# 2. affine fields satisfy equilibrium exactly
# ---------------------------------------------------------------------------

def test_criterion_2_affine_residuals(verdicts):
    rng = np.random.default_rng(7)
    worst_plane = worst_axi = 0.0
    for _ in range(200):
        mat = ElasticMaterial(rng.uniform(1.0, 1e3), rng.uniform(0.0, 0.49))
        pts = rng.uniform(0.0, 1.0, size=(16, 2))
        res = residual_plane(mat, affine_jet(pts, rng.uniform(-1, 1, (2, 2)), rng.uniform(-1, 1, 2)))
        worst_plane = max(worst_plane, float(np.max(np.abs(np.concatenate([res.first, res.second])))))
        # u_r = b r needs the unregularized hoop term; u_r = 0 is exact with the default one
        b, c, d = rng.uniform(-1, 1, 3)
        off_axis = rng.uniform(0.01, 1.0, size=(16, 2))
        res = residual_axisymmetric(mat, affine_jet(off_axis, [[b, 0], [0, c]], [0, d]),
                                    jnp.asarray(off_axis[:, 0]), eps_bar=0.0)
        worst_axi = max(worst_axi, float(np.max(np.abs(np.concatenate([res.first, res.second])))))
        pts[0, 0] = 0.0
        res = residual_axisymmetric(mat, affine_jet(pts, [[0, 0], [0, c]], [0, d]),
                                    jnp.asarray(pts[:, 0]), EPS_BAR)
        worst_axi = max(worst_axi, float(np.max(np.abs(np.concatenate([res.first, res.second])))))
    ok = max(worst_plane, worst_axi) <= 1e-10
    assert record(verdicts, 2, ok, f"max |residual| plane {worst_plane:.1e}, axisymmetric {worst_axi:.1e}")


# ---------------------------------------------------------------------------
# 8. property suites run standalone
# ---------------------------------------------------------------------------

PROPERTY_SUITE = [
    "tests/test_domain.py::test_partition_of_unity_on_grid",
    "tests/test_domain.py::test_factors_partition_unity_anywhere",
    "tests/test_domain.py::test_domain_factor_branches",
    "tests/test_domain.py::test_triple_junction_renormalization",
    "tests/test_mechanics.py::test_lame_examples",
    "tests/test_mechanics.py::test_lame_round_trip",
    "tests/test_loss.py::test_mse_examples",
    "tests/test_loss.py::test_mse_scaling",
    "tests/test_loss.py::test_ntk_examples",
    "tests/test_loss.py::test_ntk_scale_invariance",
    "tests/test_trainer.py::test_adam_zero_gradient_keeps_parameters",
    "tests/test_trainer.py::test_adam_first_step",
    "tests/test_trainer.py::test_adam_first_step_size_is_learning_rate",
]


def test_criterion_8_property_suites_standalone(verdicts):
    start = time.perf_counter()
    proc = subprocess.run([sys.executable, "-m", "pytest", "-q", "-p", "no:cacheprovider", *PROPERTY_SUITE],
                          cwd=ROOT, capture_output=True, text=True)
    seconds = time.perf_counter() - start
    summary = proc.stdout.strip().splitlines()[-1] if proc.stdout.strip() else proc.stderr[-200:]
    ok = proc.returncode == 0 and seconds < 30
    assert record(verdicts, 8, ok, f"{summary}; {seconds:.1f} s including interpreter start")


# ---------------------------------------------------------------------------
# 3. strain discontinuity in a two-layer column
# ---------------------------------------------------------------------------

def test_criterion_3_layered_column(verdicts):
    start = time.perf_counter()
    q = 1e5
    stiff, soft = ElasticMaterial(1e8, 0.3), ElasticMaterial(2e7, 0.3)
    problem = PileProblem.column("plane_strain", 1.0, [(1.0, stiff), (1.0, soft)], q)
    cfg = TrainConfig(epochs=3000, seed=0, ntk_period=0, lr_decay=0.5, lr_decay_every=1000)
    model, _ = train_forward(problem, cfg, PinnSetup(points_per_region=1000))
    M1, M2 = float(stiff.constrained_modulus), float(soft.constrained_modulus)
    exact = layered_column_exact(q, [(1.0, M1), (1.0, M2)])

    X, Z = np.meshgrid(np.linspace(0.0, 1.0, 21), np.linspace(0.0, 2.0, 41))
    pts = np.column_stack([X.ravel(), Z.ravel()])
    u = model.displacement(pts)[:, 1]
    l2 = rel(u, exact.displacement(pts[:, 1]))

    xs = np.linspace(0.05, 0.95, 10)
    e1 = model.region_fields("S1", np.column_stack([xs, np.full(10, 0.5)]))["eps"][:, 1].mean()
    e2 = model.region_fields("S2", np.column_stack([xs, np.full(10, 1.5)]))["eps"][:, 1].mean()
    ratio_error = abs((e1 / e2) / (M2 / M1) - 1.0)

    face = np.column_stack([np.linspace(0.0, 1.0, 21), np.ones(21)])
    jump = model.region_fields("S1", face)["sig"][:, 1] - model.region_fields("S2", face)["sig"][:, 1]
    mismatch = float(np.max(np.abs(jump))) / q
    seconds = time.perf_counter() - start

    ok = l2 <= 0.01 and ratio_error <= 0.05 and mismatch <= 0.02 and seconds <= 600
    detail = (f"L2 {l2:.2%}, strain ratio off by {ratio_error:.2%}, "
              f"interface traction mismatch {mismatch:.2%} of q; {seconds:.0f} s")
    assert record(verdicts, 3, ok, detail)


# ---------------------------------------------------------------------------
# 4. forward convergence on the sheet pile
# ---------------------------------------------------------------------------

def test_criterion_4_sheet_pile_convergence(verdicts):
    problem = sheet_pile([5e8])
    setup = PinnSetup(points_per_region=1000)
    reached, runs = 0, []
    for seed in range(4):
        # stop as soon as the target is met; the budget is 5000 epochs
        cfg = TrainConfig(epochs=5000, seed=seed, ntk_period=0, stop_threshold=1e-4, stop_patience=1)
        _, rec = train_forward(problem, cfg, setup)
        hit = rec.best_normalized() <= 1e-4
        reached += hit
        runs.append(f"seed {seed}: {rec.best_normalized():.2e} after {len(rec)} epochs")
    ok = reached >= 3
    assert record(verdicts, 4, ok, f"{reached}/4 seeds reach 1e-4 ({'; '.join(runs)})")


# ---------------------------------------------------------------------------
# 5. agreement with the independent oracle
# ---------------------------------------------------------------------------

def test_criterion_5_sheet_pile_matches_oracle(verdicts):
    start = time.perf_counter()
    problem = sheet_pile([5e8])
    oracle = fd_solve(problem, 32)
    model, _ = train_forward(problem, TrainConfig(seed=0, **FIELD_TRAINING), PinnSetup(**FIELD_SETUP))
    X, Z = np.meshgrid(np.linspace(0.0, 10.0, 81), np.linspace(0.0, 10.0, 81))
    pts = np.column_stack([X.ravel(), Z.ravel()])
    ref = oracle.displacement_at(pts)[:, 1]
    err = float(np.max(np.abs(model.displacement(pts)[:, 1] - ref)) / np.max(np.abs(ref)))
    seconds = time.perf_counter() - start
    assert record(verdicts, 5, err <= 0.05, f"max |du_z| / max |u_z| = {err:.2%} on an 81x81 grid; {seconds:.0f} s")


# ---------------------------------------------------------------------------
# 6 and 7. modulus identification from the centerline stress profile
# ---------------------------------------------------------------------------

def _invert(soils, layers, seed):
    """Identify every soil modulus; returns relative errors and wall time."""
    start = time.perf_counter()
    data = synth_stress_profile(fd_solve(sheet_pile(soils, layers), INVERSE_ORACLE_RESOLUTION), 2000)
    problem = sheet_pile(soils, layers, trainable=True)
    names = problem.trainable_regions
    unknowns = [InversionParam(n, truth=E) for n, E in zip(names, soils)]
    cfg = TrainConfig(seed=seed, mode="inverse", **INVERSE_TRAINING)
    _, moduli, _ = train_inverse(problem, data, unknowns, cfg, PinnSetup(points_per_region=INVERSE_POINTS))
    errors = [abs(moduli[n] / E - 1.0) for n, E in zip(names, soils)]
    return errors, time.perf_counter() - start


def test_criterion_6_homogeneous_inversion(verdicts):
    parts, ok = [], True
    for eta in (10, 50):
        hits, runs = 0, []
        for seed in range(3):
            (err,), seconds = _invert([5e9 / eta], (), seed)
            good = err <= 0.05 and seconds <= 1200
            hits += good
            runs.append(f"seed {seed} {err:.1%} {seconds:.0f} s")
            if hits == 2 or seed + 1 - hits == 2:
                break
        ok &= hits >= 2
        parts.append(f"eta {eta}: {hits} within 5% ({', '.join(runs)})")
    assert record(verdicts, 6, ok, "; ".join(parts))


def test_criterion_7_layered_inversion(verdicts):
    runs, ok = [], False
    for seed in range(3):
        errors, seconds = _invert([1e8, 2e7], (2.5, 7.5), seed)
        runs.append(f"seed {seed} S1 {errors[0]:.1%} S2 {errors[1]:.1%} {seconds:.0f} s")
        if max(errors) <= 0.15:
            ok = True
            break
    assert record(verdicts, 7, ok, "; ".join(runs))
