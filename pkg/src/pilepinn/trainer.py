"""Full-batch Adam training for forward solves and modulus identification."""

from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass, field
from typing import Any, Mapping, Sequence

import jax
import jax.numpy as jnp
import numpy as np

from pilepinn.autodiff import NetworkParams, flatten_params, mlp_init, unflatten_params
from pilepinn.domain import CollocationSet, composite_displacement, sample_collocation
from pilepinn.errors import ConfigurationError, DataError, NumericalError, TrainingDiverged
from pilepinn.loss import DataSet, LossPlan, field_jet, input_frame, ntk_update, ntk_weights
from pilepinn.mechanics import (ElasticMaterial, strain_axisymmetric, strain_plane,
                                stress_from_strain)
from pilepinn.problem import PileProblem, Scales

FORWARD, INVERSE = "forward", "inverse"


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.003
    epochs: int = 1000
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    ntk_period: int = 100
    ntk_estimator: str = "gradient"
    ntk_probes: int = 4
    mode: str = FORWARD
    divergence_limit: float = 1e3
    stop_threshold: float = 1e-7
    stop_patience: int = 100
    lr_decay: float = 1.0
    lr_decay_every: int = 1000
    term_weights: Mapping[str, float] | None = None

    def learning_rate_at(self, epoch: int) -> float:
        """Step schedule ``lr * lr_decay ** (epoch // lr_decay_every)``."""
        return self.learning_rate * self.lr_decay ** (epoch // self.lr_decay_every)

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ConfigurationError(f"learning_rate must be positive, got {self.learning_rate}")
        if int(self.epochs) != self.epochs or self.epochs < 1:
            raise ConfigurationError(f"epochs must be a positive integer, got {self.epochs}")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ConfigurationError("Adam betas must lie in [0, 1)")
        if self.ntk_period < 0:
            raise ConfigurationError("ntk_period must be non-negative (0 disables weighting)")
        if self.ntk_estimator not in ("gradient", "kernel"):
            raise ConfigurationError(f"ntk_estimator must be gradient or kernel, got {self.ntk_estimator!r}")
        if self.ntk_probes < 1:
            raise ConfigurationError("ntk_probes must be at least 1")
        if not 0 < self.lr_decay <= 1 or self.lr_decay_every < 1:
            raise ConfigurationError("lr_decay must lie in (0, 1] and lr_decay_every be positive")
        if self.term_weights is not None and any(not w > 0 for w in self.term_weights.values()):
            raise ConfigurationError("term weights must be positive")
        if self.mode not in (FORWARD, INVERSE):
            raise ConfigurationError(f"mode must be forward or inverse, got {self.mode!r}")


@dataclass(frozen=True)
class AdamState:
    m: Any
    v: Any

    @classmethod
    def zeros_like(cls, params: Any) -> "AdamState":
        z = jnp.zeros_like(jnp.asarray(params, dtype=jnp.float64))
        return cls(z, z)


def _adam(params, grad, m, v, t, lr, b1, b2, eps):
    m = b1 * m + (1.0 - b1) * grad
    v = b2 * v + (1.0 - b2) * grad * grad
    m_hat = m / (1.0 - b1 ** t)
    v_hat = v / (1.0 - b2 ** t)
    return params - lr * m_hat / (jnp.sqrt(v_hat) + eps), m, v


def adam_step(params: Any, grad: Any, state: AdamState, t: int,
              cfg: TrainConfig) -> tuple[Any, AdamState]:
    """One bias-corrected Adam update; ``t`` counts steps from 1."""
    params = jnp.asarray(params, dtype=jnp.float64)
    grad = jnp.asarray(grad, dtype=jnp.float64)
    if params.shape != grad.shape or state.m.shape != params.shape or state.v.shape != params.shape:
        raise ValueError(f"Adam state {state.m.shape} and gradient {grad.shape}"
                         f" do not match parameters {params.shape}")
    if t < 1:
        raise ValueError(f"Adam step index starts at 1, got {t}")
    if not bool(jnp.all(jnp.isfinite(grad))):
        worst = int(jnp.argmax(jnp.where(jnp.isfinite(grad), 0.0, 1.0)))
        raise NumericalError(f"non-finite gradient entry {worst}", term=f"parameter[{worst}]")
    new, m, v = _adam(params, grad, state.m, state.v, float(t), cfg.learning_rate,
                      cfg.beta1, cfg.beta2, cfg.epsilon)
    return new, AdamState(m, v)


@dataclass(frozen=True)
class InversionParam:
    """Unknown Young's modulus of ``region``, ``E = E_ref * exp(phi)``.

    ``initial`` defaults to ``E_ref / 20``; ``truth`` is only used in reports.
    """

    region: str
    initial: float | None = None
    truth: float | None = None

    def phi0(self, e_ref: float) -> float:
        e0 = e_ref / 20.0 if self.initial is None else self.initial
        if not e0 > 0:
            raise ConfigurationError(f"initial modulus for {self.region} must be positive")
        return math.log(e0 / e_ref)


@dataclass(frozen=True)
class PinnSetup:
    """Network and sampling layout; two scalar networks per region unless ``shared``."""

    hidden: tuple[int, ...] = (20, 20, 20, 20)
    points_per_region: int | Mapping[str, int] = 3000
    boundary_fraction: float = 0.5
    sampling_seed: int | None = None
    shared: bool = False
    normalize_inputs: bool = True
    interface_cluster: float = 0.0
    modulus_scaled_residuals: bool = False
    input_gain: float = 1.0
    stretch: tuple[float, float] | None = None

    def layer_sizes(self) -> tuple[int, ...]:
        return (2, *self.hidden, 2 if self.shared else 1)


@dataclass
class TrainRecord:
    """Per-epoch history; moduli are in Pa, one column per unknown."""

    term_names: tuple[str, ...]
    unknown_names: tuple[str, ...] = ()
    epochs: list[int] = field(default_factory=list)
    total: list[float] = field(default_factory=list)
    normalized: list[float] = field(default_factory=list)
    raw: list[np.ndarray] = field(default_factory=list)
    weights: list[np.ndarray] = field(default_factory=list)
    moduli: list[np.ndarray] = field(default_factory=list)
    seconds: list[float] = field(default_factory=list)
    stopped_early: bool = False

    def append(self, epoch, total, normalized, raw, weights, moduli, seconds):
        if self.epochs and epoch <= self.epochs[-1]:
            raise ValueError("epochs must be recorded in increasing order")
        self.epochs.append(int(epoch))
        self.total.append(float(total))
        self.normalized.append(float(normalized))
        self.raw.append(np.asarray(raw, dtype=float))
        self.weights.append(np.asarray(weights, dtype=float))
        self.moduli.append(np.asarray(moduli, dtype=float))
        self.seconds.append(float(seconds))

    def __len__(self) -> int:
        return len(self.epochs)

    @property
    def final_normalized(self) -> float:
        return self.normalized[-1]

    def best_normalized(self) -> float:
        return float(np.min(self.normalized))

    def final_moduli(self) -> dict[str, float]:
        return dict(zip(self.unknown_names, map(float, self.moduli[-1]))) if self.moduli else {}

    def columns(self) -> list[str]:
        return (["epoch", "total"] + list(self.term_names)
                + [f"lambda_{n}" for n in self.term_names]
                + ["normalized", "seconds"] + [f"E_{n}" for n in self.unknown_names])

    def rows(self):
        for k in range(len(self.epochs)):
            yield ([self.epochs[k], self.total[k], *self.raw[k], *self.weights[k],
                    self.normalized[k], self.seconds[k], *self.moduli[k]])

    def write_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(self.columns())
            for row in self.rows():
                w.writerow([row[0]] + [repr(float(x)) for x in row[1:]])


class PinnModel:
    """Trained networks plus the scales that map them back to physical units."""

    def __init__(self, problem: PileProblem, setup: PinnSetup, nets: Mapping[str, Sequence[NetworkParams]],
                 moduli: Mapping[str, float] | None = None):
        self.problem = problem.with_moduli(moduli or {})
        self.setup = setup
        self.nets = {k: list(v) for k, v in nets.items()}
        self.scales: Scales = problem.scales()
        self._nd = self.problem.nondimensional()

    @property
    def region_set(self):
        return self.problem.region_set

    def _jet(self, name: str, points: np.ndarray):
        x = jnp.asarray(np.atleast_2d(points) / self.scales.length)
        frame = (input_frame(self._nd.region_set, name, self.setup.input_gain, self.setup.stretch)
                 if self.setup.normalize_inputs else None)
        return field_jet(self.nets[name], x, order=1, frame=frame), x

    def region_displacement(self, name: str, points: Any) -> np.ndarray:
        jet, _ = self._jet(name, np.asarray(points, dtype=float))
        return np.asarray(jet.value) * self.scales.displacement

    def displacement(self, points: Any) -> np.ndarray:
        """Blended displacement (m) at physical points."""
        fields = {n: (lambda p, n=n: self.region_displacement(n, p)) for n in self.region_set.names}
        return composite_displacement(fields, self.region_set, points)

    def region_fields(self, name: str, points: Any) -> dict[str, np.ndarray]:
        """Displacement, strain and stress from one region's networks."""
        jet, x = self._jet(name, np.asarray(points, dtype=float))
        mat = self._nd.materials[name]
        if self.region_set.coordinate_system == "axisymmetric":
            eps = strain_axisymmetric(jet, x[:, 0], self._nd.eps_bar)
        else:
            eps = strain_plane(jet)
        sig = stress_from_strain(mat, eps)
        s = self.scales
        strain_unit = s.stress / s.modulus
        out = {
            "u": np.asarray(jet.value) * s.displacement,
            "eps": np.column_stack([np.asarray(eps.e11), np.asarray(eps.e22), np.asarray(eps.e12)]) * strain_unit,
            "sig": np.column_stack([np.asarray(sig.s11), np.asarray(sig.s22), np.asarray(sig.s12)]) * s.stress,
        }
        return out


def _init_nets(problem: PileProblem, setup: PinnSetup, seed: int) -> dict[str, list[NetworkParams]]:
    names = problem.region_set.names
    per_region = 1 if setup.shared else 2
    seeds = np.random.SeedSequence(seed).generate_state(len(names) * per_region)
    sizes = setup.layer_sizes()
    nets, k = {}, 0
    for name in names:
        nets[name] = [mlp_init(sizes, int(seeds[k + j])) for j in range(per_region)]
        k += per_region
    return nets


def _run(problem: PileProblem, setup: PinnSetup, cfg: TrainConfig, data: DataSet | None,
         unknowns: Sequence[InversionParam], collocation: CollocationSet | None = None,
         callback=None):
    nd = problem.nondimensional()
    scales = problem.scales()
    rs = problem.region_set
    if collocation is None:
        seed = cfg.seed if setup.sampling_seed is None else setup.sampling_seed
        collocation = sample_collocation(rs, setup.points_per_region, setup.boundary_fraction, seed,
                                         setup.interface_cluster)
    collocation = collocation.scaled(scales.length)
    nd_data = None
    if data is not None:
        nd_data = DataSet(np.asarray(data.points) / scales.length,
                          np.asarray(data.values) / scales.stress, data.region)
    plan = LossPlan(nd.region_set, collocation, nd.bcs, nd.eps_bar, nd_data, setup.normalize_inputs,
                    setup.modulus_scaled_residuals, setup.input_gain, setup.stretch)

    names = [u.region for u in unknowns]
    if len(set(names)) != len(names) or any(n not in rs.names for n in names):
        raise ConfigurationError(f"each unknown must name one distinct region, got {names}")
    phi0 = jnp.array([u.phi0(scales.modulus) for u in unknowns], dtype=jnp.float64)
    nets0 = _init_nets(problem, setup, cfg.seed)
    template = (nets0, phi0)
    theta = flatten_params(template)
    base = dict(nd.materials)

    def unpack(theta):
        nets, phi = unflatten_params(theta, template)
        mats = dict(base)
        for k, name in enumerate(names):
            mats[name] = ElasticMaterial(jnp.exp(phi[k]), base[name].nu)
        return nets, mats, phi

    def terms_fn(theta):
        nets, mats, _ = unpack(theta)
        return plan.terms(nets, mats)

    def loss_fn(theta, w):
        t = terms_fn(theta)
        return jnp.dot(w, t), t

    b1, b2, eps = cfg.beta1, cfg.beta2, cfg.epsilon

    @jax.jit
    def step(theta, m, v, t, w, lr):
        (total, terms), g = jax.value_and_grad(loss_fn, has_aux=True)(theta, w)
        ok = jnp.all(jnp.isfinite(g)) & jnp.isfinite(total)
        new, m, v = _adam(theta, g, m, v, t, lr, b1, b2, eps)
        return new, m, v, total, terms, ok

    term_jac = jax.jit(jax.jacrev(terms_fn))

    def residuals_fn(theta):
        nets, mats, _ = unpack(theta)
        return plan.residuals(nets, mats)

    @jax.jit
    def kernel_traces(theta, signs):
        # Hutchinson estimate of trace(J_i J_i^T) / n_i with random-sign probes
        res, pullback = jax.vjp(residuals_fn, theta)
        sizes = [r.shape[0] for r in res]
        offsets = np.cumsum([0] + sizes)
        n_probe = signs.shape[0] // len(res)
        cots = []
        for j, r in enumerate(res):
            rows = jnp.zeros((signs.shape[0], r.shape[0]))
            rows = rows.at[j * n_probe:(j + 1) * n_probe].set(
                signs[j * n_probe:(j + 1) * n_probe, offsets[j]:offsets[j + 1]])
            cots.append(rows)
        grads = jax.vmap(lambda c: pullback(c)[0])(cots)
        sq = jnp.sum(grads * grads, axis=1).reshape(len(res), n_probe)
        return jnp.mean(sq, axis=1) / jnp.asarray(sizes, dtype=jnp.float64)

    n_entries = sum(int(r.shape[0]) for r in jax.eval_shape(residuals_fn, theta))
    probe_rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 7]))

    def refresh(theta, w):
        if cfg.ntk_estimator == "gradient":
            return ntk_update(np.asarray(term_jac(theta)), w)
        signs = probe_rng.choice([-1.0, 1.0], size=(len(plan.names) * cfg.ntk_probes, n_entries))
        return ntk_weights(np.asarray(kernel_traces(theta, jnp.asarray(signs))), w)
    n_terms = len(plan.names)
    w = np.ones(n_terms)
    for name, value in (cfg.term_weights or {}).items():
        matches = [k for k, n in enumerate(plan.names) if n == name or n.split(":")[0] == name]
        if not matches:
            raise ConfigurationError(f"term weight for unknown term {name!r}")
        w[matches] = float(value)
    m = jnp.zeros_like(theta)
    v = jnp.zeros_like(theta)
    record = TrainRecord(plan.names, tuple(names))
    raw0 = None
    calm = 0
    start = time.perf_counter()
    for epoch in range(cfg.epochs):
        if cfg.ntk_period and epoch % cfg.ntk_period == 0:
            w = refresh(theta, w)
        wj = jnp.asarray(w)
        new, m, v, total, terms, ok = step(theta, m, v, float(epoch + 1), wj,
                                                 cfg.learning_rate_at(epoch))
        raw = np.asarray(terms)
        if not bool(ok):
            bad = [n for n, r in zip(plan.names, raw) if not np.isfinite(r)]
            if not bad:
                jac = np.asarray(term_jac(theta))
                bad = [plan.names[int(np.argmax(np.sum(~np.isfinite(jac), axis=1)))]]
            raise NumericalError(f"non-finite gradient; worst term {bad[0]}", term=bad[0])
        if raw0 is None:
            raw0 = raw
        normalized = float(np.sum(raw) / np.sum(raw0))
        phi = np.asarray(unpack(theta)[2])
        record.append(epoch, float(total), normalized, raw, w, scales.modulus * np.exp(phi),
                      time.perf_counter() - start)
        if callback is not None:
            callback(epoch, record, lambda th=theta: _model(problem, setup, unpack, th, names, scales))
        if normalized > cfg.divergence_limit:
            raise TrainingDiverged(f"normalized loss {normalized:.3g} exceeded"
                                   f" {cfg.divergence_limit:g} at epoch {epoch}", record)
        calm = calm + 1 if normalized < cfg.stop_threshold else 0
        theta = new
        if calm >= cfg.stop_patience:
            record.stopped_early = True
            break

    model = _model(problem, setup, unpack, theta, names, scales)
    moduli = {n: float(model.problem.materials[n].E) for n in names}
    return model, record, moduli


def _model(problem, setup, unpack, theta, names, scales) -> PinnModel:
    nets, _, phi = unpack(theta)
    moduli = {n: float(scales.modulus * np.exp(p)) for n, p in zip(names, np.asarray(phi))}
    return PinnModel(problem, setup, nets, moduli)


def train_forward(problem: PileProblem, cfg: TrainConfig, setup: PinnSetup | None = None,
                  collocation: CollocationSet | None = None, callback=None):
    """Train one set of networks per region; returns ``(model, record)``."""
    if problem.trainable_regions:
        raise ConfigurationError("forward training needs every modulus fixed;"
                                 f" trainable: {problem.trainable_regions}")
    model, record, _ = _run(problem, setup or PinnSetup(), cfg, None, (), collocation, callback)
    return model, record


def train_inverse(problem: PileProblem, data: DataSet, unknowns: Sequence[InversionParam],
                  cfg: TrainConfig, setup: PinnSetup | None = None,
                  collocation: CollocationSet | None = None, callback=None):
    """Fit networks and unknown moduli to an axial-stress profile.

    Returns ``(model, identified moduli in Pa, record)``.
    """
    if data is None or len(data) == 0:
        raise DataError("inversion needs a non-empty data set")
    if not unknowns:
        raise ConfigurationError("inversion needs at least one unknown modulus")
    model, record, moduli = _run(problem, setup or PinnSetup(), cfg, data, unknowns,
                                 collocation, callback)
    return model, moduli, record
