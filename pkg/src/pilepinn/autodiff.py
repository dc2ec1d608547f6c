"""Small dense tanh networks with exact input jets and parameter gradients.

A network maps coordinates ``x`` (dimension ``d``) to ``out`` values.  Besides
the plain forward pass, :func:`mlp_eval_jet2` pushes the input gradient and
the input Hessian through every layer analytically::

    z   = W h + b            dz = W dh            d2z = W d2h
    h'  = tanh(z)            dh' = s1 * dz        d2h' = s2 * dz dz^T + s1 * d2z

with ``s1 = 1 - tanh^2`` and ``s2 = -2 tanh (1 - tanh^2)``.  Only the upper
triangle of the Hessian is propagated.  Parameter gradients of any loss built
from these jets come from reverse-mode accumulation over the same code, which
yields the mixed (x, theta) third derivatives exactly.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Callable, Mapping, Sequence

import jax
import jax.numpy as jnp
import numpy as np

from pilepinn.errors import ConfigurationError, NumericalError, ShapeError

ACTIVATIONS = ("tanh",)


@dataclass(frozen=True)
class NetworkParams:
    """Weights and biases of one feed-forward network.

    ``weights[l]`` has shape ``(layer_sizes[l + 1], layer_sizes[l])``; hidden
    layers use ``activation`` and the output layer is the identity.
    """

    layer_sizes: tuple[int, ...]
    weights: tuple[jax.Array, ...]
    biases: tuple[jax.Array, ...]
    activation: str = "tanh"

    @property
    def n_params(self) -> int:
        return parameter_count(self.layer_sizes)

    @property
    def input_dim(self) -> int:
        return self.layer_sizes[0]

    @property
    def output_dim(self) -> int:
        return self.layer_sizes[-1]

    @classmethod
    def from_arrays(cls, weights: Sequence[Any], biases: Sequence[Any],
                    activation: str = "tanh") -> "NetworkParams":
        """Build from explicit matrices, checking every shape."""
        weights = tuple(jnp.asarray(w, dtype=jnp.float64) for w in weights)
        biases = tuple(jnp.asarray(b, dtype=jnp.float64).reshape(-1) for b in biases)
        if not weights or len(weights) != len(biases):
            raise ConfigurationError("need one bias vector per weight matrix")
        sizes = [int(weights[0].shape[1])]
        for w, b in zip(weights, biases):
            if w.ndim != 2 or w.shape[1] != sizes[-1]:
                raise ShapeError(f"weight of shape {w.shape} does not follow width {sizes[-1]}")
            if b.shape != (w.shape[0],):
                raise ShapeError(f"bias of shape {b.shape} does not match weight {w.shape}")
            sizes.append(int(w.shape[0]))
        if activation not in ACTIVATIONS:
            raise ConfigurationError(f"unsupported activation {activation!r}")
        return cls(tuple(sizes), weights, biases, activation)


jax.tree_util.register_dataclass(
    NetworkParams, data_fields=["weights", "biases"], meta_fields=["layer_sizes", "activation"]
)


@dataclass(frozen=True)
class NetJet2:
    """Network output with its input derivatives.

    Shapes for a batch of points: ``value (..., out)``, ``input_grad
    (..., out, d)`` and ``input_hess (..., out, d, d)``.  ``input_hess`` is
    ``None`` for first-order jets.
    """

    value: jax.Array
    input_grad: jax.Array
    input_hess: jax.Array | None = None

    @staticmethod
    def concat(jets: Sequence["NetJet2"]) -> "NetJet2":
        """Stack several jets along the output axis, e.g. (u_x net, u_z net)."""
        hess = None
        if all(j.input_hess is not None for j in jets):
            hess = jnp.concatenate([j.input_hess for j in jets], axis=-3)
        return NetJet2(
            jnp.concatenate([j.value for j in jets], axis=-1),
            jnp.concatenate([j.input_grad for j in jets], axis=-2),
            hess,
        )


def parameter_count(layer_sizes: Sequence[int]) -> int:
    return sum(m * n + m for n, m in zip(layer_sizes[:-1], layer_sizes[1:]))


def _check_layer_sizes(layer_sizes: Sequence[int]) -> tuple[int, ...]:
    sizes = tuple(int(s) for s in layer_sizes)
    if len(sizes) < 2:
        raise ConfigurationError(f"need at least input and output sizes, got {list(layer_sizes)}")
    if any(s <= 0 for s in sizes):
        raise ConfigurationError(f"layer sizes must be positive, got {list(layer_sizes)}")
    return sizes


def mlp_init(layer_sizes: Sequence[int], seed: int) -> NetworkParams:
    """Glorot-uniform weights and zero biases, reproducible from ``seed``."""
    sizes = _check_layer_sizes(layer_sizes)
    rng = np.random.Generator(np.random.PCG64(seed))
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(jnp.asarray(rng.uniform(-bound, bound, size=(fan_out, fan_in))))
        biases.append(jnp.zeros(fan_out, dtype=jnp.float64))
    return NetworkParams(sizes, tuple(weights), tuple(biases))


def _hess_pairs(d: int) -> list[tuple[int, int]]:
    return [(i, j) for i in range(d) for j in range(i, d)]


def propagate(params: NetworkParams, x: jax.Array, order: int = 2):
    """Forward pass on a batch ``x`` of shape ``(n, d)``.

    Returns ``(value, grads, hess)`` where ``grads[i]`` is d value/d x_i and
    ``hess[(i, j)]`` (``i <= j``) the second derivative, each of shape
    ``(n, out)``.  Lower orders return empty containers.  This is the traced
    kernel behind every public evaluation routine.
    """
    d = x.shape[-1]
    pairs = _hess_pairs(d)
    n_layers = len(params.weights)
    h = x
    grads: list = []
    hess: dict = {}
    for layer, (w, b) in enumerate(zip(params.weights, params.biases)):
        z = h @ w.T + b
        if order >= 1:
            if layer == 0:
                dz = [jnp.broadcast_to(w[:, i], z.shape) for i in range(d)]
                d2z = {}
            else:
                chans = grads + [hess[p] for p in pairs if p in hess]
                mixed = jnp.concatenate(chans, axis=0) @ w.T
                parts = jnp.split(mixed, len(chans), axis=0)
                dz = parts[:d]
                d2z = dict(zip([p for p in pairs if p in hess], parts[d:]))
        if layer == n_layers - 1:
            if order == 0:
                return z, [], {}
            if order == 1:
                return z, dz, {}
            zero = jnp.zeros_like(z)
            return z, dz, {p: d2z.get(p, zero) for p in pairs}
        t = jnp.tanh(z)
        if order >= 1:
            s1 = 1.0 - t * t
            if order >= 2:
                s2 = -2.0 * t * s1
                hess = {}
                for i, j in pairs:
                    term = s2 * dz[i] * dz[j]
                    if (i, j) in d2z:
                        term = term + s1 * d2z[(i, j)]
                    hess[(i, j)] = term
            grads = [s1 * g for g in dz]
        h = t
    raise AssertionError("unreachable")


def _as_batch(params: NetworkParams, x: Any) -> tuple[jax.Array, tuple[int, ...]]:
    x = jnp.asarray(x, dtype=jnp.float64)
    if x.ndim == 0 or x.shape[-1] != params.input_dim:
        raise ShapeError(f"input of shape {x.shape} does not match input size {params.input_dim}")
    lead = x.shape[:-1]
    return x.reshape(-1, params.input_dim), lead


def mlp_eval(params: NetworkParams, x: Any) -> jax.Array:
    """Network output at ``x`` (a single point ``(d,)`` or a batch ``(..., d)``)."""
    xb, lead = _as_batch(params, x)
    value, _, _ = propagate(params, xb, order=0)
    return value.reshape(lead + (params.output_dim,))


def mlp_eval_jet2(params: NetworkParams, x: Any, order: int = 2) -> NetJet2:
    """Output, input gradient and (for ``order=2``) input Hessian at ``x``."""
    xb, lead = _as_batch(params, x)
    d, out = params.input_dim, params.output_dim
    value, grads, hess = propagate(params, xb, order=max(order, 1))
    grad = jnp.stack(grads, axis=-1)
    full = None
    if order >= 2:
        rows = [[hess[(min(i, j), max(i, j))] for j in range(d)] for i in range(d)]
        full = jnp.stack([jnp.stack(r, axis=-1) for r in rows], axis=-2)
        full = full.reshape(lead + (out, d, d))
    return NetJet2(value.reshape(lead + (out,)), grad.reshape(lead + (out, d)), full)


# ---------------------------------------------------------------------------
# canonical flat ordering of trainable parameters
# ---------------------------------------------------------------------------

def _leaves(tree: Any) -> list[jax.Array]:
    if isinstance(tree, NetworkParams):
        out = []
        for w, b in zip(tree.weights, tree.biases):
            out.extend([w, b])
        return out
    if isinstance(tree, Mapping):
        return [leaf for key in tree for leaf in _leaves(tree[key])]
    if isinstance(tree, (list, tuple)):
        return [leaf for item in tree for leaf in _leaves(item)]
    return [jnp.asarray(tree, dtype=jnp.float64)]


def flatten_params(tree: Any) -> jax.Array:
    """Concatenate parameters layer-major (each layer: weight rows, then bias).

    Mappings are walked in insertion order, so a trainable set laid out as
    ``{net names..., material names...}`` keeps material parameters last.
    """
    leaves = _leaves(tree)
    if not leaves:
        return jnp.zeros(0)
    return jnp.concatenate([jnp.ravel(leaf) for leaf in leaves])


def unflatten_params(vector: jax.Array, template: Any) -> Any:
    """Inverse of :func:`flatten_params` for a tree shaped like ``template``."""
    expected = sum(int(np.prod(jnp.shape(leaf))) for leaf in _leaves(template))
    if vector.shape[0] != expected:
        raise ShapeError(f"vector of length {vector.shape[0]} does not fit template ({expected})")
    offset = 0

    def take(shape):
        nonlocal offset
        size = int(np.prod(shape)) if shape else 1
        chunk = vector[offset:offset + size].reshape(shape)
        offset += size
        return chunk

    def rebuild(node):
        if isinstance(node, NetworkParams):
            ws, bs = [], []
            for w, b in zip(node.weights, node.biases):
                ws.append(take(w.shape))
                bs.append(take(b.shape))
            return NetworkParams(node.layer_sizes, tuple(ws), tuple(bs), node.activation)
        if isinstance(node, Mapping):
            return {key: rebuild(node[key]) for key in node}
        if isinstance(node, (list, tuple)):
            return type(node)(rebuild(item) for item in node)
        return take(jnp.shape(node))

    return rebuild(template)


def _finite(value: Any) -> bool:
    return bool(np.all(np.isfinite(np.asarray(value))))


def loss_grad(loss_fn: Callable[[Any], Any], params: Any) -> tuple[float, jax.Array]:
    """Value and flat gradient of a scalar loss of the trainable set ``params``.

    ``loss_fn`` returns either the scalar loss or ``(loss, terms)`` where
    ``terms`` maps term names to their values; those names are used to report
    the first non-finite contribution.
    """

    def wrapped(p):
        out = loss_fn(p)
        if isinstance(out, tuple):
            return out[0], out[1]
        return out, {}

    (total, terms), grad = jax.value_and_grad(wrapped, has_aux=True)(params)
    for name, value in terms.items():
        if not _finite(value):
            raise NumericalError(f"loss term {name!r} is not finite", term=name)
    if not _finite(total):
        raise NumericalError("total loss is not finite", term="total")
    flat = flatten_params(grad)
    if not _finite(flat):
        raise NumericalError("gradient contains non-finite entries", term="gradient")
    return float(total), flat
