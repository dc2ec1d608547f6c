"""Linear-elastic kernels in axisymmetric and plane-strain form.

Index convention: direction 1 is the horizontal coordinate (``r`` or ``x``),
direction 2 is the depth coordinate ``z`` (positive downwards).  Axisymmetric
states also carry the hoop component, stored as ``33``.

All kernels are written with ``jax.numpy`` so they work on single points,
batches and inside traced training code alike.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any

import jax
import jax.numpy as jnp
import numpy as np

from pilepinn.autodiff import NetJet2
from pilepinn.errors import GeometryError, MaterialError

# Regularization of 1/r on the symmetry axis: 1/r ~ 1/(r + EPS_BAR).
EPS_BAR = 1e-3


def _concrete(*values: Any) -> bool:
    return not any(isinstance(v, jax.core.Tracer) for v in values)


def lame_from_engineering(E: Any, nu: Any) -> tuple[Any, Any]:
    """Lamé pair ``(lambda, mu)`` from Young's modulus and Poisson's ratio."""
    if _concrete(E, nu):
        if not np.all(np.asarray(nu) >= 0.0) or not np.all(np.asarray(nu) < 0.5):
            raise MaterialError(f"Poisson's ratio must lie in [0, 0.5), got {nu}")
        if not np.all(np.asarray(E) > 0.0):
            raise MaterialError(f"Young's modulus must be positive, got {E}")
    lam = E * nu / ((1.0 + nu) * (1.0 - 2.0 * nu))
    mu = E / (2.0 * (1.0 + nu))
    return lam, mu


def engineering_from_lame(lam: Any, mu: Any) -> tuple[Any, Any]:
    """Inverse of :func:`lame_from_engineering`."""
    E = mu * (3.0 * lam + 2.0 * mu) / (lam + mu)
    nu = lam / (2.0 * (lam + mu))
    return E, nu


@dataclass(frozen=True)
class ElasticMaterial:
    """Isotropic material; ``trainable`` marks ``E`` as an inversion unknown."""

    E: Any
    nu: float
    trainable: bool = False

    def __post_init__(self):
        lame_from_engineering(self.E, self.nu)

    @property
    def lam(self):
        return lame_from_engineering(self.E, self.nu)[0]

    @property
    def mu(self):
        return lame_from_engineering(self.E, self.nu)[1]

    @property
    def constrained_modulus(self):
        lam, mu = lame_from_engineering(self.E, self.nu)
        return lam + 2.0 * mu

    def with_modulus(self, E: Any) -> "ElasticMaterial":
        return ElasticMaterial(E, self.nu, self.trainable)


@dataclass(frozen=True)
class StrainState:
    """Symmetric strain; shear stored once as the tensor component ``e12``."""

    e11: Any
    e22: Any
    e12: Any
    e33: Any = None

    @property
    def axisymmetric(self) -> bool:
        return self.e33 is not None

    def trace(self):
        tr = self.e11 + self.e22
        return tr if self.e33 is None else tr + self.e33

    def __add__(self, other: "StrainState") -> "StrainState":
        e33 = None if self.e33 is None else self.e33 + other.e33
        return StrainState(self.e11 + other.e11, self.e22 + other.e22, self.e12 + other.e12, e33)

    def __rmul__(self, a) -> "StrainState":
        e33 = None if self.e33 is None else a * self.e33
        return StrainState(a * self.e11, a * self.e22, a * self.e12, e33)


@dataclass(frozen=True)
class StressState:
    s11: Any
    s22: Any
    s12: Any
    s33: Any = None

    def __add__(self, other: "StressState") -> "StressState":
        s33 = None if self.s33 is None else self.s33 + other.s33
        return StressState(self.s11 + other.s11, self.s22 + other.s22, self.s12 + other.s12, s33)

    def __rmul__(self, a) -> "StressState":
        s33 = None if self.s33 is None else a * self.s33
        return StressState(a * self.s11, a * self.s22, a * self.s12, s33)


@dataclass(frozen=True)
class ResidualPair:
    """Equilibrium residuals in the horizontal and vertical directions."""

    first: Any
    second: Any


def _parts(jet: NetJet2):
    g = jet.input_grad
    return jet.value[..., 0], g[..., 0, 0], g[..., 0, 1], g[..., 1, 0], g[..., 1, 1]


def strain_plane(jet: NetJet2) -> StrainState:
    _, ux_x, ux_z, uz_x, uz_z = _parts(jet)
    return StrainState(ux_x, uz_z, 0.5 * (ux_z + uz_x))


def strain_axisymmetric(jet: NetJet2, r: Any, eps_bar: float = EPS_BAR) -> StrainState:
    """Axisymmetric strain with hoop strain ``u_r / (r + eps_bar)``."""
    ur, ur_r, ur_z, uz_r, uz_z = _parts(jet)
    return StrainState(ur_r, uz_z, 0.5 * (ur_z + uz_r), ur / (r + eps_bar))


def stress_from_strain(mat: ElasticMaterial, eps: StrainState) -> StressState:
    lam, mu = mat.lam, mat.mu
    tr = eps.trace()
    s33 = None if eps.e33 is None else lam * tr + 2.0 * mu * eps.e33
    return StressState(lam * tr + 2.0 * mu * eps.e11, lam * tr + 2.0 * mu * eps.e22,
                       2.0 * mu * eps.e12, s33)


def _strain_gradients(jet: NetJet2):
    """d(e11, e22, e12)/d(x1, x2) from the displacement Hessian."""
    if jet.input_hess is None:
        raise ValueError("residuals need a second-order jet")
    H = jet.input_hess
    e11 = (H[..., 0, 0, 0], H[..., 0, 0, 1])
    e22 = (H[..., 1, 1, 0], H[..., 1, 1, 1])
    e12 = (0.5 * (H[..., 0, 1, 0] + H[..., 1, 0, 0]), 0.5 * (H[..., 0, 1, 1] + H[..., 1, 0, 1]))
    return e11, e22, e12


def residual_plane(mat: ElasticMaterial, jet: NetJet2) -> ResidualPair:
    """Divergence of plane-strain stress (no body force)."""
    lam, mu = mat.lam, mat.mu
    e11, e22, e12 = _strain_gradients(jet)
    tr_x = e11[0] + e22[0]
    tr_z = e11[1] + e22[1]
    s11_x = lam * tr_x + 2.0 * mu * e11[0]
    s22_z = lam * tr_z + 2.0 * mu * e22[1]
    return ResidualPair(s11_x + 2.0 * mu * e12[1], 2.0 * mu * e12[0] + s22_z)


def residual_axisymmetric(mat: ElasticMaterial, jet: NetJet2, r: Any,
                          eps_bar: float = EPS_BAR) -> ResidualPair:
    """r-multiplied axisymmetric equilibrium.

    Returns ``(d(r s_rr)/dr + r ds_rz/dz - s_tt, d(r s_rz)/dr + r ds_zz/dz)``;
    every 1/r inside the hoop strain and its derivatives is regularized with
    ``eps_bar`` while the explicit factors of ``r`` are kept exact.
    """
    lam, mu = mat.lam, mat.mu
    rho = r + eps_bar
    eps = strain_axisymmetric(jet, r, eps_bar)
    sig = stress_from_strain(mat, eps)
    ur, ur_r, ur_z, _, _ = _parts(jet)
    e11, e22, e12 = _strain_gradients(jet)
    e33_r = ur_r / rho - ur / (rho * rho)
    e33_z = ur_z / rho
    tr_r = e11[0] + e22[0] + e33_r
    tr_z = e11[1] + e22[1] + e33_z
    s11_r = lam * tr_r + 2.0 * mu * e11[0]
    s22_z = lam * tr_z + 2.0 * mu * e22[1]
    s12_r = 2.0 * mu * e12[0]
    s12_z = 2.0 * mu * e12[1]
    first = sig.s11 + r * (s11_r + s12_z) - sig.s33
    second = sig.s12 + r * (s12_r + s22_z)
    return ResidualPair(first, second)


def traction_components(sigma: StressState, normal: Any) -> tuple[Any, Any]:
    """``t_i = sigma_ji n_j`` without validating the normal (traced use)."""
    n1, n2 = normal[..., 0], normal[..., 1]
    return sigma.s11 * n1 + sigma.s12 * n2, sigma.s12 * n1 + sigma.s22 * n2


def traction(sigma: StressState, normal: Any) -> jax.Array:
    """Traction vector on a surface with unit ``normal``, shape ``(..., 2)``."""
    normal = jnp.asarray(normal, dtype=jnp.float64)
    if _concrete(normal):
        norms = np.linalg.norm(np.asarray(normal), axis=-1)
        if not np.allclose(norms, 1.0, rtol=0.0, atol=1e-9):
            raise GeometryError(f"traction needs a unit normal, got norm {norms}")
    return jnp.stack(traction_components(sigma, normal), axis=-1)
