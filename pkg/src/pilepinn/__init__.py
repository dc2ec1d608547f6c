"""Domain-decomposed physics-informed networks for pile-soil elasticity."""

import jax

# Second-derivative residuals lose too many digits in single precision.
jax.config.update("jax_enable_x64", True)

from pilepinn.autodiff import (  # noqa: E402
    NetJet2,
    NetworkParams,
    flatten_params,
    loss_grad,
    mlp_eval,
    mlp_eval_jet2,
    mlp_init,
    unflatten_params,
)
from pilepinn.mechanics import ElasticMaterial, lame_from_engineering  # noqa: E402

__all__ = [
    "ElasticMaterial",
    "NetJet2",
    "NetworkParams",
    "flatten_params",
    "lame_from_engineering",
    "loss_grad",
    "mlp_eval",
    "mlp_eval_jet2",
    "mlp_init",
    "unflatten_params",
]

__version__ = "0.1.0"
