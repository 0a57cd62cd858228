"""kflqr: globally linear (lifted LTI) models of control-affine nonlinear
systems, learned from trajectory data through a monomial-lifted
diffeomorphism, and used for infinite-horizon LQR of the original plant.
"""

__version__ = "0.1.0"

from . import diffeo, koopman_model, linalg, lqr, monomial, plant, training

__all__ = [
    "diffeo",
    "koopman_model",
    "linalg",
    "lqr",
    "monomial",
    "plant",
    "training",
]
