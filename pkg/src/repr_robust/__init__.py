"""Label-free robustness toolkit for differentiable representation encoders.

Attacks perturb inputs inside an L-infinity ball to move representations;
measures score the damage against the empirical geometry of clean
representations; certification bounds it probabilistically; adversarial
contrastive training reduces it.  All components run at desk scale on a
bundled synthetic dataset.
"""

from ._kernels import BACKEND as kernel_backend
from .autodiff import Tensor, backward, finite_difference_check

__version__ = "0.1.0"

__all__ = [
    "Tensor",
    "backward",
    "finite_difference_check",
    "kernel_backend",
    "__version__",
]
