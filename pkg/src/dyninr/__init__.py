"""Dynamical implicit neural representations at desk scale.

Coordinate networks whose latent code evolves under a learned vector field
before decoding, next to their static counterparts, with the spectral and
kernel analysis tools used to compare them.
"""

__version__ = "0.1.0"

from .analysis import (  # noqa: F401
    BoundInputs,
    JacobianChain,
    NtkReport,
    closed_form_dinr_gradient,
    eigen_sym,
    empirical_ntk,
    flow_lipschitz_check,
    ntk_rank_compare,
    ntk_report,
    rademacher_bound,
    rank_propagation_check,
    trajectory_jacobians,
)
from .autodiff import GradientVector, Tape, Tensor  # noqa: F401
from .data import GridSignal, SignalDataset, SynthSpec  # noqa: F401
from .metrics import MetricRecord, mse, psnr, ssim  # noqa: F401
from .models import (  # noqa: F401
    Model,
    ModelSpec,
    dynamical_forward,
    init_model,
    load_checkpoint,
    save_checkpoint,
    static_forward,
)
from .training import TrainConfig, TrainHistory, evaluate, train  # noqa: F401
