"""Self-supervised despeckling of SAR amplitude images.

Multiplicative Gamma speckle is made additive by a log transform and close
to Gaussian by a fitted Yeo-Johnson power transform; a small residual CNN
is then trained on further-corrupted copies of the noisy data alone and
applied once at inference.
"""
from .errors import (
    DomainError,
    FitError,
    FormatError,
    NumericError,
    ParameterError,
    RangeError,
    S4DMError,
    ShapeError,
)
from .gridmath import RandomStream, conv2d, conv2d_backward, sample_gamma, sample_normal
from .inference import TileScheme, despeckle, tile_plan
from .metrics import EnlReport, enl, mse_psnr, sample_skew_kurt
from .network import ArchSpec, backward, forward, init_params, load_checkpoint, save_checkpoint
from .speckle import SpeckleConfig, apply_speckle, log_gamma_moments, make_synthetic_targets
from .training import TrainConfig, corrupt, delta, delta_var, loss, train, train_step
from .transform import TransformSpec, fit_lambda, from_z_domain, lyj_forward, lyj_inverse, to_z_domain

__version__ = "0.1.0"
