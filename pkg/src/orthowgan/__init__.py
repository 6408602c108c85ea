"""Wasserstein-GAN training on 2-D synthetic distributions under seven
Lipschitz-enforcement schemes, with constraint-adherence, generalization and
mode-preservation diagnostics."""

__version__ = "0.1.0"

from .linalg import SingularSystemError, SvdResult, as_matrix, solve_linear, spectral_norm, svd
from .autodiff import (
    MlpParams,
    Tape,
    bind,
    forward,
    grad,
    input_gradient,
    mlp,
    param_gradients,
    penalty_param_gradients,
)
from .ortho import (
    BjorckConvergenceError,
    ConvTensor,
    DegenerateMatrixError,
    bjorck_blend,
    bjorck_orthogonalize,
    bjorck_step,
    cayley_update,
    gram_deviation,
    orientation,
    ortho_penalty,
    reshape_conv,
    svd_reinit,
    unreshape_conv,
)
from .wgan import (
    SCHEMES,
    AdamState,
    DatasetSpec,
    DivergedError,
    MetricRow,
    TrainConfig,
    TrainState,
    adam_step,
    blend_sigma,
    critic_objective,
    interpolates,
    sample_real,
    train,
)
from .metrics import (
    ModeReport,
    TournamentResult,
    estimate_lipschitz,
    exact_w1,
    ndb_modes,
    singular_spectrum,
    tournament,
    wasserstein_estimate,
)

__all__ = [name for name in dir() if not name.startswith("_")]
