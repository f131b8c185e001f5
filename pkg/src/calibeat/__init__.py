"""Proper losses, loss-regularized FTRL, exact regret identities and binned
calibeating."""

__version__ = "0.1.0"

from .bregman import (
    GenVarState,
    WeightedStream,
    genvar_batch,
    genvar_fold,
    genvar_path,
    genvar_update,
    online_variance_identity,
    three_points_residual,
    total_variance_check,
)
from .calibeating import (
    Binning,
    Calibeater,
    CalibReport,
    approx_error_bound,
    assign,
    binned_decomposition,
    build_binning,
    calibeat,
    calibeat_certificate,
    calibration_regret_identity,
    clamp_forecast,
    decomposition_by_forecast,
)
from .exceptions import (
    CalibeatError,
    ConfigError,
    HorizonTooSmall,
    InvalidEpsilon,
    InvalidEta,
    InvalidSimplex,
    OutOfGrid,
    SingularGradient,
    UndefinedFirstPrediction,
    Unsupported,
)
from .forecaster import (
    FTRLForecaster,
    FtrlState,
    Transcript,
    argmin_oracle,
    best_in_hindsight,
    observe,
    predict,
    predict_exact,
    prediction_path,
    prefix_point,
    run,
)
from .identities import IdentityGrid, run_identity_suite
from .losses import (
    Family,
    LossSpec,
    bregman,
    grad_psi,
    lipschitz_const,
    loss_eval,
    loss_eval_dist,
    properness_check,
    psi,
)
from .regret import (
    bound_lipschitz,
    bound_tsallis,
    btrl_equality,
    decompose,
    headline_rate,
    multi_loss_regret,
    regret,
)
from .sequences import SequenceSource, forecast_stream, generate
