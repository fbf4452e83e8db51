"""Hybrid SIR particle / ensemble square-root Kalman filtering with twin-experiment harnesses."""

from hybridfilter.ensemble import (
    Decomposition,
    InvalidEnsembleError,
    InvalidParameterError,
    decompose,
    effective_sample_size,
    inflate,
    normalize_weights,
    reconstitute,
)
from hybridfilter.blur import BlurOperator, apply_blur, blur_spectrum
from hybridfilter.models import (
    L96Config,
    ModelBlowUpError,
    SpectralProjector,
    build_projector,
    henon_step,
    l96_tendency,
    rk4_integrate,
)
from hybridfilter.particle import (
    DegenerateWeightsError,
    ScalarObservations,
    gaussian_log_likelihood,
    sir_assimilate,
    systematic_resample,
    tempered_weights,
)
from hybridfilter.esrf import (
    esrf_cycle,
    EsrfParams,
    RotationFactory,
    esrf_assimilate,
    esrf_scalar_update,
    localization_taper,
    mean_preserving_rotation,
    sample_haar_orthogonal,
)
from hybridfilter.hybrid import HybridParams, hybrid_assimilate, solve_alpha
from hybridfilter.metrics import crps_ensemble, crps_members, rmse, spread

__version__ = "0.1.0"
