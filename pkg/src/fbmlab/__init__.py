"""Estimation of the Hurst index, signal scale and noise scale of fractional
Brownian motion observed under moving-average measurement noise."""

__version__ = "0.1.0"

from .model import (  # noqa: E402
    DEFAULT_BOX,
    DegenerateInputError,
    ObservationSeries,
    ParamBox,
    SamplingScheme,
    Theta,
    read_series,
    write_series,
)
from .simulate import RngStream, synthesize  # noqa: E402
from .estimators import (  # noqa: E402
    EstimationResult,
    GridConfig,
    H_star,
    h0_estimate,
    iterate,
    practical_estimate,
)
from .likelihood import fisher_I, loglik, one_step, score  # noqa: E402

__all__ = [
    "DEFAULT_BOX", "DegenerateInputError", "EstimationResult", "GridConfig", "H_star",
    "ObservationSeries", "ParamBox", "RngStream", "SamplingScheme", "Theta", "fisher_I",
    "h0_estimate", "iterate", "loglik", "one_step", "practical_estimate", "read_series",
    "score", "synthesize", "write_series",
]
