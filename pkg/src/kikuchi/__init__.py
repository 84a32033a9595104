"""Kikuchi-hierarchy spectral methods for tensor PCA."""
from .combinat import (
    binomial,
    gaussian_moment,
    multinomial,
    rademacher_moment,
    rank_subset,
    unrank_subset,
)
from .errors import (
    ConfigurationError,
    ConvergenceError,
    FormatError,
    InvalidArgumentError,
    KikuchiError,
    ResourceLimitError,
)
from .operator import KikuchiOperator, row_degree
from .pca import (
    DetectionParams,
    DetectionVerdict,
    RecoveryResult,
    correlation,
    detect,
    planted_qform_even,
    planted_qform_odd,
    recover,
    signal_vector,
)
from .spectral import SpectralEstimate, estimate_norm, full_spectrum, rayleigh, spectral_moments
from .tensor import Distribution, Spike, SymmetricTensor, add_spike, load, sample_tensor, save
from .trace_oracle import (
    TraceWalk,
    expected_trace,
    expected_trace_bruteforce,
    generate_lower_bound_walks,
    lower_bound_family_count,
    monte_carlo_trace,
    walk_value,
)

__version__ = "0.1.0"
