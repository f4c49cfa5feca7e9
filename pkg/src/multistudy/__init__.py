"""Multi-study stacking and joint ensemble construction."""

__version__ = "0.1.0"

from .core import (  # noqa: F401
    CoefficientMatrix,
    EnsembleWeights,
    RankDeficiencyWarning,
    Standardizer,
    Study,
    build_design,
    fit_standardizer,
    intercept_free_mask,
    nnls_fit,
    predict,
    ridge_fit,
)
