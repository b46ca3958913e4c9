"""Empirical-copula multivariate ensemble postprocessing.

ECC, Schaake shuffle variants and SimSchaake reordering of EMOS marginals,
with proper scores, multivariate rank histograms and a synthetic scenario
generator.
"""
__version__ = "0.1.0"

from .archive import Archive
from .core import (DataError, ForecastCase, InfeasibleError, MarginId, ObservationRecord,
                   PostprocessedEnsemble, RankTemplate, compute_ranks, derive_template,
                   empirical_copula_eval, reorder)
from .emos import (EmosModel, PredictiveLaw, fit_emos, gaussian_crps, predictive_law,
                   sample_equidistant)
from .templates import (MarginStandardizer, SimilarityScore, clark_window_dates, ecc_template,
                        observation_template, random_schaake_dates, similarity, simschaake_dates,
                        standardize, standardize_similarity)
from .verify import (RankHistogram, StationGeometry, VerificationReport, aggregate, average_rank,
                     band_depth_rank, crps_ensemble, energy_score, multivariate_rank,
                     variogram_score, vs_weights)
