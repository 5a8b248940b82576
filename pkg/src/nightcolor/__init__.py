"""
Estimate red, green and blue night-light intensity from panchromatic
artificial light at night (ALAN) and built-up area rasters.
"""

from .elastic_map import ElasticMap, fit_elastic_map, penalty_sweep, project_impute
from .errors import (
    ConvergenceWarning,
    DatasetError,
    GeometryError,
    GridFormatError,
    ModelError,
    NightcolorError,
    RankDeficiencyError,
)
from .features import BANDS, PREDICTORS, Dataset, assemble, neighborhood_diffs, read_dataset_csv, write_dataset_csv
from .harness import EvaluationReport, ExperimentConfig, colorize, load_config, run_experiment
from .metrics import consistency, contrast_similarity, factor_contribution, pearson, wmse
from .models import fit_model, load_model, save_model
from .outliers import filter_outliers
from .raster_io import RasterGrid, aggregate_stats, read_ascii_grid, write_ascii_grid, write_rgb_image
from .regressors import fit_forest, fit_kernel, fit_ols

__version__ = "0.1.0"
