"""Hierarchical forecasting with a network coherency regularizer."""
from .data import PreparedData, SeriesPanel, generate_synthetic, load_panel, make_noisy, prepare
from .hierarchy import (
    AggregationMatrix,
    HierarchyError,
    HierarchySpec,
    build_aggregation,
    coherency,
    projection_matrix,
    summing_matrix,
)
from .losses import FinalLinearLayer, coherency_bound, combined_loss, core_regularizer
from .metrics import MetricsReport, crps_empirical, evaluate, wmape
from .models import build_model, sample_forecasts

__version__ = "0.1.0"
