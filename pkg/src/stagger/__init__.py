"""Event-study estimators for staggered adoption, with a Hotelling model of religious competition."""

from .estimators import (
    CohortWeights,
    Comparison,
    EstimateTable,
    as_interaction_weighted,
    compare_estimators,
    tw_split_sample,
    twfe_event_study,
)
from .exceptions import (
    ConvergenceError,
    DesignError,
    EstimationError,
    MonteCarloError,
    OutOfRegionError,
    SchemaError,
    StaggerError,
)
from .panel import (
    EndpointPolicy,
    EventTimeDesign,
    FactorStructure,
    FixedEffectSpec,
    PanelDataset,
    build_event_design,
    demean,
    read_panel_csv,
    relative_time,
)
from .regress import cluster_vcov, ols

__version__ = "0.1.0"
