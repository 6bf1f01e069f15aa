"""
Watershed datasets: the CSV schema, the sample pipeline and the synthetic
generator.
"""
from .synth import (
    BucketState,
    ClimateParams,
    GeneratedWatershed,
    RoutingParams,
    SoilParams,
    SynthSpec,
    WatershedDecl,
    bucket_step,
    distant_spec,
    gen_precip,
    generate_experiment,
    generate_watershed,
    related_spec,
    route_discharge,
    simulate_runoff,
)
from .watershed import (
    DataValidationError,
    DateRange,
    GridCell,
    WatershedDataset,
    load_watershed,
    save_watershed,
)
from .windows import (
    SPLITS,
    WINDOW,
    DistanceWeights,
    NormStats,
    PreparedWatershed,
    SampleBatch,
    WindowedSample,
    apply_weights,
    distance_weights,
    normalize_fit,
    prepare_watershed,
    split_ranges,
    stack_samples,
    window_samples,
)

__all__ = [
    "SPLITS",
    "WINDOW",
    "BucketState",
    "ClimateParams",
    "DataValidationError",
    "DateRange",
    "DistanceWeights",
    "GeneratedWatershed",
    "GridCell",
    "NormStats",
    "PreparedWatershed",
    "RoutingParams",
    "SampleBatch",
    "SoilParams",
    "SynthSpec",
    "WatershedDataset",
    "WatershedDecl",
    "WindowedSample",
    "apply_weights",
    "bucket_step",
    "distance_weights",
    "distant_spec",
    "gen_precip",
    "generate_experiment",
    "generate_watershed",
    "load_watershed",
    "normalize_fit",
    "prepare_watershed",
    "related_spec",
    "route_discharge",
    "save_watershed",
    "simulate_runoff",
    "split_ranges",
    "stack_samples",
    "window_samples",
]
