"""Joint detection, association, and tracking over cluttered multi-scan
batches, by fitting a clutter-plus-tracks mixture from vague initial
hypotheses that sharpen as the iteration proceeds."""

from .engine import (
    DLConfig,
    DLResult,
    IterationTrace,
    OpCounter,
    e_step,
    init_hypotheses,
    run_dl,
)
from .errors import (
    BatchValidationError,
    ConfigError,
    DegenerateGeometryError,
    DegenerateLikelihoodError,
    InvalidBoundsError,
    TrackingError,
)
from .estimator import DynamicLogicTracker
from .evaluation import (
    ComplexityReport,
    MatchCriteria,
    RocPoint,
    complexity_probe,
    default_match_criteria,
    match_tracks,
    roc_curve,
)
from .lifecycle import (
    DetectionReport,
    compute_llr,
    declare_detections,
    detection_candidates,
    lifecycle_step,
    prune_duplicates,
    seed_probe,
)
from .likelihood import batch_log_likelihood, clutter_pdf, track_log_pdf
from .model import (
    Batch,
    HypothesisSet,
    Measurement,
    MeasurementBounds,
    TrackHypothesis,
    batch_from_arrays,
    measurement_volume,
    read_batch_csv,
    validate_batch,
    write_batch_csv,
)
from .scenario import (
    GroundTruth,
    ScenarioConfig,
    TargetSpec,
    generate,
    scr_report,
    single_target_scenario,
    three_target_scenario,
)

__version__ = "0.1.0"

__all__ = [
    "Batch",
    "BatchValidationError",
    "ComplexityReport",
    "ConfigError",
    "DLConfig",
    "DLResult",
    "DegenerateGeometryError",
    "DegenerateLikelihoodError",
    "DetectionReport",
    "DynamicLogicTracker",
    "GroundTruth",
    "HypothesisSet",
    "InvalidBoundsError",
    "IterationTrace",
    "MatchCriteria",
    "Measurement",
    "MeasurementBounds",
    "OpCounter",
    "RocPoint",
    "ScenarioConfig",
    "TargetSpec",
    "TrackHypothesis",
    "TrackingError",
    "batch_from_arrays",
    "batch_log_likelihood",
    "clutter_pdf",
    "complexity_probe",
    "compute_llr",
    "declare_detections",
    "detection_candidates",
    "default_match_criteria",
    "e_step",
    "generate",
    "init_hypotheses",
    "lifecycle_step",
    "match_tracks",
    "measurement_volume",
    "prune_duplicates",
    "read_batch_csv",
    "roc_curve",
    "run_dl",
    "seed_probe",
    "scr_report",
    "single_target_scenario",
    "three_target_scenario",
    "track_log_pdf",
    "validate_batch",
    "write_batch_csv",
]
