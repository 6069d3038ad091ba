from .evaluate import evaluate, physics_points
from .metrics import (
    NearestSensor,
    OracleInterpolator,
    RelativeResidual,
    bootstrap,
    full_field_eval,
    grid_terms,
    mae,
    model_terms,
    point_metrics,
    relative_from_terms,
    relative_physics_residual,
    rmse,
    sensor_test_points,
    strided_points,
)
from .report import (
    MULTIPLIERS,
    REFERENCE_NOTE,
    REFERENCE_VALUES,
    MetricSet,
    ReportError,
    read_metrics,
    render_report,
    write_metrics_csv,
    write_report,
)

__all__ = [
    "MULTIPLIERS",
    "REFERENCE_NOTE",
    "REFERENCE_VALUES",
    "MetricSet",
    "NearestSensor",
    "OracleInterpolator",
    "RelativeResidual",
    "ReportError",
    "bootstrap",
    "evaluate",
    "full_field_eval",
    "grid_terms",
    "mae",
    "model_terms",
    "physics_points",
    "point_metrics",
    "read_metrics",
    "relative_from_terms",
    "relative_physics_residual",
    "render_report",
    "rmse",
    "sensor_test_points",
    "strided_points",
    "write_metrics_csv",
    "write_report",
]
