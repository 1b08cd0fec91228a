"""Official metrics, confidence intervals, and the two evaluation
protocols (5-fold cross-validation and official train/test split)."""

from .metrics import (  # noqa: F401
    ConfusionCounts,
    MetricError,
    accuracy,
    ci95_t,
    confusion_counts,
    f1_macro,
    f1_positive,
    metric_for,
)
from .experiments import (  # noqa: F401
    MetricReport,
    TaskResult,
    format_report_table,
    load_records,
    run_cv,
    run_traintest,
    write_records,
)
