"""Event-study estimation over election cycles, with a ground-truth panel simulator."""

__version__ = "0.1.0"

from .panel import ElectionCalendar, PanelDataset, load_csv, write_csv  # noqa: E402
from .regress import RegressionProblem, fit  # noqa: E402
from .eventstudy import EventStudySpec, fit_dynamic, fit_static, monthly_path  # noqa: E402

__all__ = [
    "ElectionCalendar",
    "PanelDataset",
    "load_csv",
    "write_csv",
    "RegressionProblem",
    "fit",
    "EventStudySpec",
    "fit_dynamic",
    "fit_static",
    "monthly_path",
]
