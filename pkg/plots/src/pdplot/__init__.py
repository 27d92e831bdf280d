"""Figure rendering for simulator CSV outputs."""

from .figures import (
    COMPARE_FIELDS,
    MONITOR_FIELDS,
    SchemaError,
    compare_figure,
    load_figure,
    plot_compare,
    plot_load,
    read_compare_csv,
    read_monitor_csv,
)

__all__ = [
    "COMPARE_FIELDS",
    "MONITOR_FIELDS",
    "SchemaError",
    "compare_figure",
    "load_figure",
    "plot_compare",
    "plot_load",
    "read_compare_csv",
    "read_monitor_csv",
]
