"""Render simulator CSV outputs as figures.

Two entry points: a three-panel strategy comparison (attainment and P90
latencies against request rate) from a comparison sweep CSV, and a two-panel
pool load view (instance occupancy and resident tokens over time) from a
monitor CSV.  Only the documented CSV schemas are consumed; there is no
dependency on the simulator itself, so the figures can be rebuilt from
archived result files alone.

Rendering is deterministic: identical input CSVs produce byte-identical
figure files.  The output format follows the file extension, as in any
matplotlib `savefig` call.
"""

from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

# Column contracts of the files this package reads.  These mirror the
# simulator's writers and are validated on every load.
COMPARE_FIELDS = ("strategy", "rate", "attainment", "p90_ttft", "p90_tpot")
MONITOR_FIELDS = (
    "time",
    "instance_id",
    "pool",
    "running_tokens",
    "kv_used",
    "queue_len",
    "pred_delay",
    "avg_interval",
)

# Fixed palette and order so the same strategy set always renders the same
# way; pools are ordered prefill-side to decode-side.
POOL_ORDER = ("prefill", "p_to_d", "d_to_p", "decode")
POOL_COLORS = {
    "prefill": "#1f77b4",
    "p_to_d": "#17becf",
    "d_to_p": "#ff9896",
    "decode": "#d62728",
}
_STRATEGY_PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#8c564b", "#e377c2")

DPI = 150


class SchemaError(ValueError):
    pass


def _check_header(fieldnames, expected: tuple[str, ...], path: Path) -> None:
    got = tuple(fieldnames or ())
    if set(got) == set(expected):
        return
    missing = [c for c in expected if c not in got]
    unexpected = [c for c in got if c not in expected]
    parts = []
    if missing:
        parts.append(f"missing columns: {', '.join(missing)}")
    if unexpected:
        parts.append(f"unexpected columns: {', '.join(unexpected)}")
    raise SchemaError(f"{path}: {'; '.join(parts)}")


def read_compare_csv(path: str | Path) -> list[dict]:
    """Load and validate a comparison sweep CSV.

    Returns one dict per row with `rate` and the metrics as floats.  An empty
    file (no data rows) is an error: there is nothing to plot.
    """
    path = Path(path)
    rows = []
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        _check_header(reader.fieldnames, COMPARE_FIELDS, path)
        for lineno, row in enumerate(reader, start=2):
            try:
                rows.append(
                    {
                        "strategy": row["strategy"],
                        "rate": float(row["rate"]),
                        "attainment": float(row["attainment"]),
                        "p90_ttft": float(row["p90_ttft"]),
                        "p90_tpot": float(row["p90_tpot"]),
                    }
                )
            except ValueError as exc:
                raise SchemaError(f"{path}:{lineno}: {exc}") from exc
    if not rows:
        raise SchemaError(f"{path}: no data rows")
    return rows


def read_monitor_csv(path: str | Path) -> list[dict]:
    """Load and validate a monitor CSV; only the fields the load figure uses
    are parsed, the rest just have to be present."""
    path = Path(path)
    rows = []
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        _check_header(reader.fieldnames, MONITOR_FIELDS, path)
        for lineno, row in enumerate(reader, start=2):
            try:
                rows.append(
                    {
                        "time": float(row["time"]),
                        "instance_id": int(row["instance_id"]),
                        "pool": row["pool"],
                        "running_tokens": int(row["running_tokens"]),
                    }
                )
            except ValueError as exc:
                raise SchemaError(f"{path}:{lineno}: {exc}") from exc
    if not rows:
        raise SchemaError(f"{path}: no data rows")
    unknown = sorted({r["pool"] for r in rows} - set(POOL_ORDER))
    if unknown:
        raise SchemaError(f"{path}: unknown pool values: {', '.join(unknown)}")
    return rows


# -- figure construction ---------------------------------------------------


def compare_figure(rows: list[dict]):
    """Three panels against request rate: attainment, P90 TTFT, P90 TPOT;
    one line per strategy, alphabetical so styling is stable."""
    strategies = sorted({r["strategy"] for r in rows})
    fig, axes = plt.subplots(1, 3, figsize=(12.0, 3.6), constrained_layout=True)
    panels = (
        ("attainment", "attainment"),
        ("p90_ttft", "P90 TTFT (s)"),
        ("p90_tpot", "P90 TPOT (s)"),
    )
    for ax, (metric, label) in zip(axes, panels):
        for i, strategy in enumerate(strategies):
            points = sorted(
                ((r["rate"], r[metric]) for r in rows if r["strategy"] == strategy)
            )
            color = _STRATEGY_PALETTE[i % len(_STRATEGY_PALETTE)]
            ax.plot(
                [p[0] for p in points],
                [p[1] for p in points],
                marker="o",
                color=color,
                label=strategy,
            )
        ax.set_xlabel("request rate (req/s)")
        ax.set_ylabel(label)
        ax.grid(True, alpha=0.3)
    axes[0].set_ylim(0.0, 1.05)
    axes[0].legend()
    return fig


def load_figure(rows: list[dict]):
    """Pool occupancy stacked over time on top, per-pool resident tokens
    below.  Pools missing at a tick count as zero."""
    by_time: dict[float, dict[str, list[int]]] = {}
    for r in rows:
        at = by_time.setdefault(r["time"], {p: [0, 0] for p in POOL_ORDER})
        at[r["pool"]][0] += 1
        at[r["pool"]][1] += r["running_tokens"]
    times = sorted(by_time)
    counts = {p: [by_time[t][p][0] for t in times] for p in POOL_ORDER}
    tokens = {p: [by_time[t][p][1] for t in times] for p in POOL_ORDER}

    fig, (ax_count, ax_tokens) = plt.subplots(
        2, 1, figsize=(9.0, 6.0), sharex=True, constrained_layout=True
    )
    ax_count.stackplot(
        times,
        [counts[p] for p in POOL_ORDER],
        labels=POOL_ORDER,
        colors=[POOL_COLORS[p] for p in POOL_ORDER],
    )
    ax_count.set_ylabel("instances")
    ax_count.legend(loc="upper right")
    for pool in POOL_ORDER:
        ax_tokens.plot(times, tokens[pool], color=POOL_COLORS[pool], label=pool)
    ax_tokens.set_ylabel("running tokens")
    ax_tokens.set_xlabel("time (s)")
    ax_tokens.grid(True, alpha=0.3)
    return fig


def _save(fig, out_path: str | Path) -> Path:
    """Write the figure with timestamps stripped so identical inputs give
    identical bytes regardless of when they are rendered."""
    out = Path(out_path)
    suffix = out.suffix.lower()
    kwargs: dict = {"dpi": DPI}
    if suffix == ".svg":
        kwargs["metadata"] = {"Date": None}
    elif suffix == ".pdf":
        kwargs["metadata"] = {"CreationDate": None}
    elif suffix in (".ps", ".eps"):
        kwargs["metadata"] = {"CreationDate": None}
    with matplotlib.rc_context({"svg.hashsalt": "pdplot"}):
        fig.savefig(out, **kwargs)
    plt.close(fig)
    return out


def plot_compare(csv_path: str | Path, out_path: str | Path) -> Path:
    """Render the strategy comparison figure; the output file is only
    created once the input has parsed cleanly."""
    return _save(compare_figure(read_compare_csv(csv_path)), out_path)


def plot_load(csv_path: str | Path, out_path: str | Path) -> Path:
    """Render the pool load figure from a monitor CSV."""
    return _save(load_figure(read_monitor_csv(csv_path)), out_path)


# -- command line ----------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    # Usage problems exit 1; runtime failures exit 2 (see _main).
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _main(prog: str, render, argv: list[str] | None) -> int:
    parser = _Parser(prog=prog, description=render.__doc__)
    parser.add_argument("csv", help="input CSV file")
    parser.add_argument("out", help="output image path; format follows the extension")
    args = parser.parse_args(argv)
    try:
        render(args.csv, args.out)
    except (OSError, ValueError) as exc:
        print(f"{prog}: error: {exc}", file=sys.stderr)
        return 2
    return 0


def main_compare(argv: list[str] | None = None) -> int:
    return _main("plot-compare", plot_compare, argv)


def main_load(argv: list[str] | None = None) -> int:
    return _main("plot-load", plot_load, argv)
