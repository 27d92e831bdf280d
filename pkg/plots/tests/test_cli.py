"""Command-line entry points, including an end-to-end render against real
simulator output when the `pdsim` command is installed.

The integration test talks to the simulator exclusively through its CLI and
file formats; there is no import linkage in either direction.
"""

import csv
import json
import shutil
import subprocess

import pytest

from pdplot import COMPARE_FIELDS
from pdplot.figures import main_compare, main_load


@pytest.fixture
def compare_csv(tmp_path):
    path = tmp_path / "compare.csv"
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(COMPARE_FIELDS)
        writer.writerow(["slo-aware", 2.0, 0.99, 0.2, 0.01])
        writer.writerow(["slo-aware", 4.0, 0.92, 0.6, 0.02])
    return path


def test_compare_cli_renders(compare_csv, tmp_path):
    out = tmp_path / "fig.png"
    assert main_compare([str(compare_csv), str(out)]) == 0
    assert out.exists()


def test_usage_error_exits_1(capsys):
    with pytest.raises(SystemExit) as exc:
        main_compare([])
    assert exc.value.code == 1
    assert "error" in capsys.readouterr().err


def test_missing_input_exits_2(tmp_path, capsys):
    assert main_load([str(tmp_path / "nope.csv"), str(tmp_path / "fig.png")]) == 2
    assert "plot-load: error:" in capsys.readouterr().err


def test_schema_error_exits_2(tmp_path, capsys):
    bad = tmp_path / "bad.csv"
    bad.write_text("foo,bar\n1,2\n")
    assert main_compare([str(bad), str(tmp_path / "fig.png")]) == 2
    err = capsys.readouterr().err
    assert "missing columns" in err


# -- end-to-end against the simulator CLI ----------------------------------


needs_pdsim = pytest.mark.skipif(
    shutil.which("pdsim") is None, reason="pdsim command not installed"
)


@needs_pdsim
def test_renders_real_simulator_outputs(tmp_path):
    """Drive the simulator over a small bursty workload, then render both
    figures from the files it wrote."""
    trace = tmp_path / "trace.jsonl"
    with open(trace, "w") as f:
        t = 0.0
        for i in range(60):
            # Short burst in the middle third.
            t += 0.08 if 20 <= i < 40 else 0.3
            row = {"arrival_s": round(t, 3), "input_tokens": 300 + 40 * (i % 5), "output_tokens": 60}
            f.write(json.dumps(row) + "\n")
    config = tmp_path / "sim.cfg"
    config.write_text(
        "instances = 4\ninit_prefill = 2\ninit_decode = 2\nkv_capacity_tokens = 3000\n"
    )

    compare_csv = tmp_path / "compare.csv"
    subprocess.run(
        [
            "pdsim", "compare", str(trace), "--config", str(config),
            "--rates", "3", "5", "--strategies", "slo-aware", "minimal-load",
            "--out", str(compare_csv),
        ],
        check=True, capture_output=True, text=True,
    )
    assert main_compare([str(compare_csv), str(tmp_path / "compare.png")]) == 0
    assert (tmp_path / "compare.png").stat().st_size > 0

    run_dir = tmp_path / "run"
    subprocess.run(
        ["pdsim", "run", str(trace), "--config", str(config), "--out-dir", str(run_dir)],
        check=True, capture_output=True, text=True,
    )
    assert main_load([str(run_dir / "monitor.csv"), str(tmp_path / "load.png")]) == 0
    assert (tmp_path / "load.png").stat().st_size > 0
