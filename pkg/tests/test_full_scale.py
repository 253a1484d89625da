"""Full-scale scenario runs; opt in with ``CACHEPOOL_SLOW=1``."""

import os

import numpy as np
import pytest

from cachepool.cli import EXIT_OK, main, read_csv

pytestmark = [
    pytest.mark.slow,
    pytest.mark.skipif(os.environ.get("CACHEPOOL_SLOW") != "1", reason="set CACHEPOOL_SLOW=1 for full-scale runs"),
]


def summary(out, method):
    return {r["flow"]: float(r["max_rel_error"]) for r in read_csv(out / "compare_summary.csv") if r["method"] == method}


def test_experiment1_curves(tmp_path):
    assert main(["compare", "--scenario", "experiment1", "--out", str(tmp_path)]) == EXIT_OK
    assert max(summary(tmp_path, "che").values()) <= 0.10


def test_experiment2_curves(tmp_path):
    assert main(["compare", "--scenario", "experiment2", "--out", str(tmp_path)]) == EXIT_OK
    assert max(summary(tmp_path, "closed").values()) <= 0.15
    rows = [r for r in read_csv(tmp_path / "simulate.csv") if r["flow"] == "1" and 500 <= float(r["x"]) <= 2000]
    xs, ys = [float(r["x"]) for r in rows], [float(r["miss_ratio"]) for r in rows]
    assert abs(np.polyfit(np.log(xs), np.log(ys), 1)[0] + 0.9) <= 0.1


def test_experiment3_region(tmp_path):
    assert main(["plan", "--scenario", "experiment3", "--out", str(tmp_path)]) == EXIT_OK
    region = {round(float(r["nu1"]), 2): r["member"] == "true" for r in read_csv(tmp_path / "good_region.csv")}
    assert all(region[v] for v in (0.4, 0.45, 0.5, 0.55, 0.6, 0.65, 0.7, 0.75))
    assert not region[0.2]
