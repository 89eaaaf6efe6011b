import xml.etree.ElementTree as ET

import numpy as np
import pytest

from locconv.curves import emit_learning_curves, read_curves, summarize


def test_single_seed_band_collapses():
    rows = summarize({"CNN": [[0.3, 0.2, 0.1]]})
    assert all(r["min"] == r["mean"] == r["max"] for r in rows)


def test_row_count_and_means(tmp_path):
    rng = np.random.default_rng(0)
    runs = {name: [list(rng.random(7)) for _ in range(3)] for name in ("CNN", "LI_CNN")}
    emit_learning_curves(runs, tmp_path / "c.csv", tmp_path / "c.svg")
    rows = read_curves(tmp_path / "c.csv")
    assert len(rows) == 2 * 7
    for r in rows:
        col = [run[r["epoch"] - 1] for run in runs[r["model"]]]
        assert abs(r["mean"] - sum(col) / 3) <= 1e-12
        assert r["min"] == min(col) and r["max"] == max(col)


def test_svg_is_well_formed_and_log_scaled(tmp_path):
    emit_learning_curves({"A": [[1.0, 0.1, 0.01]], "B": [[0.5, 0.05, 0.02], [0.4, 0.04, 0.03]]},
                         tmp_path / "c.csv", tmp_path / "c.svg", ylabel="test_mse")
    root = ET.parse(tmp_path / "c.svg").getroot()
    ns = "{http://www.w3.org/2000/svg}"
    assert len(root.findall(f"{ns}polyline")) == 2 and len(root.findall(f"{ns}polygon")) == 2
    labels = [t.text for t in root.findall(f"{ns}text")]
    assert "1e-2" in labels and "1e0" in labels and "test_mse (log scale)" in labels
    line = root.findall(f"{ns}polyline")[0].get("points").split()
    ys = [float(p.split(",")[1]) for p in line]
    # equal ratios give equal vertical steps
    assert ys[1] - ys[0] == pytest.approx(ys[2] - ys[1])


def test_empty_input_is_an_error(tmp_path):
    with pytest.raises(ValueError):
        summarize({})
    with pytest.raises(ValueError):
        emit_learning_curves({"CNN": [[]]}, tmp_path / "c.csv")
