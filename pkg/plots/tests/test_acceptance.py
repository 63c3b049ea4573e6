"""Acceptance: every figure kind renders from the committed sample CSVs."""

import os

import pandas as pd

from ptplots.render import bias_boxplot, render

SAMPLES = os.path.join(os.path.dirname(__file__), "..", "sample_data")


def test_secondary_acceptance(tmp_path):
    kinds = {
        "prior-panels": "density_grid.csv",
        "bias-boxplot": "bias_long.csv",
        "interval-forest": "report.csv",
    }
    sizes = {}
    for kind, csv in kinds.items():
        out = tmp_path / f"{kind}.png"
        render(kind, [os.path.join(SAMPLES, csv)], str(out))
        sizes[kind] = out.stat().st_size
    fig = bias_boxplot(pd.read_csv(os.path.join(SAMPLES, "bias_long.csv")))
    has_zero = all(
        any(len(ln.get_ydata()) == 2 and set(ln.get_ydata()) == {0.0} for ln in ax.lines)
        for ax in fig.axes
    )
    ok = all(s > 1000 for s in sizes.values()) and has_zero
    print(
        f"ACCEPTANCE {'PASS' if ok else 'FAIL'} - plot rendering: "
        f"sizes {sizes}, zero reference line present: {has_zero}"
    )
    assert ok
