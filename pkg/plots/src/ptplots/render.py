"""Figure builders for the engine's CSV outputs.

Three kinds are supported: density/survival panels from a density grid,
bias boxplots from a long-format study table (with a zero reference line),
and paired credible-interval forests from a report table. Statistics are
never recomputed here; the CSVs are the single source of truth.
"""

from __future__ import annotations

import os

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import pandas as pd

__all__ = ["render", "prior_panels", "bias_boxplot", "interval_forest", "REQUIRED_COLUMNS"]

REQUIRED_COLUMNS = {
    "prior-panels": ["cohort_id", "t", "density", "survival"],
    "bias-boxplot": ["replicate", "method", "cell", "bias"],
    "interval-forest": ["name", "estimate", "lower", "upper"],
}

POSITIVE_COLOR = "#c23b22"
NEGATIVE_COLOR = "#2b6f9e"


def _load(paths, kind: str) -> pd.DataFrame:
    frames = []
    for path in paths:
        df = pd.read_csv(path)
        missing = [c for c in REQUIRED_COLUMNS[kind] if c not in df.columns]
        if missing:
            raise ValueError(f"{path}: missing columns {missing} for kind {kind}")
        frames.append(df)
    out = pd.concat(frames, ignore_index=True)
    if out.empty:
        raise ValueError(f"no rows found in {list(paths)}")
    return out


def prior_panels(df: pd.DataFrame):
    """Density (left) and survival (right) curves, one line per cohort."""
    fig, (ax_d, ax_s) = plt.subplots(1, 2, figsize=(10, 4), sharex=True)
    for cid, sub in df.groupby("cohort_id", sort=True):
        sub = sub.sort_values("t")
        ax_d.plot(sub["t"], sub["density"], lw=1.2, label=str(cid))
        ax_s.plot(sub["t"], sub["survival"], lw=1.2, label=str(cid))
    ax_d.set_xlabel("months")
    ax_s.set_xlabel("months")
    ax_d.set_ylabel("density")
    ax_s.set_ylabel("survival")
    ax_s.set_ylim(0, 1.02)
    if df["cohort_id"].nunique() <= 12:
        ax_s.legend(fontsize=8, frameon=False)
    fig.tight_layout()
    return fig


def bias_boxplot(df: pd.DataFrame):
    """Bias boxplots per cell, one panel per method, zero line included."""
    methods = sorted(df["method"].unique())
    cells = sorted(df["cell"].unique(), key=lambda c: (c == "overall", c))
    fig, axes = plt.subplots(len(methods), 1, figsize=(1.2 + 1.1 * len(cells), 2.6 * len(methods)), sharex=True, squeeze=False)
    for ax, method in zip(axes[:, 0], methods):
        sub = df[df["method"] == method]
        data = [sub.loc[sub["cell"] == c, "bias"].to_numpy() for c in cells]
        ax.boxplot(data, tick_labels=cells, widths=0.6)
        ax.axhline(0.0, color="red", lw=1.0, ls="--", label="zero bias")
        ax.set_ylabel("bias")
        ax.set_title(method, fontsize=10)
    axes[-1, 0].tick_params(axis="x", rotation=30)
    fig.tight_layout()
    return fig


def _pair_key(name: str) -> tuple[str, str]:
    base = str(name)
    for suffix, arm in (("-pos", "pos"), (":pos", "pos"), ("-neg", "neg"), (":neg", "neg")):
        if base.endswith(suffix):
            return base[: -len(suffix)], arm
    return base, ""


def interval_forest(df: pd.DataFrame):
    """Horizontal interval per row; rows named *-pos / *-neg are paired."""
    rows = df.reset_index(drop=True)
    labels, arms = zip(*(_pair_key(n) for n in rows["name"]))
    rows = rows.assign(_label=labels, _arm=arms)
    order = list(dict.fromkeys(labels))
    fig, ax = plt.subplots(figsize=(7, 1.1 + 0.5 * len(order)))
    yticks, ynames = [], []
    for slot, label in enumerate(order):
        group = rows[rows["_label"] == label]
        y0 = len(order) - 1 - slot
        yticks.append(y0)
        ynames.append(label)
        for _, row in group.iterrows():
            arm = row["_arm"]
            off = {"pos": 0.12, "neg": -0.12}.get(arm, 0.0)
            color = {"pos": POSITIVE_COLOR, "neg": NEGATIVE_COLOR}.get(arm, "#555555")
            ax.plot([row["lower"], row["upper"]], [y0 + off] * 2, color=color, lw=2.0)
            ax.plot([row["estimate"]], [y0 + off], marker="+", ms=9, color=color)
    ax.set_yticks(yticks)
    ax.set_yticklabels(ynames, fontsize=9)
    ax.set_xlabel("months")
    ax.plot([], [], color=POSITIVE_COLOR, label="marker-positive")
    ax.plot([], [], color=NEGATIVE_COLOR, label="marker-negative")
    ax.legend(fontsize=8, frameon=False, loc="best")
    fig.tight_layout()
    return fig


_BUILDERS = {
    "prior-panels": prior_panels,
    "bias-boxplot": bias_boxplot,
    "interval-forest": interval_forest,
}


def render(kind: str, inputs, out_path: str):
    """Build one figure kind from input CSVs and write the image file."""
    if kind not in _BUILDERS:
        raise ValueError(f"unknown plot kind {kind!r}; available: {sorted(_BUILDERS)}")
    df = _load(list(inputs), kind)
    fig = _BUILDERS[kind](df)
    os.makedirs(os.path.dirname(os.path.abspath(out_path)), exist_ok=True)
    fig.savefig(out_path, dpi=150)
    plt.close(fig)
    return out_path
