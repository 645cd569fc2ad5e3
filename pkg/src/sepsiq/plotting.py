"""SVG rendering of histogram/curve CSVs.

Rendering is a pure function of the emitted CSVs — nothing is recomputed
from datasets or checkpoints, so plots can be regenerated at any time.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

from .errors import SchemaError
from .evaluation import read_curve_rows, read_histogram_counts


def render_histogram_svg(csv_path, svg_path) -> None:
    counts = read_histogram_counts(csv_path)
    stem = Path(csv_path).stem  # hist_<group>_<source>
    parts = stem.split("_")
    title = f"{parts[2]} policy, {parts[1]} SOFA" if len(parts) == 3 else stem

    fig, ax = plt.subplots(figsize=(4.2, 3.8))
    image = ax.imshow(counts.T, origin="lower", cmap="viridis")
    ax.set_xlabel("IV fluid bin (0 = no drug)")
    ax.set_ylabel("Vasopressor bin (0 = no drug)")
    ax.set_xticks(range(5))
    ax.set_yticks(range(5))
    ax.set_title(title)
    for iv in range(5):
        for vp in range(5):
            ax.text(iv, vp, str(counts[iv, vp]), ha="center", va="center",
                    color="white", fontsize=7)
    fig.colorbar(image, ax=ax, label="timesteps")
    fig.tight_layout()
    fig.savefig(svg_path, format="svg")
    plt.close(fig)


def render_curve_svg(csv_path, svg_path) -> None:
    diffs, counts, mortality = read_curve_rows(csv_path)
    stem = Path(csv_path).stem  # curve_<intervention>_<group>
    parts = stem.split("_")
    drug = {"iv": "IV fluid", "vp": "vasopressor"}.get(parts[1], parts[1]) if len(parts) == 3 else ""
    title = f"{drug}, {parts[2]} SOFA" if len(parts) == 3 else stem

    fig, ax = plt.subplots(figsize=(4.6, 3.4))
    shown = counts > 0
    ax.plot(diffs[shown], mortality[shown], marker="o", color="tab:red")
    ax.set_xlabel("policy bin - physician bin")
    ax.set_ylabel("observed mortality")
    ax.set_xticks(diffs)
    ax.set_ylim(0.0, 1.0)
    ax.set_title(title)
    for d, c, m in zip(diffs[shown], counts[shown], mortality[shown]):
        ax.annotate(str(c), (d, m), textcoords="offset points", xytext=(0, 6), fontsize=7)
    fig.tight_layout()
    fig.savefig(svg_path, format="svg")
    plt.close(fig)


def render_directory(in_dir, out_dir) -> list:
    """Render every hist_*.csv and curve_*.csv found; returns SVG paths."""
    in_dir, out_dir = Path(in_dir), Path(out_dir)
    rendered = []
    hist_csvs = sorted(in_dir.glob("hist_*.csv"))
    curve_csvs = sorted(in_dir.glob("curve_*.csv"))
    if not hist_csvs and not curve_csvs:
        raise SchemaError(f"{in_dir}: no hist_*.csv or curve_*.csv files to render")
    for csv_path in hist_csvs:
        svg_path = out_dir / (csv_path.stem + ".svg")
        render_histogram_svg(csv_path, svg_path)
        rendered.append(svg_path)
    for csv_path in curve_csvs:
        svg_path = out_dir / (csv_path.stem + ".svg")
        render_curve_svg(csv_path, svg_path)
        rendered.append(svg_path)
    return rendered
