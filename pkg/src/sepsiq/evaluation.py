"""Action-histogram and mortality-curve analyses over a test split.

Histograms aggregate, per SOFA severity group, every action taken across
all test timesteps — the logged physician action or the policy's greedy
choice. Mortality curves bucket timesteps by (policy bin - physician bin)
per intervention and report the observed death fraction per bucket; a
timestep counts as died when its trajectory ends in death. The low-SOFA
group is excluded from curves because almost nobody in it dies.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from .clinical import N_DOSE_BINS, SofaGroup, sofa_group
from .data import NormStats, OfflineDataset
from .errors import SchemaError
from .qnet import DuelingQNet, greedy_actions

# Maps a raw-state matrix (N, 48) to one action index per row.
PolicyFn = Callable[[np.ndarray], np.ndarray]

DIFF_RANGE = tuple(range(-4, 5))
CURVE_GROUPS = (SofaGroup.MEDIUM, SofaGroup.HIGH)
INTERVENTIONS = ("iv", "vp")


def greedy_policy(net: DuelingQNet, norm_stats: NormStats | None = None) -> PolicyFn:
    """Greedy policy over raw states, normalizing with the checkpoint stats."""

    def policy(states: np.ndarray) -> np.ndarray:
        x = norm_stats.transform(states) if norm_stats is not None else states
        return greedy_actions(net, x)

    return policy


def _group_labels(sofas: np.ndarray) -> np.ndarray:
    return np.array([sofa_group(s).value for s in sofas])


@dataclass
class Histogram2D:
    """Counts over the 5x5 action grid for one severity group and source."""

    sofa_group: SofaGroup
    source: str  # "model" | "physician"
    counts: np.ndarray  # (5, 5) int, indexed [iv_bin, vp_bin]

    @property
    def total(self) -> int:
        return int(self.counts.sum())


def action_histograms(
    dataset: OfflineDataset, policy: PolicyFn | None = None
) -> dict:
    """Per-group 5x5 histograms; ``policy=None`` aggregates the logged actions.

    Groups with no test timesteps come back with all-zero grids rather than
    erroring.
    """
    source = "physician" if policy is None else "model"
    actions = (
        dataset.action_indices if policy is None else np.asarray(policy(dataset.states))
    )
    iv_bins = actions // N_DOSE_BINS
    vp_bins = actions % N_DOSE_BINS
    labels = _group_labels(dataset.sofas)
    histograms = {}
    for group in SofaGroup:
        mask = labels == group.value
        counts = np.zeros((N_DOSE_BINS, N_DOSE_BINS), dtype=np.int64)
        np.add.at(counts, (iv_bins[mask], vp_bins[mask]), 1)
        histograms[group] = Histogram2D(sofa_group=group, source=source, counts=counts)
    return histograms


@dataclass
class MortalityCurve:
    """Observed mortality per dosage-difference bucket (-4..+4)."""

    intervention: str  # "iv" | "vp"
    sofa_group: SofaGroup
    counts: np.ndarray  # (9,) timesteps per bucket
    mortality: np.ndarray  # (9,) died-timestep fraction; 0 for empty buckets

    @property
    def diffs(self) -> tuple:
        return DIFF_RANGE


def mortality_curves(dataset: OfflineDataset, policy: PolicyFn) -> list:
    """Curves for both interventions over the medium and high SOFA groups."""
    model_actions = np.asarray(policy(dataset.states))
    phys_actions = dataset.action_indices
    diffs = {
        "iv": model_actions // N_DOSE_BINS - phys_actions // N_DOSE_BINS,
        "vp": model_actions % N_DOSE_BINS - phys_actions % N_DOSE_BINS,
    }
    labels = _group_labels(dataset.sofas)
    died = dataset.died.astype(bool)

    curves = []
    for intervention in INTERVENTIONS:
        for group in CURVE_GROUPS:
            mask = labels == group.value
            counts = np.zeros(len(DIFF_RANGE), dtype=np.int64)
            mortality = np.zeros(len(DIFF_RANGE))
            for j, diff in enumerate(DIFF_RANGE):
                bucket = mask & (diffs[intervention] == diff)
                counts[j] = int(bucket.sum())
                if counts[j]:
                    mortality[j] = float(died[bucket].mean())
            curves.append(
                MortalityCurve(
                    intervention=intervention,
                    sofa_group=group,
                    counts=counts,
                    mortality=mortality,
                )
            )
    return curves


def histogram_filename(group: SofaGroup, source: str) -> str:
    return f"hist_{group.value}_{source}.csv"


def curve_filename(intervention: str, group: SofaGroup) -> str:
    return f"curve_{intervention}_{group.value}.csv"


def write_histogram_csv(path, hist: Histogram2D) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["iv_bin", "vp_bin", "count"])
        for iv in range(N_DOSE_BINS):
            for vp in range(N_DOSE_BINS):
                writer.writerow([iv, vp, int(hist.counts[iv, vp])])


def read_histogram_counts(path) -> np.ndarray:
    counts = np.zeros((N_DOSE_BINS, N_DOSE_BINS), dtype=np.int64)
    with open(path, "r", newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["iv_bin", "vp_bin", "count"]:
            raise SchemaError(f"{path}: not a histogram CSV")
        for row in reader:
            counts[int(row[0]), int(row[1])] = int(row[2])
    return counts


def write_curve_csv(path, curve: MortalityCurve) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["diff", "count", "mortality"])
        for diff, count, mort in zip(DIFF_RANGE, curve.counts, curve.mortality):
            writer.writerow([diff, int(count), repr(float(mort))])


def read_curve_rows(path) -> tuple:
    diffs, counts, mortality = [], [], []
    with open(path, "r", newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["diff", "count", "mortality"]:
            raise SchemaError(f"{path}: not a mortality-curve CSV")
        for row in reader:
            diffs.append(int(row[0]))
            counts.append(int(row[1]))
            mortality.append(float(row[2]))
    return np.array(diffs), np.array(counts), np.array(mortality)


def write_all_analyses(out_dir, dataset: OfflineDataset, policy: PolicyFn) -> list:
    """Emit the six histogram CSVs and four curve CSVs; returns the paths."""
    out_dir = Path(out_dir)
    paths = []
    for source, pol in (("model", policy), ("physician", None)):
        for group, hist in action_histograms(dataset, pol).items():
            path = out_dir / histogram_filename(group, source)
            write_histogram_csv(path, hist)
            paths.append(path)
    for curve in mortality_curves(dataset, policy):
        path = out_dir / curve_filename(curve.intervention, curve.sofa_group)
        write_curve_csv(path, curve)
        paths.append(path)
    return paths
