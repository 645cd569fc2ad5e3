import numpy as np
import pytest

from sepsiq import data as ds
from sepsiq import sim
from sepsiq.clinical import (
    SOFA_INDEX,
    DoseBinners,
    RewardParams,
    SofaGroup,
    fit_bins,
)
from sepsiq.evaluation import (
    action_histograms,
    curve_filename,
    histogram_filename,
    mortality_curves,
    read_curve_rows,
    read_histogram_counts,
    write_all_analyses,
    write_curve_csv,
    write_histogram_csv,
)


@pytest.fixture(scope="module")
def cohort_dataset():
    """A small simulated cohort run through the real binning pipeline."""
    params = sim.SimParams(cohort_size=300, seed=21)
    trajectories = sim.generate_cohort(params, RewardParams())
    records = [rec for traj in trajectories for rec in traj.records]
    full = ds.from_records(records)
    binners = DoseBinners(
        iv=fit_bins(full.raw_iv_doses[full.raw_iv_doses > 0]),
        vp=fit_bins(full.raw_vp_doses[full.raw_vp_doses > 0]),
    )
    return ds.with_binned_actions(full, binners)


def group_sizes(dataset):
    from sepsiq.clinical import sofa_group

    sizes = {group: 0 for group in SofaGroup}
    for sofa in dataset.sofas:
        sizes[sofa_group(sofa)] += 1
    return sizes


class TestActionHistograms:
    def test_physician_grids_conserve_timesteps(self, cohort_dataset):
        histograms = action_histograms(cohort_dataset, policy=None)
        sizes = group_sizes(cohort_dataset)
        for group, hist in histograms.items():
            assert hist.total == sizes[group]
            assert hist.source == "physician"
            assert np.all(hist.counts >= 0)
        assert sum(h.total for h in histograms.values()) == len(cohort_dataset)

    def test_constant_policy_masses_at_origin(self, cohort_dataset):
        policy = lambda states: np.zeros(len(states), dtype=np.int64)
        histograms = action_histograms(cohort_dataset, policy)
        for group, hist in histograms.items():
            assert hist.source == "model"
            assert hist.counts[0, 0] == hist.total
            assert hist.counts.sum() - hist.counts[0, 0] == 0

    def test_low_sofa_vp_zero_column_dominates(self, cohort_dataset):
        # Physician pattern from the simulator: essentially no vasopressors
        # below SOFA 5.
        hist = action_histograms(cohort_dataset, policy=None)[SofaGroup.LOW]
        assert hist.total > 100
        vp_zero_mass = hist.counts[:, 0].sum() / hist.total
        assert vp_zero_mass > 0.5

    def test_empty_group_reported_not_errored(self, cohort_dataset):
        mask = cohort_dataset.sofas <= 15.0  # drop the high group entirely
        clipped = cohort_dataset.subset(mask)
        histograms = action_histograms(clipped, policy=None)
        assert histograms[SofaGroup.HIGH].total == 0

    def test_model_histogram_uses_greedy_policy(self, cohort_dataset):
        calls = []

        def policy(states):
            calls.append(states.shape)
            return np.full(len(states), 13, dtype=np.int64)

        histograms = action_histograms(cohort_dataset, policy)
        assert calls == [(len(cohort_dataset), 48)]
        for hist in histograms.values():
            assert hist.counts[2, 3] == hist.total  # 13 = 5*2 + 3


class TestMortalityCurves:
    def test_policy_cloned_from_log_masses_at_zero(self, cohort_dataset):
        logged = cohort_dataset.action_indices.copy()

        def clone_policy(states):
            assert len(states) == len(logged)
            return logged

        curves = mortality_curves(cohort_dataset, clone_policy)
        assert len(curves) == 4
        for curve in curves:
            zero_idx = curve.diffs.index(0)
            assert curve.counts[zero_idx] == curve.counts.sum()

    def test_fractions_within_unit_interval(self, cohort_dataset):
        rng = np.random.default_rng(5)
        policy = lambda states: rng.integers(0, 25, size=len(states))
        for curve in mortality_curves(cohort_dataset, policy):
            assert np.all(curve.mortality >= 0.0)
            assert np.all(curve.mortality <= 1.0)

    def test_low_group_excluded_and_counts_conserved(self, cohort_dataset):
        policy = lambda states: np.zeros(len(states), dtype=np.int64)
        curves = mortality_curves(cohort_dataset, policy)
        groups = {(c.intervention, c.sofa_group) for c in curves}
        assert groups == {
            ("iv", SofaGroup.MEDIUM),
            ("iv", SofaGroup.HIGH),
            ("vp", SofaGroup.MEDIUM),
            ("vp", SofaGroup.HIGH),
        }
        sizes = group_sizes(cohort_dataset)
        for curve in curves:
            assert curve.counts.sum() == sizes[curve.sofa_group]


class TestCsvEmission:
    def test_histogram_round_trip(self, cohort_dataset, tmp_path):
        hist = action_histograms(cohort_dataset, policy=None)[SofaGroup.MEDIUM]
        path = tmp_path / histogram_filename(SofaGroup.MEDIUM, "physician")
        write_histogram_csv(path, hist)
        np.testing.assert_array_equal(read_histogram_counts(path), hist.counts)
        assert path.name == "hist_medium_physician.csv"
        assert len(path.read_text().splitlines()) == 26  # header + 25 cells

    def test_curve_round_trip(self, cohort_dataset, tmp_path):
        policy = lambda states: np.zeros(len(states), dtype=np.int64)
        curve = mortality_curves(cohort_dataset, policy)[0]
        path = tmp_path / curve_filename(curve.intervention, curve.sofa_group)
        write_curve_csv(path, curve)
        diffs, counts, mortality = read_curve_rows(path)
        np.testing.assert_array_equal(diffs, np.arange(-4, 5))
        np.testing.assert_array_equal(counts, curve.counts)
        np.testing.assert_allclose(mortality, curve.mortality)

    def test_write_all_analyses_emits_ten_files(self, cohort_dataset, tmp_path):
        policy = lambda states: np.zeros(len(states), dtype=np.int64)
        paths = write_all_analyses(tmp_path, cohort_dataset, policy)
        names = sorted(p.name for p in paths)
        assert len(names) == 10
        assert sum(name.startswith("hist_") for name in names) == 6
        assert sum(name.startswith("curve_") for name in names) == 4
        for path in paths:
            assert path.exists()
