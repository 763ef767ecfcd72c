import numpy as np
import pytest

from fairbandit.errors import DataError
from fairbandit.reports import Report, ReplicateResult, emit_report


def make_report(values=(0.5, 0.6, 0.7), disparities=(0.02, 0.04, 0.03)):
    reps = [
        ReplicateResult(seed=i, overall=v, per_group=(v - d / 2, v + d / 2), disparity=d)
        for i, (v, d) in enumerate(zip(values, disparities))
    ]
    return Report(
        dataset="synthetic",
        group_label="flag",
        off_policy="random",
        mode="two-group",
        epsilon=0.03,
        replicates=reps,
        before_disparity=0.01,
    )


class TestAggregates:
    def test_mean_std(self):
        rep = make_report()
        assert abs(rep.reward_mean - np.mean([0.5, 0.6, 0.7])) <= 1e-15
        assert abs(rep.reward_std - np.std([0.5, 0.6, 0.7])) <= 1e-15
        assert abs(rep.disparity_mean - np.mean([0.02, 0.04, 0.03])) <= 1e-15

    def test_single_replicate_std_zero(self):
        rep = make_report(values=(0.5,), disparities=(0.02,))
        assert rep.reward_std == 0.0
        assert rep.disparity_std == 0.0

    def test_empty_replicates_error(self):
        rep = make_report()
        rep.replicates = []
        with pytest.raises(DataError):
            rep.reward_mean

    def test_json_round_trip(self):
        rep = make_report()
        clone = Report.from_json(rep.to_json())
        assert clone.reward_mean == rep.reward_mean
        assert clone.replicates == rep.replicates
        assert clone.before_disparity == rep.before_disparity


class TestEmit:
    def test_one_report_one_row(self, tmp_path):
        emit_report([make_report()], tmp_path / "t.csv", tmp_path / "t.txt")
        csv_lines = (tmp_path / "t.csv").read_text().strip().splitlines()
        assert len(csv_lines) == 2
        txt_lines = (tmp_path / "t.txt").read_text().strip().splitlines()
        assert txt_lines[0].startswith("Dataset")
        assert len(txt_lines) == 3

    def test_csv_values_recompute(self, tmp_path):
        rep = make_report()
        emit_report([rep], tmp_path / "t.csv", tmp_path / "t.txt")
        row = (tmp_path / "t.csv").read_text().strip().splitlines()[1].split(",")
        assert abs(float(row[5]) - rep.reward_mean) <= 1e-9
        assert abs(float(row[6]) - rep.reward_std) <= 1e-9
        assert abs(float(row[7]) - rep.disparity_mean) <= 1e-9

    def test_empty_reports_error(self, tmp_path):
        with pytest.raises(DataError):
            emit_report([], tmp_path / "t.csv", tmp_path / "t.txt")
