import json
from pathlib import Path

import numpy as np
import pytest

from fairbandit.dataset import (
    BanditDataset,
    CsvSchema,
    GroupRule,
    GroupSpec,
    MixedLogging,
    RandomLogging,
    Tweak1Logging,
    convert_classification,
    load_csv,
    load_dataset_jsonl,
    logging_propensities,
    save_dataset_jsonl,
    split,
)
from fairbandit.errors import ConfigError, DataError, IngestionError, SchemaError, StateError
from fairbandit.rngutil import make_rng


def write_csv(path, text):
    path.write_text(text, encoding="utf-8")
    return path


SMALL_CSV = """age,color,label,sex
21,red,yes,M
35,blue,no,F
44,red,yes,F
29,blue,no,M
"""


def small_schema():
    return CsvSchema(label="label", categorical={"color": ["red", "blue"], "sex": ["M", "F"]})


def sex_group_spec(keep=True):
    return GroupSpec(
        source="sex",
        rule=GroupRule(kind="membership", members=frozenset({"F"})),
        keep_in_context=keep,
    )


# ---------------------------------------------------------------------------
# logging policies
# ---------------------------------------------------------------------------


class TestLoggingPropensities:
    def test_random_uniform(self):
        probs = logging_propensities(RandomLogging(), np.zeros(3), 4)
        np.testing.assert_array_equal(probs, np.full(4, 0.25))

    def test_tweak1_rho_09(self):
        probs = logging_propensities(Tweak1Logging(rho=0.9, fixed_arm=0), np.zeros(2), 4)
        np.testing.assert_allclose(probs, [0.9, 1 / 30, 1 / 30, 1 / 30], atol=1e-15)

    def test_tweak1_reduces_to_uniform(self):
        probs = logging_propensities(Tweak1Logging(rho=0.5, fixed_arm=1), np.zeros(2), 2)
        np.testing.assert_array_equal(probs, [0.5, 0.5])

    def test_tweak1_invalid_rho(self):
        with pytest.raises(ConfigError):
            Tweak1Logging(rho=1.0)
        with pytest.raises(ConfigError):
            # below uniform: fixed arm would be the least likely
            logging_propensities(Tweak1Logging(rho=0.2), np.zeros(2), 4)

    def test_mixed_before_fit_state_error(self):
        with pytest.raises(StateError):
            logging_propensities(MixedLogging(), np.zeros(3), 3)

    def test_sum_to_one_all_kinds(self):
        rng = make_rng(0)
        table = load_csv_fixture(rng)
        mixed = MixedLogging(label_fraction=0.5)
        mixed.fit(table.features, table.labels, table.num_classes, make_rng(1, 1))
        kinds = [RandomLogging(), Tweak1Logging(rho=0.8), mixed]
        for kind in kinds:
            for _ in range(10):
                x = table.features[rng.integers(0, len(table))]
                probs = logging_propensities(kind, x, table.num_classes)
                assert abs(probs.sum() - 1.0) <= 1e-12
                assert probs.min() > 0

    def test_mixed_floor(self):
        rng = make_rng(3)
        table = load_csv_fixture(rng)
        mixed = MixedLogging(label_fraction=1.0, temperature=0.05, floor=0.01)
        mixed.fit(table.features, table.labels, table.num_classes, make_rng(3, 1))
        K = table.num_classes
        for i in range(20):
            probs = logging_propensities(mixed, table.features[i], K)
            # clip-then-renormalize keeps mass at least floor / (1 + K*floor)
            assert probs.min() >= 0.01 / (1 + K * 0.01) - 1e-12


def load_csv_fixture(rng, n=300, k=3):
    """Synthetic classification table without touching disk."""
    from fairbandit.dataset import ClassificationTable

    X = rng.standard_normal((n, 5))
    y = (X[:, 0] + 0.5 * rng.standard_normal(n) > 0).astype(np.int64) + (
        X[:, 1] > 0.8
    ).astype(np.int64)
    y = np.minimum(y, k - 1)
    g = (X[:, 2] > 0).astype(np.int64)
    return ClassificationTable(
        features=X,
        labels=y,
        groups=g,
        num_classes=k,
        num_groups=2,
        feature_names=tuple(f"f{i}" for i in range(5)),
    )


# ---------------------------------------------------------------------------
# CSV ingestion
# ---------------------------------------------------------------------------


class TestLoadCsv:
    def test_four_row_read_back(self, tmp_path):
        path = write_csv(tmp_path / "d.csv", SMALL_CSV)
        table = load_csv(path, small_schema(), sex_group_spec())
        assert len(table) == 4
        assert table.num_classes == 2
        # age + one-hot(color) + one-hot(sex)
        assert table.context_dim == 5
        assert table.feature_names == ("age", "color=blue", "color=red", "sex=F", "sex=M")
        np.testing.assert_array_equal(table.groups, [0, 1, 1, 0])

    def test_missing_label_column(self, tmp_path):
        path = write_csv(tmp_path / "d.csv", SMALL_CSV)
        with pytest.raises(SchemaError):
            load_csv(path, CsvSchema(label="nope"), sex_group_spec())

    def test_unmapped_category_names_row(self, tmp_path):
        bad = SMALL_CSV + "50,green,yes,M\n"
        path = write_csv(tmp_path / "d.csv", bad)
        with pytest.raises(IngestionError, match="row 4"):
            load_csv(path, small_schema(), sex_group_spec())

    def test_unmapped_group_value(self, tmp_path):
        path = write_csv(tmp_path / "d.csv", SMALL_CSV)
        spec = GroupSpec(
            source="sex", rule=GroupRule(kind="mapping", mapping={"M": 0}), keep_in_context=True
        )
        with pytest.raises(IngestionError, match="row"):
            load_csv(path, small_schema(), spec)

    def test_empty_file(self, tmp_path):
        path = write_csv(tmp_path / "d.csv", "")
        with pytest.raises(IngestionError):
            load_csv(path, small_schema(), sex_group_spec())

    def test_header_only(self, tmp_path):
        path = write_csv(tmp_path / "d.csv", "age,color,label,sex\n")
        with pytest.raises(IngestionError):
            load_csv(path, small_schema(), sex_group_spec())

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_csv(tmp_path / "absent.csv", small_schema(), sex_group_spec())

    def test_missing_values_dropped(self, tmp_path):
        text = SMALL_CSV + "?,red,yes,M\n61,red,?,F\n"
        path = write_csv(tmp_path / "d.csv", text)
        table = load_csv(path, small_schema(), sex_group_spec())
        assert len(table) == 4

    def test_group_column_excluded_when_not_kept(self, tmp_path):
        path = write_csv(tmp_path / "d.csv", SMALL_CSV)
        table = load_csv(path, small_schema(), sex_group_spec(keep=False))
        assert table.context_dim == 3
        assert "sex=F" not in table.feature_names

    def test_threshold_rule_on_context_index(self, tmp_path):
        path = write_csv(tmp_path / "d.csv", SMALL_CSV)
        spec = GroupSpec(source=0, rule=GroupRule(kind="threshold", threshold=30.0))
        table = load_csv(path, small_schema(), spec)
        np.testing.assert_array_equal(table.groups, [0, 1, 1, 0])

    @pytest.mark.skipif(
        not (Path("data/adult.csv").exists() and Path("data/adult_schema.json").exists()),
        reason="local Adult CSV + schema not present",
    )
    def test_adult_format_dimensions(self):
        # Expected: 48,759 usable rows, 2 classes, 50 one-hot features.
        schema = CsvSchema.from_config(
            json.loads(Path("data/adult_schema.json").read_text())
        )
        spec = GroupSpec(
            source="sex", rule=GroupRule(kind="membership", members=frozenset({"Male"}))
        )
        table = load_csv("data/adult.csv", schema, spec)
        assert table.num_classes == 2
        assert table.context_dim == 50
        assert len(table) == 48759


# ---------------------------------------------------------------------------
# conversion
# ---------------------------------------------------------------------------


class TestConvert:
    def test_reward_is_label_match(self):
        table = load_csv_fixture(make_rng(7))
        ds = convert_classification(table, RandomLogging(), seed=5)
        np.testing.assert_array_equal(ds.rewards, (ds.actions == table.labels).astype(float))
        assert ds.reward_upper_bound == 1.0

    def test_mean_reward_quarter_under_uniform(self):
        rng = make_rng(11)
        from fairbandit.dataset import ClassificationTable

        n, k = 10_000, 4
        X = rng.standard_normal((n, 3))
        table = ClassificationTable(
            features=X,
            labels=rng.integers(0, k, n),
            groups=(X[:, 0] > 0).astype(np.int64),
            num_classes=k,
            num_groups=2,
            feature_names=("a", "b", "c"),
        )
        ds = convert_classification(table, RandomLogging(), seed=2)
        assert abs(ds.rewards.mean() - 0.25) <= 0.02

    def test_propensity_matches_logging_policy_bitwise(self):
        table = load_csv_fixture(make_rng(13))
        mixed = MixedLogging(label_fraction=0.5)
        mixed.fit(table.features, table.labels, table.num_classes, make_rng(13, 1))
        for kind in (RandomLogging(), Tweak1Logging(rho=0.7), mixed):
            ds = convert_classification(table, kind, seed=3)
            for i in range(0, len(ds), 37):
                probs = logging_propensities(kind, ds.contexts[i], ds.num_arms)
                assert ds.propensities[i] == probs[ds.actions[i]]

    def test_reproducible(self):
        table = load_csv_fixture(make_rng(17))
        a = convert_classification(table, Tweak1Logging(rho=0.8), seed=9)
        b = convert_classification(table, Tweak1Logging(rho=0.8), seed=9)
        np.testing.assert_array_equal(a.actions, b.actions)
        np.testing.assert_array_equal(a.rewards, b.rewards)
        np.testing.assert_array_equal(a.propensities, b.propensities)

    def test_different_seeds_differ(self):
        table = load_csv_fixture(make_rng(19))
        a = convert_classification(table, RandomLogging(), seed=1)
        b = convert_classification(table, RandomLogging(), seed=2)
        assert not np.array_equal(a.actions, b.actions)


# ---------------------------------------------------------------------------
# splitting
# ---------------------------------------------------------------------------


class TestSplit:
    def make_dataset(self, n=100, seed=0):
        table = load_csv_fixture(make_rng(seed), n=n)
        return convert_classification(table, RandomLogging(), seed=seed)

    def test_sizes(self):
        tr, te = split(self.make_dataset(10), 0.7, seed=1)
        assert len(tr) == 7 and len(te) == 3

    def test_same_seed_identical(self):
        ds = self.make_dataset(50)
        a = split(ds, 0.7, seed=4)
        b = split(ds, 0.7, seed=4)
        np.testing.assert_array_equal(a[0].contexts, b[0].contexts)
        np.testing.assert_array_equal(a[1].rewards, b[1].rewards)

    def test_different_seeds_differ(self):
        ds = self.make_dataset(100)
        a, _ = split(ds, 0.7, seed=1)
        b, _ = split(ds, 0.7, seed=2)
        assert not np.array_equal(a.contexts, b.contexts)

    def test_disjoint_exhaustive(self):
        ds = self.make_dataset(60)
        tr, te = split(ds, 0.7, seed=3)
        combined = np.vstack([tr.contexts, te.contexts])
        assert combined.shape[0] == len(ds)
        key = lambda arr: sorted(map(tuple, arr))
        assert key(combined) == key(ds.contexts)

    def test_bad_fraction(self):
        ds = self.make_dataset(20)
        for frac in (0.0, 1.0, -0.2, 1.7):
            with pytest.raises(ConfigError):
                split(ds, frac, seed=0)

    def test_too_small(self):
        ds = self.make_dataset(20)
        small = BanditDataset(
            contexts=ds.contexts[:5].copy(),
            actions=ds.actions[:5].copy(),
            rewards=ds.rewards[:5].copy(),
            propensities=ds.propensities[:5].copy(),
            groups=ds.groups[:5].copy(),
            num_arms=ds.num_arms,
            num_groups=ds.num_groups,
        )
        with pytest.raises(DataError):
            split(small, 0.7, seed=0)


# ---------------------------------------------------------------------------
# dataset invariants and serialization
# ---------------------------------------------------------------------------


class TestBanditDataset:
    def base_kwargs(self):
        return dict(
            contexts=np.zeros((3, 2)),
            actions=np.array([0, 1, 0], dtype=np.int64),
            rewards=np.array([0.0, 1.0, 0.5]),
            propensities=np.array([0.5, 0.5, 0.5]),
            groups=np.array([0, 1, 0], dtype=np.int64),
            num_arms=2,
            num_groups=2,
        )

    def test_rejects_zero_propensity(self):
        kw = self.base_kwargs()
        kw["propensities"] = np.array([0.5, 0.0, 0.5])
        with pytest.raises(DataError):
            BanditDataset(**kw)

    def test_rejects_reward_above_bound(self):
        kw = self.base_kwargs()
        kw["rewards"] = np.array([0.0, 1.2, 0.5])
        with pytest.raises(DataError):
            BanditDataset(**kw)

    def test_rejects_action_out_of_range(self):
        kw = self.base_kwargs()
        kw["actions"] = np.array([0, 2, 0], dtype=np.int64)
        with pytest.raises(DataError):
            BanditDataset(**kw)

    def test_rejects_group_out_of_range(self):
        kw = self.base_kwargs()
        kw["groups"] = np.array([0, 2, 0], dtype=np.int64)
        with pytest.raises(DataError):
            BanditDataset(**kw)

    def test_group_counts(self):
        ds = BanditDataset(**self.base_kwargs())
        np.testing.assert_array_equal(ds.group_counts, [2, 1])
        assert ds.group_counts.sum() == len(ds)

    def test_immutable(self):
        ds = BanditDataset(**self.base_kwargs())
        with pytest.raises(ValueError):
            ds.rewards[0] = 9.0

    def test_sample_view(self):
        ds = BanditDataset(**self.base_kwargs())
        s = ds.sample_at(1)
        assert s.action == 1 and s.reward == 1.0 and s.group == 1

    def test_jsonl_round_trip(self, tmp_path):
        table = load_csv_fixture(make_rng(23), n=40)
        ds = convert_classification(table, Tweak1Logging(rho=0.6), seed=6)
        path = tmp_path / "ds.jsonl"
        save_dataset_jsonl(ds, path, seed=6, logging_policy=Tweak1Logging(rho=0.6))
        loaded, header = load_dataset_jsonl(path)
        np.testing.assert_array_equal(loaded.contexts, ds.contexts)
        np.testing.assert_array_equal(loaded.propensities, ds.propensities)
        assert header["logging_policy"]["rho"] == 0.6
        assert header["seed"] == 6
