import logging
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from utb import (
    ConfigError,
    DataError,
    SyntheticSpec,
    bin_features,
    load_csv,
    split_folds,
    summarize,
    synthesize,
)
from utb.dataset import write_csv

from conftest import make_dataset


def write(tmp_path, text, name="d.csv"):
    path = tmp_path / name
    path.write_text(text)
    return path


class TestLoadCsv:
    def test_minimal(self, tmp_path):
        path = write(tmp_path, "f1,y,w\n0.5,1,0\n1.5,0,1\n2.5,1,1\n3.5,0,0\n")
        d = load_csv(path, "y", "w")
        assert (d.n, d.p, d.K) == (4, 1, 1)
        assert d.feature_names == ["f1"]
        np.testing.assert_array_equal(d.treatment, [0, 1, 1, 0])

    def test_three_arms(self, tmp_path):
        path = write(tmp_path, "y,w,a\n1,0,1\n0,1,2\n1,2,3\n")
        d = load_csv(path, "y", "w")
        assert d.K == 2
        np.testing.assert_array_equal(d.treatment, [0, 1, 2])

    def test_noncontiguous_arms_are_remapped(self, tmp_path):
        path = write(tmp_path, "y,w\n1,0\n0,3\n1,7\n0,3\n")
        d = load_csv(path, "y", "w")
        np.testing.assert_array_equal(d.treatment, [0, 1, 2, 1])
        assert d.arm_labels == (0, 3, 7)

    def test_no_control(self, tmp_path):
        path = write(tmp_path, "f,y,w\n1,1,1\n2,0,1\n")
        with pytest.raises(DataError, match="no control rows"):
            load_csv(path, "y", "w")

    def test_missing_column_is_named(self, tmp_path):
        path = write(tmp_path, "f,y,w\n1,1,1\n")
        with pytest.raises(ConfigError, match="'treat'"):
            load_csv(path, "y", "treat")

    def test_bad_cell_names_row_and_column(self, tmp_path):
        path = write(tmp_path, "f,g,y,w\n1,2,1,0\n1,abc,0,1\n")
        with pytest.raises(DataError, match=r"row 3, column 'g'"):
            load_csv(path, "y", "w")

    def test_empty_cell_is_nan_and_column_order_kept(self, tmp_path):
        path = write(tmp_path, "b,y,a,w\n,1,2,0\n3,0,,1\n")
        d = load_csv(path, "y", "w")
        assert d.feature_names == ["b", "a"]
        assert math.isnan(d.features[0, 0]) and math.isnan(d.features[1, 1])

    def test_round_trip_with_truth(self, tmp_path):
        d = synthesize(SyntheticSpec(n=50, p=3, seed=1))
        path = tmp_path / "s.csv"
        write_csv(d, path, with_truth=True)
        back = load_csv(path, "y", "w")
        np.testing.assert_array_equal(back.features, d.features)
        np.testing.assert_array_equal(back.true_effect, d.true_effect)
        assert back.feature_names == d.feature_names


class TestBinning:
    def test_few_distinct_values(self):
        b = bin_features(make_dataset([1, 2, 3, 4], [0, 1, 0, 1], [0, 0, 1, 1]), 255)
        np.testing.assert_array_equal(b.upper_edges[0], [1, 2, 3, np.inf])
        np.testing.assert_array_equal(b.bins[0], [1, 2, 3, 4])

    def test_all_nan_feature(self):
        b = bin_features(make_dataset([np.nan] * 4, [0, 1, 0, 1], [0, 0, 1, 1]), 255)
        assert len(b.upper_edges[0]) == 0
        assert np.all(b.bins[0] == 0)

    def test_equal_frequency(self, rng):
        x = rng.random(1000)
        b = bin_features(make_dataset(x, np.zeros(1000), np.arange(1000) % 2), 10)
        counts = np.bincount(b.bins[0], minlength=11)
        assert counts[0] == 0
        # oracle: direct quantile cut points
        cuts = np.quantile(x, np.arange(1, 10) / 10, method="inverted_cdf")
        expected = np.diff(np.concatenate([[0], [(x <= c).sum() for c in cuts], [1000]]))
        np.testing.assert_array_equal(counts[1:], expected)
        assert np.all(np.abs(counts[1:] - 100) <= 1)

    def test_max_bins_range(self):
        d = make_dataset([1.0, 2.0], [0, 1], [0, 1])
        for bad in (1, 65536):
            with pytest.raises(ConfigError):
                bin_features(d, bad)

    def test_wide_bins_use_uint16(self, rng):
        x = rng.random(3000)
        b = bin_features(make_dataset(x, np.zeros(3000), np.arange(3000) % 2), 1000)
        assert b.bins.dtype == np.uint16
        assert b.bins.max() == 1000

    @settings(max_examples=60, deadline=None)
    @given(
        st.lists(st.one_of(st.floats(-1e6, 1e6), st.just(float("nan"))), min_size=2, max_size=80),
        st.integers(2, 20),
    )
    def test_monotone_and_nan_bin(self, values, max_bins):
        x = np.array(values)
        n = x.size
        b = bin_features(make_dataset(x, np.zeros(n), np.arange(n) % 2), max_bins)
        bins = b.bins[0].astype(int)
        assert np.all(bins[np.isnan(x)] == 0)
        ok = ~np.isnan(x)
        assert np.all(bins[ok] >= 1)
        assert np.all(bins < len(b.upper_edges[0]) + 1)
        order = np.argsort(x[ok], kind="stable")
        assert np.all(np.diff(bins[ok][order]) >= 0)
        distinct = np.unique(x[ok]).size
        if distinct <= max_bins:
            assert len(b.upper_edges[0]) == distinct
        else:
            assert len(b.upper_edges[0]) <= max_bins
        # re-binning with stored edges reproduces the training bins
        np.testing.assert_array_equal(b.transform(x[:, None])[0], b.bins[0])

    def test_deterministic(self, small_synth):
        a = bin_features(small_synth, 64)
        b = bin_features(small_synth, 64)
        np.testing.assert_array_equal(a.bins, b.bins)


class TestSynthesize:
    def test_determinism(self):
        spec = SyntheticSpec(n=500, p=7, seed=99)
        a, b = synthesize(spec), synthesize(spec)
        for f in ("features", "outcome", "treatment", "true_effect"):
            assert getattr(a, f).tobytes() == getattr(b, f).tobytes()
        assert synthesize(SyntheticSpec(n=500, p=7, seed=100)).features.tobytes() != a.features.tobytes()

    def test_null_effect(self):
        d = synthesize(SyntheticSpec(n=40_000, p=5, effect_strength=0.0, seed=5))
        assert np.all(d.true_effect == 0)
        y, w = d.outcome, d.treatment
        ate = y[w == 1].mean() - y[w == 0].mean()
        se = math.sqrt(y[w == 1].var() / (w == 1).sum() + y[w == 0].var() / (w == 0).sum())
        assert abs(ate) < 3 * se

    def test_table1_synthetic_row(self):
        # Size 200,000; Avg. Label 0.600; Treatment Ratio 0.50; Relative Uplift 50.0%
        d = synthesize(SyntheticSpec(n=200_000, p=100, seed=2024))
        s = summarize(d)
        assert s.size == 200_000 and s.features == 100
        assert abs(s.avg_label - 0.600) <= 0.01
        assert abs(s.treatment_ratio - 0.50) <= 0.01
        assert abs(s.relative_uplift - 50.0) <= 2.0

    def test_decile_effects_match_truth(self):
        d = synthesize(SyntheticSpec(n=50_000, p=10, seed=11))
        tau = d.true_effect[:, 0]
        edges = np.quantile(tau, np.linspace(0, 1, 11))
        decile = np.clip(np.searchsorted(edges, tau, side="right") - 1, 0, 9)
        for k in range(10):
            m = decile == k
            y1, y0 = d.outcome[m & (d.treatment == 1)], d.outcome[m & (d.treatment == 0)]
            se = math.sqrt(y1.var() / y1.size + y0.var() / y0.size)
            assert abs((y1.mean() - y0.mean()) - tau[m].mean()) < 3 * se, k

    def test_noise_features_carry_no_effect(self):
        X = np.random.default_rng(0).random((100, 8))
        from utb.dataset import true_uplift

        X2 = X.copy()
        X2[:, 5:] = 0.123
        np.testing.assert_array_equal(true_uplift(X, 0.9), true_uplift(X2, 0.9))

    @pytest.mark.parametrize(
        "kwargs",
        [dict(treatment_ratio=0.0), dict(treatment_ratio=1.0), dict(effect_strength=-1), dict(outcome_kind="x"),
         dict(effect_strength=1.5), dict(n=0)],
    )
    def test_invalid_spec(self, kwargs):
        with pytest.raises(ConfigError):
            SyntheticSpec(**kwargs)

    def test_continuous_and_small_p(self):
        d = synthesize(SyntheticSpec(n=100, p=2, outcome_kind="continuous", seed=1))
        assert d.p == 2 and not np.all(np.isin(d.outcome, [0, 1]))
        assert np.all(d.true_effect >= 0)


class TestFolds:
    def test_divisible(self, rng):
        d = make_dataset(rng.random(100), rng.integers(0, 2, 100), np.arange(100) % 2)
        folds = split_folds(d, 10, 0)
        assert [len(te) for _, te in folds] == [10] * 10

    def test_disjoint_cover(self, small_synth):
        folds = split_folds(small_synth, 7, 1)
        tests = np.concatenate([te for _, te in folds])
        assert np.array_equal(np.sort(tests), np.arange(small_synth.n))
        sizes = [len(te) for _, te in folds]
        assert max(sizes) - min(sizes) <= 1
        for tr, te in folds:
            assert np.intersect1d(tr, te).size == 0 and tr.size + te.size == small_synth.n

    def test_all_treated_rejected(self, rng):
        d = make_dataset(rng.random(10), rng.integers(0, 2, 10), np.ones(10, dtype=int))
        with pytest.raises(DataError):
            split_folds(d, 2, 0)

    def test_arm_ratio_preserved(self):
        rng = np.random.default_rng(8)
        w = np.zeros(1000, dtype=int)
        w[:850] = 1
        d = make_dataset(rng.random(1000), rng.integers(0, 2, 1000), w)
        for _, te in split_folds(d, 10, 3):
            assert abs((w[te] == 1).sum() - 85) <= 2

    def test_deterministic(self, small_synth):
        a = split_folds(small_synth, 5, 42)
        b = split_folds(small_synth, 5, 42)
        c = split_folds(small_synth, 5, 43)
        assert all(np.array_equal(x[1], y[1]) for x, y in zip(a, b))
        assert not all(np.array_equal(x[1], y[1]) for x, y in zip(a, c))

    def test_small_stratum_falls_back(self, caplog):
        y = np.zeros(40)
        y[:2] = 1
        d = make_dataset(np.arange(40.0), y, np.arange(40) % 2)
        with caplog.at_level(logging.WARNING):
            folds = split_folds(d, 5, 0)
        assert "arm only" in caplog.text
        assert len(folds) == 5

    def test_k_validation(self, small_synth):
        with pytest.raises(ConfigError):
            split_folds(small_synth, 1, 0)


class TestSummarize:
    def test_hand_arithmetic(self):
        s = summarize(make_dataset(np.zeros(4), [0, 1, 0, 1], [0, 0, 1, 1]))
        # treated mean 0.5, control mean 0.5
        assert s.avg_label == 0.5 and s.treatment_ratio == 0.5
        assert s.relative_uplift == 0.0

    def test_relative_uplift(self):
        s = summarize(make_dataset(np.zeros(4), [0, 1, 1, 1], [0, 0, 1, 1]))
        assert s.relative_uplift == pytest.approx(100.0)

    def test_zero_control_mean_undefined(self):
        s = summarize(make_dataset(np.zeros(4), [0, 0, 0, 0], [0, 0, 1, 1]))
        assert s.relative_uplift is None
        assert s.as_row()["Relative Uplift (%)"] == "undefined"
