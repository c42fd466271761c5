import numpy as np
import pytest

from cmmix import infosel
from cmmix.data import MixedDataset, VariableSpec
from cmmix.infosel import (
    DegenerateColumnWarning,
    empirical_mi,
    entropy,
    i_max,
    mrmr_from_tables,
    mrmr_select,
)


def repeat_table(levels_a, levels_b, counts):
    """Columns realizing an exact joint population table."""
    a, b = [], []
    for (va, vb), c in counts.items():
        a.extend([va] * c)
        b.extend([vb] * c)
    return np.array(a, float), np.array(b, float)


def brute_force_mi(a, b):
    a = np.asarray(a)
    b = np.asarray(b)
    total = 0.0
    n = a.size
    for va in np.unique(a):
        for vb in np.unique(b):
            pab = np.mean((a == va) & (b == vb))
            if pab > 0:
                total += pab * np.log(pab / (np.mean(a == va) * np.mean(b == vb)))
    return total


class TestEmpiricalMi:
    def test_independent_table_is_zero(self):
        a, b = repeat_table(2, 2, {(1, 1): 1, (1, 2): 1, (2, 1): 1, (2, 2): 1})
        assert empirical_mi(a, b) == 0.0

    def test_perfect_dependence_is_ln2(self):
        a, b = repeat_table(2, 2, {(1, 1): 1, (2, 2): 1})
        assert empirical_mi(a, b) == pytest.approx(np.log(2), abs=1e-12)

    def test_hand_table_against_bruteforce(self):
        a, b = repeat_table(2, 2, {(1, 1): 4, (1, 2): 1, (2, 1): 1, (2, 2): 4})
        assert empirical_mi(a, b) == pytest.approx(brute_force_mi(a, b), abs=1e-12)

    def test_symmetry(self):
        rng = np.random.default_rng(1)
        a = rng.integers(1, 4, 500).astype(float)
        b = rng.integers(1, 3, 500).astype(float)
        assert empirical_mi(a, b) == empirical_mi(b, a)

    def test_bounded_by_entropies(self):
        rng = np.random.default_rng(2)
        for _ in range(20):
            a = rng.integers(1, 5, 200).astype(float)
            b = rng.integers(1, 3, 200).astype(float)
            mi = empirical_mi(a, b)
            assert 0 <= mi <= min(entropy(a), entropy(b)) + 1e-9

    def test_degenerate_column_warns_and_returns_zero(self):
        with pytest.warns(DegenerateColumnWarning):
            assert empirical_mi(np.ones(10), np.arange(10, dtype=float)) == 0.0

    def test_missing_dropped_pairwise(self):
        a = np.array([1, 1, 2, 2, np.nan, 1])
        b = np.array([1, 1, 2, 2, 1, np.nan])
        assert empirical_mi(a, b) == pytest.approx(np.log(2), abs=1e-12)

    def test_continuous_discretization(self):
        rng = np.random.default_rng(3)
        z = rng.normal(size=5000)
        # invariant under monotone relabeling; strongly dependent with itself
        assert empirical_mi(z, z, bins=8) == pytest.approx(np.log(8), rel=0.01)

    def test_population_accuracy_at_large_n(self):
        rng = np.random.default_rng(4)
        n = 100_000
        a = rng.integers(0, 2, n)
        flip = rng.random(n) < 0.2
        b = np.where(flip, 1 - a, a)
        pop = np.log(2) + 0.8 * np.log(0.8) + 0.2 * np.log(0.2)
        assert empirical_mi(a.astype(float), b.astype(float)) == pytest.approx(pop, abs=0.01)


class TestEntropy:
    def test_constant_is_zero(self):
        assert entropy(np.ones(5)) == 0.0

    def test_fair_coin(self):
        assert entropy(np.array([1.0, 2.0])) == pytest.approx(np.log(2), abs=1e-12)

    def test_three_level_hand_value(self):
        col = np.array([1, 1, 2, 3], float)  # p = (0.5, 0.25, 0.25)
        assert entropy(col) == pytest.approx(1.5 * np.log(2), abs=1e-12)


class TestIMax:
    def test_independent_targets(self):
        f, x1 = repeat_table(2, 2, {(1, 1): 1, (1, 2): 1, (2, 1): 1, (2, 2): 1})
        assert i_max(f, [x1]) == 0.0

    def test_copy_gives_entropy(self):
        f = np.array([1.0, 2.0, 1.0, 2.0])
        with pytest.warns(DegenerateColumnWarning):  # the constant target
            got = i_max(f, [f.copy(), np.ones(4)])
        assert got == pytest.approx(entropy(f), abs=1e-12)

    def test_componentwise_max(self):
        rng = np.random.default_rng(5)
        f = rng.integers(1, 3, 400).astype(float)
        x1 = rng.integers(1, 3, 400).astype(float)
        x2 = f.copy()
        assert i_max(f, [x1, x2]) == pytest.approx(
            max(empirical_mi(f, x1), empirical_mi(f, x2)), abs=1e-15)


def _selection_dataset(n=400, extra_noise=0):
    """F1 determines X1; F2 duplicates F1; optional irrelevant columns."""
    rng = np.random.default_rng(6)
    f1 = rng.integers(1, 3, n).astype(float)
    schema = [
        VariableSpec("x_t", "random", "nominal", 2),
        VariableSpec("f_a", "fixed", "ordinal", 2),
        VariableSpec("f_b", "fixed", "ordinal", 2),
    ]
    raw = {"x_t": f1.copy(), "f_a": f1.copy(), "f_b": f1.copy()}
    for i in range(extra_noise):
        schema.append(VariableSpec(f"f_n{i}", "fixed", "nominal", 3))
        raw[f"f_n{i}"] = rng.integers(1, 4, n).astype(float)
    return MixedDataset.from_arrays(schema, raw)


class TestMrmr:
    def test_duplicate_never_selected(self):
        data = _selection_dataset()
        report = mrmr_select(data, t1=0.05, t2=0.8)
        assert report.selected_names() == ["f_a"]
        assert report.stopped_by == "redundancy"
        np.testing.assert_allclose(report.weights, [1.0, 0.0])

    def test_relevancy_stop_with_noise(self):
        data = _selection_dataset(extra_noise=2)
        report = mrmr_select(data, t1=0.2, t2=0.99)
        assert report.selected_names()[0] == "f_a"
        assert report.stopped_by in ("relevancy", "redundancy")
        assert "f_b" not in report.selected_names() or report.weights.sum() == pytest.approx(1.0)

    def test_weights_sum_to_one(self):
        data = _selection_dataset(extra_noise=3)
        report = mrmr_select(data, t1=0.01, t2=0.99)
        assert report.weights.sum() == pytest.approx(1.0, abs=1e-12)
        assert np.all(report.weights[report.selected] == report.weights[report.selected][0])

    def test_tie_breaks_at_lowest_index(self):
        i_fx = np.array([[0.5], [0.5], [0.1]])
        i_ff = np.zeros((3, 3))
        sel, _, _ = mrmr_from_tables(i_fx, i_ff, np.array([1.0]), np.ones(3),
                                     t1=0.05, t2=0.9)
        assert sel[0] == 0

    def test_reported_threshold_bands(self):
        # normalized best-MI profile; thresholds split after 2 and after 6
        imax = np.array([.25, .23, .07, .07, .06, .06, .02, .02, .01, .01, .00])
        i_fx = imax[:, None]
        h_x = np.array([1.0])
        i_ff = np.zeros((11, 11))
        h_f = np.ones(11)
        sel2, _, stop2 = mrmr_from_tables(i_fx, i_ff, h_x, h_f, t1=0.1, t2=0.9)
        assert len(sel2) == 2 and stop2 == "relevancy"
        assert sel2 == [0, 1]
        sel6, _, stop6 = mrmr_from_tables(i_fx, i_ff, h_x, h_f, t1=0.05, t2=0.9)
        assert len(sel6) == 6 and stop6 == "relevancy"
        assert sel6 == [0, 1, 2, 3, 4, 5]

    def test_report_serializes(self):
        data = _selection_dataset()
        report = mrmr_select(data)
        doc = report.to_dict()
        assert doc["selected_names"] == ["f_a"]
        assert isinstance(report.to_json(), str)
        assert "f_a" in report.table()

    def test_normalized_values_in_unit_interval(self):
        data = _selection_dataset(extra_noise=2)
        report = mrmr_select(data)
        assert np.all(report.i_star_fx >= 0) and np.all(report.i_star_fx <= 1 + 1e-9)
        assert np.all(report.i_star_ff >= 0) and np.all(report.i_star_ff <= 1 + 1e-9)
