"""Statistics layer: elementary tests, FDR, and the cohort protocol."""

import math

import numpy as np
import pytest
import scipy.stats as sps
from hypothesis import given, settings
from hypothesis import strategies as st

from caravel.features import FEATURE_COLUMNS
from caravel.pipeline import write_csv
from caravel.stats import (
    CohortTable,
    anova_oneway,
    bh_fdr,
    classify_variable,
    quartile_groups,
    run_protocol,
    spearman,
    ttest_ind,
)
from oracles import brute_spearman_rho, rank_average, stepup_bh


class TestSpearman:
    def test_monotone_is_one(self):
        x = [1.0, 2.0, 5.0, 9.0, 12.0]
        assert spearman(x, [v**3 + 1 for v in x]).rho == 1.0

    def test_reversed_is_minus_one(self):
        x = [1.0, 2.0, 3.0, 4.0]
        res = spearman(x, x[::-1])
        assert res.rho == -1.0
        assert res.p_value == 0.0

    def test_tied_ranks(self):
        res = spearman([1, 2, 2, 4], [10, 20, 20, 40])
        assert res.rho == 1.0

    def test_rank_invariance(self):
        # correlating the ranks themselves must reproduce rho exactly
        rng = np.random.default_rng(7)
        x = rng.integers(0, 10, size=30).astype(float)
        y = rng.integers(0, 10, size=30).astype(float)
        direct = spearman(x, y).rho
        ranked = spearman(rank_average(x), rank_average(y)).rho
        assert ranked == direct

    def test_constant_input_flagged(self):
        res = spearman([3.0, 3.0, 3.0, 3.0], [1.0, 2.0, 3.0, 4.0])
        assert math.isnan(res.rho)
        assert "constant_input" in res.flags

    def test_rejects_short_or_mismatched(self):
        with pytest.raises(ValueError):
            spearman([1.0, 2.0], [1.0, 2.0])
        with pytest.raises(ValueError):
            spearman([1.0, 2.0, 3.0], [1.0, 2.0])

    def test_against_brute_ranks(self):
        rng = np.random.default_rng(11)
        for _ in range(300):
            n = int(rng.integers(3, 40))
            x = rng.integers(0, 8, size=n).astype(float)  # heavy ties
            y = rng.normal(size=n)
            expected = brute_spearman_rho(x, y)
            res = spearman(x, y)
            if expected is None:
                assert math.isnan(res.rho)
            else:
                assert res.rho == pytest.approx(expected, abs=1e-12)

    def test_against_scipy(self):
        rng = np.random.default_rng(13)
        for _ in range(50):
            n = int(rng.integers(4, 60))
            x = rng.normal(size=n)
            y = rng.normal(size=n)
            res = spearman(x, y)
            ref = sps.spearmanr(x, y)
            assert res.rho == pytest.approx(float(ref.statistic), abs=1e-12)
            assert res.p_value == pytest.approx(float(ref.pvalue), abs=1e-10)


class TestTTest:
    def test_identical_groups(self):
        res = ttest_ind([1.0, 2.0, 3.0], [1.0, 2.0, 3.0])
        assert (res.t, res.p_value, res.cohens_d) == (0.0, 1.0, 0.0)

    def test_degenerate_separated_groups(self):
        res = ttest_ind([0.0, 0.0], [1.0, 1.0])
        assert math.isinf(res.cohens_d) and res.cohens_d < 0
        assert res.p_value == 0.0
        assert "zero_variance" in res.flags

    def test_textbook_effect_size(self):
        res = ttest_ind([1, 2, 3, 4, 5], [3, 4, 5, 6, 7])
        assert res.cohens_d == pytest.approx(-2.0 / math.sqrt(2.5), abs=1e-12)
        assert res.t == pytest.approx(-2.0, abs=1e-12)
        assert res.df == pytest.approx(8.0, abs=1e-12)

    def test_antisymmetric(self):
        a, b = [1.0, 3.0, 5.0, 6.0], [2.0, 2.5, 7.0]
        assert ttest_ind(a, b).t == pytest.approx(-ttest_ind(b, a).t, abs=1e-15)

    def test_against_scipy_welch(self):
        rng = np.random.default_rng(17)
        for _ in range(50):
            a = rng.normal(0, 1, size=int(rng.integers(2, 30)))
            b = rng.normal(0.3, 2, size=int(rng.integers(2, 30)))
            res = ttest_ind(a, b)
            ref = sps.ttest_ind(a, b, equal_var=False)
            assert res.t == pytest.approx(float(ref.statistic), abs=1e-12)
            assert res.p_value == pytest.approx(float(ref.pvalue), abs=1e-12)

    def test_rejects_tiny_groups(self):
        with pytest.raises(ValueError):
            ttest_ind([1.0], [1.0, 2.0])


class TestAnova:
    def test_hand_table(self):
        res = anova_oneway([[1, 2, 3], [2, 3, 4], [3, 4, 5]])
        assert res.eta2 == pytest.approx(0.5, abs=1e-15)
        assert res.f == pytest.approx(3.0, abs=1e-12)
        assert res.omega2 == pytest.approx(4.0 / 13.0, abs=1e-12)
        assert res.p_value == pytest.approx(float(sps.f.sf(3.0, 2, 6)), abs=1e-12)

    def test_equal_means_zero_effect(self):
        res = anova_oneway([[1.0, 3.0], [2.0, 2.0], [0.0, 4.0]])
        assert res.f == 0.0
        assert res.p_value == 1.0
        assert res.eta2 == 0.0
        assert res.omega2 == 0.0
        assert "omega2_clamped" in res.flags

    def test_separated_constant_groups(self):
        res = anova_oneway([[1.0, 1.0], [2.0, 2.0]])
        assert res.eta2 == 1.0
        assert res.omega2 == 1.0
        assert math.isinf(res.f)
        assert res.p_value == 0.0

    def test_all_identical(self):
        res = anova_oneway([[5.0, 5.0], [5.0, 5.0, 5.0]])
        assert (res.f, res.p_value, res.eta2) == (0.0, 1.0, 0.0)
        assert "zero_variance" in res.flags

    def test_two_groups_f_equals_t_squared(self):
        rng = np.random.default_rng(19)
        for _ in range(25):
            a = rng.normal(size=int(rng.integers(2, 20)))
            b = rng.normal(0.5, 1, size=int(rng.integers(2, 20)))
            res = anova_oneway([a, b])
            na, nb = a.size, b.size
            pooled = ((na - 1) * a.var(ddof=1) + (nb - 1) * b.var(ddof=1)) / (na + nb - 2)
            t = (a.mean() - b.mean()) / math.sqrt(pooled * (1 / na + 1 / nb))
            assert res.f == pytest.approx(t * t, abs=1e-9)

    def test_against_scipy(self):
        rng = np.random.default_rng(23)
        for _ in range(25):
            groups = [rng.normal(m, 1, size=int(rng.integers(2, 25))) for m in (0, 0.2, 0.7)]
            res = anova_oneway(groups)
            ref = sps.f_oneway(*groups)
            assert res.f == pytest.approx(float(ref.statistic), abs=1e-10)
            assert res.p_value == pytest.approx(float(ref.pvalue), abs=1e-10)

    @settings(max_examples=30, deadline=None)
    @given(seed=st.integers(0, 10_000))
    def test_omega2_never_exceeds_eta2(self, seed):
        rng = np.random.default_rng(seed)
        groups = [rng.normal(rng.normal(), 1, size=int(rng.integers(2, 15))) for _ in range(3)]
        res = anova_oneway(groups)
        assert res.omega2 <= res.eta2 + 1e-12
        assert 0.0 <= res.eta2 <= 1.0

    def test_rejects_bad_shapes(self):
        with pytest.raises(ValueError):
            anova_oneway([[1.0, 2.0]])
        with pytest.raises(ValueError):
            anova_oneway([[1.0, 2.0], [3.0]])


class TestQuartileGroups:
    def test_one_through_eight(self):
        groups = quartile_groups([1, 2, 3, 4, 5, 6, 7, 8])
        assert groups.tolist() == [0, 0, 1, 1, 2, 2, 3, 3]

    def test_boundary_goes_low(self):
        # cuts for 0..4 land exactly on 1, 2, 3
        assert quartile_groups([0, 1, 2, 3, 4]).tolist() == [0, 0, 1, 2, 3]

    def test_four_distinct_one_each(self):
        assert sorted(quartile_groups([10.0, 20.0, 30.0, 40.0]).tolist()) == [0, 1, 2, 3]

    def test_order_invariant_per_value(self):
        values = [5.0, 1.0, 9.0, 3.0, 7.0, 2.0, 8.0, 4.0]
        direct = quartile_groups(values)
        shuffled = quartile_groups(values[::-1])
        assert direct.tolist() == shuffled[::-1].tolist()

    def test_rejects_degenerate_input(self):
        with pytest.raises(ValueError):
            quartile_groups([1.0, 1.0, 1.0, 1.0])
        with pytest.raises(ValueError):
            quartile_groups([1.0, 2.0, 2.0, 1.0])
        with pytest.raises(ValueError):
            quartile_groups([1.0, 2.0, 3.0])


class TestBhFdr:
    def test_hand_example(self):
        q = bh_fdr([0.01, 0.02, 0.03, 0.5])
        assert np.allclose(q, [0.04, 0.04, 0.04, 0.5], atol=1e-15)

    def test_all_ones(self):
        assert bh_fdr([1.0, 1.0, 1.0]).tolist() == [1.0, 1.0, 1.0]

    def test_single_value(self):
        assert bh_fdr([0.2]).tolist() == [0.2]

    def test_monotone_on_sorted_input(self):
        rng = np.random.default_rng(29)
        p = np.sort(rng.uniform(size=40))
        q = bh_fdr(p)
        assert np.all(np.diff(q) >= -1e-15)

    @settings(max_examples=30, deadline=None)
    @given(seed=st.integers(0, 10_000))
    def test_permutation_equivariant(self, seed):
        rng = np.random.default_rng(seed)
        p = rng.uniform(size=int(rng.integers(1, 30)))
        perm = rng.permutation(p.size)
        assert np.allclose(bh_fdr(p)[perm], bh_fdr(p[perm]), atol=1e-15)

    def test_against_stepup_oracle(self):
        rng = np.random.default_rng(31)
        for _ in range(300):
            p = rng.uniform(size=int(rng.integers(1, 25)))
            p[rng.uniform(size=p.size) < 0.3] = 0.5  # force ties
            assert np.allclose(bh_fdr(p), stepup_bh(p), atol=1e-15)

    def test_rejects_out_of_range(self):
        with pytest.raises(ValueError):
            bh_fdr([0.5, 1.5])
        with pytest.raises(ValueError):
            bh_fdr([-0.1])


# ---------------------------------------------------------------------------
# protocol plumbing


def make_table(n=24, sites=("A", "B"), seed=0, feature_from_age=None):
    """Synthetic cohort rows with age, sex, site and two feature columns."""
    rng = np.random.default_rng(seed)
    rows = []
    for i in range(n):
        age = 20.0 + i
        planted = feature_from_age(age, rng) if feature_from_age else rng.normal()
        rows.append(
            {
                "subject_id": f"sub-{i:03d}",
                "age": age,
                "sex": "F" if i % 2 == 0 else "M",
                "site": sites[i % len(sites)],
                "total_length_mm": planted,
                "loop_count": float(rng.integers(0, 5)),
            }
        )
    columns = ("subject_id", "age", "sex", "site", "total_length_mm", "loop_count")
    return CohortTable(columns=columns, rows=tuple(rows))


class TestCohortTable:
    def test_column_split(self):
        table = make_table()
        assert table.feature_columns() == ["total_length_mm", "loop_count"]
        assert table.variable_columns() == ["age", "sex", "site"]

    def test_regional_feature_columns_recognized(self):
        table = CohortTable(
            columns=("subject_id", "age", "total_length_mm@3"),
            rows=({"subject_id": "s", "age": 1.0, "total_length_mm@3": 2.0},),
        )
        assert table.feature_columns() == ["total_length_mm@3"]
        assert table.variable_columns() == ["age"]

    def test_from_csv_roundtrip(self, tmp_path):
        table = make_table(n=6)
        path = tmp_path / "cohort.csv"
        write_csv(path, list(table.columns), list(table.rows))
        loaded = CohortTable.from_csv(path)
        assert loaded.columns == table.columns
        assert loaded.rows[0]["age"] == 20.0
        assert loaded.rows[0]["sex"] == "F"

    def test_from_csv_requires_subject_id(self, tmp_path):
        path = tmp_path / "broken.csv"
        path.write_text("a,b\n1,2\n")
        with pytest.raises(ValueError, match="subject_id"):
            CohortTable.from_csv(path)

    def test_classify_variable(self):
        assert classify_variable([1.0, 2.0, 3.0]) == "numeric"
        assert classify_variable(["M", "F", "M"]) == "binary"
        assert classify_variable([0.0, 1.0, None]) == "binary"
        assert classify_variable(["A", "B", "C"]) == "categorical"
        assert classify_variable([2.0, 2.0]) == "constant"
        assert classify_variable([None, None]) == "empty"
        assert classify_variable([float("nan"), 1.0]) == "constant"


class TestRunProtocol:
    def test_feature_equal_to_age(self):
        table = make_table(feature_from_age=lambda age, rng: age)
        results = run_protocol(table, variables=["age"], features=["total_length_mm"])
        by_test = {r.test_name: r for r in results}
        assert by_test["spearman"].statistic == 1.0
        assert by_test["spearman"].q_value < 1e-6
        assert by_test["quartile_anova"].effect_type == "eta2"

    def test_planted_negative_effect_recovered(self):
        for seed in range(3):
            table = make_table(
                n=40, seed=seed,
                feature_from_age=lambda age, rng: -0.8 * age + rng.normal(0, 2.0),
            )
            results = run_protocol(table, variables=["age"], features=["total_length_mm"])
            spearman_res = next(r for r in results if r.test_name == "spearman")
            assert spearman_res.statistic < 0
            assert spearman_res.q_value < 0.05

    def test_binary_and_categorical_routing(self):
        table = make_table(sites=("A", "B", "C"))
        results = run_protocol(table)
        tests = {(r.variable, r.test_name) for r in results}
        assert ("sex", "welch_t") in tests
        assert ("site", "anova") in tests
        assert ("age", "spearman") in tests and ("age", "quartile_anova") in tests
        sex_res = next(r for r in results if r.variable == "sex")
        assert sex_res.effect_type == "d"
        site_res = next(r for r in results if r.variable == "site")
        assert site_res.effect_type == "omega2"

    def test_stratified_counts(self):
        table = make_table(n=32, sites=("A", "B"))
        plain = run_protocol(table)
        strat = run_protocol(table, stratify_by_site=True)
        assert len(strat) == 2 * len(plain)
        assert all("|site:" in r.scope for r in strat)
        # site is constant inside each stratum, so its slot is a skipped row
        site_rows = [r for r in strat if r.variable == "site"]
        assert site_rows and all("skipped" in r.flags for r in site_rows)

    def test_exclude_sites(self):
        table = make_table(n=30, sites=("A", "B", "C"))
        kept = run_protocol(table, variables=["age"], features=["total_length_mm"],
                            exclude_sites=("C",))
        assert kept[0].n_used == 20
        with pytest.raises(ValueError, match="excluded"):
            run_protocol(table, exclude_sites=("A", "B", "C"))

    def test_pairwise_deletion_tracks_n(self):
        table = make_table(n=12)
        rows = list(table.rows)
        rows[0] = dict(rows[0], age=None)
        rows[1] = dict(rows[1], total_length_mm=None)
        table = CohortTable(columns=table.columns, rows=tuple(rows))
        res = run_protocol(table, variables=["age"], features=["total_length_mm"])
        assert all(r.n_used == 10 for r in res)

    def test_underpowered_pair_skipped_not_fatal(self):
        table = make_table(n=24)
        rows = [dict(r, age=None) for r in table.rows[:-2]] + list(table.rows[-2:])
        table = CohortTable(columns=table.columns, rows=tuple(rows))
        res = run_protocol(table, variables=["age"], features=["loop_count"])
        assert all("skipped" in r.flags for r in res)
        assert all(r.p_value is None and r.q_value is None for r in res)

    def test_q_values_match_family_bh(self):
        table = make_table(n=36, sites=("A",))
        results = run_protocol(table)
        fam = [r for r in results if r.test_name == "spearman" and r.variable == "age"]
        assert len(fam) == 2  # one per feature column
        qs = bh_fdr([r.p_value for r in fam])
        assert np.allclose([r.q_value for r in fam], qs, atol=1e-15)

    def test_deterministic(self):
        table = make_table(n=20)
        assert run_protocol(table) == run_protocol(table)

    def test_rejects_unknown_columns(self):
        table = make_table()
        with pytest.raises(ValueError, match="unknown"):
            run_protocol(table, variables=["height"])

    def test_rejects_empty_table(self):
        table = CohortTable(columns=("subject_id",), rows=())
        with pytest.raises(ValueError):
            run_protocol(table)
