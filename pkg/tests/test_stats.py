"""Frozen small-sample oracles plus cross-checks against scipy.stats.

The oracles were worked out by hand before the implementations (rank
sums, exact permutation counts, placement variances); scipy acts as a
second, independently derived route for the same quantities.
"""

import numpy as np
import pytest
import scipy.stats
from hypothesis import given, settings
from hypothesis import strategies as st

from wearml.stats import (average_ranks, critical_difference, delong_test,
                          friedman_test, holm_correction, mann_whitney_u,
                          pr_auc, pr_curve_points, render_cd_svg,
                          render_cd_text, roc_auc, roc_curve_points,
                          wilcoxon_signed_rank)

floats_nice = st.floats(min_value=-50, max_value=50,
                        allow_nan=False, allow_infinity=False)


class TestRoc:
    def test_textbook_example(self):
        # ranks of the positives: 2 and 4 -> (2+4-3)/4 = 0.75
        y = [0, 0, 1, 1]
        s = [0.1, 0.4, 0.35, 0.8]
        assert roc_auc(y, s) == 0.75

    def test_perfect_and_inverted(self):
        y = [0, 1, 0, 1]
        assert roc_auc(y, [0.0, 1.0, 0.1, 0.9]) == 1.0
        assert roc_auc(y, [1.0, 0.0, 0.9, 0.1]) == 0.0

    def test_ties_get_half_credit(self):
        assert roc_auc([0, 1], [0.5, 0.5]) == 0.5

    def test_rejects_single_class(self):
        with pytest.raises(ValueError):
            roc_auc([1, 1], [0.3, 0.4])

    def test_curve_endpoints_and_area(self):
        rng = np.random.default_rng(3)
        y = rng.integers(0, 2, size=200)
        y[:2] = [0, 1]
        s = rng.normal(size=200) + 0.8 * y
        fpr, tpr, thr = roc_curve_points(y, s)
        assert fpr[0] == 0.0 and tpr[0] == 0.0
        assert fpr[-1] == 1.0 and tpr[-1] == 1.0
        assert (np.diff(fpr) >= 0).all() and (np.diff(tpr) >= 0).all()
        assert thr[0] == np.inf
        area = np.trapezoid(tpr, fpr)
        assert area == pytest.approx(roc_auc(y, s), abs=1e-12)

    @given(st.lists(st.tuples(st.integers(0, 1), st.integers(-500, 500)),
                    min_size=4, max_size=40))
    def test_monotone_transform_invariance(self, pairs):
        # integer-valued scores so the affine map cannot collapse
        # distinct values through float rounding
        y = np.array([p[0] for p in pairs])
        s = np.array([p[1] for p in pairs], dtype=np.float64)
        if y.min() == y.max():
            return
        a1 = roc_auc(y, s)
        a2 = roc_auc(y, 3.0 * s + 7.0)          # strictly increasing map
        assert a1 == pytest.approx(a2, abs=1e-12)
        assert roc_auc(y, -s) == pytest.approx(1.0 - a1, abs=1e-12)

    def test_matches_sklearn_convention_via_ranks(self):
        rng = np.random.default_rng(11)
        y = rng.integers(0, 2, size=300)
        y[:2] = [0, 1]
        s = rng.normal(size=300)
        # Mann-Whitney U / (m*n) is the same statistic through another door
        u, _ = mann_whitney_u(s[y == 1], s[y == 0])
        assert roc_auc(y, s) == pytest.approx(u / ((y == 1).sum() * (y == 0).sum()))


class TestPrCurve:
    def test_average_precision_by_hand(self):
        y = [0, 0, 1, 1]
        s = [0.1, 0.4, 0.35, 0.8]
        # descending: 0.8(+) 0.4(-) 0.35(+) 0.1(-)
        # AP = 0.5*1 + 0.5*(2/3)
        assert pr_auc(y, s) == pytest.approx(5.0 / 6.0)

    def test_recall_non_decreasing_and_endpoint(self):
        rng = np.random.default_rng(5)
        y = rng.integers(0, 2, size=150)
        y[:2] = [0, 1]
        s = rng.normal(size=150)
        recall, precision, thr = pr_curve_points(y, s)
        assert (np.diff(recall) >= 0).all()
        assert recall[-1] == 1.0
        # precision is 0 while the prefix holds no positive yet
        assert ((precision >= 0) & (precision <= 1)).all()
        assert len(recall) == len(precision) == len(thr)

    def test_random_scores_ap_near_prevalence(self):
        rng = np.random.default_rng(9)
        y = (rng.random(4000) < 0.3).astype(int)
        s = rng.random(4000)
        assert pr_auc(y, s) == pytest.approx(y.mean(), abs=0.03)

    def test_perfect_ranking_ap_is_one(self):
        y = [0, 0, 1, 1]
        assert pr_auc(y, [0.1, 0.2, 0.8, 0.9]) == 1.0


class TestDeLong:
    def test_identical_scores_p_one(self):
        y = [0, 1, 0, 1, 1]
        s = [0.1, 0.9, 0.3, 0.6, 0.2]
        auc_a, auc_b, p = delong_test(y, s, s)
        assert auc_a == auc_b
        assert p == 1.0

    def test_hand_computed_case(self):
        # sa ranks perfectly (auc 1); sb swaps one pair (auc 0.5).
        # d10 = [0, 1] -> var/2 = 0.25; d01 = [0.5, 0.5] -> var 0.
        # z = 0.5 / 0.5 = 1 -> two-sided p = 2*Phi(-1)
        y = [1, 1, 0, 0]
        sa = [0.9, 0.8, 0.1, 0.2]
        sb = [0.9, 0.1, 0.8, 0.2]
        auc_a, auc_b, p = delong_test(y, sa, sb)
        assert auc_a == 1.0
        assert auc_b == 0.5
        assert p == pytest.approx(2 * scipy.stats.norm.cdf(-1.0))

    def test_aucs_match_rank_formula(self):
        rng = np.random.default_rng(21)
        y = rng.integers(0, 2, size=120)
        y[:2] = [0, 1]
        sa = rng.normal(size=120) + y
        sb = rng.normal(size=120)
        auc_a, auc_b, p = delong_test(y, sa, sb)
        assert auc_a == pytest.approx(roc_auc(y, sa))
        assert auc_b == pytest.approx(roc_auc(y, sb))
        assert 0.0 <= p <= 1.0

    def test_symmetry(self):
        rng = np.random.default_rng(22)
        y = rng.integers(0, 2, size=80)
        y[:2] = [0, 1]
        sa = rng.normal(size=80)
        sb = rng.normal(size=80)
        _, _, p_ab = delong_test(y, sa, sb)
        _, _, p_ba = delong_test(y, sb, sa)
        assert p_ab == pytest.approx(p_ba)

    def test_detects_real_gap_on_large_sample(self):
        rng = np.random.default_rng(23)
        n = 2000
        y = rng.integers(0, 2, size=n)
        y[:2] = [0, 1]
        sa = y + 0.8 * rng.normal(size=n)
        sb = rng.normal(size=n)
        _, _, p = delong_test(y, sa, sb)
        assert p < 1e-6


class TestMannWhitney:
    def test_exact_separated_samples(self):
        # all of x above all of y: U = 9, one tail = 1/C(6,3) = 0.05
        u, p = mann_whitney_u([3.0, 4.0, 5.0], [0.0, 1.0, 2.0],
                              alternative="greater")
        assert u == 9.0
        assert p == pytest.approx(0.05)

    def test_exact_matches_scipy(self):
        rng = np.random.default_rng(31)
        for _ in range(20):
            x = rng.normal(size=rng.integers(2, 6))
            y = rng.normal(size=rng.integers(2, 6))
            for alt in ("two-sided", "greater", "less"):
                u, p = mann_whitney_u(x, y, alternative=alt)
                ref = scipy.stats.mannwhitneyu(x, y, alternative=alt,
                                               method="exact")
                assert u == pytest.approx(ref.statistic)
                assert p == pytest.approx(ref.pvalue, abs=1e-12)

    def test_normal_tail_matches_scipy(self):
        rng = np.random.default_rng(32)
        x = rng.normal(size=40) + 0.4
        y = rng.normal(size=35)
        u, p = mann_whitney_u(x, y, alternative="greater")
        ref = scipy.stats.mannwhitneyu(x, y, alternative="greater",
                                       method="asymptotic")
        assert u == pytest.approx(ref.statistic)
        assert p == pytest.approx(ref.pvalue, rel=1e-6)

    def test_empty_sample_rejected(self):
        with pytest.raises(ValueError):
            mann_whitney_u([], [1.0])


class TestWilcoxon:
    def test_all_positive_differences(self):
        # five positive diffs: W = 0; one-sided p = 1/32, two-sided 1/16
        d = [1.0, 2.0, 0.5, 3.0, 1.5]
        w, p = wilcoxon_signed_rank(d, alternative="greater")
        assert w == 0.0
        assert p == pytest.approx(1.0 / 32.0)
        _, p2 = wilcoxon_signed_rank(d)
        assert p2 == pytest.approx(1.0 / 16.0)

    def test_zero_differences_dropped(self):
        w, p = wilcoxon_signed_rank([0.0, 0.0, 0.0])
        assert (w, p) == (0.0, 1.0)

    def test_exact_matches_scipy(self):
        rng = np.random.default_rng(41)
        for _ in range(20):
            d = rng.normal(size=rng.integers(5, 12))
            d = d[d != 0]
            for alt in ("two-sided", "greater", "less"):
                _, p = wilcoxon_signed_rank(d, alternative=alt)
                ref = scipy.stats.wilcoxon(d, alternative=alt, method="exact")
                assert p == pytest.approx(ref.pvalue, abs=1e-12)

    def test_paired_form_equals_difference_form(self):
        rng = np.random.default_rng(42)
        a = rng.normal(size=10)
        b = rng.normal(size=10)
        assert wilcoxon_signed_rank(a, b) == wilcoxon_signed_rank(a - b)


class TestFriedman:
    def test_perfectly_ordered_table(self):
        # 5 datasets, 3 models, identical ordering everywhere:
        # mean ranks (1, 2, 3) -> chi2 = 12*5/(3*4) * 2 = 10
        table = np.tile([0.9, 0.8, 0.7], (5, 1))
        chi2, p, mean_ranks = friedman_test(table)
        assert chi2 == pytest.approx(10.0)
        np.testing.assert_allclose(mean_ranks, [1.0, 2.0, 3.0])
        assert p == pytest.approx(scipy.stats.chi2.sf(10.0, df=2))

    def test_matches_scipy(self):
        rng = np.random.default_rng(51)
        table = rng.normal(size=(8, 4))
        chi2, p, _ = friedman_test(table)
        ref = scipy.stats.friedmanchisquare(*[table[:, j] for j in range(4)])
        assert chi2 == pytest.approx(ref.statistic)
        assert p == pytest.approx(ref.pvalue)

    def test_rank_one_is_best(self):
        table = np.array([[0.9, 0.1], [0.8, 0.2], [0.7, 0.3]])
        _, _, mean_ranks = friedman_test(table)
        assert mean_ranks[0] == 1.0 and mean_ranks[1] == 2.0


class TestHolm:
    def test_step_down_by_hand(self):
        adjusted = holm_correction([0.01, 0.02, 0.03])
        np.testing.assert_allclose(adjusted, [0.03, 0.04, 0.04])

    def test_order_preserved_and_capped(self):
        raw = [0.5, 0.04, 0.9]
        adjusted = holm_correction(raw)
        assert adjusted[1] == pytest.approx(0.12)
        assert (adjusted <= 1.0).all()
        assert (adjusted >= np.asarray(raw)).all()

    @given(st.lists(st.floats(min_value=0, max_value=1), min_size=1,
                    max_size=8))
    def test_adjusted_dominates_raw(self, raw):
        adjusted = holm_correction(raw)
        assert (adjusted >= np.asarray(raw) - 1e-15).all()
        # monotone: a smaller raw p never ends with a larger adjusted p
        order = np.argsort(raw)
        assert (np.diff(adjusted[order]) >= -1e-15).all()


class TestAverageRanks:
    def test_ties_share_average(self):
        np.testing.assert_allclose(average_ranks([10.0, 20.0, 20.0, 30.0]),
                                   [1.0, 2.5, 2.5, 4.0])

    @given(st.lists(floats_nice, min_size=1, max_size=30))
    def test_rank_sum_invariant(self, values):
        n = len(values)
        assert average_ranks(values).sum() == pytest.approx(n * (n + 1) / 2)


class TestCriticalDifference:
    def test_five_task_table_cannot_separate_four_models(self):
        # with 5 paired samples the smallest two-sided Wilcoxon p is
        # 1/16; Holm over 6 pairs pushes it past any alpha <= 0.375,
        # so the diagram must always be a single clique
        rng = np.random.default_rng(61)
        table = rng.random((5, 4))
        cd = critical_difference(table, ["a", "b", "c", "d"], alpha=0.1)
        assert len(cd["cliques"]) == 1
        assert sorted(cd["cliques"][0]) == ["a", "b", "c", "d"]

    def test_gate_blocks_pairwise_when_friedman_accepts(self):
        table = np.array([[0.5, 0.51], [0.52, 0.5], [0.5, 0.52],
                          [0.51, 0.5], [0.5, 0.5]])
        cd = critical_difference(table, ["x", "y"], alpha=0.1)
        assert cd["friedman_p"] >= 0.1
        assert cd["cliques"] == [[cd["order"][0], cd["order"][1]]]

    def test_clear_winner_separates_with_enough_tasks(self):
        rng = np.random.default_rng(62)
        n = 14
        strong = 0.9 + 0.01 * rng.random(n)
        weak = 0.5 + 0.01 * rng.random(n)
        table = np.column_stack([strong, weak])
        cd = critical_difference(table, ["strong", "weak"], alpha=0.1)
        assert cd["friedman_p"] < 0.1
        assert ["strong"] in cd["cliques"] and ["weak"] in cd["cliques"]
        assert cd["order"][0] == "strong"

    def test_renderers_cover_all_models(self):
        rng = np.random.default_rng(63)
        table = rng.random((5, 4))
        names = ["gbdt", "cnn", "tf", "full"]
        cd = critical_difference(table, names, alpha=0.1)
        text = render_cd_text(cd)
        svg = render_cd_svg(cd)
        for name in names:
            assert name in text
            assert name in svg
        assert svg.startswith("<svg") and svg.endswith("</svg>")
