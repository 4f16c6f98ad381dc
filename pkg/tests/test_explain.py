import numpy as np
import pytest
from scipy import stats

from frfx.config import ForestConfig
from frfx.errors import DegenerateGroups, DegenerateScores
from frfx.explain import (
    CurveSet,
    ImportanceRow,
    ImportanceTable,
    PdpCurve,
    anova_fpc,
    bubble_data,
    compute_fpcph,
    compute_fpdp,
    eigenfunction_curves,
    fpc_variation,
    fpdp_all,
    importance_table,
    mdg_importance,
    permutation_importance,
    permutation_importance_runs,
    reconstruction_bands,
    score_band,
    scores_by_class,
    smoothed_curves,
)
from frfx.frf import FunctionalRandomForest, TreeNode, fit_forest, predict_proba, predict_probas
from frfx.utils import clamp_logit


class TestFpdp:
    def test_matches_brute_force_double_loop(self, fpca, dataset):
        X = fpca.scores[:20]
        forest = fit_forest(fpca.scores, dataset.labels, ForestConfig(n_trees=25, seed=4), n_jobs=1)
        G, k = 5, 1
        curve = compute_fpdp(forest, X, k, grid_size=G)

        grid = np.linspace(X[:, k].min(), X[:, k].max(), G)
        expected = []
        for g in grid:
            acc = 0.0
            for i in range(X.shape[0]):
                row = X[i].copy()
                row[k] = g
                acc += predict_proba(forest, row)
            expected.append(acc / X.shape[0])
        assert curve.score_grid == grid.tolist()
        assert curve.values == expected

    def test_values_in_unit_interval(self, forest, fpca):
        curves = fpdp_all(forest, fpca.scores, grid_size=10)
        assert [c.fpc_index for c in curves] == list(range(fpca.n_components))
        for c in curves:
            assert len(c.values) == 10
            assert all(0.0 <= v <= 1.0 for v in c.values)

    def test_logit_scale(self, forest, fpca):
        prob = compute_fpdp(forest, fpca.scores, 0, grid_size=8)
        logit = compute_fpdp(forest, fpca.scores, 0, grid_size=8, scale="logit")
        np.testing.assert_allclose(logit.values, clamp_logit(np.array(prob.values)))

    def test_constant_column(self, forest, fpca):
        X = fpca.scores.copy()
        X[:, 2] = 1.0
        with pytest.raises(DegenerateScores):
            compute_fpdp(forest, X, 2)

    def test_flat_for_predictor_that_ignores_the_fpc(self, fpca, dataset):
        first_two = fit_forest(fpca.scores[:, :2], dataset.labels, ForestConfig(n_trees=15, seed=6), n_jobs=1)
        ignores_rest = lambda X: predict_probas(first_two, X[:, :2])  # noqa: E731
        for k in (2, 3, 4):
            values = np.array(compute_fpdp(ignores_rest, fpca.scores, k, grid_size=12).values)
            assert values.max() - values.min() < 1e-12

    def test_logit_closed_form(self):
        assert clamp_logit(np.array([0.5]))[0] == 0.0
        assert clamp_logit(np.array([0.9]))[0] == pytest.approx(np.log(9.0))

    def test_callable_model(self, fpca):
        sigmoid = lambda X: 1.0 / (1.0 + np.exp(-X[:, 0]))  # noqa: E731
        curve = compute_fpdp(sigmoid, fpca.scores, 0, grid_size=6)
        assert np.all(np.diff(curve.values) > 0)

    def test_rejects_bad_curve(self):
        with pytest.raises(ValueError):
            PdpCurve(fpc_index=0, score_grid=[0.0, 1.0], values=[0.2, 1.5])


class TestFpcph:
    def test_cells_hold_other_scores_at_means(self, forest, fpca):
        hm = compute_fpcph(forest, fpca.scores, grid_size=7)
        assert len(hm.probabilities) == fpca.n_components
        assert all(len(row) == 7 for row in hm.probabilities)
        means = fpca.scores.mean(axis=0)
        row = means.copy()
        row[3] = hm.score_grids[3][4]
        assert hm.probabilities[3][4] == predict_proba(forest, row)
        assert hm.to_frame().shape == (fpca.n_components * 7, 4)

    def test_constant_model_fills_every_cell_with_its_leaf_fraction(self, fpca):
        K = fpca.n_components
        trees = [TreeNode((3, 1), 0.375, 4) for _ in range(3)]
        leafy = FunctionalRandomForest(trees=trees, config=ForestConfig(n_trees=3, probability="leaf"), n_features=K)
        hm = compute_fpcph(leafy, fpca.scores, grid_size=6)
        assert {p for row in hm.probabilities for p in row} == {0.25}
        voting = FunctionalRandomForest(trees=trees, config=ForestConfig(n_trees=3), n_features=K)
        assert {p for row in compute_fpcph(voting, fpca.scores, grid_size=6).probabilities for p in row} == {0.0}


class TestImportance:
    @pytest.fixture
    def padded(self, fpca, dataset):
        # last column is constant, so no tree can split on it
        X = np.column_stack([fpca.scores, np.zeros(fpca.scores.shape[0])])
        forest = fit_forest(X, dataset.labels, ForestConfig(n_trees=20, seed=9), n_jobs=1)
        return X, forest

    def test_unused_feature_has_zero_mdg(self, padded):
        _, forest = padded
        mdg = mdg_importance(forest)
        assert mdg[-1] == 0.0
        assert mdg_importance(forest, weighted=False)[-1] == 0.0
        assert np.all(mdg >= 0)

    def test_unused_feature_has_zero_permutation_importance(self, padded, dataset):
        X, forest = padded
        runs = permutation_importance_runs(forest, X, dataset.labels, repeats=5, seed=1)
        assert runs.shape == (5, X.shape[1])
        assert np.all(runs[:, -1] == 0.0)
        oob_runs = permutation_importance_runs(forest, X, dataset.labels, repeats=3, seed=1, use_oob=True)
        assert np.all(oob_runs[:, -1] == 0.0)

    def test_mdg_averages_over_trees(self, forest):
        total = sum(n.weighted_decrease for t in forest.trees for n in t.walk() if not n.is_leaf)
        assert mdg_importance(forest).sum() == pytest.approx(total / forest.n_trees)

    def test_permutation_is_seeded(self, forest, fpca, dataset):
        a = permutation_importance(forest, fpca.scores, dataset.labels, repeats=3, seed=5, n_jobs=1)
        b = permutation_importance(forest, fpca.scores, dataset.labels, repeats=3, seed=5, n_jobs=3)
        np.testing.assert_array_equal(a, b)

    def test_exhaustive_mode(self, forest, fpca, dataset):
        X, y = fpca.scores[[0, 1, 2, 20, 21, 22]], dataset.labels[[0, 1, 2, 20, 21, 22]]
        runs = permutation_importance_runs(forest, X, y, exhaustive=True)
        assert runs.shape == (720, fpca.n_components)
        with pytest.raises(ValueError):
            permutation_importance_runs(forest, fpca.scores, dataset.labels, exhaustive=True)

    def test_table_sources(self, forest, fpca, dataset):
        table = importance_table(forest, fpca, fpca.scores, dataset.labels, repeats=2)
        assert table.permutation_source == "oob"
        assert len(table.rows) == fpca.n_components
        held_out = importance_table(
            forest, fpca, fpca.scores, dataset.labels, repeats=2,
            eval_scores=fpca.scores[:10], eval_labels=dataset.labels[:10],
        )
        assert held_out.permutation_source == "test"
        assert sum(r.explained_variance_fraction for r in table.rows) == pytest.approx(1.0)


class TestAnova:
    def test_identities_on_random_samples(self):
        rng = np.random.default_rng(42)
        for _ in range(1000):
            n0, n1 = rng.integers(2, 15, size=2)
            x = np.concatenate([rng.normal(0, 1, n0), rng.normal(rng.normal(0, 1), rng.uniform(0.5, 2), n1)])
            y = np.concatenate([np.zeros(n0, int), np.ones(n1, int)])
            a = anova_fpc(x[:, None], y)[0]
            assert a.ss_model + a.ss_error == pytest.approx(a.ss_total, rel=1e-8)
            t = stats.ttest_ind(x[y == 0], x[y == 1]).statistic
            assert a.f_statistic == pytest.approx(t * t, rel=1e-10)
            eta = a.eta_squared
            assert a.f_statistic == pytest.approx(eta / (1 - eta) * a.df_error / a.df_model, rel=1e-10)
            assert a.p_value == pytest.approx(stats.f.sf(a.f_statistic, 1, a.df_error), rel=1e-8, abs=1e-300)

    def test_zero_within_class_variance(self):
        a = anova_fpc(np.array([[1.0], [1.0], [1.0], [2.0], [2.0]]), np.array([0, 0, 0, 1, 1]))[0]
        assert a.infinite_f and a.f_statistic == float("inf") and a.p_value == 0.0
        assert a.eta_squared == 1.0

    def test_all_values_equal(self):
        a = anova_fpc(np.ones((4, 1)), np.array([0, 0, 1, 1]))[0]
        assert a.f_statistic == 0.0 and a.p_value == 1.0 and not a.infinite_f

    def test_needs_both_classes(self):
        with pytest.raises(DegenerateGroups):
            anova_fpc(np.ones((4, 1)), np.zeros(4, dtype=int))


class TestScoresByClass:
    def test_quartiles_and_density(self, fpca, dataset):
        cs = scores_by_class(fpca.scores, dataset.labels, fpc_indices=[0, 1])
        assert len(cs.groups) == 4 and len(cs.p_values) == 2
        g = cs.group(0, 1)
        sample = fpca.scores[dataset.labels == 1, 0]
        assert g.median == pytest.approx(np.median(sample))
        assert g.q1 == pytest.approx(np.percentile(sample, 25))
        assert len(g.density_grid) == 128
        assert np.trapz(g.density, g.density_grid) == pytest.approx(1.0, abs=1e-3)

    def test_single_value_bandwidth(self):
        cs = scores_by_class(np.array([[3.0], [0.0], [1.0]]), np.array([0, 1, 1]))
        assert cs.group(0, 0).bandwidth == pytest.approx(0.3)


class TestBubble:
    def _table(self, mdg, eta):
        rows = [
            ImportanceRow(fpc_index=k, mdg=m, permutation_importance=0.0, f_statistic=1.0, p_value=0.5,
                          eta_squared=e, explained_variance_fraction=0.25)
            for k, (m, e) in enumerate(zip(mdg, eta))
        ]
        return ImportanceTable(rows=rows)

    def test_quadrants(self):
        bd = bubble_data(self._table([0.4, 0.3, 0.1, 0.05], [0.5, 0.01, 0.3, 0.02]))
        assert [p.quadrant for p in bd.points] == ["critical", "model-specific", "externally-relevant", "minor"]
        assert bd.median_internal == pytest.approx(0.2)

    def test_median_counts_as_high(self):
        bd = bubble_data(self._table([0.1, 0.2, 0.3], [0.3, 0.2, 0.1]))
        assert bd.points[1].quadrant == "critical"

    def test_quadrants_survive_monotone_rescaling(self):
        mdg = np.array([0.40, 0.05, 0.22, 0.10, 0.31])
        eta = np.array([0.02, 0.60, 0.35, 0.12, 0.50])
        before = bubble_data(self._table(mdg, eta))
        after = bubble_data(self._table(mdg**3 + 2 * mdg, np.sqrt(eta)))
        assert [p.quadrant for p in after.points] == [p.quadrant for p in before.points]
        assert after.median_internal == pytest.approx(before.median_internal**3 + 2 * before.median_internal)
        assert after.median_external == pytest.approx(np.sqrt(before.median_external))

    def test_all_equal_metrics_are_critical(self):
        bd = bubble_data(self._table([0.2] * 4, [0.3] * 4))
        assert all(p.quadrant == "critical" for p in bd.points)

    def test_unknown_metric(self):
        with pytest.raises(ValueError):
            bubble_data(self._table([0.1], [0.1]), internal_choice="gain")


class TestShapes:
    def test_bands_envelope(self, fpca):
        bands = reconstruction_bands(fpca, k=0, n_windows=4)
        assert len(bands.edges) == 5 and len(bands.lower) == 4
        assert sum(bands.counts) == fpca.scores.shape[0]
        for lo, hi in zip(bands.lower, bands.upper):
            assert np.all(np.array(lo) <= np.array(hi))

    def test_band_endpoints(self, fpca):
        lo, hi = score_band(fpca, 1, -1.0, 2.0)
        a = fpca.mean_curve - fpca.eigenfunctions[1]
        b = fpca.mean_curve + 2.0 * fpca.eigenfunctions[1]
        np.testing.assert_allclose(lo, np.minimum(a, b))
        np.testing.assert_allclose(hi, np.maximum(a, b))

    def test_variation_family(self, fpca):
        var = fpc_variation(fpca, 0, n_curves=5)
        assert len(var.curves) == 5
        np.testing.assert_allclose(var.curves[2], fpca.mean_curve, atol=1e-12)
        assert var.score_values[-1] == pytest.approx(2.0 * np.sqrt(fpca.eigenvalues[0]))

    def test_eigenfunction_curves_cover_every_fpc(self, fpca):
        cs = eigenfunction_curves(fpca)
        assert len(cs.curves) == fpca.n_components
        share = 100 * fpca.eigenvalues[0] / fpca.total_variance
        assert cs.names[0] == f"FPC1 ({share:.1f}%)"
        assert cs.groups is None
        assert cs.to_frame().shape == (fpca.n_components * len(fpca.grid), 3)

    def test_smoothed_curves_keep_labels(self, smoothed, dataset):
        cs = smoothed_curves(smoothed)
        assert cs.groups == dataset.labels.tolist()
        frame = cs.to_frame()
        assert list(frame.columns) == ["curve", "group", "t", "value"]
        assert len(frame) == dataset.n_curves * len(dataset.grid)

    def test_curve_set_needs_one_value_per_grid_point(self):
        with pytest.raises(ValueError):
            CurveSet(name="x", grid=[0.0, 1.0], names=["a"], curves=[[1.0]])


def test_probability_helper_agrees_with_batch(forest, fpca):
    np.testing.assert_array_equal(
        predict_probas(forest, fpca.scores[:5]), [predict_proba(forest, r) for r in fpca.scores[:5]]
    )
