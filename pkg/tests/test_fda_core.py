import logging

import numpy as np
import pytest

from conftest import ecg200_path, needs_ecg200
from frfx.errors import (
    DegenerateModel,
    GridMismatch,
    InvalidBasisConfig,
    InvalidDataset,
    InvalidGrid,
    NonpositiveWeight,
    RankError,
    SingularFit,
)
from frfx.fda_core import (
    FpcaModel,
    FunctionalDataset,
    TimeGrid,
    build_basis,
    cumulative_explained_variance,
    evaluate,
    explained_variance,
    fit_fpca,
    l2_distance,
    project,
    project_curves,
    reconstruct,
    reconstruct_single,
    roughness_penalty,
    smooth,
    variance_captured,
)


class TestTimeGrid:
    def test_needs_four_points(self):
        with pytest.raises(InvalidGrid):
            TimeGrid.uniform(3)

    def test_strictly_increasing(self):
        with pytest.raises(InvalidGrid):
            TimeGrid.from_points([0.0, 0.5, 0.5, 1.0])

    def test_trapezoid_weights_integrate_length(self):
        g = TimeGrid.from_points([0.0, 0.1, 0.4, 0.7, 1.0])
        assert g.weights.sum() == pytest.approx(1.0)
        assert g.weights[0] == pytest.approx(0.05)

    def test_rejects_nonpositive_weights(self):
        with pytest.raises(InvalidGrid):
            TimeGrid.from_points([0, 1, 2, 3], [1, 1, 0, 1])


class TestFunctionalDataset:
    def test_shape_must_match_grid(self, grid):
        with pytest.raises(InvalidDataset):
            FunctionalDataset(grid, np.zeros((3, 10)))

    def test_labels_are_binary(self, grid):
        with pytest.raises(InvalidDataset):
            FunctionalDataset(grid, np.zeros((2, 50)), np.array([0, 2]))


class TestBuildBasis:
    def test_order_above_n_basis(self, grid):
        with pytest.raises(InvalidBasisConfig):
            build_basis(grid, 3, 4)

    def test_partition_of_unity(self, basis):
        assert basis.eval_cache.shape == (12, 50)
        np.testing.assert_allclose(basis.eval_cache.sum(axis=0), 1.0, atol=1e-12)

    def test_evaluate_off_grid(self, basis):
        coef = np.ones(12)
        np.testing.assert_allclose(basis.evaluate(coef, [0.123, 0.5, 0.987]), [[1.0, 1.0, 1.0]], atol=1e-12)


class TestSmooth:
    def test_reproduces_cubic_exactly(self, grid, basis):
        t = grid.points
        cubic = 1.0 - 2.0 * t + 3.0 * t**2 - 0.5 * t**3
        sm = smooth(FunctionalDataset(grid, cubic[None, :]), basis)
        np.testing.assert_allclose(evaluate(sm)[0], cubic, atol=1e-8)

    def test_grid_mismatch(self, dataset):
        other = build_basis(TimeGrid.uniform(40), 12, 4)
        with pytest.raises(GridMismatch):
            smooth(dataset, other)

    def test_singular_when_basis_outnumbers_points(self):
        g = TimeGrid.uniform(6)
        b = build_basis(g, 8, 4)
        with pytest.raises(SingularFit):
            smooth(FunctionalDataset(g, np.ones((1, 6))), b)

    def test_negative_penalty(self, dataset, basis):
        with pytest.raises(InvalidBasisConfig):
            smooth(dataset, basis, penalty=-1.0)

    def test_penalty_reduces_roughness(self, dataset, basis):
        P = roughness_penalty(basis.n_basis)
        rough = lambda c: float(np.einsum("ij,jk,ik->i", c, P, c).sum())  # noqa: E731
        assert rough(smooth(dataset, basis, 10.0).coefficients) < rough(smooth(dataset, basis, 0.0).coefficients)

    def test_constant_curve(self, grid, basis):
        sm = smooth(FunctionalDataset(grid, np.full((2, len(grid)), 5.0)), basis)
        np.testing.assert_allclose(evaluate(sm), 5.0, atol=1e-8)

    def test_as_many_basis_functions_as_points_interpolates(self):
        g = TimeGrid.uniform(10)
        b = build_basis(g, 10, 4)
        z = np.random.default_rng(3).normal(size=(4, 10))
        sm = smooth(FunctionalDataset(g, z), b)
        np.testing.assert_allclose(evaluate(sm), z, atol=1e-6)
        direct = np.linalg.solve(b.eval_cache.T, z.T).T
        np.testing.assert_allclose(sm.coefficients, direct, atol=1e-6)

    def test_residual_grows_with_penalty(self, dataset, basis):
        residuals = []
        for penalty in (0.0, 1.0, 100.0):
            fitted = evaluate(smooth(dataset, basis, penalty))
            residuals.append(float(np.sum((dataset.values - fitted) ** 2)))
        assert residuals[0] <= residuals[1] + 1e-10
        assert residuals[1] <= residuals[2] + 1e-10
        assert residuals[2] > residuals[0]


class TestFpca:
    def test_orthonormal_eigenfunctions(self, fpca):
        xi = fpca.eigenfunctions
        gram = (xi * fpca.grid.weights) @ xi.T
        assert np.abs(gram - np.eye(fpca.n_components)).max() < 1e-8

    def test_eigenvalues_nonincreasing(self, fpca):
        assert np.all(np.diff(fpca.eigenvalues) <= 0)

    def test_score_variance_matches_eigenvalues(self, fpca):
        np.testing.assert_allclose(fpca.scores.var(axis=0, ddof=1), fpca.eigenvalues, rtol=1e-6)

    def test_scores_centered(self, fpca):
        np.testing.assert_allclose(fpca.scores.mean(axis=0), 0.0, atol=1e-10)

    def test_explained_variance_sums_to_one(self, fpca):
        assert explained_variance(fpca).sum() == pytest.approx(1.0, abs=1e-8)
        assert cumulative_explained_variance(fpca)[-1] == pytest.approx(1.0, abs=1e-8)

    def test_variance_captured_is_share_of_total(self, fpca):
        vc = variance_captured(fpca)
        assert np.all(vc <= explained_variance(fpca) + 1e-12)
        assert vc.sum() <= 1.0 + 1e-12

    def test_sign_rule(self, fpca):
        for xi in fpca.eigenfunctions:
            assert xi[np.argmax(np.abs(xi))] > 0

    @pytest.mark.parametrize("K", [0, 13])
    def test_rank_bounds(self, smoothed, K):
        with pytest.raises(RankError):
            fit_fpca(smoothed, K)

    def test_project_training_curves_gives_scores(self, fpca, smoothed):
        np.testing.assert_allclose(project(fpca, smoothed), fpca.scores, atol=1e-10)

    def test_project_mean_plus_two_first_eigenfunctions(self, fpca):
        expected = np.zeros(fpca.n_components)
        expected[0] = 2.0
        row = project_curves(fpca, fpca.mean_curve + 2.0 * fpca.eigenfunctions[0])[0]
        np.testing.assert_allclose(row, expected, atol=1e-6)
        np.testing.assert_allclose(project_curves(fpca, fpca.mean_curve)[0], 0.0, atol=1e-8)

    def test_reconstruction_error_never_grows_with_more_components(self, fpca, smoothed):
        X = evaluate(smoothed)
        w = fpca.grid.weights
        for i in range(X.shape[0]):
            errors = [
                np.sqrt(np.sum((X[i] - reconstruct(fpca, fpca.scores[i], p)) ** 2 * w))
                for p in range(1, fpca.n_components + 1)
            ]
            assert np.all(np.diff(errors) <= 1e-12), i

    def test_reconstruct_zero_scores_is_mean(self, fpca):
        np.testing.assert_array_equal(reconstruct(fpca, np.zeros(fpca.n_components), 3), fpca.mean_curve)

    def test_sine_cosine_mixture_recovers_sine_first(self):
        rng = np.random.default_rng(0)
        g = TimeGrid.uniform(101)
        t = g.points
        a = rng.normal(0.0, 2.0, 500)
        b = rng.normal(0.0, 1.0, 500)
        values = np.outer(a, np.sin(2 * np.pi * t)) + np.outer(b, np.cos(2 * np.pi * t))
        model = fit_fpca(smooth(FunctionalDataset(g, values), build_basis(g, 20, 4)), 2)
        rho = np.corrcoef(model.eigenfunctions[0], np.sin(2 * np.pi * t))[0, 1]
        assert abs(rho) > 0.99
        # var(a) * ||sin||^2 on [0, 1]
        assert model.eigenvalues[0] == pytest.approx(4.0 * 0.5, rel=0.15)
        assert model.eigenvalues[1] == pytest.approx(1.0 * 0.5, rel=0.15)

    def test_identical_curves_have_zero_eigenvalues(self, grid, basis, caplog):
        curve = np.sin(2 * np.pi * grid.points) + grid.points
        sm = smooth(FunctionalDataset(grid, np.tile(curve, (6, 1))), basis)
        with caplog.at_level(logging.WARNING, logger="fda"):
            model = fit_fpca(sm, 3)
        assert np.all(np.abs(model.eigenvalues) < 1e-10)
        np.testing.assert_allclose(model.mean_curve, evaluate(sm)[0], atol=1e-12)
        assert "numerically zero" in caplog.text

    def test_residual_norm_matches_reconstruction(self, fpca, smoothed):
        X = evaluate(smoothed)
        for i in (0, 7, 31):
            full = reconstruct(fpca, fpca.scores[i], fpca.n_components)
            resid = np.sqrt(np.sum((X[i] - full) ** 2 * fpca.grid.weights))
            assert resid == pytest.approx(fpca.reconstruction_residual_norm[i], abs=1e-10)

    def test_reconstruct_truncation_bounds(self, fpca):
        with pytest.raises(IndexError):
            reconstruct(fpca, fpca.scores[0], 0)
        with pytest.raises(IndexError):
            reconstruct(fpca, fpca.scores[0], fpca.n_components + 1)

    def test_reconstruct_single(self, fpca):
        np.testing.assert_allclose(reconstruct_single(fpca, 1, 0.0), fpca.mean_curve)
        np.testing.assert_allclose(
            reconstruct_single(fpca, 1, 2.0, include_mean=False), 2.0 * fpca.eigenfunctions[1]
        )
        with pytest.raises(IndexError):
            reconstruct_single(fpca, fpca.n_components, 1.0)

    def test_degenerate_explained_variance(self, fpca):
        zero = FpcaModel(
            grid=fpca.grid,
            mean_curve=fpca.mean_curve,
            eigenfunctions=fpca.eigenfunctions,
            eigenvalues=np.zeros(fpca.n_components),
            scores=np.zeros_like(fpca.scores),
            total_variance=0.0,
            reconstruction_residual_norm=np.zeros(fpca.scores.shape[0]),
        )
        with pytest.raises(DegenerateModel):
            explained_variance(zero)


class TestL2Distance:
    def test_identity_and_constant_offset(self, grid):
        x = np.sin(grid.points)
        assert l2_distance(x, x, grid) == 0.0
        assert l2_distance(x, x + 0.3, grid) == pytest.approx(0.3)

    def test_sine_against_zero_closed_form(self):
        g = TimeGrid.uniform(1000, 0.0, 2 * np.pi)
        x = np.sin(g.points)
        d = l2_distance(x, np.zeros_like(x), g)
        assert d == pytest.approx(np.sqrt(0.5), abs=1e-3)
        assert l2_distance(np.zeros_like(x), x, g) == d

    def test_weight_must_be_positive(self, grid):
        x = np.zeros(len(grid))
        w = np.ones(len(grid))
        w[3] = 0.0
        with pytest.raises(NonpositiveWeight):
            l2_distance(x, x, grid, w)


@needs_ecg200
class TestEcg200Fpca:
    def test_contract_and_variance_band(self):
        from frfx.ucr import load_ucr

        data = load_ucr(ecg200_path("TRAIN"))
        sm = smooth(data, build_basis(data.grid, 20, 4))
        model = fit_fpca(sm, 15)
        xi = model.eigenfunctions
        assert np.abs((xi * model.grid.weights) @ xi.T - np.eye(15)).max() < 1e-8
        ev = explained_variance(model)
        assert 0.40 <= ev[0] <= 0.50
        assert ev[14] < 0.01
