import numpy as np
import pytest
from numpy.testing import assert_allclose

from oliva.app.estimation.design import (DesignMatrix, Projector, assemble,
                                         build_bspline, build_indicator,
                                         sieve_design)
from oliva.app.estimation.first_stage import (InstrumentFit, TuningTriple,
                                              estimate_instrument,
                                              evaluate_instrument,
                                              first_stage_diagnostics,
                                              ridge_penalty, tikhonov_solve,
                                              two_stage_form)
from oliva.app.models.dataset import Dataset
from oliva.app.simulation.simulate import DgpConfig, gen_dgp
from oliva.app.utils.errors import (DegenerateInputError, InvalidTuningError,
                                    SchemaMismatchError, SingularSystemError)


def dense_projector(a):
    return a @ np.linalg.pinv(a.T @ a) @ a.T


def designs(data, j=3, k=4):
    p_design = sieve_design(data.controls, data.endogenous, k)
    q_design = sieve_design(data.controls, data.instruments, j)
    return p_design, q_design


class TestTuningTriple:

    def test_k_is_floor_of_c_times_j(self):
        assert TuningTriple(5, 2.2).k == 11
        assert TuningTriple(4, 1.5).k == 6
        assert TuningTriple(3, 3.0).k == 9

    @pytest.mark.parametrize('j, c, lam', [(0, 2.0, 1e-3), (4, 0.5, 1e-3),
                                           (4, 3.5, 1e-3), (4, 2.0, 0.0),
                                           (4, 2.0, -1.0), (4, 2.0, np.inf)])
    def test_invalid_values_raise(self, j, c, lam):
        with pytest.raises(InvalidTuningError):
            TuningTriple(j, c, lam)


class TestEstimateInstrument:

    def test_matches_dense_formula(self, toy_data):
        p_design, q_design = designs(toy_data)
        lam = 1e-3
        fit = estimate_instrument(toy_data, p_design, q_design, lam)

        q = q_design.values
        pi_p = dense_projector(p_design.values)
        a = q.T @ (pi_p + lam * np.eye(toy_data.n)) @ q
        expected = q @ np.linalg.solve(a, q.T @ pi_p @ toy_data.endogenous)
        assert_allclose(fit.h2, expected, atol=1e-8)

    def test_saturated_limit_reproduces_x(self, rng):
        n = 8
        x2 = rng.permutation(np.arange(n, dtype=float))
        data = Dataset.simple(rng.normal(size=n), x2, rng.normal(size=n))
        saturated = assemble(data.controls, build_indicator(x2))
        assert saturated.width == n
        fit = estimate_instrument(data, saturated, saturated, 1e-10)
        assert_allclose(fit.h2[:, 0], x2, atol=1e-6)

    def test_large_lambda_shrinks_to_zero(self, toy_data):
        fit = estimate_instrument(toy_data, *designs(toy_data), 1e8)
        assert np.max(np.abs(fit.h2)) < 1e-6

    def test_shrinkage_is_monotone(self, dgp1_data):
        p_design, q_design = designs(dgp1_data, j=5, k=10)
        norms = [np.linalg.norm(estimate_instrument(dgp1_data, p_design, q_design,
                                                    lam).h2)
                 for lam in (1e-6, 1e-4, 1e-2, 1.0, 100.0)]
        assert all(later <= earlier + 1e-12 for earlier, later in zip(norms, norms[1:]))

    def test_controls_pass_through_bit_exactly(self, dgp1_data):
        fit = estimate_instrument(dgp1_data, *designs(dgp1_data), 1e-3)
        assert np.array_equal(fit.fitted[:, :dgp1_data.p1], dgp1_data.controls)
        assert np.all(np.isfinite(fit.fitted))

    def test_invariant_to_column_order_of_q(self, dgp1_data):
        p_design, q_design = designs(dgp1_data, j=5, k=10)
        order = np.random.default_rng(3).permutation(q_design.width)
        shuffled = DesignMatrix(q_design.values[:, order])
        first = estimate_instrument(dgp1_data, p_design, q_design, 1e-3)
        second = estimate_instrument(dgp1_data, p_design, shuffled, 1e-3)
        assert_allclose(first.h2, second.h2, atol=1e-9)

    def test_weights_scale_the_target(self, dgp1_data, rng):
        weights = rng.uniform(0.5, 2.0, dgp1_data.n)
        p_design, q_design = designs(dgp1_data)
        weighted = estimate_instrument(dgp1_data, p_design, q_design, 1e-3, weights)
        scaled = Dataset(dgp1_data.y, dgp1_data.controls,
                         dgp1_data.endogenous * weights[:, None],
                         dgp1_data.instruments)
        plain = estimate_instrument(scaled, p_design, q_design, 1e-3)
        assert_allclose(weighted.h2, plain.h2, atol=1e-12)
        assert_allclose(weighted.target_weights, weights)

    def test_nonpositive_weights_raise(self, dgp1_data):
        weights = np.ones(dgp1_data.n)
        weights[0] = 0.0
        with pytest.raises(DegenerateInputError):
            estimate_instrument(dgp1_data, *designs(dgp1_data), 1e-3, weights)

    def test_singular_system_raises(self, rng):
        column = rng.normal(size=(30, 1))
        basis = np.hstack([column, column])
        with pytest.raises(SingularSystemError):
            tikhonov_solve(basis, Projector.of(column), rng.normal(size=(30, 1)), 1e-6)


class TestTwoStageForm:

    def test_route_equivalence(self, dgp1_data):
        p_design, q_design = designs(dgp1_data, j=5, k=10)
        for lam in (1e-5, 1e-3, 1e-1):
            closed = estimate_instrument(dgp1_data, p_design, q_design, lam)
            staged = two_stage_form(dgp1_data, p_design, q_design, lam)
            assert_allclose(staged.fitted, closed.fitted, atol=1e-8)

    def test_route_equivalence_without_standardizer(self, toy_data):
        p_design = sieve_design(toy_data.controls, toy_data.endogenous, 4)
        q_design = assemble(toy_data.controls,
                            build_bspline(toy_data.instruments[:, 0], 3, 0))
        assert q_design.standardizer is None
        closed = estimate_instrument(toy_data, p_design, q_design, 1e-2)
        staged = two_stage_form(toy_data, p_design, q_design, 1e-2)
        assert_allclose(staged.fitted, closed.fitted, atol=1e-8)
        assert_allclose(staged.coef, closed.coef, atol=1e-6)

    def test_zero_lambda_is_least_squares(self, dgp1_data):
        p_design, q_design = designs(dgp1_data, j=3, k=8)
        staged = two_stage_form(dgp1_data, p_design, q_design, 0.0)
        q_hat = Projector.of(p_design).basis @ (Projector.of(p_design).basis.T
                                                 @ q_design.values)
        coef, *_ = np.linalg.lstsq(q_hat, dgp1_data.endogenous, rcond=None)
        assert_allclose(staged.h2, q_design.values @ coef, atol=1e-8)

    def test_standardized_penalty_is_lambda_identity(self, dgp1_data):
        _, q_design = designs(dgp1_data, j=5)
        penalty = ridge_penalty(q_design, 0.3)
        cw = q_design.control_width
        assert_allclose(penalty[cw:, cw:], 0.3 * np.eye(q_design.width - cw),
                        atol=1e-8)


class TestEvaluateInstrument:

    def test_training_rows_reproduce_fit(self, dgp1_data):
        fit = estimate_instrument(dgp1_data, *designs(dgp1_data, j=5, k=10), 1e-3)
        assert_allclose(evaluate_instrument(fit, dgp1_data.z), fit.fitted, atol=1e-10)

    def test_single_point_matches_manual_product(self, dgp1_data):
        fit = estimate_instrument(dgp1_data, *designs(dgp1_data), 1e-3)
        point = dgp1_data.z[7]
        manual = fit.q_design.evaluate(point[None, :]) @ fit.coef
        result = evaluate_instrument(fit, point)
        assert result.shape == (1, dgp1_data.p)
        assert_allclose(result[0, dgp1_data.p1:], manual[0], atol=1e-12)
        assert result[0, 0] == 1.0

    def test_wrong_width_raises(self, dgp1_data):
        fit = estimate_instrument(dgp1_data, *designs(dgp1_data), 1e-3)
        with pytest.raises(SchemaMismatchError):
            evaluate_instrument(fit, np.ones((2, 3)))


class TestDiagnostics:

    def _passthrough(self, data):
        p_design, q_design = designs(data)
        return InstrumentFit(coef=np.zeros((q_design.width, data.p2)),
                             fitted=data.x, lam=1.0, p_design=p_design,
                             q_design=q_design, control_width=data.p1,
                             condition=1.0)

    def test_passthrough_has_no_discrepancy(self, dgp1_data):
        report = first_stage_diagnostics(self._passthrough(dgp1_data), dgp1_data)
        assert report.discrepancy == 0.0
        assert report.smallest_singular_value > 0.0

    def test_rank_deficient_x_is_reported(self, rng):
        n = 60
        w = rng.normal(size=n)
        data = Dataset(rng.normal(size=n), np.column_stack([np.ones(n), w]), w,
                       rng.normal(size=n))
        report = first_stage_diagnostics(self._passthrough(data), data)
        assert report.smallest_singular_value < 1e-8
        assert report.to_dict()['condition'] > 1e6

    def test_strong_first_stage(self):
        strong = 0
        for seed in range(20):
            data = gen_dgp(DgpConfig(1, 0.3, 0.8, 1000, seed=seed))
            fit = estimate_instrument(data, *designs(data, j=5, k=11), 1e-4)
            strong += first_stage_diagnostics(fit, data).smallest_singular_value > 0.1
        assert strong >= 19
