import math

import numpy as np
import pytest
from numpy.testing import assert_allclose

from oliva.app.simulation import simulate
from oliva.app.simulation.simulate import (DgpConfig, Estimator,
                                           ReplicationResult, derive_seed,
                                           draw_latent, gen_dgp, hermite,
                                           run_cell, run_replication,
                                           size_corrected_power, summary_table)
from oliva.app.utils.errors import (InsufficientSamplesError, InvalidDgpError,
                                    UnsupportedDegreeError)


class TestHermite:

    @pytest.mark.parametrize('j, x, expected', [(2, 0.0, -1.0), (3, 2.0, 2.0),
                                                (0, 7.5, 1.0), (1, -3.0, -3.0)])
    def test_values(self, j, x, expected):
        assert hermite(j, x) == expected

    def test_vectorized(self):
        assert_allclose(hermite(2, np.array([0.0, 1.0, 2.0])), [-1.0, 0.0, 3.0])

    def test_degree_above_three_raises(self):
        with pytest.raises(UnsupportedDegreeError):
            hermite(4, 1.0)


class TestDgpConfig:

    @pytest.mark.parametrize('kwargs', [{'dgp': 4}, {'gamma': 0.0}, {'gamma': 1.0},
                                        {'rho': 1.0}, {'n': 1}, {'seed': -1}])
    def test_invalid_values_raise(self, kwargs):
        values = {'dgp': 1, 'rho': 0.3, 'gamma': 0.8, 'n': 100, **kwargs}
        with pytest.raises(InvalidDgpError):
            DgpConfig(**values)

    def test_rho_epsilon(self):
        assert DgpConfig(1, 0.36, 0.8, 10).rho_epsilon == pytest.approx(1.0)


class TestGenDgp:

    def test_same_seed_same_data(self):
        cfg = DgpConfig(2, 0.3, 0.8, 200, seed=9)
        first, second = gen_dgp(cfg), gen_dgp(cfg)
        assert np.array_equal(first.y, second.y)
        assert np.array_equal(first.instruments, second.instruments)
        assert not np.array_equal(first.y, gen_dgp(cfg.with_seed(10)).y)

    def test_correlation_of_x_and_d(self):
        latent = draw_latent(DgpConfig(1, 0.3, 0.8, 10000, seed=1))
        assert np.corrcoef(latent['x'], latent['d'])[0, 1] == pytest.approx(0.8, abs=0.05)

    def test_exogenous_case(self):
        n = 5000
        latent = draw_latent(DgpConfig(1, 0.0, 0.8, n, seed=2))
        assert abs(np.corrcoef(latent['eps'], latent['x'])[0, 1]) < 4.0 / math.sqrt(n)

    @pytest.mark.parametrize('dgp', [1, 2, 3])
    def test_error_uncorrelated_with_instrument(self, dgp):
        n = 5000
        latent = draw_latent(DgpConfig(dgp, 0.9, 0.8, n, seed=4))
        assert abs(np.corrcoef(latent['eps'], latent['z'])[0, 1]) < 4.0 / math.sqrt(n)

    def test_cubic_link_is_invertible(self):
        latent = draw_latent(DgpConfig(2, 0.3, 0.8, 500, seed=3))
        assert_allclose(np.cbrt(latent['z']), latent['d'], atol=1e-12)

    def test_logistic_link_lies_in_unit_interval(self):
        latent = draw_latent(DgpConfig(3, 0.3, 0.8, 500, seed=3))
        assert np.all((latent['z'] > 0.0) & (latent['z'] < 1.0))

    def test_dataset_layout(self):
        data = gen_dgp(DgpConfig(3, 0.3, 0.8, 50, seed=3))
        assert (data.n, data.p1, data.p2) == (50, 1, 1)
        assert data.regressor_names == ['const', 'x']
        assert np.all(data.controls == 1.0)


def test_seed_derivation_is_positional():
    assert derive_seed(7, 3, 1) == derive_seed(7, 3, 1)
    assert len({derive_seed(7, r, 1) for r in range(50)}) == 50
    assert derive_seed(7, 3, 1) != derive_seed(7, 3, 2)


class TestRunCell:

    def test_single_replication(self):
        cfg = DgpConfig(1, 0.3, 0.8, 300)
        summary = run_cell(cfg, 1, {'ols', 'iv'}, base_seed=5)
        result = run_replication(cfg.with_seed(derive_seed(5, 0, 1)),
                                 frozenset({Estimator.OLS, Estimator.IV}))
        error = result.slopes['ols'] - 1.0
        assert summary.estimators['ols'].bias == error
        assert summary.estimators['ols'].mse == error ** 2
        assert math.isnan(summary.estimators['ols'].bias_se)

    def test_zero_replications_raise(self):
        with pytest.raises(InsufficientSamplesError):
            run_cell(DgpConfig(1, 0.3, 0.8, 100), 0)

    def test_seed_determinism_and_worker_invariance(self):
        cfg = DgpConfig(1, 0.3, 0.8, 300)
        first = run_cell(cfg, 4, base_seed=11, n_jobs=1)
        second = run_cell(cfg, 4, base_seed=11, n_jobs=3)
        assert first.to_row() == second.to_row()

    def test_ols_bias_tracks_rho(self):
        summary = run_cell(DgpConfig(1, 0.3, 0.8, 1000), 60, {'ols', 'iv'}, base_seed=2)
        assert abs(summary.estimators['ols'].bias - 0.3) <= 0.03
        assert abs(summary.estimators['iv'].bias) <= 0.05
        assert 'tsiv' not in summary.estimators
        assert math.isnan(summary.coverage)

    def test_full_replication_reports_every_column(self):
        summary = run_cell(DgpConfig(2, 0.3, 0.8, 400), 2, base_seed=1)
        row = summary.to_row()
        assert summary.failures == 0
        assert 0.0 <= row['COV_TSIV'] <= 1.0
        assert 0.0 <= row['REJ_S'] <= 1.0 and 0.0 <= row['REJ_R'] <= 1.0
        assert row['MSE_TSIV'] >= row['BIAS_TSIV'] ** 2 - 1e-12

    def test_failures_are_counted(self, monkeypatch):
        def flaky(cfg, *args):
            if cfg.seed % 2:
                return None
            return ReplicationResult({'ols': 1.5})

        monkeypatch.setattr(simulate, 'run_replication', flaky)
        summary = run_cell(DgpConfig(1, 0.3, 0.8, 100), 40, base_seed=3, n_jobs=1)
        assert 0 < summary.failures < 40
        assert not summary.valid
        assert summary.estimators['ols'].bias == pytest.approx(0.5)

    def test_replication_failure_returns_none(self, monkeypatch):
        def broken(*args, **kwargs):
            raise np.linalg.LinAlgError('singular')

        monkeypatch.setattr(simulate, 'linear_iv', broken)
        assert run_replication(DgpConfig(1, 0.3, 0.8, 100), frozenset({Estimator.OLS})) \
            is None


class TestSizeCorrectedPower:

    def test_identical_samples_give_the_level(self, rng):
        stats = rng.normal(size=2000)
        assert size_corrected_power(stats, stats, 0.05) == pytest.approx(0.05, abs=0.005)

    def test_shifted_alternative_has_full_power(self, rng):
        stats = rng.normal(size=500)
        assert size_corrected_power(stats, stats + 10.0) == 1.0

    def test_empty_sample_raises(self):
        with pytest.raises(InsufficientSamplesError):
            size_corrected_power([], [1.0, 2.0])


def test_summary_table_pairs_null_and_alternative_cells():
    null = run_cell(DgpConfig(1, 0.0, 0.8, 300), 3, {'hausman'}, base_seed=1)
    alt = run_cell(DgpConfig(1, 0.9, 0.8, 300), 3, {'hausman'}, base_seed=1)
    table = summary_table([null, alt])
    assert list(table['rho']) == [0.0, 0.9]
    assert math.isnan(table.loc[0, 'POW_R'])
    assert 0.0 <= table.loc[1, 'POW_R'] <= 1.0
    assert {'BIAS_OLS', 'MSE_TSIV', 'COV_TSIV', 'REJ_S', 'POW_S'} <= set(table.columns)


@pytest.mark.monte_carlo
class TestReferenceCells:

    def test_dgp1_moderate_endogeneity(self):
        summary = run_cell(DgpConfig(1, 0.3, 0.8, 1000), 1000, {'ols', 'tsiv'}, base_seed=7)
        assert summary.estimators['tsiv'].bias == pytest.approx(-0.0012, abs=0.005)
        assert summary.estimators['tsiv'].mse == pytest.approx(0.0019, rel=0.25)
        assert summary.estimators['ols'].bias == pytest.approx(0.2987, abs=0.02)

    def test_dgp3_strong_endogeneity(self):
        summary = run_cell(DgpConfig(3, 0.9, 0.8, 1000), 1000, {'ols', 'iv', 'tsiv'},
                           base_seed=7)
        assert summary.estimators['tsiv'].bias == pytest.approx(-0.0401, abs=0.02)
        assert summary.estimators['iv'].bias == pytest.approx(-0.2466, abs=0.05)
        assert summary.estimators['ols'].bias == pytest.approx(0.8863, abs=0.03)

    def test_tsiv_coverage(self):
        summary = run_cell(DgpConfig(1, 0.9, 0.8, 1000), 2000, {'tsiv'}, base_seed=7)
        assert summary.coverage == pytest.approx(0.951, abs=0.02)

    @pytest.mark.parametrize('dgp', [1, 2, 3])
    def test_robust_test_size(self, dgp):
        summary = run_cell(DgpConfig(dgp, 0.0, 0.8, 1000), 1000, {'hausman'}, base_seed=7)
        assert summary.rejection['robust'] <= 0.07
        if dgp == 3:
            assert summary.rejection['standard'] > 0.5

    def test_robust_power(self):
        null = run_cell(DgpConfig(1, 0.0, 0.8, 1000), 1000, {'hausman'}, base_seed=7)
        alt = run_cell(DgpConfig(1, 0.9, 0.8, 1000), 1000, {'hausman'}, base_seed=8)
        power = size_corrected_power(null.hausman_stats['robust'],
                                     alt.hausman_stats['robust'])
        assert power == pytest.approx(1.0, abs=0.01)

    def test_stronger_instrument_lowers_iv_mse(self):
        weak = run_cell(DgpConfig(1, 0.3, 0.4, 1000), 1000, {'iv'}, base_seed=7)
        strong = run_cell(DgpConfig(1, 0.3, 0.8, 1000), 1000, {'iv'}, base_seed=7)
        assert strong.estimators['iv'].mse < weak.estimators['iv'].mse
