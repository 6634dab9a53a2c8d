import math

import numpy as np
import pytest
from scipy.special import logsumexp
from scipy.stats import lognorm

from agemix.design import ModelSpec, ModelTag
from agemix.distributions import Family
from agemix.evaluation import (
    ComparisonReport,
    ElpdResult,
    LogLikMatrix,
    _psis_column,
    _psis_matrix,
    elpd_diff,
    elpd_loo,
    pointwise_loglik,
    qq_rmse,
)
from agemix.inference import FitProblem, fit_map, laplace_draws
from agemix.transforms import Transform, TransformKind


@pytest.fixture(scope="module")
def log_age_fit(small_records):
    problem = FitProblem(
        Family.NORMAL,
        Transform(TransformKind.LOG_AGE),
        ModelSpec(ModelTag.CONVENTIONAL),
        small_records,
    )
    fit = fit_map(problem)
    draws = laplace_draws(fit, 200, seed=1)
    return problem, fit, draws


class TestPointwiseLoglik:
    def test_linear_age_equals_raw_log_pdf(self, small_records):
        problem = FitProblem(
            Family.NORMAL,
            Transform(TransformKind.LINEAR_AGE),
            ModelSpec(ModelTag.INTERCEPT_ONLY),
            small_records[:40],
        )
        fit = fit_map(problem)
        draws = laplace_draws(fit, 120, seed=0)
        ll = pointwise_loglik(fit, draws, small_records[:40])
        from agemix.distributions import log_pdf_slots

        mu = draws.draws[:, 0:1]
        sigma = np.exp(draws.draws[:, 1:2])
        y = np.array([r.partner_age for r in small_records[:40]])
        direct = log_pdf_slots(Family.NORMAL, y[None, :], mu, sigma)
        np.testing.assert_allclose(ll.values, direct, rtol=0, atol=1e-12)

    def test_shape(self, log_age_fit):
        problem, fit, draws = log_age_fit
        import dataclasses

        small = dataclasses.replace(draws, draws=draws.draws[:3])
        ll = pointwise_loglik(fit, small, problem.records[:4])
        assert ll.values.shape == (3, 4)

    def test_lognormal_change_of_variables_identity(self, log_age_fit):
        # a lognormal evaluated at p equals the normal at log p plus the
        # Jacobian term, entry by entry
        problem, fit, draws = log_age_fit
        records = problem.records[:100]
        ll = pointwise_loglik(fit, draws, records)

        ages = np.array([r.respondent_age for r in records])
        sexes = np.array([r.respondent_sex for r in records])
        p = np.array([r.partner_age for r in records])
        from agemix.design import design_matrices

        mats = design_matrices(fit.spec, ages, sexes, slots=fit.slots, center=True)
        a, b = fit.offsets["mu"]
        mu = draws.draws[:, a:b] @ mats["mu"].T
        a, b = fit.offsets["sigma"]
        sigma = np.exp(draws.draws[:, a:b] @ mats["sigma"].T)
        direct = lognorm.logpdf(p[None, :], s=sigma, scale=np.exp(mu))
        np.testing.assert_allclose(ll.values, direct, rtol=0, atol=1e-12)

    def test_non_finite_entry_names_record_and_draw(self, small_records):
        problem = FitProblem(
            Family.NORMAL,
            Transform(TransformKind.LINEAR_AGE),
            ModelSpec(ModelTag.INTERCEPT_ONLY),
            small_records[:5],
        )
        fit = fit_map(problem)
        draws = laplace_draws(fit, 120, seed=0)
        import dataclasses

        corrupted = draws.draws.copy()
        corrupted[7, 1] = -800.0  # sigma underflows for draw 7
        bad = dataclasses.replace(draws, draws=corrupted)
        with pytest.raises(ValueError, match="draw 7"):
            pointwise_loglik(fit, bad, small_records[:5])


class TestPsis:
    def test_constant_density_model(self):
        ll = np.full((300, 6), math.log(0.25))
        res = elpd_loo(LogLikMatrix(ll))
        assert res.elpd == pytest.approx(6 * math.log(0.25), rel=1e-12)
        assert res.se == 0.0
        assert res.method == "psis"

    def test_too_few_draws_rejected(self):
        with pytest.raises(ValueError):
            elpd_loo(LogLikMatrix(np.zeros((99, 5))))

    def test_matrix_path_matches_column_reference(self):
        rng = np.random.default_rng(5)
        ll = rng.normal(-2, 1, (400, 50)) + rng.standard_t(4, (400, 50))
        lw_m, khat_m = _psis_matrix(ll)
        for i in range(50):
            lw_s, khat_s = _psis_column(ll[:, i])
            np.testing.assert_allclose(lw_m[:, i], lw_s, atol=1e-10)
            if math.isfinite(khat_s):
                assert khat_m[i] == pytest.approx(khat_s, abs=1e-10)

    def test_heavy_tail_flagged(self):
        rng = np.random.default_rng(2)
        ll = rng.normal(-2, 0.2, (400, 8))
        # importance weights with a Pareto(1) tail: true GPD shape k = 1
        ll[:, 3] = -np.log1p(rng.pareto(1.0, 400))
        with pytest.warns(RuntimeWarning, match="k-hat"):
            res = elpd_loo(LogLikMatrix(ll))
        assert 3 in res.flagged
        assert res.khat[3] > 0.7

    def test_underflowing_tail_flagged_as_unassessable(self):
        rng = np.random.default_rng(2)
        ll = rng.normal(-2, 0.2, (400, 8))
        ll[:, 3] = -np.exp(rng.normal(0, 3.0, 400))  # weights underflow to zeros
        with pytest.warns(RuntimeWarning, match="k-hat"):
            res = elpd_loo(LogLikMatrix(ll))
        assert res.khat[3] == math.inf
        assert 3 in res.flagged

    def test_never_exceeds_in_sample_lpd(self, small_records, log_age_fit):
        problem, fit, draws = log_age_fit
        ll = pointwise_loglik(fit, draws, problem.records)
        res = elpd_loo(ll)
        in_sample = logsumexp(ll.values, axis=0) - math.log(ll.n_draws)
        assert np.all(res.pointwise <= in_sample + 1e-12)

    def test_matches_exact_conjugate_loo(self):
        # normal-mean model with fixed sigma and N(0, 25) prior: leave-one-out
        # refits have a closed form, giving a fully independent oracle
        rng = np.random.default_rng(1)
        sigma, n = 1.5, 50
        y = rng.normal(2.0, sigma, n)
        prior_var = 25.0

        def posterior(values):
            precision = values.size / sigma**2 + 1 / prior_var
            return (values.sum() / sigma**2) / precision, 1 / precision

        exact = np.empty(n)
        for i in range(n):
            m, v = posterior(np.delete(y, i))
            exact[i] = -0.5 * math.log(2 * math.pi * (sigma**2 + v)) - (y[i] - m) ** 2 / (
                2 * (sigma**2 + v)
            )
        m, v = posterior(y)
        mus = rng.normal(m, math.sqrt(v), 4000)
        ll = -0.5 * math.log(2 * math.pi * sigma**2) - (y[None, :] - mus[:, None]) ** 2 / (
            2 * sigma**2
        )
        res = elpd_loo(LogLikMatrix(ll))
        combined = math.sqrt(res.se**2 + n * np.var(exact, ddof=1))
        assert abs(res.elpd - exact.sum()) < 2 * combined
        assert abs(res.elpd - exact.sum()) < 0.5  # tight agreement in absolute terms


class TestKfold:
    def test_kfold_close_to_psis(self, small_records):
        records = small_records[:300]
        problem = FitProblem(
            Family.NORMAL,
            Transform(TransformKind.LOG_RATIO),
            ModelSpec(ModelTag.CONVENTIONAL),
            records,
        )
        fit = fit_map(problem)
        draws = laplace_draws(fit, 800, seed=3)
        ll = pointwise_loglik(fit, draws, records)
        psis = elpd_loo(ll)
        kfold = elpd_loo(ll, method="exact_kfold", problem=problem, n_draws=800, seed=4)
        assert kfold.method == "exact_kfold"
        combined = math.sqrt(psis.se**2 + kfold.se**2)
        assert abs(psis.elpd - kfold.elpd) < 2 * combined

    def test_kfold_needs_problem(self):
        with pytest.raises(ValueError):
            elpd_loo(LogLikMatrix(np.zeros((200, 4))), method="exact_kfold")

    def test_unknown_method(self):
        with pytest.raises(ValueError):
            elpd_loo(LogLikMatrix(np.zeros((200, 4))), method="waic")


class TestElpdDiff:
    def test_identical_models(self):
        a = np.array([1.0, -2.0, 0.5])
        assert elpd_diff(a, a) == (0.0, 0.0)

    def test_constant_offset_has_zero_se(self):
        a = np.array([1.0, 2.0, 3.0])
        d, se = elpd_diff(a + 0.7, a)
        assert d == pytest.approx(3 * 0.7)
        assert se == pytest.approx(0.0, abs=1e-12)

    def test_hand_case(self):
        d, se = elpd_diff(np.array([1.0, 2.0, 3.0]), np.zeros(3))
        assert d == pytest.approx(6.0)
        assert se == pytest.approx(math.sqrt(3.0), rel=1e-12)

    def test_antisymmetry(self):
        rng = np.random.default_rng(0)
        a, b = rng.normal(size=20), rng.normal(size=20)
        dab, seab = elpd_diff(a, b)
        dba, seba = elpd_diff(b, a)
        assert dab == -dba and seab == seba

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            elpd_diff(np.zeros(3), np.zeros(4))


class TestComparisonReport:
    def make_result(self, pointwise):
        pointwise = np.asarray(pointwise, dtype=float)
        return ElpdResult(
            elpd=float(pointwise.sum()),
            se=float(np.sqrt(pointwise.size * np.var(pointwise, ddof=1))),
            pointwise=pointwise,
            method="psis",
        )

    def test_ranking_and_diffs(self):
        good = self.make_result([-1.0, -1.1, -0.9])
        worse = self.make_result([-2.0, -1.6, -1.5])
        report = ComparisonReport.from_models(
            [("worse", worse, 0.9, True), ("good", good, 0.4, True)]
        )
        assert [r.name for r in report.rows] == ["good", "worse"]
        assert report.rows[0].rank == 1
        assert report.rows[0].elpd_diff == 0.0 and report.rows[0].diff_se == 0.0
        diff, se = elpd_diff(worse.pointwise, good.pointwise)
        assert report.rows[1].elpd_diff == pytest.approx(diff)
        assert report.rows[1].diff_se == pytest.approx(se)
        dicts = report.to_dicts()
        assert dicts[0]["model"] == "good" and dicts[1]["rank"] == 2


class TestQqRmse:
    def test_identical_samples_zero(self):
        x = np.random.default_rng(0).normal(30, 5, 500)
        assert qq_rmse({"g": x}, {"g": x.copy()}) == 0.0

    def test_constant_shift(self):
        x = np.random.default_rng(1).normal(30, 5, 500)
        assert qq_rmse({"g": x}, {"g": x + 0.5}) == pytest.approx(0.5, abs=1e-9)

    def test_two_group_hand_case(self):
        # frozen by a direct type-7 quantile computation before the build
        obs = {"a": np.arange(1.0, 11.0), "b": np.arange(1.0, 11.0)}
        pred = {"a": np.arange(2.0, 12.0), "b": np.arange(1.0, 11.0)}
        assert qq_rmse(obs, pred) == pytest.approx(math.sqrt(0.5), rel=1e-12)

    def test_empty_group_listed(self):
        with pytest.raises(ValueError, match="g2"):
            qq_rmse({"g1": [1.0, 2.0], "g2": []}, {"g1": [1.0, 2.0], "g2": [1.0]})

    def test_missing_predictive_group_listed(self):
        with pytest.raises(ValueError, match="g1"):
            qq_rmse({"g1": [1.0, 2.0]}, {})
