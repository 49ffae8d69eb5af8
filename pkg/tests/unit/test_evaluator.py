"""Tests for DIC, adjusted odds-ratio scoring and ROC/AUC."""

import math

import numpy as np
import pytest

from arterial_risk.config import SamplerConfig
from arterial_risk.models.model_spec import Family, ModelSpec, ParameterState
from arterial_risk.models.posterior import ChainSet, PosteriorMeans
from arterial_risk.services.evaluator import (
    adjust_scores,
    auc,
    auc_table,
    conditional_log_odds_ratios,
    deviance,
    dic,
    dic_from_deviance,
    evaluate,
    roc_points,
    roc_trapezoid_area,
    score_events,
)
from arterial_risk.services.likelihoods import Design, build_design
from arterial_risk.services.export_service import ExportService
from arterial_risk.services.posterior_analyzer import fit_model
from arterial_risk.utils.file_utils import FileProcessor
from arterial_risk.utils.error_handling import DegenerateScoreError, SingleClassError


def _design(x):
    x = np.asarray(x, dtype=float)
    names = [f"c{k}" for k in range(x.shape[-1])]
    return Design(family=Family.CONDITIONAL_LOGISTIC, names=names, x=x)


class TestAuc:
    """Tests for AUC and ROC points."""

    def test_five_of_six_pairs(self):
        """Test an AUC of 5/6 from pairwise concordance."""
        result = auc(np.array([0.9, 0.8, 0.7, 0.6, 0.5]), np.array([1, 1, 0, 1, 0]))
        assert result.auc == pytest.approx(5 / 6)

    def test_perfect_separation(self):
        """Test that every crash outscoring every non-crash gives 1."""
        assert auc(np.array([0.9, 0.8, 0.2, 0.1]), np.array([1, 1, 0, 0])).auc == 1.0

    def test_reversed_separation(self):
        """Test that every crash outscored gives 0."""
        assert auc(np.array([0.1, 0.2, 0.8, 0.9]), np.array([1, 1, 0, 0])).auc == 0.0

    def test_ties_count_half(self):
        """Test that equal scores count one half."""
        assert auc(np.full(6, 0.4), np.array([1, 0, 0, 1, 0, 0])).auc == 0.5

    def test_random_scores(self):
        """Test that uninformative scores give about 0.5."""
        rng = np.random.default_rng(0)
        labels = rng.integers(0, 2, size=20000)
        assert auc(rng.random(20000), labels).auc == pytest.approx(0.5, abs=0.02)

    def test_single_class(self):
        """Test that ROC analysis needs both classes."""
        with pytest.raises(SingleClassError):
            auc(np.array([0.1, 0.2]), np.array([1, 1]))
        with pytest.raises(SingleClassError):
            auc(np.array([0.1, 0.2]), np.array([0, 0]))

    def test_trapezoid_matches_concordance(self):
        """Test that the ROC area equals the concordance AUC, ties included."""
        rng = np.random.default_rng(1)
        scores = np.round(rng.random(300), 1)
        labels = rng.integers(0, 2, size=300)
        result = auc(scores, labels)
        assert roc_trapezoid_area(result.roc) == pytest.approx(result.auc)

    def test_roc_monotone(self):
        """Test that the curve runs from (0, 0) to (1, 1) without stepping back."""
        rng = np.random.default_rng(2)
        points = roc_points(rng.random(50), rng.integers(0, 2, size=50).astype(bool))
        assert (points[0].fpr, points[0].tpr) == (0.0, 0.0)
        assert points[0].threshold == math.inf
        assert (points[-1].fpr, points[-1].tpr) == (1.0, 1.0)
        fpr = [p.fpr for p in points]
        tpr = [p.tpr for p in points]
        assert fpr == sorted(fpr)
        assert tpr == sorted(tpr)

    def test_invariant_to_monotone_transform(self):
        """Test that rescaling scores leaves the AUC unchanged."""
        rng = np.random.default_rng(3)
        scores = rng.random(40)
        labels = rng.integers(0, 2, size=40)
        assert auc(scores * 7.0 + 3.0, labels).auc == pytest.approx(auc(scores, labels).auc)

    def test_pairwise_oracle_with_ties(self):
        """Test exact agreement with an all-pairs count on 100 random sets with ties."""
        rng = np.random.default_rng(13)
        for _ in range(100):
            n = int(rng.integers(2, 60))
            scores = np.round(rng.random(n), 1)
            labels = rng.integers(0, 2, size=n)
            labels[:2] = [1, 0]
            positives, negatives = scores[labels == 1], scores[labels == 0]
            doubled = sum(2 * int(p > q) + int(p == q) for p in positives for q in negatives)
            assert auc(scores, labels).auc == doubled / (2 * positives.size * negatives.size)

    def test_adjustment_keeps_auc(self):
        """Test that dividing odds ratios by their maximum leaves the AUC bit-identical."""
        rng = np.random.default_rng(14)
        for _ in range(20):
            raw = np.exp(np.round(rng.normal(size=40), 1))
            labels = rng.integers(0, 2, size=40)
            labels[:2] = [1, 0]
            assert auc(adjust_scores(raw), labels).auc == auc(raw, labels).auc


class TestDic:
    """Tests for deviance and DIC."""

    def test_deviance_at_zero(self):
        """Test -2 log(1/5) = 3.2189 for one stratum at beta = 0."""
        spec = ModelSpec(covariates=['avg_speed'])
        x = np.random.default_rng(4).normal(size=(1, 5, 1))
        value = deviance(spec, ParameterState(beta=np.zeros(1)), _design(x))
        assert value == pytest.approx(2 * math.log(5))
        assert value == pytest.approx(3.2189, abs=1e-4)

    def test_constant_draws_have_no_complexity(self):
        """Test pD = 0 when every draw has the plug-in deviance."""
        result = dic_from_deviance(np.full((2, 50), 12.5), 12.5)
        assert result.pd == 0.0
        assert result.dic == 12.5

    def test_identity(self):
        """Test DIC = Dbar + pD = 2 Dbar - D(theta bar)."""
        draws = np.random.default_rng(5).normal(100.0, 2.0, size=(3, 200))
        result = dic_from_deviance(draws, 97.0)
        assert result.dic == pytest.approx(result.dbar + result.pd)
        assert result.dic == pytest.approx(2 * draws.mean() - 97.0)

    def test_conjugate_normal_complexity(self):
        """Test that three Normal means with known variance give pD near 3."""
        rng = np.random.default_rng(15)
        groups = [rng.normal(mu, 1.0, size=25) for mu in (0.0, 2.0, -1.0)]
        n_draws = 200000
        # exact posterior under a flat prior: mu_g ~ Normal(ybar_g, 1 / n_g)
        draws = np.stack([rng.normal(g.mean(), 1.0 / np.sqrt(g.size), size=n_draws) for g in groups])

        def normal_deviance(mu):
            return sum(np.sum((g[:, None] - m) ** 2, axis=0) for g, m in zip(groups, mu))

        deviances = np.concatenate([normal_deviance(draws[:, i:i + 10000]) for i in range(0, n_draws, 10000)])
        result = dic_from_deviance(deviances, float(normal_deviance(draws.mean(axis=1)[:, None])[0]))
        assert result.pd == pytest.approx(3.0, abs=0.3)
        assert abs(result.dic - (result.dbar + result.pd)) <= 1e-9

    def test_chains_reloaded_from_disk(self, dataset_factory, tmp_path):
        """Test that DIC from chains.csv and phi_means.csv equals the in-memory DIC."""
        x = np.random.default_rng(6).normal(size=(12, 3, 1))
        x[:, 0, 0] += 1.0
        dataset = dataset_factory(x, ['avg_speed'])
        spec = ModelSpec(family=Family.RP_CONDITIONAL_LOGISTIC, covariates=['avg_speed'],
                         random_set=['avg_speed'])
        config = SamplerConfig(n_chains=2, n_iter=200, burn_in=100, adapt_window=25)
        chains, fit = fit_model(spec, dataset, config, seed=4)
        design = build_design(spec, dataset)
        expected = dic(chains, spec, design)

        ExportService(tmp_path).export_chains(chains)
        loaded = FileProcessor.load_chains(tmp_path / "chains.csv", spec)
        result = dic(loaded, spec, design)
        assert result.dbar == pytest.approx(expected.dbar, rel=1e-9)
        assert result.pd == pytest.approx(expected.pd, rel=1e-9, abs=1e-9)
        assert result.dic == pytest.approx(evaluate(fit, dataset, chains=chains).dic, rel=1e-9)

    def test_deviations_matter(self, dataset_factory, tmp_path):
        """Test that dropping the deviation means changes the plug-in deviance."""
        x = np.random.default_rng(7).normal(size=(12, 3, 1))
        dataset = dataset_factory(x, ['avg_speed'])
        spec = ModelSpec(family=Family.RP_CONDITIONAL_LOGISTIC, covariates=['avg_speed'],
                         random_set=['avg_speed'])
        config = SamplerConfig(n_chains=2, n_iter=200, burn_in=100, adapt_window=25)
        chains, _ = fit_model(spec, dataset, config, seed=5)
        design = build_design(spec, dataset)
        ExportService(tmp_path).export_chains(chains)
        (tmp_path / "phi_means.csv").unlink()
        without = dic(FileProcessor.load_chains(tmp_path / "chains.csv", spec), spec, design)
        assert without.pd != pytest.approx(dic(chains, spec, design).pd)

    def test_units_matched_by_id(self):
        """Test that deviation means are applied to the unit with the same id."""
        spec = ModelSpec(family=Family.RP_CONDITIONAL_LOGISTIC, covariates=['c0'], random_set=['c0'])
        x = np.array([[[1.0], [0.0]], [[0.0], [1.0]]])
        design = Design(family=Family.RP_CONDITIONAL_LOGISTIC, names=['c0'], x=x, unit_ids=['a', 'b'])
        draws = np.stack([np.zeros((1, 4)), np.ones((1, 4))], axis=-1)
        chains = ChainSet(scalar_names=['c0', 'sigma2_c0'], draws=draws, deviance=np.full((1, 4), 3.0),
                          phi_mean=np.array([[[-2.0, 2.0]]]), unit_ids=['b', 'a'])
        # a gets phi 2 and b gets phi -2: both cases score 2 above their control
        expected = 2 * 2 * math.log(1 + math.exp(-2.0))
        assert dic(chains, spec, design).pd == pytest.approx(3.0 - expected)


class TestScoring:
    """Tests for adjusted odds-ratio scoring."""

    def test_adjust_scores(self):
        """Test division by the largest odds ratio."""
        assert adjust_scores(np.array([2.0, 4.0, 1.0])).tolist() == [0.5, 1.0, 0.25]

    def test_degenerate_scores(self):
        """Test that scores without a positive finite maximum are refused."""
        with pytest.raises(DegenerateScoreError):
            adjust_scores(np.zeros(3))
        with pytest.raises(DegenerateScoreError):
            adjust_scores(np.array([1.0, np.inf]))

    def test_zero_coefficients(self):
        """Test that beta = 0 scores every event 1."""
        x = np.random.default_rng(6).normal(size=(3, 5, 2))
        spec = ModelSpec(covariates=['avg_speed', 'rainy'])
        scores, labels = score_events(spec, PosteriorMeans(beta=[0.0, 0.0]), _design(x), use_phi=False)
        assert scores.tolist() == [1.0] * 15
        assert labels.tolist() == [1.0, 0.0, 0.0, 0.0, 0.0] * 3

    def test_control_references(self):
        """Test the case and control reference means."""
        x = np.array([[[4.0], [0.0], [2.0], [4.0]]])
        beta = np.array([1.0])
        assert conditional_log_odds_ratios(beta, x).tolist() == [[2.0, -3.0, 0.0, 3.0]]
        assert conditional_log_odds_ratios(beta, x, "include_all").tolist() == [[2.0, -2.0, 0.0, 2.0]]

    def test_single_control(self):
        """Test that a lone control is compared with itself."""
        x = np.array([[[3.0], [1.0]]])
        assert conditional_log_odds_ratios(np.array([1.0]), x).tolist() == [[2.0, 0.0]]

    def test_logistic_scores_are_probabilities(self):
        """Test that rp_logistic scores predicted probabilities."""
        spec = ModelSpec(family=Family.RP_LOGISTIC, covariates=['rainy'])
        design = Design(family=Family.RP_LOGISTIC, names=['intercept', 'rainy'],
                        x=np.array([[1.0, 0.0], [1.0, 1.0]]), y=np.array([0.0, 1.0]))
        scores, labels = score_events(spec, PosteriorMeans(beta=[0.0, 2.0]), design, use_phi=False)
        assert scores[0] == pytest.approx(0.5)
        assert scores[1] == pytest.approx(1 / (1 + math.exp(-2)))
        assert labels.tolist() == [0.0, 1.0]


class TestEvaluate:
    """Tests for complete model evaluation."""

    def test_report(self, dataset_factory):
        """Test DIC and AUCs of a small fitted model."""
        rng = np.random.default_rng(7)
        x = rng.normal(size=(20, 4, 1))
        x[:, 0, 0] += 1.5
        dataset = dataset_factory(x, ['avg_speed'], train=range(15))
        spec = ModelSpec(covariates=['avg_speed'])
        config = SamplerConfig(n_chains=2, n_iter=300, burn_in=100, adapt_window=25)
        chains, fit = fit_model(spec, dataset, config, seed=3, label="speed")
        report = evaluate(fit, dataset, chains=chains)
        assert report.label == "speed"
        assert report.dic == pytest.approx(report.dbar + report.pd)
        assert 0.0 <= report.training_auc <= 1.0
        assert 0.0 <= report.validation_auc <= 1.0
        assert report.training_auc > 0.5
        assert report.roc[0].fpr == 0.0
        table = auc_table([report])
        assert table['speed']['training_auc'] == report.training_auc

    def test_unsplit_dataset(self, dataset_factory):
        """Test that an unsplit dataset reports no validation AUC."""
        x = np.random.default_rng(8).normal(size=(6, 3, 1))
        dataset = dataset_factory(x, ['avg_speed'])
        config = SamplerConfig(n_chains=2, n_iter=40, burn_in=20, adapt_window=10)
        _, fit = fit_model(ModelSpec(covariates=['avg_speed']), dataset, config, seed=1)
        report = evaluate(fit, dataset)
        assert report.validation_auc is None
        assert report.roc == []
        assert report.dbar == pytest.approx(fit.mean_deviance)

    def test_standardized_fit_scores_raw_design(self, dataset_factory):
        """Test that a standardized fit is evaluated on raw covariates."""
        x = np.random.default_rng(9).normal(size=(10, 3, 1)) * 10
        dataset = dataset_factory(x, ['avg_speed'], train=range(8))
        spec = ModelSpec(covariates=['avg_speed'], standardize=True)
        config = SamplerConfig(n_chains=2, n_iter=60, burn_in=20, adapt_window=10)
        _, fit = fit_model(spec, dataset, config, seed=2)
        report = evaluate(fit, dataset)
        raw = build_design(spec.model_copy(update={'standardize': False}), dataset)
        assert raw.scale is None
        assert math.isfinite(report.dic)
