"""Integration tests for CLI commands."""

import json

import numpy as np
import pandas as pd
import pytest
from click.testing import CliRunner
from rich.console import Console

from arterial_risk.cli import cli
from arterial_risk.config import config_manager
from arterial_risk.services.case_control_builder import matching_key
from arterial_risk.services.export_service import ExportService
from arterial_risk.utils.file_utils import FileProcessor

from ..conftest import make_dataset


@pytest.fixture(autouse=True)
def packaged_settings():
    """Restore the packaged settings after a test passes --settings."""
    path = config_manager.config_path
    yield
    config_manager.config_path = path
    config_manager.reload()


@pytest.fixture
def dataset_file(tmp_path):
    """dataset.csv with twelve split strata and one informative covariate."""
    x = np.random.default_rng(0).normal(size=(12, 4, 1))
    x[:, 0, 0] += 1.0
    dataset = make_dataset(x, ['avg_speed'], train=range(10))
    return ExportService(tmp_path / "prepared").export_dataset(dataset)


@pytest.fixture
def model_file(tmp_path):
    """model.json for a conditional model on average speed."""
    path = tmp_path / "model.json"
    path.write_text(json.dumps({'family': 'conditional_logistic', 'covariates': ['avg_speed']}))
    return path


@pytest.fixture
def sampler_file(tmp_path):
    """sampler.json small enough for a test run."""
    path = tmp_path / "sampler.json"
    path.write_text(json.dumps({'n_chains': 2, 'n_iter': 300, 'burn_in': 100, 'adapt_window': 25}))
    return path


class TestConfigCommand:
    """Tests for config CLI commands."""

    def test_config_show(self):
        """Test config show command."""
        runner = CliRunner()
        result = runner.invoke(cli, ['config', 'show'])

        assert result.exit_code == 0
        assert result.output != ""

    def test_config_show_json(self):
        """Test that config show --json prints every section."""
        runner = CliRunner()
        result = runner.invoke(cli, ['config', 'show', '--json'])

        assert result.exit_code == 0
        settings = json.loads(result.stdout)
        assert {'paths', 'features', 'case_control', 'sampler', 'ui', 'export'} <= set(settings)

    def test_custom_settings(self, sample_config_file):
        """Test that --settings replaces the defaults."""
        runner = CliRunner()
        result = runner.invoke(cli, ['--settings', str(sample_config_file), 'config', 'show', '--json'])

        assert result.exit_code == 0
        assert json.loads(result.stdout)['case_control']['m'] == 3


class TestConfigurationErrors:
    """Tests for the configuration exit code."""

    def test_simulate_without_seed(self, world_config_file, tmp_path):
        """Test that a world without a seed exits with 2."""
        runner = CliRunner()
        result = runner.invoke(cli, ['simulate', '--config', str(world_config_file), '--out', str(tmp_path / "w")])

        assert result.exit_code == 2

    def test_burn_in_too_long(self, dataset_file, model_file, tmp_path):
        """Test that burn-in at least n_iter exits with 2."""
        sampler = tmp_path / "bad_sampler.json"
        sampler.write_text(json.dumps({'n_iter': 100, 'burn_in': 200, 'seed': 1}))
        runner = CliRunner()
        result = runner.invoke(cli, ['fit', '--dataset', dataset_file, '--config', str(model_file),
                                     '--sampler', str(sampler), '--out', str(tmp_path / "fit")])

        assert result.exit_code == 2

    def test_fit_without_seed(self, dataset_file, model_file, sampler_file, tmp_path):
        """Test that fitting without any seed exits with 2."""
        runner = CliRunner()
        result = runner.invoke(cli, ['fit', '--dataset', dataset_file, '--config', str(model_file),
                                     '--sampler', str(sampler_file), '--out', str(tmp_path / "fit")])

        assert result.exit_code == 2
        assert "seed" in result.output

    def test_empty_sweep(self, dataset_file, model_file, sampler_file, tmp_path):
        """Test that an empty combination list exits with 2."""
        combinations = tmp_path / "combinations.json"
        combinations.write_text("[]")
        runner = CliRunner()
        result = runner.invoke(cli, ['sweep', '--dataset', dataset_file, '--config', str(model_file),
                                     '--combinations', str(combinations), '--sampler', str(sampler_file),
                                     '--seed', '1', '--out', str(tmp_path / "sweep")])

        assert result.exit_code == 2

    def test_evaluate_nothing(self, dataset_file, tmp_path):
        """Test that evaluate needs summaries or chains."""
        runner = CliRunner()
        result = runner.invoke(cli, ['evaluate', '--dataset', dataset_file, '--out', str(tmp_path / "eval")])

        assert result.exit_code == 2

    def test_missing_logs_is_runtime_error(self, tmp_path):
        """Test that an unreadable log directory exits with 1."""
        (tmp_path / "logs").mkdir()
        crashes = tmp_path / "crashes.csv"
        crashes.write_text("segment_id,timestamp\n")
        runner = CliRunner()
        result = runner.invoke(cli, ['prepare', '--logs', str(tmp_path / "logs"), '--crashes', str(crashes),
                                     '--seed', '1', '--out', str(tmp_path / "out")])

        assert result.exit_code == 1


class TestFitAndEvaluate:
    """Tests for fit and evaluate on a prepared dataset."""

    def test_fit_then_evaluate(self, dataset_file, model_file, sampler_file, tmp_path):
        """Test summary, chains and report artifacts."""
        runner = CliRunner()
        fit_dir = tmp_path / "fit"
        result = runner.invoke(cli, ['fit', '--dataset', dataset_file, '--config', str(model_file),
                                     '--sampler', str(sampler_file), '--seed', '7', '--label', 'speed',
                                     '--out', str(fit_dir)])
        assert result.exit_code == 0, result.output
        chains = pd.read_csv(fit_dir / "chains.csv")
        assert len(chains) == 2 * 200
        summary = json.loads((fit_dir / "summary.json").read_text())
        assert summary['label'] == 'speed'

        eval_dir = tmp_path / "eval"
        result = runner.invoke(cli, ['evaluate', str(fit_dir / "summary.json"), '--dataset', dataset_file,
                                     '--out', str(eval_dir)])
        assert result.exit_code == 0, result.output
        report = json.loads((eval_dir / "report.json").read_text())['reports'][0]
        assert report['dic'] == pytest.approx(report['dbar'] + report['pd'])
        assert 0.0 <= report['training_auc'] <= 1.0
        assert 0.0 <= report['validation_auc'] <= 1.0
        assert (eval_dir / "report.md").exists()
        roc = pd.read_csv(eval_dir / "roc.csv")
        assert set(roc['split']) == {'validation', 'train'}

    def test_evaluate_from_chains(self, dataset_file, model_file, sampler_file, tmp_path):
        """Test evaluation rebuilt from chains.csv."""
        runner = CliRunner()
        fit_dir = tmp_path / "fit"
        runner.invoke(cli, ['fit', '--dataset', dataset_file, '--config', str(model_file),
                            '--sampler', str(sampler_file), '--seed', '3', '--out', str(fit_dir)])
        result = runner.invoke(cli, ['evaluate', '--chains', str(fit_dir / "chains.csv"),
                                     '--config', str(model_file), '--dataset', dataset_file,
                                     '--out', str(tmp_path / "eval")])

        assert result.exit_code == 0, result.output
        report = json.loads((tmp_path / "eval" / "report.json").read_text())['reports'][0]
        chains = pd.read_csv(fit_dir / "chains.csv")
        assert report['dbar'] == pytest.approx(chains['deviance'].mean())

    def test_random_parameter_chains_match_summary(self, dataset_file, sampler_file, tmp_path):
        """Test that a random-parameter fit scores the same DIC from chains as from its summary."""
        model = tmp_path / "rp_model.json"
        model.write_text(json.dumps({'family': 'rp_conditional_logistic', 'covariates': ['avg_speed'],
                                     'random_set': ['avg_speed']}))
        runner = CliRunner()
        fit_dir = tmp_path / "fit"
        result = runner.invoke(cli, ['fit', '--dataset', dataset_file, '--config', str(model),
                                     '--sampler', str(sampler_file), '--seed', '8', '--out', str(fit_dir)])
        assert result.exit_code == 0, result.output
        assert (fit_dir / "phi_means.csv").exists()

        for args, name in (([str(fit_dir / "summary.json")], "from_summary"),
                           (['--chains', str(fit_dir / "chains.csv"), '--config', str(model)], "from_chains")):
            result = runner.invoke(cli, ['evaluate', *args, '--dataset', dataset_file, '--out', str(tmp_path / name)])
            assert result.exit_code == 0, result.output
        from_summary = json.loads((tmp_path / "from_summary" / "report.json").read_text())['reports'][0]
        from_chains = json.loads((tmp_path / "from_chains" / "report.json").read_text())['reports'][0]
        assert from_chains['dic'] == pytest.approx(from_summary['dic'], rel=1e-9)
        assert from_chains['training_auc'] == pytest.approx(from_summary['training_auc'])

    def test_seeded_fits_reproduce(self, dataset_file, model_file, sampler_file, tmp_path):
        """Test that the same seed writes identical chains."""
        runner = CliRunner()
        for name in ("a", "b"):
            runner.invoke(cli, ['fit', '--dataset', dataset_file, '--config', str(model_file),
                                '--sampler', str(sampler_file), '--seed', '5', '--out', str(tmp_path / name)])

        assert (tmp_path / "a" / "chains.csv").read_text() == (tmp_path / "b" / "chains.csv").read_text()

    def test_describe(self, dataset_file, tmp_path):
        """Test descriptive statistics output."""
        runner = CliRunner()
        result = runner.invoke(cli, ['describe', '--dataset', dataset_file, '--out', str(tmp_path / "d")])

        assert result.exit_code == 0, result.output
        stats = pd.read_csv(tmp_path / "d" / "describe.csv")
        assert {'covariate', 'slice', 'mean', 'sd', 'min', 'max'} <= set(stats.columns)
        counts = pd.read_csv(tmp_path / "d" / "crash_counts.csv")
        assert counts['crashes'].sum() == 12


class TestPipeline:
    """End-to-end run from a simulated corridor."""

    def test_simulate_prepare_fit_evaluate(self, model_file, sampler_file, simulated_world, tmp_path):
        """Test the whole pipeline on a synthetic world."""
        runner = CliRunner()
        world = tmp_path / "world.json"
        world.write_text(json.dumps({'n_segments': 1, 'weeks': 5, 'active_hours': [7, 10],
                                     'ground_truth': {'n_strata': 6, 'm': 4}}))
        logs = tmp_path / "logs"
        result = runner.invoke(cli, ['simulate', '--config', str(world), '--seed', '11', '--out', str(logs)])
        assert result.exit_code == 0, result.output
        assert (logs / "crashes.csv").read_text() == (simulated_world / "crashes.csv").read_text()

        prepared = tmp_path / "prepared"
        result = runner.invoke(cli, ['prepare', '--logs', str(logs), '--seed', '2', '--out', str(prepared)])
        assert result.exit_code == 0, result.output
        attrition = json.loads((prepared / "attrition.json").read_text())
        assert attrition['input_crashes'] == 6
        assert attrition['kept'] >= 1

        fit_dir = tmp_path / "fit"
        result = runner.invoke(cli, ['fit', '--dataset', str(prepared / "dataset.csv"), '--config', str(model_file),
                                     '--sampler', str(sampler_file), '--seed', '4', '--out', str(fit_dir)])
        assert result.exit_code == 0, result.output

        result = runner.invoke(cli, ['evaluate', str(fit_dir / "summary.json"),
                                     '--dataset', str(prepared / "dataset.csv"), '--out', str(tmp_path / "eval")])
        assert result.exit_code == 0, result.output
        report = json.loads((tmp_path / "eval" / "report.json").read_text())['reports'][0]
        assert report['dic'] == pytest.approx(report['dbar'] + report['pd'])
        assert 0.0 <= report['training_auc'] <= 1.0


class TestPreparedInvariants:
    """Invariants of a dataset prepared from a simulated corridor."""

    def test_strata_controls_and_reproducibility(self, simulated_world, tmp_path):
        """Test stratum shape, crash-free controls, balanced attrition and byte-identical reruns."""
        runner = CliRunner()
        for name in ("a", "b"):
            result = runner.invoke(cli, ['prepare', '--logs', str(simulated_world), '--seed', '3',
                                         '--out', str(tmp_path / name)])
            assert result.exit_code == 0, result.output
        for artifact in ("dataset.csv", "attrition.json"):
            assert (tmp_path / "a" / artifact).read_bytes() == (tmp_path / "b" / artifact).read_bytes()

        attrition = json.loads((tmp_path / "a" / "attrition.json").read_text())
        assert attrition['input_crashes'] == attrition['kept'] + sum(attrition['rejection_counts'].values())
        dataset = FileProcessor.load_dataset(tmp_path / "a" / "dataset.csv")
        assert len(dataset.strata) == attrition['kept'] >= 1
        crash_times = [c.timestamp for c in FileProcessor.load_crashes(simulated_world / "crashes.csv")]
        for stratum in dataset.strata:
            assert stratum.m == 4
            assert sum(e.is_crash for e in stratum.events) == 1
            assert {matching_key(e.segment_id, e.timestamp) for e in stratum.events} == {stratum.matching_key}
            for control in stratum.controls:
                assert all(abs(control.timestamp - t) > 3 * 3600 for t in crash_times)


class TestSettings:
    """Tests for the --settings file."""

    def test_ui_settings_reach_console(self, sample_config_file, monkeypatch):
        """Test that colors = false gives a colorless console and the table style reaches the tables."""
        created = []

        class RecordingConsole(Console):
            def __init__(self, *args, **kwargs):
                created.append(kwargs)
                super().__init__(*args, **kwargs)

        monkeypatch.setattr("arterial_risk.cli.Console", RecordingConsole)
        seen = {}
        monkeypatch.setattr("arterial_risk.cli.ReportGenerator",
                            lambda console, places, style: seen.update(console=console, places=places, style=style))
        result = CliRunner().invoke(cli, ['--settings', str(sample_config_file), 'config', 'show', '--json'])

        assert result.exit_code == 0, result.output
        assert {'no_color': True} in created
        assert seen['console'].no_color
        assert (seen['places'], seen['style']) == (4, "minimal")


class TestCLIHelp:
    """Tests for CLI help output."""

    def test_main_help(self):
        """Test main help output."""
        runner = CliRunner()
        result = runner.invoke(cli, ['--help'])

        assert result.exit_code == 0
        for command in ('simulate', 'prepare', 'fit', 'evaluate', 'sweep', 'compare-slices', 'describe'):
            assert command in result.output

    def test_fit_help(self):
        """Test fit help output."""
        runner = CliRunner()
        result = runner.invoke(cli, ['fit', '--help'])

        assert result.exit_code == 0
        assert '--threads' in result.output
