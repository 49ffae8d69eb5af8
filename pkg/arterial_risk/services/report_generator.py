"""Report generation service for Arterial Risk."""

import logging
from typing import Any, Dict, List, Optional, Sequence, Tuple

import pandas as pd
from jinja2 import Environment, PackageLoader, StrictUndefined
from rich.console import Console

from ..models.case_control import AttritionReport, Dataset
from ..models.network import COVARIATE_NAMES
from ..models.posterior import EvaluationReport, FitResult, ParameterSummary, SweepRow
from ..ui.tables import TableFormatter
from ..utils.formatting import NumberFormatter, TextFormatter
from .export_service import ExportService

logger = logging.getLogger(__name__)


class ReportGenerator:
    """Service for rendering fit, evaluation and dataset reports."""

    def __init__(self, console: Optional[Console] = None, decimal_places: int = 3, table_style: str = "rich"):
        """Initialize report generator.

        Args:
            console: Rich console for output
            decimal_places: Decimal places for estimates
            table_style: Table border style
        """
        self.console = console or Console()
        self.table_formatter = TableFormatter(self.console, decimal_places, table_style)
        self.decimal_places = decimal_places
        self.environment = Environment(
            loader=PackageLoader('arterial_risk', 'templates'),
            trim_blocks=True,
            lstrip_blocks=True,
            keep_trailing_newline=True,
            undefined=StrictUndefined,
        )

    def _num(self, value: Optional[float]) -> str:
        return NumberFormatter.format_estimate(value, self.decimal_places)

    def _bci(self, p: ParameterSummary) -> str:
        return NumberFormatter.format_bci(p.mean, p.lower, p.upper, self.decimal_places)

    @staticmethod
    def _marker(p: ParameterSummary) -> str:
        return TextFormatter.significance_marker(p.significant, p.significant_90)

    def _cell(self, report: EvaluationReport, name: str) -> str:
        for p in report.parameters:
            if p.name == name:
                return self._num(p.mean) + self._marker(p)
        return "-"

    @staticmethod
    def parameter_names(reports: Sequence[EvaluationReport]) -> List[str]:
        """Union of parameter names across reports, in first-seen order."""
        names: List[str] = []
        for report in reports:
            for p in report.parameters:
                if p.name not in names:
                    names.append(p.name)
        return names

    def render_markdown(self, reports: Sequence[EvaluationReport],
                        sweep_rows: Optional[Sequence[SweepRow]] = None) -> str:
        """Render ``report.md`` for one or more evaluated models."""
        template = self.environment.get_template('report.md.j2')
        return template.render(
            reports=list(reports),
            parameter_names=self.parameter_names(reports),
            sweep_rows=list(sweep_rows or []),
            bci=self._bci,
            marker=self._marker,
            num=self._num,
            cell=self._cell,
        )

    def write_evaluation(self, reports: Sequence[EvaluationReport], export_service: ExportService,
                         sweep_rows: Optional[Sequence[SweepRow]] = None) -> Dict[str, str]:
        """Write ``report.json``, ``report.md`` and ``roc.csv``.

        The ROC file holds the curve of the first report.

        Returns:
            Written paths keyed by artifact name
        """
        payload: Dict[str, Any] = {'reports': [r.model_dump(mode='json') for r in reports]}
        if sweep_rows:
            payload['sweep'] = [row.model_dump(mode='json') for row in sweep_rows]
        paths = {'report.json': export_service.export_json(payload, 'report.json')}

        markdown_path = export_service.output_dir / 'report.md'
        export_service.write_text(self.render_markdown(reports, sweep_rows), markdown_path)
        paths['report.md'] = str(markdown_path)

        if reports:
            first = reports[0]
            paths['roc.csv'] = export_service.export_roc(first.roc, first.training_roc)
        return paths

    @staticmethod
    def describe_dataset(dataset: Dataset, n_slices: int = 4) -> Tuple[pd.DataFrame, pd.DataFrame]:
        """Descriptive statistics of every covariate per slice and crashes per segment.

        Returns:
            (covariate statistics with columns covariate, slice, mean, sd,
            min, max; crash counts with columns segment_id, crashes)
        """
        rows = []
        for stratum in dataset.strata:
            for event in stratum.events:
                for k, vector in enumerate(event.slices[:n_slices], start=1):
                    for name, value in vector.covariates().items():
                        rows.append({'covariate': name, 'slice': k, 'value': value})

        if rows:
            values = pd.DataFrame(rows).astype({'value': float})
            stats = (values.groupby(['covariate', 'slice'], sort=False)['value']
                     .agg(mean='mean', sd='std', min='min', max='max')
                     .reset_index())
            rank = stats['covariate'].map({name: i for i, name in enumerate(COVARIATE_NAMES)})
            stats = (stats.assign(rank=rank).sort_values(['rank', 'slice'])
                     .drop(columns='rank').reset_index(drop=True))
        else:
            stats = pd.DataFrame(columns=['covariate', 'slice', 'mean', 'sd', 'min', 'max'])

        crashes = pd.Series([s.case.segment_id for s in dataset.strata], dtype=str)
        counts = (crashes.value_counts().rename_axis('segment_id').reset_index(name='crashes')
                  .sort_values('segment_id').reset_index(drop=True))
        return stats, counts

    def display_fit(self, fit: FitResult):
        """Print the posterior summary of a fitted model."""
        self.console.print(self.table_formatter.create_summary_table(fit.summary.parameters, fit.label))
        flagged = [p.name for p in fit.summary.parameters if p.rhat_flagged]
        if flagged:
            self.console.print(f"[yellow]R-hat above 1.1 or undefined: {', '.join(flagged)}[/yellow]")

    def display_evaluation(self, reports: Sequence[EvaluationReport]):
        """Print parameter tables and fit measures for evaluated models."""
        for report in reports:
            self.console.print(self.table_formatter.create_summary_table(report.parameters, report.label))
        self.console.print(self.table_formatter.create_measures_table(reports))

    def display_attrition(self, report: AttritionReport):
        """Print stratum attrition."""
        self.console.print(self.table_formatter.create_attrition_table(report))

    def display_sweep(self, rows: Sequence[SweepRow]):
        """Print a random/fixed combination comparison."""
        self.console.print(self.table_formatter.create_sweep_table(rows))

    def display_slices(self, reports: Sequence[EvaluationReport]):
        """Print AUC per time slice."""
        self.console.print(self.table_formatter.create_slice_table(reports))

    def display_description(self, stats: pd.DataFrame, counts: pd.DataFrame):
        """Print descriptive statistics."""
        self.console.print(self.table_formatter.create_describe_table(stats))
        self.console.print(self.table_formatter.create_crash_count_table(counts))
