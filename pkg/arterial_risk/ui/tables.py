"""Rich table formatting for Arterial Risk."""

from typing import Any, Dict, Optional, Sequence

import pandas as pd
from rich import box
from rich.console import Console
from rich.table import Table
from rich.text import Text

from ..models.case_control import AttritionReport
from ..models.posterior import EvaluationReport, ParameterSummary, SweepRow
from ..utils.formatting import NumberFormatter, TextFormatter


TABLE_BOXES = {
    "rich": box.HEAVY_HEAD,
    "simple": box.SIMPLE,
    "minimal": box.MINIMAL,
}


class TableFormatter:
    """Formatter for creating Rich tables."""

    def __init__(self, console: Optional[Console] = None, decimal_places: int = 3, table_style: str = "rich"):
        """Initialize table formatter.

        Args:
            console: Rich console instance. If None, creates a new one.
            decimal_places: Decimal places for estimates
            table_style: Border style, one of "rich", "simple" or "minimal"
        """
        self.console = console or Console()
        self.decimal_places = decimal_places
        self.box = TABLE_BOXES[table_style]

    def format_estimate(self, value: Optional[float]) -> str:
        """Format an estimate with the configured precision."""
        return NumberFormatter.format_estimate(value, self.decimal_places)

    def get_rhat_color(self, parameter: ParameterSummary) -> str:
        """Colour for an R-hat cell."""
        if parameter.rhat is None:
            return "red"
        return "red" if parameter.rhat_flagged else "green"

    def create_summary_table(self, parameters: Sequence[ParameterSummary], title: str = "") -> Table:
        """Posterior summary: mean with 95% BCI, SD, hazard ratio and R-hat."""
        table = Table(
            title=f"Posterior Summary: {title}" if title else "Posterior Summary",
            box=self.box,
            show_header=True,
            header_style="bold blue",
            title_style="bold magenta"
        )

        table.add_column("Parameter", style="cyan", no_wrap=True)
        table.add_column("Mean (95% BCI)", justify="right", style="white")
        table.add_column("SD", justify="right", style="blue")
        table.add_column("HR", justify="right", style="yellow")
        table.add_column("R-hat", justify="right")

        for p in parameters:
            estimate = NumberFormatter.format_bci(p.mean, p.lower, p.upper, self.decimal_places)
            estimate += TextFormatter.significance_marker(p.significant, p.significant_90)
            table.add_row(
                p.name,
                Text(estimate, style="bold" if p.significant else ""),
                self.format_estimate(p.sd),
                self.format_estimate(p.hazard_ratio),
                Text(self.format_estimate(p.rhat), style=self.get_rhat_color(p)),
            )

        return table

    def create_measures_table(self, reports: Sequence[EvaluationReport]) -> Table:
        """DIC decomposition and AUC per evaluated model."""
        table = Table(
            title="Model Fit and Prediction",
            box=self.box,
            show_header=True,
            header_style="bold blue",
            title_style="bold magenta"
        )

        table.add_column("Model", style="yellow", max_width=40)
        table.add_column("Slice", justify="right", style="cyan")
        table.add_column("DIC", justify="right", style="green")
        table.add_column("D-bar", justify="right", style="green")
        table.add_column("pD", justify="right", style="green")
        table.add_column("Train AUC", justify="right", style="blue")
        table.add_column("Valid AUC", justify="right", style="bold blue")

        for r in reports:
            table.add_row(
                TextFormatter.truncate_text(r.label, 40),
                str(r.slice_index),
                self.format_estimate(r.dic),
                self.format_estimate(r.dbar),
                self.format_estimate(r.pd),
                self.format_estimate(r.training_auc),
                self.format_estimate(r.validation_auc),
            )

        return table

    def create_attrition_table(self, report: AttritionReport) -> Table:
        """Crashes kept and rejected, by reason."""
        table = Table(
            title="Stratum Attrition",
            box=self.box,
            show_header=True,
            header_style="bold blue",
            title_style="bold magenta"
        )

        table.add_column("Outcome", style="cyan")
        table.add_column("Crashes", justify="right", style="green")
        table.add_column("Share", justify="right", style="yellow")

        total = report.input_crashes
        table.add_row("kept", NumberFormatter.format_number(report.kept),
                      NumberFormatter.format_percentage(report.kept, total))
        for reason, count in report.rejection_counts.items():
            table.add_row(reason, NumberFormatter.format_number(count),
                          NumberFormatter.format_percentage(count, total))

        table.add_row(
            Text("Input crashes", style="bold"),
            Text(NumberFormatter.format_number(total), style="bold"),
            Text("100.0%" if total else "0.0%", style="bold"),
        )
        return table

    def create_sweep_table(self, rows: Sequence[SweepRow]) -> Table:
        """Random/fixed combinations ranked by validation AUC."""
        table = Table(
            title="Random/Fixed Combinations",
            box=self.box,
            show_header=True,
            header_style="bold blue",
            title_style="bold magenta"
        )

        table.add_column("#", justify="right", style="dim")
        table.add_column("Fixed", style="cyan")
        table.add_column("Random", style="yellow")
        table.add_column("DIC", justify="right", style="green")
        table.add_column("Train AUC", justify="right", style="blue")
        table.add_column("Valid AUC", justify="right", style="bold blue")

        for rank, row in enumerate(rows, start=1):
            table.add_row(
                str(rank),
                ", ".join(row.fixed) or "-",
                ", ".join(row.random) or "-",
                self.format_estimate(row.dic),
                self.format_estimate(row.training_auc),
                self.format_estimate(row.validation_auc),
            )

        return table

    def create_slice_table(self, reports: Sequence[EvaluationReport]) -> Table:
        """Training and validation AUC per time slice."""
        table = Table(
            title="Time Slice Comparison",
            box=self.box,
            show_header=True,
            header_style="bold blue",
            title_style="bold magenta"
        )

        table.add_column("Slice", justify="right", style="cyan")
        table.add_column("Minutes before event", style="cyan")
        table.add_column("DIC", justify="right", style="green")
        table.add_column("Train AUC", justify="right", style="blue")
        table.add_column("Valid AUC", justify="right", style="bold blue")

        best = max((r.validation_auc for r in reports if r.validation_auc is not None), default=None)
        for r in reports:
            k = r.slice_index
            valid = self.format_estimate(r.validation_auc)
            table.add_row(
                str(k),
                f"{5 * (k - 1)}-{5 * k}",
                self.format_estimate(r.dic),
                self.format_estimate(r.training_auc),
                Text(valid, style="bold green" if best is not None and r.validation_auc == best else ""),
            )

        return table

    def create_describe_table(self, stats: pd.DataFrame) -> Table:
        """Mean, SD, min and max of every covariate per slice."""
        table = Table(
            title="Descriptive Statistics",
            box=self.box,
            show_header=True,
            header_style="bold blue",
            title_style="bold magenta"
        )

        table.add_column("Covariate", style="cyan", no_wrap=True)
        table.add_column("Slice", justify="right", style="cyan")
        for column in ("Mean", "SD", "Min", "Max"):
            table.add_column(column, justify="right", style="green")

        for row in stats.itertuples(index=False):
            table.add_row(
                row.covariate,
                str(row.slice),
                self.format_estimate(row.mean),
                self.format_estimate(row.sd),
                self.format_estimate(row.min),
                self.format_estimate(row.max),
            )

        return table

    def create_crash_count_table(self, counts: pd.DataFrame) -> Table:
        """Crash count per segment."""
        table = Table(
            title="Crashes per Segment",
            box=self.box,
            show_header=True,
            header_style="bold blue",
            title_style="bold magenta"
        )

        table.add_column("Segment", style="cyan")
        table.add_column("Crashes", justify="right", style="green")

        for row in counts.itertuples(index=False):
            table.add_row(str(row.segment_id), NumberFormatter.format_number(int(row.crashes)))

        table.add_row(Text("Total", style="bold"),
                      Text(NumberFormatter.format_number(int(counts['crashes'].sum())), style="bold"))
        return table

    def create_config_table(self, sections: Dict[str, Dict[str, Any]]) -> Table:
        """Current configuration, one row per setting."""
        table = Table(
            title="Arterial Risk Configuration",
            box=self.box,
            show_header=True,
            header_style="bold blue",
            title_style="bold magenta"
        )

        table.add_column("Section", style="cyan")
        table.add_column("Setting", style="yellow")
        table.add_column("Value", style="white")

        for section, values in sections.items():
            for key, value in values.items():
                table.add_row(section, key, str(value))

        return table
