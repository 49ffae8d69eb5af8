"""Export service for Arterial Risk.

Every file is written deterministically: stable column order, sorted JSON
keys and no generation timestamps, so reruns are byte-identical.
"""

import json
import logging
import math
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

import numpy as np
import pandas as pd

from ..models.case_control import AttritionReport, Dataset, dataset_columns
from ..models.network import COVARIATE_NAMES
from ..models.posterior import ChainSet, RocPoint, SweepRow
from ..utils.error_handling import ExportError, safe_file_write
from ..utils.time_utils import TimeUtils

logger = logging.getLogger(__name__)


def json_serializer(obj):
    """Custom JSON serializer for special types."""
    if hasattr(obj, "model_dump"):
        return obj.model_dump(mode='json')
    elif isinstance(obj, np.ndarray):
        return obj.tolist()
    elif isinstance(obj, np.integer):
        return int(obj)
    elif isinstance(obj, np.floating):
        return float(obj)
    elif hasattr(obj, "value"):
        return obj.value
    else:
        return str(obj)


def _finite_or_none(value: Any) -> Any:
    if isinstance(value, float) and not math.isfinite(value):
        return None
    if isinstance(value, dict):
        return {k: _finite_or_none(v) for k, v in value.items()}
    if isinstance(value, list):
        return [_finite_or_none(v) for v in value]
    return value


class ExportService:
    """Service for writing run artifacts."""

    def __init__(self, output_dir: Union[str, Path] = "./runs"):
        """Initialize export service.

        Args:
            output_dir: Directory to save exported files
        """
        self.output_dir = Path(output_dir)
        self.output_dir.mkdir(parents=True, exist_ok=True)

    @staticmethod
    def write_frame(frame: pd.DataFrame, file_path: Union[str, Path]) -> str:
        """Write a DataFrame as UTF-8 CSV with ``\\n`` line endings."""
        path = Path(file_path)
        try:
            safe_file_write(path, frame.to_csv(index=False, lineterminator='\n'))
        except ValueError as e:
            raise ExportError(f"Failed to write CSV file: {path}", details={'error': str(e)})
        return str(path)

    @staticmethod
    def write_json(data: Any, file_path: Union[str, Path], indent: int = 2) -> str:
        """Write JSON with sorted keys; non-finite floats become null."""
        path = Path(file_path)
        if hasattr(data, "model_dump"):
            data = data.model_dump(mode='json')
        try:
            content = json.dumps(_finite_or_none(data), indent=indent, sort_keys=True,
                                 default=json_serializer, ensure_ascii=False)
        except (TypeError, ValueError) as e:
            raise ExportError(f"Failed to serialize JSON for {path}", details={'error': str(e)})
        safe_file_write(path, content + '\n')
        return str(path)

    @staticmethod
    def write_text(content: str, file_path: Union[str, Path]) -> str:
        """Write rendered text such as ``report.md``."""
        path = Path(file_path)
        safe_file_write(path, content)
        return str(path)

    @staticmethod
    def dataset_frame(dataset: Dataset, n_slices: int = 4) -> pd.DataFrame:
        """One row per event in the ``dataset.csv`` column order."""
        rows = []
        for stratum in dataset.strata:
            split = dataset.split.get(stratum.id)
            for event in stratum.events:
                row = {
                    'stratum_id': stratum.id,
                    'is_crash': event.is_crash,
                    'split': split.value if split is not None else '',
                    'segment_id': event.segment_id,
                    'timestamp': TimeUtils.format_timestamp(event.timestamp),
                }
                for k, vector in enumerate(event.slices, start=1):
                    for name in COVARIATE_NAMES:
                        row[f"{name}_s{k}"] = getattr(vector, name)
                    row[f"sample_count_s{k}"] = vector.sample_count
                rows.append(row)
        return pd.DataFrame(rows, columns=dataset_columns(n_slices))

    def export_dataset(self, dataset: Dataset, filename: str = "dataset.csv") -> str:
        """Write ``dataset.csv``."""
        return self.write_frame(self.dataset_frame(dataset), self.output_dir / filename)

    def export_attrition(self, report: AttritionReport, filename: str = "attrition.json") -> str:
        """Write the attrition report."""
        return self.write_json(report, self.output_dir / filename)

    @staticmethod
    def chains_frame(chains: ChainSet) -> pd.DataFrame:
        """One row per stored iteration and chain, one column per scalar."""
        n_chains, n_kept, _ = chains.draws.shape
        frame = pd.DataFrame(chains.draws.reshape(n_chains * n_kept, -1), columns=chains.scalar_names)
        frame.insert(0, 'iteration', np.tile(chains.burn_in + (np.arange(n_kept) + 1) * chains.thin, n_chains))
        frame.insert(0, 'chain', np.repeat(np.arange(n_chains), n_kept))
        frame['deviance'] = chains.deviance.reshape(-1)
        return frame

    @staticmethod
    def phi_frame(chains: ChainSet, coefficient_names: List[str]) -> pd.DataFrame:
        """Per-chain deviation means in long form: chain, coefficient, unit_id, phi_mean."""
        n_chains, r, n_units = chains.phi_mean.shape
        return pd.DataFrame({
            'chain': np.repeat(np.arange(n_chains), r * n_units),
            'coefficient': np.tile(np.repeat(coefficient_names, n_units), n_chains),
            'unit_id': np.tile(chains.unit_ids, n_chains * r),
            'phi_mean': chains.phi_mean.reshape(-1),
        })

    def export_chains(self, chains: ChainSet, filename: str = "chains.csv",
                      phi_filename: str = "phi_means.csv") -> str:
        """Write retained draws, and the unit deviation means when the model has any.

        Returns:
            Path of the draws file
        """
        random_names = [n[len("sigma2_"):] for n in chains.scalar_names if n.startswith("sigma2_")]
        if random_names and chains.phi_mean.size and chains.unit_ids:
            self.write_frame(self.phi_frame(chains, random_names), self.output_dir / phi_filename)
        return self.write_frame(self.chains_frame(chains), self.output_dir / filename)

    def export_roc(self, roc: List[RocPoint], training_roc: Optional[List[RocPoint]] = None,
                   filename: str = "roc.csv") -> str:
        """Write ROC points for plotting, one block per split."""
        rows = [{'split': 'validation', **p.model_dump()} for p in roc]
        rows += [{'split': 'train', **p.model_dump()} for p in (training_roc or [])]
        frame = pd.DataFrame(rows, columns=['split', 'threshold', 'fpr', 'tpr'])
        return self.write_frame(frame, self.output_dir / filename)

    def export_json(self, data: Union[Dict[str, Any], Any], filename: str) -> str:
        """Write any JSON-serializable artifact into the output directory."""
        if not filename.endswith('.json'):
            filename += '.json'
        return self.write_json(data, self.output_dir / filename)

    def export_sweep(self, rows: List[SweepRow], filename: str = "sweep") -> List[str]:
        """Write sweep rows as ``sweep.json`` and ``sweep.csv`` (covariate lists joined by ';')."""
        frame = pd.DataFrame(
            [{'fixed': ";".join(r.fixed), 'random': ";".join(r.random), 'dic': r.dic,
              'training_auc': r.training_auc, 'validation_auc': r.validation_auc} for r in rows],
            columns=['fixed', 'random', 'dic', 'training_auc', 'validation_auc'],
        )
        return [
            self.export_json({'rows': [r.model_dump(mode='json') for r in rows]}, f"{filename}.json"),
            self.write_frame(frame, self.output_dir / f"{filename}.csv"),
        ]
