"""File utility functions for Arterial Risk.

Loads the five corridor logs, the crash log, run configurations and the
matched dataset from disk.
"""

import logging
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Type, TypeVar, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel

from ..models.case_control import (
    Dataset,
    Event,
    SplitLabel,
    Stratum,
    dataset_columns,
    slice_column,
)
from ..models.model_spec import ModelSpec
from ..models.network import (
    COVARIATE_NAMES,
    Crash,
    FeatureVector,
    Movement,
    PhaseInterval,
    Segment,
    TrafficLogs,
    TraversalSample,
    VolumeRecord,
    WeatherRecord,
)
from ..models.posterior import ChainSet
from ..services.feature_extractor import space_mean_speed
from ..utils.error_handling import (
    DataProcessingError,
    FileSystemError,
    RejectedSampleError,
    safe_json_load,
)
from ..utils.time_utils import HOUR, WEEKDAY_NAMES, TimeUtils

logger = logging.getLogger(__name__)

ModelT = TypeVar('ModelT', bound=BaseModel)

LOG_FILES = {
    'segments': 'segments.csv',
    'bluetooth': 'bluetooth.csv',
    'phases': 'phases.csv',
    'volumes': 'volumes.csv',
    'weather': 'weather.csv',
}

EPOCH_TIMESTAMP = pd.Timestamp("1970-01-01")


class FileProcessor:
    """Reads corridor logs, crash logs, configs and datasets."""

    @staticmethod
    def read_csv(file_path: Union[str, Path], required: Sequence[str]) -> pd.DataFrame:
        """Read a CSV file and check its header.

        Args:
            file_path: CSV path (header row required, UTF-8)
            required: Columns that must be present

        Returns:
            DataFrame with the file contents

        Raises:
            FileSystemError: If the file is missing or unreadable
            DataProcessingError: If a required column is absent
        """
        path = Path(file_path)
        if not path.exists():
            raise FileSystemError(f"File not found: {path}")
        try:
            frame = pd.read_csv(path, encoding='utf-8', dtype={'id': str, 'segment_id': str,
                                                                'intersection_id': str, 'up_int': str,
                                                                'down_int': str, 'stratum_id': str,
                                                                'unit_id': str})
        except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as e:
            raise DataProcessingError(f"Cannot parse CSV file: {path}", details={'error': str(e)})
        missing = [c for c in required if c not in frame.columns]
        if missing:
            raise DataProcessingError(
                f"{path.name} is missing columns: {', '.join(missing)}",
                details={'columns': list(frame.columns)}
            )
        return frame

    @staticmethod
    def to_epoch_seconds(column: pd.Series) -> np.ndarray:
        """Vectorized ISO-8601 to epoch seconds conversion."""
        try:
            parsed = pd.to_datetime(column, format='ISO8601')
        except (ValueError, TypeError) as e:
            raise DataProcessingError(f"Invalid timestamp in column '{column.name}'", details={'error': str(e)})
        return ((parsed - EPOCH_TIMESTAMP) // pd.Timedelta(seconds=1)).to_numpy(dtype=np.int64)

    @staticmethod
    def load_segments(file_path: Union[str, Path]) -> Dict[str, Segment]:
        """Load ``segments.csv`` keyed by segment id."""
        frame = FileProcessor.read_csv(file_path, ['id', 'length_mi', 'speed_limit_mph', 'up_int', 'down_int'])
        segments = {}
        for row in frame.itertuples(index=False):
            segments[row.id] = Segment(
                id=row.id,
                length=float(row.length_mi),
                speed_limit=float(row.speed_limit_mph),
                upstream_intersection=row.up_int,
                downstream_intersection=row.down_int,
            )
        return segments

    @staticmethod
    def load_bluetooth(file_path: Union[str, Path], segments: Dict[str, Segment]) -> List[TraversalSample]:
        """Load ``bluetooth.csv`` as speed samples ordered by exit time per segment.

        Rows that cannot yield a speed are logged and skipped.
        """
        frame = FileProcessor.read_csv(file_path, ['segment_id', 'exit_time', 'travel_time_s'])
        frame = frame.assign(exit_seconds=FileProcessor.to_epoch_seconds(frame['exit_time']))
        frame = frame.sort_values(['segment_id', 'exit_seconds'], kind='mergesort')

        samples = []
        rejected = 0
        rows = zip(frame['segment_id'], frame['exit_seconds'], frame['travel_time_s'].astype(float))
        for i, (segment_id, exit_time, travel_time) in enumerate(rows):
            segment = segments.get(segment_id)
            if segment is None:
                logger.warning(f"Bluetooth row for unknown segment {segment_id} skipped")
                rejected += 1
                continue
            try:
                speed = space_mean_speed(segment, travel_time)
            except RejectedSampleError as e:
                logger.debug(f"Rejected Bluetooth row {i}: {e.message}")
                rejected += 1
                continue
            samples.append(TraversalSample.model_construct(
                segment_id=segment_id, exit_time=int(exit_time),
                travel_time=float(travel_time), speed=speed,
            ))
        if rejected:
            logger.warning(f"Rejected {rejected} Bluetooth rows without a valid speed")
        return samples

    @staticmethod
    def load_phases(file_path: Union[str, Path]) -> List[PhaseInterval]:
        """Load ``phases.csv`` green intervals."""
        frame = FileProcessor.read_csv(file_path, ['intersection_id', 'movement', 'start', 'end'])
        starts = FileProcessor.to_epoch_seconds(frame['start'])
        ends = FileProcessor.to_epoch_seconds(frame['end'])
        phases = []
        for intersection, movement, start, end in zip(frame['intersection_id'], frame['movement'], starts, ends):
            phases.append(PhaseInterval(intersection_id=intersection, movement=Movement(movement),
                                        start=int(start), end=int(end)))
        return phases

    @staticmethod
    def load_volumes(file_path: Union[str, Path]) -> List[VolumeRecord]:
        """Load ``volumes.csv`` 15-minute counts."""
        frame = FileProcessor.read_csv(file_path, ['intersection_id', 'movement', 'bin_start', 'count'])
        bin_starts = FileProcessor.to_epoch_seconds(frame['bin_start'])
        lengths = frame['bin_length'].to_numpy(dtype=int) if 'bin_length' in frame.columns \
            else np.full(len(frame), 900, dtype=int)
        return [
            VolumeRecord(intersection_id=intersection, movement=Movement(movement),
                         bin_start=int(start), bin_length=int(length), count=float(count))
            for intersection, movement, start, length, count
            in zip(frame['intersection_id'], frame['movement'], bin_starts, lengths, frame['count'])
        ]

    @staticmethod
    def load_weather(file_path: Union[str, Path]) -> List[WeatherRecord]:
        """Load ``weather.csv`` records in time order."""
        frame = FileProcessor.read_csv(file_path, ['timestamp', 'rainy', 'visibility_mi'])
        timestamps = FileProcessor.to_epoch_seconds(frame['timestamp'])
        records = [
            WeatherRecord(timestamp=int(t), rainy=int(rainy), visibility=float(visibility))
            for t, rainy, visibility in zip(timestamps, frame['rainy'], frame['visibility_mi'])
        ]
        return sorted(records, key=lambda r: r.timestamp)

    @staticmethod
    def load_crashes(file_path: Union[str, Path]) -> List[Crash]:
        """Load ``crashes.csv``; ids default to ``<segment>-<epoch seconds>``."""
        frame = FileProcessor.read_csv(file_path, ['segment_id', 'timestamp'])
        timestamps = FileProcessor.to_epoch_seconds(frame['timestamp'])
        ids = frame['id'] if 'id' in frame.columns else [None] * len(frame)
        crashes = [
            Crash(id=crash_id if isinstance(crash_id, str) else f"{segment_id}-{int(t)}",
                  segment_id=segment_id, timestamp=int(t))
            for crash_id, segment_id, t in zip(ids, frame['segment_id'], timestamps)
        ]
        return sorted(crashes, key=lambda c: (c.timestamp, c.segment_id, c.id))

    @staticmethod
    def load_logs(directory: Union[str, Path]) -> TrafficLogs:
        """Load all five corridor logs from one directory."""
        base = Path(directory)
        if not base.is_dir():
            raise FileSystemError(f"Log directory not found: {base}")
        segments = FileProcessor.load_segments(base / LOG_FILES['segments'])
        logs = TrafficLogs(
            segments=segments,
            samples=FileProcessor.load_bluetooth(base / LOG_FILES['bluetooth'], segments),
            phases=FileProcessor.load_phases(base / LOG_FILES['phases']),
            volumes=FileProcessor.load_volumes(base / LOG_FILES['volumes']),
            weather=FileProcessor.load_weather(base / LOG_FILES['weather']),
        )
        logger.info(
            f"Loaded {len(segments)} segments, {len(logs.samples)} Bluetooth samples, "
            f"{len(logs.phases)} phase intervals, {len(logs.volumes)} volume bins, "
            f"{len(logs.weather)} weather records"
        )
        return logs

    @staticmethod
    def load_config_model(file_path: Union[str, Path], model: Type[ModelT],
                          overrides: Optional[dict] = None) -> ModelT:
        """Validate a JSON config file against a pydantic model.

        Args:
            file_path: JSON document
            model: Pydantic model class
            overrides: Values taking precedence over the file (e.g. a CLI seed)

        Returns:
            Validated model instance
        """
        data = safe_json_load(Path(file_path))
        if overrides:
            data.update({k: v for k, v in overrides.items() if v is not None})
        return model.model_validate(data)

    @staticmethod
    def load_dataset(file_path: Union[str, Path]) -> Dataset:
        """Rebuild a matched dataset from ``dataset.csv``."""
        frame = FileProcessor.read_csv(file_path, ['stratum_id', 'is_crash', 'split', 'segment_id', 'timestamp'])
        n_slices = 0
        while slice_column(COVARIATE_NAMES[0], n_slices + 1) in frame.columns:
            n_slices += 1
        missing = [c for c in dataset_columns(n_slices) if c not in frame.columns]
        if n_slices == 0 or missing:
            raise DataProcessingError(f"{Path(file_path).name} is not a dataset file",
                                      details={'missing': missing})
        frame = frame.assign(epoch_seconds=FileProcessor.to_epoch_seconds(frame['timestamp']))

        strata = []
        split = {}
        for stratum_id, rows in frame.groupby('stratum_id', sort=False):
            events = []
            for _, row in rows.iterrows():
                slices = [FeatureVector(**FileProcessor._slice_values(row, k)) for k in range(1, n_slices + 1)]
                events.append(Event(stratum_id=stratum_id, is_crash=int(row['is_crash']),
                                    segment_id=str(row['segment_id']),
                                    timestamp=int(row['epoch_seconds']), slices=slices))
            cases = [e for e in events if e.is_crash == 1]
            if len(cases) != 1:
                raise DataProcessingError(f"Stratum {stratum_id} has {len(cases)} crash events")
            case = cases[0]
            time_of_day = TimeUtils.seconds_of_day(case.timestamp)
            if any(TimeUtils.seconds_of_day(e.timestamp) != time_of_day for e in events):
                # hour matching
                time_of_day -= time_of_day % HOUR
            strata.append(Stratum(
                id=stratum_id,
                case=case,
                controls=[e for e in events if e.is_crash == 0],
                matching_key=(case.segment_id, WEEKDAY_NAMES[TimeUtils.day_of_week(case.timestamp)], time_of_day),
            ))
            label = rows['split'].iloc[0]
            if isinstance(label, str) and label:
                split[stratum_id] = SplitLabel(label)

        if not strata:
            return Dataset()
        return Dataset(strata=strata, m=strata[0].m, split=split)

    @staticmethod
    def _slice_values(row: pd.Series, k: int) -> dict:
        values = {}
        for name in COVARIATE_NAMES:
            value = row[slice_column(name, k)]
            values[name] = None if pd.isna(value) else float(value)
        if values['rainy'] is not None:
            values['rainy'] = int(values['rainy'])
        values['sample_count'] = int(row[slice_column('sample_count', k)])
        return values

    @staticmethod
    def load_chains(file_path: Union[str, Path], spec: ModelSpec,
                    phi_path: Optional[Union[str, Path]] = None) -> ChainSet:
        """Rebuild retained draws from ``chains.csv``.

        Unit deviation means are read from ``phi_path``, by default
        ``phi_means.csv`` next to the draws; without that file the chains
        carry none.
        """
        names = spec.coefficient_names + [f"sigma2_{spec.coefficient_names[i]}" for i in spec.random_indices]
        frame = FileProcessor.read_csv(file_path, ['chain', 'iteration'] + names + ['deviance'])
        frame = frame.sort_values(['chain', 'iteration'], kind='mergesort')
        n_chains = int(frame['chain'].nunique())
        sizes = frame.groupby('chain').size()
        if n_chains == 0 or sizes.nunique() != 1:
            raise DataProcessingError(f"{Path(file_path).name} has chains of unequal length",
                                      details={'lengths': sizes.tolist()})
        n_kept = int(sizes.iloc[0])
        iterations = frame['iteration'].to_numpy()[:n_kept]
        thin = int(iterations[1] - iterations[0]) if n_kept > 1 else 1
        return ChainSet(
            scalar_names=names,
            draws=frame[names].to_numpy(dtype=float).reshape(n_chains, n_kept, len(names)),
            deviance=frame['deviance'].to_numpy(dtype=float).reshape(n_chains, n_kept),
            n_iter=int(iterations[-1]),
            burn_in=int(iterations[0]) - thin,
            thin=thin,
            **FileProcessor._load_phi_means(phi_path or Path(file_path).with_name("phi_means.csv"), spec, n_chains),
        )

    @staticmethod
    def _load_phi_means(path: Union[str, Path], spec: ModelSpec, n_chains: int) -> Dict[str, object]:
        """Deviation means keyed by unit id, in the order the units were written."""
        random_names = [spec.coefficient_names[i] for i in spec.random_indices]
        if not random_names or not Path(path).exists():
            return {}
        frame = FileProcessor.read_csv(path, ['chain', 'coefficient', 'unit_id', 'phi_mean'])
        unit_ids = list(pd.unique(frame['unit_id']))
        table = frame.pivot_table(index=['chain', 'coefficient'], columns='unit_id',
                                  values='phi_mean', aggfunc='first')
        index = pd.MultiIndex.from_product([range(n_chains), random_names], names=['chain', 'coefficient'])
        table = table.reindex(index=index, columns=unit_ids)
        if table.isna().to_numpy().any():
            raise DataProcessingError(f"{Path(path).name} does not match the model's chains and random coefficients",
                                      details={'random': random_names, 'chains': n_chains})
        phi_mean = table.to_numpy(dtype=float).reshape(n_chains, len(random_names), len(unit_ids))
        return {'phi_mean': phi_mean, 'unit_ids': unit_ids}
