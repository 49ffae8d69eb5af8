"""Test configuration and fixtures for Arterial Risk."""

import json
import tempfile
from pathlib import Path

import numpy as np
import pytest

from arterial_risk.models.case_control import Dataset, Event, SplitLabel, Stratum
from arterial_risk.models.network import FeatureVector, Segment
from arterial_risk.models.world import GroundTruth, WorldConfig
from arterial_risk.services.world_simulator import WorldSimulator
from arterial_risk.utils.time_utils import WEEK, WEEKDAY_NAMES, TimeUtils

# Complete slice covariates; test covariate values are added to these bases.
BASE_COVARIATES = {
    'avg_speed': 50.0,
    'std_speed': 5.0,
    'up_vol': 100.0,
    'down_vol': 100.0,
    'up_vol_lt': 10.0,
    'down_vol_lt': 10.0,
    'up_green_ratio': 50.0,
    'down_green_ratio': 50.0,
    'signal_coordination': 0.5,
    'rainy': 0,
    'visibility': 8.0,
}

TUESDAY_3PM = TimeUtils.parse_timestamp("2017-03-07T15:00:00")


def feature_vector(sample_count: int = 5, **offsets) -> FeatureVector:
    """Complete FeatureVector with the given covariates shifted from their bases."""
    values = dict(BASE_COVARIATES)
    for name, offset in offsets.items():
        values[name] = values[name] + float(offset)
    return FeatureVector(**values, sample_count=sample_count)


def make_dataset(x, covariates, train=None, segment_id="S1") -> Dataset:
    """Matched dataset from an array of shape (N, m + 1, K), case first.

    The same covariates are written to every slice. ``train`` lists the
    indices of training strata; the rest are validation. Without it the
    dataset is left unsplit.
    """
    x = np.asarray(x, dtype=float)
    n, size, _ = x.shape
    strata = []
    for i in range(n):
        stratum_id = f"C{i + 1:04d}"
        t0 = TUESDAY_3PM + i * 3600
        events = []
        for j in range(size):
            vector = feature_vector(**dict(zip(covariates, x[i, j])))
            events.append(Event(stratum_id=stratum_id, is_crash=int(j == 0), segment_id=segment_id,
                                timestamp=t0 + j * WEEK, slices=[vector] * 4))
        strata.append(Stratum(id=stratum_id, case=events[0], controls=events[1:],
                              matching_key=(segment_id, WEEKDAY_NAMES[TimeUtils.day_of_week(t0)], t0 % 86400)))
    split = {}
    if train is not None:
        train = set(train)
        split = {s.id: SplitLabel.TRAIN if i in train else SplitLabel.VALIDATION
                 for i, s in enumerate(strata)}
    return Dataset(strata=strata, m=size - 1, split=split)


@pytest.fixture
def temp_directory():
    """Create a temporary directory for tests."""
    with tempfile.TemporaryDirectory() as tmpdir:
        yield Path(tmpdir)


@pytest.fixture
def sample_config_file(temp_directory):
    """Create a sample configuration file."""
    config_content = """
[paths]
output_dir = "./my-runs"

[features]
min_samples = 3

[case_control]
m = 3
exclusion_hours = 2.0
matching = "hour"

[sampler]
n_chains = 2
n_iter = 400
burn_in = 100

[ui]
table_style = "minimal"
colors = false

[export]
decimal_places = 4
"""
    config_path = temp_directory / "config.toml"
    config_path.write_text(config_content)
    return config_path


@pytest.fixture
def segment():
    """Half-mile segment at 30 mph (ideal offset 60 s)."""
    return Segment(id="S1", length=0.5, speed_limit=30.0,
                   upstream_intersection="I0", downstream_intersection="I1")


@pytest.fixture
def dataset_factory():
    """Builder for matched datasets from covariate arrays."""
    return make_dataset


@pytest.fixture
def small_world_config():
    """Five-week, one-segment world whose every crash yields a full stratum."""
    return WorldConfig(
        seed=11,
        n_segments=1,
        weeks=5,
        active_hours=(7, 10),
        ground_truth=GroundTruth(n_strata=6, m=4),
    )


@pytest.fixture(scope="session")
def simulated_world(tmp_path_factory):
    """Directory holding one simulated world (logs, crashes.csv, truth.json)."""
    out = tmp_path_factory.mktemp("world")
    config = WorldConfig(seed=11, n_segments=1, weeks=5, active_hours=(7, 10),
                         ground_truth=GroundTruth(n_strata=6, m=4))
    WorldSimulator(config).run(out)
    return out


@pytest.fixture
def world_config_file(temp_directory):
    """world.json for the small world, without a seed."""
    path = temp_directory / "world.json"
    path.write_text(json.dumps({
        'n_segments': 1,
        'weeks': 5,
        'active_hours': [7, 10],
        'ground_truth': {'n_strata': 6, 'm': 4},
    }))
    return path
