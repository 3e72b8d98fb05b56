from dataclasses import replace

import numpy as np
import pytest

from rfidar.model import PipelineConfig
from rfidar.pipeline import build_instances
from rfidar.sim import load_scenario, simulate_dataset

PLANTED_SCENARIO = """
# two antennas x four parts; only antenna a0 sees parts p1 and p2 move,
# and only their motion differs between activities
[scenario]
activities = still, wave, swing
subjects = 2
instances_per_class = 6
duration_s = 20
noise_sigma_db = 1.5
subject_offset_db = 2
subject_scale_spread = 0.1
freq_spread = 0.05

[layout]
antennas = a0, a1
parts = p0, p1, p2, p3
tags_per_part = 4

[geometry]
distance.a0 = 0.5, 0.5, 0.5, 0.5
distance.a1 = 0.5, 0.5, 0.5, 0.5
angle.a0 = 30, 30, 30, 30
angle.a1 = 30, 30, 30, 30
coupling.a0 = 0, 1, 1, 0
coupling.a1 = 0, 0, 0, 0
blocker.a0 = none, none, none, none
blocker.a1 = none, none, none, none
part_phase_rad = 0, 0, 1.5, 0

[activity.still]
distance_scale = 1, 1, 1, 1
amplitude_db = 1, 0.3, 0.3, 1
frequency_hz = 0.5, 0.2, 0.2, 0.5
miss_probability = 0.05
blockage_rate = 0

[activity.wave]
distance_scale = 1, 1, 1, 1
amplitude_db = 1, 6, 0.3, 1
frequency_hz = 0.5, 1.0, 0.2, 0.5
miss_probability = 0.05
blockage_rate = 0

[activity.swing]
distance_scale = 1, 1, 1, 1
amplitude_db = 1, 0.3, 6, 1
frequency_hz = 0.5, 0.2, 0.6, 0.5
miss_probability = 0.05
blockage_rate = 0
"""


@pytest.fixture(scope="session")
def default_scenario():
    return load_scenario()


@pytest.fixture(scope="session")
def default_dataset(default_scenario):
    """The shipped scenario at seed 42: 256 traces of 60 s."""
    return [t for t, _ in simulate_dataset(default_scenario, 42)]


@pytest.fixture(scope="session")
def class_names(default_scenario):
    return default_scenario.activities


@pytest.fixture(scope="session")
def instances_l5(default_dataset, default_scenario):
    return build_instances(default_dataset, PipelineConfig(window_len_s=5.0),
                           default_scenario.layout, default_scenario.activities)


@pytest.fixture(scope="session")
def instances_l5_raw(default_dataset, default_scenario):
    return build_instances(default_dataset, PipelineConfig(window_len_s=5.0),
                           default_scenario.layout, default_scenario.activities,
                           completion=False)


@pytest.fixture(scope="session")
def planted_scenario_text():
    return PLANTED_SCENARIO


@pytest.fixture(scope="session")
def planted_instances():
    from rfidar.sim import parse_scenario

    sc = parse_scenario(PLANTED_SCENARIO, "planted")
    traces = [t for t, _ in simulate_dataset(sc, 7)]
    # one antenna cycle is 4 s
    cfg = PipelineConfig(window_len_s=4.0)
    return build_instances(traces, cfg, sc.layout, sc.activities), sc.layout


def blobs(n_per_class, centers, sigma, seed=0):
    rng = np.random.default_rng(seed)
    X = np.concatenate([c + sigma * rng.standard_normal((n_per_class, len(c)))
                        for c in centers])
    y = np.repeat(np.arange(len(centers)), n_per_class)
    return X, y


# acceptance verdicts, echoed again in the terminal summary so they survive output capture
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
