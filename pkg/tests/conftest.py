import os

import numpy as np
import pytest

from slimgraph import (
    build_channel_groups,
    build_toy_model,
    group_units,
    load_model_file,
    make_toy_dataset,
)

FIXTURE_DIR = os.path.join(os.path.dirname(__file__), "..", "fixtures")
HELPER_DIR = os.path.join(os.path.dirname(__file__), "helpers")


def fixture_path(name: str) -> str:
    return os.path.abspath(os.path.join(FIXTURE_DIR, name))


def helper_path(name: str) -> str:
    return os.path.abspath(os.path.join(HELPER_DIR, name))


@pytest.fixture(scope="session")
def toy_a():
    return load_model_file(fixture_path("toy_mt_a.onnx"))


@pytest.fixture(scope="session")
def toy_b():
    return load_model_file(fixture_path("toy_mt_b.onnx"))


@pytest.fixture(scope="session")
def groups_a(toy_a):
    return build_channel_groups(toy_a)


@pytest.fixture(scope="session")
def units_a(groups_a):
    return group_units(groups_a)


@pytest.fixture(scope="session")
def data_a(toy_a):
    return make_toy_dataset(toy_a, samples=32, batch_size=16, seed=0)


@pytest.fixture(scope="session")
def toy_a_built():
    # Built in process rather than loaded, for generator/codec cross-checks.
    return build_toy_model("toy_mt_a", seed=0)


def random_legal_drop(groups, units, rng: np.random.Generator, min_channels: int = 1):
    """A nonempty dropped set that keeps every producer above the floor."""
    dropped: set[int] = set()
    for unit in units:
        if not unit.group_ids:
            continue
        budget = unit.total_channels - min_channels
        if budget <= 0:
            continue
        take = int(rng.integers(0, min(budget, len(unit.group_ids)) + 1))
        if take:
            picked = rng.choice(len(unit.group_ids), size=take, replace=False)
            dropped.update(unit.group_ids[i] for i in picked)
    if not dropped:
        unit = next(u for u in units if u.group_ids and u.total_channels > min_channels)
        dropped.add(unit.group_ids[int(rng.integers(0, len(unit.group_ids)))])
    return frozenset(dropped)
