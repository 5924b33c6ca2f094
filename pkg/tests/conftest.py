import numpy as np
import pytest

from softsurrogate import sepsis
from softsurrogate.data import BehaviorDataset, TargetDataset


@pytest.fixture(scope="session")
def spec():
    return sepsis.build_default_spec()


@pytest.fixture(scope="session")
def policies(spec):
    return sepsis.default_policies(spec)


def toy_behavior(s0, s1, g):
    s0, s1 = np.asarray(s0, float), np.asarray(s1, float)
    states = np.stack([s0, s1], axis=1)[:, :, None]
    return BehaviorDataset(states=states, rewards=np.zeros((s0.size, 0)), returns=g)


def toy_target(s0, s1):
    s0, s1 = np.asarray(s0, float), np.asarray(s1, float)
    return TargetDataset(states=np.stack([s0, s1], axis=1)[:, :, None], rewards=np.zeros((s0.size, 0)))


def discrete_behavior(ids, g):
    ids = np.asarray(ids, float)
    return BehaviorDataset(states=ids[:, None, None], rewards=np.zeros((ids.size, 0)), returns=g)


def discrete_target(ids):
    ids = np.asarray(ids, float)
    return TargetDataset(states=ids[:, None, None], rewards=np.zeros((ids.size, 0)))
