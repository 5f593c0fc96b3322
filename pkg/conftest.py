# conftest.py - shared fixtures and the slow-test switch

import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

from src.config import SystemConfig


def pytest_addoption(parser):
    parser.addoption('--runslow', action='store_true', default=False, help="run slow tests (training runs)")


def pytest_configure(config):
    config.addinivalue_line('markers', 'slow: long training or benchmark run, needs --runslow')


def pytest_collection_modifyitems(config, items):
    if config.getoption('--runslow'):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if 'slow' in item.keywords:
            item.add_marker(skip_slow)


# fixtures

@pytest.fixture
def rng():
    yield np.random.default_rng(12345)


@pytest.fixture
def system():
    yield SystemConfig()


@pytest.fixture
def small_system():
    yield SystemConfig(num_users=3)
