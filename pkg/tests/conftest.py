"""
Shared pytest setup for the entity linking toolkit tests.

The toolkit is a flat set of top-level modules, so the repository root is put
on the Python path here. Acceptance-scale runs are marked ``slow`` and only
run with ``--runslow``.
"""

import os
import sys

import pytest

# Add the parent directory to the Python path
sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

import textprep  # noqa: E402


def pytest_addoption(parser):
    parser.addoption('--runslow', action='store_true', default=False,
                     help='Run acceptance-scale tests marked slow')


def pytest_configure(config):
    config.addinivalue_line('markers', 'slow: acceptance-scale run, skipped unless --runslow')


def pytest_collection_modifyitems(config, items):
    if config.getoption('--runslow'):
        return
    skip_slow = pytest.mark.skip(reason='needs --runslow')
    for item in items:
        if 'slow' in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture(autouse=True)
def default_suffix_rules():
    """Every test starts from the built-in suffix rules."""
    textprep.set_suffix_rules()
    yield
    textprep.set_suffix_rules()
