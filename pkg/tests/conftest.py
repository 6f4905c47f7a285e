import pytest


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run long jobs (n=5 two-phase)")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip = pytest.mark.skip(reason="long job; enable with --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip)
