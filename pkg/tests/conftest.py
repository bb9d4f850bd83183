import os

import pytest

from lcmopg.config import reset_settings


def pytest_collection_modifyitems(config, items):
    if os.environ.get("LCMOPG_RUN_SLOW") == "1":
        return
    skip = pytest.mark.skip(reason="slow; set LCMOPG_RUN_SLOW=1")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip)


@pytest.fixture
def output_root(tmp_path, monkeypatch):
    root = tmp_path / "runs"
    monkeypatch.setenv("LCMOPG_OUTPUT_ROOT", str(root))
    monkeypatch.setenv("LCMOPG_WORKERS", "1")
    reset_settings()
    yield root
    reset_settings()
