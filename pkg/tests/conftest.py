from __future__ import annotations

import pytest

from helpers import run_bundled


@pytest.fixture
def walkthrough_world():
    return run_bundled("fig2")
