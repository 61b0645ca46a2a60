import os
import sys

import pytest

sys.path.insert(0, os.path.dirname(__file__))

from stackcopy.harness import load_scenario  # noqa: E402


@pytest.fixture(scope="session")
def scenarios():
    return {name: load_scenario(name) for name in ("A", "B", "C", "overlap")}
