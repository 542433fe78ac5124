import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

import numpy as np
import pytest


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(20240811)


def pytest_report_header(config):
    from loci_lab import _engine
    return f"loci-lab engine backend: {_engine.BACKEND}"
