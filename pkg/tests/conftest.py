from __future__ import annotations

import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture(scope="session")
def shared_tables(request):
    """Critical-value cache that persists across test sessions."""
    return request.config.cache.mkdir("batchuq-tables")
