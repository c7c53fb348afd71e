import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from evmpc import data  # noqa: E402


@pytest.fixture(scope="session")
def sample_day():
    """Bundled 24 h of RegD traces and prices."""
    regd = data.load_regd(data.SAMPLE_DIR / "regd.csv.gz")
    prices = data.load_prices(data.SAMPLE_DIR / "prices.csv", regd)
    return prices, regd
