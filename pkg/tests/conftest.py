import pytest

from ingestbench.fsio import StorageTier


@pytest.fixture
def tier_factory(tmp_path):
    """Create isolated tiers under the test's tmp dir."""
    counter = {"n": 0}

    def make(label="t", **kwargs):
        counter["n"] += 1
        return StorageTier(label, tmp_path / f"{label}{counter['n']}", **kwargs)

    return make


@pytest.fixture
def tier(tier_factory):
    return tier_factory("ssd")
