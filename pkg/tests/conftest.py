"""
Shared fixtures: every test runs against fresh default settings inside its own directory.
"""
from fractions import Fraction

import pytest

from config import settings as settings_module
from config.settings import configure_settings
from models import BidProfile, Realization


@pytest.fixture(autouse=True)
def isolated_settings(tmp_path, monkeypatch):
    """Fresh settings; outputs and logs land under tmp_path."""
    monkeypatch.chdir(tmp_path)
    original = settings_module.settings
    configure_settings()
    yield settings_module.settings
    settings_module.settings = original


@pytest.fixture
def exact_bids():
    def make(*values):
        return BidProfile(tuple(Fraction(v) for v in values))

    return make


@pytest.fixture
def realization():
    def make(*rows: str) -> Realization:
        return Realization.from_text("\n".join(rows))

    return make
