# tests/unit/conftest.py
"""Pytest configuration and shared fixtures for qnd-readout unit tests."""

# Re-export all fixtures to make them available to tests
from tests.unit.fixtures.config import *
from tests.unit.fixtures.cli import *
from tests.unit.fixtures.models import *
from tests.unit.fixtures.traces import *
