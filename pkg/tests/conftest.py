"""Shared fixtures; the reusable helpers live in support.py."""

import pytest


@pytest.fixture
def fake_sleep():
    calls = []

    def _sleep(seconds):
        calls.append(seconds)

    _sleep.calls = calls
    return _sleep
