"""Общие настройки pytest: маркер slow для длинных прогонов."""

from __future__ import annotations

import os

import pytest


def _slow_enabled() -> bool:
    return os.getenv("VF_SLOW", "").strip().lower() in ("1", "true", "yes")


def pytest_configure(config: pytest.Config) -> None:
    config.addinivalue_line("markers", "slow: длинные прогоны на полном синтетическом наборе (включаются VF_SLOW=1)")


def pytest_collection_modifyitems(config: pytest.Config, items: list[pytest.Item]) -> None:
    if _slow_enabled():
        return
    skip = pytest.mark.skip(reason="длинный прогон; включите VF_SLOW=1")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip)
