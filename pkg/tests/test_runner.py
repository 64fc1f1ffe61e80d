"""Тесты для модуля core.runner (пул испытаний)."""

from __future__ import annotations

import threading
import time

import pytest

from core import runner
from core.errors import InvalidInput


def test_run_trials_keeps_submission_order() -> None:
    """Результаты возвращаются в порядке отправки, а не завершения."""

    def job(value: int, delay: float):  # type: ignore[no-untyped-def]
        def run() -> int:
            time.sleep(delay)
            return value

        return run

    jobs = [(f"t{i}", job(i, 0.05 * (3 - i))) for i in range(4)]
    trials = runner.run_trials(jobs, threads=4)
    assert [t.name for t in trials] == ["t0", "t1", "t2", "t3"]
    assert [t.result for t in trials] == [0, 1, 2, 3]
    assert all(t.ok and t.elapsed_s is not None for t in trials)


def test_failure_is_isolated() -> None:
    """Ошибка одного испытания фиксируется, остальные завершаются."""

    def bad() -> None:
        raise InvalidInput("плохая доля")

    finished: list[str] = []
    lock = threading.Lock()

    def on_finish(trial: runner.Trial) -> None:
        with lock:
            finished.append(trial.name)
        raise RuntimeError("сбой колбэка не должен мешать")

    trials = runner.run_trials([("ok", lambda: 1), ("bad", bad), ("ok2", lambda: 2)], threads=2, on_finish=on_finish)
    assert [t.state for t in trials] == ["completed", "failed", "completed"]
    assert trials[1].error == "плохая доля"
    assert trials[1].error_type == "InvalidInput"
    assert not trials[1].ok
    assert sorted(finished) == ["bad", "ok", "ok2"]


def test_thread_limit_from_env(monkeypatch: pytest.MonkeyPatch) -> None:
    """VF_THREADS задаёт число потоков; мусор и неположительные значения не ломают пул."""
    monkeypatch.delenv("VF_THREADS", raising=False)
    assert runner.thread_limit() == 1
    assert runner.thread_limit(default=3) == 3
    monkeypatch.setenv("VF_THREADS", "4")
    assert runner.thread_limit() == 4
    monkeypatch.setenv("VF_THREADS", "abc")
    assert runner.thread_limit(default=2) == 2
    monkeypatch.setenv("VF_THREADS", "0")
    assert runner.thread_limit() == 1
    monkeypatch.setenv("VF_THREADS", "3")
    with runner.TrialRunner() as pool:
        assert pool.max_workers == 3
