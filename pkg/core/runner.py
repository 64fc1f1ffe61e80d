"""
Параллельный запуск изолированных испытаний (trials) в пуле потоков.

Каждое испытание — функция без аргументов со своим генератором случайных
чисел и своим каталогом вывода. Ошибка испытания не прерывает остальные:
она фиксируется в состоянии failed вместе с текстом.

Число потоков ограничивается переменной окружения VF_THREADS (по умолчанию 1).
"""

from __future__ import annotations

import os
import threading
import time
from concurrent.futures import Future, ThreadPoolExecutor
from dataclasses import dataclass
from typing import Any, Callable, Optional, Sequence

from core.debuglog import debug

TrialState = str  # queued | running | completed | failed


@dataclass
class Trial:
    index: int
    name: str
    state: TrialState = "queued"
    result: Any = None
    error: Optional[str] = None
    error_type: Optional[str] = None
    elapsed_s: Optional[float] = None
    _future: Optional[Future] = None

    @property
    def ok(self) -> bool:
        return self.state == "completed"


def thread_limit(default: int = 1) -> int:
    """Число потоков из VF_THREADS; некорректные значения заменяются значением по умолчанию."""
    raw = os.getenv("VF_THREADS", "").strip()
    try:
        value = int(raw) if raw else default
    except ValueError:
        value = default
    return max(1, value)


class TrialRunner:
    """
    Пул испытаний с ограниченным параллелизмом.

    on_finish вызывается после завершения каждого испытания (в потоке испытания);
    его ошибки игнорируются.
    """

    def __init__(
        self,
        threads: Optional[int] = None,
        on_finish: Callable[[Trial], None] | None = None,
    ) -> None:
        self.max_workers = max(1, int(threads or thread_limit()))
        self._on_finish = on_finish
        self._lock = threading.RLock()
        self._trials: list[Trial] = []
        self._executor = ThreadPoolExecutor(max_workers=self.max_workers, thread_name_prefix="vf-trial")

    def submit(self, name: str, job: Callable[[], Any]) -> Trial:
        with self._lock:
            trial = Trial(index=len(self._trials), name=name)
            self._trials.append(trial)
        trial._future = self._executor.submit(self._run, trial, job)
        return trial

    def trials(self) -> list[Trial]:
        with self._lock:
            return list(self._trials)

    def wait(self) -> list[Trial]:
        """Дожидается всех испытаний и возвращает их в порядке отправки."""
        for trial in self.trials():
            if trial._future is not None:
                trial._future.result()
        return self.trials()

    def shutdown(self) -> None:
        self._executor.shutdown(wait=True)

    def __enter__(self) -> "TrialRunner":
        return self

    def __exit__(self, *exc: object) -> None:
        self.shutdown()

    def _run(self, trial: Trial, job: Callable[[], Any]) -> None:
        with self._lock:
            trial.state = "running"
        debug(f"trial start: {trial.name}")
        start = time.perf_counter()
        try:
            result = job()
            with self._lock:
                trial.result = result
                trial.state = "completed"
        except Exception as e:
            with self._lock:
                trial.state = "failed"
                trial.error = str(e)
                trial.error_type = type(e).__name__
        finally:
            with self._lock:
                trial.elapsed_s = time.perf_counter() - start
        debug(f"trial finish: {trial.name} state={trial.state} elapsed={trial.elapsed_s:.2f}s")
        if self._on_finish is not None:
            try:
                self._on_finish(trial)
            except Exception:
                pass


def run_trials(
    jobs: Sequence[tuple[str, Callable[[], Any]]],
    threads: Optional[int] = None,
    on_finish: Callable[[Trial], None] | None = None,
) -> list[Trial]:
    """Выполняет испытания и возвращает их в порядке отправки (не в порядке завершения)."""
    with TrialRunner(threads=threads, on_finish=on_finish) as runner:
        for name, job in jobs:
            runner.submit(name, job)
        return runner.wait()
