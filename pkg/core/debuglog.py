"""
Условное логирование в файл для отладки.

Включается переменной окружения VF_DEBUG=1 (также true/yes). Путь к файлу
задаётся VF_DEBUG_LOG, по умолчанию tools/debug.log в корне проекта.
Логи не должны ломать вычисления, поэтому любые ошибки записи глотаются.
"""

from __future__ import annotations

import os
from datetime import datetime
from pathlib import Path

PROJECT_ROOT = Path(__file__).resolve().parent.parent


def enabled() -> bool:
    return os.getenv("VF_DEBUG", "").strip().lower() in ("1", "true", "yes")


def log_path() -> Path:
    custom = os.getenv("VF_DEBUG_LOG", "").strip()
    if custom:
        return Path(custom)
    return PROJECT_ROOT / "tools" / "debug.log"


def debug(message: str) -> None:
    """Дописывает строку с отметкой времени в отладочный лог (если он включён)."""
    try:
        if not enabled():
            return
        path = log_path()
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "a", encoding="utf-8") as f:
            f.write(f"[{datetime.now().isoformat(timespec='seconds')}] {message}\n")
    except Exception:
        pass
