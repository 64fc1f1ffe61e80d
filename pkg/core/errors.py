"""
Исключения ядра volterrafuse.

Ядро сообщает об ошибках только через эти классы (или ValueError/RuntimeError,
от которых они наследуются); форматирование сообщений и коды выхода
остаются на уровне CLI.
"""

from __future__ import annotations

from typing import Optional


class VolterraFuseError(RuntimeError):
    """Базовое исключение всех ошибок предметной области."""


class InvalidInput(VolterraFuseError, ValueError):
    """Некорректные аргументы операции (диапазоны, предусловия)."""


class ConstraintViolation(InvalidInput):
    """Нарушено структурное ограничение (например, F^L != N*C для CSC)."""


class ShapeError(InvalidInput):
    """Несовместимые формы тензоров/матриц."""


class NumericalError(VolterraFuseError):
    """
    Нечисловое значение (nan/inf) в вычислениях.

    term: имя слагаемого целевой функции, где обнаружена проблема (если известно);
    epoch: номер эпохи обучения (если ошибка возникла при обучении).
    """

    def __init__(self, message: str, term: Optional[str] = None, epoch: Optional[int] = None) -> None:
        super().__init__(message)
        self.term = term
        self.epoch = epoch


class StructureError(VolterraFuseError):
    """Построенная структура не обладает ожидаемым свойством."""


class AlignmentError(VolterraFuseError):
    """Модальности датасета не выровнены по образцам."""

    def __init__(self, message: str, filename: Optional[str] = None) -> None:
        super().__init__(message)
        self.filename = filename


class FormatError(VolterraFuseError):
    """Файл не читается или имеет неожиданный формат."""

    def __init__(self, message: str, path: Optional[str] = None) -> None:
        super().__init__(message)
        self.path = path
