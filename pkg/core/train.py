"""
Полнопакетное обучение модели методом ADAM.

Первые warmup_epochs эпох — разогрев автоэнкодера: слагаемые reg и selfexpr
равны нулю, W не меняется. Затем оптимизируется полная целевая функция.
После каждого шага W проецируется на маску и нулевую диагональ.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np
from numpy.typing import NDArray
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from core import model as model_core
from core import selfexpr as se
from core.data import MultiModalDataset
from core.debuglog import debug
from core.errors import InvalidInput, NumericalError, ShapeError

LOSS_COLUMNS = ("epoch", "total", "reg", "recon", "selfexpr")


class TrainConfig(BaseModel):
    """Параметры обучения. learning_rate по умолчанию — значение для пресета arl."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    learning_rate: float = Field(1e-3, gt=0)
    beta1: float = Field(0.9, ge=0, lt=1)
    beta2: float = Field(0.999, ge=0, lt=1)
    eps: float = Field(1e-8, gt=0)
    epochs: int = Field(1000, ge=0)
    warmup_epochs: int = Field(100, ge=0)
    seed: int = Field(0, ge=0)
    log_every: int = Field(100, ge=1)

    @model_validator(mode="after")
    def _warmup_fits(self) -> "TrainConfig":
        if self.warmup_epochs > self.epochs:
            raise ValueError(f"warmup_epochs ({self.warmup_epochs}) больше epochs ({self.epochs})")
        return self


def make_train_config(**values: object) -> TrainConfig:
    """Создаёт TrainConfig, переводя ошибки валидации в InvalidInput."""
    try:
        return TrainConfig(**values)  # type: ignore[arg-type]
    except ValidationError as exc:
        raise InvalidInput(f"Некорректные параметры обучения: {exc.errors()[0].get('msg')}") from exc


@dataclass
class AdamState:
    m: NDArray[np.float64]
    v: NDArray[np.float64]
    t: int = 0

    @classmethod
    def zeros(cls, size: int) -> "AdamState":
        return cls(m=np.zeros(size), v=np.zeros(size), t=0)


def adam_step(
    params: NDArray[np.float64],
    grads: NDArray[np.float64],
    state: AdamState,
    config: TrainConfig,
) -> tuple[NDArray[np.float64], AdamState]:
    """
    Один шаг ADAM с коррекцией смещения моментов. Аргументы не изменяются.

    Raises:
        ShapeError: размеры параметров, градиента и состояния не совпадают.
        NumericalError: градиент содержит nan/inf.
    """
    if not (params.shape == grads.shape == state.m.shape == state.v.shape):
        raise ShapeError("Параметры, градиент и состояние ADAM должны иметь одинаковую форму")
    if not np.all(np.isfinite(grads)):
        raise NumericalError("Нечисловой градиент на шаге ADAM", term="gradient")

    t = state.t + 1
    b1, b2 = config.beta1, config.beta2
    m = b1 * state.m + (1.0 - b1) * grads
    v = b2 * state.v + (1.0 - b2) * grads * grads
    m_hat = m / (1.0 - b1**t)
    v_hat = v / (1.0 - b2**t)
    updated = params - config.learning_rate * m_hat / (np.sqrt(v_hat) + config.eps)
    return updated, AdamState(m=m, v=v, t=t)


@dataclass
class EpochRecord:
    epoch: int
    total: float
    reg: float
    recon: float
    selfexpr: float
    warmup: bool = False

    def row(self) -> list[object]:
        return [self.epoch, repr(self.total), repr(self.reg), repr(self.recon), repr(self.selfexpr)]


@dataclass
class TrainResult:
    model: model_core.VmscModel
    history: list[EpochRecord] = field(default_factory=list)

    @property
    def final(self) -> Optional[EpochRecord]:
        return self.history[-1] if self.history else None


def fit(
    model: model_core.VmscModel,
    dataset: MultiModalDataset,
    config: TrainConfig,
    progress_callback: Callable[[int, int, EpochRecord], None] | None = None,
    checkpoint_callback: Callable[[int, model_core.VmscModel], None] | None = None,
) -> TrainResult:
    """
    Обучает модель на всём датасете (на месте) фиксированное число эпох.

    Args:
        model: модель, параметры которой обновляются.
        dataset: обучающие данные (число образцов = model.n).
        config: параметры ADAM и расписания.
        progress_callback: вызывается после каждой эпохи (эпоха, всего, запись потерь).
        checkpoint_callback: вызывается каждые log_every эпох и в конце обучения.

    Raises:
        ShapeError: данные не подходят модели.
        NumericalError: потери разошлись (epoch — номер эпохи).
    """
    history: list[EpochRecord] = []
    params = model_core.parameter_vector(model)
    state = AdamState.zeros(params.size)
    debug(
        f"fit: n={model.n} params={params.size} epochs={config.epochs} "
        f"warmup={config.warmup_epochs} lr={config.learning_rate}"
    )

    for e in range(config.epochs):
        epoch = e + 1
        warmup = e < config.warmup_epochs
        try:
            grads = model_core.loss_grad(model, dataset, warmup=warmup)
            params, state = adam_step(params, grads.vector(), state, config)
        except NumericalError as exc:
            debug(f"fit: расхождение на эпохе {epoch}: {exc}")
            raise NumericalError(f"Эпоха {epoch}: {exc}", term=exc.term, epoch=epoch) from exc
        model_core.set_parameter_vector(model, params)
        se.project(model.selfexpr)

        parts = grads.parts
        record = EpochRecord(
            epoch=epoch,
            total=parts.total,
            reg=parts.reg,
            recon=parts.recon,
            selfexpr=parts.selfexpr,
            warmup=warmup,
        )
        history.append(record)

        if progress_callback is not None:
            try:
                progress_callback(epoch, config.epochs, record)
            except Exception:
                # Ошибки в пользовательском колбэке не должны срывать обучение
                pass
        if epoch % config.log_every == 0:
            debug(
                f"fit: epoch={epoch} total={record.total:.6g} reg={record.reg:.6g} "
                f"recon={record.recon:.6g} selfexpr={record.selfexpr:.6g}"
            )
            if checkpoint_callback is not None and epoch != config.epochs:
                checkpoint_callback(epoch, model)

    if checkpoint_callback is not None and config.epochs > 0:
        checkpoint_callback(config.epochs, model)
    return TrainResult(model=model, history=history)


def write_loss_csv(history: list[EpochRecord], path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(LOSS_COLUMNS)
        for record in history:
            writer.writerow(record.row())
    return path
