"""Тесты для модуля core.train (шаг ADAM, цикл обучения, разогрев, колбэки)."""

from __future__ import annotations

import numpy as np

from core import model as model_core
from core import numerics as num
from core import selfexpr as se
from core import train
from core.data import MultiModalDataset
from core.errors import InvalidInput, NumericalError, ShapeError


def _small_setup(seed: int = 0) -> tuple[model_core.VmscModel, MultiModalDataset]:
    rng = num.make_rng(seed)
    batch = MultiModalDataset(modalities=[rng.uniform(0.0, 1.0, size=(4, 3, 3, 1)) for _ in range(2)])
    model = model_core.build_model([1, 3], batch.image_shapes, batch.n, num.make_rng(seed + 1))
    return model, batch


def test_train_config_validation() -> None:
    """warmup_epochs > epochs или неизвестный ключ — InvalidInput."""
    for values in ({"epochs": 5, "warmup_epochs": 6}, {"momentum": 0.9}, {"learning_rate": 0.0}):
        try:
            train.make_train_config(**values)
            assert False, f"Ожидалась ошибка для {values}"
        except InvalidInput:
            pass
    config = train.make_train_config(epochs=10, warmup_epochs=2)
    assert config.learning_rate == 1e-3


def test_adam_zero_gradient() -> None:
    """Нулевой градиент на свежем состоянии — параметры не меняются."""
    params = np.array([0.3, -1.2, 5.0])
    config = train.make_train_config(learning_rate=0.1)
    updated, state = train.adam_step(params, np.zeros(3), train.AdamState.zeros(3), config)
    assert np.array_equal(updated, params)
    assert state.t == 1


def test_adam_single_step_closed_form() -> None:
    """Один шаг для скаляра, g = 1, lr = 0.1: явная формула с коррекцией смещения."""
    config = train.make_train_config(learning_rate=0.1, beta1=0.9, beta2=0.999, eps=1e-8)
    updated, state = train.adam_step(np.array([0.0]), np.array([1.0]), train.AdamState.zeros(1), config)
    m_hat = (0.1 * 1.0) / (1.0 - 0.9)
    v_hat = (0.001 * 1.0) / (1.0 - 0.999)
    expected = -0.1 * m_hat / (np.sqrt(v_hat) + 1e-8)
    assert np.isclose(updated[0], expected, rtol=0.0, atol=1e-15)
    assert -0.1 < updated[0] < -0.0999999
    assert np.isclose(state.m[0], 0.1) and np.isclose(state.v[0], 0.001)


def test_adam_errors() -> None:
    """Несовпадение форм — ShapeError; nan в градиенте — NumericalError."""
    config = train.make_train_config()
    try:
        train.adam_step(np.zeros(2), np.zeros(3), train.AdamState.zeros(2), config)
        assert False, "Ожидалась ShapeError"
    except ShapeError:
        pass
    try:
        train.adam_step(np.zeros(2), np.array([0.0, np.nan]), train.AdamState.zeros(2), config)
        assert False, "Ожидалась NumericalError"
    except NumericalError:
        pass


def test_fit_zero_epochs() -> None:
    """epochs = 0 — модель не меняется, история пуста."""
    model, batch = _small_setup()
    before = model_core.parameter_vector(model).copy()
    result = train.fit(model, batch, train.make_train_config(epochs=0, warmup_epochs=0))
    assert result.history == []
    assert result.final is None
    assert np.array_equal(model_core.parameter_vector(model), before)


def test_fit_is_deterministic() -> None:
    """Два одинаковых запуска дают побитово одинаковые параметры."""
    config = train.make_train_config(epochs=15, warmup_epochs=5, learning_rate=1e-2)
    vectors = []
    for _ in range(2):
        model, batch = _small_setup(3)
        train.fit(model, batch, config)
        vectors.append(model_core.parameter_vector(model))
    assert np.array_equal(vectors[0], vectors[1])


def test_warmup_keeps_w() -> None:
    """Во время разогрева W не меняется, а reg и selfexpr в истории равны нулю."""
    model, batch = _small_setup(5)
    w_before = se.coefficient_matrix(model.selfexpr).copy()
    result = train.fit(model, batch, train.make_train_config(epochs=4, warmup_epochs=4, learning_rate=1e-2))
    assert np.array_equal(se.coefficient_matrix(model.selfexpr), w_before)
    assert all(r.warmup and r.reg == 0.0 and r.selfexpr == 0.0 for r in result.history)


def test_fit_decreases_loss() -> None:
    """Полная целевая функция убывает за несколько десятков эпох."""
    model, batch = _small_setup(7)
    result = train.fit(model, batch, train.make_train_config(epochs=60, warmup_epochs=0, learning_rate=1e-2))
    assert result.history[-1].total < result.history[0].total


def test_fit_two_sample_subspace() -> None:
    """Два образца в одномерном подпространстве: невязка самовыражения < 1e-3, W₀₁ и W₁₀ ненулевые."""
    batch = MultiModalDataset(modalities=[np.stack([np.full((2, 2, 1), 0.5), np.full((2, 2, 1), 0.6)])])
    model = model_core.build_model([1], batch.image_shapes, 2, num.make_rng(0), lam=1e-4)
    config = train.make_train_config(epochs=2000, warmup_epochs=0, learning_rate=5e-3, log_every=500)
    train.fit(model, batch, config)
    _, parts = model_core.loss(model, batch)
    w = se.coefficient_matrix(model.selfexpr)
    assert parts.selfexpr < 1e-3
    assert abs(w[0, 1]) > 0.0 and abs(w[1, 0]) > 0.0
    assert w[0, 0] == 0.0 and w[1, 1] == 0.0


def test_fit_callbacks() -> None:
    """Ошибка колбэка прогресса не срывает обучение; контрольные точки — каждые log_every эпох и в конце."""
    model, batch = _small_setup(9)
    seen: list[int] = []
    saved: list[int] = []

    def progress(epoch: int, total: int, record: train.EpochRecord) -> None:
        seen.append(epoch)
        raise RuntimeError("сбой отображения")

    config = train.make_train_config(epochs=5, warmup_epochs=1, log_every=2)
    result = train.fit(model, batch, config, progress_callback=progress, checkpoint_callback=lambda e, _: saved.append(e))
    assert seen == [1, 2, 3, 4, 5]
    assert saved == [2, 4, 5]
    assert len(result.history) == 5
    assert result.history[0].warmup and not result.history[1].warmup


def test_fit_reports_divergence_epoch() -> None:
    """Нечисловые потери — NumericalError с номером эпохи и слагаемым."""
    batch = MultiModalDataset(modalities=[np.full((2, 2, 2, 1), 1e200)])
    model = model_core.build_model([1], batch.image_shapes, 2, num.make_rng(0))
    try:
        with np.errstate(over="ignore", invalid="ignore"):
            train.fit(model, batch, train.make_train_config(epochs=3, warmup_epochs=0))
        assert False, "Ожидалась NumericalError"
    except NumericalError as exc:
        assert exc.epoch == 1
        assert exc.term == "latent"


def test_write_loss_csv(tmp_path) -> None:
    """CSV кривой потерь: фиксированный заголовок и строка на эпоху."""
    model, batch = _small_setup(11)
    result = train.fit(model, batch, train.make_train_config(epochs=3, warmup_epochs=1))
    path = train.write_loss_csv(result.history, tmp_path / "loss.csv")
    lines = path.read_text(encoding="utf-8").splitlines()
    assert lines[0] == "epoch,total,reg,recon,selfexpr"
    assert len(lines) == 4
    assert lines[1].startswith("1,")
