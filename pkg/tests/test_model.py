"""Тесты для модуля core.model (кодирование, целевая функция, градиенты, пресеты)."""

from __future__ import annotations

import numpy as np

from core import csc
from core import model as model_core
from core import numerics as num
from core import selfexpr as se
from core import volterra as vt
from core.data import MultiModalDataset
from core.errors import InvalidInput, NumericalError, ShapeError


def _toy_batch(n: int = 4, modalities: int = 2, side: int = 4, seed: int = 0) -> MultiModalDataset:
    rng = num.make_rng(seed)
    return MultiModalDataset(modalities=[rng.uniform(0.0, 1.0, size=(n, side, side, 1)) for _ in range(modalities)])


def _toy_model(batch: MultiModalDataset, seed: int = 1, **settings: object) -> model_core.VmscModel:
    return model_core.build_model([1, 3], batch.image_shapes, batch.n, num.make_rng(seed), **settings)  # type: ignore[arg-type]


def _identity_bank(in_channels: int = 1) -> vt.VolterraLayerBank:
    """1×1 банк: линейный коэффициент 1 по каждому входному каналу, без квадратичной части."""
    channel = vt.VolterraChannel(1, in_channels, np.ones(in_channels), np.zeros(vt.triangle_size(in_channels)))
    return vt.VolterraLayerBank([channel], out_index=[0])


def _spread_w(model: model_core.VmscModel, seed: int = 2) -> None:
    """Веса W вдали от нуля, чтобы модуль был гладким в окрестности точки проверки."""
    rng = num.make_rng(seed)
    count = se.active_param_count(model.selfexpr)
    values = rng.uniform(0.05, 0.3, size=count) * rng.choice([-1.0, 1.0], size=count)
    se.set_param_vector(model.selfexpr, values)


def _naive_bank(bank: vt.VolterraLayerBank, x: np.ndarray) -> np.ndarray:
    """Прямое вычисление банка по пикселям: окно, линейная и квадратичная суммы."""
    n, h, w, c = x.shape
    out = np.zeros((n, h, w, bank.out_channels))
    for channel, idx in zip(bank.channels, bank.out_index):
        k = channel.filter_size
        r = k // 2
        s = channel.quadratic_matrix()
        padded = np.pad(x, ((0, 0), (r, r), (r, r), (0, 0)))
        for b in range(n):
            for i in range(h):
                for j in range(w):
                    taps = padded[b, i : i + k, j : j + k, :].reshape(-1)
                    out[b, i, j, idx] += float(channel.h1 @ taps) + float(taps @ s @ taps)
    return out


def _flat_model_fd(model: model_core.VmscModel, batch: MultiModalDataset, warmup: bool = False) -> float:
    def f(v: np.ndarray) -> float:
        model_core.set_parameter_vector(model, v)
        return model_core.loss(model, batch, warmup=warmup)[0]

    def grad(v: np.ndarray) -> np.ndarray:
        model_core.set_parameter_vector(model, v)
        return model_core.loss_grad(model, batch, warmup=warmup).vector()

    return num.fd_check(f, grad, model_core.parameter_vector(model))


def test_encode_identity_encoder() -> None:
    """1×1 энкодер с H1 = 1, H2 = 0: латент равен развёрнутому входу."""
    batch = _toy_batch(n=3, modalities=1)
    model = _toy_model(batch)
    model.encoders[0] = _identity_bank()
    model.decoders[0] = _identity_bank()
    latents = model_core.encode_all(model, batch)
    assert np.array_equal(latents.concatenated, batch.modalities[0].reshape(3, -1))


def test_encode_zero_input() -> None:
    """Нулевой вход — нулевой латент во всех модальностях."""
    batch = MultiModalDataset(modalities=[np.zeros((3, 4, 4, 1)), np.zeros((3, 4, 4, 1))])
    latents = model_core.encode_all(_toy_model(batch), batch)
    assert np.all(latents.concatenated == 0.0)


def test_encode_concatenates_modalities() -> None:
    """Ширина объединённого латента — сумма ширин; срезы совпадают с отдельными проходами."""
    batch = _toy_batch()
    model = _toy_model(batch)
    latents = model_core.encode_all(model, batch)
    widths = model.latent_widths()
    assert latents.width == sum(widths)
    start = 0
    for enc, x, width in zip(model.encoders, batch.modalities, widths):
        expected = model_core.flatten_latent(vt.forward(enc, x))
        assert np.array_equal(latents.concatenated[:, start : start + width], expected)
        start += width
    restored = model_core.split_latent(model, latents.concatenated)
    assert np.array_equal(restored[0], vt.forward(model.encoders[0], batch.modalities[0]))


def test_encode_shape_errors() -> None:
    """Не то число модальностей или образцов — ShapeError."""
    batch = _toy_batch()
    model = _toy_model(batch)
    for bad in (_toy_batch(modalities=1), _toy_batch(n=5)):
        try:
            model_core.encode_all(model, bad)
            assert False, "Ожидалась ShapeError"
        except ShapeError:
            pass


def test_loss_perfect_inverse_with_zero_w() -> None:
    """W = 0 и декодер, обратный энкодеру: total = (μ/2)·‖L_concat‖²."""
    batch = _toy_batch(n=3)
    model = _toy_model(batch, mu=0.8)
    model.encoders = [_identity_bank(), _identity_bank()]
    model.decoders = [_identity_bank(), _identity_bank()]
    se.set_param_vector(model.selfexpr, np.zeros(se.active_param_count(model.selfexpr)))
    total, parts = model_core.loss(model, batch)
    lcat = model_core.encode_all(model, batch).concatenated
    assert parts.recon == 0.0
    assert parts.reg == 0.0
    assert np.isclose(total, 0.4 * float(np.sum(lcat * lcat)), rtol=1e-13)


def test_loss_only_regularizer_when_gamma_mu_zero() -> None:
    """γ = μ = 0: total = λ·reg(W)."""
    batch = _toy_batch()
    model = _toy_model(batch, gamma=0.0, mu=0.0, lam=2.5)
    _spread_w(model)
    total, _ = model_core.loss(model, batch)
    assert np.isclose(total, 2.5 * se.regularizer(model.selfexpr, "l1"), rtol=1e-14)


def test_loss_matches_independent_evaluation() -> None:
    """Целевая функция совпадает с независимым поэлементным вычислением (оба входа декодера)."""
    batch = _toy_batch(n=3, side=2, seed=4)
    for decoder_input in ("latent", "selfexpr"):
        model = _toy_model(batch, gamma=1.3, mu=0.9, lam=0.7, decoder_input=decoder_input)
        _spread_w(model, seed=5)
        w = np.array(model.selfexpr.w)
        np.fill_diagonal(w, 0.0)

        latents = []
        for enc, x in zip(model.encoders, batch.modalities):
            y = _naive_bank(enc, x)
            latents.append(np.stack([y[b].transpose(2, 0, 1).reshape(-1) for b in range(batch.n)]))
        lcat = np.concatenate(latents, axis=1)
        expressed = w.T @ lcat
        source = expressed if decoder_input == "selfexpr" else lcat

        recon = 0.0
        start = 0
        for enc, dec, x, lat in zip(model.encoders, model.decoders, batch.modalities, latents):
            width = lat.shape[1]
            c = enc.out_channels
            z = source[:, start : start + width].reshape(batch.n, c, 2, 2).transpose(0, 2, 3, 1)
            start += width
            recon += float(np.sum((x - _naive_bank(dec, z)) ** 2))

        expected = 0.7 * float(np.sum(np.abs(w))) + 0.5 * 1.3 * recon + 0.5 * 0.9 * float(np.sum((lcat - expressed) ** 2))
        total, _ = model_core.loss(model, batch)
        assert abs(total - expected) <= 1e-12 * max(1.0, abs(expected))


def test_loss_grad_finite_differences_l2() -> None:
    """Градиент полной целевой функции (n=4, T=2, 4×4, l2) сверяется конечными разностями."""
    batch = _toy_batch()
    model = _toy_model(batch, reg_kind="l2", lam=0.3)
    _spread_w(model)
    assert _flat_model_fd(model, batch) < 1e-5


def test_loss_grad_finite_differences_l1_selfexpr_decoder() -> None:
    """То же для l1 и декодера, читающего самовыраженный латент."""
    batch = _toy_batch(seed=3)
    model = _toy_model(batch, seed=4, lam=0.2, decoder_input="selfexpr")
    _spread_w(model, seed=6)
    assert _flat_model_fd(model, batch) < 1e-5


def test_loss_grad_finite_differences_csc() -> None:
    """Градиент с CSC-слоем (N=4, F=2, L=2) через правило цепочки по опорным слоям."""
    batch = _toy_batch(seed=5)
    mask = se.CscMask(csc.build_stack(4, 2, 2))
    model = _toy_model(batch, seed=6, mask=mask, reg_kind="l2", lam=0.1)
    for factor, a in zip(model.selfexpr.factors, mask.stack.supports):
        factor[a] = num.make_rng(7).uniform(0.2, 0.6, size=int(a.sum()))
    assert _flat_model_fd(model, batch) < 1e-5


def test_loss_grad_warmup() -> None:
    """Разогрев: reg и selfexpr равны нулю, W не получает градиента."""
    batch = _toy_batch()
    model = _toy_model(batch)
    _spread_w(model)
    grads = model_core.loss_grad(model, batch, warmup=True)
    assert grads.parts.reg == 0.0 and grads.parts.selfexpr == 0.0
    assert np.all(grads.w_params == 0.0)
    assert _flat_model_fd(model, batch, warmup=True) < 1e-5


def test_stationary_zero_data() -> None:
    """Нулевые данные и λ = 0: градиент восстановления и самовыражения равен нулю."""
    batch = MultiModalDataset(modalities=[np.zeros((4, 4, 4, 1)), np.zeros((4, 4, 4, 1))])
    model = _toy_model(batch, lam=0.0)
    grads = model_core.loss_grad(model, batch)
    assert np.all(grads.vector() == 0.0)


def test_w_gradient_diagonal_is_zero() -> None:
    """Диагональ плотного градиента по W всегда нулевая."""
    batch = _toy_batch()
    model = _toy_model(batch)
    _spread_w(model)
    grads = model_core.loss_grad(model, batch)
    assert np.all(np.diag(grads.w_dense) == 0.0)
    assert np.any(grads.w_dense != 0.0)


def test_w_gradient_masked_entries_are_zero() -> None:
    """Случайная маска: градиент на удалённых рёбрах и диагонали — точно 0."""
    batch = _toy_batch(n=6, seed=9)
    model = _toy_model(batch, seed=10, mask=se.RandomPrunedMask(0.5, seed=3))
    _spread_w(model)
    grads = model_core.loss_grad(model, batch)
    assert not model.selfexpr.support.all()
    assert np.all(grads.w_dense[~model.selfexpr.support] == 0.0)
    assert np.any(grads.w_dense[model.selfexpr.support] != 0.0)


def test_w_gradient_diagonal_is_zero_csc() -> None:
    """CSC-слой (N=4, F=2, L=2): диагональ плотного градиента по W — точно 0."""
    batch = _toy_batch(seed=11)
    mask = se.CscMask(csc.build_stack(4, 2, 2))
    model = _toy_model(batch, seed=12, mask=mask)
    for factor, a in zip(model.selfexpr.factors, mask.stack.supports):
        factor[a] = num.make_rng(13).uniform(0.2, 0.6, size=int(a.sum()))
    grads = model_core.loss_grad(model, batch)
    assert np.all(np.diag(grads.w_dense) == 0.0)


def test_loss_parts_nonnegative_and_gamma_scales_recon() -> None:
    """Все слагаемые ≥ 0; удвоение γ ровно удваивает слагаемое восстановления."""
    batch = _toy_batch(seed=14)
    model = _toy_model(batch, seed=15)
    _spread_w(model)
    _, parts = model_core.loss(model, batch)
    assert parts.reg >= 0.0 and parts.recon >= 0.0 and parts.selfexpr >= 0.0
    assert parts.recon > 0.0

    model.gamma = 2.0 * model.gamma
    _, doubled = model_core.loss(model, batch)
    assert doubled.recon == 2.0 * parts.recon
    assert doubled.reg == parts.reg
    assert doubled.selfexpr == parts.selfexpr


def test_numerical_error_names_term() -> None:
    """Переполнение в энкодере — NumericalError со слагаемым latent."""
    batch = MultiModalDataset(modalities=[np.full((2, 2, 2, 1), 1e200), np.zeros((2, 2, 2, 1))])
    model = _toy_model(batch)
    try:
        with np.errstate(over="ignore", invalid="ignore"):
            model_core.loss(model, batch)
        assert False, "Ожидалась NumericalError"
    except NumericalError as exc:
        assert exc.term == "latent"


def test_parameter_vector_roundtrip_and_length() -> None:
    """Вектор параметров записывается и читается обратно; неверная длина — ShapeError."""
    batch = _toy_batch()
    model = _toy_model(batch)
    vector = num.make_rng(8).standard_normal(model_core.total_param_count(model))
    model_core.set_parameter_vector(model, vector)
    assert np.array_equal(model_core.parameter_vector(model), vector)
    try:
        model_core.set_parameter_vector(model, vector[:-1])
        assert False, "Ожидалась ShapeError"
    except ShapeError:
        pass


def test_presets() -> None:
    """arl: 5 энкодеров по 5 каналов (3×1×1, 2×3×3); eyb: по 20 каналов (7+7+6)."""
    arl = model_core.preset("arl", n_samples=6, image_size=4)
    assert arl.modalities == 5
    for enc in arl.encoders:
        assert sorted(enc.filter_sizes) == [1, 1, 1, 3, 3]
    eyb = model_core.preset("eyb", n_samples=6, image_size=4)
    for enc in eyb.encoders:
        assert enc.out_channels == 20
        assert [enc.filter_sizes.count(k) for k in (1, 3, 5)] == [7, 7, 6]
        assert vt.param_count(enc) == 2492


def test_unknown_preset() -> None:
    """Неизвестный пресет — InvalidInput."""
    try:
        model_core.preset("x", n_samples=4)
        assert False, "Ожидалась InvalidInput"
    except InvalidInput as exc:
        assert "x" in str(exc)
