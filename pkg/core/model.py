"""
Мультимодальный автоэнкодер с самовыражающим слоем.

Схема: T энкодеров Вольтерры (по одному на модальность) → латенты L(t) →
конкатенация L_concat (n×d) → самовыражение Z = Wᵀ-применение → T декодеров.

Целевая функция:

    total = λ·reg(W) + (γ/2)·Σ_t ‖X(t) − X_r(t)‖² + (μ/2)·‖L_concat − Z‖²

Вход декодера задаётся decoder_input:
- "latent" (по умолчанию) — декодер восстанавливает X(t) из L(t);
- "selfexpr" — декодер восстанавливает X(t) из самовыраженного латента Z(t).

Во время разогрева (warmup=True) слагаемые reg и selfexpr равны нулю,
декодер получает L(t), а W не получает градиента.

Латент модальности разворачивается так: каналы снаружи, внутри каждого
канала пиксели построчно.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from numpy.typing import NDArray

from core import selfexpr as se
from core import volterra
from core.data import MultiModalDataset
from core.errors import InvalidInput, NumericalError, ShapeError
from core.numerics import Matrix, Rng

PRESET_FILTERS: dict[str, tuple[int, ...]] = {
    "arl": (1, 1, 1, 3, 3),
    "eyb": (1,) * 7 + (3,) * 7 + (5,) * 6,
}
PRESET_LEARNING_RATE: dict[str, float] = {"arl": 1e-3, "eyb": 1e-4}
DECODER_INPUTS = ("latent", "selfexpr")


@dataclass
class VmscModel:
    encoders: list[volterra.VolterraLayerBank]
    decoders: list[volterra.VolterraLayerBank]
    selfexpr: se.SelfExpressiveLayer
    image_shapes: list[tuple[int, int, int]]
    gamma: float = 1.0
    mu: float = 1.0
    lam: float = 1.0
    reg_kind: str = "l1"
    decoder_input: str = "latent"
    preset_name: str = "custom"

    def __post_init__(self) -> None:
        t = len(self.encoders)
        if t < 1:
            raise InvalidInput("Модель должна иметь хотя бы одну модальность")
        if len(self.decoders) != t or len(self.image_shapes) != t:
            raise ShapeError("Число энкодеров, декодеров и модальностей должно совпадать")
        if self.gamma < 0 or self.mu < 0 or self.lam < 0:
            raise InvalidInput("γ, μ и λ должны быть неотрицательными")
        if self.reg_kind not in se.REG_KINDS:
            raise InvalidInput(f"Неизвестный регуляризатор: {self.reg_kind}")
        if self.decoder_input not in DECODER_INPUTS:
            raise InvalidInput(f"Неизвестный вход декодера: {self.decoder_input}")
        for enc, dec, (_, _, c) in zip(self.encoders, self.decoders, self.image_shapes):
            if enc.in_channels != c:
                raise ShapeError(f"Энкодер ожидает {enc.in_channels} каналов, у модальности {c}")
            if dec.in_channels != enc.out_channels or dec.out_channels != c:
                raise ShapeError("Декодер должен отображать латент модальности обратно в её форму")

    @property
    def modalities(self) -> int:
        return len(self.encoders)

    @property
    def n(self) -> int:
        return self.selfexpr.n

    def latent_widths(self) -> list[int]:
        return [h * w * enc.out_channels for enc, (h, w, _) in zip(self.encoders, self.image_shapes)]


@dataclass
class LatentBatch:
    per_modality: list[Matrix]
    concatenated: Matrix

    @property
    def width(self) -> int:
        return int(self.concatenated.shape[1])


@dataclass
class LossParts:
    reg: float
    recon: float
    selfexpr: float

    @property
    def total(self) -> float:
        return self.reg + self.recon + self.selfexpr

    def as_dict(self) -> dict[str, float]:
        return {"total": self.total, "reg": self.reg, "recon": self.recon, "selfexpr": self.selfexpr}


@dataclass
class Gradients:
    """
    Градиенты по всем обучаемым параметрам.

    w_dense — градиент по блоку n×n матрицы W_eff после проекции на маску
    (диагональ и удалённые рёбра — точные нули); w_params — по упакованным
    параметрам самовыражающего слоя.
    """

    encoders: list[volterra.BankGradient]
    decoders: list[volterra.BankGradient]
    w_dense: Matrix
    w_params: NDArray[np.float64]
    parts: LossParts = field(default_factory=lambda: LossParts(0.0, 0.0, 0.0))

    def vector(self) -> NDArray[np.float64]:
        chunks = [volterra.gradient_vector(g) for g in self.encoders]
        chunks += [volterra.gradient_vector(g) for g in self.decoders]
        chunks.append(self.w_params)
        return np.concatenate(chunks)


def flatten_latent(y: NDArray[np.float64]) -> Matrix:
    """(n, h, w, c) -> (n, c·h·w): каналы снаружи."""
    n = y.shape[0]
    return y.transpose(0, 3, 1, 2).reshape(n, -1)


def unflatten_latent(rows: Matrix, h: int, w: int, c: int) -> NDArray[np.float64]:
    n = rows.shape[0]
    return rows.reshape(n, c, h, w).transpose(0, 2, 3, 1)


def _check_batch(model: VmscModel, batch: MultiModalDataset) -> None:
    if batch.modality_count != model.modalities:
        raise ShapeError(f"Модель ожидает {model.modalities} модальностей, в данных {batch.modality_count}")
    if batch.n != model.n:
        raise ShapeError(f"Модель обучается на {model.n} образцах, в данных {batch.n}")
    for t, (x, shape) in enumerate(zip(batch.modalities, model.image_shapes)):
        if tuple(x.shape[1:]) != tuple(shape):
            raise ShapeError(f"Модальность {t}: форма {tuple(x.shape[1:])}, ожидалась {tuple(shape)}")


def encode_all(model: VmscModel, batch: MultiModalDataset) -> LatentBatch:
    """
    Прогоняет каждую модальность через свой энкодер и склеивает латенты
    в порядке модальностей.

    Raises:
        ShapeError: число модальностей, образцов или формы не совпадают с моделью.
    """
    _check_batch(model, batch)
    per = [flatten_latent(volterra.forward(enc, x)) for enc, x in zip(model.encoders, batch.modalities)]
    return LatentBatch(per_modality=per, concatenated=np.concatenate(per, axis=1))


def split_latent(model: VmscModel, rows: Matrix) -> list[NDArray[np.float64]]:
    """Разрезает матрицу n×d по модальностям и возвращает тензоры (n, h, w, c_latent)."""
    out = []
    start = 0
    for enc, (h, w, _), width in zip(model.encoders, model.image_shapes, model.latent_widths()):
        out.append(unflatten_latent(rows[:, start : start + width], h, w, enc.out_channels))
        start += width
    return out


@dataclass
class _Pass:
    latents: LatentBatch
    expressed: Matrix
    decoder_inputs: list[NDArray[np.float64]]
    reconstructions: list[NDArray[np.float64]]
    parts: LossParts
    warmup: bool


def _check_term(value: float, term: str) -> float:
    if not np.isfinite(value):
        raise NumericalError(f"Нечисловое значение в слагаемом {term}", term=term)
    return value


def _forward_pass(model: VmscModel, batch: MultiModalDataset, warmup: bool) -> _Pass:
    latents = encode_all(model, batch)
    if not np.all(np.isfinite(latents.concatenated)):
        raise NumericalError("Нечисловые значения в латентах энкодеров", term="latent")
    lcat = latents.concatenated

    if warmup:
        expressed = np.zeros_like(lcat)
    else:
        expressed = se.self_express(model.selfexpr, lcat)

    decoder_source = expressed if (model.decoder_input == "selfexpr" and not warmup) else lcat
    decoder_inputs = split_latent(model, decoder_source)
    reconstructions = [volterra.forward(dec, z) for dec, z in zip(model.decoders, decoder_inputs)]

    recon_sq = 0.0
    for x, xr in zip(batch.modalities, reconstructions):
        diff = x - xr
        recon_sq += float(np.sum(diff * diff))
    recon = _check_term(0.5 * model.gamma * recon_sq, "recon")

    if warmup:
        reg = 0.0
        selfexpr_term = 0.0
    else:
        reg = _check_term(model.lam * se.regularizer(model.selfexpr, model.reg_kind), "reg")
        residual = lcat - expressed
        selfexpr_term = _check_term(0.5 * model.mu * float(np.sum(residual * residual)), "selfexpr")

    return _Pass(
        latents=latents,
        expressed=expressed,
        decoder_inputs=decoder_inputs,
        reconstructions=reconstructions,
        parts=LossParts(reg=reg, recon=recon, selfexpr=selfexpr_term),
        warmup=warmup,
    )


def loss(model: VmscModel, batch: MultiModalDataset, warmup: bool = False) -> tuple[float, LossParts]:
    """
    Значение целевой функции и её слагаемые.

    Raises:
        ShapeError: данные не подходят модели.
        NumericalError: nan/inf в одном из слагаемых (term — имя слагаемого).
    """
    parts = _forward_pass(model, batch, warmup).parts
    return parts.total, parts


def loss_grad(model: VmscModel, batch: MultiModalDataset, warmup: bool = False) -> Gradients:
    """Аналитический градиент целевой функции по всем параметрам модели."""
    state = _forward_pass(model, batch, warmup)
    lcat = state.latents.concatenated
    n, d = lcat.shape

    dec_grads: list[volterra.BankGradient] = []
    grad_source_parts: list[Matrix] = []
    for dec, z, x, xr in zip(model.decoders, state.decoder_inputs, batch.modalities, state.reconstructions):
        g = volterra.backward(dec, z, model.gamma * (xr - x))
        dec_grads.append(g)
        grad_source_parts.append(flatten_latent(g.x))
    grad_source = np.concatenate(grad_source_parts, axis=1)

    grad_lcat = np.zeros((n, d))
    grad_expressed = np.zeros((n, d))
    if model.decoder_input == "selfexpr" and not state.warmup:
        grad_expressed += grad_source
    else:
        grad_lcat += grad_source

    if state.warmup:
        w_dense = np.zeros((n, n))
        w_params = np.zeros(se.active_param_count(model.selfexpr))
    else:
        residual = lcat - state.expressed
        grad_lcat += model.mu * residual
        grad_expressed -= model.mu * residual
        dense, through = se.self_express_backward(model.selfexpr, lcat, grad_expressed)
        grad_lcat += through
        dense = dense + model.lam * se.regularizer_dense_grad(model.selfexpr, model.reg_kind)
        extras = [model.lam * g for g in se.regularizer_factor_grads(model.selfexpr, model.reg_kind)]
        w_dense = se.project_dense_grad(model.selfexpr, dense)
        w_params = se.param_gradient(model.selfexpr, w_dense, extras)

    enc_grads = [
        volterra.backward(enc, x, g)
        for enc, x, g in zip(model.encoders, batch.modalities, split_latent(model, grad_lcat))
    ]
    grads = Gradients(encoders=enc_grads, decoders=dec_grads, w_dense=w_dense, w_params=w_params, parts=state.parts)
    if not np.all(np.isfinite(grads.vector())):
        raise NumericalError("Нечисловые значения в градиенте", term="gradient")
    return grads


def reconstruct(model: VmscModel, batch: MultiModalDataset) -> list[NDArray[np.float64]]:
    return _forward_pass(model, batch, warmup=False).reconstructions


def parameter_vector(model: VmscModel) -> NDArray[np.float64]:
    """Энкодеры, затем декодеры (по каналам h1, h2), затем активные веса самовыражения."""
    chunks = [volterra.bank_vector(b) for b in model.encoders]
    chunks += [volterra.bank_vector(b) for b in model.decoders]
    chunks.append(se.param_vector(model.selfexpr))
    return np.concatenate(chunks)


def set_parameter_vector(model: VmscModel, vector: NDArray[np.float64]) -> None:
    vector = np.asarray(vector, dtype=np.float64).ravel()
    expected = total_param_count(model)
    if vector.size != expected:
        raise ShapeError(f"Длина вектора параметров {vector.size}, ожидалось {expected}")
    offset = 0
    for bank in [*model.encoders, *model.decoders]:
        offset = volterra.set_bank_vector(bank, vector, offset)
    se.set_param_vector(model.selfexpr, vector, offset)


def autoencoder_param_count(model: VmscModel) -> int:
    return sum(volterra.param_count(b) for b in [*model.encoders, *model.decoders])


def total_param_count(model: VmscModel) -> int:
    return autoencoder_param_count(model) + se.active_param_count(model.selfexpr)


def build_model(
    filter_sizes: Sequence[int],
    image_shapes: Sequence[tuple[int, int, int]],
    n_samples: int,
    rng: Rng,
    mask: Optional[se.MaskKind] = None,
    gamma: float = 1.0,
    mu: float = 1.0,
    lam: float = 1.0,
    reg_kind: str = "l1",
    decoder_input: str = "latent",
    csc_reg: str = "effective",
    preset_name: str = "custom",
) -> VmscModel:
    """
    Модель с одинаковой смесью фильтров во всех модальностях.

    Декодер модальности — банк с той же смесью размеров фильтров над
    латентными каналами, отклики которого суммируются в каналы модальности.
    """
    if not filter_sizes:
        raise InvalidInput("Нужен хотя бы один фильтр")
    encoders = []
    decoders = []
    for _, _, c in image_shapes:
        enc = volterra.new_bank(filter_sizes, c, rng)
        encoders.append(enc)
        if c == 1:
            dec = volterra.new_bank(filter_sizes, enc.out_channels, rng, collapse=True)
        else:
            channels = [volterra.new_channel(k, enc.out_channels, rng) for k in filter_sizes for _ in range(c)]
            out_index = [i % c for i in range(len(channels))]
            dec = volterra.VolterraLayerBank(channels=channels, out_index=out_index)
        decoders.append(dec)
    layer = se.new_layer(n_samples, mask or se.FullMask(), rng, csc_reg=csc_reg)
    return VmscModel(
        encoders=encoders,
        decoders=decoders,
        selfexpr=layer,
        image_shapes=[tuple(s) for s in image_shapes],  # type: ignore[misc]
        gamma=gamma,
        mu=mu,
        lam=lam,
        reg_kind=reg_kind,
        decoder_input=decoder_input,
        preset_name=preset_name,
    )


def preset(
    name: str,
    n_samples: int,
    image_size: int = 32,
    modalities: int = 5,
    rng: Optional[Rng] = None,
    **settings: object,
) -> VmscModel:
    """
    Архитектуры по умолчанию.

    arl: в каждом энкодере 3 канала 1×1 и 2 канала 3×3;
    eyb: 7 каналов 1×1, 7 каналов 3×3 и 6 каналов 5×5.
    Декодер повторяет смесь энкодера и сворачивает выход в один канал.

    Raises:
        InvalidInput: неизвестное имя пресета.
    """
    if name not in PRESET_FILTERS:
        raise InvalidInput(f"Неизвестный пресет: {name!r} (доступны: {', '.join(sorted(PRESET_FILTERS))})")
    if modalities < 1 or image_size < 1:
        raise InvalidInput("Число модальностей и размер изображения должны быть >= 1")
    rng = rng if rng is not None else np.random.default_rng(0)
    shapes = [(image_size, image_size, 1)] * modalities
    return build_model(PRESET_FILTERS[name], shapes, n_samples, rng, preset_name=name, **settings)  # type: ignore[arg-type]
