"""
Свёрточный слой Вольтерры второго порядка.

Каждый канал банка — фильтр с линейным ядром H1 и квадратичным ядром H2
над окном k×k×c_in (p = k²·c_in отводов). Квадратичное ядро хранится как
верхний треугольник симметричной матрицы p×p, поэтому отклик канала:

    y = Σ_τ H1[τ]·x_τ + Σ_{τ1,τ2} S[τ1][τ2]·x_τ1·x_τ2,   S = sym(H2).

Паддинг same (нулями), шаг 1, без смещения и без функций активации.
Порядок отводов внутри окна: (строка окна, столбец окна, входной канал).

Слой не меняется во время forward/backward; буферы градиентов создаются
на каждый вызов.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from numpy.typing import NDArray

from core.errors import InvalidInput, ShapeError
from core.numerics import Rng

H2_INIT_DAMPING = 0.1


def tap_count(filter_size: int, in_channels: int) -> int:
    return filter_size * filter_size * in_channels


def triangle_size(taps: int) -> int:
    return taps * (taps + 1) // 2


@dataclass
class VolterraChannel:
    """Один канал: линейное ядро h1 (p) и верхний треугольник квадратичного h2 (p(p+1)/2)."""

    filter_size: int
    in_channels: int
    h1: NDArray[np.float64]
    h2: NDArray[np.float64]

    def __post_init__(self) -> None:
        if self.filter_size < 1 or self.filter_size % 2 == 0:
            raise InvalidInput(f"Размер фильтра должен быть нечётным >= 1: {self.filter_size}")
        if self.in_channels < 1:
            raise InvalidInput("in_channels должен быть >= 1")
        p = self.taps
        self.h1 = np.asarray(self.h1, dtype=np.float64).reshape(-1)
        self.h2 = np.asarray(self.h2, dtype=np.float64).reshape(-1)
        if self.h1.size != p or self.h2.size != triangle_size(p):
            raise ShapeError(
                f"Ядра канала {self.filter_size}x{self.filter_size}x{self.in_channels}: "
                f"ожидалось {p} и {triangle_size(p)} весов, получено {self.h1.size} и {self.h2.size}"
            )

    @property
    def taps(self) -> int:
        return tap_count(self.filter_size, self.in_channels)

    def quadratic_matrix(self) -> NDArray[np.float64]:
        """Симметричная матрица S (p×p), верхний треугольник которой хранится в h2."""
        p = self.taps
        s = np.zeros((p, p))
        s[np.triu_indices(p)] = self.h2
        return s + s.T - np.diag(np.diag(s))


@dataclass
class VolterraLayerBank:
    """
    Банк каналов над одним входным тензором.

    out_index[i] — номер выходного канала, в который складывается отклик
    канала i. У энкодера индексы разные (выходов столько же, сколько каналов),
    у декодера все равны 0 (отклики суммируются в один канал).
    """

    channels: list[VolterraChannel]
    out_index: list[int] = field(default_factory=list)

    def __post_init__(self) -> None:
        if not self.channels:
            raise InvalidInput("Банк должен содержать хотя бы один канал")
        if not self.out_index:
            self.out_index = list(range(len(self.channels)))
        if len(self.out_index) != len(self.channels):
            raise ShapeError("Длина out_index не совпадает с числом каналов")
        if min(self.out_index) < 0:
            raise InvalidInput("out_index не может быть отрицательным")
        c_in = {ch.in_channels for ch in self.channels}
        if len(c_in) != 1:
            raise ShapeError("Все каналы банка должны читать один и тот же входной тензор")

    @property
    def in_channels(self) -> int:
        return self.channels[0].in_channels

    @property
    def out_channels(self) -> int:
        return max(self.out_index) + 1

    @property
    def filter_sizes(self) -> list[int]:
        return [ch.filter_size for ch in self.channels]


@dataclass
class BankGradient:
    h1: list[NDArray[np.float64]]
    h2: list[NDArray[np.float64]]
    x: NDArray[np.float64]


def new_channel(filter_size: int, in_channels: int, rng: Rng) -> VolterraChannel:
    """Равномерная инициализация ±√(6/p); квадратичная часть дополнительно ×0.1."""
    p = tap_count(filter_size, in_channels)
    bound = float(np.sqrt(6.0 / p))
    h1 = rng.uniform(-bound, bound, size=p)
    h2 = rng.uniform(-bound, bound, size=triangle_size(p)) * H2_INIT_DAMPING
    return VolterraChannel(filter_size=filter_size, in_channels=in_channels, h1=h1, h2=h2)


def new_bank(
    filter_sizes: Sequence[int],
    in_channels: int,
    rng: Rng,
    collapse: bool = False,
) -> VolterraLayerBank:
    """Создаёт банк; collapse=True суммирует все каналы в один выход (декодер)."""
    channels = [new_channel(k, in_channels, rng) for k in filter_sizes]
    out_index = [0] * len(channels) if collapse else list(range(len(channels)))
    return VolterraLayerBank(channels=channels, out_index=out_index)


def _as_batch(x: NDArray[np.float64]) -> tuple[NDArray[np.float64], bool]:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 3:
        return x[None, ...], True
    if x.ndim == 4:
        return x, False
    raise ShapeError(f"Ожидался тензор (h, w, c) или пакет (n, h, w, c), получено {x.shape}")


def extract_patches(x: NDArray[np.float64], filter_size: int) -> NDArray[np.float64]:
    """Окна k×k с same-паддингом нулями: (n, h, w, c) -> (n, h, w, k·k·c)."""
    n, h, w, c = x.shape
    r = filter_size // 2
    padded = np.pad(x, ((0, 0), (r, r), (r, r), (0, 0)))
    windows = sliding_window_view(padded, (filter_size, filter_size), axis=(1, 2))
    return windows.transpose(0, 1, 2, 4, 5, 3).reshape(n, h, w, filter_size * filter_size * c)


def _patch_adjoint(grad_patches: NDArray[np.float64], filter_size: int, in_channels: int) -> NDArray[np.float64]:
    """Сопряжённое к extract_patches: раскладывает градиент окон обратно по пикселям."""
    n, h, w, _ = grad_patches.shape
    k = filter_size
    r = k // 2
    g6 = grad_patches.reshape(n, h, w, k, k, in_channels)
    padded = np.zeros((n, h + 2 * r, w + 2 * r, in_channels))
    for di in range(k):
        for dj in range(k):
            padded[:, di : di + h, dj : dj + w, :] += g6[:, :, :, di, dj, :]
    return padded[:, r : r + h, r : r + w, :]


def _channel_response(channel: VolterraChannel, patches: NDArray[np.float64]) -> NDArray[np.float64]:
    flat = patches.reshape(-1, channel.taps)
    linear = flat @ channel.h1
    quadratic = np.einsum("ij,ij->i", flat @ channel.quadratic_matrix(), flat)
    return (linear + quadratic).reshape(patches.shape[:-1])


def _check_input(layer: VolterraLayerBank, x: NDArray[np.float64]) -> None:
    if x.shape[-1] != layer.in_channels:
        raise ShapeError(f"Банк ожидает {layer.in_channels} входных каналов, получено {x.shape[-1]}")


def forward(layer: VolterraLayerBank, x: NDArray[np.float64]) -> NDArray[np.float64]:
    """
    Прямой проход банка.

    Args:
        layer: банк каналов.
        x: тензор (h, w, c) или пакет (n, h, w, c).

    Returns:
        Тензор той же пространственной формы с layer.out_channels каналами.

    Raises:
        ShapeError: число входных каналов не совпадает с банком.
    """
    x4, single = _as_batch(x)
    _check_input(layer, x4)
    n, h, w, _ = x4.shape
    out = np.zeros((n, h, w, layer.out_channels))
    patches: dict[int, NDArray[np.float64]] = {}
    for channel, idx in zip(layer.channels, layer.out_index):
        k = channel.filter_size
        if k not in patches:
            patches[k] = extract_patches(x4, k)
        out[..., idx] += _channel_response(channel, patches[k])
    return out[0] if single else out


def backward(
    layer: VolterraLayerBank,
    x: NDArray[np.float64],
    upstream_grad: NDArray[np.float64],
) -> BankGradient:
    """
    Точные градиенты прямого прохода по H1, H2 (треугольник) и входу.

    Для недиагонального элемента треугольника вклад (τ1, τ2) и (τ2, τ1)
    складывается, поэтому его градиент вдвое больше соответствующего элемента
    полной матрицы Σ g·x xᵀ.
    """
    x4, single = _as_batch(x)
    _check_input(layer, x4)
    g4 = np.asarray(upstream_grad, dtype=np.float64)
    if single:
        g4 = g4[None, ...] if g4.ndim == 3 else g4
    n, h, w, c = x4.shape
    if g4.shape != (n, h, w, layer.out_channels):
        raise ShapeError(f"Градиент сверху имеет форму {g4.shape}, ожидалась {(n, h, w, layer.out_channels)}")

    patches: dict[int, NDArray[np.float64]] = {}
    grad_patches: dict[int, NDArray[np.float64]] = {}
    grads_h1: list[NDArray[np.float64]] = []
    grads_h2: list[NDArray[np.float64]] = []

    for channel, idx in zip(layer.channels, layer.out_index):
        k = channel.filter_size
        p = channel.taps
        if k not in patches:
            patches[k] = extract_patches(x4, k)
            grad_patches[k] = np.zeros((n * h * w, p))
        flat = patches[k].reshape(-1, p)
        g = g4[..., idx].reshape(-1)

        grads_h1.append(flat.T @ g)
        full = (flat * g[:, None]).T @ flat
        rows, cols = np.triu_indices(p)
        grads_h2.append(full[rows, cols] * np.where(rows == cols, 1.0, 2.0))

        s = channel.quadratic_matrix()
        grad_patches[k] += g[:, None] * (channel.h1[None, :] + 2.0 * (flat @ s))

    grad_x = np.zeros_like(x4)
    for k, gp in grad_patches.items():
        grad_x += _patch_adjoint(gp.reshape(n, h, w, -1), k, c)
    return BankGradient(h1=grads_h1, h2=grads_h2, x=grad_x[0] if single else grad_x)


def cascade(layers: Sequence[VolterraLayerBank], x: NDArray[np.float64]) -> NDArray[np.float64]:
    """
    Композиция банков: каждый следующий применяется к выходу предыдущего.
    Эффективный порядок полинома по входу — 2^len(layers).
    """
    if not layers:
        raise InvalidInput("Каскад должен содержать хотя бы один банк")
    for i in range(1, len(layers)):
        if layers[i].in_channels != layers[i - 1].out_channels:
            raise ShapeError(
                f"Банк {i} ожидает {layers[i].in_channels} каналов, "
                f"предыдущий выдаёт {layers[i - 1].out_channels}"
            )
    y = np.asarray(x, dtype=np.float64)
    for layer in layers:
        y = forward(layer, y)
    return y


def param_count(layer: VolterraLayerBank) -> int:
    return sum(ch.taps + triangle_size(ch.taps) for ch in layer.channels)


def bank_vector(layer: VolterraLayerBank) -> NDArray[np.float64]:
    """Плоский вектор весов: по каналам, сначала h1, затем h2."""
    parts: list[NDArray[np.float64]] = []
    for ch in layer.channels:
        parts.append(ch.h1)
        parts.append(ch.h2)
    return np.concatenate(parts)


def gradient_vector(grad: BankGradient) -> NDArray[np.float64]:
    parts: list[NDArray[np.float64]] = []
    for g1, g2 in zip(grad.h1, grad.h2):
        parts.append(g1)
        parts.append(g2)
    return np.concatenate(parts)


def set_bank_vector(layer: VolterraLayerBank, vector: NDArray[np.float64], offset: int = 0) -> int:
    """Записывает веса из vector начиная с offset; возвращает смещение после банка."""
    for ch in layer.channels:
        p = ch.taps
        t = triangle_size(p)
        if offset + p + t > vector.size:
            raise ShapeError("Вектор параметров короче, чем требует банк")
        ch.h1 = np.array(vector[offset : offset + p], dtype=np.float64)
        offset += p
        ch.h2 = np.array(vector[offset : offset + t], dtype=np.float64)
        offset += t
    return offset


def bank_spec(layer: VolterraLayerBank) -> dict[str, object]:
    return {
        "filter_sizes": layer.filter_sizes,
        "in_channels": layer.in_channels,
        "out_index": list(layer.out_index),
    }


def bank_from_spec(spec: dict[str, object]) -> VolterraLayerBank:
    """Банк с нулевыми весами по описанию из bank_spec (веса заполняются отдельно)."""
    sizes = [int(k) for k in spec["filter_sizes"]]  # type: ignore[union-attr]
    c_in = int(spec["in_channels"])  # type: ignore[arg-type]
    channels = [
        VolterraChannel(k, c_in, np.zeros(tap_count(k, c_in)), np.zeros(triangle_size(tap_count(k, c_in))))
        for k in sizes
    ]
    return VolterraLayerBank(channels=channels, out_index=[int(i) for i in spec["out_index"]])  # type: ignore[union-attr]
