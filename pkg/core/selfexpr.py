"""
Самовыражающий слой: обучаемая матрица коэффициентов W (n×n, нулевая
диагональ), применяемая к объединённым латентным кодам.

Три вида структурной маски:
- FullMask — все недиагональные элементы обучаются;
- RandomPrunedMask — фиксированная до обучения случайная доля рёбер удалена;
- CscMask — W_eff есть произведение L разреженных циркулянтных слоёв.

Обучаемые параметры упаковываются только по разрешённым позициям, поэтому
элементы вне маски остаются точными нулями при любом обучении.

Для CSC размер слоя может превышать n (дополнение до F^L фиктивными
образцами). Латентные строки фиктивных образцов нулевые, а их строки и
столбцы исключены из целевой функции и аффинности, поэтому в вычислениях
участвует только левый верхний блок n×n матрицы W_eff.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np
from numpy.typing import NDArray

from core import csc as csc_core
from core.errors import InvalidInput, ShapeError
from core.numerics import Matrix, Rng, make_rng

INIT_SIGMA = 1e-4
REG_KINDS = ("l1", "l2")


@dataclass(frozen=True)
class FullMask:
    name: str = "full"


@dataclass(frozen=True)
class RandomPrunedMask:
    ratio: float
    seed: int
    name: str = "random"


@dataclass(frozen=True)
class CscMask:
    stack: csc_core.CscStack
    name: str = "csc"


MaskKind = Union[FullMask, RandomPrunedMask, CscMask]


@dataclass
class SelfExpressiveLayer:
    """
    n — число настоящих образцов; size — размер слоя (n или дополненный F^L).

    Для FullMask/RandomPrunedMask обучается w (n×n) на позициях support.
    Для CscMask обучаются factors[i] на позициях stack.supports[i].
    """

    n: int
    mask: MaskKind
    support: NDArray[np.bool_]
    w: Optional[Matrix] = None
    factors: list[Matrix] = field(default_factory=list)
    csc_reg: str = "effective"

    @property
    def size(self) -> int:
        if isinstance(self.mask, CscMask):
            return self.mask.stack.n
        return self.n

    @property
    def padding(self) -> int:
        return self.size - self.n


def prune_random(n: int, ratio: float, rng: Rng) -> NDArray[np.bool_]:
    """
    Маска активных рёбер n×n: диагональ всегда выключена, ровно
    ⌊ratio·(n²−n)⌋ недиагональных позиций выключены равновероятно.

    Raises:
        InvalidInput: ratio вне [0, 1).
    """
    if not 0.0 <= ratio < 1.0:
        raise InvalidInput(f"Доля удаляемых рёбер должна быть в [0, 1): {ratio}")
    if n < 1:
        raise InvalidInput("n должен быть >= 1")
    keep = ~np.eye(n, dtype=bool)
    off = np.flatnonzero(keep)
    removed = int(np.floor(ratio * (n * n - n)))
    if removed:
        drop = rng.choice(off.size, size=removed, replace=False)
        keep.flat[off[drop]] = False
    return keep


def new_layer(
    n: int,
    mask: MaskKind,
    rng: Rng,
    sigma: float = INIT_SIGMA,
    csc_reg: str = "effective",
) -> SelfExpressiveLayer:
    """
    Инициализация: N(0, σ²) с последующей проекцией на маску и нулевую диагональ.

    Для CSC каждый из L слоёв получает σ^(1/L): при C = 1 каждый элемент W_eff
    есть произведение ровно L весов (единственный путь), и его масштаб равен σ.
    """
    if n < 1:
        raise InvalidInput("n должен быть >= 1")
    if csc_reg not in ("effective", "per_layer"):
        raise InvalidInput(f"Неизвестный режим регуляризации CSC: {csc_reg}")

    if isinstance(mask, FullMask):
        support = ~np.eye(n, dtype=bool)
        w = rng.normal(0.0, sigma, size=(n, n)) * support
        return SelfExpressiveLayer(n=n, mask=mask, support=support, w=w, csc_reg=csc_reg)

    if isinstance(mask, RandomPrunedMask):
        support = prune_random(n, mask.ratio, make_rng(mask.seed))
        w = rng.normal(0.0, sigma, size=(n, n)) * support
        return SelfExpressiveLayer(n=n, mask=mask, support=support, w=w, csc_reg=csc_reg)

    if isinstance(mask, CscMask):
        stack = mask.stack
        if stack.n < n:
            raise InvalidInput(f"Стек CSC на {stack.n} узлов меньше числа образцов {n}")
        layer_sigma = sigma ** (1.0 / stack.depth)
        factors = [rng.normal(0.0, layer_sigma, size=(stack.n, stack.n)) * a for a in stack.supports]
        support = ~np.eye(n, dtype=bool)
        return SelfExpressiveLayer(n=n, mask=mask, support=support, factors=factors, csc_reg=csc_reg)

    raise InvalidInput(f"Неизвестный вид маски: {mask!r}")


def project(layer: SelfExpressiveLayer) -> None:
    """Обнуляет диагональ и всё, что вне маски (на месте)."""
    if isinstance(layer.mask, CscMask):
        for factor, a in zip(layer.factors, layer.mask.stack.supports):
            factor[~a] = 0.0
        return
    assert layer.w is not None
    layer.w[~layer.support] = 0.0


def effective_matrix(layer: SelfExpressiveLayer) -> Matrix:
    """Полная матрица W_eff размера size×size с нулевой диагональю."""
    if isinstance(layer.mask, CscMask):
        product = layer.factors[0]
        for factor in layer.factors[1:]:
            product = product @ factor
        w = product.copy()
    else:
        assert layer.w is not None
        w = layer.w.copy()
    np.fill_diagonal(w, 0.0)
    return w


def coefficient_matrix(layer: SelfExpressiveLayer) -> Matrix:
    """Блок n×n матрицы W_eff, относящийся к настоящим образцам."""
    return effective_matrix(layer)[: layer.n, : layer.n]


def self_express(layer: SelfExpressiveLayer, latents: Matrix) -> Matrix:
    """
    Самовыражение: строка i результата = Σ_j W[j][i]·latents[j].

    Raises:
        ShapeError: число строк latents не равно n.
    """
    latents = np.asarray(latents, dtype=np.float64)
    if latents.ndim != 2 or latents.shape[0] != layer.n:
        raise ShapeError(f"Ожидалась матрица латентов с {layer.n} строками, получено {latents.shape}")
    return coefficient_matrix(layer).T @ latents


def self_express_backward(
    layer: SelfExpressiveLayer,
    latents: Matrix,
    upstream: Matrix,
) -> tuple[Matrix, Matrix]:
    """Градиенты self_express: (по W (n×n, плотный), по latents)."""
    w = coefficient_matrix(layer)
    return latents @ upstream.T, w @ upstream


def regularizer(layer: SelfExpressiveLayer, kind: str) -> float:
    """
    l1 — сумма модулей, l2 — сумма квадратов (Фробениус в квадрате) по активным элементам.

    Для CSC по умолчанию штрафуются элементы W_eff; при csc_reg="per_layer" —
    веса опорных слоёв.
    """
    if kind not in REG_KINDS:
        raise InvalidInput(f"Неизвестный регуляризатор: {kind}")
    if isinstance(layer.mask, CscMask) and layer.csc_reg == "per_layer":
        values = np.concatenate([f[a] for f, a in zip(layer.factors, layer.mask.stack.supports)])
    else:
        values = coefficient_matrix(layer)[layer.support]
    if kind == "l1":
        return float(np.sum(np.abs(values)))
    return float(np.sum(values * values))


def regularizer_dense_grad(layer: SelfExpressiveLayer, kind: str) -> Matrix:
    """Градиент регуляризатора по W_eff (n×n); нулевой при csc_reg="per_layer"."""
    if isinstance(layer.mask, CscMask) and layer.csc_reg == "per_layer":
        return np.zeros((layer.n, layer.n))
    w = coefficient_matrix(layer)
    grad = np.sign(w) if kind == "l1" else 2.0 * w
    return grad * layer.support


def regularizer_factor_grads(layer: SelfExpressiveLayer, kind: str) -> list[Matrix]:
    if not (isinstance(layer.mask, CscMask) and layer.csc_reg == "per_layer"):
        return [np.zeros_like(f) for f in layer.factors]
    grads = []
    for factor, a in zip(layer.factors, layer.mask.stack.supports):
        g = np.sign(factor) if kind == "l1" else 2.0 * factor
        grads.append(g * a)
    return grads


def project_dense_grad(layer: SelfExpressiveLayer, dense: Matrix) -> Matrix:
    """Проекция плотного градиента по W на допустимые позиции (диагональ и маска — точные нули)."""
    return np.where(layer.support, dense, 0.0)


def param_gradient(
    layer: SelfExpressiveLayer,
    dense: Matrix,
    factor_extra: Optional[list[Matrix]] = None,
) -> NDArray[np.float64]:
    """
    Переводит градиент по W_eff (n×n) в градиент по упакованным параметрам слоя.

    Для CSC применяется правило цепочки через произведение слоёв:
    dM_i = (M_0…M_{i−1})ᵀ · G · (M_{i+1}…M_{L−1})ᵀ.
    """
    g = project_dense_grad(layer, dense)
    if not isinstance(layer.mask, CscMask):
        return g[layer.support]

    size = layer.size
    full = np.zeros((size, size))
    full[: layer.n, : layer.n] = g
    factors = layer.factors
    depth = len(factors)
    prefix = [np.eye(size)]
    for f in factors[:-1]:
        prefix.append(prefix[-1] @ f)
    suffix = [np.eye(size)] * depth
    acc = np.eye(size)
    for i in range(depth - 1, -1, -1):
        suffix[i] = acc
        acc = factors[i] @ acc
    parts = []
    for i, a in enumerate(layer.mask.stack.supports):
        grad_i = prefix[i].T @ full @ suffix[i].T
        if factor_extra is not None:
            grad_i = grad_i + factor_extra[i]
        parts.append(grad_i[a])
    return np.concatenate(parts)


def param_vector(layer: SelfExpressiveLayer) -> NDArray[np.float64]:
    if isinstance(layer.mask, CscMask):
        return np.concatenate([f[a] for f, a in zip(layer.factors, layer.mask.stack.supports)])
    assert layer.w is not None
    return layer.w[layer.support]


def set_param_vector(layer: SelfExpressiveLayer, vector: NDArray[np.float64], offset: int = 0) -> int:
    """Записывает упакованные параметры начиная с offset; возвращает новое смещение."""
    if isinstance(layer.mask, CscMask):
        for factor, a in zip(layer.factors, layer.mask.stack.supports):
            count = int(a.sum())
            factor[...] = 0.0
            factor[a] = vector[offset : offset + count]
            offset += count
        return offset
    assert layer.w is not None
    count = int(layer.support.sum())
    layer.w[...] = 0.0
    layer.w[layer.support] = vector[offset : offset + count]
    return offset + count


def active_param_count(layer: SelfExpressiveLayer) -> int:
    """Full: n²−n; RandomPruned: (n²−n) − удалённые; CSC: N·F·L."""
    if isinstance(layer.mask, CscMask):
        return csc_core.edge_count(layer.mask.stack)
    return int(layer.support.sum())


def mask_descriptor(layer: SelfExpressiveLayer) -> dict[str, object]:
    if isinstance(layer.mask, RandomPrunedMask):
        return {"kind": "random", "ratio": layer.mask.ratio, "seed": layer.mask.seed}
    if isinstance(layer.mask, CscMask):
        return {"kind": "csc", **layer.mask.stack.descriptor()}
    return {"kind": "full"}


def mask_from_descriptor(descriptor: dict[str, object]) -> MaskKind:
    kind = descriptor.get("kind")
    if kind == "full":
        return FullMask()
    if kind == "random":
        return RandomPrunedMask(ratio=float(descriptor["ratio"]), seed=int(descriptor["seed"]))  # type: ignore[arg-type]
    if kind == "csc":
        stack = csc_core.build_stack(
            int(descriptor["n"]),  # type: ignore[arg-type]
            int(descriptor["fan"]),  # type: ignore[arg-type]
            int(descriptor["depth"]),  # type: ignore[arg-type]
            int(descriptor.get("connectivity", 1)),  # type: ignore[arg-type]
        )
        return CscMask(stack=stack)
    raise InvalidInput(f"Неизвестный вид маски: {kind}")
