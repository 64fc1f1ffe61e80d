"""
Циклические разреженно связанные (CSC) слои.

Стек из L опорных слоёв над N узлами с коэффициентом ветвления F. Опорный
слой i задаётся порождающим полиномом

    p_i(x) = Σ_{j=0}^{F-1} x^(S_i·j),   S_i = F^i,

единицы первой строки его циркулянтной матрицы смежности стоят в столбцах
{S_i·j mod N}; каждая следующая строка — циклический сдвиг предыдущей вправо.
При F^L = N (связность C = 1) произведение Π p_i(x) = Σ_{i<N} x^i, то есть
произведение матриц смежности — матрица из одних единиц.

Стек неизменяем после построения.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from numpy.typing import NDArray

from core.errors import ConstraintViolation, InvalidInput, StructureError


@dataclass(frozen=True)
class CscStack:
    n: int
    fan: int
    depth: int
    connectivity: int
    supports: tuple[NDArray[np.bool_], ...]
    strides: tuple[int, ...]

    def descriptor(self) -> dict[str, object]:
        return {
            "n": self.n,
            "fan": self.fan,
            "depth": self.depth,
            "connectivity": self.connectivity,
            "strides": list(self.strides),
        }


def generator_polynomial(n: int, fan: int, layer: int) -> NDArray[np.int64]:
    """Коэффициенты p_i(x) по модулю x^N − 1 (вектор длины N)."""
    stride = fan**layer
    coeffs = np.zeros(n, dtype=np.int64)
    for j in range(fan):
        coeffs[(stride * j) % n] += 1
    return coeffs


def circulant(first_row: NDArray[np.int64]) -> NDArray[np.int64]:
    """Циркулянт: A[r][c] = first_row[(c − r) mod N]."""
    n = first_row.size
    idx = (np.arange(n)[None, :] - np.arange(n)[:, None]) % n
    return first_row[idx]


def cyclic_convolve(a: NDArray[np.int64], b: NDArray[np.int64]) -> NDArray[np.int64]:
    """Произведение полиномов по модулю x^N − 1 в целых числах."""
    n = a.size
    out = np.zeros(n, dtype=np.int64)
    for i in np.nonzero(a)[0]:
        out += a[i] * np.roll(b, int(i))
    return out


def build_stack(n: int, fan: int, depth: int, connectivity: int = 1) -> CscStack:
    """
    Строит стек CSC по первому способу факторизации (одинаковый F, S_i = F^i).

    Raises:
        InvalidInput: непозитивные параметры или C != 1.
        ConstraintViolation: F^L != N·C.
    """
    if n < 1 or fan < 1 or depth < 1:
        raise InvalidInput(f"N, F и L должны быть положительными: N={n}, F={fan}, L={depth}")
    if connectivity != 1:
        raise InvalidInput("Поддерживается только связность C = 1")
    if fan**depth != n * connectivity:
        raise ConstraintViolation(
            f"Нарушено условие F^L = N·C: {fan}^{depth} = {fan**depth}, N·C = {n * connectivity}"
        )
    supports = tuple(circulant(generator_polynomial(n, fan, i)) > 0 for i in range(depth))
    strides = tuple(fan**i for i in range(depth))
    return CscStack(n=n, fan=fan, depth=depth, connectivity=connectivity, supports=supports, strides=strides)


def edge_count(stack: CscStack) -> int:
    """Число рёбер E = N·F·L; совпадает с N·F·log_F(N·C)."""
    edges = stack.n * stack.fan * stack.depth
    counted = int(sum(int(a.sum()) for a in stack.supports))
    if counted != edges:
        raise StructureError(f"В опорных слоях {counted} рёбер, ожидалось N·F·L = {edges}")
    if stack.fan > 1:
        log_depth = round(np.log(stack.n * stack.connectivity) / np.log(stack.fan))
        if stack.n * stack.fan * log_depth != edges:
            raise StructureError("Число рёбер не совпадает с N·F·log_F(N·C)")
    return edges


def product_matrix(stack: CscStack) -> NDArray[np.int64]:
    """Точное целочисленное произведение A_0·A_1·…·A_{L−1}."""
    result = stack.supports[0].astype(np.int64)
    for a in stack.supports[1:]:
        result = result @ a.astype(np.int64)
    return result


def product_polynomial(stack: CscStack) -> NDArray[np.int64]:
    result = generator_polynomial(stack.n, stack.fan, 0)
    for i in range(1, stack.depth):
        result = cyclic_convolve(result, generator_polynomial(stack.n, stack.fan, i))
    return result


def verify_connectivity(stack: CscStack) -> int:
    """
    Возвращает наблюдаемую связность: число путей между любой парой вход/выход.

    Raises:
        StructureError: произведение не постоянно.
    """
    product = product_matrix(stack)
    value = int(product[0, 0])
    if not np.all(product == value):
        raise StructureError("Произведение опорных слоёв не постоянно: связность неоднородна")
    return value


def padded_size(n: int, fan: int) -> tuple[int, int]:
    """
    Наименьшее F^L >= n и соответствующее L.

    Нужно, когда число обучающих образцов не является степенью F:
    недостающие узлы заполняются фиктивными образцами.
    """
    if n < 1 or fan < 2:
        raise InvalidInput(f"Для дополнения нужны n >= 1 и F >= 2: n={n}, F={fan}")
    depth = 1
    size = fan
    while size < n:
        size *= fan
        depth += 1
    return size, depth


def compression_ratio(stack: CscStack) -> float:
    return edge_count(stack) / float(stack.n * stack.n)


@dataclass(frozen=True)
class CscGeometry:
    """Размещение n образцов в стеке на size = F^L узлов (size > n — с фиктивными образцами)."""

    n: int
    size: int
    fan: int
    depth: int
    requested_depth: Optional[int] = None

    @property
    def padded(self) -> bool:
        return self.size != self.n

    @property
    def depth_adjusted(self) -> bool:
        return self.requested_depth is not None and self.requested_depth != self.depth

    def note(self) -> str:
        parts = []
        if self.padded:
            parts.append(f"N дополнено с {self.n} до {self.size} фиктивными образцами")
        if self.depth_adjusted:
            parts.append(f"L изменено с {self.requested_depth} на {self.depth}")
        return "; ".join(parts)


def plan_geometry(n: int, fan: int, depth: Optional[int] = None, pad: bool = True) -> CscGeometry:
    """
    Подбирает размер стека для n образцов.

    Если F^L = n — стек без дополнения. Иначе при pad=True: если F^L > n,
    размер F^L; если F^L < n или L не задано — ближайшая степень F не меньше n.

    Raises:
        InvalidInput: F < 2 или L < 1.
        ConstraintViolation: F^L != N и дополнение запрещено.
    """
    if fan < 2:
        raise InvalidInput(f"Коэффициент ветвления F должен быть >= 2: {fan}")
    if depth is not None and depth < 1:
        raise InvalidInput(f"Число слоёв L должно быть >= 1: {depth}")
    if depth is not None and fan**depth == n:
        return CscGeometry(n=n, size=n, fan=fan, depth=depth, requested_depth=depth)
    if depth is None:
        size, auto_depth = padded_size(n, fan)
        if size == n:
            return CscGeometry(n=n, size=n, fan=fan, depth=auto_depth)
    if not pad:
        shown = depth if depth is not None else padded_size(n, fan)[1]
        raise ConstraintViolation(
            f"Нарушено условие F^L = N·C: {fan}^{shown} = {fan**shown}, N·C = {n}; "
            "включите дополнение или выберите N, равное степени F"
        )
    if depth is not None and fan**depth > n:
        return CscGeometry(n=n, size=fan**depth, fan=fan, depth=depth, requested_depth=depth)
    size, auto_depth = padded_size(n, fan)
    return CscGeometry(n=n, size=size, fan=fan, depth=auto_depth, requested_depth=depth)
