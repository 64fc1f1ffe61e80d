"""
Плотные численные примитивы: симметричное собственное разложение, k-means,
детерминированный генератор случайных чисел и проверка градиентов
конечными разностями.

Все вычисления в float64. Функции чистые: работают только со своими
аргументами и не держат общего изменяемого состояния.
"""

from __future__ import annotations

import warnings
from typing import Callable, Optional, Sequence

import numpy as np
from numpy.typing import NDArray
from sklearn.cluster import KMeans
from sklearn.exceptions import ConvergenceWarning

from core.errors import InvalidInput, NumericalError

Matrix = NDArray[np.float64]
Tensor3 = NDArray[np.float64]
Rng = np.random.Generator

JACOBI_TOL = 1e-10
JACOBI_MAX_SWEEPS = 100
KMEANS_RESTARTS = 10


def make_rng(seed: int) -> Rng:
    """Генератор PCG64: одинаковый seed даёт побитово одинаковый поток."""
    if seed < 0 or seed >= 2**64:
        raise InvalidInput(f"seed должен быть в диапазоне [0, 2^64): {seed}")
    return np.random.default_rng(int(seed))


def derive_seed(rng: Rng) -> int:
    """Берёт из потока целое зерно для библиотек, принимающих int."""
    return int(rng.integers(0, 2**31 - 1))


def ensure_finite(values: NDArray[np.float64], what: str) -> None:
    if not np.all(np.isfinite(values)):
        raise NumericalError(f"Нечисловые значения в {what}", term=what)


def _round_robin(n: int) -> list[tuple[NDArray[np.intp], NDArray[np.intp]]]:
    """
    Расписание «круговой турнир» для параллельного метода Якоби.

    Каждый раунд — набор непересекающихся пар (p, q), p < q; за n-1 раундов
    (n для нечётного n) каждая пара встречается ровно один раз.
    """
    m = n if n % 2 == 0 else n + 1
    players = list(range(m))
    rounds: list[tuple[NDArray[np.intp], NDArray[np.intp]]] = []
    for _ in range(m - 1):
        ps: list[int] = []
        qs: list[int] = []
        for i in range(m // 2):
            a, b = players[i], players[m - 1 - i]
            if a >= n or b >= n:
                continue
            ps.append(min(a, b))
            qs.append(max(a, b))
        rounds.append((np.asarray(ps, dtype=np.intp), np.asarray(qs, dtype=np.intp)))
        players = [players[0], players[-1]] + players[1:-1]
    return rounds


def _off_norm(a: Matrix) -> float:
    return float(np.sqrt(max(0.0, float(np.sum(a * a)) - float(np.sum(np.diag(a) ** 2)))))


def _jacobi(a: Matrix, tol: float, max_sweeps: int) -> tuple[NDArray[np.float64], Matrix]:
    n = a.shape[0]
    a = a.copy()
    v = np.eye(n)
    norm = float(np.linalg.norm(a))
    if n == 1 or norm == 0.0:
        return np.diag(a).copy(), v
    threshold = tol * norm
    schedule = _round_robin(n)

    for _ in range(max_sweeps):
        if _off_norm(a) <= threshold:
            break
        for p, q in schedule:
            if p.size == 0:
                continue
            apq = a[p, q]
            app = a[p, p]
            aqq = a[q, q]
            nz = apq != 0.0
            safe_apq = np.where(nz, apq, 1.0)
            tau = np.where(nz, (aqq - app) / (2.0 * safe_apq), 0.0)
            sign = np.where(tau >= 0.0, 1.0, -1.0)
            t = np.where(nz, sign / (np.abs(tau) + np.sqrt(1.0 + tau * tau)), 0.0)
            c = 1.0 / np.sqrt(1.0 + t * t)
            s = t * c

            # Пары не пересекаются, поэтому вращения коммутируют и
            # применяются одновременно: сначала строки (J^T A), затем столбцы (A J).
            rp = a[p, :].copy()
            rq = a[q, :].copy()
            a[p, :] = c[:, None] * rp - s[:, None] * rq
            a[q, :] = s[:, None] * rp + c[:, None] * rq
            cp = a[:, p].copy()
            cq = a[:, q].copy()
            a[:, p] = cp * c - cq * s
            a[:, q] = cp * s + cq * c
            vp = v[:, p].copy()
            vq = v[:, q].copy()
            v[:, p] = vp * c - vq * s
            v[:, q] = vp * s + vq * c
    else:
        if _off_norm(a) > threshold:
            raise NumericalError(f"Метод Якоби не сошёлся за {max_sweeps} проходов")
    return np.diag(a).copy(), v


def sym_eig(
    a: Matrix,
    method: str = "jacobi",
    tol: float = JACOBI_TOL,
    max_sweeps: int = JACOBI_MAX_SWEEPS,
) -> tuple[NDArray[np.float64], Matrix]:
    """
    Собственное разложение симметричной матрицы.

    Args:
        a: квадратная матрица, симметричная с точностью 1e-9.
        method: "jacobi" — циклические вращения Якоби (по умолчанию),
            "lapack" — numpy.linalg.eigh (для сверки и больших N).

    Returns:
        (eigenvalues по убыванию, eigenvectors по столбцам в том же порядке).

    Raises:
        InvalidInput: матрица не квадратная, не симметричная или содержит nan/inf.
    """
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise InvalidInput(f"Ожидалась квадратная матрица, получено {a.shape}")
    if not np.all(np.isfinite(a)):
        raise InvalidInput("Матрица содержит нечисловые значения")
    if a.size and float(np.max(np.abs(a - a.T))) > 1e-9:
        raise InvalidInput("Матрица не симметрична (допуск 1e-9)")
    a = 0.5 * (a + a.T)

    if method == "lapack":
        values, vectors = np.linalg.eigh(a)
    elif method == "jacobi":
        values, vectors = _jacobi(a, tol, max_sweeps)
    else:
        raise InvalidInput(f"Неизвестный метод разложения: {method}")

    order = np.argsort(-values, kind="stable")
    return values[order], vectors[:, order]


def wcss(rows: Matrix, labels: Sequence[int] | NDArray[np.int64]) -> float:
    """Внутрикластерная сумма квадратов отклонений от центроидов."""
    rows = np.asarray(rows, dtype=np.float64)
    labels = np.asarray(labels)
    total = 0.0
    for lab in np.unique(labels):
        members = rows[labels == lab]
        total += float(np.sum((members - members.mean(axis=0)) ** 2))
    return total


def kmeans(rows: Matrix, k: int, rng: Rng, restarts: int = KMEANS_RESTARTS) -> NDArray[np.int64]:
    """
    k-means с k-means++ инициализацией и выбором лучшего из `restarts` запусков по WCSS.

    Зерно для sklearn берётся из переданного rng, поэтому результат
    детерминирован для заданного seed.

    Raises:
        InvalidInput: k < 1 или k > n.
    """
    rows = np.asarray(rows, dtype=np.float64)
    if rows.ndim != 2:
        raise InvalidInput(f"Ожидалась матрица n×d, получено {rows.shape}")
    n = rows.shape[0]
    if k < 1 or k > n:
        raise InvalidInput(f"Число кластеров k={k} должно быть в диапазоне [1, {n}]")
    if restarts < 1:
        raise InvalidInput("restarts должен быть >= 1")
    seed = derive_seed(rng)
    if k == 1:
        return np.zeros(n, dtype=np.int64)

    model = KMeans(
        n_clusters=k,
        init="k-means++",
        n_init=restarts,
        random_state=seed,
        algorithm="lloyd",
    )
    with warnings.catch_warnings():
        # При k, близком к n, и совпадающих точках sklearn предупреждает о вырожденности
        warnings.simplefilter("ignore", ConvergenceWarning)
        labels = model.fit_predict(rows)
    return np.asarray(labels, dtype=np.int64)


def fd_check(
    f: Callable[[NDArray[np.float64]], float],
    grad: Callable[[NDArray[np.float64]], NDArray[np.float64]],
    x: NDArray[np.float64],
    eps: float = 1e-6,
    coords: Optional[Sequence[int]] = None,
) -> float:
    """
    Сверяет аналитический градиент с центральными конечными разностями.

    Returns:
        max по координатам |разность − аналитика| / max(1, |аналитика|).

    Raises:
        NumericalError: f вернула nan/inf в окрестности точки.
    """
    x = np.array(x, dtype=np.float64, copy=True)
    analytic = np.asarray(grad(x.copy()), dtype=np.float64).ravel()
    if analytic.size != x.size:
        raise InvalidInput(f"Размер градиента {analytic.size} не совпадает с размером точки {x.size}")
    indices = range(x.size) if coords is None else coords

    worst = 0.0
    for i in indices:
        xp = x.copy()
        xp.flat[i] += eps
        xm = x.copy()
        xm.flat[i] -= eps
        fp = float(f(xp))
        fm = float(f(xm))
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise NumericalError(f"Нечисловое значение функции при проверке координаты {i}")
        numeric = (fp - fm) / (2.0 * eps)
        err = abs(numeric - analytic[i]) / max(1.0, abs(analytic[i]))
        worst = max(worst, err)
    return worst
