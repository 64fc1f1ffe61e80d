"""
Кластеризация по матрице коэффициентов самовыражения.

affinity → спектральная кластеризация (нормированный лапласиан, k-means по
нормированным строкам спектрального вложения) → метрики ACC / NMI / ARI.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from numpy.typing import NDArray
from scipy.optimize import linear_sum_assignment
from sklearn.metrics import adjusted_rand_score, normalized_mutual_info_score

from core.errors import FormatError, InvalidInput
from core.numerics import KMEANS_RESTARTS, Matrix, Rng, kmeans, sym_eig

AFFINITY_MODES = ("abs", "raw")
REPORT_COLUMNS = ("acc", "ari", "nmi", "params", "selfexpr_params", "k", "n")

Labels = Sequence[int] | NDArray[np.int64]


def affinity(w: Matrix, mode: str = "abs") -> Matrix:
    """
    Матрица сходства из коэффициентов W.

    abs: |W| + |W|ᵀ; raw: W + Wᵀ с отрицательными сходствами, обрезанными до 0.

    Raises:
        InvalidInput: W не квадратная или её диагональ ненулевая.
    """
    w = np.asarray(w, dtype=np.float64)
    if w.ndim != 2 or w.shape[0] != w.shape[1]:
        raise InvalidInput(f"Ожидалась квадратная матрица коэффициентов, получено {w.shape}")
    if np.any(np.diag(w) != 0.0):
        raise InvalidInput("Диагональ матрицы коэффициентов должна быть нулевой")
    if mode == "abs":
        a = np.abs(w)
        return a + a.T
    if mode == "raw":
        return np.maximum(w + w.T, 0.0)
    raise InvalidInput(f"Неизвестный режим аффинности: {mode}")


def normalized_laplacian(a: Matrix) -> Matrix:
    """L_sym = I − D^{-1/2} A D^{-1/2}; для узлов нулевой степени D^{-1/2} = 0."""
    degree = a.sum(axis=1)
    inv_sqrt = np.zeros_like(degree)
    positive = degree > 0
    inv_sqrt[positive] = 1.0 / np.sqrt(degree[positive])
    return np.eye(a.shape[0]) - inv_sqrt[:, None] * a * inv_sqrt[None, :]


def spectral_embedding(a: Matrix, k: int, eig_method: str = "jacobi") -> Matrix:
    """Собственные векторы k наименьших собственных значений L_sym с нормированными строками."""
    _, vectors = sym_eig(normalized_laplacian(a), method=eig_method)
    embedding = vectors[:, -k:]
    norms = np.linalg.norm(embedding, axis=1, keepdims=True)
    return np.divide(embedding, norms, out=np.zeros_like(embedding), where=norms > 0)


def spectral_cluster(
    a: Matrix,
    k: int,
    rng: Rng,
    eig_method: str = "jacobi",
    restarts: int = KMEANS_RESTARTS,
) -> NDArray[np.int64]:
    """
    Спектральная кластеризация по нормированному лапласиану.

    Raises:
        InvalidInput: k вне [1, n], матрица несимметрична или содержит отрицательные сходства.
    """
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise InvalidInput(f"Ожидалась квадратная матрица сходства, получено {a.shape}")
    n = a.shape[0]
    if k < 1 or k > n:
        raise InvalidInput(f"Число кластеров k={k} должно быть в диапазоне [1, {n}]")
    if np.any(a < 0):
        raise InvalidInput("Матрица сходства содержит отрицательные значения")
    return kmeans(spectral_embedding(a, k, eig_method), k, rng, restarts=restarts)


def _pair(pred: Labels, truth: Labels) -> tuple[NDArray[np.int64], NDArray[np.int64]]:
    p = np.asarray(pred).ravel()
    t = np.asarray(truth).ravel()
    if p.size != t.size:
        raise InvalidInput(f"Длины разметок различаются: {p.size} и {t.size}")
    if p.size == 0:
        raise InvalidInput("Разметки пусты")
    return p, t


def contingency(pred: Labels, truth: Labels) -> NDArray[np.int64]:
    p, t = _pair(pred, truth)
    _, p_idx = np.unique(p, return_inverse=True)
    _, t_idx = np.unique(t, return_inverse=True)
    table = np.zeros((p_idx.max() + 1, t_idx.max() + 1), dtype=np.int64)
    np.add.at(table, (p_idx, t_idx), 1)
    return table


def accuracy(pred: Labels, truth: Labels) -> float:
    """Доля совпадений при оптимальном взаимно однозначном сопоставлении меток (венгерский метод)."""
    table = contingency(pred, truth)
    rows, cols = linear_sum_assignment(-table)
    return float(table[rows, cols].sum()) / float(table.sum())


def nmi(pred: Labels, truth: Labels) -> float:
    """NMI с нормировкой на среднее геометрическое энтропий (натуральный логарифм)."""
    p, t = _pair(pred, truth)
    single_p = np.unique(p).size == 1
    single_t = np.unique(t).size == 1
    if single_p or single_t:
        return 1.0 if (single_p and single_t) else 0.0
    return float(normalized_mutual_info_score(t, p, average_method="geometric"))


def ari(pred: Labels, truth: Labels) -> float:
    p, t = _pair(pred, truth)
    return float(adjusted_rand_score(t, p))


@dataclass
class ClusterReport:
    labels: NDArray[np.int64]
    k: int
    active_params: int
    total_params: int
    acc: Optional[float] = None
    nmi: Optional[float] = None
    ari: Optional[float] = None

    @property
    def has_metrics(self) -> bool:
        return self.acc is not None

    def row(self) -> dict[str, object]:
        def fmt(value: Optional[float]) -> str:
            return "" if value is None else repr(value)

        return {
            "acc": fmt(self.acc),
            "ari": fmt(self.ari),
            "nmi": fmt(self.nmi),
            "params": self.total_params,
            "selfexpr_params": self.active_params,
            "k": self.k,
            "n": int(self.labels.size),
        }


def make_report(
    labels: NDArray[np.int64],
    k: int,
    active_params: int,
    total_params: int,
    truth: Optional[Labels] = None,
) -> ClusterReport:
    report = ClusterReport(labels=np.asarray(labels, dtype=np.int64), k=k, active_params=active_params, total_params=total_params)
    if truth is not None:
        report.acc = accuracy(labels, truth)
        report.nmi = nmi(labels, truth)
        report.ari = ari(labels, truth)
    return report


def write_report_csv(report: ClusterReport, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.DictWriter(f, fieldnames=REPORT_COLUMNS, lineterminator="\n")
        writer.writeheader()
        writer.writerow(report.row())
    return path


def write_labels(labels: Labels, path: str | Path) -> Path:
    """Одна целочисленная метка на строку."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("".join(f"{int(v)}\n" for v in np.asarray(labels).ravel()), encoding="utf-8")
    return path


def read_labels(path: str | Path) -> NDArray[np.int64]:
    path = Path(path)
    try:
        lines = [line.strip() for line in path.read_text(encoding="utf-8").splitlines()]
        return np.asarray([int(line) for line in lines if line], dtype=np.int64)
    except (OSError, ValueError) as exc:
        raise FormatError(f"Не удалось прочитать метки из {path}: {exc}", path=str(path)) from exc
