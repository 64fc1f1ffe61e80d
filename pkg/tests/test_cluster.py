"""Тесты для модуля core.cluster (аффинность, спектральная кластеризация, метрики)."""

from __future__ import annotations

import itertools
import math
from pathlib import Path

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from core import cluster
from core import numerics as num
from core.errors import FormatError, InvalidInput


def _blocks(sizes: list[int]) -> np.ndarray:
    """Блочно-диагональная матрица сходства: единицы внутри блока, нулевая диагональ."""
    labels = np.repeat(np.arange(len(sizes)), sizes)
    a = (labels[:, None] == labels[None, :]).astype(float)
    np.fill_diagonal(a, 0.0)
    return a


def _accuracy_oracle(pred: list[int], truth: list[int]) -> float:
    """Перебор всех взаимно однозначных сопоставлений меток."""
    p_values = sorted(set(pred))
    t_values = sorted(set(truth))
    size = max(len(p_values), len(t_values))
    best = 0
    for perm in itertools.permutations(range(size), len(p_values)):
        mapping = {p: perm[i] for i, p in enumerate(p_values)}
        hits = sum(1 for p, t in zip(pred, truth) if mapping[p] < len(t_values) and t_values[mapping[p]] == t)
        best = max(best, hits)
    return best / len(pred)


def _entropy(labels: list[int]) -> float:
    n = len(labels)
    return -sum((c / n) * math.log(c / n) for c in (labels.count(v) for v in set(labels)))


def _nmi_oracle(pred: list[int], truth: list[int]) -> float:
    n = len(pred)
    hp, ht = _entropy(pred), _entropy(truth)
    if hp == 0.0 or ht == 0.0:
        return 1.0 if hp == ht == 0.0 else 0.0
    mi = 0.0
    for a in set(pred):
        for b in set(truth):
            joint = sum(1 for p, t in zip(pred, truth) if p == a and t == b) / n
            if joint > 0:
                mi += joint * math.log(joint / ((pred.count(a) / n) * (truth.count(b) / n)))
    return mi / math.sqrt(hp * ht)


def _ari_oracle(pred: list[int], truth: list[int]) -> float:
    """Подсчёт по всем парам образцов."""
    tp = fp = fn = tn = 0
    for i, j in itertools.combinations(range(len(pred)), 2):
        same_p = pred[i] == pred[j]
        same_t = truth[i] == truth[j]
        tp += same_p and same_t
        fp += same_p and not same_t
        fn += same_t and not same_p
        tn += not same_p and not same_t
    if fn == 0 and fp == 0:
        return 1.0
    return 2.0 * (tp * tn - fn * fp) / ((tp + fn) * (fn + tn) + (tp + fp) * (fp + tn))


def test_affinity_examples() -> None:
    """[[0,1],[0,0]] → [[0,1],[1,0]]; [[0,−2],[1,0]] → [[0,3],[3,0]]."""
    assert np.array_equal(cluster.affinity(np.array([[0.0, 1.0], [0.0, 0.0]])), [[0.0, 1.0], [1.0, 0.0]])
    assert np.array_equal(cluster.affinity(np.array([[0.0, -2.0], [1.0, 0.0]])), [[0.0, 3.0], [3.0, 0.0]])


def test_affinity_raw_mode_clips_negatives() -> None:
    """raw: W + Wᵀ, отрицательные сходства обрезаются до нуля."""
    a = cluster.affinity(np.array([[0.0, -2.0, 0.5], [1.0, 0.0, 0.0], [0.5, 0.0, 0.0]]), mode="raw")
    assert np.array_equal(a, [[0.0, 0.0, 1.0], [0.0, 0.0, 0.0], [1.0, 0.0, 0.0]])


def test_affinity_rejects_bad_input() -> None:
    """Ненулевая диагональ, неквадратная матрица или неизвестный режим — InvalidInput."""
    for w, mode in ((np.eye(2), "abs"), (np.zeros((2, 3)), "abs"), (np.zeros((2, 2)), "cosine")):
        try:
            cluster.affinity(w, mode=mode)
            assert False, "Ожидалась InvalidInput"
        except InvalidInput:
            pass


@settings(max_examples=50, deadline=None)
@given(w=hnp.arrays(np.float64, (5, 5), elements=st.floats(min_value=-10.0, max_value=10.0)))
def test_affinity_property(w: np.ndarray) -> None:
    """Аффинность симметрична, неотрицательна и имеет нулевую диагональ."""
    w = w.copy()
    np.fill_diagonal(w, 0.0)
    a = cluster.affinity(w)
    assert np.array_equal(a, a.T)
    assert np.all(a >= 0.0)
    assert np.all(np.diag(a) == 0.0)


def test_spectral_two_cliques() -> None:
    """Две несвязанные клики {0,1,2} и {3,4,5} при k=2 разделяются."""
    labels = cluster.spectral_cluster(_blocks([3, 3]), 2, num.make_rng(0))
    assert len(set(labels[:3])) == 1 and len(set(labels[3:])) == 1
    assert labels[0] != labels[3]


def test_spectral_three_blocks_accuracy() -> None:
    """Три блока: ACC = 1 для обоих методов собственного разложения."""
    truth = np.repeat(np.arange(3), [4, 5, 3])
    for method in ("jacobi", "lapack"):
        labels = cluster.spectral_cluster(_blocks([4, 5, 3]), 3, num.make_rng(1), eig_method=method)
        assert cluster.accuracy(labels, truth) == 1.0


def test_spectral_k_equals_n_and_too_large() -> None:
    """k = n — каждый образец в своём кластере; k > n — InvalidInput."""
    a = _blocks([2, 2]) + 0.1 * (1.0 - np.eye(4))
    labels = cluster.spectral_cluster(a, 4, num.make_rng(2))
    assert len(set(labels.tolist())) == 4
    try:
        cluster.spectral_cluster(a, 5, num.make_rng(2))
        assert False, "Ожидалась InvalidInput"
    except InvalidInput:
        pass


def test_spectral_is_deterministic() -> None:
    """Одинаковый seed — одинаковая разметка."""
    rng = num.make_rng(3)
    a = cluster.affinity(np.where(np.eye(8) > 0, 0.0, rng.uniform(0.0, 1.0, size=(8, 8))))
    first = cluster.spectral_cluster(a, 3, num.make_rng(9))
    second = cluster.spectral_cluster(a, 3, num.make_rng(9))
    assert np.array_equal(first, second)


def test_accuracy_examples() -> None:
    """Совпадение с точностью до перестановки меток и частичное совпадение."""
    assert cluster.accuracy([0, 0, 1, 1], [1, 1, 0, 0]) == 1.0
    assert cluster.accuracy([0, 0, 1, 1], [0, 1, 1, 1]) == 0.75
    assert cluster.accuracy([0, 1, 2, 3], [0, 0, 0, 0]) == 0.25


def test_accuracy_length_mismatch() -> None:
    """Разные длины разметок — InvalidInput."""
    try:
        cluster.accuracy([0, 1], [0, 1, 1])
        assert False, "Ожидалась InvalidInput"
    except InvalidInput:
        pass


def test_identical_partitions() -> None:
    """Одинаковые разметки: ACC = NMI = ARI = 1; постоянное предсказание даёт ARI = 0."""
    truth = [0, 0, 1, 1, 2, 2]
    assert cluster.accuracy(truth, truth) == 1.0
    assert math.isclose(cluster.nmi(truth, truth), 1.0)
    assert math.isclose(cluster.ari(truth, truth), 1.0)
    assert cluster.ari([0] * 6, truth) == 0.0
    assert cluster.nmi([0] * 6, truth) == 0.0


def _canonical_labelings(n: int, max_clusters: int) -> list[list[int]]:
    """Все разбиения n образцов на ≤ max_clusters кластеров (строки ограниченного роста)."""
    found: list[list[int]] = []

    def extend(prefix: list[int], used: int) -> None:
        if len(prefix) == n:
            found.append(list(prefix))
            return
        for label in range(min(used + 1, max_clusters)):
            extend(prefix + [label], max(used, label + 1))

    extend([], 0)
    return found


def test_canonical_labelings_count() -> None:
    """Число разбиений 6 образцов на ≤ 3 кластера: 1 + 31 + 90."""
    assert len(_canonical_labelings(6, 3)) == 122
    assert _canonical_labelings(2, 3) == [[0, 0], [0, 1]]


def test_metrics_match_brute_force() -> None:
    """Все пары разметок ≤ 6 образцов и ≤ 3 кластеров: ACC точно, NMI и ARI с точностью 1e-12."""
    for n in range(1, 7):
        labelings = _canonical_labelings(n, 3)
        for pred in labelings:
            for truth in labelings:
                assert cluster.accuracy(pred, truth) == _accuracy_oracle(pred, truth)
                assert abs(cluster.nmi(pred, truth) - _nmi_oracle(pred, truth)) < 1e-12
                assert abs(cluster.ari(pred, truth) - _ari_oracle(pred, truth)) < 1e-12


@settings(max_examples=40, deadline=None)
@given(labels=st.lists(st.integers(min_value=0, max_value=3), min_size=1, max_size=8), shift=st.integers(1, 3))
def test_metrics_permutation_invariant(labels: list[int], shift: int) -> None:
    """Переименование кластеров предсказания не меняет метрики."""
    truth = [(v * 7 + 1) % 3 for v in range(len(labels))]
    renamed = [(v + shift) % 4 for v in labels]
    assert cluster.accuracy(labels, truth) == cluster.accuracy(renamed, truth)
    assert math.isclose(cluster.nmi(labels, truth), cluster.nmi(renamed, truth), abs_tol=1e-12)
    assert math.isclose(cluster.ari(labels, truth), cluster.ari(renamed, truth), abs_tol=1e-12)


def test_report_and_files(tmp_path: Path) -> None:
    """Отчёт с метриками пишется в CSV; метки читаются обратно."""
    report = cluster.make_report(np.array([1, 1, 0, 0]), 2, active_params=12, total_params=40, truth=[0, 0, 1, 1])
    assert report.has_metrics and report.acc == 1.0
    path = cluster.write_report_csv(report, tmp_path / "metrics.csv")
    lines = path.read_text(encoding="utf-8").splitlines()
    assert lines[0] == ",".join(cluster.REPORT_COLUMNS)
    assert lines[1].endswith(",40,12,2,4")

    bare = cluster.make_report(np.array([0, 1]), 2, active_params=2, total_params=2)
    assert not bare.has_metrics
    assert bare.row()["acc"] == ""

    labels_path = cluster.write_labels([2, 0, 1], tmp_path / "labels.txt")
    assert cluster.read_labels(labels_path).tolist() == [2, 0, 1]


def test_read_labels_errors(tmp_path: Path) -> None:
    """Нечисловая строка или отсутствующий файл — FormatError."""
    bad = tmp_path / "bad.txt"
    bad.write_text("0\nx\n", encoding="utf-8")
    for path in (bad, tmp_path / "missing.txt"):
        try:
            cluster.read_labels(path)
            assert False, "Ожидалась FormatError"
        except FormatError:
            pass
