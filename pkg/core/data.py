"""
Мультимодальные данные: загрузка каталогов изображений, синтетический
генератор объединения подпространств и стратифицированные подвыборки.

Формат каталога:

    root/<modality>/<sample_id>.pgm   — бинарный PGM (P5), 8 или 16 бит
    root/labels.csv                   — заголовок "sample_id,label" (необязателен)

Все модальности выровнены по образцам: порядок sample_ids одинаков для
каждой модальности, значения пикселей нормированы в [0, 1].
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from numpy.typing import NDArray
from scipy import ndimage

from core.debuglog import debug
from core.errors import AlignmentError, FormatError, InvalidInput, ShapeError
from core.numerics import Matrix, Rng, make_rng

LABELS_FILE = "labels.csv"
PGM_SUFFIX = ".pgm"


@dataclass
class MultiModalDataset:
    """
    modalities[t] — тензор (n, h, w, c) модальности t.
    labels — номера кластеров или None, если разметки нет.
    """

    modalities: list[NDArray[np.float64]]
    labels: Optional[NDArray[np.int64]] = None
    sample_ids: list[str] = field(default_factory=list)
    names: list[str] = field(default_factory=list)

    def __post_init__(self) -> None:
        if not self.modalities:
            raise InvalidInput("Датасет должен содержать хотя бы одну модальность")
        self.modalities = [np.asarray(x, dtype=np.float64) for x in self.modalities]
        n = self.modalities[0].shape[0]
        for t, x in enumerate(self.modalities):
            if x.ndim != 4:
                raise ShapeError(f"Модальность {t}: ожидался тензор (n, h, w, c), получено {x.shape}")
            if x.shape[0] != n:
                raise AlignmentError(f"Модальность {t} содержит {x.shape[0]} образцов вместо {n}")
        if not self.sample_ids:
            self.sample_ids = [f"{i:05d}" for i in range(n)]
        if len(self.sample_ids) != n:
            raise AlignmentError("Число идентификаторов не совпадает с числом образцов")
        if not self.names:
            self.names = [f"m{t}" for t in range(len(self.modalities))]
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64)
            if self.labels.shape != (n,):
                raise AlignmentError("Число меток не совпадает с числом образцов")

    @property
    def n(self) -> int:
        return int(self.modalities[0].shape[0])

    @property
    def modality_count(self) -> int:
        return len(self.modalities)

    @property
    def image_shapes(self) -> list[tuple[int, int, int]]:
        return [tuple(int(v) for v in x.shape[1:]) for x in self.modalities]  # type: ignore[misc]

    @property
    def cluster_count(self) -> Optional[int]:
        if self.labels is None:
            return None
        return int(np.unique(self.labels).size)

    def select(self, indices: Sequence[int] | NDArray[np.intp]) -> "MultiModalDataset":
        idx = np.asarray(indices, dtype=np.intp)
        return MultiModalDataset(
            modalities=[x[idx] for x in self.modalities],
            labels=None if self.labels is None else self.labels[idx],
            sample_ids=[self.sample_ids[i] for i in idx],
            names=list(self.names),
        )


@dataclass(frozen=True)
class SynthSpec:
    clusters: int = 5
    subspace_dim: int = 3
    ambient: int = 1024
    per_cluster: int = 40
    modalities: int = 3
    noise_sigma: float = 0.01
    seed: int = 0

    def __post_init__(self) -> None:
        if self.clusters < 1 or self.per_cluster < 1 or self.modalities < 1:
            raise InvalidInput("Число кластеров, образцов на кластер и модальностей должно быть >= 1")
        side = math.isqrt(self.ambient) if self.ambient > 0 else 0
        if side * side != self.ambient or side == 0:
            raise InvalidInput(f"Размерность m={self.ambient} должна быть полным квадратом")
        if not 1 <= self.subspace_dim <= self.ambient:
            raise InvalidInput(f"Размерность подпространства должна быть в [1, m]: {self.subspace_dim}")
        if self.noise_sigma < 0:
            raise InvalidInput("noise_sigma должен быть >= 0")

    @property
    def side(self) -> int:
        return math.isqrt(self.ambient)

    @property
    def n(self) -> int:
        return self.clusters * self.per_cluster


# ----------------------------- PGM -----------------------------


def _pgm_tokens(raw: bytes, count: int) -> tuple[list[bytes], int]:
    """Читает count токенов заголовка PGM, пропуская комментарии; возвращает позицию данных."""
    tokens: list[bytes] = []
    pos = 0
    while len(tokens) < count:
        while pos < len(raw) and raw[pos : pos + 1].isspace():
            pos += 1
        if pos >= len(raw):
            break
        if raw[pos : pos + 1] == b"#":
            while pos < len(raw) and raw[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos : pos + 1].isspace():
            pos += 1
        tokens.append(raw[start:pos])
    # ровно один пробельный символ перед данными
    return tokens, pos + 1


def read_pgm(path: Path) -> NDArray[np.float64]:
    """
    Читает бинарный PGM и возвращает значения в [0, 1] формы (h, w).

    Raises:
        FormatError: файл не читается или не является P5.
    """
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise FormatError(f"Не удалось прочитать {path}: {exc}", path=str(path)) from exc

    tokens, offset = _pgm_tokens(raw, 4)
    if len(tokens) < 4 or tokens[0] != b"P5":
        raise FormatError(f"{path}: ожидался бинарный PGM (P5)", path=str(path))
    try:
        width, height, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    except ValueError as exc:
        raise FormatError(f"{path}: повреждённый заголовок PGM", path=str(path)) from exc
    if width < 1 or height < 1 or not 0 < maxval < 65536:
        raise FormatError(f"{path}: недопустимые размеры или maxval", path=str(path))

    dtype = np.dtype(">u2") if maxval > 255 else np.dtype(np.uint8)
    expected = width * height * dtype.itemsize
    payload = raw[offset : offset + expected]
    if len(payload) != expected:
        raise FormatError(f"{path}: данных {len(payload)} байт, ожидалось {expected}", path=str(path))
    pixels = np.frombuffer(payload, dtype=dtype).reshape(height, width)
    return pixels.astype(np.float64) / float(maxval)


def write_pgm(path: Path, image: NDArray[np.float64]) -> None:
    """Записывает изображение со значениями в [0, 1] как 8-битный P5."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 2:
        raise ShapeError(f"Ожидалось двумерное изображение, получено {image.shape}")
    pixels = np.clip(np.rint(image * 255.0), 0, 255).astype(np.uint8)
    h, w = pixels.shape
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(f"P5\n{w} {h}\n255\n".encode("ascii") + pixels.tobytes())


def resize_bilinear(image: NDArray[np.float64], size: int) -> NDArray[np.float64]:
    h, w = image.shape
    if (h, w) == (size, size):
        return image
    out = ndimage.zoom(image, (size / h, size / w), order=1, mode="nearest")
    if out.shape != (size, size):
        raise ShapeError(f"Масштабирование {h}x{w} дало {out.shape} вместо {size}x{size}")
    return np.clip(out, 0.0, 1.0)


def _read_labels(path: Path, sample_ids: list[str]) -> Optional[NDArray[np.int64]]:
    if not path.is_file():
        return None
    mapping: dict[str, int] = {}
    try:
        with open(path, newline="", encoding="utf-8") as f:
            reader = csv.reader(f)
            header = next(reader, None)
            if header is None or len(header) < 2:
                raise FormatError(f"{path}: ожидался заголовок sample_id,label", path=str(path))
            for row in reader:
                if not row:
                    continue
                key = Path(row[0].strip()).stem
                mapping[key] = int(row[1])
    except (OSError, ValueError, IndexError) as exc:
        raise FormatError(f"{path}: не удалось разобрать метки ({exc})", path=str(path)) from exc
    missing = [sid for sid in sample_ids if sid not in mapping]
    if missing:
        raise AlignmentError(f"В {LABELS_FILE} нет метки для {missing[0]}", filename=missing[0])
    return np.asarray([mapping[sid] for sid in sample_ids], dtype=np.int64)


def load_image_dirs(
    root: str | Path,
    modality_dirs: Optional[Sequence[str]] = None,
    size: int = 32,
) -> MultiModalDataset:
    """
    Загружает выровненные модальности из подкаталогов root.

    Args:
        root: корневой каталог датасета.
        modality_dirs: имена подкаталогов модальностей (по умолчанию — все, по алфавиту).
        size: сторона итогового квадратного изображения.

    Raises:
        InvalidInput: каталог не найден или в нём нет модальностей.
        AlignmentError: файл есть не во всех модальностях (filename — его имя).
        FormatError: файл не читается как PGM.
    """
    root = Path(root)
    if not root.is_dir():
        raise InvalidInput(f"Каталог датасета не найден: {root}")
    if size < 1:
        raise InvalidInput("size должен быть >= 1")
    names = list(modality_dirs) if modality_dirs else sorted(p.name for p in root.iterdir() if p.is_dir())
    if not names:
        raise InvalidInput(f"В {root} нет подкаталогов модальностей")

    files: dict[str, set[str]] = {}
    for name in names:
        sub = root / name
        if not sub.is_dir():
            raise InvalidInput(f"Каталог модальности не найден: {sub}")
        files[name] = {p.name for p in sub.iterdir() if p.suffix.lower() == PGM_SUFFIX}

    everything = set().union(*files.values())
    for name in names:
        missing = sorted(everything - files[name])
        if missing:
            raise AlignmentError(
                f"В модальности {name} нет файла {missing[0]}",
                filename=missing[0],
            )
    ordered = sorted(everything)
    if not ordered:
        raise InvalidInput(f"В {root} нет файлов {PGM_SUFFIX}")

    modalities = []
    for name in names:
        images = [resize_bilinear(read_pgm(root / name / fname), size) for fname in ordered]
        modalities.append(np.stack(images)[..., None])
    sample_ids = [Path(f).stem for f in ordered]
    labels = _read_labels(root / LABELS_FILE, sample_ids)
    debug(f"load_image_dirs root={root} modalities={names} n={len(ordered)} size={size}")
    return MultiModalDataset(modalities=modalities, labels=labels, sample_ids=sample_ids, names=names)


# ----------------------------- синтетика -----------------------------


@dataclass
class SynthVectors:
    vectors: list[Matrix]
    bases: list[list[Matrix]]
    labels: NDArray[np.int64]


def synth_vectors(spec: SynthSpec, rng: Optional[Rng] = None) -> SynthVectors:
    """
    Сырые векторы объединения подпространств до масштабирования.

    Для кластера p и модальности t базис B_p(t) (m×d_p) ортонормирован;
    образец равен B_p(t)·z + шум, z ~ N(0, I). Образцы упорядочены по кластерам.
    """
    rng = rng if rng is not None else make_rng(spec.seed)
    bases: list[list[Matrix]] = []
    for _ in range(spec.modalities):
        per_cluster = []
        for _ in range(spec.clusters):
            q, _ = np.linalg.qr(rng.standard_normal((spec.ambient, spec.subspace_dim)))
            per_cluster.append(q)
        bases.append(per_cluster)

    vectors: list[Matrix] = []
    for t in range(spec.modalities):
        blocks = []
        for p in range(spec.clusters):
            z = rng.standard_normal((spec.subspace_dim, spec.per_cluster))
            block = (bases[t][p] @ z).T
            if spec.noise_sigma > 0:
                block = block + rng.normal(0.0, spec.noise_sigma, size=block.shape)
            blocks.append(block)
        vectors.append(np.concatenate(blocks, axis=0))
    labels = np.repeat(np.arange(spec.clusters, dtype=np.int64), spec.per_cluster)
    return SynthVectors(vectors=vectors, bases=bases, labels=labels)


def rescale_unit(values: NDArray[np.float64]) -> NDArray[np.float64]:
    """Аффинное отображение всего массива в [0, 1] по глобальным min/max."""
    lo = float(values.min())
    hi = float(values.max())
    if hi - lo <= 0.0:
        return np.zeros_like(values)
    return (values - lo) / (hi - lo)


def synth_generate(spec: SynthSpec) -> MultiModalDataset:
    """Синтетический мультимодальный датасет: векторы → изображения side×side → [0, 1]."""
    raw = synth_vectors(spec)
    side = spec.side
    modalities = [rescale_unit(v).reshape(spec.n, side, side, 1) for v in raw.vectors]
    debug(
        f"synth_generate P={spec.clusters} d={spec.subspace_dim} m={spec.ambient} "
        f"per_cluster={spec.per_cluster} T={spec.modalities} noise={spec.noise_sigma} seed={spec.seed}"
    )
    return MultiModalDataset(modalities=modalities, labels=raw.labels)


def subset(dataset: MultiModalDataset, fraction: float, seed: int, clusters: Optional[int] = None) -> MultiModalDataset:
    """
    Подвыборка доли fraction: стратифицированно по меткам (⌊f·count⌋ из каждого
    кластера), иначе равномерно. Исходный порядок образцов сохраняется.

    Raises:
        InvalidInput: fraction вне (0, 1] или в подвыборке меньше образцов, чем кластеров.
    """
    if not 0.0 < fraction <= 1.0:
        raise InvalidInput(f"Доля данных должна быть в (0, 1]: {fraction}")
    rng = make_rng(seed)
    if dataset.labels is None:
        take = int(math.floor(fraction * dataset.n))
        chosen = rng.choice(dataset.n, size=take, replace=False) if take else np.array([], dtype=np.intp)
        minimum = clusters or 1
    else:
        parts = []
        for label in np.unique(dataset.labels):
            members = np.flatnonzero(dataset.labels == label)
            take = int(math.floor(fraction * members.size))
            if take:
                parts.append(rng.choice(members, size=take, replace=False))
        chosen = np.concatenate(parts) if parts else np.array([], dtype=np.intp)
        minimum = clusters or int(np.unique(dataset.labels).size)
    if chosen.size < minimum:
        raise InvalidInput(
            f"Доля {fraction} даёт {chosen.size} образцов — меньше числа кластеров {minimum}"
        )
    return dataset.select(np.sort(chosen))


def export_dataset(dataset: MultiModalDataset, root: str | Path) -> Path:
    """Сохраняет датасет в формате каталога (PGM по модальностям + labels.csv)."""
    root = Path(root)
    for name, x in zip(dataset.names, dataset.modalities):
        if x.shape[-1] != 1:
            raise InvalidInput("Экспорт в PGM поддерживает только одноканальные модальности")
        for sid, image in zip(dataset.sample_ids, x[..., 0]):
            write_pgm(root / name / f"{sid}{PGM_SUFFIX}", image)
    if dataset.labels is not None:
        with open(root / LABELS_FILE, "w", newline="", encoding="utf-8") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(["sample_id", "label"])
            for sid, label in zip(dataset.sample_ids, dataset.labels):
                writer.writerow([sid, int(label)])
    return root


SYNTH_KEYS = {
    "P": "clusters",
    "d": "subspace_dim",
    "m": "ambient",
    "per_cluster": "per_cluster",
    "T": "modalities",
    "noise": "noise_sigma",
    "seed": "seed",
}


def parse_synth_source(source: str, seed: int = 0) -> SynthSpec:
    """
    "synth:default" или "synth:P=3,d=2,m=64,per_cluster=10,T=2,noise=0,seed=1".

    Без явного seed используется переданный.
    """
    body = source.split(":", 1)[1] if ":" in source else ""
    spec = SynthSpec(seed=seed)
    if body in ("", "default"):
        return spec
    changes: dict[str, object] = {}
    for item in body.split(","):
        key, sep, value = item.partition("=")
        key = key.strip()
        if not sep or key not in SYNTH_KEYS:
            raise InvalidInput(f"Неизвестный параметр синтетики: {item!r} (доступны: {', '.join(SYNTH_KEYS)})")
        field_name = SYNTH_KEYS[key]
        try:
            changes[field_name] = float(value) if field_name == "noise_sigma" else int(value)
        except ValueError as exc:
            raise InvalidInput(f"Некорректное значение {key}={value!r}") from exc
    return replace(spec, **changes)  # type: ignore[arg-type]


def resolve_data_source(
    source: str,
    size: int = 32,
    seed: int = 0,
    modality_dirs: Optional[Sequence[str]] = None,
) -> MultiModalDataset:
    """Источник данных: "synth:..." — генератор, иначе путь к каталогу."""
    if source.startswith("synth"):
        return synth_generate(parse_synth_source(source, seed))
    return load_image_dirs(source, modality_dirs, size)
