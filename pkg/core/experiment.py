"""
Сценарии экспериментов поверх ядра: обучение с сохранением артефактов,
кластеризация по контрольной точке, испытание (данные → обучение →
кластеризация → метрики) и развёртки по долям удаляемых рёбер, долям
данных и сравнение полносвязного слоя с CSC.

Каждое испытание изолировано: собственный seed (подвыборка данных,
инициализация, маска, k-means) и собственный подкаталог вывода.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from core import checkpoint as ckpt
from core import cluster as cluster_core
from core import csc as csc_core
from core import model as model_core
from core import selfexpr as se
from core import train as train_core
from core.config import ClusterSettings, ExperimentConfig, ModelSettings
from core.data import MultiModalDataset, resolve_data_source, subset
from core.debuglog import debug
from core.errors import InvalidInput
from core.numerics import make_rng
from core.runner import Trial, run_trials

CHECKPOINT_FILE = "model.vfck"
LOSS_FILE = "loss.csv"
TRUTH_FILE = "truth.txt"
LABELS_FILE = "labels.txt"
METRICS_FILE = "metrics.csv"
PRUNE_FILE = "prune_sweep.csv"
FRACTION_FILE = "fraction_sweep.csv"
CSC_FILE = "csc.csv"

SWEEP_COLUMNS = ("kind", "fraction", "ratio", "n", "seed", "acc", "ari", "nmi", "params")
CSC_COLUMNS = (
    "fraction",
    "fc_acc",
    "fc_ari",
    "fc_nmi",
    "fc_params",
    "csc_acc",
    "csc_ari",
    "csc_nmi",
    "csc_params",
    "compression",
    "padded_n",
)
METRICS = ("acc", "ari", "nmi")


# ----------------------------- сборка -----------------------------


def load_dataset(config: ExperimentConfig) -> MultiModalDataset:
    """Полный датасет из config.data (без подвыборки)."""
    data = config.data
    return resolve_data_source(data.source, size=data.size, seed=data.seed, modality_dirs=data.modalities or None)


def build_mask(
    settings: ModelSettings,
    n: int,
    mask_seed: Optional[int] = None,
) -> tuple[se.MaskKind, Optional[csc_core.CscGeometry]]:
    """Маска самовыражающего слоя по настройкам модели; для CSC также размещение узлов."""
    if settings.mask == "random":
        seed = settings.mask_seed if mask_seed is None else mask_seed
        return se.RandomPrunedMask(ratio=settings.prune_ratio, seed=seed), None
    if settings.mask == "csc":
        geometry = csc_core.plan_geometry(n, settings.csc_fan, settings.csc_depth, pad=settings.csc_pad)
        stack = csc_core.build_stack(geometry.size, geometry.fan, geometry.depth)
        return se.CscMask(stack=stack), geometry
    return se.FullMask(), None


def build_model(
    settings: ModelSettings,
    dataset: MultiModalDataset,
    seed: int,
    mask_seed: Optional[int] = None,
) -> tuple[model_core.VmscModel, Optional[csc_core.CscGeometry]]:
    mask, geometry = build_mask(settings, dataset.n, mask_seed)
    model = model_core.build_model(
        model_core.PRESET_FILTERS[settings.preset],
        dataset.image_shapes,
        dataset.n,
        make_rng(seed),
        mask=mask,
        gamma=settings.gamma,
        mu=settings.mu,
        lam=settings.lam,
        reg_kind=settings.reg_kind,
        decoder_input=settings.decoder_input,
        csc_reg=settings.csc_reg,
        preset_name=settings.preset,
    )
    return model, geometry


def resolve_k(k: Optional[int], truth: Optional[np.ndarray]) -> int:
    if k is not None:
        return k
    if truth is None:
        raise InvalidInput("Число кластеров k не задано, и разметки для его определения нет")
    return int(np.unique(truth).size)


def cluster_model(
    model: model_core.VmscModel,
    settings: ClusterSettings,
    truth: Optional[np.ndarray] = None,
    k: Optional[int] = None,
    seed: Optional[int] = None,
) -> cluster_core.ClusterReport:
    """Аффинность по W, спектральная кластеризация и метрики (если есть разметка)."""
    k = resolve_k(k if k is not None else settings.k, truth)
    a = cluster_core.affinity(se.coefficient_matrix(model.selfexpr), settings.affinity)
    rng = make_rng(settings.seed if seed is None else seed)
    labels = cluster_core.spectral_cluster(a, k, rng, eig_method=settings.eig_method, restarts=settings.restarts)
    return cluster_core.make_report(
        labels,
        k,
        active_params=se.active_param_count(model.selfexpr),
        total_params=model_core.total_param_count(model),
        truth=truth,
    )


# ----------------------------- train / cluster -----------------------------


@dataclass
class TrainArtifacts:
    checkpoint: Path
    loss_csv: Path
    truth: Optional[Path]
    result: train_core.TrainResult
    geometry: Optional[csc_core.CscGeometry] = None


def train_run(
    config: ExperimentConfig,
    output_dir: str | Path,
    seed: Optional[int] = None,
    progress_callback: Callable[[int, int, train_core.EpochRecord], None] | None = None,
) -> TrainArtifacts:
    """
    Обучение с артефактами: контрольная точка (каждые log_every эпох и в конце),
    кривая потерь и истинные метки рядом с контрольной точкой (если они есть).
    """
    seed = config.seeds[0] if seed is None else seed
    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)
    dataset = load_dataset(config)
    if config.data.fraction < 1.0:
        dataset = subset(dataset, config.data.fraction, seed)
    model, geometry = build_model(config.model, dataset, seed)
    checkpoint_path = out / CHECKPOINT_FILE
    k = config.cluster.k or dataset.cluster_count

    def save(epoch: int, current: model_core.VmscModel) -> None:
        extras: dict[str, object] = {"seed": seed, "epoch": epoch, "k": k}
        if geometry is not None:
            extras["csc_padding"] = geometry.size - geometry.n
        ckpt.save_checkpoint(current, checkpoint_path, extras)

    result = train_core.fit(
        model,
        dataset,
        config.train,
        progress_callback=progress_callback,
        checkpoint_callback=save,
    )
    if config.train.epochs == 0:
        save(0, model)
    loss_csv = train_core.write_loss_csv(result.history, out / LOSS_FILE)
    truth_path = None
    if dataset.labels is not None:
        truth_path = cluster_core.write_labels(dataset.labels, out / TRUTH_FILE)
    debug(f"train_run: seed={seed} out={out} epochs={config.train.epochs}")
    return TrainArtifacts(checkpoint=checkpoint_path, loss_csv=loss_csv, truth=truth_path, result=result, geometry=geometry)


def cluster_run(
    checkpoint_path: str | Path,
    settings: ClusterSettings,
    output_dir: str | Path,
    k: Optional[int] = None,
    truth_path: Optional[str | Path] = None,
) -> cluster_core.ClusterReport:
    """
    Кластеризация по сохранённой модели. Истинные метки берутся из truth_path
    или из truth.txt рядом с контрольной точкой; без них метрики опускаются.
    """
    checkpoint_path = Path(checkpoint_path)
    model, header = ckpt.load_checkpoint(checkpoint_path)
    candidate = Path(truth_path) if truth_path is not None else checkpoint_path.parent / TRUTH_FILE
    truth = cluster_core.read_labels(candidate) if candidate.is_file() else None
    if truth_path is not None and truth is None:
        raise InvalidInput(f"Файл разметки не найден: {truth_path}")
    if truth is not None and truth.size != model.n:
        raise InvalidInput(f"В разметке {truth.size} меток, а модель обучена на {model.n} образцах")
    saved_k = header.extras.get("k")
    if k is None and settings.k is None and saved_k is not None:
        k = int(saved_k)
    report = cluster_model(model, settings, truth=truth, k=k)
    out = Path(output_dir)
    cluster_core.write_labels(report.labels, out / LABELS_FILE)
    cluster_core.write_report_csv(report, out / METRICS_FILE)
    return report


# ----------------------------- испытания и развёртки -----------------------------


@dataclass
class TrialOutcome:
    seed: int
    fraction: float
    ratio: float
    n: int
    report: cluster_core.ClusterReport
    final_loss: Optional[float] = None
    geometry: Optional[csc_core.CscGeometry] = None


def run_trial(
    config: ExperimentConfig,
    dataset: MultiModalDataset,
    seed: int,
    settings: Optional[ModelSettings] = None,
    fraction: Optional[float] = None,
    output_dir: Optional[str | Path] = None,
) -> TrialOutcome:
    """Одно испытание: подвыборка → обучение → кластеризация → метрики."""
    settings = settings or config.model
    fraction = config.data.fraction if fraction is None else fraction
    data = subset(dataset, fraction, seed) if fraction < 1.0 else dataset
    model, geometry = build_model(settings, data, seed, mask_seed=seed)
    result = train_core.fit(model, data, config.train)
    report = cluster_model(model, config.cluster, truth=data.labels, seed=seed)
    if output_dir is not None:
        out = Path(output_dir)
        cluster_core.write_labels(report.labels, out / LABELS_FILE)
        cluster_core.write_report_csv(report, out / METRICS_FILE)
    ratio = settings.prune_ratio if settings.mask == "random" else 0.0
    return TrialOutcome(
        seed=seed,
        fraction=fraction,
        ratio=ratio,
        n=data.n,
        report=report,
        final_loss=result.final.total if result.final else None,
        geometry=geometry,
    )


def check_fractions(dataset: MultiModalDataset, fractions: Sequence[float], seed: int = 0) -> None:
    """Проверяет заранее, что каждая доля даёт допустимую подвыборку."""
    for fraction in fractions:
        if fraction < 1.0:
            subset(dataset, fraction, seed)
        elif fraction > 1.0:
            raise InvalidInput(f"Доля данных должна быть в (0, 1]: {fraction}")


@dataclass
class SweepRow:
    kind: str
    fraction: float
    ratio: float
    n: Optional[int]
    seed: Optional[int]
    acc: Optional[float]
    ari: Optional[float]
    nmi: Optional[float]
    params: Optional[float]

    def as_dict(self) -> dict[str, object]:
        def fmt(value: object) -> object:
            if value is None:
                return ""
            return repr(value) if isinstance(value, float) else value

        return {name: fmt(getattr(self, name)) for name in SWEEP_COLUMNS}


@dataclass
class SweepResult:
    rows: list[SweepRow] = field(default_factory=list)
    trials: list[Trial] = field(default_factory=list)

    @property
    def failed(self) -> list[Trial]:
        return [t for t in self.trials if not t.ok]


def _aggregate(group: list[TrialOutcome], fraction: float, ratio: float) -> list[SweepRow]:
    rows = []
    for kind, reducer in (("mean", np.mean), ("std", np.std)):
        values = {}
        for metric in METRICS:
            data = [getattr(o.report, metric) for o in group if getattr(o.report, metric) is not None]
            values[metric] = float(reducer(data)) if data else None
        params = [float(o.report.total_params) for o in group]
        ns = [o.n for o in group]
        rows.append(
            SweepRow(
                kind=kind,
                fraction=fraction,
                ratio=ratio,
                n=int(round(float(np.mean(ns)))) if ns and kind == "mean" else None,
                seed=None,
                acc=values["acc"],
                ari=values["ari"],
                nmi=values["nmi"],
                params=float(reducer(params)) if params else None,
            )
        )
    return rows


def _trial_row(outcome: TrialOutcome) -> SweepRow:
    r = outcome.report
    return SweepRow(
        kind="trial",
        fraction=outcome.fraction,
        ratio=outcome.ratio,
        n=outcome.n,
        seed=outcome.seed,
        acc=r.acc,
        ari=r.ari,
        nmi=r.nmi,
        params=float(r.total_params),
    )


def _sweep(
    config: ExperimentConfig,
    grid: Sequence[tuple[float, float, ModelSettings]],
    output_dir: Path,
    threads: Optional[int],
    on_finish: Callable[[Trial], None] | None,
) -> SweepResult:
    dataset = load_dataset(config)
    check_fractions(dataset, sorted({f for f, _, _ in grid}), seed=config.seeds[0])

    jobs = []
    for fraction, ratio, settings in grid:
        for seed in config.seeds:
            name = f"f{fraction:g}_r{ratio:g}_s{seed}"
            trial_dir = output_dir / "trials" / name

            def job(settings: ModelSettings = settings, fraction: float = fraction, seed: int = seed, trial_dir: Path = trial_dir) -> TrialOutcome:
                return run_trial(config, dataset, seed, settings=settings, fraction=fraction, output_dir=trial_dir)

            jobs.append((name, job))

    trials = run_trials(jobs, threads=threads, on_finish=on_finish)
    result = SweepResult(trials=trials)
    per_cell = len(config.seeds)
    for i, (fraction, ratio, _) in enumerate(grid):
        cell = trials[i * per_cell : (i + 1) * per_cell]
        outcomes = [t.result for t in cell if t.ok]
        for trial in cell:
            if trial.ok:
                result.rows.append(_trial_row(trial.result))
            else:
                seed = config.seeds[trial.index % per_cell]
                result.rows.append(SweepRow("trial", fraction, ratio, None, seed, None, None, None, None))
        result.rows.extend(_aggregate(outcomes, fraction, ratio))
    return result


def write_sweep_csv(rows: Sequence[SweepRow], path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.DictWriter(f, fieldnames=SWEEP_COLUMNS, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow(row.as_dict())
    return path


def prune_sweep(
    config: ExperimentConfig,
    ratios: Sequence[float],
    output_dir: str | Path,
    fractions: Optional[Sequence[float]] = None,
    threads: Optional[int] = None,
    on_finish: Callable[[Trial], None] | None = None,
) -> SweepResult:
    """
    Случайное удаление доли рёбер самовыражающего слоя для каждой доли и
    каждой доли данных; по испытанию на seed, затем mean/std по испытаниям.
    """
    for ratio in ratios:
        if not 0.0 <= ratio < 1.0:
            raise InvalidInput(f"Доля удаляемых рёбер должна быть в [0, 1): {ratio}")
    fractions = list(fractions) if fractions else [config.data.fraction]
    grid = [
        (fraction, ratio, config.model.model_copy(update={"mask": "random", "prune_ratio": ratio}))
        for fraction in fractions
        for ratio in ratios
    ]
    out = Path(output_dir)
    result = _sweep(config, grid, out, threads, on_finish)
    write_sweep_csv(result.rows, out / PRUNE_FILE)
    return result


def fraction_sweep(
    config: ExperimentConfig,
    fractions: Sequence[float],
    output_dir: str | Path,
    threads: Optional[int] = None,
    on_finish: Callable[[Trial], None] | None = None,
) -> SweepResult:
    """Обучение на разных долях данных с текущей маской модели."""
    ratio = config.model.prune_ratio if config.model.mask == "random" else 0.0
    grid = [(fraction, ratio, config.model) for fraction in fractions]
    out = Path(output_dir)
    result = _sweep(config, grid, out, threads, on_finish)
    write_sweep_csv(result.rows, out / FRACTION_FILE)
    return result


@dataclass
class CscRow:
    fraction: float
    fc: Optional[dict[str, float]]
    csc: dict[str, float]
    fc_params: Optional[int]
    csc_params: int
    compression: float
    padded_n: int
    note: str = ""

    def as_dict(self) -> dict[str, object]:
        def metric(source: Optional[dict[str, float]], name: str) -> str:
            if source is None or source.get(name) is None:
                return ""
            return repr(source[name])

        return {
            "fraction": repr(self.fraction),
            "fc_acc": metric(self.fc, "acc"),
            "fc_ari": metric(self.fc, "ari"),
            "fc_nmi": metric(self.fc, "nmi"),
            "fc_params": "" if self.fc_params is None else self.fc_params,
            "csc_acc": metric(self.csc, "acc"),
            "csc_ari": metric(self.csc, "ari"),
            "csc_nmi": metric(self.csc, "nmi"),
            "csc_params": self.csc_params,
            "compression": repr(self.compression),
            "padded_n": self.padded_n,
        }


@dataclass
class CscResult:
    rows: list[CscRow] = field(default_factory=list)
    trials: list[Trial] = field(default_factory=list)

    @property
    def failed(self) -> list[Trial]:
        return [t for t in self.trials if not t.ok]


def _mean_metrics(outcomes: list[TrialOutcome]) -> Optional[dict[str, float]]:
    if not outcomes:
        return None
    means: dict[str, float] = {}
    for metric in METRICS:
        data = [getattr(o.report, metric) for o in outcomes if getattr(o.report, metric) is not None]
        if data:
            means[metric] = float(np.mean(data))
    return means


def csc_compare(
    config: ExperimentConfig,
    fan: int,
    depth: Optional[int],
    output_dir: str | Path,
    fractions: Optional[Sequence[float]] = None,
    pad: bool = True,
    compare: bool = True,
    threads: Optional[int] = None,
    on_finish: Callable[[Trial], None] | None = None,
) -> CscResult:
    """
    Самовыражающий слой из CSC-стека против полносвязного на каждой доле данных.

    Параметры в CSV — число активных весов самовыражающего слоя; compression —
    отношение числа рёбер стека к N² (N — размер стека с дополнением).

    Raises:
        ConstraintViolation: F^L != N и дополнение запрещено (pad=False).
    """
    dataset = load_dataset(config)
    fractions = list(fractions) if fractions else [config.data.fraction]
    check_fractions(dataset, fractions, seed=config.seeds[0])
    csc_settings = config.model.model_copy(
        update={"mask": "csc", "csc_fan": fan, "csc_depth": depth, "csc_pad": pad}
    )
    fc_settings = config.model.model_copy(update={"mask": "full"})

    # геометрия стека проверяется до запуска испытаний
    geometries = {}
    for fraction in fractions:
        n = subset(dataset, fraction, config.seeds[0]).n if fraction < 1.0 else dataset.n
        geometries[fraction] = csc_core.plan_geometry(n, fan, depth, pad=pad)

    jobs = []
    variants = [("csc", csc_settings)] + ([("fc", fc_settings)] if compare else [])
    for fraction in fractions:
        for variant, settings in variants:
            for seed in config.seeds:
                name = f"{variant}_f{fraction:g}_s{seed}"
                trial_dir = Path(output_dir) / "trials" / name

                def job(settings: ModelSettings = settings, fraction: float = fraction, seed: int = seed, trial_dir: Path = trial_dir) -> TrialOutcome:
                    return run_trial(config, dataset, seed, settings=settings, fraction=fraction, output_dir=trial_dir)

                jobs.append((name, job))

    trials = run_trials(jobs, threads=threads, on_finish=on_finish)
    result = CscResult(trials=trials)
    by_name = {t.name: t for t in trials}
    for fraction in fractions:
        def outcomes(variant: str) -> list[TrialOutcome]:
            found = [by_name[f"{variant}_f{fraction:g}_s{s}"] for s in config.seeds]
            return [t.result for t in found if t.ok]

        csc_outcomes = outcomes("csc")
        fc_outcomes = outcomes("fc") if compare else []
        geometry = geometries[fraction]
        stack = csc_core.build_stack(geometry.size, geometry.fan, geometry.depth)
        fc_params = None
        if compare:
            fc_params = fc_outcomes[0].report.active_params if fc_outcomes else geometry.n * geometry.n - geometry.n
        result.rows.append(
            CscRow(
                fraction=fraction,
                fc=_mean_metrics(fc_outcomes) if compare else None,
                csc=_mean_metrics(csc_outcomes) or {},
                fc_params=fc_params,
                csc_params=csc_core.edge_count(stack),
                compression=csc_core.compression_ratio(stack),
                padded_n=geometry.size,
                note=geometry.note(),
            )
        )

    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / CSC_FILE, "w", newline="", encoding="utf-8") as f:
        writer = csv.DictWriter(f, fieldnames=CSC_COLUMNS, lineterminator="\n")
        writer.writeheader()
        for row in result.rows:
            writer.writerow(row.as_dict())
    return result


def read_csv_rows(path: str | Path) -> list[dict[str, str]]:
    with open(path, newline="", encoding="utf-8") as f:
        return list(csv.DictReader(f))
