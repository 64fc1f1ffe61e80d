"""
Модуль командной строки volterrafuse.

Использует click для команд и rich для вывода. Ядро не печатает ничего:
прогресс приходит через колбэки, ошибки — исключениями, которые здесь
превращаются в сообщение и код выхода:

    0 — успех; 2 — некорректные аргументы или конфигурация;
    3 — ошибка данных; 4 — численная ошибка.
"""

from __future__ import annotations

import sys
import time
from pathlib import Path
from typing import Any, Callable, NoReturn, Optional, Sequence

import click
from rich.console import Console
from rich.markup import escape
from rich.progress import BarColumn, Progress, SpinnerColumn, TextColumn
from rich.table import Table

from cli import plots
from core import __version__
from core import experiment
from core.config import ExperimentConfig, load_config, write_manifest
from core.data import export_dataset, parse_synth_source, synth_generate
from core.errors import (
    AlignmentError,
    FormatError,
    InvalidInput,
    NumericalError,
    ShapeError,
    StructureError,
)
from core.runner import Trial

console = Console()

EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_NUMERICAL = 4


def exit_code_for(exc: BaseException) -> int:
    if isinstance(exc, (ShapeError, AlignmentError, FormatError)):
        return EXIT_DATA
    if isinstance(exc, (NumericalError, StructureError)):
        return EXIT_NUMERICAL
    if isinstance(exc, InvalidInput):
        return EXIT_USAGE
    return 1


def _fail(exc: BaseException) -> NoReturn:
    console.print(f":boom: [bold red]Ошибка[/bold red]: {escape(str(exc))}")
    if isinstance(exc, NumericalError) and exc.epoch is not None:
        console.print(f"[dim]Эпоха: {exc.epoch}, слагаемое: {exc.term or 'n/a'}[/dim]")
    sys.exit(exit_code_for(exc))


def _guarded(action: Callable[[], None]) -> None:
    """Выполняет команду; исключения ядра печатаются дружелюбно и задают код выхода."""
    try:
        action()
    except click.exceptions.Exit:
        raise
    except Exception as exc:
        _fail(exc)


def _float_list(ctx: click.Context, param: click.Parameter, value: Optional[str]) -> Optional[list[float]]:
    if value is None:
        return None
    try:
        return [float(part) for part in value.split(",") if part.strip()]
    except ValueError as exc:
        raise click.BadParameter(f"ожидался список чисел через запятую: {value!r}") from exc


def _format_duration(seconds: float) -> str:
    if seconds >= 60.0:
        m = int(seconds // 60)
        s = seconds - (m * 60)
        return f"{m} мин {int(s)} сек"
    return f"{seconds:.1f} сек"


def _fmt(value: Optional[float]) -> str:
    return "—" if value is None else f"{value:.4f}"


def _experiment_options(func: Callable[..., Any]) -> Callable[..., Any]:
    """Общие опции команд, которые собирают ExperimentConfig."""
    options = [
        click.option("--config", "config_path", type=click.Path(dir_okay=False, path_type=str), default=None, help="INI-файл с секциями [model], [train], [data], [cluster]."),
        click.option("--set", "overrides", multiple=True, metavar="SECTION.KEY=VALUE", help="Переопределение значения конфигурации (можно повторять)."),
        click.option("--output", "-o", "output_dir", type=click.Path(file_okay=False, path_type=str), default=None, help="Каталог результатов (по умолчанию runs/<команда>)."),
        click.option("--preset", type=click.Choice(["arl", "eyb"]), default=None, help="Архитектура автоэнкодера."),
        click.option("--data", "data_source", default=None, help="Источник данных: synth:default, synth:P=..,T=.. или каталог PGM."),
        click.option("--epochs", type=int, default=None, help="Число эпох обучения."),
        click.option("--warmup", type=int, default=None, help="Эпох разогрева автоэнкодера."),
        click.option("--lr", type=float, default=None, help="Шаг обучения ADAM (по умолчанию — из пресета)."),
        click.option("--seed", type=int, default=None, help="Первый seed испытаний."),
    ]
    for option in reversed(options):
        func = option(func)
    return func


def _build_config(
    command: str,
    config_path: Optional[str],
    overrides: Sequence[str],
    output_dir: Optional[str],
    preset: Optional[str],
    data_source: Optional[str],
    epochs: Optional[int],
    warmup: Optional[int],
    lr: Optional[float],
    seed: Optional[int],
    trials: int = 1,
    extra_overrides: Sequence[str] = (),
) -> ExperimentConfig:
    items = list(overrides) + list(extra_overrides)
    flags = {
        "model.preset": preset,
        "data.source": data_source,
        "train.epochs": epochs,
        "train.warmup_epochs": warmup,
        "train.learning_rate": lr,
    }
    items += [f"{key}={value}" for key, value in flags.items() if value is not None]
    if epochs is not None and warmup is None:
        items.append(f"train.warmup_epochs={min(epochs, 100)}")
    first = 0 if seed is None else seed
    if trials < 1:
        raise InvalidInput("Число испытаний должно быть >= 1")
    return load_config(
        config_path,
        overrides=items,
        output_dir=output_dir or f"runs/{command}",
        seeds=list(range(first, first + trials)),
    )


def _trial_progress(total: int, label: str) -> tuple[Progress, Callable[[Trial], None]]:
    progress = Progress(
        SpinnerColumn(),
        BarColumn(bar_width=40),
        TextColumn("{task.completed}/{task.total}"),
        TextColumn("{task.description}"),
        console=console,
        transient=True,
    )
    task_id = progress.add_task(f"[cyan]{label}...", total=total)

    def on_finish(trial: Trial) -> None:
        progress.advance(task_id)
        if not trial.ok:
            progress.console.print(f"[yellow]Испытание {trial.name} не удалось[/yellow]: {escape(trial.error or '')}")

    return progress, on_finish


def _print_failed(trials: Sequence[Trial]) -> None:
    failed = [t for t in trials if not t.ok]
    if failed:
        console.print(f"[yellow]Неудачных испытаний: {len(failed)} из {len(trials)}[/yellow]")


def _report_table(title: str, rows: list[dict[str, str]], columns: Sequence[str]) -> Table:
    table = Table(title=title)
    for column in columns:
        table.add_column(column, justify="right")
    for row in rows:
        table.add_row(*[_short(row.get(c, "")) for c in columns])
    return table


def _short(value: str) -> str:
    try:
        number = float(value)
    except (TypeError, ValueError):
        return value or "—"
    if number.is_integer() and "." not in value and "e" not in value.lower():
        return value
    return f"{number:.4f}"


@click.group(
    name="volterrafuse",
    help=(
        "\nМультимодальная кластеризация подпространств автоэнкодером Вольтерры.\n\n"
        "Команды: synth, train, cluster, prune-sweep, fraction-sweep, csc, report.\n\n"
        "Примеры:\n"
        "  volterrafuse synth -o data/synth\n"
        "  volterrafuse train --preset arl --data synth:default --epochs 50 -o runs/arl\n"
        "  volterrafuse cluster runs/arl/model.vfck\n"
        "  volterrafuse prune-sweep --ratios 0.1,0.3,0.5,0.7 --trials 10\n"
        "  volterrafuse csc --fan 4 --depth 4\n"
        "\n"
    ),
)
@click.version_option(__version__, prog_name="volterrafuse")
def main() -> None:
    """Точка входа CLI."""


@main.command("synth", help="Сгенерировать синтетический датасет и сохранить его каталогом PGM.")
@click.option("--data", "data_source", default="synth:default", show_default=True, help="Описание синтетики.")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--output", "-o", "output_dir", type=click.Path(file_okay=False, path_type=str), default="data/synth", show_default=True)
def synth_cmd(data_source: str, seed: int, output_dir: str) -> None:
    def action() -> None:
        if not data_source.startswith("synth"):
            raise InvalidInput(f"Ожидалось описание синтетики synth:..., получено {data_source!r}")
        spec = parse_synth_source(data_source, seed)
        dataset = synth_generate(spec)
        root = export_dataset(dataset, output_dir)
        config = load_config(overrides=[f"data.source={data_source}", f"data.seed={seed}"], output_dir=output_dir, seeds=[seed])
        write_manifest(root, "synth", config, extra={"synth": spec.__dict__})
        console.print(
            f":white_check_mark: [bold green]Готово[/bold green]: {dataset.n} образцов, "
            f"{dataset.modality_count} модальностей, {spec.clusters} кластеров → {root}"
        )

    _guarded(action)


@main.command("train", help="Обучить модель и сохранить контрольную точку и кривую потерь.")
@_experiment_options
def train_cmd(config_path, overrides, output_dir, preset, data_source, epochs, warmup, lr, seed) -> None:  # type: ignore[no-untyped-def]
    def action() -> None:
        config = _build_config("train", config_path, overrides, output_dir, preset, data_source, epochs, warmup, lr, seed)
        out = Path(config.output_dir)
        total = config.train.epochs
        console.print(
            f":rocket: [bold]Обучение[/bold] пресет={config.model.preset} маска={config.model.mask} "
            f"эпох={total} lr={config.train.learning_rate:g}",
            style="cyan",
        )
        started = time.perf_counter()
        with Progress(
            SpinnerColumn(),
            BarColumn(bar_width=40),
            TextColumn("[progress.percentage]{task.percentage:>3.0f}%"),
            TextColumn("{task.description}"),
            TextColumn("{task.fields[loss]}"),
            console=console,
            transient=True,
        ) as progress:
            task_id = progress.add_task("[cyan]Обучение...", total=max(1, total), loss="—")

            def on_epoch(epoch: int, _total: int, record: Any) -> None:
                stage = "разогрев" if record.warmup else "loss"
                progress.update(task_id, completed=epoch, loss=f"{stage} {record.total:.4g}")

            artifacts = experiment.train_run(config, out, progress_callback=on_epoch)

        extra: dict[str, object] = {"checkpoint": str(artifacts.checkpoint)}
        if artifacts.geometry is not None and artifacts.geometry.note():
            extra["csc_note"] = artifacts.geometry.note()
            console.print(f"[yellow]{artifacts.geometry.note()}[/yellow]")
        write_manifest(out, "train", config, extra=extra)
        final = artifacts.result.final
        console.print(f":white_check_mark: [bold green]Готово[/bold green]: {artifacts.checkpoint}")
        if final is not None:
            console.print(
                f"[dim]Потери: total={final.total:.6g} recon={final.recon:.6g} "
                f"selfexpr={final.selfexpr:.6g} reg={final.reg:.6g}[/dim]"
            )
        console.print(f"[dim]Время обучения: {_format_duration(time.perf_counter() - started)}[/dim]")

    _guarded(action)


@main.command("cluster", help="Кластеризовать образцы по матрице W из контрольной точки.")
@click.argument("checkpoint", type=click.Path(dir_okay=False, path_type=str))
@click.option("-k", "k", type=int, default=None, help="Число кластеров (по умолчанию — из контрольной точки или разметки).")
@click.option("--truth", type=click.Path(dir_okay=False, path_type=str), default=None, help="Файл истинных меток (по одной на строку).")
@click.option("--affinity", type=click.Choice(["abs", "raw"]), default=None, help="abs: |W|+|W|ᵀ, raw: W+Wᵀ.")
@click.option("--eig-method", type=click.Choice(["jacobi", "lapack"]), default=None)
@click.option("--config", "config_path", type=click.Path(dir_okay=False, path_type=str), default=None)
@click.option("--set", "overrides", multiple=True, metavar="SECTION.KEY=VALUE")
@click.option("--output", "-o", "output_dir", type=click.Path(file_okay=False, path_type=str), default=None, help="Каталог результатов (по умолчанию — каталог контрольной точки).")
def cluster_cmd(checkpoint, k, truth, affinity, eig_method, config_path, overrides, output_dir) -> None:  # type: ignore[no-untyped-def]
    def action() -> None:
        items = list(overrides)
        if affinity:
            items.append(f"cluster.affinity={affinity}")
        if eig_method:
            items.append(f"cluster.eig_method={eig_method}")
        out = output_dir or str(Path(checkpoint).parent)
        config = load_config(config_path, overrides=items, output_dir=out)
        report = experiment.cluster_run(checkpoint, config.cluster, out, k=k, truth_path=truth)

        table = Table(title="Кластеризация")
        for column in ("ACC", "ARI", "NMI", "Параметры", "Самовыражение", "k", "n"):
            table.add_column(column, justify="right")
        table.add_row(
            _fmt(report.acc),
            _fmt(report.ari),
            _fmt(report.nmi),
            str(report.total_params),
            str(report.active_params),
            str(report.k),
            str(report.labels.size),
        )
        console.print(table)
        if not report.has_metrics:
            console.print("[yellow]Истинных меток нет — метрики не вычислены, записаны только метки.[/yellow]")
        write_manifest(out, "cluster", config, extra={"checkpoint": checkpoint, "k": report.k})
        console.print(f":white_check_mark: [bold green]Готово[/bold green]: {Path(out) / experiment.LABELS_FILE}")

    _guarded(action)


def _sweep_table(title: str, rows: Sequence[experiment.SweepRow], x_key: str) -> Table:
    table = Table(title=title)
    columns = ["fraction", "ratio", "n", "ACC", "ARI", "NMI", "params"] if x_key == "ratio" else ["fraction", "n", "ACC", "ARI", "NMI", "params"]
    for column in columns:
        table.add_column(column, justify="right")
    means = [r for r in rows if r.kind == "mean"]
    stds = {(r.fraction, r.ratio): r for r in rows if r.kind == "std"}
    for m in means:
        s = stds.get((m.fraction, m.ratio))

        def cell(name: str) -> str:
            mean = getattr(m, name)
            std = getattr(s, name) if s is not None else None
            if mean is None:
                return "—"
            return f"{mean:.4f} ± {std:.4f}" if std is not None else f"{mean:.4f}"

        values = [f"{m.fraction:g}"]
        if x_key == "ratio":
            values.append(f"{m.ratio:g}")
        values += [str(m.n or "—"), cell("acc"), cell("ari"), cell("nmi"), f"{m.params:.0f}" if m.params is not None else "—"]
        table.add_row(*values)
    return table


@main.command("prune-sweep", help="Случайное удаление доли рёбер самовыражающего слоя: mean ± std по испытаниям.")
@_experiment_options
@click.option("--ratios", callback=_float_list, default="0.1,0.3,0.5,0.7", show_default=True, help="Доли удаляемых рёбер.")
@click.option("--fractions", callback=_float_list, default=None, help="Доли данных (по умолчанию — data.fraction).")
@click.option("--trials", type=int, default=10, show_default=True, help="Число испытаний (seed подряд от --seed).")
@click.option("--threads", type=int, default=None, help="Потоков для испытаний (по умолчанию VF_THREADS).")
def prune_sweep_cmd(config_path, overrides, output_dir, preset, data_source, epochs, warmup, lr, seed, ratios, fractions, trials, threads) -> None:  # type: ignore[no-untyped-def]
    def action() -> None:
        config = _build_config("prune-sweep", config_path, overrides, output_dir, preset, data_source, epochs, warmup, lr, seed, trials=trials)
        out = Path(config.output_dir)
        total = len(ratios) * len(fractions or [config.data.fraction]) * len(config.seeds)
        progress, on_finish = _trial_progress(total, "Испытания")
        with progress:
            result = experiment.prune_sweep(config, ratios, out, fractions=fractions, threads=threads, on_finish=on_finish)
        console.print(_sweep_table("Удаление рёбер", result.rows, "ratio"))
        _print_failed(result.trials)
        write_manifest(out, "prune-sweep", config, extra={"ratios": list(ratios), "fractions": fractions})
        console.print(f":white_check_mark: [bold green]Готово[/bold green]: {out / experiment.PRUNE_FILE}")

    _guarded(action)


@main.command("fraction-sweep", help="Обучение на разных долях данных: mean ± std по испытаниям.")
@_experiment_options
@click.option("--fractions", callback=_float_list, default="0.25,0.4,0.5,0.6,0.75", show_default=True)
@click.option("--trials", type=int, default=1, show_default=True)
@click.option("--threads", type=int, default=None)
def fraction_sweep_cmd(config_path, overrides, output_dir, preset, data_source, epochs, warmup, lr, seed, fractions, trials, threads) -> None:  # type: ignore[no-untyped-def]
    def action() -> None:
        config = _build_config("fraction-sweep", config_path, overrides, output_dir, preset, data_source, epochs, warmup, lr, seed, trials=trials)
        out = Path(config.output_dir)
        progress, on_finish = _trial_progress(len(fractions) * len(config.seeds), "Испытания")
        with progress:
            result = experiment.fraction_sweep(config, fractions, out, threads=threads, on_finish=on_finish)
        console.print(_sweep_table("Доли данных", result.rows, "fraction"))
        _print_failed(result.trials)
        write_manifest(out, "fraction-sweep", config, extra={"fractions": list(fractions)})
        console.print(f":white_check_mark: [bold green]Готово[/bold green]: {out / experiment.FRACTION_FILE}")

    _guarded(action)


@main.command("csc", help="Самовыражающий слой из циклических разреженных слоёв (F, L) против полносвязного.")
@_experiment_options
@click.option("--fan", "-F", "fan", type=int, default=4, show_default=True, help="Коэффициент ветвления F.")
@click.option("--depth", "-L", "depth", type=int, default=None, help="Число слоёв L (по умолчанию — наименьшее с F^L >= N).")
@click.option("--pad/--no-pad", default=True, show_default=True, help="Дополнять N фиктивными образцами до F^L.")
@click.option("--compare/--no-compare", default=True, show_default=True, help="Обучать также полносвязный слой для сравнения.")
@click.option("--fractions", callback=_float_list, default=None, help="Доли данных (по умолчанию — data.fraction).")
@click.option("--trials", type=int, default=1, show_default=True)
@click.option("--threads", type=int, default=None)
def csc_cmd(config_path, overrides, output_dir, preset, data_source, epochs, warmup, lr, seed, fan, depth, pad, compare, fractions, trials, threads) -> None:  # type: ignore[no-untyped-def]
    def action() -> None:
        config = _build_config("csc", config_path, overrides, output_dir, preset, data_source, epochs, warmup, lr, seed, trials=trials)
        out = Path(config.output_dir)
        variants = 2 if compare else 1
        progress, on_finish = _trial_progress(len(fractions or [config.data.fraction]) * variants * len(config.seeds), "Испытания")
        with progress:
            result = experiment.csc_compare(
                config, fan, depth, out, fractions=fractions, pad=pad, compare=compare, threads=threads, on_finish=on_finish
            )

        table = Table(title=f"CSC: F={fan}" + (f", L={depth}" if depth else ""))
        for column in ("fraction", "N", "FC ACC", "CSC ACC", "CSC ARI", "CSC NMI", "FC params", "CSC params", "сжатие"):
            table.add_column(column, justify="right")
        notes = []
        for row in result.rows:
            fc = row.fc or {}
            table.add_row(
                f"{row.fraction:g}",
                str(row.padded_n),
                _fmt(fc.get("acc")),
                _fmt(row.csc.get("acc")),
                _fmt(row.csc.get("ari")),
                _fmt(row.csc.get("nmi")),
                "—" if row.fc_params is None else str(row.fc_params),
                str(row.csc_params),
                f"{row.compression:.4f}",
            )
            if row.note:
                notes.append(f"доля {row.fraction:g}: {row.note}")
        console.print(table)
        for note in notes:
            console.print(f"[yellow]{note}[/yellow]")
        _print_failed(result.trials)
        write_manifest(out, "csc", config, extra={"fan": fan, "depth": depth, "pad": pad, "notes": notes})
        console.print(f":white_check_mark: [bold green]Готово[/bold green]: {out / experiment.CSC_FILE}")

    _guarded(action)


@main.command("report", help="Показать таблицы результатов из каталога и построить SVG-графики.")
@click.argument("directory", type=click.Path(file_okay=False, path_type=str))
def report_cmd(directory: str) -> None:
    def action() -> None:
        root = Path(directory)
        if not root.is_dir():
            raise InvalidInput(f"Каталог результатов не найден: {root}")
        produced: list[Path] = []

        metrics = root / experiment.METRICS_FILE
        if metrics.is_file():
            console.print(_report_table("Кластеризация", experiment.read_csv_rows(metrics), ("acc", "ari", "nmi", "params", "selfexpr_params", "k", "n")))

        loss = root / experiment.LOSS_FILE
        if loss.is_file():
            rows = experiment.read_csv_rows(loss)
            if rows:
                last = rows[-1]
                console.print(f"[dim]Последняя эпоха {last['epoch']}: total={_short(last['total'])}[/dim]")
                produced.append(plots.plot_loss(rows, root / "loss.svg"))

        for name, x_key, title in (
            (experiment.PRUNE_FILE, "ratio", "Удаление рёбер"),
            (experiment.FRACTION_FILE, "fraction", "Доли данных"),
        ):
            path = root / name
            if path.is_file():
                rows = experiment.read_csv_rows(path)
                summary = [r for r in rows if r["kind"] != "trial"]
                console.print(_report_table(title, summary, ("kind", "fraction", "ratio", "n", "acc", "ari", "nmi", "params")))
                produced.append(plots.plot_sweep(rows, x_key, root / f"{Path(name).stem}.svg", title))

        csc_path = root / experiment.CSC_FILE
        if csc_path.is_file():
            rows = experiment.read_csv_rows(csc_path)
            console.print(_report_table("CSC против полносвязного", rows, experiment.CSC_COLUMNS))
            produced.append(plots.plot_csc(rows, root / "csc.svg"))

        if not produced and not metrics.is_file():
            console.print(f"[yellow]В {root} не найдено результатов.[/yellow]")
            return
        for path in produced:
            console.print(f"[dim]График: {path}[/dim]")

    _guarded(action)


if __name__ == "__main__":
    main()
