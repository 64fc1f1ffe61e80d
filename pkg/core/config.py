"""
Конфигурация экспериментов.

INI-файл с секциями [model], [train], [data], [cluster] разбирается
configparser и проверяется моделями pydantic. Неизвестные секции и ключи
отклоняются. Переопределения "секция.ключ=значение" применяются поверх
файла.

Пример:

    [model]
    preset = arl
    mask = random
    prune_ratio = 0.3

    [train]
    epochs = 200
"""

from __future__ import annotations

import configparser
import io
import json
import platform
from importlib import metadata
from pathlib import Path
from typing import Literal, Optional, Sequence

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from core import __version__
from core.errors import InvalidInput
from core.model import PRESET_FILTERS, PRESET_LEARNING_RATE
from core.train import TrainConfig

SECTIONS = ("model", "train", "data", "cluster")
MANIFEST_FILE = "manifest.json"
CONFIG_FILE = "config.ini"
_LIBRARIES = ("numpy", "scipy", "scikit-learn", "pydantic", "click", "rich", "matplotlib")


class ModelSettings(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    preset: str = "arl"
    gamma: float = Field(1.0, ge=0)
    mu: float = Field(1.0, ge=0)
    lam: float = Field(1.0, ge=0)
    reg_kind: Literal["l1", "l2"] = "l1"
    decoder_input: Literal["latent", "selfexpr"] = "latent"
    mask: Literal["full", "random", "csc"] = "full"
    prune_ratio: float = Field(0.0, ge=0, lt=1)
    mask_seed: int = Field(0, ge=0)
    csc_fan: int = Field(4, ge=2)
    csc_depth: Optional[int] = Field(None, ge=1)
    csc_pad: bool = True
    csc_reg: Literal["effective", "per_layer"] = "effective"

    @field_validator("preset")
    @classmethod
    def _known_preset(cls, value: str) -> str:
        if value not in PRESET_FILTERS:
            raise ValueError(f"неизвестный пресет {value!r}")
        return value


class DataSettings(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    source: str = "synth:default"
    modalities: list[str] = Field(default_factory=list)
    size: int = Field(32, ge=1)
    fraction: float = Field(1.0, gt=0, le=1)
    seed: int = Field(0, ge=0)

    @field_validator("modalities", mode="before")
    @classmethod
    def _split(cls, value: object) -> object:
        if isinstance(value, str):
            return [part.strip() for part in value.split(",") if part.strip()]
        return value


class ClusterSettings(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    k: Optional[int] = Field(None, ge=1)
    affinity: Literal["abs", "raw"] = "abs"
    eig_method: Literal["jacobi", "lapack"] = "jacobi"
    restarts: int = Field(10, ge=1)
    seed: int = Field(0, ge=0)


class ExperimentConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    model: ModelSettings = Field(default_factory=ModelSettings)
    train: TrainConfig = Field(default_factory=TrainConfig)
    data: DataSettings = Field(default_factory=DataSettings)
    cluster: ClusterSettings = Field(default_factory=ClusterSettings)
    source_path: Optional[str] = None
    overrides: list[str] = Field(default_factory=list)
    output_dir: str = "runs/latest"
    seeds: list[int] = Field(default_factory=lambda: [0])

    @model_validator(mode="after")
    def _seeds_present(self) -> "ExperimentConfig":
        if not self.seeds:
            raise ValueError("список seeds не может быть пустым")
        return self


def _read_ini(path: Path) -> dict[str, dict[str, str]]:
    if not path.is_file():
        raise InvalidInput(f"Файл конфигурации не найден: {path}")
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read(path, encoding="utf-8")
    except configparser.Error as exc:
        raise InvalidInput(f"Не удалось разобрать {path}: {exc}") from exc
    values: dict[str, dict[str, str]] = {}
    for section in parser.sections():
        if section not in SECTIONS:
            raise InvalidInput(f"Неизвестная секция [{section}] в {path} (доступны: {', '.join(SECTIONS)})")
        values[section] = dict(parser.items(section))
    return values


def parse_override(item: str) -> tuple[str, str, str]:
    """'train.epochs=50' -> ('train', 'epochs', '50')."""
    key, sep, value = item.partition("=")
    section, dot, name = key.strip().partition(".")
    if not sep or not dot or not name:
        raise InvalidInput(f"Переопределение должно иметь вид секция.ключ=значение: {item!r}")
    if section not in SECTIONS:
        raise InvalidInput(f"Неизвестная секция в переопределении: {section!r}")
    return section, name.strip(), value.strip()


def _describe(exc: ValidationError) -> str:
    first = exc.errors()[0]
    where = ".".join(str(p) for p in first.get("loc", ()))
    return f"{where}: {first.get('msg')}" if where else str(first.get("msg"))


def load_config(
    path: Optional[str | Path] = None,
    overrides: Sequence[str] = (),
    output_dir: Optional[str] = None,
    seeds: Optional[Sequence[int]] = None,
) -> ExperimentConfig:
    """
    Собирает конфигурацию: значения по умолчанию ← файл ← переопределения.

    Если learning_rate не задан явно, берётся значение пресета.

    Raises:
        InvalidInput: файл не найден, неизвестная секция/ключ или недопустимое значение.
    """
    values: dict[str, dict[str, str]] = {s: {} for s in SECTIONS}
    if path is not None:
        for section, items in _read_ini(Path(path)).items():
            values[section].update(items)
    for item in overrides:
        section, name, value = parse_override(item)
        values[section][name] = value

    try:
        model = ModelSettings(**values["model"])  # type: ignore[arg-type]
        train_values: dict[str, object] = dict(values["train"])
        train_values.setdefault("learning_rate", PRESET_LEARNING_RATE[model.preset])
        payload: dict[str, object] = {
            "model": model,
            "train": TrainConfig(**train_values),  # type: ignore[arg-type]
            "data": DataSettings(**values["data"]),  # type: ignore[arg-type]
            "cluster": ClusterSettings(**values["cluster"]),  # type: ignore[arg-type]
            "source_path": str(path) if path is not None else None,
            "overrides": list(overrides),
        }
        if output_dir is not None:
            payload["output_dir"] = output_dir
        if seeds is not None:
            payload["seeds"] = list(seeds)
        return ExperimentConfig(**payload)  # type: ignore[arg-type]
    except ValidationError as exc:
        raise InvalidInput(f"Некорректная конфигурация: {_describe(exc)}") from exc


def to_ini(config: ExperimentConfig) -> str:
    """Разрешённая конфигурация в виде INI, пригодном для повторного запуска."""
    parser = configparser.ConfigParser(interpolation=None)
    for section in SECTIONS:
        data = getattr(config, section).model_dump()
        parser[section] = {
            key: ",".join(value) if isinstance(value, list) else str(value)
            for key, value in data.items()
            if value is not None
        }
    buffer = io.StringIO()
    parser.write(buffer)
    return buffer.getvalue()


def library_versions() -> dict[str, str]:
    versions = {"volterrafuse": __version__, "python": platform.python_version()}
    for name in _LIBRARIES:
        try:
            versions[name] = metadata.version(name)
        except metadata.PackageNotFoundError:
            versions[name] = "unknown"
    return versions


def write_manifest(
    output_dir: str | Path,
    command: str,
    config: ExperimentConfig,
    extra: Optional[dict[str, object]] = None,
) -> Path:
    """Пишет manifest.json и config.ini — всё, что нужно для повторения запуска."""
    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = {
        "command": command,
        "config": config.model_dump(mode="json"),
        "seeds": list(config.seeds),
        "versions": library_versions(),
    }
    if extra:
        manifest["extra"] = extra
    path = out / MANIFEST_FILE
    path.write_text(json.dumps(manifest, ensure_ascii=False, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    (out / CONFIG_FILE).write_text(to_ini(config), encoding="utf-8")
    return path
