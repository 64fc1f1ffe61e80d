"""
Бинарный формат контрольных точек модели.

Раскладка файла (все целые little-endian):

    4 байта   магия b"VFCK"
    u16       версия формата
    u32       длина заголовка в байтах
    ...       заголовок: JSON в UTF-8 (ключи отсортированы, без пробелов)
    ...       параметры: float64 little-endian в порядке parameter_vector

Одинаковые модели и одинаковые extras дают побайтно одинаковые файлы.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Any, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, ValidationError

from core import model as model_core
from core import selfexpr as se
from core import volterra
from core.errors import FormatError, VolterraFuseError

MAGIC = b"VFCK"
VERSION = 1
_PREFIX = struct.Struct("<4sHI")
LATENT_ORDER = "channel-major, row-major pixels, modalities in dataset order"


class SelfExprHeader(BaseModel):
    model_config = ConfigDict(extra="forbid")

    n: int
    mask: dict[str, Any]
    csc_reg: str = "effective"


class CheckpointHeader(BaseModel):
    model_config = ConfigDict(extra="forbid")

    preset: str
    modalities: int
    image_shapes: list[list[int]]
    encoders: list[dict[str, Any]]
    decoders: list[dict[str, Any]]
    selfexpr: SelfExprHeader
    gamma: float
    mu: float
    lam: float
    reg_kind: str
    decoder_input: str
    latent_order: str = LATENT_ORDER
    param_count: int
    extras: dict[str, Any] = {}


def header_for(model: model_core.VmscModel, extras: Optional[dict[str, Any]] = None) -> CheckpointHeader:
    return CheckpointHeader(
        preset=model.preset_name,
        modalities=model.modalities,
        image_shapes=[list(s) for s in model.image_shapes],
        encoders=[volterra.bank_spec(b) for b in model.encoders],
        decoders=[volterra.bank_spec(b) for b in model.decoders],
        selfexpr=SelfExprHeader(
            n=model.n,
            mask=se.mask_descriptor(model.selfexpr),
            csc_reg=model.selfexpr.csc_reg,
        ),
        gamma=model.gamma,
        mu=model.mu,
        lam=model.lam,
        reg_kind=model.reg_kind,
        decoder_input=model.decoder_input,
        param_count=model_core.total_param_count(model),
        extras=dict(extras or {}),
    )


def encode(model: model_core.VmscModel, extras: Optional[dict[str, Any]] = None) -> bytes:
    header = header_for(model, extras)
    header_bytes = json.dumps(header.model_dump(mode="json"), sort_keys=True, separators=(",", ":")).encode("utf-8")
    params = model_core.parameter_vector(model).astype("<f8")
    return _PREFIX.pack(MAGIC, VERSION, len(header_bytes)) + header_bytes + params.tobytes()


def save_checkpoint(
    model: model_core.VmscModel,
    path: str | Path,
    extras: Optional[dict[str, Any]] = None,
) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode(model, extras))
    return path


def decode(raw: bytes, source: str = "<bytes>") -> tuple[model_core.VmscModel, CheckpointHeader]:
    """
    Восстанавливает модель из байтов контрольной точки.

    Raises:
        FormatError: неверная магия, версия, длина заголовка или потока параметров.
    """
    if len(raw) < _PREFIX.size:
        raise FormatError(f"{source}: файл короче заголовка контрольной точки", path=source)
    magic, version, header_len = _PREFIX.unpack_from(raw)
    if magic != MAGIC:
        raise FormatError(f"{source}: неверная сигнатура {magic!r}", path=source)
    if version != VERSION:
        raise FormatError(f"{source}: неподдерживаемая версия формата {version}", path=source)
    start = _PREFIX.size
    if start + header_len > len(raw):
        raise FormatError(f"{source}: длина заголовка {header_len} выходит за пределы файла", path=source)
    try:
        header = CheckpointHeader(**json.loads(raw[start : start + header_len].decode("utf-8")))
    except (UnicodeDecodeError, json.JSONDecodeError, ValidationError, TypeError) as exc:
        raise FormatError(f"{source}: повреждённый заголовок ({exc})", path=source) from exc

    payload = raw[start + header_len :]
    if len(payload) != header.param_count * 8:
        raise FormatError(
            f"{source}: поток параметров {len(payload)} байт, ожидалось {header.param_count * 8}",
            path=source,
        )
    params = np.frombuffer(payload, dtype="<f8").astype(np.float64)

    try:
        mask = se.mask_from_descriptor(header.selfexpr.mask)
        layer = se.new_layer(
            header.selfexpr.n,
            mask,
            np.random.default_rng(0),
            sigma=0.0,
            csc_reg=header.selfexpr.csc_reg,
        )
        model = model_core.VmscModel(
            encoders=[volterra.bank_from_spec(s) for s in header.encoders],
            decoders=[volterra.bank_from_spec(s) for s in header.decoders],
            selfexpr=layer,
            image_shapes=[tuple(s) for s in header.image_shapes],  # type: ignore[misc]
            gamma=header.gamma,
            mu=header.mu,
            lam=header.lam,
            reg_kind=header.reg_kind,
            decoder_input=header.decoder_input,
            preset_name=header.preset,
        )
        model_core.set_parameter_vector(model, params)
    except (VolterraFuseError, KeyError, TypeError) as exc:
        raise FormatError(f"{source}: заголовок не описывает корректную модель ({exc})", path=source) from exc
    return model, header


def load_checkpoint(path: str | Path) -> tuple[model_core.VmscModel, CheckpointHeader]:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise FormatError(f"Не удалось прочитать контрольную точку {path}: {exc}", path=str(path)) from exc
    return decode(raw, str(path))
