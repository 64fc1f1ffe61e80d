"""Тесты для cli.plots (серии кривой потерь, SVG)."""

from __future__ import annotations

from pathlib import Path

from cli import plots


def _loss_rows() -> list[dict[str, str]]:
    rows = []
    for epoch in range(6):
        warm = epoch < 3
        rows.append(
            {
                "epoch": str(epoch),
                "total": str(10.0 - epoch),
                "recon": str(10.0 - epoch),
                "selfexpr": "0.0" if warm else str(0.5 / epoch),
                "reg": "0.0" if warm else "2.0",
            }
        )
    return rows


def test_loss_series_skips_warmup_zeros() -> None:
    """reg и selfexpr начинаются с первой эпохи после разогрева; total — с нулевой."""
    rows = _loss_rows()
    epochs, values = plots.loss_series(rows, "reg")
    assert epochs == [3, 4, 5]
    assert values == [2.0, 2.0, 2.0]
    assert plots.loss_series(rows, "selfexpr")[0] == [3, 4, 5]
    assert plots.loss_series(rows, "total")[0] == [0, 1, 2, 3, 4, 5]


def test_loss_series_all_zero_is_empty() -> None:
    """Слагаемое, равное нулю на всех эпохах, даёт пустую серию."""
    rows = [{"epoch": "0", "reg": "0.0"}, {"epoch": "1", "reg": "0.0"}]
    assert plots.loss_series(rows, "reg") == ([], [])


def test_plot_loss_writes_svg(tmp_path: Path) -> None:
    """Кривая потерь с разогревом сохраняется в SVG."""
    path = plots.plot_loss(_loss_rows(), tmp_path / "loss.svg")
    text = path.read_text(encoding="utf-8")
    assert text.lstrip().startswith("<?xml")
