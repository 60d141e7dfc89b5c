"""
Модуль графической визуализации результатов.

Рисует тепловые карты условных распределений связей при позиции и кривые
обучения (loss и F_avg на dev) и сохраняет их в PNG.
"""

from pathlib import Path

import matplotlib.pyplot as plt
import pandas as pd
from colorama import Fore, Style

from stance.config import apply_plot_style, config
from stance.statistics import HeatmapTables


def plot_heatmaps(tables: HeatmapTables, path: Path | str) -> Path:
    """
    Три тепловые карты в ряд: P(LR | позиция), P(CA | позиция), P(CA | LR).

    Args:
        tables: Условные распределения.
        path: Куда сохранить PNG.

    Returns:
        Путь к сохранённому файлу.

    """
    apply_plot_style()
    cmap = config.get("colors", "heatmap")
    fig, axes = plt.subplots(1, 3, figsize=(18, 6))

    for ax, (title, table) in zip(axes, tables.items(), strict=True):
        ax.set_title(title, fontweight="bold")
        if table.empty:
            ax.text(0.5, 0.5, "нет данных", ha="center", va="center")
            ax.set_axis_off()
            continue
        image = ax.imshow(table.to_numpy(dtype=float), cmap=cmap, vmin=0.0, vmax=1.0, aspect="auto")
        ax.set_xticks(range(len(table.columns)))
        ax.set_xticklabels([str(c) for c in table.columns], rotation=45, ha="right")
        ax.set_yticks(range(len(table.index)))
        ax.set_yticklabels([str(i) for i in table.index])
        # Подписи долей поверх ячеек
        for r in range(table.shape[0]):
            for c in range(table.shape[1]):
                value = float(table.iloc[r, c])
                ax.text(c, r, f"{value:.2f}", ha="center", va="center",
                        color="black" if value > 0.6 else "white", fontsize=9)  # noqa: PLR2004
        fig.colorbar(image, ax=ax, fraction=0.046, pad=0.04)

    fig.tight_layout()
    return _save_figure(fig, path)


def plot_history(history: pd.DataFrame, path: Path | str) -> Path:
    """Кривые обучения: loss на train и F_avg на dev по эпохам."""
    apply_plot_style()
    fig, (ax_loss, ax_f) = plt.subplots(1, 2, figsize=(14, 5))

    ax_loss.plot(history["epoch"], history["loss"], marker="o", color=config.get("colors", "line"), linewidth=2)
    ax_loss.set_title("Loss на train", fontweight="bold")
    ax_loss.set_xlabel("Эпоха")

    ax_f.plot(history["epoch"], history["dev_f_avg"] * 100, marker="o",
              color=config.get("colors", "favor"), linewidth=2)
    if not history.empty:
        best = history.loc[history["dev_f_avg"].idxmax()]
        ax_f.axvline(x=best["epoch"], color=config.get("colors", "threshold"), linestyle="--", label="лучшая эпоха")
        ax_f.legend(fontsize=10)
    ax_f.set_title("F_avg на dev", fontweight="bold")
    ax_f.set_xlabel("Эпоха")
    ax_f.set_ylim(0, 100)

    fig.tight_layout()
    return _save_figure(fig, path)


def _save_figure(fig: plt.Figure, path: Path | str) -> Path:
    """Сохраняет холст в файл и закрывает его."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=150, bbox_inches="tight", facecolor=fig.get_facecolor())
    plt.close(fig)
    print(f"{Fore.GREEN}График сохранён: {path}{Style.RESET_ALL}")
    return path
