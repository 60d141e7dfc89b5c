"""
Модуль для визуализации результатов в консоли и экспорта отчетов.

Содержит функции форматированного вывода F-мер по целям и корзинам
глубины, таблиц абляции и переноса между целями, а также сохранения
отчета в формате Markdown.
"""

from collections.abc import Sequence
from datetime import datetime, timezone
from pathlib import Path
from typing import TextIO

import pandas as pd
from colorama import Fore, Style

from stance.data_processor import STANCE_ORDER, Dataset, instances_frame
from stance.kam import AnnotationStats
from stance.statistics import HeatmapTables, MetricsReport
from stance.trainer import AblationResult
from stance.utils import color_delta, color_score

# Длина ANSI-последовательностей Colorama (цвет + сброс)
COLOR_OFFSET = 9


def _banner(title: str, width: int) -> None:
    print("\n" + "=" * width)
    print(f"{title:^{width}}")
    print("=" * width)


def _score_cell(value: float | None, width: int) -> str:
    """Окрашенная ячейка с F-мерой, выровненная по ширине."""
    if value is None:
        return "—".center(width)
    raw = f"{value * 100:>6.2f}"
    return color_score(value).replace(f"{value * 100:.2f}", raw).center(width + COLOR_OFFSET)


def print_dataset_summary(dataset: Dataset) -> None:
    """
    Выводит сводку по загруженным данным: примеры по целям и частям разбиения.

    Args:
        dataset: Загруженные примеры с разбиением.

    """
    df = instances_frame(dataset.instances)
    split_of = {i: name for name in ("train", "dev", "test") for i in dataset.split.part(name)}
    df["split"] = df["id"].map(split_of)
    table = df.pivot_table(index="target", columns="split", values="id", aggfunc="count", fill_value=0)
    table = table.reindex(columns=["train", "dev", "test"], fill_value=0)

    w_name, w_col = max(int(df["target"].str.len().max()), 12), 8
    total_w = w_name + 4 * w_col + 13
    _banner("ДАННЫЕ", total_w)
    print(f"| {'Цель':^{w_name}} | {'train':^{w_col}} | {'dev':^{w_col}} | {'test':^{w_col}} | {'всего':^{w_col}} |")
    print("-" * total_w)
    for target, row in table.iterrows():
        total = int(row.sum())
        print(
            f"| {str(target):^{w_name}} | {int(row['train']):^{w_col}} | {int(row['dev']):^{w_col}} | "
            f"{int(row['test']):^{w_col}} | {total:^{w_col}} |"
        )
    print(f"\nПримеров: {len(df)}, зерно разбиения: {dataset.split.seed}")


def print_annotation_summary(stats: AnnotationStats, chains: int) -> None:
    """Итог аннотирования: вызовы провайдера и попадания в кэш."""
    rate = stats.hit_rate * 100
    color = Fore.GREEN if rate == 100 else Fore.YELLOW  # noqa: PLR2004
    print(f"\nЦепочек: {chains}")
    print(f"{'Вызовов провайдера:':<25} {stats.calls}")
    print(f"{'Попаданий в кэш:':<25} {stats.hits} ({color}{rate:.1f}%{Style.RESET_ALL})")


def print_report(report: MetricsReport, title: str = "РЕЗУЛЬТАТЫ ПО ЦЕЛЯМ") -> None:
    """
    Выводит F_favor, F_against, F_avg по целям, среднее по целям и F_avg по глубине.

    Args:
        report: Отчёт оценки.
        title: Заголовок таблицы целей.

    """
    names = list(report.per_target)
    w_name = max([len(n) for n in names] + [12])
    w_n, w_f = 7, 10
    total_w = w_name + w_n + 3 * w_f + 16
    _banner(title, total_w)

    print(f"| {'Цель':^{w_name}} | {'N':^{w_n}} | {'F_favor':^{w_f}} | {'F_against':^{w_f}} | {'F_avg':^{w_f}} |")
    print("-" * total_w)
    for name, s in report.per_target.items():
        print(
            f"| {name:^{w_name}} | {s.count:^{w_n}} | {_score_cell(s.f_favor, w_f)} | "
            f"{_score_cell(s.f_against, w_f)} | {_score_cell(s.f_avg, w_f)} |"
        )
    print("-" * total_w)
    print(f"{'Avg. (среднее F_avg по целям):':<32} {color_score(report.macro_f_avg)}")

    if report.per_bucket:
        _banner("F_avg ПО ГЛУБИНЕ", 40)
        print(f"| {'Глубина':^10} | {'N':^{w_n}} | {'F_avg':^{w_f}} |")
        print("-" * 40)
        for label, b in report.per_bucket.items():
            print(f"| {label:^10} | {b.count:^{w_n}} | {_score_cell(b.f_avg, w_f)} |")
    if report.unbucketed:
        print(f"{Fore.YELLOW}Вне таблицы корзин глубины: {report.unbucketed}{Style.RESET_ALL}")

    labels = [s.value for s in STANCE_ORDER]
    print(f"\nМатрица ошибок (строки — эталон, столбцы — предсказание): {', '.join(labels)}")
    for label, row in zip(labels, report.confusion, strict=True):
        print(f"  {label:<8} " + " ".join(f"{v:>5}" for v in row))


def print_history(history: pd.DataFrame) -> None:
    """Краткий итог обучения по истории эпох."""
    if history.empty:
        print(f"{Fore.YELLOW}Обучение не проводилось: сохранена инициализация{Style.RESET_ALL}")
        return
    best = history.loc[history["dev_f_avg"].idxmax()]
    print(f"Эпох: {len(history)}, лучшая эпоха: {int(best['epoch'])}, "
          f"dev F_avg: {color_score(float(best['dev_f_avg']))}, loss: {best['loss']:.4f}")


def print_ablation(result: AblationResult) -> None:
    """Таблица абляции: вариант, F_avg и изменение относительно полной модели."""
    w_name, w_f = 18, 10
    total_w = w_name + 2 * w_f + 10
    _banner("АБЛЯЦИЯ", total_w)
    print(f"| {'Вариант':^{w_name}} | {'F_avg':^{w_f}} | {'ΔF_avg':^{w_f}} |")
    print("-" * total_w)
    print(f"| {'Полная модель':^{w_name}} | {_score_cell(result.base_f_avg, w_f)} | {'':^{w_f}} |")
    for _, row in result.table.iterrows():
        delta = color_delta(row["delta"]).center(w_f + COLOR_OFFSET)
        print(f"| {row['variant']:^{w_name}} | {_score_cell(row['f_avg'], w_f)} | {delta} |")


def print_cross_target(table: pd.DataFrame) -> None:
    """Таблица переноса между целями."""
    w_pair, w_f = 10, 10
    total_w = w_pair + w_f + 7
    _banner("ПЕРЕНОС МЕЖДУ ЦЕЛЯМИ", total_w)
    print(f"| {'Пара':^{w_pair}} | {'F_avg':^{w_f}} |")
    print("-" * total_w)
    for _, row in table.iterrows():
        score = row["f_avg"] if "f_avg" in row and pd.notna(row["f_avg"]) else None
        print(f"| {row['pair']:^{w_pair}} | {_score_cell(score, w_f)} |")


def print_seed_summary(summary: pd.DataFrame) -> None:
    """Среднее ± стандартное отклонение по зёрнам."""
    _banner("СРЕДНЕЕ ПО ЗЁРНАМ", 50)
    for metric, row in summary.iterrows():
        print(f"{metric!s:<28} {row['mean'] * 100:6.2f} ± {row['std'] * 100:.2f}")


def print_heatmaps(tables: HeatmapTables) -> None:
    """Печатает условные распределения связей (доли в процентах)."""
    for title, table in tables.items():
        _banner(title, 70)
        if table.empty:
            print(f"{Fore.YELLOW}Нет данных{Style.RESET_ALL}")
            continue
        print((table * 100).round(1).to_string())


def _write_table(f: TextIO, header: Sequence[str], rows: Sequence[Sequence[str]]) -> None:
    f.write("| " + " | ".join(header) + " |\n")
    f.write("|" + "|".join("-" * (len(h) + 2) for h in header) + "|\n")
    for row in rows:
        f.write("| " + " | ".join(row) + " |\n")
    f.write("\n")


def _pct(value: float | None) -> str:
    return "—" if value is None else f"{value * 100:.2f}"


def save_report_to_md(
    report: MetricsReport,
    path: Path | str | None = None,
    *,
    sources: Sequence[str] = (),
    history: pd.DataFrame | None = None,
    ablation: AblationResult | None = None,
    cross_target: pd.DataFrame | None = None,
) -> Path:
    """
    Формирует Markdown-отчет и сохраняет его.

    Args:
        report: Отчёт оценки.
        path: Куда сохранить (по умолчанию runs/<время> отчет.md).
        sources: Использованные файлы данных.
        history: История обучения.
        ablation: Результат абляции.
        cross_target: Таблица переноса между целями.

    Returns:
        Путь к сохранённому файлу.

    """
    timestamp = datetime.now(timezone.utc).astimezone().strftime("%Y-%m-%d_%H-%M-%S")
    filename = Path(path) if path is not None else Path(f"runs/{timestamp} отчет.md")
    filename.parent.mkdir(parents=True, exist_ok=True)

    with filename.open("w", encoding="utf-8") as f:
        f.write(f"# 📊 Позиции в разговорных тредах — {timestamp}\n\n")
        if sources:
            f.write("## Используемые файлы\n\n")
            for source in sources:
                f.write(f"- {Path(source).name}\n")
            f.write("\n")

        f.write("## Результаты по целям\n\n")
        rows = [
            [name, str(s.count), _pct(s.f_favor), _pct(s.f_against), _pct(s.f_avg)]
            for name, s in report.per_target.items()
        ]
        _write_table(f, ["Цель", "N", "F_favor", "F_against", "F_avg"], rows)
        f.write(f"**Avg.:** {_pct(report.macro_f_avg)}\n\n")

        f.write("## F_avg по глубине\n\n")
        rows = [[label, str(b.count), _pct(b.f_avg)] for label, b in report.per_bucket.items()]
        _write_table(f, ["Глубина", "N", "F_avg"], rows)
        if report.unbucketed:
            f.write(f"Вне таблицы корзин: {report.unbucketed}\n\n")

        if history is not None and not history.empty:
            f.write("## Обучение\n\n")
            rows = [[str(int(r.epoch)), f"{r.loss:.4f}", _pct(r.dev_f_avg)] for r in history.itertuples()]
            _write_table(f, ["Эпоха", "Loss", "dev F_avg"], rows)

        if ablation is not None:
            f.write("## Абляция\n\n")
            rows = [["Полная модель", _pct(ablation.base_f_avg), ""]]
            rows += [[r["variant"], _pct(r["f_avg"]), f"{r['delta'] * 100:+.2f}"] for _, r in ablation.table.iterrows()]
            _write_table(f, ["Вариант", "F_avg", "ΔF_avg"], rows)

        if cross_target is not None and not cross_target.empty:
            f.write("## Перенос между целями\n\n")
            rows = [[r["pair"], _pct(r["f_avg"])] for _, r in cross_target.iterrows()]
            _write_table(f, ["Пара", "F_avg"], rows)

    print(f"{Fore.GREEN}📄 Отчет сохранен: {filename}{Style.RESET_ALL}")
    return filename
