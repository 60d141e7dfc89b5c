import pandas as pd
import pytest

from stance.console_output import (
    print_ablation,
    print_annotation_summary,
    print_cross_target,
    print_dataset_summary,
    print_heatmaps,
    print_history,
    print_report,
    print_seed_summary,
    save_report_to_md,
)
from stance.kam import AnnotationStats
from stance.statistics import BucketScores, HeatmapTables, MetricsReport, TargetScores
from stance.trainer import ABLATION_VARIANTS, AblationResult


@pytest.fixture
def sample_report():
    """Отчёт с двумя целями, пустой корзиной и примером вне корзин."""
    return MetricsReport(
        per_target={
            "Tesla": TargetScores(f_favor=0.8, f_against=0.6, f_avg=0.7, count=10),
            "Trump": TargetScores(f_favor=0.5, f_against=0.3, f_avg=0.4, count=6),
        },
        macro_f_avg=0.55,
        per_bucket={
            "1-2": BucketScores(f_avg=0.6, count=9),
            "3-5": BucketScores(f_avg=0.5, count=6),
            "6-8": BucketScores(f_avg=None, count=0),
        },
        confusion=[[3, 1, 0], [2, 6, 1], [0, 1, 2]],
        unbucketed=1,
    )


@pytest.fixture
def sample_ablation(sample_report):
    """Абляция: четыре варианта, каждый хуже полной модели."""
    table = pd.DataFrame({
        "variant": list(ABLATION_VARIANTS),
        "disabled": ["local", "contextual", "logical", "act"],
        "f_avg": [0.50, 0.45, 0.52, 0.53],
    })
    table["delta"] = table["f_avg"] - 0.55
    return AblationResult(base_f_avg=0.55, base_report=sample_report, table=table)


def test_print_report_output(capsys, sample_report):
    """Таблица целей, среднее по целям, корзины глубины и матрица ошибок."""
    print_report(sample_report)
    out = capsys.readouterr().out

    assert "РЕЗУЛЬТАТЫ ПО ЦЕЛЯМ" in out
    assert "Tesla" in out
    assert "Trump" in out
    assert "Avg." in out
    assert "55.00" in out
    assert "6-8" in out
    assert "Вне таблицы корзин глубины: 1" in out
    assert "against" in out


def test_print_ablation_lists_variants(capsys, sample_ablation):
    """Все четыре варианта и полная модель в таблице абляции."""
    print_ablation(sample_ablation)
    out = capsys.readouterr().out

    assert "АБЛЯЦИЯ" in out
    assert "Полная модель" in out
    for variant in ABLATION_VARIANTS:
        assert variant in out


def test_print_annotation_summary_hit_rate(capsys):
    """Все ответы из кэша: 100% попаданий."""
    print_annotation_summary(AnnotationStats(calls=0, hits=12), chains=5)
    out = capsys.readouterr().out

    assert "Цепочек: 5" in out
    assert "Вызовов провайдера:" in out
    assert "100.0%" in out


def test_print_dataset_summary(capsys, synthetic_dataset):
    """Сводка по целям и частям разбиения."""
    print_dataset_summary(synthetic_dataset)
    out = capsys.readouterr().out

    assert "ДАННЫЕ" in out
    assert "Bitcoin" in out
    assert f"Примеров: {len(synthetic_dataset.instances)}" in out
    assert "зерно разбиения: 7" in out


def test_print_history(capsys):
    """Лучшая эпоха по dev; пустая история: предупреждение."""
    history = pd.DataFrame({"epoch": [1, 2, 3], "loss": [1.1, 0.8, 0.7], "dev_f_avg": [0.4, 0.6, 0.5]})
    print_history(history)
    assert "лучшая эпоха: 2" in capsys.readouterr().out

    print_history(pd.DataFrame(columns=["epoch", "loss", "dev_f_avg"]))
    assert "Обучение не проводилось" in capsys.readouterr().out


def test_print_cross_target_and_seeds(capsys):
    """Таблица переноса и среднее ± std по зёрнам."""
    print_cross_target(pd.DataFrame({"pair": ["DT→JB", "BC→TS"], "f_avg": [0.61, None]}))
    out = capsys.readouterr().out
    assert "ПЕРЕНОС МЕЖДУ ЦЕЛЯМИ" in out
    assert "DT→JB" in out
    assert "—" in out

    summary = pd.DataFrame({"mean": [0.5], "std": [0.05]}, index=["f_avg"])
    print_seed_summary(summary)
    assert "50.00 ± 5.00" in capsys.readouterr().out


def test_print_heatmaps_empty_table(capsys):
    """Пустая таблица печатается как «Нет данных»."""
    filled = pd.DataFrame({"causal": [1.0]}, index=["favor"])
    print_heatmaps(HeatmapTables(filled, pd.DataFrame(), pd.DataFrame()))
    out = capsys.readouterr().out

    assert "P(LR | stance)" in out
    assert "100.0" in out
    assert out.count("Нет данных") == 2


def test_save_report_to_md_creates_file(tmp_path, sample_report, sample_ablation):
    """Markdown-отчёт содержит все переданные разделы."""
    history = pd.DataFrame({"epoch": [1], "loss": [0.9], "dev_f_avg": [0.5]})
    cross = pd.DataFrame({"pair": ["SX→TS"], "f_avg": [0.42]})

    path = save_report_to_md(
        sample_report,
        tmp_path / "report.md",
        sources=["threads/corpus.jsonl"],
        history=history,
        ablation=sample_ablation,
        cross_target=cross,
    )
    content = path.read_text(encoding="utf-8")

    assert path.exists()
    assert "corpus.jsonl" in content
    assert "## Результаты по целям" in content
    assert "| Tesla | 10 | 80.00 | 60.00 | 70.00 |" in content
    assert "**Avg.:** 55.00" in content
    assert "| 6-8 | 0 | — |" in content
    assert "## Обучение" in content
    assert "## Абляция" in content
    assert "-5.00" in content
    assert "## Перенос между целями" in content
    assert "| SX→TS | 42.00 |" in content


def test_save_report_to_md_minimal(tmp_path, sample_report):
    """Без абляции и переноса соответствующих разделов нет."""
    content = save_report_to_md(sample_report, tmp_path / "r.md").read_text(encoding="utf-8")
    assert "## Абляция" not in content
    assert "## Перенос между целями" not in content
