"""
Модуль статистических вычислений.

F-меры по классам позиции, F_avg, матрица ошибок, отчёты по целям и
корзинам глубины, а также условные распределения связей при позиции.
"""

import json
from collections.abc import Mapping, Sequence
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import pandas as pd
from sklearn.metrics import confusion_matrix, precision_recall_fscore_support

from stance.data_processor import DEPTH_BUCKETS, STANCE_ORDER, Stance, StanceInstance, depth_bucket
from stance.errors import DepthOutOfRangeError, LengthMismatchError, MissingAnnotationError
from stance.kam import ACT_LABELS, LOGICAL_LABELS, RelationAnnotations, chain_key

LABEL_VALUES = [s.value for s in STANCE_ORDER]


def _values(labels: Sequence[Stance | str]) -> list[str]:
    return [label.value if isinstance(label, Stance) else str(label) for label in labels]


def _check_lengths(preds: Sequence[Any], golds: Sequence[Any]) -> None:
    if len(preds) != len(golds):
        msg = f"Длины предсказаний ({len(preds)}) и эталона ({len(golds)}) не совпадают"
        raise LengthMismatchError(msg)


def f_score(preds: Sequence[Stance | str], golds: Sequence[Stance | str], cls: Stance | str) -> float:
    """
    F1 для одного класса; при P + R = 0 F считается равной 0.

    Raises:
        LengthMismatchError: Последовательности разной длины.

    """
    _check_lengths(preds, golds)
    if not golds:
        return 0.0
    label = cls.value if isinstance(cls, Stance) else str(cls)
    _, _, f1, _ = precision_recall_fscore_support(
        _values(golds), _values(preds), labels=[label], average=None, zero_division=0
    )
    return float(f1[0])


def f_avg(preds: Sequence[Stance | str], golds: Sequence[Stance | str]) -> float:
    """(F_favor + F_against) / 2; класс NONE влияет только через ошибки."""
    return (f_score(preds, golds, Stance.FAVOR) + f_score(preds, golds, Stance.AGAINST)) / 2


def confusion(preds: Sequence[Stance | str], golds: Sequence[Stance | str]) -> np.ndarray:
    """Матрица 3 × 3: строки: эталон, столбцы: предсказание, порядок (AGAINST, FAVOR, NONE)."""
    _check_lengths(preds, golds)
    if not golds:
        return np.zeros((len(STANCE_ORDER), len(STANCE_ORDER)), dtype=np.int64)
    return confusion_matrix(_values(golds), _values(preds), labels=LABEL_VALUES).astype(np.int64)


@dataclass(frozen=True)
class TargetScores:
    f_favor: float
    f_against: float
    f_avg: float
    count: int


@dataclass(frozen=True)
class BucketScores:
    """F_avg корзины глубины; у пустой корзины f_avg = None."""

    f_avg: float | None
    count: int
    confusion: list[list[int]] = field(default_factory=list)


@dataclass
class MetricsReport:
    """Отчёт оценки: по целям, среднее по целям, по корзинам глубины, матрица ошибок."""

    per_target: dict[str, TargetScores]
    macro_f_avg: float
    per_bucket: dict[str, BucketScores]
    confusion: list[list[int]]
    metadata: dict[str, Any] = field(default_factory=dict)
    unbucketed: int = 0

    def to_dict(self) -> dict[str, Any]:
        return {
            "per_target": {name: asdict(s) for name, s in self.per_target.items()},
            "macro_f_avg": self.macro_f_avg,
            "per_bucket": {name: asdict(s) for name, s in self.per_bucket.items()},
            "confusion": self.confusion,
            "labels": LABEL_VALUES,
            "unbucketed": self.unbucketed,
            "metadata": self.metadata,
        }

    def target_frame(self) -> pd.DataFrame:
        df = pd.DataFrame.from_dict({k: asdict(v) for k, v in self.per_target.items()}, orient="index")
        df.index.name = "target"
        return df

    def bucket_frame(self) -> pd.DataFrame:
        rows = {k: {"f_avg": v.f_avg, "count": v.count} for k, v in self.per_bucket.items()}
        df = pd.DataFrame.from_dict(rows, orient="index", columns=["f_avg", "count"])
        df.index.name = "bucket"
        return df


def _bucket_labels(instances: Sequence[StanceInstance]) -> list[str]:
    kinds = sorted({i.target.kind for i in instances}, key=lambda k: k.value, reverse=True)
    labels: list[str] = []
    for kind in kinds:
        labels.extend(label for label, _, _ in DEPTH_BUCKETS[kind] if label not in labels)
    return labels


def build_report(
    preds: Sequence[Stance],
    golds: Sequence[Stance],
    instances: Sequence[StanceInstance],
    metadata: dict[str, Any] | None = None,
) -> MetricsReport:
    """
    Собирает полный отчёт по предсказаниям.

    Args:
        preds: Предсказанные метки в порядке instances.
        golds: Эталонные метки в том же порядке.
        instances: Примеры (нужны цель и глубина).
        metadata: Параметры запуска для отчёта.

    Returns:
        MetricsReport; «Avg.»: невзвешенное среднее F_avg по целям.
        Глубины вне таблицы корзин считаются в unbucketed.

    """
    _check_lengths(preds, golds)
    _check_lengths(instances, golds)

    buckets = []
    for instance in instances:
        try:
            buckets.append(depth_bucket(instance))
        except DepthOutOfRangeError:
            buckets.append(None)

    df = pd.DataFrame({
        "target": [i.target.name for i in instances],
        "bucket": buckets,
        "pred": _values(preds),
        "gold": _values(golds),
    })

    per_target = {}
    for name, group in df.groupby("target", sort=True):
        p, g = list(group["pred"]), list(group["gold"])
        favor, against = f_score(p, g, Stance.FAVOR), f_score(p, g, Stance.AGAINST)
        per_target[str(name)] = TargetScores(
            f_favor=favor, f_against=against, f_avg=(favor + against) / 2, count=len(group)
        )

    per_bucket = {}
    for label in _bucket_labels(instances):
        group = df[df["bucket"] == label]
        if group.empty:
            per_bucket[label] = BucketScores(f_avg=None, count=0)
            continue
        p, g = list(group["pred"]), list(group["gold"])
        per_bucket[label] = BucketScores(f_avg=f_avg(p, g), count=len(group), confusion=confusion(p, g).tolist())

    macro = float(np.mean([s.f_avg for s in per_target.values()])) if per_target else 0.0
    return MetricsReport(
        per_target=per_target,
        macro_f_avg=macro,
        per_bucket=per_bucket,
        confusion=confusion(list(df["pred"]), list(df["gold"])).tolist(),
        metadata=dict(metadata or {}),
        unbucketed=int(df["bucket"].isna().sum()),
    )


@dataclass(frozen=True)
class HeatmapTables:
    """Условные распределения: P(LR | позиция), P(CA | позиция), P(CA | LR)."""

    lr_given_stance: pd.DataFrame
    ca_given_stance: pd.DataFrame
    ca_given_lr: pd.DataFrame

    def items(self) -> list[tuple[str, pd.DataFrame]]:
        return [
            ("P(LR | stance)", self.lr_given_stance),
            ("P(CA | stance)", self.ca_given_stance),
            ("P(CA | LR)", self.ca_given_lr),
        ]


def _conditional(
    rows: pd.Series, cols: pd.Series, columns: list[str], index: list[str] | None = None
) -> pd.DataFrame:
    # UNKNOWN и прочие значения вне словаря отбрасываются до нормировки
    mask = rows.notna() & cols.isin(columns)
    if index is not None:
        mask &= rows.isin(index)
    if not mask.any():
        return pd.DataFrame(columns=columns, dtype=float)
    table = pd.crosstab(rows[mask], cols[mask], normalize="index")
    return table.reindex(columns=columns, fill_value=0.0)


def relation_stance_heatmap(
    instances: Sequence[StanceInstance], annotations: Mapping[str, RelationAnnotations]
) -> HeatmapTables:
    """
    Эмпирические условные распределения связей при позиции целевой реплики.

    Берётся связь целевой реплики с её родителем, поэтому примеры длины 1
    (сам пост) не участвуют. Связи UNKNOWN в таблицы не попадают, каждая
    строка таблицы в сумме даёт 1.

    Raises:
        MissingAnnotationError: Для цепочки нет аннотаций.

    """
    records = []
    for instance in instances:
        if len(instance.chain) < 2:  # noqa: PLR2004
            continue
        chain_annotations = annotations.get(chain_key(instance.chain))
        if chain_annotations is None:
            msg = f"Нет аннотаций для цепочки примера {instance.id}"
            raise MissingAnnotationError(msg)
        last = chain_annotations.pairs[-1]
        records.append({
            "stance": instance.gold.value,
            "logical": last.logical.value if last.logical is not None else None,
            "act": last.act.value if last.act is not None else None,
        })

    df = pd.DataFrame(records, columns=["stance", "logical", "act"])
    logical_columns = [label.value for label in LOGICAL_LABELS]
    act_columns = [label.value for label in ACT_LABELS]
    return HeatmapTables(
        lr_given_stance=_conditional(df["stance"], df["logical"], logical_columns),
        ca_given_stance=_conditional(df["stance"], df["act"], act_columns),
        ca_given_lr=_conditional(df["logical"], df["act"], act_columns, index=logical_columns),
    )


def write_report_json(report: MetricsReport, path: Path | str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(report.to_dict(), ensure_ascii=False, indent=2), encoding="utf-8")
    return path


def write_report_csv(report: MetricsReport, directory: Path | str) -> tuple[Path, Path]:
    """Пишет per_target.csv и per_bucket.csv."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    targets_path = directory / "per_target.csv"
    buckets_path = directory / "per_bucket.csv"
    report.target_frame().to_csv(targets_path)
    report.bucket_frame().to_csv(buckets_path)
    return targets_path, buckets_path


def write_heatmap_csv(tables: HeatmapTables, directory: Path | str) -> list[Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    names = ("lr_given_stance", "ca_given_stance", "ca_given_lr")
    paths = []
    for name, (_, table) in zip(names, tables.items(), strict=True):
        path = directory / f"{name}.csv"
        table.to_csv(path)
        paths.append(path)
    return paths
