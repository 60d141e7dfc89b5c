"""
Модуль обучения и экспериментальных протоколов.

Цикл обучения с ранней остановкой по F_avg на dev, оценка чекпоинта и
протоколы: внутри цели, перенос между целями, абляция слоёв, усреднение
по нескольким зёрнам.
"""

import copy
import json
import math
from collections.abc import Callable, Iterable, Mapping, Sequence
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import pandas as pd
import torch
from colorama import Fore, Style

from stance.config import RunConfig, config_hash
from stance.data_processor import STANCE_ORDER, Dataset, Stance, StanceInstance, by_target
from stance.encoders import encoder_identity
from stance.errors import DivergenceError, UnknownTargetError
from stance.kam import (
    AnnotationCache,
    AnnotationStats,
    ChatProvider,
    Provider,
    RelationAnnotations,
    StubProvider,
    annotate_instances,
)
from stance.model import (
    STREAMS,
    StanceNetwork,
    AblationFlags,
    PreparedInstance,
    build_model,
    cross_entropy_from_logits,
    load_checkpoint,
    predict,
    prepare_instance,
    save_checkpoint,
)
from stance.statistics import MetricsReport, build_report, f_avg, write_report_csv, write_report_json
from stance.utils import seed_everything

TARGET_ABBREVIATIONS = {
    "BC": "Bitcoin",
    "TS": "Tesla",
    "SX": "SpaceX",
    "JB": "Biden",
    "DT": "Trump",
}

# Четыре пары внутри домена, затем восемь междоменных
STANDARD_PAIRS = (
    ("DT", "JB"),
    ("JB", "DT"),
    ("SX", "TS"),
    ("TS", "SX"),
    ("BC", "DT"),
    ("BC", "JB"),
    ("BC", "SX"),
    ("BC", "TS"),
    ("DT", "BC"),
    ("TS", "BC"),
    ("SX", "DT"),
    ("DT", "SX"),
)

ABLATION_VARIANTS = {
    "w/o Local": "local",
    "w/o Contextual": "contextual",
    "w/o LR": "logical",
    "w/o CA": "act",
}

HISTORY_COLUMNS = ["epoch", "loss", "dev_f_avg"]


@dataclass
class TrainResult:
    """Итог обучения: лучшая модель, история по эпохам и номер лучшей эпохи (0: инициализация)."""

    model: StanceNetwork
    history: pd.DataFrame
    best_epoch: int
    best_dev_f_avg: float
    seed: int
    checkpoint_path: Path | None = None


def ensure_annotations(
    instances: Iterable[StanceInstance],
    run_config: RunConfig,
    flags: AblationFlags | None = None,
    *,
    provider: Provider | None = None,
    cache: AnnotationCache | None = None,
    stub: bool = False,
    verbose: bool = False,
) -> tuple[dict[str, RelationAnnotations], AnnotationStats]:
    """
    Достаёт аннотации всех цепочек из кэша, недостающие запрашивает у провайдера.

    Запрашиваются только виды связей, нужные включённым слоям: при
    отключённом слое актов провайдер не получает ни одного вопроса об актах.

    Raises:
        ProviderError: Провайдер не настроен или не ответил.

    """
    flags = flags or AblationFlags()
    kinds = flags.required_kinds
    if not kinds:
        return {}, AnnotationStats()
    if cache is None:
        cache = AnnotationCache(run_config.provider.cache_path)
    if provider is None:
        provider = StubProvider() if stub else ChatProvider(run_config.provider)
    return annotate_instances(
        instances,
        provider,
        cache,
        kinds,
        max_in_flight=run_config.provider.max_in_flight,
        verbose=verbose,
    )


def _prepare_all(
    instances: Sequence[StanceInstance], annotations: Mapping[str, RelationAnnotations], model: StanceNetwork
) -> list[PreparedInstance]:
    return [prepare_instance(i, annotations, model.config, model.encoder, model.flags) for i in instances]


def _predict_labels(model: StanceNetwork, prepared: Sequence[PreparedInstance]) -> list[Stance]:
    return [predict(model, p).label for p in prepared]


def _dev_score(model: StanceNetwork, prepared: Sequence[PreparedInstance]) -> float:
    golds = [STANCE_ORDER[p.gold] for p in prepared]
    return f_avg(_predict_labels(model, prepared), golds)


def train(  # noqa: PLR0913
    run_config: RunConfig,
    train_instances: Sequence[StanceInstance],
    dev_instances: Sequence[StanceInstance],
    annotations: Mapping[str, RelationAnnotations],
    *,
    flags: AblationFlags | None = None,
    seed: int | None = None,
    checkpoint_path: Path | str | None = None,
    verbose: bool = False,
) -> TrainResult:
    """
    Обучает сеть Adam'ом на кросс-энтропии с ранней остановкой.

    Чекпоинт обновляется, когда F_avg на dev не ниже лучшего; счётчик
    терпения сбрасывается только при строгом улучшении. При нуле эпох
    возвращается инициализация и пустая история.

    Raises:
        DivergenceError: Потеря стала не конечной.
        MissingAnnotationError: Нет аннотаций для цепочки включённого слоя.

    """
    training = run_config.training
    seed = training.seed if seed is None else seed
    seed_everything(seed)
    model = build_model(run_config.model, flags, seed=seed)

    train_prepared = _prepare_all(train_instances, annotations, model)
    dev_prepared = _prepare_all(dev_instances, annotations, model)

    trainable = [p for p in model.parameters() if p.requires_grad]
    optimizer = torch.optim.Adam(trainable, lr=training.learning_rate)
    generator = torch.Generator().manual_seed(seed)

    best_state = copy.deepcopy(model.state_dict())
    best_f, best_epoch, stale = -math.inf, 0, 0
    rows = []

    for epoch in range(1, training.max_epochs + 1):
        model.train()
        order = torch.randperm(len(train_prepared), generator=generator).tolist()
        total_loss = 0.0
        for start in range(0, len(order), training.batch_size):
            batch = [train_prepared[k] for k in order[start : start + training.batch_size]]
            logits = torch.stack([model.logits(p) for p in batch])
            gold = torch.tensor([p.gold for p in batch], dtype=torch.long)
            loss = cross_entropy_from_logits(logits, gold)
            if not torch.isfinite(loss):
                msg = f"Потеря стала не конечной ({float(loss)}) на эпохе {epoch}"
                raise DivergenceError(msg)
            optimizer.zero_grad(set_to_none=True)
            loss.backward()
            optimizer.step()
            total_loss += float(loss) * len(batch)

        mean_loss = total_loss / max(len(train_prepared), 1)
        dev_f = _dev_score(model, dev_prepared)
        rows.append({"epoch": epoch, "loss": mean_loss, "dev_f_avg": dev_f})

        improved = dev_f > best_f
        if dev_f >= best_f:
            best_f, best_epoch = dev_f, epoch
            best_state = copy.deepcopy(model.state_dict())
        stale = 0 if improved else stale + 1

        if verbose:
            mark = f"{Fore.GREEN}★{Style.RESET_ALL}" if best_epoch == epoch else " "
            print(f"Эпоха {epoch:>3} | loss {mean_loss:.4f} | dev F_avg {dev_f * 100:6.2f} {mark}")
        if stale >= training.patience:
            if verbose:
                print(f"{Fore.YELLOW}Ранняя остановка: {training.patience} эпох без улучшения{Style.RESET_ALL}")
            break

    model.load_state_dict(best_state)
    model.eval()
    history = pd.DataFrame(rows, columns=HISTORY_COLUMNS)

    saved = None
    if checkpoint_path is not None:
        saved = save_checkpoint(model, checkpoint_path, seed=seed, extra={"best_epoch": best_epoch})
    return TrainResult(
        model=model,
        history=history,
        best_epoch=best_epoch,
        best_dev_f_avg=max(best_f, 0.0),
        seed=seed,
        checkpoint_path=saved,
    )


def evaluate(
    checkpoint: StanceNetwork | Path | str,
    instances: Sequence[StanceInstance],
    annotations: Mapping[str, RelationAnnotations],
    *,
    expected_hash: str | None = None,
    metadata: dict[str, Any] | None = None,
) -> MetricsReport:
    """
    Оценивает модель или чекпоинт на примерах.

    Raises:
        IncompatibleCheckpointError: Чекпоинт обучен с другой предобработкой.

    """
    if isinstance(checkpoint, StanceNetwork):
        model = checkpoint
    else:
        model, _ = load_checkpoint(checkpoint, expected_hash)
    prepared = _prepare_all(instances, annotations, model)
    preds = [predict(model, p).label for p in prepared]
    golds = [i.gold for i in instances]
    meta = {"flags": model.flags.to_dict(), "encoder": model.encoder.identity, **(metadata or {})}
    return build_report(preds, golds, instances, meta)


def expected_config_hash(run_config: RunConfig) -> str:
    """Хэш, который должен быть у чекпоинта, совместимого с этой конфигурацией."""
    model_config = run_config.model
    return config_hash(model_config, encoder_identity(model_config.encoder, model_config.encoder_name))


@dataclass
class InTargetResult:
    report: MetricsReport
    results: dict[str, TrainResult] = field(default_factory=dict)


def _select_targets(dataset: Dataset, targets: Sequence[str] | None) -> list[str]:
    available = dataset.targets
    selected = list(targets) if targets else available
    unknown = [t for t in selected if t not in available]
    if unknown:
        msg = f"Цели {', '.join(unknown)} нет в данных; доступны: {', '.join(available)}"
        raise UnknownTargetError(msg)
    return selected


def run_in_target(  # noqa: PLR0913
    run_config: RunConfig,
    dataset: Dataset,
    annotations: Mapping[str, RelationAnnotations],
    *,
    targets: Sequence[str] | None = None,
    flags: AblationFlags | None = None,
    seed: int | None = None,
    joint: bool = False,
    verbose: bool = False,
) -> InTargetResult:
    """
    Протокол «внутри цели»: обучение и тест на одной и той же цели.

    Args:
        run_config: Конфигурация запуска.
        dataset: Данные с разбиением.
        annotations: Аннотации цепочек.
        targets: Какие цели брать (по умолчанию все).
        flags: Флаги абляции.
        seed: Зерно (по умолчанию из конфигурации).
        joint: Одна модель на все выбранные цели вместо отдельной на каждую.
        verbose: Печатать ход обучения.

    Raises:
        UnknownTargetError: Запрошенной цели нет в данных.

    """
    selected = _select_targets(dataset, targets)
    groups = {"all": selected} if joint else {name: [name] for name in selected}

    results: dict[str, TrainResult] = {}
    preds, golds, tested = [], [], []
    for key, names in groups.items():
        def part(split: str, names: list[str] = names) -> list[StanceInstance]:
            return [i for i in dataset.part(split) if i.target.name in names]

        if verbose:
            print(f"\n{Fore.CYAN}→ Обучение: {', '.join(names)}{Style.RESET_ALL}")
        result = train(run_config, part("train"), part("dev"), annotations, flags=flags, seed=seed, verbose=verbose)
        results[key] = result
        test = part("test")
        prepared = _prepare_all(test, annotations, result.model)
        preds.extend(predict(result.model, p).label for p in prepared)
        golds.extend(i.gold for i in test)
        tested.extend(test)

    seed_used = next(iter(results.values())).seed if results else seed
    flags_used = (flags or AblationFlags()).to_dict()
    report = build_report(preds, golds, tested, {"protocol": "in-target", "seed": seed_used, "flags": flags_used})
    return InTargetResult(report=report, results=results)


def resolve_target(name: str) -> str:
    return TARGET_ABBREVIATIONS.get(name.strip().upper(), name.strip())


PAIR_PRESETS = ("standard", "table9")


def parse_pairs(pairs_text: str) -> list[tuple[str, str]]:
    """
    Разбирает список пар переноса.

    «table9» (или «standard»): двенадцать стандартных пар; иначе список через
    запятую вида «DT->JB,BC->TS» (аббревиатуры или полные имена целей).
    """
    if pairs_text.strip().lower() in PAIR_PRESETS:
        return [(resolve_target(s), resolve_target(d)) for s, d in STANDARD_PAIRS]
    pairs = []
    for chunk in pairs_text.split(","):
        if not chunk.strip():
            continue
        source, sep, dest = chunk.replace("→", "->").partition("->")
        if not sep or not source.strip() or not dest.strip():
            msg = f"Пара '{chunk}' должна иметь вид ИСТОЧНИК->ЦЕЛЬ"
            raise UnknownTargetError(msg)
        pairs.append((resolve_target(source), resolve_target(dest)))
    return pairs


def pair_label(source: str, dest: str) -> str:
    names = {v: k for k, v in TARGET_ABBREVIATIONS.items()}
    return f"{names.get(source, source)}→{names.get(dest, dest)}"


def run_cross_target(  # noqa: PLR0913
    run_config: RunConfig,
    dataset: Dataset,
    source: str,
    dest: str,
    annotations: Mapping[str, RelationAnnotations],
    *,
    flags: AblationFlags | None = None,
    seed: int | None = None,
    verbose: bool = False,
) -> float:
    """
    Обучение на train-части цели source, F_avg на test-части цели dest.

    Raises:
        UnknownTargetError: Одной из целей нет в данных.

    """
    _select_targets(dataset, [source, dest])
    result = train(
        run_config,
        by_target(dataset.part("train"), source),
        by_target(dataset.part("dev"), source),
        annotations,
        flags=flags,
        seed=seed,
        verbose=verbose,
    )
    test = by_target(dataset.part("test"), dest)
    prepared = _prepare_all(test, annotations, result.model)
    preds = [predict(result.model, p).label for p in prepared]
    return f_avg(preds, [i.gold for i in test])


def run_cross_targets(
    run_config: RunConfig,
    dataset: Dataset,
    pairs: Sequence[tuple[str, str]],
    annotations: Mapping[str, RelationAnnotations],
    *,
    seed: int | None = None,
    verbose: bool = False,
) -> pd.DataFrame:
    """Таблица переноса: строка на пару (pair, source, dest, f_avg)."""
    rows = []
    for source, dest in pairs:
        score = run_cross_target(run_config, dataset, source, dest, annotations, seed=seed, verbose=verbose)
        rows.append({"pair": pair_label(source, dest), "source": source, "dest": dest, "f_avg": score})
        if verbose:
            print(f"{pair_label(source, dest):<8} F_avg {score * 100:6.2f}")
    return pd.DataFrame(rows, columns=["pair", "source", "dest", "f_avg"])


@dataclass
class AblationResult:
    """F_avg полной модели и таблица из четырёх вариантов с разницей ΔF_avg."""

    base_f_avg: float
    base_report: MetricsReport
    table: pd.DataFrame


def run_ablation(  # noqa: PLR0913
    run_config: RunConfig,
    dataset: Dataset,
    *,
    provider: Provider,
    cache: AnnotationCache,
    targets: Sequence[str] | None = None,
    seed: int | None = None,
    joint: bool = False,
    verbose: bool = False,
) -> AblationResult:
    """
    Абляция: полная модель и четыре варианта без одного слоя, общие зерно и данные.

    Аннотации для каждого варианта запрашиваются только нужных видов.
    """
    base_flags = AblationFlags()
    selected = _select_targets(dataset, targets)
    instances = [i for i in dataset.instances if i.target.name in selected]

    def run(flags: AblationFlags) -> tuple[InTargetResult, AnnotationStats]:
        annotations, stats = ensure_annotations(instances, run_config, flags, provider=provider, cache=cache)
        result = run_in_target(
            run_config, dataset, annotations, targets=selected, flags=flags, seed=seed, joint=joint, verbose=verbose
        )
        return result, stats

    base, _ = run(base_flags)
    base_f = base.report.macro_f_avg
    rows = []
    for variant, stream in ABLATION_VARIANTS.items():
        flags = base_flags.without(stream)
        result, stats = run(flags)
        row = {
            "variant": variant,
            "disabled": stream,
            "kinds": ",".join(k.value for k in flags.required_kinds),
            "provider_calls": stats.calls,
            "f_avg": result.report.macro_f_avg,
            "delta": result.report.macro_f_avg - base_f,
        }
        row.update({f"f_avg:{name}": s.f_avg for name, s in result.report.per_target.items()})
        rows.append(row)
        if verbose:
            print(f"{variant:<16} F_avg {row['f_avg'] * 100:6.2f} (Δ {row['delta'] * 100:+.2f})")
    return AblationResult(base_f_avg=base_f, base_report=base.report, table=pd.DataFrame(rows))


def run_seeds(fn: Callable[[int], Mapping[str, float] | float], seeds: Iterable[int]) -> pd.DataFrame:
    """
    Запускает fn для каждого зерна и сводит результаты в mean ± std.

    Returns:
        Таблица с индексом-метрикой и колонками mean, std (по генеральной
        совокупности, у одного зерна std = 0) и значениями по зёрнам.

    """
    seeds = list(seeds)
    values = []
    for seed in seeds:
        value = fn(seed)
        values.append({"f_avg": value} if isinstance(value, int | float) else dict(value))
    per_seed = pd.DataFrame(values, index=[f"seed={s}" for s in seeds])
    summary = pd.DataFrame({"mean": per_seed.mean(), "std": per_seed.std(ddof=0)})
    return pd.concat([summary, per_seed.T], axis=1)


def save_config(run_config: RunConfig, run_dir: Path | str, **extra: Any) -> Path:  # noqa: ANN401
    """config.json без секретов провайдера."""
    payload = run_config.to_dict()
    payload["provider"].pop("api_key", None)
    payload.update(extra)
    path = Path(run_dir) / "config.json"
    path.write_text(json.dumps(payload, ensure_ascii=False, indent=2, default=str), encoding="utf-8")
    return path


def save_history(history: pd.DataFrame, run_dir: Path | str) -> Path:
    path = Path(run_dir) / "history.csv"
    history.to_csv(path, index=False)
    return path


def save_report(report: MetricsReport, run_dir: Path | str) -> Path:
    """report.json плюс CSV-таблицы по целям и корзинам."""
    path = write_report_json(report, Path(run_dir) / "report.json")
    write_report_csv(report, run_dir)
    return path


def layer_parameter_prefixes() -> dict[str, str]:
    """Префиксы имён параметров каждого потока знаний."""
    return {stream: f"{stream}." for stream in STREAMS}


def training_accuracy(model: StanceNetwork, instances: Sequence[StanceInstance],
                      annotations: Mapping[str, RelationAnnotations]) -> float:
    prepared = _prepare_all(instances, annotations, model)
    if not prepared:
        return 0.0
    preds = np.array([s.index for s in _predict_labels(model, prepared)])
    golds = np.array([p.gold for p in prepared])
    return float((preds == golds).mean())
