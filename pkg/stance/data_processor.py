"""
Модуль загрузки и предобработки разговорных тредов.

Проверяет JSONL-записи тредов, строит дерево реплик, нарезает его на
примеры позиции (цепочка от поста до реплики), делит примеры на
train/dev/test и раскладывает их по корзинам глубины.
"""

import json
from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property
from pathlib import Path
from typing import Any

import numpy as np
import pandas as pd
from colorama import Fore, Style

from stance.errors import DepthOutOfRangeError, SchemaError, StructureError, TooFewInstancesError

DEFAULT_RATIOS = (0.65, 0.15, 0.20)
SPLIT_NAMES = ("train", "dev", "test")
MIN_INSTANCES_PER_TARGET = 3


class Stance(Enum):
    """Метка позиции. Порядок членов задаёт порядок классов модели."""

    AGAINST = "against"
    FAVOR = "favor"
    NONE = "none"

    @property
    def index(self) -> int:
        return STANCE_ORDER.index(self)


STANCE_ORDER = (Stance.AGAINST, Stance.FAVOR, Stance.NONE)


class TargetKind(Enum):
    SPECIFIC = "specific"
    POST_AS_TARGET = "post_as_target"


# Корзины глубины: (метка, минимум, максимум включительно)
DEPTH_BUCKETS: dict[TargetKind, tuple[tuple[str, int, int], ...]] = {
    TargetKind.SPECIFIC: (("1-2", 1, 2), ("3-5", 3, 5), ("6-8", 6, 8)),
    # Для Post-T глубина 1: сам пост, он и есть цель
    TargetKind.POST_AS_TARGET: (("2", 2, 2), ("3-4", 3, 4), ("5-6", 5, 6)),
}


@dataclass(frozen=True)
class Target:
    """Цель позиции: конкретная сущность или текст поста (Post-T)."""

    name: str
    kind: TargetKind
    target_text: str

    def __post_init__(self) -> None:
        if self.kind is TargetKind.SPECIFIC and not self.name.strip():
            msg = "У конкретной цели должно быть непустое имя"
            raise SchemaError(msg)
        if self.kind is TargetKind.POST_AS_TARGET and not self.target_text.strip():
            msg = "У цели Post-T должен быть непустой текст поста"
            raise SchemaError(msg)


@dataclass(frozen=True)
class Utterance:
    id: str
    parent_id: str | None
    author: str
    text: str
    depth: int
    stance: Stance | None = None
    relevant: bool = True


@dataclass(frozen=True)
class ConversationThread:
    """Проверенное дерево реплик: пост и комментарии к нему."""

    thread_id: str
    target: Target
    utterances: tuple[Utterance, ...]

    @cached_property
    def by_id(self) -> dict[str, Utterance]:
        return {u.id: u for u in self.utterances}

    @property
    def root(self) -> Utterance:
        return next(u for u in self.utterances if u.parent_id is None)

    def chain_to(self, utterance_id: str) -> tuple[Utterance, ...]:
        """Единственный путь от корня до реплики (ветка, без соседних комментариев)."""
        chain = []
        current: str | None = utterance_id
        while current is not None:
            node = self.by_id[current]
            chain.append(node)
            current = node.parent_id
        return tuple(reversed(chain))


@dataclass(frozen=True)
class StanceInstance:
    """Пример: реплика x_n с историей [x_1, …, x_{n-1}], целью и эталонной меткой."""

    id: str
    thread_id: str
    chain: tuple[Utterance, ...]
    target: Target
    gold: Stance

    def __post_init__(self) -> None:
        if not self.chain:
            msg = f"Пустая цепочка в примере {self.id}"
            raise StructureError(msg)
        for parent, child in zip(self.chain, self.chain[1:], strict=False):
            if child.parent_id != parent.id:
                msg = f"Цепочка примера {self.id} разорвана между {parent.id} и {child.id}"
                raise StructureError(msg)
        if self.chain[-1].stance is not self.gold:
            msg = f"Метка примера {self.id} не совпадает с позицией последней реплики"
            raise StructureError(msg)

    @property
    def depth(self) -> int:
        return len(self.chain)

    @property
    def texts(self) -> tuple[str, ...]:
        return tuple(u.text for u in self.chain)


@dataclass
class SkipReport:
    """Сколько реплик не стали примерами и почему."""

    unlabeled: int = 0
    irrelevant: int = 0

    @property
    def total(self) -> int:
        return self.unlabeled + self.irrelevant

    def to_dict(self) -> dict[str, int]:
        return {"unlabeled": self.unlabeled, "irrelevant": self.irrelevant}


@dataclass(frozen=True)
class DatasetSplit:
    """Непересекающиеся множества id примеров для train/dev/test."""

    train: frozenset[str]
    dev: frozenset[str]
    test: frozenset[str]
    seed: int
    ratios: tuple[float, float, float] = DEFAULT_RATIOS

    def part(self, name: str) -> frozenset[str]:
        if name not in SPLIT_NAMES:
            msg = f"Неизвестная часть разбиения: {name}"
            raise KeyError(msg)
        return getattr(self, name)

    def to_dict(self) -> dict[str, Any]:
        return {
            "seed": self.seed,
            "ratios": list(self.ratios),
            "splits": {name: sorted(self.part(name)) for name in SPLIT_NAMES},
        }


def normalize_text(text: str) -> str:
    """Обрезает края и схлопывает пробельные серии; регистр и пунктуация сохраняются."""
    return " ".join(text.split())


def _require(record: dict, key: str, kinds: type | tuple[type, ...], where: str) -> Any:  # noqa: ANN401
    if key not in record:
        msg = f"{where}: отсутствует поле '{key}'"
        raise SchemaError(msg)
    value = record[key]
    if not isinstance(value, kinds):
        msg = f"{where}: поле '{key}' имеет неверный тип {type(value).__name__}"
        raise SchemaError(msg)
    return value


def _parse_stance(value: Any, where: str) -> Stance | None:  # noqa: ANN401
    if value is None:
        return None
    if not isinstance(value, str):
        msg = f"{where}: поле 'stance' должно быть строкой или null"
        raise SchemaError(msg)
    try:
        return Stance(value.strip().lower())
    except ValueError:
        msg = f"{where}: неизвестная позиция '{value}'"
        raise SchemaError(msg) from None


def parse_thread(record: Any, *, path: Path | str | None = None, line: int | None = None) -> ConversationThread:  # noqa: ANN401, C901
    """
    Проверяет JSONL-запись треда и строит дерево с вычисленными глубинами.

    Args:
        record: Разобранный JSON-объект треда.
        path: Файл-источник (для диагностики).
        line: Номер строки в файле (для диагностики).

    Returns:
        Проверенный ConversationThread.

    Raises:
        SchemaError: Нет обязательного поля, неверный тип или пустой текст.
        StructureError: Цикл, ссылка на несуществующего родителя, не один корень, повтор id.

    """
    try:
        if not isinstance(record, dict):
            msg = "запись треда должна быть JSON-объектом"
            raise SchemaError(msg)

        thread_id = _require(record, "thread_id", str, "тред")
        target_raw = _require(record, "target", dict, f"тред {thread_id}")
        target_name = _require(target_raw, "name", str, f"тред {thread_id}: target")
        kind_raw = _require(target_raw, "kind", str, f"тред {thread_id}: target")
        try:
            kind = TargetKind(kind_raw.strip().lower())
        except ValueError:
            msg = f"тред {thread_id}: неизвестный вид цели '{kind_raw}'"
            raise SchemaError(msg) from None

        raw_utterances = _require(record, "utterances", list, f"тред {thread_id}")
        if not raw_utterances:
            msg = f"тред {thread_id}: пустой список реплик"
            raise SchemaError(msg)

        rows = []
        for position, raw in enumerate(raw_utterances):
            where = f"тред {thread_id}, реплика #{position}"
            if not isinstance(raw, dict):
                msg = f"{where}: реплика должна быть JSON-объектом"
                raise SchemaError(msg)
            text = normalize_text(_require(raw, "text", str, where))
            if not text:
                msg = f"{where}: пустой текст"
                raise SchemaError(msg)
            rows.append({
                "id": _require(raw, "id", str, where),
                "parent_id": _require(raw, "parent_id", (str, type(None)), where),
                "author": _require(raw, "author", str, where),
                "text": text,
                "stance": _parse_stance(raw.get("stance"), where),
                "relevant": bool(raw.get("relevant", True)),
            })

        depths = _compute_depths(thread_id, rows)
        utterances = tuple(Utterance(depth=depths[row["id"]], **row) for row in rows)
        root_text = next(u.text for u in utterances if u.parent_id is None)
        target = Target(
            name=target_name.strip() or ("Post-T" if kind is TargetKind.POST_AS_TARGET else ""),
            kind=kind,
            target_text=root_text if kind is TargetKind.POST_AS_TARGET else target_name.strip(),
        )
    except SchemaError as e:
        if path is not None and e.path is None:
            raise type(e)(str(e), path=path, line=line) from e
        raise

    return ConversationThread(thread_id=thread_id, target=target, utterances=utterances)


def _compute_depths(thread_id: str, rows: list[dict]) -> dict[str, int]:
    parents: dict[str, str | None] = {}
    for row in rows:
        if row["id"] in parents:
            msg = f"тред {thread_id}: повторяющийся id реплики '{row['id']}'"
            raise StructureError(msg)
        parents[row["id"]] = row["parent_id"]

    roots = [uid for uid, parent in parents.items() if parent is None]
    if len(roots) != 1:
        msg = f"тред {thread_id}: ожидался ровно один корень, найдено {len(roots)}"
        raise StructureError(msg)

    for uid, parent in parents.items():
        if parent is not None and parent not in parents:
            msg = f"тред {thread_id}: реплика '{uid}' ссылается на несуществующего родителя '{parent}'"
            raise StructureError(msg)

    depths: dict[str, int] = {}
    for uid in parents:
        # Поднимаемся к корню или к уже известной глубине
        path = []
        current: str | None = uid
        while current is not None and current not in depths:
            if current in path:
                msg = f"тред {thread_id}: цикл через реплику '{current}'"
                raise StructureError(msg)
            path.append(current)
            current = parents[current]
        base = depths[current] if current is not None else 0
        for offset, node in enumerate(reversed(path), 1):
            depths[node] = base + offset
    return depths


def serialize_thread(thread: ConversationThread) -> dict[str, Any]:
    """Обратное к parse_thread: JSON-совместимая запись (глубина не сохраняется)."""
    return {
        "thread_id": thread.thread_id,
        "target": {"name": thread.target.name, "kind": thread.target.kind.value},
        "utterances": [
            {
                "id": u.id,
                "parent_id": u.parent_id,
                "author": u.author,
                "text": u.text,
                "stance": u.stance.value if u.stance is not None else None,
                "relevant": u.relevant,
            }
            for u in thread.utterances
        ],
    }


def _iter_files(paths: Iterable[Path | str]) -> list[Path]:
    files: list[Path] = []
    for raw in paths:
        path = Path(raw)
        if path.is_dir():
            files.extend(sorted(path.glob("*.jsonl")))
        elif path.exists():
            files.append(path)
        else:
            msg = f"Путь {path} не существует"
            raise SchemaError(msg)
    return files


def load_threads(paths: Iterable[Path | str]) -> list[ConversationThread]:
    """
    Загружает треды из JSONL-файлов и папок с ними.

    Args:
        paths: Файлы или директории (берутся все *.jsonl, по алфавиту).

    Returns:
        Список тредов в порядке файлов и строк.

    Raises:
        SchemaError: Некорректная строка (с указанием файла и номера строки).
        StructureError: Тред не является деревом или его id повторяется.

    """
    threads: list[ConversationThread] = []
    seen: dict[str, tuple[Path, int]] = {}
    for file in _iter_files(paths):
        with file.open(encoding="utf-8") as f:
            for line_no, raw_line in enumerate(f, 1):
                if not raw_line.strip():
                    continue
                try:
                    record = json.loads(raw_line)
                except json.JSONDecodeError as e:
                    msg = f"некорректный JSON: {e.msg}"
                    raise SchemaError(msg, path=file, line=line_no) from e

                thread = parse_thread(record, path=file, line=line_no)
                if thread.thread_id in seen:
                    first_file, first_line = seen[thread.thread_id]
                    msg = f"тред '{thread.thread_id}' уже встречался в {first_file}:{first_line}"
                    raise StructureError(msg, path=file, line=line_no)
                seen[thread.thread_id] = (file, line_no)
                threads.append(thread)
    return threads


def write_threads(threads: Iterable[ConversationThread], path: Path | str) -> Path:
    """Записывает треды в JSONL-файл, по одному на строку."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as f:
        for thread in threads:
            f.write(json.dumps(serialize_thread(thread), ensure_ascii=False) + "\n")
    return path


def make_instances(thread: ConversationThread, report: SkipReport | None = None) -> list[StanceInstance]:
    """
    Нарезает тред на примеры: по одному на каждую размеченную релевантную реплику.

    Нерелевантные и неразмеченные реплики не дают примеров, но остаются в
    историях своих потомков.

    Args:
        thread: Проверенный тред.
        report: Счётчик пропусков, дополняется на месте.

    Returns:
        Примеры в порядке реплик треда.

    Raises:
        StructureError: У цели Post-T текст не совпадает с текстом поста.

    """
    if thread.target.kind is TargetKind.POST_AS_TARGET and thread.target.target_text != thread.root.text:
        msg = f"тред {thread.thread_id}: текст цели Post-T не совпадает с текстом поста"
        raise StructureError(msg)
    instances = []
    for utterance in thread.utterances:
        if utterance.stance is None:
            if report is not None:
                report.unlabeled += 1
            continue
        if not utterance.relevant:
            if report is not None:
                report.irrelevant += 1
            continue
        instances.append(
            StanceInstance(
                id=f"{thread.thread_id}/{utterance.id}",
                thread_id=thread.thread_id,
                chain=thread.chain_to(utterance.id),
                target=thread.target,
                gold=utterance.stance,
            )
        )
    return instances


def instances_frame(instances: Sequence[StanceInstance]) -> pd.DataFrame:
    """Сводная таблица примеров: id, тред, цель, вид цели, глубина, метка."""
    return pd.DataFrame(
        {
            "id": [i.id for i in instances],
            "thread_id": [i.thread_id for i in instances],
            "target": [i.target.name for i in instances],
            "kind": [i.target.kind.value for i in instances],
            "depth": [i.depth for i in instances],
            "gold": [i.gold.value for i in instances],
        },
        columns=["id", "thread_id", "target", "kind", "depth", "gold"],
    )


def _round_half_up(value: float) -> int:
    return int(np.floor(value + 0.5))


def split_dataset(
    instances: Sequence[StanceInstance], seed: int, ratios: tuple[float, float, float] = DEFAULT_RATIOS
) -> DatasetSplit:
    """
    Делит примеры на train/dev/test с расслоением по целям.

    Порядок входа не влияет на результат: внутри цели id сортируются перед
    перемешиванием генератором с заданным зерном.

    Raises:
        TooFewInstancesError: У какой-то цели меньше трёх примеров.

    """
    df = instances_frame(instances)
    if df["id"].duplicated().any():
        msg = "Повторяющиеся id примеров: " + ", ".join(df.loc[df["id"].duplicated(), "id"].head(5))
        raise StructureError(msg)
    if (df["target"].str.strip() == "").any():
        msg = "У каждого примера должно быть имя цели"
        raise SchemaError(msg)

    rng = np.random.default_rng(seed)
    parts: dict[str, list[str]] = {name: [] for name in SPLIT_NAMES}
    for target_name, group in df.groupby("target", sort=True):
        ids = sorted(group["id"])
        if len(ids) < MIN_INSTANCES_PER_TARGET:
            msg = f"У цели '{target_name}' всего {len(ids)} примеров, нужно минимум {MIN_INSTANCES_PER_TARGET}"
            raise TooFewInstancesError(msg)
        shuffled = [ids[k] for k in rng.permutation(len(ids))]
        n_train = _round_half_up(ratios[0] * len(ids))
        n_dev = _round_half_up(ratios[1] * len(ids))
        parts["train"].extend(shuffled[:n_train])
        parts["dev"].extend(shuffled[n_train : n_train + n_dev])
        parts["test"].extend(shuffled[n_train + n_dev :])

    return DatasetSplit(
        train=frozenset(parts["train"]),
        dev=frozenset(parts["dev"]),
        test=frozenset(parts["test"]),
        seed=seed,
        ratios=tuple(ratios),  # type: ignore[arg-type]
    )


def depth_bucket(instance: StanceInstance | int, target_kind: TargetKind | None = None) -> str:
    """
    Возвращает метку корзины глубины.

    Args:
        instance: Пример или сама глубина.
        target_kind: Вид цели; для примера берётся из него, если не указан.

    Raises:
        DepthOutOfRangeError: Глубина вне таблицы корзин для данного вида цели.

    """
    if isinstance(instance, StanceInstance):
        depth = instance.depth
        kind = target_kind or instance.target.kind
    else:
        depth = instance
        kind = target_kind or TargetKind.SPECIFIC
    if depth < 1:
        msg = f"Глубина должна быть >= 1, получено {depth}"
        raise DepthOutOfRangeError(msg)
    for label, low, high in DEPTH_BUCKETS[kind]:
        if low <= depth <= high:
            return label
    msg = f"Глубина {depth} вне таблицы корзин для цели вида {kind.value}"
    raise DepthOutOfRangeError(msg)


def subset(instances: Iterable[StanceInstance], ids: Iterable[str]) -> list[StanceInstance]:
    """Примеры с указанными id, в исходном порядке."""
    wanted = set(ids)
    return [i for i in instances if i.id in wanted]


def by_target(instances: Iterable[StanceInstance], name: str) -> list[StanceInstance]:
    return [i for i in instances if i.target.name == name]


def write_manifest(
    split: DatasetSplit,
    path: Path | str,
    data_paths: Sequence[Path | str] = (),
    skip_report: SkipReport | None = None,
) -> Path:
    """Сохраняет манифест разбиения: зерно, доли, источники данных и списки id."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = split.to_dict()
    payload["data"] = [str(p) for p in data_paths]
    payload["skipped"] = skip_report.to_dict() if skip_report is not None else {}
    path.write_text(json.dumps(payload, ensure_ascii=False, indent=2), encoding="utf-8")
    return path


def read_manifest(path: Path | str) -> tuple[DatasetSplit, list[str]]:
    """Читает манифест; возвращает разбиение и пути к исходным данным."""
    try:
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
        splits = payload["splits"]
        split = DatasetSplit(
            train=frozenset(splits["train"]),
            dev=frozenset(splits["dev"]),
            test=frozenset(splits["test"]),
            seed=int(payload["seed"]),
            ratios=tuple(payload["ratios"]),
        )
    except (json.JSONDecodeError, KeyError, TypeError) as e:
        msg = f"Некорректный манифест {path}: {e}"
        raise SchemaError(msg) from e
    return split, list(payload.get("data", []))


@dataclass
class Dataset:
    """Загруженные примеры вместе с разбиением и отчётом о пропусках."""

    instances: list[StanceInstance]
    split: DatasetSplit
    skipped: SkipReport = field(default_factory=SkipReport)
    sources: list[str] = field(default_factory=list)

    def part(self, name: str) -> list[StanceInstance]:
        return subset(self.instances, self.split.part(name))

    @property
    def targets(self) -> list[str]:
        return sorted({i.target.name for i in self.instances})


def load_dataset(
    paths: Sequence[Path | str], seed: int, ratios: tuple[float, float, float] = DEFAULT_RATIOS
) -> Dataset:
    """
    Загружает треды и строит разбиение; манифест (*.json) подменяет разбиение записанным.

    Raises:
        SchemaError: Нет ни одного треда.

    """
    manifest_split = None
    sources: list[str] = [str(p) for p in paths]
    if len(paths) == 1 and str(paths[0]).endswith(".json"):
        manifest_split, sources = read_manifest(paths[0])

    threads = load_threads(sources)
    if not threads:
        msg = "no threads found: не найдено ни одного треда в " + ", ".join(sources)
        raise SchemaError(msg)

    report = SkipReport()
    instances = [inst for thread in threads for inst in make_instances(thread, report)]
    if report.total:
        print(f"{Fore.YELLOW}Пропущено реплик: {report.total} (без метки: {report.unlabeled}, "
              f"нерелевантных: {report.irrelevant}){Style.RESET_ALL}")

    split = manifest_split or split_dataset(instances, seed, ratios)
    return Dataset(instances=instances, split=split, skipped=report, sources=sources)
