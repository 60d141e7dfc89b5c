"""
Модуль получения знаний от языковой модели.

Строит zero-shot промпты для каждой соседней пары реплик, опрашивает
чат-провайдера, разбирает ответы в логические связи и коммуникативные акты
и кэширует результаты в append-only JSONL-файле.
"""

import json
import re
import threading
import time
from collections.abc import Iterable, Sequence
from concurrent.futures import ThreadPoolExecutor, wait
from dataclasses import dataclass, field
from datetime import datetime, timezone
from enum import Enum
from pathlib import Path
from typing import Any, Protocol

import requests
from colorama import Fore, Style

from stance.config import ProviderConfig
from stance.data_processor import StanceInstance, Utterance
from stance.errors import ProviderError
from stance.utils import sha256_json


class RelationKind(Enum):
    LOGICAL = "logical"
    ACT = "act"


class LogicalRelation(Enum):
    CONTRASTIVE = "contrastive"
    SUCCESSION = "succession"
    CAUSAL = "causal"
    SUMMARY = "summary"
    # Только как запасной вариант при неразборчивом ответе
    UNKNOWN = "unknown"


class ConversationAct(Enum):
    SUMMARIZE = "summarize"
    SUGGESTION = "suggestion"
    DISAGREEMENT = "disagreement"
    AGREEMENT = "agreement"
    REFUSAL = "refusal"
    QUESTION = "question"
    CLARIFICATION = "clarification"
    OTHER = "other"


LOGICAL_LABELS = (
    LogicalRelation.CONTRASTIVE,
    LogicalRelation.SUCCESSION,
    LogicalRelation.CAUSAL,
    LogicalRelation.SUMMARY,
)
ACT_LABELS = tuple(ConversationAct)

LABELS: dict[RelationKind, tuple[Enum, ...]] = {
    RelationKind.LOGICAL: LOGICAL_LABELS,
    RelationKind.ACT: ACT_LABELS,
}
FALLBACK: dict[RelationKind, Enum] = {
    RelationKind.LOGICAL: LogicalRelation.UNKNOWN,
    RelationKind.ACT: ConversationAct.OTHER,
}
ENUMS: dict[RelationKind, type[Enum]] = {
    RelationKind.LOGICAL: LogicalRelation,
    RelationKind.ACT: ConversationAct,
}

PROMPT_HEADER = (
    'The following are conversation threads, where "Post" content is considered a post on social media. '
    "Each comment is a reply to the preceding comment, and all comments are responses to the original post."
)
PROMPT_QUESTION = (
    "Please analyze the relations between each post and comment, as well as between each comment. "
    "Determine the {relation} between {focal} and {previous}, selecting from [{labels}]."
)
RELATION_NAMES = {RelationKind.LOGICAL: "logical relation", RelationKind.ACT: "conversation act"}
RETRY_INSTRUCTION = "Answer with exactly one label."


@dataclass(frozen=True)
class PromptText:
    """Упорядоченные сообщения чата (только роль user)."""

    messages: tuple[tuple[str, str], ...]

    @property
    def text(self) -> str:
        return "\n".join(content for _, content in self.messages)

    def with_instruction(self, instruction: str) -> "PromptText":
        return PromptText(messages=(*self.messages, ("user", instruction)))

    def to_payload(self) -> list[dict[str, str]]:
        return [{"role": role, "content": content} for role, content in self.messages]


@dataclass(frozen=True)
class PairAnnotation:
    """Связь и акт реплики x_i относительно x_{i-1}; незапрошенный вид: None."""

    logical: LogicalRelation | None = None
    act: ConversationAct | None = None

    def get(self, kind: RelationKind) -> Enum | None:
        return self.logical if kind is RelationKind.LOGICAL else self.act


@dataclass(frozen=True)
class RelationAnnotations:
    """Аннотации цепочки: ровно n-1 пар для i = 2..n."""

    chain_key: str
    pairs: tuple[PairAnnotation, ...]
    provider_id: str

    def to_dict(self) -> dict[str, Any]:
        return {
            "chain_key": self.chain_key,
            "provider_id": self.provider_id,
            "pairs": [
                {
                    "logical": p.logical.value if p.logical else None,
                    "act": p.act.value if p.act else None,
                }
                for p in self.pairs
            ],
        }

    @classmethod
    def from_dict(cls, payload: dict[str, Any]) -> "RelationAnnotations":
        pairs = tuple(
            PairAnnotation(
                logical=LogicalRelation(p["logical"]) if p.get("logical") else None,
                act=ConversationAct(p["act"]) if p.get("act") else None,
            )
            for p in payload["pairs"]
        )
        return cls(chain_key=payload["chain_key"], pairs=pairs, provider_id=payload["provider_id"])


def chain_key(chain: Sequence[Utterance]) -> str:
    """Ключ содержимого цепочки: SHA-256 списка текстов."""
    return sha256_json([u.text for u in chain])


def cache_key(rendered: str, i: int, kind: RelationKind, model: str) -> str:
    """Ключ кэша: смена модели инвалидирует записи."""
    return sha256_json([rendered, i, kind.value, model])


def _speaker(position: int) -> str:
    """Имя реплики по 1-индексной позиции в цепочке."""
    return "Post" if position == 1 else f"Comment {position - 1}"


def render_chain(chain: Sequence[Utterance]) -> str:
    """
    Рендерит ветку как «Post: …», затем «Comment 1: …» и т. д., по строке на реплику.

    Raises:
        ValueError: Пустая цепочка.

    """
    if not chain:
        msg = "Нельзя отрендерить пустую цепочку"
        raise ValueError(msg)
    return "\n".join(f"{_speaker(k)}: {u.text}" for k, u in enumerate(chain, 1))


def build_prompt(chain: Sequence[Utterance], i: int, kind: RelationKind) -> PromptText:
    """
    Строит промпт о связи реплики x_i с x_{i-1} (i = 2: сравнение с постом).

    В промпт попадает вся ветка, включая реплики после x_i: для всех i
    одной цепочки контекст общий.

    Args:
        chain: Вся ветка от поста до целевой реплики.
        i: 1-индексная позиция фокусной реплики, 2 <= i <= n.
        kind: Логическая связь или коммуникативный акт.

    Raises:
        IndexError: i вне диапазона.

    """
    if not 2 <= i <= len(chain):  # noqa: PLR2004
        msg = f"Позиция {i} вне диапазона 2..{len(chain)}"
        raise IndexError(msg)
    labels = ", ".join(label.value for label in LABELS[kind])
    question = PROMPT_QUESTION.format(
        relation=RELATION_NAMES[kind], focal=_speaker(i), previous=_speaker(i - 1), labels=labels
    )
    content = f"{PROMPT_HEADER}\n\n{render_chain(chain)}\n\n{question}"
    return PromptText(messages=(("user", content),))


def try_parse_relation(raw: str, kind: RelationKind) -> Enum | None:
    """Ищет каноническую метку в ответе; None, если ни одна не найдена."""
    lowered = raw.lower()
    best: tuple[int, int, Enum] | None = None
    for label in LABELS[kind]:
        start = lowered.find(label.value)
        if start < 0:
            continue
        # Длиннее: лучше; при равной длине: раньше
        candidate = (len(label.value), -start, label)
        if best is None or candidate[:2] > best[:2]:
            best = candidate
    return best[2] if best is not None else None


def parse_relation(raw: str, kind: RelationKind) -> Enum:
    """
    Разбирает ответ провайдера в метку нужного вида.

    Регистр не важен, выигрывает самая длинная найденная метка, при равенстве —
    самая ранняя. Если ничего не найдено: UNKNOWN для связей, OTHER для актов.
    """
    return try_parse_relation(raw, kind) or FALLBACK[kind]


class Provider(Protocol):
    provider_id: str

    def complete(self, prompt: PromptText) -> str: ...


class ChatProvider:
    """
    Провайдер поверх HTTP JSON чат-API (совместимого с /chat/completions).

    Базовый URL, модель и ключ берутся из ProviderConfig (переменные
    окружения KAM_ENDPOINT, KAM_MODEL, KAM_API_KEY переопределяют файл).
    """

    def __init__(self, provider_config: ProviderConfig, *, backoff: float = 0.5) -> None:
        self.config = provider_config
        self.provider_id = provider_config.model
        self.backoff = backoff

    def complete(self, prompt: PromptText) -> str:
        # Без адреса доступен только кэш
        if not self.config.endpoint:
            msg = "Провайдер не настроен: задайте KAM_ENDPOINT или [provider] endpoint, либо используйте --stub"
            raise ProviderError(msg)
        url = f"{self.config.endpoint.rstrip('/')}/chat/completions"
        headers = {"Content-Type": "application/json"}
        if self.config.api_key:
            headers["Authorization"] = f"Bearer {self.config.api_key}"
        payload = {
            "model": self.config.model,
            "messages": prompt.to_payload(),
            "temperature": self.config.temperature,
        }

        last_error: Exception | None = None
        for attempt in range(self.config.max_retries + 1):
            try:
                response = requests.post(url, json=payload, headers=headers, timeout=self.config.timeout)
                response.raise_for_status()
                return str(response.json()["choices"][0]["message"]["content"])
            except (requests.RequestException, KeyError, IndexError, TypeError, ValueError) as e:
                last_error = e
                if attempt < self.config.max_retries:
                    time.sleep(self.backoff * (attempt + 1))

        msg = f"Провайдер {self.provider_id} не ответил после {self.config.max_retries + 1} попыток: {last_error}"
        raise ProviderError(msg)


NEGATION_CUES = frozenset({
    "no", "not", "never", "wrong", "disagree", "nonsense", "don't", "isn't", "can't", "won't", "nope",
})
_FOCAL_RE = re.compile(r"Determine the (logical relation|conversation act) between (Post|Comment \d+) and")
_WORD_RE = re.compile(r"[a-z']+")


class StubProvider:
    """
    Детерминированный заглушечный провайдер для работы без сети.

    Если в фокусной реплике есть маркер отрицания: «contrastive»/«disagreement»,
    иначе: «succession»/«agreement». Считает число вызовов.
    """

    provider_id = "stub"

    def __init__(self) -> None:
        self.calls = 0
        self._lock = threading.Lock()

    def complete(self, prompt: PromptText) -> str:
        with self._lock:
            self.calls += 1
        text = prompt.text
        match = _FOCAL_RE.search(text)
        if match is None:
            return "other"
        relation, focal = match.groups()
        focal_text = ""
        for line in text.splitlines():
            if line.startswith(f"{focal}: "):
                focal_text = line[len(focal) + 2 :]
                break

        # Нормализуем типографские апострофы, чтобы «don’t» тоже считалось отрицанием
        words = set(_WORD_RE.findall(focal_text.lower().replace("’", "'")))
        negated = bool(words & NEGATION_CUES)
        if relation == RELATION_NAMES[RelationKind.LOGICAL]:
            return "contrastive" if negated else "succession"
        return "disagreement" if negated else "agreement"


class AnnotationCache:
    """
    Append-only JSONL-кэш ответов провайдера.

    Запись: {key, kind, raw_reply, parsed, timestamp, model}. Файл читается
    целиком при создании; запись идёт через один замок, так что одновременные
    запросы не перемешивают строки. path=None: кэш только в памяти.
    """

    def __init__(self, path: Path | str | None = None) -> None:
        self.path = Path(path) if path is not None else None
        self._records: dict[str, dict[str, Any]] = {}
        self._lock = threading.Lock()
        if self.path is not None and self.path.exists():
            with self.path.open(encoding="utf-8") as f:
                for line in f:
                    if not line.strip():
                        continue
                    try:
                        record = json.loads(line)
                    except json.JSONDecodeError:
                        # Хвост, оборванный при аварийном завершении
                        continue
                    self._records[record["key"]] = record

    def __len__(self) -> int:
        return len(self._records)

    def __contains__(self, key: str) -> bool:
        return key in self._records

    def get(self, key: str) -> dict[str, Any] | None:
        return self._records.get(key)

    def put(self, key: str, kind: RelationKind, raw_reply: str, parsed: Enum, model: str) -> None:
        record = {
            "key": key,
            "kind": kind.value,
            "raw_reply": raw_reply,
            "parsed": parsed.value,
            "timestamp": datetime.now(timezone.utc).isoformat(),
            "model": model,
        }
        with self._lock:
            self._records[key] = record
            if self.path is not None:
                self.path.parent.mkdir(parents=True, exist_ok=True)
                with self.path.open("a", encoding="utf-8") as f:
                    f.write(json.dumps(record, ensure_ascii=False) + "\n")


@dataclass
class AnnotationStats:
    calls: int = 0
    hits: int = 0
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False, compare=False)

    def add(self, *, calls: int = 0, hits: int = 0) -> None:
        with self._lock:
            self.calls += calls
            self.hits += hits

    @property
    def hit_rate(self) -> float:
        total = self.calls + self.hits
        return self.hits / total if total else 1.0


def _query(provider: Provider, prompt: PromptText, kind: RelationKind, stats: AnnotationStats) -> tuple[str, Enum]:
    raw = provider.complete(prompt)
    stats.add(calls=1)
    parsed = try_parse_relation(raw, kind)
    if parsed is None:
        # Одна повторная попытка с уточнением, затем запасная метка
        raw = provider.complete(prompt.with_instruction(RETRY_INSTRUCTION))
        stats.add(calls=1)
        parsed = parse_relation(raw, kind)
    return raw, parsed


def annotate_chain(
    chain: Sequence[Utterance],
    provider: Provider,
    cache: AnnotationCache,
    kinds: Iterable[RelationKind] = (RelationKind.LOGICAL, RelationKind.ACT),
    *,
    max_in_flight: int = 1,
    stats: AnnotationStats | None = None,
) -> RelationAnnotations:
    """
    Получает связи и акты для всех соседних пар цепочки.

    Попадание в кэш не вызывает провайдера. Запросы разных пар могут идти
    параллельно (не более max_in_flight), каждый успешный ответ сразу пишется
    в кэш, поэтому при ошибке провайдера накопленное сохраняется.

    Raises:
        ProviderError: Провайдер не ответил после всех повторов.

    """
    kinds = tuple(kinds)
    stats = stats if stats is not None else AnnotationStats()
    rendered = render_chain(chain)
    resolved: dict[tuple[int, RelationKind], Enum] = {}
    pending: list[tuple[int, RelationKind, str]] = []

    for i in range(2, len(chain) + 1):
        for kind in kinds:
            key = cache_key(rendered, i, kind, provider.provider_id)
            record = cache.get(key)
            if record is not None:
                resolved[i, kind] = ENUMS[kind](record["parsed"])
                stats.add(hits=1)
            else:
                pending.append((i, kind, key))

    def run(i: int, kind: RelationKind, key: str) -> None:
        raw, parsed = _query(provider, build_prompt(chain, i, kind), kind, stats)
        cache.put(key, kind, raw, parsed, provider.provider_id)
        resolved[i, kind] = parsed

    if pending:
        with ThreadPoolExecutor(max_workers=max_in_flight) as pool:
            futures = [pool.submit(run, *task) for task in pending]
            wait(futures)
        for future in futures:
            error = future.exception()
            if error is not None:
                raise error

    pairs = tuple(
        PairAnnotation(
            logical=resolved.get((i, RelationKind.LOGICAL)),  # type: ignore[arg-type]
            act=resolved.get((i, RelationKind.ACT)),  # type: ignore[arg-type]
        )
        for i in range(2, len(chain) + 1)
    )
    return RelationAnnotations(chain_key=chain_key(chain), pairs=pairs, provider_id=provider.provider_id)


def annotate_instances(
    instances: Iterable[StanceInstance],
    provider: Provider,
    cache: AnnotationCache,
    kinds: Iterable[RelationKind] = (RelationKind.LOGICAL, RelationKind.ACT),
    *,
    max_in_flight: int = 1,
    verbose: bool = False,
) -> tuple[dict[str, RelationAnnotations], AnnotationStats]:
    """
    Аннотирует цепочки всех примеров (одинаковые цепочки: один раз).

    Returns:
        Словарь chain_key → аннотации и статистика вызовов/попаданий.

    """
    kinds = tuple(kinds)
    stats = AnnotationStats()
    annotations: dict[str, RelationAnnotations] = {}
    chains = {chain_key(i.chain): i.chain for i in instances}
    for done, (key, chain) in enumerate(chains.items(), 1):
        annotations[key] = annotate_chain(chain, provider, cache, kinds, max_in_flight=max_in_flight, stats=stats)
        if verbose and (done % 50 == 0 or done == len(chains)):
            print(f"{Fore.CYAN}→ Аннотировано цепочек: {done}/{len(chains)} "
                  f"(вызовов: {stats.calls}, из кэша: {stats.hits}){Style.RESET_ALL}")
    return annotations, stats


def count_prompts(instances: Iterable[StanceInstance], kinds: Iterable[RelationKind]) -> int:
    """Сколько промптов потребует холодный прогон: Σ(n_i - 1) · |kinds| по различным цепочкам."""
    chains = {chain_key(i.chain): len(i.chain) for i in instances}
    return sum(n - 1 for n in chains.values()) * len(tuple(kinds))
