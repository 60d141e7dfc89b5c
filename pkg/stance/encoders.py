"""
Слой текстового представления.

Склеивает цепочку в последовательность [CLS] x_1 w_t [SEP] … x_n w_t [SEP],
кодирует её энкодером и усредняет векторы токенов каждого предложения.
"""

import hashlib
import re
from collections.abc import Sequence
from dataclasses import dataclass

import torch
from torch import nn

from stance.data_processor import Target, Utterance
from stance.errors import EncoderFailure, SequenceOverflowError

CLS_TOKEN = "[CLS]"
SEP_TOKEN = "[SEP]"
HASH_BUCKETS = 4096


@dataclass(frozen=True)
class TokenSequence:
    """Токены входа, диапазоны предложений [start, end) и сохранённые позиции цепочки."""

    tokens: tuple[str, ...]
    spans: tuple[tuple[int, int], ...]
    kept: tuple[int, ...]


class SentenceEncoder(nn.Module):
    """Контракт энкодера: токенизация, перевод в id и векторы токенов L × D."""

    dim: int
    window: int
    identity: str
    cls_token: str = CLS_TOKEN
    sep_token: str = SEP_TOKEN

    def tokenize(self, text: str) -> list[str]:
        raise NotImplementedError

    def convert(self, tokens: Sequence[str]) -> torch.Tensor:
        raise NotImplementedError


_TOKEN_RE = re.compile(r"\w+|[^\w\s]")


class HashEmbeddingEncoder(SentenceEncoder):
    """
    Детерминированный заглушечный энкодер: токен → корзина по SHA-256 → эмбеддинг.

    Не зависит от словаря и сети; веса инициализируются своим генератором,
    так что одинаковое зерно даёт одинаковые векторы.
    """

    def __init__(self, dim: int, *, buckets: int = HASH_BUCKETS, window: int = 512, seed: int = 0) -> None:
        super().__init__()
        self.dim = dim
        self.window = window
        self.buckets = buckets
        self.identity = f"hash:{buckets}"
        self.embedding = nn.Embedding(buckets, dim)
        generator = torch.Generator().manual_seed(seed)
        with torch.no_grad():
            self.embedding.weight.copy_(torch.randn(buckets, dim, generator=generator))

    def tokenize(self, text: str) -> list[str]:
        return _TOKEN_RE.findall(text.lower())

    def token_id(self, token: str) -> int:
        # 0 и 1 зарезервированы под [CLS] и [SEP]
        if token == self.cls_token:
            return 0
        if token == self.sep_token:
            return 1
        digest = hashlib.sha256(token.encode("utf-8")).digest()
        return 2 + int.from_bytes(digest[:8], "big") % (self.buckets - 2)

    def convert(self, tokens: Sequence[str]) -> torch.Tensor:
        return torch.tensor([self.token_id(t) for t in tokens], dtype=torch.long)

    def forward(self, ids: torch.Tensor) -> torch.Tensor:
        return self.embedding(ids)


class TransformerEncoder(SentenceEncoder):
    """
    Адаптер предобученного двунаправленного трансформера (по умолчанию bert-base-uncased).

    В режиме frozen градиенты в backbone не идут.
    """

    def __init__(self, name: str = "bert-base-uncased", *, frozen: bool = False, window: int = 512) -> None:
        super().__init__()
        # Импорт здесь: transformers нужен только этому адаптеру
        from transformers import AutoModel, AutoTokenizer  # noqa: PLC0415

        self.tokenizer = AutoTokenizer.from_pretrained(name)
        self.backbone = AutoModel.from_pretrained(name)
        self.dim = int(self.backbone.config.hidden_size)
        self.window = min(window, int(getattr(self.tokenizer, "model_max_length", window)))
        self.identity = f"transformers:{name}"
        self.cls_token = self.tokenizer.cls_token or CLS_TOKEN
        self.sep_token = self.tokenizer.sep_token or SEP_TOKEN
        self.frozen = frozen
        if frozen:
            for param in self.backbone.parameters():
                param.requires_grad_(requires_grad=False)

    def tokenize(self, text: str) -> list[str]:
        return self.tokenizer.tokenize(text)

    def convert(self, tokens: Sequence[str]) -> torch.Tensor:
        return torch.tensor(self.tokenizer.convert_tokens_to_ids(list(tokens)), dtype=torch.long)

    def forward(self, ids: torch.Tensor) -> torch.Tensor:
        try:
            if self.frozen:
                with torch.no_grad():
                    return self.backbone(input_ids=ids.unsqueeze(0)).last_hidden_state[0]
            return self.backbone(input_ids=ids.unsqueeze(0)).last_hidden_state[0]
        except (RuntimeError, ValueError, IndexError) as e:
            msg = f"Энкодер {self.identity} не обработал последовательность длиной {len(ids)}: {e}"
            raise EncoderFailure(msg) from e


def build_input_sequence(chain: Sequence[Utterance], target: Target, encoder: SentenceEncoder) -> TokenSequence:
    """
    Собирает [CLS] x_1 w_t [SEP] x_2 w_t [SEP] … x_n w_t [SEP].

    Если последовательность не помещается в окно энкодера, выбрасываются
    целые самые ранние реплики, но пост и целевая реплика остаются; затем,
    если нужно, выбрасывается и пост.

    Raises:
        ValueError: Пустая цепочка или пустой текст цели.
        SequenceOverflowError: Целевая реплика с целью не помещается даже одна.

    """
    if not chain:
        msg = "Цепочка не может быть пустой"
        raise ValueError(msg)
    if not target.target_text.strip():
        msg = "Текст цели не может быть пустым"
        raise ValueError(msg)
    target_tokens = encoder.tokenize(target.target_text)

    segments = [encoder.tokenize(u.text) + target_tokens for u in chain]
    kept = list(range(len(chain)))

    def length(positions: list[int]) -> int:
        return 1 + sum(len(segments[p]) + 1 for p in positions)

    while length(kept) > encoder.window and len(kept) > 2:  # noqa: PLR2004
        del kept[1]
    if length(kept) > encoder.window and len(kept) == 2:  # noqa: PLR2004
        del kept[0]
    if length(kept) > encoder.window:
        msg = f"Целевая реплика с целью занимает {length(kept)} токенов при окне {encoder.window}"
        raise SequenceOverflowError(msg)

    tokens = [encoder.cls_token]
    spans = []
    for p in kept:
        start = len(tokens)
        tokens.extend(segments[p])
        spans.append((start, len(tokens)))
        tokens.append(encoder.sep_token)
    return TokenSequence(tokens=tuple(tokens), spans=tuple(spans), kept=tuple(kept))


def mean_pool(token_embeddings: torch.Tensor, spans: Sequence[tuple[int, int]]) -> torch.Tensor:
    """Строка i: среднее векторов токенов предложения i; служебные токены не входят."""
    rows = []
    for start, end in spans:
        if end > start:
            rows.append(token_embeddings[start:end].mean(dim=0))
        else:
            rows.append(token_embeddings.new_zeros(token_embeddings.shape[-1]))
    return torch.stack(rows)


def encode(sequence: TokenSequence, encoder: SentenceEncoder) -> torch.Tensor:
    """Матрица предложений H размера n × D."""
    ids = encoder.convert(sequence.tokens)
    return mean_pool(encoder(ids), sequence.spans)


def encoder_identity(kind: str, name: str = "bert-base-uncased") -> str:
    """Идентичность энкодера без его создания: определяет токенизацию и словарь."""
    return f"transformers:{name}" if kind == "transformer" else f"hash:{HASH_BUCKETS}"


def build_encoder(kind: str, dim: int, *, name: str = "bert-base-uncased", frozen: bool = False,
                  window: int = 512, seed: int = 0) -> SentenceEncoder:
    """Создаёт энкодер по имени из конфигурации: hash или transformer."""
    if kind == "transformer":
        return TransformerEncoder(name, frozen=frozen, window=window)
    encoder = HashEmbeddingEncoder(dim, window=window, seed=seed)
    if frozen:
        encoder.embedding.weight.requires_grad_(requires_grad=False)
    return encoder
