"""
Сеть интеграции знаний с многошаговым вниманием.

Четыре слоя поверх матрицы предложений H: локальный (две свёртки с маской),
контекстный (двухслойная GCN по графу ответов), логических связей и
коммуникативных актов (двухслойные RGCN). Их выходы сливаются многошаговым
вниманием, а полносвязный слой выдаёт распределение по трём позициям.
"""

import math
from collections.abc import Callable, Mapping
from dataclasses import dataclass
from pathlib import Path
from typing import Any, NamedTuple

import torch
import torch.nn.functional as F  # noqa: N812
from torch import nn

from stance.config import ModelConfig, config_hash
from stance.data_processor import STANCE_ORDER, Stance, StanceInstance
from stance.encoders import SentenceEncoder, build_encoder, build_input_sequence, mean_pool
from stance.errors import IncompatibleCheckpointError, MissingAnnotationError
from stance.graphs import build_relational_graph, build_reply_graph, normalize_adjacency, relation_labels
from stance.kam import RelationAnnotations, RelationKind, chain_key

STREAMS = ("local", "contextual", "logical", "act")

ACTIVATIONS: dict[str, Callable[[torch.Tensor], torch.Tensor]] = {
    "relu": torch.relu,
    "tanh": torch.tanh,
    "sigmoid": torch.sigmoid,
    "identity": lambda x: x,
}


@dataclass(frozen=True)
class AblationFlags:
    """Какие потоки знаний включены; хотя бы один обязан остаться."""

    use_local: bool = True
    use_contextual: bool = True
    use_logical: bool = True
    use_act: bool = True

    def __post_init__(self) -> None:
        if not any(self.enabled(s) for s in STREAMS):
            msg = "Хотя бы один слой знаний должен быть включён"
            raise ValueError(msg)

    def enabled(self, stream: str) -> bool:
        return bool(getattr(self, f"use_{stream}"))

    def without(self, stream: str) -> "AblationFlags":
        values = {f"use_{s}": self.enabled(s) and s != stream for s in STREAMS}
        return AblationFlags(**values)

    @property
    def required_kinds(self) -> tuple[RelationKind, ...]:
        """Какие аннотации нужны от провайдера при этих флагах."""
        kinds = []
        if self.use_logical:
            kinds.append(RelationKind.LOGICAL)
        if self.use_act:
            kinds.append(RelationKind.ACT)
        return tuple(kinds)

    def to_dict(self) -> dict[str, bool]:
        return {f"use_{s}": self.enabled(s) for s in STREAMS}


class LayerOutputs(NamedTuple):
    local: torch.Tensor | None
    contextual: torch.Tensor | None
    logical: torch.Tensor | None
    act: torch.Tensor | None


@dataclass(frozen=True)
class StanceDistribution:
    """Вероятности классов в порядке (AGAINST, FAVOR, NONE)."""

    probs: tuple[float, float, float]

    @property
    def label(self) -> Stance:
        return STANCE_ORDER[max(range(len(self.probs)), key=lambda k: self.probs[k])]

    def p(self, stance: Stance) -> float:
        return self.probs[stance.index]


@dataclass(frozen=True)
class PreparedInstance:
    """Всё, что нужно forward для одного примера, посчитанное один раз."""

    instance_id: str
    token_ids: torch.Tensor
    spans: tuple[tuple[int, int], ...]
    reply: torch.Tensor
    logical: torch.Tensor | None
    act: torch.Tensor | None
    gold: int


def local_window(n: int, kernel_size: int, mode: str = "window") -> torch.Tensor:
    """
    Бинарная маска строк локального слоя (0-индексная).

    window: строки max(1, n - 2(γ-1)) … n в 1-индексной записи;
    literal: только строка n.
    """
    mask = torch.zeros(n)
    start = n - 1 if mode == "literal" else max(0, n - 1 - 2 * (kernel_size - 1))
    mask[start:] = 1.0
    return mask


class LocalKnowledgeLayer(nn.Module):
    """
    Две одномерные свёртки ширины γ вдоль оси предложений.

    Маска применяется и до, и после свёрток: строки вне окна обнуляются на
    входе, поэтому их значения не влияют на выход.
    """

    def __init__(self, dim: int, kernel_size: int, mask_mode: str = "window") -> None:
        super().__init__()
        self.kernel_size = kernel_size
        self.mask_mode = mask_mode
        self.conv1 = nn.Conv1d(dim, dim, kernel_size, padding=kernel_size // 2)
        self.conv2 = nn.Conv1d(dim, dim, kernel_size, padding=kernel_size // 2)

    def forward(self, h: torch.Tensor) -> torch.Tensor:
        mask = local_window(h.shape[0], self.kernel_size, self.mask_mode).to(h.dtype).unsqueeze(1)
        x = (h * mask).T.unsqueeze(0)
        x = self.conv2(self.conv1(x))
        return x.squeeze(0).T * mask


class ContextualLayer(nn.Module):
    """Двухслойная GCN: H_s = σ(Ã σ(Ã H W_0) W_1)."""

    def __init__(self, dim: int) -> None:
        super().__init__()
        self.w0 = nn.Linear(dim, dim, bias=False)
        self.w1 = nn.Linear(dim, dim, bias=False)

    def forward(self, h: torch.Tensor, adjacency: torch.Tensor, sigma: Callable) -> torch.Tensor:
        hidden = sigma(adjacency @ self.w0(h))
        return sigma(adjacency @ self.w1(hidden))


class RelationalLayer(nn.Module):
    """
    Двухслойная RGCN с отдельной полной матрицей на каждый тип связи.

    h_i' = σ(Σ_ζ Σ_{j ∈ N_i^ζ} (1/c_{i,ζ}) W_ζ h_j + W_0 h_i); усреднение
    по соседям уже заложено в тензор связей.
    """

    def __init__(self, dim: int, num_relations: int, num_layers: int = 2) -> None:
        super().__init__()
        bound = 1.0 / math.sqrt(dim)
        self.relation_weights = nn.ParameterList(
            [nn.Parameter(torch.empty(num_relations, dim, dim).uniform_(-bound, bound)) for _ in range(num_layers)]
        )
        self.self_weights = nn.ParameterList(
            [nn.Parameter(torch.empty(dim, dim).uniform_(-bound, bound)) for _ in range(num_layers)]
        )

    def forward(self, h: torch.Tensor, relations: torch.Tensor, sigma: Callable) -> torch.Tensor:
        for w_rel, w_self in zip(self.relation_weights, self.self_weights, strict=True):
            # relations: R × n × n, w_rel: R × D_out × D_in
            messages = torch.einsum("rij,jd,red->ie", relations, h, w_rel)
            h = sigma(messages + h @ w_self.T)
        return h


class StanceNetwork(nn.Module):
    """Полная сеть: энкодер, четыре слоя знаний, многошаговое внимание, классификатор."""

    def __init__(self, model_config: ModelConfig, encoder: SentenceEncoder, flags: AblationFlags | None = None) -> None:
        super().__init__()
        self.config = model_config
        self.flags = flags or AblationFlags()
        self.encoder = encoder
        dim = encoder.dim
        self.dim = dim

        self.local = LocalKnowledgeLayer(dim, model_config.kernel_size, model_config.local_mask)
        self.contextual = ContextualLayer(dim)
        n_logical = len(relation_labels(RelationKind.LOGICAL, keep_unknown=model_config.keep_unknown))
        n_act = len(relation_labels(RelationKind.ACT))
        self.logical = RelationalLayer(dim, n_logical)
        self.act = RelationalLayer(dim, n_act)
        # Нормализация своя на каждом шаге, общая для потоков
        self.hop_norms = nn.ModuleList([nn.LayerNorm(dim) for _ in range(model_config.hops)])
        self.dropout = nn.Dropout(model_config.dropout)
        self.classifier = nn.Linear(4 * dim, len(STANCE_ORDER))

    @property
    def sigma(self) -> Callable[[torch.Tensor], torch.Tensor]:
        return ACTIVATIONS[self.config.activation]

    def sentence_matrix(self, prepared: PreparedInstance) -> torch.Tensor:
        return self.dropout(mean_pool(self.encoder(prepared.token_ids), prepared.spans))

    def layers(self, h: torch.Tensor, prepared: PreparedInstance) -> LayerOutputs:
        """Выходы включённых слоёв; отключённые не вычисляются вовсе."""
        dtype = h.dtype
        return LayerOutputs(
            local=self.local(h) if self.flags.use_local else None,
            contextual=self.contextual(h, prepared.reply.to(dtype), self.sigma) if self.flags.use_contextual else None,
            logical=self.logical(h, _require(prepared.logical, "logical").to(dtype), self.sigma)
            if self.flags.use_logical
            else None,
            act=self.act(h, _require(prepared.act, "act").to(dtype), self.sigma) if self.flags.use_act else None,
        )

    def fuse(self, outputs: LayerOutputs) -> tuple[torch.Tensor, ...]:
        return multihop_fuse(outputs, self.config.hop_lambda, self.hop_norms, self.dim)

    def logits(self, prepared: PreparedInstance) -> torch.Tensor:
        h = self.sentence_matrix(prepared)
        fused = self.fuse(self.layers(h, prepared))
        return self.classifier(torch.cat(fused))

    def forward(self, prepared: PreparedInstance) -> torch.Tensor:
        """Распределение ŷ по классам (AGAINST, FAVOR, NONE)."""
        return torch.softmax(self.logits(prepared), dim=-1)


def _require(tensor: torch.Tensor | None, name: str) -> torch.Tensor:
    if tensor is None:
        msg = f"Пример подготовлен без графа {name}, а слой включён"
        raise MissingAnnotationError(msg)
    return tensor


def multihop_fuse(
    outputs: LayerOutputs, hop_lambda: float, norms: nn.ModuleList, dim: int
) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor, torch.Tensor]:
    """
    Многошаговое внимание по каждому потоку.

    На шаге m: c = H^m h_n^T (h_n: текущая последняя строка потока),
    R = c ⊙ H^m, H^{m+1} = λ LN(sigmoid(R)) + H^m. После p шагов берётся
    последняя строка; отключённый поток даёт нулевой вектор длины D.
    """
    fused = []
    reference = next(o for o in outputs if o is not None)
    for stream in outputs:
        if stream is None:
            fused.append(reference.new_zeros(dim))
            continue
        h = stream
        for norm in norms:
            scores = h @ h[-1]
            r = scores.unsqueeze(1) * h
            h = hop_lambda * norm(torch.sigmoid(r)) + h
        fused.append(h[-1])
    return tuple(fused)  # type: ignore[return-value]


def classify(
    fused: tuple[torch.Tensor, ...], classifier: nn.Linear
) -> torch.Tensor:
    """softmax(W_c · [h_l; h_s; h_r; h_a] + b)."""
    return torch.softmax(classifier(torch.cat(fused)), dim=-1)


def stance_loss(probs: torch.Tensor, gold: torch.Tensor) -> torch.Tensor:
    """
    Перекрёстная энтропия −log p(gold), усреднённая по батчу.

    Args:
        probs: B × 3 или 3: распределения.
        gold: B или скаляр: индексы эталонных классов.

    """
    probs = probs.reshape(-1, probs.shape[-1])
    gold = gold.reshape(-1)
    picked = probs.gather(1, gold.unsqueeze(1)).squeeze(1)
    return -torch.log(picked).mean()


def prepare_instance(
    instance: StanceInstance,
    annotations: Mapping[str, RelationAnnotations] | RelationAnnotations | None,
    model_config: ModelConfig,
    encoder: SentenceEncoder,
    flags: AblationFlags | None = None,
) -> PreparedInstance:
    """
    Токенизирует цепочку и строит графы один раз.

    Графы отключённых потоков не строятся, поэтому их аннотации не нужны.

    Raises:
        MissingAnnotationError: Нет аннотаций для включённого потока связей.

    """
    flags = flags or AblationFlags()
    sequence = build_input_sequence(instance.chain, instance.target, encoder)
    n = len(sequence.kept)

    reply = build_reply_graph(n).astype(float)
    if model_config.gcn_normalize:
        reply = normalize_adjacency(reply)

    chain_annotations = None
    if flags.required_kinds and len(instance.chain) > 1:
        if isinstance(annotations, RelationAnnotations):
            chain_annotations = annotations
        elif annotations is not None:
            chain_annotations = annotations.get(chain_key(instance.chain))
        if chain_annotations is None:
            msg = f"Нет аннотаций для цепочки примера {instance.id}"
            raise MissingAnnotationError(msg)

    def relations(kind: RelationKind) -> torch.Tensor:
        labels = relation_labels(kind, keep_unknown=model_config.keep_unknown)
        if chain_annotations is None:
            return torch.zeros(len(labels), n, n)
        graph = build_relational_graph(
            chain_annotations, kind, keep_unknown=model_config.keep_unknown, nodes=sequence.kept
        )
        return graph.relation_tensor()

    return PreparedInstance(
        instance_id=instance.id,
        token_ids=encoder.convert(sequence.tokens),
        spans=sequence.spans,
        reply=torch.as_tensor(reply, dtype=torch.float32),
        logical=relations(RelationKind.LOGICAL) if flags.use_logical else None,
        act=relations(RelationKind.ACT) if flags.use_act else None,
        gold=instance.gold.index,
    )


def forward(
    instance: StanceInstance,
    annotations: Mapping[str, RelationAnnotations] | RelationAnnotations | None,
    model: StanceNetwork,
) -> StanceDistribution:
    """Полный проход для одного примера в режиме вывода."""
    return predict(model, prepare_instance(instance, annotations, model.config, model.encoder, model.flags))


def predict(model: StanceNetwork, prepared: PreparedInstance) -> StanceDistribution:
    """Предсказание без градиентов; веса модели не меняются."""
    was_training = model.training
    model.eval()
    with torch.no_grad():
        probs = model(prepared)
    model.train(was_training)
    return StanceDistribution(probs=tuple(float(p) for p in probs))  # type: ignore[arg-type]


def build_model(model_config: ModelConfig, flags: AblationFlags | None = None, *, seed: int = 0) -> StanceNetwork:
    """Создаёт энкодер и сеть с воспроизводимой инициализацией."""
    torch.manual_seed(seed)
    encoder = build_encoder(
        model_config.encoder,
        model_config.hidden_size,
        name=model_config.encoder_name,
        frozen=model_config.encoder_mode == "frozen",
        window=model_config.max_length,
        seed=seed,
    )
    return StanceNetwork(model_config, encoder, flags)


def save_checkpoint(model: StanceNetwork, path: Path | str, *, seed: int, extra: dict[str, Any] | None = None) -> Path:
    """Сохраняет веса вместе с конфигурацией, хэшем предобработки, энкодером и зерном."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save(
        {
            "state_dict": model.state_dict(),
            "model_config": model.config.__dict__,
            "flags": model.flags.to_dict(),
            "config_hash": config_hash(model.config, model.encoder.identity),
            "encoder_identity": model.encoder.identity,
            "seed": seed,
            "extra": extra or {},
        },
        path,
    )
    return path


def load_checkpoint(path: Path | str, expected_hash: str | None = None) -> tuple[StanceNetwork, dict[str, Any]]:
    """
    Восстанавливает модель из чекпоинта.

    Raises:
        IncompatibleCheckpointError: Хэш предобработки не совпал с ожидаемым.

    """
    payload = torch.load(Path(path), map_location="cpu", weights_only=False)
    model_config = ModelConfig(**payload["model_config"])
    if expected_hash is not None and payload["config_hash"] != expected_hash:
        msg = f"Чекпоинт {path} обучен с другой предобработкой (хэш {payload['config_hash'][:12]})"
        raise IncompatibleCheckpointError(msg)
    model = build_model(model_config, AblationFlags(**payload["flags"]), seed=payload["seed"])
    if model.encoder.identity != payload["encoder_identity"]:
        msg = f"Энкодер {model.encoder.identity} не совпадает с {payload['encoder_identity']}"
        raise IncompatibleCheckpointError(msg)
    model.load_state_dict(payload["state_dict"])
    return model, payload


def cross_entropy_from_logits(logits: torch.Tensor, gold: torch.Tensor) -> torch.Tensor:
    """Та же потеря, что stance_loss, но через log_softmax: устойчиво для обучения."""
    return F.cross_entropy(logits.reshape(-1, logits.shape[-1]), gold.reshape(-1))
