"""
Построение графов цепочки.

Граф ответов (смежность A + I) для контекстного слоя и типизированные
реляционные графы логических связей и коммуникативных актов для RGCN.
"""

import json
from collections.abc import Sequence
from dataclasses import dataclass
from enum import Enum
from functools import cached_property

import numpy as np
import torch

from stance.errors import MissingAnnotationError
from stance.kam import ACT_LABELS, LOGICAL_LABELS, LogicalRelation, RelationAnnotations, RelationKind


def relation_labels(kind: RelationKind, *, keep_unknown: bool = False) -> tuple[Enum, ...]:
    """Словарь типов рёбер: 4 логические связи (5 с UNKNOWN) или 8 актов."""
    if kind is RelationKind.LOGICAL:
        return (*LOGICAL_LABELS, LogicalRelation.UNKNOWN) if keep_unknown else LOGICAL_LABELS
    return ACT_LABELS


def build_reply_graph(n: int) -> np.ndarray:
    """
    Смежность ветки с петлями: entry(i, j) = 1 тогда и только тогда, когда |i - j| <= 1.

    Raises:
        ValueError: n < 1.

    """
    if n < 1:
        msg = f"Длина цепочки должна быть >= 1, получено {n}"
        raise ValueError(msg)
    idx = np.arange(n)
    return (np.abs(idx[:, None] - idx[None, :]) <= 1).astype(np.int64)


def normalize_adjacency(adjacency: np.ndarray) -> np.ndarray:
    """Симметричная нормализация D^{-1/2} Ã D^{-1/2}."""
    degree = adjacency.sum(axis=1).astype(np.float64)
    inv_sqrt = np.where(degree > 0, 1.0 / np.sqrt(np.maximum(degree, 1e-12)), 0.0)
    return inv_sqrt[:, None] * adjacency * inv_sqrt[None, :]


@dataclass(frozen=True)
class RelationalGraph:
    """Типизированный граф: направленные рёбра (src, dst, ζ) с зеркальными копиями."""

    n: int
    kind: RelationKind
    relations: tuple[Enum, ...]
    edges: frozenset[tuple[int, int, Enum]]

    @cached_property
    def neighbor_sets(self) -> dict[tuple[int, Enum], frozenset[int]]:
        """N_i^ζ: соседи узла i по связи ζ (узел i: получатель ребра)."""
        sets: dict[tuple[int, Enum], set[int]] = {}
        for src, dst, relation in self.edges:
            sets.setdefault((dst, relation), set()).add(src)
        return {key: frozenset(value) for key, value in sets.items()}

    @cached_property
    def counts(self) -> dict[tuple[int, Enum], int]:
        """c_{i,ζ} = |N_i^ζ|."""
        return {key: len(value) for key, value in self.neighbor_sets.items()}

    def degree(self, node: int) -> int:
        return sum(1 for _, dst, _ in self.edges if dst == node)

    def relation_tensor(self, dtype: torch.dtype = torch.float32) -> torch.Tensor:
        """
        Тензор R × n × n: элемент [ζ, i, j] = 1 / c_{i,ζ}, если j ∈ N_i^ζ, иначе 0.

        Свёртка по нему даёт усреднение соседей по каждой связи за одно einsum.
        """
        tensor = torch.zeros(len(self.relations), self.n, self.n, dtype=dtype)
        index = {relation: k for k, relation in enumerate(self.relations)}
        for (node, relation), neighbors in self.neighbor_sets.items():
            for neighbor in neighbors:
                tensor[index[relation], node, neighbor] = 1.0 / len(neighbors)
        return tensor

    def dump(self) -> str:
        """Отладочный JSON: {n, kind, edges: [[src, dst, "ζ"], …]}."""
        edges = sorted([src, dst, relation.value] for src, dst, relation in self.edges)
        return json.dumps({"n": self.n, "kind": self.kind.value, "edges": edges})


def build_relational_graph(
    annotations: RelationAnnotations,
    kind: RelationKind,
    *,
    keep_unknown: bool = False,
    nodes: Sequence[int] | None = None,
) -> RelationalGraph:
    """
    Строит граф связей вида kind из аннотаций цепочки.

    Каждая пара (i, i-1) с меткой ζ даёт два ребра: i-1 → i и i → i-1.
    Рёбра UNKNOWN отбрасываются, если keep_unknown не включён.

    Args:
        annotations: Аннотации пар 2..n.
        kind: Какой вид связей брать.
        keep_unknown: Оставлять ли UNKNOWN пятым типом.
        nodes: 0-индексные позиции цепочки, оставшиеся после усечения; рёбра
            сохраняются только между соседями исходной цепочки.

    Raises:
        MissingAnnotationError: У какой-то пары нет метки нужного вида.

    """
    n_chain = len(annotations.pairs) + 1
    kept = list(range(n_chain)) if nodes is None else list(nodes)
    position = {original: k for k, original in enumerate(kept)}
    relations = relation_labels(kind, keep_unknown=keep_unknown)

    edges: set[tuple[int, int, Enum]] = set()
    for pair_index, pair in enumerate(annotations.pairs):
        label = pair.get(kind)
        if label is None:
            msg = f"Нет аннотации вида {kind.value} для пары {pair_index + 2} цепочки {annotations.chain_key[:12]}"
            raise MissingAnnotationError(msg)
        if label not in relations:
            continue
        child, parent = pair_index + 1, pair_index
        if child in position and parent in position:
            edges.add((position[parent], position[child], label))
            edges.add((position[child], position[parent], label))

    return RelationalGraph(n=len(kept), kind=kind, relations=relations, edges=frozenset(edges))
