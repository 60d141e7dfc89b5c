"""
Вспомогательные инструменты для расчетов и форматирования данных.

Содержит функции цветовой стилизации вывода в консоль, хэширования
и фиксации генераторов случайных чисел.
"""

import hashlib
import json
import random
from typing import Any

import numpy as np
import torch
from colorama import Fore, Style

# Порог F-меры для зелёной подсветки
SCORE_THRESHOLD = 0.5


def color_score(value: float) -> str:
    """Возвращает F-меру в процентах, окрашенную относительно порога 0.5."""
    if value >= SCORE_THRESHOLD:
        return f"{Fore.GREEN}{value * 100:.2f}{Style.RESET_ALL}"
    return f"{Fore.RED}{value * 100:.2f}{Style.RESET_ALL}"


def color_delta(value: float) -> str:
    """Возвращает изменение F-меры (в процентных пунктах), окрашенное по знаку."""
    if value > 0:
        return f"{Fore.GREEN}{value * 100:+.2f}{Style.RESET_ALL}"
    if value < 0:
        return f"{Fore.RED}{value * 100:.2f}{Style.RESET_ALL}"
    return f"{Fore.YELLOW}{value * 100:.2f}{Style.RESET_ALL}"


def sha256_json(payload: Any) -> str:  # noqa: ANN401
    """SHA-256 канонического JSON (ключи отсортированы, без пробелов)."""
    data = json.dumps(payload, sort_keys=True, ensure_ascii=False, separators=(",", ":"))
    return hashlib.sha256(data.encode("utf-8")).hexdigest()


def seed_everything(seed: int) -> None:
    """Фиксирует random, numpy и torch для воспроизводимых запусков."""
    random.seed(seed)
    np.random.seed(seed)  # noqa: NPY002
    torch.manual_seed(seed)


def parameter_hash(module: torch.nn.Module, prefix: str) -> str:
    """
    Хэш значений всех параметров модуля, имя которых начинается с prefix.

    Используется, чтобы убедиться, что отключённый слой не менялся при обучении.
    """
    digest = hashlib.sha256()
    for name, param in sorted(module.named_parameters(), key=lambda item: item[0]):
        if name.startswith(prefix):
            digest.update(name.encode("utf-8"))
            digest.update(param.detach().cpu().contiguous().numpy().tobytes())
    return digest.hexdigest()
