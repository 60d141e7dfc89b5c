"""
Модуль управления конфигурацией и стилизацией графиков.

Загружает настройки из файла INI или применяет параметры по умолчанию,
собирает типизированные конфигурации модели, обучения и провайдера,
а также настраивает глобальный визуальный стиль Matplotlib.
"""

import configparser
import os
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any

import matplotlib.pyplot as plt

from stance.errors import ConfigError
from stance.utils import sha256_json

__version__ = "1.0.0"
__app_name__ = "Conversational Stance Analyzer"

CONFIG_FILE = "stance_config.ini"

# Значения по умолчанию для всех секций INI
DEFAULTS: dict[str, dict[str, str]] = {
    "data": {
        "threads_dir": "threads",
        "split_seed": "7",
        "train_ratio": "0.65",
        "dev_ratio": "0.15",
        "test_ratio": "0.20",
    },
    "model": {
        "hidden_size": "768",
        "kernel_size": "3",
        "hop_lambda": "0.1",
        "hops": "3",
        "activation": "relu",
        "gcn_normalize": "true",
        "local_mask": "window",
        "keep_unknown": "false",
        "dropout": "0.0",
        "encoder": "hash",
        "encoder_name": "bert-base-uncased",
        "encoder_mode": "finetune",
        "max_length": "512",
    },
    "training": {
        "learning_rate": "0.00001",
        "batch_size": "32",
        "max_epochs": "30",
        "patience": "5",
        "seed": "7",
        "seeds": "7",
    },
    "provider": {
        "endpoint": "",
        "model": "gpt-3.5-turbo",
        "temperature": "0",
        "max_retries": "2",
        "timeout": "30",
        "max_in_flight": "4",
        "cache_path": "runs/kam_cache.jsonl",
    },
    "output": {"runs_dir": "runs"},
    "graph_settings": {
        "figure_width": "14",
        "figure_height": "9",
        "background_color": "#1e1e1e",
        "plot_background": "#2b2b2b",
        "grid_alpha": "0.5",
        "font_size": "11",
    },
    "colors": {
        "favor": "#00ff88",
        "against": "#ff4444",
        "line": "#00d4ff",
        "threshold": "#ffaa00",
        "heatmap": "magma",
    },
}

ACTIVATIONS = ("relu", "tanh", "sigmoid", "identity")
LOCAL_MASKS = ("window", "literal")
ENCODERS = ("hash", "transformer")
ENCODER_MODES = ("finetune", "frozen")


def read_config(path: Path | str = CONFIG_FILE) -> configparser.ConfigParser:
    """
    Читает INI-файл поверх значений по умолчанию.

    Args:
        path: Путь к файлу конфигурации.

    Returns:
        ConfigParser, в котором заполнены все секции.

    """
    parser = configparser.ConfigParser()
    parser.read_dict(DEFAULTS)
    # Попытка чтения конфига с указанием кодировки для корректной работы на разных ОС
    if not parser.read(path, encoding="utf-8"):
        print(f"Файл конфигурации {path} не найден или повреждён. Используются настройки по умолчанию.")
    return parser


config = read_config()

# Экспорт словаря цветов для использования в других модулях
COLORS = config["colors"]


@dataclass(frozen=True)
class ModelConfig:
    """Гиперпараметры сети: размерность, свёртки, многошаговое внимание, энкодер."""

    hidden_size: int = 768
    kernel_size: int = 3
    hop_lambda: float = 0.1
    hops: int = 3
    activation: str = "relu"
    gcn_normalize: bool = True
    local_mask: str = "window"
    keep_unknown: bool = False
    dropout: float = 0.0
    encoder: str = "hash"
    encoder_name: str = "bert-base-uncased"
    encoder_mode: str = "finetune"
    max_length: int = 512

    def __post_init__(self) -> None:
        checks = [
            (self.hidden_size >= 1, "hidden_size должен быть >= 1"),
            (self.kernel_size >= 1 and self.kernel_size % 2 == 1, "kernel_size должен быть нечётным и >= 1"),
            (self.hop_lambda >= 0, "hop_lambda должен быть >= 0"),
            (self.hops >= 1, "hops должен быть >= 1"),
            (self.activation in ACTIVATIONS, f"activation должен быть одним из {ACTIVATIONS}"),
            (self.local_mask in LOCAL_MASKS, f"local_mask должен быть одним из {LOCAL_MASKS}"),
            (0 <= self.dropout < 1, "dropout должен лежать в [0, 1)"),
            (self.encoder in ENCODERS, f"encoder должен быть одним из {ENCODERS}"),
            (self.encoder_mode in ENCODER_MODES, f"encoder_mode должен быть одним из {ENCODER_MODES}"),
            (self.max_length >= 3, "max_length должен быть >= 3"),
        ]
        _raise_on_failed(checks)


@dataclass(frozen=True)
class TrainConfig:
    """Настройки оптимизации (Adam), ранней остановки и воспроизводимости."""

    learning_rate: float = 1e-5
    batch_size: int = 32
    max_epochs: int = 30
    patience: int = 5
    seed: int = 7
    seeds: tuple[int, ...] = (7,)

    def __post_init__(self) -> None:
        checks = [
            (self.learning_rate > 0, "learning_rate должен быть > 0"),
            (self.batch_size >= 1, "batch_size должен быть >= 1"),
            (self.max_epochs >= 0, "max_epochs должен быть >= 0"),
            (self.patience >= 1, "patience должен быть >= 1"),
            (len(self.seeds) >= 1, "список seeds не может быть пустым"),
        ]
        _raise_on_failed(checks)


@dataclass(frozen=True)
class ProviderConfig:
    """Параметры чат-провайдера языковой модели."""

    endpoint: str = ""
    model: str = "gpt-3.5-turbo"
    api_key: str = field(default="", repr=False)
    temperature: float = 0.0
    max_retries: int = 2
    timeout: float = 30.0
    max_in_flight: int = 4
    cache_path: str = "runs/kam_cache.jsonl"

    def __post_init__(self) -> None:
        checks = [
            (self.temperature >= 0, "temperature должен быть >= 0"),
            (self.max_retries >= 0, "max_retries должен быть >= 0"),
            (self.timeout > 0, "timeout должен быть > 0"),
            (self.max_in_flight >= 1, "max_in_flight должен быть >= 1"),
        ]
        _raise_on_failed(checks)


@dataclass(frozen=True)
class RunConfig:
    """Полная конфигурация запуска: данные, модель, обучение, провайдер, вывод."""

    model: ModelConfig = field(default_factory=ModelConfig)
    training: TrainConfig = field(default_factory=TrainConfig)
    provider: ProviderConfig = field(default_factory=ProviderConfig)
    data_paths: tuple[str, ...] = ()
    targets: tuple[str, ...] = ()
    split_seed: int = 7
    ratios: tuple[float, float, float] = (0.65, 0.15, 0.20)
    runs_dir: str = "runs"

    def __post_init__(self) -> None:
        checks = [
            (abs(sum(self.ratios) - 1.0) < 1e-9, "доли train/dev/test должны давать в сумме 1"),
            (all(r > 0 for r in self.ratios), "доли train/dev/test должны быть положительными"),
        ]
        _raise_on_failed(checks)

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


def _raise_on_failed(checks: list[tuple[bool, str]]) -> None:
    for ok, msg in checks:
        if not ok:
            raise ConfigError(msg)


def load_run_config(path: Path | str | None = None, overrides: dict[str, dict[str, Any]] | None = None) -> RunConfig:
    """
    Собирает RunConfig по приоритету: флаг CLI > файл конфигурации > значение по умолчанию.

    Args:
        path: Путь к INI-файлу (None: глобальный stance_config.ini).
        overrides: Переопределения по секциям, например {"training": {"seed": 3}}.
            Значения None игнорируются.

    Returns:
        Проверенная конфигурация запуска.

    Raises:
        ConfigError: Если путь указан, но файла нет, или значения нарушают инварианты.

    """
    if path is not None and not Path(path).exists():
        msg = f"Файл конфигурации {path} не найден"
        raise ConfigError(msg)

    parser = read_config(path) if path is not None else read_config()
    for section, values in (overrides or {}).items():
        for key, value in values.items():
            if value is not None:
                parser[section][key] = _to_ini(value)

    # Переменные окружения задают провайдера поверх файла
    env_map = {"KAM_ENDPOINT": "endpoint", "KAM_MODEL": "model"}
    for env_name, key in env_map.items():
        if os.environ.get(env_name):
            parser["provider"][key] = os.environ[env_name]

    try:
        return _build_run_config(parser)
    except ValueError as e:
        if isinstance(e, ConfigError):
            raise
        msg = f"Некорректное значение в конфигурации: {e}"
        raise ConfigError(msg) from e


def _to_ini(value: Any) -> str:  # noqa: ANN401
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, list | tuple):
        return ",".join(str(v) for v in value)
    return str(value)


def _build_run_config(parser: configparser.ConfigParser) -> RunConfig:
    m = parser["model"]
    model = ModelConfig(
        hidden_size=m.getint("hidden_size"),
        kernel_size=m.getint("kernel_size"),
        hop_lambda=m.getfloat("hop_lambda"),
        hops=m.getint("hops"),
        activation=m.get("activation").strip().lower(),
        gcn_normalize=m.getboolean("gcn_normalize"),
        local_mask=m.get("local_mask").strip().lower(),
        keep_unknown=m.getboolean("keep_unknown"),
        dropout=m.getfloat("dropout"),
        encoder=m.get("encoder").strip().lower(),
        encoder_name=m.get("encoder_name").strip(),
        encoder_mode=m.get("encoder_mode").strip().lower(),
        max_length=m.getint("max_length"),
    )

    t = parser["training"]
    seed = t.getint("seed")
    seeds = tuple(int(s) for s in t.get("seeds").replace(" ", "").split(",") if s) or (seed,)
    training = TrainConfig(
        learning_rate=t.getfloat("learning_rate"),
        batch_size=t.getint("batch_size"),
        max_epochs=t.getint("max_epochs"),
        patience=t.getint("patience"),
        seed=seed,
        seeds=seeds,
    )

    p = parser["provider"]
    provider = ProviderConfig(
        endpoint=p.get("endpoint").strip(),
        model=p.get("model").strip(),
        api_key=os.environ.get("KAM_API_KEY", ""),
        temperature=p.getfloat("temperature"),
        max_retries=p.getint("max_retries"),
        timeout=p.getfloat("timeout"),
        max_in_flight=p.getint("max_in_flight"),
        cache_path=p.get("cache_path").strip(),
    )

    d = parser["data"]
    data_paths = tuple(x for x in d.get("paths", fallback="").split(",") if x.strip())
    targets = tuple(x.strip() for x in d.get("targets", fallback="").split(",") if x.strip())
    return RunConfig(
        model=model,
        training=training,
        provider=provider,
        data_paths=data_paths or (d.get("threads_dir"),),
        targets=targets,
        split_seed=d.getint("split_seed"),
        ratios=(d.getfloat("train_ratio"), d.getfloat("dev_ratio"), d.getfloat("test_ratio")),
        runs_dir=parser["output"].get("runs_dir"),
    )


def with_training(run_config: RunConfig, **changes: Any) -> RunConfig:  # noqa: ANN401
    """Возвращает копию конфигурации с изменёнными настройками обучения."""
    return replace(run_config, training=replace(run_config.training, **changes))


def with_model(run_config: RunConfig, **changes: Any) -> RunConfig:  # noqa: ANN401
    """Возвращает копию конфигурации с изменёнными гиперпараметрами модели."""
    return replace(run_config, model=replace(run_config.model, **changes))


def config_hash(model_config: ModelConfig, encoder_identity: str) -> str:
    """
    Хэш полей, влияющих на предобработку и форму параметров.

    Чекпоинт совместим с данными, только если хэши совпадают.
    """
    fields = {
        "encoder_identity": encoder_identity,
        "hidden_size": model_config.hidden_size,
        "kernel_size": model_config.kernel_size,
        "hops": model_config.hops,
        "keep_unknown": model_config.keep_unknown,
        "max_length": model_config.max_length,
    }
    return sha256_json(fields)


def apply_plot_style() -> None:
    """
    Применяет глобальные стили Matplotlib на основе загруженной конфигурации.

    Настраивает темную тему, размеры холста, цветовую схему осей и сетки.
    """
    plt.style.use("dark_background")

    # Перенос настроек из ConfigParser в rcParams Matplotlib
    plt.rcParams["figure.figsize"] = (
        config.getint("graph_settings", "figure_width"),
        config.getint("graph_settings", "figure_height"),
    )
    plt.rcParams["figure.facecolor"] = config.get("graph_settings", "background_color")
    plt.rcParams["axes.facecolor"] = config.get("graph_settings", "plot_background")
    plt.rcParams["axes.edgecolor"] = "#555555"
    plt.rcParams["axes.linewidth"] = 1.5
    plt.rcParams["grid.alpha"] = config.getfloat("graph_settings", "grid_alpha")
    plt.rcParams["grid.color"] = "#444444"
    plt.rcParams["text.color"] = "white"
    plt.rcParams["axes.labelcolor"] = "white"
    plt.rcParams["xtick.color"] = "white"
    plt.rcParams["ytick.color"] = "white"
    plt.rcParams["font.size"] = config.getint("graph_settings", "font_size")
