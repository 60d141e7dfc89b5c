import matplotlib.pyplot as plt
import pytest

from stance.config import (
    COLORS,
    ModelConfig,
    RunConfig,
    apply_plot_style,
    config,
    config_hash,
    load_run_config,
    with_model,
    with_training,
)
from stance.errors import ConfigError, InputError
from stance.utils import sha256_json


@pytest.fixture
def ini_file(tmp_path):
    """Минимальный INI-файл с нестандартными значениями."""
    path = tmp_path / "custom.ini"
    path.write_text(
        "[model]\nhidden_size = 16\nhops = 2\nactivation = Tanh\n"
        "[training]\nseed = 5\nseeds = 1, 2, 3\nmax_epochs = 4\n"
        "[data]\nthreads_dir = my_threads\n"
        "[provider]\nendpoint = http://file.example\n",
        encoding="utf-8",
    )
    return path


@pytest.fixture(autouse=True)
def clean_env(monkeypatch):
    for name in ("KAM_ENDPOINT", "KAM_MODEL", "KAM_API_KEY"):
        monkeypatch.delenv(name, raising=False)


def test_config_sections_exist():
    """Проверяет наличие всех обязательных секций в глобальном объекте конфигурации."""
    for section in ("data", "model", "training", "provider", "output", "graph_settings", "colors"):
        assert config.has_section(section)


def test_colors_export():
    """Проверяет, что цвета экспортированы в COLORS."""
    for key in ("favor", "against", "line", "threshold", "heatmap"):
        assert key in COLORS


def test_load_run_config_reads_file(ini_file):
    """Значения файла переопределяют значения по умолчанию."""
    run_config = load_run_config(ini_file)

    assert run_config.model.hidden_size == 16
    assert run_config.model.hops == 2
    assert run_config.model.activation == "tanh"
    assert run_config.model.kernel_size == 3
    assert run_config.training.seeds == (1, 2, 3)
    assert run_config.data_paths == ("my_threads",)
    assert run_config.provider.endpoint == "http://file.example"


def test_overrides_take_precedence(ini_file):
    """Флаг CLI > файл > значение по умолчанию; None не переопределяет."""
    run_config = load_run_config(
        ini_file,
        {"model": {"hops": 4, "encoder": None}, "training": {"seed": None}, "data": {"paths": ["a.jsonl", "b"]}},
    )

    assert run_config.model.hops == 4
    assert run_config.model.encoder == "hash"
    assert run_config.training.seed == 5
    assert run_config.data_paths == ("a.jsonl", "b")


def test_environment_overrides_provider(ini_file, monkeypatch):
    """Переменные окружения задают адрес, модель и ключ провайдера."""
    monkeypatch.setenv("KAM_ENDPOINT", "http://env.example")
    monkeypatch.setenv("KAM_MODEL", "some-model")
    monkeypatch.setenv("KAM_API_KEY", "secret")

    run_config = load_run_config(ini_file)

    assert run_config.provider.endpoint == "http://env.example"
    assert run_config.provider.model == "some-model"
    assert run_config.provider.api_key == "secret"
    assert "secret" not in repr(run_config.provider)


def test_missing_explicit_file_raises(tmp_path):
    """Явно указанный, но отсутствующий файл: ошибка входных данных."""
    with pytest.raises(ConfigError):
        load_run_config(tmp_path / "nope.ini")


@pytest.mark.parametrize(
    ("section", "key", "value"),
    [
        ("model", "kernel_size", "2"),
        ("model", "hops", "0"),
        ("model", "activation", "gelu"),
        ("model", "hidden_size", "abc"),
        ("training", "learning_rate", "0"),
        ("data", "train_ratio", "0.9"),
    ],
)
def test_invalid_values_raise_config_error(tmp_path, section, key, value):
    """Значения, нарушающие инварианты, отклоняются с кодом выхода 2."""
    path = tmp_path / "bad.ini"
    path.write_text(f"[{section}]\n{key} = {value}\n", encoding="utf-8")

    with pytest.raises(ConfigError) as excinfo:
        load_run_config(path)
    assert isinstance(excinfo.value, InputError)
    assert excinfo.value.exit_code == 2


def test_config_hash_tracks_preprocessing_fields():
    """Хэш меняется от размерности и ширины ядра, но не от λ."""
    base = ModelConfig(hidden_size=8)
    identity = "hash:4096"

    assert config_hash(base, identity) == config_hash(ModelConfig(hidden_size=8), identity)
    assert config_hash(base, identity) != config_hash(ModelConfig(hidden_size=16), identity)
    assert config_hash(base, identity) != config_hash(ModelConfig(hidden_size=8, kernel_size=5), identity)
    assert config_hash(base, identity) != config_hash(base, "transformers:bert-base-uncased")
    assert config_hash(base, identity) == config_hash(ModelConfig(hidden_size=8, hop_lambda=0.5), identity)


def test_config_hash_is_canonical_json_digest():
    """Хэш конфигурации: тот же канонический SHA-256, что и у ключей кэша."""
    model = ModelConfig(hidden_size=8)
    fields = {
        "encoder_identity": "hash:4096",
        "hidden_size": 8,
        "kernel_size": model.kernel_size,
        "hops": model.hops,
        "keep_unknown": model.keep_unknown,
        "max_length": model.max_length,
    }
    assert config_hash(model, "hash:4096") == sha256_json(fields)


def test_with_helpers_return_copies():
    """with_training и with_model не меняют исходную конфигурацию."""
    run_config = RunConfig()
    changed = with_model(with_training(run_config, max_epochs=0), hidden_size=4)

    assert changed.training.max_epochs == 0
    assert changed.model.hidden_size == 4
    assert run_config.training.max_epochs == 30
    assert run_config.model.hidden_size == 768


def test_to_dict_is_plain():
    """to_dict возвращает вложенный словарь секций."""
    payload = RunConfig().to_dict()
    assert payload["model"]["kernel_size"] == 3
    assert payload["training"]["seeds"] == (7,)


def test_apply_plot_style():
    """Проверяет корректность применения параметров стиля к глобальным настройкам Matplotlib."""
    apply_plot_style()
    assert plt.rcParams["text.color"] == "white"
    assert plt.rcParams["font.size"] == config.getint("graph_settings", "font_size")
