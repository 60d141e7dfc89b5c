import json
import re
from unittest.mock import patch

import pandas as pd
import pytest

from main import main
from stance.data_processor import make_instances, write_threads
from stance.errors import DivergenceError
from stance.kam import chain_key
from stance.synthetic import make_separable_corpus

TINY_INI = """
[data]
threads_dir = threads
split_seed = 7

[model]
hidden_size = 8
hops = 1
encoder = hash

[training]
learning_rate = 0.01
batch_size = 8
max_epochs = 1
patience = 1
seed = 3
seeds = 3

[provider]
endpoint =
max_in_flight = 1
cache_path = cache/kam_cache.jsonl

[output]
runs_dir = runs
"""

ANSI_RE = re.compile(r"\x1b\[[0-9;]*m")


def _plain(text):
    return ANSI_RE.sub("", text)


@pytest.fixture
def workspace(tmp_path, monkeypatch):
    """Рабочая папка с маленьким INI и синтетическим корпусом в threads/."""
    monkeypatch.chdir(tmp_path)
    monkeypatch.delenv("KAM_ENDPOINT", raising=False)
    monkeypatch.delenv("KAM_MODEL", raising=False)
    (tmp_path / "tiny.ini").write_text(TINY_INI, encoding="utf-8")
    threads = make_separable_corpus(20, seed=1)
    write_threads(threads, tmp_path / "threads" / "corpus.jsonl")
    return tmp_path


def _run(*argv):
    return main([*argv, "--config", "tiny.ini"])


def test_ingest_writes_manifest(workspace, capsys):
    """ingest проверяет треды и пишет манифест разбиения."""
    assert _run("ingest") == 0

    manifest = json.loads((workspace / "runs" / "ingest" / "manifest.json").read_text(encoding="utf-8"))
    assert manifest["seed"] == 7
    assert "ДАННЫЕ" in capsys.readouterr().out


def test_ingest_seed_changes_split(workspace):
    """--seed задаёт зерно разбиения: разные зёрна дают разные манифесты."""
    assert _run("ingest", "--seed", "1", "--out", "s1") == 0
    assert _run("ingest", "--seed", "99", "--out", "s99") == 0
    assert _run("ingest", "--seed", "1", "--out", "again") == 0

    first, second, again = (
        json.loads((workspace / name / "manifest.json").read_text(encoding="utf-8")) for name in ("s1", "s99", "again")
    )
    assert (first["seed"], second["seed"]) == (1, 99)
    assert first["splits"] != second["splits"]
    assert first["splits"] == again["splits"]


def test_malformed_line_exit_code(workspace, capsys):
    """Битая строка JSONL: код 2 и номер строки в сообщении."""
    bad = workspace / "bad"
    bad.mkdir()
    good_line = (workspace / "threads" / "corpus.jsonl").read_text(encoding="utf-8").splitlines()[0]
    (bad / "broken.jsonl").write_text(good_line + "\n{not json\n", encoding="utf-8")

    assert _run("ingest", "--data", "bad") == 2
    err = capsys.readouterr().err
    assert "Ошибка" in err
    assert "broken.jsonl:2:" in err


def test_empty_directory_exit_code(workspace, capsys):
    """Пустая папка данных: код 2 и «no threads found»."""
    (workspace / "empty").mkdir()
    assert _run("ingest", "--data", "empty") == 2
    assert "no threads found" in capsys.readouterr().err


def test_annotate_twice_hits_cache(workspace, capsys):
    """Повторное аннотирование целиком берётся из кэша."""
    assert _run("annotate", "--stub") == 0
    first = _plain(capsys.readouterr().out)
    assert "Вызовов провайдера:" in first
    assert (workspace / "cache" / "kam_cache.jsonl").exists()

    assert _run("annotate", "--stub") == 0
    second = _plain(capsys.readouterr().out)
    assert re.search(r"Вызовов провайдера:\s+0\b", second)
    assert "100.0%" in second


def test_annotate_dry_run_counts_prompts(workspace, capsys):
    """--dry-run: 2·Σ(n-1) по различным цепочкам, без вызовов провайдера."""
    instances = [i for t in make_separable_corpus(20, seed=1) for i in make_instances(t)]
    lengths = {chain_key(i.chain): len(i.chain) for i in instances}
    expected = 2 * sum(n - 1 for n in lengths.values())

    assert _run("annotate", "--dry-run") == 0
    assert f"Промптов для холодного кэша: {expected} " in _plain(capsys.readouterr().out)
    assert not (workspace / "cache" / "kam_cache.jsonl").exists()


def test_annotate_without_provider_exit_code(workspace, capsys):
    """Без --stub и без адреса провайдера: код 3."""
    assert _run("annotate") == 3
    assert "KAM_ENDPOINT" in capsys.readouterr().err


def test_unknown_ablated_stream(workspace, capsys):
    """Неизвестный слой в --ablate: ошибка входных данных."""
    assert _run("annotate", "--stub", "--ablate", "syntax") == 2
    assert "syntax" in capsys.readouterr().err


def test_crosstarget_dry_run(workspace, capsys):
    """Стандартный список: двенадцать пар, данные не читаются."""
    assert main(["crosstarget", "--dry-run"]) == 0
    out = _plain(capsys.readouterr().out)
    assert "Пар: 12" in out
    assert "DT→JB" in out


def test_crosstarget_preset_names(workspace, capsys):
    """Пресет table9 и его синоним standard: те же двенадцать пар."""
    assert main(["crosstarget", "--pairs", "table9", "--dry-run"]) == 0
    table9 = _plain(capsys.readouterr().out)
    assert main(["crosstarget", "--pairs", "standard", "--dry-run"]) == 0

    assert "Пар: 12" in table9
    assert table9 == _plain(capsys.readouterr().out)


def test_train_then_eval(workspace):
    """train пишет артефакты запуска; eval того же чекпоинта проходит, с чужой конфигурацией: код 2."""
    assert _run("train", "--stub") == 0

    run_dir = workspace / "runs" / "train"
    for name in ("checkpoint.pt", "config.json", "history.csv", "history.png", "report.json",
                 "per_target.csv", "per_bucket.csv", "report.md"):
        assert (run_dir / name).exists(), name
    assert "api_key" not in json.loads((run_dir / "config.json").read_text(encoding="utf-8"))["provider"]

    checkpoint = str(run_dir / "checkpoint.pt")
    assert _run("eval", "--stub", "--checkpoint", checkpoint) == 0
    assert (workspace / "runs" / "eval" / "report.json").exists()

    (workspace / "wide.ini").write_text(TINY_INI.replace("hops = 1", "hops = 1\nkernel_size = 5"), encoding="utf-8")
    assert main(["eval", "--stub", "--checkpoint", checkpoint, "--config", "wide.ini"]) == 2


def test_eval_missing_checkpoint(workspace, capsys):
    """Нет чекпоинта: код 2."""
    assert _run("eval", "--stub", "--checkpoint", "nowhere.pt") == 2
    assert "nowhere.pt" in capsys.readouterr().err


def test_divergence_exit_code(workspace, capsys):
    """Расхождение обучения: код 4."""
    with patch("main.train", side_effect=DivergenceError("loss = nan")):
        assert _run("train", "--stub") == 4
    assert "loss = nan" in capsys.readouterr().err


def test_ablate_joint_writes_table(workspace):
    """ablate --joint: четыре строки вариантов в ablation.csv."""
    assert _run("ablate", "--stub", "--joint") == 0

    table = pd.read_csv(workspace / "runs" / "ablate" / "ablation.csv")
    assert len(table) == 4
    assert table["disabled"].tolist() == ["local", "contextual", "logical", "act"]
    assert "## Абляция" in (workspace / "runs" / "ablate" / "report.md").read_text(encoding="utf-8")


def test_report_writes_heatmaps(workspace):
    """report сохраняет три CSV и тепловую карту."""
    assert _run("report", "--stub", "--out", "heat") == 0

    out_dir = workspace / "heat"
    for name in ("lr_given_stance.csv", "ca_given_stance.csv", "ca_given_lr.csv", "heatmaps.png"):
        assert (out_dir / name).exists(), name


def test_train_averages_config_seeds(workspace):
    """Список seeds из конфигурации усредняется без флага --seeds."""
    (workspace / "seeds.ini").write_text(TINY_INI.replace("seeds = 3", "seeds = 3, 4"), encoding="utf-8")
    assert main(["train", "--stub", "--config", "seeds.ini"]) == 0

    summary = pd.read_csv(workspace / "runs" / "train" / "seeds.csv", index_col=0)
    assert list(summary.columns) == ["mean", "std", "seed=3", "seed=4"]


def test_crosstarget_seeds_flag(workspace):
    """--seeds у crosstarget: таблица mean ± std по парам."""
    assert _run("crosstarget", "--stub", "--pairs", "SX->TS", "--seeds", "3,4") == 0

    out_dir = workspace / "runs" / "crosstarget"
    assert pd.read_csv(out_dir / "crosstarget.csv")["pair"].tolist() == ["SX→TS"]
    summary = pd.read_csv(out_dir / "seeds.csv", index_col=0)
    assert list(summary.index) == ["SX→TS"]
    assert list(summary.columns) == ["mean", "std", "seed=3", "seed=4"]


def test_bad_seeds_flag(workspace, capsys):
    """--seeds без целых чисел: код 2 до обучения."""
    assert _run("train", "--stub", "--seeds", "a,b") == 2
    assert "--seeds" in capsys.readouterr().err
    assert not (workspace / "runs" / "train" / "checkpoint.pt").exists()
