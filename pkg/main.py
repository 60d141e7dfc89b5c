"""
Conversational Stance Analyzer.

Основной модуль входа в приложение. Связывает конфигурацию с этапами
конвейера: загрузка тредов, аннотирование связей языковой моделью,
обучение, оценка и экспериментальные протоколы.
"""

import argparse
import sys
from collections.abc import Sequence
from pathlib import Path

from colorama import Fore, Style, init

from stance.config import RunConfig, __app_name__, __version__, load_run_config
from stance.console_output import (
    print_ablation,
    print_annotation_summary,
    print_cross_target,
    print_dataset_summary,
    print_heatmaps,
    print_history,
    print_report,
    print_seed_summary,
    save_report_to_md,
)
from stance.data_processor import Dataset, load_dataset, write_manifest
from stance.errors import InputError, StanceError
from stance.kam import AnnotationCache, ChatProvider, StubProvider, count_prompts
from stance.model import STREAMS, AblationFlags, load_checkpoint
from stance.plots import plot_heatmaps, plot_history
from stance.statistics import relation_stance_heatmap, write_heatmap_csv
from stance.trainer import (
    ensure_annotations,
    evaluate,
    expected_config_hash,
    pair_label,
    parse_pairs,
    run_ablation,
    run_cross_targets,
    run_in_target,
    run_seeds,
    save_config,
    save_history,
    save_report,
    train,
)

# Инициализация colorama для корректной работы ANSI-цветов в терминале Windows
init(autoreset=True)


def _run_config(args: argparse.Namespace) -> RunConfig:
    """Конфигурация по приоритету: флаги CLI > файл > значения по умолчанию."""
    overrides = {
        "training": {
            "seed": getattr(args, "seed", None),
            "max_epochs": getattr(args, "epochs", None),
            "learning_rate": getattr(args, "lr", None),
        },
        "model": {"encoder": getattr(args, "encoder", None)},
        "data": {"paths": args.data, "targets": args.target, "split_seed": getattr(args, "seed", None)},
    }
    return load_run_config(args.config, overrides)


def _seed_list(args: argparse.Namespace, run_config: RunConfig) -> list[int]:
    """Зёрна для усреднения: --seeds > --seed > список seeds из конфигурации."""
    if getattr(args, "seeds", None):
        try:
            seeds = [int(s) for s in args.seeds.split(",") if s.strip()]
        except ValueError:
            seeds = []
        if not seeds:
            msg = f"--seeds ожидает целые числа через запятую, получено '{args.seeds}'"
            raise InputError(msg)
        return seeds
    if args.seed is not None:
        return [args.seed]
    return list(run_config.training.seeds)


def _out_dir(args: argparse.Namespace, run_config: RunConfig) -> Path:
    path = Path(args.out) if args.out else Path(run_config.runs_dir) / args.command
    path.mkdir(parents=True, exist_ok=True)
    return path


def _load(run_config: RunConfig) -> Dataset:
    dataset = load_dataset(run_config.data_paths, run_config.split_seed, run_config.ratios)
    print(f"{Fore.CYAN}Загружено примеров: {len(dataset.instances)} из {len(dataset.sources)} источников"
          f"{Style.RESET_ALL}")
    return dataset


def _selected(dataset: Dataset, run_config: RunConfig) -> list:
    if not run_config.targets:
        return dataset.instances
    return [i for i in dataset.instances if i.target.name in run_config.targets]


def _flags(args: argparse.Namespace) -> AblationFlags:
    disabled = [s.strip() for s in (getattr(args, "ablate", None) or "").split(",") if s.strip()]
    unknown = [s for s in disabled if s not in STREAMS]
    if unknown:
        msg = f"Неизвестные слои в --ablate: {', '.join(unknown)}; доступны: {', '.join(STREAMS)}"
        raise InputError(msg)
    flags = AblationFlags()
    for stream in disabled:
        flags = flags.without(stream)
    return flags


def _provider(args: argparse.Namespace, run_config: RunConfig) -> StubProvider | ChatProvider:
    return StubProvider() if args.stub else ChatProvider(run_config.provider)


def cmd_ingest(args: argparse.Namespace) -> int:
    """Проверяет треды, делит примеры и пишет манифест разбиения."""
    run_config = _run_config(args)
    dataset = _load(run_config)
    print_dataset_summary(dataset)
    path = write_manifest(dataset.split, _out_dir(args, run_config) / "manifest.json", dataset.sources, dataset.skipped)
    print(f"{Fore.GREEN}Манифест сохранён: {path}{Style.RESET_ALL}")
    return 0


def cmd_annotate(args: argparse.Namespace) -> int:
    """Заполняет кэш аннотаций; с --dry-run только считает промпты."""
    run_config = _run_config(args)
    instances = _selected(_load(run_config), run_config)
    flags = _flags(args)

    if args.dry_run:
        total = count_prompts(instances, flags.required_kinds)
        print(f"Промптов для холодного кэша: {Fore.YELLOW}{total}{Style.RESET_ALL} (без вызовов провайдера)")
        return 0

    _, stats = ensure_annotations(
        instances, run_config, flags, provider=_provider(args, run_config), verbose=True
    )
    chains = {tuple(u.text for u in i.chain) for i in instances}
    print_annotation_summary(stats, len(chains))
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    """Обучает модель, сохраняет чекпоинт, историю и отчёт на test."""
    run_config = _run_config(args)
    seeds = _seed_list(args, run_config)
    dataset = _load(run_config)
    instances = _selected(dataset, run_config)
    flags = _flags(args)
    out_dir = _out_dir(args, run_config)

    annotations, _ = ensure_annotations(instances, run_config, flags, provider=_provider(args, run_config))
    wanted = {i.id for i in instances}

    def part(name: str) -> list:
        return [i for i in dataset.part(name) if i.id in wanted]

    result = train(
        run_config, part("train"), part("dev"), annotations,
        flags=flags, checkpoint_path=out_dir / "checkpoint.pt", verbose=True,
    )
    print_history(result.history)
    save_config(run_config, out_dir, flags=flags.to_dict())
    save_history(result.history, out_dir)
    if not result.history.empty:
        plot_history(result.history, out_dir / "history.png")

    report = evaluate(result.model, part("test"), annotations, metadata={"seed": result.seed, "split": "test"})
    print_report(report)
    save_report(report, out_dir)
    save_report_to_md(report, out_dir / "report.md", sources=dataset.sources, history=result.history)

    if args.seeds or len(seeds) > 1:
        summary = run_seeds(
            lambda seed: run_in_target(
                run_config, dataset, annotations, targets=run_config.targets or None, flags=flags, seed=seed, joint=True
            ).report.macro_f_avg,
            seeds,
        )
        print_seed_summary(summary)
        summary.to_csv(out_dir / "seeds.csv")
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    """Оценивает сохранённый чекпоинт на части разбиения."""
    run_config = _run_config(args)
    out_dir = _out_dir(args, run_config)
    checkpoint = Path(args.checkpoint) if args.checkpoint else out_dir / "checkpoint.pt"
    if not checkpoint.exists():
        msg = f"Чекпоинт {checkpoint} не найден"
        raise InputError(msg)

    model, payload = load_checkpoint(checkpoint, expected_config_hash(run_config))
    dataset = _load(run_config)
    wanted = {i.id for i in _selected(dataset, run_config)}
    instances = [i for i in dataset.part(args.split) if i.id in wanted]
    annotations, _ = ensure_annotations(instances, run_config, model.flags, provider=_provider(args, run_config))

    report = evaluate(model, instances, annotations, metadata={"seed": payload["seed"], "split": args.split})
    print_report(report)
    save_report(report, out_dir)
    save_report_to_md(report, out_dir / "report.md", sources=dataset.sources)
    return 0


def cmd_ablate(args: argparse.Namespace) -> int:
    """Полная модель и четыре варианта без одного слоя знаний."""
    run_config = _run_config(args)
    seeds = _seed_list(args, run_config)
    dataset = _load(run_config)
    out_dir = _out_dir(args, run_config)
    cache = AnnotationCache(run_config.provider.cache_path)
    results = {}

    def one(seed: int) -> dict[str, float]:
        result = run_ablation(
            run_config, dataset, provider=_provider(args, run_config), cache=cache,
            targets=run_config.targets or None, seed=seed, joint=args.joint, verbose=True,
        )
        results[seed] = result
        return {"Full": result.base_f_avg, **dict(zip(result.table["variant"], result.table["f_avg"], strict=True))}

    summary = run_seeds(one, seeds)
    result = results[seeds[0]]
    print_ablation(result)
    save_config(run_config, out_dir, seeds=seeds)
    result.table.to_csv(out_dir / "ablation.csv", index=False)
    save_report(result.base_report, out_dir)
    save_report_to_md(result.base_report, out_dir / "report.md", sources=dataset.sources, ablation=result)
    if len(seeds) > 1:
        print_seed_summary(summary)
        summary.to_csv(out_dir / "seeds.csv")
    return 0


def cmd_crosstarget(args: argparse.Namespace) -> int:
    """Перенос между целями по списку пар (по умолчанию двенадцать стандартных)."""
    pairs = parse_pairs(args.pairs)
    if args.dry_run:
        for source, dest in pairs:
            print(f"{pair_label(source, dest):<8} {source} → {dest}")
        print(f"Пар: {len(pairs)}")
        return 0

    run_config = _run_config(args)
    seeds = _seed_list(args, run_config)
    dataset = _load(run_config)
    out_dir = _out_dir(args, run_config)
    wanted = {name for pair in pairs for name in pair}
    instances = [i for i in dataset.instances if i.target.name in wanted]
    annotations, _ = ensure_annotations(instances, run_config, provider=_provider(args, run_config))
    tables = {}

    def one(seed: int) -> dict[str, float]:
        tables[seed] = run_cross_targets(run_config, dataset, pairs, annotations, seed=seed, verbose=True)
        return dict(zip(tables[seed]["pair"], tables[seed]["f_avg"], strict=True))

    summary = run_seeds(one, seeds)
    table = tables[seeds[0]]
    print_cross_target(table)
    save_config(run_config, out_dir, pairs=[list(p) for p in pairs], seeds=seeds)
    table.to_csv(out_dir / "crosstarget.csv", index=False)
    if len(seeds) > 1:
        print_seed_summary(summary)
        summary.to_csv(out_dir / "seeds.csv")
    return 0


def cmd_report(args: argparse.Namespace) -> int:
    """Условные распределения связей при позиции: таблицы, CSV и тепловая карта."""
    run_config = _run_config(args)
    instances = _selected(_load(run_config), run_config)
    out_dir = _out_dir(args, run_config)
    annotations, _ = ensure_annotations(instances, run_config, provider=_provider(args, run_config))

    tables = relation_stance_heatmap(instances, annotations)
    print_heatmaps(tables)
    write_heatmap_csv(tables, out_dir)
    plot_heatmaps(tables, out_dir / "heatmaps.png")
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--data", nargs="+", help="JSONL-файлы, папки или manifest.json")
    common.add_argument("--target", nargs="+", help="Имена целей (по умолчанию все)")
    common.add_argument("--config", help="Путь к INI-файлу конфигурации")
    common.add_argument("--seed", type=int, help="Зерно разбиения и обучения")
    common.add_argument("--out", help="Папка результатов (по умолчанию runs/<команда>)")
    common.add_argument("--stub", action="store_true", help="Заглушечный провайдер без сети")
    common.add_argument("--encoder", choices=["hash", "transformer"], help="Энкодер предложений")

    training = argparse.ArgumentParser(add_help=False)
    training.add_argument("--epochs", type=int, help="Максимум эпох")
    training.add_argument("--lr", type=float, help="Скорость обучения")
    training.add_argument("--seeds", help="Зёрна для mean ± std через запятую (по умолчанию seeds из конфигурации)")

    parser = argparse.ArgumentParser(prog="main.py", description=f"{__app_name__} v{__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", parents=[common], help="Проверить треды и записать манифест разбиения")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("annotate", parents=[common], help="Получить связи и акты от языковой модели")
    p.add_argument("--dry-run", action="store_true", help="Только посчитать промпты")
    p.add_argument("--ablate", help="Отключённые слои через запятую: " + ",".join(STREAMS))
    p.set_defaults(func=cmd_annotate)

    p = sub.add_parser("train", parents=[common, training], help="Обучить модель")
    p.add_argument("--ablate", help="Отключённые слои через запятую: " + ",".join(STREAMS))
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", parents=[common], help="Оценить чекпоинт")
    p.add_argument("--checkpoint", help="Путь к чекпоинту (по умолчанию <out>/checkpoint.pt)")
    p.add_argument("--split", choices=["train", "dev", "test"], default="test")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", parents=[common, training], help="Абляция четырёх слоёв знаний")
    p.add_argument("--joint", action="store_true", help="Одна модель на все цели")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("crosstarget", parents=[common, training], help="Перенос между целями")
    p.add_argument("--pairs", default="table9", help="table9 (или standard) или список вида DT->JB,BC->TS")
    p.add_argument("--dry-run", action="store_true", help="Только перечислить пары")
    p.set_defaults(func=cmd_crosstarget)

    p = sub.add_parser("report", parents=[common], help="Тепловые карты связей при позиции")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    """Разбирает аргументы и запускает команду; код выхода берётся из класса ошибки."""
    args = build_parser().parse_args(argv)
    print(f"{Fore.CYAN}{__app_name__}{Style.RESET_ALL} {Fore.YELLOW}v{__version__}{Style.RESET_ALL}")
    try:
        return args.func(args)
    except StanceError as e:
        print(f"{Fore.RED}Ошибка: {e}{Style.RESET_ALL}", file=sys.stderr)
        return e.exit_code


if __name__ == "__main__":
    sys.exit(main())
