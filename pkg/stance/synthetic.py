"""
Синтетические корпуса для проверок без внешних данных.

Разделимый корпус построен так, что позицию реплики определяет ключевое
слово в ней самой, а реплики AGAINST содержат маркеры отрицания: поэтому
заглушечный провайдер выдаёт связи, согласованные с метками.
"""

import numpy as np

from stance.data_processor import ConversationThread, Stance, Target, TargetKind, Utterance

SPECIFIC_TARGETS = ("Bitcoin", "Tesla", "SpaceX", "Biden", "Trump")

# Длины веток повторяют форму распределения глубин: 3–5 чаще всего, 1 и 8 редко
CHAIN_LENGTHS = (1, 2, 3, 3, 4, 4, 4, 5, 5, 6, 6, 7, 8, 2, 3, 4, 5, 6)

_TEMPLATES = {
    Stance.FAVOR: (
        "brilliant brilliant, {topic} is brilliant and I love it",
        "great great news about {topic}, love it",
        "{topic} looks brilliant, great work",
    ),
    Stance.AGAINST: (
        "No, {topic} is terrible terrible and awful",
        "not convinced, {topic} is awful, terrible idea",
        "never trust {topic}, awful awful",
    ),
    Stance.NONE: (
        "what is the weather like, {topic} lunch maybe",
        "maybe later, weather first, then lunch",
        "lunch weather maybe, no idea about {topic}",
    ),
}

SPACEX_CASE_STUDY = (
    ("post", None, Stance.AGAINST, "SpaceX giant rocket explodes minutes after launch from Texas."),
    ("c1", "post", Stance.FAVOR,
     "Understand that when it blew up, the people that built it cheered loudly. Because everything after this "
     "thing lighting engines and clearing the pad was a bonus. They now have test data. This was one of many "
     "possible “successful” outcomes."),
    ("c2", "c1", Stance.AGAINST,
     "How it is successful? They wanted a trip around the globe. It landed in the Gulf of Mexico. "
     "It was launched from Texas."),
    ("c3", "c2", Stance.FAVOR,
     "They wanted a trip around the globe. The main goal was to learn, which is what testing is for. "
     "That goal was achieved. That is the success."),
    ("c4", "c3", Stance.AGAINST, "Marketing is one hell of a thing, ain’t it?"),
    ("c5", "c4", Stance.FAVOR,
     "Not understanding how an iterative testing process works is a hell of a thing ain’t it?"),
    ("c6", "c5", Stance.AGAINST,
     "Just keep lowering the bar and you’ll eventually be able to call having a rocket at all a success. "
     "Don’t confuse learning experience with “success”. A success is what happens when you reach "
     "your final goal."),
)


def spacex_case_study() -> ConversationThread:
    """Тред из разбора примера про взрыв ракеты SpaceX: семь реплик одной ветки."""
    utterances = tuple(
        Utterance(id=uid, parent_id=parent, author=f"user_{k}", text=text, depth=k + 1, stance=stance)
        for k, (uid, parent, stance, text) in enumerate(SPACEX_CASE_STUDY)
    )
    target = Target(name="SpaceX", kind=TargetKind.SPECIFIC, target_text="SpaceX")
    return ConversationThread(thread_id="spacex-case-study", target=target, utterances=utterances)


def make_separable_corpus(n_threads: int = 60, seed: int = 0) -> list[ConversationThread]:
    """
    Строит разделимый корпус тредов.

    Args:
        n_threads: Число тредов; цели чередуются по пяти конкретным целям.
        seed: Зерно генератора меток и шаблонов.

    Returns:
        Список тредов глубиной от 1 до 8; у каждого четвёртого треда
        длиной от трёх реплик есть боковая ветка от поста.

    """
    rng = np.random.default_rng(seed)
    stances = list(Stance)
    threads = []
    for k in range(n_threads):
        target_name = SPECIFIC_TARGETS[k % len(SPECIFIC_TARGETS)]
        length = CHAIN_LENGTHS[k % len(CHAIN_LENGTHS)]

        utterances = []
        parent = None
        for depth in range(1, length + 1):
            uid = "post" if depth == 1 else f"c{depth - 1}"
            utterances.append(_utterance(rng, stances, uid, parent, depth, target_name))
            parent = uid

        if length >= 3 and k % 4 == 0:  # noqa: PLR2004
            utterances.append(_utterance(rng, stances, "side", "post", 2, target_name))

        target = Target(name=target_name, kind=TargetKind.SPECIFIC, target_text=target_name)
        threads.append(ConversationThread(thread_id=f"synthetic-{k:03d}", target=target, utterances=tuple(utterances)))
    return threads


def _utterance(
    rng: np.random.Generator, stances: list[Stance], uid: str, parent: str | None, depth: int, topic: str
) -> Utterance:
    stance = stances[int(rng.integers(len(stances)))]
    templates = _TEMPLATES[stance]
    text = templates[int(rng.integers(len(templates)))].format(topic=topic)
    return Utterance(
        id=uid, parent_id=parent, author=f"user_{int(rng.integers(1000))}", text=text, depth=depth, stance=stance
    )
