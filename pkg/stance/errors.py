"""
Иерархия исключений конвейера.

Каждый класс знает свой код выхода для CLI: 2: ошибка входных данных,
3: ошибка провайдера, 4: расхождение обучения.
"""

from pathlib import Path


class StanceError(Exception):
    """Базовое исключение проекта."""

    exit_code = 1


class InputError(StanceError, ValueError):
    """Некорректные входные данные или конфигурация."""

    exit_code = 2


class SchemaError(InputError):
    """Запись не соответствует JSONL-схеме треда."""

    def __init__(self, message: str, *, path: Path | str | None = None, line: int | None = None) -> None:
        self.path = path
        self.line = line
        super().__init__(message)

    def __str__(self) -> str:
        message = super().__str__()
        if self.path is not None and self.line is not None:
            return f"{self.path}:{self.line}: {message}"
        return message


class StructureError(SchemaError):
    """Тред не образует дерево: цикл, сирота, несколько корней, повтор id."""


class TooFewInstancesError(InputError):
    """У цели слишком мало примеров для разбиения 65/15/20."""


class DepthOutOfRangeError(InputError):
    """Глубина не попадает ни в одну корзину таблицы глубин."""


class MissingAnnotationError(InputError):
    """Для пары реплик нет аннотации нужного вида."""


class SequenceOverflowError(InputError):
    """Одна реплика с целью не помещается в окно энкодера."""


class LengthMismatchError(InputError):
    """Последовательности предсказаний и эталонов разной длины."""


class UnknownTargetError(InputError):
    """Цель отсутствует в данных."""


class IncompatibleCheckpointError(InputError):
    """Чекпоинт обучен с другой предобработкой."""


class ConfigError(InputError):
    """Значение конфигурации нарушает инварианты модели."""


class ProviderError(StanceError):
    """Провайдер языковой модели недоступен после всех повторов."""

    exit_code = 3


class DivergenceError(StanceError):
    """Функция потерь стала нечисловой (nan/inf)."""

    exit_code = 4


class EncoderFailure(StanceError, RuntimeError):  # noqa: N818
    """Энкодер не смог обработать последовательность."""
