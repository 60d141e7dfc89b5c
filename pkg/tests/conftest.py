import matplotlib

matplotlib.use("Agg")

import pytest  # noqa: E402

from stance.config import ModelConfig, ProviderConfig, RunConfig, TrainConfig  # noqa: E402
from stance.data_processor import Dataset, make_instances, split_dataset  # noqa: E402
from stance.kam import AnnotationCache, StubProvider, annotate_instances  # noqa: E402
from stance.synthetic import make_separable_corpus  # noqa: E402


@pytest.fixture
def tiny_config(tmp_path):
    """Маленькая конфигурация: hash-энкодер D=8, две эпохи, кэш во временной папке."""
    return RunConfig(
        model=ModelConfig(hidden_size=8, hops=2),
        training=TrainConfig(learning_rate=1e-2, batch_size=8, max_epochs=2, patience=2, seed=3),
        provider=ProviderConfig(cache_path=str(tmp_path / "kam_cache.jsonl"), max_in_flight=1),
        runs_dir=str(tmp_path / "runs"),
    )


@pytest.fixture
def synthetic_dataset():
    """Разделимый корпус из 20 тредов по пяти целям с разбиением 65/15/20."""
    threads = make_separable_corpus(20, seed=1)
    instances = [i for thread in threads for i in make_instances(thread)]
    return Dataset(instances=instances, split=split_dataset(instances, seed=7), sources=["synthetic"])


@pytest.fixture
def stub_annotations(synthetic_dataset):
    """Аннотации всех цепочек корпуса от заглушечного провайдера."""
    annotations, _ = annotate_instances(synthetic_dataset.instances, StubProvider(), AnnotationCache())
    return annotations
