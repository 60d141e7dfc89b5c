from unittest.mock import MagicMock, patch

import pytest
import requests
from hypothesis import given, settings
from hypothesis import strategies as st

from stance.config import ProviderConfig
from stance.data_processor import Utterance, make_instances, parse_thread
from stance.errors import ProviderError
from stance.kam import (
    AnnotationCache,
    AnnotationStats,
    ChatProvider,
    ConversationAct,
    LogicalRelation,
    PromptText,
    RelationAnnotations,
    RelationKind,
    StubProvider,
    annotate_chain,
    annotate_instances,
    build_prompt,
    chain_key,
    count_prompts,
    parse_relation,
    render_chain,
)
from stance.synthetic import make_separable_corpus

BOTH = (RelationKind.LOGICAL, RelationKind.ACT)


def _chain(*texts):
    utterances = []
    parent = None
    for k, text in enumerate(texts):
        uid = f"u{k}"
        utterances.append(Utterance(id=uid, parent_id=parent, author="a", text=text, depth=k + 1))
        parent = uid
    return tuple(utterances)


class ScriptedProvider:
    """Провайдер, отвечающий по списку заготовленных ответов."""

    provider_id = "scripted"

    def __init__(self, replies):
        self.replies = list(replies)
        self.prompts = []

    def complete(self, prompt):
        self.prompts.append(prompt)
        return self.replies.pop(0)


def test_render_chain():
    """Ветка рендерится как Post, затем Comment 1, Comment 2…"""
    rendered = render_chain(_chain("root text", "first", "second"))
    assert rendered.splitlines() == ["Post: root text", "Comment 1: first", "Comment 2: second"]


def test_build_prompt_fragments():
    """Промпт содержит описание треда, вопрос и полный список меток."""
    chain = _chain("p", "c1", "c2")
    logical = build_prompt(chain, 2, RelationKind.LOGICAL).text
    act = build_prompt(chain, 3, RelationKind.ACT).text

    assert '"Post" content is considered a post on social media' in logical
    assert "Please analyze the relations between each post and comment" in logical
    assert "logical relation between Comment 1 and Post" in logical
    assert "Comment 2: c2" in logical
    assert "[contrastive, succession, causal, summary]" in logical
    assert "unknown" not in logical
    assert "conversation act between Comment 2 and Comment 1" in act
    assert "[summarize, suggestion, disagreement, agreement, refusal, question, clarification, other]" in act


@pytest.mark.parametrize("i", [1, 4])
def test_build_prompt_out_of_range(i):
    """Позиция вне 2..n: ошибка индекса."""
    with pytest.raises(IndexError):
        build_prompt(_chain("p", "c1", "c2"), i, RelationKind.LOGICAL)


_prompt_chains = st.lists(st.text(alphabet="abc ", min_size=1, max_size=6), min_size=2, max_size=5)


@st.composite
def _prompt_keys(draw):
    texts = tuple(draw(_prompt_chains))
    i = draw(st.integers(min_value=2, max_value=len(texts)))
    return texts, i, draw(st.sampled_from(list(RelationKind)))


@settings(max_examples=80, deadline=None)
@given(_prompt_keys(), _prompt_keys())
def test_build_prompt_is_injective(first, second):
    """Разные (цепочка, i, вид) дают разные промпты, одинаковые: одинаковые."""
    prompts = [build_prompt(_chain(*texts), i, kind).text for texts, i, kind in (first, second)]
    assert (prompts[0] == prompts[1]) == (first == second)


@pytest.mark.parametrize(
    ("raw", "kind", "expected"),
    [
        ("The relation is Contrastive.", RelationKind.LOGICAL, LogicalRelation.CONTRASTIVE),
        ("CAUSAL", RelationKind.LOGICAL, LogicalRelation.CAUSAL),
        ("causal, or maybe succession", RelationKind.LOGICAL, LogicalRelation.SUCCESSION),
        ("This is a disagreement.", RelationKind.ACT, ConversationAct.DISAGREEMENT),
        ("Agreement, or summarize", RelationKind.ACT, ConversationAct.AGREEMENT),
        ("I cannot tell", RelationKind.LOGICAL, LogicalRelation.UNKNOWN),
        ("I cannot tell", RelationKind.ACT, ConversationAct.OTHER),
    ],
)
def test_parse_relation(raw, kind, expected):
    """Самая длинная метка выигрывает, при равной длине: самая ранняя; иначе запасная."""
    assert parse_relation(raw, kind) is expected


def test_stub_provider_follows_negation():
    """Заглушка: отрицание: contrastive/disagreement, иначе succession/agreement."""
    stub = StubProvider()
    chain = _chain("Tesla is great", "No way, it's bad", "love it")
    annotations = annotate_chain(chain, stub, AnnotationCache())

    assert annotations.pairs[0].logical is LogicalRelation.CONTRASTIVE
    assert annotations.pairs[0].act is ConversationAct.DISAGREEMENT
    assert annotations.pairs[1].logical is LogicalRelation.SUCCESSION
    assert annotations.pairs[1].act is ConversationAct.AGREEMENT
    assert annotations.chain_key == chain_key(chain)
    assert annotations.provider_id == "stub"


def test_cold_then_warm_cache(tmp_path):
    """Цепочка из 4 реплик: 6 вызовов на холодном кэше, 0 на тёплом, в том числе после перезапуска."""
    chain = _chain("post", "c1", "no c2", "c3")
    path = tmp_path / "cache.jsonl"
    stub = StubProvider()
    cache = AnnotationCache(path)

    first = annotate_chain(chain, stub, cache, BOTH)
    assert stub.calls == 6
    second = annotate_chain(chain, stub, cache, BOTH)
    assert stub.calls == 6
    assert first == second

    fresh = StubProvider()
    stats = AnnotationStats()
    reloaded = annotate_chain(chain, fresh, AnnotationCache(path), BOTH, stats=stats)
    assert fresh.calls == 0
    assert reloaded == first
    assert stats.hits == 6
    assert stats.hit_rate == 1.0


def test_single_kind_requests(tmp_path):
    """Запрошенный один вид связей: вопросов о другом нет."""
    stub = StubProvider()
    annotations = annotate_chain(_chain("p", "a", "b", "c"), stub, AnnotationCache(), (RelationKind.LOGICAL,))

    assert stub.calls == 3
    assert all(p.act is None for p in annotations.pairs)
    assert all(p.logical is not None for p in annotations.pairs)


def test_single_utterance_chain_needs_no_prompts():
    """Цепочка из одного поста не порождает вопросов."""
    stub = StubProvider()
    annotations = annotate_chain(_chain("post"), stub, AnnotationCache())
    assert annotations.pairs == ()
    assert stub.calls == 0


def test_unparseable_reply_retried_once():
    """Неразборчивый ответ: один повтор с уточнением, затем запасная метка."""
    provider = ScriptedProvider(["hmm", "succession"])
    annotations = annotate_chain(_chain("p", "c"), provider, AnnotationCache(), (RelationKind.LOGICAL,))

    assert annotations.pairs[0].logical is LogicalRelation.SUCCESSION
    assert len(provider.prompts) == 2
    assert provider.prompts[1].messages[-1][1] == "Answer with exactly one label."

    provider = ScriptedProvider(["hmm", "still nothing"])
    annotations = annotate_chain(_chain("p", "c"), provider, AnnotationCache(), (RelationKind.LOGICAL,))
    assert annotations.pairs[0].logical is LogicalRelation.UNKNOWN


def test_provider_error_keeps_completed_pairs(tmp_path):
    """Ошибка провайдера пробрасывается, но успешные ответы уже в кэше."""

    class FailingProvider(StubProvider):
        def complete(self, prompt):
            if "between Comment 2 and" in prompt.text:
                msg = "недоступен"
                raise ProviderError(msg)
            return super().complete(prompt)

    cache = AnnotationCache(tmp_path / "cache.jsonl")
    with pytest.raises(ProviderError):
        annotate_chain(_chain("p", "a", "b", "c"), FailingProvider(), cache, BOTH)

    assert len(cache) == 4
    assert len(AnnotationCache(tmp_path / "cache.jsonl")) == 4


def test_cache_skips_truncated_line(tmp_path):
    """Оборванная последняя строка кэша игнорируется."""
    path = tmp_path / "cache.jsonl"
    cache = AnnotationCache(path)
    cache.put("k1", RelationKind.LOGICAL, "causal", LogicalRelation.CAUSAL, "stub")
    with path.open("a", encoding="utf-8") as f:
        f.write('{"key": "k2", "ki')

    reloaded = AnnotationCache(path)
    assert len(reloaded) == 1
    assert reloaded.get("k1")["parsed"] == "causal"


def test_concurrent_annotation_matches_sequential():
    """Параллельные запросы дают те же аннотации, что и последовательные."""
    chain = _chain("post", "no", "yes", "never", "ok", "fine")
    sequential = annotate_chain(chain, StubProvider(), AnnotationCache(), BOTH, max_in_flight=1)
    parallel = annotate_chain(chain, StubProvider(), AnnotationCache(), BOTH, max_in_flight=4)
    assert sequential == parallel


def test_model_change_invalidates_cache():
    """Смена модели провайдера не использует чужие записи кэша."""
    chain = _chain("p", "c")
    cache = AnnotationCache()
    annotate_chain(chain, StubProvider(), cache, BOTH)

    other = ScriptedProvider(["causal", "question"])
    annotations = annotate_chain(chain, other, cache, BOTH)
    assert len(other.prompts) == 2
    assert annotations.pairs[0].logical is LogicalRelation.CAUSAL


def test_annotate_instances_deduplicates_chains():
    """Общие цепочки аннотируются один раз; число вызовов равно 2·Σ(n−1)."""
    threads = make_separable_corpus(10, seed=3)
    instances = [i for t in threads for i in make_instances(t)]
    stub = StubProvider()

    annotations, stats = annotate_instances(instances, stub, AnnotationCache(), BOTH)

    assert set(annotations) == {chain_key(i.chain) for i in instances}
    assert stats.calls == stub.calls == count_prompts(instances, BOTH)


def test_count_prompts_for_dry_run():
    """Холодный прогон требует 2·Σ(n−1) промптов по различным цепочкам."""
    record = {
        "thread_id": "t",
        "target": {"name": "Tesla", "kind": "specific"},
        "utterances": [
            {"id": "p", "parent_id": None, "author": "a", "text": "post", "stance": "none"},
            {"id": "c1", "parent_id": "p", "author": "b", "text": "one", "stance": "favor"},
            {"id": "c2", "parent_id": "c1", "author": "c", "text": "two", "stance": "against"},
            {"id": "s", "parent_id": "p", "author": "d", "text": "side", "stance": "favor"},
        ],
    }
    instances = make_instances(parse_thread(record))

    assert count_prompts(instances, BOTH) == 2 * (0 + 1 + 2 + 1)
    assert count_prompts(instances + instances, BOTH) == 8
    assert count_prompts(instances, (RelationKind.ACT,)) == 4


def test_relation_annotations_dict_roundtrip():
    """Аннотации сериализуются в словарь и обратно."""
    annotations = annotate_chain(_chain("p", "no", "ok"), StubProvider(), AnnotationCache())
    assert RelationAnnotations.from_dict(annotations.to_dict()) == annotations


@pytest.fixture
def provider_config():
    return ProviderConfig(endpoint="http://llm.example/v1", model="m", api_key="k", max_retries=2)


@patch("stance.kam.requests.post")
def test_chat_provider_success(mock_post, provider_config):
    """Чат-провайдер отправляет сообщения и возвращает текст ответа."""
    response = MagicMock()
    response.json.return_value = {"choices": [{"message": {"content": "causal"}}]}
    mock_post.return_value = response

    reply = ChatProvider(provider_config, backoff=0).complete(PromptText(messages=(("user", "hi"),)))

    assert reply == "causal"
    url = mock_post.call_args.args[0]
    kwargs = mock_post.call_args.kwargs
    assert url == "http://llm.example/v1/chat/completions"
    assert kwargs["headers"]["Authorization"] == "Bearer k"
    assert kwargs["json"]["messages"] == [{"role": "user", "content": "hi"}]
    assert kwargs["json"]["temperature"] == 0.0


@patch("stance.kam.requests.post", side_effect=requests.ConnectionError("down"))
def test_chat_provider_retries_then_fails(mock_post, provider_config):
    """После исчерпания повторов: ProviderError."""
    with pytest.raises(ProviderError):
        ChatProvider(provider_config, backoff=0).complete(PromptText(messages=(("user", "hi"),)))
    assert mock_post.call_count == 3


@patch("stance.kam.requests.post")
def test_chat_provider_without_endpoint(mock_post):
    """Без адреса провайдер отказывает, не делая запросов."""
    with pytest.raises(ProviderError):
        ChatProvider(ProviderConfig()).complete(PromptText(messages=(("user", "hi"),)))
    mock_post.assert_not_called()
