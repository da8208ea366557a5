import numpy as np
import pytest

from topicensemble.annotator import (
    Decoding,
    ModelBackend,
    ResponseCache,
    annotate_corpus,
    build_prompt,
    parse_response,
    query_backend,
)
from topicensemble.corpus import TextItem, Topic, TopicSet
from topicensemble.errors import (
    BackendUnavailable,
    BadStatus,
    FailureBudgetExceeded,
    Unparseable,
)
from topicensemble.stubserver import format_response


@pytest.fixture
def survey_topics():
    return TopicSet(
        (
            Topic("workload", "Heavy workload, feeling overloaded with tasks and deadlines."),
            Topic("commute", "Long or stressful commute. Must relate to travel time."),
        )
    )


# ------------------------------------------------------------------ prompt

def test_build_prompt_exact(two_topics):
    item = TextItem("t1", "I lie awake all night.")
    expected = (
        "Does the paragraph mention any of the following topics:\n"
        "(1) sleep: Sleep problems, trouble falling asleep or staying asleep.\n"
        "(2) appetite: Appetite changes, eating more or less than usual.\n"
        "Return answer in format:\n"
        "(1) sleep: [yes/no], related phrases if any:\n"
        "(2) appetite: [yes/no], related phrases if any:\n"
        "Paragraph: `I lie awake all night.`"
    )
    assert build_prompt(two_topics, item) == expected


def test_build_prompt_single_topic():
    topics = TopicSet((Topic("focus", "Trouble concentrating."),))
    prompt = build_prompt(topics, TextItem("a", "text"))
    assert "(1) focus: Trouble concentrating.\n" in prompt
    assert "(2)" not in prompt


def test_build_prompt_fifteen_topics_in_order():
    names = [f"topic{i:02d}" for i in range(15)]
    topics = TopicSet(tuple(Topic(n, f"Description {n}.") for n in names))
    prompt = build_prompt(topics, TextItem("a", "text"))
    positions = [prompt.index(f"({k}) {n}:") for k, n in enumerate(names, 1)]
    assert positions == sorted(positions)


def test_build_prompt_pure(two_topics):
    item = TextItem("t1", "Same text.")
    assert build_prompt(two_topics, item) == build_prompt(two_topics, item)


def test_build_prompt_adds_single_period():
    topics = TopicSet((Topic("a", "No trailing period"), Topic("b", "Has one.")))
    prompt = build_prompt(topics, TextItem("x", "text"))
    assert "(1) a: No trailing period.\n" in prompt
    assert "(2) b: Has one.\n" in prompt
    assert ".." not in prompt


def test_build_prompt_enumerates_subtopics(nested_topics):
    prompt = build_prompt(nested_topics, TextItem("x", "text"))
    assert "(1) friction_blame:" in prompt
    assert "(2) friction_dismiss:" in prompt
    assert "(3) sleep:" in prompt
    assert "(1) friction:" not in prompt


# ------------------------------------------------------------------- parse

def test_parse_inline_multi_topic_response(survey_topics):
    content = (
        "(1) workload: yes, related phrases: 'staying late at the office every "
        "night', 'never a moment to catch up' (2) commute: yes, related "
        "phrases: 'two hours on the train'"
    )
    anns = parse_response(content, survey_topics)
    assert anns[0].label is True
    assert anns[0].phrases == (
        "staying late at the office every night",
        "never a moment to catch up",
    )
    assert anns[1].label is True
    assert anns[1].phrases == ("two hours on the train",)
    assert not anns[0].parse_warning


def test_parse_all_negative():
    topics = TopicSet((Topic("focus", "Trouble concentrating."), Topic("noise", "Noisy environment.")))
    anns = parse_response("(1) focus: no (2) noise: no", topics)
    assert [a.label for a in anns] == [False, False]
    assert all(a.phrases == () for a in anns)
    assert not any(a.parse_warning for a in anns)


def test_parse_refusal_unparseable(two_topics):
    with pytest.raises(Unparseable):
        parse_response("I cannot help with this request.", two_topics)


def test_parse_label_variants(two_topics):
    anns = parse_response("(1) sleep: [yes] (2) appetite: No.", two_topics)
    assert anns[0].label is True
    assert anns[1].label is False
    anns = parse_response("(1) sleep: Yes. (2) appetite: [no]", two_topics)
    assert anns[0].label is True
    assert anns[1].label is False


def test_parse_missing_topic_gets_warning(two_topics):
    anns = parse_response("(1) sleep: yes, related phrases: 'no rest'", two_topics)
    assert anns[0].label is True
    assert anns[1].label is False
    assert anns[1].parse_warning


def test_parse_unanswerable_token_conservative(two_topics):
    anns = parse_response("(1) sleep: maybe (2) appetite: no", two_topics)
    assert anns[0].label is False
    assert anns[0].parse_warning


def test_parse_yes_no_echo_is_unanswered(two_topics):
    anns = parse_response(
        "(1) sleep: [yes/no], related phrases if any: (2) appetite: no", two_topics
    )
    assert anns[0].label is False
    assert anns[0].parse_warning


def test_parse_prefers_answer_after_prompt_echo(two_topics):
    item = TextItem("t", "Cannot sleep, cannot eat.")
    echo = build_prompt(two_topics, item)
    content = echo + "\n(1) sleep: yes, related phrases: 'cannot sleep'\n(2) appetite: yes, related phrases: 'cannot eat'"
    anns = parse_response(content, two_topics)
    assert [a.label for a in anns] == [True, True]
    assert anns[0].phrases == ("cannot sleep",)


def test_parse_unquoted_comma_phrases(two_topics):
    anns = parse_response(
        "(1) sleep: yes, related phrases: tossing all night, cannot rest\n"
        "(2) appetite: no",
        two_topics,
    )
    assert anns[0].phrases == ("tossing all night", "cannot rest")


def test_parse_none_placeholder_dropped(two_topics):
    anns = parse_response(
        "(1) sleep: yes, related phrases: none (2) appetite: no", two_topics
    )
    assert anns[0].label is True
    assert anns[0].phrases == ()


def test_parse_phrases_on_negative_label_kept(two_topics):
    anns = parse_response(
        "(1) sleep: no, related phrases: 'sleeping fine' (2) appetite: no",
        two_topics,
    )
    assert anns[0].label is False
    assert anns[0].phrases == ("sleeping fine",)


def test_parse_round_trip_canonical_format(two_topics):
    rng = np.random.default_rng(17)
    words = ["rest", "hunger strikes", "tired, again", "eating less", "up at 3am"]
    for _ in range(100):
        answers = []
        for topic in two_topics:
            label = bool(rng.random() < 0.5)
            phrases = []
            if label:
                count = int(rng.integers(0, 3))
                phrases = list(rng.choice(words, size=count, replace=False))
            answers.append((topic.short_name, label, phrases))
        content = format_response(answers)
        anns = parse_response(content, two_topics)
        for ann, (name, label, phrases) in zip(anns, answers):
            assert ann.topic == name
            assert ann.label is label
            if label:
                assert list(ann.phrases) == phrases


# ----------------------------------------------------------- query + cache

def chat_doc(entries):
    return {"dimension": 2, "chat": entries, "embeddings": {}}


def backend_for(server, name="m1", temperature=0.0):
    return ModelBackend(
        name=name,
        endpoint=server.chat_url,
        decoding=Decoding(temperature=temperature, max_tokens=64),
    )


def test_query_backend_cache_round_trip(tmp_path, stub_server):
    server = stub_server(chat_doc([{"model": "m1", "prompt": "hello", "response": "(1) x: no"}]))
    cache = ResponseCache(tmp_path)
    backend = backend_for(server)
    first = query_backend(backend, "hello", cache)
    assert first.content == "(1) x: no"
    assert first.from_cache is False
    second = query_backend(backend, "hello", cache)
    assert second.from_cache is True
    assert second.content == first.content
    assert second.retrieved_at == first.retrieved_at
    assert server.call_count == 1


def test_query_backend_distinct_decoding_distinct_keys(tmp_path, stub_server):
    server = stub_server(chat_doc([{"model": "m1", "prompt": "hello", "response": "ok"}]))
    cache = ResponseCache(tmp_path)
    query_backend(backend_for(server, temperature=0.0), "hello", cache)
    query_backend(backend_for(server, temperature=0.5), "hello", cache)
    stored = list((tmp_path / "m1").glob("*.json"))
    assert len(stored) == 2
    assert server.call_count == 2


def test_query_backend_unreachable(tmp_path):
    backend = ModelBackend(name="m1", endpoint="http://127.0.0.1:9/v1/chat/completions")
    with pytest.raises(BackendUnavailable):
        query_backend(
            backend, "hello", ResponseCache(tmp_path), retries=2, backoff=0.01
        )


def test_query_backend_bad_status_not_retried(tmp_path, stub_server):
    server = stub_server(chat_doc([]))
    backend = backend_for(server)
    with pytest.raises(BadStatus) as excinfo:
        query_backend(backend, "unknown prompt", ResponseCache(tmp_path), backoff=0.01)
    assert excinfo.value.status == 404
    assert server.call_count == 1


def test_query_backend_auth_header(tmp_path, stub_server, monkeypatch):
    server = stub_server(chat_doc([{"model": "m1", "prompt": "p", "response": "ok"}]))
    monkeypatch.setenv("STUB_TOKEN", "secret")
    backend = ModelBackend(
        name="m1", endpoint=server.chat_url, auth_env="STUB_TOKEN"
    )
    response = query_backend(backend, "p", ResponseCache(tmp_path))
    assert response.content == "ok"


# --------------------------------------------------------- annotate_corpus

def corpus_two():
    return [
        TextItem("t1", "Cannot sleep and cannot eat.", "g1"),
        TextItem("t2", "All fine here.", "g2"),
    ]


def fixture_for(topics, corpus, models, answer_fn):
    entries = []
    for model in models:
        for item in corpus:
            prompt = build_prompt(topics, item)
            answers = [
                (leaf.short_name, *answer_fn(model, item.id, leaf.short_name))
                for leaf in topics.leaves()
            ]
            entries.append(
                {"model": model, "prompt": prompt, "response": format_response(answers)}
            )
    return entries


def test_annotate_corpus_cardinality(tmp_path, stub_server, two_topics):
    corpus = corpus_two()
    models = ["m1", "m2", "m3"]
    entries = fixture_for(
        two_topics, corpus, models,
        lambda model, tid, topic: (tid == "t1", ["cannot sleep"] if tid == "t1" else []),
    )
    server = stub_server(chat_doc(entries))
    backends = [backend_for(server, name) for name in models]
    cache = ResponseCache(tmp_path)
    matrix = annotate_corpus(corpus, two_topics, backends, cache)
    assert len(matrix) == 12
    assert matrix.get("m1", "t1", "sleep").label is True
    assert matrix.get("m2", "t2", "appetite").label is False

    calls_before = server.call_count
    warm = annotate_corpus(corpus, two_topics, backends, cache)
    assert warm == matrix
    assert server.call_count == calls_before


def test_annotate_corpus_requires_two_backends(tmp_path, stub_server, two_topics):
    server = stub_server(chat_doc([]))
    with pytest.raises(ValueError):
        annotate_corpus(
            corpus_two(), two_topics, [backend_for(server)], ResponseCache(tmp_path)
        )


def test_annotate_corpus_rejects_duplicate_backend_names(tmp_path, stub_server, two_topics):
    server = stub_server(chat_doc([]))
    backends = [backend_for(server, "same"), backend_for(server, "same")]
    with pytest.raises(ValueError):
        annotate_corpus(corpus_two(), two_topics, backends, ResponseCache(tmp_path))


def test_annotate_corpus_subtopic_leaves(tmp_path, stub_server, nested_topics):
    corpus = [TextItem("t1", "Some text.")]
    models = ["m1", "m2"]
    entries = fixture_for(
        nested_topics, corpus, models, lambda model, tid, topic: (False, [])
    )
    server = stub_server(chat_doc(entries))
    backends = [backend_for(server, name) for name in models]
    matrix = annotate_corpus(corpus, nested_topics, backends, ResponseCache(tmp_path))
    assert len(matrix) == 2 * 1 * 3  # leaves: friction_blame, friction_dismiss, sleep
    assert matrix.get("m1", "t1", "friction_blame").label is False


def test_annotate_corpus_retry_with_reminder(tmp_path, stub_server, two_topics):
    corpus = [TextItem("t1", "Cannot sleep.")]
    models = ["m1", "m2"]
    entries = fixture_for(
        two_topics, corpus, models, lambda model, tid, topic: (False, [])
    )
    # m1 answers garbage first, then correctly once reminded
    prompt = build_prompt(two_topics, corpus[0])
    entries = [e for e in entries if e["model"] != "m1" or e["prompt"] != prompt]
    entries.append({"model": "m1", "prompt": prompt, "response": "whatever"})
    entries.append(
        {
            "model": "m1",
            "prompt": prompt + "\nAnswer strictly in the required format.",
            "response": "(1) sleep: yes, related phrases: 'cannot sleep'\n(2) appetite: no",
        }
    )
    server = stub_server(chat_doc(entries))
    backends = [backend_for(server, name) for name in models]
    matrix = annotate_corpus(corpus, two_topics, backends, ResponseCache(tmp_path))
    assert matrix.get("m1", "t1", "sleep").label is True
    assert not matrix.get("m1", "t1", "sleep").parse_warning


def test_annotate_corpus_failure_budget(tmp_path, stub_server, two_topics):
    corpus = [TextItem("t1", "Text one."), TextItem("t2", "Text two.")]
    models = ["m1", "m2"]
    entries = fixture_for(
        two_topics, corpus, models, lambda model, tid, topic: (False, [])
    )
    # m1 is hopeless on t1, including the reminder retry
    prompt = build_prompt(two_topics, corpus[0])
    entries = [e for e in entries if e["model"] != "m1" or e["prompt"] != prompt]
    entries.append({"model": "m1", "prompt": prompt, "response": "gibberish"})
    entries.append(
        {
            "model": "m1",
            "prompt": prompt + "\nAnswer strictly in the required format.",
            "response": "still gibberish",
        }
    )
    server = stub_server(chat_doc(entries))
    backends = [backend_for(server, name) for name in models]
    with pytest.raises(FailureBudgetExceeded):
        annotate_corpus(corpus, two_topics, backends, ResponseCache(tmp_path))
    # a generous budget instead fails the cells conservatively
    matrix = annotate_corpus(
        corpus, two_topics, backends, ResponseCache(tmp_path), failure_budget=0.5
    )
    failed = matrix.get("m1", "t1", "sleep")
    assert failed.label is False
    assert failed.parse_warning
