"""Prompting, querying and parsing of per-topic yes/no annotations.

One prompt carries every leaf topic of the topic set (subtopics are the
prompted units); each configured chat backend answers the same prompt and
the response is parsed into one annotation per (model, text, leaf topic).

Parsing is forgiving by design, in this order: exact numbered topic line,
then a case-insensitive short-name match anywhere; a response where no topic
line is recognized at all is Unparseable and triggers one re-query with a
format reminder before the cell fails conservatively (label false, flagged).
"yes"/"[yes]"/"Yes." variants all count; anything else on a recognized line
maps to label false with a parse warning. Phrases prefer quoted spans and
fall back to splitting the post-colon tail on commas/semicolons.
"""
from __future__ import annotations

import hashlib
import json
import logging
import os
import re
import threading
import time
from collections.abc import Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import requests

from .corpus import TextItem, TopicSet
from .errors import (
    BackendUnavailable,
    BadStatus,
    FailureBudgetExceeded,
    Unparseable,
)

logger = logging.getLogger(__name__)

FORMAT_REMINDER = "Answer strictly in the required format."


def make_session(pool_size: int = 10) -> requests.Session:
    """Session with its connection pool sized to the planned fan-out."""
    session = requests.Session()
    adapter = requests.adapters.HTTPAdapter(
        pool_connections=pool_size, pool_maxsize=pool_size
    )
    session.mount("http://", adapter)
    session.mount("https://", adapter)
    return session


@dataclass(frozen=True)
class Decoding:
    temperature: float = 0.0
    max_tokens: int = 512

    def __post_init__(self):
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")


@dataclass(frozen=True)
class ModelBackend:
    name: str
    endpoint: str
    auth_env: str | None = None
    decoding: Decoding = field(default_factory=Decoding)
    parallelism: int = 4


@dataclass(frozen=True)
class RawResponse:
    model: str
    text_id: str
    content: str
    retrieved_at: str
    from_cache: bool


@dataclass(frozen=True)
class TopicAnnotation:
    model: str
    text_id: str
    topic: str
    label: bool
    phrases: tuple[str, ...] = ()
    parse_warning: bool = False


class AnnotationMatrix:
    """Annotations keyed by (model, text_id, leaf topic), complete after a run."""

    def __init__(self, entries: dict[tuple[str, str, str], TopicAnnotation]):
        self.entries = dict(entries)

    def get(self, model: str, text_id: str, topic: str) -> TopicAnnotation:
        return self.entries[(model, text_id, topic)]

    def __len__(self):
        return len(self.entries)

    def __eq__(self, other):
        return isinstance(other, AnnotationMatrix) and self.entries == other.entries

    def label_vector(
        self, model: str, topic: str, text_ids: Sequence[str]
    ) -> list[bool]:
        return [self.entries[(model, tid, topic)].label for tid in text_ids]

    def check_complete(
        self, models: Sequence[str], text_ids: Sequence[str], topics: Sequence[str]
    ) -> None:
        expected = len(models) * len(text_ids) * len(topics)
        if len(self.entries) != expected:
            raise ValueError(
                f"matrix has {len(self.entries)} cells, expected {expected}"
            )


def build_prompt(topics: TopicSet, item: TextItem) -> str:
    """Render the labeling prompt for one text.

    Leaf topics are enumerated from 1 in topic-set order, first as
    "(k) name: description." lines, then as the answer-format block, then
    the paragraph quoted in backticks. Pure: identical inputs yield
    byte-identical prompts.
    """
    leaves = topics.leaves()
    if not leaves:
        raise ValueError("topic set has no leaf topics")
    if not item.text:
        raise ValueError("item text is empty")
    lines = ["Does the paragraph mention any of the following topics:"]
    for k, leaf in enumerate(leaves, 1):
        desc = leaf.description.strip()
        if not desc.endswith("."):
            desc += "."
        lines.append(f"({k}) {leaf.short_name}: {desc}")
    lines.append("Return answer in format:")
    for k, leaf in enumerate(leaves, 1):
        lines.append(f"({k}) {leaf.short_name}: [yes/no], related phrases if any:")
    lines.append(f"Paragraph: `{item.text}`")
    return "\n".join(lines)


class ResponseCache:
    """Content-addressed response store under {cache_dir}/{backend}/.

    The key is the SHA-256 of (backend name, prompt, decoding params); each
    entry is a JSON file {prompt_digest, content, retrieved_at} holding the
    verbatim model output. Concurrent readers are fine; writes go through a
    per-process temp file and an atomic rename.
    """

    def __init__(self, cache_dir: str | Path):
        self.cache_dir = Path(cache_dir)

    def key(self, backend: ModelBackend, prompt: str) -> str:
        payload = json.dumps(
            {
                "backend": backend.name,
                "prompt": prompt,
                "temperature": backend.decoding.temperature,
                "max_tokens": backend.decoding.max_tokens,
            },
            sort_keys=True,
            ensure_ascii=False,
        )
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()

    def _path(self, backend: ModelBackend, key: str) -> Path:
        return self.cache_dir / backend.name / f"{key}.json"

    def get(self, backend: ModelBackend, prompt: str) -> dict | None:
        path = self._path(backend, self.key(backend, prompt))
        if not path.exists():
            return None
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)

    def put(self, backend: ModelBackend, prompt: str, content: str) -> dict:
        entry = {
            "prompt_digest": hashlib.sha256(prompt.encode("utf-8")).hexdigest(),
            "content": content,
            "retrieved_at": datetime.now(timezone.utc).isoformat(),
        }
        path = self._path(backend, self.key(backend, prompt))
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_name(
            path.name + f".tmp{os.getpid()}-{threading.get_ident()}"
        )
        with open(tmp, "w", encoding="utf-8") as fh:
            json.dump(entry, fh, ensure_ascii=False)
        os.replace(tmp, path)
        return entry


def query_backend(
    backend: ModelBackend,
    prompt: str,
    cache: ResponseCache,
    session: requests.Session | None = None,
    retries: int = 3,
    timeout: float = 30.0,
    backoff: float = 0.5,
    text_id: str = "",
) -> RawResponse:
    """Answer from cache when possible, otherwise POST a chat completion.

    Transient failures (connection errors, 429, 5xx) retry up to `retries`
    times with exponential backoff; other HTTP errors raise BadStatus
    immediately. Fresh responses are stored before returning.
    """
    cached = cache.get(backend, prompt)
    if cached is not None:
        return RawResponse(
            model=backend.name,
            text_id=text_id,
            content=cached["content"],
            retrieved_at=cached["retrieved_at"],
            from_cache=True,
        )
    session = session or requests.Session()
    headers = {}
    if backend.auth_env:
        token = os.environ.get(backend.auth_env, "")
        headers["Authorization"] = f"Bearer {token}"
    payload = {
        "model": backend.name,
        "messages": [{"role": "user", "content": prompt}],
        "temperature": backend.decoding.temperature,
        "max_tokens": backend.decoding.max_tokens,
    }
    last_error: Exception | None = None
    for attempt in range(retries + 1):
        try:
            resp = session.post(
                backend.endpoint, json=payload, headers=headers, timeout=timeout
            )
        except requests.RequestException as exc:
            last_error = exc
            if attempt < retries:
                time.sleep(backoff * 2**attempt)
            continue
        if resp.status_code in (429,) or resp.status_code >= 500:
            last_error = BadStatus(resp.status_code, resp.text)
            if attempt < retries:
                time.sleep(backoff * 2**attempt)
            continue
        if resp.status_code != 200:
            raise BadStatus(resp.status_code, resp.text)
        try:
            content = resp.json()["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError, ValueError) as exc:
            raise BadStatus(resp.status_code, f"malformed completion payload: {exc}")
        entry = cache.put(backend, prompt, content)
        return RawResponse(
            model=backend.name,
            text_id=text_id,
            content=content,
            retrieved_at=entry["retrieved_at"],
            from_cache=False,
        )
    raise BackendUnavailable(
        f"backend {backend.name!r} unreachable after {retries} retries: {last_error}"
    )


# Label token right after the topic's colon. A literal "[yes/no]" echo is an
# unanswered format line, not a yes - hence the (?!\s*/) guard.
_LABEL_RE = re.compile(r"^\s*,?\s*\[?\s*(yes|no)\b(?!\s*/)", re.IGNORECASE)
_QUOTED_RE = re.compile(r"'([^']+)'|\"([^\"]+)\"")
_PHRASE_MARKER_RE = re.compile(
    r"related\s+phrases(?:\s+if\s+any)?\s*:?", re.IGNORECASE
)
_PHRASE_PLACEHOLDERS = {"none", "n/a", "na", "-", "no", "nothing"}


def _topic_matches(content: str, index: int, short_name: str) -> list[re.Match]:
    numbered = re.compile(
        rf"\(\s*{index}\s*\)\s*{re.escape(short_name)}\s*:", re.IGNORECASE
    )
    found = list(numbered.finditer(content))
    if not found:
        anywhere = re.compile(rf"\b{re.escape(short_name)}\s*:", re.IGNORECASE)
        found = list(anywhere.finditer(content))
    return found


def _choose_match(content: str, matches: list[re.Match]) -> re.Match | None:
    if not matches:
        return None
    # prompt echoes repeat topic lines; prefer the last one that actually
    # starts with a parsable yes/no
    for match in reversed(matches):
        if _LABEL_RE.match(content[match.end() :]):
            return match
    return matches[-1]


def _extract_phrases(segment: str) -> tuple[str, ...]:
    quoted = [a or b for a, b in _QUOTED_RE.findall(segment)]
    if quoted:
        return tuple(p.strip() for p in quoted if p.strip())
    marker = _PHRASE_MARKER_RE.search(segment)
    if marker:
        tail = segment[marker.end() :]
    else:
        label = _LABEL_RE.match(segment)
        tail = segment[label.end() :] if label else segment
        tail = tail.lstrip(" ,.;]")
    parts = re.split(r"[,;]", tail)
    phrases = []
    for part in parts:
        cleaned = part.strip().strip("'\"").strip()
        cleaned = cleaned.rstrip(".").strip()
        if cleaned and cleaned.lower() not in _PHRASE_PLACEHOLDERS:
            phrases.append(cleaned)
    return tuple(phrases)


def parse_response(
    content: str,
    topics: TopicSet,
    model: str = "",
    text_id: str = "",
) -> list[TopicAnnotation]:
    """Parse one model response into per-leaf-topic annotations.

    Topics absent from the response come back with label false and
    parse_warning set. Raises Unparseable when no topic line is recognized
    at all.
    """
    leaves = topics.leaves()
    chosen: list[re.Match | None] = []
    for k, leaf in enumerate(leaves, 1):
        chosen.append(_choose_match(content, _topic_matches(content, k, leaf.short_name)))
    if all(match is None for match in chosen):
        raise Unparseable("no topic line recognized in response")
    starts = sorted(match.start() for match in chosen if match is not None)
    annotations = []
    for leaf, match in zip(leaves, chosen):
        if match is None:
            annotations.append(
                TopicAnnotation(
                    model=model, text_id=text_id, topic=leaf.short_name,
                    label=False, phrases=(), parse_warning=True,
                )
            )
            continue
        seg_end = min(
            (s for s in starts if s > match.start()), default=len(content)
        )
        segment = content[match.end() : seg_end]
        label_match = _LABEL_RE.match(segment)
        if label_match is None:
            label, warning = False, True
        else:
            label, warning = label_match.group(1).lower() == "yes", False
        annotations.append(
            TopicAnnotation(
                model=model, text_id=text_id, topic=leaf.short_name,
                label=label, phrases=_extract_phrases(segment),
                parse_warning=warning,
            )
        )
    return annotations


def annotate_corpus(
    corpus: Sequence[TextItem],
    topics: TopicSet,
    backends: Sequence[ModelBackend],
    cache: ResponseCache,
    failure_budget: float = 0.01,
    retries: int = 3,
    timeout: float = 30.0,
    backoff: float = 0.5,
) -> AnnotationMatrix:
    """Annotate every (backend, text) pair; complete over leaf topics.

    Requests fan out across backends with per-backend parallelism bounds;
    assembly is keyed by cell, so the matrix is deterministic given cached
    responses. Cells that stay unparseable after the reminder re-query fail
    conservatively (label false, parse_warning); if more than failure_budget
    of all cells fail, the run aborts.
    """
    if len(backends) < 2:
        raise ValueError("ensembling needs >=2 configured backends")
    if len({b.name for b in backends}) != len(backends):
        raise ValueError("backend names must be unique within a run")
    leaves = topics.leaves()
    max_workers = max(1, sum(max(1, b.parallelism) for b in backends))
    session = make_session(pool_size=max_workers)
    semaphores = {b.name: threading.BoundedSemaphore(max(1, b.parallelism))
                  for b in backends}

    def annotate_cell(backend: ModelBackend, item: TextItem):
        prompt = build_prompt(topics, item)
        with semaphores[backend.name]:
            response = query_backend(
                backend, prompt, cache, session=session,
                retries=retries, timeout=timeout, backoff=backoff,
                text_id=item.id,
            )
            try:
                return parse_response(
                    response.content, topics, model=backend.name, text_id=item.id
                ), 0
            except Unparseable:
                retry_prompt = prompt + "\n" + FORMAT_REMINDER
                response = query_backend(
                    backend, retry_prompt, cache, session=session,
                    retries=retries, timeout=timeout, backoff=backoff,
                    text_id=item.id,
                )
            try:
                return parse_response(
                    response.content, topics, model=backend.name, text_id=item.id
                ), 0
            except Unparseable:
                logger.warning(
                    "unparseable response from %s for text %s; marking cells failed",
                    backend.name, item.id,
                )
                failed = [
                    TopicAnnotation(
                        model=backend.name, text_id=item.id, topic=leaf.short_name,
                        label=False, phrases=(), parse_warning=True,
                    )
                    for leaf in leaves
                ]
                return failed, len(failed)

    pairs = [(backend, item) for backend in backends for item in corpus]
    results: dict[tuple[str, str], list[TopicAnnotation]] = {}
    failed_cells = 0
    with ThreadPoolExecutor(max_workers=max_workers) as pool:
        futures = {
            pool.submit(annotate_cell, backend, item): (backend.name, item.id)
            for backend, item in pairs
        }
        for future, key in futures.items():
            annotations, failures = future.result()
            results[key] = annotations
            failed_cells += failures

    total_cells = len(backends) * len(corpus) * len(leaves)
    if total_cells and failed_cells / total_cells > failure_budget:
        raise FailureBudgetExceeded(
            f"{failed_cells}/{total_cells} cells unparseable "
            f"(budget {failure_budget:.2%})"
        )
    entries = {}
    for backend in backends:
        for item in corpus:
            for annotation in results[(backend.name, item.id)]:
                entries[(backend.name, item.id, annotation.topic)] = annotation
    matrix = AnnotationMatrix(entries)
    matrix.check_complete(
        [b.name for b in backends],
        [i.id for i in corpus],
        [leaf.short_name for leaf in leaves],
    )
    return matrix
