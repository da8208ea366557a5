"""Embedding-based relevancy scoring of evidence phrases against topics.

A positive annotation's phrases are embedded and compared to the topic
description by cosine similarity; the topic's baseline b (similarity between
the description and the empty string, which recalibrates anisotropic
embedding spaces) is subtracted and the result clamped into [0, 1]. The
score is the maximum over phrases. Negative labels and positives without
phrases score 0; the latter are flagged as potential false positives.

Embedding inputs are truncated to their first 384 whitespace-delimited words
(whitespace collapsed, so truncation is idempotent) and cached on disk as
little-endian float32 vectors keyed by the truncated text's digest. Cached
and fresh vectors round-trip through float32 so warm reruns are bit-stable.
"""
from __future__ import annotations

import hashlib
import os
import threading
import time
from collections.abc import Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import requests

from .annotator import TopicAnnotation, make_session
from .corpus import Topic
from .errors import BackendUnavailable, BadStatus, ZeroNormVector

TRUNCATE_WORDS = 384


@dataclass(frozen=True)
class EmbeddingBackend:
    name: str  # model identifier sent on the wire
    endpoint: str
    auth_env: str | None = None
    batch_size: int = 32
    parallelism: int = 4


@dataclass(frozen=True)
class PhraseSimilarity:
    phrase: str
    raw_sim: float


@dataclass(frozen=True)
class RelevancyRecord:
    model: str
    text_id: str
    topic: str
    score: float
    baseline: float
    per_phrase_sims: tuple[PhraseSimilarity, ...] = ()
    potential_false_positive: bool = False


def truncate_words(text: str, limit: int = TRUNCATE_WORDS) -> str:
    return " ".join(text.split()[:limit])


def cosine_similarity(u: np.ndarray, v: np.ndarray) -> float:
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape:
        raise ValueError(f"dimension mismatch: {u.shape} vs {v.shape}")
    nu = np.linalg.norm(u)
    nv = np.linalg.norm(v)
    if nu == 0.0 or nv == 0.0:
        raise ZeroNormVector("cosine similarity undefined for zero-norm vector")
    return float(np.dot(u, v) / (nu * nv))


class Embedder:
    """Caching client for the embedding wire protocol.

    POSTs {model, input: [texts]} and expects {data: [{embedding: [...]}]}
    in input order. Vectors are cached under {cache_dir}/emb/{backend}/.
    """

    def __init__(
        self,
        backend: EmbeddingBackend,
        cache_dir: str | Path,
        session: requests.Session | None = None,
        retries: int = 3,
        timeout: float = 30.0,
        backoff: float = 0.5,
    ):
        self.backend = backend
        self.cache_dir = Path(cache_dir) / "emb" / backend.name
        self.session = session or make_session(max(1, backend.parallelism))
        self.retries = retries
        self.timeout = timeout
        self.backoff = backoff
        self.parallelism = max(1, backend.parallelism)
        self._dimension: int | None = None

    def _cache_path(self, truncated: str) -> Path:
        digest = hashlib.sha256(truncated.encode("utf-8")).hexdigest()
        return self.cache_dir / f"{digest}.bin"

    def _read_cache(self, path: Path) -> np.ndarray | None:
        if not path.exists():
            return None
        return np.fromfile(path, dtype="<f4").astype(np.float64)

    def _write_cache(self, path: Path, vector: np.ndarray) -> None:
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_name(
            path.name + f".tmp{os.getpid()}-{threading.get_ident()}"
        )
        vector.astype("<f4").tofile(tmp)
        os.replace(tmp, path)

    def embed(self, text: str) -> np.ndarray:
        return self.embed_many([text])[0]

    def embed_many(self, texts: Sequence[str]) -> list[np.ndarray]:
        """Embed texts (cache-first); misses go out in concurrent batches.

        Results come back keyed by text, so assembly order never depends on
        request completion order.
        """
        truncated = [truncate_words(t) for t in texts]
        vectors: dict[str, np.ndarray] = {}
        misses: list[str] = []
        pending: set[str] = set()
        for t in truncated:
            if t in vectors or t in pending:
                continue
            cached = self._read_cache(self._cache_path(t))
            if cached is not None:
                vectors[t] = cached
            else:
                misses.append(t)
                pending.add(t)
        batches = [
            misses[start : start + self.backend.batch_size]
            for start in range(0, len(misses), self.backend.batch_size)
        ]

        def fetch(batch: list[str]) -> list[tuple[str, np.ndarray]]:
            return list(zip(batch, self._request(batch)))

        if len(batches) > 1:
            with ThreadPoolExecutor(max_workers=self.parallelism) as pool:
                fetched = pool.map(fetch, batches)
        else:
            fetched = map(fetch, batches)
        for pairs in fetched:
            for t, vec in pairs:
                self._write_cache(self._cache_path(t), vec)
                vectors[t] = vec.astype("<f4").astype(np.float64)
        out = [vectors[t] for t in truncated]
        for vec in out:
            if self._dimension is None:
                self._dimension = vec.size
            elif vec.size != self._dimension:
                raise BadStatus(
                    200,
                    f"embedding dimension changed mid-run: "
                    f"{vec.size} != {self._dimension}",
                )
        return out

    def _request(self, batch: list[str]) -> list[np.ndarray]:
        headers = {}
        if self.backend.auth_env:
            token = os.environ.get(self.backend.auth_env, "")
            headers["Authorization"] = f"Bearer {token}"
        payload = {"model": self.backend.name, "input": list(batch)}
        last_error: Exception | None = None
        for attempt in range(self.retries + 1):
            try:
                resp = self.session.post(
                    self.backend.endpoint, json=payload,
                    headers=headers, timeout=self.timeout,
                )
            except requests.RequestException as exc:
                last_error = exc
                if attempt < self.retries:
                    time.sleep(self.backoff * 2**attempt)
                continue
            if resp.status_code in (429,) or resp.status_code >= 500:
                last_error = BadStatus(resp.status_code, resp.text)
                if attempt < self.retries:
                    time.sleep(self.backoff * 2**attempt)
                continue
            if resp.status_code != 200:
                raise BadStatus(resp.status_code, resp.text)
            try:
                data = resp.json()["data"]
                return [np.asarray(row["embedding"], dtype=np.float64) for row in data]
            except (KeyError, TypeError, ValueError) as exc:
                raise BadStatus(resp.status_code, f"malformed embedding payload: {exc}")
        raise BackendUnavailable(
            f"embedding backend {self.backend.name!r} unreachable: {last_error}"
        )


def topic_baseline(topic: Topic, embedder: Embedder) -> float:
    """Similarity between the topic description and the empty string."""
    desc_vec, empty_vec = embedder.embed_many([topic.description, ""])
    return cosine_similarity(desc_vec, empty_vec)


def relevancy_score(
    annotation: TopicAnnotation, topic: Topic, embedder: Embedder
) -> RelevancyRecord:
    """Score one annotation's evidence against its topic description.

    Negative labels and positives without phrases score 0 without touching
    the embedding backend; otherwise the score is
    clamp(max_p cos(description, phrase_p) - baseline, 0, 1).
    """
    if annotation.topic != topic.short_name:
        raise ValueError(
            f"annotation topic {annotation.topic!r} != {topic.short_name!r}"
        )
    if not annotation.label or not annotation.phrases:
        return RelevancyRecord(
            model=annotation.model,
            text_id=annotation.text_id,
            topic=annotation.topic,
            score=0.0,
            baseline=0.0,
            potential_false_positive=annotation.label and not annotation.phrases,
        )
    vectors = embedder.embed_many([topic.description, ""] + list(annotation.phrases))
    desc_vec, empty_vec = vectors[0], vectors[1]
    baseline = cosine_similarity(desc_vec, empty_vec)
    sims = tuple(
        PhraseSimilarity(phrase=p, raw_sim=cosine_similarity(desc_vec, vec))
        for p, vec in zip(annotation.phrases, vectors[2:])
    )
    raw_max = max(s.raw_sim for s in sims)
    score = min(max(raw_max - baseline, 0.0), 1.0)
    return RelevancyRecord(
        model=annotation.model,
        text_id=annotation.text_id,
        topic=annotation.topic,
        score=score,
        baseline=baseline,
        per_phrase_sims=sims,
    )


def aggregate_subtopics(children: Sequence[tuple[bool, float]]) -> tuple[bool, float]:
    """Parent label/score from subtopic results: any-present, mean-of-present."""
    if not children:
        raise ValueError("need >=1 child result")
    present = [score for label, score in children if label]
    if not present:
        return False, 0.0
    return True, float(np.mean(present))
