"""Temporal commonsense inference providers.

Every mention can be extended with short sentences describing what plausibly
happens before and after the event, in the context of its sentence. Three
interchangeable backends produce these inference sets: a fixture file, a
deterministic rule tied to the synthetic corpus generator, and an external
text-generation service. A persistent JSONL cache guarantees at most one
backend invocation per (doc, mention, provider) key.
"""

from __future__ import annotations

import json
import os
import re
import tempfile
import threading
import time
import warnings
from dataclasses import dataclass
from typing import Optional

import requests

GENERATION_CREDENTIAL_ENV = "CSCOREF_GENERATION_API_KEY"


class InferenceError(RuntimeError):
    pass


@dataclass
class GenerationConfig:
    top_p: float = 0.9
    max_tokens: int = 150
    stop: str = "END"
    k: int = 5
    mode: str = "finetuned"  # "finetuned" or "fewshot"

    def __post_init__(self):
        if not 0 < self.top_p <= 1:
            raise ValueError("top_p must be in (0, 1]")
        if self.max_tokens < 1:
            raise ValueError("max_tokens must be >= 1")
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.mode not in ("finetuned", "fewshot"):
            raise ValueError(f"unknown prompt mode {self.mode!r}")


@dataclass(frozen=True)
class InferenceSet:
    mention_id: str
    before: tuple
    after: tuple
    provenance: str

    def __post_init__(self):
        object.__setattr__(self, "before",
                           tuple(s.strip() for s in self.before))
        object.__setattr__(self, "after",
                           tuple(s.strip() for s in self.after))
        if any(not s for s in self.before + self.after):
            raise ValueError("inference sentences must be non-empty")
        if not self.provenance:
            raise ValueError("provenance must be set")

    def truncated(self, k: int) -> "InferenceSet":
        return InferenceSet(self.mention_id, self.before[:k], self.after[:k],
                            self.provenance)


@dataclass(frozen=True)
class PromptExemplar:
    context: str
    event: str
    before: str
    after: str


FEWSHOT_INSTRUCTION = (
    "Given a context sentence and a target event from it, write short "
    "sentences describing what typically happens immediately before the "
    "event and immediately after it. Finish each answer with END."
)

N_FEWSHOT_EXEMPLARS = 8


def format_prompt(context: str, event: str, mode: str = "finetuned",
                  exemplars: Optional[list] = None) -> str:
    """Render the generation prompt for one (context, event) query.

    Finetuned mode is the bare query block; fewshot mode prepends an
    instruction and eight completed exemplar blocks. Either way the prompt
    ends at ``Before:`` so the model continues with the before inferences.
    """
    if event not in context:
        raise InferenceError(
            f"event {event!r} is not a substring of the context")
    query = f"Context: {context}\nEvent: {event}\nBefore:"
    if mode == "finetuned":
        return query
    if mode != "fewshot":
        raise ValueError(f"unknown prompt mode {mode!r}")
    exemplars = exemplars or []
    if len(exemplars) != N_FEWSHOT_EXEMPLARS:
        raise InferenceError(
            f"fewshot mode requires exactly {N_FEWSHOT_EXEMPLARS} "
            f"exemplars, got {len(exemplars)}")
    blocks = [FEWSHOT_INSTRUCTION]
    for ex in exemplars:
        blocks.append(f"Context: {ex.context}\nEvent: {ex.event}\n"
                      f"Before: {ex.before}\nAfter: {ex.after} END")
    blocks.append(query)
    return "\n\n".join(blocks)


_SENTENCE_RE = re.compile(r"[^.!?]*[.!?]")


def split_sentences(text: str) -> list[str]:
    """Split on terminal punctuation; a trailing unpunctuated piece counts."""
    pieces = [m.group(0).strip() for m in _SENTENCE_RE.finditer(text)]
    tail = _SENTENCE_RE.sub("", text).strip()
    if tail:
        pieces.append(tail)
    return [p for p in pieces if len(p) >= 3]


def parse_completion(text: str, k: int,
                     stop: str = "END") -> tuple[list, list]:
    """Extract (before, after) sentence lists from a raw completion.

    The completion is cut at the first line starting with ``After:``; each
    side is sentence-split, fragments under 3 characters are dropped, and
    each list is truncated to ``k``. A missing after-section yields an empty
    after list with a warning.
    """
    if stop:
        idx = text.find(stop)
        if idx != -1:
            text = text[:idx]
    lines = text.split("\n")
    after_at = next((i for i, line in enumerate(lines)
                     if line.startswith("After:")), None)
    if after_at is None:
        if text.strip():
            warnings.warn("completion has no 'After:' section",
                          stacklevel=2)
        else:
            warnings.warn("empty completion", stacklevel=2)
        before_text = text
        after_text = ""
    else:
        before_text = "\n".join(lines[:after_at])
        after_text = "\n".join(
            [lines[after_at][len("After:"):]] + lines[after_at + 1:])
    before = split_sentences(before_text)[:k]
    after = split_sentences(after_text)[:k]
    return before, after


class InferenceCache:
    """Persistent JSONL cache of inference sets.

    Records carry {doc_id, mention_id, before, after, provenance}; the key is
    (doc_id, mention_id, provenance). Writes rewrite the file via a temp file
    and atomic rename so readers never observe partial entries.
    """

    def __init__(self, path):
        self.path = path
        self._lock = threading.Lock()
        self._entries: dict[tuple, dict] = {}
        if path is not None and os.path.exists(path):
            self._load()

    def _load(self):
        with open(self.path, encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                rec = json.loads(line)
                key = (rec["doc_id"], rec["mention_id"], rec["provenance"])
                self._entries[key] = rec

    def get(self, doc_id: str, mention_id: str,
            fingerprint: str) -> Optional[InferenceSet]:
        with self._lock:
            rec = self._entries.get((doc_id, mention_id, fingerprint))
        if rec is None:
            return None
        return InferenceSet(mention_id=rec["mention_id"],
                            before=tuple(rec["before"]),
                            after=tuple(rec["after"]),
                            provenance=rec["provenance"])

    def put(self, doc_id: str, inferences: InferenceSet):
        rec = {"doc_id": doc_id, "mention_id": inferences.mention_id,
               "before": list(inferences.before),
               "after": list(inferences.after),
               "provenance": inferences.provenance}
        with self._lock:
            key = (doc_id, inferences.mention_id, inferences.provenance)
            existing = self._entries.get(key)
            if existing == rec:
                return  # idempotent re-put
            if existing is not None:
                raise ValueError(
                    f"cache entry for {key} is immutable; refusing to "
                    f"overwrite it with a different inference set")
            self._entries[key] = rec
            if self.path is not None:
                self._flush()

    def _flush(self):
        directory = os.path.dirname(os.path.abspath(self.path))
        fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
        try:
            with os.fdopen(fd, "w", encoding="utf-8") as fh:
                for rec in self._entries.values():
                    fh.write(json.dumps(rec, ensure_ascii=False,
                                        separators=(",", ":")) + "\n")
            os.replace(tmp, self.path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise

    def __len__(self):
        return len(self._entries)


class FixtureProvider:
    """Serves inference sets from a fixture file (same format as the cache)."""

    def __init__(self, path=None, records=None, strict: bool = True):
        self.strict = strict
        self._by_mention: dict[str, InferenceSet] = {}
        if records is not None:
            for inf in records:
                self._by_mention[inf.mention_id] = inf
        if path is not None:
            cache = InferenceCache(path)
            for (_, mention_id, _), rec in cache._entries.items():
                self._by_mention[mention_id] = InferenceSet(
                    mention_id=mention_id, before=tuple(rec["before"]),
                    after=tuple(rec["after"]), provenance=rec["provenance"])

    def fingerprint(self, config: GenerationConfig) -> str:
        return "fixture"

    def generate(self, mention, context_sentence: str,
                 config: GenerationConfig) -> InferenceSet:
        found = self._by_mention.get(mention.mention_id)
        if found is None:
            if self.strict:
                raise InferenceError(
                    f"no fixture inference set for mention "
                    f"{mention.mention_id!r}")
            warnings.warn(
                f"no fixture for mention {mention.mention_id!r}; returning "
                f"an empty set", stacklevel=2)
            return InferenceSet(mention.mention_id, (), (), "fixture")
        return InferenceSet(mention.mention_id, found.before, found.after,
                            "fixture").truncated(config.k)


class GenerationServiceProvider:
    """Client for an external completion service.

    Request body: {"prompt", "top_p", "max_tokens", "stop"}; response:
    {"completion": str}. The credential is read from the environment at call
    time, sent as a bearer token, and never persisted or logged. Failures are
    retried with exponential backoff.
    """

    def __init__(self, endpoint: str, model_id: str = "default",
                 exemplars: Optional[list] = None, session=None,
                 max_attempts: int = 3, backoff_start: float = 1.0,
                 sleep=time.sleep, timeout: float = 60.0):
        self.endpoint = endpoint
        self.model_id = model_id
        self.exemplars = exemplars
        self._session = session or requests.Session()
        self.max_attempts = max_attempts
        self.backoff_start = backoff_start
        self._sleep = sleep
        self.timeout = timeout

    def fingerprint(self, config: GenerationConfig) -> str:
        prefix = "fewshot" if config.mode == "fewshot" else "service"
        return f"{prefix}:{self.model_id}"

    def _complete(self, prompt: str, config: GenerationConfig) -> str:
        payload = {"prompt": prompt, "top_p": config.top_p,
                   "max_tokens": config.max_tokens, "stop": config.stop}
        headers = {}
        credential = os.environ.get(GENERATION_CREDENTIAL_ENV)
        if credential:
            headers["Authorization"] = f"Bearer {credential}"
        delay = self.backoff_start
        last_error = None
        for attempt in range(self.max_attempts):
            if attempt > 0:
                self._sleep(delay)
                delay *= 2
            try:
                resp = self._session.post(self.endpoint, json=payload,
                                          headers=headers,
                                          timeout=self.timeout)
                if resp.status_code != 200:
                    last_error = InferenceError(
                        f"generation service returned HTTP "
                        f"{resp.status_code}")
                    continue
                body = resp.json()
                return body["completion"]
            except (requests.RequestException, ValueError,
                    KeyError) as exc:
                last_error = InferenceError(
                    f"generation service failure: {exc}")
        raise last_error

    def generate(self, mention, context_sentence: str,
                 config: GenerationConfig) -> InferenceSet:
        prompt = format_prompt(context_sentence, mention.text,
                               mode=config.mode, exemplars=self.exemplars)
        completion = self._complete(prompt, config)
        before, after = parse_completion(completion, config.k,
                                         stop=config.stop)
        return InferenceSet(mention.mention_id, tuple(before), tuple(after),
                            self.fingerprint(config))


def get_inferences(provider, mention, context_sentence: str,
                   config: GenerationConfig,
                   cache: Optional[InferenceCache] = None) -> InferenceSet:
    """Cache-through fetch of one mention's inference set."""
    fingerprint = provider.fingerprint(config)
    if cache is not None:
        hit = cache.get(mention.doc_id, mention.mention_id, fingerprint)
        if hit is not None:
            return hit
    result = provider.generate(mention, context_sentence, config)
    if cache is not None:
        cache.put(mention.doc_id, result)
    return result


def get_inferences_bulk(provider, corpus, config: GenerationConfig,
                        cache: Optional[InferenceCache] = None,
                        max_concurrency: int = 4) -> dict[str, InferenceSet]:
    """Fetch inference sets for every mention, deduplicating cache misses."""
    from concurrent.futures import ThreadPoolExecutor

    mentions = corpus.mentions_in_order()
    fingerprint = provider.fingerprint(config)
    results: dict[str, InferenceSet] = {}
    pending = []
    for m in mentions:
        hit = cache.get(m.doc_id, m.mention_id,
                        fingerprint) if cache else None
        if hit is not None:
            results[m.mention_id] = hit
        else:
            pending.append(m)

    def fetch(m):
        context = " ".join(corpus.sentence_of(m))
        return m.mention_id, get_inferences(provider, m, context, config,
                                            cache=cache)

    if pending:
        with ThreadPoolExecutor(max_concurrency) as pool:
            for mention_id, inf in pool.map(fetch, pending):
                results[mention_id] = inf
    return results
