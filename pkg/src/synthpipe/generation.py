"""Batch rephrasing against a pluggable chat-completion backend.

The engine drives bounded-concurrency generation with retries and full
provenance. Two backends ship here:

* :class:`HttpChatBackend` speaks the de-facto chat-completions JSON shape
  (``POST {endpoint}/chat/completions`` with ``{model, messages, temperature,
  top_p, max_tokens}``; ``choices[0].message.content`` consumed). Non-2xx
  statuses, network errors, and malformed JSON all count as retryable.
* :class:`MockBackend` is fully deterministic and offline, so the entire
  pipeline is testable without a model server; swapping generator models is a
  config change, never a code change.

Results are always merged back into input order, so outputs are independent
of completion order and of ``max_in_flight``.
"""

from __future__ import annotations

import json
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Protocol, Sequence
from urllib.parse import urlparse

import requests

from .corpus import (
    CorpusHandle,
    Document,
    REFERENCE_TOKENIZER,
    Tokenizer,
    save_manifest,
)
from .errors import BackendRequestError, ConfigError, EmptyCorpus
from .hashing import hash_hex128, hash_u64, unit_float
from .io_utils import atomic_write_json, write_jsonl_shard
from .strategies import (
    CONTINUE_INSTRUCTION,
    PromptStrategy,
    SUMMARIZE_INSTRUCTION,
    SamplingParams,
    StrategyEnsemble,
    StrategyRegistry,
    assign_strategy,
    builtin_registry,
    render_prompt,
)

BACKOFF_BASE_S = 0.5
BACKOFF_CAP_S = 30.0

STATUS_OK = "ok"
STATUS_FAILED = "failed"
STATUS_TRUNCATED = "truncated"


@dataclass(frozen=True)
class BackendConfig:
    backend_id: str
    endpoint: str
    model_name: str
    api_key_env: str = ""
    max_in_flight: int = 4
    request_timeout: float = 60.0
    max_retries: int = 3

    def __post_init__(self) -> None:
        if self.max_in_flight < 1:
            raise ConfigError("max_in_flight must be >= 1")
        if self.max_retries < 0:
            raise ConfigError("max_retries must be >= 0")
        if self.request_timeout <= 0:
            raise ConfigError("request_timeout must be positive")


@dataclass
class GenerationRecord:
    source_doc_id: str
    strategy_name: str
    backend_id: str
    prompt_hash: str
    output_text: str
    output_token_count: int
    status: str
    attempts: int
    wall_time_ms: int


class Backend(Protocol):
    config: BackendConfig

    def preflight(self) -> None: ...

    def complete(self, prompt: str, sampling: SamplingParams) -> str: ...


# -- HTTP backend ---------------------------------------------------------------

Transport = Callable[[str, dict, dict, float], tuple[int, str]]


def _requests_transport(url: str, payload: dict, headers: dict, timeout: float) -> tuple[int, str]:
    try:
        resp = requests.post(url, json=payload, headers=headers, timeout=timeout)
    except requests.RequestException as exc:
        raise BackendRequestError(f"request failed: {exc}") from exc
    return resp.status_code, resp.text


class HttpChatBackend:
    """Chat-completions client; the transport is injectable for testing."""

    def __init__(self, config: BackendConfig, transport: Transport | None = None):
        self.config = config
        self._transport = transport or _requests_transport

    def preflight(self) -> None:
        scheme = urlparse(self.config.endpoint).scheme
        if scheme not in ("http", "https"):
            raise ConfigError(f"bad endpoint {self.config.endpoint!r}: scheme must be http(s)")
        if self.config.api_key_env and self.config.api_key_env not in os.environ:
            raise ConfigError(
                f"environment variable {self.config.api_key_env!r} named by api_key_env is not set"
            )

    def complete(self, prompt: str, sampling: SamplingParams) -> str:
        url = self.config.endpoint.rstrip("/") + "/chat/completions"
        payload = {
            "model": self.config.model_name,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": sampling.temperature,
            "top_p": sampling.top_p,
            "max_tokens": sampling.max_new_tokens,
        }
        headers = {"Content-Type": "application/json"}
        if self.config.api_key_env:
            headers["Authorization"] = f"Bearer {os.environ[self.config.api_key_env]}"
        status, body = self._transport(url, payload, headers, self.config.request_timeout)
        if not 200 <= status < 300:
            raise BackendRequestError(f"HTTP {status}")
        try:
            obj = json.loads(body)
            content = obj["choices"][0]["message"]["content"]
        except (json.JSONDecodeError, KeyError, IndexError, TypeError) as exc:
            raise BackendRequestError(f"malformed response: {exc}") from exc
        if not isinstance(content, str):
            raise BackendRequestError("response content is not a string")
        return content


# -- mock backend -----------------------------------------------------------------

_MOCK_VOCAB = (
    "signal", "corpus", "pattern", "measure", "sample", "window", "stream",
    "vector", "margin", "branch", "kernel", "lattice", "prism", "cipher",
    "beacon", "quorum", "tangent", "medley", "socket", "ledger", "anchor",
    "gradient", "basin", "relay", "cluster", "octave", "ribbon", "harbor",
    "zenith", "mosaic", "tether", "quarry",
)


def _default_mock_length(prompt: str, tokenizer: Tokenizer = REFERENCE_TOKENIZER) -> int:
    """Length contract: summaries compress the source, other styles roughly match it."""
    if prompt.startswith(SUMMARIZE_INSTRUCTION):
        source_tokens = tokenizer.count(prompt) - tokenizer.count(SUMMARIZE_INSTRUCTION)
        return max(1, source_tokens // 2)
    if prompt.startswith(CONTINUE_INSTRUCTION):
        source_tokens = tokenizer.count(prompt) - tokenizer.count(CONTINUE_INSTRUCTION)
        return max(8, source_tokens)
    return max(8, tokenizer.count(prompt))


def mock_generate(prompt: str, seed: int, max_tokens: int | None = None) -> str:
    """Deterministic pseudo-text for a prompt; pure function of (prompt, seed).

    Words are drawn from a fixed vocabulary by keyed hash, so distinct prompts
    produce distinct outputs except with 2^-64 collision probability.
    """
    if max_tokens is None:
        max_tokens = _default_mock_length(prompt)
    n = max(1, max_tokens)
    words = [
        _MOCK_VOCAB[hash_u64("mock", seed, prompt, i) % len(_MOCK_VOCAB)]
        for i in range(n)
    ]
    return " ".join(words)


def mock_config(backend_id: str = "mock", **overrides) -> BackendConfig:
    defaults = dict(
        backend_id=backend_id,
        endpoint="mock://local",
        model_name="mock",
        max_in_flight=4,
    )
    defaults.update(overrides)
    return BackendConfig(**defaults)


class MockBackend:
    """Offline deterministic backend.

    Recognizes the conversational-classification prompt and answers it with
    the offline heuristic so classification flows work end-to-end; every other
    prompt gets hash-generated filler text obeying the length contract, capped
    at the request's max_new_tokens.
    """

    def __init__(self, seed: int = 0, config: BackendConfig | None = None):
        self.seed = seed
        self.config = config or mock_config()

    def preflight(self) -> None:
        pass

    def complete(self, prompt: str, sampling: SamplingParams) -> str:
        from .style import CLASSIFY_TARGET_MARKER, CLASSIFICATION_PROMPT, heuristic_label

        if prompt.startswith(CLASSIFICATION_PROMPT.split("\n", 1)[0]):
            idx = prompt.rfind(CLASSIFY_TARGET_MARKER)
            target = prompt[idx + len(CLASSIFY_TARGET_MARKER):].strip() if idx >= 0 else ""
            return str(heuristic_label(target))
        n = min(_default_mock_length(prompt), sampling.max_new_tokens)
        return mock_generate(prompt, self.seed, n)


# -- batch driver -------------------------------------------------------------

def _backoff_seconds(attempt: int, key: str) -> float:
    # exponential with deterministic jitter in [d/2, d]; base 0.5 s, cap 30 s
    d = min(BACKOFF_CAP_S, BACKOFF_BASE_S * 2 ** (attempt - 1))
    return d * (0.5 + 0.5 * unit_float("backoff", key, attempt))


def generate_batch(
    batch: Sequence[tuple[Document, PromptStrategy]],
    backend: Backend,
    *,
    tokenizer: Tokenizer = REFERENCE_TOKENIZER,
    sleep: Callable[[float], None] | None = None,
) -> list[GenerationRecord]:
    """One record per request, in input order, regardless of completion order.

    Failures retry with backoff up to ``max_retries``; a request that keeps
    failing yields a ``failed`` record instead of aborting the batch. At most
    ``max_in_flight`` requests are outstanding at any instant.
    """
    backend.preflight()
    if not batch:
        return []
    do_sleep = sleep if sleep is not None else time.sleep
    config = backend.config

    prompts = [render_prompt(strategy, doc, tokenizer) for doc, strategy in batch]

    def run_one(index: int) -> GenerationRecord:
        doc, strategy = batch[index]
        prompt = prompts[index]
        prompt_hash = hash_hex128(prompt)
        started = time.monotonic()
        attempts = 0
        output = ""
        status = STATUS_FAILED
        while attempts <= config.max_retries:
            attempts += 1
            try:
                text = backend.complete(prompt, strategy.sampling)
                if not text:
                    raise BackendRequestError("empty response")
            except BackendRequestError:
                if attempts > config.max_retries:
                    break
                do_sleep(_backoff_seconds(attempts, prompt_hash))
                continue
            output = text
            tokens = tokenizer.count(text)
            status = STATUS_TRUNCATED if tokens >= strategy.sampling.max_new_tokens else STATUS_OK
            break
        return GenerationRecord(
            source_doc_id=doc.id,
            strategy_name=strategy.name,
            backend_id=config.backend_id,
            prompt_hash=prompt_hash,
            output_text=output,
            output_token_count=tokenizer.count(output),
            status=status,
            attempts=attempts,
            wall_time_ms=int((time.monotonic() - started) * 1000),
        )

    if config.max_in_flight == 1 or len(batch) == 1:
        return [run_one(i) for i in range(len(batch))]
    with ThreadPoolExecutor(max_workers=config.max_in_flight) as pool:
        return list(pool.map(run_one, range(len(batch))))


# -- corpus synthesis ----------------------------------------------------------

@dataclass
class RunReport:
    requests: int = 0
    ok: int = 0
    failed: int = 0
    truncated: int = 0
    source_tokens: int = 0
    output_tokens: int = 0
    resumed_shards: int = 0

    def to_dict(self) -> dict:
        # resumed_shards is run-local bookkeeping, not part of the artifact
        return {
            "requests": self.requests,
            "ok": self.ok,
            "failed": self.failed,
            "truncated": self.truncated,
            "source_tokens": self.source_tokens,
            "output_tokens": self.output_tokens,
        }


@dataclass
class SynthesisResult:
    handle: CorpusHandle
    report: RunReport


def _synthetic_document(doc: Document, record: GenerationRecord, corpus_name: str) -> Document:
    meta = {
        "source_doc_id": doc.id,
        "strategy": record.strategy_name,
        "backend_id": record.backend_id,
    }
    if record.status == STATUS_TRUNCATED:
        meta["truncated"] = "true"  # kept for budget accounting; filterable downstream
    return Document(
        id=f"{doc.id}:syn:{record.strategy_name}",
        text=record.output_text,
        source=corpus_name,
        quality_tier=doc.quality_tier,
        style_labels=(),
        token_count=record.output_token_count,
        meta=meta,
    )


def synthesize_corpus(
    corpus_docs: Sequence[Document],
    ensemble: StrategyEnsemble,
    backend: Backend,
    out_dir: Path | str,
    *,
    name: str,
    registry: StrategyRegistry | None = None,
    tokenizer: Tokenizer = REFERENCE_TOKENIZER,
    docs_per_shard: int = 1000,
    sleep: Callable[[float], None] | None = None,
) -> SynthesisResult:
    """Rephrase a corpus shard by shard with a resumable checkpoint.

    Each source document yields at most one synthetic document for its
    assigned strategy; failed generations are counted, never silently
    dropped. Completed output shards are recorded in ``checkpoint.json`` and
    skipped on rerun, and because generation is deterministic for a
    deterministic backend, a resumed run produces byte-identical output.
    """
    if docs_per_shard < 1:
        raise ValueError("docs_per_shard must be >= 1")
    registry = registry or builtin_registry()
    backend.preflight()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    pairs = [(doc, registry.lookup(assign_strategy(ensemble, doc.id))) for doc in corpus_docs]
    shards = [pairs[i:i + docs_per_shard] for i in range(0, len(pairs), docs_per_shard)]

    checkpoint_path = out_dir / "checkpoint.json"
    completed: dict[str, dict] = {}
    if checkpoint_path.is_file():
        with open(checkpoint_path, encoding="utf-8") as fh:
            state = json.load(fh)
        if state.get("name") == name and state.get("docs_per_shard") == docs_per_shard:
            completed = state.get("shards", {})

    report = RunReport()
    shard_stats: list[dict] = []
    shard_paths: list[Path] = []
    for idx, shard in enumerate(shards):
        shard_path = out_dir / f"{name}-{idx:05d}.jsonl"
        key = str(idx)
        if key in completed and shard_path.is_file():
            stats = completed[key]
            report.resumed_shards += 1
        else:
            records = generate_batch(shard, backend, tokenizer=tokenizer, sleep=sleep)
            docs = [
                _synthetic_document(doc, rec, name)
                for (doc, _), rec in zip(shard, records)
                if rec.status != STATUS_FAILED
            ]
            write_jsonl_shard(shard_path, [d.to_json_line() for d in docs])
            stats = {
                "path": shard_path.name,
                "docs": len(docs),
                "tokens": sum(d.token_count for d in docs),
                "requests": len(records),
                "ok": sum(r.status == STATUS_OK for r in records),
                "failed": sum(r.status == STATUS_FAILED for r in records),
                "truncated": sum(r.status == STATUS_TRUNCATED for r in records),
                "source_tokens": sum(doc.token_count for doc, _ in shard),
            }
            completed[key] = stats
            atomic_write_json(
                checkpoint_path,
                {"name": name, "docs_per_shard": docs_per_shard, "shards": completed},
            )
        report.requests += stats["requests"]
        report.ok += stats["ok"]
        report.failed += stats["failed"]
        report.truncated += stats["truncated"]
        report.source_tokens += stats["source_tokens"]
        report.output_tokens += stats["tokens"]
        shard_paths.append(shard_path)
        shard_stats.append({"path": stats["path"], "docs": stats["docs"], "tokens": stats["tokens"]})

    total_docs = sum(s["docs"] for s in shard_stats)
    total_tokens = sum(s["tokens"] for s in shard_stats)
    if total_docs == 0:
        raise EmptyCorpus(f"synthesis produced no documents for corpus {name!r}")
    handle = CorpusHandle(
        name=name,
        shard_paths=tuple(shard_paths),
        total_tokens=total_tokens,
        doc_count=total_docs,
    )
    save_manifest(handle, out_dir / "manifest.json", shard_stats)
    atomic_write_json(out_dir / "report.json", report.to_dict())
    return SynthesisResult(handle=handle, report=report)


def load_backend_config(path: Path | str) -> tuple[BackendConfig, str, int | None]:
    """Read a backend config file; returns (config, kind, mock_seed).

    The file is the BackendConfig fields plus ``kind`` ("http" or "mock") and,
    for mocks, an optional ``seed`` (None when absent so callers can thread a
    global seed instead).
    """
    path = Path(path)
    try:
        with open(path, encoding="utf-8") as fh:
            obj = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot open backend config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
    kind = obj.pop("kind", "http")
    raw_seed = obj.pop("seed", None)
    seed = int(raw_seed) if raw_seed is not None else None
    if kind not in ("http", "mock"):
        raise ConfigError(f"{path}: unknown backend kind {kind!r}")
    try:
        if kind == "mock":
            obj.setdefault("endpoint", "mock://local")
            obj.setdefault("model_name", "mock")
            obj.setdefault("backend_id", "mock")
        config = BackendConfig(**obj)
    except (TypeError, ConfigError) as exc:
        raise ConfigError(f"{path}: bad backend config: {exc}") from exc
    return config, kind, seed


def make_backend(config: BackendConfig, kind: str, seed: int = 0) -> Backend:
    if kind == "mock":
        return MockBackend(seed=seed, config=config)
    return HttpChatBackend(config)
