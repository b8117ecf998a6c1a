from __future__ import annotations

import json
from pathlib import Path

import pytest

from synthpipe.corpus import Document, ingest_jsonl
from synthpipe.errors import BackendRequestError
from synthpipe.generation import MockBackend, mock_config, mock_generate
from synthpipe.hashing import unit_float

DATA_DIR = Path(__file__).parent / "data"
REFERENCE_RESULTS = Path(__file__).parents[1] / "data" / "reference_results"


def make_docs(
    n: int,
    *,
    prefix: str = "doc",
    sentences: int = 2,
    tokens_per_sentence: int = 10,
    quality_tier: str = "unknown",
    style_labels: tuple[str, ...] = (),
    source: str = "toy",
) -> list[Document]:
    """Uniform synthetic documents; sentence starts are uppercase so the
    rule-based splitter sees every boundary."""
    docs = []
    for i in range(n):
        parts = []
        for s in range(sentences):
            words = [f"W{prefix}{i:04d}s{s}t{t}" for t in range(tokens_per_sentence)]
            parts.append(" ".join(words) + ".")
        text = " ".join(parts)
        docs.append(
            Document(
                id=f"{prefix}{i:04d}",
                text=text,
                source=source,
                quality_tier=quality_tier,
                style_labels=style_labels,
                token_count=sentences * tokens_per_sentence,
            )
        )
    return docs


def write_jsonl(path: Path, rows: list[dict | str]) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(row if isinstance(row, str) else json.dumps(row))
            fh.write("\n")
    return path


def docs_to_jsonl(path: Path, docs: list[Document]) -> Path:
    return write_jsonl(
        path,
        [
            {
                "id": d.id,
                "text": d.text,
                "source": d.source,
                "quality_tier": d.quality_tier,
                "style_labels": list(d.style_labels),
            }
            for d in docs
        ],
    )


def ingest_docs(tmp_path: Path, docs: list[Document], name: str = "toy"):
    raw = docs_to_jsonl(tmp_path / f"raw-{name}.jsonl", docs)
    return ingest_jsonl([raw], name=name, out_dir=tmp_path / name).handle


@pytest.fixture
def mock_backend() -> MockBackend:
    return MockBackend(seed=11)


def no_sleep(_: float) -> None:
    return None


class FlakyBackend:
    """Fails the first `failures_per_request` attempts of every request."""

    def __init__(self, failures_per_request: int, max_retries: int = 3, max_in_flight: int = 4):
        self.config = mock_config(
            backend_id="flaky", max_retries=max_retries, max_in_flight=max_in_flight
        )
        self.failures_per_request = failures_per_request
        self._attempts: dict[str, int] = {}

    def preflight(self) -> None:
        return None

    def complete(self, prompt: str, sampling) -> str:
        seen = self._attempts.get(prompt, 0) + 1
        self._attempts[prompt] = seen
        if seen <= self.failures_per_request:
            raise BackendRequestError(f"scheduled failure {seen}")
        return mock_generate(prompt, 0, min(16, sampling.max_new_tokens))


def reference_mixture(spec, pools):
    """Independent reimplementation of the documented mixture sampling contract.

    Plain loops over the same keyed-hash definitions: per-epoch order by
    hash_u64(comp_seed, "shuffle", epoch, id), merge by unit_float over
    remaining token quotas, stop once the budget is reached. Serves as the
    brute-force oracle for mixture equivalence tests.
    """
    from synthpipe.hashing import derive_seed, hash_u64

    streams = {}
    for name, weight in spec.components:
        docs = pools[name]
        comp_seed = derive_seed(spec.seed, "component", name)

        def make_stream(docs=docs, comp_seed=comp_seed):
            epoch = 0
            while True:
                ordered = sorted(
                    docs, key=lambda d: (hash_u64(comp_seed, "shuffle", epoch, d.id), d.id)
                )
                for doc in ordered:
                    yield doc, epoch
                epoch += 1

        streams[name] = {
            "iter": make_stream(),
            "quota": weight * spec.total_token_budget,
            "emitted": 0,
        }
    out = []
    total = 0
    step = 0
    names = [name for name, _ in spec.components]
    while total < spec.total_token_budget:
        active = [n for n in names if streams[n]["quota"] - streams[n]["emitted"] > 0]
        if not active:
            break
        total_remaining = sum(streams[n]["quota"] - streams[n]["emitted"] for n in active)
        threshold = unit_float(spec.seed, "interleave", step) * total_remaining
        cum = 0.0
        chosen = active[-1]
        for n in active:
            cum += streams[n]["quota"] - streams[n]["emitted"]
            if threshold < cum:
                chosen = n
                break
        doc, epoch = next(streams[chosen]["iter"])
        streams[chosen]["emitted"] += doc.token_count
        out.append((chosen, doc.id, epoch))
        total += doc.token_count
        step += 1
    return out


class RandomFailureBackend:
    """Each attempt independently fails with probability p (hash-seeded)."""

    def __init__(self, p: float, seed: int = 0, max_retries: int = 2, max_in_flight: int = 4):
        self.config = mock_config(
            backend_id="random-fail", max_retries=max_retries, max_in_flight=max_in_flight
        )
        self.p = p
        self.seed = seed
        self._attempts: dict[str, int] = {}

    def preflight(self) -> None:
        return None

    def complete(self, prompt: str, sampling) -> str:
        attempt = self._attempts.get(prompt, 0) + 1
        self._attempts[prompt] = attempt
        if unit_float("sched", self.seed, prompt, attempt) < self.p:
            raise BackendRequestError("scheduled random failure")
        return mock_generate(prompt, self.seed, min(16, sampling.max_new_tokens))
