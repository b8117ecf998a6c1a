"""Rephrasing strategy registry: templates, truncation, ensemble assignment.

The ``summarize`` and ``continue`` instruction texts are fixed verbatim and
golden-tested; do not edit them. The question/answer-style templates
(``qa_rephrase``, ``mcq``, ``yesno``, ``open_ended``,
``reading_comprehension``) are reconstructions of publicly described style
families whose exact wording is not published anywhere; they are flagged with
``reconstructed=True`` and meant to be overridden by a strategy pack when a
curated prompt set exists.

Strategy packs are JSON lists:
``[{name, template, target_style, max_source_tokens, sampling: {temperature,
top_p, max_new_tokens}}]``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Sequence

from .corpus import Document, REFERENCE_TOKENIZER, Tokenizer
from .errors import EmptyDocument, EmptyEnsemble, SchemaViolation, UnknownStrategy, UnreadableFile
from .hashing import unit_float
from .segmentation import split_sentences

PLACEHOLDER = "{{document}}"

SUMMARIZE_INSTRUCTION = (
    "Summarize the following text. Directly start with the summary. Do not say anything else."
)
CONTINUE_INSTRUCTION = "Continue the following text in the same style as the original."

WEIGHT_TOLERANCE = 1e-9


@dataclass(frozen=True)
class SamplingParams:
    temperature: float = 0.8
    top_p: float = 0.95
    max_new_tokens: int = 1024

    def __post_init__(self) -> None:
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if not (0 < self.top_p <= 1):
            raise ValueError("top_p must be in (0, 1]")
        if self.max_new_tokens <= 0:
            raise ValueError("max_new_tokens must be positive")


@dataclass(frozen=True)
class PromptStrategy:
    name: str
    template: str
    target_style: str
    max_source_tokens: int = 1000
    sampling: SamplingParams = field(default_factory=SamplingParams)
    reconstructed: bool = False

    def __post_init__(self) -> None:
        if self.template.count(PLACEHOLDER) != 1:
            raise ValueError(
                f"strategy {self.name!r}: template must contain {PLACEHOLDER} exactly once"
            )
        if self.max_source_tokens <= 0:
            raise ValueError(f"strategy {self.name!r}: max_source_tokens must be positive")


def _instruct(instruction: str) -> str:
    return instruction + "\n\n" + PLACEHOLDER


_BUILTINS = (
    PromptStrategy(
        name="summarize",
        template=_instruct(SUMMARIZE_INSTRUCTION),
        target_style="summary",
    ),
    PromptStrategy(
        name="continue",
        template=_instruct(CONTINUE_INSTRUCTION),
        target_style="continuation",
    ),
    PromptStrategy(
        name="qa_rephrase",
        template=_instruct(
            "Rewrite the following text as a series of question and answer pairs"
            " covering its key facts. Label each pair with 'Question:' and 'Answer:'."
        ),
        target_style="qa",
        reconstructed=True,
    ),
    PromptStrategy(
        name="mcq",
        template=_instruct(
            "Write multiple-choice questions that test the main points of the"
            " following text. Give four options labeled A) through D) for each"
            " question, then state the correct option."
        ),
        target_style="mcq",
        reconstructed=True,
    ),
    PromptStrategy(
        name="yesno",
        template=_instruct(
            "Write yes/no questions about the content of the following text."
            " After each question give the correct answer and a one-sentence"
            " justification."
        ),
        target_style="yesno",
        reconstructed=True,
    ),
    PromptStrategy(
        name="open_ended",
        template=_instruct(
            "Write open-ended questions that require detailed answers about the"
            " following text, each followed by a thorough answer grounded in the"
            " text."
        ),
        target_style="open_ended",
        reconstructed=True,
    ),
    PromptStrategy(
        name="reading_comprehension",
        template=_instruct(
            "Turn the following text into a reading comprehension exercise:"
            " restate the passage clearly, then add comprehension questions with"
            " their answers."
        ),
        target_style="reading_comprehension",
        reconstructed=True,
    ),
)


class StrategyRegistry:
    """Immutable name -> strategy lookup."""

    def __init__(self, strategies: Iterable[PromptStrategy]):
        self._by_name: dict[str, PromptStrategy] = {}
        for strat in strategies:
            if strat.name in self._by_name:
                raise ValueError(f"duplicate strategy name {strat.name!r}")
            self._by_name[strat.name] = strat

    def lookup(self, name: str) -> PromptStrategy:
        try:
            return self._by_name[name]
        except KeyError:
            raise UnknownStrategy(
                f"unknown strategy {name!r}; known: {sorted(self._by_name)}"
            ) from None

    def names(self) -> list[str]:
        return list(self._by_name)

    def merged(self, extra: Iterable[PromptStrategy]) -> "StrategyRegistry":
        """New registry where `extra` entries override same-named builtins."""
        merged = dict(self._by_name)
        for strat in extra:
            merged[strat.name] = strat
        return StrategyRegistry(merged.values())

    def __iter__(self) -> Iterator[PromptStrategy]:
        return iter(self._by_name.values())

    def __contains__(self, name: str) -> bool:
        return name in self._by_name


def builtin_registry() -> StrategyRegistry:
    return StrategyRegistry(_BUILTINS)


def load_strategy_pack(path: Path | str) -> list[PromptStrategy]:
    path = Path(path)
    try:
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise UnreadableFile(f"cannot open {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise SchemaViolation(f"{path}: invalid JSON: {exc}") from exc
    if not isinstance(raw, list):
        raise SchemaViolation(f"{path}: strategy pack must be a JSON list")
    strategies = []
    for i, entry in enumerate(raw):
        try:
            sampling = SamplingParams(**entry.get("sampling", {}))
            strategies.append(
                PromptStrategy(
                    name=entry["name"],
                    template=entry["template"],
                    target_style=entry["target_style"],
                    max_source_tokens=entry.get("max_source_tokens", 1000),
                    sampling=sampling,
                    reconstructed=bool(entry.get("reconstructed", False)),
                )
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise SchemaViolation(f"{path}: entry {i}: {exc}") from exc
    return strategies


def strategy_to_dict(strategy: PromptStrategy) -> dict:
    return {
        "name": strategy.name,
        "template": strategy.template,
        "target_style": strategy.target_style,
        "max_source_tokens": strategy.max_source_tokens,
        "sampling": {
            "temperature": strategy.sampling.temperature,
            "top_p": strategy.sampling.top_p,
            "max_new_tokens": strategy.sampling.max_new_tokens,
        },
        "reconstructed": strategy.reconstructed,
    }


# -- rendering ----------------------------------------------------------------

def truncate_at_sentence(text: str, max_tokens: int, tokenizer: Tokenizer) -> str:
    """Longest prefix of whole sentences within `max_tokens`.

    At least one sentence is always kept so the rendered prompt never loses
    the document entirely.
    """
    if tokenizer.count(text) <= max_tokens:
        return text
    spans = split_sentences(text, tokenizer)
    cum = 0
    end = spans[0].end
    for i, span in enumerate(spans):
        if i > 0 and cum + span.token_count > max_tokens:
            break
        cum += span.token_count
        end = span.end
    return text[spans[0].start:end]


def render_prompt(
    strategy: PromptStrategy,
    doc: Document,
    tokenizer: Tokenizer = REFERENCE_TOKENIZER,
) -> str:
    """Substitute the (possibly truncated) document into the template."""
    if not doc.text.strip():
        raise EmptyDocument(f"document {doc.id!r} is empty")
    source = truncate_at_sentence(doc.text, strategy.max_source_tokens, tokenizer)
    return strategy.template.replace(PLACEHOLDER, source)


# -- ensembles ----------------------------------------------------------------

@dataclass(frozen=True)
class StrategyEnsemble:
    """Weighted strategy mix; weights are target shares of the corpus."""

    members: tuple[tuple[str, float], ...]
    seed: int = 0

    def __post_init__(self) -> None:
        if not self.members:
            raise EmptyEnsemble("ensemble has no members")
        total = 0.0
        for name, weight in self.members:
            if weight <= 0:
                raise ValueError(f"ensemble weight for {name!r} must be positive")
            total += weight
        if abs(total - 1.0) > WEIGHT_TOLERANCE:
            raise ValueError(f"ensemble weights must sum to 1, got {total}")

    @classmethod
    def single(cls, name: str, seed: int = 0) -> "StrategyEnsemble":
        return cls(members=((name, 1.0),), seed=seed)

    def to_dict(self) -> dict:
        return {"members": [[n, w] for n, w in self.members], "seed": self.seed}

    @classmethod
    def from_dict(cls, obj: dict) -> "StrategyEnsemble":
        members = obj["members"]
        if isinstance(members, dict):
            pairs = tuple((str(k), float(v)) for k, v in members.items())
        else:
            pairs = tuple((str(n), float(w)) for n, w in members)
        return cls(members=pairs, seed=int(obj.get("seed", 0)))


def load_ensemble(path: Path | str) -> StrategyEnsemble:
    path = Path(path)
    try:
        with open(path, encoding="utf-8") as fh:
            obj = json.load(fh)
    except OSError as exc:
        raise UnreadableFile(f"cannot open {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise SchemaViolation(f"{path}: invalid JSON: {exc}") from exc
    try:
        return StrategyEnsemble.from_dict(obj)
    except (KeyError, TypeError, ValueError, EmptyEnsemble) as exc:
        if isinstance(exc, EmptyEnsemble):
            raise
        raise SchemaViolation(f"{path}: malformed ensemble: {exc}") from exc


def assign_strategy(ensemble: StrategyEnsemble, doc_id: str) -> str:
    """Strategy for one document: a pure function of (seed, doc id).

    The keyed hash maps the id into [0, 1); cumulative weight intervals in
    member order select the strategy, so assignments are independent of corpus
    order and sharding.
    """
    u = unit_float(ensemble.seed, "assign", doc_id)
    cum = 0.0
    for name, weight in ensemble.members:
        cum += weight
        if u < cum:
            return name
    return ensemble.members[-1][0]  # guard against float round-off at u ~ 1.0


def assign_strategies(
    ensemble: StrategyEnsemble, documents: Sequence[Document]
) -> list[tuple[str, str]]:
    """(document id, strategy name) pairs in input order."""
    return [(doc.id, assign_strategy(ensemble, doc.id)) for doc in documents]
