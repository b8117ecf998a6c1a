"""Conversational-content classification and corpus style auditing.

Three classification methods with different cost/fidelity trade-offs:

* ``llm`` renders the fixed classification prompt (criteria plus eight
  few-shot examples, appended document) against a chat backend and parses a
  strict 0/1 answer. The prompt text is frozen and golden-tested.
* ``heuristic`` is offline and free: a text is conversational iff it contains
  at least two speaker-turn markers (``Q:`` / ``A:`` / ``User1:`` style tags
  or dialogue dashes). Calibrated to reproduce the few-shot examples' labels;
  the llm method remains the fidelity reference.
* ``owt_label`` trusts precomputed style labels: conversational iff any label
  is one of the four conversational web-taxonomy categories (Audio
  Transcript, Customer Support, FAQ, Q&A Forum).

``estimate_fraction`` draws a seeded simple random sample without replacement
and reports the conversational fraction with a Wilson 95% interval, which
behaves sanely for the small fractions (~3%) typical of web corpora.
"""

from __future__ import annotations

import heapq
import math
import re
from dataclasses import dataclass
from typing import Iterable, Sequence

from .corpus import CorpusHandle, Document, iter_documents
from .errors import MissingLabels, SampleTooLarge, UnparseableResponse
from .hashing import hash_u64
from .strategies import PLACEHOLDER, PromptStrategy, SamplingParams

METHODS = ("llm", "heuristic", "owt_label")

CONVERSATIONAL_OWT_CATEGORIES = frozenset(
    {"Audio Transcript", "Customer Support", "FAQ", "Q&A Forum"}
)

# -- classification prompt (fixed text; golden-tested, do not edit) -----------

FEW_SHOT_EXAMPLES: tuple[tuple[str, int], ...] = (
    (
        "The mitochondria is the powerhouse of the cell. It produces energy through "
        "cellular respiration. This process involves multiple steps including glycolysis "
        "and the Krebs cycle.",
        0,
    ),
    (
        "A: Hey, I'm having trouble with my code. The function keeps returning null. "
        "B: Can you share the error message you're getting? A: Here's the stack trace: "
        "[error details] B: Ah, I see the issue. You need to initialize the variable "
        "first. A: That fixed it, thanks!",
        1,
    ),
    (
        "Q: What's the capital of France? A: The capital of France is Paris. "
        "Q: What's its population? A: Paris has a population of about 2.2 million people.",
        1,
    ),
    (
        "To install Python, first download the installer from python.org. Run the "
        "executable and follow the installation wizard. Make sure to check the "
        "'Add Python to PATH' option during installation.",
        0,
    ),
    (
        "JavaScript was created by Brendan Eich in 1995 while he was working at "
        "Netscape Communications Corporation. The language was originally designed "
        "for client-side web development.",
        0,
    ),
    (
        "User1: Did anyone solve the memory leak issue? User2: Yes, it was related to "
        "the event listeners User1: How did you fix it? User2: We added a cleanup "
        "function in the useEffect hook User1: Got it, I'll try that",
        1,
    ),
    (
        "The Renaissance was a period in European history marking the transition from "
        "the Middle Ages to modernity and covering the 15th and 16th centuries.",
        0,
    ),
    (
        "- Can we push back the deadline? - I need to check with the team first. When "
        "would you need it by? - Would next Friday work? - Yes, that should be fine. "
        "I'll update the project timeline.",
        1,
    ),
)

_CRITERIA = """Your task is to classify text as either conversational (1) or non-conversational (0).

Conversational text (1) shows:
- Back-and-forth exchanges between participants
- Questions followed by relevant answers

Non-conversational text (0) typically:
- Presents information in a one-way format
- Lacks interaction between participants
- Contains formal or encyclopedic writing
- Focuses on describing or explaining without dialogue

Rate each text as exactly 0 or 1. Return only the number.

Examples:"""

CLASSIFY_TARGET_MARKER = "Classify the following text:"

CLASSIFICATION_PROMPT = (
    _CRITERIA
    + "\n"
    + "\n".join(f'- Text: "{text}"\n  Output: {label}' for text, label in FEW_SHOT_EXAMPLES)
    + "\n\n"
    + CLASSIFY_TARGET_MARKER
)

_CLASSIFY_SAMPLING = SamplingParams(temperature=0.0, top_p=1.0, max_new_tokens=4)


def _classification_strategy() -> PromptStrategy:
    return PromptStrategy(
        name="_classify_conversational",
        template=CLASSIFICATION_PROMPT + "\n" + PLACEHOLDER,
        target_style="classification",
        max_source_tokens=2048,
        sampling=_CLASSIFY_SAMPLING,
    )


# -- heuristic ----------------------------------------------------------------

# Speaker-turn markers: a capitalized short tag with a colon ("Q:", "A:",
# "User1:", "Bob:") or a dialogue dash, at line start or after whitespace.
_TURN_MARKER = re.compile(
    r"(?:^|(?<=\s))(?:[A-Z][A-Za-z0-9_]{0,15}:\s|-\s)",
    re.MULTILINE,
)

MIN_TURN_MARKERS = 2


def heuristic_label(text: str) -> int:
    return 1 if len(_TURN_MARKER.findall(text)) >= MIN_TURN_MARKERS else 0


def owt_label(style_labels: Sequence[str]) -> int:
    if not style_labels:
        raise MissingLabels("document has no style labels")
    return 1 if CONVERSATIONAL_OWT_CATEGORIES.intersection(style_labels) else 0


# -- verdicts -----------------------------------------------------------------

@dataclass(frozen=True)
class StyleVerdict:
    doc_id: str
    label: int
    method: str
    raw_response: str = ""


def _parse_binary(response: str) -> int:
    stripped = response.strip()
    if stripped not in ("0", "1"):
        raise UnparseableResponse(f"expected exactly '0' or '1', got {response!r}")
    return int(stripped)


def _classify_llm(docs: Sequence[Document], backend) -> list[StyleVerdict]:
    # Delegates concurrency, retries, and ordering to the generation engine.
    from .generation import STATUS_FAILED, generate_batch

    strategy = _classification_strategy()
    records = generate_batch([(doc, strategy) for doc in docs], backend)
    verdicts = []
    for doc, record in zip(docs, records):
        if record.status == STATUS_FAILED:
            raise UnparseableResponse(
                f"backend failed to classify document {doc.id!r} after {record.attempts} attempts"
            )
        verdicts.append(
            StyleVerdict(
                doc_id=doc.id,
                label=_parse_binary(record.output_text),
                method="llm",
                raw_response=record.output_text,
            )
        )
    return verdicts


def classify_conversational(doc: Document, method: str, backend=None) -> StyleVerdict:
    if method == "llm":
        if backend is None:
            raise ValueError("llm method requires a backend")
        return _classify_llm([doc], backend)[0]
    if method == "heuristic":
        return StyleVerdict(doc_id=doc.id, label=heuristic_label(doc.text), method="heuristic")
    if method == "owt_label":
        return StyleVerdict(doc_id=doc.id, label=owt_label(doc.style_labels), method="owt_label")
    raise ValueError(f"method must be one of {METHODS}, got {method!r}")


# -- fraction estimation --------------------------------------------------------

@dataclass(frozen=True)
class FractionEstimate:
    fraction: float
    sample_size: int
    ci_low: float
    ci_high: float
    seed: int

    def to_dict(self) -> dict:
        return {
            "fraction": self.fraction,
            "sample_size": self.sample_size,
            "ci_low": self.ci_low,
            "ci_high": self.ci_high,
            "seed": self.seed,
        }


_Z95 = 1.959963984540054


def wilson_interval(successes: int, n: int, z: float = _Z95) -> tuple[float, float]:
    if n <= 0:
        raise ValueError("n must be positive")
    p = successes / n
    denom = 1 + z * z / n
    center = (p + z * z / (2 * n)) / denom
    half = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / denom
    # endpoints are exactly 0/1 at the boundaries; clamp away float round-off
    low = 0.0 if successes == 0 else max(0.0, center - half)
    high = 1.0 if successes == n else min(1.0, center + half)
    return low, high


def sample_documents(
    docs: Iterable[Document], sample_size: int, seed: int
) -> list[Document]:
    """Seeded simple random sample without replacement, order-independent.

    Documents are ranked by a keyed hash of (seed, id) and the smallest
    `sample_size` ranks win, so the same seed selects the same documents
    regardless of iteration order or sharding.
    """
    ranked = heapq.nsmallest(
        sample_size, docs, key=lambda d: (hash_u64(seed, "style-sample", d.id), d.id)
    )
    return ranked


def estimate_fraction(
    corpus: CorpusHandle | Sequence[Document],
    method: str,
    sample_size: int,
    seed: int,
    backend=None,
) -> FractionEstimate:
    if isinstance(corpus, CorpusHandle):
        population = corpus.doc_count
        docs_iter: Iterable[Document] = iter_documents(corpus)
    else:
        population = len(corpus)
        docs_iter = corpus
    if sample_size < 1:
        raise ValueError("sample_size must be >= 1")
    if sample_size > population:
        raise SampleTooLarge(
            f"sample_size {sample_size} exceeds corpus doc_count {population}"
        )
    sample = sample_documents(docs_iter, sample_size, seed)
    if method == "llm":
        if backend is None:
            raise ValueError("llm method requires a backend")
        verdicts = _classify_llm(sample, backend)
        positives = sum(v.label for v in verdicts)
    elif method == "heuristic":
        positives = sum(heuristic_label(d.text) for d in sample)
    elif method == "owt_label":
        positives = sum(owt_label(d.style_labels) for d in sample)
    else:
        raise ValueError(f"method must be one of {METHODS}, got {method!r}")
    low, high = wilson_interval(positives, sample_size)
    return FractionEstimate(
        fraction=positives / sample_size,
        sample_size=sample_size,
        ci_low=low,
        ci_high=high,
        seed=seed,
    )
