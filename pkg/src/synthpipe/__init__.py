"""Synthetic pretraining-data curation pipeline.

Stages: corpus ingestion (`corpus`), midpoint splitting (`segmentation`),
prompt strategies (`strategies`), backend-driven rephrasing (`generation`),
conversational style auditing (`style`), token-budgeted mixture construction
(`mixture`), experiment manifests (`manifests`), and results analysis
(`analysis`). The `synthpipe` CLI wires them together.
"""

from .corpus import (
    CorpusHandle,
    Document,
    REFERENCE_TOKENIZER,
    WhitespaceTokenizer,
    count_tokens,
    ingest_jsonl,
    iter_documents,
    load_documents,
    load_manifest,
    write_shards,
)
from .generation import (
    BackendConfig,
    GenerationRecord,
    HttpChatBackend,
    MockBackend,
    generate_batch,
    mock_generate,
    synthesize_corpus,
)
from .manifests import Environment, ExperimentManifest, builtin_manifests, validate_manifest
from .mixture import (
    MixtureSpec,
    RepetitionPolicy,
    UpsampleTarget,
    build_mixture,
    build_rq2_corpora,
    build_rq3_corpora,
    epochs_required,
    upsample_to_fraction,
)
from .segmentation import build_half_corpus, split_at_midpoint, split_sentences
from .strategies import (
    PromptStrategy,
    SamplingParams,
    StrategyEnsemble,
    assign_strategies,
    builtin_registry,
    render_prompt,
)
from .style import (
    CLASSIFICATION_PROMPT,
    FractionEstimate,
    StyleVerdict,
    classify_conversational,
    estimate_fraction,
)
from .analysis import (
    BenchmarkTable,
    LearningCurve,
    SpeedupResult,
    average_shots,
    delta_vs_baseline,
    pareto_frontier,
    smooth_curve,
    speedup_to_baseline,
)

__version__ = "0.1.0"
