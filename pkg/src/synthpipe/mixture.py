"""Token-budgeted training mixtures with repetition and upsampling control.

The sampling contract (all of it keyed hashing, so independent reimplementation
reproduces it exactly):

* Component sub-seed: ``derive_seed(spec.seed, "component", name)`` (strata in
  upsampled mixtures use ``("stratum", kind)``).
* Per-epoch document order: ascending ``hash_u64(comp_seed, "shuffle", epoch,
  doc.id)``; every repetition epoch reshuffles.
* Interleaving: at output step ``t``, a component is chosen by mapping
  ``unit_float(spec.seed, "interleave", t)`` onto cumulative remaining token
  quotas (weighted sampling without replacement); emission stops once the
  total reaches the budget.

Whole documents only, so realized totals land within one document of their
targets: the emitted total lies in [budget, budget + maxdoc), and for the
two-component mixtures used throughout, each component is within one
max-document of weight x budget. Documents re-emitted in epoch e > 0 carry an
``:e{e}`` id suffix; the provenance index maps every output position back to
(corpus, original doc id, epoch).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from decimal import Decimal, ROUND_HALF_UP
from pathlib import Path
from typing import Iterator, Mapping, Sequence

from .corpus import (
    CorpusHandle,
    Document,
    REFERENCE_TOKENIZER,
    Tokenizer,
    load_documents,
    write_shards,
)
from .errors import (
    EpochCapExceeded,
    InsufficientLabeledTokens,
    InsufficientTokens,
    SchemaViolation,
    UnreadableFile,
)
from .hashing import derive_seed, hash_u64, unit_float
from .io_utils import atomic_write_json, atomic_write_text
from .segmentation import HalfCorpusResult, build_half_corpus
from .strategies import StrategyEnsemble, StrategyRegistry, WEIGHT_TOLERANCE
from .style import owt_label

DEFAULT_SHARD_TOKENS = 1_000_000
_EPOCH_CAP_SLACK = 1e-9  # tolerate float round-off in quota/cap comparisons


# -- spec types -----------------------------------------------------------------

@dataclass(frozen=True)
class RepetitionPolicy:
    mode: str  # "forbid" or "allow"
    max_epochs: float | None = None

    def __post_init__(self) -> None:
        if self.mode not in ("forbid", "allow"):
            raise ValueError(f"repetition mode must be 'forbid' or 'allow', got {self.mode!r}")
        if self.mode == "allow":
            if self.max_epochs is None or self.max_epochs <= 0:
                raise ValueError("allow policy requires max_epochs > 0")
        elif self.max_epochs is not None:
            raise ValueError("forbid policy takes no max_epochs")

    @classmethod
    def forbid(cls) -> "RepetitionPolicy":
        return cls(mode="forbid")

    @classmethod
    def allow(cls, max_epochs: float) -> "RepetitionPolicy":
        return cls(mode="allow", max_epochs=max_epochs)

    def to_dict(self) -> dict:
        if self.mode == "forbid":
            return {"policy": "forbid"}
        return {"policy": "allow", "max_epochs": self.max_epochs}

    @classmethod
    def from_dict(cls, obj: dict) -> "RepetitionPolicy":
        if obj["policy"] == "forbid":
            return cls.forbid()
        return cls.allow(float(obj["max_epochs"]))


@dataclass(frozen=True)
class UpsampleTarget:
    predicate: str
    target_fraction: float

    def __post_init__(self) -> None:
        if not 0.0 <= self.target_fraction <= 1.0:
            raise ValueError("target_fraction must be in [0, 1]")

    def to_dict(self) -> dict:
        return {"predicate": self.predicate, "target_fraction": self.target_fraction}

    @classmethod
    def from_dict(cls, obj: dict) -> "UpsampleTarget":
        return cls(predicate=obj["predicate"], target_fraction=float(obj["target_fraction"]))


@dataclass(frozen=True)
class MixtureSpec:
    components: tuple[tuple[str, float], ...]
    total_token_budget: int
    seed: int = 0
    repetition: RepetitionPolicy = RepetitionPolicy.forbid()
    upsample: UpsampleTarget | None = None

    def __post_init__(self) -> None:
        if not self.components:
            raise ValueError("mixture needs at least one component")
        total = 0.0
        for name, weight in self.components:
            if weight <= 0:
                raise ValueError(f"component {name!r} weight must be positive")
            total += weight
        if abs(total - 1.0) > WEIGHT_TOLERANCE:
            raise ValueError(f"component weights must sum to 1, got {total}")
        if self.total_token_budget <= 0:
            raise ValueError("total_token_budget must be positive")

    def to_dict(self) -> dict:
        obj = {
            "components": [[n, w] for n, w in self.components],
            "total_token_budget": self.total_token_budget,
            "seed": self.seed,
            "repetition": self.repetition.to_dict(),
        }
        obj["upsample"] = self.upsample.to_dict() if self.upsample else None
        return obj

    @classmethod
    def from_dict(cls, obj: dict) -> "MixtureSpec":
        components = obj["components"]
        if isinstance(components, dict):
            pairs = tuple((str(k), float(v)) for k, v in components.items())
        else:
            pairs = tuple((str(n), float(w)) for n, w in components)
        upsample = obj.get("upsample")
        return cls(
            components=pairs,
            total_token_budget=int(obj["total_token_budget"]),
            seed=int(obj.get("seed", 0)),
            repetition=RepetitionPolicy.from_dict(obj.get("repetition", {"policy": "forbid"})),
            upsample=UpsampleTarget.from_dict(upsample) if upsample else None,
        )


def load_mixture_spec(path: Path | str) -> MixtureSpec:
    path = Path(path)
    try:
        with open(path, encoding="utf-8") as fh:
            obj = json.load(fh)
    except OSError as exc:
        raise UnreadableFile(f"cannot open {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise SchemaViolation(f"{path}: invalid JSON: {exc}") from exc
    try:
        return MixtureSpec.from_dict(obj)
    except (KeyError, TypeError, ValueError) as exc:
        raise SchemaViolation(f"{path}: malformed mixture spec: {exc}") from exc


# -- reports ----------------------------------------------------------------------

@dataclass
class ComponentReport:
    name: str
    weight: float
    realized_tokens: int
    realized_fraction: float
    epochs: float
    docs: int

    def to_dict(self) -> dict:
        return self.__dict__.copy()


@dataclass
class MixtureReport:
    budget: int
    total_tokens: int
    components: list[ComponentReport]
    realized_upsample_fraction: float | None = None
    provenance_path: str = "provenance.jsonl"

    def to_dict(self) -> dict:
        return {
            "budget": self.budget,
            "total_tokens": self.total_tokens,
            "components": [c.to_dict() for c in self.components],
            "realized_upsample_fraction": self.realized_upsample_fraction,
            "provenance_path": self.provenance_path,
        }


@dataclass
class MixtureResult:
    handle: CorpusHandle
    report: MixtureReport


# -- sampling core -----------------------------------------------------------------

class _ComponentStream:
    """Seeded shuffle-and-cycle document stream for one component."""

    def __init__(self, name: str, docs: Sequence[Document], comp_seed: int, quota: float):
        self.name = name
        self.docs = docs
        self.comp_seed = comp_seed
        self.quota = quota
        self.total_tokens = sum(d.token_count for d in docs)
        self.emitted_tokens = 0
        self.emitted_docs = 0
        self._iter = self._generate()

    def _epoch_order(self, epoch: int) -> list[Document]:
        return sorted(
            self.docs,
            key=lambda d: (hash_u64(self.comp_seed, "shuffle", epoch, d.id), d.id),
        )

    def _generate(self) -> Iterator[tuple[Document, int]]:
        epoch = 0
        while True:
            for doc in self._epoch_order(epoch):
                yield doc, epoch
            epoch += 1

    @property
    def remaining(self) -> float:
        return self.quota - self.emitted_tokens

    def take(self) -> tuple[Document, int]:
        doc, epoch = next(self._iter)
        self.emitted_tokens += doc.token_count
        self.emitted_docs += 1
        return doc, epoch

    @property
    def epochs_consumed(self) -> float:
        return self.emitted_tokens / self.total_tokens if self.total_tokens else 0.0


def _check_feasible(
    name: str, total_tokens: int, quota: float, policy: RepetitionPolicy
) -> None:
    if quota <= 0:
        return
    if total_tokens <= 0:
        raise InsufficientTokens(f"component {name!r} is empty but has a positive quota")
    if policy.mode == "forbid" and total_tokens < quota:
        raise InsufficientTokens(
            f"component {name!r}: repetition forbidden but quota {quota:.0f} tokens"
            f" exceeds available {total_tokens}"
        )
    if policy.mode == "allow":
        cap = policy.max_epochs * total_tokens
        if quota > cap * (1 + _EPOCH_CAP_SLACK):
            raise EpochCapExceeded(
                f"component {name!r}: quota {quota:.0f} tokens needs"
                f" {quota / total_tokens:.2f} epochs, cap is {policy.max_epochs}"
            )


@dataclass
class _Emitted:
    doc: Document
    component: str
    epoch: int


def _merge_streams(seed: int, budget: int, streams: list[_ComponentStream]) -> list[_Emitted]:
    """Stratified merge: emit whole documents until the budget is reached."""
    out: list[_Emitted] = []
    total = 0
    step = 0
    while total < budget:
        active = [s for s in streams if s.remaining > 0]
        if not active:
            break
        total_remaining = sum(s.remaining for s in active)
        u = unit_float(seed, "interleave", step)
        threshold = u * total_remaining
        cum = 0.0
        chosen = active[-1]
        for s in active:
            cum += s.remaining
            if threshold < cum:
                chosen = s
                break
        doc, epoch = chosen.take()
        out.append(_Emitted(doc=doc, component=chosen.name, epoch=epoch))
        total += doc.token_count
        step += 1
    return out


def _materialize(
    emitted: Sequence[_Emitted],
    out_dir: Path,
    name: str,
    max_tokens_per_shard: int,
) -> CorpusHandle:
    docs = []
    for e in emitted:
        doc = e.doc
        out_id = doc.id if e.epoch == 0 else f"{doc.id}:e{e.epoch}"
        meta = dict(doc.meta)
        meta["mixture_component"] = e.component
        meta["epoch"] = str(e.epoch)
        docs.append(replace(doc, id=out_id, meta=meta))
    return write_shards(docs, out_dir, max_tokens_per_shard, name=name)


def _write_provenance(emitted: Sequence[_Emitted], path: Path, stratum: dict | None = None) -> None:
    lines = []
    for pos, e in enumerate(emitted):
        obj = {
            "out_position": pos,
            "doc_id": e.doc.id,
            "corpus": e.component if stratum is None else stratum[e.component],
            "epoch": e.epoch,
        }
        if stratum is not None:
            obj["stratum"] = e.component
        lines.append(json.dumps(obj, sort_keys=True))
    atomic_write_text(path, "\n".join(lines) + ("\n" if lines else ""))


def _load_source(source: CorpusHandle | Sequence[Document], tokenizer: Tokenizer) -> list[Document]:
    if isinstance(source, CorpusHandle):
        return load_documents(source, tokenizer)
    return list(source)


# -- public operations ---------------------------------------------------------------

def epochs_required(available_tokens: float, demanded_tokens: float) -> float:
    """Repetition factor demanded/available, reported to 4 decimals (half-up)."""
    if available_tokens <= 0:
        raise ValueError("available_tokens must be positive")
    ratio = Decimal(str(demanded_tokens)) / Decimal(str(available_tokens))
    return float(ratio.quantize(Decimal("0.0001"), rounding=ROUND_HALF_UP))


def build_mixture(
    spec: MixtureSpec,
    sources: Mapping[str, CorpusHandle | Sequence[Document]],
    out_dir: Path | str,
    *,
    tokenizer: Tokenizer = REFERENCE_TOKENIZER,
    verdicts: Mapping[str, int] | None = None,
    name: str = "mixture",
    max_tokens_per_shard: int = DEFAULT_SHARD_TOKENS,
) -> MixtureResult:
    """Interleave component corpora into a token-budgeted training mixture.

    Deterministic in (spec, sources): identical inputs produce byte-identical
    shards. Specs carrying an upsample target are routed to
    :func:`upsample_to_fraction`.
    """
    if spec.upsample is not None:
        return upsample_to_fraction(
            spec,
            sources,
            out_dir,
            verdicts=verdicts,
            tokenizer=tokenizer,
            name=name,
            max_tokens_per_shard=max_tokens_per_shard,
        )
    out_dir = Path(out_dir)
    missing = [n for n, _ in spec.components if n not in sources]
    if missing:
        raise UnreadableFile(f"missing mixture sources: {missing}")

    streams: list[_ComponentStream] = []
    for comp_name, weight in spec.components:
        docs = _load_source(sources[comp_name], tokenizer)
        quota = weight * spec.total_token_budget
        total = sum(d.token_count for d in docs)
        _check_feasible(comp_name, total, quota, spec.repetition)
        streams.append(
            _ComponentStream(
                name=comp_name,
                docs=docs,
                comp_seed=derive_seed(spec.seed, "component", comp_name),
                quota=quota,
            )
        )

    emitted = _merge_streams(spec.seed, spec.total_token_budget, streams)
    handle = _materialize(emitted, out_dir, name, max_tokens_per_shard)
    _write_provenance(emitted, out_dir / "provenance.jsonl")

    total_tokens = sum(e.doc.token_count for e in emitted)
    components = [
        ComponentReport(
            name=s.name,
            weight=dict(spec.components)[s.name],
            realized_tokens=s.emitted_tokens,
            realized_fraction=s.emitted_tokens / spec.total_token_budget,
            epochs=s.epochs_consumed,
            docs=s.emitted_docs,
        )
        for s in streams
    ]
    report = MixtureReport(
        budget=spec.total_token_budget,
        total_tokens=total_tokens,
        components=components,
    )
    atomic_write_json(out_dir / "report.json", report.to_dict())
    return MixtureResult(handle=handle, report=report)


def upsample_to_fraction(
    spec: MixtureSpec,
    sources: Mapping[str, CorpusHandle | Sequence[Document]],
    out_dir: Path | str,
    *,
    verdicts: Mapping[str, int] | None = None,
    tokenizer: Tokenizer = REFERENCE_TOKENIZER,
    name: str = "mixture",
    max_tokens_per_shard: int = DEFAULT_SHARD_TOKENS,
) -> MixtureResult:
    """Raise the conversational share of a single-source mixture to a target.

    The source pool is split into conversational / rest strata using
    ``verdicts`` (doc id -> 0/1) where provided, falling back to the
    style-label rule; the remainder of the budget is drawn from the rest
    stratum. Realized conversational tokens land within one document of
    target_fraction x budget.
    """
    if spec.upsample is None:
        raise ValueError("spec has no upsample target")
    if len(spec.components) != 1:
        raise ValueError("upsampled mixtures take exactly one source component")
    out_dir = Path(out_dir)
    comp_name, _ = spec.components[0]
    if comp_name not in sources:
        raise UnreadableFile(f"missing mixture source: {comp_name!r}")
    docs = _load_source(sources[comp_name], tokenizer)

    def is_conversational(doc: Document) -> bool:
        if verdicts is not None and doc.id in verdicts:
            return bool(verdicts[doc.id])
        return bool(owt_label(doc.style_labels))

    conv = [d for d in docs if is_conversational(d)]
    rest = [d for d in docs if not is_conversational(d)]
    target = spec.upsample.target_fraction
    conv_quota = target * spec.total_token_budget
    rest_quota = spec.total_token_budget - conv_quota

    conv_total = sum(d.token_count for d in conv)
    try:
        _check_feasible("conversational", conv_total, conv_quota, spec.repetition)
    except (InsufficientTokens, EpochCapExceeded) as exc:
        raise InsufficientLabeledTokens(str(exc)) from exc
    _check_feasible("rest", sum(d.token_count for d in rest), rest_quota, spec.repetition)

    streams = [
        _ComponentStream(
            name="conversational",
            docs=conv,
            comp_seed=derive_seed(spec.seed, "stratum", "conversational"),
            quota=conv_quota,
        ),
        _ComponentStream(
            name="rest",
            docs=rest,
            comp_seed=derive_seed(spec.seed, "stratum", "rest"),
            quota=rest_quota,
        ),
    ]
    emitted = _merge_streams(spec.seed, spec.total_token_budget, streams)
    handle = _materialize(emitted, out_dir, name, max_tokens_per_shard)
    _write_provenance(
        emitted,
        out_dir / "provenance.jsonl",
        stratum={"conversational": comp_name, "rest": comp_name},
    )

    total_tokens = sum(e.doc.token_count for e in emitted)
    conv_tokens = streams[0].emitted_tokens
    components = [
        ComponentReport(
            name=f"{comp_name}[{s.name}]",
            weight=target if s.name == "conversational" else 1.0 - target,
            realized_tokens=s.emitted_tokens,
            realized_fraction=s.emitted_tokens / spec.total_token_budget,
            epochs=s.epochs_consumed,
            docs=s.emitted_docs,
        )
        for s in streams
    ]
    report = MixtureReport(
        budget=spec.total_token_budget,
        total_tokens=total_tokens,
        components=components,
        realized_upsample_fraction=conv_tokens / total_tokens if total_tokens else 0.0,
    )
    atomic_write_json(out_dir / "report.json", report.to_dict())
    return MixtureResult(handle=handle, report=report)


# -- data-constrained corpus constructions ----------------------------------------

@dataclass
class Rq2Corpora:
    """Full / repeat / synthetic-extension trio for data-constrained training."""

    full: MixtureResult
    repeat2x: MixtureResult
    synthetic_extension: MixtureResult
    half: HalfCorpusResult
    synthetic: "object"  # SynthesisResult; typed loosely to avoid import cycle

    def as_dict(self) -> dict[str, MixtureResult]:
        return {
            "full": self.full,
            "repeat2x": self.repeat2x,
            "synthetic_extension": self.synthetic_extension,
        }


def build_rq2_corpora(
    source: CorpusHandle,
    budget: int,
    backend,
    out_dir: Path | str,
    *,
    seed: int = 0,
    keep: str = "second",
    tokenizer: Tokenizer = REFERENCE_TOKENIZER,
    registry: StrategyRegistry | None = None,
    max_tokens_per_shard: int = DEFAULT_SHARD_TOKENS,
    docs_per_shard: int = 1000,
    sleep=None,
) -> Rq2Corpora:
    """Build the three data-constrained corpora from one source corpus.

    ``full`` spends the budget on unmodified documents; ``repeat2x`` cycles
    the kept midpoint halves (about two epochs when the budget equals the
    source size); ``synthetic_extension`` pairs the kept halves with
    continuation rephrasings generated from those same halves.
    """
    from .generation import synthesize_corpus  # local import: engine depends on strategies only

    out_dir = Path(out_dir)
    half = build_half_corpus(source, keep, out_dir=out_dir / "half", tokenizer=tokenizer)
    half_docs = load_documents(half.handle, tokenizer)

    synth = synthesize_corpus(
        half_docs,
        StrategyEnsemble.single("continue", seed=derive_seed(seed, "rq2", "assign")),
        backend,
        out_dir / "synth",
        name=f"{source.name}-continuation",
        registry=registry,
        tokenizer=tokenizer,
        docs_per_shard=docs_per_shard,
        sleep=sleep,
    )

    full = build_mixture(
        MixtureSpec(
            components=((source.name, 1.0),),
            total_token_budget=budget,
            seed=derive_seed(seed, "rq2", "full"),
        ),
        {source.name: source},
        out_dir / "full",
        tokenizer=tokenizer,
        name="full",
        max_tokens_per_shard=max_tokens_per_shard,
    )

    repeat2x = build_mixture(
        MixtureSpec(
            components=((half.handle.name, 1.0),),
            total_token_budget=budget,
            seed=derive_seed(seed, "rq2", "repeat2x"),
            repetition=RepetitionPolicy.allow(4.0),
        ),
        {half.handle.name: half.handle},
        out_dir / "repeat2x",
        tokenizer=tokenizer,
        name="repeat2x",
        max_tokens_per_shard=max_tokens_per_shard,
    )

    half_weight = min(half.handle.total_tokens / budget, 1.0)
    if half_weight >= 1.0:
        components: tuple[tuple[str, float], ...] = ((half.handle.name, 1.0),)
    else:
        components = (
            (half.handle.name, half_weight),
            (synth.handle.name, 1.0 - half_weight),
        )
    extension = build_mixture(
        MixtureSpec(
            components=components,
            total_token_budget=budget,
            seed=derive_seed(seed, "rq2", "extension"),
            repetition=RepetitionPolicy.allow(4.0),
        ),
        {half.handle.name: half.handle, synth.handle.name: synth.handle},
        out_dir / "synthetic_extension",
        tokenizer=tokenizer,
        name="synthetic_extension",
        max_tokens_per_shard=max_tokens_per_shard,
    )

    return Rq2Corpora(
        full=full,
        repeat2x=repeat2x,
        synthetic_extension=extension,
        half=half,
        synthetic=synth,
    )


@dataclass
class Rq3Corpora:
    """Quality-tier rephrasing combinations, each a 50:50 mix with HQ web data."""

    hq_synth_plus_hq: MixtureResult
    lq_synth_plus_hq: MixtureResult
    lq_plus_hq: MixtureResult
    hq_synth: "object"
    lq_synth: "object"

    def as_dict(self) -> dict[str, MixtureResult]:
        return {
            "hq_synth_plus_hq": self.hq_synth_plus_hq,
            "lq_synth_plus_hq": self.lq_synth_plus_hq,
            "lq_plus_hq": self.lq_plus_hq,
        }


def build_rq3_corpora(
    hq_corpus: CorpusHandle,
    lq_corpus: CorpusHandle,
    backend,
    budget: int,
    out_dir: Path | str,
    *,
    seed: int = 0,
    ensemble: StrategyEnsemble | None = None,
    tokenizer: Tokenizer = REFERENCE_TOKENIZER,
    registry: StrategyRegistry | None = None,
    docs_per_shard: int = 1000,
    max_tokens_per_shard: int = DEFAULT_SHARD_TOKENS,
    sleep=None,
) -> Rq3Corpora:
    """Compare rephrasing high- vs low-quality seed data.

    The HQ rephrasings come from the same HQ documents present in the final
    mix, so source knowledge is held fixed; the no-synthetic control mixes raw
    LQ with HQ instead.
    """
    from .generation import synthesize_corpus

    out_dir = Path(out_dir)
    hq_docs = load_documents(hq_corpus, tokenizer)
    lq_docs = load_documents(lq_corpus, tokenizer)
    for docs, handle, tier in ((hq_docs, hq_corpus, "hq"), (lq_docs, lq_corpus, "lq")):
        bad = [d.id for d in docs if d.quality_tier != tier]
        if bad:
            raise ValueError(
                f"corpus {handle.name!r} must be uniformly tier {tier!r};"
                f" offending ids: {bad[:3]}"
            )

    ensemble = ensemble or StrategyEnsemble.single(
        "qa_rephrase", seed=derive_seed(seed, "rq3", "assign")
    )
    hq_synth = synthesize_corpus(
        hq_docs, ensemble, backend, out_dir / "hq_synth",
        name=f"{hq_corpus.name}-synth", registry=registry, tokenizer=tokenizer,
        docs_per_shard=docs_per_shard, sleep=sleep,
    )
    lq_synth = synthesize_corpus(
        lq_docs, ensemble, backend, out_dir / "lq_synth",
        name=f"{lq_corpus.name}-synth", registry=registry, tokenizer=tokenizer,
        docs_per_shard=docs_per_shard, sleep=sleep,
    )

    def fifty_fifty(other_name: str, other: CorpusHandle, label: str) -> MixtureResult:
        return build_mixture(
            MixtureSpec(
                components=((hq_corpus.name, 0.5), (other_name, 0.5)),
                total_token_budget=budget,
                seed=derive_seed(seed, "rq3", label),
                repetition=RepetitionPolicy.allow(4.0),
            ),
            {hq_corpus.name: hq_corpus, other_name: other},
            out_dir / label,
            tokenizer=tokenizer,
            name=label,
            max_tokens_per_shard=max_tokens_per_shard,
        )

    return Rq3Corpora(
        hq_synth_plus_hq=fifty_fifty(hq_synth.handle.name, hq_synth.handle, "hq_synth_plus_hq"),
        lq_synth_plus_hq=fifty_fifty(lq_synth.handle.name, lq_synth.handle, "lq_synth_plus_hq"),
        lq_plus_hq=fifty_fifty(lq_corpus.name, lq_corpus, "lq_plus_hq"),
        hq_synth=hq_synth,
        lq_synth=lq_synth,
    )
