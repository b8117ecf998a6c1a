"""Reproducible experiment manifests for an external trainer.

A manifest bundles everything a training job needs to consume pipeline
output: the mixture recipe, the strategy ensemble (when the run generates its
own synthetic data), the generator backend id, and training/eval metadata.
Token budgets scale by a single factor so the full recipe set can be
exercised at desk scale with ratios and procedures intact; the hparam and
eval blocks are emitted metadata only, never executed here.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

from .errors import SchemaViolation, UnreadableFile
from .mixture import MixtureSpec, RepetitionPolicy, UpsampleTarget
from .strategies import StrategyEnsemble, WEIGHT_TOLERANCE, builtin_registry

HERO_WEB_FRACTION = 0.6  # hero mixes: 60% web / 40% synthetic
ABLATION_BUDGET = 20_000_000_000  # standard ablation budget (50:50 real/synthetic)

_HPARAMS_COMMON = {
    "optimizer": "AdamW",
    "beta1": 0.9,
    "beta2": 0.95,
    "learning_rate": 5e-4,
    "weight_decay": 1e-7,
    "batch_size": 512,
    "context_length": 2048,
    "parallelism": "fsdp",
}

# linear warmup steps by model scale
_WARMUP_STEPS = {"1b": 4000, "3b": 16000, "8b": 16000}

_EVAL_PROTOCOL = {
    "num_tasks": 14,
    "scoring": "cloze_form",
    "shots": [0, 5],
    "aggregate": "mean accuracy over shots and tasks",
}


def train_hparams(model_scale: str) -> dict:
    hp = dict(_HPARAMS_COMMON)
    hp["warmup_steps"] = _WARMUP_STEPS[model_scale]
    return hp


@dataclass(frozen=True)
class ExperimentManifest:
    experiment_id: str
    mixture_spec: MixtureSpec
    strategy_ensemble: StrategyEnsemble | None
    backend_id: str | None
    model_scale: str
    train_hparams: dict = field(default_factory=dict)
    eval_protocol: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "experiment_id": self.experiment_id,
            "mixture_spec": self.mixture_spec.to_dict(),
            "strategy_ensemble": (
                self.strategy_ensemble.to_dict() if self.strategy_ensemble else None
            ),
            "backend_id": self.backend_id,
            "model_scale": self.model_scale,
            "train_hparams": self.train_hparams,
            "eval_protocol": self.eval_protocol,
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "ExperimentManifest":
        ensemble = obj.get("strategy_ensemble")
        return cls(
            experiment_id=obj["experiment_id"],
            mixture_spec=MixtureSpec.from_dict(obj["mixture_spec"]),
            strategy_ensemble=StrategyEnsemble.from_dict(ensemble) if ensemble else None,
            backend_id=obj.get("backend_id"),
            model_scale=obj["model_scale"],
            train_hparams=dict(obj.get("train_hparams", {})),
            eval_protocol=dict(obj.get("eval_protocol", {})),
        )


def save_manifest_json(manifest: ExperimentManifest, path: Path | str) -> None:
    from .io_utils import atomic_write_json

    atomic_write_json(Path(path), manifest.to_dict())


def load_manifest_json(path: Path | str) -> ExperimentManifest:
    path = Path(path)
    try:
        with open(path, encoding="utf-8") as fh:
            obj = json.load(fh)
    except OSError as exc:
        raise UnreadableFile(f"cannot open {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise SchemaViolation(f"{path}: invalid JSON: {exc}") from exc
    try:
        return ExperimentManifest.from_dict(obj)
    except (KeyError, TypeError, ValueError) as exc:
        raise SchemaViolation(f"{path}: malformed manifest: {exc}") from exc


def _scaled(budget: int, scale_factor: float) -> int:
    scaled = int(round(budget * scale_factor))
    return max(scaled, 1)


def builtin_manifests(scale_factor: float = 1.0) -> list[ExperimentManifest]:
    """The full built-in recipe set, budgets multiplied by `scale_factor`.

    Hero runs ship without a strategy ensemble: their synthetic component is a
    pre-generated corpus whose internal strategy mix is supplied by the user.
    The qa_rephrase ensembles on the generator-swap recipes are placeholders
    for the same reason; they are configuration, not a claim about any
    particular production prompt set.
    """
    if not 0 < scale_factor <= 1:
        raise ValueError("scale_factor must be in (0, 1]")

    manifests: list[ExperimentManifest] = []

    def add(
        experiment_id: str,
        model_scale: str,
        components: tuple[tuple[str, float], ...],
        budget: int,
        *,
        repetition: RepetitionPolicy = RepetitionPolicy.forbid(),
        upsample: UpsampleTarget | None = None,
        ensemble: StrategyEnsemble | None = None,
        backend_id: str | None = None,
    ) -> None:
        manifests.append(
            ExperimentManifest(
                experiment_id=experiment_id,
                mixture_spec=MixtureSpec(
                    components=components,
                    total_token_budget=_scaled(budget, scale_factor),
                    seed=0,
                    repetition=repetition,
                    upsample=upsample,
                ),
                strategy_ensemble=ensemble,
                backend_id=backend_id,
                model_scale=model_scale,
                train_hparams=train_hparams(model_scale),
                eval_protocol=dict(_EVAL_PROTOCOL),
            )
        )

    hero_mix = (("web", HERO_WEB_FRACTION), ("synth", 1.0 - HERO_WEB_FRACTION))
    add("hero_1b", "1b", hero_mix, 1_000_000_000_000)
    add("hero_3b", "3b", hero_mix, 180_000_000_000)
    add("hero_8b", "8b", hero_mix, 180_000_000_000)

    fifty_fifty = lambda other: (("hq_web", 0.5), (other, 0.5))  # noqa: E731

    add(
        "rq1_summary", "1b", fifty_fifty("summary_synth"), ABLATION_BUDGET,
        ensemble=StrategyEnsemble.single("summarize"),
        backend_id="llama-3.1-8b-instruct",
    )
    # generator-driven proxy: pre-generated topical corpus mixed against HQ web
    add("rq1_cosmopedia_proxy", "1b", fifty_fifty("cosmopedia"), ABLATION_BUDGET)

    add("rq2_full", "1b", (("web_full", 1.0),), ABLATION_BUDGET)
    add(
        "rq2_repeat2x", "1b", (("web_half", 1.0),), ABLATION_BUDGET,
        repetition=RepetitionPolicy.allow(3.0),
    )
    add(
        "rq2_continuation", "1b",
        (("web_half", 0.5), ("continuation_synth", 0.5)), ABLATION_BUDGET,
        ensemble=StrategyEnsemble.single("continue"),
        backend_id="llama-3.1-8b-instruct",
        repetition=RepetitionPolicy.allow(3.0),
    )

    rq3_ensemble = StrategyEnsemble.single("qa_rephrase")
    add(
        "rq3_hq_synth_plus_hq", "1b", fifty_fifty("hq_synth"), ABLATION_BUDGET,
        ensemble=rq3_ensemble, backend_id="llama-3.1-8b-instruct",
    )
    add(
        "rq3_lq_synth_plus_hq", "1b", fifty_fifty("lq_synth"), ABLATION_BUDGET,
        ensemble=rq3_ensemble, backend_id="llama-3.1-8b-instruct",
    )
    add("rq3_lq_plus_hq", "1b", (("hq_web", 0.5), ("lq_web", 0.5)), ABLATION_BUDGET)

    add("rq4_base", "1b", (("rpj", 1.0),), ABLATION_BUDGET)
    for pct in (10, 20, 50):
        add(
            f"rq4_{pct}", "1b", (("rpj", 1.0),), ABLATION_BUDGET,
            repetition=RepetitionPolicy.allow(4.0),
            upsample=UpsampleTarget(predicate="conversational_owt", target_fraction=pct / 100),
        )

    qa = StrategyEnsemble.single("qa_rephrase")
    for family, backend in (
        ("olmo", "olmo-2-7b-instruct"),
        ("phi", "phi-4-14b"),
        ("mistral", "mistral-7b-instruct-v0.3"),
        ("llama", "llama-3.1-8b-instruct"),
    ):
        add(
            f"rq6_{family}", "1b", fifty_fifty("synth"), ABLATION_BUDGET,
            ensemble=qa, backend_id=backend,
        )
    for size, backend in (
        ("1b", "llama-3.2-1b-instruct"),
        ("3b", "llama-3.2-3b-instruct"),
        ("8b", "llama-3.1-8b-instruct"),
    ):
        add(
            f"rq7_{size}", "1b", fifty_fifty("synth"), ABLATION_BUDGET,
            ensemble=qa, backend_id=backend,
        )

    return manifests


def builtin_manifest(experiment_id: str, scale_factor: float = 1.0) -> ExperimentManifest:
    for manifest in builtin_manifests(scale_factor):
        if manifest.experiment_id == experiment_id:
            return manifest
    known = [m.experiment_id for m in builtin_manifests(scale_factor)]
    raise SchemaViolation(f"unknown experiment id {experiment_id!r}; known: {known}")


# -- validation -----------------------------------------------------------------

@dataclass(frozen=True)
class Finding:
    code: str
    message: str

    def to_dict(self) -> dict:
        return {"code": self.code, "message": self.message}


@dataclass(frozen=True)
class Environment:
    """What exists where the manifest would run."""

    corpora: Mapping[str, int] = field(default_factory=dict)  # name -> available tokens
    strategies: frozenset[str] = frozenset()
    backends: frozenset[str] = frozenset()

    @classmethod
    def with_builtin_strategies(
        cls,
        corpora: Mapping[str, int] | None = None,
        backends: Iterable[str] = (),
    ) -> "Environment":
        return cls(
            corpora=dict(corpora or {}),
            strategies=frozenset(builtin_registry().names()),
            backends=frozenset(backends),
        )


def validate_manifest(manifest: ExperimentManifest, environment: Environment) -> list[Finding]:
    """Enumerate everything that would stop this manifest from executing.

    Returns an empty list iff the manifest is executable in the environment.
    """
    findings: list[Finding] = []
    spec = manifest.mixture_spec

    weight_sum = sum(w for _, w in spec.components)
    if abs(weight_sum - 1.0) > WEIGHT_TOLERANCE:
        findings.append(Finding("ratio-sum", f"component weights sum to {weight_sum}, not 1.0"))

    for name, weight in spec.components:
        if name not in environment.corpora:
            findings.append(Finding("unresolved-corpus", f"corpus {name!r} not present"))
            continue
        available = environment.corpora[name]
        required = weight * spec.total_token_budget
        if spec.repetition.mode == "forbid":
            if available < required:
                findings.append(
                    Finding(
                        "budget-conflict",
                        f"corpus {name!r}: requires {required:.0f} tokens with repetition"
                        f" forbidden, only {available} available",
                    )
                )
        else:
            cap = available * (spec.repetition.max_epochs or 0.0)
            if required > cap:
                findings.append(
                    Finding(
                        "budget-conflict",
                        f"corpus {name!r}: requires {required:.0f} tokens,"
                        f" epoch cap {spec.repetition.max_epochs} allows only {cap:.0f}",
                    )
                )

    if manifest.strategy_ensemble is not None:
        for name, _ in manifest.strategy_ensemble.members:
            if name not in environment.strategies:
                findings.append(
                    Finding("unresolved-strategy", f"strategy {name!r} not registered")
                )

    if manifest.backend_id is not None and manifest.backend_id not in environment.backends:
        findings.append(
            Finding("unresolved-backend", f"backend {manifest.backend_id!r} not configured")
        )

    if spec.upsample is not None and not 0 <= spec.upsample.target_fraction <= 1:
        findings.append(
            Finding("upsample-range", f"target_fraction {spec.upsample.target_fraction} outside [0, 1]")
        )

    return findings
