"""Command-line entry point wiring the pipeline stages together.

Subcommands: ingest, split, synthesize, style, mix, manifest, analyze.
The global ``--seed`` is the single entropy source; stages derive sub-seeds
by hashing (seed, stage name), so one flag pins the whole pipeline. Exit
codes: 0 success, 1 domain error (single-line JSON diagnostic on stderr),
2 usage error. Artifacts are written atomically (temp file + rename).
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from dataclasses import dataclass
from pathlib import Path

from . import analysis, manifests
from .corpus import get_tokenizer, ingest_jsonl, load_documents, load_manifest
from .errors import PipelineError, SchemaViolation, UnreadableFile
from .generation import load_backend_config, make_backend, synthesize_corpus
from .hashing import derive_seed
from .io_utils import atomic_write_json
from .mixture import (
    MixtureSpec,
    build_mixture,
    build_rq2_corpora,
    build_rq3_corpora,
)
from .strategies import StrategyEnsemble, builtin_registry, load_strategy_pack
from .style import estimate_fraction

logger = logging.getLogger(__name__)

_LOG_LEVELS = ("debug", "info", "warning", "error")


class _UsageError(Exception):
    """Invalid flag combination; maps to exit code 2 like argparse errors."""


@dataclass
class RunConfig:
    subcommand: str
    flags: dict[str, str]
    seed: int
    log_level: str


def _diag(exc: BaseException) -> None:
    code = exc.code if isinstance(exc, PipelineError) else type(exc).__name__
    sys.stderr.write(json.dumps({"error": code, "message": str(exc)}) + "\n")


def _load_ensemble_with_seed(path: Path, default_seed: int) -> StrategyEnsemble:
    # A seed in the file wins; otherwise thread the derived global seed.
    try:
        with open(path, encoding="utf-8") as fh:
            obj = json.load(fh)
    except OSError as exc:
        raise UnreadableFile(f"cannot open {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise SchemaViolation(f"{path}: invalid JSON: {exc}") from exc
    if "seed" not in obj:
        obj["seed"] = default_seed
    return StrategyEnsemble.from_dict(obj)


def _load_spec_with_seed(path: Path, default_seed: int) -> MixtureSpec:
    try:
        with open(path, encoding="utf-8") as fh:
            obj = json.load(fh)
    except OSError as exc:
        raise UnreadableFile(f"cannot open {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise SchemaViolation(f"{path}: invalid JSON: {exc}") from exc
    if "seed" not in obj:
        obj["seed"] = default_seed
    try:
        return MixtureSpec.from_dict(obj)
    except (KeyError, TypeError, ValueError) as exc:
        raise SchemaViolation(f"{path}: malformed mixture spec: {exc}") from exc


def _backend_from_args(args, stage_seed: int):
    config, kind, seed = load_backend_config(args.backend_config)
    if args.jobs is not None:
        config = dataclasses.replace(
            config, max_in_flight=max(1, min(config.max_in_flight, args.jobs))
        )
    return make_backend(config, kind, seed if seed is not None else stage_seed)


def _registry_from_args(args):
    registry = builtin_registry()
    pack = getattr(args, "strategy_pack", None)
    if pack:
        registry = registry.merged(load_strategy_pack(pack))
    return registry


# -- subcommand handlers -----------------------------------------------------------

def _cmd_ingest(args) -> int:
    tokenizer = get_tokenizer(args.tokenizer)
    result = ingest_jsonl(
        args.paths,
        tokenizer,
        args.quality_tier,
        name=args.name,
        out_dir=args.out,
        strict=args.strict,
        jobs=args.jobs or 1,
    )
    summary = {
        "corpus": result.handle.name,
        "docs": result.handle.doc_count,
        "tokens": result.handle.total_tokens,
        "skipped_lines": result.skipped_lines,
        "manifest": str(Path(args.out) / "manifest.json"),
    }
    print(json.dumps(summary, sort_keys=True))
    return 0


def _cmd_split(args) -> int:
    from .segmentation import build_half_corpus

    corpus = load_manifest(args.corpus)
    tokenizer = get_tokenizer(args.tokenizer)
    result = build_half_corpus(
        corpus, args.keep, out_dir=args.out, tokenizer=tokenizer, name=args.name
    )
    summary = {
        "corpus": result.handle.name,
        "docs": result.handle.doc_count,
        "tokens": result.handle.total_tokens,
        "dropped_unsplittable": result.dropped,
        "manifest": str(Path(args.out) / "manifest.json"),
    }
    print(json.dumps(summary, sort_keys=True))
    return 0


def _cmd_synthesize(args, seed: int) -> int:
    stage_seed = derive_seed(seed, "generation")
    corpus = load_manifest(args.corpus)
    tokenizer = get_tokenizer(args.tokenizer)
    ensemble = _load_ensemble_with_seed(Path(args.ensemble), derive_seed(seed, "strategies"))
    backend = _backend_from_args(args, stage_seed)
    result = synthesize_corpus(
        load_documents(corpus, tokenizer),
        ensemble,
        backend,
        args.out,
        name=args.name or f"{corpus.name}-synth",
        registry=_registry_from_args(args),
        tokenizer=tokenizer,
        docs_per_shard=args.docs_per_shard,
    )
    summary = dict(result.report.to_dict())
    summary["corpus"] = result.handle.name
    summary["manifest"] = str(Path(args.out) / "manifest.json")
    print(json.dumps(summary, sort_keys=True))
    return 0


def _cmd_style(args, seed: int) -> int:
    corpus = load_manifest(args.corpus)
    method = {"owt": "owt_label", "llm": "llm", "heuristic": "heuristic"}[args.method]
    backend = None
    if method == "llm":
        if not args.backend_config:
            raise _UsageError("llm method requires --backend-config")
        backend = _backend_from_args(args, derive_seed(seed, "generation"))
    sample_seed = args.sample_seed if args.sample_seed is not None else derive_seed(seed, "style")
    estimate = estimate_fraction(corpus, method, args.sample, sample_seed, backend=backend)
    payload = estimate.to_dict()
    payload["method"] = method
    payload["corpus"] = corpus.name
    text = json.dumps(payload, sort_keys=True)
    if args.out:
        atomic_write_json(Path(args.out), payload)
    print(text)
    return 0


def _parse_sources(pairs: list[str]) -> dict:
    sources = {}
    for pair in pairs:
        if "=" not in pair:
            raise _UsageError(f"--sources entries must be name=manifest, got {pair!r}")
        name, path = pair.split("=", 1)
        sources[name] = load_manifest(path)
    return sources


def _load_verdicts(path: str | None) -> dict[str, int] | None:
    if not path:
        return None
    from .io_utils import iter_lines

    verdicts: dict[str, int] = {}
    for line in iter_lines(Path(path)):
        if not line.strip():
            continue
        obj = json.loads(line)
        verdicts[obj["doc_id"]] = int(obj["label"])
    return verdicts


def _cmd_mix(args, seed: int) -> int:
    tokenizer = get_tokenizer(args.tokenizer)
    if args.rq2:
        for flag in ("corpus", "budget", "backend_config"):
            if getattr(args, flag) is None:
                raise _UsageError(f"--rq2 requires --{flag.replace('_', '-')}")
        corpus = load_manifest(args.corpus)
        backend = _backend_from_args(args, derive_seed(seed, "generation"))
        trio = build_rq2_corpora(
            corpus,
            args.budget,
            backend,
            args.out,
            seed=derive_seed(seed, "mixture"),
            keep=args.keep,
            tokenizer=tokenizer,
        )
        summary = {
            name: {
                "tokens": res.handle.total_tokens,
                "docs": res.handle.doc_count,
                "epochs": [c.epochs for c in res.report.components],
            }
            for name, res in trio.as_dict().items()
        }
        print(json.dumps(summary, sort_keys=True))
        return 0
    if args.rq3:
        for flag in ("hq", "lq", "budget", "backend_config"):
            if getattr(args, flag) is None:
                raise _UsageError(f"--rq3 requires --{flag}")
        backend = _backend_from_args(args, derive_seed(seed, "generation"))
        trio = build_rq3_corpora(
            load_manifest(args.hq),
            load_manifest(args.lq),
            backend,
            args.budget,
            args.out,
            seed=derive_seed(seed, "mixture"),
            tokenizer=tokenizer,
        )
        summary = {
            name: {"tokens": res.handle.total_tokens, "docs": res.handle.doc_count}
            for name, res in trio.as_dict().items()
        }
        print(json.dumps(summary, sort_keys=True))
        return 0

    if not args.spec:
        raise _UsageError("mix requires --spec (or one of --rq2 / --rq3)")
    spec = _load_spec_with_seed(Path(args.spec), derive_seed(seed, "mixture"))
    sources = _parse_sources(args.sources or [])
    result = build_mixture(
        spec,
        sources,
        args.out,
        tokenizer=tokenizer,
        verdicts=_load_verdicts(args.verdicts),
        name=args.name,
    )
    print(json.dumps(result.report.to_dict(), sort_keys=True))
    return 0


def _cmd_manifest(args) -> int:
    if args.manifest_cmd == "list":
        ids = [m.experiment_id for m in manifests.builtin_manifests(1.0)]
        print(json.dumps(ids))
        return 0
    if args.manifest_cmd == "emit":
        manifest = manifests.builtin_manifest(args.id, args.scale)
        manifests.save_manifest_json(manifest, args.out)
        print(json.dumps({"experiment_id": manifest.experiment_id, "out": str(args.out)}))
        return 0
    # validate
    manifest = manifests.load_manifest_json(args.path)
    if args.env:
        with open(args.env, encoding="utf-8") as fh:
            env_obj = json.load(fh)
        env = manifests.Environment(
            corpora={k: int(v) for k, v in env_obj.get("corpora", {}).items()},
            strategies=frozenset(env_obj.get("strategies", builtin_registry().names())),
            backends=frozenset(env_obj.get("backends", [])),
        )
    else:
        env = manifests.Environment.with_builtin_strategies()
    findings = manifests.validate_manifest(manifest, env)
    print(json.dumps([f.to_dict() for f in findings], sort_keys=True))
    return 0


def _cmd_analyze(args) -> int:
    if args.analyze_cmd == "speedup":
        candidate_path, baseline_path = args.inputs
        candidate, cand_kind = analysis.load_curve(candidate_path)
        baseline, base_kind = analysis.load_curve(baseline_path)
        smoothed = False
        if args.smooth_edges:
            edges = [int(x) for x in args.smooth_edges.split(",")]
            candidate = analysis.smooth_curve(candidate, edges)
            baseline = analysis.smooth_curve(baseline, edges)
            smoothed = True
        result = analysis.speedup_to_baseline(candidate, baseline)
        payload = result.to_dict()
        payload["curve_kinds"] = {"candidate": cand_kind, "baseline": base_kind}
        payload["smoothing_applied"] = smoothed
        atomic_write_json(Path(args.out), payload)
        print(json.dumps(payload, sort_keys=True))
        if args.plot:
            analysis.plot_curves_svg([candidate, baseline], args.plot)
        return 0

    if args.analyze_cmd == "frontier":
        (points_path,) = args.inputs
        points = analysis.load_pareto_points(points_path)
        frontier = analysis.pareto_frontier(points)
        payload = {
            "points": len(points),
            "frontier": [{"cost": c, "accuracy": a, "label": l} for c, a, l in frontier],
        }
        atomic_write_json(Path(args.out), payload)
        print(json.dumps(payload, sort_keys=True))
        if args.plot:
            analysis.plot_scatter_svg(points, frontier, args.plot)
        return 0

    # tables
    zero_path, five_path = args.inputs
    table0 = analysis.load_benchmark_table(zero_path)
    table5 = analysis.load_benchmark_table(five_path)
    averaged = analysis.average_shots(table0, table5)
    averages = {
        dataset: {
            scale: analysis.round_half_up(analysis.row_average(averaged, dataset, scale), 1)
            for scale in averaged.scales(dataset)
        }
        for dataset in averaged.datasets()
    }
    payload: dict = {"averages": averages, "deltas": {}}
    for pair in args.delta or []:
        if ":" not in pair:
            raise _UsageError(f"--delta takes dataset_a:dataset_b, got {pair!r}")
        a, b = pair.split(":", 1)
        payload["deltas"][f"{a}_vs_{b}"] = analysis.delta_vs_baseline(averaged, a, b)
    atomic_write_json(Path(args.out), payload)
    if args.table_out:
        analysis.save_benchmark_table(averaged, args.table_out)
    print(json.dumps(payload, sort_keys=True))
    return 0


# -- parser --------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="synthpipe",
        description="Synthetic pretraining-data curation pipeline",
    )
    parser.add_argument("--seed", type=int, default=0, help="global seed threaded to every stage")
    parser.add_argument("--log-level", choices=_LOG_LEVELS, default="warning")
    parser.add_argument("--jobs", type=int, default=None, help="cap for worker pools")
    sub = parser.add_subparsers(dest="subcommand", required=True)
    leaves: list[argparse.ArgumentParser] = []

    p = sub.add_parser("ingest", help="materialize JSONL shards into a corpus")
    leaves.append(p)
    p.add_argument("--paths", nargs="+", required=True, help="input JSONL(.gz) shards")
    p.add_argument("--name", required=True, help="corpus name")
    p.add_argument("--out", required=True, help="output corpus directory")
    p.add_argument("--quality-tier", choices=("hq", "lq", "unknown"), default="unknown")
    p.add_argument("--strict", action="store_true", help="fail on malformed lines")
    p.add_argument("--tokenizer", default="whitespace")

    p = sub.add_parser("split", help="keep one midpoint half of every document")
    leaves.append(p)
    p.add_argument("--corpus", required=True, help="corpus manifest (or its directory)")
    p.add_argument("--keep", choices=("first", "second"), default="second")
    p.add_argument("--out", required=True)
    p.add_argument("--name", default=None)
    p.add_argument("--tokenizer", default="whitespace")

    p = sub.add_parser("synthesize", help="rephrase a corpus through a backend")
    leaves.append(p)
    p.add_argument("--corpus", required=True)
    p.add_argument("--ensemble", required=True, help="strategy ensemble JSON")
    p.add_argument("--backend-config", required=True, help="backend config JSON")
    p.add_argument("--out", required=True)
    p.add_argument("--name", default=None)
    p.add_argument("--strategy-pack", default=None, help="extra strategies JSON")
    p.add_argument("--docs-per-shard", type=int, default=1000)
    p.add_argument("--tokenizer", default="whitespace")

    p = sub.add_parser("style", help="style auditing")
    style_sub = p.add_subparsers(dest="style_cmd", required=True)
    audit = style_sub.add_parser("audit", help="estimate the conversational fraction")
    leaves.append(audit)
    audit.add_argument("--corpus", required=True)
    audit.add_argument("--method", choices=("llm", "heuristic", "owt"), required=True)
    audit.add_argument("--sample", type=int, required=True)
    audit.add_argument(
        "--sample-seed", type=int, default=None,
        help="override the derived sampling seed",
    )
    audit.add_argument("--backend-config", default=None)
    audit.add_argument("--out", default=None, help="also write the estimate JSON here")

    p = sub.add_parser("mix", help="build token-budgeted mixtures")
    leaves.append(p)
    p.add_argument("--spec", default=None, help="MixtureSpec JSON")
    p.add_argument("--sources", nargs="*", default=None, metavar="NAME=MANIFEST")
    p.add_argument("--verdicts", default=None, help="JSONL of {doc_id, label} for upsampling")
    p.add_argument("--name", default="mixture")
    p.add_argument("--rq2", action="store_true", help="build the full/repeat2x/extension trio")
    p.add_argument("--rq3", action="store_true", help="build the quality-combination trio")
    p.add_argument("--corpus", default=None, help="source corpus manifest (--rq2)")
    p.add_argument("--hq", default=None, help="HQ corpus manifest (--rq3)")
    p.add_argument("--lq", default=None, help="LQ corpus manifest (--rq3)")
    p.add_argument("--budget", type=int, default=None, help="token budget (--rq2/--rq3)")
    p.add_argument("--backend-config", default=None)
    p.add_argument("--keep", choices=("first", "second"), default="second")
    p.add_argument("--out", required=True)
    p.add_argument("--tokenizer", default="whitespace")

    p = sub.add_parser("manifest", help="emit or validate experiment manifests")
    man_sub = p.add_subparsers(dest="manifest_cmd", required=True)
    emit = man_sub.add_parser("emit", help="write a builtin manifest")
    leaves.append(emit)
    emit.add_argument("--id", required=True)
    emit.add_argument("--scale", type=float, default=1.0, help="token-budget scale factor")
    emit.add_argument("--out", required=True)
    validate = man_sub.add_parser("validate", help="check a manifest against an environment")
    validate.add_argument("path")
    validate.add_argument("--env", default=None, help="environment JSON")
    man_sub.add_parser("list", help="list builtin experiment ids")

    p = sub.add_parser("analyze", help="derived results: speedups, frontiers, tables")
    an_sub = p.add_subparsers(dest="analyze_cmd", required=True)
    speed = an_sub.add_parser("speedup", help="time-to-baseline speedup")
    leaves.append(speed)
    speed.add_argument("--in", dest="inputs", nargs=2, required=True,
                       metavar=("CANDIDATE", "BASELINE"))
    speed.add_argument("--out", required=True)
    speed.add_argument("--smooth-edges", default=None,
                       help="comma-separated window right edges; smooth both curves first")
    speed.add_argument("--plot", default=None, help="write an SVG line chart here")
    front = an_sub.add_parser("frontier", help="Pareto frontier of (cost, accuracy) points")
    leaves.append(front)
    front.add_argument("--in", dest="inputs", nargs=1, required=True, metavar="POINTS")
    front.add_argument("--out", required=True)
    front.add_argument("--plot", default=None, help="write an SVG scatter chart here")
    tables = an_sub.add_parser("tables", help="shot-averaged benchmark tables and deltas")
    leaves.append(tables)
    tables.add_argument("--in", dest="inputs", nargs=2, required=True,
                        metavar=("ZERO_SHOT", "FIVE_SHOT"))
    tables.add_argument("--out", required=True)
    tables.add_argument("--delta", action="append", default=None, metavar="A:B",
                        help="report per-scale deltas of dataset A minus dataset B")
    tables.add_argument("--table-out", default=None, help="write the averaged table CSV here")

    for leaf in leaves:
        leaf.add_argument(
            "--seed", dest="seed_override", type=int, default=None,
            help="same as the global --seed, accepted after the subcommand",
        )

    return parser


def run(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse handles usage errors and --help
        return int(exc.code or 0)

    if getattr(args, "seed_override", None) is not None:
        args.seed = args.seed_override
    logging.basicConfig(level=args.log_level.upper())
    config = RunConfig(
        subcommand=args.subcommand,
        flags={k: str(v) for k, v in vars(args).items() if v is not None},
        seed=args.seed,
        log_level=args.log_level,
    )
    logger.debug("run config: %s", config)

    try:
        if args.subcommand == "ingest":
            return _cmd_ingest(args)
        if args.subcommand == "split":
            return _cmd_split(args)
        if args.subcommand == "synthesize":
            return _cmd_synthesize(args, args.seed)
        if args.subcommand == "style":
            return _cmd_style(args, args.seed)
        if args.subcommand == "mix":
            return _cmd_mix(args, args.seed)
        if args.subcommand == "manifest":
            return _cmd_manifest(args)
        if args.subcommand == "analyze":
            return _cmd_analyze(args)
        parser.error(f"unknown subcommand {args.subcommand!r}")
        return 2
    except _UsageError as exc:
        sys.stderr.write(f"synthpipe: error: {exc}\n")
        return 2
    except PipelineError as exc:
        _diag(exc)
        return 1
    except Exception as exc:  # noqa: BLE001 — malformed input must not crash the CLI
        logger.debug("unexpected failure", exc_info=True)
        _diag(exc)
        return 1


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
