from __future__ import annotations

import json
import subprocess
import sys
from pathlib import Path

import pytest

from synthpipe.cli import run
from synthpipe.mixture import MixtureSpec

from conftest import REFERENCE_RESULTS, docs_to_jsonl, make_docs


def invoke(capsys, *argv):
    code = run(list(argv))
    captured = capsys.readouterr()
    return code, captured.out, captured.err


def last_json(stdout: str):
    return json.loads(stdout.strip().splitlines()[-1])


@pytest.fixture
def raw_corpus(tmp_path):
    docs = make_docs(30, sentences=2, tokens_per_sentence=8, style_labels=("FAQ",))
    return docs_to_jsonl(tmp_path / "raw.jsonl", docs)


@pytest.fixture
def mock_backend_config(tmp_path):
    path = tmp_path / "backend.json"
    path.write_text(json.dumps({"kind": "mock", "backend_id": "mock", "max_in_flight": 2}))
    return path


def test_help_exits_zero(capsys):
    for argv in (
        ["--help"],
        ["ingest", "--help"],
        ["split", "--help"],
        ["synthesize", "--help"],
        ["style", "--help"],
        ["style", "audit", "--help"],
        ["mix", "--help"],
        ["manifest", "--help"],
        ["manifest", "emit", "--help"],
        ["analyze", "--help"],
        ["analyze", "speedup", "--help"],
    ):
        code, _, _ = invoke(capsys, *argv)
        assert code == 0, argv


def test_usage_error_exit_2(capsys):
    code, _, _ = invoke(capsys, "ingest")  # missing required flags
    assert code == 2
    code, _, _ = invoke(capsys, "nonsense")
    assert code == 2


def test_flag_combination_errors_exit_2(capsys, tmp_path):
    code, _, err = invoke(capsys, "mix", "--rq2", "--out", str(tmp_path / "o"))
    assert code == 2 and "--rq2 requires" in err
    code, _, err = invoke(capsys, "mix", "--out", str(tmp_path / "o"))
    assert code == 2 and "--spec" in err


def test_seed_accepted_after_subcommand(capsys, tmp_path, raw_corpus):
    invoke(capsys, "ingest", "--paths", str(raw_corpus), "--name", "toy",
           "--out", str(tmp_path / "corpus"))
    code, out_global, _ = invoke(
        capsys, "--seed", "9", "style", "audit", "--corpus", str(tmp_path / "corpus"),
        "--method", "owt", "--sample", "10",
    )
    assert code == 0
    code, out_sub, _ = invoke(
        capsys, "style", "audit", "--corpus", str(tmp_path / "corpus"),
        "--method", "owt", "--sample", "10", "--seed", "9",
    )
    assert code == 0
    assert last_json(out_global) == last_json(out_sub)


def test_analyze_speedup_with_smoothing(capsys, tmp_path):
    # jagged candidate: raw first-crossing differs from the window-averaged one
    candidate = tmp_path / "cand.csv"
    candidate.write_text(
        "tokens,accuracy\n10,10.0\n20,60.0\n30,20.0\n40,30.0\n110,70.0\n"
    )
    baseline = tmp_path / "base.csv"
    baseline.write_text("tokens,accuracy\n10,10.0\n110,50.0\n")
    out = tmp_path / "s.json"
    code, _, _ = invoke(
        capsys, "analyze", "speedup", "--in", str(candidate), str(baseline),
        "--out", str(out), "--smooth-edges", "40,110",
    )
    assert code == 0
    payload = json.loads(out.read_text())
    assert payload["smoothing_applied"] is True
    # smoothed candidate: (40, 30.0), (110, 70.0); target = smoothed baseline final
    assert payload["crossing_tokens"] == 75
    code, _, _ = invoke(
        capsys, "analyze", "speedup", "--in", str(candidate), str(baseline),
        "--out", str(out),
    )
    raw_payload = json.loads(out.read_text())
    assert raw_payload["smoothing_applied"] is False
    assert raw_payload["crossing_tokens"] != payload["crossing_tokens"]


def test_python_dash_m_entrypoint():
    result = subprocess.run(
        [sys.executable, "-m", "synthpipe", "--help"],
        capture_output=True,
        text=True,
        timeout=60,
    )
    assert result.returncode == 0
    assert "synthpipe" in result.stdout


def test_ingest_and_split(capsys, tmp_path, raw_corpus):
    code, out, _ = invoke(
        capsys, "ingest", "--paths", str(raw_corpus), "--name", "toy",
        "--out", str(tmp_path / "corpus"),
    )
    assert code == 0
    summary = last_json(out)
    assert summary["docs"] == 30 and summary["skipped_lines"] == 0

    code, out, _ = invoke(
        capsys, "split", "--corpus", str(tmp_path / "corpus"), "--out", str(tmp_path / "half"),
    )
    assert code == 0
    assert last_json(out)["tokens"] == summary["tokens"] // 2


def test_missing_spec_diagnostic(capsys, tmp_path):
    code, _, err = invoke(
        capsys, "mix", "--spec", str(tmp_path / "missing.json"), "--out", str(tmp_path / "o"),
    )
    assert code == 1
    diag = json.loads(err.strip().splitlines()[-1])
    assert diag["error"] == "UnreadableFile"
    assert "missing.json" in diag["message"]


def test_manifest_emit_and_validate(capsys, tmp_path):
    out_file = tmp_path / "m.json"
    code, out, _ = invoke(
        capsys, "manifest", "emit", "--id", "rq2_continuation",
        "--scale", "0.0001", "--out", str(out_file),
    )
    assert code == 0
    assert out_file.is_file()
    payload = json.loads(out_file.read_text())
    assert payload["experiment_id"] == "rq2_continuation"
    assert payload["mixture_spec"]["total_token_budget"] == 2_000_000

    code, out, _ = invoke(capsys, "manifest", "validate", str(out_file))
    assert code == 0
    findings = json.loads(out.strip().splitlines()[-1])
    assert any(f["code"] == "unresolved-corpus" for f in findings)

    env = tmp_path / "env.json"
    env.write_text(json.dumps({
        "corpora": {"web_half": 10**7, "continuation_synth": 10**7},
        "backends": ["llama-3.1-8b-instruct"],
    }))
    code, out, _ = invoke(capsys, "manifest", "validate", str(out_file), "--env", str(env))
    assert code == 0
    assert json.loads(out.strip().splitlines()[-1]) == []


def test_manifest_list(capsys):
    code, out, _ = invoke(capsys, "manifest", "list")
    assert code == 0
    ids = json.loads(out)
    assert "hero_8b" in ids and "rq4_50" in ids


def test_manifest_emit_unknown_id(capsys, tmp_path):
    code, _, err = invoke(
        capsys, "manifest", "emit", "--id", "nope", "--out", str(tmp_path / "x.json"),
    )
    assert code == 1
    assert "nope" in err


def test_style_audit_owt(capsys, tmp_path, raw_corpus):
    invoke(capsys, "ingest", "--paths", str(raw_corpus), "--name", "toy",
           "--out", str(tmp_path / "corpus"))
    code, out, _ = invoke(
        capsys, "style", "audit", "--corpus", str(tmp_path / "corpus"),
        "--method", "owt", "--sample", "30",
    )
    assert code == 0
    payload = last_json(out)
    assert payload["fraction"] == 1.0  # every toy doc carries the FAQ label
    assert payload["sample_size"] == 30
    assert 0 <= payload["ci_low"] <= payload["fraction"] <= payload["ci_high"] <= 1


def test_style_audit_llm_mock(capsys, tmp_path, raw_corpus, mock_backend_config):
    invoke(capsys, "ingest", "--paths", str(raw_corpus), "--name", "toy",
           "--out", str(tmp_path / "corpus"))
    out_file = tmp_path / "estimate.json"
    code, out, _ = invoke(
        capsys, "style", "audit", "--corpus", str(tmp_path / "corpus"),
        "--method", "llm", "--sample", "10", "--backend-config", str(mock_backend_config),
        "--out", str(out_file),
    )
    assert code == 0
    assert json.loads(out_file.read_text())["sample_size"] == 10


def test_synthesize_cli(capsys, tmp_path, raw_corpus, mock_backend_config):
    invoke(capsys, "ingest", "--paths", str(raw_corpus), "--name", "toy",
           "--out", str(tmp_path / "corpus"))
    ensemble = tmp_path / "ensemble.json"
    ensemble.write_text(json.dumps({"members": [["summarize", 1.0]]}))
    code, out, _ = invoke(
        capsys, "--seed", "7", "synthesize", "--corpus", str(tmp_path / "corpus"),
        "--ensemble", str(ensemble), "--backend-config", str(mock_backend_config),
        "--out", str(tmp_path / "synth"),
    )
    assert code == 0
    payload = last_json(out)
    assert payload["requests"] == 30 and payload["failed"] == 0


def test_mix_spec_cli(capsys, tmp_path, raw_corpus):
    invoke(capsys, "ingest", "--paths", str(raw_corpus), "--name", "toy",
           "--out", str(tmp_path / "corpus"))
    spec_path = tmp_path / "spec.json"
    spec = MixtureSpec(components=(("toy", 1.0),), total_token_budget=200, seed=3)
    spec_path.write_text(json.dumps(spec.to_dict()))
    code, out, _ = invoke(
        capsys, "mix", "--spec", str(spec_path),
        "--sources", f"toy={tmp_path / 'corpus'}", "--out", str(tmp_path / "mix"),
    )
    assert code == 0
    report = last_json(out)
    assert report["budget"] == 200
    assert (tmp_path / "mix" / "provenance.jsonl").is_file()


def test_mix_upsample_with_verdicts_cli(capsys, tmp_path, raw_corpus):
    invoke(capsys, "ingest", "--paths", str(raw_corpus), "--name", "toy",
           "--out", str(tmp_path / "corpus"))
    corpus_docs = json.loads(
        "[" + ",".join((tmp_path / "corpus" / "toy-00000.jsonl").read_text().split("\n")[:-1]) + "]"
    )
    verdicts_path = tmp_path / "verdicts.jsonl"
    with open(verdicts_path, "w") as fh:
        for i, doc in enumerate(corpus_docs):
            fh.write(json.dumps({"doc_id": doc["id"], "label": 1 if i < 10 else 0}) + "\n")
    spec_path = tmp_path / "spec.json"
    spec_path.write_text(json.dumps({
        "components": [["toy", 1.0]],
        "total_token_budget": 300,
        "seed": 2,
        "repetition": {"policy": "allow", "max_epochs": 6.0},
        "upsample": {"predicate": "conversational_owt", "target_fraction": 0.4},
    }))
    code, out, _ = invoke(
        capsys, "mix", "--spec", str(spec_path), "--sources", f"toy={tmp_path / 'corpus'}",
        "--verdicts", str(verdicts_path), "--out", str(tmp_path / "mix"),
    )
    assert code == 0
    report = last_json(out)
    assert abs(report["realized_upsample_fraction"] - 0.4) <= 16 / 300


def test_mix_rq2_cli(capsys, tmp_path, raw_corpus, mock_backend_config):
    invoke(capsys, "ingest", "--paths", str(raw_corpus), "--name", "toy",
           "--out", str(tmp_path / "corpus"))
    code, out, _ = invoke(
        capsys, "--seed", "7", "mix", "--rq2", "--corpus", str(tmp_path / "corpus"),
        "--budget", "480", "--backend-config", str(mock_backend_config),
        "--out", str(tmp_path / "rq2"),
    )
    assert code == 0
    summary = last_json(out)
    assert set(summary) == {"full", "repeat2x", "synthetic_extension"}


def test_analyze_speedup_cli(capsys, tmp_path):
    code, out, _ = invoke(
        capsys, "analyze", "speedup",
        "--in", str(REFERENCE_RESULTS / "curves" / "beyondweb_8b.csv"),
        str(REFERENCE_RESULTS / "curves" / "rpj_8b.csv"),
        "--out", str(tmp_path / "speedup.json"),
    )
    assert code == 0
    payload = json.loads((tmp_path / "speedup.json").read_text())
    assert abs(payload["speedup"] - 7.76) <= 0.01
    assert payload["display"] == "7.7x"
    assert payload["smoothing_applied"] is False


def test_jobs_caps_backend_concurrency(capsys, tmp_path, raw_corpus, mock_backend_config):
    invoke(capsys, "ingest", "--paths", str(raw_corpus), "--name", "toy",
           "--out", str(tmp_path / "corpus"))
    ensemble = tmp_path / "ensemble.json"
    ensemble.write_text(json.dumps({"members": [["summarize", 1.0]]}))
    code, out, _ = invoke(
        capsys, "--jobs", "1", "synthesize", "--corpus", str(tmp_path / "corpus"),
        "--ensemble", str(ensemble), "--backend-config", str(mock_backend_config),
        "--out", str(tmp_path / "synth"),
    )
    assert code == 0
    assert last_json(out)["requests"] == 30


def test_analyze_plot_writes_svg(capsys, tmp_path):
    pytest.importorskip("matplotlib")
    out = tmp_path / "s.json"
    svg = tmp_path / "chart.svg"
    code, _, _ = invoke(
        capsys, "analyze", "speedup",
        "--in", str(REFERENCE_RESULTS / "curves" / "beyondweb_8b.csv"),
        str(REFERENCE_RESULTS / "curves" / "rpj_8b.csv"),
        "--out", str(out), "--plot", str(svg),
    )
    assert code == 0
    content = svg.read_text()
    assert content.lstrip().startswith("<?xml") and "<svg" in content


def test_analyze_frontier_cli(capsys, tmp_path):
    code, _, _ = invoke(
        capsys, "analyze", "frontier",
        "--in", str(REFERENCE_RESULTS / "model_cost_accuracy.csv"),
        "--out", str(tmp_path / "frontier.json"),
    )
    assert code == 0
    payload = json.loads((tmp_path / "frontier.json").read_text())
    labels = [p["label"] for p in payload["frontier"]]
    assert labels == ["beyondweb_1b", "beyondweb_3b", "beyondweb_8b"]


def test_analyze_tables_cli(capsys, tmp_path):
    code, _, _ = invoke(
        capsys, "analyze", "tables",
        "--in", str(REFERENCE_RESULTS / "accuracy_0shot.csv"),
        str(REFERENCE_RESULTS / "accuracy_5shot.csv"),
        "--out", str(tmp_path / "tables.json"),
        "--delta", "beyondweb:nemotron_synth", "--delta", "beyondweb:rpj",
        "--table-out", str(tmp_path / "avg.csv"),
    )
    assert code == 0
    payload = json.loads((tmp_path / "tables.json").read_text())
    assert payload["averages"]["beyondweb"]["8b"] == 63.7
    assert payload["deltas"]["beyondweb_vs_nemotron_synth"] == {"1b": 3.1, "3b": 2.0, "8b": 2.6}
    assert payload["deltas"]["beyondweb_vs_rpj"] == {"1b": 6.7, "3b": 7.3, "8b": 7.1}
    assert (tmp_path / "avg.csv").is_file()


def pipeline_fixture(tmp_path: Path, capsys, seed: str) -> dict[str, bytes]:
    """Full deterministic pipeline under one seed; returns artifact bytes."""
    root = tmp_path / f"run-{seed}-{len(list(tmp_path.iterdir()))}"
    root.mkdir()
    docs = make_docs(40, sentences=2, tokens_per_sentence=8, style_labels=("FAQ",))
    raw = docs_to_jsonl(root / "raw.jsonl", docs)
    backend = root / "backend.json"
    backend.write_text(json.dumps({"kind": "mock", "backend_id": "mock"}))

    steps = [
        ["--seed", seed, "ingest", "--paths", str(raw), "--name", "toy",
         "--out", str(root / "corpus")],
        ["--seed", seed, "split", "--corpus", str(root / "corpus"),
         "--out", str(root / "half")],
        ["--seed", seed, "mix", "--rq2", "--corpus", str(root / "corpus"),
         "--budget", "640", "--backend-config", str(backend), "--out", str(root / "rq2")],
        ["--seed", seed, "style", "audit", "--corpus", str(root / "corpus"),
         "--method", "heuristic", "--sample", "20", "--out", str(root / "style.json")],
    ]
    for argv in steps:
        code = run(argv)
        capsys.readouterr()
        assert code == 0, argv
    return {
        p.relative_to(root).as_posix(): p.read_bytes()
        for p in sorted(root.rglob("*"))
        if p.is_file() and p.name != "raw.jsonl" and p.name != "backend.json"
    }


def test_pipeline_byte_identical_same_seed(capsys, tmp_path):
    first = pipeline_fixture(tmp_path, capsys, "7")
    second = pipeline_fixture(tmp_path, capsys, "7")
    assert first == second


def test_pipeline_differs_across_seeds(capsys, tmp_path):
    first = pipeline_fixture(tmp_path, capsys, "7")
    other = pipeline_fixture(tmp_path, capsys, "8")
    assert first != other
