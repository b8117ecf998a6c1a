from __future__ import annotations

import json
from collections import Counter

import pytest

from synthpipe.corpus import load_documents
from synthpipe.errors import (
    EpochCapExceeded,
    InsufficientLabeledTokens,
    InsufficientTokens,
    UnreadableFile,
)
from synthpipe.generation import MockBackend
from synthpipe.mixture import (
    MixtureSpec,
    RepetitionPolicy,
    UpsampleTarget,
    build_mixture,
    build_rq2_corpora,
    build_rq3_corpora,
    epochs_required,
    load_mixture_spec,
    upsample_to_fraction,
)

from conftest import ingest_docs, make_docs, no_sleep, reference_mixture


def read_provenance(out_dir):
    with open(out_dir / "provenance.jsonl", encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


# -- build_mixture ------------------------------------------------------------------

def test_sixty_forty_within_one_document(tmp_path):
    web = make_docs(400, prefix="web", sentences=2, tokens_per_sentence=10)  # 8000 tokens
    synth = make_docs(400, prefix="syn", sentences=2, tokens_per_sentence=10)
    maxdoc = 20
    spec = MixtureSpec(components=(("web", 0.6), ("synth", 0.4)), total_token_budget=10_000, seed=5)
    result = build_mixture(spec, {"web": web, "synth": synth}, tmp_path / "m")
    by_name = {c.name: c for c in result.report.components}
    assert abs(by_name["web"].realized_tokens - 6000) <= maxdoc
    assert abs(by_name["synth"].realized_tokens - 4000) <= maxdoc
    assert 0 <= result.report.total_tokens - 10_000 < maxdoc


def test_epochs_and_min_occurrences(tmp_path):
    pool = make_docs(40, prefix="rep", sentences=10, tokens_per_sentence=10)  # 40 x 100
    spec = MixtureSpec(
        components=(("web", 1.0),),
        total_token_budget=10_000,
        seed=1,
        repetition=RepetitionPolicy.allow(3.0),
    )
    result = build_mixture(spec, {"web": pool}, tmp_path / "m")
    component = result.report.components[0]
    assert component.epochs == pytest.approx(2.5, abs=1e-9)
    occurrences = Counter(p["doc_id"] for p in read_provenance(tmp_path / "m"))
    assert min(occurrences.values()) >= 2


def test_forbid_insufficient(tmp_path):
    pool = make_docs(10, sentences=1, tokens_per_sentence=10)  # 100 tokens
    spec = MixtureSpec(components=(("web", 1.0),), total_token_budget=1000, seed=0)
    with pytest.raises(InsufficientTokens):
        build_mixture(spec, {"web": pool}, tmp_path / "m")


def test_epoch_cap_exceeded(tmp_path):
    pool = make_docs(10, sentences=1, tokens_per_sentence=10)
    spec = MixtureSpec(
        components=(("web", 1.0),),
        total_token_budget=1000,
        seed=0,
        repetition=RepetitionPolicy.allow(2.0),
    )
    with pytest.raises(EpochCapExceeded):
        build_mixture(spec, {"web": pool}, tmp_path / "m")


def test_missing_source(tmp_path):
    spec = MixtureSpec(components=(("web", 1.0),), total_token_budget=10, seed=0)
    with pytest.raises(UnreadableFile):
        build_mixture(spec, {}, tmp_path / "m")


def test_epoch_accounting_exact(tmp_path):
    pool = make_docs(30, sentences=3, tokens_per_sentence=7)
    spec = MixtureSpec(
        components=(("web", 1.0),),
        total_token_budget=1200,
        seed=3,
        repetition=RepetitionPolicy.allow(4.0),
    )
    result = build_mixture(spec, {"web": pool}, tmp_path / "m")
    component = result.report.components[0]
    assert component.epochs == pytest.approx(
        component.realized_tokens / (30 * 21), abs=1e-6
    )


def test_matches_reference_sampler_multiset(tmp_path):
    for seed in range(6):
        web = make_docs(30, prefix=f"w{seed}", sentences=2, tokens_per_sentence=seed + 3)
        synth = make_docs(20, prefix=f"s{seed}", sentences=1, tokens_per_sentence=seed + 5)
        spec = MixtureSpec(
            components=(("web", 0.5), ("synth", 0.5)),
            total_token_budget=500,
            seed=seed,
            repetition=RepetitionPolicy.allow(8.0),
        )
        out_dir = tmp_path / f"m{seed}"
        build_mixture(spec, {"web": web, "synth": synth}, out_dir)
        got = Counter(
            (p["corpus"], p["doc_id"], p["epoch"]) for p in read_provenance(out_dir)
        )
        expected = Counter(reference_mixture(spec, {"web": web, "synth": synth}))
        assert got == expected


def test_matches_reference_sampler_order(tmp_path):
    web = make_docs(25, prefix="w", sentences=1, tokens_per_sentence=4)
    synth = make_docs(25, prefix="s", sentences=1, tokens_per_sentence=4)
    spec = MixtureSpec(
        components=(("web", 0.6), ("synth", 0.4)), total_token_budget=150, seed=11
    )
    build_mixture(spec, {"web": web, "synth": synth}, tmp_path / "m")
    got = [(p["corpus"], p["doc_id"], p["epoch"]) for p in read_provenance(tmp_path / "m")]
    assert got == reference_mixture(spec, {"web": web, "synth": synth})


def test_byte_identical_across_runs(tmp_path):
    docs = make_docs(60, sentences=2, tokens_per_sentence=6)
    spec = MixtureSpec(components=(("web", 1.0),), total_token_budget=500, seed=9)
    for sub in ("a", "b"):
        build_mixture(spec, {"web": docs}, tmp_path / sub)
    files_a = sorted((tmp_path / "a").rglob("*.jsonl"))
    files_b = sorted((tmp_path / "b").rglob("*.jsonl"))
    assert [p.name for p in files_a] == [p.name for p in files_b]
    assert all(a.read_bytes() == b.read_bytes() for a, b in zip(files_a, files_b))


def test_seed_changes_output(tmp_path):
    docs = make_docs(60, sentences=2, tokens_per_sentence=6)
    orders = []
    for seed in (1, 2):
        spec = MixtureSpec(components=(("web", 1.0),), total_token_budget=400, seed=seed)
        build_mixture(spec, {"web": docs}, tmp_path / str(seed))
        orders.append([p["doc_id"] for p in read_provenance(tmp_path / str(seed))])
    assert orders[0] != orders[1]


def test_repeated_epochs_reshuffled(tmp_path):
    docs = make_docs(30, sentences=1, tokens_per_sentence=10)
    spec = MixtureSpec(
        components=(("web", 1.0),),
        total_token_budget=600,
        seed=4,
        repetition=RepetitionPolicy.allow(3.0),
    )
    build_mixture(spec, {"web": docs}, tmp_path / "m")
    prov = read_provenance(tmp_path / "m")
    epoch0 = [p["doc_id"] for p in prov if p["epoch"] == 0]
    epoch1 = [p["doc_id"] for p in prov if p["epoch"] == 1]
    assert sorted(epoch0) == sorted(epoch1)  # same multiset per full epoch
    assert epoch0 != epoch1  # different order


def test_output_ids_unique_and_epoch_suffixed(tmp_path):
    docs = make_docs(20, sentences=1, tokens_per_sentence=10)
    spec = MixtureSpec(
        components=(("web", 1.0),),
        total_token_budget=400,
        seed=2,
        repetition=RepetitionPolicy.allow(2.5),
    )
    result = build_mixture(spec, {"web": docs}, tmp_path / "m")
    out_ids = [d.id for d in load_documents(result.handle)]
    assert len(out_ids) == len(set(out_ids))
    assert any(i.endswith(":e1") for i in out_ids)


# -- epochs_required -----------------------------------------------------------------

def test_epochs_required_identity():
    assert epochs_required(27e9, 27e9) == 1.0


def test_epochs_required_large_demand():
    # 27B available vs 40% of a 1T budget
    assert epochs_required(27e9, 0.4 * 1e12) == 14.8148


def test_epochs_required_double():
    assert epochs_required(10e9, 20e9) == 2.0


def test_epochs_required_positive():
    with pytest.raises(ValueError):
        epochs_required(0, 10)


# -- upsampling -----------------------------------------------------------------------

def labeled_pool(conv_docs, rest_docs, tokens=10):
    conv = make_docs(conv_docs, prefix="conv", sentences=1,
                     tokens_per_sentence=tokens, style_labels=("FAQ",))
    rest = make_docs(rest_docs, prefix="rest", sentences=1,
                     tokens_per_sentence=tokens, style_labels=("News Articles",))
    return conv + rest


def upsample_spec(target, budget, policy=None):
    return MixtureSpec(
        components=(("rpj", 1.0),),
        total_token_budget=budget,
        seed=6,
        repetition=policy or RepetitionPolicy.allow(6.0),
        upsample=UpsampleTarget(predicate="conversational_owt", target_fraction=target),
    )


def test_upsample_half_within_one_document(tmp_path):
    pool = labeled_pool(80, 200)
    result = upsample_to_fraction(upsample_spec(0.5, 1000), {"rpj": pool}, tmp_path / "m")
    conv_tokens = next(
        c.realized_tokens for c in result.report.components if "conversational" in c.name
    )
    assert abs(conv_tokens - 500) <= 10
    assert abs(result.report.realized_upsample_fraction - 0.5) <= 10 / 1000


def test_upsample_zero_target(tmp_path):
    pool = labeled_pool(50, 200)
    result = upsample_to_fraction(upsample_spec(0.0, 800), {"rpj": pool}, tmp_path / "m")
    assert result.report.realized_upsample_fraction == 0.0
    assert all("conv" not in p["doc_id"] for p in read_provenance(tmp_path / "m"))


def test_upsample_pool_too_small(tmp_path):
    pool = labeled_pool(2, 200)  # 20 conversational tokens
    spec = upsample_spec(0.5, 1000, policy=RepetitionPolicy.forbid())
    with pytest.raises(InsufficientLabeledTokens):
        upsample_to_fraction(spec, {"rpj": pool}, tmp_path / "m")


def test_upsample_respects_precomputed_verdicts(tmp_path):
    pool = make_docs(100, prefix="x", sentences=1, tokens_per_sentence=10)
    verdicts = {d.id: (1 if i < 30 else 0) for i, d in enumerate(pool)}
    result = upsample_to_fraction(
        upsample_spec(0.25, 600), {"rpj": pool}, tmp_path / "m", verdicts=verdicts
    )
    prov = read_provenance(tmp_path / "m")
    conv_ids = {d_id for d_id, label in verdicts.items() if label}
    conv_tokens = sum(10 for p in prov if p["doc_id"] in conv_ids)
    assert abs(conv_tokens - 150) <= 10


def test_upsample_via_build_mixture_dispatch(tmp_path):
    pool = labeled_pool(40, 100)
    result = build_mixture(upsample_spec(0.2, 500), {"rpj": pool}, tmp_path / "m")
    assert result.report.realized_upsample_fraction == pytest.approx(0.2, abs=10 / 500)


def test_spec_json_roundtrip(tmp_path):
    spec = upsample_spec(0.3, 12345)
    path = tmp_path / "spec.json"
    path.write_text(json.dumps(spec.to_dict()))
    assert load_mixture_spec(path) == spec
    plain = MixtureSpec(components=(("a", 0.4), ("b", 0.6)), total_token_budget=10, seed=1)
    path.write_text(json.dumps(plain.to_dict()))
    assert load_mixture_spec(path) == plain


# -- rq2 / rq3 constructions ---------------------------------------------------------

@pytest.fixture
def toy_corpus(tmp_path):
    docs = make_docs(40, sentences=2, tokens_per_sentence=10)  # symmetric halves
    return ingest_docs(tmp_path, docs, name="web")


def test_rq2_repeat2x_epochs(tmp_path, toy_corpus):
    budget = toy_corpus.total_tokens  # 800
    trio = build_rq2_corpora(
        toy_corpus, budget, MockBackend(seed=1), tmp_path / "rq2", seed=3, sleep=no_sleep
    )
    epochs = trio.repeat2x.report.components[0].epochs
    assert abs(epochs - 2.0) <= 0.05
    assert trio.full.report.components[0].epochs == pytest.approx(1.0, abs=0.05)


def test_rq2_budgets_within_one_maxdoc(tmp_path, toy_corpus):
    budget = toy_corpus.total_tokens
    trio = build_rq2_corpora(
        toy_corpus, budget, MockBackend(seed=1), tmp_path / "rq2", seed=3, sleep=no_sleep
    )
    maxdoc = 20
    for result in trio.as_dict().values():
        assert 0 <= result.report.total_tokens - budget <= maxdoc


def test_rq2_extension_provenance_closure(tmp_path, toy_corpus):
    budget = toy_corpus.total_tokens
    trio = build_rq2_corpora(
        toy_corpus, budget, MockBackend(seed=1), tmp_path / "rq2", seed=3, sleep=no_sleep
    )
    half_ids = {d.id for d in load_documents(trio.half.handle)}
    assert all(i.endswith(":h2") for i in half_ids)
    synth_docs = load_documents(trio.synthetic.handle)
    assert synth_docs
    assert all(d.meta["source_doc_id"] in half_ids for d in synth_docs)
    # the mixed extension corpus only contains halves and synthetic docs
    for doc in load_documents(trio.synthetic_extension.handle):
        base = doc.id.split(":e")[0]
        assert base.endswith(":h2") or ":syn:" in base


def test_rq2_full_has_no_synthetic(tmp_path, toy_corpus):
    trio = build_rq2_corpora(
        toy_corpus, toy_corpus.total_tokens, MockBackend(seed=1), tmp_path / "rq2",
        seed=3, sleep=no_sleep,
    )
    assert all(":syn:" not in d.id for d in load_documents(trio.full.handle))


def test_rq2_keep_first_switch(tmp_path, toy_corpus):
    trio = build_rq2_corpora(
        toy_corpus, toy_corpus.total_tokens, MockBackend(seed=1), tmp_path / "rq2",
        seed=3, keep="first", sleep=no_sleep,
    )
    assert all(
        d.id.split(":e")[0].endswith(":h1") for d in load_documents(trio.repeat2x.handle)
    )


def test_rq3_structure(tmp_path):
    hq = ingest_docs(
        tmp_path, make_docs(60, prefix="hq", quality_tier="hq", source="hq"), name="hqweb"
    )
    lq = ingest_docs(
        tmp_path, make_docs(60, prefix="lq", quality_tier="lq", source="lq"), name="lqweb"
    )
    budget = 1000
    trio = build_rq3_corpora(
        hq, lq, MockBackend(seed=2), budget, tmp_path / "rq3", seed=1, sleep=no_sleep
    )
    hq_ids = {d.id for d in load_documents(hq)}

    hq_mix = load_documents(trio.hq_synth_plus_hq.handle)
    for doc in hq_mix:
        if ":syn:" in doc.id:
            assert doc.meta["source_doc_id"] in hq_ids

    assert all(":syn:" not in d.id for d in load_documents(trio.lq_plus_hq.handle))

    maxdoc = 20
    for result in trio.as_dict().values():
        for component in result.report.components:
            assert abs(component.realized_tokens - budget / 2) <= maxdoc


def test_rq3_tier_validation(tmp_path):
    mixed = ingest_docs(tmp_path, make_docs(10, quality_tier="unknown"), name="m")
    lq = ingest_docs(tmp_path, make_docs(10, prefix="l", quality_tier="lq"), name="l")
    with pytest.raises(ValueError):
        build_rq3_corpora(mixed, lq, MockBackend(), 100, tmp_path / "rq3", sleep=no_sleep)
