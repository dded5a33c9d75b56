"""Acceptance suite: every release criterion at its stated tolerance.

Run with `pytest tests/test_acceptance.py -v -s` to see one PASS line per
criterion.
"""

import itertools
import json
import math
import os
import random
import socket
import subprocess
import sys
import threading
import time
import urllib.request
from http.client import HTTPConnection

import pytest

from srrg.labeling import consensus, parse_disease_response
from srrg.metrics import (
    AlignmentMode,
    AverageMode,
    bleu,
    f1_srr,
    multilabel_prf,
    rouge_l,
)
from srrg.report import (
    AnatomicCategory,
    ImpressionItem,
    Observation,
    SectionKind,
    StructuredReport,
    Utterance,
    Origin,
    parse_report,
    render_report,
)
from srrg.service import diff_payload, summary_payload
from srrg.store import CorpusStore
from srrg.taxonomy import GranularLabel, LabelSpace, Status, load_taxonomy, make_label_set
from srrg.textdiff import diff_stats, review_summary

from conftest import DictLabeler, ls, report_corpus
from fixtures import (
    EDITED_IMPRESSION_1,
    EDITED_IMPRESSION_2,
    ORIGINAL_IMPRESSION_1,
    ORIGINAL_IMPRESSION_2,
)
from test_metrics import LEXICON_TABLE, build_report, oracle_prf, random_instance


def ok(name: str) -> None:
    print(f"ACCEPTANCE {name}: PASS")


def test_review_diff_lightly_edited_pair():
    start = time.perf_counter()
    stats = diff_stats(ORIGINAL_IMPRESSION_1, EDITED_IMPRESSION_1)
    elapsed = time.perf_counter() - start
    assert abs(stats.insertions - 0) <= 2
    assert abs(stats.deletions - 1) <= 2
    assert abs(stats.replacements - 9) <= 2
    assert abs(stats.similarity_ratio - 0.82) <= 0.03
    assert elapsed < 1.0
    ok("review-diff-example-1 (0/1/9, ratio 0.82 +/- tolerances, <1s)")


def test_review_diff_heavily_rewritten_pair():
    stats = diff_stats(ORIGINAL_IMPRESSION_2, EDITED_IMPRESSION_2)
    assert abs(stats.replacements - 35) <= 3
    assert abs(stats.similarity_ratio - 0.29) <= 0.03
    ok("review-diff-example-2 (replacements 35 +/- 3, ratio 0.29 +/- 0.03)")


def test_review_summary_percentage_arithmetic():
    changed = ("alpha beta gamma", "alpha delta gamma")
    unchanged = ("alpha beta gamma", "alpha beta gamma")
    records = [changed] * 130 + [unchanged] * 103
    summary = review_summary(records)
    assert summary.total == 233
    assert summary.changed == 130
    assert abs(summary.percent_changed - 55.79) <= 0.01
    ok("review-summary-arithmetic (130/233 -> 55.79% +/- 0.01pp)")


def test_taxonomy_counts_upper_pairs_and_status_spaces():
    taxonomy = load_taxonomy()
    assert len(taxonomy.leaves) == 54
    expected_pairs = {
        "Pneumonia": "Consolidation",
        "Edema": "Diffuse air space opacity",
        "Cavitating masses": "Multiple masslike opacities",
        "Atelectasis": "Consolidation",
        "Aspiration": "Consolidation",
        "Lung collapse": "Segmental collapse",
        "Simple pleural effusion": "Pleural Effusion",
        "Tortuous Aorta": "Widened aortic contour",
        "Acute rib fracture": "Fracture",
        "Pneumoperitoneum": "Subdiaphragmatic gas",
        "No Finding": "No Finding",
    }
    for leaf, upper in expected_pairs.items():
        assert taxonomy.upper_of(leaf) == upper, leaf
    n_leaves, n_uppers = len(taxonomy.leaves), len(taxonomy.uppers)
    assert len(taxonomy.class_universe(LabelSpace.LEAVES_WITH_STATUS)) == (n_leaves - 1) * 3 + 1
    assert len(taxonomy.class_universe(LabelSpace.UPPER_WITH_STATUS)) == (n_uppers - 1) * 3 + 1
    ok("taxonomy (54 leaves, upper pairs exact, |labels|x3 status spaces)")


def test_worked_label_example():
    taxonomy = load_taxonomy()
    finding = "Right perihilar consolidation, likely atypical edema, with pneumonia as a differential diagnosis."
    response = f"{finding} => 1. Perihilar airspace opacity (Present) 2. Edema (Uncertain) 3. Pneumonia (Uncertain)"
    utterance = Utterance(finding, Origin("impression", index=1), "s")
    [labels] = parse_disease_response(response, [utterance], taxonomy)
    assert labels == ls(
        ("Perihilar airspace opacity", "Present"),
        ("Edema", "Uncertain"),
        ("Pneumonia", "Uncertain"),
    )
    ok("worked-label-example (perihilar consolidation line reproduced exactly)")


def test_consensus_oracle_exhaustive_and_randomized():
    diseases = ["A-disease", "B-disease", "C-disease"]
    subsets = [frozenset(c) for n in range(4) for c in itertools.combinations(diseases, n)]
    assert len(subsets) == 8
    cases = 0
    for sa in subsets:
        for sb in subsets:
            for sc in subsets:
                votes = [make_label_set(GranularLabel(d, Status.PRESENT) for d in s) for s in (sa, sb, sc)]
                got = {lab.disease for lab in consensus(votes)}
                expected = {d for d in diseases if sum(d in s for s in (sa, sb, sc)) >= 2}
                assert got == expected
                cases += 1
    assert cases == 512

    rng = random.Random(20240817)
    statuses = list(Status)
    for _ in range(10_000):
        votes = [
            make_label_set(
                GranularLabel(d, rng.choice(statuses)) for d in rng.sample(diseases, rng.randint(0, 3))
            )
            for _ in range(3)
        ]
        unanimous = consensus([votes[0], votes[0], votes[0]])
        assert unanimous == votes[0]
        base = consensus(votes)
        for permutation in itertools.permutations(votes):
            assert consensus(list(permutation)) == base
    ok("consensus-oracle (512 exhaustive, 10000 randomized invariants)")


def test_multilabel_prf_oracle_1000_instances():
    rng = random.Random(555)
    for _ in range(1000):
        pred, ref = random_instance(rng, max_samples=10, max_classes=8)
        for mode in AverageMode:
            s = multilabel_prf(pred, ref, mode)
            p, r, f, sup = oracle_prf(pred, ref, mode)
            assert abs(s.precision - p) < 1e-9
            assert abs(s.recall - r) < 1e-9
            assert abs(s.f1 - f) < 1e-9
            assert s.support == sup
    ok("multilabel-prf-oracle (1000 instances, all four modes, <1e-9)")


def _pooling_oracle_samples(gen, ref):
    def text_labels(text):
        return frozenset(d for d, _ in LEXICON_TABLE.get(text, [("No Finding", "Present")]))

    samples = []
    for cat in AnatomicCategory:
        g = (gen.findings or {}).get(cat)
        r = (ref.findings or {}).get(cat)
        if g is None and r is None:
            continue
        g_pool = frozenset().union(*[text_labels(o.text) for o in g]) if g else frozenset()
        r_pool = frozenset().union(*[text_labels(o.text) for o in r]) if r else frozenset()
        samples.append((g_pool, r_pool))
    if gen.impression or ref.impression:
        g_pool = frozenset().union(*[text_labels(i.text) for i in gen.impression]) if gen.impression else frozenset()
        r_pool = frozenset().union(*[text_labels(i.text) for i in ref.impression]) if ref.impression else frozenset()
        samples.append((g_pool, r_pool))
    return samples


def test_f1_srr_unaligned_oracle_and_permutation_invariance(taxonomy):
    labeler = DictLabeler(
        {
            text: make_label_set(GranularLabel(d, Status(s)) for d, s in labels)
            for text, labels in LEXICON_TABLE.items()
        },
        taxonomy,
    )
    rng = random.Random(31415)
    texts = list(LEXICON_TABLE)

    def random_side():
        cats = rng.sample(list(AnatomicCategory), rng.randint(0, 3))
        impression = [rng.choice(texts) for _ in range(rng.randint(0, 3))]
        return build_report(
            {cat: [rng.choice(texts) for _ in range(rng.randint(1, 3))] for cat in cats},
            impression=impression or None,
        )

    checked = 0
    while checked < 200:
        gen, ref = random_side(), random_side()
        if (gen.findings is None and gen.impression is None) or (
            ref.findings is None and ref.impression is None
        ):
            continue
        score = f1_srr(gen, ref, labeler, LabelSpace.LEAVES, AlignmentMode.UNALIGNED, taxonomy)
        samples = _pooling_oracle_samples(gen, ref)
        for mode in AverageMode:
            p, r, f, _ = oracle_prf([s[0] for s in samples], [s[1] for s in samples], mode)
            assert abs(score.averages[mode].precision - p) < 1e-9
            assert abs(score.averages[mode].recall - r) < 1e-9
            assert abs(score.averages[mode].f1 - f) < 1e-9
        checked += 1

    base = build_report(
        {
            AnatomicCategory.LUNGS_AND_AIRWAYS: ["Edema sentence.", "Pneumonia sentence.", "Nothing sentence."],
            AnatomicCategory.PLEURA: ["Effusion sentence.", "Pneumothorax sentence."],
        },
        impression=["Edema sentence.", "Fracture sentence.", "Effusion sentence."],
    )
    reference = build_report(
        {AnatomicCategory.LUNGS_AND_AIRWAYS: ["Pneumonia sentence."]},
        impression=["Fracture sentence."],
    )
    expected = f1_srr(base, reference, labeler, LabelSpace.LEAVES, AlignmentMode.UNALIGNED, taxonomy)
    for _ in range(1000):
        shuffled = StructuredReport(
            findings={cat: rng.sample(list(bullets), len(bullets)) for cat, bullets in base.findings.items()},
            impression=[
                ImpressionItem(i + 1, t)
                for i, t in enumerate(rng.sample([i.text for i in base.impression], len(base.impression)))
            ],
        )
        got = f1_srr(shuffled, reference, labeler, LabelSpace.LEAVES, AlignmentMode.UNALIGNED, taxonomy)
        for mode in AverageMode:
            assert got.averages[mode] == expected.averages[mode]
    ok("f1-srr-oracle (200 pairs vs pooling oracle, 1000 shuffles invariant)")


def test_zero_rule_strictly_decreases_weighted_f1(taxonomy):
    labeler = DictLabeler(
        {
            text: make_label_set(GranularLabel(d, Status(s)) for d, s in labels)
            for text, labels in LEXICON_TABLE.items()
        },
        taxonomy,
    )
    reference = build_report(
        {
            AnatomicCategory.LUNGS_AND_AIRWAYS: ["Edema sentence."],
            AnatomicCategory.CARDIOVASCULAR: ["Cardiomegaly sentence."],
        }
    )
    perfect_score = f1_srr(reference, reference, labeler, LabelSpace.LEAVES, AlignmentMode.UNALIGNED, taxonomy)
    assert perfect_score.weighted.f1 == 1.0

    extra = build_report(
        {
            AnatomicCategory.LUNGS_AND_AIRWAYS: ["Edema sentence."],
            AnatomicCategory.CARDIOVASCULAR: ["Cardiomegaly sentence."],
            AnatomicCategory.PLEURA: ["Edema sentence."],
        }
    )
    extra_score = f1_srr(extra, reference, labeler, LabelSpace.LEAVES, AlignmentMode.UNALIGNED, taxonomy)
    assert extra_score.weighted.f1 < perfect_score.weighted.f1

    missing = build_report({AnatomicCategory.LUNGS_AND_AIRWAYS: ["Edema sentence."]})
    missing_score = f1_srr(missing, reference, labeler, LabelSpace.LEAVES, AlignmentMode.UNALIGNED, taxonomy)
    assert missing_score.weighted.f1 < perfect_score.weighted.f1
    ok("zero-rule (extra predicted and missing reference sections lower weighted F1)")


def test_grammar_fixed_point_headers_and_text_metrics():
    corpus = report_corpus(seed=20250102, n=100)
    for report in corpus:
        text = render_report(report)
        assert parse_report(text) == report
        assert render_report(parse_report(text)) == text

    everything = StructuredReport(
        exam_type="A",
        history="B",
        technique="C",
        comparison="D",
        findings={cat: [Observation("ok")] for cat in AnatomicCategory},
        impression=[ImpressionItem(1, "Fine.")],
    )
    text = render_report(everything)
    reparsed = parse_report(text)
    assert render_report(reparsed) == text
    for kind in SectionKind:
        assert f"{kind.value}:" in text
    for cat in AnatomicCategory:
        assert f"\n{cat.value}:\n" in text

    assert bleu("identical sentence here", ["identical sentence here"]) == pytest.approx(100.0, abs=1e-9)
    assert rouge_l("identical sentence here", "identical sentence here") == pytest.approx(100.0, abs=1e-9)
    assert bleu("the cat sat", ["the cat sat down"]) == pytest.approx(100.0 * math.exp(1 - 4 / 3), abs=1e-9)
    assert bleu("the cat", ["the dog"]) == pytest.approx(
        100.0 * math.exp((math.log(0.5) + math.log(0.5)) / 4), abs=1e-9
    )
    assert rouge_l("a b c d", "a c b d") == pytest.approx(75.0, abs=1e-9)
    assert rouge_l("a b", "a b c d") == pytest.approx(100 * 1.22 / 1.94, abs=1e-9)
    ok("grammar-and-text-metrics (100-report fixed point, headers byte-exact, oracles <1e-9)")


STRUCTURED = "Findings:\nPleura:\n- No pneumothorax.\nImpression:\n1. Clear lungs."
EDITED = "Findings:\nPleura:\n- No pneumothorax.\nImpression:\n1. Lungs are clear."


def _seed_crash_corpus(directory, n):
    store = CorpusStore(directory)
    from srrg.store import Split, Study

    for i in range(n):
        store.upsert_study(
            Study(
                study_id=f"c{i:03d}",
                source="crash",
                original_text=f"text {i}",
                structured_text=STRUCTURED,
                split=Split.TEST_REVIEWED,
            )
        )
    return store


def _post_review(port, study_id, expected_version):
    conn = HTTPConnection("127.0.0.1", port, timeout=5)
    body = json.dumps(
        {"edited_text": EDITED, "expected_version": expected_version, "reviewer": "crash-test"}
    ).encode()
    conn.request("POST", f"/studies/{study_id}/review", body=body)
    response = conn.getresponse()
    payload = json.loads(response.read())
    conn.close()
    return response.status, payload


def _wait_health(port, deadline=10.0):
    end = time.time() + deadline
    while time.time() < end:
        try:
            with urllib.request.urlopen(f"http://127.0.0.1:{port}/healthz", timeout=1) as r:
                if r.status == 200:
                    return
        except Exception:
            time.sleep(0.03)
    raise TimeoutError("server did not come up")


def test_service_parity_and_crash_durability(tmp_path):
    started = time.time()
    corpus_dir = tmp_path / "crash-corpus"
    _seed_crash_corpus(corpus_dir, 40)

    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        port = s.getsockname()[1]

    acknowledged: list[tuple[str, int]] = []
    ack_lock = threading.Lock()
    rng = random.Random(8181)
    studies = [f"c{i:03d}" for i in range(40)]

    for iteration in range(10):
        batch = studies[iteration * 4 : (iteration + 1) * 4]
        stop = threading.Event()
        thread = None
        proc = subprocess.Popen(
            [
                sys.executable, "-m", "srrg.cli", "serve",
                "--addr", f"127.0.0.1:{port}", "--corpus", str(corpus_dir),
            ],
            stdout=subprocess.DEVNULL,
            stderr=subprocess.DEVNULL,
        )
        try:
            _wait_health(port)
            # one guaranteed acknowledged write...
            status, payload = _post_review(port, batch[0], 0)
            assert status == 200
            with ack_lock:
                acknowledged.append((batch[0], payload["version"]))

            # ...then keep writes flowing to the rest and kill mid-flight
            def hammer():
                versions = {sid: 0 for sid in batch[1:]}
                while not stop.is_set():
                    for sid in batch[1:]:
                        try:
                            st, pl = _post_review(port, sid, versions[sid])
                        except Exception:
                            return  # killed mid-request: no ack, no obligation
                        if st == 200:
                            versions[sid] = pl["version"]
                            with ack_lock:
                                acknowledged.append((sid, pl["version"]))
                        else:
                            return

            thread = threading.Thread(target=hammer)
            thread.start()
            time.sleep(rng.uniform(0.01, 0.08))
        finally:
            proc.kill()
            proc.wait(timeout=10)
            stop.set()
            if thread is not None:
                thread.join(timeout=5)

    # every acknowledged review survived all the kills
    reloaded = CorpusStore(corpus_dir)
    highest: dict[str, int] = {}
    for sid, version in acknowledged:
        highest[sid] = max(highest.get(sid, 0), version)
    for sid, version in highest.items():
        record = reloaded.latest_review(sid)
        assert record is not None, f"acknowledged review for {sid} lost"
        assert record.version >= version
        assert record.edited_text == EDITED

    # parity: HTTP bytes equal CLI payloads over the same store
    from srrg.service import ReviewService, make_server
    from srrg.taxonomy import load_taxonomy as _lt

    service = ReviewService(reloaded, _lt())
    srv = make_server(service, "127.0.0.1", 0)
    t = threading.Thread(target=lambda: srv.serve_forever(poll_interval=0.05), daemon=True)
    t.start()
    try:
        sid = acknowledged[0][0]
        conn = HTTPConnection("127.0.0.1", srv.server_address[1], timeout=5)
        conn.request("GET", f"/studies/{sid}/diff")
        http_diff = conn.getresponse().read()
        conn.request("GET", "/summary")
        http_summary = conn.getresponse().read()
        conn.close()
        cli_diff = (json.dumps(diff_payload(reloaded, sid), sort_keys=True, ensure_ascii=False) + "\n").encode()
        cli_summary = (json.dumps(summary_payload(reloaded), sort_keys=True, ensure_ascii=False) + "\n").encode()
        assert http_diff == cli_diff
        assert http_summary == cli_summary
    finally:
        srv.shutdown()
        srv.server_close()
        t.join(timeout=5)

    elapsed = time.time() - started
    assert elapsed < 60.0, f"crash test took {elapsed:.1f}s"
    assert len(acknowledged) >= 10
    ok(f"service-parity-and-durability (10 kill cycles, {len(acknowledged)} acks kept, {elapsed:.1f}s)")
