"""Command-line entry point.

JSON goes to stdout, human-readable logs to stderr. Exit codes: 0 success,
1 domain findings (issues/violations found), 2 operational failure.

A ./srrg.json config file supplies defaults for --corpus, --taxonomy,
--mapping, --labeler and --workers; explicit flags override it.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Optional, Sequence

from . import labeling, metrics, service, store, textdiff
from .report import StructuredReport, Utterance, extract_utterances, parse_report, validate_desiderata
from .taxonomy import LabelSpace, Taxonomy, load_taxonomy

CONFIG_NAME = "srrg.json"


def _load_config(path: Optional[str]) -> dict:
    candidate = Path(path) if path else Path.cwd() / CONFIG_NAME
    if candidate.exists():
        return json.loads(candidate.read_text("utf-8"))
    return {}


def _emit(payload) -> None:
    sys.stdout.write(json.dumps(payload, sort_keys=True, ensure_ascii=False) + "\n")


def _log(message: str) -> None:
    sys.stderr.write(message + "\n")


def _resolve_labeler(spec: str, taxonomy: Taxonomy, known_keys=None):
    """Labeler spec grammar: keyword:<lexicon.json> | predictions:<file.jsonl>
    | llm:<client config.json>."""
    kind, _, arg = spec.partition(":")
    if kind == "keyword":
        lexicon = labeling.load_keyword_lexicon(arg, taxonomy)
        return labeling.keyword_labeler(lexicon)
    if kind == "predictions":
        return labeling.load_predictions(arg, taxonomy, known_keys)
    if kind == "llm":
        config = json.loads(Path(arg).read_text("utf-8"))
        if config.get("mode", "replay") != "replay":
            raise ValueError("only recorded-session replay clients are supported here")
        client = labeling.ReplayClient(config["session"])
        return labeling.LlmLabeler(client, taxonomy, batch_size=int(config.get("batch_size", 20)))
    raise ValueError(f"unknown labeler spec {spec!r}")


def cmd_parse(args) -> int:
    findings = False
    for path in args.files:
        try:
            text = Path(path).read_text("utf-8")
        except OSError as exc:
            _log(f"cannot read {path}: {exc}")
            return 2
        report, issues = parse_report(text, mode="lenient")
        _emit(
            {
                "file": str(path),
                "ok": not issues,
                "issues": [i.to_json() for i in issues],
                "report": report.to_json() if report is not None else None,
            }
        )
        findings = findings or bool(issues)
    return 1 if findings else 0


def cmd_validate(args) -> int:
    findings = False
    for path in args.files:
        try:
            text = Path(path).read_text("utf-8")
        except OSError as exc:
            _log(f"cannot read {path}: {exc}")
            return 2
        report, issues = parse_report(text, mode="lenient")
        violations = validate_desiderata(report) if report is not None else []
        _emit(
            {
                "file": str(path),
                "ok": not issues and not violations,
                "issues": [i.to_json() for i in issues],
                "violations": [v.to_json() for v in violations],
            }
        )
        findings = findings or bool(issues) or bool(violations)
    return 1 if findings else 0


def cmd_import(args) -> int:
    corpus = store.CorpusStore(args.corpus)
    try:
        report = corpus.import_studies(args.studies, format=args.format)
    except FileNotFoundError as exc:
        _log(f"missing input: {exc}")
        return 2
    if args.splits:
        manifest_raw = json.loads(Path(args.splits).read_text("utf-8"))
        corpus.assign_splits({sid: store.Split(value) for sid, value in manifest_raw.items()})
    if args.index_utterances:
        corpus.index_utterances()
    corpus.compact()
    _emit(
        {
            "imported": report.imported,
            "errors": [{"line": line, "reason": reason} for line, reason in report.errors],
            "splits": corpus.split_counts(),
        }
    )
    return 0 if not report.errors else 1


def _label_corpus(
    corpus: store.CorpusStore, labeler, consensus_voters=None, workers: int = 1
) -> list[tuple[Utterance, frozenset]]:
    """Label every utterance of every structured study, in stable study order.
    Fan-out happens per study; the reduction order is fixed by study id."""
    study_ids = [sid for sid in sorted(corpus.studies) if corpus.studies[sid].structured() is not None]

    def label_one(sid: str) -> list[tuple[Utterance, frozenset]]:
        utterances = extract_utterances(corpus.studies[sid].structured(), sid)
        if not utterances:
            return []
        if consensus_voters is not None:
            label_sets = labeling.ConsensusLabeler(consensus_voters).label(utterances)
            return labeling.discard_unlabeled(list(zip(utterances, label_sets)))
        return list(zip(utterances, labeler.label(utterances)))

    # Replay clients pop recorded answers in order, so they stay sequential;
    # pure labelers can fan out safely.
    parallel_safe = consensus_voters is None and isinstance(
        labeler, (labeling.KeywordLabeler, labeling.PredictionsLabeler)
    )
    if parallel_safe and workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            chunks = list(pool.map(label_one, study_ids))
    else:
        chunks = [label_one(sid) for sid in study_ids]
    return [pair for chunk in chunks for pair in chunk]


def cmd_label(args) -> int:
    taxonomy = load_taxonomy(args.taxonomy)
    corpus = store.CorpusStore(args.corpus)
    if args.consensus and args.consensus != 3:
        _log("consensus voting is defined for exactly 3 voters")
        return 2
    try:
        if args.consensus and args.labeler.startswith("llm:"):
            # Three voters over the same recorded session: each completion of a
            # repeated prompt pops the next recorded answer.
            config = json.loads(Path(args.labeler.partition(":")[2]).read_text("utf-8"))
            client = labeling.ReplayClient(config["session"])
            voters = [
                labeling.LlmLabeler(client, taxonomy, batch_size=int(config.get("batch_size", 20)))
                for _ in range(3)
            ]
            records = _label_corpus(corpus, None, consensus_voters=voters)
        else:
            labeler = _resolve_labeler(args.labeler, taxonomy, set(corpus.utterances) or None)
            records = _label_corpus(corpus, labeler, workers=args.workers or (os.cpu_count() or 1))
    except (labeling.ResponseParseError, labeling.SchemaViolation, labeling.UnknownUtterance, KeyError, OSError) as exc:
        _log(f"labeler failure: {exc}")
        return 2
    with open(args.out, "w", encoding="utf-8") as f:
        for utt, labels in records:
            f.write(json.dumps(labeling.prediction_row(utt, labels), sort_keys=True, ensure_ascii=False) + "\n")
    if args.store:
        provenance = store.Provenance(args.store)
        for utt, labels in records:
            corpus.upsert_utterance(
                store.UtteranceRecord(
                    key=utt.key(),
                    study_id=utt.study_id,
                    origin=utt.origin.to_json(),
                    text=utt.text,
                    labels=labels,
                    provenance=provenance,
                )
            )
        corpus.compact()
    _emit({"labeled": len(records), "out": str(args.out)})
    return 0


def _read_report_file(path: Path | str) -> dict[str, str]:
    """JSONL rows {"study_id", "text"} (or "structured_text")."""
    table: dict[str, str] = {}
    with open(path, encoding="utf-8") as f:
        for line in f:
            if not line.strip():
                continue
            row = json.loads(line)
            table[row["study_id"]] = row.get("text", row.get("structured_text", ""))
    return table


def cmd_evaluate(args) -> int:
    taxonomy = load_taxonomy(args.taxonomy)
    try:
        pred = _read_report_file(args.pred_reports)
        ref = _read_report_file(args.ref_reports)
    except OSError as exc:
        _log(f"cannot read reports: {exc}")
        return 2
    pred_ids, ref_ids = set(pred), set(ref)
    if pred_ids != ref_ids and not args.allow_partial:
        _log(f"unmatched study ids: pred-only={sorted(pred_ids - ref_ids)[:5]} ref-only={sorted(ref_ids - pred_ids)[:5]}")
        return 2
    ids = sorted(pred_ids & ref_ids)
    if not ids:
        _log("no overlapping study ids")
        return 2
    labeler = _resolve_labeler(args.labeler, taxonomy)
    space = LabelSpace(args.space)
    alignment = metrics.AlignmentMode(args.alignment)

    def prepare(sid: str):
        gen_report, _ = parse_report(pred[sid], mode="lenient")
        ref_report, _ = parse_report(ref[sid], mode="lenient")
        gen_report = gen_report or StructuredReport()
        ref_report = ref_report or StructuredReport()
        gen_l = metrics.LabeledReport.build(gen_report, labeler, sid)
        ref_l = metrics.LabeledReport.build(ref_report, labeler, sid)
        samples = metrics.pair_samples(gen_l, ref_l, space, alignment, taxonomy)

        def projected(labeled: metrics.LabeledReport, cat):
            if cat not in labeled.categories():
                return None
            return [metrics.to_class_set(s, space, taxonomy) for s in labeled.category_labels(cat)]

        organ_samples = {
            cat: metrics.section_samples(
                projected(gen_l, cat), projected(ref_l, cat), metrics.AlignmentMode.UNALIGNED
            )
            for cat in metrics.CATEGORY_ORDER
            if cat in gen_l.categories() or cat in ref_l.categories()
        }
        return {
            "sid": sid,
            "samples": samples,
            "organ_samples": organ_samples,
            "gen_report": gen_report,
            "ref_report": ref_report,
            "bleu": metrics.bleu(pred[sid], [ref[sid]]) if ref[sid].split() else 0.0,
            "rouge": metrics.rouge_l(pred[sid], ref[sid]),
            "pair_score": metrics.score_samples(samples, space, alignment, with_per_class=False),
        }

    try:
        with ThreadPoolExecutor(max_workers=args.workers or (os.cpu_count() or 1)) as pool:
            prepared = {item["sid"]: item for item in pool.map(prepare, ids)}
    except metrics.LabelerFailure as exc:
        _log(str(exc))
        return 2

    ordered = [prepared[sid] for sid in ids]
    all_samples = [s for item in ordered for s in item["samples"]]
    pred_sets = [s[0] for s in all_samples]
    ref_sets = [s[1] for s in all_samples]
    averages = {mode: metrics.multilabel_prf(pred_sets, ref_sets, mode) for mode in metrics.AverageMode}
    per_class = metrics.per_class_prf(pred_sets, ref_sets)

    cat_pred = [metrics.category_sets(item["gen_report"]) for item in ordered]
    cat_ref = [metrics.category_sets(item["ref_report"]) for item in ordered]
    category = {mode: metrics.multilabel_prf(cat_pred, cat_ref, mode) for mode in metrics.AverageMode}

    organ_table = {}
    for cat in metrics.CATEGORY_ORDER:
        samples = [s for item in ordered for s in item["organ_samples"].get(cat, [])]
        if samples:
            organ_table[cat.value] = metrics.multilabel_prf(
                [s[0] for s in samples], [s[1] for s in samples], metrics.AverageMode.WEIGHTED
            ).to_json()

    corpus_bleu = metrics.corpus_bleu([(pred[sid], [ref[sid]]) for sid in ids])
    mean_rouge = sum(item["rouge"] for item in ordered) / len(ordered)

    external: dict = {}
    if args.external:
        external = json.loads(Path(args.external).read_text("utf-8"))
        for name in external:
            if name in metrics.BUILTIN_SCORE_NAMES:
                _log(f"external score name collides with a built-in: {name!r}")
                return 2

    result = {
        "split": args.split,
        "space": space.value,
        "alignment": alignment.value,
        "n_pairs": len(ids),
        "traditional": {"BLEU": round(corpus_bleu, 2), "ROUGE-L": round(mean_rouge, 2)},
        "f1_srr_bert": {mode.value: prfs.to_json() for mode, prfs in averages.items()},
        "category": {mode.value: prfs.to_json() for mode, prfs in category.items()},
        "per_organ": organ_table,
        "per_class": {c: s.to_json() for c, s in sorted(per_class.items())},
        "per_report": [
            {
                "study_id": item["sid"],
                "BLEU": round(item["bleu"], 2),
                "ROUGE-L": round(item["rouge"], 2),
                "weighted": item["pair_score"].weighted.to_json(),
            }
            for item in ordered
        ],
    }
    if external:
        result["external"] = external
    _emit(result)

    if args.out:
        out_prefix = Path(args.out)
        out_prefix.parent.mkdir(parents=True, exist_ok=True)
        with open(f"{out_prefix}.json", "w", encoding="utf-8") as f:
            json.dump(result, f, sort_keys=True, ensure_ascii=False, indent=2)
            f.write("\n")
        with open(f"{out_prefix}.csv", "w", encoding="utf-8", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(
                ["study_id", "split", "space", "alignment", "mode", "BLEU", "ROUGE-L",
                 "Precision", "Recall", "F1-Score", "Support", "Category"]
            )
            for mode in metrics.AverageMode:
                prfs = averages[mode]
                writer.writerow(
                    ["ALL", args.split or "", space.value, alignment.value, mode.value,
                     f"{corpus_bleu:.2f}", f"{mean_rouge:.2f}",
                     f"{prfs.precision:.4f}", f"{prfs.recall:.4f}", f"{prfs.f1:.4f}",
                     prfs.support, f"{category[mode].f1:.4f}"]
                )
            for item in ordered:
                prfs = item["pair_score"].weighted
                writer.writerow(
                    [item["sid"], args.split or "", space.value, alignment.value, "weighted",
                     f"{item['bleu']:.2f}", f"{item['rouge']:.2f}",
                     f"{prfs.precision:.4f}", f"{prfs.recall:.4f}", f"{prfs.f1:.4f}",
                     prfs.support, ""]
                )
    return 0


def cmd_diff(args) -> int:
    if args.corpus and args.study:
        corpus = store.CorpusStore(args.corpus)
        try:
            _emit(service.diff_payload(corpus, args.study))
        except service.ApiError as err:
            _log(err.message)
            return 2
        return 0
    pairs: list[tuple[Optional[str], str, str]] = []
    if args.pairs:
        with open(args.pairs, encoding="utf-8") as f:
            for line in f:
                if line.strip():
                    row = json.loads(line)
                    pairs.append((row.get("study_id"), row["original"], row["edited"]))
    elif args.orig and args.edited:
        try:
            pairs.append((None, Path(args.orig).read_text("utf-8"), Path(args.edited).read_text("utf-8")))
        except OSError as exc:
            _log(f"cannot read inputs: {exc}")
            return 2
    else:
        _log("diff needs --orig/--edited, --pairs, or --corpus/--study")
        return 2
    for sid, orig, edited in pairs:
        stats = textdiff.diff_stats(orig, edited)
        payload = stats.to_json()
        if sid is not None:
            payload["study_id"] = sid
        _emit(payload)
    if len(pairs) > 1:
        summary = textdiff.review_summary([(orig, edited) for _, orig, edited in pairs])
        _emit({"summary": summary.to_json()})
        _log(summary.format_block())
    return 0


def cmd_stats(args) -> int:
    if args.corpus:
        corpus = store.CorpusStore(args.corpus)
        try:
            payload = service.summary_payload(corpus)
        except service.ApiError as err:
            _log(err.message)
            return 2
        _emit(payload)
        summary = payload["review_summary"]
        _log(
            "\n".join(
                [
                    f"Total studies reviewed: {summary['total_studies']}",
                    f"Studies with changes: {summary['studies_changed']} ({summary['percent_changed']:.2f}%)",
                    f"Average insertions per study: {summary['mean_insertions']:.2f}",
                    f"Average deletions per study: {summary['mean_deletions']:.2f}",
                    f"Average replacements per study: {summary['mean_replacements']:.2f}",
                    f"Average similarity ratio: {summary['mean_similarity_ratio']:.2f}",
                ]
            )
        )
        return 0
    if args.reviews:
        pairs = []
        with open(args.reviews, encoding="utf-8") as f:
            for line in f:
                if line.strip():
                    row = json.loads(line)
                    pairs.append((row["original"], row["edited"]))
        if not pairs:
            _log("no review pairs")
            return 2
        summary = textdiff.review_summary(pairs)
        _emit({"summary": summary.to_json()})
        _log(summary.format_block())
        return 0
    _log("stats needs --corpus or --reviews")
    return 2


def cmd_serve(args) -> int:
    corpus = store.CorpusStore(args.corpus)
    taxonomy = load_taxonomy(args.taxonomy)
    taxonomy_bytes = Path(args.taxonomy).read_bytes() if args.taxonomy else None
    tokens = service.load_tokens(args.tokens) if args.tokens else None
    host, _, port_text = args.addr.rpartition(":")
    svc = service.ReviewService(
        corpus,
        taxonomy,
        taxonomy_bytes=taxonomy_bytes,
        lease_seconds=args.lease_minutes * 60,
        tokens=tokens,
    )
    try:
        _log(f"serving on {host or '127.0.0.1'}:{port_text}")
        service.serve_forever(svc, host or "127.0.0.1", int(port_text))
    except OSError as exc:
        _log(f"cannot bind {args.addr}: {exc}")
        return 2
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="srrg", description=__doc__)
    parser.add_argument("--config", help=f"config file (default ./{CONFIG_NAME} when present)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("parse", help="parse report files, reporting issues as JSON")
    p.add_argument("files", nargs="+")
    p.set_defaults(func=cmd_parse)

    p = sub.add_parser("validate", help="parse and check content desiderata")
    p.add_argument("files", nargs="+")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("import", help="import studies into a corpus directory")
    p.add_argument("--corpus", required=True)
    p.add_argument("--studies", required=True)
    p.add_argument("--format", choices=["jsonl", "csv"], default="jsonl")
    p.add_argument("--splits", help="JSON manifest {study_id: split}")
    p.add_argument("--index-utterances", action="store_true")
    p.set_defaults(func=cmd_import)

    p = sub.add_parser("label", help="label every utterance of every structured study")
    p.add_argument("--corpus", required=True)
    p.add_argument("--labeler", required=True, help="keyword:<path> | predictions:<path> | llm:<path>")
    p.add_argument("--out", required=True)
    p.add_argument("--consensus", type=int, default=0, help="run 2-of-3 voting (llm labelers)")
    p.add_argument("--store", choices=[p.value for p in store.Provenance], help="also store labels in the corpus")
    p.add_argument("--taxonomy")
    p.add_argument("--workers", type=int)
    p.set_defaults(func=cmd_label)

    p = sub.add_parser("evaluate", help="score generated reports against references")
    p.add_argument("--pred-reports", required=True)
    p.add_argument("--ref-reports", required=True)
    p.add_argument("--labeler", required=True)
    p.add_argument("--space", choices=[s.value for s in LabelSpace], default="leaves")
    p.add_argument("--alignment", choices=[a.value for a in metrics.AlignmentMode], default="unaligned")
    p.add_argument("--split", help="label for the split being scored, carried into exports")
    p.add_argument("--external", help="JSON map of externally computed scores to carry into the export")
    p.add_argument("--taxonomy")
    p.add_argument("--out", help="prefix for .json/.csv exports")
    p.add_argument("--workers", type=int)
    p.add_argument("--allow-partial", action="store_true")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("diff", help="word-level diff statistics")
    p.add_argument("--orig")
    p.add_argument("--edited")
    p.add_argument("--pairs", help="JSONL rows {study_id?, original, edited}")
    p.add_argument("--corpus")
    p.add_argument("--study")
    p.set_defaults(func=cmd_diff)

    p = sub.add_parser("stats", help="review summary statistics")
    p.add_argument("--corpus")
    p.add_argument("--reviews", help="JSONL rows {original, edited}")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("serve", help="run the review service")
    p.add_argument("--addr", default="127.0.0.1:8787")
    p.add_argument("--corpus", required=True)
    p.add_argument("--taxonomy")
    p.add_argument("--tokens")
    p.add_argument("--lease-minutes", type=float, default=30.0)
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    config = _load_config(args.config)
    for key in ("corpus", "taxonomy", "mapping", "labeler", "workers"):
        if getattr(args, key, None) in (None, 0) and key in config:
            setattr(args, key, config[key])
    try:
        return args.func(args)
    except BrokenPipeError:
        return 0


if __name__ == "__main__":
    sys.exit(main())
