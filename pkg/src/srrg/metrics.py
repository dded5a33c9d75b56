"""Evaluation metrics for structured reports.

Disease-level scores compare labeler outputs on a generated report against
the reference, per label space and alignment mode:

- unaligned: all bullets under one anatomical header (and all impression
  items) are pooled into a single set-vs-set sample;
- aligned: utterances are paired positionally within each header / by
  impression rank, unmatched positions pairing against the empty set.

Sections missing from the generation but present in the reference, and extra
predicted sections, contribute zero-scoring samples. Aggregation happens in
multilabel_prf; the weighted average is the headline number.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Sequence

from .report import CATEGORY_ORDER, AnatomicCategory, StructuredReport, Utterance, extract_utterances
from .taxonomy import LabelSpace, Taxonomy, project


class LengthMismatch(ValueError):
    pass


class EmptyReference(ValueError):
    pass


class NameCollision(ValueError):
    pass


class LabelerFailure(RuntimeError):
    def __init__(self, study_id: str, cause: Exception):
        super().__init__(f"labeler failed on study {study_id!r}: {cause}")
        self.study_id = study_id
        self.cause = cause


class AverageMode(Enum):
    MICRO = "micro"
    MACRO = "macro"
    WEIGHTED = "weighted"
    SAMPLES = "samples"


class AlignmentMode(Enum):
    ALIGNED = "aligned"
    UNALIGNED = "unaligned"


@dataclass(frozen=True)
class PRFS:
    precision: float
    recall: float
    f1: float
    support: int

    def to_json(self) -> dict:
        return {
            "precision": round(self.precision, 6),
            "recall": round(self.recall, 6),
            "f1": round(self.f1, 6),
            "support": self.support,
        }


def _f1(p: float, r: float) -> float:
    return 0.0 if p + r == 0 else 2 * p * r / (p + r)


def _ratio(num: float, den: float) -> float:
    return num / den if den else 0.0


def confusion_counts(
    pred: Sequence[frozenset], ref: Sequence[frozenset], classes: Optional[Sequence] = None
) -> dict:
    """Per-class tp/fp/fn over positionally paired sample sets."""
    if len(pred) != len(ref):
        raise LengthMismatch(f"{len(pred)} predictions vs {len(ref)} references")
    universe = set(classes or ())
    for s in pred:
        universe |= s
    for s in ref:
        universe |= s
    counts = {c: [0, 0, 0] for c in sorted(universe)}  # tp, fp, fn
    for p, r in zip(pred, ref):
        for c in p & r:
            counts[c][0] += 1
        for c in p - r:
            counts[c][1] += 1
        for c in r - p:
            counts[c][2] += 1
    return counts


def per_class_prf(
    pred: Sequence[frozenset], ref: Sequence[frozenset], classes: Optional[Sequence] = None
) -> dict:
    out = {}
    for c, (tp, fp, fn) in confusion_counts(pred, ref, classes).items():
        p = _ratio(tp, tp + fp)
        r = _ratio(tp, tp + fn)
        out[c] = PRFS(p, r, _f1(p, r), tp + fn)
    return out


def multilabel_prf(
    pred: Sequence[frozenset],
    ref: Sequence[frozenset],
    mode: AverageMode,
    classes: Optional[Sequence] = None,
) -> PRFS:
    """Multilabel precision/recall/F1 under one averaging mode.

    micro pools counts; macro is the unweighted per-class mean; weighted is
    the reference-support-weighted mean; samples averages per-sample scores,
    where a sample that is empty on both sides counts as a perfect 1.0.
    """
    counts = confusion_counts(pred, ref, classes)
    support = sum(tp + fn for tp, _, fn in counts.values())

    if mode is AverageMode.MICRO:
        tp = sum(v[0] for v in counts.values())
        fp = sum(v[1] for v in counts.values())
        fn = sum(v[2] for v in counts.values())
        p, r = _ratio(tp, tp + fp), _ratio(tp, tp + fn)
        return PRFS(p, r, _f1(p, r), support)

    if mode in (AverageMode.MACRO, AverageMode.WEIGHTED):
        table = per_class_prf(pred, ref, classes)
        if not table:
            return PRFS(0.0, 0.0, 0.0, 0)
        if mode is AverageMode.MACRO:
            n = len(table)
            return PRFS(
                sum(s.precision for s in table.values()) / n,
                sum(s.recall for s in table.values()) / n,
                sum(s.f1 for s in table.values()) / n,
                support,
            )
        if support == 0:
            return PRFS(0.0, 0.0, 0.0, 0)
        return PRFS(
            sum(s.precision * s.support for s in table.values()) / support,
            sum(s.recall * s.support for s in table.values()) / support,
            sum(s.f1 * s.support for s in table.values()) / support,
            support,
        )

    if mode is AverageMode.SAMPLES:
        if not pred:
            return PRFS(0.0, 0.0, 0.0, 0)
        ps = rs = fs = 0.0
        for p_set, r_set in zip(pred, ref):
            if not p_set and not r_set:
                ps += 1.0
                rs += 1.0
                fs += 1.0
                continue
            inter = len(p_set & r_set)
            p = _ratio(inter, len(p_set))
            r = _ratio(inter, len(r_set))
            ps += p
            rs += r
            fs += _f1(p, r)
        n = len(pred)
        return PRFS(ps / n, rs / n, fs / n, support)

    raise ValueError(f"unknown averaging mode: {mode!r}")


def to_class_set(labels: frozenset, space: LabelSpace, taxonomy: Taxonomy) -> frozenset:
    """Project a leaf LabelSet into string class keys for the given space;
    with-status classes render as 'Disease (Status)'."""
    projected = project(labels, space, taxonomy)
    if space in (LabelSpace.LEAVES, LabelSpace.UPPER):
        return projected
    return frozenset(lab.render() for lab in projected)


@dataclass
class LabeledReport:
    """A report with labeler output attached to each of its utterances."""

    report: StructuredReport
    utterances: list[Utterance]
    labels: list[frozenset]
    study_id: str = ""

    @staticmethod
    def build(report: StructuredReport, labeler, study_id: str = "") -> "LabeledReport":
        utterances = extract_utterances(report, study_id)
        try:
            labels = labeler.label(utterances)
        except Exception as exc:  # noqa: BLE001 - re-raised with identity
            raise LabelerFailure(study_id, exc) from exc
        if len(labels) != len(utterances):
            raise LabelerFailure(
                study_id, ValueError(f"labeler returned {len(labels)} sets for {len(utterances)} utterances")
            )
        return LabeledReport(report, utterances, list(labels), study_id)

    def category_labels(self, category: AnatomicCategory) -> list[frozenset]:
        return [
            lab
            for utt, lab in zip(self.utterances, self.labels)
            if utt.origin.kind == "finding" and utt.origin.category is category
        ]

    def impression_labels(self) -> list[frozenset]:
        return [lab for utt, lab in zip(self.utterances, self.labels) if utt.origin.kind == "impression"]

    def categories(self) -> set[AnatomicCategory]:
        return set(self.report.findings or {})

    def has_impression(self) -> bool:
        return bool(self.report.impression)


def _pool(sets: Sequence[frozenset]) -> frozenset:
    out: frozenset = frozenset()
    for s in sets:
        out |= s
    return out


def section_samples(
    gen: Optional[list[frozenset]],
    ref: Optional[list[frozenset]],
    alignment: AlignmentMode,
) -> list[tuple[frozenset, frozenset]]:
    """Samples for one section. None on a side means the section is absent
    there, which triggers the zero rule."""
    gen_sets = gen if gen is not None else []
    ref_sets = ref if ref is not None else []
    if alignment is AlignmentMode.UNALIGNED:
        return [(_pool(gen_sets), _pool(ref_sets))]
    length = max(len(gen_sets), len(ref_sets))
    empty: frozenset = frozenset()
    return [
        (gen_sets[i] if i < len(gen_sets) else empty, ref_sets[i] if i < len(ref_sets) else empty)
        for i in range(length)
    ]


def pair_samples(
    gen: LabeledReport,
    ref: LabeledReport,
    space: LabelSpace,
    alignment: AlignmentMode,
    taxonomy: Taxonomy,
) -> list[tuple[frozenset, frozenset]]:
    """Assemble the scored samples for one generated/reference pair, in
    canonical category order with the impression block last."""

    def proj(sets: list[frozenset]) -> list[frozenset]:
        return [to_class_set(s, space, taxonomy) for s in sets]

    samples: list[tuple[frozenset, frozenset]] = []
    for cat in CATEGORY_ORDER:
        in_gen, in_ref = cat in gen.categories(), cat in ref.categories()
        if not (in_gen or in_ref):
            continue
        samples.extend(
            section_samples(
                proj(gen.category_labels(cat)) if in_gen else None,
                proj(ref.category_labels(cat)) if in_ref else None,
                alignment,
            )
        )
    if gen.has_impression() or ref.has_impression():
        samples.extend(
            section_samples(
                proj(gen.impression_labels()) if gen.has_impression() else None,
                proj(ref.impression_labels()) if ref.has_impression() else None,
                alignment,
            )
        )
    return samples


@dataclass
class ScoreReport:
    """Scores for one label space and alignment mode, all averaging modes."""

    space: LabelSpace
    alignment: AlignmentMode
    averages: dict[AverageMode, PRFS]
    per_class: Optional[dict[str, PRFS]] = None
    per_organ: Optional[dict[AnatomicCategory, PRFS]] = None
    category: Optional[dict[AverageMode, PRFS]] = None
    external: dict[str, float] = field(default_factory=dict)

    @property
    def weighted(self) -> PRFS:
        return self.averages[AverageMode.WEIGHTED]

    def to_json(self) -> dict:
        out: dict = {
            "space": self.space.value,
            "alignment": self.alignment.value,
            "averages": {m.value: s.to_json() for m, s in self.averages.items()},
        }
        if self.per_class is not None:
            out["per_class"] = {c: s.to_json() for c, s in sorted(self.per_class.items())}
        if self.per_organ is not None:
            out["per_organ"] = {cat.value: s.to_json() for cat, s in self.per_organ.items()}
        if self.category is not None:
            out["category"] = {m.value: s.to_json() for m, s in self.category.items()}
        if self.external:
            out["external"] = dict(sorted(self.external.items()))
        return out


BUILTIN_SCORE_NAMES = ("BLEU", "ROUGE-L", "F1-SRR-BERT", "Precision", "Recall", "F1-Score", "Category")


def merge_external_scores(report: ScoreReport, external: dict[str, float]) -> ScoreReport:
    """Attach externally computed scores (carried verbatim, never computed)."""
    for name in external:
        if name in BUILTIN_SCORE_NAMES or name in report.external:
            raise NameCollision(f"external score name {name!r} collides")
    report.external.update(external)
    return report


def score_samples(
    samples: list[tuple[frozenset, frozenset]],
    space: LabelSpace,
    alignment: AlignmentMode,
    with_per_class: bool = True,
) -> ScoreReport:
    pred = [s[0] for s in samples]
    ref = [s[1] for s in samples]
    averages = {mode: multilabel_prf(pred, ref, mode) for mode in AverageMode}
    per_class = per_class_prf(pred, ref) if with_per_class else None
    return ScoreReport(space, alignment, averages, per_class=per_class)


def f1_srr(
    generated: StructuredReport,
    reference: StructuredReport,
    labeler,
    space: LabelSpace,
    alignment: AlignmentMode,
    taxonomy: Taxonomy,
    study_id: str = "",
) -> ScoreReport:
    """Disease-level scores for one report pair, plus the category table and
    the per-organ breakdown."""
    gen = LabeledReport.build(generated, labeler, study_id)
    ref = LabeledReport.build(reference, labeler, study_id)
    report = score_samples(pair_samples(gen, ref, space, alignment, taxonomy), space, alignment)
    report.category = {
        mode: _category_prf([generated], [reference], mode) for mode in AverageMode
    }
    report.per_organ = per_organ_breakdown_labeled(gen, ref, space, taxonomy)
    return report


def category_sets(report: StructuredReport) -> frozenset:
    return frozenset(cat.value for cat in (report.findings or {}))


def _category_prf(gen_reports: Sequence[StructuredReport], ref_reports: Sequence[StructuredReport], mode: AverageMode) -> PRFS:
    pred = [category_sets(r) for r in gen_reports]
    ref = [category_sets(r) for r in ref_reports]
    return multilabel_prf(pred, ref, mode)


def category_f1(
    generated: StructuredReport, reference: StructuredReport, mode: AverageMode = AverageMode.MICRO
) -> tuple[float, float, float]:
    """Score which anatomical headers each report contains, as one multilabel
    sample over the 8-header universe."""
    s = _category_prf([generated], [reference], mode)
    return s.precision, s.recall, s.f1


def per_organ_breakdown_labeled(
    gen: LabeledReport, ref: LabeledReport, space: LabelSpace, taxonomy: Taxonomy
) -> dict[AnatomicCategory, PRFS]:
    """Unaligned scoring restricted to each anatomical header independently
    (weighted average). Headers absent from both sides are omitted."""

    def proj(sets: list[frozenset]) -> list[frozenset]:
        return [to_class_set(s, space, taxonomy) for s in sets]

    out: dict[AnatomicCategory, PRFS] = {}
    for cat in CATEGORY_ORDER:
        in_gen, in_ref = cat in gen.categories(), cat in ref.categories()
        if not (in_gen or in_ref):
            continue
        samples = section_samples(
            proj(gen.category_labels(cat)) if in_gen else None,
            proj(ref.category_labels(cat)) if in_ref else None,
            AlignmentMode.UNALIGNED,
        )
        out[cat] = multilabel_prf([s[0] for s in samples], [s[1] for s in samples], AverageMode.WEIGHTED)
    return out


def per_organ_breakdown(
    generated: StructuredReport,
    reference: StructuredReport,
    labeler,
    space: LabelSpace,
    taxonomy: Taxonomy,
    study_id: str = "",
) -> dict[AnatomicCategory, PRFS]:
    gen = LabeledReport.build(generated, labeler, study_id)
    ref = LabeledReport.build(reference, labeler, study_id)
    return per_organ_breakdown_labeled(gen, ref, space, taxonomy)


def _ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def bleu(candidate: str, references: Sequence[str], max_n: int = 4) -> float:
    """Sentence BLEU in [0, 100]: uniform n-gram weights, brevity penalty,
    add-one smoothing on orders above 1 so short utterances keep a signal."""
    if not references:
        raise EmptyReference("bleu needs at least one reference")
    cand = candidate.split()
    refs = [r.split() for r in references]
    if all(not r for r in refs):
        raise EmptyReference("bleu references are all empty")
    if not cand:
        return 0.0

    log_sum = 0.0
    for n in range(1, max_n + 1):
        cand_counts = _ngrams(cand, n)
        best: Counter = Counter()
        for ref in refs:
            for gram, count in _ngrams(ref, n).items():
                if count > best[gram]:
                    best[gram] = count
        clipped = sum(min(count, best[gram]) for gram, count in cand_counts.items())
        total = max(len(cand) - n + 1, 0)
        if n == 1:
            p = _ratio(clipped, total)
            if p == 0:
                return 0.0
        else:
            p = (clipped + 1) / (total + 1)
        log_sum += math.log(p) / max_n

    c_len = len(cand)
    r_len = min((len(r) for r in refs), key=lambda rl: (abs(rl - c_len), rl))
    bp = 1.0 if c_len > r_len else math.exp(1 - r_len / c_len)
    return 100.0 * bp * math.exp(log_sum)


def corpus_bleu(pairs: Sequence[tuple[str, Sequence[str]]], max_n: int = 4) -> float:
    """Corpus BLEU: pooled clipped counts over all segments, same smoothing."""
    if not pairs:
        raise EmptyReference("corpus_bleu needs at least one pair")
    clipped_total = [0] * (max_n + 1)
    count_total = [0] * (max_n + 1)
    c_len = r_len = 0
    for candidate, references in pairs:
        cand = candidate.split()
        refs = [r.split() for r in references]
        if not refs:
            raise EmptyReference("corpus_bleu pair has no references")
        c_len += len(cand)
        r_len += min((len(r) for r in refs), key=lambda rl: (abs(rl - len(cand)), rl))
        for n in range(1, max_n + 1):
            cand_counts = _ngrams(cand, n)
            best: Counter = Counter()
            for ref in refs:
                for gram, count in _ngrams(ref, n).items():
                    if count > best[gram]:
                        best[gram] = count
            clipped_total[n] += sum(min(count, best[gram]) for gram, count in cand_counts.items())
            count_total[n] += max(len(cand) - n + 1, 0)
    if c_len == 0:
        return 0.0
    log_sum = 0.0
    for n in range(1, max_n + 1):
        if n == 1:
            p = _ratio(clipped_total[1], count_total[1])
            if p == 0:
                return 0.0
        else:
            p = (clipped_total[n] + 1) / (count_total[n] + 1)
        log_sum += math.log(p) / max_n
    bp = 1.0 if c_len > r_len else math.exp(1 - r_len / c_len)
    return 100.0 * bp * math.exp(log_sum)


def rouge_l(candidate: str, reference: str, beta: float = 1.2) -> float:
    """LCS-based F-measure in [0, 100] on whitespace tokens."""
    cand, ref = candidate.split(), reference.split()
    if not cand and not ref:
        return 100.0
    if not cand or not ref:
        return 0.0
    lcs = _lcs_length(cand, ref)
    r = lcs / len(ref)
    p = lcs / len(cand)
    if r == 0 and p == 0:
        return 0.0
    denom = r + beta * beta * p
    return 100.0 * (1 + beta * beta) * r * p / denom if denom else 0.0


def _lcs_length(a: Sequence[str], b: Sequence[str]) -> int:
    if len(b) > len(a):
        a, b = b, a
    prev = [0] * (len(b) + 1)
    for x in a:
        curr = [0]
        for j, y in enumerate(b, start=1):
            curr.append(prev[j - 1] + 1 if x == y else max(prev[j], curr[j - 1]))
        prev = curr
    return prev[-1]
