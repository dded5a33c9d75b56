"""Structured chest X-ray report model: grammar, parser, renderer, validator.

A structured report is plain text made of six sections introduced by
``<Header>:`` at the start of a line. Findings observations are grouped under
eight fixed anatomical headers as ``- `` bullets; the impression is a numbered
list ranked by clinical significance.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Optional


class SectionKind(Enum):
    EXAM_TYPE = "Exam Type"
    HISTORY = "History"
    TECHNIQUE = "Technique"
    COMPARISON = "Comparison"
    FINDINGS = "Findings"
    IMPRESSION = "Impression"


class AnatomicCategory(Enum):
    LUNGS_AND_AIRWAYS = "Lungs and Airways"
    PLEURA = "Pleura"
    CARDIOVASCULAR = "Cardiovascular"
    HILA_AND_MEDIASTINUM = "Hila and Mediastinum"
    TUBES_CATHETERS_AND_SUPPORT_DEVICES = "Tubes, Catheters, and Support Devices"
    MUSCULOSKELETAL_AND_CHEST_WALL = "Musculoskeletal and Chest Wall"
    ABDOMINAL = "Abdominal"
    OTHER = "Other"


SECTION_ORDER = list(SectionKind)
CATEGORY_ORDER = list(AnatomicCategory)

_SECTION_BY_LOWER = {k.value.lower(): k for k in SectionKind}
_CATEGORY_BY_LOWER = {c.value.lower(): c for c in AnatomicCategory}

FREE_TEXT_SECTIONS = (
    SectionKind.EXAM_TYPE,
    SectionKind.HISTORY,
    SectionKind.TECHNIQUE,
    SectionKind.COMPARISON,
)


class IssueCode(Enum):
    UNKNOWN_SECTION_HEADER = "UnknownSectionHeader"
    UNKNOWN_ANATOMIC_HEADER = "UnknownAnatomicHeader"
    MISSING_COLON = "MissingColon"
    BULLET_OUTSIDE_CATEGORY = "BulletOutsideCategory"
    NON_CONSECUTIVE_IMPRESSION_NUMBERS = "NonConsecutiveImpressionNumbers"
    EMPTY_DOCUMENT = "EmptyDocument"
    DUPLICATE_SECTION = "DuplicateSection"
    DUPLICATE_CATEGORY = "DuplicateCategory"


@dataclass(frozen=True)
class ParseIssue:
    line: int  # 1-based line number in the input
    code: IssueCode
    message: str

    def to_json(self) -> dict:
        return {"line": self.line, "code": self.code.value, "message": self.message}


class ReportParseError(ValueError):
    """Strict parse failed; carries the collected issues."""

    def __init__(self, issues: list[ParseIssue]):
        super().__init__("; ".join(f"line {i.line}: {i.code.value}: {i.message}" for i in issues))
        self.issues = issues


@dataclass(frozen=True)
class Observation:
    """One findings bullet. Single line, already stripped, no '- ' prefix."""

    text: str

    def __post_init__(self):
        if not self.text or self.text != self.text.strip():
            raise ValueError(f"observation text must be non-empty and trimmed: {self.text!r}")
        if "\n" in self.text:
            raise ValueError("observation text must not contain newlines")
        if self.text.startswith("- "):
            raise ValueError("observation text must not carry its own bullet marker")


@dataclass(frozen=True)
class ImpressionItem:
    rank: int
    text: str

    def __post_init__(self):
        if self.rank < 1:
            raise ValueError(f"impression rank must be positive: {self.rank}")
        if not self.text or self.text != self.text.strip():
            raise ValueError(f"impression text must be non-empty and trimmed: {self.text!r}")
        if "\n" in self.text:
            raise ValueError("impression text must not contain newlines")


@dataclass(frozen=True)
class Origin:
    """Where an utterance lives in its report.

    kind "finding": category set, index is the 0-based bullet position within
    that category. kind "impression": index is the printed rank (1-based).
    """

    kind: str  # "finding" | "impression"
    category: Optional[AnatomicCategory] = None
    index: int = 0

    def key(self) -> str:
        if self.kind == "finding":
            return f"finding:{self.category.value}:{self.index}"
        return f"impression:{self.index}"

    def to_json(self) -> dict:
        out = {"kind": self.kind, "index": self.index}
        if self.category is not None:
            out["category"] = self.category.value
        return out

    @staticmethod
    def from_json(obj: dict) -> "Origin":
        cat = obj.get("category")
        return Origin(
            kind=obj["kind"],
            category=_CATEGORY_BY_LOWER[cat.lower()] if cat else None,
            index=int(obj["index"]),
        )


@dataclass(frozen=True)
class Utterance:
    text: str
    origin: Origin
    study_id: str = ""

    def key(self) -> str:
        return f"{self.study_id}:{self.origin.key()}"


@dataclass
class StructuredReport:
    """Parsed report. ``findings``/``impression`` are None when the section is
    absent, and empty when the header is present with no content."""

    exam_type: Optional[str] = None
    history: Optional[str] = None
    technique: Optional[str] = None
    comparison: Optional[str] = None
    findings: Optional[dict[AnatomicCategory, list[Observation]]] = None
    impression: Optional[list[ImpressionItem]] = None

    def free_text(self, kind: SectionKind) -> Optional[str]:
        return {
            SectionKind.EXAM_TYPE: self.exam_type,
            SectionKind.HISTORY: self.history,
            SectionKind.TECHNIQUE: self.technique,
            SectionKind.COMPARISON: self.comparison,
        }[kind]

    def check_invariants(self) -> None:
        if self.findings is not None:
            for cat, bullets in self.findings.items():
                if not isinstance(cat, AnatomicCategory):
                    raise ValueError(f"findings key is not an AnatomicCategory: {cat!r}")
                if not bullets:
                    raise ValueError(f"findings category {cat.value!r} has no observations")
        if self.impression is not None:
            ranks = [item.rank for item in self.impression]
            if ranks != list(range(1, len(ranks) + 1)):
                raise ValueError(f"impression ranks must be 1..N consecutive, got {ranks}")

    def to_json(self) -> dict:
        out: dict = {
            "exam_type": self.exam_type,
            "history": self.history,
            "technique": self.technique,
            "comparison": self.comparison,
            "findings": None,
            "impression": None,
        }
        if self.findings is not None:
            out["findings"] = {cat.value: [b.text for b in obs] for cat, obs in self.findings.items()}
        if self.impression is not None:
            out["impression"] = [item.text for item in self.impression]
        return out

    @staticmethod
    def from_json(obj: dict) -> "StructuredReport":
        findings = None
        if obj.get("findings") is not None:
            findings = {}
            for header, bullets in obj["findings"].items():
                cat = _CATEGORY_BY_LOWER.get(header.lower())
                if cat is None:
                    raise ValueError(f"unknown anatomical header: {header!r}")
                findings[cat] = [Observation(t) for t in bullets]
        impression = None
        if obj.get("impression") is not None:
            impression = [ImpressionItem(i + 1, t) for i, t in enumerate(obj["impression"])]
        report = StructuredReport(
            exam_type=obj.get("exam_type"),
            history=obj.get("history"),
            technique=obj.get("technique"),
            comparison=obj.get("comparison"),
            findings=findings,
            impression=impression,
        )
        report.check_invariants()
        return report


_IMPRESSION_ITEM_RE = re.compile(r"^\s*(\d+)\.\s+(.*\S)\s*$")
# A short line ending in ':' with no trailing text is treated as an intended
# header; anything longer is prose (colons occur inside findings text).
_HEADER_LIKE_RE = re.compile(r"^\s*([A-Za-z][^:]{0,60}?)\s*:\s*$")
_BULLET_RE = re.compile(r"^\s*- (.*\S)\s*$")
_LENIENT_BULLET_RE = re.compile(r"^\s*(?:-|•|\*) ?(.*\S)\s*$")


def _match_section_header(line: str) -> Optional[tuple[SectionKind, str]]:
    """Recognize '<Section>: <rest>' at line start, case-insensitively."""
    stripped = line.strip()
    idx = stripped.find(":")
    if idx < 0:
        return None
    head = stripped[:idx].strip().lower()
    kind = _SECTION_BY_LOWER.get(head)
    if kind is None:
        return None
    return kind, stripped[idx + 1 :].strip()


def parse_report(
    text: str, mode: str = "strict"
) -> StructuredReport | tuple[Optional[StructuredReport], list[ParseIssue]]:
    """Parse structured-report text.

    strict: return the report, raising ReportParseError on any issue.
    lenient: return (best-effort report or None, issues).
    """
    if mode not in ("strict", "lenient"):
        raise ValueError(f"unknown parse mode: {mode!r}")
    lenient = mode == "lenient"

    issues: list[ParseIssue] = []
    if not text.strip():
        issues.append(ParseIssue(1, IssueCode.EMPTY_DOCUMENT, "input contains no content"))
        if lenient:
            return None, issues
        raise ReportParseError(issues)

    free_parts: dict[SectionKind, list[str]] = {}
    findings: Optional[dict[AnatomicCategory, list[Observation]]] = None
    impression_raw: Optional[list[tuple[int, str]]] = None  # (printed number, text)
    seen_sections: set[SectionKind] = set()

    section: Optional[SectionKind] = None
    category: Optional[AnatomicCategory] = None

    def add_issue(lineno: int, code: IssueCode, message: str) -> None:
        issues.append(ParseIssue(lineno, code, message))

    def append_free_text(kind: SectionKind, fragment: str) -> None:
        if fragment:
            free_parts.setdefault(kind, []).append(fragment)

    def enter_section(kind: SectionKind, lineno: int) -> None:
        nonlocal section, category, findings, impression_raw
        if kind in seen_sections:
            add_issue(lineno, IssueCode.DUPLICATE_SECTION, f"section {kind.value!r} appears again")
        seen_sections.add(kind)
        section = kind
        category = None
        if kind is SectionKind.FINDINGS and findings is None:
            findings = {}
        if kind is SectionKind.IMPRESSION and impression_raw is None:
            impression_raw = []

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.rstrip()
        if not line.strip():
            continue

        header = _match_section_header(line)
        if header is not None:
            kind, rest = header
            enter_section(kind, lineno)
            if kind is SectionKind.FINDINGS:
                if rest:
                    add_issue(
                        lineno,
                        IssueCode.BULLET_OUTSIDE_CATEGORY,
                        "text on the Findings header line is not under an anatomical header",
                    )
            elif kind is SectionKind.IMPRESSION:
                if rest:
                    m = _IMPRESSION_ITEM_RE.match(rest)
                    if m:
                        impression_raw.append((int(m.group(1)), m.group(2)))
                    else:
                        add_issue(
                            lineno,
                            IssueCode.NON_CONSECUTIVE_IMPRESSION_NUMBERS,
                            "impression text must be a numbered list",
                        )
                        if lenient:
                            impression_raw.append((len(impression_raw) + 1, rest))
            else:
                append_free_text(kind, rest)
            continue

        # A line that is exactly a section name signals a forgotten colon,
        # wherever it appears.
        bare_kind = _SECTION_BY_LOWER.get(line.strip().lower())
        if bare_kind is not None:
            add_issue(lineno, IssueCode.MISSING_COLON, f"section header {bare_kind.value!r} lacks a colon")
            if lenient:
                enter_section(bare_kind, lineno)
            continue

        if section is None:
            hdr = _HEADER_LIKE_RE.match(line)
            if hdr:
                add_issue(lineno, IssueCode.UNKNOWN_SECTION_HEADER, f"unknown section header {hdr.group(1)!r}")
            else:
                add_issue(lineno, IssueCode.UNKNOWN_SECTION_HEADER, "content before any section header")
            continue

        if section in FREE_TEXT_SECTIONS:
            append_free_text(section, line.strip())
            continue

        if section is SectionKind.FINDINGS:
            assert findings is not None
            stripped = line.strip()
            cat = _CATEGORY_BY_LOWER.get(stripped.rstrip(":").strip().lower()) if stripped.endswith(":") else None
            if cat is not None:
                if cat in findings:
                    add_issue(lineno, IssueCode.DUPLICATE_CATEGORY, f"category {cat.value!r} appears again")
                    category = cat
                else:
                    findings[cat] = []
                    category = cat
                continue
            hdr = _HEADER_LIKE_RE.match(line)
            if hdr:
                add_issue(lineno, IssueCode.UNKNOWN_ANATOMIC_HEADER, f"unknown anatomical header {hdr.group(1)!r}")
                category = None  # bullets under it are dropped
                continue
            bullet = _BULLET_RE.match(line)
            drifted = _LENIENT_BULLET_RE.match(line) if bullet is None else None
            if drifted is not None and not lenient:
                add_issue(lineno, IssueCode.BULLET_OUTSIDE_CATEGORY, "non-canonical bullet marker (use '- ')")
                continue
            bullet = bullet or drifted
            if bullet:
                if category is None:
                    add_issue(lineno, IssueCode.BULLET_OUTSIDE_CATEGORY, "bullet appears before any anatomical header")
                else:
                    findings[category].append(Observation(bullet.group(1).strip()))
                continue
            # Continuation of the previous bullet (wrapped lines).
            if category is not None and findings[category]:
                prev = findings[category][-1]
                findings[category][-1] = Observation(prev.text + " " + line.strip())
            else:
                add_issue(lineno, IssueCode.BULLET_OUTSIDE_CATEGORY, f"stray text in Findings: {line.strip()!r}")
            continue

        if section is SectionKind.IMPRESSION:
            assert impression_raw is not None
            m = _IMPRESSION_ITEM_RE.match(line)
            if m:
                impression_raw.append((int(m.group(1)), m.group(2)))
            elif impression_raw:
                num, prev = impression_raw[-1]
                impression_raw[-1] = (num, prev + " " + line.strip())
            else:
                add_issue(
                    lineno,
                    IssueCode.NON_CONSECUTIVE_IMPRESSION_NUMBERS,
                    f"impression item is not numbered: {line.strip()!r}",
                )
                if lenient:
                    impression_raw.append((1, line.strip()))
            continue

    impression: Optional[list[ImpressionItem]] = None
    if impression_raw is not None:
        numbers = [n for n, _ in impression_raw]
        if numbers != list(range(1, len(numbers) + 1)):
            add_issue(
                len(text.splitlines()),
                IssueCode.NON_CONSECUTIVE_IMPRESSION_NUMBERS,
                f"impression numbers are {numbers}, expected 1..{len(numbers)}",
            )
        # Ranks are renumbered 1..N in source order either way.
        impression = [ImpressionItem(i + 1, t) for i, (_, t) in enumerate(impression_raw)]

    report = StructuredReport(
        exam_type=" ".join(free_parts[SectionKind.EXAM_TYPE]) if SectionKind.EXAM_TYPE in free_parts else None,
        history=" ".join(free_parts[SectionKind.HISTORY]) if SectionKind.HISTORY in free_parts else None,
        technique=" ".join(free_parts[SectionKind.TECHNIQUE]) if SectionKind.TECHNIQUE in free_parts else None,
        comparison=" ".join(free_parts[SectionKind.COMPARISON]) if SectionKind.COMPARISON in free_parts else None,
        findings=findings,
        impression=impression,
    )
    if lenient:
        return report, issues
    if issues:
        raise ReportParseError(issues)
    report.check_invariants()
    return report


def render_report(report: StructuredReport) -> str:
    """Canonical plain-text serialization: fixed section order, categories in
    enum order, no blank lines. ``parse_report(render_report(r)) == r``."""
    report.check_invariants()
    lines: list[str] = []
    for kind in FREE_TEXT_SECTIONS:
        value = report.free_text(kind)
        if value is not None:
            lines.append(f"{kind.value}: {value}" if value else f"{kind.value}:")
    if report.findings is not None:
        lines.append("Findings:")
        for cat in CATEGORY_ORDER:
            if cat in report.findings:
                lines.append(f"{cat.value}:")
                lines.extend(f"- {obs.text}" for obs in report.findings[cat])
    if report.impression is not None:
        lines.append("Impression:")
        lines.extend(f"{item.rank}. {item.text}" for item in report.impression)
    return "\n".join(lines)


class ViolationKind(Enum):
    IDENTIFIER_LEAK = "IdentifierLeak"
    HISTORICAL_COMPARISON = "HistoricalComparison"
    IMPRESSION_NOT_NUMBERED = "ImpressionNotNumbered"
    NON_CANONICAL_HEADER = "NonCanonicalHeader"
    EMPTY_FINDINGS = "EmptyFindings"


@dataclass(frozen=True)
class Violation:
    kind: ViolationKind
    location: str  # e.g. "Findings/Pleura[0]" or "Impression[2]"
    message: str

    def to_json(self) -> dict:
        return {"kind": self.kind.value, "location": self.location, "message": self.message}


_DATE_RES = (
    re.compile(r"\b\d{1,2}/\d{1,2}/\d{2,4}\b"),
    re.compile(r"\b\d{4}-\d{2}-\d{2}\b"),
)

# Heuristic and advisory: catches the common leak shapes, not a de-identifier.
DEFAULT_IDENTIFIER_LEXICON = (
    "dr.",
    "m.d.",
    "hospital",
    "medical center",
    "university",
    "clinic",
)

DEFAULT_COMPARISON_LEXICON = (
    "compared to prior",
    "compared to previous",
    "compared with prior",
    "again seen",
    "unchanged from",
    "prior study",
    "previous study",
    "previous exam",
    "interval change",
    "as before",
    "redemonstrat",
)


def validate_desiderata(
    report: StructuredReport,
    identifier_lexicon: Iterable[str] = DEFAULT_IDENTIFIER_LEXICON,
    comparison_lexicon: Iterable[str] = DEFAULT_COMPARISON_LEXICON,
) -> list[Violation]:
    """Content checks beyond the grammar. Empty result means compliant."""
    violations: list[Violation] = []
    identifier_lexicon = [w.lower() for w in identifier_lexicon]
    comparison_lexicon = [w.lower() for w in comparison_lexicon]

    def scan_identifiers(text: str, location: str) -> None:
        for rx in _DATE_RES:
            m = rx.search(text)
            if m:
                violations.append(
                    Violation(ViolationKind.IDENTIFIER_LEAK, location, f"date-like token {m.group(0)!r}")
                )
        lowered = text.lower()
        for word in identifier_lexicon:
            if word in lowered:
                violations.append(
                    Violation(ViolationKind.IDENTIFIER_LEAK, location, f"identifier lexicon hit {word!r}")
                )

    def scan_comparisons(text: str, location: str) -> None:
        lowered = text.lower()
        for phrase in comparison_lexicon:
            if phrase in lowered:
                violations.append(
                    Violation(
                        ViolationKind.HISTORICAL_COMPARISON, location, f"historical-comparison phrase {phrase!r}"
                    )
                )

    for kind in FREE_TEXT_SECTIONS:
        value = report.free_text(kind)
        if value:
            scan_identifiers(value, kind.value)

    if report.findings is not None:
        if not report.findings:
            violations.append(
                Violation(ViolationKind.EMPTY_FINDINGS, "Findings", "Findings section has no anatomical categories")
            )
        for cat, bullets in report.findings.items():
            if not isinstance(cat, AnatomicCategory):  # re-check; parse guarantees this
                violations.append(
                    Violation(ViolationKind.NON_CANONICAL_HEADER, "Findings", f"non-canonical header {cat!r}")
                )
                continue
            for i, obs in enumerate(bullets):
                loc = f"Findings/{cat.value}[{i}]"
                scan_identifiers(obs.text, loc)
                scan_comparisons(obs.text, loc)

    if report.impression is not None:
        ranks = [item.rank for item in report.impression]
        if ranks != list(range(1, len(ranks) + 1)):
            violations.append(
                Violation(
                    ViolationKind.IMPRESSION_NOT_NUMBERED, "Impression", f"ranks {ranks} are not 1..{len(ranks)}"
                )
            )
        for item in report.impression:
            loc = f"Impression[{item.rank}]"
            scan_identifiers(item.text, loc)
            scan_comparisons(item.text, loc)

    return violations


def extract_utterances(report: StructuredReport, study_id: str = "") -> list[Utterance]:
    """One utterance per findings bullet (document order), then one per
    impression item (rank order)."""
    report.check_invariants()
    utterances: list[Utterance] = []
    if report.findings is not None:
        for cat, bullets in report.findings.items():
            for i, obs in enumerate(bullets):
                utterances.append(Utterance(obs.text, Origin("finding", cat, i), study_id))
    if report.impression is not None:
        for item in report.impression:
            utterances.append(Utterance(item.text, Origin("impression", index=item.rank), study_id))
    return utterances
