"""Pluggable labelers and the consensus labeling pipeline.

A Labeler maps utterances to label sets, positionally. Implementations here:
a keyword baseline (a test oracle, not a clinical tool), a store of
precomputed predictions, and an LLM-backed labeler driven by the bundled
prompt templates with a record/replay client for deterministic runs.

Consensus keeps a disease iff at least two of the three voters emit it;
statuses of the agreeing voters are reconciled by precedence
(Present > Uncertain > Absent). Utterances left with no labels are discarded.
"""

from __future__ import annotations

import hashlib
import json
import logging
import re
import threading
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Optional, Protocol, Sequence

from .report import Origin, ParseIssue, StructuredReport, Utterance, Violation, parse_report, validate_desiderata
from .taxonomy import (
    NO_FINDING,
    GranularLabel,
    Status,
    Taxonomy,
    make_label_set,
    merge_statuses,
)


logger = logging.getLogger(__name__)


class Labeler(Protocol):
    def label(self, utterances: Sequence[Utterance]) -> list[frozenset]: ...


class LlmClient(Protocol):
    def complete(self, prompt: str) -> str: ...


class PromptError(ValueError):
    pass


class EmptyInput(PromptError):
    pass


class NewlineInUtterance(PromptError):
    pass


class ResponseParseError(ValueError):
    pass


class LineWithoutArrow(ResponseParseError):
    pass


class UnknownDisease(ResponseParseError):
    pass


class UnknownStatus(ResponseParseError):
    pass


class CountMismatch(ResponseParseError):
    pass


class WrongVoterCount(ValueError):
    pass


class EmptyLexicon(ValueError):
    pass


class UnknownUtterance(KeyError):
    pass


class SchemaViolation(ValueError):
    pass


def _template(name: str) -> str:
    return resources.files("srrg.data").joinpath(name).read_text("utf-8")


def build_structuring_prompt(free_text_report: str) -> str:
    """Instantiate the restructuring prompt with the raw report in the
    trailing placeholder block."""
    if not free_text_report.strip():
        raise EmptyInput("report text is empty")
    template = _template("structuring_prompt.txt")
    return template.replace("{}", free_text_report)


def build_disease_prompt(utterances: Sequence[str]) -> str:
    """Instantiate the disease prompt with one finding per line."""
    if not utterances:
        raise EmptyInput("no utterances")
    for u in utterances:
        if "\n" in u:
            raise NewlineInUtterance(f"utterance contains a newline: {u!r}")
        if not u.strip():
            raise EmptyInput("blank utterance")
    template = _template("disease_prompt.txt")
    return template.replace("{}", "\n".join(utterances))


# Answer entries look like "1. Edema (Uncertain)"; the numbering is split off
# first, then the optional trailing status.
_ENTRY_SPLIT_RE = re.compile(r"\s*\d+\.\s+")
_STATUS_RE = re.compile(r"^(?P<disease>.+?)\s*\((?P<status>[A-Za-z]+)\)\s*$")

_WS_RE = re.compile(r"\s+")


def _normalize(text: str) -> str:
    return _WS_RE.sub(" ", text).strip().lower()


def parse_disease_response(
    text: str, expected: Sequence[Utterance], taxonomy: Taxonomy
) -> list[frozenset]:
    """Parse an answer in the '<finding> => 1. <disease> (<Status>) ...'
    grammar into one LabelSet per expected utterance.

    Lines match expected utterances by order; the echoed finding text is
    prefix-checked as a sanity net but order wins. A bare 'No Finding' entry
    gets status Present.
    """
    lines = [line for line in text.splitlines() if line.strip()]
    if len(lines) != len(expected):
        raise CountMismatch(f"{len(lines)} answer lines for {len(expected)} utterances")
    results: list[frozenset] = []
    for line, utt in zip(lines, expected):
        if "=>" not in line:
            raise LineWithoutArrow(f"no '=>' separator in {line!r}")
        finding_text, answer = line.split("=>", 1)
        echoed, wanted = _normalize(finding_text), _normalize(utt.text)
        if echoed and wanted and not (wanted.startswith(echoed) or echoed.startswith(wanted)):
            # Order is the key; a mismatched echo is tolerated but logged.
            logger.warning("echoed finding %r does not match expected %r", finding_text.strip(), utt.text)
        entries = [e.strip() for e in _ENTRY_SPLIT_RE.split(answer) if e.strip()]
        labels: list[GranularLabel] = []
        for entry in entries:
            m = _STATUS_RE.match(entry)
            if m:
                disease = m.group("disease").strip()
                status_text = m.group("status").strip().capitalize()
                try:
                    status = Status(status_text)
                except ValueError:
                    raise UnknownStatus(f"status {m.group('status')!r} in {entry!r}") from None
            else:
                disease = entry
                if disease != NO_FINDING:
                    raise UnknownStatus(f"entry {entry!r} carries no status")
                status = Status.PRESENT
            if disease not in taxonomy:
                raise UnknownDisease(f"disease {disease!r} is not in the taxonomy")
            labels.append(GranularLabel(disease, status))
        results.append(make_label_set(labels))
    return results


def render_disease_response(utterances: Sequence[Utterance], label_sets: Sequence[frozenset]) -> str:
    """Inverse of parse_disease_response on the answer grammar."""
    lines = []
    for utt, labels in zip(utterances, label_sets):
        ordered = sorted(labels, key=lambda l: l.disease)
        parts = []
        for i, lab in enumerate(ordered, start=1):
            if lab.disease == NO_FINDING:
                parts.append(f"{i}. {lab.disease}")
            else:
                parts.append(f"{i}. {lab.render()}")
        lines.append(f"{utt.text} => " + " ".join(parts))
    return "\n".join(lines)


def consensus(votes: Sequence[frozenset]) -> frozenset:
    """2-of-3 vote on diseases; statuses merged by precedence over the
    votes that contain the kept disease."""
    if len(votes) != 3:
        raise WrongVoterCount(f"consensus needs exactly 3 votes, got {len(votes)}")
    status_by_disease: dict[str, Status] = {}
    supporters: dict[str, int] = {}
    for vote in votes:
        for lab in vote:
            supporters[lab.disease] = supporters.get(lab.disease, 0) + 1
            if lab.disease in status_by_disease:
                status_by_disease[lab.disease] = merge_statuses(status_by_disease[lab.disease], lab.status)
            else:
                status_by_disease[lab.disease] = lab.status
    return make_label_set(
        GranularLabel(d, status_by_disease[d]) for d, n in supporters.items() if n >= 2
    )


def discard_unlabeled(records: Sequence[tuple[Utterance, frozenset]]) -> list[tuple[Utterance, frozenset]]:
    return [(utt, labels) for utt, labels in records if labels]


_NEGATION_RE = re.compile(r"\b(no|without|absent)\b")
_HEDGE_RE = re.compile(r"\b(may|might|possible|possibly|likely|probable|cannot exclude)\b")


class KeywordLabeler:
    """Phrase-lookup labeler with negation/hedge cues. A deterministic
    stand-in for a trained classifier; useful for tests and dry runs only."""

    def __init__(self, lexicon: dict[str, GranularLabel]):
        if not lexicon:
            raise EmptyLexicon("keyword labeler needs a non-empty lexicon")
        for phrase in lexicon:
            if not phrase or phrase != phrase.lower():
                raise ValueError(f"lexicon phrases must be lowercase and non-empty: {phrase!r}")
        self.lexicon = dict(lexicon)

    def label(self, utterances: Sequence[Utterance]) -> list[frozenset]:
        out = []
        for utt in utterances:
            lowered = utt.text.lower()
            labels = []
            for phrase, base in self.lexicon.items():
                if phrase in lowered:
                    status = base.status
                    if _HEDGE_RE.search(lowered):
                        status = Status.UNCERTAIN
                    elif _NEGATION_RE.search(lowered):
                        status = Status.ABSENT
                    labels.append(GranularLabel(base.disease, status))
            if not labels:
                labels = [GranularLabel(NO_FINDING, Status.PRESENT)]
            out.append(make_label_set(labels))
        return out


def keyword_labeler(lexicon: dict[str, GranularLabel]) -> KeywordLabeler:
    return KeywordLabeler(lexicon)


def load_keyword_lexicon(path: Path | str, taxonomy: Taxonomy) -> dict[str, GranularLabel]:
    """Lexicon JSON: {"phrase": "Disease"} or {"phrase": {"disease", "status"}}."""
    raw = json.loads(Path(path).read_text("utf-8"))
    lexicon: dict[str, GranularLabel] = {}
    for phrase, value in raw.items():
        if isinstance(value, str):
            label = GranularLabel(value, Status.PRESENT)
        else:
            label = GranularLabel(value["disease"], Status(value.get("status", "Present")))
        if label.disease not in taxonomy:
            raise SchemaViolation(f"lexicon disease {label.disease!r} is not in the taxonomy")
        lexicon[phrase] = label
    return lexicon


class PredictionsLabeler:
    """Serves label sets recorded in a prediction file, keyed by utterance."""

    def __init__(self, table: dict[str, frozenset]):
        self.table = dict(table)

    def label(self, utterances: Sequence[Utterance]) -> list[frozenset]:
        out = []
        for utt in utterances:
            key = utt.key()
            if key not in self.table:
                raise UnknownUtterance(key)
            out.append(self.table[key])
        return out


def load_predictions(
    path: Path | str, taxonomy: Taxonomy, known_keys: Optional[set[str]] = None
) -> PredictionsLabeler:
    """Load a JSONL prediction file. Rows:
    {"study_id", "origin": {"kind", "category"?, "index"}, "labels": [{"disease", "status"}]}
    """
    table: dict[str, frozenset] = {}
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                row = json.loads(line)
                origin = Origin.from_json(row["origin"])
                key = f"{row['study_id']}:{origin.key()}"
                labels = []
                for lab in row["labels"]:
                    if lab["disease"] not in taxonomy:
                        raise SchemaViolation(f"line {lineno}: disease {lab['disease']!r} not in taxonomy")
                    labels.append(GranularLabel(lab["disease"], Status(lab["status"])))
            except SchemaViolation:
                raise
            except (KeyError, ValueError, TypeError) as exc:
                raise SchemaViolation(f"line {lineno}: malformed prediction row: {exc}") from exc
            if known_keys is not None and key not in known_keys:
                raise UnknownUtterance(f"line {lineno}: {key} is not in the corpus")
            table[key] = make_label_set(labels)
    return PredictionsLabeler(table)


def prediction_row(utterance: Utterance, labels: frozenset) -> dict:
    return {
        "study_id": utterance.study_id,
        "origin": utterance.origin.to_json(),
        "labels": [lab.to_json() for lab in sorted(labels, key=lambda l: l.disease)],
    }


def prompt_hash(prompt: str) -> str:
    return hashlib.sha256(prompt.encode("utf-8")).hexdigest()


class ReplayClient:
    """Replays recorded completions: JSONL rows {"prompt_hash", "response"},
    served FIFO per prompt so repeated identical prompts (consensus voting)
    get successive recorded answers."""

    def __init__(self, session_path: Path | str):
        self._queues: dict[str, list[str]] = {}
        self._lock = threading.Lock()
        with open(session_path, encoding="utf-8") as f:
            for line in f:
                if line.strip():
                    row = json.loads(line)
                    self._queues.setdefault(row["prompt_hash"], []).append(row["response"])

    def complete(self, prompt: str) -> str:
        key = prompt_hash(prompt)
        with self._lock:
            queue = self._queues.get(key)
            if not queue:
                raise KeyError(f"no recorded response for prompt hash {key[:12]}")
            return queue.pop(0)


class RecordingClient:
    """Wraps a live client, appending each exchange to a session file that
    ReplayClient can serve later."""

    def __init__(self, inner: LlmClient, session_path: Path | str):
        self.inner = inner
        self.path = Path(session_path)
        self._lock = threading.Lock()

    def complete(self, prompt: str) -> str:
        response = self.inner.complete(prompt)
        row = json.dumps({"prompt_hash": prompt_hash(prompt), "response": response}, sort_keys=True)
        with self._lock, open(self.path, "a", encoding="utf-8") as f:
            f.write(row + "\n")
        return response


class LlmLabeler:
    """Labels utterances through the disease prompt and one completion."""

    def __init__(self, client: LlmClient, taxonomy: Taxonomy, batch_size: int = 20):
        self.client = client
        self.taxonomy = taxonomy
        self.batch_size = batch_size

    def label(self, utterances: Sequence[Utterance]) -> list[frozenset]:
        out: list[frozenset] = []
        for start in range(0, len(utterances), self.batch_size):
            batch = utterances[start : start + self.batch_size]
            prompt = build_disease_prompt([u.text for u in batch])
            response = self.client.complete(prompt)
            out.extend(parse_disease_response(response, batch, self.taxonomy))
        return out


class ConsensusLabeler:
    """Runs three voters per utterance batch and applies the 2-of-3 vote.
    Voters are labelers themselves (e.g. three LlmLabelers over different
    recorded sessions, or the same client queried three times)."""

    def __init__(self, voters: Sequence[Labeler]):
        if len(voters) != 3:
            raise WrongVoterCount(f"consensus labeling needs exactly 3 voters, got {len(voters)}")
        self.voters = list(voters)

    def label(self, utterances: Sequence[Utterance]) -> list[frozenset]:
        per_voter = [voter.label(utterances) for voter in self.voters]
        return [consensus([per_voter[0][i], per_voter[1][i], per_voter[2][i]]) for i in range(len(utterances))]


@dataclass
class RestructureResult:
    report: Optional[StructuredReport]
    issues: list[ParseIssue]
    violations: list[Violation]

    @property
    def clean(self) -> bool:
        return self.report is not None and not self.issues and not self.violations


def restructure(free_text_report: str, client: LlmClient, max_retries: int = 1) -> RestructureResult:
    """Restructuring loop: prompt, complete, lenient-parse, validate; on any
    issue or violation, retry once with the problem list appended. Returns
    the best attempt (fewest problems)."""
    prompt = build_structuring_prompt(free_text_report)
    best: Optional[RestructureResult] = None
    for _ in range(max_retries + 1):
        response = client.complete(prompt)
        report, issues = parse_report(response, mode="lenient")
        violations = validate_desiderata(report) if report is not None else []
        attempt = RestructureResult(report, issues, violations)
        if best is None or len(attempt.issues) + len(attempt.violations) < len(best.issues) + len(best.violations):
            best = attempt
        if attempt.clean:
            break
        problems = [f"- line {i.line}: {i.code.value}: {i.message}" for i in issues]
        problems += [f"- {v.location}: {v.kind.value}: {v.message}" for v in violations]
        prompt = build_structuring_prompt(free_text_report) + (
            "\n\nYour previous answer had formatting problems; fix them and answer again:\n" + "\n".join(problems)
        )
    assert best is not None
    return best
