"""Corpus persistence: studies, utterances, labels, and review records.

Single-directory layout of append-friendly JSON-lines files plus a compacted
index. Every accepted write is appended and fsynced before the call returns,
so an acknowledged review survives a crash; a torn trailing line (killed mid
append) is an unacknowledged write and is dropped on load.

Many readers, one logical writer: mutations serialize on a single lock.
"""

from __future__ import annotations

import csv
import json
import os
import threading
import time
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Optional

from .report import IssueCode, StructuredReport, Utterance, extract_utterances, parse_report
from .taxonomy import label_set_from_json, label_set_to_json


class StoreError(ValueError):
    pass


class UnknownStudy(KeyError):
    pass


class VersionConflict(StoreError):
    def __init__(self, study_id: str, expected: int, current: int):
        super().__init__(f"study {study_id}: expected version {expected}, current is {current}")
        self.expected = expected
        self.current = current


class UnparsableEdit(StoreError):
    pass


class Split(Enum):
    TRAIN = "train"
    VALIDATE = "validate"
    TEST = "test"
    TEST_REVIEWED = "test_reviewed"


class Provenance(Enum):
    CONSENSUS = "consensus"
    REVIEWED = "reviewed"
    BASELINE = "baseline"
    EXTERNAL = "external"


@dataclass
class Study:
    study_id: str
    source: str = ""
    original_text: str = ""
    structured_text: Optional[str] = None
    split: Optional[Split] = None

    def structured(self) -> Optional[StructuredReport]:
        if self.structured_text is None:
            return None
        report, _ = parse_report(self.structured_text, mode="lenient")
        return report

    def to_json(self) -> dict:
        return {
            "study_id": self.study_id,
            "source": self.source,
            "original_text": self.original_text,
            "structured_text": self.structured_text,
            "split": self.split.value if self.split else None,
        }

    @staticmethod
    def from_json(obj: dict) -> "Study":
        if not obj.get("study_id"):
            raise StoreError("study row lacks study_id")
        split = obj.get("split")
        return Study(
            study_id=obj["study_id"],
            source=obj.get("source", ""),
            original_text=obj.get("original_text", ""),
            structured_text=obj.get("structured_text"),
            split=Split(split) if split else None,
        )


@dataclass
class UtteranceRecord:
    key: str
    study_id: str
    origin: dict
    text: str
    labels: Optional[frozenset] = None
    provenance: Optional[Provenance] = None

    def to_json(self) -> dict:
        return {
            "key": self.key,
            "study_id": self.study_id,
            "origin": self.origin,
            "text": self.text,
            "labels": label_set_to_json(self.labels) if self.labels is not None else None,
            "provenance": self.provenance.value if self.provenance else None,
        }

    @staticmethod
    def from_json(obj: dict) -> "UtteranceRecord":
        return UtteranceRecord(
            key=obj["key"],
            study_id=obj["study_id"],
            origin=obj["origin"],
            text=obj["text"],
            labels=label_set_from_json(obj["labels"]) if obj.get("labels") is not None else None,
            provenance=Provenance(obj["provenance"]) if obj.get("provenance") else None,
        )


@dataclass
class ReviewRecord:
    study_id: str
    reviewer: str
    edited_text: str
    label_corrections: list = field(default_factory=list)  # [(utterance key, LabelSet)]
    version: int = 0
    updated_at: float = 0.0

    def to_json(self) -> dict:
        return {
            "study_id": self.study_id,
            "reviewer": self.reviewer,
            "edited_text": self.edited_text,
            "label_corrections": [[key, label_set_to_json(labels)] for key, labels in self.label_corrections],
            "version": self.version,
            "updated_at": self.updated_at,
        }

    @staticmethod
    def from_json(obj: dict) -> "ReviewRecord":
        return ReviewRecord(
            study_id=obj["study_id"],
            reviewer=obj["reviewer"],
            edited_text=obj["edited_text"],
            label_corrections=[(key, label_set_from_json(rows)) for key, rows in obj.get("label_corrections", [])],
            version=int(obj["version"]),
            updated_at=float(obj.get("updated_at", 0.0)),
        )


@dataclass
class ImportReport:
    imported: int  # distinct study ids upserted by this call
    errors: list[tuple[int, str]] = field(default_factory=list)  # (line number, reason)


# Issues that mean lenient parsing would silently drop reviewer content; an
# edit producing one of these is rejected rather than stored lossily.
BLOCKING_ISSUES = frozenset(
    {IssueCode.EMPTY_DOCUMENT, IssueCode.UNKNOWN_SECTION_HEADER, IssueCode.UNKNOWN_ANATOMIC_HEADER}
)


def blocking_issues(text: str):
    """Parse issues that make an edit unsafe to store."""
    _, issues = parse_report(text, mode="lenient")
    return [i for i in issues if i.code in BLOCKING_ISSUES]


class CorpusStore:
    STUDIES = "studies.jsonl"
    UTTERANCES = "utterances.jsonl"
    REVIEWS = "reviews.jsonl"
    INDEX = "index.json"

    def __init__(self, directory: Path | str):
        self.dir = Path(directory)
        self.dir.mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()
        self.studies: dict[str, Study] = {}
        self.utterances: dict[str, UtteranceRecord] = {}
        self.reviews: dict[str, list[ReviewRecord]] = {}
        self._load()

    # -- loading ---------------------------------------------------------

    def _replay(self, name: str, apply) -> None:
        path = self.dir / name
        if not path.exists():
            return
        lines = path.read_bytes().split(b"\n")
        last_real = len(lines) - (2 if lines and not lines[-1].strip() else 1)
        for i, raw in enumerate(lines):
            if not raw.strip():
                continue
            try:
                obj = json.loads(raw.decode("utf-8"))
            except (json.JSONDecodeError, UnicodeDecodeError):
                if i >= last_real:
                    continue  # torn tail from a crash mid-append; never acknowledged
                raise StoreError(f"{name}:{i + 1}: corrupt row") from None
            try:
                apply(obj)
            except (KeyError, ValueError, TypeError) as exc:
                raise StoreError(f"{name}:{i + 1}: bad row: {exc}") from exc

    def _load(self) -> None:
        self._replay(self.STUDIES, lambda obj: self.studies.__setitem__(obj["study_id"], Study.from_json(obj)))
        self._replay(
            self.UTTERANCES,
            lambda obj: self.utterances.__setitem__(obj["key"], UtteranceRecord.from_json(obj)),
        )

        def apply_review(obj: dict) -> None:
            rec = ReviewRecord.from_json(obj)
            self.reviews.setdefault(rec.study_id, []).append(rec)

        self._replay(self.REVIEWS, apply_review)

    # -- writing ---------------------------------------------------------

    def _append(self, name: str, obj: dict) -> None:
        line = json.dumps(obj, sort_keys=True, ensure_ascii=False)
        with open(self.dir / name, "a", encoding="utf-8") as f:
            f.write(line + "\n")
            f.flush()
            os.fsync(f.fileno())

    def upsert_study(self, study: Study) -> None:
        with self._lock:
            self.studies[study.study_id] = study
            self._append(self.STUDIES, study.to_json())

    def upsert_utterance(self, record: UtteranceRecord) -> None:
        with self._lock:
            self.utterances[record.key] = record
            self._append(self.UTTERANCES, record.to_json())

    def import_studies(self, path: Path | str, format: str = "jsonl") -> ImportReport:
        """Upsert studies from a JSONL or CSV file. Bad rows are collected
        with their line numbers; good rows still import."""
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(path)
        report = ImportReport(0)
        imported_ids: set[str] = set()
        if format == "jsonl":
            with open(path, encoding="utf-8") as f:
                rows = [(i, line) for i, line in enumerate(f, start=1) if line.strip()]
            for lineno, line in rows:
                try:
                    study = Study.from_json(json.loads(line))
                    self.upsert_study(study)
                    imported_ids.add(study.study_id)
                except (json.JSONDecodeError, StoreError, ValueError, KeyError) as exc:
                    report.errors.append((lineno, str(exc)))
        elif format == "csv":
            with open(path, encoding="utf-8", newline="") as f:
                for lineno, row in enumerate(csv.DictReader(f), start=2):
                    try:
                        study = Study.from_json({k: v for k, v in row.items() if v != ""})
                        self.upsert_study(study)
                        imported_ids.add(study.study_id)
                    except (StoreError, ValueError, KeyError) as exc:
                        report.errors.append((lineno, str(exc)))
        else:
            raise ValueError(f"unknown import format {format!r}")
        report.imported = len(imported_ids)
        return report

    def assign_splits(self, manifest: dict[str, Split]) -> None:
        unknown = [sid for sid in manifest if sid not in self.studies]
        if unknown:
            raise UnknownStudy(f"unknown study ids in split manifest: {sorted(unknown)[:5]}")
        for sid, split in manifest.items():
            study = self.studies[sid]
            study.split = split if isinstance(split, Split) else Split(split)
            self.upsert_study(study)

    def index_utterances(self) -> int:
        """(Re)build utterance records for every structured study."""
        count = 0
        for study in self.studies.values():
            report = study.structured()
            if report is None:
                continue
            for utt in extract_utterances(report, study.study_id):
                existing = self.utterances.get(utt.key())
                record = UtteranceRecord(
                    key=utt.key(),
                    study_id=study.study_id,
                    origin=utt.origin.to_json(),
                    text=utt.text,
                    labels=existing.labels if existing else None,
                    provenance=existing.provenance if existing else None,
                )
                self.upsert_utterance(record)
                count += 1
        return count

    def current_version(self, study_id: str) -> int:
        records = self.reviews.get(study_id)
        return records[-1].version if records else 0

    def save_review(self, record: ReviewRecord, expected_version: int) -> int:
        """Optimistic-concurrency review write; returns the new version."""
        if record.study_id not in self.studies:
            raise UnknownStudy(record.study_id)
        blockers = blocking_issues(record.edited_text)
        if blockers:
            raise UnparsableEdit(
                "; ".join(f"line {i.line}: {i.code.value}: {i.message}" for i in blockers)
            )
        with self._lock:
            current = self.reviews.get(record.study_id, [])
            current_version = current[-1].version if current else 0
            if expected_version != current_version:
                raise VersionConflict(record.study_id, expected_version, current_version)
            record.version = current_version + 1
            record.updated_at = time.time()
            self._append(self.REVIEWS, record.to_json())
            self.reviews.setdefault(record.study_id, []).append(record)
            return record.version

    def latest_review(self, study_id: str) -> Optional[ReviewRecord]:
        records = self.reviews.get(study_id)
        return records[-1] if records else None

    # -- maintenance -----------------------------------------------------

    def split_counts(self) -> dict[str, int]:
        counts: dict[str, int] = {}
        for study in self.studies.values():
            key = study.split.value if study.split else "unassigned"
            counts[key] = counts.get(key, 0) + 1
        return counts

    def compact(self) -> None:
        """Rewrite the logs with one row per live record and refresh the index."""
        with self._lock:
            self._rewrite(self.STUDIES, [s.to_json() for s in self.studies.values()])
            self._rewrite(self.UTTERANCES, [u.to_json() for u in self.utterances.values()])
            self._rewrite(
                self.REVIEWS, [r.to_json() for records in self.reviews.values() for r in records]
            )
            index = {
                "studies": len(self.studies),
                "utterances": len(self.utterances),
                "splits": self.split_counts(),
                "review_versions": {sid: records[-1].version for sid, records in self.reviews.items()},
            }
            tmp = self.dir / (self.INDEX + ".tmp")
            tmp.write_text(json.dumps(index, sort_keys=True, indent=2) + "\n", encoding="utf-8")
            tmp.replace(self.dir / self.INDEX)

    def _rewrite(self, name: str, rows: list[dict]) -> None:
        tmp = self.dir / (name + ".tmp")
        with open(tmp, "w", encoding="utf-8") as f:
            for row in rows:
                f.write(json.dumps(row, sort_keys=True, ensure_ascii=False) + "\n")
            f.flush()
            os.fsync(f.fileno())
        tmp.replace(self.dir / name)

    def export_studies(self, path: Path | str) -> int:
        """Write all studies as JSONL, sorted by id (stable for byte compares)."""
        count = 0
        with open(path, "w", encoding="utf-8") as f:
            for sid in sorted(self.studies):
                f.write(json.dumps(self.studies[sid].to_json(), sort_keys=True, ensure_ascii=False) + "\n")
                count += 1
        return count
