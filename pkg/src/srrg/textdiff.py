"""Word-level diff statistics and reader-review aggregates.

Matching uses the recursive longest-matching-block (gestalt) scheme with no
junk heuristic, over whitespace tokens with punctuation kept attached. A
replacement spanning a tokens on one side and b on the other counts as
max(a, b) replaced tokens; the similarity ratio is
2 * matches / (len(original) + len(edited)).
"""

from __future__ import annotations

from dataclasses import dataclass
from difflib import SequenceMatcher
from enum import Enum
from typing import Iterable, Sequence


def tokenize(text: str) -> list[str]:
    """Split on Unicode whitespace; case preserved, punctuation attached."""
    return text.split()


class OpKind(Enum):
    EQUAL = "equal"
    INSERT = "insert"
    DELETE = "delete"
    REPLACE = "replace"


@dataclass(frozen=True)
class Opcode:
    kind: OpKind
    a_lo: int
    a_hi: int
    b_lo: int
    b_hi: int


def matching_blocks(a: Sequence[str], b: Sequence[str]) -> list[tuple[int, int, int]]:
    """Non-overlapping matching blocks (a_pos, b_pos, length), in order,
    terminated by the (len(a), len(b), 0) sentinel.

    The longest block is found first (ties: earliest a, then earliest b),
    then the regions left and right of it are matched recursively.
    """
    sm = SequenceMatcher(None, list(a), list(b), autojunk=False)
    return [(m.a, m.b, m.size) for m in sm.get_matching_blocks()]


def opcodes(a: Sequence[str], b: Sequence[str]) -> list[Opcode]:
    """Edit operations tiling both sequences, derived from matching_blocks."""
    ops: list[Opcode] = []
    ai = bi = 0
    for a_pos, b_pos, size in matching_blocks(a, b):
        if ai < a_pos and bi < b_pos:
            ops.append(Opcode(OpKind.REPLACE, ai, a_pos, bi, b_pos))
        elif ai < a_pos:
            ops.append(Opcode(OpKind.DELETE, ai, a_pos, bi, b_pos))
        elif bi < b_pos:
            ops.append(Opcode(OpKind.INSERT, ai, a_pos, bi, b_pos))
        if size:
            ops.append(Opcode(OpKind.EQUAL, a_pos, a_pos + size, b_pos, b_pos + size))
        ai, bi = a_pos + size, b_pos + size
    return ops


@dataclass(frozen=True)
class DiffStats:
    insertions: int
    deletions: int
    replacements: int
    matches: int
    similarity_ratio: float

    @property
    def changed(self) -> bool:
        return bool(self.insertions or self.deletions or self.replacements) or self.similarity_ratio < 1.0

    def to_json(self) -> dict:
        return {
            "insertions": self.insertions,
            "deletions": self.deletions,
            "replacements": self.replacements,
            "similarity_ratio": round(self.similarity_ratio, 4),
        }


def diff_stats(original: str, edited: str) -> DiffStats:
    a, b = tokenize(original), tokenize(edited)
    ins = dele = rep = eq = 0
    for op in opcodes(a, b):
        a_len, b_len = op.a_hi - op.a_lo, op.b_hi - op.b_lo
        if op.kind is OpKind.INSERT:
            ins += b_len
        elif op.kind is OpKind.DELETE:
            dele += a_len
        elif op.kind is OpKind.REPLACE:
            rep += max(a_len, b_len)
        else:
            eq += a_len
    total = len(a) + len(b)
    ratio = 2.0 * eq / total if total else 1.0
    return DiffStats(ins, dele, rep, eq, ratio)


def jaccard(a: Iterable, b: Iterable) -> float:
    """|a n b| / |a u b|; two empty sets agree perfectly (1.0)."""
    sa, sb = set(a), set(b)
    if not sa and not sb:
        return 1.0
    return len(sa & sb) / len(sa | sb)


@dataclass(frozen=True)
class LabelConsistency:
    exact_match_rate: float
    mean_jaccard: float
    n: int

    def to_json(self) -> dict:
        return {
            "total_pairs": self.n,
            "exact_match_rate": round(self.exact_match_rate, 4),
            "mean_jaccard": round(self.mean_jaccard, 4),
        }


def label_consistency(pairs: Sequence[tuple], compare_status: bool = True) -> LabelConsistency:
    """Agreement between two label sets per utterance: exact-equality rate and
    mean Jaccard overlap. With compare_status=False only disease names count."""
    if not pairs:
        raise ValueError("label_consistency needs at least one pair")
    exact = 0
    jacc_sum = 0.0
    for left, right in pairs:
        if not compare_status:
            left = {lab.disease for lab in left}
            right = {lab.disease for lab in right}
        else:
            left, right = set(left), set(right)
        if left == right:
            exact += 1
        jacc_sum += jaccard(left, right)
    n = len(pairs)
    return LabelConsistency(exact / n, jacc_sum / n, n)


@dataclass(frozen=True)
class ReviewSummary:
    total: int
    changed: int
    percent_changed: float
    mean_insertions: float
    mean_deletions: float
    mean_replacements: float
    mean_similarity_ratio: float

    def to_json(self) -> dict:
        return {
            "total_studies": self.total,
            "studies_changed": self.changed,
            "percent_changed": round(self.percent_changed, 2),
            "mean_insertions": round(self.mean_insertions, 2),
            "mean_deletions": round(self.mean_deletions, 2),
            "mean_replacements": round(self.mean_replacements, 2),
            "mean_similarity_ratio": round(self.mean_similarity_ratio, 2),
        }

    def format_block(self) -> str:
        return "\n".join(
            [
                f"Total studies reviewed: {self.total}",
                f"Studies with changes: {self.changed} ({self.percent_changed:.2f}%)",
                f"Average insertions per study: {self.mean_insertions:.2f}",
                f"Average deletions per study: {self.mean_deletions:.2f}",
                f"Average replacements per study: {self.mean_replacements:.2f}",
                f"Average similarity ratio: {self.mean_similarity_ratio:.2f}",
            ]
        )


def review_summary(records: Sequence[tuple[str, str]]) -> ReviewSummary:
    """Aggregate per-pair diff stats over (original, edited) text pairs.
    Edit-count means run over ALL studies, changed or not."""
    if not records:
        raise ValueError("review_summary needs at least one record")
    stats = [diff_stats(orig, edited) for orig, edited in records]
    total = len(stats)
    changed = sum(1 for s in stats if s.changed)
    return ReviewSummary(
        total=total,
        changed=changed,
        percent_changed=100.0 * changed / total,
        mean_insertions=sum(s.insertions for s in stats) / total,
        mean_deletions=sum(s.deletions for s in stats) / total,
        mean_replacements=sum(s.replacements for s in stats) / total,
        mean_similarity_ratio=sum(s.similarity_ratio for s in stats) / total,
    )
