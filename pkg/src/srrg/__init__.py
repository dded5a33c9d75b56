"""Toolkit for structured chest X-ray reporting: report grammar and parsing,
the hierarchical disease taxonomy, consensus labeling, evaluation metrics,
reader-study diff statistics, and the review service."""

from .report import (
    AnatomicCategory,
    ImpressionItem,
    Observation,
    Origin,
    ParseIssue,
    ReportParseError,
    SectionKind,
    StructuredReport,
    Utterance,
    Violation,
    extract_utterances,
    parse_report,
    render_report,
    validate_desiderata,
)
from .taxonomy import (
    ChexbertMapping,
    GranularLabel,
    LabelSpace,
    Status,
    Taxonomy,
    load_taxonomy,
    make_label_set,
    map_to_chexbert,
    project,
)
from .labeling import (
    ConsensusLabeler,
    KeywordLabeler,
    LlmLabeler,
    PredictionsLabeler,
    ReplayClient,
    RecordingClient,
    build_disease_prompt,
    build_structuring_prompt,
    consensus,
    discard_unlabeled,
    keyword_labeler,
    load_predictions,
    parse_disease_response,
    restructure,
    RestructureResult,
)
from .metrics import (
    AlignmentMode,
    AverageMode,
    ScoreReport,
    bleu,
    category_f1,
    corpus_bleu,
    f1_srr,
    merge_external_scores,
    multilabel_prf,
    per_organ_breakdown,
    rouge_l,
)
from .textdiff import (
    DiffStats,
    diff_stats,
    jaccard,
    label_consistency,
    matching_blocks,
    review_summary,
    tokenize,
)
from .store import CorpusStore, ReviewRecord, Split, Study, UtteranceRecord

__version__ = "0.1.0"
