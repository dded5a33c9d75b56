import random

import pytest

from srrg.report import AnatomicCategory, ImpressionItem, Observation, StructuredReport
from srrg.taxonomy import GranularLabel, Status, load_taxonomy, make_label_set


@pytest.fixture(scope="session")
def taxonomy():
    return load_taxonomy()


PHRASES = [
    "No pneumothorax.",
    "Small left pleural effusion.",
    "Heart size is enlarged.",
    "Right basilar opacity concerning for pneumonia.",
    "Endotracheal tube tip above the carina.",
    "Degenerative changes of the spine.",
    "Clear lungs bilaterally.",
    "Blunting of the costophrenic angle.",
    "No free air under the diaphragm.",
    "Stable mediastinal contours.",
]

FREE_TEXTS = [
    "Chest X-ray PA and lateral",
    "Cough and fever",
    "Portable AP view of the chest",
    "Shortness of breath",
    "None",
]


def random_report(rng: random.Random) -> StructuredReport:
    """A random valid report: any subset of sections, 1..3 categories with
    1..3 bullets each, 0..4 impression items."""
    report = StructuredReport()
    if rng.random() < 0.7:
        report.exam_type = rng.choice(FREE_TEXTS)
    if rng.random() < 0.6:
        report.history = rng.choice(FREE_TEXTS)
    if rng.random() < 0.5:
        report.technique = rng.choice(FREE_TEXTS)
    if rng.random() < 0.4:
        report.comparison = rng.choice(FREE_TEXTS)
    if rng.random() < 0.9:
        categories = rng.sample(list(AnatomicCategory), k=rng.randint(1, 3))
        report.findings = {
            cat: [Observation(rng.choice(PHRASES)) for _ in range(rng.randint(1, 3))]
            for cat in sorted(categories, key=lambda c: c.value)
        }
    if rng.random() < 0.9:
        n = rng.randint(1, 4)
        report.impression = [ImpressionItem(i + 1, rng.choice(PHRASES)) for i in range(n)]
    if report.findings is None and report.impression is None:
        report.impression = [ImpressionItem(1, rng.choice(PHRASES))]
    return report


def report_corpus(seed: int, n: int) -> list[StructuredReport]:
    rng = random.Random(seed)
    return [random_report(rng) for _ in range(n)]


class DictLabeler:
    """Maps utterance text to a fixed LabelSet; unknown text gets No Finding.
    Deterministic, so identical reports always label identically."""

    def __init__(self, table: dict[str, frozenset], taxonomy):
        self.table = dict(table)
        self.fallback = make_label_set([GranularLabel("No Finding", Status.PRESENT)])

    def label(self, utterances):
        return [self.table.get(u.text, self.fallback) for u in utterances]


@pytest.fixture()
def dict_labeler(taxonomy):
    def build(table: dict[str, list[tuple[str, str]]]):
        converted = {
            text: make_label_set(GranularLabel(d, Status(s)) for d, s in labels)
            for text, labels in table.items()
        }
        return DictLabeler(converted, taxonomy)

    return build


def gl(disease: str, status: str = "Present") -> GranularLabel:
    return GranularLabel(disease, Status(status))


def ls(*pairs) -> frozenset:
    """ls(("Edema", "Present"), ...) -> LabelSet"""
    return make_label_set(gl(d, s) for d, s in pairs)
