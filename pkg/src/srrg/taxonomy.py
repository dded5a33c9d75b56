"""Disease taxonomy: tree loading, leaf/upper views, statuses, projections.

The bundled tree (``data/taxonomy.json``) is a forest of 8 rooted trees.
Terminal nodes are the "leaf" label space; the parent of a leaf is its
"upper" label (a root leaf is its own upper). Every disease mention carries a
status: Present, Absent, or Uncertain.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from importlib import resources
from pathlib import Path
from typing import Iterable, Optional, Union


class TaxonomyError(ValueError):
    pass


class DuplicateName(TaxonomyError):
    pass


class CycleDetected(TaxonomyError):
    pass


class EmptyTree(TaxonomyError):
    pass


class UnknownLabel(KeyError):
    pass


class NotALeaf(ValueError):
    pass


class Status(Enum):
    PRESENT = "Present"
    ABSENT = "Absent"
    UNCERTAIN = "Uncertain"


# Merge precedence: a Present sibling must survive an Absent one.
_STATUS_RANK = {Status.ABSENT: 0, Status.UNCERTAIN: 1, Status.PRESENT: 2}


def merge_statuses(a: Status, b: Status) -> Status:
    return a if _STATUS_RANK[a] >= _STATUS_RANK[b] else b


NO_FINDING = "No Finding"


@dataclass(frozen=True)
class GranularLabel:
    disease: str
    status: Status

    def render(self) -> str:
        return f"{self.disease} ({self.status.value})"

    def to_json(self) -> dict:
        return {"disease": self.disease, "status": self.status.value}

    @staticmethod
    def from_json(obj: dict) -> "GranularLabel":
        return GranularLabel(obj["disease"], Status(obj["status"]))


LabelSet = frozenset  # frozenset[GranularLabel]


def make_label_set(labels: Iterable[GranularLabel]) -> LabelSet:
    """Build a LabelSet, merging duplicate diseases by status precedence so at
    most one status per disease survives. No Finding is pinned to Present."""
    merged: dict[str, Status] = {}
    for lab in labels:
        status = Status.PRESENT if lab.disease == NO_FINDING else lab.status
        if lab.disease in merged:
            merged[lab.disease] = merge_statuses(merged[lab.disease], status)
        else:
            merged[lab.disease] = status
    return frozenset(GranularLabel(d, s) for d, s in merged.items())


def label_set_to_json(labels: LabelSet) -> list[dict]:
    return [lab.to_json() for lab in sorted(labels, key=lambda l: l.disease)]


def label_set_from_json(rows: Iterable[dict]) -> LabelSet:
    return make_label_set(GranularLabel.from_json(r) for r in rows)


class LabelSpace(Enum):
    LEAVES = "leaves"
    UPPER = "upper"
    LEAVES_WITH_STATUS = "leaves_with_status"
    UPPER_WITH_STATUS = "upper_with_status"


@dataclass
class DiseaseNode:
    name: str
    parent: Optional["DiseaseNode"] = None
    children: list["DiseaseNode"] = field(default_factory=list)

    @property
    def is_leaf(self) -> bool:
        return not self.children

    def __repr__(self) -> str:
        return f"DiseaseNode({self.name!r})"


class Taxonomy:
    """Immutable after load; shareable across threads."""

    def __init__(self, roots: list[DiseaseNode]):
        if not roots:
            raise EmptyTree("taxonomy has no roots")
        self.roots = roots
        self.nodes: dict[str, DiseaseNode] = {}
        ordered: list[DiseaseNode] = []

        def walk(node: DiseaseNode, ancestors: set[str]) -> None:
            if node.name in ancestors:
                raise CycleDetected(f"{node.name!r} is its own ancestor")
            if node.name in self.nodes:
                raise DuplicateName(f"duplicate node name {node.name!r}")
            self.nodes[node.name] = node
            ordered.append(node)
            for child in node.children:
                child.parent = node
                walk(child, ancestors | {node.name})

        for root in roots:
            walk(root, set())
        self.ordered_nodes = ordered
        self.leaves: list[str] = [n.name for n in ordered if n.is_leaf]
        self.leaf_set = set(self.leaves)
        self.upper_map: dict[str, str] = {
            leaf: (self.nodes[leaf].parent.name if self.nodes[leaf].parent else leaf) for leaf in self.leaves
        }
        # Distinct uppers in first-appearance (document) order.
        self.uppers: list[str] = list(dict.fromkeys(self.upper_map[leaf] for leaf in self.leaves))

    def __contains__(self, name: str) -> bool:
        return name in self.nodes

    def require(self, name: str) -> DiseaseNode:
        node = self.nodes.get(name)
        if node is None:
            raise UnknownLabel(name)
        return node

    def upper_of(self, leaf_name: str) -> str:
        node = self.require(leaf_name)
        if not node.is_leaf:
            raise NotALeaf(f"{leaf_name!r} has children")
        return self.upper_map[leaf_name]

    def class_universe(self, space: LabelSpace) -> list[str]:
        """Class names for a label space. With-status spaces cross diseases
        with the three statuses, except No Finding which only exists Present."""
        base = self.leaves if space in (LabelSpace.LEAVES, LabelSpace.LEAVES_WITH_STATUS) else self.uppers
        if space in (LabelSpace.LEAVES, LabelSpace.UPPER):
            return list(base)
        classes: list[str] = []
        for name in base:
            if name == NO_FINDING:
                classes.append(GranularLabel(name, Status.PRESENT).render())
            else:
                classes.extend(GranularLabel(name, s).render() for s in Status)
        return classes

    def to_json(self) -> list[dict]:
        def node_json(node: DiseaseNode) -> dict:
            return {"name": node.name, "children": [node_json(c) for c in node.children]}

        return [node_json(r) for r in self.roots]


def _node_from_json(obj: dict) -> DiseaseNode:
    if not isinstance(obj, dict) or "name" not in obj:
        raise TaxonomyError(f"taxonomy node must be an object with a name: {obj!r}")
    return DiseaseNode(name=obj["name"], children=[_node_from_json(c) for c in obj.get("children", [])])


def load_taxonomy(source: Union[str, Path, None] = None) -> Taxonomy:
    """Load a taxonomy JSON file: either one root object or a list of roots.
    None loads the bundled tree."""
    if source is None:
        data = json.loads(resources.files("srrg.data").joinpath("taxonomy.json").read_text("utf-8"))
    else:
        data = json.loads(Path(source).read_text("utf-8"))
    if isinstance(data, dict):
        data = [data]
    if not data:
        raise EmptyTree("taxonomy file is empty")
    return Taxonomy([_node_from_json(obj) for obj in data])


def bundled_taxonomy_bytes() -> bytes:
    return resources.files("srrg.data").joinpath("taxonomy.json").read_bytes()


def project(labels: LabelSet, space: LabelSpace, taxonomy: Taxonomy) -> frozenset:
    """Project a leaf-level LabelSet into a label space.

    Leaves/Upper strip statuses and return disease-name sets; the with-status
    variants keep GranularLabels, merging duplicate diseases by precedence.
    """
    for lab in labels:
        if lab.disease not in taxonomy:
            raise UnknownLabel(lab.disease)
    if space is LabelSpace.LEAVES:
        return frozenset(lab.disease for lab in labels)
    if space is LabelSpace.LEAVES_WITH_STATUS:
        return make_label_set(labels)
    rolled = [GranularLabel(taxonomy.upper_of(lab.disease), lab.status) for lab in labels]
    if space is LabelSpace.UPPER:
        return frozenset(lab.disease for lab in rolled)
    return make_label_set(rolled)


CHEXBERT_CLASSES = (
    "Enlarged Cardiomediastinum",
    "Cardiomegaly",
    "Lung Opacity",
    "Lung Lesion",
    "Edema",
    "Consolidation",
    "Pneumonia",
    "Atelectasis",
    "Pneumothorax",
    "Pleural Effusion",
    "Pleural Other",
    "Fracture",
    "Support Devices",
    "No Finding",
)


class ChexbertMapping:
    """Config-loaded projection from taxonomy names onto the 14 legacy
    classes. Entries are user-editable; the bundled default is best-effort."""

    def __init__(self, table: dict[str, list[str]]):
        for name, targets in table.items():
            for t in targets:
                if t not in CHEXBERT_CLASSES:
                    raise TaxonomyError(f"mapping target {t!r} for {name!r} is not a CheXbert class")
        self.table = {name: set(targets) for name, targets in table.items()}

    @staticmethod
    def load(source: Union[str, Path, None] = None) -> "ChexbertMapping":
        if source is None:
            raw = resources.files("srrg.data").joinpath("chexbert_mapping.json").read_text("utf-8")
        else:
            raw = Path(source).read_text("utf-8")
        return ChexbertMapping(json.loads(raw))


def map_to_chexbert(labels: LabelSet, mapping: ChexbertMapping) -> tuple[set[str], list[str]]:
    """Union of mapped targets; diseases without an entry are dropped and
    returned in the second slot rather than failing."""
    mapped: set[str] = set()
    unmapped: list[str] = []
    for lab in sorted(labels, key=lambda l: l.disease):
        targets = mapping.table.get(lab.disease)
        if targets:
            mapped |= targets
        else:
            unmapped.append(lab.disease)
    return mapped, unmapped
