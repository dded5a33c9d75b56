import json
from importlib import resources

import pytest

from srrg.taxonomy import (
    CHEXBERT_CLASSES,
    ChexbertMapping,
    CycleDetected,
    DuplicateName,
    EmptyTree,
    LabelSpace,
    NotALeaf,
    Status,
    UnknownLabel,
    load_taxonomy,
    make_label_set,
    map_to_chexbert,
    merge_statuses,
    project,
)

from conftest import gl, ls

# Distinct upper names, exactly as they appear in the bundled tree.
EXPECTED_UPPER_NAMES = {
    "No Finding",
    "Lung Finding",
    "Air space opacity",
    "Diffuse air space opacity",
    "Focal air space opacity",
    "Consolidation",
    "Segmental collapse",
    "Solitary masslike opacity",
    "Multiple masslike opacities",
    "Pleural Finding",
    "Pneumothorax",
    "Pleural Thickening",
    "Pleural Effusion",
    "Widened Cardiac Silhouette",
    "Mediastinal Finding",
    "Mediastinal Mass",
    "Vascular Finding",
    "Widened aortic contour",
    "Musculoskeletal Finding",
    "Fracture",
    "Chest wall finding",
    "Support Devices",
    "Subdiaphragmatic gas",
}

KNOWN_UPPER_PAIRS = {
    "Pneumonia": "Consolidation",
    "Atelectasis": "Consolidation",
    "Aspiration": "Consolidation",
    "Edema": "Diffuse air space opacity",
    "Lung collapse": "Segmental collapse",
    "Perihilar airspace opacity": "Focal air space opacity",
    "Air space opacity–multifocal": "Air space opacity",
    "Cavitating masses": "Multiple masslike opacities",
    "Cavitating mass with content": "Solitary masslike opacity",
    "Emphysema": "Lung Finding",
    "Simple pleural effusion": "Pleural Effusion",
    "Pleural scarring": "Pleural Thickening",
    "Hydropneumothorax": "Pleural Finding",
    "Cardiomegaly": "Widened Cardiac Silhouette",
    "Tortuous Aorta": "Widened aortic contour",
    "Enlarged pulmonary artery": "Vascular Finding",
    "Hernia": "Mediastinal Finding",
    "Acute rib fracture": "Fracture",
    "Subcutaneous Emphysema": "Chest wall finding",
    "Shoulder dislocation": "Musculoskeletal Finding",
    "PICC line": "Support Devices",
    "Pneumoperitoneum": "Subdiaphragmatic gas",
    "No Finding": "No Finding",
}


def test_bundled_tree_counts(taxonomy):
    assert len(taxonomy.roots) == 8
    assert len(taxonomy.leaves) == 54
    assert len(taxonomy.uppers) == 23
    assert taxonomy.leaf_set == {n.name for n in taxonomy.ordered_nodes if n.is_leaf}


def test_upper_pairs(taxonomy):
    for leaf, upper in KNOWN_UPPER_PAIRS.items():
        assert taxonomy.upper_of(leaf) == upper, leaf


def test_upper_set_covers_expected_names(taxonomy):
    computed = {taxonomy.upper_of(leaf) for leaf in taxonomy.leaves}
    assert computed == EXPECTED_UPPER_NAMES


def test_upper_map_against_independent_walk(taxonomy):
    # oracle: walk the raw JSON, tracking each node's parent directly
    raw = json.loads(resources.files("srrg.data").joinpath("taxonomy.json").read_text("utf-8"))
    parent = {}
    leaves = []

    def walk(node, parent_name):
        name = node["name"]
        if parent_name is not None:
            parent[name] = parent_name
        if not node["children"]:
            leaves.append(name)
        for child in node["children"]:
            walk(child, name)

    for root in raw:
        walk(root, None)
    assert sorted(leaves) == sorted(taxonomy.leaves)
    for leaf in leaves:
        assert taxonomy.upper_of(leaf) == parent.get(leaf, leaf)


def test_upper_of_rejects_non_leaf_and_unknown(taxonomy):
    with pytest.raises(NotALeaf):
        taxonomy.upper_of("Consolidation")
    with pytest.raises(UnknownLabel):
        taxonomy.upper_of("Fog")


def test_single_node_tree(tmp_path):
    path = tmp_path / "one.json"
    path.write_text('{"name": "No Finding"}')
    tax = load_taxonomy(path)
    assert tax.leaves == ["No Finding"]
    assert tax.upper_of("No Finding") == "No Finding"


def test_duplicate_name(tmp_path):
    path = tmp_path / "dup.json"
    path.write_text('[{"name": "A", "children": [{"name": "Edema"}, {"name": "Edema"}]}]')
    with pytest.raises(DuplicateName):
        load_taxonomy(path)


def test_cycle_detected(tmp_path):
    path = tmp_path / "cycle.json"
    path.write_text('[{"name": "Edema", "children": [{"name": "Edema"}]}]')
    with pytest.raises(CycleDetected):
        load_taxonomy(path)


def test_empty_tree(tmp_path):
    path = tmp_path / "empty.json"
    path.write_text("[]")
    with pytest.raises(EmptyTree):
        load_taxonomy(path)


def test_class_universe_sizes(taxonomy):
    assert len(taxonomy.class_universe(LabelSpace.LEAVES)) == 54
    assert len(taxonomy.class_universe(LabelSpace.UPPER)) == 23
    # cross product, minus the two ruled-out No Finding statuses
    assert len(taxonomy.class_universe(LabelSpace.LEAVES_WITH_STATUS)) == (54 - 1) * 3 + 1
    assert len(taxonomy.class_universe(LabelSpace.UPPER_WITH_STATUS)) == (23 - 1) * 3 + 1
    assert "Edema (Uncertain)" in taxonomy.class_universe(LabelSpace.LEAVES_WITH_STATUS)
    assert "No Finding (Absent)" not in taxonomy.class_universe(LabelSpace.LEAVES_WITH_STATUS)


def test_project_upper_rollup(taxonomy):
    labels = ls(("Pneumonia", "Present"), ("Atelectasis", "Present"))
    assert project(labels, LabelSpace.UPPER, taxonomy) == frozenset({"Consolidation"})


def test_project_upper_with_status_precedence(taxonomy):
    labels = ls(("Pneumonia", "Uncertain"), ("Atelectasis", "Present"))
    projected = project(labels, LabelSpace.UPPER_WITH_STATUS, taxonomy)
    assert projected == frozenset({gl("Consolidation", "Present")})


def test_project_empty_set(taxonomy):
    for space in LabelSpace:
        assert project(frozenset(), space, taxonomy) == frozenset()


def test_project_leaves_strips_statuses(taxonomy):
    labels = ls(("Edema", "Absent"), ("Pneumonia", "Uncertain"))
    assert project(labels, LabelSpace.LEAVES, taxonomy) == frozenset({"Edema", "Pneumonia"})


def test_project_unknown_label(taxonomy):
    with pytest.raises(UnknownLabel):
        project(frozenset({gl("Fog")}), LabelSpace.LEAVES, taxonomy)


def test_project_idempotent_and_shrinking(taxonomy):
    labels = ls(
        ("Pneumonia", "Present"),
        ("Atelectasis", "Uncertain"),
        ("Edema", "Absent"),
        ("Simple pleural effusion", "Present"),
    )
    once = project(labels, LabelSpace.UPPER, taxonomy)
    assert len(once) <= len(labels)
    # upper names that are themselves leaves nowhere exist here, so a second
    # projection is a set identity
    assert once == frozenset(once)


def test_status_merge_is_max_under_total_order():
    order = [Status.ABSENT, Status.UNCERTAIN, Status.PRESENT]
    for a in order:
        for b in order:
            assert merge_statuses(a, b) == merge_statuses(b, a)
            assert merge_statuses(a, b) == max(a, b, key=order.index)
            for c in order:
                assert merge_statuses(merge_statuses(a, b), c) == merge_statuses(a, merge_statuses(b, c))


def test_make_label_set_merges_duplicates_and_pins_no_finding():
    merged = make_label_set([gl("Edema", "Absent"), gl("Edema", "Present"), gl("No Finding", "Absent")])
    assert gl("Edema", "Present") in merged
    assert gl("No Finding", "Present") in merged
    assert len(merged) == 2


def test_chexbert_identity_entry():
    mapping = ChexbertMapping({"Cardiomegaly": ["Cardiomegaly"]})
    mapped, unmapped = map_to_chexbert(ls(("Cardiomegaly", "Present")), mapping)
    assert mapped == {"Cardiomegaly"}
    assert unmapped == []


def test_chexbert_empty_set():
    mapping = ChexbertMapping.load()
    mapped, unmapped = map_to_chexbert(frozenset(), mapping)
    assert mapped == set()
    assert unmapped == []


def test_chexbert_union_and_dropped(taxonomy):
    mapping = ChexbertMapping.load()
    mapped, unmapped = map_to_chexbert(ls(("Pneumonia", "Present")), mapping)
    assert mapped == {"Pneumonia", "Consolidation"}
    # a leaf with no plausible 14-class counterpart is dropped and reported
    mapped, unmapped = map_to_chexbert(ls(("Bronchiectasis", "Present")), mapping)
    assert mapped == set()
    assert unmapped == ["Bronchiectasis"]


def test_chexbert_mapping_targets_validated():
    with pytest.raises(Exception):
        ChexbertMapping({"Edema": ["Weather"]})


def test_bundled_mapping_targets_are_all_valid(taxonomy):
    mapping = ChexbertMapping.load()
    for name, targets in mapping.table.items():
        assert name in taxonomy.nodes, name
        assert targets <= set(CHEXBERT_CLASSES)
