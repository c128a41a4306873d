import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hiadv import _kernels
from hiadv._kernels import _fallback
from hiadv.hierarchy import (
    CycleError,
    DisconnectedError,
    DuplicateLabelError,
    HierarchyError,
    LocalHierarchy,
    MultipleParentsError,
    NotClosedError,
    UnknownLabelError,
    UnknownParentError,
    ancestor_closure,
    corrupt,
    decompose_paths,
    dump_taxonomy,
    is_closed,
    load_taxonomy,
    parse_taxonomy,
    resolve_labels,
    shortest_path_matrix,
)

from trees import bfs_distances, brute_closure, random_document, random_tree, shaped_taxonomy

SMALL = {"labels": [
    {"name": "root", "parent": None},
    {"name": "A", "parent": "root"},
    {"name": "B", "parent": "root"},
    {"name": "A1", "parent": "A"},
]}


@pytest.fixture
def small():
    return parse_taxonomy(SMALL)


def ids(h, *names):
    return {h.id_of(n) for n in names}


# parsing ---------------------------------------------------------------

def test_small_tree(small):
    assert len(small) == 4
    assert small.depth[small.id_of("A1")] == 2
    assert small.spd[small.id_of("A1"), small.id_of("B")] == 3


def test_spd_is_read_only(small):
    with pytest.raises(ValueError):
        small.spd[0, 1] = 9


@pytest.mark.parametrize("doc, err", [
    ({"labels": [{"name": "root", "parent": None}, {"name": "A", "parent": "root"},
                 {"name": "A", "parent": "root"}]}, DuplicateLabelError),
    ({"labels": [{"name": "root", "parent": None}, {"name": "A", "parent": "ghost"}]},
     UnknownParentError),
    ({"labels": [{"name": "root", "parent": None}, {"name": "B", "parent": "root"},
                 {"name": "A", "parent": "root"}, {"name": "A", "parent": "B"}]},
     MultipleParentsError),
    ({"labels": [{"name": "root", "parent": None}, {"name": "B", "parent": "root"},
                 {"name": "A", "parent": ["root", "B"]}]}, MultipleParentsError),
    ({"labels": [{"name": "root", "parent": None}, {"name": "A", "parent": "B"},
                 {"name": "B", "parent": "A"}]}, CycleError),
    ({"labels": [{"name": "A", "parent": "B"}, {"name": "B", "parent": "A"}]}, CycleError),
    ({"labels": [{"name": "root", "parent": None}, {"name": "island", "parent": None}]},
     DisconnectedError),
])
def test_structural_errors_are_distinct(doc, err):
    with pytest.raises(err):
        parse_taxonomy(doc)


def test_error_classes_are_all_distinct():
    classes = [DuplicateLabelError, UnknownParentError, MultipleParentsError, CycleError,
               DisconnectedError]
    assert len(set(classes)) == 5
    assert all(issubclass(c, HierarchyError) for c in classes)


def test_malformed_document():
    with pytest.raises(HierarchyError):
        parse_taxonomy({"nodes": []})


def test_wos_shaped_taxonomy():
    h = shaped_taxonomy([7, 134])
    assert len(h.non_root) == 141
    assert h.max_depth == 2


def test_file_round_trip(tmp_path, small):
    p = tmp_path / "tax.json"
    dump_taxonomy(small, p)
    assert load_taxonomy(p) == small
    assert load_taxonomy(p).digest() == small.digest()


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 40), st.integers(0, 2 ** 32 - 1))
def test_serialize_parse_round_trip(n, seed):
    h = random_tree(np.random.default_rng(seed), n)
    again = parse_taxonomy(json.loads(json.dumps(h.to_document())))
    assert again == h
    assert np.array_equal(again.spd, h.spd)


def test_digest_depends_on_structure(small):
    moved = json.loads(json.dumps(SMALL))
    moved["labels"][3]["parent"] = "B"
    assert parse_taxonomy(moved).digest() != small.digest()


# closure ---------------------------------------------------------------

def test_closure_examples(small):
    assert ancestor_closure(small, ids(small, "A1")).members == ids(small, "A", "A1")
    assert ancestor_closure(small, ids(small, "A")).members == ids(small, "A")


def test_closure_rejects_unknown_id(small):
    with pytest.raises(UnknownLabelError):
        ancestor_closure(small, [17])


def test_resolve_labels_by_name(small):
    assert resolve_labels(small, ["A1"]).members == ids(small, "A", "A1")
    with pytest.raises(UnknownLabelError):
        resolve_labels(small, ["nope"])


def test_closure_matches_brute_force_on_random_trees():
    rng = np.random.default_rng(0)
    for _ in range(200):
        h = random_tree(rng, int(rng.integers(1, 21)))
        k = int(rng.integers(0, len(h) + 1))
        leaves = [int(x) for x in rng.choice(len(h), size=k, replace=False)]
        assert ancestor_closure(h, leaves).members == brute_closure(h, leaves)


def test_closure_is_idempotent():
    rng = np.random.default_rng(1)
    for _ in range(50):
        h = random_tree(rng, 15)
        y = ancestor_closure(h, rng.choice(15, size=3, replace=False).tolist())
        assert ancestor_closure(h, y.members) == y
        assert is_closed(h, y.members)


# paths -----------------------------------------------------------------

def test_single_path(small):
    y = LocalHierarchy(frozenset(ids(small, "A", "A1")))
    assert decompose_paths(small, y) == [[small.root_id, small.id_of("A"), small.id_of("A1")]]


def test_branching_paths_share_prefix():
    h = parse_taxonomy({"labels": SMALL["labels"] + [{"name": "A2", "parent": "A"}]})
    y = LocalHierarchy(frozenset(ids(h, "A", "A1", "A2")))
    paths = decompose_paths(h, y)
    assert len(paths) == 2
    assert all(p[:2] == [h.root_id, h.id_of("A")] for p in paths)


def test_unclosed_set_is_rejected(small):
    with pytest.raises(NotClosedError):
        decompose_paths(small, LocalHierarchy(frozenset(ids(small, "A1"))))


def test_paths_reassemble_to_set_on_random_trees():
    rng = np.random.default_rng(2)
    for _ in range(200):
        h = random_tree(rng, int(rng.integers(2, 31)))
        leaves = rng.choice(h.non_root, size=int(rng.integers(1, 4)), replace=True).tolist()
        y = ancestor_closure(h, leaves)
        paths = decompose_paths(h, y)
        union = set().union(*map(set, paths)) - {h.root_id}
        assert union == y.members
        for p in paths:
            assert p[0] == h.root_id
            assert all(h.parent[b] == a for a, b in zip(p, p[1:]))
        ends = {p[-1] for p in paths}
        assert ends == {i for i in y.members if not any(c in y.members for c in h.children[i])}


def test_nyt_shaped_sample_decomposes_into_short_paths():
    # depth-8 taxonomy, one sample with a deep path and a shallow branch
    h = shaped_taxonomy([4, 8, 12, 16, 20, 24, 28, 32])
    deep = h.id_of("d8_0")
    side = h.id_of("d3_5")
    y = ancestor_closure(h, [deep, side])
    paths = decompose_paths(h, y)
    assert len(paths) >= 1
    assert max(len(p) - 1 for p in paths) <= 8
    assert h.max_depth == 8


# shortest paths --------------------------------------------------------

def test_spd_trivial_cases(small):
    assert all(small.spd[i, i] == 0 for i in range(len(small)))
    for i in small.non_root:
        assert small.spd[i, small.parent[i]] == 1


def test_spd_matches_bfs_on_random_trees():
    rng = np.random.default_rng(3)
    for _ in range(200):
        h = random_tree(rng, int(rng.integers(1, 31)))
        assert np.array_equal(shortest_path_matrix(h), bfs_distances(h))


def test_spd_symmetric():
    h = random_tree(np.random.default_rng(4), 25)
    assert np.array_equal(h.spd, h.spd.T)


def test_spd_backends_agree():
    rng = np.random.default_rng(5)
    for _ in range(50):
        h = random_tree(rng, int(rng.integers(1, 40)))
        parent = np.asarray(h.parent, dtype=np.int64)
        depth = np.asarray(h.depth, dtype=np.int64)
        assert np.array_equal(_fallback.tree_distances(parent, depth),
                              _kernels.tree_distances(parent, depth))


# corruption ------------------------------------------------------------

@pytest.fixture
def seven():
    h = shaped_taxonomy([3, 6, 12])
    y = ancestor_closure(h, [h.id_of("d3_0"), h.id_of("d3_6"), h.id_of("d3_1")])
    assert len(y) == 7
    return h, y


def test_corrupt_full_is_identity(seven):
    h, y = seven
    assert corrupt(y, "full", 0.15, np.random.default_rng(0), h).members == y.members


def test_corrupt_none_is_empty(seven):
    h, y = seven
    assert corrupt(y, "none", 0.15, np.random.default_rng(0), h).members == frozenset()


def test_corrupt_partial_drops_rounded_fraction(seven):
    h, y = seven
    out = corrupt(y, "partial", 0.15, np.random.default_rng(0), h)
    assert len(out) == 6 and out.members <= y.members


def test_partial_rounds_half_up():
    h = shaped_taxonomy([10])
    y = LocalHierarchy(frozenset(h.non_root))
    out = corrupt(y, "partial", 0.15, np.random.default_rng(0), h)   # 1.5 -> 2
    assert len(out) == 8


def test_wrong_preserves_cardinality_and_skips_root():
    rng = np.random.default_rng(6)
    for _ in range(100):
        h = random_tree(rng, int(rng.integers(4, 30)))
        y = ancestor_closure(h, [int(rng.choice(h.non_root))])
        out = corrupt(y, "wrong", 0.15, rng, h)
        assert len(out) == len(y) and h.root_id not in out.members


def test_corrupt_is_deterministic(seven):
    h, y = seven
    for mode in ("partial", "wrong"):
        a = corrupt(y, mode, 0.3, np.random.default_rng(9), h)
        b = corrupt(y, mode, 0.3, np.random.default_rng(9), h)
        assert a == b


def test_corrupt_rejects_bad_arguments(seven):
    h, y = seven
    with pytest.raises(ValueError):
        corrupt(y, "scramble", 0.1, np.random.default_rng(0), h)
    with pytest.raises(ValueError):
        corrupt(y, "partial", 1.5, np.random.default_rng(0), h)


def test_partial_result_need_not_be_closed():
    # dropping an inner node leaves its descendants in place
    h = shaped_taxonomy([1, 1, 1, 1])
    y = LocalHierarchy(frozenset(h.non_root))
    seen_unclosed = False
    for s in range(20):
        out = corrupt(y, "partial", 0.25, np.random.default_rng(s), h)
        seen_unclosed |= not is_closed(h, out.members)
    assert seen_unclosed


def test_random_documents_are_order_independent():
    rng = np.random.default_rng(7)
    doc = random_document(rng, 12)
    h1 = parse_taxonomy(doc)
    doc2 = {"labels": list(reversed(doc["labels"]))}
    h2 = parse_taxonomy(doc2)
    n1 = {h1.labels[i]: h1.depth[i] for i in range(12)}
    n2 = {h2.labels[i]: h2.depth[i] for i in range(12)}
    assert n1 == n2
