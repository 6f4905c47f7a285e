import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dcmc.kripke import (
    FitnessError,
    KripkeStructure,
    build_structure,
    canonical_classes,
    check_consistent,
    classes_of,
    find_inconsistency,
    from_classes,
    refine,
)
from dcmc.twophase import build_initial

from strategies import structures

FOUR = [[0, 0], [0, 1], [1, 0], [1, 1]]


def test_single_world_single_class():
    M = build_structure(["a", "b"], ["a.p"], [[1]], {"a": ["a.p"], "b": []})
    assert classes_of(M, "a") == [[0]] and classes_of(M, "b") == [[0]]


def test_agreement_on_observed_variable():
    M = build_structure(["i"], ["a", "b"], FOUR, {"i": ["a"]})
    assert classes_of(M, "i") == [[0, 1], [2, 3]]


def test_twophase_initial_classes():
    M, ov = build_initial(3)
    assert M.num_worlds == 512
    for a in M.agents:
        sizes = {len(c) for c in classes_of(M, a)}
        assert sizes == {64}
        assert M.num_classes(a) == 8


def test_unknown_variable_in_observation_set():
    with pytest.raises(FitnessError):
        build_structure(["i"], ["a"], [[0]], {"i": ["zz"]})


def test_dedup_flag():
    rows = [[0, 1], [0, 1], [1, 1]]
    assert build_structure(["i"], ["a", "b"], rows, {}).num_worlds == 2
    assert build_structure(["i"], ["a", "b"], rows, {}, dedup=False).num_worlds == 3


def test_consistency_examples():
    M = build_structure(["i", "j"], ["a", "b"], FOUR, {"i": ["a"], "j": ["b"]})
    assert check_consistent(M, {"i": set(), "j": set()})
    assert check_consistent(M, {"i": {"a"}, "j": {"b"}})
    bad = find_inconsistency(M, {"i": {"b"}})
    assert bad[:2] == ("i", "b")
    _, _, w, w2 = bad
    assert M.related("i", w, w2) and M.column("b")[w] != M.column("b")[w2]
    assert find_inconsistency(M, {"i": {"zz"}}) == ("i", "zz", None, None)


def test_classes_ordered_by_least_member():
    M = from_classes(["i"], ["a"], [[0], [1], [0], [1]], {"i": [7, 3, 3, 7]})
    assert classes_of(M, "i") == [[0, 3], [1, 2]]
    assert list(M.classes("i")) == [0, 1, 1, 0]


def test_unknown_agent():
    M = build_structure(["i"], ["a"], [[0]], {})
    with pytest.raises(FitnessError):
        classes_of(M, "nobody")


def test_arrays_are_read_only():
    M = build_structure(["i"], ["a", "b"], FOUR, {"i": ["a"]})
    with pytest.raises(ValueError):
        M.column("a")[0] = True
    with pytest.raises(ValueError):
        M.classes("i")[0] = 5


def test_json_round_trip():
    M = build_structure(["i", "j"], [f"i.v{k}" for k in range(9)], list(itertools.product((0, 1), repeat=9))[:40],
                        {"i": ["i.v0", "i.v3"], "j": ["i.v8"]})
    M2 = KripkeStructure.from_json(M.to_json())
    assert M.same_as(M2)
    assert M.to_dict()["worlds"][1] == "100"  # little-endian hex: only v8 set


@settings(max_examples=80)
@given(st.lists(st.tuples(*[st.booleans()] * 4), min_size=1, max_size=20), st.sets(st.integers(0, 3)), st.integers(0, 3))
def test_observation_generated_partitions(rows, observed, extra):
    names = ["a", "b", "c", "d"]
    obs = [names[k] for k in sorted(observed)]
    M = build_structure(["i"], names, rows, {"i": obs}, dedup=False)
    rows = np.array(rows, dtype=bool)
    cls = M.classes("i")
    for w in range(len(rows)):
        for v in range(len(rows)):
            same = all(rows[w][names.index(x)] == rows[v][names.index(x)] for x in obs)
            assert (cls[w] == cls[v]) == same
    assert check_consistent(M, {"i": obs})
    finer = build_structure(["i"], names, rows, {"i": obs + [names[extra]]}, dedup=False).classes("i")
    # refinement never merges classes
    for w in range(len(rows)):
        for v in range(len(rows)):
            if finer[w] == finer[v]:
                assert cls[w] == cls[v]


@given(st.lists(st.integers(-5, 5), max_size=30))
def test_canonical_classes_numbering(keys):
    c = canonical_classes(np.array(keys, dtype=np.int64))
    seen = []
    for k, cid in zip(keys, c):
        if k not in seen:
            assert cid == len(seen)
            seen.append(k)
        else:
            assert cid == seen.index(k)


def test_refine_many_columns():
    rng = np.random.default_rng(1)
    cols = [rng.integers(0, 2, 500).astype(bool) for _ in range(70)]
    c = refine(np.zeros(500, dtype=np.int64), cols)
    keys = np.stack(cols, 1)
    for w in range(0, 500, 37):
        for v in range(500):
            assert (c[w] == c[v]) == bool((keys[w] == keys[v]).all())


@settings(max_examples=40)
@given(structures())
def test_restrict_keeps_partition_meaning(M):
    idx = np.arange(M.num_worlds)[::-1]
    R = M.restrict_worlds(idx)
    for a in M.agents:
        old = M.classes(a)[idx]
        new = R.classes(a)
        assert np.array_equal(old[:, None] == old[None, :], new[:, None] == new[None, :])
