import random

import numpy as np
import pytest
from hypothesis import given, settings

from dcmc.bisim import (
    are_bisimilar,
    bisimulation_violation,
    check_preservation,
    greatest_bisimulation,
    is_bisimulation,
)
from dcmc.dc import abstraction_pair, anonymity_formula, message_structure, ring
from dcmc.formula import TRUE, random_formula
from dcmc.kripke import FitnessError, build_structure

from strategies import AGENTS, VARS, structures


def test_identity_included():
    M, _ = message_structure(3)
    rel = greatest_bisimulation(M, M, M.variables, M.agents)
    assert all((w, w) in rel for w in range(M.num_worlds))
    assert rel.total


def test_atoms_disagree_gives_empty():
    M = build_structure(["a"], ["a.p"], [[0]], {})
    N = build_structure(["a"], ["a.p"], [[1]], {})
    rel = greatest_bisimulation(M, N, ["a.p"], ["a"])
    assert len(rel) == 0 and not rel.total
    assert not are_bisimilar(M, N, ["a.p"], ["a"])


def test_dc_and_abstraction_bisimilar_ring3():
    M, msgs = message_structure(3)
    c, a, V, A = abstraction_pair(ring(3), M, msgs)
    rel = greatest_bisimulation(c, a, V, A)
    assert rel.total
    assert is_bisimulation(c, a, rel.matrix, V, A)


def test_fitness_checked():
    M = build_structure(["a"], ["a.p"], [[0]], {})
    with pytest.raises(FitnessError):
        greatest_bisimulation(M, M, ["a.q"], ["a"])
    with pytest.raises(FitnessError):
        greatest_bisimulation(M, M, ["a.p"], ["b"])


def test_preservation_top_and_spec4_style():
    M, msgs = message_structure(3)
    c, a, V, A = abstraction_pair(ring(3), M, msgs)
    rel = greatest_bisimulation(c, a, V, A)
    assert check_preservation(c, a, rel, [TRUE] + [anonymity_formula(A, i) for i in A]) == []


def test_to_dict_has_flags():
    M, _ = message_structure(2)
    d = greatest_bisimulation(M, M, M.variables, M.agents).to_dict()
    assert d["left_total"] and d["right_total"] and [0, 0] in d["pairs"]


@settings(max_examples=120)
@given(structures(6), structures(6))
def test_fixpoint_is_closed_and_maximal(M, N):
    rel = greatest_bisimulation(M, N, VARS, AGENTS)
    assert bisimulation_violation(M, N, rel.matrix, VARS, AGENTS) is None
    # adding any missing pair breaks closure
    for w, u in np.argwhere(~rel.matrix)[:6]:
        bigger = rel.matrix.copy()
        bigger[w, u] = True
        assert bisimulation_violation(M, N, bigger, VARS, AGENTS) is not None


@settings(max_examples=80)
@given(structures(6), structures(6))
def test_symmetry(M, N):
    r1 = greatest_bisimulation(M, N, VARS, AGENTS)
    r2 = greatest_bisimulation(N, M, VARS, AGENTS)
    assert np.array_equal(r1.matrix, r2.matrix.T)


@settings(max_examples=80)
@given(structures(6), structures(6))
def test_anti_monotone_in_parameters(M, N):
    full = greatest_bisimulation(M, N, VARS, AGENTS).matrix
    for V, A in ((VARS[:2], AGENTS), (VARS, AGENTS[:1]), ((), ())):
        smaller = greatest_bisimulation(M, N, V, A).matrix
        assert not (full & ~smaller).any()


@settings(max_examples=60)
@given(structures(6), structures(6))
def test_bisimilar_worlds_agree_on_formulas(M, N):
    rel = greatest_bisimulation(M, N, VARS, AGENTS)
    rng = random.Random(M.num_worlds * 31 + N.num_worlds)
    fs = [random_formula(rng, VARS, AGENTS, 4) for _ in range(20)]
    assert check_preservation(M, N, rel, fs) == []


def test_checker_reports_forth_failure():
    # a: one class with p and not p; b: single world p
    M = build_structure(["i"], ["x.p"], [[0], [1]], {"i": []})
    N = build_structure(["i"], ["x.p"], [[1]], {"i": []})
    matrix = np.array([[False], [True]])
    assert bisimulation_violation(M, N, matrix, ["x.p"], ["i"])[0] == "forth"
    assert not are_bisimilar(M, N, ["x.p"], ["i"])
    # with no agents, world 0 still has no partner on the atoms
    assert not are_bisimilar(M, N, ["x.p"], [])
