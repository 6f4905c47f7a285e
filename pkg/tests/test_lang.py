import itertools

import numpy as np
import pytest

from dcmc.dc import build_dc, build_dc_abstract, message_structure, payer_structure, ring
from dcmc.formula import Atom, FormulaSyntaxError, Iff, Xor, valid, xor
from dcmc.kripke import KripkeStructure, build_structure, check_consistent
from dcmc.lang import (
    Assign,
    Broadcast,
    DoubleWriteError,
    JointAction,
    NotEnabledError,
    Program,
    Rand,
    Send,
    apply_ov,
    canonical_ov,
    enabled_at_ov,
    enabled_at_structure,
    enabledness_violation,
    parse_expression,
    parse_program,
    perfect_recall_violation,
    run,
    step,
    trace,
)
from dcmc.twophase import build_initial, build_program, final_candidate

EXAMPLE_OV = {"j": frozenset({"j.y"}), "i": frozenset()}


def example_structure():
    return build_structure(["i", "j"], ["j.y"], [[0], [1]], {"j": ["j.y"]})


# parsing ------------------------------------------------------------------


def test_parse_example_program():
    P = parse_program("step { j: broadcast(y) } step { i: x := j.y }")
    assert len(P) == 2
    assert P.steps[0] == JointAction([Broadcast("j", "j.y")])
    assert P.steps[1] == JointAction([Assign("i", "i.x", Atom("j.y"))])


def test_bare_names_belong_to_the_actor():
    P = parse_program("step { i: x := y ⊗ z }")
    assert P.steps[0].actions[0] == Assign("i", "i.x", Xor((Atom("i.y"), Atom("i.z"))))


def test_double_write_rejected():
    with pytest.raises(DoubleWriteError):
        parse_program("step { i: a := 1 ; i: a := 0 }")


def test_rand_and_send_syntax():
    P = parse_program("step { i: rand(k) } step { i: k -> j.k ; j: rand(z) }")
    assert P.steps[0].actions == (Rand("i", "i.k"),)
    assert P.steps[1].actions == (Send("i", Atom("i.k"), "j.k"), Rand("j", "j.z"))


def test_checkpoint_syntax():
    P = parse_program('step { i: rand(k) }\ncheckpoint "c" assert i.k | !i.k assert true')
    assert P.checkpoints[0].position == 1 and len(P.checkpoints[0].assertions) == 2


def test_parse_errors_have_positions():
    with pytest.raises(FormulaSyntaxError) as exc:
        parse_program("step { i: x := y }\nstep { i: := }")
    assert exc.value.line == 2
    with pytest.raises(FormulaSyntaxError):
        parse_program("step { i: x -> y }")
    with pytest.raises(FormulaSyntaxError):
        parse_program("step { i: j.x := 1 }")


def test_expression_rejects_knowledge():
    with pytest.raises(FormulaSyntaxError):
        parse_expression("K[i] x", "i")


def test_program_text_round_trip():
    M, msgs = message_structure(3)
    P = build_dc(ring(3), msgs)
    assert parse_program(str(P)).steps == P.steps


# enabledness --------------------------------------------------------------


def test_example_enabledness():
    P = parse_program("step { j: broadcast(y) } step { i: x := j.y }")
    broadcast, copy = P.steps
    assert not enabled_at_ov(copy, EXAMPLE_OV)
    assert enabledness_violation(copy, EXAMPLE_OV)[0] == 2
    assert enabled_at_ov(broadcast, EXAMPLE_OV)
    after = apply_ov(EXAMPLE_OV, broadcast)
    assert after == {"j": frozenset({"j.y"}), "i": frozenset({"j.y"})}
    assert enabled_at_ov(copy, after)


def test_empty_joint_action():
    assert enabled_at_ov(JointAction(), EXAMPLE_OV)
    assert apply_ov(EXAMPLE_OV, JointAction()) == EXAMPLE_OV


def test_rand_visible_to_actor_only():
    after = apply_ov(EXAMPLE_OV, JointAction([Rand("i", "i.k")]))
    assert after["i"] == {"i.k"} and after["j"] == {"j.y"}


def test_conditions_one_and_three():
    assert enabledness_violation(JointAction([Rand("j", "j.y")]), EXAMPLE_OV)[0] == 1
    assert enabledness_violation(JointAction([Broadcast("i", "i.z")]), EXAMPLE_OV)[0] == 3
    with pytest.raises(NotEnabledError):
        apply_ov(EXAMPLE_OV, JointAction([Broadcast("i", "i.z")]))


def test_enabled_at_structure_cases():
    M, ov = build_initial(3)
    msgs = {a: Atom(f"{a}.message") for a in M.agents}
    assert enabled_at_structure(build_dc(ring(3), msgs), M) == canonical_ov(M)
    with pytest.raises(NotEnabledError) as exc:
        enabled_at_structure(Program([JointAction([Rand("1", "1.message")])]), M)
    assert exc.value.condition == 3
    assert enabled_at_structure(Program(), M) == ov


def test_canonical_ov_skips_unobservable_own_variables():
    M = build_structure(["i"], ["i.a", "i.b"], [[0, 0], [0, 1]], {"i": ["i.a"]})
    assert canonical_ov(M) == {"i": frozenset({"i.a"})}


def test_inconsistent_ov_rejected():
    M = build_structure(["i"], ["i.a"], [[0], [1]], {"i": []})
    with pytest.raises(NotEnabledError):
        enabled_at_structure(Program(), M, {"i": {"i.a"}})


# semantics ----------------------------------------------------------------


def test_step_without_rand_keeps_worlds():
    M = example_structure()
    A = JointAction([Broadcast("j", "j.y")])
    M2, _ = step(M, EXAMPLE_OV, A)
    assert M2.num_worlds == M.num_worlds
    assert M.num_classes("i") == 1 and M2.num_classes("i") == 2


def test_rand_doubles_and_splits_only_actor():
    M = build_structure(["i", "j"], ["j.y"], [[0], [1]], {"j": ["j.y"]})
    M2, _ = step(M, EXAMPLE_OV, JointAction([Rand("i", "i.k")]))
    assert M2.num_worlds == 4
    # base-major, kappa minor
    assert list(M2.column("j.y")) == [False, False, True, True]
    assert list(M2.column("i.k")) == [False, True, False, True]
    assert M2.num_classes("i") == 2 and not M2.related("i", 0, 1) and M2.related("i", 0, 2)
    assert M2.related("j", 0, 1) and not M2.related("j", 0, 2)


def test_kappa_little_endian_over_rand_order():
    M = KripkeStructure(["i"], {}, {"i": np.zeros(1, dtype=np.int64)}, 1)
    M2, _ = step(M, {"i": frozenset()}, JointAction([Rand("i", "i.a"), Rand("i", "i.b")]))
    assert list(M2.column("i.a")) == [False, True, False, True]
    assert list(M2.column("i.b")) == [False, False, True, True]


def test_assign_reads_base_world():
    M = build_structure(["i"], ["i.x"], [[0], [1]], {"i": ["i.x"]})
    ov = {"i": frozenset({"i.x"})}
    M2, _ = step(M, ov, JointAction([Rand("i", "i.k"), Assign("i", "i.y", Atom("i.x"))]))
    assert list(M2.column("i.y")) == [False, False, True, True]


def test_dc_result_is_message_xor_on_payer_structure():
    M, msgs = payer_structure(3)
    S = run(M, build_dc(ring(3), msgs)).structure
    expected = np.logical_xor.reduce([S.column(f"{j}.m") for j in "123"])
    for a in ("1", "2", "3"):
        assert np.array_equal(S.column(f"{a}.rr[1]"), expected)
    assert valid(S, Iff(Atom("1.rr[1]"), xor(list(msgs.values()))))[0]


def test_run_empty_program():
    M = example_structure()
    result = run(M, Program())
    assert result.structure.same_as(M.with_agents([])) and result.results == []


def test_checkpoint_failure_carries_witness():
    M = example_structure()
    P = parse_program('checkpoint "c" assert j.y')
    r = run(M, P).results[0]
    assert not r.holds and r.witness == 0 and r.witness_valuation == {"j.y": 0}


def test_missing_agents_added():
    M = build_structure(["i"], ["i.x"], [[0], [1]], {"i": ["i.x"]})
    S = run(M, parse_program("step { i: x -> T.x }")).structure
    assert "T" in S.agents and S.num_classes("T") == 2


# invariants ---------------------------------------------------------------


def case_study_runs():
    for n in (3, 4):
        M, msgs = message_structure(n)
        yield M, build_dc(ring(n), msgs)
        yield M, build_dc_abstract(ring(n).agents, msgs)
    M, _ = build_initial(3)
    yield M, build_program(3, final_candidate(3), "abstract", specs=())
    yield M, build_program(3, final_candidate(3), "concrete", rounds=2, specs=())


@pytest.mark.parametrize("M,P", list(case_study_runs()))
def test_consistency_and_perfect_recall_every_step(M, P):
    prev = None
    for _, S, ov in trace(M, P):
        assert check_consistent(S, ov)
        if prev is not None:
            assert perfect_recall_violation(prev, S) is None
            factor = S.num_worlds // prev.num_worlds
            for v in prev.variables:
                # old variables are constant across kappa-extensions
                assert np.array_equal(S.column(v), np.repeat(prev.column(v), factor))
        prev = S


def test_perfect_recall_checker_detects_forgetting():
    M = build_structure(["i"], ["i.x"], [[0], [1]], {"i": ["i.x"]})
    forgot = build_structure(["i"], ["i.x"], [[0], [1]], {"i": []})
    assert perfect_recall_violation(M, forgot) == ("i", 0, 1)


def test_determinism_across_jobs():
    M, ov = build_initial(3)
    P = build_program(3, final_candidate(3), "abstract")
    r1, r4 = run(M, P, jobs=1), run(M, P, jobs=4)
    assert r1.structure.to_json() == r4.structure.to_json()
    assert [(r.name, r.holds, r.witness) for r in r1.results] == [(r.name, r.holds, r.witness) for r in r4.results]


def test_independent_of_consistent_ov_choice():
    # agent 1 also sees 2.m; listing 2.m in its ov or not yields the same run
    agents = ["1", "2", "3"]
    _, msgs = message_structure(3)
    obs = {"1": ["1.m", "2.m"], "2": ["2.m"], "3": ["3.m"]}
    rows = [list(w) for w in itertools.product((0, 1), repeat=3)]
    M = build_structure(agents, ["1.m", "2.m", "3.m"], rows, obs)
    P = build_dc(ring(3), msgs)
    small = {"1": {"1.m"}, "2": {"2.m"}, "3": {"3.m"}}
    big = {"1": {"1.m", "2.m"}, "2": {"2.m"}, "3": {"3.m"}}
    assert run(M, P, small).structure.same_as(run(M, P, big).structure)
