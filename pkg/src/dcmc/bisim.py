"""Greatest (Var, Agt)-bisimulations between two Kripke structures.

The relation is a boolean matrix over (world of M, world of N).  It starts
as agreement on the chosen variables and is shrunk in bulk rounds: a pair
survives a round only if, for every chosen agent, the pair's two classes
match each other in both directions under the current relation.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .formula import Evaluator, Formula
from .kripke import FitnessError, KripkeStructure, refine


@dataclass(eq=False)
class BisimRelation:
    matrix: np.ndarray
    variables: tuple
    agents: tuple
    rounds: int = 0

    @property
    def left_total(self) -> bool:
        return bool(self.matrix.any(axis=1).all())

    @property
    def right_total(self) -> bool:
        return bool(self.matrix.any(axis=0).all())

    @property
    def total(self) -> bool:
        return self.left_total and self.right_total

    def __len__(self):
        return int(self.matrix.sum())

    def __contains__(self, pair) -> bool:
        w, u = pair
        return bool(self.matrix[w, u])

    def pairs(self) -> list[tuple[int, int]]:
        return [(int(w), int(u)) for w, u in np.argwhere(self.matrix)]

    def to_dict(self) -> dict:
        return {
            "variables": list(self.variables),
            "agents": list(self.agents),
            "pairs": [list(p) for p in self.pairs()],
            "left_total": self.left_total,
            "right_total": self.right_total,
            "rounds": self.rounds,
        }


def _check_fit(M: KripkeStructure, N: KripkeStructure, variables, agents):
    for S, label in ((M, "first"), (N, "second")):
        for v in variables:
            if not S.has_variable(v):
                raise FitnessError(f"variable {v!r} missing from the {label} structure")
        for a in agents:
            if a not in S.agents:
                raise FitnessError(f"agent {a!r} missing from the {label} structure")


def _grouped(a: np.ndarray, classes: np.ndarray, axis: int, ufunc) -> np.ndarray:
    # classes are dense and numbered 0..k-1, so sorted order is class order
    order = np.argsort(classes, kind="stable")
    starts = np.flatnonzero(np.r_[True, np.diff(classes[order]) != 0])
    return ufunc.reduceat(np.take(a, order, axis=axis), starts, axis=axis)


def atom_agreement(M: KripkeStructure, N: KripkeStructure, variables: Sequence[str]) -> np.ndarray:
    """Pairs of worlds agreeing on every variable in ``variables``."""
    joint = np.zeros(M.num_worlds + N.num_worlds, dtype=np.int64)
    joint = refine(joint, [np.concatenate([M.column(v), N.column(v)]) for v in variables])
    return joint[: M.num_worlds, None] == joint[None, M.num_worlds:]


def greatest_bisimulation(
    M: KripkeStructure,
    N: KripkeStructure,
    variables: Iterable[str],
    agents: Iterable[str],
) -> BisimRelation:
    variables = tuple(variables)
    agents = tuple(agents)
    _check_fit(M, N, variables, agents)
    R = atom_agreement(M, N, variables)
    rounds = 0
    while True:
        rounds += 1
        keep = np.ones_like(R)
        for a in agents:
            cM, cN = M.classes(a), N.classes(a)
            # forth: every w2 ~ w has a partner in u's class
            reach = _grouped(R, cN, 1, np.logical_or)
            forth = _grouped(reach, cM, 0, np.logical_and)
            # back: every u2 ~ u has a partner in w's class
            reach = _grouped(R, cM, 0, np.logical_or)
            back = _grouped(reach, cN, 1, np.logical_and)
            keep &= (forth & back)[np.ix_(cM, cN)]
        R_next = R & keep
        if np.array_equal(R_next, R):
            break
        R = R_next
    return BisimRelation(R, variables, agents, rounds)


def are_bisimilar(M, N, variables, agents) -> bool:
    return greatest_bisimulation(M, N, variables, agents).total


def bisimulation_violation(M, N, matrix, variables, agents):
    """First reason ``matrix`` is not a (variables, agents)-bisimulation, or ``None``.

    Works pair by pair straight from the definition; it shares no code with
    the fixpoint above and serves as its independent check.
    """
    matrix = np.asarray(matrix, dtype=bool)
    variables, agents = tuple(variables), tuple(agents)
    _check_fit(M, N, variables, agents)
    members_M = {a: [np.flatnonzero(M.classes(a) == c) for c in range(M.num_classes(a))] for a in agents}
    members_N = {a: [np.flatnonzero(N.classes(a) == c) for c in range(N.num_classes(a))] for a in agents}
    for w, u in np.argwhere(matrix):
        for v in variables:
            if M.column(v)[w] != N.column(v)[u]:
                return ("atoms", int(w), int(u), v)
        for a in agents:
            ws = members_M[a][M.classes(a)[w]]
            us = members_N[a][N.classes(a)[u]]
            block = matrix[np.ix_(ws, us)]
            if not block.any(axis=1).all():
                w2 = ws[np.argmin(block.any(axis=1))]
                return ("forth", int(w), int(u), a, int(w2))
            if not block.any(axis=0).all():
                u2 = us[np.argmin(block.any(axis=0))]
                return ("back", int(w), int(u), a, int(u2))
    return None


def is_bisimulation(M, N, matrix, variables, agents) -> bool:
    return bisimulation_violation(M, N, matrix, variables, agents) is None


def check_preservation(
    M: KripkeStructure,
    N: KripkeStructure,
    relation: BisimRelation | np.ndarray,
    formulas: Sequence[Formula],
) -> list[tuple[int, int, int]]:
    """Return ``(formula index, w, u)`` for related pairs that disagree on a formula.

    An empty list is the expected outcome for any genuine bisimulation.
    """
    matrix = relation.matrix if isinstance(relation, BisimRelation) else np.asarray(relation, bool)
    eM, eN = Evaluator(M), Evaluator(N)
    out = []
    for k, f in enumerate(formulas):
        vm, vn = eM(f), eN(f)
        bad = matrix & (vm[:, None] != vn[None, :])
        for w, u in np.argwhere(bad)[:1]:
            out.append((k, int(w), int(u)))
    return out
