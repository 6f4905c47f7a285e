"""Multi-agent programs over boolean variables and their effect on Kripke structures.

A program is a sequence of joint actions.  Running a joint action ``A`` on a
structure ``M`` yields ``M[A]``: every world is extended by all assignments
to the variables ``A`` randomises, the other written variables are computed
from the base world, and each agent's partition is refined by agreement on
the variables that ``A`` makes newly observable to it.

Programs can carry checkpoints (formulas asserted valid at a position) and
markers recording where Dining Cryptographers instances sit, so that
``dcmc.dc.abstract_program`` can swap them out.
"""

from __future__ import annotations

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Iterable, Iterator, Mapping

import numpy as np

from .formula import (
    Evaluator,
    Formula,
    FormulaSyntaxError,
    Knows,
    MacroContext,
    Parser,
    atoms,
    is_propositional,
    owner,
    to_text,
)
from .kripke import KripkeStructure, find_inconsistency, refine

log = logging.getLogger(__name__)

ObservabilityMap = Mapping[str, frozenset]


class NotEnabledError(ValueError):
    """A program or action is not enabled; ``condition`` is 1, 2 or 3."""

    def __init__(self, condition: int, detail: str, step: int | None = None):
        where = f" at step {step}" if step is not None else ""
        super().__init__(f"condition {condition} violated{where}: {detail}")
        self.condition = condition
        self.detail = detail
        self.step = step


class DoubleWriteError(ValueError):
    pass


class ResourceExhausted(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# actions


@dataclass(frozen=True)
class Assign:
    agent: str
    target: str
    expr: Formula

    def __post_init__(self):
        if owner(self.target) != self.agent:
            raise ValueError(f"agent {self.agent} cannot assign {self.target}")

    @property
    def reads(self) -> frozenset:
        return frozenset(atoms(self.expr))

    @property
    def writes(self) -> tuple:
        return (self.target,)

    def __str__(self):
        return f"{self.agent}: {self.target} := {to_text(self.expr)}"


@dataclass(frozen=True)
class Rand:
    agent: str
    target: str

    def __post_init__(self):
        if owner(self.target) != self.agent:
            raise ValueError(f"agent {self.agent} cannot randomise {self.target}")

    reads = frozenset()

    @property
    def writes(self) -> tuple:
        return (self.target,)

    def __str__(self):
        return f"{self.agent}: rand({self.target})"


@dataclass(frozen=True)
class Send:
    agent: str
    expr: Formula
    target: str

    @property
    def receiver(self) -> str:
        return owner(self.target)

    @property
    def reads(self) -> frozenset:
        return frozenset(atoms(self.expr))

    @property
    def writes(self) -> tuple:
        return (self.target,)

    def __str__(self):
        return f"{self.agent}: {to_text(self.expr)} -> {self.target}"


@dataclass(frozen=True)
class Broadcast:
    agent: str
    var: str

    def __post_init__(self):
        if owner(self.var) != self.agent:
            raise ValueError(f"agent {self.agent} cannot broadcast {self.var}")

    @property
    def reads(self) -> frozenset:
        return frozenset((self.var,))

    writes = ()

    def __str__(self):
        return f"{self.agent}: broadcast({self.var})"


AtomicAction = Assign | Rand | Send | Broadcast


@dataclass(frozen=True)
class JointAction:
    actions: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "actions", tuple(self.actions))
        seen = set()
        for a in self.actions:
            for v in a.writes:
                if v in seen:
                    raise DoubleWriteError(f"variable {v} written twice in one joint action")
                seen.add(v)

    def __iter__(self):
        return iter(self.actions)

    def __len__(self):
        return len(self.actions)

    @property
    def writes(self) -> tuple:
        return tuple(v for a in self.actions for v in a.writes)

    @property
    def reads(self) -> frozenset:
        return frozenset().union(*(a.reads for a in self.actions)) if self.actions else frozenset()

    @property
    def agents(self) -> tuple:
        seen = dict.fromkeys(a.agent for a in self.actions)
        for a in self.actions:
            if isinstance(a, Send):
                seen.setdefault(a.receiver)
        return tuple(seen)

    @property
    def randomised(self) -> tuple:
        return tuple(a.target for a in self.actions if isinstance(a, Rand))

    def __str__(self):
        return "step { " + " ; ".join(str(a) for a in self.actions) + " }"


# ---------------------------------------------------------------------------
# programs


@dataclass(frozen=True)
class Assertion:
    """A formula to check for validity.

    ``operands`` lists ``Knows`` sub-formulas whose distinguishing worlds
    should be reported when the assertion fails.
    """

    name: str
    formula: Formula
    operands: tuple = ()
    meta: tuple = ()


@dataclass(frozen=True)
class Checkpoint:
    position: int
    label: str
    assertions: tuple


@dataclass(frozen=True)
class DcBlock:
    """Marks steps ``start .. start+length`` as DC instance ``instance``."""

    start: int
    length: int
    instance: int
    kind: str
    agents: tuple
    messages: tuple
    graph: object = None


@dataclass(frozen=True)
class Program:
    steps: tuple = ()
    checkpoints: tuple = ()
    blocks: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "steps", tuple(self.steps))
        object.__setattr__(self, "checkpoints", tuple(self.checkpoints))
        object.__setattr__(self, "blocks", tuple(self.blocks))
        for c in self.checkpoints:
            if not 0 <= c.position <= len(self.steps):
                raise ValueError(f"checkpoint {c.label!r} outside the program")

    def __len__(self):
        return len(self.steps)

    @property
    def agents(self) -> tuple:
        seen: dict = {}
        for A in self.steps:
            seen.update(dict.fromkeys(A.agents))
        return tuple(seen)

    @property
    def writes(self) -> tuple:
        return tuple(v for A in self.steps for v in A.writes)

    def then(self, *others: "Program") -> "Program":
        steps, checks, blocks = list(self.steps), list(self.checkpoints), list(self.blocks)
        for p in others:
            off = len(steps)
            steps += p.steps
            checks += [replace(c, position=c.position + off) for c in p.checkpoints]
            blocks += [replace(b, start=b.start + off) for b in p.blocks]
        return Program(steps, checks, blocks)

    def with_checkpoint(self, label: str, assertions: Iterable[Assertion], position: int | None = None) -> "Program":
        pos = len(self.steps) if position is None else position
        return replace(self, checkpoints=self.checkpoints + (Checkpoint(pos, label, tuple(assertions)),))

    def truncate(self, length: int) -> "Program":
        """First ``length`` steps, keeping checkpoints and whole blocks inside them."""
        return Program(
            self.steps[:length],
            [c for c in self.checkpoints if c.position <= length],
            [b for b in self.blocks if b.start + b.length <= length],
        )

    def __str__(self):
        lines = []
        by_pos: dict = {}
        for c in self.checkpoints:
            by_pos.setdefault(c.position, []).append(c)
        for k in range(len(self.steps) + 1):
            for c in by_pos.get(k, []):
                asserts = " ".join(f"assert {to_text(a.formula)}" for a in c.assertions)
                lines.append(f'checkpoint "{c.label}" {asserts}')
            if k < len(self.steps):
                lines.append(str(self.steps[k]))
        return "\n".join(lines)


def concat(*programs: Program) -> Program:
    if not programs:
        return Program()
    return programs[0].then(*programs[1:])


# ---------------------------------------------------------------------------
# observability


def enabledness_violation(A: JointAction, ov: ObservabilityMap) -> tuple[int, str] | None:
    """First violated enabledness condition of ``A`` at ``ov`` as ``(condition, detail)``."""
    observed = set().union(*ov.values()) if ov else set()
    for v in A.writes:
        if v in observed:
            return 1, f"{v} is already observable"
    for a in A.actions:
        if isinstance(a, (Assign, Send)):
            hidden = sorted(a.reads - set(ov.get(a.agent, ())))
            if hidden:
                return 2, f"{a} reads {', '.join(hidden)} not observable to {a.agent}"
        elif isinstance(a, Broadcast) and a.var not in ov.get(a.agent, ()):
            return 3, f"{a.agent} broadcasts {a.var} which it does not observe"
    return None


def enabled_at_ov(A: JointAction, ov: ObservabilityMap) -> bool:
    return enabledness_violation(A, ov) is None


def apply_ov(ov: ObservabilityMap, A: JointAction, agents: Iterable[str] | None = None) -> dict:
    """``ov[A]``: writes become visible to writer/receiver, broadcasts to everyone."""
    reason = enabledness_violation(A, ov)
    if reason is not None:
        raise NotEnabledError(*reason)
    agents = list(dict.fromkeys([*(agents or ()), *ov, *A.agents]))
    out = {a: set(ov.get(a, ())) for a in agents}
    for act in A.actions:
        if isinstance(act, (Assign, Rand)):
            out[act.agent].add(act.target)
        elif isinstance(act, Send):
            out[act.receiver].add(act.target)
    for act in A.actions:
        if isinstance(act, Broadcast):
            for a in agents:
                out[a].add(act.var)
    return {a: frozenset(v) for a, v in out.items()}


def canonical_ov(M: KripkeStructure) -> dict:
    """Each agent observes its own variables that are constant on its classes."""
    ov = {a: set() for a in M.agents}
    for v in M.variables:
        a = v.partition(".")[0]
        if a in ov:
            ov[a].add(v)
    out = {}
    for a, vs in ov.items():
        keep = set()
        for v in vs:
            if find_inconsistency(M, {a: {v}}) is None:
                keep.add(v)
        out[a] = frozenset(keep)
    return out


def enabled_at_structure(P: Program, M: KripkeStructure, ov: ObservabilityMap | None = None) -> dict:
    """Observability map at which ``P`` is enabled from ``M``; raises ``NotEnabledError``."""
    if ov is None:
        ov = canonical_ov(M)
    else:
        bad = find_inconsistency(M, ov)
        if bad is not None:
            raise NotEnabledError(1, f"observability map inconsistent with structure at {bad}")
        ov = {a: frozenset(v) for a, v in ov.items()}
    for v in P.writes:
        if M.has_variable(v):
            raise NotEnabledError(3, f"program writes {v}, which is already defined")
    current = dict(ov)
    for k, A in enumerate(P.steps):
        reason = enabledness_violation(A, current)
        if reason is not None:
            raise NotEnabledError(*reason, step=k)
        current = apply_ov(current, A, M.agents)
    return ov


# ---------------------------------------------------------------------------
# semantics


def _repeater(factor: int):
    cache: dict = {}

    def rep(a: np.ndarray) -> np.ndarray:
        if factor == 1:
            return a
        hit = cache.get(id(a))
        if hit is None:
            hit = np.repeat(a, factor)
            hit.flags.writeable = False
            cache[id(a)] = (hit, a)
            return hit
        return hit[0]

    return rep


def step(M: KripkeStructure, ov: ObservabilityMap, A: JointAction, check: bool = True):
    """Return ``(M[A], ov[A])``.

    Worlds of ``M[A]`` are ordered base world first, then the random
    assignment read as a little-endian number over ``A.randomised``.
    """
    if check:
        reason = enabledness_violation(A, ov)
        if reason is not None:
            raise NotEnabledError(*reason)
        for v in A.writes:
            if M.has_variable(v):
                raise NotEnabledError(3, f"{v} is already defined")
    for a in A.agents:
        M.classes(a)
    rands = A.randomised
    factor = 1 << len(rands)
    rep = _repeater(factor)
    ev = Evaluator(M)
    columns = {name: rep(col) for name, col in M.columns().items()}
    for act in A.actions:
        if isinstance(act, (Assign, Send)):
            columns[act.target] = rep(ev(act.expr))
    kappa = np.arange(factor, dtype=np.int64)
    for j, name in enumerate(rands):
        col = np.tile(((kappa >> j) & 1).astype(bool), M.num_worlds)
        col.flags.writeable = False
        columns[name] = col
    ov_next = apply_ov(ov, A, M.agents)
    partitions = {}
    for agent in M.agents:
        fresh = sorted(ov_next.get(agent, frozenset()) - set(ov.get(agent, ())))
        base = M.classes(agent)
        if factor > 1:
            base = np.repeat(base, factor)
        partitions[agent] = refine(base, [columns[v] for v in fresh])
    M_next = KripkeStructure(M.agents, columns, partitions, M.num_worlds * factor)
    return M_next, ov_next


def perfect_recall_violation(M: KripkeStructure, M_next: KripkeStructure):
    """First ``(agent, w, w2)`` related in ``M_next`` whose base worlds are unrelated in ``M``.

    ``M_next`` must come from ``step`` applied to ``M``, so world ``w`` of it
    extends base world ``w // factor``.
    """
    factor, rest = divmod(M_next.num_worlds, M.num_worlds)
    if rest or factor < 1:
        raise ValueError("second structure is not an extension of the first")
    base = np.arange(M_next.num_worlds) // factor
    for agent in M.agents:
        new = M_next.classes(agent)
        old = M.classes(agent)[base]
        # each new class must sit inside one old class
        first = np.full(M_next.num_classes(agent), -1, dtype=np.int64)
        first[new[::-1]] = np.arange(M_next.num_worlds)[::-1]
        bad = np.flatnonzero(old != old[first[new]])
        if len(bad):
            w2 = int(bad[0])
            return agent, int(first[new[w2]]), w2
    return None


def trace(
    M: KripkeStructure,
    P: Program,
    ov: ObservabilityMap | None = None,
    max_worlds: int | None = None,
) -> Iterator[tuple[int, KripkeStructure, dict]]:
    """Yield ``(position, structure, ov)`` before the first step and after each one.

    Agents the program mentions but ``M`` lacks are added observing nothing.
    """
    M = M.with_agents(P.agents)
    ov = enabled_at_structure(P, M, ov)
    ov = {a: ov.get(a, frozenset()) for a in M.agents}
    yield 0, M, ov
    for k, A in enumerate(P.steps):
        grown = M.num_worlds << len(A.randomised)
        if max_worlds is not None and grown > max_worlds:
            raise ResourceExhausted(f"step {k} would create {grown} worlds (limit {max_worlds})")
        M, ov = step(M, ov, A, check=False)
        yield k + 1, M, ov


@dataclass
class AssertionResult:
    checkpoint: str
    position: int
    name: str
    holds: bool
    witness: int | None = None
    witness_valuation: dict | None = None
    witness_pairs: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)


@dataclass
class RunResult:
    structure: KripkeStructure
    ov: dict
    results: list
    world_counts: list
    timings: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(r.holds for r in self.results)

    def failures(self) -> list:
        return [r for r in self.results if not r.holds]


def knowledge_witness(M: KripkeStructure, ev: Evaluator, w: int, k: Knows) -> tuple:
    """``(agent, w, w2, knows)``: a world ``w2 ~ w`` refuting the operand, or confirming it."""
    members = np.flatnonzero(M.classes(k.agent) == M.classes(k.agent)[w])
    body = ev(k.body)[members]
    knows = bool(body.all())
    w2 = int(members[0]) if knows else int(members[np.argmin(body)])
    return k.agent, int(w), w2, knows


def check_assertion(M: KripkeStructure, ev: Evaluator, label: str, position: int, a: Assertion) -> AssertionResult:
    values = ev(a.formula)
    result = AssertionResult(label, position, a.name, bool(values.all()), meta=dict(a.meta))
    if not result.holds:
        w = int(np.argmin(values))
        result.witness = w
        result.witness_valuation = M.valuation(w)
        result.witness_pairs = [knowledge_witness(M, ev, w, k) for k in a.operands]
    return result


def run(
    M0: KripkeStructure,
    P: Program,
    ov: ObservabilityMap | None = None,
    max_worlds: int | None = None,
    jobs: int = 1,
    on_step=None,
) -> RunResult:
    """Run ``P`` from ``M0`` checking every checkpoint on the intermediate structure.

    ``on_step(position, structure)`` is called for every intermediate
    structure, including the initial one.
    """
    by_pos: dict = {}
    for c in P.checkpoints:
        by_pos.setdefault(c.position, []).append(c)
    results, counts = [], []
    timings = {"steps": 0.0, "checks": 0.0}
    pool = ThreadPoolExecutor(jobs) if jobs > 1 else None
    try:
        M, final_ov = M0, None
        steps = trace(M0, P, ov, max_worlds)
        while True:
            t0 = time.perf_counter()
            try:
                pos, M, final_ov = next(steps)
            except StopIteration:
                break
            t1 = time.perf_counter()
            timings["steps"] += t1 - t0
            counts.append(M.num_worlds)
            if on_step is not None:
                on_step(pos, M)
            if pos not in by_pos:
                continue
            ev = Evaluator(M)
            tasks = [(c.label, a) for c in by_pos[pos] for a in c.assertions]
            log.debug("checkpoint at %d: %d assertions over %d worlds", pos, len(tasks), M.num_worlds)
            if pool is None:
                results += [check_assertion(M, ev, lab, pos, a) for lab, a in tasks]
            else:
                futures = [pool.submit(check_assertion, M, ev, lab, pos, a) for lab, a in tasks]
                results += [f.result() for f in futures]
            timings["checks"] += time.perf_counter() - t1
    finally:
        if pool is not None:
            pool.shutdown()
    return RunResult(M, final_ov, results, counts, timings)


# ---------------------------------------------------------------------------
# concrete syntax


_RESERVED = {"step", "checkpoint", "assert", "rand", "broadcast"}


class ProgramParser(Parser):
    def program(self) -> Program:
        steps, checks = [], []
        while self.tok.kind != "eof":
            if self.accept("step"):
                steps.append(self.joint_action())
            elif self.accept("checkpoint"):
                if self.tok.kind != "str":
                    self.error("expected a quoted checkpoint label")
                label = self.tok.text[1:-1]
                self.pos += 1
                assertions = []
                while self.accept("assert"):
                    saved, self.owner = self.owner, None
                    f = self.formula()
                    self.owner = saved
                    assertions.append(Assertion(f"{label}#{len(assertions) + 1}", f))
                if not assertions:
                    self.error("checkpoint needs at least one 'assert'")
                checks.append(Checkpoint(len(steps), label, tuple(assertions)))
            else:
                self.error(f"expected 'step' or 'checkpoint', found {self.tok.text!r}")
        return Program(steps, checks)

    def joint_action(self) -> JointAction:
        start = self.tok
        self.expect("{")
        actions = []
        while not self.at("}"):
            actions.append(self.atomic())
            if not self.accept(";"):
                break
        self.expect("}")
        try:
            return JointAction(actions)
        except DoubleWriteError as exc:
            raise DoubleWriteError(f"{exc} (line {start.line}, column {start.col})") from None

    def atomic(self) -> AtomicAction:
        agent = self.agent()
        self.expect(":")
        self.owner = agent
        try:
            tok = self.tok
            if self.at("rand") and self.peek().text == "(":
                self.pos += 2
                target = self.variable()
                self.expect(")")
                return self._build(Rand, tok, agent, target)
            if self.at("broadcast") and self.peek().text == "(":
                self.pos += 2
                var = self.variable()
                self.expect(")")
                return self._build(Broadcast, tok, agent, var)
            saved = self.pos
            if self.tok.kind in ("name", "int") and self.tok.text not in _RESERVED:
                try:
                    target = self.variable()
                except FormulaSyntaxError:
                    target = None
                if target is not None and self.accept(":="):
                    return self._build(Assign, tok, agent, target, self.formula())
                self.pos = saved
            expr = self.formula()
            self.expect("->")
            if self.tok.kind not in ("name", "int") or self.peek().text != ".":
                self.error("send target must be qualified as agent.variable")
            target = self.variable()
            return Send(agent, expr, target)
        finally:
            self.owner = None

    def _build(self, cls, tok, *args):
        try:
            return cls(*args)
        except ValueError as exc:
            self.error(str(exc), tok)


def parse_program(text: str, ctx: MacroContext | None = None) -> Program:
    """Parse the step/checkpoint program language.

    Inside an action ``i: ...`` unqualified names refer to agent ``i``'s
    variables.  Checkpoint formulas must qualify every variable.
    """
    return ProgramParser(text, ctx).program()


def parse_expression(text: str, agent: str, ctx: MacroContext | None = None) -> Formula:
    """Parse a propositional expression from ``agent``'s point of view."""
    f = Parser(text, ctx, agent).parse()
    if not is_propositional(f):
        raise FormulaSyntaxError("expressions may not contain knowledge operators")
    return f
