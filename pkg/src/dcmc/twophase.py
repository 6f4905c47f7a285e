"""Two-phase anonymous broadcast built from Dining Cryptographers rounds.

Every agent ``i`` starts with ``i.slot_request`` (``0..n``, stored as
little-endian bits ``i.slot_request[b]``) and a one-bit ``i.message``.  The
reservation phase runs one DC round per slot announcing
``slot_request == s``; the transmission phase, for each slot ``s``, first
sets ``i.kc[s]`` from a candidate predicate and then runs a DC round
announcing ``slot_request == s & kc[s] & message``.  At the end the
candidate predicates for ``rcvd0``, ``rcvd1``, ``dlvrd`` and optionally
``conflict_free[s]`` are assigned.

A candidate implementation is checked by asserting, at the right program
points, that each predicate is equivalent to the knowledge condition it
stands for.
"""

from __future__ import annotations

import itertools
import json
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .formula import (
    And,
    Atom,
    Formula,
    Iff,
    Implies,
    Knows,
    KnowsWhether,
    MacroContext,
    Not,
    conj,
    disj,
    expand_conflict,
    expand_sender,
    literal,
    parse_formula,
    qualify,
    slot_equals,
)
from .kripke import KripkeStructure, build_structure
from .lang import Assertion, Assign, JointAction, Program, RunResult, run
from .dc import KeyGraph, abstract_program, build_dc, ring

SPECS = ("1", "2a", "2b", "3", "4", "cf")
# "3s" restricts Spec 3 to agents that request a slot; diagnostic only
EXTRA_SPECS = ("3s",)


def agents_for(n: int) -> tuple:
    return tuple(str(i) for i in range(1, n + 1))


def context(n: int, strength: str = "strong") -> MacroContext:
    return MacroContext(n, strength)


# ---------------------------------------------------------------------------
# initial structure


def build_initial(n: int) -> tuple[KripkeStructure, dict]:
    """All combinations of slot request and message per agent; each agent sees its own."""
    if n < 2:
        raise ValueError("two-phase protocol needs at least 2 agents")
    ctx = context(n)
    agents = agents_for(n)
    names, own = [], {}
    for a in agents:
        vs = ctx.slot_bits(a) + [qualify(a, "message")]
        names += vs
        own[a] = vs
    per_agent = []
    for sr in range(n + 1):
        for m in (0, 1):
            per_agent.append([(sr >> b) & 1 for b in range(ctx.width)] + [m])
    rows = [sum(choice, []) for choice in itertools.product(per_agent, repeat=n)]
    M = build_structure(agents, names, rows, own, dedup=False)
    return M, {a: frozenset(v) for a, v in own.items()}


# ---------------------------------------------------------------------------
# candidates


@dataclass
class CandidateImpl:
    """Agent-relative predicate texts; ``kc`` and ``conflict_free`` have one entry per slot."""

    name: str
    kc: list
    rcvd0: str
    rcvd1: str
    dlvrd: str
    conflict_free: list | None = None

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Mapping, n: int | None = None) -> "CandidateImpl":
        """Per-slot entries may be a list or one template using ``{s}``, ``{n}`` and ``{t}`` (= n+s)."""

        def per_slot(value):
            if value is None or isinstance(value, list):
                return value
            if n is None:
                raise ValueError("a per-slot template needs n")
            return [value.format(s=s, n=n, t=n + s) for s in range(1, n + 1)]

        return cls(
            data.get("name", "custom"),
            per_slot(data["kc"]),
            data["rcvd0"],
            data["rcvd1"],
            data["dlvrd"],
            per_slot(data.get("conflict_free")),
        )

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))

    @classmethod
    def load(cls, path, n: int | None = None) -> "CandidateImpl":
        return cls.from_dict(json.loads(Path(path).read_text()), n)


def initial_candidate(n: int) -> CandidateImpl:
    """Every predicate guessed as ``false``."""
    return CandidateImpl("initial", ["false"] * n, "false", "false", "false", ["false"] * n)


def _c0(*xs) -> str:
    return "(" + " | ".join(f"C0 == {x}" for x in xs) + ")"


def final_candidate(n: int, strength: str = "strong") -> CandidateImpl:
    slots = range(1, n + 1)
    kc = [f"!(slot_request == {s} & rr[{s}] == 0)" for s in slots]
    cf = []
    for s in slots:
        others = [t for t in slots if t != s]
        clash = " | ".join(f"(slot_request == {t} & rr[{t}] == 0)" for t in others) or "false"
        jammed = " | ".join(
            f"(slot_request == {t} & rr[{t}] == 1 & rr[{n + t}] != message)" for t in others
        ) or "false"
        cf.append(
            f"{_c0(0)} | {_c0(1)} | ({_c0(2)} & slot_request == 0)"
            f" | ({_c0(2, 3)} & ({clash})) | ({_c0(2, 3)} & ({jammed}))"
        )
    if strength == "strong":
        def rcvd(x):
            return " | ".join(
                f"(slot_request != {s} & rr[{s}] == 1 & rr[{n + s}] == {x})"
                f" | (slot_request == {s} & rr[{s}] == 1 & rr[{n + s}] != message)"
                for s in slots
            )

        pairs = list(itertools.combinations(slots, 2))

        def same(x):
            neg = "" if x else "!"
            return " | ".join(
                f"(rr[{s}] & rr[{t}] & {neg}rr[{n + s}] & {neg}rr[{n + t}])" for s, t in pairs
            ) or "false"

        dlvrd = (
            f"(slot_request != 0 & {_c0(0, 1)})"
            f" | (slot_request != 0 & message == 1 & ({same(1)}))"
            f" | (slot_request != 0 & message == 0 & ({same(0)}))"
        )
    elif strength == "weak":
        def rcvd(x):
            seen = " | ".join(f"(rr[{s}] == 1 & rr[{n + s}] == {x})" for s in slots)
            return f"(slot_request != 0 & message == {x}) | {seen}"

        dlvrd = "slot_request != 0 & (" + " | ".join(
            f"(rr[{s}] == 1 & rr[{n + s}] == message)" for s in slots
        ) + ")"
    else:
        raise ValueError(f"unknown strength {strength!r}")
    return CandidateImpl(f"final-{strength}", kc, rcvd(0), rcvd(1), dlvrd, cf)


def resolve_candidate(spec: str | CandidateImpl, n: int, strength: str = "strong") -> CandidateImpl:
    """``initial``, ``final`` or ``file:PATH``."""
    if isinstance(spec, CandidateImpl):
        return spec
    if spec == "initial":
        return initial_candidate(n)
    if spec == "final":
        return final_candidate(n, strength)
    if spec.startswith("file:"):
        return CandidateImpl.load(spec[5:], n)
    raise ValueError(f"unknown candidate {spec!r}")


# ---------------------------------------------------------------------------
# specifications


def _var(i: str, base: str, index: int | None = None) -> Atom:
    return Atom(qualify(i, base, index))


def _sends_spec(ctx: MacroContext, i: str, x: int) -> Formula:
    others = [j for j in ctx.agents if j != i]
    return Knows(i, conj(Knows(j, expand_sender(j, x, ctx)) for j in others))


def spec_formulas(n: int, spec: str, i: str, s: int | None = None, strength: str = "strong") -> Formula:
    """Equivalence asserted for agent ``i`` (and slot ``s`` for specs ``1`` and ``cf``)."""
    ctx = context(n, strength)
    if i not in ctx.agents:
        raise ValueError(f"agent {i!r} outside 1..{n}")
    if spec in ("1", "cf") and (s is None or not 1 <= s <= n):
        raise ValueError(f"spec {spec} needs a slot in 1..{n}")
    if spec == "1":
        return Iff(_var(i, "kc", s), Not(Knows(i, expand_conflict(s, ctx))))
    if spec == "cf":
        return Iff(_var(i, "conflict_free", s), Knows(i, Not(expand_conflict(s, ctx))))
    if spec in ("2a", "2b"):
        x = 0 if spec == "2a" else 1
        return Iff(_var(i, f"rcvd{x}"), Knows(i, expand_sender(i, x, ctx)))
    if spec == "2":
        return And(spec_formulas(n, "2a", i, s, strength), spec_formulas(n, "2b", i, s, strength))
    if spec == "3":
        sending = Not(slot_equals(i, 0, ctx))
        rhs = conj(
            Implies(And(literal(qualify(i, "message"), x), sending), _sends_spec(ctx, i, x))
            for x in (0, 1)
        )
        return Iff(_var(i, "dlvrd"), rhs)
    if spec == "3s":
        # only meaningful for agents that do try to send
        return Implies(Not(slot_equals(i, 0, ctx)), spec_formulas(n, "3", i, s, strength))
    if spec == "4":
        others = [j for j in ctx.agents if j != i]
        uniform = disj(Knows(i, conj(literal(qualify(j, "message"), x) for j in others)) for x in (0, 1))
        ignorant = conj(Not(KnowsWhether(i, _var(j, "message"))) for j in others)
        return disj([uniform, ignorant])
    raise ValueError(f"unknown specification {spec!r}")


def self_sender_formula(n: int, i: str, x: int) -> Formula:
    """Under weak reception a sending agent always knows someone sends its bit."""
    ctx = context(n, "weak")
    sending = And(literal(qualify(i, "message"), x), Not(slot_equals(i, 0, ctx)))
    return Implies(sending, Knows(i, expand_sender(i, x, ctx)))


def _operands(f: Formula) -> tuple:
    """Outermost knowledge sub-formulas, reported as witnesses on failure."""
    out = []

    def walk(g):
        if isinstance(g, Knows):
            out.append(g)
            return
        for child in getattr(g, "args", None) or [getattr(g, a) for a in ("left", "right", "body") if hasattr(g, a)]:
            walk(child)

    walk(f)
    return tuple(dict.fromkeys(out))


def spec_assertion(n: int, spec: str, i: str, s: int | None = None, strength: str = "strong") -> Assertion:
    f = spec_formulas(n, spec, i, s, strength)
    meta = (("spec", spec), ("agent", i), ("slot", s))
    label = f"spec{spec}[agent {i}" + (f", slot {s}]" if s is not None else "]")
    return Assertion(label, f, _operands(f), meta)


# ---------------------------------------------------------------------------
# program generation


def _assignments(texts: Mapping[tuple, str], ctx: MacroContext) -> JointAction:
    """One joint step assigning ``i.base[index] := text`` (parsed as agent ``i``) for every agent."""
    actions = []
    for i in ctx.agents:
        for (base, index), text in texts.items():
            actions.append(Assign(i, qualify(i, base, index), parse_formula(text, ctx, owner=i)))
    return JointAction(actions)


def build_program(
    n: int,
    cand: CandidateImpl,
    mode: str = "abstract",
    strength: str = "strong",
    rounds: int | None = None,
    graph: KeyGraph | None = None,
    specs: Iterable[str] = SPECS,
) -> Program:
    """The generic implementation with the candidate's predicates filled in.

    With ``rounds`` set, the program stops after that many DC rounds and only
    Spec 4 (plus any Spec 1 checkpoints already passed) is checked at the end.
    """
    if mode not in ("concrete", "abstract"):
        raise ValueError(f"unknown mode {mode!r}")
    if rounds is not None and not 0 <= rounds <= 2 * n:
        raise ValueError(f"rounds must lie in 0..{2 * n}")
    specs = set(specs)
    if "2" in specs:
        specs |= {"2a", "2b"}
    ctx = context(n, strength)
    agents = ctx.agents
    g = graph if graph is not None else ring(n)
    if tuple(g.agents) != agents:
        raise ValueError("key graph must be over agents 1..n")
    if len(cand.kc) != n or (cand.conflict_free is not None and len(cand.conflict_free) != n):
        raise ValueError("candidate needs one kc/conflict_free entry per slot")

    parts = []
    for s in range(1, n + 1):
        parts.append(build_dc(g, {i: slot_equals(i, s, ctx) for i in agents}, s))
    for s in range(1, n + 1):
        guess = Program([_assignments({("kc", s): cand.kc[s - 1]}, ctx)])
        if "1" in specs:
            guess = guess.with_checkpoint(
                f"before transmission {s}", [spec_assertion(n, "1", i, s, strength) for i in agents]
            )
        parts.append(guess)
        msgs = {i: conj([slot_equals(i, s, ctx), _var(i, "kc", s), _var(i, "message")]) for i in agents}
        parts.append(build_dc(g, msgs, n + s))
    final = {("rcvd0", None): cand.rcvd0, ("rcvd1", None): cand.rcvd1, ("dlvrd", None): cand.dlvrd}
    if cand.conflict_free is not None:
        final.update({("conflict_free", s): cand.conflict_free[s - 1] for s in range(1, n + 1)})
    parts.append(Program([_assignments(final, ctx)]))
    P = parts[0].then(*parts[1:])
    if mode == "abstract":
        P = abstract_program(P)

    if rounds is not None:
        blocks = sorted(P.blocks, key=lambda b: b.start)
        end = blocks[rounds - 1].start + blocks[rounds - 1].length if rounds else 0
        P = P.truncate(end)
        if "4" in specs:
            P = P.with_checkpoint("end", [spec_assertion(n, "4", i, None, strength) for i in agents])
        return P

    checks = []
    for i in agents:
        for spec in ("2a", "2b", "3", "3s", "4"):
            if spec in specs:
                checks.append(spec_assertion(n, spec, i, None, strength))
        if "cf" in specs and cand.conflict_free is not None:
            checks += [spec_assertion(n, "cf", i, s, strength) for s in range(1, n + 1)]
    return P.with_checkpoint("end", checks) if checks else P


# ---------------------------------------------------------------------------
# checking


@dataclass
class SpecEntry:
    spec: str
    agent: str
    slot: int | None
    checkpoint: str
    position: int
    holds: bool
    witness: int | None = None
    witness_valuation: dict | None = None
    witness_pairs: list = field(default_factory=list)


@dataclass
class SpecReport:
    n: int
    mode: str
    strength: str
    candidate: str
    rounds: int | None
    entries: list
    world_counts: list
    timings: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(e.holds for e in self.entries)

    def failures(self) -> list:
        return [e for e in self.entries if not e.holds]

    def verdicts(self) -> dict:
        """Spec id -> whether every instance of it passed."""
        out: dict = {}
        for e in self.entries:
            out[e.spec] = out.get(e.spec, True) and e.holds
        return out

    def to_dict(self, timings: bool = True) -> dict:
        d = asdict(self)
        for e in d["entries"]:
            e["witness_pairs"] = [list(p) for p in e["witness_pairs"]]
        if not timings:
            d.pop("timings")
        return d

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_dict(), **kwargs)

    @classmethod
    def from_dict(cls, data: Mapping) -> "SpecReport":
        entries = [
            SpecEntry(**{**e, "witness_pairs": [list(p) for p in e["witness_pairs"]]}) for e in data["entries"]
        ]
        return cls(
            data["n"], data["mode"], data["strength"], data["candidate"], data["rounds"],
            entries, list(data["world_counts"]), dict(data.get("timings", {})),
        )

    @classmethod
    def from_json(cls, text: str) -> "SpecReport":
        return cls.from_dict(json.loads(text))


def report_from_run(result: RunResult, n, mode, strength, candidate, rounds) -> SpecReport:
    entries = []
    for r in result.results:
        meta = r.meta
        entries.append(SpecEntry(
            meta.get("spec", r.name), meta.get("agent", ""), meta.get("slot"), r.checkpoint, r.position,
            r.holds, r.witness, r.witness_valuation, [list(p) for p in r.witness_pairs],
        ))
    return SpecReport(n, mode, strength, candidate, rounds, entries, list(result.world_counts))


def check_implementation(
    n: int,
    cand: CandidateImpl | str = "final",
    strength: str = "strong",
    mode: str = "abstract",
    rounds: int | None = None,
    graph: KeyGraph | None = None,
    specs: Iterable[str] = SPECS,
    jobs: int = 1,
    max_worlds: int | None = None,
    on_step=None,
) -> SpecReport:
    cand = resolve_candidate(cand, n, strength)
    t0 = time.perf_counter()
    M, ov = build_initial(n)
    P = build_program(n, cand, mode, strength, rounds, graph, specs)
    t1 = time.perf_counter()
    result = run(M, P, ov, max_worlds=max_worlds, jobs=jobs, on_step=on_step)
    t2 = time.perf_counter()
    report = report_from_run(result, n, mode, strength, cand.name, rounds)
    report.timings = {"build": t1 - t0, "run": t2 - t1, **result.timings}
    return report


def run_structure(n: int, cand: CandidateImpl | str = "final", strength: str = "strong", mode: str = "abstract",
                  rounds: int | None = None, graph: KeyGraph | None = None) -> KripkeStructure:
    """Final structure of the implementation, without checkpoints."""
    cand = resolve_candidate(cand, n, strength)
    M, ov = build_initial(n)
    P = build_program(n, cand, mode, strength, rounds, graph, specs=())
    return run(M, P, ov).structure


def find_world(M: KripkeStructure, n: int, slot_requests: Sequence[int], messages: Sequence[int]) -> int:
    """The unique world of an abstract run with the given initial assignment."""
    ctx = context(n)
    assignment = {}
    for a, sr, m in zip(ctx.agents, slot_requests, messages):
        for b, v in enumerate(ctx.slot_bits(a)):
            assignment[v] = (sr >> b) & 1
        assignment[qualify(a, "message")] = m
    hits = M.find_worlds(assignment)
    if len(hits) != 1:
        raise ValueError(f"{len(hits)} worlds match the assignment")
    return int(hits[0])
