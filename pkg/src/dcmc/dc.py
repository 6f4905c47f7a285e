"""Dining Cryptographers rounds, their trusted-third-party abstraction, and tools
relating the two.

Program-generated variables use reserved base names starting with ``dc_``
and carry the instance number as an index:

* concrete round ``t``: ``i.dc_k<e>[t]`` (both copies of the key on edge ``e``)
  and ``i.dc_b[t]`` (the announced bit);
* abstract round ``t``: ``T.dc_x<i>[t]`` and ``T.dc_y[t]``;
* both: the round result ``i.rr[t]``.

Keeping the internals under one prefix is how the abstraction rewriter
checks that surrounding code never peeks at keys or announcements.
"""

from __future__ import annotations

import itertools
import json
from collections import deque
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .formula import (
    And,
    Atom,
    Evaluator,
    Formula,
    Implies,
    Knows,
    KnowsWhether,
    Not,
    Or,
    atoms,
    base_name,
    conj,
    qualify,
    xor,
)
from .kripke import KripkeStructure, build_structure
from .lang import (
    Assign,
    Broadcast,
    DcBlock,
    JointAction,
    Program,
    Rand,
    Send,
    run,
)

TRUSTED = "T"
RESERVED_PREFIX = "dc_"


# ---------------------------------------------------------------------------
# key graphs


@dataclass(frozen=True)
class KeyGraph:
    """Directed key-sharing graph; edge ``(i, j)`` means ``i`` makes the key and sends it to ``j``."""

    agents: tuple
    edges: tuple

    def __post_init__(self):
        object.__setattr__(self, "agents", tuple(str(a) for a in self.agents))
        object.__setattr__(self, "edges", tuple((str(s), str(d)) for s, d in self.edges))
        if len(set(self.agents)) != len(self.agents):
            raise ValueError("duplicate agents in key graph")
        for s, d in self.edges:
            if s not in self.agents or d not in self.agents:
                raise ValueError(f"edge ({s}, {d}) has an endpoint outside the agent list")
            if s == d:
                raise ValueError(f"self-loop on agent {s}")

    def out_edges(self, i: str) -> list[int]:
        return [e for e, (s, _) in enumerate(self.edges) if s == i]

    def in_edges(self, i: str) -> list[int]:
        return [e for e, (_, d) in enumerate(self.edges) if d == i]

    def keys(self, i: str) -> list[int]:
        return [e for e, (s, d) in enumerate(self.edges) if i in (s, d)]

    def key_mask(self, i: str) -> int:
        return sum(1 << e for e in self.keys(i))

    def to_dict(self) -> dict:
        return {"agents": list(self.agents), "edges": [list(e) for e in self.edges]}

    @classmethod
    def from_dict(cls, data: Mapping) -> "KeyGraph":
        return cls(tuple(data["agents"]), tuple(tuple(e) for e in data["edges"]))


def ring(n: int) -> KeyGraph:
    """Agents ``1..n``; agent ``i`` shares a key with ``i+1`` (cyclically)."""
    agents = tuple(str(i) for i in range(1, n + 1))
    if n == 1:
        return KeyGraph(agents, ())
    if n == 2:
        return KeyGraph(agents, (("1", "2"),))
    return KeyGraph(agents, tuple((agents[k], agents[(k + 1) % n]) for k in range(n)))


def complete(n: int) -> KeyGraph:
    agents = tuple(str(i) for i in range(1, n + 1))
    return KeyGraph(agents, tuple(itertools.combinations(agents, 2)))


def parse_graph(spec: str) -> KeyGraph:
    """``ring:N``, ``complete:N`` or ``file:PATH`` (JSON with ``agents`` and ``edges``)."""
    kind, _, arg = spec.partition(":")
    if kind == "ring":
        return ring(int(arg))
    if kind == "complete":
        return complete(int(arg))
    if kind == "file":
        return KeyGraph.from_dict(json.loads(Path(arg).read_text()))
    raise ValueError(f"unknown graph spec {spec!r}")


# ---------------------------------------------------------------------------
# variable names


def key_var(agent: str, edge: int, t: int) -> str:
    return qualify(agent, f"{RESERVED_PREFIX}k{edge}", t)


def announce_var(agent: str, t: int) -> str:
    return qualify(agent, f"{RESERVED_PREFIX}b", t)


def result_var(agent: str, t: int) -> str:
    return qualify(agent, "rr", t)


def relay_var(agent: str, t: int, trusted: str = TRUSTED) -> str:
    return qualify(trusted, f"{RESERVED_PREFIX}x{agent}", t)


def total_var(t: int, trusted: str = TRUSTED) -> str:
    return qualify(trusted, f"{RESERVED_PREFIX}y", t)


def is_internal(name: str) -> bool:
    """True for key, announcement and relay variables of any DC instance."""
    return base_name(name).startswith(RESERVED_PREFIX)


def _check_messages(agents: Sequence[str], msgs: Mapping[str, Formula]):
    missing = [a for a in agents if a not in msgs]
    if missing:
        raise ValueError(f"no message expression for agents {missing}")
    for a in agents:
        leaked = sorted(v for v in atoms(msgs[a]) if is_internal(v))
        if leaked:
            raise ValueError(f"message of agent {a} reads reserved DC variables {leaked}")


# ---------------------------------------------------------------------------
# protocol builders


def build_dc(g: KeyGraph, msgs: Mapping[str, Formula], t: int = 1, unshared: Sequence[int] = ()) -> Program:
    """Five-step DC round ``t`` over ``g`` announcing ``msgs[i]`` for each agent.

    ``unshared`` lists edges whose key is never sent to the receiving agent
    (the receiver then leaves it out of its announcement).  This deliberately
    breaks the protocol and exists for negative tests.
    """
    _check_messages(g.agents, msgs)
    unshared = set(unshared)
    E = g.edges
    rand = [Rand(s, key_var(s, e, t)) for e, (s, d) in enumerate(E)]
    share = [Send(s, Atom(key_var(s, e, t)), key_var(d, e, t)) for e, (s, d) in enumerate(E) if e not in unshared]
    announce = []
    for i in g.agents:
        keys = [Atom(key_var(i, e, t)) for e in g.keys(i) if not (e in unshared and E[e][1] == i)]
        announce.append(Assign(i, announce_var(i, t), xor([msgs[i], *keys])))
    publish = [Broadcast(i, announce_var(i, t)) for i in g.agents]
    total = xor([Atom(announce_var(j, t)) for j in g.agents])
    result = [Assign(i, result_var(i, t), total) for i in g.agents]
    steps = [JointAction(a) for a in (rand, share, announce, publish, result)]
    block = DcBlock(0, 5, t, "dc", g.agents, tuple((a, msgs[a]) for a in g.agents), g)
    return Program(steps, (), (block,))


def build_dc_abstract(
    agents: Sequence[str], msgs: Mapping[str, Formula], t: int = 1, trusted: str = TRUSTED
) -> Program:
    """Four-step abstract round: everyone tells ``trusted`` its bit, which announces the xor."""
    agents = tuple(agents)
    if trusted in agents:
        raise ValueError(f"trusted party name {trusted!r} clashes with an agent")
    _check_messages(agents, msgs)
    y = total_var(t, trusted)
    steps = [
        JointAction([Send(i, msgs[i], relay_var(i, t, trusted)) for i in agents]),
        JointAction([Assign(trusted, y, xor([Atom(relay_var(i, t, trusted)) for i in agents]))]),
        JointAction([Broadcast(trusted, y)]),
        JointAction([Assign(i, result_var(i, t), Atom(y)) for i in agents]),
    ]
    block = DcBlock(0, 4, t, "dca", agents, tuple((a, msgs[a]) for a in agents))
    return Program(steps, (), (block,))


def _rewrite_blocks(P: Program, kind: str, build) -> Program:
    blocks = sorted(P.blocks, key=lambda b: b.start)
    for a, b in zip(blocks, blocks[1:]):
        if a.start + a.length > b.start:
            raise ValueError("overlapping DC instance markers")
    inside = set()
    for b in blocks:
        inside.update(range(b.start, b.start + b.length))
    for k, A in enumerate(P.steps):
        if k in inside:
            continue
        leaked = sorted(v for v in A.reads if is_internal(v))
        if leaked:
            raise ValueError(f"step {k} outside any DC instance reads reserved variables {leaked}")
    for c in P.checkpoints:
        for a in c.assertions:
            leaked = sorted(v for v in atoms(a.formula) if is_internal(v))
            if leaked:
                raise ValueError(f"checkpoint {c.label!r} reads reserved variables {leaked}")

    steps, new_blocks, moved = [], [], {}
    pos = 0
    for b in blocks + [None]:
        stop = len(P.steps) if b is None else b.start
        for k in range(pos, stop + 1):
            moved[k] = len(steps) + (k - pos)
        steps += P.steps[pos:stop]
        if b is None:
            break
        if b.kind == kind:
            replacement = build(b)
            _check_messages(b.agents, dict(b.messages))
        else:
            replacement = Program(P.steps[b.start:b.start + b.length], (), (b,))
        new_blocks += [replace_start(blk, len(steps)) for blk in replacement.blocks]
        steps += replacement.steps
        pos = b.start + b.length
        moved[pos] = len(steps)
    checkpoints = []
    for c in P.checkpoints:
        if c.position not in moved:
            raise ValueError(f"checkpoint {c.label!r} sits inside a DC instance")
        checkpoints.append(type(c)(moved[c.position], c.label, c.assertions))
    return Program(steps, checkpoints, new_blocks)


def replace_start(b: DcBlock, start: int) -> DcBlock:
    return DcBlock(start, b.length, b.instance, b.kind, b.agents, b.messages, b.graph)


def abstract_program(P: Program, trusted: str = TRUSTED) -> Program:
    """Replace every marked DC instance by its abstract counterpart.

    Steps between instances are kept verbatim.  Raises ``ValueError`` when a
    marker does not match the steps it covers, or when code outside the
    instances (or a message) reads key/announcement variables.
    """
    for b in P.blocks:
        if b.kind == "dc":
            expected = build_dc(b.graph, dict(b.messages), b.instance)
            if tuple(P.steps[b.start:b.start + b.length]) != expected.steps:
                raise ValueError(f"steps under DC marker {b.instance} do not form a DC round")

    def build(b: DcBlock) -> Program:
        p = build_dc_abstract(b.agents, dict(b.messages), b.instance, trusted)
        return Program(p.steps, (), (DcBlock(0, 4, b.instance, "dca", b.agents, b.messages, b.graph),))

    return _rewrite_blocks(P, "dc", build)


def concretize_program(P: Program, g: KeyGraph | None = None) -> Program:
    """Inverse of ``abstract_program``: abstract rounds become DC rounds over ``g``."""

    def build(b: DcBlock) -> Program:
        graph = g if g is not None else b.graph
        if graph is None:
            raise ValueError(f"no key graph for abstract instance {b.instance}")
        return build_dc(graph, dict(b.messages), b.instance)

    return _rewrite_blocks(P, "dca", build)


# ---------------------------------------------------------------------------
# initial structures


def message_structure(agents: Sequence[str] | int, base: str = "m") -> tuple[KripkeStructure, dict]:
    """All assignments of one private bit ``i.m`` per agent; returns ``(M, msgs)``."""
    if isinstance(agents, int):
        agents = [str(i) for i in range(1, agents + 1)]
    agents = list(agents)
    names = [qualify(a, base) for a in agents]
    worlds = list(itertools.product((0, 1), repeat=len(agents)))
    worlds = [w[::-1] for w in worlds]
    M = build_structure(agents, names, worlds, {a: [v] for a, v in zip(agents, names)})
    return M, {a: Atom(v) for a, v in zip(agents, names)}


def payer_structure(n: int) -> tuple[KripkeStructure, dict]:
    """Dinner-table structure: nobody pays (the agency did) or exactly one cryptographer does."""
    agents = [str(i) for i in range(1, n + 1)]
    names = [qualify(a, "m") for a in agents]
    worlds = [[0] * n] + [[int(k == j) for k in range(n)] for j in range(n)]
    M = build_structure(agents, names, worlds, {a: [v] for a, v in zip(agents, names)})
    return M, {a: Atom(v) for a, v in zip(agents, names)}


def abstraction_pair(g: KeyGraph, M: KripkeStructure, msgs: Mapping[str, Formula], t: int = 1, trusted: str = TRUSTED):
    """Run one DC round and its abstraction from ``M``.

    Returns ``(concrete, abstract, variables, agents)`` where ``variables``
    are ``M``'s variables plus the round results and ``agents`` are the
    graph's agents, i.e. the parameters under which the two should be
    bisimilar.
    """
    concrete = run(M, build_dc(g, msgs, t)).structure
    abstract = run(M.with_agents([trusted]), build_dc_abstract(g.agents, msgs, t, trusted)).structure
    variables = list(M.variables) + [result_var(a, t) for a in g.agents]
    return concrete, abstract, variables, list(g.agents)


def anonymity_formula(agents: Sequence[str], i: str, base: str = "m") -> Formula:
    """Agent ``i`` either knows all other bits share one value, or knows none of them."""
    others = [qualify(j, base) for j in agents if j != i]
    uniform = Or(
        Knows(i, conj(Atom(v) for v in others)),
        Knows(i, conj(Not(Atom(v)) for v in others)),
    )
    return Or(uniform, conj(Not(KnowsWhether(i, Atom(v))) for v in others))


def payer_anonymity_formula(agents: Sequence[str], i: str, t: int = 1, base: str = "m") -> Formula:
    """A non-paying agent who learns someone paid cannot tell which other agent it was."""
    premise = And(Not(Atom(qualify(i, base))), Atom(result_var(i, t)))
    return Implies(premise, conj(Not(Knows(i, Atom(qualify(j, base)))) for j in agents if j != i))


# ---------------------------------------------------------------------------
# closed-form indistinguishability


def message_xor(M: KripkeStructure, msgs: Mapping[str, Formula]) -> np.ndarray:
    ev = Evaluator(M)
    return np.logical_xor.reduce([ev(msgs[a]) for a in msgs]) if msgs else np.zeros(M.num_worlds, bool)


def char_sim_dca(M: KripkeStructure, msgs: Mapping[str, Formula], u, v, i: str):
    """Whether worlds ``u`` and ``v`` of ``M`` are ``i``-indistinguishable after an abstract round.

    ``u`` and ``v`` may be integer arrays (broadcast together).
    """
    cls = M.classes(i)
    xm = message_xor(M, msgs)
    out = (cls[u] == cls[v]) & (xm[u] == xm[v])
    return bool(out) if np.ndim(out) == 0 else out


def _parity(x) -> np.ndarray:
    return np.bitwise_count(np.asarray(x, dtype=np.uint64)) & 1


def char_sim_dc(M: KripkeStructure, g: KeyGraph, msgs: Mapping[str, Formula], u, kappa, v, lam, i: str):
    """Whether ``u+kappa`` and ``v+lam`` are ``i``-indistinguishable after a concrete round.

    Key assignments are bitmasks over edge indices.  All position arguments
    may be arrays.
    """
    ev = Evaluator(M)
    kappa = np.asarray(kappa, dtype=np.uint64)
    lam = np.asarray(lam, dtype=np.uint64)
    cls = M.classes(i)
    out = (cls[u] == cls[v]) & (((kappa ^ lam) & np.uint64(g.key_mask(i))) == 0)
    for j in g.agents:
        mask = np.uint64(g.key_mask(j))
        m = ev(msgs[j])
        out = out & ((m[u] ^ _parity(kappa & mask).astype(bool)) == (m[v] ^ _parity(lam & mask).astype(bool)))
    return bool(out) if np.ndim(out) == 0 else out


def _relation_mismatches(classes: np.ndarray, predicate, chunk: int = 1024) -> int:
    n = len(classes)
    bad = 0
    cols = np.arange(n)
    for lo in range(0, n, chunk):
        rows = np.arange(lo, min(n, lo + chunk))
        computed = classes[rows, None] == classes[None, :]
        bad += int(np.count_nonzero(computed != predicate(rows[:, None], cols[None, :])))
    return bad


def relation_mismatches_dca(M: KripkeStructure, msgs: Mapping[str, Formula], t: int = 1, trusted: str = TRUSTED) -> dict:
    """Per agent, count world pairs where the computed relation after an abstract
    round differs from ``char_sim_dca``."""
    agents = list(msgs)
    after = run(M.with_agents([trusted]), build_dc_abstract(agents, msgs, t, trusted)).structure
    xm = message_xor(M, msgs)
    out = {}
    for i in agents:
        cls = M.classes(i)
        out[i] = _relation_mismatches(
            after.classes(i), lambda u, v: (cls[u] == cls[v]) & (xm[u] == xm[v])
        )
    return out


def relation_mismatches_dc(M: KripkeStructure, g: KeyGraph, msgs: Mapping[str, Formula], t: int = 1) -> dict:
    """Per agent, count world pairs where the computed relation after a concrete
    round differs from ``char_sim_dc``."""
    after = run(M, build_dc(g, msgs, t)).structure
    E = len(g.edges)
    out = {}
    for i in g.agents:
        def pred(x, y, i=i):
            return char_sim_dc(M, g, msgs, x >> E, x & ((1 << E) - 1), y >> E, y & ((1 << E) - 1), i)

        out[i] = _relation_mismatches(after.classes(i), pred)
    return out


# ---------------------------------------------------------------------------
# key completion


def _announcements(g: KeyGraph, keys: Sequence[int], mu: Mapping[str, int]) -> dict:
    out = {}
    for j in g.agents:
        bit = int(mu[j])
        for e in g.keys(j):
            bit ^= int(keys[e])
        out[j] = bit
    return out


def verify_key_completion(g: KeyGraph, i: str, kappa, mu, mu2, lam) -> bool:
    """``lam`` agrees with ``kappa`` on ``i``'s keys and reproduces every announcement."""
    if any(int(kappa[e]) != int(lam[e]) for e in g.keys(i)):
        return False
    return _announcements(g, kappa, mu) == _announcements(g, lam, mu2)


def find_key_completion(g: KeyGraph, i: str, kappa, mu, mu2) -> tuple | None:
    """Keys ``lam`` making messages ``mu2`` announce exactly what ``mu`` did under ``kappa``,
    without touching ``i``'s keys; ``None`` when no such keys exist.

    Solved as a parity problem on the graph minus ``i``'s edges: each agent
    ``j`` needs an odd number of flipped incident keys iff ``mu(j) != mu2(j)``.
    A spanning forest is walked leaves-first, flipping the edge to the parent
    whenever a node still has odd demand.
    """
    if len(kappa) != len(g.edges):
        raise ValueError("key assignment must cover every edge")
    total = 0
    for j in g.agents:
        total ^= int(mu[j]) ^ int(mu2[j])
    if total:
        raise ValueError("message assignments must have equal xor")
    demand = {j: int(mu[j]) ^ int(mu2[j]) for j in g.agents}
    if demand[i]:
        return None
    adj: dict = {j: [] for j in g.agents}
    for e, (s, d) in enumerate(g.edges):
        if i not in (s, d):
            adj[s].append((d, e))
            adj[d].append((s, e))
    flips = [0] * len(g.edges)
    seen: set = set()
    for root in g.agents:
        if root in seen:
            continue
        seen.add(root)
        order, parent = [root], {root: None}
        queue = deque([root])
        while queue:
            x = queue.popleft()
            for y, e in adj[x]:
                if y not in seen:
                    seen.add(y)
                    parent[y] = (x, e)
                    order.append(y)
                    queue.append(y)
        if sum(demand[x] for x in order) % 2:
            return None
        for x in reversed(order[1:]):
            if demand[x]:
                p, e = parent[x]
                flips[e] ^= 1
                demand[x] = 0
                demand[p] ^= 1
    return tuple(int(kappa[e]) ^ flips[e] for e in range(len(g.edges)))


def brute_force_key_completion(g: KeyGraph, i: str, kappa, mu, mu2) -> tuple | None:
    """First key assignment (in binary counting order) passing the verifier, else ``None``."""
    E = len(g.edges)
    if E > 16:
        raise ValueError("brute force limited to 16 edges")
    for bits in range(1 << E):
        lam = tuple((bits >> e) & 1 for e in range(E))
        if verify_key_completion(g, i, kappa, mu, mu2, lam):
            return lam
    return None
