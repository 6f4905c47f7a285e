"""Epistemic formulas: AST, concrete syntax, protocol macros and evaluation.

The core logic has five forms (``Top``, ``Atom``, ``Not``, ``And``, ``Knows``).
Disjunction, implication, equivalence and "knows whether" are built from
them by the helper constructors, so evaluation only ever sees core nodes.
Program expressions additionally use the n-ary ``Xor`` node, which the
formula grammar never produces on its own except through ``^``.

Variable names are plain strings of the form ``agent.base`` or
``agent.base[idx]``.  Multi-valued slot requests are stored little-endian as
``agent.slot_request[b]`` bit variables.
"""

from __future__ import annotations

import itertools
import math
import random
import re
from dataclasses import dataclass, field
from functools import reduce
from typing import Iterable, Sequence

import numpy as np

from .kripke import FitnessError, KripkeStructure


# ---------------------------------------------------------------------------
# AST


@dataclass(frozen=True)
class Top:
    pass


@dataclass(frozen=True)
class Atom:
    name: str


@dataclass(frozen=True)
class Not:
    body: "Formula"


@dataclass(frozen=True)
class And:
    left: "Formula"
    right: "Formula"


@dataclass(frozen=True)
class Knows:
    agent: str
    body: "Formula"


@dataclass(frozen=True)
class Xor:
    args: tuple

    def __post_init__(self):
        object.__setattr__(self, "args", tuple(self.args))


Formula = Top | Atom | Not | And | Knows | Xor

TRUE = Top()
FALSE = Not(Top())


def Or(a: Formula, b: Formula) -> Formula:
    return Not(And(Not(a), Not(b)))


def Implies(a: Formula, b: Formula) -> Formula:
    return Not(And(a, Not(b)))


def Iff(a: Formula, b: Formula) -> Formula:
    return And(Implies(a, b), Implies(b, a))


def KnowsWhether(agent: str, body: Formula) -> Formula:
    return Or(Knows(agent, body), Knows(agent, Not(body)))


def _balanced(items: Sequence[Formula], op) -> Formula:
    if len(items) == 1:
        return items[0]
    mid = len(items) // 2
    return op(_balanced(items[:mid], op), _balanced(items[mid:], op))


def conj(items: Iterable[Formula]) -> Formula:
    """Conjunction of ``items`` as a balanced tree; empty gives ``TRUE``."""
    items = list(items)
    return _balanced(items, And) if items else TRUE


def disj(items: Iterable[Formula]) -> Formula:
    items = list(items)
    return _balanced(items, Or) if items else FALSE


def xor(items: Iterable[Formula]) -> Formula:
    items = list(items)
    if not items:
        return FALSE
    if len(items) == 1:
        return items[0]
    return Xor(tuple(items))


def literal(name: str, value: int) -> Formula:
    return Atom(name) if value else Not(Atom(name))


# ---------------------------------------------------------------------------
# names


def qualify(agent: str, base: str, index: int | None = None) -> str:
    name = f"{agent}.{base}"
    return name if index is None else f"{name}[{index}]"


def owner(name: str) -> str:
    """Agent that owns variable ``name`` (the part before the first dot)."""
    agent, dot, _ = name.partition(".")
    if not dot:
        raise ValueError(f"variable {name!r} has no agent qualifier")
    return agent


def base_name(name: str) -> str:
    """``'2.rr[3]'`` -> ``'rr'``."""
    rest = name.partition(".")[2]
    return rest.split("[", 1)[0]


def atoms(f: Formula) -> set[str]:
    out: set[str] = set()
    stack = [f]
    seen: set[int] = set()
    while stack:
        g = stack.pop()
        if id(g) in seen:
            continue
        seen.add(id(g))
        if isinstance(g, Atom):
            out.add(g.name)
        elif isinstance(g, Not):
            stack.append(g.body)
        elif isinstance(g, And):
            stack += [g.left, g.right]
        elif isinstance(g, Knows):
            stack.append(g.body)
        elif isinstance(g, Xor):
            stack += list(g.args)
    return out


def knowing_agents(f: Formula) -> set[str]:
    out: set[str] = set()
    stack = [f]
    while stack:
        g = stack.pop()
        if isinstance(g, Knows):
            out.add(g.agent)
            stack.append(g.body)
        elif isinstance(g, Not):
            stack.append(g.body)
        elif isinstance(g, And):
            stack += [g.left, g.right]
        elif isinstance(g, Xor):
            stack += list(g.args)
    return out


def is_propositional(f: Formula) -> bool:
    return not knowing_agents(f)


def to_text(f: Formula) -> str:
    """Render ``f`` in the concrete grammar; ``parse_formula`` inverts it."""
    if isinstance(f, Top):
        return "true"
    if isinstance(f, Atom):
        return f.name
    if isinstance(f, Not):
        if isinstance(f.body, Top):
            return "false"
        return f"!{to_text(f.body)}"
    if isinstance(f, And):
        return f"({to_text(f.left)} & {to_text(f.right)})"
    if isinstance(f, Knows):
        return f"K[{f.agent}] {to_text(f.body)}"
    if isinstance(f, Xor):
        return "(" + " ^ ".join(to_text(a) for a in f.args) + ")"
    raise TypeError(f"not a formula: {f!r}")


# ---------------------------------------------------------------------------
# macros


@dataclass(frozen=True)
class MacroContext:
    """Bindings used to expand the protocol macros for ``n`` agents."""

    n: int
    strength: str = "strong"
    slot_request: str = "slot_request"
    message: str = "message"
    rr: str = "rr"
    agents: tuple = field(default=())

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("n must be positive")
        if self.strength not in ("strong", "weak"):
            raise ValueError(f"strength must be 'strong' or 'weak', got {self.strength!r}")
        if not self.agents:
            object.__setattr__(self, "agents", tuple(str(i) for i in range(1, self.n + 1)))
        if len(self.agents) != self.n:
            raise ValueError("agent list does not match n")

    @property
    def width(self) -> int:
        return max(1, math.ceil(math.log2(self.n + 1)))

    def slot_bits(self, agent: str) -> list[str]:
        return [qualify(agent, self.slot_request, b) for b in range(self.width)]


def slot_equals(agent: str, k: int, ctx: MacroContext) -> Formula:
    """``agent.slot_request == k`` expanded bitwise."""
    if not 0 <= k <= ctx.n:
        raise ValueError(f"slot value {k} outside 0..{ctx.n}")
    return conj(literal(v, (k >> b) & 1) for b, v in enumerate(ctx.slot_bits(agent)))


def expand_conflict(s: int, ctx: MacroContext) -> Formula:
    """Two distinct agents both request slot ``s``."""
    if not 1 <= s <= ctx.n:
        raise ValueError(f"slot {s} outside 1..{ctx.n}")
    return disj(
        And(slot_equals(i, s, ctx), slot_equals(j, s, ctx))
        for i, j in itertools.combinations(ctx.agents, 2)
    )


def _sends(j: str, x: int, ctx: MacroContext) -> Formula:
    return And(literal(qualify(j, ctx.message), x), Not(slot_equals(j, 0, ctx)))


def expand_sender(i: str, x: int, ctx: MacroContext) -> Formula:
    """Some agent is sending bit ``x``; strong excludes ``i`` itself."""
    if x not in (0, 1):
        raise ValueError("sender bit must be 0 or 1")
    if i not in ctx.agents:
        raise ValueError(f"unknown agent {i!r}")
    others = [j for j in ctx.agents if ctx.strength == "weak" or j != i]
    return disj(_sends(j, x, ctx) for j in others)


def expand_count_zero(x: int, ctx: MacroContext, agent: str | None = None) -> Formula:
    """Exactly ``x`` of the reservation round results ``rr[1..n]`` are 0.

    Round results are read from ``agent``'s copies (first agent by default).
    """
    if not 0 <= x <= ctx.n:
        raise ValueError(f"count {x} outside 0..{ctx.n}")
    agent = agent if agent is not None else ctx.agents[0]
    rr = [qualify(agent, ctx.rr, t) for t in range(1, ctx.n + 1)]
    terms = []
    for zeros in itertools.combinations(range(ctx.n), x):
        terms.append(conj(literal(v, 0 if t in zeros else 1) for t, v in enumerate(rr)))
    return disj(terms)


# ---------------------------------------------------------------------------
# parser


class FormulaSyntaxError(ValueError):
    def __init__(self, message: str, line: int = 0, col: int = 0):
        super().__init__(f"{message} (line {line}, column {col})")
        self.line = line
        self.col = col


_TOKEN_RE = re.compile(
    r"""
    (?P<ws>[ \t\r\n]+|\#[^\n]*)
  | (?P<str>"[^"\n]*")
  | (?P<op><=>|=>|==|!=|:=|->|[!&|^()\[\]{}.,:;]|[¬∧∨⊗⇒⇔⊤⊥])
  | (?P<int>\d+)
  | (?P<name>[A-Za-z_][A-Za-z0-9_]*)
    """,
    re.VERBOSE,
)

_UNICODE = {"¬": "!", "∧": "&", "∨": "|", "⊗": "^", "⇒": "=>", "⇔": "<=>", "⊤": "true", "⊥": "false"}


@dataclass(frozen=True)
class Token:
    kind: str
    text: str
    line: int
    col: int


def tokenize(text: str) -> list[Token]:
    tokens = []
    pos, line, line_start = 0, 1, 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise FormulaSyntaxError(f"unexpected character {text[pos]!r}", line, pos - line_start + 1)
        kind = m.lastgroup
        chunk = m.group()
        if kind != "ws":
            if kind == "op" and chunk in _UNICODE:
                chunk = _UNICODE[chunk]
                kind = "name" if chunk in ("true", "false") else "op"
            tokens.append(Token(kind, chunk, line, pos - line_start + 1))
        newlines = chunk.count("\n") if kind == "ws" else 0
        if newlines:
            line += newlines
            line_start = pos + m.group().rfind("\n") + 1
        pos = m.end()
    tokens.append(Token("eof", "", line, pos - line_start + 1))
    return tokens


_KEYWORDS = {"true", "false", "K", "Khat", "conflict", "sender", "C0"}


class Parser:
    """Recursive-descent parser over a token list.

    ``owner`` qualifies bare variable names (``x`` -> ``owner.x``); without
    it bare names are a syntax error.  ``ctx`` enables the protocol macros.
    """

    def __init__(self, text: str, ctx: MacroContext | None = None, owner: str | None = None):
        self.tokens = tokenize(text)
        self.pos = 0
        self.ctx = ctx
        self.owner = owner

    # token helpers
    @property
    def tok(self) -> Token:
        return self.tokens[self.pos]

    def peek(self, k: int = 1) -> Token:
        return self.tokens[min(self.pos + k, len(self.tokens) - 1)]

    def error(self, message: str, tok: Token | None = None):
        tok = tok or self.tok
        raise FormulaSyntaxError(message, tok.line, tok.col)

    def at(self, text: str) -> bool:
        return self.tok.kind in ("op", "name") and self.tok.text == text

    def accept(self, text: str) -> bool:
        if self.at(text):
            self.pos += 1
            return True
        return False

    def expect(self, text: str) -> Token:
        if not self.at(text):
            found = self.tok.text or "end of input"
            self.error(f"expected {text!r}, found {found!r}")
        tok = self.tok
        self.pos += 1
        return tok

    def expect_int(self) -> int:
        if self.tok.kind != "int":
            self.error(f"expected an integer, found {self.tok.text!r}")
        value = int(self.tok.text)
        self.pos += 1
        return value

    def agent(self) -> str:
        if self.tok.kind not in ("int", "name"):
            self.error(f"expected an agent, found {self.tok.text!r}")
        name = self.tok.text
        self.pos += 1
        return name

    def need_ctx(self, what: str) -> MacroContext:
        if self.ctx is None:
            self.error(f"macro {what!r} used without a macro context")
        return self.ctx

    # grammar
    def parse(self) -> Formula:
        f = self.formula()
        if self.tok.kind != "eof":
            self.error(f"unexpected {self.tok.text!r}")
        return f

    def formula(self) -> Formula:
        f = self.implication()
        while self.accept("<=>"):
            f = Iff(f, self.implication())
        return f

    def implication(self) -> Formula:
        f = self.disjunction()
        if self.accept("=>"):
            return Implies(f, self.implication())
        return f

    def disjunction(self) -> Formula:
        f = self.exclusive()
        while self.accept("|"):
            f = Or(f, self.exclusive())
        return f

    def exclusive(self) -> Formula:
        args = [self.conjunction()]
        while self.accept("^"):
            args.append(self.conjunction())
        return args[0] if len(args) == 1 else Xor(tuple(args))

    def conjunction(self) -> Formula:
        f = self.unary()
        while self.accept("&"):
            f = And(f, self.unary())
        return f

    def unary(self) -> Formula:
        if self.accept("!"):
            return Not(self.unary())
        if self.at("K") and self.peek().text == "[":
            self.pos += 2
            agent = self.agent()
            self.expect("]")
            return Knows(agent, self.unary())
        if self.at("Khat") and self.peek().text == "[":
            self.pos += 2
            agent = self.agent()
            self.expect("]")
            self.expect("(")
            body = self.formula()
            self.expect(")")
            return KnowsWhether(agent, body)
        return self.primary()

    def primary(self) -> Formula:
        tok = self.tok
        if self.accept("("):
            f = self.formula()
            self.expect(")")
            return f
        if self.accept("true"):
            return TRUE
        if self.accept("false"):
            return FALSE
        if tok.kind == "int" and self.peek().text != ".":
            self.pos += 1
            if tok.text not in ("0", "1"):
                self.error(f"boolean constant must be 0 or 1, found {tok.text}", tok)
            return TRUE if tok.text == "1" else FALSE
        if self.at("conflict") and self.peek().text == "(":
            self.pos += 2
            s = self.expect_int()
            self.expect(")")
            ctx = self.need_ctx("conflict")
            try:
                return expand_conflict(s, ctx)
            except ValueError as exc:
                self.error(str(exc), tok)
        if self.at("sender") and self.peek().text == "(":
            self.pos += 2
            agent = self.agent()
            self.expect(",")
            x = self.expect_int()
            self.expect(")")
            ctx = self.need_ctx("sender")
            try:
                return expand_sender(agent, x, ctx)
            except ValueError as exc:
                self.error(str(exc), tok)
        if self.at("C0"):
            self.pos += 1
            negate = self._comparison_op()
            x = self.expect_int()
            ctx = self.need_ctx("C0")
            try:
                f = expand_count_zero(x, ctx, self.owner)
            except ValueError as exc:
                self.error(str(exc), tok)
            return Not(f) if negate else f
        if tok.kind in ("name", "int"):
            name = self.variable()
            if self.at("==") or self.at("!="):
                return self.comparison(name)
            return Atom(name)
        self.error(f"unexpected {tok.text or 'end of input'!r}")

    def _comparison_op(self) -> bool:
        if self.accept("=="):
            return False
        if self.accept("!="):
            return True
        self.error("expected '==' or '!='")

    def comparison(self, name: str) -> Formula:
        tok = self.tok
        negate = self._comparison_op()
        if self.tok.kind == "int" and self.peek().text != ".":
            k = self.expect_int()
            if self.ctx is not None and base_name(name) == self.ctx.slot_request and "[" not in name:
                try:
                    f = slot_equals(owner(name), k, self.ctx)
                except ValueError as exc:
                    self.error(str(exc), tok)
            elif k in (0, 1):
                f = literal(name, k)
            else:
                self.error(f"cannot compare boolean {name} with {k}", tok)
        else:
            f = Iff(Atom(name), Atom(self.variable()))
        return Not(f) if negate else f

    def variable(self) -> str:
        tok = self.tok
        if tok.kind == "name" and tok.text in _KEYWORDS:
            self.error(f"keyword {tok.text!r} used as a variable")
        first = self.agent()
        if self.accept("."):
            if self.tok.kind != "name":
                self.error("expected a variable name after '.'")
            base = self.tok.text
            self.pos += 1
            agent = first
        else:
            if tok.kind == "int":
                self.error("expected '.' after agent", tok)
            if self.owner is None:
                self.error(f"bare variable {first!r} needs an agent qualifier", tok)
            agent, base = self.owner, first
        index = None
        if self.accept("["):
            index = self.expect_int()
            self.expect("]")
        return qualify(agent, base, index)


def parse_formula(text: str, ctx: MacroContext | None = None, owner: str | None = None) -> Formula:
    """Parse ``text`` into a core formula with all macros expanded."""
    return Parser(text, ctx, owner).parse()


# ---------------------------------------------------------------------------
# evaluation


class Evaluator:
    """Evaluate formulas at every world of ``M`` at once.

    Results are boolean arrays indexed by world and are cached by formula,
    so sub-formulas shared between checks are computed once.  Returned arrays
    are read-only.
    """

    def __init__(self, M: KripkeStructure):
        self.M = M
        self._cache: dict = {}

    def __call__(self, f: Formula) -> np.ndarray:
        hit = self._cache.get(f)
        if hit is not None:
            return hit
        out = self._eval(f)
        out.flags.writeable = False
        self._cache[f] = out
        return out

    def _eval(self, f: Formula) -> np.ndarray:
        M = self.M
        if isinstance(f, Atom):
            return M.column(f.name)
        if isinstance(f, Top):
            return np.ones(M.num_worlds, dtype=bool)
        if isinstance(f, Not):
            return ~self(f.body)
        if isinstance(f, And):
            return self(f.left) & self(f.right)
        if isinstance(f, Xor):
            return reduce(np.logical_xor, (self(a) for a in f.args))
        if isinstance(f, Knows):
            classes = M.classes(f.agent)
            body = self(f.body)
            refuted = np.zeros(M.num_classes(f.agent), dtype=bool)
            refuted[classes[~body]] = True
            return ~refuted[classes]
        raise TypeError(f"not a formula: {f!r}")


def evaluate(M: KripkeStructure, f: Formula) -> np.ndarray:
    return Evaluator(M)(f)


def eval_at(M: KripkeStructure, w: int, f: Formula) -> bool:
    if not 0 <= w < M.num_worlds:
        raise FitnessError(f"world {w} not in structure")
    return bool(evaluate(M, f)[w])


def valid(M: KripkeStructure, f: Formula, evaluator: Evaluator | None = None) -> tuple[bool, int | None]:
    """``(True, None)`` if ``f`` holds everywhere, else ``(False, least failing world)``."""
    values = (evaluator or Evaluator(M))(f)
    if values.all():
        return True, None
    return False, int(np.argmin(values))


# ---------------------------------------------------------------------------
# random formulas (fuzzing)


def random_formula(rng: random.Random, variables: Sequence[str], agents: Sequence[str], depth: int) -> Formula:
    """Random formula over ``variables``/``agents`` with nesting depth <= ``depth``."""
    if depth <= 0 or rng.random() < 0.2:
        return TRUE if rng.random() < 0.05 else Atom(rng.choice(variables))
    pick = rng.random()
    sub = lambda: random_formula(rng, variables, agents, depth - 1)  # noqa: E731
    if pick < 0.2:
        return Not(sub())
    if pick < 0.45:
        return And(sub(), sub())
    if pick < 0.55:
        return Or(sub(), sub())
    if pick < 0.6:
        return Iff(sub(), sub())
    return Knows(rng.choice(agents), sub())
