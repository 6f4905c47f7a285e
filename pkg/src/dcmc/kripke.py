"""Kripke structures with boolean valuations and per-agent partitions.

Worlds are stored column-wise: one read-only boolean array per variable,
indexed by world.  Each agent's indistinguishability relation is kept as a
partition, i.e. an integer array mapping every world to a class id.  Class ids
are dense and numbered by the least world in the class, so two structures
built from the same data compare equal array-for-array.
"""

from __future__ import annotations

import json
from typing import Iterable, Mapping, Sequence

import numpy as np


class FitnessError(LookupError):
    """A formula or program mentions a variable or agent the structure lacks."""

    def __str__(self):
        return str(self.args[0]) if self.args else ""


def canonical_classes(keys: np.ndarray) -> np.ndarray:
    """Dense class ids for ``keys``, numbered in order of first occurrence."""
    keys = np.asarray(keys)
    if keys.size == 0:
        return np.zeros(0, dtype=np.int64)
    _, first, inverse = np.unique(keys, return_index=True, return_inverse=True)
    rank = np.empty(len(first), dtype=np.int64)
    rank[np.argsort(first, kind="stable")] = np.arange(len(first))
    return rank[inverse.reshape(-1)]


def refine(classes: np.ndarray, columns: Sequence[np.ndarray]) -> np.ndarray:
    """Split ``classes`` by agreement on every array in ``columns``."""
    classes = np.asarray(classes, dtype=np.int64)
    columns = list(columns)
    if not columns:
        return classes
    for start in range(0, len(columns), 30):
        keys = classes << np.int64(min(30, len(columns) - start))
        for b, col in enumerate(columns[start:start + 30]):
            keys |= np.asarray(col, dtype=np.int64) << np.int64(b)
        classes = canonical_classes(keys)
    return classes


def _frozen(a: np.ndarray) -> np.ndarray:
    a.flags.writeable = False
    return a


class KripkeStructure:
    """Agents, worlds, per-agent partitions and a boolean valuation.

    ``columns`` maps each variable name to a boolean array over worlds and
    ``partitions`` maps each agent to its class-id array.  Arrays are shared,
    never mutated; build new structures instead.
    """

    def __init__(
        self,
        agents: Sequence[str],
        columns: Mapping[str, np.ndarray],
        partitions: Mapping[str, np.ndarray],
        num_worlds: int | None = None,
    ):
        self.agents = tuple(agents)
        if len(set(self.agents)) != len(self.agents):
            raise ValueError("duplicate agent names")
        self._columns = dict(columns)
        if num_worlds is None:
            if not self._columns:
                raise ValueError("num_worlds is required for a structure without variables")
            num_worlds = len(next(iter(self._columns.values())))
        self.num_worlds = int(num_worlds)
        for name, col in self._columns.items():
            if col.shape != (self.num_worlds,) or col.dtype != bool:
                raise ValueError(f"column {name!r} has wrong shape or dtype")
            if col.flags.writeable:
                self._columns[name] = _frozen(col.copy())
        self._partitions = {}
        self._class_counts = {}
        for agent in self.agents:
            if agent not in partitions:
                raise ValueError(f"missing partition for agent {agent!r}")
            cls = np.asarray(partitions[agent], dtype=np.int64)
            if cls.shape != (self.num_worlds,):
                raise ValueError(f"partition for agent {agent!r} has wrong shape")
            self._partitions[agent] = _frozen(cls) if cls.flags.writeable else cls
            self._class_counts[agent] = int(cls.max()) + 1 if cls.size else 0
        extra = set(partitions) - set(self.agents)
        if extra:
            raise ValueError(f"partitions given for unknown agents {sorted(extra)}")

    def __repr__(self):
        return (
            f"KripkeStructure(agents={list(self.agents)}, worlds={self.num_worlds}, "
            f"variables={len(self._columns)})"
        )

    @property
    def variables(self) -> tuple[str, ...]:
        return tuple(self._columns)

    @property
    def width(self) -> int:
        return len(self._columns)

    def has_variable(self, name: str) -> bool:
        return name in self._columns

    def column(self, name: str) -> np.ndarray:
        try:
            return self._columns[name]
        except KeyError:
            raise FitnessError(f"variable {name!r} is not defined in the structure") from None

    def columns(self) -> dict[str, np.ndarray]:
        return dict(self._columns)

    def classes(self, agent: str) -> np.ndarray:
        try:
            return self._partitions[agent]
        except KeyError:
            raise FitnessError(f"agent {agent!r} is not in the structure") from None

    def num_classes(self, agent: str) -> int:
        self.classes(agent)
        return self._class_counts[agent]

    def partitions(self) -> dict[str, np.ndarray]:
        return dict(self._partitions)

    def related(self, agent: str, w: int, v: int) -> bool:
        cls = self.classes(agent)
        return bool(cls[w] == cls[v])

    def valuation(self, w: int) -> dict[str, int]:
        return {name: int(col[w]) for name, col in self._columns.items()}

    def rows(self) -> np.ndarray:
        """World-by-variable boolean matrix (copies; use on small structures)."""
        if not self._columns:
            return np.zeros((self.num_worlds, 0), dtype=bool)
        return np.stack(list(self._columns.values()), axis=1)

    def find_worlds(self, assignment: Mapping[str, int]) -> np.ndarray:
        """Indices of worlds agreeing with ``assignment``."""
        mask = np.ones(self.num_worlds, dtype=bool)
        for name, value in assignment.items():
            mask &= self.column(name) == bool(value)
        return np.flatnonzero(mask)

    def with_agents(self, agents: Iterable[str]) -> "KripkeStructure":
        """Add agents that observe nothing (a single class each)."""
        new = [a for a in agents if a not in self._partitions]
        if not new:
            return self
        parts = dict(self._partitions)
        for a in new:
            parts[a] = np.zeros(self.num_worlds, dtype=np.int64)
        return KripkeStructure(self.agents + tuple(new), self._columns, parts, self.num_worlds)

    def restrict_worlds(self, index: np.ndarray) -> "KripkeStructure":
        """Sub-structure on the worlds ``index`` (partitions restricted)."""
        index = np.asarray(index)
        cols = {k: v[index] for k, v in self._columns.items()}
        parts = {a: canonical_classes(c[index]) for a, c in self._partitions.items()}
        return KripkeStructure(self.agents, cols, parts, len(index))

    # serialisation --------------------------------------------------------
    def to_dict(self) -> dict:
        rows = self.rows()
        digits = max(1, (self.width + 3) // 4)
        packed = np.packbits(rows, axis=1, bitorder="little") if self.width else None
        worlds = []
        for w in range(self.num_worlds):
            value = int.from_bytes(packed[w].tobytes(), "little") if packed is not None else 0
            worlds.append(format(value, f"0{digits}x"))
        return {
            "agents": list(self.agents),
            "variables": list(self.variables),
            "worlds": worlds,
            "classes": {a: self._partitions[a].tolist() for a in self.agents},
        }

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_dict(), **kwargs)

    @classmethod
    def from_dict(cls, data: Mapping) -> "KripkeStructure":
        variables = list(data["variables"])
        values = [int(h, 16) for h in data["worlds"]]
        rows = np.array([[(v >> b) & 1 for b in range(len(variables))] for v in values], dtype=bool)
        rows = rows.reshape(len(values), len(variables))
        return from_classes(data["agents"], variables, rows, data["classes"])

    @classmethod
    def from_json(cls, text: str) -> "KripkeStructure":
        return cls.from_dict(json.loads(text))

    def same_as(self, other: "KripkeStructure") -> bool:
        """Identical agents, variables, valuation rows and partitions."""
        if self.agents != other.agents or self.variables != other.variables:
            return False
        if self.num_worlds != other.num_worlds:
            return False
        if any(not np.array_equal(self._columns[k], other._columns[k]) for k in self._columns):
            return False
        return all(np.array_equal(self._partitions[a], other._partitions[a]) for a in self.agents)


def _as_rows(variables: Sequence[str], worlds) -> np.ndarray:
    rows = np.asarray(worlds, dtype=bool)
    if rows.ndim == 1 and len(variables) == 0:
        rows = rows.reshape(len(rows), 0)
    if rows.ndim != 2 or rows.shape[1] != len(variables):
        raise ValueError("world rows do not match the variable table")
    return rows


def _dedup(rows: np.ndarray) -> np.ndarray:
    if rows.shape[0] == 0:
        return rows
    _, first = np.unique(rows, axis=0, return_index=True)
    return rows[np.sort(first)]


def build_structure(
    agents: Sequence[str],
    variables: Sequence[str],
    worlds,
    observation_sets: Mapping[str, Iterable[str]],
    dedup: bool = True,
) -> KripkeStructure:
    """Structure whose relations are agreement on each agent's observed variables.

    ``worlds`` is a sequence of 0/1 rows aligned with ``variables``.
    Duplicate rows are dropped unless ``dedup`` is false.
    """
    variables = list(variables)
    if len(set(variables)) != len(variables):
        raise ValueError("duplicate variable names")
    rows = _as_rows(variables, worlds)
    if dedup:
        rows = _dedup(rows)
    index = {v: k for k, v in enumerate(variables)}
    parts = {}
    for agent in agents:
        observed = list(observation_sets.get(agent, ()))
        unknown = [v for v in observed if v not in index]
        if unknown:
            raise FitnessError(f"agent {agent!r} observes undefined variables {unknown}")
        base = np.zeros(rows.shape[0], dtype=np.int64)
        parts[agent] = refine(base, [rows[:, index[v]] for v in observed])
    cols = {v: np.ascontiguousarray(rows[:, k]) for k, v in enumerate(variables)}
    return KripkeStructure(agents, cols, parts, rows.shape[0])


def from_classes(
    agents: Sequence[str],
    variables: Sequence[str],
    worlds,
    classes: Mapping[str, Sequence[int]],
) -> KripkeStructure:
    """Structure with explicitly given partitions (any class labelling)."""
    variables = list(variables)
    rows = _as_rows(variables, worlds)
    parts = {a: canonical_classes(np.asarray(classes[a])) for a in agents}
    cols = {v: np.ascontiguousarray(rows[:, k]) for k, v in enumerate(variables)}
    return KripkeStructure(agents, cols, parts, rows.shape[0])


def classes_of(M: KripkeStructure, agent: str) -> list[list[int]]:
    """Agent's partition as lists of worlds, ordered by least member."""
    cls = M.classes(agent)
    order = np.argsort(cls, kind="stable")
    bounds = np.flatnonzero(np.diff(cls[order])) + 1
    return [chunk.tolist() for chunk in np.split(order, bounds)] if len(order) else []


def find_inconsistency(M: KripkeStructure, ov: Mapping[str, Iterable[str]]):
    """First ``(agent, variable, w, w2)`` showing ``ov`` is inconsistent with ``M``.

    ``w`` and ``w2`` are ``None`` when the variable is undefined.  Returns
    ``None`` for a consistent map.
    """
    for agent in sorted(ov):
        for var in sorted(ov[agent]):
            if not M.has_variable(var):
                return agent, var, None, None
            if agent not in M.agents:
                return agent, var, None, None
            cls = M.classes(agent)
            col = M.column(var)
            k = M.num_classes(agent)
            has0 = np.zeros(k, dtype=bool)
            has1 = np.zeros(k, dtype=bool)
            has0[cls[~col]] = True
            has1[cls[col]] = True
            bad = np.flatnonzero(has0 & has1)
            if len(bad):
                members = np.flatnonzero(cls == bad[0])
                vals = col[members]
                w = int(members[0])
                w2 = int(members[np.argmax(vals != vals[0])])
                return agent, var, w, w2
    return None


def check_consistent(M: KripkeStructure, ov: Mapping[str, Iterable[str]]) -> bool:
    return find_inconsistency(M, ov) is None
