"""The full-data DAG of the Markov-restricted model and d-separation queries.

Vertices are ``(name, k)`` pairs with ``name`` in ``{"Y", "R", "Yobs"}``.  An
observed-data symbol ``O_j`` stands for the pair ``{R_j, Yobs_j}``.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Iterable

from markovtilt.model import ModelSpec, future_indices, past_indices

Vertex = tuple[str, int]

DETERMINISTIC = "deterministic"
TILT = "tilt"
PLAIN = "plain"


def Yv(k: int) -> Vertex:
    return ("Y", k)


def Rv(k: int) -> Vertex:
    return ("R", k)


def Yobs(k: int) -> Vertex:
    return ("Yobs", k)


def Ov(k: int) -> set[Vertex]:
    return {Rv(k), Yobs(k)}


def vertex_name(v: Vertex) -> str:
    return f"{v[0]}{v[1]}"


class GraphError(ValueError):
    pass


@dataclass(frozen=True)
class ModelDag:
    vertices: tuple[Vertex, ...]
    parents: dict
    deterministic: frozenset = frozenset()
    edge_kind: dict = field(default_factory=dict)

    def children(self) -> dict:
        ch = {v: set() for v in self.vertices}
        for v, ps in self.parents.items():
            for p in ps:
                ch[p].add(v)
        return ch

    def is_acyclic_under(self, order: Iterable[Vertex]) -> bool:
        pos = {v: i for i, v in enumerate(order)}
        return len(pos) == len(self.vertices) and all(
            pos[p] < pos[v] for v, ps in self.parents.items() for p in ps
        )


def total_order(K: int) -> list[Vertex]:
    """``Y_1 < ... < Y_K < R_K < Yobs_K < R_{K-1} < ... < R_1 < Yobs_1``."""
    order = [Yv(k) for k in range(1, K + 1)]
    for k in range(K, 0, -1):
        order += [Rv(k), Yobs(k)]
    return order


def build_full_dag(spec: ModelSpec) -> ModelDag:
    K, m = spec.K, spec.m
    parents: dict[Vertex, frozenset] = {}
    kinds: dict[tuple[Vertex, Vertex], str] = {}
    for k in range(1, K + 1):
        past = {Yv(j) for j in past_indices(k, m)}
        parents[Yv(k)] = frozenset(past)
        r_par = set(past) | {Yv(k)}
        for j in future_indices(k, m, K):
            r_par |= Ov(j)
        parents[Rv(k)] = frozenset(r_par)
        parents[Yobs(k)] = frozenset({Rv(k), Yv(k)})
    for v, ps in parents.items():
        for p in ps:
            if v[0] == "Yobs":
                kinds[(p, v)] = DETERMINISTIC
            elif v[0] == "R" and p == Yv(v[1]):
                kinds[(p, v)] = TILT
            else:
                kinds[(p, v)] = PLAIN
    dag = ModelDag(
        vertices=tuple(total_order(K)),
        parents=parents,
        deterministic=frozenset(Yobs(k) for k in range(1, K + 1)),
        edge_kind=kinds,
    )
    assert dag.is_acyclic_under(total_order(K))
    return dag


def d_separated(dag: ModelDag, X: Iterable[Vertex], Z: Iterable[Vertex], S: Iterable[Vertex]) -> bool:
    """True iff every path between ``X`` and ``Z`` is blocked by ``S``.

    Reachability search over (vertex, direction) states: a trail may pass a
    non-collider outside ``S``, and a collider that is in ``S`` or has a
    descendant in ``S``.
    """
    X, Z, S = set(X), set(Z), set(S)
    known = set(dag.vertices)
    for v in X | Z | S:
        if v not in known:
            raise GraphError(f"unknown vertex {v}")
    if X & Z or X & S or Z & S:
        raise GraphError("X, Z and S must be disjoint")
    children = dag.children()

    # S together with its ancestors: colliders in this set are open
    anc = set()
    stack = list(S)
    while stack:
        v = stack.pop()
        if v not in anc:
            anc.add(v)
            stack.extend(dag.parents[v])

    # "up" = arrived from a child, "down" = arrived from a parent
    queue = deque((x, "up") for x in X)
    seen = set()
    while queue:
        v, direction = queue.popleft()
        if (v, direction) in seen:
            continue
        seen.add((v, direction))
        if v not in S and v in Z:
            return False
        if direction == "up" and v not in S:
            for p in dag.parents[v]:
                queue.append((p, "up"))
            for c in children[v]:
                queue.append((c, "down"))
        elif direction == "down":
            if v not in S:
                for c in children[v]:
                    queue.append((c, "down"))
            if v in anc:
                for p in dag.parents[v]:
                    queue.append((p, "up"))
    return True


LEMMA1 = "Lemma1"
LEMMA2 = "Lemma2"
ADHOC = "adhoc"


@dataclass(frozen=True)
class CiStatement:
    """``X`` independent of ``Z`` given ``S``."""

    X: frozenset
    Z: frozenset
    S: frozenset
    source: str = ADHOC
    k: int = 0

    def __post_init__(self):
        if self.X & self.Z or self.X & self.S or self.Z & self.S:
            raise GraphError("X, Z and S must be pairwise disjoint")

    def describe(self) -> str:
        def fmt(vs):
            return "{" + ",".join(vertex_name(v) for v in _sorted(vs)) + "}"

        return f"{fmt(self.X)} _||_ {fmt(self.Z)} | {fmt(self.S)}"


def _sorted(vs):
    rank = {"Y": 0, "R": 1, "Yobs": 2}
    return sorted(vs, key=lambda v: (v[1], rank[v[0]]))


def lemma_statements(spec: ModelSpec, which: str) -> list[CiStatement]:
    """Independence statements asserted for each valid ``k``."""
    K, m = spec.K, spec.m
    out = []
    if which == LEMMA1:
        for k in range(2, K - m):
            X = {Rv(j) for j in past_indices(k, m)}
            Z = Ov(k + m + 1)
            S = {Yv(j) for j in past_indices(k, m)}
            for j in range(k, min(k + m, K) + 1):
                S |= Ov(j)
            out.append(CiStatement(frozenset(X), frozenset(Z), frozenset(S), LEMMA1, k))
    elif which == LEMMA2:
        for k in range(1, K - m):
            X = {Rv(k)}
            Z = Ov(k + m + 1)
            S = {Yv(j) for j in past_indices(k, m)} | {Yv(k)}
            for j in future_indices(k, m, K):
                S |= Ov(j)
            out.append(CiStatement(frozenset(X), frozenset(Z), frozenset(S), LEMMA2, k))
    else:
        raise ValueError(f"unknown lemma {which!r}")
    return out
