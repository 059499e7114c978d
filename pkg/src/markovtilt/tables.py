"""Dense discrete probability tables over outcome (Y) and observed-data (O) variables.

Every table carries a schema of :class:`Var` objects kept in canonical order
(ascending assessment index, ``O`` before ``Y`` at equal index) and an
``ndarray`` whose axes follow that schema.  Because schemas are canonical, the
schema of any sub-table is a subsequence of its parent's, so products reduce to
reshapes plus broadcasting.

O-codes: ``0`` = observed 0, ``1`` = observed 1, ``2`` = missing.
"""
from __future__ import annotations

import contextvars
import weakref
from dataclasses import dataclass
from typing import Iterable, Mapping, NamedTuple

import numpy as np

MISSING = 2

Y_KIND = "Y"
O_KIND = "O"
_CARD = {Y_KIND: 2, O_KIND: 3}


class TableError(ValueError):
    """Invalid table construction or operation."""


class PositivityError(TableError):
    """A conditioning assignment has zero mass."""

    def __init__(self, assignment):
        self.assignment = assignment
        desc = ", ".join(f"{v}={x}" for v, x in assignment.items())
        super().__init__(f"zero marginal mass at ({desc})")


class Var(NamedTuple):
    kind: str
    index: int

    @property
    def card(self) -> int:
        return _CARD[self.kind]

    def __str__(self):
        return f"{self.kind}{self.index}"


def Y(k: int) -> Var:
    return Var(Y_KIND, k)


def O(k: int) -> Var:  # noqa: E743
    return Var(O_KIND, k)


def _key(v: Var):
    return (v.index, 0 if v.kind == O_KIND else 1)


def canonical(variables: Iterable[Var]) -> tuple[Var, ...]:
    """Sort and deduplicate variables into canonical schema order."""
    out = sorted(set(variables), key=_key)
    for v in out:
        if v.kind not in _CARD:
            raise TableError(f"unknown variable kind {v.kind!r}")
    return tuple(out)


# --- storage instrumentation -------------------------------------------------

class StorageMeter:
    """Tracks the number of table entries alive while the meter is active."""

    def __init__(self):
        self.live = 0
        self.peak = 0

    def _add(self, size):
        self.live += size
        if self.live > self.peak:
            self.peak = self.live

    def _release(self, size):
        self.live -= size


_meter: contextvars.ContextVar[StorageMeter | None] = contextvars.ContextVar(
    "table_meter", default=None
)


class metered:
    """Context manager activating a :class:`StorageMeter` for new tables."""

    def __init__(self):
        self.meter = StorageMeter()
        self._token = None

    def __enter__(self) -> StorageMeter:
        self._token = _meter.set(self.meter)
        return self.meter

    def __exit__(self, *exc):
        _meter.reset(self._token)
        return False


# --- the table -----------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class FactorTable:
    schema: tuple[Var, ...]
    values: np.ndarray

    def __post_init__(self):
        schema = tuple(self.schema)
        keys = [_key(v) for v in schema]
        if any(a >= b for a, b in zip(keys, keys[1:])) or any(v.kind not in _CARD for v in schema):
            raise TableError(f"schema not canonical or has duplicates: {schema}")
        values = np.asarray(self.values, dtype=float)
        shape = tuple(_CARD[v.kind] for v in schema)
        if values.shape != shape:
            if values.size != int(np.prod(shape, dtype=int)):
                raise TableError(f"values of size {values.size} do not fit shape {shape}")
            values = values.reshape(shape)
        lo, hi = values.min(), values.max()
        if not (np.isfinite(lo) and np.isfinite(hi)):
            raise TableError("table entries must be finite")
        if lo < 0:
            raise TableError("table entries must be nonnegative")
        object.__setattr__(self, "schema", schema)
        object.__setattr__(self, "values", values)
        meter = _meter.get()
        if meter is not None:
            meter._add(values.size)
            weakref.finalize(self, meter._release, values.size)

    @classmethod
    def _derived(cls, schema: tuple[Var, ...], values: np.ndarray) -> "FactorTable":
        # operations on valid tables give valid tables; skip re-validation
        t = object.__new__(cls)
        object.__setattr__(t, "schema", schema)
        object.__setattr__(t, "values", values)
        meter = _meter.get()
        if meter is not None:
            meter._add(values.size)
            weakref.finalize(t, meter._release, values.size)
        return t

    @classmethod
    def from_array(cls, schema: Iterable[Var], values) -> "FactorTable":
        """Build a table whose axes follow ``schema`` in any order."""
        schema = tuple(schema)
        arr = np.asarray(values, dtype=float).reshape([v.card for v in schema])
        if len(set(schema)) != len(schema):
            raise TableError(f"duplicate variables in {schema}")
        canon = canonical(schema)
        perm = [schema.index(v) for v in canon]
        return cls(canon, np.transpose(arr, perm))

    @classmethod
    def unit(cls) -> "FactorTable":
        return cls((), np.array(1.0))

    @property
    def size(self) -> int:
        return self.values.size

    @property
    def flat(self) -> np.ndarray:
        """Row-major entries in schema order."""
        return self.values.reshape(-1)

    def total(self) -> float:
        return float(self.values.sum())

    def axis(self, v: Var) -> int:
        try:
            return self.schema.index(v)
        except ValueError:
            raise TableError(f"{v} not in schema {self.schema}") from None

    def __getitem__(self, assignment: Mapping[Var, int]) -> float:
        idx = tuple(assignment[v] for v in self.schema)
        return float(self.values[idx])

    def __repr__(self):
        names = ",".join(map(str, self.schema))
        return f"FactorTable({names}; size={self.size})"

    def allclose(self, other: "FactorTable", atol=1e-12) -> bool:
        return self.schema == other.schema and bool(
            np.allclose(self.values, other.values, rtol=0.0, atol=atol)
        )

    def is_normalized(self, tol=1e-12) -> bool:
        return abs(self.total() - 1.0) <= tol

    def is_conditional(self, given: Iterable[Var], tol=1e-12) -> bool:
        given = set(given)
        axes = tuple(i for i, v in enumerate(self.schema) if v not in given)
        sums = self.values.sum(axis=axes)
        return bool(np.all(np.abs(sums - 1.0) <= tol))


# --- operations ----------------------------------------------------------------

def _expand(t: FactorTable, schema: tuple[Var, ...]) -> np.ndarray:
    # t.schema is a subsequence of schema because both are canonical
    shape = [v.card if v in t.schema else 1 for v in schema]
    return t.values.reshape(shape)


def product(a: FactorTable, b: FactorTable) -> FactorTable:
    """Pointwise product over the union of the two schemas.

    Alphabets are fixed by variable kind, so shared variables always agree.
    """
    schema = canonical(a.schema + b.schema)
    return FactorTable._derived(schema, _expand(a, schema) * _expand(b, schema))


def product_all(tables: Iterable[FactorTable]) -> FactorTable:
    out = FactorTable.unit()
    for t in tables:
        out = product(out, t)
    return out


def marginalize(t: FactorTable, out: Iterable[Var]) -> FactorTable:
    """Sum out the variables in ``out``."""
    out = set(out)
    missing = out - set(t.schema)
    if missing:
        raise TableError(f"cannot marginalize {sorted(map(str, missing))}: not in schema")
    if not out:
        return t
    axes = tuple(i for i, v in enumerate(t.schema) if v in out)
    keep = tuple(v for v in t.schema if v not in out)
    return FactorTable._derived(keep, t.values.sum(axis=axes))


def restrict(t: FactorTable, keep: Iterable[Var]) -> FactorTable:
    """Marginal table over ``keep``."""
    keep = set(keep)
    return marginalize(t, [v for v in t.schema if v not in keep])


def slice_table(t: FactorTable, evidence: Mapping[Var, int]) -> FactorTable:
    """Unnormalized restriction to ``evidence``; evidence variables leave the schema."""
    idx: list = []
    for v in t.schema:
        if v in evidence:
            x = evidence[v]
            if not 0 <= x < v.card:
                raise TableError(f"value {x} outside alphabet of {v}")
            idx.append(int(x))
        else:
            idx.append(slice(None))
    unknown = set(evidence) - set(t.schema)
    if unknown:
        raise TableError(f"evidence on variables not in schema: {sorted(map(str, unknown))}")
    keep = tuple(v for v in t.schema if v not in evidence)
    # copy so the result never pins its parent's buffer
    return FactorTable._derived(keep, t.values[tuple(idx)].copy())


def normalize(t: FactorTable) -> FactorTable:
    s = t.total()
    if s <= 0:
        raise PositivityError({})
    return FactorTable._derived(t.schema, t.values / s)


def to_conditional(t: FactorTable, given: Iterable[Var]) -> FactorTable:
    """Normalize ``t`` so that it sums to one for every assignment of ``given``."""
    given = set(given)
    if not given <= set(t.schema):
        raise TableError("conditioning set not contained in schema")
    axes = tuple(i for i, v in enumerate(t.schema) if v not in given)
    denom = t.values.sum(axis=axes, keepdims=True)
    if np.any(denom <= 0):
        bad = np.argwhere(denom.reshape(denom.shape) <= 0)[0]
        assignment = {v: int(bad[i]) for i, v in enumerate(t.schema) if v in given}
        raise PositivityError(assignment)
    return FactorTable._derived(t.schema, t.values / denom)


def observed_as_outcome(t: FactorTable, indices: Iterable[int]) -> FactorTable:
    """Condition ``O_j`` on being observed (codes 0/1) and rename it ``Y_j``.

    This is the bridge between observed-data tables and mixed (Y, O) tables:
    on the event ``R_j = 1`` the O-code equals the outcome.
    """
    indices = list(indices)
    if not indices:
        return t
    idx = []
    schema = []
    for v in t.schema:
        if v.kind == O_KIND and v.index in indices:
            if Y(v.index) in t.schema:
                raise TableError(f"{Y(v.index)} already present")
            idx.append(slice(0, 2))
            schema.append(Y(v.index))
        else:
            idx.append(slice(None))
            schema.append(v)
    for j in indices:
        if O(j) not in t.schema:
            raise TableError(f"{O(j)} not in schema")
    return FactorTable._derived(tuple(schema), t.values[tuple(idx)].copy())


def floor_conditional(t: FactorTable, given: Iterable[Var], eps: float) -> FactorTable:
    """Clamp a conditional table at ``eps`` and renormalize it."""
    given = set(given)
    return to_conditional(FactorTable(t.schema, np.maximum(t.values, eps)), given)


def add(a: FactorTable, b: FactorTable) -> FactorTable:
    """Entrywise sum of two tables over the union of their schemas."""
    schema = canonical(a.schema + b.schema)
    return FactorTable._derived(schema, _expand(a, schema) + _expand(b, schema))


def scale(t: FactorTable, c: float) -> FactorTable:
    return FactorTable(t.schema, t.values * c)
