"""The observed-data law as a chain of overlapping window joints."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from markovtilt.model import window_vars
from markovtilt.tables import FactorTable, O, marginalize, restrict, to_conditional

FORMAT_VERSION = 1


class LawError(ValueError):
    pass


@dataclass(frozen=True)
class ObservedLaw:
    """Windows ``W_i = f(O_i, ..., O_{i+2m+1})`` for ``i = 1 .. K-2m-1``."""

    K: int
    m: int
    windows: tuple[FactorTable, ...]
    estimator: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "windows", tuple(self.windows))
        n = self.K - 2 * self.m - 1
        if len(self.windows) != n:
            raise LawError(f"expected {n} windows, got {len(self.windows)}")
        for i, w in enumerate(self.windows, start=1):
            if w.schema != tuple(window_vars(i, self.m)):
                raise LawError(f"window {i} has schema {w.schema}")

    @property
    def storage(self) -> int:
        return sum(w.size for w in self.windows)

    def window(self, i: int) -> FactorTable:
        if not 1 <= i <= len(self.windows):
            raise LawError(f"window index {i} out of range 1..{len(self.windows)}")
        return self.windows[i - 1]

    def window_containing(self, indices) -> FactorTable:
        """The first window whose span covers all of ``indices``."""
        lo, hi = min(indices), max(indices)
        i = max(1, min(lo, len(self.windows)))
        if hi > i + 2 * self.m + 1:
            raise LawError(f"indices {lo}..{hi} do not fit in one window")
        return self.window(i)

    def marginal(self, indices) -> FactorTable:
        """Joint of ``O_j`` for ``j`` in ``indices`` (all within one window)."""
        return restrict(self.window_containing(indices), [O(j) for j in indices])

    def conditional(self, j: int) -> FactorTable:
        """``f(O_j | O_{j-2m-1}, ..., O_{j-1})`` for ``j > 2m+2``."""
        i = j - 2 * self.m - 1
        w = self.window(i)
        return to_conditional(w, [O(t) for t in range(i, j)])

    def overlap_residual(self) -> float:
        worst = 0.0
        for i in range(1, len(self.windows)):
            a = marginalize(self.windows[i - 1], [O(i)])
            b = marginalize(self.windows[i], [O(i + 2 * self.m + 2)])
            worst = max(worst, float(np.max(np.abs(a.values - b.values))))
        return worst

    def check(self, tol=1e-10, floor=0.0) -> None:
        """Raise :class:`LawError` unless all window invariants hold."""
        for i, w in enumerate(self.windows, start=1):
            if w.size != 3 ** (2 * self.m + 2):
                raise LawError(f"window {i} has {w.size} entries")
            if not w.is_normalized(1e-12):
                raise LawError(f"window {i} sums to {w.total()!r}")
            if floor and w.values.min() < floor:
                raise LawError(f"window {i} has entries below {floor}")
        r = self.overlap_residual()
        if r > tol:
            raise LawError(f"window overlap residual {r:.3g} exceeds {tol}")

    # -- serialization ------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "format": "observed-law",
            "version": FORMAT_VERSION,
            "K": self.K,
            "m": self.m,
            "estimator": self.estimator,
            "windows": [
                {"schema": [str(v) for v in w.schema], "values": w.flat.tolist()}
                for w in self.windows
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ObservedLaw":
        if d.get("format") != "observed-law" or d.get("version") != FORMAT_VERSION:
            raise LawError("not a version-1 observed-law document")
        K, m = int(d["K"]), int(d["m"])
        windows = []
        for i, w in enumerate(d["windows"], start=1):
            schema = tuple(window_vars(i, m))
            if w["schema"] != [str(v) for v in schema]:
                raise LawError(f"window {i} schema mismatch")
            windows.append(FactorTable(schema, np.array(w["values"], dtype=float)))
        return cls(K, m, tuple(windows), d.get("estimator", {}))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path) -> "ObservedLaw":
        return cls.from_dict(json.loads(Path(path).read_text()))
