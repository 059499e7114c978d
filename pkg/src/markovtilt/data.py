"""Trial data: one row per participant, one O-code per assessment."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from markovtilt.tables import MISSING

_MISSING_TOKENS = {"na", "", "nan", "."}


class DataError(ValueError):
    pass


@dataclass(frozen=True)
class Dataset:
    """``codes[i, k-1]`` is the O-code of participant ``i`` at assessment ``k``."""

    codes: np.ndarray
    ids: tuple = field(default=())

    def __post_init__(self):
        codes = np.asarray(self.codes)
        if codes.ndim != 2:
            raise DataError("codes must be an n x K matrix")
        if codes.size and not np.isin(codes, (0, 1, MISSING)).all():
            raise DataError("cells must be 0, 1 or missing")
        codes = codes.astype(np.int8)
        codes.setflags(write=False)
        object.__setattr__(self, "codes", codes)
        ids = tuple(self.ids) if self.ids else tuple(str(i + 1) for i in range(codes.shape[0]))
        if len(ids) != codes.shape[0]:
            raise DataError("one id per row required")
        object.__setattr__(self, "ids", ids)

    @property
    def n(self) -> int:
        return self.codes.shape[0]

    @property
    def K(self) -> int:
        return self.codes.shape[1]

    def column(self, k: int) -> np.ndarray:
        return self.codes[:, k - 1]

    @classmethod
    def from_cells(cls, rows) -> "Dataset":
        """Rows of ``0``, ``1`` or ``None`` (missing)."""
        arr = np.array([[MISSING if c is None else int(c) for c in r] for r in rows])
        return cls(arr.reshape(len(rows), -1))

    @classmethod
    def read_csv(cls, path) -> "Dataset":
        path = Path(path)
        try:
            fh = path.open(newline="")
        except OSError as e:
            raise DataError(f"cannot read {path}: {e}") from e
        with fh:
            reader = csv.reader(fh)
            try:
                header = next(reader)
            except StopIteration:
                raise DataError(f"{path}: empty file") from None
            header = [h.strip() for h in header]
            if len(header) < 2 or header[0].lower() != "id":
                raise DataError(f"{path}: header must be id,visit_1,...,visit_K")
            K = len(header) - 1
            for k, h in enumerate(header[1:], start=1):
                if h.lower() != f"visit_{k}":
                    raise DataError(f"{path}: column {k + 1} should be visit_{k}, found {h!r}")
            ids, rows = [], []
            for lineno, rec in enumerate(reader, start=2):
                if not rec or all(not c.strip() for c in rec):
                    continue
                if len(rec) != K + 1:
                    raise DataError(f"{path}:{lineno}: expected {K + 1} fields, got {len(rec)}")
                ids.append(rec[0].strip())
                row = []
                for k, c in enumerate(rec[1:], start=1):
                    c = c.strip()
                    if c.lower() in _MISSING_TOKENS:
                        row.append(MISSING)
                    elif c in ("0", "1"):
                        row.append(int(c))
                    else:
                        raise DataError(f"{path}:{lineno}: visit_{k} has invalid value {c!r}")
                rows.append(row)
        codes = np.array(rows, dtype=np.int8).reshape(len(rows), K)
        return cls(codes, tuple(ids))

    def write_csv(self, path) -> None:
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["id"] + [f"visit_{k}" for k in range(1, self.K + 1)])
            for pid, row in zip(self.ids, self.codes):
                w.writerow([pid] + ["NA" if c == MISSING else str(int(c)) for c in row])


@dataclass(frozen=True)
class PatternCounts:
    n: int
    K: int
    complete: int
    monotone: dict  # number of trailing missing (1..K-1) -> count
    all_missing: int
    nonmonotone: dict  # "1", "2", "3", ">=4" -> count

    @property
    def monotone_total(self) -> int:
        return sum(self.monotone.values())

    def total(self) -> int:
        return self.complete + self.monotone_total + self.all_missing + sum(self.nonmonotone.values())

    def rows(self) -> list[tuple[str, int, float]]:
        """Summary lines in the usual missingness-pattern table layout."""
        pct = lambda c: 100.0 * c / self.n if self.n else 0.0  # noqa: E731
        out = [("Complete", self.complete, pct(self.complete))]
        out.append((f"Monotone: 1..{self.K - 1} missing", self.monotone_total, pct(self.monotone_total)))
        for t in range(1, self.K):
            c = self.monotone.get(t, 0)
            out.append((f"Monotone: last {t} missing", c, pct(c)))
        out.append(("Monotone: all missing", self.all_missing, pct(self.all_missing)))
        for key in ("1", "2", "3", ">=4"):
            c = self.nonmonotone[key]
            out.append((f"Non-monotone: {key} missing", c, pct(c)))
        return out


def pattern_summary(d: Dataset) -> PatternCounts:
    K = d.K
    miss = d.codes == MISSING
    n_miss = miss.sum(axis=1)
    # a monotone row's missing cells form a suffix: after the first miss, all missing
    first = np.where(miss.any(axis=1), miss.argmax(axis=1), K)
    suffix = n_miss == (K - first)
    complete = int((n_miss == 0).sum())
    all_missing = int((n_miss == K).sum())
    mono = suffix & (n_miss > 0) & (n_miss < K)
    monotone = {t: int((mono & (n_miss == t)).sum()) for t in range(1, K)}
    nonmono = ~suffix
    nm = {
        "1": int((nonmono & (n_miss == 1)).sum()),
        "2": int((nonmono & (n_miss == 2)).sum()),
        "3": int((nonmono & (n_miss == 3)).sum()),
        ">=4": int((nonmono & (n_miss >= 4)).sum()),
    }
    return PatternCounts(d.n, K, complete, monotone, all_missing, nm)


# reference analyses on the raw data

def observed_means(d: Dataset) -> np.ndarray:
    """Proportion of ones among observed cells at each assessment (nan if none)."""
    obs = d.codes != MISSING
    ones = (d.codes == 1).sum(axis=0)
    nobs = obs.sum(axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(nobs > 0, ones / np.maximum(nobs, 1), np.nan)


def imputed_outcomes(d: Dataset, how: str) -> np.ndarray:
    """Outcome matrix with missing cells imputed: ``"zero"``, ``"one"`` or ``"mean"``."""
    y = d.codes.astype(float)
    miss = d.codes == MISSING
    if how == "zero":
        fill = np.zeros(d.K)
    elif how == "one":
        fill = np.ones(d.K)
    elif how == "mean":
        fill = np.nan_to_num(observed_means(d))
    else:
        raise ValueError(f"unknown imputation {how!r}")
    return np.where(miss, fill[None, :], y)
