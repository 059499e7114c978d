"""Model specification and the index windows used throughout the recursion."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

from markovtilt.tables import O, Y, Var


class SpecError(ValueError):
    pass


@dataclass(frozen=True)
class ModelSpec:
    """Number of assessments ``K``, Markov order ``m`` and one tilt per assessment."""

    K: int
    m: int
    alphas: tuple[float, ...] = field(default=())

    def __post_init__(self):
        if self.K < 2:
            raise SpecError(f"K must be at least 2, got {self.K}")
        if self.m < 0:
            raise SpecError(f"m must be nonnegative, got {self.m}")
        if 2 * self.m + 1 >= self.K:
            raise SpecError(f"need 2m+1 < K, got K={self.K}, m={self.m}")
        alphas = tuple(float(a) for a in self.alphas) if self.alphas else (0.0,) * self.K
        if len(alphas) != self.K:
            raise SpecError(f"expected {self.K} sensitivity parameters, got {len(alphas)}")
        if not all(math.isfinite(a) for a in alphas):
            raise SpecError("sensitivity parameters must be finite")
        object.__setattr__(self, "alphas", alphas)

    @classmethod
    def common(cls, K: int, m: int, alpha: float = 0.0) -> "ModelSpec":
        return cls(K, m, (float(alpha),) * K)

    def with_alphas(self, alphas) -> "ModelSpec":
        if isinstance(alphas, (int, float)):
            alphas = (float(alphas),) * self.K
        return ModelSpec(self.K, self.m, tuple(alphas))

    @property
    def n_windows(self) -> int:
        return self.K - 2 * self.m - 1

    @property
    def window_width(self) -> int:
        return 2 * self.m + 2

    def alpha(self, k: int) -> float:
        return self.alphas[k - 1]

    def to_dict(self) -> dict:
        return {"K": self.K, "m": self.m, "alphas": list(self.alphas)}


# Windows truncate at the boundaries: an empty index range is the null vector.

def past_indices(k: int, m: int) -> list[int]:
    """Indices ``max(1, k-m) .. k-1``."""
    return list(range(max(1, k - m), k))


def future_indices(k: int, m: int, K: int) -> list[int]:
    """Indices ``k+1 .. min(k+m, K)``."""
    return list(range(k + 1, min(k + m, K) + 1))


def past_y(k: int, m: int) -> list[Var]:
    return [Y(j) for j in past_indices(k, m)]


def future_o(k: int, m: int, K: int) -> list[Var]:
    return [O(j) for j in future_indices(k, m, K)]


def window_vars(i: int, m: int) -> list[Var]:
    """Schema ``O_i .. O_{i+2m+1}`` of the ``i``-th observed-law window."""
    return [O(j) for j in range(i, i + 2 * m + 2)]
