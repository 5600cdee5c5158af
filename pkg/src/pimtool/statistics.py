"""Statistic vectors ``s(y)`` built from averaged monomials or custom functions."""

from __future__ import annotations

from collections.abc import Callable, Iterable, Sequence
from dataclasses import dataclass, field

import numpy as np
from numpy.typing import ArrayLike, NDArray

from pimtool.errors import DuplicateDescriptor

__all__ = [
    "StatisticDescriptor",
    "StatisticSet",
    "custom",
    "eval_stats",
    "extend",
    "monomial",
    "monomial_ladder",
    "parse_stats",
]


@dataclass(frozen=True)
class StatisticDescriptor:
    """One component of ``s(y)``.

    A ``monomial-mean`` of degree ``d`` is ``mean(y_i**d)`` over the ``N``
    observations. A ``custom`` statistic maps the full data vector (shape
    ``(..., N)``) to a value per leading index.
    """

    kind: str
    degree: int = 0
    label: str = ""
    fn: Callable[[NDArray], NDArray] | None = field(default=None, compare=False, repr=False)

    def __post_init__(self) -> None:
        if self.kind == "monomial-mean":
            if self.degree < 1:
                raise ValueError("monomial degree must be >= 1")
            if not self.label:
                object.__setattr__(self, "label", f"m{self.degree}")
        elif self.kind == "custom":
            if self.fn is None or not self.label:
                raise ValueError("custom statistics need a label and a function")
        else:
            raise ValueError(f"unknown statistic kind {self.kind!r}")

    def __call__(self, y: NDArray) -> NDArray:
        if self.kind == "monomial-mean":
            return np.mean(y**self.degree, axis=-1)
        return np.asarray(self.fn(y), dtype=np.float64)


def monomial(degree: int) -> StatisticDescriptor:
    return StatisticDescriptor("monomial-mean", degree)


def custom(label: str, fn: Callable[[NDArray], NDArray]) -> StatisticDescriptor:
    return StatisticDescriptor("custom", 0, label, fn)


@dataclass(frozen=True)
class StatisticSet:
    descriptors: tuple[StatisticDescriptor, ...]

    def __init__(self, descriptors: Iterable[StatisticDescriptor | int]) -> None:
        descs = tuple(monomial(d) if isinstance(d, int) else d for d in descriptors)
        seen = set()
        for d in descs:
            if d in seen:
                raise DuplicateDescriptor(f"statistic {d.label!r} appears twice")
            seen.add(d)
        object.__setattr__(self, "descriptors", descs)

    def __len__(self) -> int:
        return len(self.descriptors)

    def __iter__(self):
        return iter(self.descriptors)

    def __getitem__(self, idx):
        return self.descriptors[idx]

    @property
    def labels(self) -> list[str]:
        return [d.label for d in self.descriptors]

    @property
    def is_monomial(self) -> bool:
        return all(d.kind == "monomial-mean" for d in self.descriptors)

    @property
    def degrees(self) -> list[int]:
        return [d.degree for d in self.descriptors]

    def __str__(self) -> str:
        return ",".join(self.labels)


def eval_stats(sset: StatisticSet, y: ArrayLike) -> NDArray[np.float64]:
    """Evaluate ``s(y)``; shape ``(M,)`` for one vector, ``(k, M)`` for a batch."""
    y = np.asarray(y, dtype=np.float64)
    if not sset.is_monomial:
        return np.stack([d(y) for d in sset.descriptors], axis=-1)
    means = {}
    power = y
    for deg in range(1, max(sset.degrees) + 1):
        if deg > 1:
            power = power * y
        means[deg] = power.mean(axis=-1)
    return np.stack([means[d] for d in sset.degrees], axis=-1)


def extend(sset: StatisticSet, descriptor: StatisticDescriptor | int) -> StatisticSet:
    """New set with ``descriptor`` appended as the last component."""
    return StatisticSet(sset.descriptors + (descriptor,))


def monomial_ladder(max_degree: int) -> list[StatisticSet]:
    if max_degree < 1:
        raise ValueError("max_degree must be >= 1")
    return [StatisticSet(range(1, d + 1)) for d in range(1, max_degree + 1)]


def parse_stats(text: str | Sequence[int]) -> StatisticSet:
    """Parse ``"m1,m2,m3"`` (the ``m`` is optional) into a monomial set."""
    if not isinstance(text, str):
        return StatisticSet(int(d) for d in text)
    degrees = []
    for tok in text.split(","):
        tok = tok.strip().lower().removeprefix("m")
        if not tok.isdigit():
            raise ValueError(f"bad statistic token in {text!r}; expected e.g. 'm1,m2'")
        degrees.append(int(tok))
    return StatisticSet(degrees)
