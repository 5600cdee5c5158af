from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.typing import NDArray

from pimtool.linalg import min_eigenvalue, sym

KINDS = ("fim", "pim", "combiner-bound", "misspecified")


@dataclass(frozen=True, eq=False)
class InfoMatrix:
    """An ``n x n`` information matrix tagged with its kind and provenance.

    ``stderr`` holds entrywise Monte Carlo standard errors when the matrix
    was estimated by simulation.
    """

    matrix: NDArray[np.float64]
    kind: str
    method: str
    theta: tuple[float, ...]
    stderr: NDArray[np.float64] | None = field(default=None)

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise ValueError(f"unknown information kind {self.kind!r}")
        object.__setattr__(self, "matrix", sym(self.matrix))
        object.__setattr__(self, "theta", tuple(float(t) for t in self.theta))

    @property
    def n(self) -> int:
        return self.matrix.shape[0]

    @property
    def min_eigenvalue(self) -> float:
        return min_eigenvalue(self.matrix)

    @property
    def ridged(self) -> bool:
        return "ridged" in self.method
