"""Stratified 2x2 tables, covariates, and fit results.

Each stratum is a 2x2 table with fixed row totals::

              response 1   response 2   total
    factor 1     n11          n12         N1
    factor 2     n21          n22         N2

Rows are the two factor levels (groups), columns are success / failure.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Optional, Sequence

import numpy as np

from .errors import RankDeficient

__all__ = [
    "StratumTable",
    "Proportions",
    "StratifiedDataset",
    "FitResult",
    "DatasetDiagnostics",
    "proportions",
    "validate_dataset",
]


@dataclass(frozen=True)
class StratumTable:
    n11: int
    n12: int
    n21: int
    n22: int

    def __post_init__(self):
        for name in ("n11", "n12", "n21", "n22"):
            value = getattr(self, name)
            if int(value) != value or value < 0:
                raise ValueError(f"{name} must be a non-negative integer, got {value!r}")
            object.__setattr__(self, name, int(value))
        if self.N1 < 1 or self.N2 < 1:
            raise ValueError(
                f"empty row in table {self.counts}: N1={self.N1}, N2={self.N2}"
            )

    @property
    def N1(self) -> int:
        return self.n11 + self.n12

    @property
    def N2(self) -> int:
        return self.n21 + self.n22

    @property
    def N(self) -> int:
        return self.N1 + self.N2

    @property
    def successes(self) -> int:
        return self.n11 + self.n21

    @property
    def counts(self) -> tuple:
        return (self.n11, self.n12, self.n21, self.n22)

    def swap_rows(self) -> "StratumTable":
        return StratumTable(self.n21, self.n22, self.n11, self.n12)

    def swap_responses(self) -> "StratumTable":
        return StratumTable(self.n12, self.n11, self.n22, self.n21)


@dataclass(frozen=True)
class Proportions:
    """Raw per-row success and failure proportions, held as exact rationals."""

    p11: Fraction
    p12: Fraction
    p21: Fraction
    p22: Fraction

    @property
    def A(self) -> Fraction:
        return self.p11 * self.p22

    @property
    def B(self) -> Fraction:
        return self.p12 * self.p21


def proportions(table: StratumTable) -> Proportions:
    """Raw probability estimates of one table.

    Arithmetic is exact (:class:`fractions.Fraction`), so ``N1 * p11 == n11``
    holds identically; convert with ``float()`` where speed matters.
    """
    return Proportions(
        p11=Fraction(table.n11, table.N1),
        p12=Fraction(table.n12, table.N1),
        p21=Fraction(table.n21, table.N2),
        p22=Fraction(table.n22, table.N2),
    )


def _readonly(a):
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


class StratifiedDataset:
    """An ordered sequence of 2x2 tables, each with a covariate vector.

    Parameters
    ----------
    counts : array_like, shape (J, 4)
        Rows ``(n11, n12, n21, n22)``.
    design : array_like, shape (J, p), optional
        Covariate vector ``x_j`` of each stratum.  Defaults to a column of
        ones (common ratio across strata).
    names : sequence of str, optional
        Covariate names, ``x1..xp`` by default.
    stratum_ids : sequence, optional

    Stratum order is preserved.  Arrays are read-only after construction.
    """

    def __init__(self, counts, design=None, names=None, stratum_ids=None):
        counts = np.asarray(counts)
        if counts.ndim != 2 or counts.shape[1] != 4:
            raise ValueError("counts must have shape (J, 4)")
        if counts.shape[0] < 1:
            raise ValueError("a dataset needs at least one stratum")
        if not np.all(np.equal(np.mod(counts, 1), 0)) or np.any(counts < 0):
            raise ValueError("counts must be non-negative integers")
        counts = counts.astype(np.int64)
        N1 = counts[:, 0] + counts[:, 1]
        N2 = counts[:, 2] + counts[:, 3]
        bad = np.flatnonzero((N1 < 1) | (N2 < 1))
        if bad.size:
            raise ValueError(f"empty row in stratum index {int(bad[0])}")
        J = counts.shape[0]
        if design is None:
            design = np.ones((J, 1))
        design = np.asarray(design, dtype=float)
        if design.ndim == 1:
            design = design[:, None]
        if design.shape[0] != J or design.shape[1] < 1:
            raise ValueError(f"design must have shape (J={J}, p>=1), got {design.shape}")
        if not np.all(np.isfinite(design)):
            raise ValueError("design must be finite")
        p = design.shape[1]
        if names is None:
            names = [f"x{k + 1}" for k in range(p)]
        if len(names) != p:
            raise ValueError("one name per covariate column")
        if stratum_ids is None:
            stratum_ids = list(range(1, J + 1))
        if len(stratum_ids) != J:
            raise ValueError("one stratum id per stratum")
        self.counts = _readonly(counts)
        self.design = _readonly(design)
        self.names = tuple(str(n) for n in names)
        self.stratum_ids = tuple(stratum_ids)

    @classmethod
    def from_tables(cls, tables: Iterable, design=None, **kwargs) -> "StratifiedDataset":
        rows = [t.counts if isinstance(t, StratumTable) else tuple(t) for t in tables]
        return cls(np.array(rows, dtype=np.int64).reshape(-1, 4), design, **kwargs)

    def __len__(self):
        return self.J

    def __repr__(self):
        return f"StratifiedDataset(J={self.J}, p={self.p}, N={self.N_total})"

    @property
    def J(self) -> int:
        return self.counts.shape[0]

    @property
    def p(self) -> int:
        return self.design.shape[1]

    @property
    def n11(self):
        return self.counts[:, 0]

    @property
    def n12(self):
        return self.counts[:, 1]

    @property
    def n21(self):
        return self.counts[:, 2]

    @property
    def n22(self):
        return self.counts[:, 3]

    @property
    def N1(self):
        return self.counts[:, 0] + self.counts[:, 1]

    @property
    def N2(self):
        return self.counts[:, 2] + self.counts[:, 3]

    @property
    def N(self):
        return self.counts.sum(axis=1)

    @property
    def N_total(self) -> int:
        return int(self.counts.sum())

    @property
    def successes(self):
        return self.counts[:, 0] + self.counts[:, 2]

    @property
    def tables(self) -> list:
        return [StratumTable(*map(int, row)) for row in self.counts]

    def stratum(self, j):
        return StratumTable(*map(int, self.counts[j])), self.design[j]

    def phat(self):
        """Float raw proportions ``(p11, p12, p21, p22)`` as arrays."""
        N1 = self.N1.astype(float)
        N2 = self.N2.astype(float)
        return (self.n11 / N1, self.n12 / N1, self.n21 / N2, self.n22 / N2)

    def has_constant_covariate(self) -> bool:
        return self.p == 1 and bool(np.all(self.design == self.design[0, 0]))

    def swap_rows(self) -> "StratifiedDataset":
        """Exchange the two factor levels in every table."""
        return StratifiedDataset(self.counts[:, [2, 3, 0, 1]], self.design, self.names, self.stratum_ids)

    def swap_responses(self) -> "StratifiedDataset":
        """Exchange success and failure in every table."""
        return StratifiedDataset(self.counts[:, [1, 0, 3, 2]], self.design, self.names, self.stratum_ids)

    def subset(self, index) -> "StratifiedDataset":
        index = np.asarray(index)
        ids = np.asarray(self.stratum_ids, dtype=object)[index]
        return StratifiedDataset(self.counts[index], self.design[index], self.names, list(ids))

    def __eq__(self, other):
        if not isinstance(other, StratifiedDataset):
            return NotImplemented
        return (
            np.array_equal(self.counts, other.counts)
            and np.array_equal(self.design, other.design)
            and self.names == other.names
            and tuple(map(str, self.stratum_ids)) == tuple(map(str, other.stratum_ids))
        )

    __hash__ = None


@dataclass
class DatasetDiagnostics:
    J: int
    p: int
    rank: int
    small_rows: list = field(default_factory=list)
    degenerate_margins: list = field(default_factory=list)
    warnings: list = field(default_factory=list)


def validate_dataset(ds: StratifiedDataset) -> DatasetDiagnostics:
    """Check the design rank and flag strata that disable some estimators.

    Raises
    ------
    RankDeficient
        If the design matrix has rank below ``p``.
    """
    rank = int(np.linalg.matrix_rank(ds.design))
    diag = DatasetDiagnostics(J=ds.J, p=ds.p, rank=rank)
    small = np.flatnonzero((ds.N1 < 2) | (ds.N2 < 2))
    diag.small_rows = [int(j) for j in small]
    for j in diag.small_rows:
        diag.warnings.append(
            f"stratum {ds.stratum_ids[j]}: N1<2 or N2<2, finite-sample variance correction unavailable"
        )
    s = ds.successes
    degenerate = np.flatnonzero((s == 0) | (s == ds.N))
    diag.degenerate_margins = [int(j) for j in degenerate]
    for j in diag.degenerate_margins:
        kind = "no successes" if s[j] == 0 else "all successes"
        diag.warnings.append(f"stratum {ds.stratum_ids[j]}: {kind}")
    if rank < ds.p:
        raise RankDeficient(f"design rank {rank} < p={ds.p}")
    return diag


@dataclass
class FitResult:
    """Point estimate with model-based and model-robust covariance matrices.

    Both covariance matrices are on the scale of ``estimate`` itself
    (standard errors are square roots of their diagonals).
    """

    estimate: np.ndarray
    cov_model_based: Optional[np.ndarray]
    cov_model_robust: Optional[np.ndarray] = None
    iterations: int = 0
    gradient_norm: float = 0.0
    converged: bool = True
    method: str = ""
    names: Sequence[str] = ()
    diagnostics: dict = field(default_factory=dict)
    extras: dict = field(default_factory=dict)

    @property
    def bse(self):
        if self.cov_model_based is None:
            return None
        return np.sqrt(np.diag(self.cov_model_based))

    @property
    def rse(self):
        if self.cov_model_robust is None:
            return None
        return np.sqrt(np.diag(self.cov_model_robust))
