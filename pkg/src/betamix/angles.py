"""Data ingestion and the pairwise squared-sine kernel.

Each of the P columns of an n x P matrix is treated as a point in R^n. After
standardisation the dot product of two columns is the cosine of the angle
between them, and the statistic carried through the rest of the pipeline is
z = sin^2(theta) = 1 - r^2.
"""
from __future__ import annotations

import csv
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .exceptions import DegenerateColumnError, InputError

__all__ = [
    "Z_EPS",
    "NA_POLICIES",
    "DataMatrix",
    "PairIndex",
    "ZVector",
    "ingest",
    "standardize",
    "pairwise_z",
    "z_to_abs_r",
]

Z_EPS = 1e-12
NA_POLICIES = ("error", "drop_rows", "impute_zero")
_NA_TOKENS = {"", "na", "nan", "null", "none", "?", "."}


@dataclass(frozen=True)
class DataMatrix:
    """n samples (rows) by P variables (columns).

    ``centered`` is ``None`` for raw data and records the centering choice
    once :func:`standardize` has been applied.
    """

    values: np.ndarray
    column_names: list = field(default_factory=list)
    centered: bool | None = None

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 2:
            raise InputError("data matrix must be two-dimensional")
        object.__setattr__(self, "values", values)
        if not self.column_names:
            object.__setattr__(self, "column_names", [f"V{j + 1}" for j in range(values.shape[1])])
        if len(self.column_names) != values.shape[1]:
            raise InputError(
                f"{len(self.column_names)} column names for {values.shape[1]} columns"
            )
        if values.shape[0] < 3:
            raise InputError(f"need at least 3 samples, got {values.shape[0]}")
        if values.shape[1] < 2:
            raise InputError(f"need at least 2 variables, got {values.shape[1]}")
        if not np.all(np.isfinite(values)):
            raise InputError("data matrix contains non-finite values")

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def P(self) -> int:
        return self.values.shape[1]


class PairIndex:
    """Bijection between pair number j and the node pair (i, k), i < k < P.

    Pairs are numbered row by row through the strict upper triangle:
    j = i*P - i*(i+1)/2 + (k - i - 1).
    """

    def __init__(self, P: int):
        if P < 2:
            raise InputError(f"need at least 2 nodes, got {P}")
        self.P = int(P)
        self.M = self.P * (self.P - 1) // 2

    def __repr__(self):
        return f"PairIndex(P={self.P})"

    def __eq__(self, other):
        return isinstance(other, PairIndex) and other.P == self.P

    def __hash__(self):
        return hash(("PairIndex", self.P))

    def index(self, i, k):
        """Pair number for (i, k); accepts arrays. Order of i and k does not matter."""
        i, k = np.minimum(i, k), np.maximum(i, k)
        if np.any(i == k):
            raise InputError("a pair needs two distinct nodes")
        if np.any(i < 0) or np.any(k >= self.P):
            raise InputError(f"node index out of range for P={self.P}")
        j = i * self.P - i * (i + 1) // 2 + (k - i - 1)
        return int(j) if np.ndim(j) == 0 else j

    def pair(self, j):
        """Inverse of :meth:`index`; accepts arrays."""
        j = np.asarray(j, dtype=np.int64)
        if np.any(j < 0) or np.any(j >= self.M):
            raise InputError(f"pair number out of range for M={self.M}")
        P = self.P

        def start(i):
            return i * (2 * P - i - 1) // 2

        # row i is the largest i with start(i) <= j; the float estimate can be off by one
        disc = (2 * P - 1) ** 2 - 8 * j.astype(float)
        i = np.floor(((2 * P - 1) - np.sqrt(disc)) / 2).astype(np.int64)
        i = np.where(start(i) > j, i - 1, i)
        i = np.where(start(i + 1) <= j, i + 1, i)
        k = j - start(i) + i + 1
        if np.ndim(i) == 0:
            return int(i), int(k)
        return i, k

    @cached_property
    def pairs(self):
        """Arrays (I, K) listing every pair in index order."""
        return np.triu_indices(self.P, 1)


@dataclass(frozen=True)
class ZVector:
    """Pair statistics z_j = sin^2(theta_j) and the signed correlations r_j.

    ``index`` may be ``None`` for synthetic z values that do not come from a
    data matrix; graph construction needs it, the mixture fit does not.
    """

    z: np.ndarray
    r: np.ndarray
    n_samples: int
    index: PairIndex | None = None
    centered: bool = True
    names: list | None = None

    def __post_init__(self):
        z = np.asarray(self.z, dtype=float)
        r = np.asarray(self.r, dtype=float)
        if z.ndim != 1 or r.shape != z.shape:
            raise InputError("z and r must be one-dimensional arrays of equal length")
        if self.index is not None and self.index.M != z.size:
            raise InputError(f"index expects {self.index.M} pairs, got {z.size}")
        object.__setattr__(self, "z", z)
        object.__setattr__(self, "r", r)

    @classmethod
    def from_z(cls, z, n_samples, index=None, centered=False):
        """Wrap bare z values (e.g. simulated draws); r is set to +sqrt(1 - z)."""
        z = np.clip(np.asarray(z, dtype=float), Z_EPS, 1.0 - Z_EPS)
        return cls(z=z, r=np.sqrt(1.0 - z), n_samples=int(n_samples), index=index, centered=centered)

    @property
    def M(self) -> int:
        return self.z.size

    @property
    def P(self) -> int | None:
        return None if self.index is None else self.index.P


def _parse_cell(text):
    token = text.strip()
    if token.lower() in _NA_TOKENS:
        return math.nan, True
    return float(token), False


def ingest(path, transpose: bool = False, na_policy: str = "error") -> DataMatrix:
    """Read a delimited numeric table with a header row.

    The delimiter (comma or tab) is detected from the header line. A first
    column holding non-numeric text is treated as row labels. With
    ``transpose`` the file's rows become variables and its columns samples.
    Missing values (empty, NA, NaN, ?) are handled by ``na_policy``:
    ``"error"`` rejects them, ``"drop_rows"`` removes every sample that has
    one, ``"impute_zero"`` replaces them with 0.
    """
    if na_policy not in NA_POLICIES:
        raise InputError(f"unknown NA policy {na_policy!r}; choose from {NA_POLICIES}")
    path = os.fspath(path)
    try:
        with open(path, newline="") as fh:
            header_line = fh.readline()
            delimiter = "\t" if header_line.count("\t") > header_line.count(",") else ","
            fh.seek(0)
            rows = [row for row in csv.reader(fh, delimiter=delimiter) if row and any(c.strip() for c in row)]
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc}") from exc
    if len(rows) < 2:
        raise InputError(f"{path}: expected a header row and at least one data row")
    header, body = [h.strip() for h in rows[0]], rows[1:]

    width = max(len(header), max(len(r) for r in body))
    has_labels = False
    for row in body:
        cell = row[0].strip() if row else ""
        if cell.lower() in _NA_TOKENS:
            continue
        try:
            float(cell)
        except ValueError:
            has_labels = True
            break
    first = 1 if has_labels else 0
    n_cols = width - first
    if len(header) == width:
        col_names = header[first:]
    elif len(header) == n_cols:
        col_names = header
    else:
        raise InputError(f"{path}: header has {len(header)} fields but rows have {width}")

    values = np.empty((len(body), n_cols))
    missing = np.zeros_like(values, dtype=bool)
    row_names = []
    for r, row in enumerate(body):
        if len(row) != width:
            raise InputError(f"{path}: row {r + 2} has {len(row)} fields, expected {width}")
        row_names.append(row[0].strip() if has_labels else f"row{r + 1}")
        for c in range(n_cols):
            try:
                values[r, c], missing[r, c] = _parse_cell(row[first + c])
            except ValueError:
                raise InputError(
                    f"{path}: non-numeric value {row[first + c]!r} at row {r + 2}, column {first + c + 1}"
                ) from None

    if transpose:
        values, missing = values.T.copy(), missing.T.copy()
        col_names = row_names

    if missing.any():
        if na_policy == "error":
            r, c = np.argwhere(missing)[0]
            where = f"variable {col_names[c]!r}, sample {r + 1}"
            raise InputError(f"{path}: missing value at {where} (na_policy='error')")
        if na_policy == "drop_rows":
            keep = ~missing.any(axis=1)
            values = values[keep]
        else:
            values = np.where(missing, 0.0, values)
    if values.shape[0] < 3:
        raise InputError(f"{path}: need at least 3 samples, got {values.shape[0]}")
    if not np.all(np.isfinite(values)):
        raise InputError(f"{path}: non-finite numeric values present")
    return DataMatrix(values=values, column_names=list(col_names))


def standardize(m: DataMatrix, center: bool = True) -> DataMatrix:
    """Scale every column to unit Euclidean norm, centering it first if asked.

    After this, column dot products are cosines of the angles between
    columns (correlations when centered).
    """
    x = m.values
    if center:
        x = x - x.mean(axis=0)
    norms = np.linalg.norm(x, axis=0)
    scale = np.linalg.norm(m.values, axis=0)
    bad = ~(norms > 1e-12 * np.maximum(scale, 1e-300))
    if bad.any():
        raise DegenerateColumnError([m.column_names[j] for j in np.flatnonzero(bad)])
    return DataMatrix(values=x / norms, column_names=list(m.column_names), centered=center)


def _block_bounds(P, block_size):
    return [(s, min(s + block_size, P)) for s in range(0, P, block_size)]


def pairwise_z(m: DataMatrix, block_size: int = 128, threads: int | None = 1) -> ZVector:
    """All pairwise r_j and z_j = 1 - r_j^2 for a standardized matrix.

    The Gram matrix is computed one column-block pair at a time and only its
    strict upper triangle is stored, so memory is O(P^2 / 2) floats. Blocks
    are independent and write to disjoint slices of the output, so the result
    is the same for any ``threads`` value. z is clamped to [1e-12, 1 - 1e-12].
    """
    if m.centered is None:
        raise InputError("pairwise_z needs a standardized matrix; call standardize() first")
    if block_size < 1:
        raise InputError("block_size must be positive")
    x = m.values
    P = m.P
    index = PairIndex(P)
    r = np.empty(index.M)
    blocks = _block_bounds(P, block_size)
    tasks = [(bi, bk) for a, bi in enumerate(blocks) for bk in blocks[a:]]

    def work(task):
        (i0, i1), (k0, k1) = task
        gram = x[:, i0:i1].T @ x[:, k0:k1]
        ii, kk = np.meshgrid(np.arange(i0, i1), np.arange(k0, k1), indexing="ij")
        keep = ii < kk
        i, k = ii[keep], kk[keep]
        r[i * P - i * (i + 1) // 2 + (k - i - 1)] = gram[keep]

    if threads is None:
        threads = os.cpu_count() or 1
    if threads <= 1 or len(tasks) == 1:
        for task in tasks:
            work(task)
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(work, tasks))

    np.clip(r, -1.0, 1.0, out=r)
    z = np.clip(1.0 - r * r, Z_EPS, 1.0 - Z_EPS)
    return ZVector(z=z, r=r, n_samples=m.n, index=index, centered=bool(m.centered), names=list(m.column_names))


def z_to_abs_r(z):
    """|r| = sqrt(1 - z); accepts scalars or arrays."""
    z = np.asarray(z, dtype=float)
    if np.any((z < 0) | (z > 1)):
        raise InputError("z must lie in [0, 1]")
    out = np.sqrt(1.0 - z)
    return float(out) if out.ndim == 0 else out
