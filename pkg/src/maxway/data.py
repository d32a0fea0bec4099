"""Data containers, validation, deterministic RNG streams, and CSV ingestion.

All sample containers are frozen dataclasses holding read-only numpy
arrays, so they can be shared freely across parallel workers.  The
exposure ``x`` may be declared binary (0/1 coded); it is still stored as
a float vector so downstream statistics treat continuous and binary
exposures uniformly.

Randomness is handled through :class:`RngHandle`, a counter-based
splittable scheme: a stream is identified by ``(master_seed,
stream_path)`` and realized as a Philox generator keyed by a SHA-256
digest of that pair.  Streams with distinct paths are independent, and
deriving the same path twice is bit-identical no matter how many other
streams were consumed in between.  This is what makes replicated Monte
Carlo runs reproducible at any level of parallelism: worker ``(i, j)``
asks for path ``[i, j]`` instead of consuming a shared sequential
generator.
"""

from __future__ import annotations

import csv
import hashlib
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence, Union

import numpy as np

__all__ = [
    "DataError",
    "DimensionMismatch",
    "NonFinite",
    "BadBinary",
    "BadSplitSize",
    "CsvFormatError",
    "RngHandle",
    "derive_stream",
    "LabeledData",
    "UnlabeledData",
    "SurrogateData",
    "validate",
    "split",
    "read_csv",
    "write_csv",
]


class DataError(ValueError):
    """Base class for dataset validation failures."""


class DimensionMismatch(DataError):
    """Row or column counts disagree."""


class NonFinite(DataError):
    """A NaN or infinite entry was found."""


class BadBinary(DataError):
    """An exposure declared binary contains a value outside {0, 1}."""


class BadSplitSize(DataError):
    """Requested test-set size is not in [1, n)."""


class CsvFormatError(DataError):
    """A CSV file does not conform to the expected layout."""


# ------------------------------------------------------------------ #
# RNG streams
# ------------------------------------------------------------------ #

_MASK64 = (1 << 64) - 1


def _philox_key(master_seed: int, path: tuple[int, ...]) -> np.ndarray:
    """128-bit Philox key from a SHA-256 digest of (seed, path).

    Hashing decouples the key from the path structure: paths of
    different lengths, or equal prefixes with different suffixes, can
    never collide short of a SHA-256 collision.
    """
    h = hashlib.sha256()
    h.update(struct.pack("<Q", master_seed & _MASK64))
    for idx in path:
        h.update(struct.pack("<q", int(idx)))
    return np.frombuffer(h.digest()[:16], dtype=np.uint64).copy()


@dataclass(frozen=True)
class RngHandle:
    """Reference to one reproducible random stream.

    ``derive(i, j, ...)`` appends indices to the path, so
    ``derive(h, [1, 2])`` and ``derive(derive(h, [1]), [2])`` name the
    same stream.  ``generator()`` materializes a fresh
    ``numpy.random.Generator``; calling it twice gives two generators
    that produce identical output.
    """

    master_seed: int
    stream_path: tuple[int, ...] = ()

    def derive(self, *indices: int) -> "RngHandle":
        return RngHandle(self.master_seed, self.stream_path + tuple(int(i) for i in indices))

    def generator(self) -> np.random.Generator:
        return np.random.Generator(
            np.random.Philox(key=_philox_key(self.master_seed, self.stream_path))
        )


def derive_stream(rng: RngHandle, indices: Sequence[int]) -> RngHandle:
    """Derive a child stream by extending the handle's path."""
    return rng.derive(*indices)


def as_handle(seed: Union[int, RngHandle]) -> RngHandle:
    """Coerce a bare integer seed to a root handle."""
    if isinstance(seed, RngHandle):
        return seed
    return RngHandle(int(seed))


# ------------------------------------------------------------------ #
# Sample containers
# ------------------------------------------------------------------ #


def _freeze(a, dtype=float, ndim: int = 1) -> np.ndarray:
    arr = np.array(a, dtype=dtype, copy=True)
    if arr.ndim != ndim:
        raise DimensionMismatch(f"expected a {ndim}-d array, got shape {arr.shape}")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class LabeledData:
    """Complete samples (y, x, Z) used for the randomization test itself."""

    y: np.ndarray
    x: np.ndarray
    Z: np.ndarray
    binary_x: bool = False

    def __post_init__(self):
        object.__setattr__(self, "y", _freeze(self.y))
        object.__setattr__(self, "x", _freeze(self.x))
        object.__setattr__(self, "Z", _freeze(self.Z, ndim=2))
        validate(self)

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def p(self) -> int:
        return self.Z.shape[1]


@dataclass(frozen=True)
class UnlabeledData:
    """(x, Z) samples used to learn the exposure model."""

    x: np.ndarray
    Z: np.ndarray
    binary_x: bool = False

    def __post_init__(self):
        object.__setattr__(self, "x", _freeze(self.x))
        object.__setattr__(self, "Z", _freeze(self.Z, ndim=2))
        validate(self)

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def p(self) -> int:
        return self.Z.shape[1]


@dataclass(frozen=True)
class SurrogateData:
    """(s, x, Z) samples where s is a noisy proxy for the unobserved label.

    ``provenance`` is free-form metadata; simulated surrogates record the
    generating mechanism there so downstream reports can flag runs whose
    surrogate violates the conditional-independence working assumption.
    """

    s: np.ndarray
    x: np.ndarray
    Z: np.ndarray
    binary_x: bool = False
    provenance: str | None = field(default=None, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "s", _freeze(self.s))
        object.__setattr__(self, "x", _freeze(self.x))
        object.__setattr__(self, "Z", _freeze(self.Z, ndim=2))
        validate(self)

    @property
    def n(self) -> int:
        return self.s.shape[0]

    @property
    def p(self) -> int:
        return self.Z.shape[1]


Dataset = Union[LabeledData, UnlabeledData, SurrogateData]


def _check_finite(name: str, arr: np.ndarray) -> None:
    if not np.all(np.isfinite(arr)):
        bad = np.argwhere(~np.isfinite(arr))
        raise NonFinite(f"{name} contains a non-finite entry at index {tuple(bad[0])}")


def validate(data: Dataset) -> None:
    """Raise unless all container invariants hold.

    Checks shared row counts, n >= 2, p >= 1, finiteness, and 0/1 coding
    for exposures declared binary.
    """
    vectors = {"x": data.x, "Z": data.Z}
    if isinstance(data, LabeledData):
        vectors["y"] = data.y
    if isinstance(data, SurrogateData):
        vectors["s"] = data.s

    n = data.Z.shape[0]
    for name, arr in vectors.items():
        if arr.shape[0] != n:
            raise DimensionMismatch(
                f"{name} has {arr.shape[0]} rows but Z has {n}"
            )
    if n < 1:
        raise DimensionMismatch("datasets must have at least one row")
    if data.Z.ndim != 2 or data.Z.shape[1] < 1:
        raise DimensionMismatch("Z must be an n x p matrix with p >= 1")
    for name, arr in vectors.items():
        _check_finite(name, arr)
    if data.binary_x:
        bad = (data.x != 0.0) & (data.x != 1.0)
        if np.any(bad):
            i = int(np.argmax(bad))
            raise BadBinary(f"x declared binary but x[{i}] = {data.x[i]!r}")


def split(data: LabeledData, n_test: int, rng: RngHandle) -> tuple[LabeledData, LabeledData]:
    """Partition rows into (test, rest) of sizes (n_test, n - n_test).

    The partition is a deterministic function of ``rng``; rows are
    neither duplicated nor dropped.
    """
    n = data.n
    if not 1 <= n_test < n:
        raise BadSplitSize(f"n_test must be in [1, {n}), got {n_test}")
    perm = rng.generator().permutation(n)
    first, second = perm[:n_test], perm[n_test:]

    def take(idx):
        return LabeledData(data.y[idx], data.x[idx], data.Z[idx], binary_x=data.binary_x)

    return take(first), take(second)


# ------------------------------------------------------------------ #
# CSV ingestion / export
# ------------------------------------------------------------------ #
#
# Layout: header row; a column named "y" (labeled data), one named "x",
# an optional column named "s" (surrogate), and every remaining column
# is an adjustment covariate, kept in file order.  UTF-8, "." decimal
# separator, no missing values.


def _parse_cell(raw: str, row: int, col: str) -> float:
    text = raw.strip()
    if text == "":
        raise CsvFormatError(f"missing value at row {row}, column {col!r}")
    try:
        return float(text)
    except ValueError:
        raise CsvFormatError(
            f"could not parse {raw!r} at row {row}, column {col!r}"
        ) from None


def read_csv(path: str | Path, binary_x: bool | None = None) -> Dataset:
    """Load a dataset, inferring the container kind from the header.

    ``y`` present -> :class:`LabeledData`; else ``s`` present ->
    :class:`SurrogateData`; else :class:`UnlabeledData`.  When
    ``binary_x`` is None the exposure is flagged binary iff every value
    is 0 or 1.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise CsvFormatError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        if "x" not in header:
            raise CsvFormatError(f"{path}: required column 'x' is missing")
        if len(set(header)) != len(header):
            raise CsvFormatError(f"{path}: duplicate column names in header")
        special = [c for c in ("y", "x", "s") if c in header]
        z_cols = [c for c in header if c not in ("y", "x", "s")]
        if not z_cols:
            raise CsvFormatError(f"{path}: no adjustment covariate columns")

        columns: dict[str, list[float]] = {c: [] for c in header}
        for i, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise CsvFormatError(
                    f"{path}: row {i} has {len(row)} fields, expected {len(header)}"
                )
            for col, raw in zip(header, row):
                columns[col].append(_parse_cell(raw, i, col))

    x = np.asarray(columns["x"])
    Z = np.column_stack([columns[c] for c in z_cols]) if columns[z_cols[0]] else np.empty((0, len(z_cols)))
    if binary_x is None:
        binary_x = bool(x.size) and bool(np.all((x == 0.0) | (x == 1.0)))
    try:
        if "y" in special:
            return LabeledData(np.asarray(columns["y"]), x, Z, binary_x=binary_x)
        if "s" in special:
            return SurrogateData(np.asarray(columns["s"]), x, Z, binary_x=binary_x)
        return UnlabeledData(x, Z, binary_x=binary_x)
    except DataError as err:
        raise CsvFormatError(f"{path}: {err}") from err


def write_csv(data: Dataset, path: str | Path, z_names: Sequence[str] | None = None) -> None:
    """Write a dataset in the layout accepted by :func:`read_csv`.

    Floats are written with ``repr`` so a read-back reproduces the exact
    in-memory values.
    """
    path = Path(path)
    p = data.Z.shape[1]
    if z_names is None:
        z_names = [f"z{j + 1}" for j in range(p)]
    if len(z_names) != p:
        raise DimensionMismatch(f"got {len(z_names)} covariate names for {p} columns")

    cols: list[tuple[str, np.ndarray]] = []
    if isinstance(data, LabeledData):
        cols.append(("y", data.y))
    if isinstance(data, SurrogateData):
        cols.append(("s", data.s))
    cols.append(("x", data.x))
    cols.extend((name, data.Z[:, j]) for j, name in enumerate(z_names))

    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow([name for name, _ in cols])
        for i in range(data.Z.shape[0]):
            writer.writerow([repr(float(arr[i])) for _, arr in cols])


def with_binary_flag(data: Dataset, binary_x: bool) -> Dataset:
    """Return a copy of the container with the binary-exposure flag set."""
    return replace(data, binary_x=binary_x)
