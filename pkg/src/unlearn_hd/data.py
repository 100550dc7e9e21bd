"""Dataset container and its on-disk formats.

Two interchangeable formats are supported:

* **CSV** — header ``y,x1,...,xp``, one observation per row, values
  written with 17 significant digits so float64 round-trips exactly.
  The optional ground-truth coefficient vector is not part of the CSV;
  generators store it in a JSON sidecar (see :mod:`unlearn_hd.datagen`).

* **Binary** — a column-major float64 container laid out as

  ========  ====================================================
  offset    content
  ========  ====================================================
  0..7      magic ``b"GLMDSET1"``
  8..11     uint32 little-endian format version (currently 1)
  12..15    uint32 little-endian flags; bit 0 = beta_star present
  16..23    uint64 little-endian n (rows)
  24..31    uint64 little-endian p (columns)
  32..      y as n float64 little-endian
  ...       X in column-major order: p columns of n float64 each
  ...       beta_star as p float64, only if flag bit 0 is set
  ========  ====================================================

All arrays are little-endian IEEE-754 doubles with no padding.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

__all__ = ["Dataset", "save_csv", "load_csv", "save_binary", "load_binary", "MAGIC"]

MAGIC = b"GLMDSET1"
_VERSION = 1
_FLAG_BETA_STAR = 1


@dataclass(frozen=True)
class Dataset:
    """An n-by-p feature matrix, response vector, and optional ground truth.

    Arrays are copied and frozen on construction so a dataset can be
    shared across threads without defensive copying.
    """

    X: np.ndarray
    y: np.ndarray
    beta_star: np.ndarray | None = field(default=None)

    def __post_init__(self) -> None:
        X = np.array(self.X, dtype=float, order="C")
        y = np.asarray(self.y, dtype=float).reshape(-1)
        if X.ndim != 2:
            raise ValueError("X must be a 2-d matrix")
        if X.shape[0] != y.shape[0]:
            raise ValueError(f"X has {X.shape[0]} rows but y has {y.shape[0]} entries")
        if X.shape[0] < 1 or X.shape[1] < 1:
            raise ValueError("dataset must have at least one row and one column")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
            raise ValueError("dataset entries must be finite")
        bs = self.beta_star
        if bs is not None:
            bs = np.asarray(bs, dtype=float).reshape(-1)
            if bs.shape[0] != X.shape[1]:
                raise ValueError("beta_star length must equal the number of columns")
            if not np.all(np.isfinite(bs)):
                raise ValueError("beta_star must be finite")
            bs = bs.copy()
            bs.setflags(write=False)
        X.setflags(write=False)
        y = y.copy()
        y.setflags(write=False)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "beta_star", bs)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    @property
    def gamma(self) -> float:
        """Aspect ratio n/p of the design."""
        return self.n / self.p

    def drop(self, indices) -> "Dataset":
        """A copy with the given rows physically removed."""
        idx = _check_indices(indices, self.n)
        mask = np.ones(self.n, dtype=bool)
        mask[idx] = False
        return Dataset(self.X[mask], self.y[mask], self.beta_star)

    def take(self, indices) -> "Dataset":
        """A copy containing only the given rows (in index order)."""
        idx = _check_indices(indices, self.n)
        if idx.size == 0:
            raise ValueError("take() needs at least one index")
        return Dataset(self.X[idx], self.y[idx], self.beta_star)


def _check_indices(indices, n: int) -> np.ndarray:
    idx = np.asarray(sorted(int(i) for i in indices), dtype=np.intp)
    if idx.size and (idx[0] < 0 or idx[-1] >= n):
        raise IndexError(f"row index out of range for n={n}")
    if idx.size != np.unique(idx).size:
        raise ValueError("row indices must be distinct")
    return idx


def save_csv(dataset: Dataset, path) -> None:
    """Write ``y,x1,...,xp`` CSV with exact float64 round-trip formatting."""
    path = Path(path)
    header = "y," + ",".join(f"x{j + 1}" for j in range(dataset.p))
    body = np.column_stack([dataset.y, dataset.X])
    np.savetxt(path, body, fmt="%.17g", delimiter=",", header=header, comments="")


def load_csv(path, beta_star=None) -> Dataset:
    """Read a dataset CSV; ``beta_star`` may be supplied from a sidecar."""
    path = Path(path)
    with path.open() as fh:
        header = fh.readline().strip()
        if not header.startswith("y,"):
            raise ValueError(f"{path}: expected header 'y,x1,...,xp', got {header!r}")
        body = np.loadtxt(fh, delimiter=",", ndmin=2)
    return Dataset(body[:, 1:], body[:, 0], beta_star)


def save_binary(dataset: Dataset, path) -> None:
    """Write the binary container documented in the module docstring."""
    path = Path(path)
    flags = _FLAG_BETA_STAR if dataset.beta_star is not None else 0
    with path.open("wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", _VERSION, flags))
        fh.write(struct.pack("<QQ", dataset.n, dataset.p))
        fh.write(dataset.y.astype("<f8").tobytes())
        fh.write(np.asfortranarray(dataset.X).astype("<f8").tobytes(order="F"))
        if dataset.beta_star is not None:
            fh.write(dataset.beta_star.astype("<f8").tobytes())


def load_binary(path) -> Dataset:
    """Read the binary container; validates magic and version."""
    path = Path(path)
    raw = path.read_bytes()
    if raw[:8] != MAGIC:
        raise ValueError(f"{path}: bad magic; not a dataset container")
    version, flags = struct.unpack("<II", raw[8:16])
    if version != _VERSION:
        raise ValueError(f"{path}: unsupported container version {version}")
    n, p = struct.unpack("<QQ", raw[16:32])
    off = 32
    y = np.frombuffer(raw, dtype="<f8", count=n, offset=off).copy()
    off += 8 * n
    X = np.frombuffer(raw, dtype="<f8", count=n * p, offset=off).reshape(
        (n, p), order="F"
    )
    off += 8 * n * p
    beta_star = None
    if flags & _FLAG_BETA_STAR:
        beta_star = np.frombuffer(raw, dtype="<f8", count=p, offset=off).copy()
    return Dataset(np.ascontiguousarray(X), y, beta_star)
