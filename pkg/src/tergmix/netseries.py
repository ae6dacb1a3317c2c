"""Time-evolving undirected binary networks: data model, validation and file I/O."""

from __future__ import annotations

from dataclasses import dataclass, field
import re
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np


class SeriesError(ValueError):
    """Base class for ingestion/validation problems."""


class SeriesParseError(SeriesError):
    pass


class SeriesValidationError(SeriesError):
    pass


class EmptySeriesError(SeriesError):
    pass


# transition categories: code = 2 * y_prev + y_cur
CAT_00, CAT_01, CAT_10, CAT_11 = 0, 1, 2, 3


@dataclass(frozen=True)
class NetworkSeries:
    """Snapshots ``y_0, ..., y_T`` over a fixed node set ``0..n-1``.

    ``adj`` is a read-only boolean array of shape ``(T + 1, n, n)``. Dense
    storage gives O(1) dyad lookups and does not degrade on half-dense
    networks; :meth:`edges` returns the sorted edge list of one snapshot.
    """

    adj: np.ndarray
    node_names: tuple[str, ...] | None = None
    _ncat: np.ndarray | None = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        a = np.array(self.adj, dtype=bool, copy=True)
        if a.ndim != 3 or a.shape[1] != a.shape[2]:
            raise SeriesValidationError(f"expected (T+1, n, n) array, got shape {a.shape}")
        if a.shape[0] < 2:
            raise EmptySeriesError("a series needs at least two snapshots (T >= 1)")
        if a.shape[1] < 1:
            raise SeriesValidationError("node count must be positive")
        if not np.array_equal(a, a.transpose(0, 2, 1)):
            raise SeriesValidationError("snapshots must be symmetric")
        if np.any(np.diagonal(a, axis1=1, axis2=2)):
            raise SeriesValidationError("self-loops are not allowed")
        a.flags.writeable = False
        object.__setattr__(self, "adj", a)
        if self.node_names is not None:
            names = tuple(str(s) for s in self.node_names)
            if len(names) != a.shape[1]:
                raise SeriesValidationError("node_names length must equal n")
            object.__setattr__(self, "node_names", names)

    @property
    def n(self) -> int:
        return self.adj.shape[1]

    @property
    def T(self) -> int:
        return self.adj.shape[0] - 1

    @property
    def n_dyads(self) -> int:
        return self.n * (self.n - 1) // 2

    def __eq__(self, other):
        if not isinstance(other, NetworkSeries):
            return NotImplemented
        return np.array_equal(self.adj, other.adj) and self.node_names == other.node_names

    def __hash__(self):
        return hash((self.adj.shape, self.adj.tobytes(), self.node_names))

    def has_edge(self, t: int, i: int, j: int) -> bool:
        return bool(self.adj[t, i, j])

    def edges(self, t: int) -> list[tuple[int, int]]:
        iu, ju = np.nonzero(np.triu(self.adj[t], k=1))
        return list(zip(iu.tolist(), ju.tolist()))

    def transition_codes(self) -> np.ndarray:
        """Per-transition category codes ``2*y_{t-1} + y_t``, shape (T, n, n)."""
        a = self.adj.astype(np.int8)
        return 2 * a[:-1] + a[1:]

    def category_counts(self) -> np.ndarray:
        """``N[c, i, j]`` = number of transitions t in which dyad ij is in category c.

        Diagonal entries are zero. Cached since the series is immutable.
        """
        if self._ncat is None:
            codes = self.transition_codes()
            N = np.stack([(codes == c).sum(axis=0) for c in range(4)]).astype(float)
            idx = np.arange(self.n)
            N[:, idx, idx] = 0.0
            N.flags.writeable = False
            object.__setattr__(self, "_ncat", N)
        return self._ncat

    @classmethod
    def from_edges(
        cls,
        edges: Iterable[tuple[int, int, int]],
        n: int,
        T: int,
        node_names: Sequence[str] | None = None,
    ) -> "NetworkSeries":
        """Build from ``(t, i, j)`` triples; edges are undirected, repeats are merged."""
        if T < 1:
            raise EmptySeriesError("a series needs at least two snapshots (T >= 1)")
        if n < 1:
            raise SeriesValidationError("node count must be positive")
        a = np.zeros((T + 1, n, n), dtype=bool)
        for t, i, j in edges:
            if not 0 <= t <= T:
                raise SeriesValidationError(f"time index {t} outside 0..{T}")
            if not (0 <= i < n and 0 <= j < n):
                raise SeriesValidationError(f"node id out of range 0..{n - 1} in edge ({t}, {i}, {j})")
            if i == j:
                raise SeriesValidationError(f"self-loop listed at t={t}, node {i}")
            a[t, i, j] = a[t, j, i] = True
        return cls(a, node_names=node_names)


@dataclass(frozen=True)
class BlockTransitionCounts:
    """Per community pair ``(k, l)``, ``k <= l`` (1-based), counts ``(n00, n01, n10, n11)``."""

    K: int
    counts: dict[tuple[int, int], tuple[int, int, int, int]]

    def as_array(self) -> np.ndarray:
        """Symmetric ordered-pair array ``M[c, k, l]`` (0-based).

        Off-diagonal blocks carry half the unordered count in each orientation,
        so ``sum(M[c] * f)`` equals the dyad sum for any symmetric ``f``.
        """
        M = np.zeros((4, self.K, self.K))
        for (k, l), cell in self.counts.items():
            if k == l:
                M[:, k - 1, k - 1] = cell
            else:
                M[:, k - 1, l - 1] = np.asarray(cell) / 2.0
                M[:, l - 1, k - 1] = np.asarray(cell) / 2.0
        return M

    def total(self) -> int:
        return int(sum(sum(c) for c in self.counts.values()))


def check_labels(labels, n: int, K: int | None = None) -> np.ndarray:
    z = np.asarray(labels)
    if z.shape != (n,):
        raise ValueError(f"labels must have length {n}, got shape {z.shape}")
    if not np.issubdtype(z.dtype, np.integer):
        if not np.all(np.equal(np.mod(z, 1), 0)):
            raise ValueError("labels must be integers")
        z = z.astype(int)
    if z.min() < 1 or (K is not None and z.max() > K):
        raise ValueError(f"labels must lie in 1..{K if K is not None else 'K'}")
    return z.astype(int)


def one_hot(z: np.ndarray, K: int) -> np.ndarray:
    Z = np.zeros((len(z), K))
    Z[np.arange(len(z)), np.asarray(z) - 1] = 1.0
    return Z


def transition_tallies(series: NetworkSeries, labels, K: int | None = None) -> BlockTransitionCounts:
    """Tally dyad transitions by (community pair, previous state, current state)."""
    if K is None:
        K = int(np.max(labels))
    z = check_labels(labels, series.n, K)
    Z = one_hot(z, K)
    N = series.category_counts()
    # full[c] counts ordered pairs (i, j), i != j, so within-block dyads appear twice
    full = Z.T @ N @ Z
    counts = {}
    for k in range(K):
        for l in range(k, K):
            cell = full[:, k, k] / 2.0 if k == l else full[:, k, l]
            counts[(k + 1, l + 1)] = tuple(int(round(v)) for v in cell)
    return BlockTransitionCounts(K=K, counts=counts)


def _parse_int(tok: str, path, lineno: int) -> int:
    try:
        return int(tok)
    except ValueError:
        raise SeriesParseError(f"{path}:{lineno}: non-integer token {tok!r}") from None


def _read_pairs(path: Path, width: int, header: tuple[str, ...] | None):
    rows = []
    first = True
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            toks = line.split()
            if first and header is not None and tuple(toks) == header:
                first = False
                continue
            first = False
            if len(toks) != width:
                raise SeriesParseError(f"{path}:{lineno}: expected {width} fields, got {len(toks)}")
            rows.append(tuple(_parse_int(tk, path, lineno) for tk in toks))
    return rows


_DIMS = re.compile(r"#\s*n=(\d+)\s+T=(\d+)\s*$")


def _read_dims(path: Path) -> dict:
    with open(path, encoding="utf-8") as fh:
        for raw in fh:
            if not raw.startswith("#"):
                break
            m = _DIMS.match(raw.strip())
            if m:
                return {"n": int(m.group(1)), "T": int(m.group(2))}
    return {}


def load_series(
    path,
    format: str = "long_tsv",
    n: int | None = None,
    T: int | None = None,
) -> NetworkSeries:
    """Read a series from disk.

    ``long_tsv``: optional ``# n=<nodes> T=<transitions>`` line, header
    ``t i j``, then one edge per line. ``snapshot_dir``:
    files ``t000.tsv``, ``t001.tsv``, ... each listing ``i j`` pairs. ``n``
    and ``T`` default to (max node id + 1, max time index).
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no such file or directory: {path}")
    if format == "long_tsv":
        triples = _read_pairs(path, 3, ("t", "i", "j"))
        dims = _read_dims(path)
        n = dims.get("n") if n is None else n
        T = dims.get("T") if T is None else T
    elif format == "snapshot_dir":
        if not path.is_dir():
            raise SeriesParseError(f"{path} is not a directory")
        triples = []
        files = sorted(p for p in path.iterdir() if p.name.startswith("t") and p.suffix == ".tsv")
        for p in files:
            stem = p.stem[1:]
            if not stem.isdigit():
                raise SeriesParseError(f"unexpected snapshot file name {p.name}")
            t = int(stem)
            triples.extend((t, i, j) for i, j in _read_pairs(p, 2, ("i", "j")))
        if files and T is None:
            T = max(int(p.stem[1:]) for p in files)
    else:
        raise ValueError(f"unknown format {format!r}")

    if any(v < 0 for tr in triples for v in tr):
        raise SeriesValidationError("negative node id or time index")
    if n is None:
        n = max((max(i, j) for _, i, j in triples), default=-1) + 1
    if T is None:
        T = max((t for t, _, _ in triples), default=0)
    if T < 1:
        raise EmptySeriesError("fewer than two snapshots")
    return NetworkSeries.from_edges(triples, n=n, T=T)


def save_series(series: NetworkSeries, path) -> None:
    """Write ``long_tsv``. Each undirected edge is listed once with ``i < j``."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# n={series.n} T={series.T}\n")
        fh.write("t\ti\tj\n")
        for t in range(series.T + 1):
            for i, j in series.edges(t):
                fh.write(f"{t}\t{i}\t{j}\n")


def save_snapshot_dir(series: NetworkSeries, path) -> None:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    width = max(3, len(str(series.T)))
    for t in range(series.T + 1):
        with open(path / f"t{t:0{width}d}.tsv", "w", encoding="utf-8") as fh:
            for i, j in series.edges(t):
                fh.write(f"{i}\t{j}\n")


def load_labels(path, n: int | None = None) -> np.ndarray:
    """Read ``i<TAB>k`` lines (k in 1..K); every node 0..n-1 must appear once."""
    rows = _read_pairs(Path(path), 2, ("i", "k"))
    if n is None:
        n = max((i for i, _ in rows), default=-1) + 1
    z = np.zeros(n, dtype=int)
    seen = np.zeros(n, dtype=bool)
    for i, k in rows:
        if not 0 <= i < n:
            raise SeriesValidationError(f"node id {i} out of range 0..{n - 1}")
        if k < 1:
            raise SeriesValidationError(f"community label {k} must be >= 1")
        if seen[i]:
            raise SeriesValidationError(f"node {i} labelled twice")
        seen[i] = True
        z[i] = k
    if not seen.all():
        raise SeriesValidationError(f"{int((~seen).sum())} nodes missing from labels file")
    return z


def save_labels(labels, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("i\tk\n")
        for i, k in enumerate(np.asarray(labels).tolist()):
            fh.write(f"{i}\t{int(k)}\n")
