"""Static undirected social graphs, Barabási–Albert generation and the
normalized propagation operator used by neural diffusion.

Graphs are stored as a sorted, deduplicated edge list; dense N x N matrices
are never built, so applying the propagation operator costs O(|E| D).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from . import _rng
from .errors import DatasetFormatError, InvalidParameterError


@dataclass(frozen=True, eq=False)
class Graph:
    """Undirected simple graph on nodes ``0 .. n_nodes-1``.

    ``edges`` is an ``(E, 2)`` integer array with ``u < v`` in every row,
    rows sorted lexicographically and unique. Use :meth:`from_edges` to build
    one from arbitrary pairs.
    """

    n_nodes: int
    edges: np.ndarray = field(repr=False)

    def __post_init__(self):
        self.edges.setflags(write=False)

    @classmethod
    def from_edges(cls, n_nodes: int, pairs) -> "Graph":
        n_nodes = int(n_nodes)
        if n_nodes < 1:
            raise InvalidParameterError(f"graph needs at least one node, got {n_nodes}")
        arr = np.asarray(list(pairs) if not isinstance(pairs, np.ndarray) else pairs, dtype=np.int64)
        arr = arr.reshape(-1, 2)
        if arr.size and (arr.min() < 0 or arr.max() >= n_nodes):
            raise InvalidParameterError(f"edge endpoint out of range [0, {n_nodes})")
        if np.any(arr[:, 0] == arr[:, 1]):
            bad = arr[arr[:, 0] == arr[:, 1]][0]
            raise InvalidParameterError(f"self-loop ({bad[0]},{bad[1]}) not allowed")
        arr = np.sort(arr, axis=1)
        arr = np.unique(arr, axis=0) if len(arr) else arr
        return cls(n_nodes, np.ascontiguousarray(arr))

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @cached_property
    def degree(self) -> np.ndarray:
        deg = np.bincount(self.edges.ravel(), minlength=self.n_nodes)
        deg.setflags(write=False)
        return deg

    @cached_property
    def adjacency(self) -> sp.csr_matrix:
        """Symmetric 0/1 adjacency in CSR form (column indices sorted per row)."""
        u, v = self.edges[:, 0], self.edges[:, 1]
        rows = np.concatenate([u, v])
        cols = np.concatenate([v, u])
        a = sp.csr_matrix(
            (np.ones(len(rows)), (rows, cols)), shape=(self.n_nodes, self.n_nodes)
        )
        a.sort_indices()
        return a

    def neighbors(self, i: int) -> list[int]:
        return neighbor_list(self, i)

    def is_connected(self) -> bool:
        seen = np.zeros(self.n_nodes, dtype=bool)
        a = self.adjacency
        stack = [0]
        seen[0] = True
        while stack:
            i = stack.pop()
            for j in a.indices[a.indptr[i]:a.indptr[i + 1]]:
                if not seen[j]:
                    seen[j] = True
                    stack.append(int(j))
        return bool(seen.all())


@dataclass(frozen=True, eq=False)
class NormalizedOperator:
    """Symmetric propagation matrix ``D^-1/2 (A + I) D^-1/2`` in CSR form."""

    matrix: sp.csr_matrix = field(repr=False)
    kind: str = "propagation"

    @property
    def n_nodes(self) -> int:
        return self.matrix.shape[0]

    def weight(self, i: int, j: int) -> float:
        return float(self.matrix[i, j])

    def apply(self, x: np.ndarray) -> np.ndarray:
        """Apply along the node axis, which is axis -2 for 2-D+ inputs and axis 0 for vectors."""
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            return self.matrix @ x
        moved = np.moveaxis(x, -2, 0)
        flat = moved.reshape(moved.shape[0], -1)
        out = (self.matrix @ flat).reshape(moved.shape)
        return np.moveaxis(out, 0, -2)

    def toarray(self) -> np.ndarray:
        return self.matrix.toarray()


def generate_ba_graph(n: int, m: int, seed: int = 0) -> Graph:
    """Barabási–Albert graph seeded by a complete graph on ``m`` nodes.

    Every later node draws ``m`` distinct targets with probability
    proportional to current degree; a duplicate draw is discarded and
    redrawn. Degrees are frozen while one node picks its targets. When the
    existing graph has no edges yet (only for ``m == 1``) targets are uniform.

    The result has ``m (n - m) + m (m - 1) / 2`` edges.
    """
    n, m = int(n), int(m)
    if m < 1:
        raise InvalidParameterError(f"m must be >= 1, got {m}")
    if n <= m:
        raise InvalidParameterError(f"BA graph requires n > m, got n={n}, m={m}")
    rng = _rng.stream(seed, "graph")

    degree = np.zeros(n, dtype=np.int64)
    edges = [(i, j) for i in range(m) for j in range(i + 1, m)]
    degree[:m] = m - 1

    for new in range(m, n):
        cum = np.cumsum(degree[:new])
        total = cum[-1]
        targets: list[int] = []
        while len(targets) < m:
            u = rng.random()
            if total == 0:
                t = int(u * new)
            else:
                t = int(np.searchsorted(cum, u * total, side="right"))
            if t not in targets:
                targets.append(t)
        for t in targets:
            edges.append((t, new))
            degree[t] += 1
        degree[new] = m
    return Graph.from_edges(n, edges)


def propagation_operator(g: Graph) -> NormalizedOperator:
    """Self-loop augmented, symmetrically normalized adjacency.

    Equals ``I - L`` for the symmetric normalized Laplacian of ``A + I``;
    isolated nodes map to a unit diagonal entry.
    """
    a_tilde = (g.adjacency + sp.identity(g.n_nodes, format="csr")).tocoo()
    d = np.asarray(a_tilde.sum(axis=1), dtype=float).ravel()
    # 1 / sqrt(d_i d_j) per entry: exactly symmetric, exact for square products
    w = a_tilde.data / np.sqrt(d[a_tilde.row] * d[a_tilde.col])
    mat = sp.csr_matrix((w, (a_tilde.row, a_tilde.col)), shape=a_tilde.shape)
    mat.sort_indices()
    return NormalizedOperator(mat)


def neighbor_list(g: Graph, i: int) -> list[int]:
    """Sorted neighbors of ``i`` (never including ``i`` itself)."""
    if not 0 <= i < g.n_nodes:
        raise IndexError(f"node {i} out of range [0, {g.n_nodes})")
    a = g.adjacency
    return [int(j) for j in a.indices[a.indptr[i]:a.indptr[i + 1]]]


def save_edge_list(g: Graph, path) -> None:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["u", "v"])
        w.writerows(g.edges.tolist())


def load_edge_list(path, n_nodes: int | None = None) -> Graph:
    """Read a ``u,v`` CSV edge list.

    ``n_nodes`` defaults to one more than the largest id seen; pass it
    explicitly when trailing nodes may be isolated.
    """
    path = Path(path)
    if not path.exists():
        raise DatasetFormatError(path, "file not found")
    pairs = []
    seen = set()
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["u", "v"]:
            raise DatasetFormatError(path, f"expected header 'u,v', got {header!r}", line=1)
        for lineno, row in enumerate(reader, start=2):
            if len(row) != 2:
                raise DatasetFormatError(path, f"expected 2 fields, got {len(row)}", line=lineno)
            try:
                u, v = int(row[0]), int(row[1])
            except ValueError:
                raise DatasetFormatError(path, f"non-integer node id in {row!r}", line=lineno) from None
            if u < 0 or v < 0:
                raise DatasetFormatError(path, "negative node id", line=lineno)
            if u == v:
                raise DatasetFormatError(path, f"self-loop on node {u}", line=lineno)
            key = (min(u, v), max(u, v))
            if key in seen:
                raise DatasetFormatError(path, f"duplicate edge {key}", line=lineno)
            seen.add(key)
            pairs.append(key)
    top = max((max(p) for p in pairs), default=-1) + 1
    if n_nodes is None:
        n_nodes = max(top, 1)
    elif top > n_nodes:
        raise DatasetFormatError(path, f"node id {top - 1} exceeds n_nodes={n_nodes}")
    return Graph.from_edges(n_nodes, pairs)
