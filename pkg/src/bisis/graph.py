"""Graph topology for the overlaid layers and their spectral quantities.

Both layers of a bi-SIS system share the node set ``0..N-1``.  Graphs are
stored as dense symmetric 0/1 matrices: at the supported scale (N <= 2000)
a dense matvec is cheaper than any sparse bookkeeping.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, NamedTuple, Sequence, Union

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

MAX_NODES = 2000
DEFAULT_TOL = 1e-12
DEFAULT_MAX_ITER = 100_000


class GraphError(ValueError):
    """Raised for malformed edge lists and graphs violating the invariants."""

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class SpectralConvergenceError(RuntimeError):
    def __init__(self, message: str, eigenvalue: float, vector: np.ndarray, residual: float):
        super().__init__(message)
        self.eigenvalue = eigenvalue
        self.vector = vector
        self.residual = residual


class SpectralResult(NamedTuple):
    eigenvalue: float
    vector: np.ndarray
    iterations: int
    residual: float


class _SpectralCache:
    """Compute-once holder for the default-tolerance Perron pair."""

    def __init__(self) -> None:
        self._lock = threading.Lock()
        self._value: SpectralResult | None = None

    def get(self, compute) -> SpectralResult:
        if self._value is None:
            with self._lock:
                if self._value is None:
                    self._value = compute()
        return self._value


class Graph:
    """Simple, undirected, connected graph on nodes ``0..N-1``.

    ``node_ids[i]`` is the identifier node ``i`` carried in the source file,
    so per-node results can be reported in original IDs.
    """

    def __init__(self, adjacency: np.ndarray, node_ids: Sequence[int] | None = None, name: str = ""):
        a = np.array(adjacency, dtype=float)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise GraphError("adjacency must be a square matrix")
        n = a.shape[0]
        if n == 0:
            raise GraphError("graph is empty")
        if n > MAX_NODES:
            raise GraphError(f"{n} nodes exceeds the dense-storage limit of {MAX_NODES}")
        if not np.all((a == 0) | (a == 1)):
            raise GraphError("adjacency entries must be 0 or 1")
        if not np.array_equal(a, a.T):
            raise GraphError("adjacency must be symmetric")
        if np.any(np.diag(a) != 0):
            raise GraphError(f"self-loop at node {int(np.flatnonzero(np.diag(a))[0])}")
        if not a.any():
            raise GraphError("graph has no edges")
        ncomp, _ = connected_components(csr_matrix(a), directed=False)
        if ncomp != 1:
            raise GraphError(f"graph is disconnected ({ncomp} components)")
        if node_ids is None:
            node_ids = range(n)
        node_ids = tuple(int(v) for v in node_ids)
        if len(node_ids) != n:
            raise GraphError("node_ids length does not match adjacency")
        a.setflags(write=False)
        self._adjacency = a
        self.node_ids = node_ids
        self.name = name
        self._spectral = _SpectralCache()

    @classmethod
    def from_edges(cls, edges: Iterable[tuple[int, int]], node_count: int | None = None, name: str = "") -> "Graph":
        """Build from 0-indexed edges; ``node_count`` defaults to max index + 1."""
        edges = list(edges)
        if node_count is None:
            if not edges:
                raise GraphError("graph is empty")
            node_count = 1 + max(max(u, v) for u, v in edges)
        a = np.zeros((node_count, node_count))
        for u, v in edges:
            if u == v:
                raise GraphError(f"self-loop at node {u}")
            a[u, v] = a[v, u] = 1.0
        return cls(a, name=name)

    @property
    def adjacency(self) -> np.ndarray:
        return self._adjacency

    @property
    def node_count(self) -> int:
        return self._adjacency.shape[0]

    @property
    def edges(self) -> frozenset[tuple[int, int]]:
        iu, ju = np.nonzero(np.triu(self._adjacency, 1))
        return frozenset(zip(iu.tolist(), ju.tolist()))

    @property
    def edge_count(self) -> int:
        return int(self._adjacency.sum() // 2)

    @property
    def degrees(self) -> np.ndarray:
        return self._adjacency.sum(axis=1)

    @property
    def spectral_radius(self) -> float:
        return self.perron().eigenvalue

    def perron(self) -> SpectralResult:
        """Perron pair at the default tolerance, cached on first use."""
        return self._spectral.get(lambda: power_iteration(self))

    def scaled(self, scaling: np.ndarray) -> "ScaledMatrix":
        return ScaledMatrix(self, scaling)

    def __repr__(self) -> str:
        label = f" {self.name!r}" if self.name else ""
        return f"<Graph{label} N={self.node_count} edges={self.edge_count}>"


@dataclass(frozen=True, eq=False)
class ScaledMatrix:
    """The row-scaled matrix ``diag(scaling) @ base.adjacency``."""

    base: Graph
    scaling: np.ndarray

    def __post_init__(self) -> None:
        s = np.array(self.scaling, dtype=float)
        if s.shape != (self.base.node_count,):
            raise ValueError(f"scaling has shape {s.shape}, expected ({self.base.node_count},)")
        if not np.all(np.isfinite(s)) or np.any(s <= 0) or np.any(s > 1):
            raise ValueError("scaling entries must lie in (0, 1]")
        s.setflags(write=False)
        object.__setattr__(self, "scaling", s)
        object.__setattr__(self, "_spectral", _SpectralCache())

    @property
    def matrix(self) -> np.ndarray:
        return self.scaling[:, None] * self.base.adjacency

    @property
    def node_count(self) -> int:
        return self.base.node_count

    @property
    def spectral_radius(self) -> float:
        return self.perron().eigenvalue

    def perron(self) -> SpectralResult:
        return self._spectral.get(lambda: power_iteration(self))


Matrixlike = Union[Graph, ScaledMatrix]


def _dense(m: Matrixlike) -> np.ndarray:
    return m.matrix if isinstance(m, ScaledMatrix) else m.adjacency


def power_iteration(m: Matrixlike, tol: float = DEFAULT_TOL, max_iter: int = DEFAULT_MAX_ITER) -> SpectralResult:
    """Perron root and positive eigenvector by shifted power iteration.

    ``diag(s) A`` is similar to the symmetric ``D A D`` with ``D = diag(sqrt(s))``,
    so the iteration runs on the symmetric form, where the Rayleigh quotient
    converges quadratically.  A positive shift makes the iteration matrix
    primitive; without it bipartite graphs (stars, paths, trees) carry
    ``-lambda`` as a competing eigenvalue and the iterates never settle.
    """
    if tol <= 0 or max_iter < 1:
        raise ValueError("tol and max_iter must be positive")
    if isinstance(m, ScaledMatrix):
        root = np.sqrt(m.scaling)
        sym = root[:, None] * m.base.adjacency * root[None, :]
    else:
        root = None
        sym = m.adjacency
    n = sym.shape[0]
    shift = 0.5 * float(sym.sum(axis=1).max())

    v = np.full(n, 1.0 / np.sqrt(n))
    rq_prev = np.inf
    rq = 0.0
    for it in range(1, max_iter + 1):
        w = sym @ v
        rq = float(v @ w)
        w += shift * v
        v = w / np.linalg.norm(w)
        if abs(rq - rq_prev) <= tol * abs(rq):
            break
        rq_prev = rq
    else:
        residual = float(np.linalg.norm(sym @ v - rq * v))
        raise SpectralConvergenceError(
            f"power iteration did not converge in {max_iter} iterations (residual {residual:.3e})",
            rq, v, residual,
        )
    # The quotient is accurate to ~tol but the vector only to ~sqrt(tol);
    # shifted inverse iteration just above the root sharpens the vector.
    rq = float(v @ (sym @ v))
    eye = np.eye(n)
    for _ in range(2):
        try:
            w = np.linalg.solve(sym - rq * (1.0 + 1e-10) * eye, v)
        except np.linalg.LinAlgError:
            break
        w = np.abs(w)
        v = w / np.linalg.norm(w)
        rq = float(v @ (sym @ v))
    residual = float(np.linalg.norm(sym @ v - rq * v))
    vec = v if root is None else root * v
    vec = np.abs(vec) / np.linalg.norm(vec)
    return SpectralResult(rq, vec, it, residual)


def spectral_radius(m: Matrixlike, tol: float = DEFAULT_TOL, max_iter: int = DEFAULT_MAX_ITER) -> float:
    """Spectral radius of a graph adjacency or a row-scaled adjacency."""
    if tol == DEFAULT_TOL and max_iter == DEFAULT_MAX_ITER:
        return m.spectral_radius
    return power_iteration(m, tol, max_iter).eigenvalue


def collatz_wielandt_upper(m: Matrixlike, v: np.ndarray) -> float:
    """``max_i [M v]_i / v_i``, an upper bound on the Perron root for any v > 0."""
    v = np.asarray(v, dtype=float)
    if v.shape != (m.node_count,):
        raise ValueError(f"vector has shape {v.shape}, expected ({m.node_count},)")
    if np.any(v <= 0):
        raise ValueError("Collatz-Wielandt vector must be strictly positive")
    return float(np.max((_dense(m) @ v) / v))


def collatz_wielandt_lower(m: Matrixlike, v: np.ndarray) -> float:
    """``min_i [M v]_i / v_i``, the matching lower bound."""
    v = np.asarray(v, dtype=float)
    if np.any(v <= 0):
        raise ValueError("Collatz-Wielandt vector must be strictly positive")
    return float(np.min((_dense(m) @ v) / v))


def parse_edge_list(lines: Iterable[str]) -> tuple[list[tuple[int, int]], list[int]]:
    """Parse ``<u> <v>`` lines into raw-ID edges; return (edges, sorted ids).

    ``#`` starts a comment, blank lines are skipped, duplicate edges in
    either orientation collapse to one.
    """
    seen: set[tuple[int, int]] = set()
    edges: list[tuple[int, int]] = []
    ids: set[int] = set()
    for lineno, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 2:
            raise GraphError(f"expected two node identifiers, got {len(parts)}", line=lineno)
        try:
            u, v = int(parts[0]), int(parts[1])
        except ValueError:
            raise GraphError(f"non-integer node identifier in {line!r}", line=lineno) from None
        if u < 0 or v < 0:
            raise GraphError("node identifiers must be non-negative", line=lineno)
        if u == v:
            raise GraphError(f"self-loop on node {u}", line=lineno)
        key = (min(u, v), max(u, v))
        if key in seen:
            continue
        seen.add(key)
        edges.append(key)
        ids.update(key)
    if not edges:
        raise GraphError("graph is empty")
    return edges, sorted(ids)


def load_graph(path: str | Path) -> Graph:
    """Read a SNAP-style edge list; node IDs are remapped to ``0..N-1`` in sorted order."""
    path = Path(path)
    with path.open(encoding="utf-8") as fh:
        edges, ids = parse_edge_list(fh)
    index = {nid: i for i, nid in enumerate(ids)}
    n = len(ids)
    if n > MAX_NODES:
        raise GraphError(f"{n} nodes exceeds the dense-storage limit of {MAX_NODES}")
    a = np.zeros((n, n))
    for u, v in edges:
        a[index[u], index[v]] = a[index[v], index[u]] = 1.0
    return Graph(a, node_ids=ids, name=path.stem)


def write_edge_list(g: Graph, path: str | Path, header: str | None = None) -> None:
    """Write ``g`` as an edge list in original node IDs."""
    ids = g.node_ids
    with Path(path).open("w", encoding="utf-8") as fh:
        if header:
            for line in header.splitlines():
                fh.write(f"# {line}\n")
        for u, v in sorted(g.edges):
            fh.write(f"{ids[u]} {ids[v]}\n")


def load_pair(path_a: str | Path, path_b: str | Path) -> tuple[Graph, Graph]:
    """Load two overlaid graphs; both edge lists must cover the same node IDs."""
    g_a, g_b = load_graph(path_a), load_graph(path_b)
    if g_a.node_ids != g_b.node_ids:
        only_a = sorted(set(g_a.node_ids) - set(g_b.node_ids))[:5]
        only_b = sorted(set(g_b.node_ids) - set(g_a.node_ids))[:5]
        raise GraphError(
            f"graphs must share one node set ({g_a.node_count} vs {g_b.node_count} nodes; "
            f"only in A: {only_a}, only in B: {only_b})"
        )
    return g_a, g_b
