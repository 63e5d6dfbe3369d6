"""Seeded graph constructors: closed-form fixtures, random instances and
connectivity-preserving stand-ins for the modified AS-733 snapshots."""

from __future__ import annotations

from pathlib import Path

import networkx as nx
import numpy as np

from .graph import Graph, GraphError, load_graph

# Published sizes of the three modified AS-733 graphs (103 nodes each).
AS733_NODES = 103
AS733_EDGES = {"A": 616, "B": 267, "C": 297}
# Their published spectral radii.  The graphs themselves are unpublished, so
# these are metadata for comparison, never targets.
AS733_REFERENCE_LAMBDA = {"A": 22.13, "B": 6.3, "C": 6.59}


def from_networkx(h: nx.Graph, name: str = "") -> Graph:
    h = nx.convert_node_labels_to_integers(h, ordering="sorted")
    return Graph(nx.to_numpy_array(h, nodelist=range(h.number_of_nodes())), name=name)


def complete_graph(n: int) -> Graph:
    return from_networkx(nx.complete_graph(n), name=f"K{n}")


def star_graph(leaves: int) -> Graph:
    return from_networkx(nx.star_graph(leaves), name=f"star{leaves}")


def path_graph(n: int) -> Graph:
    return from_networkx(nx.path_graph(n), name=f"P{n}")


def cycle_graph(n: int) -> Graph:
    return from_networkx(nx.cycle_graph(n), name=f"C{n}")


def random_regular_graph(d: int, n: int, seed: int) -> Graph:
    rng = np.random.default_rng(seed)
    for _ in range(1000):
        h = nx.random_regular_graph(d, n, seed=int(rng.integers(2**31)))
        if nx.is_connected(h):
            return from_networkx(h, name=f"reg{d}_{n}")
    raise GraphError(f"no connected {d}-regular graph on {n} nodes found")


def random_connected_graph(n: int, p: float, rng: np.random.Generator) -> Graph:
    """Erdos-Renyi G(n, p) conditioned on connectivity.

    Disconnected draws are patched by linking consecutive components, so the
    result always has ``n`` nodes.
    """
    h = nx.gnp_random_graph(n, p, seed=int(rng.integers(2**31)))
    comps = [sorted(c) for c in nx.connected_components(h)]
    for left, right in zip(comps, comps[1:]):
        h.add_edge(int(rng.choice(left)), int(rng.choice(right)))
    return from_networkx(h)


def perturb_to_size(h: nx.Graph, edges: int, rng: np.random.Generator) -> nx.Graph:
    """Delete or add edges at random until ``h`` has ``edges`` edges, never
    disconnecting it."""
    h = h.copy()
    n = h.number_of_nodes()
    if edges < n - 1 or edges > n * (n - 1) // 2:
        raise GraphError(f"cannot realize {edges} edges on {n} connected nodes")
    nodes = list(h.nodes)
    while h.number_of_edges() < edges:
        u, v = rng.choice(len(nodes), size=2, replace=False)
        h.add_edge(nodes[u], nodes[v])
    if h.number_of_edges() > edges:
        bridges = set(nx.bridges(h))
        while h.number_of_edges() > edges:
            candidates = sorted(e for e in h.edges if e not in bridges and e[::-1] not in bridges)
            u, v = candidates[int(rng.integers(len(candidates)))]
            h.remove_edge(u, v)
            if not nx.is_connected(h):
                h.add_edge(u, v)
                bridges.add((u, v))
            else:
                bridges = set(nx.bridges(h))
    return h


def _base_subgraph(base: nx.Graph, nodes: int) -> nx.Graph:
    """Connected ``nodes``-node subgraph grown breadth-first from the top hub."""
    hub = max(base.nodes, key=lambda v: (base.degree[v], -v))
    order = [hub] + [v for _, v in nx.bfs_edges(base, hub)]
    if len(order) < nodes:
        raise GraphError(f"base graph component has only {len(order)} nodes, need {nodes}")
    return base.subgraph(order[:nodes]).copy()


def as733_standins(base_path: str | Path | None, seed: int) -> dict[str, Graph]:
    """Three overlaid 103-node graphs with 616/267/297 edges.

    With ``base_path`` the graphs derive from a user-supplied SNAP AS-733
    snapshot; without it a seeded preferential-attachment graph stands in for
    the snapshot.  Either way the result is a structural analogue only.
    """
    rng = np.random.default_rng(seed)
    if base_path is not None:
        g = load_graph(base_path)
        base = nx.from_numpy_array(np.asarray(g.adjacency))
    else:
        base = nx.barabasi_albert_graph(AS733_NODES, 2, seed=int(rng.integers(2**31)))
    core = _base_subgraph(base, AS733_NODES)
    core = nx.convert_node_labels_to_integers(core, ordering="sorted")
    out = {}
    for label, m in AS733_EDGES.items():
        out[label] = from_networkx(perturb_to_size(core, m, rng), name=f"as733_{label}")
    return out
