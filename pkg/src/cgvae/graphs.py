"""Radius graphs, induced CG graphs, bond perception and radial-basis edge features."""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DegenerateGeometryError, DomainError, ShapeError, UnknownElementError
from .geometry import CGMapping, Conformation

COVALENT_RADIUS = {"H": 0.31, "C": 0.76, "N": 0.71, "O": 0.66, "S": 1.05}
BOND_SCALE = 1.3
COINCIDENT_TOL = 1e-8


@dataclass(frozen=True)
class Graph:
    """Undirected graph stored as symmetric directed arcs (sender -> receiver)."""

    num_nodes: int
    senders: np.ndarray
    receivers: np.ndarray
    distances: np.ndarray

    @property
    def num_arcs(self):
        return self.senders.size

    def edge_set(self):
        return {(int(min(s, r)), int(max(s, r))) for s, r in zip(self.senders, self.receivers)}

    def edge_array(self):
        """Undirected edges as a sorted (E, 2) array with i < j."""
        edges = sorted(self.edge_set())
        return np.array(edges, dtype=np.int64).reshape(-1, 2)


@dataclass(frozen=True)
class RbfConfig:
    K: int = 8
    cutoff: float = 5.0

    def __post_init__(self):
        if self.K < 1 or self.cutoff <= 0:
            raise ConfigError("RBF needs K >= 1 and a positive cutoff")


def _pairwise(coords):
    diff = coords[:, None, :] - coords[None, :, :]
    return np.sqrt((diff * diff).sum(-1))


def graph_from_pairs(num_nodes, pairs, coords=None):
    """Build a Graph from undirected (i, j) pairs; distances from ``coords`` if given."""
    pairs = np.asarray(sorted({(min(i, j), max(i, j)) for i, j in pairs if i != j}), dtype=np.int64).reshape(-1, 2)
    snd = np.concatenate([pairs[:, 0], pairs[:, 1]])
    rcv = np.concatenate([pairs[:, 1], pairs[:, 0]])
    order = np.lexsort((snd, rcv))
    snd, rcv = snd[order], rcv[order]
    if coords is not None:
        d = np.linalg.norm(coords[snd] - coords[rcv], axis=-1)
    else:
        d = np.zeros(snd.size)
    return Graph(int(num_nodes), snd, rcv, d)


def radius_graph(coords, cutoff) -> Graph:
    """Arcs between all distinct points closer than ``cutoff``."""
    coords = np.asarray(coords, dtype=np.float64)
    if cutoff <= 0:
        raise ConfigError("cutoff must be positive")
    n = coords.shape[0]
    d = _pairwise(coords)
    iu, ju = np.triu_indices(n, k=1)
    if np.any(d[iu, ju] < COINCIDENT_TOL):
        raise DegenerateGeometryError("coincident points in radius graph")
    mask = d < cutoff
    np.fill_diagonal(mask, False)
    rcv, snd = np.nonzero(mask)
    return Graph(n, snd.astype(np.int64), rcv.astype(np.int64), d[rcv, snd])


def induced_cg_graph(fg: Graph, mapping: CGMapping, X=None) -> Graph:
    """Bead I and J are linked iff some FG arc joins an atom of I to an atom of J."""
    if fg.num_nodes != mapping.n:
        raise ShapeError(f"FG graph has {fg.num_nodes} nodes, mapping has {mapping.n} atoms")
    bs = mapping.assign[fg.senders]
    br = mapping.assign[fg.receivers]
    keep = bs != br
    pairs = set(zip(bs[keep].tolist(), br[keep].tolist()))
    coords = None if X is None else np.asarray(getattr(X, "coords", X), dtype=np.float64)
    g = graph_from_pairs(mapping.N, pairs, coords)
    if coords is not None and g.num_arcs and g.distances.min() < COINCIDENT_TOL:
        raise DegenerateGeometryError("coincident CG beads")
    return g


def covalent_radii(elements):
    try:
        return np.array([COVALENT_RADIUS[e] for e in elements])
    except KeyError as exc:
        raise UnknownElementError(f"no covalent radius for element {exc.args[0]!r}") from None


def deduce_bond_graph(conf: Conformation, scale=BOND_SCALE) -> Graph:
    """Bond (i, j) iff |x_i - x_j| < scale * (r_cov(i) + r_cov(j))."""
    r = covalent_radii(conf.elements)
    coords = conf.coords
    d = _pairwise(coords)
    mask = d < scale * (r[:, None] + r[None, :])
    np.fill_diagonal(mask, False)
    rcv, snd = np.nonzero(mask)
    return Graph(conf.n, snd.astype(np.int64), rcv.astype(np.int64), d[rcv, snd])


def bond_edge_set(elements, coords, scale=BOND_SCALE):
    return deduce_bond_graph(Conformation(elements, coords), scale).edge_set()


def expand_multihop(bond_graph: Graph, hops=2) -> np.ndarray:
    """All node pairs within ``hops`` bonds of each other, as a sorted (E, 2) array."""
    if hops < 1:
        raise ConfigError("hops must be >= 1")
    n = bond_graph.num_nodes
    adj = [[] for _ in range(n)]
    for s, r in zip(bond_graph.senders, bond_graph.receivers):
        adj[r].append(int(s))
    pairs = []
    for src in range(n):
        dist = {src: 0}
        queue = deque([src])
        while queue:
            u = queue.popleft()
            if dist[u] == hops:
                continue
            for v in adj[u]:
                if v not in dist:
                    dist[v] = dist[u] + 1
                    queue.append(v)
        pairs.extend((src, v) for v in dist if v > src)
    return np.array(sorted(pairs), dtype=np.int64).reshape(-1, 2)


def cosine_cutoff(d, cutoff):
    d = np.asarray(d, dtype=np.float64)
    return np.where(d < cutoff, 0.5 * (np.cos(np.pi * d / cutoff) + 1.0), 0.0)


def rbf_features(d, cfg: RbfConfig, allow_zero=False) -> np.ndarray:
    """Sine radial basis sin(k pi d / d_cut) / d, k = 1..K, times a cosine cutoff.

    ``allow_zero`` admits d = 0 (single-atom beads) through the finite limit k pi / d_cut.
    """
    d = np.asarray(d, dtype=np.float64).reshape(-1)
    if np.any(d < 0) or (not allow_zero and np.any(d <= 0)):
        raise DomainError("RBF distances must be positive")
    freq = np.arange(1, cfg.K + 1) * np.pi / cfg.cutoff
    arg = d[:, None] * freq[None, :]
    small = d < 1e-6
    safe_d = np.where(small, 1.0, d)
    out = np.where(small[:, None], freq - freq ** 3 * d[:, None] ** 2 / 6.0, np.sin(arg) / safe_d[:, None])
    return out * cosine_cutoff(d, cfg.cutoff)[:, None]


def fg_to_cg_arcs(mapping: CGMapping, x, X):
    """Arcs i -> m(i) with distances |x_i - X_m(i)|."""
    x = np.asarray(getattr(x, "coords", x), dtype=np.float64)
    X = np.asarray(getattr(X, "coords", X), dtype=np.float64)
    if x.shape != (mapping.n, 3) or X.shape != (mapping.N, 3):
        raise ShapeError("coordinate shapes do not match the mapping")
    senders = np.arange(mapping.n)
    receivers = mapping.assign.copy()
    d = np.linalg.norm(x - X[receivers], axis=-1)
    return senders, receivers, d


def unit_vectors(graph: Graph, X):
    """E_IJ = (X_J - X_I) / d_IJ for each arc, I the receiver and J the sender."""
    X = np.asarray(getattr(X, "coords", X), dtype=np.float64)
    v = X[graph.senders] - X[graph.receivers]
    d = np.linalg.norm(v, axis=-1)
    if d.size and d.min() < COINCIDENT_TOL:
        raise DegenerateGeometryError("coincident CG beads")
    return v / d[:, None]
