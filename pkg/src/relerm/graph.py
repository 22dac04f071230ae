"""Immutable undirected simple graph in compressed adjacency form.

Everything downstream (samplers, losses, trainer) reads from the Graph
built here. Construction is single-threaded; instances are immutable and
safe to share across concurrent readers.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from functools import cached_property
from typing import IO, Iterable

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components


class GraphError(Exception):
    """Base class for graph construction/validation errors."""


class ParseError(GraphError):
    def __init__(self, line_no: int, line: str, reason: str):
        self.line_no = line_no
        super().__init__(f"line {line_no}: {reason}: {line!r}")


class EmptyGraphError(GraphError):
    pass


@dataclass(frozen=True)
class Graph:
    """Undirected simple graph: CSR adjacency plus a canonical edge list.

    Invariants: no self-loops, no duplicate edges, neighbor lists sorted
    ascending, adjacency symmetric, edge_list rows have u < v.
    """

    offsets: np.ndarray    # int64, length V+1
    neighbors: np.ndarray  # int32, length 2E, sorted within each vertex block
    edge_list: np.ndarray  # int32, shape (E, 2), u < v, lexicographically sorted

    @property
    def vertex_count(self) -> int:
        return len(self.offsets) - 1

    @property
    def edge_count(self) -> int:
        return len(self.edge_list)

    @cached_property
    def degrees(self) -> np.ndarray:
        return np.diff(self.offsets)

    @cached_property
    def _edge_codes(self) -> np.ndarray:
        # sorted packed codes u*V+v (u<v) for O(log E) membership tests
        v = self.vertex_count
        return self.edge_list[:, 0].astype(np.int64) * v + self.edge_list[:, 1]

    def neighbors_of(self, v: int) -> np.ndarray:
        return self.neighbors[self.offsets[v]:self.offsets[v + 1]]

    def has_edge(self, u: int, v: int) -> bool:
        return bool(self.has_edges(np.array([u]), np.array([v]))[0])

    def has_edges(self, us: np.ndarray, vs: np.ndarray) -> np.ndarray:
        """Vectorized edge membership for pairs (us[i], vs[i])."""
        us = np.asarray(us, dtype=np.int64)
        vs = np.asarray(vs, dtype=np.int64)
        lo = np.minimum(us, vs)
        hi = np.maximum(us, vs)
        codes = lo * self.vertex_count + hi
        idx = np.searchsorted(self._edge_codes, codes)
        idx = np.minimum(idx, len(self._edge_codes) - 1) if len(self._edge_codes) else idx
        if len(self._edge_codes) == 0:
            return np.zeros(len(codes), dtype=bool)
        return self._edge_codes[idx] == codes


@dataclass(frozen=True)
class LabelTable:
    """Per-vertex multi-label bitsets plus a train-time observation mask."""

    label_dim: int
    labels: np.ndarray  # bool, shape (V, L)
    mask: np.ndarray    # bool, shape (V,) - True when label observed at training time

    def with_mask(self, mask: np.ndarray) -> "LabelTable":
        return LabelTable(self.label_dim, self.labels, np.asarray(mask, dtype=bool))


@dataclass(frozen=True)
class CategoryMap:
    """Per-vertex category memberships (vertex embeddings are built as sums
    of category embeddings in the category-embedding loss mode)."""

    category_count: int
    memberships: tuple  # tuple of int arrays, one per vertex

    def __post_init__(self):
        for m in self.memberships:
            if len(m) and m.max() >= self.category_count:
                raise GraphError("category index out of range")


def from_edges(vertex_count: int, edges: np.ndarray) -> Graph:
    """Build a Graph from an array of undirected edges (any orientation,
    duplicates allowed; self-loops rejected)."""
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    if len(edges):
        if (edges[:, 0] == edges[:, 1]).any():
            raise GraphError("self-loop in edge array")
        lo = np.minimum(edges[:, 0], edges[:, 1])
        hi = np.maximum(edges[:, 0], edges[:, 1])
        codes = np.unique(lo * vertex_count + hi)
        lo = codes // vertex_count
        hi = codes % vertex_count
        edge_list = np.stack([lo, hi], axis=1).astype(np.int32)
    else:
        edge_list = np.zeros((0, 2), dtype=np.int32)
    # symmetric CSR
    src = np.concatenate([edge_list[:, 0], edge_list[:, 1]])
    dst = np.concatenate([edge_list[:, 1], edge_list[:, 0]])
    order = np.lexsort((dst, src))
    src, dst = src[order], dst[order]
    offsets = np.zeros(vertex_count + 1, dtype=np.int64)
    np.add.at(offsets, src + 1, 1)
    np.cumsum(offsets, out=offsets)
    return Graph(offsets=offsets, neighbors=dst.astype(np.int32), edge_list=edge_list)


def load_edge_list(
    source: IO[str] | Iterable[str],
    deduplicate: bool = True,
    drop_self_loops: bool = False,
    largest_component_only: bool = False,
) -> tuple[Graph, dict[int, int]]:
    """Parse a 'u v' per-line edge list into a Graph.

    Lines starting with '#' are skipped. Vertices are relabeled to a dense
    0-based range; the original->dense map is returned alongside.
    """
    us, vs = [], []
    for line_no, line in enumerate(source, start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        parts = stripped.split()
        if len(parts) != 2:
            raise ParseError(line_no, line.rstrip("\n"), "expected two fields")
        try:
            u, v = int(parts[0]), int(parts[1])
        except ValueError:
            raise ParseError(line_no, line.rstrip("\n"), "non-integer vertex id")
        if u < 0 or v < 0:
            raise ParseError(line_no, line.rstrip("\n"), "negative vertex id")
        if u == v:
            if drop_self_loops:
                continue
            raise ParseError(line_no, line.rstrip("\n"), "self-loop (pass drop_self_loops)")
        us.append(u)
        vs.append(v)

    if not us:
        raise EmptyGraphError("edge list contains no edges")

    us = np.array(us, dtype=np.int64)
    vs = np.array(vs, dtype=np.int64)
    original_ids = np.unique(np.concatenate([us, vs]))
    dense = {int(o): i for i, o in enumerate(original_ids)}
    us = np.searchsorted(original_ids, us)
    vs = np.searchsorted(original_ids, vs)
    n = len(original_ids)

    if not deduplicate:
        lo = np.minimum(us, vs)
        hi = np.maximum(us, vs)
        codes = lo * n + hi
        if len(np.unique(codes)) != len(codes):
            raise GraphError("duplicate edges present (pass deduplicate)")
    graph = from_edges(n, np.stack([us, vs], axis=1))

    if largest_component_only:
        adj = csr_matrix(
            (np.ones(len(graph.neighbors), dtype=np.int8),
             graph.neighbors, graph.offsets),
            shape=(n, n),
        )
        n_comp, comp = connected_components(adj, directed=False)
        if n_comp > 1:
            sizes = np.bincount(comp)
            keep = np.flatnonzero(comp == sizes.argmax())
            keep_mask = np.zeros(n, dtype=bool)
            keep_mask[keep] = True
            sel = keep_mask[graph.edge_list[:, 0]] & keep_mask[graph.edge_list[:, 1]]
            remap = -np.ones(n, dtype=np.int64)
            remap[keep] = np.arange(len(keep))
            edges = remap[graph.edge_list[sel]]
            graph = from_edges(len(keep), edges)
            dense = {o: int(remap[i]) for o, i in dense.items() if keep_mask[i]}
    return graph, dense


def load_labels(source: IO[str] | Iterable[str], graph: Graph, label_dim: int) -> LabelTable:
    """Parse 'vertex label_index' lines into a LabelTable (all masks True)."""
    labels = np.zeros((graph.vertex_count, label_dim), dtype=bool)
    for line_no, line in enumerate(source, start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        parts = stripped.split()
        if len(parts) != 2:
            raise ParseError(line_no, line.rstrip("\n"), "expected two fields")
        try:
            v, l = int(parts[0]), int(parts[1])
        except ValueError:
            raise ParseError(line_no, line.rstrip("\n"), "non-integer field")
        if not 0 <= v < graph.vertex_count:
            raise ParseError(line_no, line.rstrip("\n"), "vertex out of range")
        if not 0 <= l < label_dim:
            raise ParseError(line_no, line.rstrip("\n"), "label index out of range")
        labels[v, l] = True
    return LabelTable(label_dim, labels, np.ones(graph.vertex_count, dtype=bool))


def induced_pairs(graph: Graph, vertices: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """All edges and non-edges of `graph` among `vertices`.

    Together the two outputs cover every unordered pair within the set
    exactly once.
    """
    verts = np.unique(np.asarray(vertices, dtype=np.int64))
    if len(verts) and (verts[0] < 0 or verts[-1] >= graph.vertex_count):
        raise GraphError("vertex out of range")
    if len(verts) < 2:
        empty = np.zeros((0, 2), dtype=np.int64)
        return empty, empty
    iu, ju = np.triu_indices(len(verts), k=1)
    us, vs = verts[iu], verts[ju]
    is_edge = graph.has_edges(us, vs)
    pos = np.stack([us[is_edge], vs[is_edge]], axis=1)
    neg = np.stack([us[~is_edge], vs[~is_edge]], axis=1)
    return pos, neg


def induced_edges(graph: Graph, vertex_mask: np.ndarray) -> np.ndarray:
    """Edges of `graph` with both endpoints selected by a boolean mask."""
    sel = vertex_mask[graph.edge_list[:, 0]] & vertex_mask[graph.edge_list[:, 1]]
    return graph.edge_list[sel].astype(np.int64)


def validate(graph: Graph) -> list[str]:
    """Return a list of violated invariants (empty iff the graph is valid)."""
    report = []
    v = graph.vertex_count
    offsets, neighbors, edges = graph.offsets, graph.neighbors, graph.edge_list
    if len(offsets) < 1 or offsets[0] != 0 or offsets[-1] != len(neighbors):
        report.append("offsets malformed")
        return report
    if len(neighbors) and (neighbors.min() < 0 or neighbors.max() >= v):
        report.append("neighbor index out of range")
        return report
    for u in range(v):
        nbrs = neighbors[offsets[u]:offsets[u + 1]]
        if len(nbrs) > 1 and (np.diff(nbrs) <= 0).any():
            report.append(f"neighbors of {u} not sorted strictly ascending (duplicate or disorder)")
        if (nbrs == u).any():
            report.append(f"self-loop at {u}")
    # symmetry
    deg = np.diff(offsets)
    src = np.repeat(np.arange(v), deg)
    fwd = set(zip(src.tolist(), neighbors.tolist()))
    for a, b in fwd:
        if (b, a) not in fwd:
            report.append(f"asymmetric adjacency: {a}->{b} without reverse")
    if len(edges):
        if (edges[:, 0] >= edges[:, 1]).any():
            report.append("edge_list rows not u < v")
        codes = edges[:, 0].astype(np.int64) * v + edges[:, 1]
        if len(np.unique(codes)) != len(codes):
            report.append("duplicate edges in edge_list")
        for a, b in edges:
            if (int(a), int(b)) not in fwd:
                report.append(f"edge_list pair ({a},{b}) missing from adjacency")
    if deg.sum() != 2 * len(edges):
        report.append("sum(degrees) != 2 * edge_count")
    return report


# -- binary cache -------------------------------------------------------------

_CACHE_MAGIC = b"RERM"
_CACHE_VERSION = 1


def save_cache(graph: Graph, path: str, relabel_map: dict[int, int] | None = None) -> None:
    """Write the versioned little-endian binary cache (plus a JSON sidecar
    with the original-id map when given)."""
    with open(path, "wb") as f:
        f.write(_CACHE_MAGIC)
        f.write(struct.pack("<IQQ", _CACHE_VERSION, graph.vertex_count, graph.edge_count))
        f.write(graph.offsets.astype("<i8").tobytes())
        f.write(graph.neighbors.astype("<i4").tobytes())
        f.write(graph.edge_list.astype("<i4").tobytes())
    if relabel_map is not None:
        with open(path + ".ids.json", "w") as f:
            json.dump({str(k): v for k, v in relabel_map.items()}, f, sort_keys=True)


def load_cache(path: str) -> Graph:
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != _CACHE_MAGIC:
            raise GraphError(f"bad cache magic {magic!r}")
        version, v, e = struct.unpack("<IQQ", f.read(20))
        if version != _CACHE_VERSION:
            raise GraphError(f"unsupported cache version {version}")
        offsets = np.frombuffer(f.read(8 * (v + 1)), dtype="<i8").astype(np.int64)
        neighbors = np.frombuffer(f.read(4 * 2 * e), dtype="<i4").astype(np.int32)
        edge_list = np.frombuffer(f.read(4 * 2 * e), dtype="<i4").astype(np.int32).reshape(e, 2)
    return Graph(offsets=offsets, neighbors=neighbors, edge_list=edge_list)
