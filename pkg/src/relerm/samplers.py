"""Graph subsampling algorithms and negative-sampling add-ons.

Each sampler maps (graph, config, rng) to a SampledSubgraph of positive
pairs (observed edges, or skipgram-hallucinated pairs) and negative pairs
(observed non-edges). The choice of sampler defines the empirical risk
the trainer minimizes. All samplers are pure functions of their inputs;
give each worker its own rng stream.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .graph import Graph, induced_edges, induced_pairs


class SamplerError(Exception):
    pass


class NoWalkError(SamplerError):
    """Raised when a random walk is requested on a graph with no edges."""


ALGORITHMS = ("rw_skipgram", "rw_induced", "p_sampling", "uniform_edge")
NEGATIVE_MODES = ("none", "induced", "unigram")
WALK_STARTS = ("uniform_vertex", "degree_proportional")


@dataclass(frozen=True)
class SamplerConfig:
    algorithm: str = "p_sampling"
    walk_length: int = 80        # r
    window: int = 10             # W
    retention: float = 0.1       # p
    edge_count: int = 100        # k for uniform edge sampling
    negative: str = "none"
    unigram_power: float = 0.75  # tau
    negatives_per_vertex: int = 5
    walk_start: str = "uniform_vertex"

    def validate(self) -> list[str]:
        errs = []
        if self.algorithm not in ALGORITHMS:
            errs.append(f"unknown algorithm {self.algorithm!r}")
        if self.negative not in NEGATIVE_MODES:
            errs.append(f"unknown negative mode {self.negative!r}")
        if self.walk_start not in WALK_STARTS:
            errs.append(f"unknown walk_start {self.walk_start!r}")
        if not 0.0 <= self.retention <= 1.0:
            errs.append("retention must be in [0, 1]")
        if self.unigram_power <= 0:
            errs.append("unigram_power must be > 0")
        if self.walk_length < 1:
            errs.append("walk_length must be >= 1")
        if self.window < 1:
            errs.append("window must be >= 1")
        if self.edge_count < 1:
            errs.append("edge_count must be >= 1")
        if self.negatives_per_vertex < 0:
            errs.append("negatives_per_vertex must be >= 0")
        return errs


@dataclass
class SampledSubgraph:
    """One draw of a subsampling algorithm.

    `vertices` is ordered as produced by the sampler; the first
    `base_vertex_count` entries come from the base sampler, the rest were
    appended by unigram negative sampling (they carry no label loss).
    """

    vertices: np.ndarray        # int64
    positive_pairs: np.ndarray  # int64, shape (m, 2), multiset
    negative_pairs: np.ndarray  # int64, shape (m', 2)
    source: str = ""
    base_vertex_count: int = -1

    def __post_init__(self):
        if self.base_vertex_count < 0:
            self.base_vertex_count = len(self.vertices)

    @property
    def base_vertices(self) -> np.ndarray:
        return self.vertices[: self.base_vertex_count]


def _empty_pairs() -> np.ndarray:
    return np.zeros((0, 2), dtype=np.int64)


def _first_seen(seq: np.ndarray) -> np.ndarray:
    _, idx = np.unique(seq, return_index=True)
    return seq[np.sort(idx)]


def random_walk(graph: Graph, r: int, rng: np.random.Generator,
                start: str = "uniform_vertex") -> np.ndarray:
    """Simple random walk of r steps (r+1 vertices); each next vertex is
    drawn uniformly from the current vertex's neighbors."""
    if graph.edge_count == 0:
        raise NoWalkError("cannot walk on a graph with no edges")
    degrees = graph.degrees
    if start == "uniform_vertex":
        # isolated vertices cannot start a walk; resampling until non-isolated
        # is uniform over the non-isolated vertices
        candidates = np.flatnonzero(degrees > 0)
        cur = int(candidates[rng.integers(len(candidates))])
    elif start == "degree_proportional":
        # stationary start: pick a uniform edge endpoint
        e = int(rng.integers(graph.edge_count))
        cur = int(graph.edge_list[e, int(rng.integers(2))])
    else:
        raise SamplerError(f"unknown walk start {start!r}")
    walk = np.empty(r + 1, dtype=np.int64)
    walk[0] = cur
    offsets, neighbors = graph.offsets, graph.neighbors
    for i in range(1, r + 1):
        d = offsets[cur + 1] - offsets[cur]
        cur = int(neighbors[offsets[cur] + rng.integers(d)])
        walk[i] = cur
    return walk


def skipgram_pairs(walk: np.ndarray, window: int) -> np.ndarray:
    """All index pairs (i, j), i < j, within `window` steps, as a multiset
    of vertex pairs. Self-pairs from walk revisits are dropped."""
    n = len(walk)
    us, vs = [], []
    for d in range(1, window):
        if d >= n:
            break
        us.append(walk[:n - d])
        vs.append(walk[d:])
    if not us:
        return _empty_pairs()
    us = np.concatenate(us)
    vs = np.concatenate(vs)
    keep = us != vs
    return np.stack([us[keep], vs[keep]], axis=1).astype(np.int64)


def rw_skipgram_sample(graph: Graph, config: SamplerConfig,
                       rng: np.random.Generator) -> SampledSubgraph:
    """Walk + skipgram window augmentation. Pairs at walk distance >= 2 may
    be non-edges of the graph; they are still reported as positives."""
    walk = random_walk(graph, config.walk_length, rng, config.walk_start)
    pairs = skipgram_pairs(walk, config.window)
    return SampledSubgraph(
        vertices=_first_seen(walk),
        positive_pairs=pairs,
        negative_pairs=_empty_pairs(),
        source="rw_skipgram",
    )


def rw_induced_sample(graph: Graph, config: SamplerConfig,
                      rng: np.random.Generator) -> SampledSubgraph:
    """Walk, then report the vertex-induced subgraph of the walk."""
    walk = random_walk(graph, config.walk_length, rng, config.walk_start)
    verts = _first_seen(walk)
    pos, _ = induced_pairs(graph, verts)
    return SampledSubgraph(
        vertices=verts,
        positive_pairs=pos,
        negative_pairs=_empty_pairs(),
        source="rw_induced",
    )


def p_sample(graph: Graph, p: float, rng: np.random.Generator,
             with_negatives: bool = True) -> SampledSubgraph:
    """Retain each vertex independently with probability p, take the
    induced subgraph, delete isolated vertices. Induced non-edges among the
    survivors are reported as negatives (a negative-sampling pass
    overrides them; pass with_negatives=False to skip computing them)."""
    if not 0.0 <= p <= 1.0:
        raise SamplerError("retention probability must be in [0, 1]")
    mask = rng.random(graph.vertex_count) < p
    pos = induced_edges(graph, mask)
    if len(pos) == 0:
        return SampledSubgraph(np.zeros(0, dtype=np.int64), _empty_pairs(),
                               _empty_pairs(), source="p_sampling")
    survivors = np.unique(pos)
    if with_negatives:
        _, neg = induced_pairs(graph, survivors)
    else:
        neg = _empty_pairs()
    return SampledSubgraph(
        vertices=survivors,
        positive_pairs=pos,
        negative_pairs=neg,
        source="p_sampling",
    )


def uniform_edge_sample(graph: Graph, k: int, rng: np.random.Generator) -> SampledSubgraph:
    """k edges drawn uniformly with replacement, plus their endpoints."""
    idx = rng.integers(graph.edge_count, size=k)
    pos = graph.edge_list[idx].astype(np.int64)
    return SampledSubgraph(
        vertices=_first_seen(pos.reshape(-1)),
        positive_pairs=pos,
        negative_pairs=_empty_pairs(),
        source="uniform_edge",
    )


def negative_induced(graph: Graph, sample: SampledSubgraph) -> SampledSubgraph:
    """Replace the sample's pairs with the full induced subgraph on its
    vertices: all induced edges as positives, all induced non-edges as
    negatives."""
    pos, neg = induced_pairs(graph, sample.vertices)
    return SampledSubgraph(
        vertices=sample.vertices,
        positive_pairs=pos,
        negative_pairs=neg,
        source=sample.source + "+induced",
        base_vertex_count=sample.base_vertex_count,
    )


@dataclass(frozen=True)
class UnigramTable:
    """Power-adjusted unigram distribution with a Vose alias table for
    O(1) draws. The base measure is normalized degree (the stationary
    occupancy of the simple random walk)."""

    probabilities: np.ndarray
    _accept: np.ndarray = field(repr=False)
    _alias: np.ndarray = field(repr=False)

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        n = len(self.probabilities)
        idx = rng.integers(n, size=size)
        take_alias = rng.random(size) >= self._accept[idx]
        return np.where(take_alias, self._alias[idx], idx)


def build_unigram(graph: Graph, tau: float = 0.75, base: str = "degree") -> UnigramTable:
    """probabilities(v) = degree(v)^tau / sum_u degree(u)^tau."""
    if tau <= 0:
        raise SamplerError("tau must be > 0")
    if base != "degree":
        raise SamplerError(f"unknown unigram base {base!r}")
    if graph.vertex_count == 0:
        raise SamplerError("empty graph")
    deg = graph.degrees.astype(np.float64)
    if deg.sum() == 0:
        raise SamplerError("all degrees zero")
    weights = np.where(deg > 0, deg ** tau, 0.0)
    probs = weights / weights.sum()
    accept, alias = _vose_alias(probs)
    return UnigramTable(probabilities=probs, _accept=accept, _alias=alias)


def _vose_alias(probs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    n = len(probs)
    scaled = probs * n
    accept = np.ones(n, dtype=np.float64)
    alias = np.arange(n, dtype=np.int64)
    small = [i for i in range(n) if scaled[i] < 1.0]
    large = [i for i in range(n) if scaled[i] >= 1.0]
    scaled = scaled.copy()
    while small and large:
        s = small.pop()
        g = large.pop()
        accept[s] = scaled[s]
        alias[s] = g
        scaled[g] = (scaled[g] + scaled[s]) - 1.0
        if scaled[g] < 1.0:
            small.append(g)
        else:
            large.append(g)
    for q in (small, large):
        for i in q:
            accept[i] = 1.0
            alias[i] = i
    return accept, alias


def negative_unigram(graph: Graph, sample: SampledSubgraph, table: UnigramTable,
                     k_neg: int, rng: np.random.Generator) -> SampledSubgraph:
    """For each sample vertex, draw k_neg unigram candidates; keep (v, c)
    as a negative iff it is a non-edge of the full graph and c != v.
    New candidate vertices are appended to the vertex list."""
    verts = sample.vertices
    if len(verts) == 0 or k_neg == 0:
        return sample
    candidates = table.sample(rng, size=len(verts) * k_neg)
    vv = np.repeat(verts, k_neg)
    keep = (vv != candidates) & ~graph.has_edges(vv, candidates)
    neg = np.stack([vv[keep], candidates[keep]], axis=1)
    new = np.setdiff1d(candidates[keep], verts)
    return SampledSubgraph(
        vertices=np.concatenate([verts, new]),
        positive_pairs=sample.positive_pairs,
        negative_pairs=np.concatenate([sample.negative_pairs, neg]),
        source=sample.source + "+unigram",
        base_vertex_count=sample.base_vertex_count,
    )


def draw(graph: Graph, config: SamplerConfig, rng: np.random.Generator,
         unigram_table: UnigramTable | None = None) -> SampledSubgraph:
    """Dispatch to the configured base sampler, then apply the configured
    negative sampler. Deterministic given the rng state."""
    errs = config.validate()
    if errs:
        raise SamplerError("; ".join(errs))
    if config.algorithm == "rw_skipgram":
        sample = rw_skipgram_sample(graph, config, rng)
    elif config.algorithm == "rw_induced":
        sample = rw_induced_sample(graph, config, rng)
    elif config.algorithm == "p_sampling":
        sample = p_sample(graph, config.retention, rng,
                          with_negatives=config.negative == "none")
    else:
        sample = uniform_edge_sample(graph, config.edge_count, rng)

    if config.negative == "induced":
        sample = negative_induced(graph, sample)
    elif config.negative == "unigram":
        if unigram_table is None:
            unigram_table = build_unigram(graph, config.unigram_power)
        # the negative-sampling pass replaces any built-in negatives
        sample = replace(sample, negative_pairs=_empty_pairs())
        sample = negative_unigram(graph, sample, unigram_table,
                                  config.negatives_per_vertex, rng)
    return sample
