"""Loss functions and predictor families.

Three modes:
  edge_only            - cross-entropy on graph structure via embedding dot
                         products sigma(lambda_i . lambda_j)
  node_classification  - q * label cross-entropy + (1-q) * edge loss, with
                         per-label logistic predictions from the embeddings
  category_embedding   - edge loss where each vertex embedding is the sum
                         of its categories' embeddings

Output probabilities are clipped to [eps, 1-eps], which bounds the loss.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .graph import CategoryMap, LabelTable
from .samplers import SampledSubgraph

LOSS_MODES = ("edge_only", "node_classification", "category_embedding")


class NumericError(Exception):
    pass


@dataclass(frozen=True)
class LossConfig:
    q: float = 0.0
    prob_clip: float = 1e-7
    mode: str = "edge_only"

    def validate(self) -> list[str]:
        errs = []
        if not 0.0 <= self.q <= 1.0:
            errs.append("q must be in [0, 1]")
        if not 0.0 < self.prob_clip < 0.5:
            errs.append("prob_clip must be in (0, 0.5)")
        if self.mode not in LOSS_MODES:
            errs.append(f"unknown loss mode {self.mode!r}")
        return errs


class ParamStore:
    """Per-vertex embeddings (lazily initialized), global logistic weights,
    and optional per-category embeddings.

    Lazy initialization is drawn from a generator keyed by (seed, id), so
    an entry's initial value does not depend on visit order. `init_ids`
    optionally maps vertex index -> stable id, so coupled graphs of
    different sizes share initializations for shared vertices.
    """

    def __init__(self, dim: int, label_dim: int = 0, seed: int = 0,
                 init_ids: np.ndarray | None = None):
        self.dim = dim
        self.label_dim = label_dim
        self.seed = seed
        self.embeddings: dict[int, np.ndarray] = {}
        self.weights = np.zeros((dim, label_dim))
        self.bias = np.zeros(label_dim)
        self.category_embeddings: dict[int, np.ndarray] = {}
        self.init_ids = init_ids

    def _init_vector(self, kind: int, key: int) -> np.ndarray:
        rng = np.random.default_rng((self.seed, kind, key))
        return rng.uniform(-0.5 / self.dim, 0.5 / self.dim, self.dim)

    def embedding(self, v: int) -> np.ndarray:
        vec = self.embeddings.get(v)
        if vec is None:
            key = int(self.init_ids[v]) if self.init_ids is not None else v
            vec = self._init_vector(0, key)
            self.embeddings[v] = vec
        return vec

    def category_embedding(self, c: int) -> np.ndarray:
        vec = self.category_embeddings.get(c)
        if vec is None:
            vec = self._init_vector(1, c)
            self.category_embeddings[c] = vec
        return vec

    def embedding_matrix(self, vertices: np.ndarray) -> np.ndarray:
        return np.array([self.embedding(int(v)) for v in vertices])

    def copy(self) -> "ParamStore":
        other = ParamStore(self.dim, self.label_dim, self.seed, self.init_ids)
        other.embeddings = {v: vec.copy() for v, vec in self.embeddings.items()}
        other.weights = self.weights.copy()
        other.bias = self.bias.copy()
        other.category_embeddings = {c: vec.copy() for c, vec in self.category_embeddings.items()}
        return other


@dataclass
class SparseGradient:
    """Gradient carrier: entries only for vertices/categories that appear
    in the sample; dense for the global logistic parameters."""

    embeddings: dict[int, np.ndarray] = field(default_factory=dict)
    weights: np.ndarray | None = None
    bias: np.ndarray | None = None
    categories: dict[int, np.ndarray] = field(default_factory=dict)

    def _emb_add(self, v: int, vec: np.ndarray) -> None:
        cur = self.embeddings.get(v)
        if cur is None:
            self.embeddings[v] = vec.copy()
        else:
            cur += vec


def category_vertex_embedding(vertex: int, cats: CategoryMap,
                              params: ParamStore) -> np.ndarray:
    """Vertex embedding as the sum of its categories' embeddings (zero
    vector for a vertex with no categories)."""
    members = cats.memberships[vertex]
    vec = np.zeros(params.dim)
    for c in members:
        vec += params.category_embedding(int(c))
    return vec


def _vertex_vectors(vertices: np.ndarray, params: ParamStore, config: LossConfig,
                    cats: CategoryMap | None) -> np.ndarray:
    if config.mode == "category_embedding":
        if cats is None:
            raise NumericError("category_embedding mode requires a CategoryMap")
        return np.array([category_vertex_embedding(int(v), cats, params)
                         for v in vertices])
    return params.embedding_matrix(vertices)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _pair_scores(sample: SampledSubgraph, emb: dict[int, int],
                 vectors: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    def scores(pairs):
        if len(pairs) == 0:
            return np.zeros(0)
        a = vectors[[emb[int(u)] for u in pairs[:, 0]]]
        b = vectors[[emb[int(v)] for v in pairs[:, 1]]]
        return np.einsum("ij,ij->i", a, b)
    return scores(sample.positive_pairs), scores(sample.negative_pairs)


def edge_loss(sample: SampledSubgraph, params: ParamStore, config: LossConfig,
              cats: CategoryMap | None = None) -> float:
    """Cross-entropy on sampled structure: -sum log sigma_eps over positive
    pairs, -sum log(1 - sigma_eps) over negatives, multiset multiplicity
    included."""
    vectors = _vertex_vectors(sample.vertices, params, config, cats)
    if not np.isfinite(vectors).all():
        raise NumericError("non-finite embedding")
    index = {int(v): i for i, v in enumerate(sample.vertices)}
    s_pos, s_neg = _pair_scores(sample, index, vectors)
    eps = config.prob_clip
    p_pos = np.clip(_sigmoid(s_pos), eps, 1.0 - eps)
    p_neg = np.clip(_sigmoid(s_neg), eps, 1.0 - eps)
    return float(-np.log(p_pos).sum() - np.log(1.0 - p_neg).sum())


def label_loss(sample: SampledSubgraph, labels: LabelTable, params: ParamStore,
               config: LossConfig) -> float:
    """Per-label logistic cross-entropy over the sample's base vertices
    with observed (masked-true) labels."""
    verts = np.asarray([v for v in sample.base_vertices if labels.mask[int(v)]],
                       dtype=np.int64)
    if len(verts) == 0:
        return 0.0
    lam = params.embedding_matrix(verts)
    if not np.isfinite(lam).all():
        raise NumericError("non-finite embedding")
    z = lam @ params.weights + params.bias
    eps = config.prob_clip
    f = np.clip(_sigmoid(z), eps, 1.0 - eps)
    l = labels.labels[verts].astype(np.float64)
    return float(-(l * np.log(f) + (1.0 - l) * np.log(1.0 - f)).sum())


def combined_loss(sample: SampledSubgraph, labels: LabelTable | None,
                  params: ParamStore, config: LossConfig,
                  cats: CategoryMap | None = None) -> float:
    """q * label loss + (1 - q) * edge loss (the configured mode decides
    which terms exist)."""
    if config.mode == "edge_only" or config.mode == "category_embedding":
        return edge_loss(sample, params, config, cats)
    if labels is None:
        raise NumericError("node_classification mode requires labels")
    return (config.q * label_loss(sample, labels, params, config)
            + (1.0 - config.q) * edge_loss(sample, params, config, cats))


def gradient(sample: SampledSubgraph, labels: LabelTable | None,
             params: ParamStore, config: LossConfig,
             cats: CategoryMap | None = None) -> SparseGradient:
    """Exact analytic gradient of the configured loss with respect to every
    touched embedding, the global logistic parameters, and (in category
    mode, via the chain rule) every touched category embedding."""
    vectors = _vertex_vectors(sample.vertices, params, config, cats)
    if not np.isfinite(vectors).all():
        raise NumericError("non-finite embedding")
    index = {int(v): i for i, v in enumerate(sample.vertices)}
    eps = config.prob_clip
    grad_vec = np.zeros_like(vectors)
    grad = SparseGradient()

    edge_weight = 1.0
    if config.mode == "node_classification":
        edge_weight = 1.0 - config.q

    def accumulate_pairs(pairs, positive):
        if len(pairs) == 0:
            return
        ia = np.array([index[int(u)] for u in pairs[:, 0]])
        ib = np.array([index[int(v)] for v in pairs[:, 1]])
        s = np.einsum("ij,ij->i", vectors[ia], vectors[ib])
        p = _sigmoid(s)
        # inside the clip region the derivative of -log p is (p - 1) for a
        # positive pair and p for a negative; the clipped region is flat
        if positive:
            g = np.where((p >= eps) & (p <= 1.0 - eps), p - 1.0, 0.0)
        else:
            g = np.where((p >= eps) & (p <= 1.0 - eps), p, 0.0)
        g = g * edge_weight
        np.add.at(grad_vec, ia, g[:, None] * vectors[ib])
        np.add.at(grad_vec, ib, g[:, None] * vectors[ia])

    accumulate_pairs(sample.positive_pairs, positive=True)
    accumulate_pairs(sample.negative_pairs, positive=False)

    if config.mode == "node_classification" and config.q > 0.0:
        if labels is None:
            raise NumericError("node_classification mode requires labels")
        verts = np.asarray([v for v in sample.base_vertices if labels.mask[int(v)]],
                           dtype=np.int64)
        if len(verts):
            lam = params.embedding_matrix(verts)
            z = lam @ params.weights + params.bias
            f = _sigmoid(z)
            l = labels.labels[verts].astype(np.float64)
            gz = np.where((f >= eps) & (f <= 1.0 - eps), f - l, 0.0) * config.q
            grad.weights = lam.T @ gz
            grad.bias = gz.sum(axis=0)
            glam = gz @ params.weights.T
            for i, v in enumerate(verts):
                grad_vec[index[int(v)]] += glam[i]
    if grad.weights is None:
        grad.weights = np.zeros_like(params.weights)
        grad.bias = np.zeros_like(params.bias)

    if config.mode == "category_embedding":
        for i, v in enumerate(sample.vertices):
            for c in cats.memberships[int(v)]:
                cur = grad.categories.get(int(c))
                if cur is None:
                    grad.categories[int(c)] = grad_vec[i].copy()
                else:
                    cur += grad_vec[i]
    else:
        for i, v in enumerate(sample.vertices):
            grad._emb_add(int(v), grad_vec[i])
    return grad
