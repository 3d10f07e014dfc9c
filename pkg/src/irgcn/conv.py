"""Exact per-clique graph convolutions with hand-derived backpropagation.

Per clique of size n the propagation step is, with m_u the mean over the
other members,

    contrastive: out_u = z_u - m_u      (within-clique differences grow by 1 + 1/(n-1))
    similar:     out_u = z_u + m_u      (differences shrink by 1 - 1/(n-1))
    reflexive:   out_u = z_u

Adjacency matrices are never materialized; per-clique sums give the same
result in O(N * d). The propagation operator restricted to a clique is
symmetric, so the backward pass reuses the forward operator.

A stack is four propagate-linear-ReLU layers (hidden sizes 50, 10, 10, 5)
followed by a linear map to one score per tuple. Strategies of one relation
type share the layer weights but keep their own score weights, so each
relation type learns a single set of transforms.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DimensionError, NumericError
from .numcore import dropout_mask, relu, relu_grad
from .views import SEMANTICS_REFLEXIVE, STRATEGY_SEMANTICS

HIDDEN_DIMS = (50, 10, 10, 5)
N_LAYERS = len(HIDDEN_DIMS)


def clique_propagate(z, partition, semantics=None):
    """Apply one exact clique convolution to the rows of z."""
    z = np.asarray(z, dtype=np.float64)
    if semantics is None:
        semantics = partition.semantics
    if z.shape[0] != partition.n:
        raise DimensionError(
            f"signal has {z.shape[0]} rows, partition covers {partition.n} tuples"
        )
    if semantics == SEMANTICS_REFLEXIVE:
        return z.copy()
    clique_of = partition.clique_of
    counts = np.bincount(clique_of, minlength=partition.n_cliques)
    sums = np.zeros((partition.n_cliques, z.shape[1]), dtype=np.float64)
    np.add.at(sums, clique_of, z)
    n = counts[clique_of].astype(np.float64)[:, None]
    neighbor_mean = np.where(n > 1, (sums[clique_of] - z) / np.maximum(n - 1, 1), 0.0)
    if semantics == "contrastive":
        return z - neighbor_mean
    if semantics == "similar":
        return z + neighbor_mean
    raise ConfigError(f"unknown semantics {semantics!r}")


def glorot(shape, rng):
    bound = np.sqrt(6.0 / (shape[0] + shape[1]))
    return rng.uniform(-bound, bound, size=shape)


# The exponential loss is violently sensitive to the initial score scale:
# contrast magnification and inverted dropout inflate activation variance
# across the four layers, and exp(|score|) overflows the training loss before
# the first update. Starting the score maps small keeps initial scores near
# zero (loss ~= N) without touching the layer initialization.
SCORE_INIT_SCALE = 0.1


@dataclass
class RelationWeights:
    """Layer weights shared by every strategy of one relation type."""

    ws: list  # K matrices: (d0, 50), (50, 10), (10, 10), (10, 5)

    @classmethod
    def init(cls, d_in, rng):
        dims = (d_in, *HIDDEN_DIMS)
        return cls(ws=[glorot((dims[k], dims[k + 1]), rng) for k in range(N_LAYERS)])

    def zeros_like(self):
        return [np.zeros_like(w) for w in self.ws]


@dataclass
class StrategyStack:
    """One strategy's stack: a view over shared layer weights plus its own score map."""

    name: str
    semantics: str
    weights: RelationWeights  # shared within the relation type
    score_w: np.ndarray  # (d_K, 1)

    @classmethod
    def init(cls, name, weights, rng):
        return cls(
            name=name,
            semantics=STRATEGY_SEMANTICS[name],
            weights=weights,
            score_w=SCORE_INIT_SCALE * glorot((HIDDEN_DIMS[-1], 1), rng),
        )


@dataclass
class StackCache:
    """Forward activations needed by the backward pass."""

    propagated: list  # P^k, input to the k-th linear map
    preact: list  # U^k = P^k W^k
    masks: list  # dropout masks (None in eval mode)
    activations: list  # A^0 = X, then post-ReLU (and post-dropout) outputs

    @property
    def embedding(self):
        return self.activations[-1]


def stack_forward(stack, x, partition, train=False, dropout=0.5, rng=None):
    """Run one strategy stack. Returns (scores (N,1), cache).

    Dropout (inverted scaling) is applied to the post-activation output of
    every layer except the last in train mode; each call draws fresh masks
    from rng. The final embedding stays clean because it feeds the linear
    score map and the alignment penalty directly: {0, 2x} masks there turn
    canceling components into exponential-loss spikes and make the alignment
    term measure mask noise instead of representations.
    """
    a = np.asarray(x, dtype=np.float64)
    cache = StackCache(propagated=[], preact=[], masks=[], activations=[a])
    last = len(stack.weights.ws) - 1
    for k, w in enumerate(stack.weights.ws):
        p = clique_propagate(a, partition, stack.semantics)
        u = p @ w
        a = relu(u)
        if train and dropout > 0.0 and k < last:
            mask = dropout_mask(a.shape, dropout, rng)
            a = a * mask
        else:
            mask = None
        if not np.isfinite(a).all():
            raise NumericError(f"non-finite activations in layer {k + 1} of {stack.name}")
        cache.propagated.append(p)
        cache.preact.append(u)
        cache.masks.append(mask)
        cache.activations.append(a)
    scores = a @ stack.score_w
    return scores, cache


def stack_backward(stack, partition, cache, d_scores, d_embedding=None):
    """Gradients of the stack outputs w.r.t. its weights.

    d_scores is dLoss/dscores (N, 1); d_embedding optionally adds a direct
    gradient on the final embedding (alignment loss). Returns
    (d_ws list, d_score_w). Gradients flow back through the clique
    propagation by reapplying it (the operator is self-adjoint per clique).
    """
    a_last = cache.activations[-1]
    d_score_w = a_last.T @ d_scores
    d_a = d_scores @ stack.score_w.T
    if d_embedding is not None:
        d_a = d_a + d_embedding
    d_ws = []
    for k in range(N_LAYERS - 1, -1, -1):
        if cache.masks[k] is not None:
            d_a = d_a * cache.masks[k]
        d_u = relu_grad(cache.preact[k], d_a)
        d_ws.append(cache.propagated[k].T @ d_u)
        d_p = d_u @ stack.weights.ws[k].T
        d_a = clique_propagate(d_p, partition, stack.semantics)
    d_ws.reverse()
    return d_ws, d_score_w


def relation_score(strategies, x, partitions, train=False, dropout=0.5, rng=None):
    """Combined score of one relation type: sum of its strategies' scores.

    Returns (scores (N,1), caches by strategy name). All strategies must share
    semantics category by construction of the relation grouping.
    """
    if not strategies:
        raise ConfigError("relation has no strategies")
    total = None
    caches = {}
    for stack in strategies:
        scores, cache = stack_forward(
            stack, x, partitions[stack.name], train=train, dropout=dropout, rng=rng
        )
        caches[stack.name] = cache
        total = scores if total is None else total + scores
    return total, caches


def relation_backward(strategies, partitions, caches, d_relation_scores, d_embeddings=None):
    """Backward through one relation type.

    Shared layer weights accumulate gradients from every strategy; score
    weights stay per-strategy. d_embeddings optionally maps strategy name to
    an extra gradient on that strategy's final embedding.
    """
    d_shared = None
    d_score_ws = {}
    for stack in strategies:
        extra = None if d_embeddings is None else d_embeddings.get(stack.name)
        d_ws, d_score_w = stack_backward(
            stack, partitions[stack.name], caches[stack.name], d_relation_scores, extra
        )
        d_score_ws[stack.name] = d_score_w
        if d_shared is None:
            d_shared = d_ws
        else:
            d_shared = [acc + g for acc, g in zip(d_shared, d_ws)]
    return d_shared, d_score_ws
