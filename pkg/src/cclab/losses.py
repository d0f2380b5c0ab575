"""All loss functionals: exact population contrastive/distillation losses
for finite supports (any number of negatives), the training and test
aggregates, the batch-level SupCon and IRD losses used during training,
and the cross-entropy decomposition identity behind the bound proofs.

Population expectations are computed by exact enumeration over the
support, vectorized over the (pair, negative-combo) outcome grid. Cost is
O(P * n^k) per loss where P is the number of same-class ordered pairs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import (
    EmbeddingModel,
    MixtureWeights,
    TaskDistribution,
    TupleOutcome,
    mixture,
    negative_combos,
    positive_pairs,
)


def logistic_link(v: np.ndarray) -> float:
    """log(1 + sum_i exp(-v_i)), max-shifted for stability."""
    v = np.atleast_1d(np.asarray(v, dtype=np.float64))
    if v.size < 1:
        raise ValueError("need at least one margin component")
    m = max(0.0, float(np.max(-v)))
    return m + np.log(np.exp(-m) + np.sum(np.exp(-v - m)))


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise log-softmax along the last axis, max-shifted."""
    m = logits.max(axis=-1, keepdims=True)
    z = logits - m
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def similarity_prob(f: EmbeddingModel, outcome: TupleOutcome) -> np.ndarray:
    """softmax(f(x)'f(x+), f(x)'f(x_1-), ..., f(x)'f(x_k-)).

    First entry is the positive-pair probability.
    """
    pts = np.vstack([outcome.anchor, outcome.positive, outcome.negatives])
    emb = f.embed(pts)
    logits = emb[0] @ emb[1:].T
    return np.exp(_log_softmax(logits))


@dataclass(frozen=True)
class _TupleGrid:
    """Embedded similarity data for the full (pair, combo) outcome grid."""

    pos_sim: np.ndarray  # (P,) f(x)'f(x+)
    neg_sim: np.ndarray  # (P, M, k) f(x)'f(x_i-)
    weight: np.ndarray  # (P, M) joint outcome probability

    @property
    def margins(self) -> np.ndarray:
        """v_i = f(x)'(f(x+) - f(x_i-)), shape (P, M, k)."""
        return self.pos_sim[:, None, None] - self.neg_sim


def _tuple_grid(f: EmbeddingModel, dist: TaskDistribution, k: int) -> _TupleGrid:
    if k < 1:
        raise ValueError("need at least one negative sample")
    emb = f.embed(dist.points)
    sims = emb @ emb.T
    anchors, positives, pair_w = positive_pairs(dist)
    combos = negative_combos(dist.size, k)
    neg_w = np.prod(dist.mass[combos], axis=1)
    pos_sim = sims[anchors, positives]
    neg_sim = sims[anchors][:, combos]  # (P, M, k)
    weight = pair_w[:, None] * neg_w[None, :]
    return _TupleGrid(pos_sim=pos_sim, neg_sim=neg_sim, weight=weight)


def _link_values(grid: _TupleGrid) -> np.ndarray:
    """logistic link per outcome, shape (P, M)."""
    t = -grid.margins  # exp(t) summed inside the log
    m = np.maximum(0.0, t.max(axis=2))
    return m + np.log(np.exp(-m) + np.exp(t - m[:, :, None]).sum(axis=2))


def population_contrastive(f: EmbeddingModel, dist: TaskDistribution, k: int = 1) -> float:
    """Exact expected contrastive loss of ``f`` on ``dist`` with k negatives."""
    grid = _tuple_grid(f, dist, k)
    return float(np.sum(grid.weight * _link_values(grid)))


def _tuple_logits(grid: _TupleGrid) -> np.ndarray:
    """(P, M, k+1) similarity logits, positive pair first."""
    P, M, k = grid.neg_sim.shape
    logits = np.empty((P, M, k + 1))
    logits[:, :, 0] = grid.pos_sim[:, None]
    logits[:, :, 1:] = grid.neg_sim
    return logits


def population_distillation(
    f_t: EmbeddingModel,
    f_prev: EmbeddingModel,
    dist: TaskDistribution,
    k: int = 1,
) -> float:
    """Exact expected cross-entropy from f_prev's similarity softmax to f_t's."""
    grid_t = _tuple_grid(f_t, dist, k)
    grid_p = _tuple_grid(f_prev, dist, k)
    log_p_t = _log_softmax(_tuple_logits(grid_t))
    p_prev = np.exp(_log_softmax(_tuple_logits(grid_p)))
    ce = -(p_prev * log_p_t).sum(axis=2)
    return float(np.sum(grid_t.weight * ce))


def decomposition_residual(
    f_t: EmbeddingModel,
    f_prev: EmbeddingModel,
    dist: TaskDistribution,
    k: int = 1,
) -> float:
    """Residual of the identity
    -p(f_prev) . log p(f_t) = l(v(f_t)) + sum_i q_i(f_prev) v_i(f_t),
    in expectation. Zero (within float error) by construction.
    """
    grid_t = _tuple_grid(f_t, dist, k)
    grid_p = _tuple_grid(f_prev, dist, k)
    l_dis = population_distillation(f_t, f_prev, dist, k)
    l_con = float(np.sum(grid_t.weight * _link_values(grid_t)))
    # q_i(f_prev) = exp(-v_i) / (1 + sum exp(-v_j)), from f_prev's margins
    q_prev = np.exp(_log_softmax(_tuple_logits(grid_p)))[:, :, 1:]
    cross = float(np.sum(grid_t.weight * (q_prev * grid_t.margins).sum(axis=2)))
    return l_dis - l_con - cross


def population_train_loss(
    f_t: EmbeddingModel,
    dist: TaskDistribution,
    lam: float = 0.0,
    k: int = 1,
    f_prev: EmbeddingModel | None = None,
    past: TaskDistribution | None = None,
) -> float:
    """L_con(f_t; D_t) + lam * L_dis(f_t; f_prev, D_past).

    The first task has no distillation term: omit ``f_prev``/``past``.
    """
    if lam < 0:
        raise ValueError("distillation coefficient must be non-negative")
    total = population_contrastive(f_t, dist, k)
    if f_prev is not None and past is not None and lam > 0:
        total += lam * population_distillation(f_t, f_prev, past, k)
    return total


def population_test_loss(
    f_final: EmbeddingModel, tasks: list[TaskDistribution], k: int = 1
) -> float:
    """Total performance of the final model: sum of per-task contrastive losses."""
    if not tasks:
        raise ValueError("need at least one task")
    return float(sum(population_contrastive(f_final, d, k) for d in tasks))


def mixture_of_past(
    dists: list[TaskDistribution], weights: MixtureWeights
) -> TaskDistribution:
    """Convenience re-export of the seen-data mixture for loss callers."""
    return mixture(dists, weights)


@dataclass(frozen=True)
class BatchEmbeddings:
    """Unit embeddings of an augmented batch: 2N rows, paired views share labels."""

    z: np.ndarray  # (2N, d), unit rows
    labels: np.ndarray  # (2N,)
    tau: float

    def __post_init__(self):
        z = np.atleast_2d(np.asarray(self.z, dtype=np.float64))
        labels = np.asarray(self.labels, dtype=np.int64)
        object.__setattr__(self, "z", z)
        object.__setattr__(self, "labels", labels)
        if self.tau <= 0:
            raise ValueError("temperature must be positive")
        if z.shape[0] != labels.shape[0]:
            raise ValueError("one label per embedding row required")


def empirical_contrastive(batch: BatchEmbeddings) -> float:
    """SupCon loss of the batch, summed over anchors (no 1/2N factor).

    Every anchor must have at least one positive, which paired views
    guarantee; an anchor without positives is an error.
    """
    z, labels, tau = batch.z, batch.labels, batch.tau
    n = z.shape[0]
    if n < 2:
        raise ValueError("need at least two embeddings")
    sims = (z @ z.T) / tau
    off = ~np.eye(n, dtype=bool)
    pos = (labels[:, None] == labels[None, :]) & off
    counts = pos.sum(axis=1)
    if np.any(counts == 0):
        raise ValueError("anchor with empty positive set")
    # per-anchor log-sum-exp over the 2N-1 others
    m = np.where(off, sims, -np.inf).max(axis=1)
    ex = np.exp(sims - m[:, None], where=off, out=np.zeros_like(sims))
    lse = m + np.log(ex.sum(axis=1))
    log_frac = sims - lse[:, None]
    per_anchor = -(np.where(pos, log_frac, 0.0).sum(axis=1)) / counts
    return float(per_anchor.sum())


def instance_log_softmax(batch: BatchEmbeddings) -> np.ndarray:
    """Per-anchor log similarity vector over the other 2N-1 instances.

    Row i holds log softmax(z_i'z_j / tau, j != i) at the batch's
    temperature, laid out in j order with the diagonal dropped.
    """
    z, tau = batch.z, batch.tau
    n = z.shape[0]
    sims = (z @ z.T) / tau
    off = ~np.eye(n, dtype=bool)
    rows = sims[off].reshape(n, n - 1)
    return _log_softmax(rows)


def empirical_distillation(current: BatchEmbeddings, past: BatchEmbeddings) -> float:
    """IRD loss: cross-entropy from the past model's instance-similarity
    softmax (at its own temperature) to the current model's, summed over
    anchors. Both batches must index the same 2N samples in order.
    """
    if current.z.shape[0] != past.z.shape[0]:
        raise ValueError("batch sizes must match")
    n = current.z.shape[0]
    if n < 2:
        raise ValueError("need at least two embeddings")
    log_p = instance_log_softmax(current)
    q = np.exp(instance_log_softmax(past))
    return float(-(q * log_p).sum())
