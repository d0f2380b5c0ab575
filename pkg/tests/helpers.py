"""Slow, loop-based oracle implementations of every loss, written straight
from the definitions and sharing no code with the library. The tests pin
the vectorized implementations against these."""

import itertools
import math

import numpy as np

from cclab.core import TableModel, TaskDistribution


def two_point_antipodal():
    """Two singleton classes embedded at antipodes of the sphere."""
    points = np.array([[1.0, 0.0], [0.0, 1.0]])
    dist = TaskDistribution(
        points=points, labels=np.array([0, 1]), mass=np.array([0.5, 0.5])
    )
    model = TableModel(points, np.array([[1.0, 0.0], [-1.0, 0.0]]))
    return dist, model


def _class_tables(dist):
    """{class: [(index, conditional prob)]} plus class marginals."""
    out, marginals = {}, {}
    for c in np.unique(dist.labels):
        idx = np.flatnonzero(dist.labels == c)
        total = dist.mass[idx].sum()
        out[int(c)] = [(int(i), dist.mass[i] / total) for i in idx]
        marginals[int(c)] = float(total)
    return out, marginals


def oracle_population_contrastive(f, dist, k):
    """Expected log(1 + sum_i exp(-v_i)), enumerated with plain loops."""
    emb = f.embed(dist.points)
    tables, marginals = _class_tables(dist)
    total = 0.0
    for c, rows in tables.items():
        for a, pa in rows:
            for b, pb in rows:
                pair_w = marginals[c] * pa * pb
                for combo in itertools.product(range(dist.size), repeat=k):
                    w = pair_w * math.prod(dist.mass[i] for i in combo)
                    s = sum(
                        math.exp(-(emb[a] @ (emb[b] - emb[i]))) for i in combo
                    )
                    total += w * math.log(1.0 + s)
    return total


def _softmax(logits):
    ex = [math.exp(x - max(logits)) for x in logits]
    z = sum(ex)
    return [e / z for e in ex]


def oracle_population_distillation(f_t, f_prev, dist, k):
    """Expected CE from f_prev's similarity softmax to f_t's."""
    emb_t = f_t.embed(dist.points)
    emb_p = f_prev.embed(dist.points)
    tables, marginals = _class_tables(dist)
    total = 0.0
    for c, rows in tables.items():
        for a, pa in rows:
            for b, pb in rows:
                pair_w = marginals[c] * pa * pb
                for combo in itertools.product(range(dist.size), repeat=k):
                    w = pair_w * math.prod(dist.mass[i] for i in combo)
                    logits_t = [emb_t[a] @ emb_t[b]] + [
                        emb_t[a] @ emb_t[i] for i in combo
                    ]
                    logits_p = [emb_p[a] @ emb_p[b]] + [
                        emb_p[a] @ emb_p[i] for i in combo
                    ]
                    q = _softmax(logits_p)
                    p = _softmax(logits_t)
                    total += w * -sum(
                        qi * math.log(pi) for qi, pi in zip(q, p)
                    )
    return total


def oracle_supcon(z, labels, tau):
    """Supervised contrastive batch loss, summed over anchors."""
    n = len(z)
    total = 0.0
    for i in range(n):
        pos = [j for j in range(n) if j != i and labels[j] == labels[i]]
        denom = sum(math.exp(z[i] @ z[j] / tau) for j in range(n) if j != i)
        total += -sum(
            math.log(math.exp(z[i] @ z[p] / tau) / denom) for p in pos
        ) / len(pos)
    return total


def oracle_ird(z_cur, z_past, tau_cur, tau_past):
    """Instance-relation distillation batch loss, summed over anchors."""
    n = len(z_cur)
    total = 0.0
    for i in range(n):
        others = [j for j in range(n) if j != i]
        p = _softmax([z_cur[i] @ z_cur[j] / tau_cur for j in others])
        q = _softmax([z_past[i] @ z_past[j] / tau_past for j in others])
        total += -sum(qi * math.log(pi) for qi, pi in zip(q, p))
    return total
