"""Finite-support labeled distributions, unit-sphere embeddings, and the
tuple outcome space that population losses are defined over.

Everything here is a plain value object: distributions are frozen after
construction and all operations are pure functions, so they are safe to
share across threads.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

NORM_TOL = 1e-12
MASS_TOL = 1e-12


def normalize(v: np.ndarray) -> np.ndarray:
    """Project ``v`` onto the unit sphere.

    Vectors with norm below 1e-12 map to the first standard basis vector
    (documented degenerate-input rule; keeps training robust at init).
    """
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 1 or v.size == 0:
        raise ValueError("normalize expects a non-empty 1-D vector")
    n = np.linalg.norm(v)
    if n < NORM_TOL:
        e = np.zeros_like(v)
        e[0] = 1.0
        return e
    return v / n


def normalize_rows(m: np.ndarray) -> np.ndarray:
    """Row-wise :func:`normalize` for an (n, d) matrix."""
    m = np.asarray(m, dtype=np.float64)
    norms = np.linalg.norm(m, axis=1)
    out = np.empty_like(m)
    small = norms < NORM_TOL
    out[~small] = m[~small] / norms[~small, None]
    if np.any(small):
        e = np.zeros(m.shape[1])
        e[0] = 1.0
        out[small] = e
    return out


@dataclass(frozen=True)
class TaskDistribution:
    """A finite-support labeled data distribution.

    ``points`` is (n, d_in), ``labels`` holds one integer class id per
    point (global across tasks), and ``mass`` is the probability of each
    point. Class probabilities and within-class conditionals are derived.
    """

    points: np.ndarray
    labels: np.ndarray
    mass: np.ndarray

    def __post_init__(self):
        points = np.atleast_2d(np.asarray(self.points, dtype=np.float64))
        labels = np.asarray(self.labels, dtype=np.int64)
        mass = np.asarray(self.mass, dtype=np.float64)
        object.__setattr__(self, "points", points)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "mass", mass)
        n = points.shape[0]
        if labels.shape != (n,) or mass.shape != (n,):
            raise ValueError("points, labels and mass must have matching lengths")
        if np.any(mass < 0):
            raise ValueError("point masses must be non-negative")
        if abs(mass.sum() - 1.0) > MASS_TOL:
            raise ValueError(f"point masses must sum to 1, got {mass.sum()!r}")
        for c in np.unique(labels):
            if mass[labels == c].sum() <= 0:
                raise ValueError(f"class {c} has zero total mass")

    @property
    def dimension(self) -> int:
        return self.points.shape[1]

    @property
    def size(self) -> int:
        return self.points.shape[0]

    @property
    def classes(self) -> np.ndarray:
        return np.unique(self.labels)

    def class_prob(self, c: int) -> float:
        """Probability of class ``c`` (the class marginal)."""
        return float(self.mass[self.labels == c].sum())

    def within_class(self, c: int) -> tuple[np.ndarray, np.ndarray]:
        """Conditional distribution of points given class ``c``.

        Returns (indices into points, conditional probabilities).
        """
        idx = np.flatnonzero(self.labels == c)
        if idx.size == 0:
            raise KeyError(f"no points labeled {c}")
        p = self.mass[idx]
        return idx, p / p.sum()

    def to_json(self) -> str:
        return json.dumps(
            {
                "dimension": self.dimension,
                "points": self.points.tolist(),
                "labels": self.labels.tolist(),
                "mass": self.mass.tolist(),
            }
        )

    @staticmethod
    def from_json(text: str) -> "TaskDistribution":
        doc = json.loads(text)
        dist = TaskDistribution(
            points=np.asarray(doc["points"], dtype=np.float64),
            labels=np.asarray(doc["labels"], dtype=np.int64),
            mass=np.asarray(doc["mass"], dtype=np.float64),
        )
        if dist.dimension != doc["dimension"]:
            raise ValueError("dimension field disagrees with point data")
        return dist


@dataclass(frozen=True)
class MixtureWeights:
    """Convex weights over the previous ``t - 1`` tasks at task ``t``."""

    task_index: int
    weights: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        object.__setattr__(self, "weights", w)
        if self.task_index < 2:
            raise ValueError("mixture weights only exist from the second task on")
        if w.shape != (self.task_index - 1,):
            raise ValueError(
                f"task {self.task_index} needs {self.task_index - 1} weights, got {w.shape}"
            )
        if np.any(w <= 0):
            raise ValueError("all mixture weights must be strictly positive")
        if abs(w.sum() - 1.0) > MASS_TOL:
            raise ValueError(f"mixture weights must sum to 1, got {w.sum()!r}")


def mixture(dists: list[TaskDistribution], w: MixtureWeights) -> TaskDistribution:
    """The seen-data distribution: point masses of task j scaled by w_j.

    Classes keep their global ids; supports are concatenated in task order
    so nested mixing at compatible weights is associative point-mass-wise.
    """
    if len(dists) != w.task_index - 1:
        raise ValueError(
            f"expected {w.task_index - 1} distributions, got {len(dists)}"
        )
    d = dists[0].dimension
    if any(dd.dimension != d for dd in dists):
        raise ValueError("all distributions must share the input dimension")
    points = np.concatenate([dd.points for dd in dists])
    labels = np.concatenate([dd.labels for dd in dists])
    mass = np.concatenate([wj * dd.mass for wj, dd in zip(w.weights, dists)])
    return TaskDistribution(points=points, labels=labels, mass=mass)


@dataclass(frozen=True)
class TupleOutcome:
    """One joint draw (anchor, positive, negatives) with its probability."""

    anchor: np.ndarray
    positive: np.ndarray
    negatives: np.ndarray  # (k, d_in)
    weight: float


def negative_combos(n: int, k: int) -> np.ndarray:
    """All ordered k-tuples of indices into an n-point support, (n**k, k)."""
    grids = np.meshgrid(*([np.arange(n)] * k), indexing="ij")
    return np.stack(grids, axis=-1).reshape(-1, k)


def positive_pairs(dist: TaskDistribution) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Ordered same-class pairs (x, x+) with their joint probability.

    x and x+ are independent draws from the same class conditional, so the
    pair weight is mu(c) * D_c(x) * D_c(x+) = mass(x) * mass(x+) / mu(c).
    Identical-point pairs are included.
    """
    anchors, positives, weights = [], [], []
    for c in dist.classes:
        idx, cond = dist.within_class(int(c))
        mu = dist.class_prob(int(c))
        for a, pa in zip(idx, cond):
            for b, pb in zip(idx, cond):
                anchors.append(a)
                positives.append(b)
                weights.append(mu * pa * pb)
    return (
        np.asarray(anchors, dtype=np.int64),
        np.asarray(positives, dtype=np.int64),
        np.asarray(weights, dtype=np.float64),
    )


def enumerate_tuples(dist: TaskDistribution, k: int) -> Iterator[TupleOutcome]:
    """Every joint outcome of the (k+2)-tuple draw with positive weight.

    The draw is c+ ~ mu, then x, x+ i.i.d. from D_{c+}, then each negative
    via its own class draw c_i ~ mu and x_i ~ D_{c_i}. Marginalizing the
    negative class draws leaves each negative i.i.d. with the raw point
    masses, which is how the weights are computed here. Negatives may
    collide with the anchor's class or the anchor itself.
    """
    if k < 1:
        raise ValueError("need at least one negative sample")
    anchors, positives, pair_w = positive_pairs(dist)
    combos = negative_combos(dist.size, k)
    neg_w = np.prod(dist.mass[combos], axis=1)
    for a, b, wp in zip(anchors, positives, pair_w):
        for combo, wn in zip(combos, neg_w):
            w = float(wp * wn)
            if w > 0:
                yield TupleOutcome(
                    anchor=dist.points[a],
                    positive=dist.points[b],
                    negatives=dist.points[combo],
                    weight=w,
                )


class EmbeddingModel:
    """A map from input points to unit-sphere vectors.

    Implementations must return unit-norm rows from :meth:`embed` and
    expose the embedding dimension as ``dim``.
    """

    dim: int

    def embed(self, points: np.ndarray) -> np.ndarray:
        """Map (n, d_in) points to (n, dim) unit vectors."""
        raise NotImplementedError


class ConstantModel(EmbeddingModel):
    """Embeds every point at the same unit vector."""

    def __init__(self, direction: np.ndarray):
        self.direction = normalize(np.asarray(direction, dtype=np.float64))
        self.dim = self.direction.size

    def embed(self, points: np.ndarray) -> np.ndarray:
        points = np.atleast_2d(points)
        return np.tile(self.direction, (points.shape[0], 1))


class TableModel(EmbeddingModel):
    """Embedding model defined by an explicit point -> vector table.

    Lookup is by exact float bytes, which is what table snapshots of
    trained encoders produce for the supports they were built from.
    """

    def __init__(self, points: np.ndarray, vectors: np.ndarray):
        points = np.atleast_2d(np.asarray(points, dtype=np.float64))
        vectors = normalize_rows(np.atleast_2d(vectors))
        if points.shape[0] != vectors.shape[0]:
            raise ValueError("one vector per point required")
        self.dim = vectors.shape[1]
        self._table = {
            p.tobytes(): v for p, v in zip(points, vectors)
        }

    def embed(self, points: np.ndarray) -> np.ndarray:
        points = np.atleast_2d(np.asarray(points, dtype=np.float64))
        try:
            rows = [self._table[p.tobytes()] for p in points]
        except KeyError:
            raise KeyError("point not present in embedding table") from None
        return np.stack(rows)


def random_table_model(
    dist: TaskDistribution, dim: int, rng: np.random.Generator
) -> TableModel:
    """A TableModel with i.i.d. Gaussian directions on the dist's support."""
    vecs = rng.standard_normal((dist.size, dim))
    return TableModel(dist.points, vecs)
