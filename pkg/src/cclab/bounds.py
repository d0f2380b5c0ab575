"""Executable performance bounds: the per-step loss sandwich between
consecutive models, the test-loss upper/lower bounds built from training
losses, the threshold scheduler quantities for adaptive distillation
coefficients, and the turning-point analysis of the upper bound in the
distillation coefficient.

All closed-form constants generalize to k negative samples; k = 1
recovers the single-negative forms.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .core import EmbeddingModel, MixtureWeights, TaskDistribution
from .losses import population_contrastive, population_distillation

E2 = math.exp(2.0)


@dataclass(frozen=True)
class BoundConstants:
    """Closed-form constants of the per-step loss sandwich."""

    k: int
    alpha: float
    beta: float
    beta_prime: float


def constants(k: int = 1) -> BoundConstants:
    """alpha = 2e^2/(k+e^2), beta = 2 - alpha + alpha*log(alpha/2),
    beta' = -alpha*log(1+k e^2) - 2k e^2/(1+k e^2)."""
    if k < 1:
        raise ValueError("need at least one negative sample")
    alpha = 2.0 * E2 / (k + E2)
    beta = 2.0 - alpha + alpha * math.log(alpha / 2.0)
    beta_prime = -alpha * math.log1p(k * E2) - 2.0 * k * E2 / (1.0 + k * E2)
    return BoundConstants(k=k, alpha=alpha, beta=beta, beta_prime=beta_prime)


def main_text_beta_prime() -> float:
    """Single-negative form -alpha*log(1+e^2) - alpha; equals the general
    formula at k = 1 because 2e^2/(1+e^2) = alpha there."""
    alpha = 2.0 * E2 / (1.0 + E2)
    return -alpha * math.log1p(E2) - alpha


def lemma1_slack(
    f_t: EmbeddingModel,
    f_prev: EmbeddingModel,
    dist: TaskDistribution,
    k: int = 1,
) -> tuple[float, float]:
    """Slack of both sides of the consecutive-model loss sandwich.

    upper_slack = alpha*L_con(f_prev) + L_dis + beta - L_con(f_t),
    lower_slack = L_con(f_t) - alpha*L_con(f_prev) - L_dis - beta'.
    Both are non-negative up to float error for unit-norm models.
    """
    c = constants(k)
    l_t = population_contrastive(f_t, dist, k)
    l_prev = population_contrastive(f_prev, dist, k)
    l_dis = population_distillation(f_t, f_prev, dist, k)
    upper_slack = c.alpha * l_prev + l_dis + c.beta - l_t
    lower_slack = l_t - c.alpha * l_prev - l_dis - c.beta_prime
    return upper_slack, lower_slack


@dataclass(frozen=True)
class GammaProfile:
    """The training-loss coefficient denominators at task t."""

    t: int
    lam: float
    gamma: float  # min({1/t} u {lam * k_tj})
    gamma_prime: float  # max({1} u {lam * k_tj})


def gamma(t: int, lam: float, weights: MixtureWeights) -> GammaProfile:
    if t != weights.task_index:
        raise ValueError("weights belong to a different task index")
    if lam < 0:
        raise ValueError("distillation coefficient must be non-negative")
    scaled = lam * weights.weights
    g = min(1.0 / t, float(scaled.min()))
    gp = max(1.0, float(scaled.max()))
    return GammaProfile(t=t, lam=lam, gamma=g, gamma_prime=gp)


def analytic_min_contrastive(k: int = 1) -> float:
    """log(1 + k e^-2): a lower bound on any population contrastive loss,
    since every margin of unit-norm embeddings is at most 2."""
    return math.log1p(k * math.exp(-2.0))


def min_con_surrogate(
    dist: TaskDistribution,
    k: int = 1,
    mode: str = "analytic",
    seed: int = 0,
    steps: int = 300,
) -> float:
    """Surrogate for the best achievable contrastive loss on ``dist``.

    ``analytic`` returns the closed-form lower bound log(1 + k e^-2);
    ``optimized`` trains a small encoder on the support and returns the
    loss it reaches (an upper estimate of the minimum, not certified).
    The upper-bound evaluator defaults to analytic: its coefficient is
    non-positive, so plugging in a smaller value keeps the bound valid.
    """
    if mode == "analytic":
        return analytic_min_contrastive(k)
    if mode != "optimized":
        raise ValueError(f"unknown surrogate mode {mode!r}")
    from .trainer import fit_encoder_to_distribution

    enc = fit_encoder_to_distribution(dist, seed=seed, steps=steps)
    return population_contrastive(enc.snapshot(dist.points), dist, k)


def _eta_factor(alpha: float, T: int) -> float:
    """(T - 1 - T*alpha + alpha^T) / (1 - alpha)^2."""
    return (T - 1 - T * alpha + alpha**T) / (1.0 - alpha) ** 2


def _per_task_lambdas(lam, T: int) -> list[float]:
    if np.isscalar(lam):
        return [float(lam)] * (T - 1)
    lams = [float(x) for x in lam]
    if len(lams) != T - 1:
        raise ValueError(f"need one coefficient per task 2..{T}, got {len(lams)}")
    return lams


@dataclass
class BoundReport:
    """One evaluated test-loss bound with everything needed to rebuild it."""

    kind: str  # "upper" | "lower"
    T: int
    k: int
    lambdas: list[float]  # per task t = 2..T
    alpha: float
    gammas: list[float]  # denominator per task t = 2..T
    coefficients: list[float]  # training-loss weight per task t = 1..T
    train_losses: list[float]
    eta: float
    value: float
    minf_mode: str | None = None
    minf_values: list[float] = field(default_factory=list)
    realized_test_loss: float | None = None

    def to_json(self) -> str:
        return json.dumps(self.__dict__, sort_keys=True)


def theorem1_upper(
    train_losses,
    weights: list[MixtureWeights],
    lam,
    k: int = 1,
    minf=None,
    minf_mode: str = "analytic",
) -> BoundReport:
    """Upper bound on the final model's test loss from the training losses.

    ``train_losses`` covers tasks 1..T, ``weights`` tasks 2..T. ``lam``
    may be a scalar or one coefficient per task t = 2..T (the adaptive
    variant substitutes the per-task coefficient in each denominator).
    ``minf`` optionally supplies per-task best-achievable-loss values for
    tasks 2..T; by default the analytic surrogate is used for all.
    """
    losses = [float(x) for x in train_losses]
    T = len(losses)
    if T < 2:
        raise ValueError("bounds need at least two tasks")
    if len(weights) != T - 1:
        raise ValueError(f"need mixture weights for tasks 2..{T}")
    lams = _per_task_lambdas(lam, T)
    c = constants(k)
    if minf is None:
        minf = [analytic_min_contrastive(k)] * (T - 1)
    minf = [float(x) for x in minf]
    gammas, coeffs = [], [c.alpha ** (T - 1)]
    eta = c.beta * _eta_factor(c.alpha, T)
    value = coeffs[0] * losses[0]
    for i, t in enumerate(range(2, T + 1)):
        g = gamma(t, lams[i], weights[i]).gamma
        if g <= 0:
            raise ValueError(
                f"task {t}: coefficient {lams[i]} gives a zero denominator"
            )
        gammas.append(g)
        w = c.alpha ** (T - t) / g
        coeffs.append(w)
        value += w * losses[i + 1]
        eta += c.alpha ** (T - t) * (1.0 - 1.0 / g) * minf[i]
    value += eta
    return BoundReport(
        kind="upper",
        T=T,
        k=k,
        lambdas=lams,
        alpha=c.alpha,
        gammas=gammas,
        coefficients=coeffs,
        train_losses=losses,
        eta=eta,
        value=value,
        minf_mode=minf_mode,
        minf_values=minf,
    )


def theorem1_lower(
    train_losses,
    weights: list[MixtureWeights],
    lam,
    k: int = 1,
) -> BoundReport:
    """Lower bound counterpart, using the max-form denominators and the
    k-negative eta' constant."""
    losses = [float(x) for x in train_losses]
    T = len(losses)
    if T < 2:
        raise ValueError("bounds need at least two tasks")
    if len(weights) != T - 1:
        raise ValueError(f"need mixture weights for tasks 2..{T}")
    lams = _per_task_lambdas(lam, T)
    c = constants(k)
    gammas, coeffs = [], [c.alpha ** (T - 1)]
    eta = c.beta_prime * _eta_factor(c.alpha, T)
    value = coeffs[0] * losses[0]
    for i, t in enumerate(range(2, T + 1)):
        gp = gamma(t, lams[i], weights[i]).gamma_prime
        gammas.append(gp)
        w = c.alpha ** (T - t) / gp
        coeffs.append(w)
        value += w * losses[i + 1]
    value += eta
    return BoundReport(
        kind="lower",
        T=T,
        k=k,
        lambdas=lams,
        alpha=c.alpha,
        gammas=gammas,
        coefficients=coeffs,
        train_losses=losses,
        eta=eta,
        value=value,
    )


def compute_U(
    train_losses,
    weights: list[MixtureWeights],
    lam_t: float,
    k: int = 1,
) -> float:
    """Weighted partial sum of training losses for the threshold scheduler.

    ``train_losses`` covers tasks 2..t, ``weights`` likewise; the current
    coefficient ``lam_t`` enters every denominator.
    """
    losses = [float(x) for x in train_losses]
    if len(losses) != len(weights) or not losses:
        raise ValueError("need one training loss per task 2..t")
    c = constants(k)
    t = weights[-1].task_index
    total = 0.0
    for loss, w in zip(losses, weights):
        j = w.task_index
        g = gamma(j, lam_t, w).gamma
        if g <= 0:
            raise ValueError(f"task {j}: zero denominator at coefficient {lam_t}")
        total += c.alpha ** (t - j) / g * loss
    return total


@dataclass(frozen=True)
class ScheduleState:
    """Threshold-scheduler state: current coefficient plus its update rule."""

    t: int
    lam: float
    u_t: float  # threshold, > 0
    delta_t: float  # momentum, >= 0

    def __post_init__(self):
        if self.u_t <= 0:
            raise ValueError("threshold must be positive")
        if self.delta_t < 0:
            raise ValueError("momentum must be non-negative")


def theorem2_step(state: ScheduleState, U_t: float) -> ScheduleState:
    """Increase the coefficient by the momentum when the weighted loss sum
    exceeds the threshold; leave it unchanged otherwise."""
    lam = state.lam + state.delta_t if U_t > state.u_t else state.lam
    return ScheduleState(
        t=state.t + 1, lam=lam, u_t=state.u_t, delta_t=state.delta_t
    )


def random_distribution(
    rng: np.random.Generator,
    support_size: int = 4,
    dimension: int = 3,
    n_classes: int = 2,
) -> TaskDistribution:
    """Random finite-support distribution with Dirichlet point masses."""
    n_classes = min(n_classes, support_size)
    labels = np.concatenate(
        [np.arange(n_classes), rng.integers(0, n_classes, size=support_size - n_classes)]
    )
    mass = rng.dirichlet(np.ones(support_size))
    mass = np.maximum(mass, 1e-3)
    mass /= mass.sum()
    return TaskDistribution(
        points=rng.standard_normal((support_size, dimension)),
        labels=labels,
        mass=mass,
    )


def lemma1_trials(
    trials: int,
    k: int = 1,
    seed: int = 0,
    support_size: int = 4,
    dimension: int = 3,
    embed_dim: int = 4,
    alpha_corruption: float = 0.0,
) -> tuple[float, float]:
    """Worst sandwich slacks over random (model, model, distribution) triples.

    ``alpha_corruption`` shifts the alpha constant; nonzero values exist
    only to prove the suite can fail (sabotage hook).
    """
    from .core import random_table_model

    rng = np.random.default_rng(seed)
    c = constants(k)
    alpha = c.alpha + alpha_corruption
    worst_up = worst_lo = np.inf
    for _ in range(trials):
        dist = random_distribution(rng, support_size, dimension)
        f_t = random_table_model(dist, embed_dim, rng)
        f_prev = random_table_model(dist, embed_dim, rng)
        l_t = population_contrastive(f_t, dist, k)
        l_prev = population_contrastive(f_prev, dist, k)
        l_dis = population_distillation(f_t, f_prev, dist, k)
        worst_up = min(worst_up, alpha * l_prev + l_dis + c.beta - l_t)
        worst_lo = min(worst_lo, l_t - alpha * l_prev - l_dis - c.beta_prime)
    return float(worst_up), float(worst_lo)


def decomposition_check_trials(
    trials: int,
    k: int = 1,
    seed: int = 0,
    support_size: int = 4,
    dimension: int = 3,
    embed_dim: int = 4,
) -> float:
    """Worst absolute cross-entropy decomposition residual over random triples."""
    from .core import random_table_model
    from .losses import decomposition_residual

    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trials):
        dist = random_distribution(rng, support_size, dimension)
        f_t = random_table_model(dist, embed_dim, rng)
        f_prev = random_table_model(dist, embed_dim, rng)
        worst = max(worst, abs(decomposition_residual(f_t, f_prev, dist, k)))
    return worst


def turning_point(weights: list[MixtureWeights]) -> float:
    """Smallest coefficient at which the upper bound stops decreasing.

    Each denominator saturates at 1/t once lam * k_tj >= 1/t for every j,
    i.e. lam >= 1/(t * min_j k_tj); the bound is constant beyond the max
    of these over tasks.
    """
    if not weights:
        raise ValueError("need weights for at least one task")
    return max(
        1.0 / (w.task_index * float(w.weights.min())) for w in weights
    )
