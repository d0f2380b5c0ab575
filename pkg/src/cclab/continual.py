"""The adaptive-coefficient continual-learning driver: task loop over a
sequence of finite tasks, reservoir replay buffer, the adaptive
distillation-coefficient rule with its pure/min/max ablation variants, the
threshold-scheduler hook, and linear-probe evaluation on frozen
representations.

A run owns all of its state; with a fixed seed the whole sequence is
bit-reproducible (training is sequential).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .bounds import ScheduleState, compute_U, theorem2_step
from .core import MixtureWeights, TaskDistribution
from .data import TaskData
from .trainer import Encoder, SgdConfig, Temperatures, grad_total, sgd_step

LAMBDA_MODES = ("fixed", "pure", "min", "max", "theorem2")


@dataclass
class ReplayBuffer:
    """Fixed-capacity reservoir over the sample stream.

    The classic reservoir rule keeps each streamed item with probability
    capacity/stream_length once the stream is longer than the capacity.
    """

    capacity: int
    seed: int = 0
    points: list = field(default_factory=list)
    labels: list = field(default_factory=list)
    tasks: list = field(default_factory=list)
    stream_count: int = 0

    def __post_init__(self):
        if self.capacity < 0:
            raise ValueError("capacity must be non-negative")
        self._rng = np.random.default_rng(self.seed)

    def __len__(self) -> int:
        return len(self.points)

    def insert(self, point: np.ndarray, label: int, source_task: int) -> None:
        self.stream_count += 1
        if self.capacity == 0:
            return
        if len(self.points) < self.capacity:
            self.points.append(np.asarray(point, dtype=np.float64))
            self.labels.append(int(label))
            self.tasks.append(int(source_task))
            return
        r = int(self._rng.integers(0, self.stream_count))
        if r < self.capacity:
            self.points[r] = np.asarray(point, dtype=np.float64)
            self.labels[r] = int(label)
            self.tasks[r] = int(source_task)

    def composition(self) -> dict[int, int]:
        """Stored sample count per source task."""
        out: dict[int, int] = {}
        for t in self.tasks:
            out[t] = out.get(t, 0) + 1
        return out

    def task_shares(self, upto_task: int, floor: float = 1e-6) -> MixtureWeights:
        """Each past task's share of buffer samples, as estimated mixture
        weights for task ``upto_task``. Absent tasks get a small floor so
        the weights stay strictly positive."""
        comp = self.composition()
        raw = np.array(
            [max(float(comp.get(j, 0)), floor) for j in range(1, upto_task)]
        )
        return MixtureWeights(task_index=upto_task, weights=raw / raw.sum())


def reservoir_insert(buffer: ReplayBuffer, point, label, source_task) -> ReplayBuffer:
    """Functional wrapper over :meth:`ReplayBuffer.insert`."""
    buffer.insert(point, label, source_task)
    return buffer


@dataclass
class LambdaSchedule:
    """Distillation-coefficient state across tasks.

    The ratio rule divides accumulated distillation losses by accumulated
    contrastive losses over completed tasks that had a distillation phase
    (j >= 2); the mode then shapes kappa * ratio.
    """

    mode: str = "max"
    lam0: float = 1.0
    kappa: float = 1.0
    u_t: float = 1.0
    delta_t: float = 0.1
    sum_dis: float = 0.0
    sum_con: float = 0.0
    theorem2_lam: float | None = None

    def __post_init__(self):
        if self.mode not in LAMBDA_MODES:
            raise ValueError(f"unknown schedule mode {self.mode!r}")
        if self.lam0 < 0 or self.kappa <= 0:
            raise ValueError("lam0 must be >= 0 and kappa > 0")

    def record_task(self, l_con: float, l_dis: float) -> None:
        """Accumulate a completed distillation-phase task's final losses."""
        self.sum_con += l_con
        self.sum_dis += l_dis


def adaptive_lambda(schedule: LambdaSchedule, t: int) -> float:
    """Coefficient for task ``t`` under the schedule's mode.

    The second task always uses the base coefficient (the ratio's sums are
    empty there); later tasks use the accumulated loss ratio.
    """
    if t < 2:
        raise ValueError("the first task has no distillation coefficient")
    if schedule.mode == "fixed":
        return schedule.lam0
    if schedule.mode == "theorem2":
        return schedule.theorem2_lam if schedule.theorem2_lam is not None else schedule.lam0
    if t == 2:
        return schedule.lam0
    if schedule.sum_con <= 0:
        raise ValueError("degenerate training: accumulated contrastive loss is zero")
    r = schedule.kappa * schedule.sum_dis / schedule.sum_con
    if schedule.mode == "pure":
        return r
    if schedule.mode == "min":
        return min(1.0, r)
    return max(schedule.lam0, r)  # max


def augment(points: np.ndarray, rng: np.random.Generator,
            jitter: float = 0.05, max_angle_deg: float = 15.0) -> np.ndarray:
    """Label-preserving stochastic view: Gaussian jitter, plus a small
    random rotation for 2-D inputs."""
    points = np.atleast_2d(points)
    out = points + rng.normal(scale=jitter, size=points.shape)
    if points.shape[1] == 2:
        theta = rng.uniform(-1.0, 1.0, size=points.shape[0]) * np.deg2rad(max_angle_deg)
        c, s = np.cos(theta), np.sin(theta)
        out = np.stack(
            [c * out[:, 0] - s * out[:, 1], s * out[:, 0] + c * out[:, 1]], axis=1
        )
    return out


@dataclass
class RunConfig:
    """Everything a training run needs; echoed into the trace manifest."""

    hidden: int = 32
    embed_dim: int = 8
    sgd: SgdConfig = field(default_factory=SgdConfig)
    temps: Temperatures = field(default_factory=Temperatures)
    mode: str = "max"
    lam0: float = 1.0
    kappa: float = 1.0
    buffer_size: int = 50
    seed: int = 0
    divide: bool = True
    u_t: float = 1.0
    delta_t: float = 0.1
    probe_epochs: int = 100

    def manifest(self) -> dict:
        return {
            "hidden": self.hidden,
            "embed_dim": self.embed_dim,
            "lr": self.sgd.lr,
            "epochs": self.sgd.epochs,
            "batch_size": self.sgd.batch_size,
            "momentum": self.sgd.momentum,
            "mode": self.mode,
            "lam0": self.lam0,
            "kappa": self.kappa,
            "buffer_size": self.buffer_size,
            "seed": self.seed,
            "divide": self.divide,
            "temperatures": {
                "contrastive": self.temps.contrastive,
                "distill_current": self.temps.distill_current,
                "distill_past": self.temps.distill_past,
            },
            "probe_epochs": self.probe_epochs,
        }


@dataclass
class TaskRecord:
    task: int
    lam: float | None
    l_con: float
    l_dis: float
    buffer_composition: dict[int, int]


@dataclass
class ExperimentTrace:
    """Per-task records plus the per-epoch loss stream of a full run."""

    config: dict
    records: list[TaskRecord] = field(default_factory=list)
    epoch_rows: list[tuple] = field(default_factory=list)  # (task, epoch, l_con, l_dis, lam)
    probe: dict | None = None

    def to_json(self) -> str:
        doc = {
            "config": self.config,
            "records": [
                {
                    "task": r.task,
                    "lambda": r.lam,
                    "l_con": r.l_con,
                    "l_dis": r.l_dis,
                    "buffer_composition": {
                        str(k): v for k, v in sorted(r.buffer_composition.items())
                    },
                }
                for r in self.records
            ],
            "probe": self.probe,
        }
        return json.dumps(doc, sort_keys=True)

    def epoch_csv(self) -> str:
        lines = ["task,epoch,l_con,l_dis,lambda"]
        for task, epoch, l_con, l_dis, lam in self.epoch_rows:
            lines.append(f"{task},{epoch},{l_con!r},{l_dis!r},{lam!r}")
        return "\n".join(lines) + "\n"


def run_task(
    enc_prev: Encoder | None,
    task: TaskData,
    t: int,
    buffer: ReplayBuffer,
    schedule: LambdaSchedule,
    cfg: RunConfig,
    rngs: dict[str, np.random.Generator],
    trace: ExperimentTrace,
) -> Encoder:
    """Train on one task over the combined current + buffered data.

    The new model starts from the previous one; distillation targets come
    from the frozen previous model. The final-epoch average batch losses
    are what feed future coefficient ratios, and the buffer is refreshed
    from the current task's stream afterwards.
    """
    train = task.train
    if train.size == 0:
        raise ValueError("empty task data")
    pts = list(train.points)
    labs = list(train.labels)
    if t >= 2:
        pts += buffer.points
        labs += buffer.labels
    pts = np.asarray(pts)
    labs = np.asarray(labs, dtype=np.int64)

    if enc_prev is None:
        enc = Encoder(
            (train.dimension, cfg.hidden, cfg.embed_dim), seed=cfg.seed
        )
        lam = None
    else:
        enc = enc_prev.copy()
        lam = adaptive_lambda(schedule, t)

    velocity = np.zeros(enc.get_params().size)
    batch_rng = rngs["batching"]
    aug_rng = rngs["augment"]
    n = pts.shape[0]
    final_con = final_dis = 0.0
    for epoch in range(cfg.sgd.epochs):
        order = batch_rng.permutation(n)
        con_sum = dis_sum = 0.0
        n_batches = 0
        for start in range(0, n, cfg.sgd.batch_size):
            idx = order[start : start + cfg.sgd.batch_size]
            if idx.size < 1:
                continue
            base = pts[idx]
            views = np.empty((2 * idx.size, pts.shape[1]))
            views[0::2] = augment(base, aug_rng)
            views[1::2] = augment(base, aug_rng)
            vlabs = np.repeat(labs[idx], 2)
            l_con, l_dis, grad = grad_total(
                enc,
                enc_prev if t >= 2 else None,
                views,
                vlabs,
                lam if lam is not None else 0.0,
                cfg.temps,
                divide=cfg.divide,
            )
            velocity = sgd_step(enc, grad, velocity, cfg.sgd)
            con_sum += l_con
            dis_sum += l_dis
            n_batches += 1
        final_con = con_sum / max(1, n_batches)
        final_dis = dis_sum / max(1, n_batches)
        trace.epoch_rows.append((t, epoch, final_con, final_dis, lam))

    if t >= 2:
        schedule.record_task(final_con, final_dis)
    for p, c in zip(train.points, train.labels):
        buffer.insert(p, int(c), t)
    trace.records.append(
        TaskRecord(
            task=t,
            lam=lam,
            l_con=final_con,
            l_dis=final_dis,
            buffer_composition=buffer.composition(),
        )
    )
    return enc


@dataclass
class RunResult:
    """Outcome of a full run: final model, per-task model snapshots,
    trace, and the buffer as it stood at the end."""

    encoder: Encoder
    task_models: list[Encoder]
    trace: ExperimentTrace
    buffer: ReplayBuffer


def run_sequence(tasks: list[TaskData], cfg: RunConfig) -> RunResult:
    """Execute the full task loop, threading model, buffer and schedule."""
    if not tasks:
        raise ValueError("need at least one task")
    ss = np.random.SeedSequence(cfg.seed)
    children = ss.spawn(4)
    rngs = {
        "batching": np.random.default_rng(children[0]),
        "augment": np.random.default_rng(children[1]),
        "buffer": children[2],
        "probe": np.random.default_rng(children[3]),
    }
    buffer = ReplayBuffer(
        capacity=cfg.buffer_size, seed=int(children[2].generate_state(1)[0])
    )
    schedule = LambdaSchedule(
        mode=cfg.mode, lam0=cfg.lam0, kappa=cfg.kappa,
        u_t=cfg.u_t, delta_t=cfg.delta_t,
    )
    if cfg.mode == "theorem2":
        schedule.theorem2_lam = cfg.lam0
    trace = ExperimentTrace(config=cfg.manifest())
    enc = None
    task_models: list[Encoder] = []
    train_losses: list[float] = []
    for t, task in enumerate(tasks, start=1):
        enc = run_task(enc, task, t, buffer, schedule, cfg, rngs, trace)
        task_models.append(enc.copy())
        rec = trace.records[-1]
        train_losses.append(rec.l_con + (rec.lam or 0.0) * rec.l_dis)
        if cfg.mode == "theorem2" and t >= 2:
            state = ScheduleState(
                t=t, lam=schedule.theorem2_lam, u_t=cfg.u_t, delta_t=cfg.delta_t
            )
            weights = [
                buffer.task_shares(j) for j in range(2, t + 1)
            ]
            u_val = compute_U(train_losses[1:], weights, state.lam)
            schedule.theorem2_lam = theorem2_step(state, u_val).lam
    return RunResult(encoder=enc, task_models=task_models, trace=trace, buffer=buffer)


def population_bound_check(
    task_models: list[Encoder],
    task_dists: list[TaskDistribution],
    lambdas: list[float],
    k: int = 1,
    weights: list[MixtureWeights] | None = None,
):
    """Exact-population bound sandwich for a trained model sequence.

    Computes each task's population training loss from the per-task model
    snapshots (contrastive on the task, distillation on the seen-data
    mixture), the realized test loss of the final model, and both bounds.
    ``lambdas`` covers tasks 2..T; ``weights`` defaults to uniform.

    Returns (upper report, lower report, realized test loss).
    """
    from .bounds import theorem1_lower, theorem1_upper
    from .core import mixture
    from .losses import (
        population_contrastive,
        population_distillation,
        population_test_loss,
    )

    T = len(task_models)
    if T != len(task_dists) or T < 2:
        raise ValueError("need matching model/distribution sequences, T >= 2")
    if len(lambdas) != T - 1:
        raise ValueError("need one distillation coefficient per task 2..T")
    if weights is None:
        weights = [
            MixtureWeights(task_index=t, weights=np.full(t - 1, 1.0 / (t - 1)))
            for t in range(2, T + 1)
        ]
    train_losses = [population_contrastive(task_models[0], task_dists[0], k)]
    for i, t in enumerate(range(2, T + 1)):
        past = mixture(task_dists[: t - 1], weights[i])
        l_con = population_contrastive(task_models[t - 1], task_dists[t - 1], k)
        l_dis = population_distillation(
            task_models[t - 1], task_models[t - 2], past, k
        )
        train_losses.append(l_con + lambdas[i] * l_dis)
    upper = theorem1_upper(train_losses, weights, lambdas, k=k)
    lower = theorem1_lower(train_losses, weights, lambdas, k=k)
    realized = population_test_loss(task_models[-1], task_dists, k)
    upper.realized_test_loss = realized
    lower.realized_test_loss = realized
    return upper, lower, realized


def class_balanced_batches(
    labels: np.ndarray, batch_size: int, n_batches: int, rng: np.random.Generator
) -> list[np.ndarray]:
    """Minibatch indices drawn by the two-step rule: a uniform class first,
    then a uniform instance within it."""
    classes = np.unique(labels)
    per_class = {int(c): np.flatnonzero(labels == c) for c in classes}
    batches = []
    for _ in range(n_batches):
        cs = rng.integers(0, classes.size, size=batch_size)
        idx = np.array(
            [per_class[int(classes[c])][rng.integers(0, per_class[int(classes[c])].size)]
             for c in cs]
        )
        batches.append(idx)
    return batches


@dataclass
class ProbeResult:
    per_task_accuracy: list[float]
    average_accuracy: float
    missing_classes: list[int]


def linear_probe(
    embed_fn,
    probe_points: np.ndarray,
    probe_labels: np.ndarray,
    test_tasks: list[TaskDistribution],
    n_classes: int,
    epochs: int = 100,
    batch_size: int = 32,
    lr: float = 0.5,
    seed: int = 0,
) -> ProbeResult:
    """Train a linear softmax classifier on frozen embeddings.

    Probe training data is whatever the caller passes (by convention the
    last task plus the buffer); minibatches are class-balanced; training
    runs for exactly ``epochs`` epochs. Classes absent from the probe data
    are flagged and simply never predicted well by the classifier as-is.
    """
    rng = np.random.default_rng(seed)
    z = embed_fn(np.atleast_2d(probe_points))
    labels = np.asarray(probe_labels, dtype=np.int64)
    d = z.shape[1]
    w = np.zeros((d, n_classes))
    b = np.zeros(n_classes)
    present = np.unique(labels)
    missing = sorted(set(range(n_classes)) - set(int(c) for c in present))
    steps_per_epoch = max(1, int(np.ceil(z.shape[0] / batch_size)))
    for _ in range(epochs):
        for idx in class_balanced_batches(labels, batch_size, steps_per_epoch, rng):
            logits = z[idx] @ w + b
            logits -= logits.max(axis=1, keepdims=True)
            p = np.exp(logits)
            p /= p.sum(axis=1, keepdims=True)
            p[np.arange(idx.size), labels[idx]] -= 1.0
            p /= idx.size
            w -= lr * (z[idx].T @ p)
            b -= lr * p.sum(axis=0)
    accs = []
    for dist in test_tasks:
        zt = embed_fn(dist.points)
        pred = np.argmax(zt @ w + b, axis=1)
        accs.append(float(np.mean(pred == dist.labels)))
    return ProbeResult(
        per_task_accuracy=accs,
        average_accuracy=float(np.mean(accs)),
        missing_classes=missing,
    )
