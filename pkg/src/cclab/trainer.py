"""A small trainable encoder (MLP with a final unit-sphere head), analytic
reverse-mode gradients of the batch losses, plain SGD with momentum,
finite-difference gradient verification, and checkpoint persistence.

Gradients are written out by hand against the similarity matrix; the
normalization head contributes the Jacobian (I - zz')/||z|| per row.
Double precision throughout.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import NORM_TOL, TableModel, normalize_rows
from .losses import BatchEmbeddings, empirical_contrastive, empirical_distillation

CHECKPOINT_MAGIC = b"CCL1"
CHECKPOINT_VERSION = 1


@dataclass
class SgdConfig:
    lr: float = 0.05
    epochs: int = 200
    batch_size: int = 32
    momentum: float = 0.9
    seed: int = 0

    def __post_init__(self):
        if self.lr <= 0 or self.epochs <= 0 or self.batch_size <= 0:
            raise ValueError("lr, epochs and batch size must be positive")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must lie in [0, 1)")


class Encoder:
    """Fully connected encoder mapping inputs to the unit sphere.

    ``dims`` lists layer widths input-first, e.g. (2, 32, 8). Hidden
    layers use tanh or relu; the output layer is linear followed by row
    normalization, so forward output is always unit-norm.
    """

    def __init__(self, dims, activation: str = "tanh", seed: int = 0):
        dims = tuple(int(d) for d in dims)
        if len(dims) < 2:
            raise ValueError("need at least an input and an output width")
        if activation not in ("tanh", "relu"):
            raise ValueError(f"unknown activation {activation!r}")
        self.dims = dims
        self.activation = activation
        self.dim = dims[-1]
        rng = np.random.default_rng(seed)
        self.weights: list[np.ndarray] = []
        self.biases: list[np.ndarray] = []
        for fan_in, fan_out in zip(dims[:-1], dims[1:]):
            bound = 1.0 / np.sqrt(fan_in)
            self.weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
            self.biases.append(rng.uniform(-bound, bound, size=fan_out))

    # -- parameter vector -------------------------------------------------

    def get_params(self) -> np.ndarray:
        parts = []
        for w, b in zip(self.weights, self.biases):
            parts.append(w.ravel())
            parts.append(b)
        return np.concatenate(parts)

    def set_params(self, theta: np.ndarray) -> None:
        theta = np.asarray(theta, dtype=np.float64)
        pos = 0
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            self.weights[i] = theta[pos : pos + w.size].reshape(w.shape).copy()
            pos += w.size
            self.biases[i] = theta[pos : pos + b.size].copy()
            pos += b.size
        if pos != theta.size:
            raise ValueError("parameter vector has the wrong length")

    @property
    def n_params(self) -> int:
        return sum(w.size for w in self.weights) + sum(b.size for b in self.biases)

    def copy(self) -> "Encoder":
        clone = Encoder(self.dims, activation=self.activation, seed=0)
        clone.weights = [w.copy() for w in self.weights]
        clone.biases = [b.copy() for b in self.biases]
        return clone

    # -- forward ----------------------------------------------------------

    def _act(self, x: np.ndarray) -> np.ndarray:
        return np.tanh(x) if self.activation == "tanh" else np.maximum(x, 0.0)

    def _act_grad(self, a: np.ndarray) -> np.ndarray:
        # derivative expressed through the activation output
        return 1.0 - a**2 if self.activation == "tanh" else (a > 0).astype(np.float64)

    def forward(self, points: np.ndarray) -> np.ndarray:
        """Unit-norm embeddings of (n, d_in) points."""
        z, _ = self._forward_cached(points)
        return z

    # an Encoder is a valid EmbeddingModel for the population losses
    embed = forward

    def _forward_cached(self, points: np.ndarray):
        x = np.atleast_2d(np.asarray(points, dtype=np.float64))
        if x.shape[1] != self.dims[0]:
            raise ValueError(
                f"input dimension {x.shape[1]} does not match encoder ({self.dims[0]})"
            )
        acts = [x]
        h = x
        for w, b in zip(self.weights[:-1], self.biases[:-1]):
            h = self._act(h @ w + b)
            acts.append(h)
        raw = h @ self.weights[-1] + self.biases[-1]
        z = normalize_rows(raw)
        return z, (acts, raw, z)

    def snapshot(self, points: np.ndarray) -> TableModel:
        """Freeze the encoder's embeddings of a support into a table model."""
        return TableModel(points, self.forward(points))

    # -- backward ---------------------------------------------------------

    def _backward(self, cache, d_z: np.ndarray) -> np.ndarray:
        """Gradient of a scalar loss w.r.t. parameters given dL/dZ."""
        acts, raw, z = cache
        norms = np.linalg.norm(raw, axis=1)
        ok = norms >= NORM_TOL
        # through z = raw/||raw||: d_raw = (d_z - (d_z.z) z)/||raw||
        d_raw = np.zeros_like(raw)
        inner = (d_z * z).sum(axis=1)
        d_raw[ok] = (d_z[ok] - inner[ok, None] * z[ok]) / norms[ok, None]
        grads_w = [None] * len(self.weights)
        grads_b = [None] * len(self.biases)
        delta = d_raw
        grads_w[-1] = acts[-1].T @ delta
        grads_b[-1] = delta.sum(axis=0)
        for layer in range(len(self.weights) - 2, -1, -1):
            delta = (delta @ self.weights[layer + 1].T) * self._act_grad(acts[layer + 1])
            grads_w[layer] = acts[layer].T @ delta
            grads_b[layer] = delta.sum(axis=0)
        return np.concatenate(
            [np.concatenate([gw.ravel(), gb]) for gw, gb in zip(grads_w, grads_b)]
        )


@dataclass
class Temperatures:
    """Batch-loss temperatures; fixed across tasks, recorded per run."""

    contrastive: float = 0.5
    distill_current: float = 0.2
    distill_past: float = 0.01


def _supcon_sim_grad(sims: np.ndarray, labels: np.ndarray, tau: float) -> np.ndarray:
    """dL_supcon/dS for the summed-over-anchors loss, diagonal excluded."""
    n = sims.shape[0]
    off = ~np.eye(n, dtype=bool)
    pos = (labels[:, None] == labels[None, :]) & off
    counts = pos.sum(axis=1)
    scaled = sims / tau
    m = np.where(off, scaled, -np.inf).max(axis=1)
    ex = np.exp(scaled - m[:, None], where=off, out=np.zeros_like(scaled))
    p = ex / ex.sum(axis=1, keepdims=True)
    return (p - pos / counts[:, None]) / tau


def _ird_sim_grad(
    sims: np.ndarray, target_q: np.ndarray, tau: float
) -> np.ndarray:
    """dL_ird/dS with a fixed target row-distribution over the off-diagonal."""
    n = sims.shape[0]
    off = ~np.eye(n, dtype=bool)
    scaled = sims / tau
    m = np.where(off, scaled, -np.inf).max(axis=1)
    ex = np.exp(scaled - m[:, None], where=off, out=np.zeros_like(scaled))
    p = ex / ex.sum(axis=1, keepdims=True)
    q = np.zeros_like(sims)
    q[off] = target_q.ravel()
    return (p - q) / tau


def batch_losses(
    enc_t: Encoder,
    enc_prev: Encoder | None,
    points: np.ndarray,
    labels: np.ndarray,
    temps: Temperatures,
) -> tuple[float, float]:
    """(contrastive, distillation) batch losses, summed over anchors.

    The distillation term is 0 when no previous model is given.
    """
    z = enc_t.forward(points)
    l_con = empirical_contrastive(
        BatchEmbeddings(z=z, labels=labels, tau=temps.contrastive)
    )
    l_dis = 0.0
    if enc_prev is not None:
        current = BatchEmbeddings(z=z, labels=labels, tau=temps.distill_current)
        past = BatchEmbeddings(
            z=enc_prev.forward(points), labels=labels, tau=temps.distill_past
        )
        l_dis = empirical_distillation(current, past)
    return l_con, l_dis


def grad_total(
    enc_t: Encoder,
    enc_prev: Encoder | None,
    points: np.ndarray,
    labels: np.ndarray,
    lam: float,
    temps: Temperatures,
    divide: bool = True,
) -> tuple[float, float, np.ndarray]:
    """Analytic gradient of contrastive + lam * distillation w.r.t. the
    current encoder's parameters. The previous encoder is frozen.

    Returns (contrastive loss, distillation loss, flat gradient); with
    ``divide`` both losses and the gradient are scaled by 1/2N for
    step-size conditioning.
    """
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    labels = np.asarray(labels, dtype=np.int64)
    n = points.shape[0]
    z, cache = enc_t._forward_cached(points)
    sims = z @ z.T
    off = ~np.eye(n, dtype=bool)

    g_sim = _supcon_sim_grad(sims, labels, temps.contrastive)
    l_con = empirical_contrastive(
        BatchEmbeddings(z=z, labels=labels, tau=temps.contrastive)
    )
    l_dis = 0.0
    if enc_prev is not None and lam > 0:
        z_prev = enc_prev.forward(points)
        sims_prev = z_prev @ z_prev.T
        scaled = sims_prev / temps.distill_past
        m = np.where(off, scaled, -np.inf).max(axis=1)
        ex = np.exp(scaled - m[:, None], where=off, out=np.zeros_like(scaled))
        q = (ex / ex.sum(axis=1, keepdims=True))[off].reshape(n, n - 1)
        g_sim = g_sim + lam * _ird_sim_grad(sims, q, temps.distill_current)
        l_dis = empirical_distillation(
            BatchEmbeddings(z=z, labels=labels, tau=temps.distill_current),
            BatchEmbeddings(z=z_prev, labels=labels, tau=temps.distill_past),
        )
    elif enc_prev is not None:
        _, l_dis = batch_losses(enc_t, enc_prev, points, labels, temps)

    d_z = (g_sim + g_sim.T) @ z
    grad = enc_t._backward(cache, d_z)
    if divide:
        scale = 1.0 / n
        return l_con * scale, l_dis * scale, grad * scale
    return l_con, l_dis, grad


def sgd_step(
    enc: Encoder,
    grad: np.ndarray,
    velocity: np.ndarray,
    cfg: SgdConfig,
) -> np.ndarray:
    """One momentum-SGD update in place; returns the new velocity."""
    if not np.all(np.isfinite(grad)):
        raise FloatingPointError("non-finite gradient component; training aborted")
    velocity = cfg.momentum * velocity + grad
    enc.set_params(enc.get_params() - cfg.lr * velocity)
    return velocity


def finite_diff_check(
    enc: Encoder,
    enc_prev: Encoder | None,
    points: np.ndarray,
    labels: np.ndarray,
    lam: float,
    temps: Temperatures,
    h: float = 1e-5,
) -> float:
    """Max relative disagreement between the analytic gradient and central
    finite differences of the combined loss."""
    if h <= 0:
        raise ValueError("step size must be positive")

    def loss_at(theta: np.ndarray) -> float:
        probe = enc.copy()
        probe.set_params(theta)
        l_con, l_dis, _ = grad_total(
            probe, enc_prev, points, labels, lam, temps, divide=False
        )
        return l_con + lam * l_dis

    _, _, analytic = grad_total(
        enc, enc_prev, points, labels, lam, temps, divide=False
    )
    theta = enc.get_params()
    worst = 0.0
    for i in range(theta.size):
        up, down = theta.copy(), theta.copy()
        up[i] += h
        down[i] -= h
        fd = (loss_at(up) - loss_at(down)) / (2 * h)
        denom = max(1e-8, abs(analytic[i]) + abs(fd))
        worst = max(worst, abs(analytic[i] - fd) / denom)
    return worst


# -- persistence ----------------------------------------------------------


def save_checkpoint(
    enc: Encoder,
    path: str | Path,
    seed: int = 0,
    task: int = 0,
    lam: float = 0.0,
    temps: Temperatures | None = None,
) -> None:
    """Versioned little-endian binary: magic, layer count, dims, f64
    parameter stream; plus a JSON sidecar manifest at <path>.json."""
    path = Path(path)
    params = enc.get_params()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", len(enc.dims)))
        fh.write(struct.pack(f"<{len(enc.dims)}I", *enc.dims))
        fh.write(params.astype("<f8").tobytes())
    temps = temps or Temperatures()
    manifest = {
        "version": CHECKPOINT_VERSION,
        "dims": list(enc.dims),
        "seed": seed,
        "task": task,
        "lambda": lam,
        "temperatures": {
            "contrastive": temps.contrastive,
            "distill_current": temps.distill_current,
            "distill_past": temps.distill_past,
        },
        "activation": enc.activation,
    }
    path.with_suffix(path.suffix + ".json").write_text(
        json.dumps(manifest, sort_keys=True, indent=2)
    )


def load_checkpoint(path: str | Path) -> tuple[Encoder, dict]:
    path = Path(path)
    blob = path.read_bytes()
    if blob[:4] != CHECKPOINT_MAGIC:
        raise ValueError("bad checkpoint magic")
    (n_layers,) = struct.unpack_from("<I", blob, 4)
    dims = struct.unpack_from(f"<{n_layers}I", blob, 8)
    manifest = json.loads(path.with_suffix(path.suffix + ".json").read_text())
    enc = Encoder(dims, activation=manifest.get("activation", "tanh"), seed=0)
    offset = 8 + 4 * n_layers
    params = np.frombuffer(blob, dtype="<f8", offset=offset).copy()
    enc.set_params(params)
    return enc, manifest


def fit_encoder_to_distribution(
    dist,
    dim: int = 8,
    hidden: int = 32,
    seed: int = 0,
    steps: int = 300,
    lr: float = 0.1,
    batch: int = 16,
    jitter: float = 0.01,
):
    """Train a fresh encoder to minimize the batch contrastive loss on
    samples from a finite distribution. Used as the optimized surrogate
    for the best achievable loss."""
    rng = np.random.default_rng(seed)
    enc = Encoder((dist.dimension, hidden, dim), seed=seed)
    cfg = SgdConfig(lr=lr, epochs=1, batch_size=batch, momentum=0.9, seed=seed)
    velocity = np.zeros(enc.get_params().size)
    temps = Temperatures()
    for _ in range(steps):
        idx = rng.choice(dist.size, size=min(batch, dist.size), p=dist.mass)
        pts = np.repeat(dist.points[idx], 2, axis=0)
        pts = pts + rng.normal(scale=jitter, size=pts.shape)
        labels = np.repeat(dist.labels[idx], 2)
        if np.unique(labels).size == labels.size:
            continue  # no positives beyond paired views is fine; guard anyway
        _, _, grad = grad_total(enc, None, pts, labels, 0.0, temps)
        velocity = sgd_step(enc, grad, velocity, cfg)
    return enc
