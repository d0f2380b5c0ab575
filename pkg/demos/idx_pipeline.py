"""Miniature image pipeline through the IDX binary format.

Writes a tiny synthetic image set to disk in the big-endian IDX layout,
reads it back, splits it into a class-incremental task sequence, and
trains on it. Point real MNIST-style files at idx_read to scale this up.
Run with:  python3 demos/idx_pipeline.py
"""

import tempfile
from pathlib import Path

import numpy as np

from cclab.continual import RunConfig, run_sequence
from cclab.data import idx_read, idx_task_sequence, idx_write
from cclab.trainer import SgdConfig


def synthetic_digits(rng, per_class=12, side=6, n_classes=4):
    """Blocky class-dependent patterns standing in for digit images."""
    images, labels = [], []
    for c in range(n_classes):
        template = np.zeros((side, side))
        template[c % side, :] = 0.9
        template[:, (2 * c) % side] = 0.6
        for _ in range(per_class):
            img = np.clip(template + rng.normal(0, 0.08, size=(side, side)), 0, 1)
            images.append(img)
            labels.append(c)
    return np.array(images), np.array(labels, dtype=np.uint8)


def main() -> None:
    rng = np.random.default_rng(0)
    images, labels = synthetic_digits(rng)
    with tempfile.TemporaryDirectory() as tmp:
        ip, lp = Path(tmp) / "images.idx", Path(tmp) / "labels.idx"
        idx_write(images, labels, ip, lp)
        data = idx_read(ip, lp, per_class=10)
        print(f"read {data.images.shape[0]} images of shape "
              f"{data.images.shape[1:]} covering classes {sorted(set(map(int, data.labels)))}")
        tasks = idx_task_sequence(data, classes_per_task=2, seed=0)
        print(f"split into {len(tasks)} tasks of input dimension "
              f"{tasks[0].train.dimension}")
        cfg = RunConfig(
            hidden=16, embed_dim=4,
            sgd=SgdConfig(lr=0.05, epochs=15, batch_size=16, seed=0),
            mode="max", buffer_size=20, seed=0,
        )
        res = run_sequence(tasks, cfg)
        for rec in res.trace.records:
            lam = "-" if rec.lam is None else f"{rec.lam:.3f}"
            print(f"  task {rec.task}: final contrastive {rec.l_con:.3f}, "
                  f"distillation {rec.l_dis:.3f}, coefficient {lam}")


if __name__ == "__main__":
    main()
