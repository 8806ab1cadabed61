"""Adam training of the joint objective, lambda sweeps, and training logs.

Each (constraint, lambda, seed) cell trains single-threaded and is fully
determined by its config and dataset; sweeps skip cells whose checkpoint
already exists, so reruns are idempotent. Checkpoint and log writes are
atomic (write-temp-then-rename).
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

import topolab.tensor as T
from topolab.data import Dataset, batches
from topolab.models import Model, ModelSpec, build_model, model_logits, save_checkpoint
from topolab.spatial import as_loss_global, as_loss_local, joint_loss, ws_loss

DEFAULT_EPOCHS = {"mnist": 15, "cifar": 30}
REDUCED_EPOCHS = 10
REDUCED_TRAIN_COUNT = 10_000


class TrainingDiverged(RuntimeError):
    def __init__(self, epoch: int, batch: int, l_ce: float, l_spatial: float):
        self.epoch = epoch
        self.batch = batch
        super().__init__(
            f"non-finite loss at epoch {epoch}, batch {batch}: "
            f"ce={l_ce!r} spatial={l_spatial!r}"
        )


@dataclass
class TrainConfig:
    spec: ModelSpec
    epochs: int
    batch_size: int = 128
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    reduced: bool = False  # desk-scale profile: 10k-image subset, 10 epochs

    @classmethod
    def for_spec(cls, spec: ModelSpec, epochs: int | None = None, batch_size: int = 128,
                 reduced: bool = False) -> "TrainConfig":
        if epochs is None:
            epochs = REDUCED_EPOCHS if reduced else DEFAULT_EPOCHS[spec.arch]
        return cls(spec=spec, epochs=epochs, batch_size=batch_size, reduced=reduced)


@dataclass
class EpochRecord:
    epoch: int
    train_acc: float
    test_acc: float
    ce_loss: float
    spatial_loss: float


@dataclass
class TrainLog:
    records: list[EpochRecord] = field(default_factory=list)

    def to_csv(self, path: str | Path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_name(path.name + ".tmp")
        with open(tmp, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["epoch", "split", "accuracy", "ce_loss", "spatial_loss"])
            for r in self.records:
                w.writerow([r.epoch, "train", f"{r.train_acc:.6f}", f"{r.ce_loss:.8f}",
                            f"{r.spatial_loss:.8f}"])
                w.writerow([r.epoch, "test", f"{r.test_acc:.6f}", "", ""])
        tmp.replace(path)


class AdamState:
    """First/second moment buffers plus the shared step counter."""

    def __init__(self, params: list[np.ndarray]):
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0


def adam_step(params: list[np.ndarray], grads: list[np.ndarray], state: AdamState,
              lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> None:
    """One bias-corrected Adam update, in place."""
    state.t += 1
    bc1 = 1.0 - beta1**state.t
    bc2 = 1.0 - beta2**state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        p -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)


def evaluate(model: Model, ds: Dataset, batch_size: int = 256) -> float:
    logits = model_logits(model, ds.images, batch_size=batch_size)
    return float((logits.argmax(axis=1) == ds.labels).mean())


def _spatial_term(model: Model, fc1_pre, constraint: str):
    if constraint == "ws":
        return ws_loss(model.fc1_weight(), model.grid)
    if constraint == "as":
        if fc1_pre.shape[0] < 2:
            return None  # a stranded batch of one image carries no correlation
        return as_loss_local(fc1_pre, model.grid)
    if constraint == "as_global":
        if fc1_pre.shape[0] < 2:
            return None
        return as_loss_global(fc1_pre, model.grid)
    return None


def train(config: TrainConfig, train_ds: Dataset, test_ds: Dataset,
          checkpoint_path: str | Path | None = None,
          log_path: str | Path | None = None) -> tuple[Model, TrainLog]:
    """Train one model cell; deterministic in (spec.seed, config, dataset)."""
    spec = config.spec
    spec.validate()
    T.tune_allocator()
    if train_ds.normalization is None or test_ds.normalization is None:
        raise ValueError("datasets must be normalized before training")

    if config.reduced and train_ds.count > REDUCED_TRAIN_COUNT:
        train_ds = Dataset(
            images=train_ds.images[:REDUCED_TRAIN_COUNT],
            labels=train_ds.labels[:REDUCED_TRAIN_COUNT],
            split=train_ds.split,
            normalization=train_ds.normalization,
        )

    model = build_model(spec.arch, spec.seed)
    names = list(model.params)
    param_arrays = [model.params[k].data for k in names]
    state = AdamState(param_arrays)
    dropout_rng = np.random.Generator(np.random.Philox(key=(spec.seed, 0xD0)))

    started = time.monotonic()
    log = TrainLog()
    for epoch in range(1, config.epochs + 1):
        ce_sum = 0.0
        sp_sum = 0.0
        correct = 0
        seen = 0
        for batch_idx, (images, labels) in enumerate(
            batches(train_ds, config.batch_size, shuffle_seed=spec.seed, epoch=epoch)
        ):
            logits, fc1_pre = model.forward(images, train=True, rng=dropout_rng)
            spatial = _spatial_term(model, fc1_pre, spec.constraint)
            lam = spec.lam if spatial is not None else 0.0
            loss, bd = joint_loss(logits, labels, spatial, lam)
            if not np.isfinite(bd.l_joint):
                raise TrainingDiverged(epoch, batch_idx, bd.l_ce, bd.l_spatial)
            model.zero_grads()
            T.backward(loss)
            T.clear_tape()
            adam_step(param_arrays, [model.params[k].grad for k in names], state,
                      config.lr, config.beta1, config.beta2, config.eps)

            n = len(labels)
            ce_sum += bd.l_ce * n
            sp_sum += bd.l_spatial * n
            correct += int((logits.data.argmax(axis=1) == labels).sum())
            seen += n

        record = EpochRecord(
            epoch=epoch,
            train_acc=correct / seen,
            test_acc=evaluate(model, test_ds),
            ce_loss=ce_sum / seen,
            spatial_loss=sp_sum / seen,
        )
        log.records.append(record)

    final = log.records[-1]
    if checkpoint_path is not None:
        save_checkpoint(
            model, spec, epoch=config.epochs, train_acc=final.train_acc,
            test_acc=final.test_acc, path=checkpoint_path,
            extra={"batch_size": config.batch_size, "epochs": config.epochs,
                   "lr": config.lr, "reduced": config.reduced,
                   "duration_sec": round(time.monotonic() - started, 3)},
        )
    if log_path is not None:
        log.to_csv(log_path)
    return model, log


@dataclass
class SweepResult:
    trained: list[str] = field(default_factory=list)
    skipped: list[str] = field(default_factory=list)
    failed: list[tuple[str, str]] = field(default_factory=list)

    @property
    def checkpoint_ids(self) -> list[str]:
        return self.trained + self.skipped


def sweep_cells(arch: str, constraint: str, lam_set, seeds) -> list[ModelSpec]:
    """One spec per (lambda, seed); control collapses the lambda axis."""
    specs = []
    if constraint == "none":
        lam_set = [0.0]
    for lam in lam_set:
        for seed in seeds:
            specs.append(ModelSpec(arch=arch, constraint=constraint, lam=float(lam),
                                   seed=int(seed)))
    return specs


def checkpoint_path(out_dir: str | Path, spec: ModelSpec) -> Path:
    return Path(out_dir) / "checkpoints" / f"{spec.model_id}.ckpt"


def log_path(out_dir: str | Path, spec: ModelSpec) -> Path:
    return Path(out_dir) / "logs" / f"{spec.model_id}.csv"


def sweep(arch: str, constraint: str, lam_set, seeds, train_ds: Dataset, test_ds: Dataset,
          out_dir: str | Path, epochs: int | None = None, batch_size: int = 128,
          reduced: bool = False, progress=None) -> SweepResult:
    """Train every (lambda, seed) cell, skipping completed checkpoints."""
    result = SweepResult()
    for spec in sweep_cells(arch, constraint, lam_set, seeds):
        ckpt = checkpoint_path(out_dir, spec)
        if ckpt.exists():
            result.skipped.append(spec.model_id)
            continue
        config = TrainConfig.for_spec(spec, epochs=epochs, batch_size=batch_size,
                                      reduced=reduced)
        try:
            train(config, train_ds, test_ds, checkpoint_path=ckpt,
                  log_path=log_path(out_dir, spec))
        except TrainingDiverged as exc:
            result.failed.append((spec.model_id, str(exc)))
            continue
        result.trained.append(spec.model_id)
        if progress is not None:
            progress(spec.model_id)
    return result
