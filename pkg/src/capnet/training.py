"""Training loop: cross-entropy, momentum SGD, step-decayed learning rate.

Gradient accumulation over a minibatch is an explicit per-sample sum on a
fresh tape each time, so a run is a pure function of config and seed:
identical settings reproduce every weight and every metrics row bit for
bit on the same machine. Metrics are appended per epoch as

    epoch,lr,train_loss,train_top1,test_top1,test_top2,test_top5

with accuracies as fractions in [0, 1].
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .backbone import BackboneConfig
from .bilinear import PoolSpec
from .data import AugmentConfig, LabeledDataset, augment, center_crop
from .errors import ConfigError, ContractViolation, DimensionError
from .model import MODES, CapModel
from .regions import RegionPolicy
from .tensor import Tape, Tensor, log, neg, pick

METRICS_HEADER = "epoch,lr,train_loss,train_top1,test_top1,test_top2,test_top5"


def default_region_policy() -> RegionPolicy:
    return RegionPolicy(delta=(4, 4), anchor_stride=4, mode="pyramid",
                        pyramid_levels=((1, 3), (2, 3), (3, 3)))


@dataclass(frozen=True)
class TrainConfig:
    mode: str = "B+C+E"
    epochs: int = 15
    batch_size: int = 16
    seed: int = 0
    lr0: float = 0.02
    momentum: float = 0.9
    lr_decay_factor: float = 0.1
    lr_decay_every: int = 50
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    regions: RegionPolicy = field(default_factory=default_region_policy)
    pool: PoolSpec = field(default_factory=lambda: PoolSpec((4, 4)))
    hidden_size: int = 32
    clusters: int = 8
    num_classes: int = 8

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"unknown mode {self.mode!r}, expected one of {MODES}")
        if self.epochs < 0 or self.batch_size < 1:
            raise ConfigError(
                f"epochs/batch_size out of range: {self.epochs}/{self.batch_size}")
        if self.lr0 <= 0:
            raise ConfigError(f"lr0 must be positive, got {self.lr0}")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError(f"momentum must lie in [0, 1), got {self.momentum}")
        if not 0.0 < self.lr_decay_factor <= 1.0:
            raise ConfigError(
                f"lr decay factor must lie in (0, 1], got {self.lr_decay_factor}")
        if self.lr_decay_every < 1:
            raise ConfigError(f"lr decay period must be >= 1, got {self.lr_decay_every}")
        if self.hidden_size < 1 or self.clusters < 1 or self.num_classes < 2:
            raise ConfigError("hidden_size/clusters/num_classes out of range")
        crop = self.augment.crop_to
        if self.backbone.input_size != (crop, crop):
            raise ConfigError(
                f"backbone input {self.backbone.input_size} must equal the "
                f"augmented crop ({crop}, {crop})")


def assemble_model(cfg: TrainConfig) -> CapModel:
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([cfg.seed, 0])))
    return CapModel(cfg.mode, cfg.backbone, cfg.regions, cfg.pool,
                    cfg.hidden_size, cfg.clusters, cfg.num_classes, rng)


def cross_entropy(yhat: Tensor, label: int) -> Tensor:
    """Negative log likelihood of one label under a probability vector."""
    if yhat.ndim != 1:
        raise DimensionError(f"cross_entropy: needs a probability vector, got {yhat.shape}")
    if not 0 <= label < yhat.shape[0]:
        raise ContractViolation(
            f"cross_entropy: label {label} outside [0, {yhat.shape[0]})")
    return neg(log(pick(yhat, label)))


def lr_at_epoch(epoch: int, cfg: TrainConfig) -> float:
    if epoch < 0:
        raise ContractViolation(f"epoch must be >= 0, got {epoch}")
    return cfg.lr0 * cfg.lr_decay_factor ** (epoch // cfg.lr_decay_every)


def sgd_step(params: dict, grads: dict, state: dict, lr: float, momentum: float):
    """Classical momentum update, in place: v = mu v + g; p = p - lr v."""
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise DimensionError(
                f"gradient for {name!r} has shape {g.shape}, parameter {p.shape}")
        v = state.get(name)
        v = g if v is None else momentum * v + g
        state[name] = v
        p.data -= lr * v
    return params, state


@dataclass
class EvalResult:
    top_n: dict
    per_class: list
    confusion: np.ndarray
    n_items: int


def evaluate(model, dataset: LabeledDataset, top_ns=(1, 2, 5),
             crop_to: int = 0) -> EvalResult:
    """Deterministic pass over a dataset; center crop when crop_to is set."""
    if len(dataset) == 0:
        raise ContractViolation("evaluate: empty dataset")
    num_classes = len(dataset.class_names)
    hits = {n: 0 for n in top_ns}
    confusion = np.zeros((num_classes, num_classes), dtype=np.int64)
    for idx in range(len(dataset)):
        img = dataset.image(idx)
        if crop_to:
            img = center_crop(img, crop_to)
        probs = model(img).data
        label = dataset.label(idx)
        order = np.argsort(-probs, kind="stable")
        rank = int(np.nonzero(order == label)[0][0])
        for n in top_ns:
            hits[n] += rank < n
        confusion[label, int(order[0])] += 1
    per_class_total = confusion.sum(axis=1)
    per_class = [float(confusion[c, c] / per_class_total[c]) if per_class_total[c]
                 else 0.0 for c in range(num_classes)]
    top = {n: hits[n] / len(dataset) for n in top_ns}
    return EvalResult(top, per_class, confusion, len(dataset))


@dataclass
class TrainResult:
    model: CapModel
    history: list            # one dict per epoch, METRICS_HEADER fields
    elapsed: float


def _epoch_rng(seed: int, epoch: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(
        np.random.SeedSequence([seed, 1, epoch])))


def _sample_rng(seed: int, epoch: int, index: int) -> np.random.Generator:
    # Keyed by sample index, not worker or order, so schedules cannot skew it.
    return np.random.Generator(np.random.PCG64(
        np.random.SeedSequence([seed, 2, epoch, index])))


def _accumulate(sink: dict, grads, params: dict, scale: float) -> None:
    for name, p in params.items():
        g = grads[p] * scale
        if name in sink:
            sink[name] += g
        else:
            sink[name] = g


def train(cfg: TrainConfig, train_ds: LabeledDataset, test_ds: LabeledDataset,
          out_dir=None, checkpoint_every: int = 0, log=None) -> TrainResult:
    from .model import save_checkpoint

    model = assemble_model(cfg)
    params = model.named_parameters()
    state: dict = {}
    started = time.time()
    history = []
    metrics_path = None
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        metrics_path = out / "metrics.csv"
        metrics_path.write_text(METRICS_HEADER + "\n")
    for epoch in range(cfg.epochs):
        lr = lr_at_epoch(epoch, cfg)
        order = _epoch_rng(cfg.seed, epoch).permutation(len(train_ds))
        loss_sum = 0.0
        correct = 0
        for start in range(0, len(order), cfg.batch_size):
            batch = order[start:start + cfg.batch_size]
            sums: dict = {}
            for idx in batch:
                idx = int(idx)
                view = augment(train_ds.image(idx), cfg.augment,
                               _sample_rng(cfg.seed, epoch, idx))
                label = train_ds.label(idx)
                with Tape() as tape:
                    for p in params.values():
                        tape.watch(p)
                    probs = model.forward(view)
                    loss = cross_entropy(probs, label)
                grads = tape.backward(loss)
                _accumulate(sums, grads, params, 1.0 / len(batch))
                loss_sum += loss.item()
                correct += int(np.argmax(probs.data)) == label
            sgd_step(params, sums, state, lr, cfg.momentum)
        test_eval = evaluate(model, test_ds, (1, 2, 5), crop_to=cfg.augment.crop_to
                             if test_ds.image(0).shape[0] != cfg.augment.crop_to else 0)
        rowd = {
            "epoch": epoch,
            "lr": lr,
            "train_loss": loss_sum / len(order),
            "train_top1": correct / len(order),
            "test_top1": test_eval.top_n[1],
            "test_top2": test_eval.top_n[2],
            "test_top5": test_eval.top_n[5],
        }
        history.append(rowd)
        if metrics_path is not None:
            with metrics_path.open("a") as fh:
                fh.write(format_metrics_row(rowd) + "\n")
        if log is not None:
            log(f"epoch {epoch}: loss {rowd['train_loss']:.4f} "
                f"train {rowd['train_top1']:.3f} test {rowd['test_top1']:.3f}")
        if out_dir is not None and checkpoint_every and (epoch + 1) % checkpoint_every == 0:
            save_checkpoint(Path(out_dir) / f"checkpoint-{epoch + 1:04d}", model)
    if out_dir is not None:
        save_checkpoint(Path(out_dir) / "checkpoint-final", model)
    return TrainResult(model, history, time.time() - started)


def format_metrics_row(rowd: dict) -> str:
    return ",".join([str(rowd["epoch"])] + [repr(float(rowd[k])) for k in
                    ("lr", "train_loss", "train_top1",
                     "test_top1", "test_top2", "test_top5")])


def fit_batch(model: CapModel, images, labels, lr: float, momentum: float,
              steps: int, target_loss: float = 0.0):
    """Repeatedly fit one fixed batch; returns the per-step mean losses.

    Stops early once the batch loss drops below target_loss (if positive).
    """
    if len(images) == 0 or len(images) != len(labels):
        raise ContractViolation("fit_batch: need equally many images and labels")
    params = model.named_parameters()
    state: dict = {}
    losses = []
    for _ in range(steps):
        sums: dict = {}
        total = 0.0
        for img, label in zip(images, labels):
            with Tape() as tape:
                for p in params.values():
                    tape.watch(p)
                loss = cross_entropy(model.forward(img), label)
            grads = tape.backward(loss)
            _accumulate(sums, grads, params, 1.0 / len(images))
            total += loss.item()
        losses.append(total / len(images))
        if target_loss and losses[-1] < target_loss:
            break
        sgd_step(params, sums, state, lr, momentum)
    return losses
