"""Momentum-SGD training loop with the blur/activation parameter projections."""

import csv
import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from . import data as D
from .layers import ALPHA_MIN, project_monotone
from .tensor import OptimizerState, Tape, Tensor, sgd_step, softmax_xent

log = logging.getLogger(__name__)


class DivergenceError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    epochs: int = 20
    batch_size: int = 128
    lr: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 5e-4
    lr_drop_epochs: list = field(default_factory=lambda: [8, 14, 18])
    lr_drop_factor: float = 0.2
    seed: int = 0

    def __post_init__(self):
        if self.lr < 0:
            raise ValueError("lr must be nonnegative")
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError("epochs must be >= 0 and batch_size >= 1")
        drops = list(self.lr_drop_epochs)
        if drops != sorted(drops):
            raise ValueError("lr_drop_epochs must be sorted ascending")
        if self.epochs and any(not 1 <= e <= self.epochs for e in drops):
            raise ValueError(f"lr_drop_epochs must lie in [1, {self.epochs}]")

    def lr_at(self, epoch):
        """lr * factor^(number of drop epochs <= ``epoch``), epochs counted from 0."""
        n = sum(1 for e in self.lr_drop_epochs if e <= epoch)
        return self.lr * self.lr_drop_factor ** n


@dataclass
class TrainLog:
    rows: list = field(default_factory=list)

    def append(self, **row):
        self.rows.append(row)

    def __len__(self):
        return len(self.rows)

    def write_csv(self, path):
        if not self.rows:
            header = ["epoch", "loss", "train_acc", "test_acc"]
            with open(path, "w", newline="") as fh:
                csv.writer(fh).writerow(header)
            return
        n_sigma = len(self.rows[0]["sigmas"])
        n_alpha = len(self.rows[0]["alphas"])
        header = (["epoch", "loss", "train_acc", "test_acc"]
                  + [f"sigma_{i + 1}" for i in range(n_sigma)]
                  + [f"alpha_{i + 1}" for i in range(n_alpha)])
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for r in self.rows:
                test_acc = "" if r["test_acc"] is None else repr(r["test_acc"])
                w.writerow([r["epoch"], repr(r["loss"]), repr(r["train_acc"]), test_acc]
                           + [repr(s) for s in r["sigmas"]] + [repr(a) for a in r["alphas"]])


def decayed_names(model):
    """Weight decay applies to conv/dense weights only."""
    return {n for n in model.params if n.endswith(".weight")}


def project_params(model):
    names = model.sigma_names()
    if names:
        for n, s in zip(names, project_monotone([float(model.params[n]) for n in names])):
            model.params[n][...] = s
    for n in model.alpha_names():
        model.params[n][...] = max(float(model.params[n]), ALPHA_MIN)


def train_step(model, images, labels, state):
    """Forward, backward and one SGD update; returns (loss, n_correct)."""
    tensors = model.param_tensors(requires_grad=True)
    with Tape() as tape:
        logits = model.forward(Tensor(images), tensors)
        loss = softmax_xent(logits, labels)
    tape.backward(loss)
    grads = {n: t.grad for n, t in tensors.items()}
    value = float(loss.data)
    if not np.isfinite(value):
        raise DivergenceError(f"non-finite training loss {value}")
    sgd_step(model.params, grads, state, decay=decayed_names(model))
    project_params(model)
    return value, int((logits.data.argmax(axis=1) == labels).sum())


def evaluate(model, dataset, batch_size=500):
    """Top-1 accuracy on ``dataset``."""
    if len(dataset) == 0:
        return 0.0
    pred = model.predict(dataset.images, batch_size)
    return float(np.mean(pred == dataset.labels))


def train(model, train_set, config, test_set=None, step_hook=None):
    """Train ``model`` in place; returns the TrainLog.

    Channel means of ``train_set`` become the model's input normalization.
    ``step_hook(model, step)`` runs after every optimizer step.
    """
    log_ = TrainLog()
    if config.epochs == 0:
        return log_
    model.input_mean = D.channel_means(train_set)
    state = OptimizerState(config.lr, config.momentum, config.weight_decay)
    step = 0
    for epoch in range(1, config.epochs + 1):
        state.learning_rate = config.lr_at(epoch - 1)
        total_loss, correct, seen = 0.0, 0, 0
        for images, labels in D.batches(train_set, config.batch_size, config.seed, epoch):
            loss, right = train_step(model, images, labels, state)
            step += 1
            if step_hook is not None:
                step_hook(model, step)
            total_loss += loss * len(labels)
            correct += right
            seen += len(labels)
        test_acc = evaluate(model, test_set) if test_set is not None else None
        log_.append(epoch=epoch, loss=total_loss / seen, train_acc=correct / seen,
                    test_acc=test_acc, sigmas=model.sigmas(), alphas=model.alphas())
        log.info("epoch %d lr %.4g loss %.4f train %.4f test %s sigma %s",
                 epoch, state.learning_rate, total_loss / seen, correct / seen, test_acc,
                 np.round(model.sigmas(), 4).tolist())
    return log_


def config_dict(config):
    return asdict(config)
