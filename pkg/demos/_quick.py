"""Shared setup for the demos: a small MNIST sample and a briefly trained model."""

import os
from pathlib import Path

import numpy as np

from dabnet import data as D
from dabnet import netbuild as NB
from dabnet.trainer import TrainConfig, train

MNIST = Path(os.environ.get("DABNET_MNIST", "/root/data/mnist"))


def strokes(n, seed):
    """Synthetic stand-in when MNIST is absent: a bar whose angle encodes the class."""
    rng = np.random.Generator(np.random.Philox(seed))
    labels = np.arange(n) % 10
    x = np.zeros((n, 1, 28, 28))
    yy, xx = np.mgrid[:28, :28] - 13.5
    for i, c in enumerate(labels):
        a = np.pi * c / 10
        d = np.abs(xx * np.sin(a) - yy * np.cos(a))
        x[i, 0] = (d < 1.5) * (np.hypot(xx, yy) < 10) + rng.normal(0, 0.05, (28, 28))
    return D.Dataset(np.clip(x, 0, 1), labels.astype(np.int64))


def sample(train_n=2000, test_n=500):
    if (MNIST / "train-images-idx3-ubyte").exists():
        return D.load_dataset("mnist", MNIST, train_n, test_n)
    return strokes(train_n, 0), strokes(test_n, 1)


def quick_model(variant, train_set, epochs=2, seed=0):
    g = NB.build_toy_cnn()
    if variant == "antialias":
        g = NB.rewrite_antialias(g)
    model = NB.make_model(g, seed)
    drops = [epochs] if epochs > 1 else []
    train(model, train_set, TrainConfig(epochs=epochs, lr=0.03, lr_drop_epochs=drops, seed=seed))
    return model
