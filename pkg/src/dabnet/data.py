"""MNIST / CIFAR-10 readers, zero-centring and deterministic subsetting."""

import gzip
import struct
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .tensor import DTYPE

IDX_IMAGES = 0x00000803
IDX_LABELS = 0x00000801
CIFAR_RECORD = 3073


class DataFormatError(ValueError):
    pass


@dataclass(frozen=True)
class Dataset:
    images: np.ndarray          # N×C×H×W float64
    labels: np.ndarray          # N int64
    num_classes: int = 10
    channel_means: np.ndarray = None

    def __post_init__(self):
        if len(self.images) != len(self.labels):
            raise DataFormatError(f"{len(self.images)} images but {len(self.labels)} labels")
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise DataFormatError("labels outside class range")

    def __len__(self):
        return len(self.labels)

    def take(self, idx):
        return replace(self, images=self.images[idx], labels=self.labels[idx])


def _open(path):
    path = Path(path)
    if not path.exists() and path.with_suffix(path.suffix + ".gz").exists():
        path = path.with_suffix(path.suffix + ".gz")
    if path.suffix == ".gz":
        return gzip.open(path, "rb").read()
    return path.read_bytes()


def read_idx(path, magic):
    raw = _open(path)
    if len(raw) < 8:
        raise DataFormatError(f"{path}: file too short for an IDX header")
    (got,) = struct.unpack(">I", raw[:4])
    if got != magic:
        raise DataFormatError(f"{path}: bad IDX magic 0x{got:08x}, expected 0x{magic:08x}")
    ndim = got & 0xFF
    dims = struct.unpack(f">{ndim}I", raw[4:4 + 4 * ndim])
    body = raw[4 + 4 * ndim:]
    if len(body) != int(np.prod(dims)):
        raise DataFormatError(f"{path}: expected {int(np.prod(dims))} data bytes, found {len(body)}")
    return np.frombuffer(body, dtype=np.uint8).reshape(dims)


def load_mnist(directory, split="train"):
    """Read ``{train,t10k}-{images-idx3,labels-idx1}-ubyte[.gz]`` from ``directory``."""
    prefix = {"train": "train", "test": "t10k"}[split]
    d = Path(directory)
    images = read_idx(d / f"{prefix}-images-idx3-ubyte", IDX_IMAGES)
    labels = read_idx(d / f"{prefix}-labels-idx1-ubyte", IDX_LABELS)
    if len(images) != len(labels):
        raise DataFormatError(f"{len(images)} MNIST images but {len(labels)} labels")
    x = images.astype(DTYPE)[:, None] / 255.0
    return Dataset(x, labels.astype(np.int64))


def parse_cifar10(raw):
    if len(raw) % CIFAR_RECORD:
        raise DataFormatError(f"CIFAR-10 file length {len(raw)} is not a multiple of {CIFAR_RECORD}")
    rec = np.frombuffer(raw, dtype=np.uint8).reshape(-1, CIFAR_RECORD)
    labels = rec[:, 0].astype(np.int64)
    if len(labels) and labels.max() > 9:
        raise DataFormatError(f"CIFAR-10 label byte {labels.max()} > 9")
    x = rec[:, 1:].reshape(-1, 3, 32, 32).astype(DTYPE) / 255.0
    return Dataset(x, labels)


def load_cifar10(directory, split="train"):
    d = Path(directory)
    if (d / "cifar-10-batches-bin").is_dir():
        d = d / "cifar-10-batches-bin"
    names = [f"data_batch_{i}.bin" for i in range(1, 6)] if split == "train" else ["test_batch.bin"]
    parts = [parse_cifar10(_open(d / n)) for n in names if (d / n).exists()]
    if not parts:
        raise FileNotFoundError(f"no CIFAR-10 {split} batch files in {d}")
    return Dataset(np.concatenate([p.images for p in parts]),
                   np.concatenate([p.labels for p in parts]))


def channel_means(ds):
    return ds.images.mean(axis=(0, 2, 3))


def zero_centre(ds, means=None):
    """Subtract per-channel means (computed from ``ds`` unless given).

    The returned dataset records the means so test data can reuse them.
    """
    means = channel_means(ds) if means is None else np.asarray(means, dtype=DTYPE)
    return replace(ds, images=ds.images - means.reshape(1, -1, 1, 1), channel_means=means)


def subset(ds, n, seed=0):
    """Class-stratified sample of ``n`` items; per-class counts differ by at most 1
    whenever every class has enough members."""
    if n > len(ds):
        raise ValueError(f"cannot draw {n} items from a dataset of {len(ds)}")
    rng = np.random.Generator(np.random.Philox(seed))
    pools = [rng.permutation(np.flatnonzero(ds.labels == c)) for c in range(ds.num_classes)]
    sizes = np.array([len(p) for p in pools])
    # water-filling: the largest level L with sum(min(size, L)) <= n
    level = 0
    while level < sizes.max() and np.minimum(sizes, level + 1).sum() <= n:
        level += 1
    quota = np.minimum(sizes, level)
    # remaining items go one each to randomly chosen classes that still have spares
    spare = np.flatnonzero(sizes > level)
    quota[rng.permutation(spare)[:n - quota.sum()]] += 1
    idx = np.concatenate([pools[c][:quota[c]] for c in range(ds.num_classes)]).astype(np.int64)
    return ds.take(rng.permutation(idx))


def batches(ds, batch_size=128, seed=0, epoch=0, shuffle=True):
    """Yield (images, labels) minibatches; order depends only on (seed, epoch)."""
    idx = np.arange(len(ds))
    if shuffle:
        idx = np.random.Generator(np.random.Philox(key=[seed, epoch])).permutation(idx)
    for start in range(0, len(idx), batch_size):
        sel = idx[start:start + batch_size]
        yield ds.images[sel], ds.labels[sel]


def load_dataset(name, directory, train_n=None, test_n=None, seed=0):
    loader = {"mnist": load_mnist, "cifar10": load_cifar10}.get(name)
    if loader is None:
        raise ValueError(f"unknown dataset {name!r}")
    train = loader(directory, "train")
    test = loader(directory, "test")
    if train_n is not None and train_n < len(train):
        train = subset(train, train_n, seed)
    if test_n is not None and test_n < len(test):
        test = subset(test, test_n, seed + 1)
    return train, test
