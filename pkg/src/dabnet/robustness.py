"""Shift consistency, flip probability and corruption error."""

from dataclasses import dataclass, field

import numpy as np

from . import transforms as TF

DIAGONAL_MAX_SHIFT = 4
RESCALE_SIZE = 14


@dataclass
class ConsistencyReport:
    protocol: str
    consistency: float
    clean_accuracy: float
    n_images: int
    seed: int = 0


@dataclass
class FPReport:
    kind: str
    fp: float
    k: int
    v: int
    flips: int = 0


@dataclass
class CEReport:
    errors: dict = field(default_factory=dict)   # kind -> [err at severity 1..5]

    def per_kind(self):
        return {kind: float(np.mean(errs)) for kind, errs in self.errors.items()}

    @property
    def mce(self):
        per = self.per_kind()
        return float(np.mean(list(per.values()))) if per else 0.0


def consistency(preds_clean, preds_shifted):
    """Fraction of positions where the two prediction lists agree."""
    a = np.asarray(preds_clean)
    b = np.asarray(preds_shifted)
    if a.size == 0 or a.shape != b.shape:
        raise ValueError(f"need two nonempty lists of equal length, got {a.shape} and {b.shape}")
    return float(np.mean(a == b))


def _accuracy(pred, labels):
    return float(np.mean(np.asarray(pred) == np.asarray(labels)))


def diagonal_shifts(n, seed, max_shift=DIAGONAL_MAX_SHIFT):
    rng = np.random.Generator(np.random.Philox(seed))
    return rng.integers(1, max_shift + 1, size=n)


def protocol_diagonal(model, dataset, seed=0, max_shift=DIAGONAL_MAX_SHIFT, force_shift=None):
    """Clean vs diagonally shifted prediction, shift N drawn per image from [1, max_shift].

    ``force_shift`` overrides the draw (0 gives the identity protocol).
    """
    n = len(dataset)
    shifts = diagonal_shifts(n, seed, max_shift) if force_shift is None else np.full(n, force_shift)
    shifted = np.empty_like(dataset.images)
    for i, s in enumerate(shifts):
        shifted[i] = TF.integer_shift(dataset.images[i], dx=int(s), dy=int(s))
    clean = model.predict(dataset.images)
    moved = model.predict(shifted)
    return ConsistencyReport("diagonal", consistency(clean, moved), _accuracy(clean, dataset.labels), n, seed)


def rescaled_embedding(images, size=RESCALE_SIZE, shift=0, grow=0):
    """Downscale to ``size + grow``, centre-embed at the ``size`` offset, then shift diagonally."""
    H, W = images.shape[-2:]
    small = TF.bilinear_resize(images, size + grow, size + grow)
    off = TF.centered_offset(size, size, H, W)
    canvas = TF.embed_canvas(small, H, W, off)
    return TF.integer_shift(canvas, dx=shift, dy=shift) if shift else canvas


def protocol_rescale(model, dataset, size=RESCALE_SIZE, shift=1):
    base = rescaled_embedding(dataset.images, size)
    moved = rescaled_embedding(dataset.images, size, shift=shift)
    p0, p1 = model.predict(base), model.predict(moved)
    return ConsistencyReport("rescale", consistency(p0, p1), _accuracy(p0, dataset.labels), len(dataset))


def protocol_double_rescale(model, dataset, size=RESCALE_SIZE, grow=1):
    base = rescaled_embedding(dataset.images, size)
    moved = rescaled_embedding(dataset.images, size, grow=grow)
    p0, p1 = model.predict(base), model.predict(moved)
    return ConsistencyReport("double_rescale", consistency(p0, p1), _accuracy(p0, dataset.labels), len(dataset))


PROTOCOLS = {
    "diagonal": protocol_diagonal,
    "rescale": protocol_rescale,
    "double_rescale": protocol_double_rescale,
}


def flip_count(preds):
    """Adjacent-frame prediction changes in one sequence."""
    preds = np.asarray(preds)
    if len(preds) < 2:
        raise ValueError("a sequence needs at least 2 frames")
    return int(np.count_nonzero(preds[1:] != preds[:-1]))


def flip_probability_from_predictions(pred_sequences, kind="custom"):
    """Total flips over k sequences divided by k * (v - 1) adjacent pairs."""
    if not pred_sequences:
        raise ValueError("need at least one sequence")
    lengths = {len(p) for p in pred_sequences}
    if len(lengths) != 1:
        raise ValueError("all sequences must have the same frame count")
    v = lengths.pop()
    flips = sum(flip_count(p) for p in pred_sequences)
    k = len(pred_sequences)
    return FPReport(kind, flips / (k * (v - 1)), k, v, flips)


def flip_probability(model, sequences, kind="custom"):
    """``sequences`` is a list of (v, C, H, W) frame stacks."""
    preds = [model.predict(seq) for seq in sequences]
    return flip_probability_from_predictions(preds, kind)


def make_sequences(images, kind, v=31):
    return [TF.make_sequence(img, kind, v) for img in images]


def corrupted_set(images, kind, severity, seed=0):
    """Corrupt every image with its own seed derived from (seed, index)."""
    out = np.empty_like(images)
    for i, img in enumerate(images):
        spec = TF.CorruptionSpec(kind, severity, seed=_substream(seed, i))
        out[i] = TF.corrupt(img, spec)
    return out


def _substream(seed, index):
    return int(np.random.SeedSequence([seed, index]).generate_state(1, np.uint64)[0])


def corruption_error(model, dataset, kinds=TF.CORRUPTIONS, severities=(1, 2, 3, 4, 5), seed=0):
    """Top-1 error per (kind, severity); mCE is the unweighted mean over kinds."""
    report = CEReport()
    for kind in kinds:
        errs = []
        for sev in severities:
            images = corrupted_set(dataset.images, kind, sev, seed)
            errs.append(1.0 - _accuracy(model.predict(images), dataset.labels))
        report.errors[kind] = errs
    return report
