"""Translation attacks: first-order PGD, exhaustive grid search, worst-of-k.

Each attack takes a batch of raw images with labels and returns one
:class:`AttackEntry` per image. Translations are (tx, ty) in pixels.
"""

from dataclasses import dataclass

import numpy as np

from . import transforms as TF
from .tensor import Tape, Tensor, log_softmax, softmax_xent

FO_STEPS = 200
FO_BUDGET = 4.0
FO_STEP_SIZE = 0.24 * 32 / 224
GRID_RADIUS = 5
WORST_BUDGET = 4.0


class NotDifferentiableError(TypeError):
    pass


@dataclass
class AttackBudget:
    max_translation: float
    steps: int = 1
    step_size: float = FO_STEP_SIZE
    k: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.max_translation < 0:
            raise ValueError("max_translation must be nonnegative")
        if self.steps < 1 or self.k < 1:
            raise ValueError("steps and k must be >= 1")


@dataclass
class AttackEntry:
    index: int
    success: bool
    tx: float
    ty: float
    queries: int
    loss: float


def post_attack_accuracy(entries):
    return float(np.mean([not e.success for e in entries])) if entries else 0.0


def per_sample_loss(logits, labels):
    return -log_softmax(logits)[np.arange(len(labels)), labels]


def _loss_and_pred(model, images, labels):
    logits = model.logits(images)
    return per_sample_loss(logits, labels), logits.argmax(axis=1)


def translation_loss_grad(model, images, labels, t):
    """Per-image cross-entropy at translation ``t`` (N, 2) and its gradient in t."""
    if not getattr(model, "differentiable", False):
        raise NotDifferentiableError(f"{type(model).__name__} exposes no input gradient")
    tt = Tensor(t, requires_grad=True)
    with Tape() as tape:
        warped = TF.translate_warp(Tensor(images), tt)
        logits = model.forward(warped)
        loss = softmax_xent(logits, labels, reduction="mean")
    # the mean couples nothing across images; rescale to per-image gradients
    tape.backward(loss, seed=float(len(labels)))
    return per_sample_loss(logits.data, labels), tt.grad, logits.data.argmax(axis=1)


def attack_first_order(model, images, labels, budget=None, start=0):
    """Projected gradient ascent on the correct-class loss over (tx, ty).

    Starts at (0, 0); after every raw-gradient step the translation is
    clipped to the ∞-ball of radius ``budget.max_translation``. The iterate
    with the highest loss seen (the start included) is returned.
    :func:`first_order_trace` additionally returns every iterate.
    """
    entries, _ = first_order_trace(model, images, labels, budget, start)
    return entries


def first_order_trace(model, images, labels, budget=None, start=0):
    budget = budget or AttackBudget(FO_BUDGET, FO_STEPS, FO_STEP_SIZE)
    images = np.asarray(images, dtype=np.float64)
    labels = np.asarray(labels)
    n = len(labels)
    r = budget.max_translation
    t = np.zeros((n, 2))
    loss, grad, pred = translation_loss_grad(model, images, labels, t)
    best_t, best_loss, best_pred = t.copy(), loss.copy(), pred.copy()
    trace = [t.copy()]
    for _ in range(budget.steps):
        t = np.clip(t + budget.step_size * grad, -r, r)
        trace.append(t.copy())
        loss, grad, pred = translation_loss_grad(model, images, labels, t)
        better = loss > best_loss
        best_t[better], best_loss[better], best_pred[better] = t[better], loss[better], pred[better]
    entries = [AttackEntry(start + i, bool(best_pred[i] != labels[i]), float(best_t[i, 0]),
                           float(best_t[i, 1]), budget.steps + 1, float(best_loss[i]))
               for i in range(n)]
    return entries, np.stack(trace, axis=1)


def grid_offsets(radius=GRID_RADIUS):
    """Integer (tx, ty) in row-major order: ty outer, tx inner."""
    r = range(-radius, radius + 1)
    return [(tx, ty) for ty in r for tx in r]


def grid_predictions(model, images, labels, radius=GRID_RADIUS):
    """Predictions and losses for every grid offset: arrays of shape (G, N)."""
    offsets = grid_offsets(radius)
    preds, losses = [], []
    for tx, ty in offsets:
        shifted = TF.integer_shift(images, dx=tx, dy=ty)
        loss, pred = _loss_and_pred(model, shifted, labels)
        preds.append(pred)
        losses.append(loss)
    return offsets, np.stack(preds), np.stack(losses)


def attack_grid_search(model, images, labels, radius=GRID_RADIUS, start=0):
    """Evaluate every integer translation in [-radius, radius]^2.

    The reported adversary is the first misclassifying offset in row-major
    scan; every image costs (2 * radius + 1)^2 queries.
    """
    images = np.asarray(images, dtype=np.float64)
    labels = np.asarray(labels)
    offsets, preds, losses = grid_predictions(model, images, labels, radius)
    wrong = preds != labels[None, :]
    entries = []
    for i in range(len(labels)):
        hits = np.flatnonzero(wrong[:, i])
        j = int(hits[0]) if len(hits) else None
        tx, ty = offsets[j] if j is not None else (0, 0)
        loss = losses[j, i] if j is not None else losses[:, i].max()
        entries.append(AttackEntry(start + i, j is not None, float(tx), float(ty), len(offsets), float(loss)))
    return entries


def misclassifying_set(model, image, label, radius=GRID_RADIUS):
    """Every offset that fools the model on one image, as a set."""
    _, preds, _ = grid_predictions(model, np.asarray(image)[None], np.asarray([label]), radius)
    return {off for off, p in zip(grid_offsets(radius), preds[:, 0]) if p != label}


def candidate_translations(seed, index, k, radius):
    """First ``k`` draws of the per-image stream; larger k extends smaller k."""
    rng = np.random.Generator(np.random.Philox(key=[seed, index]))
    return rng.uniform(-radius, radius, size=(k, 2))


def attack_worst_of_k(model, images, labels, budget=None, start=0, include_origin=False):
    """Pick the worst of ``k`` random real-valued translations per image.

    Candidates are ranked by (misclassified, cross-entropy), ties going to
    the earliest draw, so a nested pool can only lower accuracy.
    """
    budget = budget or AttackBudget(WORST_BUDGET, k=10)
    images = np.asarray(images, dtype=np.float64)
    labels = np.asarray(labels)
    n = len(labels)
    cands = np.stack([candidate_translations(budget.seed, start + i, budget.k, budget.max_translation)
                      for i in range(n)])  # (N, k, 2)
    if include_origin:
        cands = np.concatenate([np.zeros((n, 1, 2)), cands], axis=1)
    nk = cands.shape[1]
    losses = np.empty((n, nk))
    wrong = np.empty((n, nk), dtype=bool)
    for j in range(nk):
        warped = TF.translate_warp(Tensor(images), Tensor(cands[:, j])).data
        loss, pred = _loss_and_pred(model, warped, labels)
        losses[:, j] = loss
        wrong[:, j] = pred != labels
    entries = []
    for i in range(n):
        # lexsort: last key is primary; negate for descending order, stable on index
        order = np.lexsort((np.arange(nk), -losses[i], ~wrong[i]))
        j = int(order[0])
        entries.append(AttackEntry(start + i, bool(wrong[i, j]), float(cands[i, j, 0]),
                                   float(cands[i, j, 1]), nk, float(losses[i, j])))
    return entries
