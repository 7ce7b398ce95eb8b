"""Geometric and photometric image transformations.

Images are arrays whose last two axes are (H, W); leading axes (batch,
channel) are carried through. Vacated or out-of-range pixels are filled
with black (0) in raw [0, 1] space.
"""

from dataclasses import dataclass

import numpy as np

from .tensor import DTYPE, Tensor, _record

MAX_TRANSLATE = 4.0
MAX_ROTATE_DEG = 16.0
MAX_SHEAR = 0.15
MIN_SCALE = 0.7

NOISE_SIGMA = (0.04, 0.06, 0.08, 0.09, 0.10)
SHOT_RATE = (500, 250, 100, 75, 50)
IMPULSE_P = (0.01, 0.02, 0.03, 0.05, 0.07)
CORRUPTIONS = ("gauss_noise", "shot_noise", "impulse_noise", "speckle_noise")
SEQUENCE_KINDS = ("translate", "rotate", "tilt", "scale")


@dataclass(frozen=True)
class ShiftSpec:
    dx: int = 0
    dy: int = 0
    fill: float = 0.0


@dataclass(frozen=True)
class CorruptionSpec:
    kind: str
    severity: int
    seed: int = 0

    def __post_init__(self):
        if self.kind not in CORRUPTIONS:
            raise ValueError(f"unknown corruption {self.kind!r}")
        if not 1 <= self.severity <= 5:
            raise ValueError(f"severity must be in 1..5, got {self.severity}")


def _shift_axis(n, d):
    """(dst slice, src slice) moving content by d along an axis of length n."""
    d = int(d)
    if abs(d) >= n:
        return slice(0, 0), slice(0, 0)
    if d >= 0:
        return slice(d, n), slice(0, n - d)
    return slice(0, n + d), slice(-d, n)


def integer_shift(img, spec=None, dx=0, dy=0, fill=0.0):
    """Move content right by ``dx`` and down by ``dy`` pixels."""
    if spec is not None:
        dx, dy, fill = spec.dx, spec.dy, spec.fill
    img = np.asarray(img, dtype=DTYPE)
    H, W = img.shape[-2:]
    out = np.full_like(img, fill)
    ry, sy = _shift_axis(H, dy)
    rx, sx = _shift_axis(W, dx)
    out[..., ry, rx] = img[..., sy, sx]
    return out


def bilinear_resize(img, out_h, out_w):
    """Half-pixel-centred bilinear resampling with edge clamping."""
    if out_h < 1 or out_w < 1:
        raise ValueError("output size must be positive")
    img = np.asarray(img, dtype=DTYPE)
    H, W = img.shape[-2:]
    if (H, W) == (out_h, out_w):
        return img.copy()

    def taps(n_in, n_out):
        src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
        src = np.clip(src, 0.0, n_in - 1)
        lo = np.floor(src).astype(int)
        hi = np.minimum(lo + 1, n_in - 1)
        return lo, hi, src - lo

    y0, y1, fy = taps(H, out_h)
    x0, x1, fx = taps(W, out_w)
    top = img[..., y0, :] * (1 - fy)[:, None] + img[..., y1, :] * fy[:, None]
    return top[..., x0] * (1 - fx) + top[..., x1] * fx


def embed_canvas(img, canvas_h, canvas_w, offset=(0, 0)):
    """Place ``img`` at (row, col) ``offset`` on a black canvas."""
    img = np.asarray(img, dtype=DTYPE)
    h, w = img.shape[-2:]
    oy, ox = offset
    if oy < 0 or ox < 0 or oy + h > canvas_h or ox + w > canvas_w:
        raise ValueError(f"{h}x{w} image at {offset} does not fit a {canvas_h}x{canvas_w} canvas")
    out = np.zeros(img.shape[:-2] + (canvas_h, canvas_w), dtype=DTYPE)
    out[..., oy:oy + h, ox:ox + w] = img
    return out


def centered_offset(h, w, canvas_h, canvas_w):
    return (canvas_h - h) // 2, (canvas_w - w) // 2


# --------------------------------------------------------------------------
# differentiable translation


def _warp_terms(img, t):
    """Corner images and weights of a uniform sub-pixel translation.

    Output(y, x) samples the input at (y - ty, x - tx). With
    -t = floor(-t) + f, it blends the integer shifts by -floor(-t) and
    -floor(-t) - 1 with weights (1 - f) and f per axis.
    """
    N = img.shape[0]
    t = np.broadcast_to(np.asarray(t, dtype=DTYPE), (N, 2))
    base = np.floor(-t)
    frac = -t - base
    shifts = (-base).astype(int)
    corners = np.empty((4,) + img.shape, dtype=DTYPE)
    for n in range(N):
        sx, sy = shifts[n]
        corners[0, n] = integer_shift(img[n], dx=sx, dy=sy)
        corners[1, n] = integer_shift(img[n], dx=sx - 1, dy=sy)
        corners[2, n] = integer_shift(img[n], dx=sx, dy=sy - 1)
        corners[3, n] = integer_shift(img[n], dx=sx - 1, dy=sy - 1)
    return corners, frac, shifts


def translate_warp(img, t):
    """Bilinear translation of an N×C×H×W batch by per-image (tx, ty).

    ``t`` may be a Tensor of shape (N, 2) or (2,); gradients flow to it and
    to the image. Integer translations reproduce :func:`integer_shift`
    exactly.
    """
    img_t = img if isinstance(img, Tensor) else Tensor(img)
    t_t = t if isinstance(t, Tensor) else Tensor(t)
    x = img_t.data
    corners, frac, shifts = _warp_terms(x, t_t.data)
    fx = frac[:, 0].reshape(-1, *([1] * (x.ndim - 1)))
    fy = frac[:, 1].reshape(-1, *([1] * (x.ndim - 1)))
    w00 = (1 - fx) * (1 - fy)
    w10 = fx * (1 - fy)
    w01 = (1 - fx) * fy
    w11 = fx * fy
    out = w00 * corners[0] + w10 * corners[1] + w01 * corners[2] + w11 * corners[3]

    def backward(g):
        gimg = None
        if img_t.requires_grad:
            gimg = np.zeros_like(x)
            for n in range(len(x)):
                sx, sy = shifts[n]
                # adjoint of a zero-fill shift is the opposite shift
                gimg[n] = (integer_shift(w00[n] * g[n], dx=-sx, dy=-sy)
                           + integer_shift(w10[n] * g[n], dx=1 - sx, dy=-sy)
                           + integer_shift(w01[n] * g[n], dx=-sx, dy=1 - sy)
                           + integer_shift(w11[n] * g[n], dx=1 - sx, dy=1 - sy))
        gt = None
        if t_t.requires_grad:
            # d(frac)/dt = -1 on each axis
            d_fx = -((1 - fy) * (corners[1] - corners[0]) + fy * (corners[3] - corners[2]))
            d_fy = -((1 - fx) * (corners[2] - corners[0]) + fx * (corners[3] - corners[1]))
            axes = tuple(range(1, x.ndim))
            gt = np.stack([(g * d_fx).sum(axis=axes), (g * d_fy).sum(axis=axes)], axis=1)
            if t_t.shape == (2,):
                gt = gt.sum(axis=0)
        return gimg, gt

    return _record((img_t, t_t), out, backward)


def translate(img, tx, ty):
    """Non-recording convenience wrapper for a single (tx, ty)."""
    img = np.asarray(img, dtype=DTYPE)
    batch = img if img.ndim == 4 else img[None]
    out = translate_warp(Tensor(batch), Tensor([tx, ty])).data
    return out if img.ndim == 4 else out[0]


# --------------------------------------------------------------------------
# affine sequences


def affine_warp(img, matrix):
    """Resample with ``src = matrix @ (dst - c) + c`` about the image centre.

    Bilinear interpolation, black outside the source.
    """
    img = np.asarray(img, dtype=DTYPE)
    H, W = img.shape[-2:]
    cy, cx = (H - 1) / 2.0, (W - 1) / 2.0
    yy, xx = np.meshgrid(np.arange(H, dtype=DTYPE) - cy, np.arange(W, dtype=DTYPE) - cx, indexing="ij")
    sy = matrix[0, 0] * yy + matrix[0, 1] * xx + cy
    sx = matrix[1, 0] * yy + matrix[1, 1] * xx + cx
    y0 = np.floor(sy).astype(int)
    x0 = np.floor(sx).astype(int)
    fy, fx = sy - y0, sx - x0
    padded = np.pad(img, [(0, 0)] * (img.ndim - 2) + [(1, 2), (1, 2)])

    def at(y, x):
        inside = (y >= -1) & (y <= H) & (x >= -1) & (x <= W)
        yc = np.clip(y, -1, H) + 1
        xc = np.clip(x, -1, W) + 1
        return padded[..., yc, xc] * inside

    return ((1 - fy) * (1 - fx) * at(y0, x0) + (1 - fy) * fx * at(y0, x0 + 1)
            + fy * (1 - fx) * at(y0 + 1, x0) + fy * fx * at(y0 + 1, x0 + 1))


def rotate(img, degrees):
    if degrees == 0:
        return np.array(img, dtype=DTYPE)
    a = np.deg2rad(degrees)
    # inverse map of a counter-clockwise rotation in (row, col) coordinates
    m = np.array([[np.cos(a), np.sin(a)], [-np.sin(a), np.cos(a)]])
    return affine_warp(img, m)


def shear(img, amount):
    if amount == 0:
        return np.array(img, dtype=DTYPE)
    return affine_warp(img, np.array([[1.0, 0.0], [-amount, 1.0]]))


def scale_about_centre(img, factor):
    """Shrink by ``factor`` via resize then centred re-embedding."""
    img = np.asarray(img, dtype=DTYPE)
    H, W = img.shape[-2:]
    h = max(1, int(round(H * factor)))
    w = max(1, int(round(W * factor)))
    if (h, w) == (H, W):
        return img.copy()
    return embed_canvas(bilinear_resize(img, h, w), H, W, centered_offset(h, w, H, W))


def perturb(img, kind, level):
    """Apply perturbation ``kind`` at ``level`` in [0, 1] of its maximum."""
    if kind == "translate":
        d = MAX_TRANSLATE * level
        return np.array(img, dtype=DTYPE) if d == 0 else translate(img, d, d)
    if kind == "rotate":
        return rotate(img, MAX_ROTATE_DEG * level)
    if kind == "tilt":
        return shear(img, MAX_SHEAR * level)
    if kind == "scale":
        return scale_about_centre(img, 1.0 - (1.0 - MIN_SCALE) * level)
    raise ValueError(f"unknown perturbation kind {kind!r}")


def make_sequence(img, kind, v=31):
    """Frames of increasing severity; frame 0 is the unmodified image."""
    if v < 2:
        raise ValueError("a perturbation sequence needs at least 2 frames")
    if kind not in SEQUENCE_KINDS:
        raise ValueError(f"unknown perturbation kind {kind!r}")
    img = np.asarray(img, dtype=DTYPE)
    frames = [img.copy()] + [perturb(img, kind, j / (v - 1)) for j in range(1, v)]
    return np.stack(frames)


# --------------------------------------------------------------------------
# corruptions


def corrupt(img, spec):
    """Add noise of ``spec.kind`` at ``spec.severity`` and clip to [0, 1]."""
    img = np.asarray(img, dtype=DTYPE)
    rng = np.random.Generator(np.random.Philox(spec.seed))
    s = spec.severity - 1
    if spec.kind == "gauss_noise":
        out = img + rng.normal(0.0, NOISE_SIGMA[s], img.shape)
    elif spec.kind == "shot_noise":
        lam = SHOT_RATE[s]
        out = rng.poisson(np.clip(img, 0, None) * lam).astype(DTYPE) / lam
    elif spec.kind == "impulse_noise":
        out = salt_and_pepper(img, IMPULSE_P[s], rng)
    else:
        out = img + img * rng.normal(0.0, NOISE_SIGMA[s], img.shape)
    return np.clip(out, 0.0, 1.0)


def salt_and_pepper(img, p, rng):
    """Replace a fraction ``p`` of pixels, half with 1 and half with 0."""
    out = np.array(img, dtype=DTYPE)
    if p <= 0:
        return out
    u = rng.random(img.shape)
    hit = u < p
    salt = u < p / 2
    out[hit] = 0.0
    out[salt] = 1.0
    return out
