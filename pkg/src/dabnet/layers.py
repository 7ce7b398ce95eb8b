"""Anti-aliasing layers: learnable Gaussian blur-pool and the AA-ReLU activation.

All blur operators here are depthwise: one spatial kernel shared by every
channel, reflect-padded so that the stride-1 output keeps the input size.
"""

from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .tensor import DTYPE, ShapeError, Tensor, _record, subsample_size, unpad2d

SIGMA_MIN = 0.1
SIGMA_GAP = 0.01
ALPHA_MIN = 0.5
HALF_PI = np.pi / 2


@dataclass
class GaussianBlurParam:
    sigma: float
    depth_level: int
    kernel_size: int = 3

    def __post_init__(self):
        _check_kernel_size(self.kernel_size)
        if self.sigma < SIGMA_MIN:
            raise ValueError(f"sigma must be >= {SIGMA_MIN}, got {self.sigma}")
        if self.depth_level < 1:
            raise ValueError("depth_level starts at 1")


@dataclass
class AAReluParam:
    alpha: float = 6.0

    def __post_init__(self):
        if self.alpha < ALPHA_MIN:
            raise ValueError(f"alpha must be >= {ALPHA_MIN}, got {self.alpha}")


def _check_kernel_size(m):
    if m < 1 or m % 2 == 0:
        raise ValueError(f"kernel size must be a positive odd integer, got {m}")


def _offsets_sq(m):
    r = np.arange(m) - m // 2
    return (r[:, None] ** 2 + r[None, :] ** 2).astype(DTYPE)


def gaussian_kernel(sigma, m=3):
    """Normalized m×m Gaussian on centered integer offsets."""
    _check_kernel_size(m)
    if not sigma > 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    h = np.exp(-_offsets_sq(m) / (2.0 * sigma * sigma))
    return h / h.sum()


def gaussian_kernel_dsigma(sigma, m=3):
    """Entrywise derivative of :func:`gaussian_kernel` with respect to sigma.

    With r2 = p^2 + q^2 and dH/dsigma = H * r2 / sigma^3, the quotient rule
    gives dG/dsigma = G * (r2 - sum(G * r2)) / sigma^3.
    """
    r2 = _offsets_sq(m)
    g = gaussian_kernel(sigma, m)
    return g * (r2 - (g * r2).sum()) / sigma**3


def binomial_kernel(size):
    """Outer product of a normalized binomial row, exact for sizes 3 and 5."""
    rows = {3: [1, 2, 1], 5: [1, 4, 6, 4, 1]}
    if size not in rows:
        raise ValueError(f"binomial kernel size must be 3 or 5, got {size}")
    row = np.asarray(rows[size], dtype=DTYPE)
    row /= row.sum()
    return np.outer(row, row)


def binomial_kernel_exact(size):
    rows = {3: [1, 2, 1], 5: [1, 4, 6, 4, 1]}[size]
    total = sum(rows)
    return [[Fraction(a * b, total * total) for b in rows] for a in rows]


# --------------------------------------------------------------------------
# depthwise blur + subsample


def _blur_geometry(shape, m, stride, k):
    H, W = shape[-2:]
    if H < m or W < m:
        raise ShapeError(f"blur kernel {m} larger than input {H}x{W}")
    ho, wo = subsample_size(H, stride, k), subsample_size(W, stride, k)
    if ho < 1 or wo < 1:
        raise ShapeError(f"subsample window {k} larger than input {H}x{W}")
    return H, W, ho, wo


def _shifted(xp, p, q, ho, wo, stride):
    return xp[:, :, p:p + (ho - 1) * stride + 1:stride, q:q + (wo - 1) * stride + 1:stride]


def _depthwise_forward(x, kernel, stride, k, pad_mode):
    m = kernel.shape[0]
    H, W, ho, wo = _blur_geometry(x.shape, m, stride, k)
    r = m // 2
    mode = "reflect" if pad_mode == "reflect" else "constant"
    xp = np.pad(x, ((0, 0), (0, 0), (r, r), (r, r)), mode=mode)
    out = np.zeros(x.shape[:2] + (ho, wo), dtype=DTYPE)
    for p in range(m):
        for q in range(m):
            out += kernel[p, q] * _shifted(xp, p, q, ho, wo, stride)
    return xp, out


def _depthwise_backward_x(g, kernel, xshape, stride, pad_mode):
    m = kernel.shape[0]
    r = m // 2
    H, W = xshape[-2:]
    ho, wo = g.shape[-2:]
    gxp = np.zeros(xshape[:2] + (H + 2 * r, W + 2 * r), dtype=DTYPE)
    for p in range(m):
        for q in range(m):
            _shifted(gxp, p, q, ho, wo, stride)[...] += kernel[p, q] * g
    return unpad2d(gxp, r, r, r, r, "reflect" if pad_mode == "reflect" else "zero")


def _kernel_grad(xp, g, m, stride):
    """dL/dkernel[p, q]: correlation of the padded input with the output error."""
    ho, wo = g.shape[-2:]
    dk = np.empty((m, m), dtype=DTYPE)
    for p in range(m):
        for q in range(m):
            dk[p, q] = np.vdot(_shifted(xp, p, q, ho, wo, stride), g)
    return dk


def dab_pool(x, sigma, stride=1, k=1, m=3, pad_mode="reflect"):
    """Gaussian blur with learnable ``sigma`` fused with subsampling.

    Only the kept output positions are computed. ``k`` is the window of the
    down-sampling layer being replaced; it fixes the number of kept rows so
    the output size matches the original layer.
    """
    sigma = sigma if isinstance(sigma, Tensor) else Tensor(sigma)
    s = float(sigma.data)
    if not s > 0:
        raise ValueError(f"sigma must be positive, got {s}")
    if stride < 1:
        raise ShapeError(f"stride must be >= 1, got {stride}")
    kernel = gaussian_kernel(s, m)
    xp, out = _depthwise_forward(x.data, kernel, stride, k, pad_mode)

    def backward(g):
        gx = _depthwise_backward_x(g, kernel, x.shape, stride, pad_mode) if x.requires_grad else None
        gs = None
        if sigma.requires_grad:
            gs = np.asarray(np.vdot(_kernel_grad(xp, g, m, stride), gaussian_kernel_dsigma(s, m)))
        return gx, gs

    return _record((x, sigma), out, backward)


def dab_blur(x, sigma, m=3, pad_mode="reflect"):
    """Stride-1, same-size depthwise Gaussian blur."""
    return dab_pool(x, sigma, stride=1, k=1, m=m, pad_mode=pad_mode)


def dsigma(x, dy, sigma, m=3, stride=1, k=1, pad_mode="reflect"):
    """Gradient of sum(dy * dab_pool(x, sigma)) with respect to sigma."""
    x = np.asarray(x.data if isinstance(x, Tensor) else x, dtype=DTYPE)
    dy = np.asarray(dy, dtype=DTYPE)
    r = m // 2
    mode = "reflect" if pad_mode == "reflect" else "constant"
    xp = np.pad(x, ((0, 0), (0, 0), (r, r), (r, r)), mode=mode)
    _, _, ho, wo = _blur_geometry(x.shape, m, stride, k)
    if dy.shape != x.shape[:2] + (ho, wo):
        raise ShapeError(f"dy shape {dy.shape} does not match blur output {x.shape[:2] + (ho, wo)}")
    return float(np.vdot(_kernel_grad(xp, dy, m, stride), gaussian_kernel_dsigma(sigma, m)))


def fixed_blur_pool(x, kernel="bin3", stride=2, k=1, pad_mode="reflect"):
    """Non-learnable binomial blur followed by subsampling."""
    size = {"bin3": 3, "bin5": 5}.get(kernel)
    if size is None:
        raise ValueError(f"kernel must be 'bin3' or 'bin5', got {kernel!r}")
    w = binomial_kernel(size)
    _, out = _depthwise_forward(x.data, w, stride, k, pad_mode)

    def backward(g):
        return (_depthwise_backward_x(g, w, x.shape, stride, pad_mode),)

    return _record((x,), out, backward)


def project_monotone(sigmas, gap=SIGMA_GAP, floor=SIGMA_MIN):
    """Clamp to ``floor`` then force a strictly increasing chain.

    Each level is raised to at least its predecessor plus ``gap``.
    """
    if len(sigmas) == 0:
        raise ValueError("project_monotone needs at least one sigma")
    out = [max(float(s), floor) for s in sigmas]
    for d in range(1, len(out)):
        out[d] = max(out[d], out[d - 1] + gap)
    return out


# --------------------------------------------------------------------------
# activations


def _aa_parts(x, alpha):
    """Masks and trig terms shared by the forward and backward passes.

    Trig values are only evaluated on the roll-off branch (zero elsewhere).
    """
    upper = alpha * np.exp(HALF_PI)
    lin = (x > 0) & (x < alpha)
    roll = (x >= alpha) & (x <= upper)
    plateau = x > upper
    u = np.zeros_like(x)
    np.divide(x, alpha, out=u, where=roll)
    np.log(u, out=u, where=roll)
    sin_u = np.sin(u, out=np.zeros_like(x), where=roll)
    cos_u = np.cos(u, out=np.zeros_like(x), where=roll)
    return lin, roll, plateau, sin_u, cos_u


def _aa_value(x, alpha, parts):
    lin, roll, plateau, sin_u, _ = parts
    out = x * lin
    out += (alpha * sin_u + alpha) * roll
    out += (2.0 * alpha) * plateau
    return out


def _aa_dx(x, alpha, parts):
    lin, roll, _, _, cos_u = parts
    d = lin.astype(DTYPE)
    np.divide(alpha * cos_u, x, out=d, where=roll)
    return d


def _aa_dalpha(parts):
    _, roll, plateau, sin_u, cos_u = parts
    d = (sin_u - cos_u + 1.0) * roll
    d += 2.0 * plateau
    return d


def aa_relu_forward(x, alpha):
    """F(x) on a plain array: ReLU below alpha, sinusoidal roll-off, then 2*alpha."""
    if not alpha > 0:
        raise ValueError(f"alpha must be positive, got {alpha}")
    x = np.asarray(x, dtype=DTYPE)
    return _aa_value(x, alpha, _aa_parts(x, alpha))


def aa_relu_grad_x(x, alpha):
    """dF/dx: 1 on (0, alpha), (alpha/x) cos(ln(x/alpha)) on the roll-off, else 0."""
    x = np.asarray(x, dtype=DTYPE)
    return _aa_dx(x, alpha, _aa_parts(x, alpha))


def aa_relu_grad_alpha(x, alpha):
    """Elementwise dF/dalpha with the branch layout held fixed."""
    x = np.asarray(x, dtype=DTYPE)
    return _aa_dalpha(_aa_parts(x, alpha))


def aa_relu(x, alpha):
    alpha = alpha if isinstance(alpha, Tensor) else Tensor(alpha)
    a = float(alpha.data)
    if not a > 0:
        raise ValueError(f"alpha must be positive, got {a}")
    parts = _aa_parts(x.data, a)
    out = _aa_value(x.data, a, parts)

    def backward(g):
        gx = g * _aa_dx(x.data, a, parts) if x.requires_grad else None
        ga = np.asarray(np.vdot(g, _aa_dalpha(parts))) if alpha.requires_grad else None
        return gx, ga

    return _record((x, alpha), out, backward)


def c_relu(x, cap):
    if not cap > 0:
        raise ValueError(f"cap must be positive, got {cap}")
    inside = (x.data > 0) & (x.data < cap)
    out = np.clip(x.data, 0.0, cap)
    return _record((x,), out, lambda g: (g * inside,))
