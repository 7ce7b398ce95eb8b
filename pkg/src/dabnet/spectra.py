"""Fourier energy of feature maps and learned-kernel rendering."""

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .layers import gaussian_kernel


def _is_pow2(n):
    return n > 0 and n & (n - 1) == 0


def _bit_reverse(n):
    bits = n.bit_length() - 1
    idx = np.arange(n)
    rev = np.zeros(n, dtype=int)
    for b in range(bits):
        rev |= ((idx >> b) & 1) << (bits - 1 - b)
    return rev


def _fft_radix2(x):
    """Iterative Cooley-Tukey over the last axis (length a power of two)."""
    n = x.shape[-1]
    a = x[..., _bit_reverse(n)].astype(np.complex128)
    size = 2
    while size <= n:
        half = size // 2
        tw = np.exp(-2j * np.pi * np.arange(half) / size)
        a = a.reshape(a.shape[:-1] + (n // size, size))
        even = a[..., :half].copy()
        odd = a[..., half:] * tw
        a[..., :half] = even + odd
        a[..., half:] = even - odd
        a = a.reshape(a.shape[:-2] + (n,))
        size *= 2
    return a


def _dft_direct(x):
    n = x.shape[-1]
    k = np.arange(n)
    mat = np.exp(-2j * np.pi * np.outer(k, k) / n)
    return x.astype(np.complex128) @ mat.T


def dft(x, axis=-1):
    """1-D DFT along ``axis``: radix-2 when the length is a power of two."""
    x = np.moveaxis(np.asarray(x), axis, -1)
    out = _fft_radix2(x) if _is_pow2(x.shape[-1]) else _dft_direct(x)
    return np.moveaxis(out, -1, axis)


def dft2(x):
    """2-D DFT over the last two axes."""
    return dft(dft(x, axis=-1), axis=-2)


def idft2(X):
    X = np.asarray(X, dtype=np.complex128)
    H, W = X.shape[-2:]
    return np.conj(dft2(np.conj(X))) / (H * W)


def center_shift(a):
    """Roll so the DC bin sits at (H // 2, W // 2)."""
    H, W = a.shape[-2:]
    return np.roll(a, (H // 2, W // 2), axis=(-2, -1))


def naive_dft2(x):
    """Quadruple-sum reference used in tests."""
    x = np.asarray(x, dtype=np.complex128)
    H, W = x.shape
    out = np.zeros((H, W), dtype=np.complex128)
    for u in range(H):
        for v in range(W):
            s = 0j
            for i in range(H):
                for j in range(W):
                    s += x[i, j] * np.exp(-2j * np.pi * (u * i / H + v * j / W))
            out[u, v] = s
    return out


@dataclass
class SpectrumMap:
    depth_level: int
    energy: np.ndarray
    n_samples: int


def energy_from_features(features, depth_level=0):
    """Mean power spectrum of an (N, C, H, W) stack, centred and unit-sum."""
    f = np.asarray(features, dtype=np.float64)
    power = np.abs(dft2(f)) ** 2
    mean = power.mean(axis=(0, 1))
    total = mean.sum()
    energy = center_shift(mean / total) if total > 0 else np.zeros_like(mean)
    if total == 0:
        H, W = energy.shape
        energy[H // 2, W // 2] = 1.0
    return SpectrumMap(depth_level, energy, f.shape[0])


def energy_map(model, images, depth_level, n=500):
    """Spectrum of the feature map entering down-sampling stage ``depth_level``."""
    levels = len(model.graph.depth_levels())
    if not 1 <= depth_level <= levels:
        raise ValueError(f"depth level {depth_level} outside 1..{levels}")
    feats = model.features(np.asarray(images)[:n])[depth_level]
    return energy_from_features(feats, depth_level)


def energy_maps(model, images, n=500):
    feats = model.features(np.asarray(images)[:n])
    return [energy_from_features(f, d) for d, f in feats.items()]


def low_band(H, W):
    """Slices of the centred H/2 × W/2 block around the DC bin."""
    bh, bw = H // 2, W // 2
    r0 = H // 2 - bh // 2
    c0 = W // 2 - bw // 2
    return slice(r0, r0 + bh), slice(c0, c0 + bw)


def hf_ratio(smap):
    """Share of energy outside the centred half-size low-frequency block."""
    e = smap.energy if isinstance(smap, SpectrumMap) else np.asarray(smap)
    total = e.sum()
    if total == 0:
        return 0.0
    rows, cols = low_band(*e.shape)
    return float(1.0 - e[rows, cols].sum() / total)


# --------------------------------------------------------------------------
# images


def pgm_bytes(img, maxval=255):
    """Binary PGM (P5); 16-bit samples are big-endian."""
    img = np.asarray(img)
    H, W = img.shape
    header = f"P5\n{W} {H}\n{maxval}\n".encode("ascii")
    dtype = ">u2" if maxval > 255 else "u1"
    return header + np.asarray(img, dtype=dtype).tobytes()


def write_pgm(path, img, maxval=255):
    Path(path).write_bytes(pgm_bytes(img, maxval))


def read_pgm(path):
    data = Path(path).read_bytes()
    parts = data.split(maxsplit=4)
    if parts[0] != b"P5":
        raise ValueError("not a binary PGM")
    W, H, maxval = int(parts[1]), int(parts[2]), int(parts[3])
    dtype = ">u2" if maxval > 255 else "u1"
    body = data[len(data) - H * W * np.dtype(dtype).itemsize:]
    return np.frombuffer(body, dtype=dtype).reshape(H, W)


def spectrum_image(smap):
    """16-bit log-scaled rendering of an energy map."""
    e = smap.energy
    logged = np.log10(e + 1e-12)
    lo, hi = logged.min(), logged.max()
    scaled = (logged - lo) / (hi - lo) if hi > lo else np.zeros_like(logged)
    return np.rint(scaled * 65535).astype(np.uint16)


def kernel_image(sigma, m=3):
    """8-bit rendering of a Gaussian kernel, brightest = centre weight."""
    k = gaussian_kernel(sigma, m)
    return np.rint(255 * k / k.max()).astype(np.uint8)


def kernel_gallery(model):
    """(depth level, sigma, kernel weights, kernel image) per learnable blur layer."""
    out = []
    for d, idx in enumerate(model.graph.depth_levels(), start=1):
        spec = model.graph.layers[idx]
        if spec.kind != "dab_pool":
            continue
        sigma = float(model.params[f"{idx}.sigma"])
        m = spec.hp.get("m", 3)
        out.append((d, sigma, gaussian_kernel(sigma, m), kernel_image(sigma, m)))
    return out
