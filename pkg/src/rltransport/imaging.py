"""Image metrics, false-color maps and PPM/PFM files."""
import colorsys
import os

import numpy as np

from .errors import ContractError

RMSE_EPS = 1e-4


def _pair(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ContractError(f"image shapes differ: {a.shape} vs {b.shape}")
    return a, b


def rmse(image, reference, relative=False, eps=RMSE_EPS):
    """Root mean squared error over all pixels and channels.

    In relative mode each squared difference is divided by ``ref**2 + eps``.
    """
    a, b = _pair(image, reference)
    d = (a - b) ** 2
    if relative:
        d = d / (b * b + eps)
    return float(np.sqrt(d.mean()))


def difference_image(a, b, gain=10.0):
    """``gain * (a - b)**2`` per channel, clamped to [0, 1] for display."""
    a, b = _pair(a, b)
    return np.clip(gain * (a - b) ** 2, 0.0, 1.0)


def palette(n):
    """``n`` distinct, fully saturated colors spread evenly in hue."""
    if n <= 0:
        raise ContractError("palette needs at least one entry")
    return np.array([colorsys.hsv_to_rgb(k / n, 1.0, 1.0 if k % 2 == 0 else 0.75) for k in range(n)])


def false_color_light_index(indices, light_count=None):
    """Map per-pixel light indices to palette colors; negative indices (no selection) stay black."""
    idx = np.asarray(indices, dtype=np.int64)
    k = int(light_count if light_count is not None else max(idx.max() + 1, 1))
    if idx.max(initial=-1) >= k:
        raise ContractError("light index out of range")
    pal = palette(k)
    out = np.zeros(idx.shape + (3,))
    mask = idx >= 0
    out[mask] = pal[idx[mask]]
    return out


def srgb_encode(linear):
    x = np.clip(np.asarray(linear, dtype=np.float64), 0.0, 1.0)
    return np.where(x <= 0.0031308, 12.92 * x, 1.055 * np.power(x, 1.0 / 2.4) - 0.055)


def to_rgb(image):
    a = np.asarray(image, dtype=np.float64)
    if a.ndim == 2:
        a = np.repeat(a[..., None], 3, axis=2)
    if a.ndim != 3 or a.shape[2] != 3 or min(a.shape[:2]) == 0:
        raise ContractError("image must be (height, width, 3)")
    if not np.all(np.isfinite(a)):
        raise ContractError("image contains non-finite values")
    return a


def write_image(image, path, fmt=None):
    """Write ``image`` (height, width, 3; row 0 on top) as binary PPM or PFM."""
    a = to_rgb(image)
    fmt = (fmt or os.path.splitext(str(path))[1].lstrip(".") or "pfm").lower()
    h, w = a.shape[:2]
    try:
        with open(path, "wb") as fh:
            if fmt == "ppm":
                fh.write(b"P6\n%d %d\n255\n" % (w, h))
                fh.write(np.round(srgb_encode(a) * 255.0).astype(np.uint8).tobytes())
            elif fmt == "pfm":
                # negative scale marks little-endian; scanlines run bottom to top
                fh.write(b"PF\n%d %d\n-1.0\n" % (w, h))
                fh.write(a[::-1].astype("<f4").tobytes())
            else:
                raise ContractError(f"unknown image format {fmt!r}")
    except OSError as exc:
        raise OSError(exc.errno, f"cannot write image: {exc.strerror}", str(path)) from exc


def read_pfm(path):
    with open(path, "rb") as fh:
        kind = fh.readline().strip()
        if kind not in (b"PF", b"Pf"):
            raise ContractError(f"{path}: not a PFM file")
        w, h = map(int, fh.readline().split())
        scale = float(fh.readline())
        dtype = "<f4" if scale < 0 else ">f4"
        ch = 3 if kind == b"PF" else 1
        data = np.frombuffer(fh.read(), dtype=dtype, count=w * h * ch)
    img = data.reshape(h, w, ch)[::-1]
    return np.repeat(img, 3, axis=2) if ch == 1 else img.copy()


def read_ppm(path):
    with open(path, "rb") as fh:
        if fh.readline().strip() != b"P6":
            raise ContractError(f"{path}: not a binary PPM")
        w, h = map(int, fh.readline().split())
        fh.readline()
        return np.frombuffer(fh.read(), dtype=np.uint8, count=w * h * 3).reshape(h, w, 3)
