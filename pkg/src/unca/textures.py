"""Small procedural target textures for tests, demos and quick experiments."""

import numpy as np

WARM = (0.95, 0.85, 0.25)
COOL = (0.15, 0.25, 0.55)


def stripes(size: int = 48, period: int = 8, colors=(WARM, COOL)) -> np.ndarray:
    """Two-color diagonal bands, ``period`` pixels per band pair."""
    yy, xx = np.mgrid[:size, :size]
    band = ((xx + yy) // max(period // 2, 1)) % 2
    return np.where(band[..., None] == 1, np.asarray(colors[0]), np.asarray(colors[1]))


def blobs(size: int = 112, feature: float = 6.0, seed: int = 0, colors=((0.9, 0.8, 0.3), (0.1, 0.2, 0.6))):
    """Two-color thresholded low-pass noise; ``feature`` sets the blob size in pixels."""
    rng = np.random.default_rng(seed)
    freq = np.fft.fftfreq(size)
    radius = np.hypot(*np.meshgrid(freq, freq)) * size
    field = np.real(np.fft.ifft2(np.fft.fft2(rng.normal(size=(size, size))) * np.exp(-(radius / feature) ** 2)))
    return np.where(field[..., None] > 0, np.asarray(colors[0]), np.asarray(colors[1]))


def dots(size: int = 48, spacing: int = 8, radius: float = 2.0) -> np.ndarray:
    """Light dots on a dark ground, on a square lattice."""
    yy, xx = np.mgrid[:size, :size]
    dy = (yy % spacing) - spacing / 2 + 0.5
    dx = (xx % spacing) - spacing / 2 + 0.5
    inside = dy * dy + dx * dx <= radius * radius
    return np.where(inside[..., None], np.array([0.9, 0.9, 0.85]), np.array([0.2, 0.1, 0.1]))


def autocorrelation_length(image: np.ndarray, threshold: float = np.exp(-1.0)) -> float:
    """Radius in pixels at which the radially averaged luminance autocorrelation
    (periodic, normalized to 1 at lag 0) first falls below ``threshold``;
    linearly interpolated between integer radii."""
    lum = image[..., :3].mean(-1)
    lum = lum - lum.mean()
    power = np.abs(np.fft.fft2(lum)) ** 2
    ac = np.real(np.fft.ifft2(power))
    if ac[0, 0] <= 0:
        return 0.0
    ac /= ac[0, 0]
    h, w = lum.shape
    ky = np.fft.fftfreq(h) * h
    kx = np.fft.fftfreq(w) * w
    r = np.rint(np.hypot(*np.meshgrid(ky, kx, indexing="ij"))).astype(int)
    profile = np.bincount(r.ravel(), ac.ravel()) / np.bincount(r.ravel())
    below = np.nonzero(profile < threshold)[0]
    if below.size == 0:
        return float(len(profile) - 1)
    k = int(below[0])
    # interpolate between k-1 (above) and k (below)
    a, b = profile[k - 1], profile[k]
    return float(k - 1 + (a - threshold) / (a - b))
