"""Spectral motion descriptor for grayscale video.

A clip is smoothed in time, reduced to two Gaussian-derivative edge
channels at half resolution, and every remaining pixel's time series is
windowed and Fourier-transformed.  The strongest non-DC periodogram
peaks per pixel give per-channel power and frequency maps, which are
normalized, average-pooled to a small fixed grid and flattened into a
descriptor whose squared-Euclidean distance ranks physical similarity.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.ndimage import correlate1d

from .errors import ConfigError


@dataclass
class DescriptorConfig:
    frames: int = 30
    fps: float = 25.0
    sigma_t: float = 1.0
    sigma_xy: float = 2.0
    top_k: int = 1
    pool_grid: int = 14
    # reference intensity for log compression of the power maps; peak
    # periodogram values of rendered grayscale clips sit around 1e-4..1e-2,
    # so dividing by this first is what actually brings the compressed
    # channel to O(1) alongside the Nyquist-normalized frequency channel
    power_ref: float = 1e-6

    def __post_init__(self):
        if self.frames < 4 or self.fps <= 0 or self.top_k < 1 or self.pool_grid < 1:
            raise ConfigError("invalid descriptor configuration")
        if self.sigma_t <= 0 or self.sigma_xy <= 0:
            raise ConfigError("filter widths must be positive")
        if self.power_ref <= 0:
            raise ConfigError("power reference must be positive")


@dataclass
class FilteredVolumes:
    """Edge-response volumes: x- and y-derivative channels at half size."""

    dx: np.ndarray  # (N_t, H//2, W//2)
    dy: np.ndarray


@dataclass
class SpectralMaps:
    """Per-pixel periodogram peaks: k peaks for each of the C=2 channels.

    Map index c*k + i is the i-th strongest peak of channel c, channels
    ordered (dx, dy).
    """

    power: np.ndarray  # (k*C, H', W'), >= 0
    frequency: np.ndarray  # (k*C, H', W'), Hz in [0, fps/2]
    fps: float

    def __post_init__(self):
        if self.power.shape != self.frequency.shape:
            raise ValueError("power and frequency maps must share a shape")
        if np.any(self.power < 0):
            raise ValueError("negative spectral power")
        if np.any(self.frequency < 0) or np.any(self.frequency > self.fps / 2 + 1e-9):
            raise ValueError("frequency map outside the Nyquist band")

    def stacked(self):
        return np.concatenate([self.power, self.frequency], axis=0)


@dataclass
class SpectralDescriptor:
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if not np.all(np.isfinite(self.values)):
            raise ValueError("descriptor contains non-finite values")

    def __len__(self):
        return len(self.values)


def _gaussian_kernel(sigma):
    r = int(np.ceil(3.0 * sigma))
    offsets = np.arange(-r, r + 1, dtype=float)
    k = np.exp(-0.5 * (offsets / sigma) ** 2)
    return k / k.sum()


def _gaussian_deriv_kernel(sigma):
    # odd kernel, zero sum by symmetry; scaled for unit response to a
    # unit-slope ramp under correlation
    r = int(np.ceil(3.0 * sigma))
    offsets = np.arange(-r, r + 1, dtype=float)
    k = offsets * np.exp(-0.5 * (offsets / sigma) ** 2)
    return k / np.sum(offsets * k)


def temporal_gaussian(frames: np.ndarray, sigma_t: float) -> np.ndarray:
    """Per-pixel temporal smoothing with a truncated, renormalized Gaussian."""
    if sigma_t <= 0:
        raise ConfigError("sigma_t must be positive")
    kernel = _gaussian_kernel(sigma_t)
    if frames.shape[0] < len(kernel):
        raise ValueError(
            f"video too short: {frames.shape[0]} frames < kernel length {len(kernel)}"
        )
    return correlate1d(frames, kernel, axis=0, mode="nearest")


def spatial_derivatives(frames: np.ndarray, sigma_xy: float) -> FilteredVolumes:
    """Directional first-order Gaussian derivative responses, 2x2 max-pooled.

    The x channel differentiates along image width (last axis), the y
    channel along height, each smoothed with the matching 0th-order
    Gaussian in the perpendicular direction; replicate boundaries.
    """
    if sigma_xy <= 0:
        raise ConfigError("sigma_xy must be positive")
    if frames.ndim != 3 or frames.shape[1] < 4 or frames.shape[2] < 4:
        raise ValueError("expected a video volume with frames at least 4x4")
    smooth = _gaussian_kernel(sigma_xy)
    deriv = _gaussian_deriv_kernel(sigma_xy)
    dx = correlate1d(frames, deriv, axis=2, mode="nearest")
    dx = correlate1d(dx, smooth, axis=1, mode="nearest")
    dy = correlate1d(frames, deriv, axis=1, mode="nearest")
    dy = correlate1d(dy, smooth, axis=2, mode="nearest")
    return FilteredVolumes(dx=_max_pool2(dx), dy=_max_pool2(dy))


def _max_pool2(vol):
    nt, h, w = vol.shape
    h2, w2 = h // 2, w // 2
    v = vol[:, : 2 * h2, : 2 * w2].reshape(nt, h2, 2, w2, 2)
    return v.max(axis=(2, 4))


def hanning(n: int) -> np.ndarray:
    """Cosine taper w[i] = 0.5  (1 - cos(2 pi i / (n-1)))."""
    if n < 2:
        raise ValueError("window needs at least 2 points")
    i = np.arange(n, dtype=float)
    return 0.5 * (1.0 - np.cos(2.0 * np.pi * i / (n - 1)))


def dft_periodogram(signal: np.ndarray, fps: float) -> tuple[np.ndarray, np.ndarray]:
    """Half-spectrum power estimate I[b] = |F[b]|^2 / N with freqs in Hz."""
    signal = np.asarray(signal, dtype=float)
    n = signal.shape[-1]
    if n < 2:
        raise ValueError("signal too short for a spectrum")
    spectrum = np.fft.rfft(signal, axis=-1)
    power = (spectrum.real**2 + spectrum.imag**2) / n
    freqs = np.arange(power.shape[-1], dtype=float) * (fps / n)
    return power, freqs


def topk_select(power: np.ndarray, freqs: np.ndarray, k: int):
    """Strongest k non-DC bins, descending power, ties to lower frequency."""
    if k < 1:
        raise ValueError("k must be at least 1")
    if k > len(power) - 1:
        raise ValueError(f"k={k} exceeds the {len(power) - 1} non-DC bins")
    # stable sort on negated power keeps ascending-frequency order on ties
    order = np.argsort(-power[1:], kind="stable") + 1
    pick = order[:k]
    return power[pick], freqs[pick]


def spectral_decompose(fv: FilteredVolumes, fps: float, k: int = 1) -> SpectralMaps:
    """Window, transform and peak-pick every pixel of both channels."""
    channels = (fv.dx, fv.dy)
    nt = channels[0].shape[0]
    if nt < 4:
        raise ValueError("need at least 4 frames for spectral decomposition")
    n_bins = nt // 2 + 1
    if k > n_bins - 1:
        raise ValueError(f"k={k} exceeds the {n_bins - 1} non-DC bins")
    window = hanning(nt)
    powers, freqs_out = [], []
    for vol in channels:
        # temporal detrend: a static pattern would otherwise leak window
        # energy into low bins and drown the actual dynamics
        tapered = (vol - vol.mean(axis=0)) * window[:, None, None]
        power, freqs = dft_periodogram(np.moveaxis(tapered, 0, -1), fps)
        nondc = np.moveaxis(power[..., 1:], -1, 0)  # (bins-1, H, W)
        order = np.argsort(-nondc, axis=0, kind="stable")[:k]
        peak_power = np.take_along_axis(nondc, order, axis=0)
        peak_freq = freqs[order + 1]
        powers.append(peak_power)
        freqs_out.append(peak_freq)
    return SpectralMaps(
        power=np.concatenate(powers, axis=0),
        frequency=np.concatenate(freqs_out, axis=0),
        fps=fps,
    )


def _avg_pool_to(map2d, grid):
    h, w = map2d.shape
    if h < grid or w < grid:
        raise ValueError(f"map {h}x{w} smaller than {grid}x{grid} pool grid")
    re = np.linspace(0, h, grid + 1).astype(int)
    ce = np.linspace(0, w, grid + 1).astype(int)
    out = np.empty((grid, grid))
    for r in range(grid):
        for c in range(grid):
            out[r, c] = map2d[re[r]:re[r + 1], ce[c]:ce[c + 1]].mean()
    return out


def descriptor(volume, cfg: DescriptorConfig = None) -> SpectralDescriptor:
    """Full pipeline: video -> fixed-length physical-similarity vector.

    Power maps are log(1 + I/power_ref) compressed and frequency maps
    divided by the Nyquist frequency before pooling, so both families are
    O(1) without a trained head to absorb scale.  Default configuration
    gives 2 families x k x C maps x 14 x 14 = 784 values.
    """
    cfg = cfg or DescriptorConfig()
    frames = volume.frames
    if frames.shape[0] != cfg.frames:
        raise ValueError(
            f"expected {cfg.frames} frames, got {frames.shape[0]}"
        )
    if abs(volume.fps - cfg.fps) > 1e-9:
        raise ValueError(f"expected {cfg.fps} fps, got {volume.fps}")
    smoothed = temporal_gaussian(frames, cfg.sigma_t)
    fv = spatial_derivatives(smoothed, cfg.sigma_xy)
    maps = spectral_decompose(fv, cfg.fps, cfg.top_k)
    pooled = [
        _avg_pool_to(np.log1p(m / cfg.power_ref), cfg.pool_grid)
        for m in maps.power
    ]
    nyquist = cfg.fps / 2.0
    pooled += [_avg_pool_to(m / nyquist, cfg.pool_grid) for m in maps.frequency]
    return SpectralDescriptor(np.concatenate([m.ravel() for m in pooled]))


def distance(a: SpectralDescriptor, b: SpectralDescriptor) -> float:
    """Squared Euclidean distance between two descriptors."""
    if len(a) != len(b):
        raise ValueError(f"descriptor lengths differ: {len(a)} vs {len(b)}")
    d = a.values - b.values
    return float(d @ d)


def save_descriptor_csv(desc: SpectralDescriptor, path):
    Path(path).write_text(",".join(f"{v:.17g}" for v in desc.values) + "\n")


def load_descriptor_csv(path) -> SpectralDescriptor:
    text = Path(path).read_text().strip()
    return SpectralDescriptor(np.array([float(t) for t in text.split(",")]))


def save_maps_pgm(maps: SpectralMaps, directory, prefix="map"):
    """Dump each power/frequency map as an 8-bit PGM heatmap (min..max)."""
    from .render import write_pgm  # local import; render owns PGM encoding

    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for family, stack in (("power", maps.power), ("frequency", maps.frequency)):
        for idx, m in enumerate(stack):
            lo, hi = float(m.min()), float(m.max())
            scaled = np.zeros_like(m) if hi <= lo else (m - lo) / (hi - lo)
            write_pgm(directory / f"{prefix}_{family}_{idx}.pgm",
                      np.round(scaled * 255).astype(np.uint8))
