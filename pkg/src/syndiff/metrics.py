"""PSNR and SSIM between synthesized and reference images.

Both metrics expect mean-normalized inputs (see data.normalize_mean) and
take the dynamic range from the reference image's maximum, which keeps the
range well-defined after normalization. SSIM uses the canonical 11x11
Gaussian window (sigma 1.5), C1=(0.01 L)^2, C2=(0.03 L)^2, valid-mode
windows averaged over the overlap map.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

PSNR_CAP_DB = 100.0  # stand-in for the +inf sentinel inside aggregates
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5


def psnr(reference: np.ndarray, test: np.ndarray, max_val: float | None = None) -> float:
    """10 log10(MAX^2 / MSE) in dB; +inf when the images are identical."""
    reference = np.asarray(reference, dtype=np.float64)
    test = np.asarray(test, dtype=np.float64)
    if reference.shape != test.shape:
        raise ValueError(f"psnr: shape mismatch {reference.shape} vs {test.shape}")
    if max_val is None:
        max_val = float(reference.max())
    mse = float(np.mean((reference - test) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(max_val * max_val / mse)


def _gaussian_kernel(size: int, sigma: float) -> np.ndarray:
    r = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(r**2) / (2.0 * sigma**2))
    k = np.outer(g, g)
    return k / k.sum()


def _windowed(img: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Valid-mode weighted local means via sliding windows."""
    win = np.lib.stride_tricks.sliding_window_view(img, kernel.shape)
    return np.tensordot(win, kernel, axes=([2, 3], [0, 1]))


def ssim(reference: np.ndarray, test: np.ndarray, data_range: float | None = None) -> float:
    reference = np.asarray(reference, dtype=np.float64)
    test = np.asarray(test, dtype=np.float64)
    if reference.shape != test.shape:
        raise ValueError(f"ssim: shape mismatch {reference.shape} vs {test.shape}")
    if min(reference.shape) < SSIM_WINDOW:
        raise ValueError(f"ssim: image {reference.shape} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window")
    if data_range is None:
        data_range = float(reference.max())
    c1 = (0.01 * data_range) ** 2
    c2 = (0.03 * data_range) ** 2
    k = _gaussian_kernel(SSIM_WINDOW, SSIM_SIGMA)
    mu_r = _windowed(reference, k)
    mu_t = _windowed(test, k)
    var_r = _windowed(reference * reference, k) - mu_r**2
    var_t = _windowed(test * test, k) - mu_t**2
    cov = _windowed(reference * test, k) - mu_r * mu_t
    num = (2 * mu_r * mu_t + c1) * (2 * cov + c2)
    den = (mu_r**2 + mu_t**2 + c1) * (var_r + var_t + c2)
    return float(np.mean(num / den))


@dataclass
class MetricReport:
    pair_ids: list[str]
    psnr_db: list[float]
    ssim_frac: list[float]

    @property
    def psnr_mean(self) -> float:
        return float(np.mean([min(v, PSNR_CAP_DB) for v in self.psnr_db]))

    @property
    def psnr_std(self) -> float:
        return float(np.std([min(v, PSNR_CAP_DB) for v in self.psnr_db]))

    @property
    def ssim_mean(self) -> float:
        return float(np.mean(self.ssim_frac))

    @property
    def ssim_std(self) -> float:
        return float(np.std(self.ssim_frac))

    def add(self, pair_id: str, psnr_db: float, ssim_frac: float) -> None:
        self.pair_ids.append(pair_id)
        self.psnr_db.append(psnr_db)
        self.ssim_frac.append(ssim_frac)


def empty_report() -> MetricReport:
    return MetricReport(pair_ids=[], psnr_db=[], ssim_frac=[])
