"""No-reference and source-referenced fusion quality metrics.

All metrics take luminance images in [0, 1]. SD, SF, and AG are reported on
the conventional 0-255 intensity scale so magnitudes line up with published
fusion tables; EN is in bits; VIF, Qabf, SCD, SSIM are dimensionless.

Every function here is pure: identical inputs give bit-identical outputs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.signal import convolve2d

from .imaging import histogram256, sobel_components, to_luminance, validate_image

# Xydeas-Petrovic edge-preservation model constants. Each sigmoid factor is
# normalized by its value at perfect preservation (argument = 1) so that
# Qabf(F, F, F) = 1 exactly.
QABF_GAMMA_G, QABF_KAPPA_G, QABF_SIGMA_G = 0.9994, -15.0, 0.5
QABF_GAMMA_A, QABF_KAPPA_A, QABF_SIGMA_A = 0.9879, -22.0, 0.8

SSIM_K1, SSIM_K2 = 0.01, 0.03
SSIM_WINDOW, SSIM_SIGMA = 11, 1.5

VIF_EPS = 1e-10
VIF_SIGMA_NSQ = 2.0

METRIC_NAMES = ("en", "sd", "sf", "ag", "vif", "qabf", "scd", "ssim")


@dataclass(frozen=True)
class MetricReport:
    """One row of the evaluation table: all eight metrics for a fused image."""

    en: float
    sd: float
    sf: float
    ag: float
    vif: float
    qabf: float
    scd: float
    ssim: float

    def as_dict(self) -> dict[str, float]:
        return {name: getattr(self, name) for name in METRIC_NAMES}


def _lum(img: np.ndarray) -> np.ndarray:
    return to_luminance(validate_image(img))


def entropy(fused: np.ndarray) -> float:
    """Shannon entropy in bits of the 256-bin intensity histogram."""
    p = histogram256(_lum(fused))
    nz = p[p > 0]
    return float(-(nz * np.log2(nz)).sum())


def std_dev(fused: np.ndarray) -> float:
    """Population standard deviation on the 0-255 scale."""
    return float(np.std(_lum(fused) * 255.0))


def spatial_frequency(fused: np.ndarray) -> float:
    """sqrt(RF^2 + CF^2); RF/CF are RMS first differences over valid pairs."""
    img = _lum(fused) * 255.0
    if img.shape[0] < 2 or img.shape[1] < 2:
        raise ValueError("spatial_frequency requires at least 2x2 input")
    rf_sq = np.mean((img[:, 1:] - img[:, :-1]) ** 2)
    cf_sq = np.mean((img[1:, :] - img[:-1, :]) ** 2)
    return float(np.sqrt(rf_sq + cf_sq))


def average_gradient(fused: np.ndarray) -> float:
    """Mean of sqrt((gx^2 + gy^2) / 2) on the 0-255 scale.

    Differences are central in the interior and one-sided at the borders
    (the fusion-literature convention), which keeps the metric exactly
    mirror-invariant.
    """
    img = _lum(fused) * 255.0
    if img.shape[0] < 2 or img.shape[1] < 2:
        raise ValueError("average_gradient requires at least 2x2 input")
    gx = np.empty_like(img)
    gx[:, 0] = img[:, 1] - img[:, 0]
    gx[:, -1] = img[:, -1] - img[:, -2]
    gx[:, 1:-1] = (img[:, 2:] - img[:, :-2]) / 2.0
    gy = np.empty_like(img)
    gy[0, :] = img[1, :] - img[0, :]
    gy[-1, :] = img[-1, :] - img[-2, :]
    gy[1:-1, :] = (img[2:, :] - img[:-2, :]) / 2.0
    return float(np.mean(np.sqrt((gx * gx + gy * gy) / 2.0)))


def _gaussian_kernel(size: int, sigma: float) -> np.ndarray:
    half = (size - 1) / 2.0
    y, x = np.mgrid[-half : half + 1, -half : half + 1]
    k = np.exp(-(x * x + y * y) / (2.0 * sigma * sigma))
    return k / k.sum()


def _vif_single(ref: np.ndarray, dist: np.ndarray) -> float:
    """Pixel-domain VIF of dist against ref over 4 Gaussian scales (0-255)."""
    num = 0.0
    den = 0.0
    for scale in range(1, 5):
        size = 2 ** (4 - scale + 1) + 1
        win = _gaussian_kernel(size, size / 5.0)
        if scale > 1:
            ref = convolve2d(ref, win, mode="valid")[::2, ::2]
            dist = convolve2d(dist, win, mode="valid")[::2, ::2]
        mu1 = convolve2d(ref, win, mode="valid")
        mu2 = convolve2d(dist, win, mode="valid")
        sigma1_sq = convolve2d(ref * ref, win, mode="valid") - mu1 * mu1
        sigma2_sq = convolve2d(dist * dist, win, mode="valid") - mu2 * mu2
        sigma12 = convolve2d(ref * dist, win, mode="valid") - mu1 * mu2
        sigma1_sq[sigma1_sq < 0] = 0.0
        sigma2_sq[sigma2_sq < 0] = 0.0

        g = sigma12 / (sigma1_sq + VIF_EPS)
        sv_sq = sigma2_sq - g * sigma12
        g[sigma1_sq < VIF_EPS] = 0.0
        sv_sq[sigma1_sq < VIF_EPS] = sigma2_sq[sigma1_sq < VIF_EPS]
        sigma1_sq[sigma1_sq < VIF_EPS] = 0.0
        g[sigma2_sq < VIF_EPS] = 0.0
        sv_sq[sigma2_sq < VIF_EPS] = 0.0
        sv_sq[g < 0] = sigma2_sq[g < 0]
        g[g < 0] = 0.0
        sv_sq[sv_sq <= VIF_EPS] = VIF_EPS

        num += np.sum(np.log10(1.0 + g * g * sigma1_sq / (sv_sq + VIF_SIGMA_NSQ)))
        den += np.sum(np.log10(1.0 + sigma1_sq / VIF_SIGMA_NSQ))
    if den == 0.0:
        # zero-variance reference at every scale: equal information by convention
        return 1.0
    return float(num / den)


def vif(fused: np.ndarray, src_a: np.ndarray, src_b: np.ndarray) -> float:
    """Mean of the per-source pixel-domain VIF scores."""
    f, a, b = _lum(fused) * 255.0, _lum(src_a) * 255.0, _lum(src_b) * 255.0
    if not (f.shape == a.shape == b.shape):
        raise ValueError("vif requires same-shape images")
    return (_vif_single(a, f) + _vif_single(b, f)) / 2.0


def _edge_strength_orientation(img: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    gx, gy = sobel_components(img)
    strength = np.sqrt(gx * gx + gy * gy)
    alpha = np.full_like(gx, math.pi / 2.0)
    nz = gx != 0
    alpha[nz] = np.arctan(gy[nz] / gx[nz])
    return strength, alpha


def _preservation(g_src, a_src, g_fused, a_fused) -> np.ndarray:
    g_max = np.maximum(g_src, g_fused)
    g_min = np.minimum(g_src, g_fused)
    ratio = np.zeros_like(g_src)
    nz = g_max > 0
    ratio[nz] = g_min[nz] / g_max[nz]
    a_pres = 1.0 - np.abs(a_src - a_fused) / (math.pi / 2.0)

    def sig(x, gamma, kappa, sigma):
        return gamma / (1.0 + np.exp(kappa * (x - sigma)))

    q_g = sig(ratio, QABF_GAMMA_G, QABF_KAPPA_G, QABF_SIGMA_G)
    q_g /= sig(1.0, QABF_GAMMA_G, QABF_KAPPA_G, QABF_SIGMA_G)
    q_a = sig(a_pres, QABF_GAMMA_A, QABF_KAPPA_A, QABF_SIGMA_A)
    q_a /= sig(1.0, QABF_GAMMA_A, QABF_KAPPA_A, QABF_SIGMA_A)
    return q_g * q_a


def qabf(fused: np.ndarray, src_a: np.ndarray, src_b: np.ndarray) -> float:
    """Edge-preservation quality: strength-weighted mean of per-source
    preservation factors. Raises ValueError when both sources are edge-free."""
    f, a, b = _lum(fused), _lum(src_a), _lum(src_b)
    if not (f.shape == a.shape == b.shape):
        raise ValueError("qabf requires same-shape images")
    g_f, al_f = _edge_strength_orientation(f)
    g_a, al_a = _edge_strength_orientation(a)
    g_b, al_b = _edge_strength_orientation(b)
    weight_sum = np.sum(g_a + g_b)
    # Sobel on a constant image leaves ~1e-17 summation residue per pixel
    if weight_sum <= 1e-9:
        raise ValueError("qabf: no edge content in either source")
    q_af = _preservation(g_a, al_a, g_f, al_f)
    q_bf = _preservation(g_b, al_b, g_f, al_f)
    return float(np.sum(q_af * g_a + q_bf * g_b) / weight_sum)


def _pearson(x: np.ndarray, y: np.ndarray) -> float:
    xc = x - x.mean()
    yc = y - y.mean()
    denom = np.sqrt(np.sum(xc * xc) * np.sum(yc * yc))
    if denom == 0.0:
        return 0.0
    return float(np.sum(xc * yc) / denom)


def scd(fused: np.ndarray, src_a: np.ndarray, src_b: np.ndarray) -> float:
    """Sum of correlations of differences: corr(F-A, B) + corr(F-B, A)."""
    f, a, b = _lum(fused), _lum(src_a), _lum(src_b)
    if not (f.shape == a.shape == b.shape):
        raise ValueError("scd requires same-shape images")
    return _pearson(f - a, b) + _pearson(f - b, a)


def ssim(fused: np.ndarray, ref: np.ndarray) -> float:
    """Single-scale SSIM: 11x11 Gaussian window, sigma 1.5, dynamic range 1."""
    f, r = _lum(fused), _lum(ref)
    if f.shape != r.shape:
        raise ValueError("ssim requires same-shape images")
    if min(f.shape) < SSIM_WINDOW:
        raise ValueError(f"ssim requires min side >= {SSIM_WINDOW}")
    win = _gaussian_kernel(SSIM_WINDOW, SSIM_SIGMA)
    c1 = (SSIM_K1 * 1.0) ** 2
    c2 = (SSIM_K2 * 1.0) ** 2
    mu1 = convolve2d(f, win, mode="valid")
    mu2 = convolve2d(r, win, mode="valid")
    mu1_sq, mu2_sq, mu12 = mu1 * mu1, mu2 * mu2, mu1 * mu2
    s1 = convolve2d(f * f, win, mode="valid") - mu1_sq
    s2 = convolve2d(r * r, win, mode="valid") - mu2_sq
    s12 = convolve2d(f * r, win, mode="valid") - mu12
    ssim_map = ((2 * mu12 + c1) * (2 * s12 + c2)) / ((mu1_sq + mu2_sq + c1) * (s1 + s2 + c2))
    return float(ssim_map.mean())


def ssim_fused(fused: np.ndarray, src_a: np.ndarray, src_b: np.ndarray) -> float:
    """The fusion-task SSIM score: mean SSIM against the two sources."""
    return (ssim(fused, src_a) + ssim(fused, src_b)) / 2.0


def evaluate_all(fused: np.ndarray, src_a: np.ndarray, src_b: np.ndarray) -> MetricReport:
    """Compute the full metric table for one fused image."""
    return MetricReport(
        en=entropy(fused),
        sd=std_dev(fused),
        sf=spatial_frequency(fused),
        ag=average_gradient(fused),
        vif=vif(fused, src_a, src_b),
        qabf=qabf(fused, src_a, src_b),
        scd=scd(fused, src_a, src_b),
        ssim=ssim_fused(fused, src_a, src_b),
    )
