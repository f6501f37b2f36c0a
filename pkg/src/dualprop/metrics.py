"""Image quality metrics and the inpainting loss formulas."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import correlate1d

from .flow import flow_rec_loss, flow_smooth_loss
from .grid import DTYPE

PSNR_TEXT_CAP = 99.0
BT601 = np.array([0.299, 0.587, 0.114])


@dataclass(frozen=True)
class LossConfig:
    alpha1: float = 1.0    # flow reconstruction
    alpha2: float = 0.5    # flow smoothness
    lambda1: float = 1.0   # frame reconstruction
    lambda2: float = 0.01  # adversarial (generator)

    def __post_init__(self):
        if min(self.alpha1, self.alpha2, self.lambda1, self.lambda2) < 0:
            raise ValueError("loss weights must be non-negative")


def _pair(a, b):
    a = np.asarray(a, dtype=DTYPE)
    b = np.asarray(b, dtype=DTYPE)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return a, b


def psnr(a, b) -> float:
    """Peak signal-to-noise ratio in dB for data in [0, 1]; ``inf`` when equal."""
    a, b = _pair(a, b)
    mse = np.mean((a - b) ** 2)
    if mse == 0:
        return float("inf")
    return float(-10.0 * np.log10(mse))


def psnr_text(value: float) -> float:
    return min(value, PSNR_TEXT_CAP)


def luminance(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img, dtype=DTYPE)
    if img.ndim == 3 and img.shape[2] == 3:
        return img @ BT601
    if img.ndim == 3 and img.shape[2] == 1:
        return img[..., 0]
    if img.ndim == 2:
        return img
    raise ValueError(f"cannot take luminance of shape {img.shape}")


def gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2
    g = np.exp(-(x ** 2) / (2 * sigma ** 2))
    return g / g.sum()


def ssim(a, b, size: int = 11, sigma: float = 1.5, k1: float = 0.01, k2: float = 0.03,
         data_range: float = 1.0) -> float:
    """Mean structural similarity of the luminance channels.

    Local statistics use a normalised ``size x size`` Gaussian window and only
    positions where the window fits entirely inside the image.
    """
    a, b = _pair(a, b)
    ya, yb = luminance(a), luminance(b)
    if ya.shape[0] < size or ya.shape[1] < size:
        raise ValueError(f"ssim needs images of at least {size}x{size}")
    g = gaussian_window(size, sigma)
    r = size // 2

    def blur(x):
        x = correlate1d(correlate1d(x, g, axis=0, mode="constant"), g, axis=1, mode="constant")
        return x[r:x.shape[0] - r, r:x.shape[1] - r]

    c1 = (k1 * data_range) ** 2
    c2 = (k2 * data_range) ** 2
    mu_a, mu_b = blur(ya), blur(yb)
    var_a = blur(ya * ya) - mu_a ** 2
    var_b = blur(yb * yb) - mu_b ** 2
    cov = blur(ya * yb) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


def rec_loss(y_hat, y) -> float:
    """Mean absolute error over every pixel, channel and frame."""
    y_hat, y = _pair(y_hat, y)
    return float(np.mean(np.abs(y_hat - y)))


def _scores(s):
    s = np.asarray(s, dtype=DTYPE)
    if np.any(s <= 0) or np.any(s >= 1):
        raise ValueError("discriminator scores must lie strictly inside (0, 1)")
    return s


def gan_losses(scores_real, scores_fake, variant: str = "verbatim") -> tuple[float, float]:
    """Discriminator and generator adversarial losses from squashed scores.

    ``verbatim`` evaluates ``E[log D(Y)] + E[1 - log D(Y_hat)]`` exactly as
    written; ``conventional`` uses ``E[log D(Y)] + E[log(1 - D(Y_hat))]``.
    The generator loss is ``-E[log D(Y_hat)]`` in both cases.
    """
    real = _scores(scores_real)
    fake = _scores(scores_fake)
    if variant == "verbatim":
        l_d = np.mean(np.log(real)) + np.mean(1.0 - np.log(fake))
    elif variant == "conventional":
        l_d = np.mean(np.log(real)) + np.mean(np.log(1.0 - fake))
    else:
        raise ValueError(f"unknown variant {variant!r}")
    l_g = -np.mean(np.log(fake))
    return float(l_d), float(l_g)


def flow_loss(f_hat, f_gt, mask, cfg: LossConfig = LossConfig()) -> float:
    return cfg.alpha1 * flow_rec_loss(f_hat, f_gt, mask) + cfg.alpha2 * flow_smooth_loss(f_hat)


def inpaint_loss(y_hat, y, scores_fake, cfg: LossConfig = LossConfig()) -> float:
    l_g = -np.mean(np.log(_scores(scores_fake)))
    return cfg.lambda1 * rec_loss(y_hat, y) + cfg.lambda2 * float(l_g)
