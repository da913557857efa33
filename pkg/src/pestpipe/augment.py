"""Training-time augmentation: flips, right-angle rotations, center-crop zoom,
bordered shrink, and Mixup.

Every draw comes from an explicit numpy Generator, so a (config, seed) pair
reproduces the augmented stream bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from PIL import Image

LAMBDA_MODE_BETA = "beta"      # lambda ~ Beta(alpha, alpha), the usual reading
LAMBDA_MODE_CAPPED = "capped"  # lambda ~ Uniform(0, alpha), alpha as a cap


@dataclass
class AugmentationConfig:
    hflip_prob: float = 0.5
    vflip_prob: float = 0.5
    rotation_probs: dict[int, float] = field(
        default_factory=lambda: {0: 0.25, 90: 0.25, 180: 0.25, 270: 0.25})
    zoom_crop_fraction: float = 0.8
    shrink_border_fraction: float = 102 / 1024
    scale_mode_probs: dict[str, float] = field(
        default_factory=lambda: {"none": 0.5, "zoom": 0.25, "shrink": 0.25})
    mixup_alpha: float = 0.2
    mixup_enabled: bool = False
    mixup_lambda_mode: str = LAMBDA_MODE_BETA
    seed: int = 0

    def __post_init__(self):
        for p in (self.hflip_prob, self.vflip_prob):
            if not 0 <= p <= 1:
                raise ValueError("flip probabilities must be in [0, 1]")
        if abs(sum(self.rotation_probs.values()) - 1.0) > 1e-9:
            raise ValueError("rotation probabilities must sum to 1")
        if abs(sum(self.scale_mode_probs.values()) - 1.0) > 1e-9:
            raise ValueError("scale mode probabilities must sum to 1")
        for f in (self.zoom_crop_fraction, self.shrink_border_fraction):
            if not 0 < f < 1:
                raise ValueError("fractions must be in (0, 1)")
        if self.mixup_lambda_mode not in (LAMBDA_MODE_BETA, LAMBDA_MODE_CAPPED):
            raise ValueError(f"unknown lambda mode: {self.mixup_lambda_mode}")

    def to_json(self) -> dict:
        return {
            "hflip_prob": self.hflip_prob, "vflip_prob": self.vflip_prob,
            "rotation_probs": {str(k): v for k, v in self.rotation_probs.items()},
            "zoom_crop_fraction": self.zoom_crop_fraction,
            "shrink_border_fraction": self.shrink_border_fraction,
            "scale_mode_probs": dict(self.scale_mode_probs),
            "mixup_alpha": self.mixup_alpha,
            "mixup_enabled": self.mixup_enabled,
            "mixup_lambda_mode": self.mixup_lambda_mode,
            "seed": self.seed,
        }


def apply_geometric(image: np.ndarray, config: AugmentationConfig,
                    rng: np.random.Generator) -> np.ndarray:
    """Independent horizontal flip, vertical flip, and one rotation draw."""
    img = np.asarray(image)
    if img.shape[0] != img.shape[1]:
        raise ValueError(f"expected a square image, got {img.shape[:2]}")
    if rng.random() < config.hflip_prob:
        img = np.fliplr(img)
    if rng.random() < config.vflip_prob:
        img = np.flipud(img)
    angles = sorted(config.rotation_probs)
    probs = [config.rotation_probs[a] for a in angles]
    angle = int(rng.choice(angles, p=probs))
    if angle:
        img = np.rot90(img, k=angle // 90)
    return np.ascontiguousarray(img)


def _resize(img: np.ndarray, side: int) -> np.ndarray:
    squeeze = img.ndim == 3 and img.shape[2] == 1
    pil = Image.fromarray(img[:, :, 0] if squeeze else img)
    out = np.asarray(pil.resize((side, side), Image.BILINEAR))
    return out[:, :, None] if squeeze else out


def zoom_center(image: np.ndarray, fraction: float = 0.8) -> np.ndarray:
    """Crop the central fraction-sized square and enlarge back to full side."""
    img = np.asarray(image)
    side = img.shape[0]
    crop_side = max(1, int(np.floor(fraction * side)))
    off = (side - crop_side) // 2
    cropped = img[off:off + crop_side, off:off + crop_side]
    return _resize(cropped, side)


def shrink_with_border(image: np.ndarray,
                       border_fraction: float = 102 / 1024) -> np.ndarray:
    """Center the image on a black-bordered canvas, then resize back down."""
    img = np.asarray(image)
    side = img.shape[0]
    border = int(round(border_fraction * side))
    if border == 0:
        return img.copy()
    canvas_side = side + 2 * border
    shape = (canvas_side, canvas_side) + img.shape[2:]
    canvas = np.zeros(shape, dtype=img.dtype)
    canvas[border:border + side, border:border + side] = img
    return _resize(canvas, side)


def apply_scale(image: np.ndarray, config: AugmentationConfig,
                rng: np.random.Generator) -> np.ndarray:
    modes = sorted(config.scale_mode_probs)
    probs = [config.scale_mode_probs[m] for m in modes]
    mode = str(rng.choice(modes, p=probs))
    if mode == "zoom":
        return zoom_center(image, config.zoom_crop_fraction)
    if mode == "shrink":
        return shrink_with_border(image, config.shrink_border_fraction)
    return image


def draw_mixup_lambda(alpha: float, rng: np.random.Generator,
                      mode: str = LAMBDA_MODE_BETA) -> float:
    if mode == LAMBDA_MODE_CAPPED:
        return float(rng.uniform(0.0, alpha))
    return float(rng.beta(alpha, alpha))


def mixup(batch_a: tuple[np.ndarray, np.ndarray],
          batch_b: tuple[np.ndarray, np.ndarray],
          alpha: float = 0.2, rng: Optional[np.random.Generator] = None,
          mode: str = LAMBDA_MODE_BETA,
          lambdas: Optional[np.ndarray] = None,
          ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Convex-combine two batches of (images, one-hot labels) pairwise.

    Returns (images, labels, lambdas); the drawn lambdas are kept so a run
    can be audited. `lambdas` forces the weights (testing hook).
    """
    imgs_a, labels_a = batch_a
    imgs_b, labels_b = batch_b
    if imgs_a.shape != imgs_b.shape:
        raise ValueError(f"batch shapes differ: {imgs_a.shape} vs {imgs_b.shape}")
    if labels_a.shape != labels_b.shape:
        raise ValueError("label shapes differ; batches must share the class set")
    n = imgs_a.shape[0]
    if lambdas is None:
        rng = rng or np.random.default_rng()
        lambdas = np.array([draw_mixup_lambda(alpha, rng, mode) for _ in range(n)])
    lam = np.asarray(lambdas, dtype=np.float64)
    lam_img = lam.reshape((n,) + (1,) * (imgs_a.ndim - 1))
    lam_lab = lam.reshape((n, 1))
    images = lam_img * imgs_a.astype(np.float64) + (1 - lam_img) * imgs_b.astype(np.float64)
    labels = lam_lab * labels_a.astype(np.float64) + (1 - lam_lab) * labels_b.astype(np.float64)
    return images, labels, lam


def augment_image(image: np.ndarray, config: AugmentationConfig,
                  rng: np.random.Generator) -> np.ndarray:
    """Geometric transforms then a scale draw, as one reproducible step."""
    return apply_scale(apply_geometric(image, config, rng), config, rng)


def preview_grid(image: np.ndarray, config: AugmentationConfig,
                 rows: int = 3, cols: int = 4, seed: int = 0) -> np.ndarray:
    """Grid of augmented variants of one image (first cell is the original)."""
    rng = np.random.default_rng(seed)
    side = image.shape[0]
    gap = 2
    channels = image.shape[2] if image.ndim == 3 else 1
    grid = np.zeros((rows * side + (rows - 1) * gap,
                     cols * side + (cols - 1) * gap, channels), dtype=np.uint8)
    for i in range(rows):
        for j in range(cols):
            cell = image if (i, j) == (0, 0) else augment_image(image, config, rng)
            if cell.ndim == 2:
                cell = cell[:, :, None]
            y, x = i * (side + gap), j * (side + gap)
            grid[y:y + side, x:x + side] = cell
    return grid.squeeze() if channels == 1 else grid
