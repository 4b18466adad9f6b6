"""Weak/strong augmentation pair for the consistency-training scheme.

Synthetic mode operates on feature vectors: the weak view adds small
Gaussian noise, the strong view adds larger noise and then zeroes a fixed
fraction of coordinates.  The expected squared perturbation of the strong
view therefore dominates the weak one for any valid policy.  Image-mode
policies are carried as an opaque parameter dict for external adapters
(randomized crop-and-flip for weak, compound higher-magnitude photometric
and geometric distortion for strong); adapters must preserve the same
strong-dominance property on pixel MSE.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError


@dataclass(frozen=True)
class AugmentationPolicy:
    """Augmentation parameters tagged with the view they produce."""

    kind: str  # "weak" or "strong"
    noise_std_weak: float = 0.1
    noise_std_strong: float = 0.5
    mask_fraction_strong: float = 0.25
    image_params: dict | None = None

    def __post_init__(self):
        if self.kind not in ("weak", "strong"):
            raise ConfigurationError(f"unknown augmentation kind {self.kind!r}")
        if not 0 <= self.noise_std_weak <= self.noise_std_strong:
            raise ConfigurationError(
                "need noise_std_strong >= noise_std_weak >= 0, got "
                f"{self.noise_std_strong} < {self.noise_std_weak}"
            )
        if not 0 <= self.mask_fraction_strong < 1:
            raise ConfigurationError("mask_fraction_strong must be in [0, 1)")

    def as_kind(self, kind: str) -> "AugmentationPolicy":
        return AugmentationPolicy(kind, self.noise_std_weak, self.noise_std_strong,
                                  self.mask_fraction_strong, self.image_params)


def weak_augment(x: np.ndarray, policy: AugmentationPolicy,
                 rng: np.random.Generator) -> np.ndarray:
    """Weak view: additive Gaussian noise of std ``noise_std_weak``.

    Accepts a single vector ``(F,)`` or a batch ``(n, F)``; the shape is
    preserved.
    """
    if policy.kind != "weak":
        raise ConfigurationError("weak_augment requires a policy with kind='weak'")
    x = np.asarray(x, dtype=np.float64)
    if policy.noise_std_weak == 0:
        return x.copy()
    return x + policy.noise_std_weak * rng.standard_normal(x.shape)


def strong_augment(x: np.ndarray, policy: AugmentationPolicy,
                   rng: np.random.Generator) -> np.ndarray:
    """Strong view: larger Gaussian noise, then a random coordinate mask.

    Exactly ``floor(mask_fraction_strong * F)`` coordinates per sample are
    zeroed, chosen uniformly without replacement.
    """
    if policy.kind != "strong":
        raise ConfigurationError("strong_augment requires a policy with kind='strong'")
    x = np.asarray(x, dtype=np.float64)
    out = x.copy()
    if policy.noise_std_strong > 0:
        out = out + policy.noise_std_strong * rng.standard_normal(x.shape)
    f = x.shape[-1]
    n_mask = int(policy.mask_fraction_strong * f)
    if n_mask > 0:
        flat = out.reshape(-1, f)
        for row in flat:
            row[rng.choice(f, size=n_mask, replace=False)] = 0.0
        out = flat.reshape(x.shape)
    return out
