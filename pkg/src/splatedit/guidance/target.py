"""In-process guidance backends built around per-view target images.

The deterministic backend is a plain masked MSE against a fixed target.
The noisy variant perturbs the target with fresh spatially correlated
blotches every step, standing in for the randomness of generative guidance
while staying seed-reproducible.
"""

from __future__ import annotations

import zlib

import numpy as np

from ..errors import ValidationError


def _masked(diff: np.ndarray, mask):
    if mask is None:
        return diff
    return diff * mask[:, :, None]


class TargetImageGuidance:
    """L = sum((render - target)^2) over (masked) pixels; grad = 2*diff."""

    def __init__(self, targets: dict[str, np.ndarray]):
        self.targets = {k: np.asarray(v, dtype=np.float64)
                        for k, v in targets.items()}

    def target_for(self, req):
        if req.camera_id not in self.targets:
            raise ValidationError(f"no target image for camera '{req.camera_id}'")
        t = self.targets[req.camera_id]
        if t.shape != req.rendering.shape:
            raise ValidationError(
                f"target shape {t.shape} != rendering {req.rendering.shape}")
        return t

    def guide(self, req):
        from . import GuidanceResponse
        diff = _masked(req.rendering - self.target_for(req), req.mask)
        return GuidanceResponse(
            grad=(2.0 * diff).astype(np.float32),
            loss=float(np.sum(diff * diff)))


def blotch_noise(rng: np.random.Generator, height: int, width: int,
                 sigma: float, blotch_px: int = 8) -> np.ndarray:
    """Zero-mean spatially correlated noise: a coarse gaussian grid
    bilinearly upsampled to (H, W, 3)."""
    gh = max(height // blotch_px, 1) + 1
    gw = max(width // blotch_px, 1) + 1
    grid = rng.normal(0.0, sigma, (gh, gw, 3))
    ys = np.linspace(0, gh - 1, height)
    xs = np.linspace(0, gw - 1, width)
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    y1 = np.minimum(y0 + 1, gh - 1)
    x1 = np.minimum(x0 + 1, gw - 1)
    fy = (ys - y0)[:, None, None]
    fx = (xs - x0)[None, :, None]
    top = grid[y0][:, x0] * (1 - fx) + grid[y0][:, x1] * fx
    bot = grid[y1][:, x0] * (1 - fx) + grid[y1][:, x1] * fx
    return top * (1 - fy) + bot * fy


class NoisyTargetGuidance(TargetImageGuidance):
    """Target plus per-step blotch noise, clipped back to [0,1].

    The draw is a pure function of (seed, step, camera id), so identical
    requests always see identical noise.
    """

    def __init__(self, targets, sigma: float, seed: int = 0, blotch_px: int = 8):
        super().__init__(targets)
        self.sigma = float(sigma)
        self.seed = int(seed)
        self.blotch_px = int(blotch_px)

    def _rng(self, req):
        cam_key = zlib.crc32(req.camera_id.encode("utf-8"))
        return np.random.default_rng(
            np.random.SeedSequence([self.seed, req.step, cam_key]))

    def noisy_target(self, req):
        t = self.target_for(req)
        if self.sigma == 0.0:
            return t
        h, w = t.shape[:2]
        noise = blotch_noise(self._rng(req), h, w, self.sigma, self.blotch_px)
        return np.clip(t + noise, 0.0, 1.0)

    def guide(self, req):
        from . import GuidanceResponse
        noisy = self.noisy_target(req)
        diff = _masked(req.rendering - noisy, req.mask)
        return GuidanceResponse(
            grad=(2.0 * diff).astype(np.float32),
            loss=float(np.sum(diff * diff)),
            edited=noisy)
