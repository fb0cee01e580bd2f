"""Editing-guidance contract: image in, image-space gradient out.

Every backend consumes a GuidanceRequest and returns a GuidanceResponse
whose gradient matches the request's shape. Requests carry the rendering
quantized to 16 bits: that is exactly what the remote wire transports, so
in-process and remote backends see bit-identical inputs, and gradients are
float32 to match the wire's payload precision.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ValidationError
from ..raster.io import quantize16


@dataclass
class GuidanceRequest:
    rendering: np.ndarray           # (H,W,3) float in [0,1]
    camera_id: str
    prompt: str
    step: int
    mask: np.ndarray | None = None  # (H,W) bool


@dataclass
class GuidanceResponse:
    grad: np.ndarray                # (H,W,3) float32 dL/dColor
    loss: float
    edited: np.ndarray | None = None


def build_request(rendering: np.ndarray, camera_id: str, prompt: str,
                  step: int, mask: np.ndarray | None = None) -> GuidanceRequest:
    img = quantize16(rendering)
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != img.shape[:2]:
            raise ValidationError(
                f"mask shape {mask.shape} != image {img.shape[:2]}")
    return GuidanceRequest(img, camera_id, prompt, int(step), mask)


def validate_response(req: GuidanceRequest, resp: GuidanceResponse) -> GuidanceResponse:
    """Boundary check: shape match and finiteness, before the optimizer."""
    grad = np.asarray(resp.grad)
    if grad.shape != req.rendering.shape:
        raise ValidationError(
            f"guidance grad shape {grad.shape} != request {req.rendering.shape}")
    if not np.isfinite(grad).all():
        raise ValidationError("guidance grad contains NaN/Inf")
    if not np.isfinite(resp.loss):
        raise ValidationError("guidance loss is not finite")
    resp.grad = grad.astype(np.float32, copy=False)
    return resp


from .target import NoisyTargetGuidance, TargetImageGuidance  # noqa: E402
from .remote import RemoteGuidance  # noqa: E402

__all__ = ["GuidanceRequest", "GuidanceResponse", "build_request",
           "validate_response", "TargetImageGuidance", "NoisyTargetGuidance",
           "RemoteGuidance"]
