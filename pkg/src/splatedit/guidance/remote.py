"""HTTP client for external guidance backends (diffusion services).

Wire format, POST {endpoint}/v1/guide:
  request  {"prompt": str, "step": int, "camera_id": str,
            "image": {"w": int, "h": int, "png_b64": str},
            "mask_png_b64": optional str}
  response {"loss": float,
            "grad": {"w": int, "h": int, "f32_le_b64": str},
            "edited_png_b64": optional str}

The image PNG is 16-bit grayscale with the three channels stacked
vertically (3H x W); the gradient payload is little-endian float32,
row-major, RGB interleaved.
"""

from __future__ import annotations

import base64
import time

import httpx
import numpy as np

from ..errors import GuidanceTransportError
from ..raster.io import png16_bytes, png_bytes


class RemoteGuidance:
    def __init__(self, endpoint: str, timeout: float = 30.0,
                 attempts: int = 3, backoff: float = 0.25,
                 client: httpx.Client | None = None):
        self.endpoint = endpoint.rstrip("/")
        self.timeout = timeout
        self.attempts = attempts
        self.backoff = backoff
        self._client = client or httpx.Client(timeout=timeout)

    def close(self):
        self._client.close()

    def _payload(self, req) -> dict:
        h, w = req.rendering.shape[:2]
        body = {
            "prompt": req.prompt,
            "step": req.step,
            "camera_id": req.camera_id,
            "image": {
                "w": w, "h": h,
                "png_b64": base64.b64encode(png16_bytes(req.rendering)).decode(),
            },
        }
        if req.mask is not None:
            body["mask_png_b64"] = base64.b64encode(
                png_bytes(req.mask.astype(np.float64))).decode()
        return body

    def guide(self, req):
        from . import GuidanceResponse
        body = self._payload(req)
        url = self.endpoint + "/v1/guide"
        last_err = None
        for attempt in range(1, self.attempts + 1):
            try:
                r = self._client.post(url, json=body)
            except httpx.HTTPError as exc:
                last_err = f"network error: {exc}"
            else:
                if r.status_code == 200:
                    return self._parse(req, r)
                last_err = f"HTTP {r.status_code}"
            if attempt < self.attempts:
                time.sleep(self.backoff * (2 ** (attempt - 1)))
        raise GuidanceTransportError(
            f"guidance request failed after {self.attempts} attempts: {last_err}",
            attempts=self.attempts)

    def _parse(self, req, r):
        from . import GuidanceResponse
        h, w = req.rendering.shape[:2]
        try:
            doc = r.json()
            g = doc["grad"]
            raw = base64.b64decode(g["f32_le_b64"])
            if int(g["w"]) != w or int(g["h"]) != h:
                raise KeyError(f"grad dims {g.get('w')}x{g.get('h')} != {w}x{h}")
            grad = np.frombuffer(raw, dtype="<f4")
            if grad.size != h * w * 3:
                raise KeyError(f"grad payload has {grad.size} floats, "
                               f"expected {h * w * 3}")
            loss = float(doc["loss"])
        except (KeyError, ValueError, TypeError) as exc:
            raise GuidanceTransportError(
                f"guidance response schema mismatch: {exc}", attempts=1) from exc
        return GuidanceResponse(grad=grad.reshape(h, w, 3).copy(), loss=loss)
