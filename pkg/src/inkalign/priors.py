"""Prior stages producing the shaded-grayscale and rough-colored inputs.

Production deployments bind real external models over HTTP; everything here
that runs locally is a synthetic stand-in that keeps training and tests
self-contained. All priors preserve input dimensions; the central
``check_dims`` guard rejects violations before anything reaches the
generator.
"""

from __future__ import annotations

import io
from dataclasses import dataclass
from typing import Protocol, runtime_checkable

import numpy as np

from . import colorspace
from .errors import ContractViolation, PriorContractError, PriorTimeoutError, PriorTransportError
from .hints import HintSet, save_hints
from .imagetypes import ImagePlane, ImageStack


@runtime_checkable
class ShadingPrior(Protocol):
    """Black-and-white page -> shaded grayscale rendering (same dims)."""

    name: str

    def __call__(self, page: ImagePlane) -> ImagePlane: ...


@runtime_checkable
class RoughColorPrior(Protocol):
    """Black-and-white page (+ optional hints / reference) -> rough color."""

    name: str

    def __call__(
        self,
        page: ImagePlane,
        hints: HintSet | None = None,
        reference: ImageStack | None = None,
    ) -> ImageStack: ...


def check_dims(produced, page, stage: str):
    if (produced.height, produced.width) != (page.height, page.width):
        raise PriorContractError(
            f"{stage} prior returned {produced.height}x{produced.width} "
            f"for a {page.height}x{page.width} page"
        )
    return produced


@dataclass(frozen=True)
class DegradationConfig:
    """Controls the synthetic corruption applied to ground truth during
    training so the model learns to repair poorly colorized inputs."""

    palette_size: int = 64
    chroma_downsample: int = 4
    patch_perturb_count: int = 4
    patch_perturb_magnitude: float = 10.0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.palette_size < 2:
            raise ContractViolation("palette_size must be >= 2")
        if self.chroma_downsample < 1 or self.patch_perturb_count < 0:
            raise ContractViolation("factors must be >= 1 and counts >= 0")
        if self.patch_perturb_magnitude < 0:
            raise ContractViolation("perturb magnitude must be nonnegative")


class IdentityShading:
    """Training-time shading stand-in: the grayscale transform is already
    the shaded input, so this passes the plane through untouched."""

    name = "identity-shading"

    def __call__(self, page: ImagePlane) -> ImagePlane:
        return page


def identity_shading(page: ImagePlane) -> ImagePlane:
    return IdentityShading()(page)


def _quantize_chroma(ab: np.ndarray, palette_size: int, rng: np.random.Generator) -> np.ndarray:
    """Snap (N, 2) chroma samples to a palette drawn from the image itself."""
    n = ab.shape[0]
    if palette_size >= n:
        return ab
    centers = ab[rng.choice(n, size=palette_size, replace=False)]
    out = np.empty_like(ab)
    # chunked nearest-center assignment keeps memory flat on large pages
    for start in range(0, n, 4096):
        chunk = ab[start : start + 4096]
        d2 = ((chunk[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        out[start : start + 4096] = centers[d2.argmin(axis=1)]
    return out


def synthetic_rough_color(truth: ImageStack, cfg: DegradationConfig) -> ImageStack:
    """Degrade ground-truth color into a plausible rough colorization.

    Chroma is block-averaged (``chroma_downsample``), snapped to a
    self-derived palette, and shifted inside random rectangles; luminance is
    retained from the input. Deterministic under ``cfg.seed``.
    """
    truth.require_space("sRGB")
    rng = np.random.default_rng(cfg.seed)
    lab = colorspace.rgb_to_lab(truth).data
    h, w = lab.shape[:2]
    lum = lab[..., 0].copy()
    ab = lab[..., 1:].copy()

    f = cfg.chroma_downsample
    if f > 1:
        bh, bw = h // f, w // f
        if bh and bw:
            core = ab[: bh * f, : bw * f].reshape(bh, f, bw, f, 2).mean(axis=(1, 3))
            ab[: bh * f, : bw * f] = np.repeat(np.repeat(core, f, axis=0), f, axis=1)

    flat = ab.reshape(-1, 2)
    flat = _quantize_chroma(flat, cfg.palette_size, rng)
    ab = flat.reshape(h, w, 2)

    for _ in range(cfg.patch_perturb_count):
        ph = int(rng.integers(max(1, h // 8), max(2, h // 2)))
        pw = int(rng.integers(max(1, w // 8), max(2, w // 2)))
        top = int(rng.integers(0, max(1, h - ph + 1)))
        left = int(rng.integers(0, max(1, w - pw + 1)))
        shift = rng.uniform(-cfg.patch_perturb_magnitude, cfg.patch_perturb_magnitude, size=2)
        ab[top : top + ph, left : left + pw] += shift

    ab = np.clip(ab, -128.0, 127.0)
    degraded = np.concatenate([lum[..., None], ab], axis=2)
    rgb = colorspace.lab_to_rgb(ImageStack(degraded, space_tag="CIELAB"))
    # re-impose the input luminance after gamut clipping
    lab2 = colorspace.rgb_to_lab(rgb).data
    lab2[..., 0] = lum
    return colorspace.lab_to_rgb(ImageStack(lab2, space_tag="CIELAB"))


class SyntheticRoughColor:
    """Training-time rough-color stand-in over ground-truth color pages."""

    name = "synthetic-rough-color"

    def __init__(self, cfg: DegradationConfig):
        self.cfg = cfg

    def __call__(self, truth: ImageStack) -> ImageStack:
        return synthetic_rough_color(truth, self.cfg)


class HintSplatRoughColor:
    """Inference-time rough-color stand-in when no external model is bound.

    Starts from the page's own luminance, applies a weak global tint from
    the reference image's mean chroma, then splats each hint's chroma inside
    its radius with a soft falloff. Crude on purpose: the alignment model
    downstream is what turns this into a clean result.
    """

    name = "hint-splat"

    def __call__(
        self,
        page: ImagePlane,
        hints: HintSet | None = None,
        reference: ImageStack | None = None,
    ) -> ImageStack:
        gray = np.clip(np.asarray(page.data, dtype=np.float64), 0.0, 1.0)
        base = np.repeat(gray[..., None], 3, axis=2)
        lab = colorspace.rgb_to_lab(ImageStack(base)).data
        h, w = lab.shape[:2]

        if reference is not None:
            ref_lab = colorspace.rgb_to_lab(reference.require_space("sRGB")).data
            mean_ab = ref_lab[..., 1:].reshape(-1, 2).mean(axis=0)
            lab[..., 1:] += 0.5 * mean_ab

        if hints is not None:
            if (hints.height, hints.width) != (h, w):
                raise ContractViolation(
                    f"hints sized {hints.width}x{hints.height} do not match the "
                    f"{w}x{h} page"
                )
            yy, xx = np.mgrid[0:h, 0:w]
            for hint in hints.hints:
                color = np.array([[list(hint.color)]], dtype=np.float64)
                hint_ab = colorspace.rgb_to_lab(ImageStack(color)).data[0, 0, 1:]
                d2 = (yy - hint.y) ** 2 + (xx - hint.x) ** 2
                weight = np.exp(-d2 / (2.0 * hint.radius**2))
                lab[..., 1] = lab[..., 1] * (1 - weight) + hint_ab[0] * weight
                lab[..., 2] = lab[..., 2] * (1 - weight) + hint_ab[1] * weight

        lab[..., 1:] = np.clip(lab[..., 1:], -128.0, 127.0)
        return colorspace.lab_to_rgb(ImageStack(lab, space_tag="CIELAB"))


# --- external prior adapter ---------------------------------------------------


def _encode_png(arr: np.ndarray) -> bytes:
    from PIL import Image

    scaled = np.clip(np.asarray(arr, dtype=np.float64) * 255.0 + 0.5, 0, 255).astype(np.uint8)
    img = Image.fromarray(scaled)
    buf = io.BytesIO()
    img.save(buf, format="PNG")
    return buf.getvalue()


def _decode_png(payload: bytes) -> np.ndarray:
    from PIL import Image

    try:
        img = Image.open(io.BytesIO(payload))
        img.load()
    except Exception as exc:
        raise PriorContractError(f"endpoint returned an undecodable image: {exc}") from exc
    return np.asarray(img, dtype=np.float64) / 255.0


class HttpPriorAdapter:
    """Bridges a deployed prior model over the wire contract.

    Request: multipart POST with one losslessly compressed raster under
    ``image`` and, for rough-color priors, an optional ``hints`` JSON field.
    Response: one raster image of identical dimensions.
    """

    def __init__(self, endpoint: str, role: str, timeout: float = 30.0):
        if role not in ("shading", "rough_color"):
            raise ContractViolation(f"unknown prior role {role!r}")
        self.endpoint = endpoint
        self.role = role
        self.timeout = timeout
        self.name = f"http-{role}"

    def _post(self, image: np.ndarray, hints: HintSet | None, reference: ImageStack | None):
        import httpx

        files = {"image": ("image.png", _encode_png(image), "image/png")}
        if reference is not None:
            files["reference"] = ("reference.png", _encode_png(reference.data), "image/png")
        data = {}
        if hints is not None:
            data["hints"] = save_hints(hints)
        try:
            response = httpx.post(
                self.endpoint, files=files, data=data, timeout=self.timeout
            )
        except httpx.TimeoutException as exc:
            raise PriorTimeoutError(f"{self.role} prior timed out: {exc}") from exc
        except httpx.TransportError as exc:
            raise PriorTransportError(f"{self.role} prior unreachable: {exc}") from exc
        if response.status_code != 200:
            raise PriorContractError(
                f"{self.role} prior answered HTTP {response.status_code}"
            )
        return _decode_png(response.content)

    def __call__(self, page: ImagePlane, hints: HintSet | None = None,
                 reference: ImageStack | None = None):
        arr = self._post(np.asarray(page.data, dtype=np.float64), hints, reference)
        if self.role == "shading":
            if arr.ndim == 3:
                arr = arr.mean(axis=2)
            produced = ImagePlane(np.clip(arr, 0.0, 1.0))
        else:
            if arr.ndim == 2:
                arr = np.repeat(arr[..., None], 3, axis=2)
            if arr.ndim == 3 and arr.shape[2] == 4:
                arr = arr[..., :3]
            produced = ImageStack(np.clip(arr, 0.0, 1.0))
        return check_dims(produced, page, self.role)


def external_prior_adapter(endpoint: str, role: str, timeout: float = 30.0) -> HttpPriorAdapter:
    """Bind a deployed prior model endpoint as a prior instance."""
    return HttpPriorAdapter(endpoint, role, timeout)
