"""Synthetic scene rendering, anti-recognition perturbations, and blind
noise-level estimation.

Images are ``(height, width, 3)`` uint8 numpy arrays.  All filters share
one quantization rule (round half away from zero, then clip to 8 bits) so
perturbation records replay byte-exactly.
"""

from __future__ import annotations

import io
import json
from dataclasses import dataclass

import numpy as np
from PIL import Image as PILImage
from scipy import ndimage

from .categories import CATEGORIES, PALETTE
from .geometry import BoundingBox

BLUR_KINDS = ("gaussian", "median", "average")
SHAPES = ("rect", "ellipse", "triangle")

# Normalizes the median absolute deviation of a Gaussian to its sigma.
_MAD_TO_SIGMA = 0.6745


# ---------------------------------------------------------------------------
# scenes


@dataclass(frozen=True)
class ObjectStyle:
    """Shape/color descriptor for one rendered object."""

    shape: str = "rect"
    color: tuple[int, int, int] = (235, 20, 20)

    def __post_init__(self) -> None:
        if self.shape not in SHAPES:
            raise ValueError(f"unknown shape {self.shape!r}")


@dataclass(frozen=True)
class SceneObject:
    label: str
    box: BoundingBox
    style: ObjectStyle


@dataclass(frozen=True)
class Scene:
    """Ground-truth content of a challenge image."""

    width_px: int
    height_px: int
    objects: tuple[SceneObject, ...] = ()

    def __post_init__(self) -> None:
        if self.width_px <= 0 or self.height_px <= 0:
            raise ValueError("scene dimensions must be positive")
        for obj in self.objects:
            if obj.label not in CATEGORIES:
                raise ValueError(f"unknown object label {obj.label!r}")
            b = obj.box
            if b.x_min < 0 or b.y_min < 0 or b.x_max > self.width_px or b.y_max > self.height_px:
                raise ValueError(f"object box {b} exceeds scene bounds")


def styled_object(label: str, box: BoundingBox, shape: str = "rect") -> SceneObject:
    """Scene object rendered in the category's palette color."""
    return SceneObject(label=label, box=box, style=ObjectStyle(shape=shape, color=PALETTE[label]))


def _quantize(arr: np.ndarray) -> np.ndarray:
    """Round half away from zero, clip to [0, 255], cast to uint8."""
    rounded = np.where(arr >= 0, np.floor(arr + 0.5), np.ceil(arr - 0.5))
    return np.clip(rounded, 0, 255).astype(np.uint8)


def _background(width: int, height: int, seed: int) -> np.ndarray:
    """Smooth two-way gradient, all channels inside roughly 140..180.

    The gradient is bilinear, so its finest-scale diagonal detail is zero
    up to quantization and it barely registers on the noise estimator.
    """
    rng = np.random.default_rng(seed)
    xs = (np.arange(width) + 0.5) / width
    ys = (np.arange(height) + 0.5) / height
    x = xs[None, :]
    y = ys[:, None]
    offset = float(rng.integers(-6, 7))
    r = 148.0 + 24.0 * x + 0.0 * y + offset
    g = 150.0 + 10.0 * x + 8.0 * y + offset
    b = 172.0 - 20.0 * y + 0.0 * x + offset
    return _quantize(np.stack(np.broadcast_arrays(r, g, b), axis=-1))


def _shape_mask(obj: SceneObject, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Boolean mask of pixel centers covered by the object's shape."""
    b = obj.box
    x = xs[None, :]
    y = ys[:, None]
    inside_box = (x >= b.x_min) & (x <= b.x_max) & (y >= b.y_min) & (y <= b.y_max)
    if obj.style.shape == "rect":
        return inside_box
    if obj.style.shape == "ellipse":
        cx, cy = (b.x_min + b.x_max) / 2, (b.y_min + b.y_max) / 2
        rx, ry = b.width / 2, b.height / 2
        return inside_box & (((x - cx) / rx) ** 2 + ((y - cy) / ry) ** 2 <= 1.0)
    # triangle: base along the bottom edge, apex centered on the top edge
    apex_x = (b.x_min + b.x_max) / 2
    with np.errstate(divide="ignore", invalid="ignore"):
        half_width = (b.x_max - b.x_min) / 2 * (y - b.y_min) / b.height
    return inside_box & (np.abs(x - apex_x) <= half_width)


def render_scene(scene: Scene, seed: int = 0) -> np.ndarray:
    """Deterministic raster of a scene: textured background, painter's order."""
    img = _background(scene.width_px, scene.height_px, seed)
    xs = np.arange(scene.width_px) + 0.5
    ys = np.arange(scene.height_px) + 0.5
    for obj in scene.objects:
        mask = _shape_mask(obj, xs, ys)
        img[mask] = np.array(obj.style.color, dtype=np.uint8)
    return img


# ---------------------------------------------------------------------------
# perturbations


def add_gaussian_noise(image: np.ndarray, sigma: float, seed: int) -> np.ndarray:
    """Add iid per-pixel per-channel Gaussian noise, clamp to 8 bits."""
    if sigma < 0:
        raise ValueError(f"sigma must be >= 0, got {sigma}")
    if sigma == 0:
        return image.copy()
    rng = np.random.default_rng(seed)
    noisy = image.astype(np.float64) + rng.normal(0.0, sigma, size=image.shape)
    return _quantize(noisy)


def blur(image: np.ndarray, kind: str, param: float) -> np.ndarray:
    """Blur with clamp-to-edge handling; constant images pass unchanged."""
    if kind == "gaussian":
        if param <= 0:
            raise ValueError(f"gaussian sigma must be positive, got {param}")
        out = ndimage.gaussian_filter(image.astype(np.float64), sigma=(param, param, 0), mode="nearest")
        return _quantize(out)
    if kind in ("median", "average"):
        k = int(param)
        if k != param or k % 2 == 0 or not 3 <= k <= 31:
            raise ValueError(f"{kind} blur needs an odd integer kernel in [3, 31], got {param}")
        if kind == "median":
            return ndimage.median_filter(image, size=(k, k, 1), mode="nearest")
        out = ndimage.uniform_filter(image.astype(np.float64), size=(k, k, 1), mode="nearest")
        return _quantize(out)
    raise ValueError(f"unknown blur kind {kind!r}")


def adjust_brightness(image: np.ndarray, delta: float) -> np.ndarray:
    return _quantize(image.astype(np.float64) + delta)


def adjust_contrast(image: np.ndarray, gain: float) -> np.ndarray:
    if gain <= 0:
        raise ValueError(f"contrast gain must be positive, got {gain}")
    return _quantize((image.astype(np.float64) - 128.0) * gain + 128.0)


def estimate_noise_sigma(image: np.ndarray) -> float:
    """Blind estimate of the average per-channel noise standard deviation.

    Computes the finest-scale diagonal Haar detail on non-overlapping 2x2
    blocks, takes the robust median estimate ``median(|d|) / 0.6745`` per
    channel, and averages across the three channels.  For iid Gaussian
    noise of standard deviation sigma the estimate is unbiased.
    """
    if image.ndim != 3 or image.shape[2] != 3:
        raise ValueError("expected an (H, W, 3) image")
    h, w = image.shape[:2]
    if h < 2 or w < 2:
        raise ValueError("image must be at least 2x2")
    h2, w2 = (h // 2) * 2, (w // 2) * 2
    x = image[:h2, :w2].astype(np.float64)
    p00 = x[0::2, 0::2]
    p01 = x[0::2, 1::2]
    p10 = x[1::2, 0::2]
    p11 = x[1::2, 1::2]
    d = (p00 - p01 - p10 + p11) / 2.0
    sigmas = np.median(np.abs(d), axis=(0, 1)) / _MAD_TO_SIGMA
    return float(np.mean(sigmas))


def classify_perturbed(sigma_hat: float, threshold: float = 10.0) -> bool:
    """Flag an image as deliberately perturbed when sigma exceeds threshold."""
    if sigma_hat < 0:
        raise ValueError("sigma_hat must be >= 0")
    return sigma_hat > threshold


# ---------------------------------------------------------------------------
# augmentation pipeline


@dataclass(frozen=True)
class PerturbationConfig:
    """Per-op probabilities and parameter ranges for the pipeline.

    Ops are applied in fixed order: brightness, contrast, noise, blur.
    """

    p_brightness: float = 0.3
    brightness_delta: tuple[float, float] = (-40.0, 40.0)
    p_contrast: float = 0.3
    contrast_gain: tuple[float, float] = (0.7, 1.3)
    p_noise: float = 0.3
    noise_sigma: tuple[float, float] = (0.0, 0.2 * 255.0)
    p_blur: float = 0.3
    blur_kinds: tuple[str, ...] = BLUR_KINDS
    gaussian_sigma: tuple[float, float] = (0.5, 5.0)
    blur_k: tuple[int, int] = (5, 17)

    def __post_init__(self) -> None:
        for p in (self.p_brightness, self.p_contrast, self.p_noise, self.p_blur):
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"op probability must be in [0, 1], got {p}")
        for lo, hi in (self.brightness_delta, self.contrast_gain, self.noise_sigma, self.gaussian_sigma):
            if lo > hi:
                raise ValueError(f"malformed range ({lo}, {hi})")
        klo, khi = self.blur_k
        if klo > khi or klo % 2 == 0 or khi % 2 == 0 or klo < 3 or khi > 31:
            raise ValueError(f"blur kernel range must be odd within [3, 31], got {self.blur_k}")
        for kind in self.blur_kinds:
            if kind not in BLUR_KINDS:
                raise ValueError(f"unknown blur kind {kind!r}")


@dataclass(frozen=True)
class PerturbationRecord:
    """Ordered log of applied ops; replays byte-exactly on the original."""

    ops: tuple[tuple[str, dict], ...] = ()
    total_sigma: float = 0.0

    def to_dict(self) -> dict:
        return {
            "ops": [{"op": name, **params} for name, params in self.ops],
            "total_sigma": self.total_sigma,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "PerturbationRecord":
        ops = []
        for entry in data.get("ops", []):
            params = {k: v for k, v in entry.items() if k != "op"}
            ops.append((entry["op"], params))
        return cls(ops=tuple(ops), total_sigma=float(data.get("total_sigma", 0.0)))


def noise_only_record(sigma: float, seed: int) -> PerturbationRecord:
    """Record equivalent to a pipeline that only injects Gaussian noise."""
    if sigma <= 0:
        return PerturbationRecord()
    return PerturbationRecord(ops=(("noise", {"sigma": float(sigma), "seed": int(seed)}),), total_sigma=float(sigma))


def _sample_odd(rng: np.random.Generator, lo: int, hi: int) -> int:
    return int(lo + 2 * rng.integers(0, (hi - lo) // 2 + 1))


def augment_pipeline(
    image: np.ndarray, config: PerturbationConfig, seed: int
) -> tuple[np.ndarray, PerturbationRecord]:
    """Apply an independently sampled subset of ops in fixed order."""
    rng = np.random.default_rng(seed)
    ops: list[tuple[str, dict]] = []
    out = image
    total_sigma = 0.0

    if rng.random() < config.p_brightness:
        delta = float(rng.uniform(*config.brightness_delta))
        out = adjust_brightness(out, delta)
        ops.append(("brightness", {"delta": delta}))
    if rng.random() < config.p_contrast:
        gain = float(rng.uniform(*config.contrast_gain))
        out = adjust_contrast(out, gain)
        ops.append(("contrast", {"gain": gain}))
    if rng.random() < config.p_noise:
        sigma = float(rng.uniform(*config.noise_sigma))
        noise_seed = int(rng.integers(0, 2**32))
        out = add_gaussian_noise(out, sigma, noise_seed)
        ops.append(("noise", {"sigma": sigma, "seed": noise_seed}))
        total_sigma = sigma
    if rng.random() < config.p_blur:
        kind = str(rng.choice(config.blur_kinds))
        if kind == "gaussian":
            param: float = float(rng.uniform(*config.gaussian_sigma))
        else:
            param = _sample_odd(rng, *config.blur_k)
        out = blur(out, kind, param)
        ops.append(("blur", {"kind": kind, "param": param}))

    if not ops:
        out = image.copy()
    return out, PerturbationRecord(ops=tuple(ops), total_sigma=total_sigma)


def apply_record(image: np.ndarray, record: PerturbationRecord) -> np.ndarray:
    """Replay a perturbation record on an image."""
    out = image
    for name, params in record.ops:
        if name == "brightness":
            out = adjust_brightness(out, params["delta"])
        elif name == "contrast":
            out = adjust_contrast(out, params["gain"])
        elif name == "noise":
            out = add_gaussian_noise(out, params["sigma"], params["seed"])
        elif name == "blur":
            out = blur(out, params["kind"], params["param"])
        else:
            raise ValueError(f"unknown op {name!r} in perturbation record")
    if not record.ops:
        out = image.copy()
    return out


# ---------------------------------------------------------------------------
# PNG + sidecar I/O


def encode_png(image: np.ndarray) -> bytes:
    buf = io.BytesIO()
    PILImage.fromarray(image, mode="RGB").save(buf, format="PNG")
    return buf.getvalue()


def decode_png(data: bytes) -> np.ndarray:
    img = PILImage.open(io.BytesIO(data)).convert("RGB")
    return np.asarray(img, dtype=np.uint8)


def write_png(path, image: np.ndarray) -> None:
    PILImage.fromarray(image, mode="RGB").save(path, format="PNG")


def read_png(path) -> np.ndarray:
    return np.asarray(PILImage.open(path).convert("RGB"), dtype=np.uint8)


def write_image_with_record(path, image: np.ndarray, record: PerturbationRecord) -> None:
    """PNG plus a ``<image>.perturb.json`` sidecar carrying the record."""
    write_png(path, image)
    with open(f"{path}.perturb.json", "w", encoding="utf-8") as fh:
        json.dump(record.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_record_sidecar(image_path) -> PerturbationRecord:
    with open(f"{image_path}.perturb.json", encoding="utf-8") as fh:
        return PerturbationRecord.from_dict(json.load(fh))
