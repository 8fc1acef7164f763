"""Dataset manifests, PNG / NFM1 codecs and normal-map handling."""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .renderer import Camera

NFM_MAGIC = b"NFM1"


class DataError(ValueError):
    """Malformed dataset file or manifest."""


# ------------------------------------------------------------------ codecs
def save_nfm(path, values: np.ndarray):
    arr = np.asarray(values, dtype="<f4")
    if arr.ndim == 2:
        arr = arr[..., None]
    h, w, c = arr.shape
    if c not in (1, 3):
        raise DataError(f"{path}: NFM1 channel count must be 1 or 3, got {c}")
    with open(path, "wb") as fh:
        fh.write(NFM_MAGIC + struct.pack("<III", w, h, c) + np.ascontiguousarray(arr).tobytes())


def load_nfm(path) -> np.ndarray:
    """(H, W, C) float32 array from an NFM1 file."""
    raw = Path(path).read_bytes()
    if raw[:4] != NFM_MAGIC:
        raise DataError(f"{path}: bad magic {raw[:4]!r}, expected {NFM_MAGIC!r}")
    if len(raw) < 16:
        raise DataError(f"{path}: header truncated")
    w, h, c = struct.unpack("<III", raw[4:16])
    if c not in (1, 3):
        raise DataError(f"{path}: channel count must be 1 or 3, got {c}")
    need = w * h * c * 4
    if len(raw) - 16 < need:
        raise DataError(f"{path}: payload has {len(raw) - 16} bytes, expected {need}")
    return np.frombuffer(raw, dtype="<f4", count=w * h * c, offset=16).reshape(h, w, c).astype(np.float32)


def save_png(path, values: np.ndarray):
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim == 3 and arr.shape[2] == 1:
        arr = arr[..., 0]
    q = np.round(np.clip(arr, 0.0, 1.0) * 255.0).astype(np.uint8)
    Image.fromarray(q).save(path)


def load_png(path) -> np.ndarray:
    """(H, W, C) float32 in [0, 1]; C is 1 for greyscale files and 3 otherwise."""
    with Image.open(path) as im:
        if im.mode in ("L", "I", "I;16", "1"):
            arr = np.asarray(im.convert("L"), dtype=np.float32)[..., None]
        else:
            arr = np.asarray(im.convert("RGB"), dtype=np.float32)
    return arr / 255.0


def load_image(path) -> np.ndarray:
    path = Path(path)
    if path.suffix.lower() == ".nfm":
        arr = load_nfm(path)
    elif path.suffix.lower() == ".png":
        arr = load_png(path)
    else:
        raise DataError(f"{path}: unsupported image format {path.suffix!r}")
    return np.clip(arr, 0.0, 1.0)


def save_image(path, values):
    if Path(path).suffix.lower() == ".nfm":
        save_nfm(path, values)
    else:
        save_png(path, values)


def decode_normal_pixels(pixels) -> np.ndarray:
    """8-bit normal encoding: n = pixel / 127.5 - 1, then renormalised."""
    n = np.asarray(pixels, dtype=np.float64) / 127.5 - 1.0
    norm = np.linalg.norm(n, axis=-1, keepdims=True)
    return np.where(norm > 0, n / np.where(norm > 0, norm, 1.0), 0.0)


def encode_normal_pixels(normals) -> np.ndarray:
    return np.round(np.clip((np.asarray(normals) + 1.0) * 127.5, 0, 255)).astype(np.uint8)


def load_normal_map(path, mask=None) -> np.ndarray:
    """Unit normals (H, W, 3); fails if a masked pixel is far from unit length before renormalising."""
    path = Path(path)
    if path.suffix.lower() == ".nfm":
        n = load_nfm(path).astype(np.float64)
    elif path.suffix.lower() == ".png":
        with Image.open(path) as im:
            n = np.asarray(im.convert("RGB"), dtype=np.float64) / 127.5 - 1.0
    else:
        raise DataError(f"{path}: unsupported normal-map format {path.suffix!r}")
    if n.shape[-1] != 3:
        raise DataError(f"{path}: normal map needs 3 channels, got {n.shape[-1]}")
    norm = np.linalg.norm(n, axis=-1)
    valid = np.ones(norm.shape, bool) if mask is None else np.asarray(mask).reshape(norm.shape) > 0.5
    bad = valid & ((norm < 0.99) | (norm > 1.01))
    if bad.any():
        y, x = np.argwhere(bad)[0]
        raise DataError(f"{path}: normal at pixel ({x}, {y}) has length {norm[y, x]:.4f}")
    safe = np.where(norm > 0, norm, 1.0)[..., None]
    out = np.where(valid[..., None], n / safe, 0.0)
    return out.astype(np.float32)


def normal_to_world(nmap: np.ndarray, camera: Camera) -> np.ndarray:
    return (np.asarray(nmap, dtype=np.float64) @ camera.rotation.T).astype(np.float32)


# ---------------------------------------------------------- decomposition
@dataclass
class DecompositionReport:
    max_err: float
    mean_err: float
    tol: float

    @property
    def passed(self) -> bool:
        return self.max_err <= self.tol


def validate_decomposition(image, albedo, shade, tol: float = 2.0 / 255.0) -> DecompositionReport:
    """Check image = albedo * shade per pixel (shade may be single-channel)."""
    image = np.asarray(image, dtype=np.float64)
    albedo = np.asarray(albedo, dtype=np.float64)
    shade = np.asarray(shade, dtype=np.float64)
    if image.shape != albedo.shape or shade.shape[:2] != image.shape[:2]:
        raise DataError(f"decomposition shapes differ: image {image.shape}, albedo {albedo.shape}, "
                        f"shade {shade.shape}")
    err = np.abs(image - albedo * shade)
    return DecompositionReport(float(err.max()), float(err.mean()), tol)


# ---------------------------------------------------------------- manifest
@dataclass
class ViewRecord:
    index: int
    camera: Camera
    image: np.ndarray  # (H, W, 3)
    albedo: np.ndarray | None
    shade: np.ndarray | None
    normal: np.ndarray | None  # world space, unit on mask pixels
    mask: np.ndarray | None  # (H, W) in {0, 1}
    is_input: bool
    paths: dict = field(default_factory=dict)

    @property
    def height(self) -> int:
        return self.image.shape[0]

    @property
    def width(self) -> int:
        return self.image.shape[1]


@dataclass
class SceneManifest:
    scene: str
    views: list
    root: Path
    warnings: list = field(default_factory=list)

    @property
    def input_index(self) -> int:
        return next(i for i, v in enumerate(self.views) if v.is_input)

    def __len__(self):
        return len(self.views)


def _resolve(root: Path, rel):
    if rel is None:
        return None
    p = Path(rel)
    return p if p.is_absolute() else root / p


def _rgb(arr):
    return np.repeat(arr, 3, axis=-1) if arr.shape[-1] == 1 else arr


def load_manifest(path) -> SceneManifest:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise DataError(f"{path}: cannot read manifest ({e})") from None
    root = path.parent
    entries = doc.get("views")
    if not isinstance(entries, list) or len(entries) < 2:
        raise DataError(f"{path}: manifest needs at least 2 views")
    n_input = sum(bool(v.get("is_input", False)) for v in entries)
    if n_input != 1:
        raise DataError(f"{path}: exactly one view must have is_input=true, found {n_input}")
    views, warnings = [], []
    for i, v in enumerate(entries):
        where = f"{path} view {i}"
        try:
            cam = Camera.from_dict(v["camera"])
        except (KeyError, TypeError, ValueError) as e:
            raise DataError(f"{where}: unreadable camera ({e})") from None
        paths = {k: _resolve(root, v.get(k)) for k in ("image", "albedo", "shade", "normal", "mask")}
        if paths["image"] is None:
            raise DataError(f"{where}: missing image path")
        try:
            image = _rgb(load_image(paths["image"]))
            albedo = _rgb(load_image(paths["albedo"])) if paths["albedo"] else None
            shade = load_image(paths["shade"]) if paths["shade"] else None
            mask = load_image(paths["mask"])[..., 0] > 0.5 if paths["mask"] else None
            normal = None
            if paths["normal"]:
                normal = normal_to_world(load_normal_map(paths["normal"], mask), cam)
        except (OSError, DataError) as e:
            raise DataError(f"{where}: {e}") from None
        for name, arr in (("image", image), ("albedo", albedo), ("shade", shade), ("normal", normal),
                          ("mask", mask)):
            if arr is not None and arr.shape[:2] != (cam.height, cam.width):
                raise DataError(f"{where}: {name} is {arr.shape[1]}x{arr.shape[0]} but camera says "
                                f"{cam.width}x{cam.height}")
        for name in ("albedo", "normal", "mask"):
            if paths[name] is None:
                warnings.append(f"view {i}: no {name} map")
        views.append(ViewRecord(i, cam, image, albedo, shade, normal,
                                None if mask is None else mask.astype(np.float32),
                                bool(v.get("is_input", False)), paths))
    return SceneManifest(str(doc.get("scene", path.stem)), views, root, warnings)


def write_manifest(path, scene: str, views: list[dict]):
    """Write a manifest; ``views`` holds dicts with the manifest view fields (paths relative to ``path``)."""
    keys = ("image", "albedo", "shade", "normal", "mask", "camera", "is_input")
    doc = {"scene": scene, "views": [{k: v.get(k) for k in keys} for v in views]}
    tmp = f"{path}.tmp"
    with open(tmp, "w") as fh:
        json.dump(doc, fh, indent=1)
    os.replace(tmp, path)
