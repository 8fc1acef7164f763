"""Unseen-view sampling and image features for the semantic consistency term."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Protocol

import numpy as np

from .autodiff import Tensor
from .autodiff import ops as T
from .losses import SemanticPair, view_weight
from .renderer import Camera


class FeatureExtractor(Protocol):
    name: str
    seed: int
    dim: int

    def extract(self, image) -> Tensor:
        """Unit-norm feature of an (H, W, 3) image, differentiable in the pixels."""


def _blur_decimate(n: int) -> np.ndarray:
    """(n // 2, n) operator: [1 4 6 4 1] / 16 blur with edge clamping, then keep even samples."""
    taps = np.array([1.0, 4.0, 6.0, 4.0, 1.0]) / 16.0
    out = np.zeros((n // 2, n))
    for i in range(n // 2):
        c = 2 * i
        for k, tap in zip(range(-2, 3), taps):
            out[i, min(max(c + k, 0), n - 1)] += tap
    return out


def _area_resample(n: int, m: int) -> np.ndarray:
    """(m, n) box-filter resampling for sizes that are not powers of two apart."""
    out = np.zeros((m, n))
    edges = np.linspace(0.0, n, m + 1)
    for i in range(m):
        lo, hi = edges[i], edges[i + 1]
        for j in range(int(math.floor(lo)), int(math.ceil(hi))):
            overlap = min(hi, j + 1) - max(lo, j)
            if overlap > 0:
                out[i, j] = overlap / (hi - lo)
    return out


def pyramid_operator(n: int, target: int = 16) -> np.ndarray:
    """1-D linear map from n samples to ``target`` by Gaussian-pyramid levels."""
    if n < target:
        raise ValueError(f"image side {n} is smaller than {target}")
    op = np.eye(n)
    size = n
    while size >= 2 * target:
        op = _blur_decimate(size) @ op
        size //= 2
    if size != target:
        op = _area_resample(size, target) @ op
    return op


@dataclass
class BuiltinExtractor:
    """Pyramid downsample to 16x16x3, fixed random projection, L2 normalisation."""

    dim: int = 128
    seed: int = 0
    side: int = 16
    name: str = "builtin"

    def __post_init__(self):
        rng = np.random.default_rng([self.seed, 768, self.dim])
        d_in = self.side * self.side * 3
        self.projection = (rng.normal(size=(d_in, self.dim)) / math.sqrt(d_in)).astype(np.float32)
        self._ops: dict = {}

    def _operators(self, h: int, w: int, dtype):
        key = (h, w, np.dtype(dtype).str)
        if key not in self._ops:
            ry = pyramid_operator(h, self.side)
            rx = pyramid_operator(w, self.side)
            # columns interleave channels, so the x operator acts on blocks of three
            kx = np.kron(rx, np.eye(3)).T
            self._ops[key] = (ry.astype(dtype), kx.astype(dtype), self.projection.astype(dtype))
        return self._ops[key]

    def extract(self, image) -> Tensor:
        img = image if isinstance(image, Tensor) else Tensor(np.asarray(image, dtype=np.float32))
        if img.ndim != 3 or img.shape[2] != 3:
            raise ValueError(f"expected an (H, W, 3) image, got {img.shape}")
        h, w = img.shape[:2]
        if h < self.side or w < self.side:
            raise ValueError(f"image {w}x{h} is smaller than {self.side}x{self.side}")
        ry, kx, proj = self._operators(h, w, img.dtype)
        small = Tensor(ry) @ img.reshape(h, w * 3) @ Tensor(kx)
        return T.l2_normalize(small.reshape(1, -1) @ Tensor(proj), axis=-1).reshape(self.dim)

    __call__ = extract


def make_extractor(name: str = "builtin", seed: int = 0, dim: int = 128) -> FeatureExtractor:
    if name != "builtin":
        raise ValueError(f"unknown feature extractor {name!r}")
    return BuiltinExtractor(dim=dim, seed=seed)


@dataclass
class AugmentationSampler:
    j: int = 4
    radius: float = 2.5
    elevation: tuple = (-15.0, 45.0)  # degrees
    min_gap_deg: float = 1.0
    resolution: int = 64
    focal: float = 1.8  # in image widths
    seed: int = 0


def sample_viewpoints(sampler: AugmentationSampler, seed: int, iteration: int,
                      training_positions=()) -> list[Camera]:
    """J look-at cameras on the sampling sphere, each at least ``min_gap_deg`` from every training view."""
    rng = np.random.default_rng([seed, 29, iteration])
    train = [np.asarray(p, dtype=np.float64) / np.linalg.norm(p) for p in training_positions]
    cams = []
    for _ in range(sampler.j):
        for _attempt in range(100):
            az = rng.uniform(0.0, 2.0 * math.pi)
            el = math.radians(rng.uniform(*sampler.elevation))
            d = np.array([math.cos(el) * math.cos(az), math.cos(el) * math.sin(az), math.sin(el)])
            gaps = [math.degrees(math.acos(np.clip(d @ t, -1.0, 1.0))) for t in train]
            if not gaps or min(gaps) >= sampler.min_gap_deg:
                break
        else:
            raise RuntimeError(f"no viewpoint {sampler.min_gap_deg} deg away from the training views "
                               "after 100 draws")
        res = sampler.resolution
        cams.append(Camera.look_at(sampler.radius * d, width=res, height=res, fx=sampler.focal * res))
    return cams


def assemble_semantic_terms(input_feature, key_views, augmented) -> list[SemanticPair]:
    """Input/augmented pairs at weight 1 plus key/augmented pairs weighted by view distance.

    ``key_views`` and ``augmented`` are sequences of ``(feature, camera_position)``.
    """
    pairs = []
    for feat_j, _ in augmented:
        pairs.append(SemanticPair(input_feature, feat_j, 1.0))
    for feat_s, pos_s in key_views:
        for feat_j, pos_j in augmented:
            pairs.append(SemanticPair(feat_s, feat_j, view_weight(pos_s, pos_j)))
    return pairs
