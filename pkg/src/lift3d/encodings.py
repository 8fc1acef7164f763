"""Input encodings: multiresolution hash grid, frequency encoding, per-image embeddings."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .autodiff import ParameterStore, Tensor
from .autodiff.tensor import make_node, take_rows


@dataclass
class HashGridConfig:
    r_min: int = 16
    r_max: int = 2048
    levels: int = 16
    features: int = 2
    table_size: int = 2**19

    def __post_init__(self):
        if self.r_min < 2:
            raise ValueError(f"r_min must be >= 2, got {self.r_min}")
        if self.r_max < self.r_min:
            raise ValueError(f"r_max ({self.r_max}) < r_min ({self.r_min})")
        if self.levels < 1 or self.features < 1 or self.table_size < 1:
            raise ValueError("levels, features and table_size must be positive")

    @property
    def growth(self) -> float:
        if self.levels == 1:
            return 1.0
        return math.exp((math.log(self.r_max) - math.log(self.r_min)) / (self.levels - 1))

    @property
    def out_dim(self) -> int:
        return self.levels * self.features


def level_resolutions(cfg: HashGridConfig) -> list[int]:
    b = cfg.growth
    # the epsilon keeps r_min * b**(L-1) from flooring to r_max - 1
    return [int(math.floor(cfg.r_min * b**lev + 1e-6)) for lev in range(cfg.levels)]


class HashGrid:
    """Trainable hash tables plus the encode operation."""

    def __init__(self, cfg: HashGridConfig, store: ParameterStore, rng: np.random.Generator,
                 name: str = "hash.table", dtype=np.float32):
        self.cfg = cfg
        self.name = name
        self.res = np.asarray(level_resolutions(cfg), dtype=np.int64)
        init = rng.uniform(-1e-4, 1e-4, size=(cfg.levels, cfg.table_size, cfg.features))
        store.add(name, init.astype(dtype), dtype=dtype)
        self.store = store

    @property
    def table(self) -> Tensor:
        return self.store[self.name]

    def __call__(self, p) -> Tensor:
        return hash_encode(p, self.table, self.res)


def hash_encode(p, table: Tensor, res) -> Tensor:
    """Trilinearly interpolated hash-grid features for points in [-1, 1]^3.

    Output has shape (N, levels * features); points outside the cube are clamped.
    """
    pt = p if isinstance(p, Tensor) else Tensor(np.asarray(p, dtype=table.dtype))
    pts = np.ascontiguousarray(pt.data, dtype=np.float64).reshape(-1, 3)
    res = np.asarray(res, dtype=np.int64)
    tab = table.data
    out = np.empty((pts.shape[0], tab.shape[0] * tab.shape[2]), dtype=np.float64)
    _kernels.hash_forward(pts, tab, res, out)

    def bw(g):
        g64 = np.ascontiguousarray(g, dtype=np.float64)
        grad_table = grad_p = None
        if table.requires_grad:
            acc = np.zeros(tab.shape, dtype=np.float64)
            _kernels.hash_backward_table(pts, g64, res, acc)
            grad_table = acc.astype(tab.dtype)
        if pt.requires_grad:
            gp = np.empty_like(pts)
            _kernels.hash_backward_points(pts, tab, res, g64, gp)
            grad_p = gp.astype(pt.dtype).reshape(pt.shape)
        return grad_p, grad_table

    return make_node(out.astype(tab.dtype), (pt, table), bw, "hash_encode")


@dataclass
class FrequencyEncodingConfig:
    octaves: int = 6
    include_input: bool = False

    def __post_init__(self):
        if self.octaves < 0:
            raise ValueError(f"octaves must be >= 0, got {self.octaves}")

    def out_dim(self, d: int) -> int:
        return d * 2 * self.octaves + (d if self.include_input else 0)


def freq_encode(x, cfg: FrequencyEncodingConfig) -> Tensor:
    """Per component: sin(2^k pi x), cos(2^k pi x) for k = 0..K-1 (optionally prefixed by x)."""
    xt = x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float32))
    xd = xt.data
    lead = xd.shape[:-1]
    d = xd.shape[-1]
    freqs = (2.0 ** np.arange(cfg.octaves)) * np.pi
    k = cfg.octaves
    s = np.empty((*lead, d, k), dtype=np.float64)
    c = np.empty_like(s)
    if k:
        # one sin/cos, then double-angle steps; drift stays ~2^K ulp
        x64 = np.pi * xd.astype(np.float64)
        s[..., 0] = np.sin(x64)
        c[..., 0] = np.cos(x64)
        for j in range(1, k):
            s[..., j] = 2.0 * s[..., j - 1] * c[..., j - 1]
            c[..., j] = 1.0 - 2.0 * s[..., j - 1] ** 2
    enc = np.stack([s, c], axis=-1).reshape(*lead, d * 2 * k)
    if cfg.include_input:
        enc = np.concatenate([xd, enc], axis=-1)
    enc = enc.astype(xd.dtype)

    def bw(g):
        if cfg.include_input:
            g_id, g = g[..., :d], g[..., d:]
        g = g.reshape(*lead, d, cfg.octaves, 2)
        gx = (g[..., 0] * c * freqs - g[..., 1] * s * freqs).sum(axis=-1)
        if cfg.include_input:
            gx = gx + g_id
        return (gx.astype(xd.dtype),)

    return make_node(enc, (xt,), bw, "freq_encode")


class EmbeddingTable:
    """One trainable code per training image; zero-initialised."""

    def __init__(self, rows: int, dim: int, store: ParameterStore, name: str, dtype=np.float32):
        if rows < 1 or dim < 1:
            raise ValueError(f"embedding table needs rows, dim >= 1 (got {rows}, {dim})")
        self.rows = rows
        self.dim = dim
        self.name = name
        self.store = store
        store.add(name, np.zeros((rows, dim)), dtype=dtype)

    @property
    def weight(self) -> Tensor:
        return self.store[self.name]

    def lookup(self, index: int) -> Tensor:
        if not 0 <= int(index) < self.rows:
            raise IndexError(f"{self.name}: image index {index} outside [0, {self.rows})")
        return take_rows(self.weight, [int(index)]).reshape(self.dim)


def embed_lookup(table: EmbeddingTable, image_index: int) -> Tensor:
    return table.lookup(image_index)
