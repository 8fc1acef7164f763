"""Neural fields: SDF with a per-image transient branch, albedo field, texture field."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Mlp, MlpConfig, ParameterStore, Tensor
from .autodiff import ops as T
from .encodings import (
    EmbeddingTable,
    FrequencyEncodingConfig,
    HashGrid,
    HashGridConfig,
    freq_encode,
)


@dataclass
class FieldConfig:
    hash: HashGridConfig = field(default_factory=HashGridConfig)
    pos_octaves: int = 6
    dir_octaves: int = 4
    sdf_hidden: tuple = (256, 256, 256, 256)
    sdf_skips: tuple = (2,)
    feature_dim: int = 64
    transient_sdf_hidden: tuple = (64, 64)
    albedo_hidden: tuple = (128, 128, 128)
    texture_hidden: tuple = (128, 128, 128, 128)
    transient_texture_hidden: tuple = (128, 128, 128, 128)
    normal_embed_dim: int = 8
    color_embed_dim: int = 8
    sdf_residual_bound: float = 0.05
    color_residual_bound: float = 0.5
    init_radius: float = 0.5
    inv_std_init: float = 20.0
    # finite-difference step; None ties it to the finest hash resolution
    fd_step: float | None = None

    @property
    def delta(self) -> float:
        return self.fd_step if self.fd_step is not None else 1.0 / self.hash.r_max


def _broadcast_rows(vec: Tensor, n: int) -> Tensor:
    """(D,) -> (n, D); gradients sum back over the rows."""
    return T.mul(Tensor(np.ones((n, 1), dtype=vec.dtype)), vec.reshape(1, -1))


def fd_gradient(fn, p: np.ndarray, delta: float) -> Tensor:
    """Central-difference gradient of a scalar field, one evaluation of ``fn`` on 6N points.

    ``fn`` maps an (M, 3) array to an (M,) tensor; the result stays in the
    autodiff graph so losses on the gradient reach the field parameters.
    """
    p = np.asarray(p)
    n = p.shape[0]
    offs = np.concatenate([p + d for d in _offsets(delta, p.dtype)], axis=0)
    vals = fn(offs)
    return _difference(vals, n, delta)


def _offsets(delta, dtype):
    eye = (np.eye(3) * delta).astype(dtype)
    return [eye[0], -eye[0], eye[1], -eye[1], eye[2], -eye[2]]


def _difference(vals: Tensor, n: int, delta: float, start: int = 0) -> Tensor:
    cols = []
    for a in range(3):
        plus = vals[start + 2 * a * n:start + (2 * a + 1) * n]
        minus = vals[start + (2 * a + 1) * n:start + (2 * a + 2) * n]
        cols.append(((plus - minus) * (1.0 / (2.0 * delta))).reshape(n, 1))
    return T.concat(cols, axis=-1)


@dataclass
class GeometrySample:
    sdf: Tensor  # (N,)
    grad: Tensor  # (N, 3)
    feature: Tensor  # (N, F)
    residual: Tensor | None  # (N,) bounded transient SDF offset, None without an embedding


class SdfField:
    """f(p, l) = s_base(p) + eps_s * tanh(transient(enc(p), l)), plus feature z(p)."""

    def __init__(self, cfg: FieldConfig, store: ParameterStore, rng, n_images: int,
                 transient: bool = True, dtype=np.float32):
        self.cfg = cfg
        self.store = store
        self.grid = HashGrid(cfg.hash, store, rng, name="sdf.hash", dtype=dtype)
        self.pos_enc = FrequencyEncodingConfig(cfg.pos_octaves)
        self.in_dim = 3 + self.pos_enc.out_dim(3) + cfg.hash.out_dim
        self.trunk = Mlp(
            MlpConfig([self.in_dim, *cfg.sdf_hidden, 1 + cfg.feature_dim], activation="softplus",
                      skips=tuple(cfg.sdf_skips), init="geometric",
                      geometric_radius=cfg.init_radius),
            store, "sdf.trunk", rng, dtype=dtype)
        self.transient = None
        self.embed = None
        if transient:
            self.embed = EmbeddingTable(n_images, cfg.normal_embed_dim, store, "embed.normal", dtype=dtype)
            self.transient = Mlp(
                MlpConfig([self.in_dim + cfg.normal_embed_dim, *cfg.transient_sdf_hidden, 1],
                          activation="softplus", zero_last=True),
                store, "sdf.transient", rng, dtype=dtype)
        store.add("density.log_inv_std", np.array(math.log(cfg.inv_std_init)), dtype=dtype)

    @property
    def inv_std(self) -> Tensor:
        return T.exp(self.store["density.log_inv_std"])

    def encode(self, p: np.ndarray) -> Tensor:
        pt = Tensor(np.clip(p, -1.0, 1.0).astype(self.store["sdf.hash"].dtype))
        return T.concat([pt, freq_encode(pt, self.pos_enc), self.grid(pt)], axis=-1)

    def _eval(self, p: np.ndarray, frame: int | None):
        enc = self.encode(p)
        out = self.trunk(enc)
        base = out[:, 0]
        residual = None
        if frame is not None and self.transient is not None:
            code = _broadcast_rows(self.embed.lookup(frame), len(p))
            raw = self.transient(T.concat([enc, code], axis=-1))[:, 0]
            residual = T.tanh(raw) * self.cfg.sdf_residual_bound
        return out, base, residual

    def sdf(self, p: np.ndarray, frame: int | None = None) -> tuple[Tensor, Tensor]:
        """Signed distance and feature vector; ``frame=None`` gives the non-transient value."""
        out, base, residual = self._eval(p, frame)
        s = base if residual is None else base + residual
        return s, out[:, 1:]

    def base_sdf(self, p: np.ndarray) -> Tensor:
        return self._eval(p, None)[1]

    def gradient(self, p: np.ndarray, frame: int | None = None) -> Tensor:
        return fd_gradient(lambda q: self.sdf(q, frame)[0], p, self.cfg.delta)

    def geometry(self, p: np.ndarray, frame: int | None = None, with_grad: bool = True) -> GeometrySample:
        """SDF, finite-difference gradient and feature from a single batched evaluation."""
        p = np.asarray(p, dtype=self.store["sdf.hash"].dtype)
        n = len(p)
        if with_grad:
            pts = np.concatenate([p] + [p + d for d in _offsets(self.cfg.delta, p.dtype)], axis=0)
        else:
            pts = p
        out, base, residual = self._eval(pts, frame)
        s_all = base if residual is None else base + residual
        grad = _difference(s_all, n, self.cfg.delta, start=n) if with_grad else None
        return GeometrySample(
            sdf=s_all[:n],
            grad=grad,
            feature=out[:n, 1:],
            residual=None if residual is None else residual[:n],
        )


class AlbedoField:
    """View-independent RGB from (p, grad f, z)."""

    def __init__(self, cfg: FieldConfig, store: ParameterStore, rng, dtype=np.float32):
        self.mlp = Mlp(MlpConfig([6 + cfg.feature_dim, *cfg.albedo_hidden, 3], output="sigmoid"),
                       store, "albedo", rng, dtype=dtype)

    def __call__(self, p, grad: Tensor, feature: Tensor) -> Tensor:
        pt = p if isinstance(p, Tensor) else Tensor(np.asarray(p, dtype=feature.dtype))
        return self.mlp(T.concat([pt, grad, feature], axis=-1))


@dataclass
class TextureOutput:
    base: Tensor
    transient: Tensor | None
    combined: Tensor


class TextureField:
    """Non-transient texture head plus transient head M with bounded residual."""

    def __init__(self, cfg: FieldConfig, store: ParameterStore, rng, n_images: int,
                 transient: bool = True, dtype=np.float32):
        self.cfg = cfg
        self.dir_enc = FrequencyEncodingConfig(cfg.dir_octaves)
        d_in = 3 + self.dir_enc.out_dim(3) + 3 + cfg.feature_dim
        self.base = Mlp(MlpConfig([d_in, *cfg.texture_hidden, 3], output="sigmoid"),
                        store, "texture.base", rng, dtype=dtype)
        self.embed = None
        self.transient = None
        if transient:
            self.embed = EmbeddingTable(n_images, cfg.color_embed_dim, store, "embed.color", dtype=dtype)
            self.transient = Mlp(
                MlpConfig([d_in + cfg.color_embed_dim, *cfg.transient_texture_hidden, 3], zero_last=True),
                store, "texture.transient", rng, dtype=dtype)

    def __call__(self, p, v, grad: Tensor, feature: Tensor, frame: int | None = None) -> TextureOutput:
        vd = v.data if isinstance(v, Tensor) else np.asarray(v)
        err = np.abs(np.linalg.norm(vd, axis=-1) - 1.0)
        if err.size and err.max() > 1e-3:
            raise ValueError(f"view directions must be unit length (max | |v| - 1 | = {err.max():.3g})")
        pt = p if isinstance(p, Tensor) else Tensor(np.asarray(p, dtype=feature.dtype))
        vt = Tensor(vd.astype(feature.dtype))
        x = T.concat([pt, freq_encode(vt, self.dir_enc), grad, feature], axis=-1)
        base = self.base(x)
        if frame is None or self.transient is None:
            return TextureOutput(base, None, T.clamp(base, 0.0, 1.0))
        code = _broadcast_rows(self.embed.lookup(frame), len(vd))
        raw = self.transient(T.concat([x, code], axis=-1))
        residual = T.tanh(raw) * self.cfg.color_residual_bound
        return TextureOutput(base, residual, T.clamp(base + residual, 0.0, 1.0))


class NeuralScene:
    """All trainable fields of one reconstruction sharing a parameter store."""

    def __init__(self, cfg: FieldConfig, n_images: int, seed: int = 0, transient: bool = True,
                 store: ParameterStore | None = None, dtype=np.float32):
        self.cfg = cfg
        self.n_images = n_images
        self.use_transient = transient
        rng = np.random.default_rng([seed, 0])
        self.store = store if store is not None else ParameterStore()
        self.sdf = SdfField(cfg, self.store, rng, n_images, transient, dtype=dtype)
        self.albedo = AlbedoField(cfg, self.store, rng, dtype=dtype)
        self.texture = TextureField(cfg, self.store, rng, n_images, transient, dtype=dtype)

    @property
    def inv_std(self) -> Tensor:
        return self.sdf.inv_std

    def geometry(self, p, frame=None, with_grad=True) -> GeometrySample:
        return self.sdf.geometry(p, frame, with_grad)

    def color(self, p, v, grad, feature, frame=None, stage: str = "geometry") -> TextureOutput:
        if stage == "geometry":
            a = self.albedo(p, grad, feature)
            return TextureOutput(a, None, a)
        return self.texture(p, v, grad, feature, frame)

    def load_state(self, other: ParameterStore, names=None):
        for name in names if names is not None else other.names():
            if name in self.store:
                self.store.set_value(name, other[name].data)
