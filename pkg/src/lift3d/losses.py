"""Training objectives and their weighted combination."""

from __future__ import annotations

import math
from dataclasses import dataclass, fields

import numpy as np

from .autodiff import Tensor
from .autodiff import ops as T


@dataclass
class LossWeights:
    eikonal: float = 0.7
    normal: float = 0.1
    mask: float = 0.1
    transient: float = 0.01
    semantic: float = 1.0

    def __post_init__(self):
        for f in fields(self):
            if getattr(self, f.name) < 0:
                raise ValueError(f"loss weight {f.name} must be >= 0")


def _direction(v) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64).reshape(3)
    n = np.linalg.norm(v)
    if n < 1e-12:
        raise ValueError("view direction has zero length")
    # camera-to-origin direction
    return -v / n


def view_weight(v_s, v_ref) -> float:
    """Angle between the two viewing directions divided by pi, in [0, 1].

    ``v_s`` and ``v_ref`` are camera positions relative to the object centre.
    """
    a, b = _direction(v_s), _direction(v_ref)
    return float(np.arccos(np.clip(a @ b, -1.0, 1.0)) / math.pi)


def input_view_weights(positions, input_index: int, mode: str = "input_override") -> np.ndarray:
    """Per-view RGB weights measured against the input view.

    The literal rule gives the input view weight 0; ``input_override`` sets it to 1.
    """
    if mode not in ("literal", "input_override"):
        raise ValueError(f"unknown rgb_weight_mode {mode!r}")
    ref = positions[input_index]
    w = np.array([view_weight(p, ref) for p in positions])
    if mode == "input_override":
        w[input_index] = 1.0
    return w


def rgb_loss(rendered: Tensor, reference, w_s=1.0) -> Tensor:
    """w_s * mean over rays of squared colour error; ``w_s`` may be per ray."""
    ref = np.asarray(reference, dtype=rendered.dtype)
    if ref.shape != rendered.shape:
        raise T.ShapeError(f"rgb_loss: rendered {rendered.shape} vs reference {ref.shape}")
    diff = rendered - Tensor(ref)
    per_ray = (diff * diff).sum(axis=-1)
    w = np.asarray(w_s, dtype=rendered.dtype)
    if w.ndim == 0:
        return per_ray.mean() * float(w)
    return (per_ray * Tensor(w)).mean()


def normal_loss(pred: Tensor, target, valid=None) -> Tensor:
    """Mean over rays of L1 distance plus |1 - cos|; ``valid`` selects supervised rays."""
    tgt = np.asarray(target, dtype=pred.dtype)
    if tgt.shape != pred.shape:
        raise T.ShapeError(f"normal_loss: predicted {pred.shape} vs target {tgt.shape}")
    if valid is not None:
        idx = np.flatnonzero(np.asarray(valid))
        if idx.size == 0:
            return Tensor(np.zeros((), dtype=pred.dtype))
        pred = pred[idx]
        tgt = tgt[idx]
    t = Tensor(tgt)
    l1 = T.abs_(pred - t).sum(axis=-1)
    ang = T.abs_(1.0 - (pred * t).sum(axis=-1))
    return (l1 + ang).mean()


def eikonal_from_grad(grad: Tensor) -> Tensor:
    norm = T.sqrt((grad * grad).sum(axis=-1) + 1e-12)
    d = norm - 1.0
    return (d * d).mean()


def eikonal_loss(field, points) -> Tensor:
    """Mean (|grad f| - 1)^2 over ``points``, taken on the non-transient SDF."""
    pts = np.asarray(points)
    if pts.size == 0:
        raise ValueError("eikonal batch is empty")
    return eikonal_from_grad(field.gradient(pts.reshape(-1, 3)))


def eikonal_points(rng: np.random.Generator, n: int, surface=None, sigma: float = 0.02) -> np.ndarray:
    """Half uniform in [-1, 1]^3, half Gaussian-perturbed surface points (when given)."""
    n_surf = n // 2 if surface is not None and len(surface) else 0
    uni = rng.uniform(-1.0, 1.0, size=(n - n_surf, 3))
    if not n_surf:
        return uni
    pick = surface[rng.integers(0, len(surface), n_surf)]
    near = pick + rng.normal(0.0, sigma, size=pick.shape)
    return np.clip(np.concatenate([uni, near]), -1.0, 1.0)


@dataclass
class SemanticPair:
    a: Tensor
    b: Tensor
    weight: float


def semantic_loss(pairs) -> Tensor:
    """Weighted sum of squared feature distances over the assembled pairs."""
    total = None
    for p in pairs:
        a = p.a if isinstance(p.a, Tensor) else Tensor(np.asarray(p.a, dtype=np.float32))
        b = p.b if isinstance(p.b, Tensor) else Tensor(np.asarray(p.b, dtype=a.dtype))
        if a.shape != b.shape:
            raise T.ShapeError(f"semantic_loss: feature dims differ, {a.shape} vs {b.shape}")
        d = a - b
        term = (d * d).sum() * float(p.weight)
        total = term if total is None else total + term
    return total if total is not None else Tensor(np.zeros((), dtype=np.float32))


def mask_loss(opacity: Tensor, mask) -> Tensor:
    m = np.asarray(mask, dtype=opacity.dtype).reshape(opacity.shape)
    o = T.clamp(opacity, 1e-4, 1.0 - 1e-4)
    bce = -(T.log(o) * Tensor(m) + T.log(1.0 - o) * Tensor(1.0 - m))
    return bce.mean()


def transient_reg(residual: Tensor | None, transient_color: Tensor | None, eps_s: float) -> Tensor:
    total = Tensor(np.zeros((), dtype=np.float32))
    if residual is not None:
        total = total + T.abs_(residual).mean() * (1.0 / eps_s)
    if transient_color is not None:
        total = total + T.abs_(transient_color).sum(axis=-1).mean()
    return total


def auxiliary_losses(opacity: Tensor, mask, residual=None, transient_color=None,
                     eps_s: float = 0.05) -> tuple[Tensor, Tensor]:
    return mask_loss(opacity, mask), transient_reg(residual, transient_color, eps_s)


COMPONENTS = ("rgb", "sem", "eik", "norm", "mask", "trans")


@dataclass
class LossReport:
    rgb: float
    norm: float
    eik: float
    sem: float
    mask: float
    trans: float
    total: float
    tensor: Tensor | None = None

    def as_dict(self) -> dict:
        return {k: getattr(self, k) for k in (*COMPONENTS, "total")}


def _value(x) -> float:
    return x.item() if isinstance(x, Tensor) else float(x)


def total_loss(components: dict, weights: LossWeights | None = None, stage: int = 1) -> LossReport:
    """rgb + w_sem sem + l1 eik + l2 norm + l_mask mask + l_trans trans.

    Missing components count as zero. Stage 2 drops the normal and eikonal terms.
    """
    w = weights or LossWeights()
    coef = {
        "rgb": 1.0,
        "sem": w.semantic,
        "eik": w.eikonal if stage == 1 else 0.0,
        "norm": w.normal if stage == 1 else 0.0,
        "mask": w.mask,
        "trans": w.transient,
    }
    unknown = set(components) - set(coef)
    if unknown:
        raise KeyError(f"unknown loss components {sorted(unknown)}")
    values = {}
    total = None
    total_val = 0.0
    for name in COMPONENTS:
        c = components.get(name)
        v = 0.0 if c is None else _value(c)
        if not math.isfinite(v):
            raise FloatingPointError(f"loss component {name!r} is not finite ({v})")
        values[name] = v
        if c is None or coef[name] == 0.0:
            continue
        total_val += coef[name] * v
        if isinstance(c, Tensor):
            term = c * coef[name] if coef[name] != 1.0 else c
            total = term if total is None else total + term
    return LossReport(**values, total=total_val, tensor=total)
