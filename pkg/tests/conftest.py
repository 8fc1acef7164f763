import numpy as np
import pytest
from hypothesis import settings

from lift3d.autodiff import Tensor
from lift3d.fields import GeometrySample, TextureOutput, fd_gradient

settings.register_profile("ci", max_examples=40, deadline=None)
settings.load_profile("ci")


class AnalyticField:
    """Frozen closed-form SDF exposing the same interface as a trained scene."""

    def __init__(self, fn, inv_std=20.0, color=(0.3, 0.4, 0.5), delta=1.0 / 2048):
        self.fn = fn
        self.inv_std = float(inv_std)
        self.rgb = np.asarray(color, dtype=np.float64)
        self.delta = delta

    def _vals(self, p):
        return Tensor(np.asarray(self.fn(np.asarray(p, dtype=np.float64)), dtype=np.float64))

    def gradient(self, p, frame=None):
        return fd_gradient(self._vals, np.asarray(p, dtype=np.float64), self.delta)

    def geometry(self, p, frame=None, with_grad=True):
        p = np.asarray(p, dtype=np.float64)
        grad = self.gradient(p) if with_grad else None
        return GeometrySample(self._vals(p), grad, Tensor(np.zeros((len(p), 1))), None)

    def color(self, p, v, grad, feature, frame=None, stage="geometry"):
        c = Tensor(np.broadcast_to(self.rgb, (len(p), 3)).copy())
        return TextureOutput(c, None, c)


def sphere_sdf(r=0.5):
    return lambda p: np.linalg.norm(p, axis=-1) - r


@pytest.fixture
def rng():
    return np.random.default_rng(0)
