import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from lift3d.autodiff import ParameterStore, Tensor, backward, gradients
from lift3d.encodings import (EmbeddingTable, FrequencyEncodingConfig, HashGridConfig, embed_lookup, freq_encode,
                              hash_encode, level_resolutions)

PRIMES = (1, 2654435761, 805459861)


def test_level_resolutions_defaults():
    cfg = HashGridConfig()
    res = level_resolutions(cfg)
    assert cfg.growth == pytest.approx(1.38191, abs=1e-5)
    assert res[0] == 16 and res[-1] == 2048 and len(res) == 16
    assert all(b >= a for a, b in zip(res, res[1:]))


def test_level_resolutions_degenerate():
    assert level_resolutions(HashGridConfig(r_min=16, r_max=16, levels=1)) == [16]
    assert level_resolutions(HashGridConfig(r_min=32, r_max=32, levels=4)) == [32, 32, 32, 32]


def test_hash_config_rejects_bad_range():
    with pytest.raises(ValueError):
        HashGridConfig(r_min=64, r_max=32)


def brute_hash(p, table, res):
    """Independent trilinear reference with explicit per-corner hashing."""
    n_levels, size, nf = table.shape
    out = np.zeros((len(p), n_levels * nf))
    for k, q in enumerate(p):
        u = np.clip((q + 1) / 2, 0, 1)
        for lev, r in enumerate(res):
            x = u * r
            i0 = np.minimum(np.floor(x).astype(np.int64), r - 1)
            f = x - i0
            for c in range(8):
                bits = [(c >> a) & 1 for a in range(3)]
                corner = i0 + bits
                h = 0
                for a in range(3):
                    h ^= (int(corner[a]) * PRIMES[a]) & 0xFFFFFFFF
                w = np.prod([f[a] if bits[a] else 1 - f[a] for a in range(3)])
                out[k, lev * nf:(lev + 1) * nf] += w * table[lev, h % size]
    return out


def test_hash_encode_matches_brute_force():
    rng = np.random.default_rng(0)
    table = rng.normal(size=(4, 97, 2))  # non power of two exercises the modulo path
    res = [3, 5, 9, 17]
    p = rng.uniform(-1.2, 1.2, size=(20, 3))
    got = hash_encode(p, Tensor(table), res).data
    np.testing.assert_allclose(got, brute_hash(p, table, res), atol=1e-12)


def test_hash_grid_vertex_and_cell_center():
    rng = np.random.default_rng(1)
    table = rng.normal(size=(1, 4096, 2))
    r = 8
    vertex = np.array([[3, 5, 2]]) / r * 2 - 1
    h = (3 * PRIMES[0]) ^ ((5 * PRIMES[1]) & 0xFFFFFFFF) ^ ((2 * PRIMES[2]) & 0xFFFFFFFF)
    out = hash_encode(vertex, Tensor(table), [r]).data
    np.testing.assert_allclose(out[0], table[0, h % 4096], atol=1e-12)
    center = (np.array([[3.5, 5.5, 2.5]]) / r) * 2 - 1
    corners = []
    for c in range(8):
        i = np.array([3, 5, 2]) + [(c >> a) & 1 for a in range(3)]
        hh = 0
        for a in range(3):
            hh ^= (int(i[a]) * PRIMES[a]) & 0xFFFFFFFF
        corners.append(table[0, hh % 4096])
    np.testing.assert_allclose(hash_encode(center, Tensor(table), [r]).data[0], np.mean(corners, 0), atol=1e-12)


def test_hash_zero_table():
    out = hash_encode(np.zeros((5, 3)), Tensor(np.zeros((16, 64, 2))), level_resolutions(HashGridConfig()))
    assert out.shape == (5, 32) and not out.data.any()


def test_hash_gradients_fd():
    rng = np.random.default_rng(2)
    table = Tensor(rng.normal(size=(3, 64, 2)), requires_grad=True)
    res = [4, 7, 13]
    p0 = rng.uniform(-0.9, 0.9, size=(6, 3))
    w = rng.normal(size=(6, 6))
    p = Tensor(p0, requires_grad=True)
    gp, gt = gradients((hash_encode(p, table, res) * Tensor(w)).sum(), [p, table])

    def f(q, tab):
        return float((hash_encode(q, Tensor(tab), res).data * w).sum())

    h = 1e-6
    fd_p = np.zeros_like(p0)
    for i in np.ndindex(p0.shape):
        a, b = p0.copy(), p0.copy()
        a[i] += h
        b[i] -= h
        fd_p[i] = (f(a, table.data) - f(b, table.data)) / (2 * h)
    np.testing.assert_allclose(gp, fd_p, rtol=1e-5, atol=1e-6)
    # the table gradient is linear, so one random direction suffices
    d = rng.normal(size=table.shape)
    fd_t = (f(p0, table.data + h * d) - f(p0, table.data - h * d)) / (2 * h)
    assert float((gt * d).sum()) == pytest.approx(fd_t, rel=1e-6)


def test_freq_encode_examples():
    cfg2 = FrequencyEncodingConfig(octaves=2)
    np.testing.assert_allclose(freq_encode(np.array([0.0]), cfg2).data, [0, 1, 0, 1], atol=1e-7)
    np.testing.assert_allclose(freq_encode(np.array([1.0]), FrequencyEncodingConfig(1)).data, [0, -1], atol=1e-6)
    np.testing.assert_allclose(freq_encode(np.array([0.25]), cfg2).data, [math.sqrt(0.5), math.sqrt(0.5), 1, 0],
                               atol=1e-6)


@given(st.floats(-1, 1), st.integers(1, 8))
def test_freq_encode_matches_direct(x, k):
    got = freq_encode(Tensor(np.array([x], dtype=np.float64)), FrequencyEncodingConfig(k)).data
    direct = np.stack([np.sin(2.0 ** np.arange(k) * np.pi * x), np.cos(2.0 ** np.arange(k) * np.pi * x)], -1)
    np.testing.assert_allclose(got, direct.reshape(-1), atol=1e-9)


def test_freq_encode_gradient():
    x0 = np.array([[0.3, -0.7]])
    x = Tensor(x0, requires_grad=True)
    cfg = FrequencyEncodingConfig(3, include_input=True)
    w = np.arange(1.0, 15.0).reshape(1, 14)
    (g,) = gradients((freq_encode(x, cfg) * Tensor(w)).sum(), [x])
    h = 1e-6

    def f(q):
        return float((freq_encode(Tensor(q), cfg).data * w).sum())

    fd = [(f(x0 + h * e) - f(x0 - h * e)) / (2 * h) for e in np.eye(2).reshape(2, 1, 2)]
    np.testing.assert_allclose(g[0], fd, rtol=1e-6)


def test_embedding_lookup_and_sparse_gradient():
    store = ParameterStore()
    table = EmbeddingTable(6, 8, store, "embed")
    assert table.dim == 8
    assert not embed_lookup(table, 2).data.any()
    grads = backward((embed_lookup(table, 3) * 2.0).sum(), store)
    g = grads["embed"]
    assert np.all(g[3] == 2.0)
    assert not np.delete(g, 3, axis=0).any()
    with pytest.raises(IndexError):
        table.lookup(6)
