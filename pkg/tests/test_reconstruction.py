import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lfldnet import autodiff as ad
from lfldnet.errors import ConfigError, ShapeError
from lfldnet.reconstruction import (BoundaryMask, ReconstructionNet, apply_boundary_mask, fourier_embed,
                                    init_fourier_kernel, reconstruct)

from fdcheck import max_rel_error
from spectral import fit_sine


@pytest.mark.parametrize("nf, nd, count", [(50, 3, 150), (100, 3, 300), (0, 3, 0)])
def test_kernel_sizes(nf, nd, count):
    k = init_fourier_kernel(nf, nd)
    assert k.count() == count and k.B.shape == (nf, nd)
    assert fourier_embed(np.zeros(nd), k).shape == (2 * nf,)


def test_kernel_negative_scale():
    with pytest.raises(ConfigError):
        init_fourier_kernel(4, 2, scale=-1.0)


def test_kernel_gaussian_moments():
    B = init_fourier_kernel(4000, 2, scale=2.5, seed=9).B.data.astype(np.float64)
    assert abs(B.mean()) < 5 * 2.5 / np.sqrt(B.size)
    assert B.std() == pytest.approx(2.5, rel=0.03)


def test_kernel_seed_determinism():
    a = init_fourier_kernel(8, 3, seed=4).B.data
    assert np.array_equal(a, init_fourier_kernel(8, 3, seed=4).B.data)
    assert not np.array_equal(a, init_fourier_kernel(8, 3, seed=5).B.data)


def test_embed_at_origin():
    out = fourier_embed(np.zeros(3), init_fourier_kernel(5, 3, seed=1)).data
    assert np.array_equal(out, np.r_[np.ones(5), np.zeros(5)])


def test_embed_zero_kernel_ignores_x(rng):
    k = init_fourier_kernel(4, 2)
    k.B.data[:] = 0.0
    out = fourier_embed(rng.normal(size=(6, 2)), k).data
    assert np.array_equal(out, np.tile(np.r_[np.ones(4), np.zeros(4)], (6, 1)))


def test_embed_dimension_mismatch():
    with pytest.raises(ShapeError):
        fourier_embed(np.zeros(2), init_fourier_kernel(4, 3))


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**31), scale=st.floats(0.01, 20.0), nd=st.integers(1, 3))
def test_embed_pythagorean(seed, scale, nd):
    k = init_fourier_kernel(6, nd, scale, seed=seed)
    x = np.random.default_rng(seed).uniform(-3, 3, size=(5, nd))
    e = fourier_embed(x, k).data.astype(np.float64)
    assert np.allclose(e[:, :6] ** 2 + e[:, 6:] ** 2, 1.0, atol=1e-6)


def test_embed_gradient_fd(f64, rng):
    k = init_fourier_kernel(5, 3, seed=2)
    x = ad.parameter(rng.uniform(-1, 1, size=(7, 3)))
    w = rng.normal(size=(7, 10))
    assert max_rel_error(lambda: ad.sum(ad.mul(fourier_embed(x, k), w)), [k.B, x]) < 1e-4


def test_reconstruct_zero_params_gives_zero(rng):
    k = init_fourier_kernel(3, 2)
    net = ReconstructionNet(4, 3, 2, hidden=(8, 8), n_outputs=2)
    for _, p in net.parameters():
        p.data[:] = 0.0
    out = reconstruct(rng.normal(size=(5, 4)), rng.normal(size=(5, 2)), None, None, net, k).data
    assert np.array_equal(out, np.zeros((5, 2), np.float32))


def test_coordinate_free_readout_arity():
    net = ReconstructionNet(6, 0, 2, hidden=(8,))
    assert net.n_in == 6
    assert net.mlp.weights[0].shape[0] == 6


def test_input_width_formula():
    net = ReconstructionNet(8, 16, 3, hidden=(8,), dim_g=2, dim_d=1)
    assert net.n_in == 8 + 32 + 2 + 1


def test_hand_set_single_hidden_layer(f64):
    net = ReconstructionNet(1, 0, 1, hidden=(1,), dtype=np.float64)
    for name, p in net.parameters():
        p.data[:] = 1.0 if name.endswith("w") or ".w" in name else 0.0
    out = reconstruct([1.0], [0.0], None, None, net, None).data
    assert out[0] == pytest.approx(0.841344746, abs=1e-9)


def test_reconstruct_shape_errors(rng):
    net = ReconstructionNet(4, 2, 2, hidden=(8,))
    k = init_fourier_kernel(2, 2)
    with pytest.raises(ShapeError):
        reconstruct(np.zeros((3, 5)), np.zeros((3, 2)), None, None, net, k)
    with pytest.raises(ShapeError):
        reconstruct(np.zeros((3, 4)), np.zeros((4, 2)), None, None, net, k)
    with pytest.raises(ShapeError):
        reconstruct(np.zeros((3, 4)), np.zeros((3, 2)), None, None, net, init_fourier_kernel(3, 2))


def test_reconstruct_gradient_fd(f64, rng):
    k = init_fourier_kernel(3, 2, seed=3)
    net = ReconstructionNet(2, 3, 2, hidden=(5, 4), n_outputs=2, dim_g=1, seed=1, dtype=np.float64)
    s, x, g = rng.normal(size=(6, 2)), rng.normal(size=(6, 2)), rng.normal(size=(6, 1))
    tgt = rng.normal(size=(6, 2))
    params = [k.B] + [p for _, p in net.parameters()]
    assert max_rel_error(lambda: ad.mean_squared_error(reconstruct(s, x, g, None, net, k), tgt), params) < 1e-4


def test_mask_empty_is_identity(rng):
    p = rng.normal(size=(4, 7, 2))
    assert np.array_equal(apply_boundary_mask(p, BoundaryMask.none(7)), p)


def test_mask_all_zero(rng):
    out = apply_boundary_mask(rng.normal(size=(3, 9, 1)), BoundaryMask(np.ones(9, bool)))
    assert np.array_equal(out, np.zeros((3, 9, 1)))


def test_mask_half_keeps_unmasked_bitwise(rng):
    p = rng.normal(size=(10, 2))
    flags = np.arange(10) % 2 == 0
    out = apply_boundary_mask(p, BoundaryMask(flags, value=0.25))
    assert np.array_equal(out[~flags], p[~flags])
    assert np.all(out[flags] == 0.25)


def test_mask_length_mismatch():
    with pytest.raises(ShapeError):
        apply_boundary_mask(np.zeros((5, 1)), BoundaryMask.none(4))


def test_mask_blocks_gradient():
    x = ad.parameter(np.ones((4, 1)))
    flags = np.array([True, False, True, False])
    with ad.Tape() as tape:
        loss = ad.sum(ad.square(apply_boundary_mask(x, BoundaryMask(flags))))
    tape.backward(loss)
    assert np.array_equal(x.grad[:, 0], [0.0, 2.0, 0.0, 2.0])


@pytest.mark.slow
def test_spectral_effect():
    """Fourier features fit sin(2 pi 8 x) far better than raw coordinates."""
    plain = [fit_sine(0, s) for s in range(3)]
    fourier = [fit_sine(32, s) for s in range(3)]
    print(f"spectral: N_f=0 {plain} N_f=32 {fourier}")
    assert np.median(fourier) <= 0.5 * np.median(plain)
