import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dctnn import numeric as nm
from dctnn.kaleidoscope import KtParams, KtStack, kt_forward, kt_index_map, kt_inverse, mosaic
from dctnn.numeric import DimensionError, ParamStore, gradcheck


def test_nu_one_is_identity():
    assert np.array_equal(kt_index_map(KtParams(1, 6, 4)), np.arange(24))


def test_two_by_two_raster_offset_order():
    stack = kt_forward(np.array([[1.0, 2.0], [3.0, 4.0]]), KtParams(2, 2, 2))
    assert stack.copies.tolist() == [[[1.0]], [[2.0]], [[3.0]], [[4.0]]]


def test_nu5_on_320_gives_25_copies_of_64():
    params = KtParams(5, 320, 320)
    perm = kt_index_map(params)
    assert np.array_equal(np.sort(perm), np.arange(320 * 320))
    stack = kt_forward(np.zeros((320, 320)), params)
    assert stack.copies.shape == (25, 64, 64)


def test_constant_image_gives_identical_copies():
    stack = kt_forward(np.full((12, 12), 0.3), KtParams(3, 12, 12))
    assert (stack.copies == 0.3).all()


def test_copies_are_strided_slices(rng):
    img = rng.random((20, 40))
    nu = 4
    copies = kt_forward(img, KtParams(nu, 20, 40)).copies
    for a in range(nu):
        for b in range(nu):
            assert np.array_equal(copies[a * nu + b], img[a::nu, b::nu])


@pytest.mark.parametrize("nu,size", [(4, 16), (20, 320), (5, 40), (8, 64)])
def test_round_trip_bitwise(rng, nu, size):
    img = rng.random((size, size))
    params = KtParams(nu, size, size)
    assert np.array_equal(kt_inverse(kt_forward(img, params)), img)
    stack = KtStack(rng.random((nu * nu, size // nu, size // nu)), params)
    assert np.array_equal(kt_forward(kt_inverse(stack), params).copies, stack.copies)


def test_batched_round_trip(rng):
    imgs = rng.random((3, 16, 16))
    params = KtParams(4, 16, 16)
    stack = kt_forward(imgs, params)
    assert stack.copies.shape == (3, 16, 4, 4)
    assert np.array_equal(kt_inverse(stack), imgs)


@settings(max_examples=40, deadline=None)
@given(st.sampled_from([1, 2, 3, 4, 5]), st.integers(1, 6), st.integers(1, 6), st.integers(0, 2 ** 31))
def test_index_map_is_bijection_and_preserves_values(nu, gh, gw, seed):
    params = KtParams(nu, nu * gh, nu * gw)
    perm = kt_index_map(params)
    assert np.array_equal(np.sort(perm), np.arange(params.height * params.width))
    img = np.random.default_rng(seed).random((params.height, params.width))
    copies = kt_forward(img, params).copies
    assert np.array_equal(np.sort(copies.ravel()), np.sort(img.ravel()))


def test_non_dividing_nu_is_an_error():
    with pytest.raises(DimensionError):
        KtParams(3, 16, 16)
    with pytest.raises(ValueError):
        KtParams(2, 16, 16, sigma=2)


def test_inverse_rejects_inconsistent_stack(rng):
    with pytest.raises(DimensionError):
        kt_inverse(KtStack(rng.random((4, 3, 3)), KtParams(2, 8, 8)))


def test_forward_gradient_is_inverse_permutation(rng):
    ps = ParamStore()
    ps.add("img", rng.random((8, 8)))
    params = KtParams(4, 8, 8)
    weights = rng.normal(size=(16, 2, 2))
    loss = lambda: nm.tsum(nm.mul(kt_forward(ps["img"], params).copies, weights))
    assert max(gradcheck(loss, ps).values()) < 1e-6
    ps.zero_grad()
    nm.backward(loss(), ps)
    np.testing.assert_array_equal(ps.grads["img"], kt_inverse(KtStack(weights, params)))


def test_mosaic_layout(rng):
    img = rng.random((10, 10))
    stack = kt_forward(img, KtParams(5, 10, 10))
    tiled = mosaic(stack)
    assert tiled.shape == (10, 10)
    assert np.array_equal(tiled[2:4, 4:6], img[1::5, 2::5])
    assert np.array_equal(mosaic(kt_forward(img, KtParams(1, 10, 10))), img)
