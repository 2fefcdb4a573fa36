import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from maskfuse.errors import ConfigurationError, ValidationError
from maskfuse.gradcheck import check_gradients
from maskfuse.mask_ops import flatten_patch_mask, rebinarize_patches
from maskfuse.patch_encoder import (
    ProjectionWeights,
    compress_tokens,
    compress_tokens_backward,
    masked_project,
    masked_project_backward,
    patchify,
    project_with_bits,
    project_with_bits_backward,
    unpatchify,
)


def naive_patchify(image, p):
    h, w, c = image.shape
    rows = []
    for pr in range(h // p):
        for pc in range(w // p):
            row = []
            for r in range(p):
                for q in range(p):
                    for ch in range(c):
                        row.append(image[pr * p + r, pc * p + q, ch])
            rows.append(row)
    return np.array(rows)


def naive_matmul(a, b):
    out = np.zeros((a.shape[0], b.shape[1]))
    for i in range(a.shape[0]):
        for j in range(b.shape[1]):
            s = 0.0
            for k in range(a.shape[1]):
                s += a[i, k] * b[k, j]
            out[i, j] = s
    return out


def test_patchify_examples():
    out = patchify(np.full((4, 4, 1), 0.5), 2)
    assert out.shape == (4, 4) and (out == 0.5).all()
    np.testing.assert_array_equal(patchify(np.array([[1.0, 2.0], [3.0, 4.0]])[:, :, None], 2), [[1, 2, 3, 4]])
    assert patchify(np.zeros((4, 4, 3)), 2).shape == (4, 12)
    with pytest.raises(ConfigurationError):
        patchify(np.zeros((5, 4, 3)), 2)


def test_patchify_matches_loop_oracle():
    img = np.random.default_rng(1).normal(size=(8, 12, 3))
    np.testing.assert_array_equal(patchify(img, 4), naive_patchify(img, 4))


@settings(max_examples=50, deadline=None)
@given(st.sampled_from([1, 2, 4]), st.integers(1, 3), st.integers(1, 3), st.integers(1, 3), st.integers(0, 10**6))
def test_patchify_round_trip(p, gh, gw, c, seed):
    img = np.random.default_rng(seed).normal(size=(p * gh, p * gw, c))
    np.testing.assert_array_equal(unpatchify(patchify(img, p), p, p * gh, p * gw), img)


def _random_case(rng, p=4, grid=(2, 3), c=3, proj=5):
    h, w = p * grid[0], p * grid[1]
    img = rng.uniform(-1, 1, size=(h, w, c))
    mask = (rng.random((h, w)) < 0.6).astype(np.uint8)
    pm = rebinarize_patches(mask, p, rng.integers(0, p * p + 1))
    weights = ProjectionWeights(rng.normal(size=(p * p * c, proj)), rng.normal(size=proj))
    return patchify(img, p), pm, weights, flatten_patch_mask(pm, p, proj)


def test_masked_project_identity_and_zero_masks():
    rng = np.random.default_rng(2)
    x, pm, wts, _ = _random_case(rng)
    ones = np.ones_like(pm)
    np.testing.assert_allclose(
        masked_project(x, ones, wts, flatten_patch_mask(ones, 4, 5)), x @ wts.weight + wts.bias
    )
    zeros = np.zeros_like(pm)
    out = masked_project(x, zeros, wts, flatten_patch_mask(zeros, 4, 5))
    assert out.shape == (6, 5) and (out == 0).all()


def test_masked_project_single_patch_against_naive_oracle():
    rng = np.random.default_rng(3)
    x, _, wts, _ = _random_case(rng)
    pm = np.ones((8, 12), np.uint8)
    pm[0:4, 4:8] = 0  # patch 1
    out = masked_project(x, pm, wts, flatten_patch_mask(pm, 4, 5))
    assert (out[1] == 0).all()
    ref = naive_matmul(x, wts.weight) + wts.bias
    for i in (0, 2, 3, 4, 5):
        np.testing.assert_allclose(out[i], ref[i], rtol=1e-12, atol=1e-12)


def test_masked_project_shape_errors():
    rng = np.random.default_rng(4)
    x, pm, wts, fm = _random_case(rng)
    with pytest.raises(ValidationError):
        masked_project(x[:, :-1], pm, wts, fm)
    with pytest.raises(ValidationError):
        masked_project(x, pm, wts, fm[:, :-1])
    with pytest.raises(ValidationError):
        masked_project(x, pm[:4], wts, fm)


def test_masked_project_homogeneous_pre_bias():
    rng = np.random.default_rng(5)
    x, pm, wts, _ = _random_case(rng)
    ones = np.ones_like(pm)
    fm = flatten_patch_mask(ones, 4, 5)
    f = lambda v: masked_project(v, ones, wts, fm)  # noqa: E731
    f0 = f(np.zeros_like(x))
    np.testing.assert_allclose(f(2.5 * x) - f0, 2.5 * (f(x) - f0), rtol=1e-12, atol=1e-12)


def test_masked_project_gradients():
    rng = np.random.default_rng(6)
    x, pm, wts, fm = _random_case(rng, proj=7)
    g = rng.normal(size=(6, 7))
    arrays = {"x": x, "w": wts.weight, "b": wts.bias}
    loss = lambda: float(np.sum(g * masked_project(x, pm, wts, fm)))  # noqa: E731
    dx, dw, db = masked_project_backward(x, pm, wts, fm, g)
    errs, _ = check_gradients(loss, arrays, {"x": dx, "w": dw, "b": db}, n_coords=120, rng=rng)
    assert errs.max() < 1e-4


def test_project_with_bits_matches_masked_project():
    rng = np.random.default_rng(7)
    x, pm, wts, fm = _random_case(rng)
    bits = fm[:, 0]
    out, cache = project_with_bits(x, bits, wts.weight, wts.bias)
    np.testing.assert_allclose(out, masked_project(x, pm, wts, fm), rtol=0, atol=1e-14)
    g = rng.normal(size=out.shape)
    for a, b in zip(project_with_bits_backward(cache, g), masked_project_backward(x, pm, wts, fm, g)):
        np.testing.assert_allclose(a, b, atol=1e-13)


def test_compress_examples():
    z = np.random.default_rng(8).normal(size=(8, 16))
    assert (compress_tokens(z, np.zeros((4, 16))) == 0).all()
    assert compress_tokens(z, np.ones((4, 16))).shape == (4, 16)
    eye = np.eye(3) + 0.1 * np.arange(9).reshape(3, 3)
    gram = naive_matmul(eye.T, eye)
    np.testing.assert_allclose(compress_tokens(eye[:3], np.array([[1.0, 0, 0]]))[0], gram[0], rtol=1e-14)


def test_compress_errors():
    z = np.zeros((4, 6))
    with pytest.raises(ValidationError):
        compress_tokens(z, np.zeros((2, 5)))
    with pytest.raises(ConfigurationError):
        compress_tokens(z, np.zeros((4, 6)))


def test_compress_against_triple_product():
    rng = np.random.default_rng(9)
    for _ in range(10):
        n, d = rng.integers(2, 9), rng.integers(1, 7)
        c = rng.integers(1, n)
        z, q = rng.normal(size=(n, d)), rng.normal(size=(c, d))
        ref = naive_matmul(naive_matmul(q, z.T), z)
        np.testing.assert_allclose(compress_tokens(z, q), ref, rtol=1e-12, atol=1e-12)
        np.testing.assert_allclose(compress_tokens(z, q, normalize=True), ref / n, rtol=1e-12, atol=1e-12)


@pytest.mark.parametrize("normalize", [False, True])
def test_compress_gradients_batched(normalize):
    rng = np.random.default_rng(10)
    z, q = rng.normal(size=(3, 6, 4)), rng.normal(size=(2, 4))
    g = rng.normal(size=(3, 2, 4))
    loss = lambda: float(np.sum(g * compress_tokens(z, q, normalize)))  # noqa: E731
    dz, dq = compress_tokens_backward(z, q, g, normalize)
    errs, _ = check_gradients(loss, {"z": z, "q": q}, {"z": dz, "q": dq}, n_coords=80, rng=rng)
    assert errs.max() < 1e-4
