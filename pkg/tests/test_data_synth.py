import json
import time

import numpy as np
import pytest

from maskfuse.data_synth import (
    SceneSpec,
    encode_text,
    foreground_mask,
    generate_dataset,
    generate_scene,
    load_dataset,
    manifest_hash,
    render,
    scene_specs,
    synthesize,
)
from maskfuse.errors import ConfigurationError
from maskfuse.patch_encoder import patchify


def brute_disc(size, center, radius):
    out = np.zeros((size, size), dtype=np.uint8)
    for r in range(size):
        for c in range(size):
            if (r + 0.5 - center[0]) ** 2 + (c + 0.5 - center[1]) ** 2 < radius**2:
                out[r, c] = 1
    return out


def test_mask_edge_cases():
    assert foreground_mask(SceneSpec(extent=0.0)).sum() == 0
    full = SceneSpec(shape="square", center=(8.0, 8.0), extent=8.0)
    assert foreground_mask(full).all()
    np.testing.assert_array_equal(
        foreground_mask(SceneSpec(center=(5.0, 9.5), extent=3.7)), brute_disc(16, (5.0, 9.5), 3.7)
    )


def test_render_colors_follow_mask():
    spec = SceneSpec(fg_color=(1, 0, 0), bg_color=(0, 0.5, 1), texture=0.05, seed=4)
    img, mask = render(spec)
    np.testing.assert_array_equal(img[mask == 1], np.tile([1.0, 0.0, 0.0], ((mask == 1).sum(), 1)))
    assert np.abs(img[mask == 0] - [0, 0.5, 1]).max() <= 0.05
    assert img.min() >= 0 and img.max() <= 1


def test_generate_scene_outputs():
    spec = SceneSpec()
    image, mask, text, patches = generate_scene(spec, patch_size=4, n_text_tokens=3, text_dim=5)
    assert image.shape == (16, 16, 3) and mask.shape == (16, 16)
    np.testing.assert_array_equal(patches, patchify(image, 4))
    np.testing.assert_array_equal(text, encode_text(spec.bg_color, 3, 5))
    with pytest.raises(ConfigurationError):
        generate_scene(SceneSpec(size=10), patch_size=4)


def test_text_tokens_separate_colors():
    a, b = encode_text((1, 0, 0)), encode_text((0, 0, 1))
    assert a.shape == (4, 64)
    np.testing.assert_array_equal(a, encode_text((1, 0, 0)))
    assert np.abs(a - b).max() > 0.1


def test_specs_are_seeded_and_order_free():
    a = scene_specs(20, 7)
    assert a == scene_specs(20, 7)
    assert scene_specs(5, 7) == a[:5]
    assert a != scene_specs(20, 8)
    with pytest.raises(ConfigurationError):
        scene_specs(0, 1)


def test_dataset_files_match_memory(tmp_path):
    manifest = generate_dataset(6, 3, tmp_path / "a", workers=3)
    generate_dataset(6, 3, tmp_path / "b")
    assert manifest_hash(tmp_path / "a" / "manifest.json") == manifest_hash(tmp_path / "b" / "manifest.json")
    for name in ("scene_00004.ppm", "mask_00004.pgm"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    assert json.loads((tmp_path / "a" / "manifest.json").read_text()) == manifest
    images, masks, specs = load_dataset(tmp_path / "a")
    mem_images, mem_masks, mem_specs = synthesize(6, 3)
    assert specs == mem_specs
    for x, y in zip(images, mem_images):
        np.testing.assert_allclose(x, y, atol=1e-12)
    for x, y in zip(masks, mem_masks):
        np.testing.assert_array_equal(x, y)


def test_five_hundred_scenes_quickly(tmp_path):
    t0 = time.perf_counter()
    generate_dataset(500, 0, tmp_path)
    assert time.perf_counter() - t0 < 10.0
    assert len(list(tmp_path.glob("scene_*.ppm"))) == 500
