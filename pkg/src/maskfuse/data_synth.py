"""Deterministic desk-scale scenes: a flat-colored "product" over a textured background.

Each scene yields an RGB image in [-1, 1], the binary foreground mask
(1 exactly on product pixels), toy text tokens describing the background
color, and the patchified image used as the reference (image prompt).
"""

import hashlib
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigurationError
from .patch_encoder import patchify
from .pnm import read_image, read_mask, write_image, write_mask

SHAPES = ("disc", "square")
_TEXT_ENCODER_SEED = 20240611


@dataclass(frozen=True)
class SceneSpec:
    shape: str = "disc"
    fg_color: tuple = (1.0, 0.0, 0.0)
    bg_color: tuple = (0.0, 0.0, 1.0)
    texture: float = 0.0
    size: int = 16
    center: tuple = (8.0, 8.0)  # (row, col) in pixels
    extent: float = 4.0  # disc radius or square half-side, pixels
    seed: int = 0

    def validate(self, patch_size=1, latent_factor=1):
        if self.shape not in SHAPES:
            raise ConfigurationError(f"unknown foreground shape {self.shape!r}")
        for name in ("fg_color", "bg_color"):
            c = np.asarray(getattr(self, name), dtype=float)
            if c.shape != (3,) or (c < 0).any() or (c > 1).any():
                raise ConfigurationError(f"{name} must be three values in [0, 1]")
        if self.size < 1 or self.size % patch_size or self.size % latent_factor:
            raise ConfigurationError(
                f"size {self.size} must be divisible by patch size {patch_size} and latent factor {latent_factor}"
            )
        if self.texture < 0 or self.extent < 0:
            raise ConfigurationError("texture amplitude and extent must be non-negative")


def foreground_mask(spec: SceneSpec) -> np.ndarray:
    n = spec.size
    rows, cols = np.mgrid[0:n, 0:n] + 0.5
    dr, dc = rows - spec.center[0], cols - spec.center[1]
    if spec.shape == "disc":
        inside = dr * dr + dc * dc < spec.extent * spec.extent
    else:
        inside = (np.abs(dr) < spec.extent) & (np.abs(dc) < spec.extent)
    return inside.astype(np.uint8)


def text_encoder_matrix(n_tokens, dim):
    """Fixed random map from (color, token position, 1) features to ``dim``."""
    rng = np.random.default_rng([_TEXT_ENCODER_SEED, n_tokens, dim])
    fan_in = 3 + n_tokens + 1
    return rng.normal(0.0, 1.0 / np.sqrt(fan_in), size=(fan_in, dim))


def encode_text(color, n_tokens=4, dim=64) -> np.ndarray:
    """Toy text prompt: ``n_tokens`` x ``dim`` tokens naming one RGB color."""
    color = 2.0 * np.asarray(color, dtype=np.float64) - 1.0
    feats = np.concatenate(
        [np.tile(color, (n_tokens, 1)), np.eye(n_tokens), np.ones((n_tokens, 1))], axis=1
    )
    return feats @ text_encoder_matrix(n_tokens, dim)


def render(spec: SceneSpec):
    """Return (image in [0, 1]^3, mask). Texture noise touches background pixels only."""
    mask = foreground_mask(spec)
    n = spec.size
    bg = np.broadcast_to(np.asarray(spec.bg_color, dtype=np.float64), (n, n, 3)).copy()
    if spec.texture > 0:
        rng = np.random.default_rng(spec.seed)
        bg = np.clip(bg + spec.texture * rng.uniform(-1.0, 1.0, size=(n, n, 3)), 0.0, 1.0)
    img = np.where(mask[:, :, None] == 1, np.asarray(spec.fg_color, dtype=np.float64), bg)
    return img, mask


def generate_scene(spec: SceneSpec, patch_size=4, n_text_tokens=4, text_dim=64):
    """-> (image in [-1, 1], mask, text tokens, reference patches)."""
    spec.validate(patch_size)
    img, mask = render(spec)
    image = 2.0 * img - 1.0
    text = encode_text(spec.bg_color, n_text_tokens, text_dim)
    return image, mask, text, patchify(image, patch_size)


def random_spec(rng, size=16, seed=0) -> SceneSpec:
    return SceneSpec(
        shape=SHAPES[int(rng.integers(len(SHAPES)))],
        fg_color=tuple(float(v) for v in rng.random(3)),
        bg_color=tuple(float(v) for v in rng.random(3)),
        texture=float(rng.uniform(0.0, 0.1)),
        size=size,
        center=(float(rng.uniform(0.2, 0.8) * size), float(rng.uniform(0.2, 0.8) * size)),
        extent=float(rng.uniform(0.2, 0.5) * size),
        seed=seed,
    )


def scene_specs(n, seed, size=16):
    """Spec ``i`` depends only on (seed, i), so scenes can be built in any order."""
    if n < 1:
        raise ConfigurationError(f"dataset needs n >= 1, got {n}")
    return [random_spec(np.random.default_rng([seed, i]), size, seed=int(seed) * 1_000_003 + i) for i in range(n)]


def _spec_json(spec):
    d = asdict(spec)
    for k in ("fg_color", "bg_color", "center"):
        d[k] = list(d[k])
    return d


def spec_from_json(d) -> SceneSpec:
    d = dict(d)
    for k in ("fg_color", "bg_color", "center"):
        d[k] = tuple(d[k])
    return SceneSpec(**d)


def generate_dataset(n, seed, out_dir, size=16, workers=1):
    """Write ``n`` scenes as PPM/PGM pairs plus ``manifest.json``; returns the manifest dict."""
    specs = scene_specs(n, seed, size)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    def write(i):
        img, mask = render(specs[i])
        write_image(out / f"scene_{i:05d}.ppm", 2.0 * img - 1.0)
        write_mask(out / f"mask_{i:05d}.pgm", mask)

    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        list(pool.map(write, range(n)))
    manifest = {
        "version": 1,
        "n": n,
        "seed": seed,
        "size": size,
        "scenes": [
            {"image": f"scene_{i:05d}.ppm", "mask": f"mask_{i:05d}.pgm", "seed": s.seed, "spec": _spec_json(s)}
            for i, s in enumerate(specs)
        ],
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True))
    return manifest


def manifest_hash(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def load_dataset(dataset_dir):
    """Read a generated dataset back as lists of images, masks and specs."""
    root = Path(dataset_dir)
    manifest = json.loads((root / "manifest.json").read_text())
    images, masks, specs = [], [], []
    for entry in manifest["scenes"]:
        images.append(read_image(root / entry["image"]))
        masks.append(read_mask(root / entry["mask"]))
        specs.append(spec_from_json(entry["spec"]))
    if not images:
        raise ConfigurationError(f"dataset at {root} is empty")
    return images, masks, specs


def synthesize(n, seed, size=16, quantize=True):
    """In-memory equivalent of :func:`generate_dataset` + :func:`load_dataset`.

    With ``quantize`` the images go through the same 8-bit rounding as the
    files on disk, so both routes produce identical arrays.
    """
    images, masks = [], []
    specs = scene_specs(n, seed, size)
    for s in specs:
        img, mask = render(s)
        image = 2.0 * img - 1.0
        if quantize:
            image = 2.0 * (np.clip(np.rint((image + 1.0) * 127.5), 0, 255) / 255.0) - 1.0
        images.append(image)
        masks.append(mask)
    return images, masks, specs
