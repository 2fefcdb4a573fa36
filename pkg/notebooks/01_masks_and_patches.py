# %% [markdown]
# # From a pixel mask to patch tokens
#
# A product mask is drawn at pixel level. The image encoder only sees whole
# patches, so the mask is snapped to the patch grid first, then used to
# silence the projected tokens of dropped patches.

# %%
import numpy as np

from maskfuse.data_synth import SceneSpec, generate_scene
from maskfuse.mask_ops import derive_latent_mask, flatten_patch_mask, patch_bits, rebinarize_patches
from maskfuse.patch_encoder import ProjectionWeights, compress_tokens, masked_project

np.set_printoptions(precision=3, suppress=True, linewidth=120)

# %%
spec = SceneSpec(shape="disc", center=(6.0, 9.0), extent=5.0, fg_color=(0.9, 0.2, 0.1), bg_color=(0.1, 0.3, 0.8))
image, mask, text, patches = generate_scene(spec, patch_size=4)
print(mask)

# %% [markdown]
# Each 4x4 patch goes to 0 if it holds more than tau zeros. The default
# tau is half the patch, so a patch survives when at least half of it is
# product.

# %%
for tau in (0, 8, 16):
    print(f"tau={tau}")
    print(patch_bits(rebinarize_patches(mask, 4, tau), 4).reshape(4, 4))

# %%
snapped = rebinarize_patches(mask, 4)
bits = patch_bits(snapped, 4)
weights = ProjectionWeights.init(patches.shape[1], 8, np.random.default_rng(0))
z = masked_project(patches, snapped, weights, flatten_patch_mask(snapped, 4, 8))
print("kept patches:", int(bits.sum()), "of", bits.size)
print("row norms:", np.linalg.norm(z, axis=1).reshape(4, 4))  # zeros where patches were dropped

# %% [markdown]
# The attention side works on the latent grid instead (factor 2 here), and
# takes a majority vote inside every block.

# %%
print(derive_latent_mask(mask, 2).astype(int))

# %% [markdown]
# Optional compression: c learned queries summarize the N tokens through
# Q Z^T Z, independent of N.

# %%
q = np.random.default_rng(1).normal(size=(4, 8))
print(compress_tokens(z, q, normalize=True).shape)
