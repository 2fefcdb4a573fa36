# %% [markdown]
# # Scoring image sets without pretrained networks
#
# The Fréchet distance compares Gaussian fits of two feature clouds; here the
# features are pooled pixel colors. The Inception Score takes class
# probabilities from any classifier the caller trusts.

# %%
import numpy as np

from maskfuse.cli import image_features
from maskfuse.data_synth import synthesize
from maskfuse.metrics import accumulate_stats, frechet_distance, inception_score, mean_of_score

a, _, _ = synthesize(200, seed=1)
b, _, _ = synthesize(200, seed=2)
dark = [np.clip(img - 0.5, -1, 1) for img in b]

fa, fb, fd = (accumulate_stats(image_features(np.stack(s), "pixel")) for s in (a, b, dark))
print(f"same generator, different seeds: {frechet_distance(fa, fb):.3f}")
print(f"darkened copy:                  {frechet_distance(fa, fd):.3f}")

# %% [markdown]
# Shards can be merged, which gives the same statistics as one pass.

# %%
feats = image_features(np.stack(a), "pixel")
merged = accumulate_stats(feats[:70]).merge(accumulate_stats(feats[70:]))
print(np.abs(merged.cov - fa.cov).max())

# %%
confident = np.eye(10)[np.arange(200) % 10]
print("IS, confident and diverse:", inception_score(confident))
print("IS, uniform:", inception_score(np.full((200, 10), 0.1)))
print("MoS:", mean_of_score([4, 5, 3, 4]))
