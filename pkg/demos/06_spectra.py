
# coding: utf-8

# # How much high-frequency energy reaches each down-sampling layer?
#
# Take the feature maps entering every down-sampling stage, average their
# power spectra, and measure the share of energy outside the centred
# half-size block. Anything there aliases when the map is subsampled.

# In[1]:

import numpy as np

from dabnet import spectra as S
from _quick import quick_model, sample

train_set, test_set = sample()
models = {v: quick_model(v, train_set) for v in ("baseline", "antialias")}


# In[2]:

for v, m in models.items():
    maps = S.energy_maps(m, test_set.images, n=500)
    print(v, [(s.depth_level, s.energy.shape, round(S.hf_ratio(s), 4)) for s in maps])


# Two sanity references: a flat spectrum and a pure DC map.

# In[3]:

dc = np.zeros((8, 8))
dc[4, 4] = 1
print(S.hf_ratio(np.ones((8, 8))), S.hf_ratio(dc))


# ## Learned kernels
#
# One kernel per depth level; write them out as PGM images.

# In[4]:

import tempfile
from pathlib import Path

with tempfile.TemporaryDirectory() as tmp:
    for d, sigma, weights, img in S.kernel_gallery(models["antialias"]):
        S.write_pgm(Path(tmp) / f"kernel_d{d}.pgm", img)
        print(f"level {d}: sigma {sigma:.3f}, centre weight {weights[1, 1]:.4f}")
