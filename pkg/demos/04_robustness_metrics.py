
# coding: utf-8

# # Shift consistency, flip probability, corruption error
#
# Train a baseline and an anti-aliased model briefly, then compare them. Two
# epochs on 2000 digits is enough to see the metrics move; the numbers are
# noisy at this scale.

# In[1]:

import numpy as np

from dabnet import robustness as R
from _quick import quick_model, sample

train_set, test_set = sample()
models = {v: quick_model(v, train_set) for v in ("baseline", "antialias")}


# ## Consistency under diagonal shifts and rescaling

# In[2]:

for v, m in models.items():
    reps = [R.protocol_diagonal(m, test_set, seed=0), R.protocol_rescale(m, test_set),
            R.protocol_double_rescale(m, test_set)]
    print(v, {r.protocol: round(r.consistency, 4) for r in reps}, "acc", round(reps[0].clean_accuracy, 4))


# ## Flip probability along perturbation sequences
#
# 31 frames per image, from the clean image to the maximum perturbation.

# In[3]:

imgs = test_set.images[:40]
for v, m in models.items():
    fps = {k: round(R.flip_probability(m, R.make_sequences(imgs, k, 31), k).fp, 4)
           for k in ("translate", "rotate", "tilt", "scale")}
    print(v, fps)


# ## Corruption error

# In[4]:

for v, m in models.items():
    rep = R.corruption_error(m, test_set.take(np.arange(200)), severities=(1, 3, 5))
    print(v, {k: round(e, 4) for k, e in rep.per_kind().items()}, "mCE", round(rep.mce, 4))
