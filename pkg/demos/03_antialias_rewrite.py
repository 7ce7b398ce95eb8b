
# coding: utf-8

# # Rewriting a CNN to be anti-aliased
#
# Start from three conv blocks ending in 2x2 max-pools. The rewrite turns
# each max-pool into a stride-1 max followed by a Gaussian blur-pool, and
# each ReLU into AA-ReLU. Output sizes do not change.

# In[1]:

from dabnet import netbuild as NB

base = NB.build_toy_cnn()
aa = NB.rewrite_antialias(base, m=3, af="aa_relu", blur="dab")


# In[2]:

for name, g in (("baseline", base), ("anti-aliased", aa)):
    print(name)
    for spec, shape in zip(g.layers, g.output_shapes()):
        print(f"   {spec.kind:16s} {str(spec.hp):45s} -> {shape}")


# Sigma starts at D/2 for depth level D.

# In[3]:

print([aa.layers[i].hp["sigma_init"] for i in aa.depth_levels()])


# Strided convolutions become stride-1 convolutions followed by a blur-pool, and
# a fixed binomial kernel can stand in for the learnable one.

# In[4]:

conv = NB.rewrite_antialias(NB.build_toy_cnn(downsample="conv"), blur="bin3", af="relu")
print([s.kind for s in conv.layers])


# The rewrite is idempotent.

# In[5]:

print(NB.rewrite_antialias(aa).to_dict() == aa.to_dict())


# ## Saving and loading

# In[6]:

import tempfile
from pathlib import Path

model = NB.make_model(aa, seed=0)
with tempfile.TemporaryDirectory() as tmp:
    path = NB.save_checkpoint(model, Path(tmp) / "aa.ckpt")
    back, meta = NB.load_checkpoint(path)
print(meta, back.sigmas(), back.alphas())
