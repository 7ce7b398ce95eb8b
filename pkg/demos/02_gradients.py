
# coding: utf-8

# # Reverse mode on a tape, checked against finite differences
#
# Every op records a node while a Tape is active. `Tape.backward` walks the
# nodes in reverse and accumulates `.grad` on the inputs.

# In[1]:

import numpy as np

from dabnet import layers as L
from dabnet import tensor as T
from dabnet.gradcheck import numeric_grad, rel_error
from dabnet.tensor import Tape, Tensor

rng = np.random.Generator(np.random.Philox(0))


# ## A blur-pool and its sigma gradient

# In[2]:

x = rng.normal(size=(1, 2, 8, 8))
sigma = Tensor(0.8, requires_grad=True)
with Tape() as tape:
    y = L.dab_pool(Tensor(x), sigma, stride=2)
    loss = T.sum_all(T.mul(y, y))
tape.backward(loss)
print("tape   dL/dsigma =", float(sigma.grad))


# In[3]:

def f(s):
    out = L.dab_pool(Tensor(x), float(s), stride=2).data
    return float((out * out).sum())

fd = numeric_grad(f, np.array(0.8))
print("finite dL/dsigma =", float(fd), " rel err", rel_error(sigma.grad, fd))


# ## A whole convolution layer

# In[4]:

w = Tensor(rng.normal(size=(3, 2, 3, 3)), requires_grad=True)
xt = Tensor(x, requires_grad=True)
with Tape() as tape:
    out = T.conv2d(xt, w, stride=2, padding=1)
    loss = T.sum_all(T.relu(out))
tape.backward(loss)

g_fd = numeric_grad(lambda wv: float(T.relu(T.conv2d(Tensor(x), Tensor(wv), stride=2, padding=1)).data.sum()),
                    w.data)
print("weight grad rel err", rel_error(w.grad, g_fd))
