
# coding: utf-8

# # Adversarial translations
#
# Three searches over (tx, ty): a gradient ascent through the differentiable
# warp, an exhaustive integer grid, and the worst of k random draws.

# In[1]:

import numpy as np

from dabnet import attacks as A
from _quick import quick_model, sample

train_set, test_set = sample()
model = quick_model("antialias", train_set)
sub = test_set.take(np.arange(100))
x, y = sub.images, sub.labels
print("clean accuracy", np.mean(model.predict(x) == y))


# ## Grid search: every integer offset in [-5, 5]^2

# In[2]:

grid = A.attack_grid_search(model, x, y)
print("post-attack accuracy", A.post_attack_accuracy(grid), " queries per image", grid[0].queries)
print("first few adversarial offsets", [(e.tx, e.ty) for e in grid if e.success][:5])


# ## Worst-of-k: a nested random pool, so accuracy can only go down with k

# In[3]:

for k in (1, 5, 10, 20):
    print(k, A.post_attack_accuracy(A.attack_worst_of_k(model, x, y, A.AttackBudget(4.0, k=k))))


# ## First order: projected gradient ascent on the loss

# In[4]:

entries, trace = A.first_order_trace(model, x, y, A.AttackBudget(4.0, steps=20, step_size=0.3))
print("post-attack accuracy", A.post_attack_accuracy(entries))
print("largest |t| reached", np.abs(trace).max())
