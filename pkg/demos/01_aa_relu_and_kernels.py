
# coding: utf-8

# # AA-ReLU and the depth-adaptive Gaussian kernel
#
# Two building blocks. AA-ReLU is the identity up to alpha, rolls off along
# alpha*sin(ln(x/alpha)) + alpha, and flattens at 2*alpha. The blur kernel is a
# normalized m x m Gaussian whose sigma is learned separately at every
# down-sampling depth.

# In[1]:

import numpy as np

from dabnet import layers as L


# ## AA-ReLU at alpha = 9
#
# The worked example: inputs on every branch.

# In[2]:

x = np.array([-9.0, 3.0, 8.9, 9.0, 10.0, 43.3, 81.0])
y = L.aa_relu_forward(x, 9.0)
for xi, yi in zip(x, y):
    print(f"F({xi:5.1f}) = {yi:.6f}")


# The maximum sits where ln(x/alpha) = pi/2.

# In[3]:

x_star = 9.0 * np.exp(np.pi / 2)
print("x* =", x_star, " F(x*) =", L.aa_relu_forward(np.array([x_star]), 9.0)[0])


# Slopes: 1 on the linear part, alpha*cos(u)/x on the roll-off, 0 on the plateau.
# The alpha gradient is what lets each layer move its own ceiling.

# In[4]:

probe = np.array([5.0, 12.0, 30.0, 60.0])
print("dF/dx     ", L.aa_relu_grad_x(probe, 9.0).round(4))
print("dF/dalpha ", L.aa_relu_grad_alpha(probe, 9.0).round(4))


# ## Gaussian kernels
#
# Centre weight shrinks as sigma grows, so deeper levels (larger sigma)
# low-pass harder.

# In[5]:

print(L.gaussian_kernel(1.0, 3).round(7))
for s in (0.5, 1.0, 1.5, 3.0):
    k = L.gaussian_kernel(s, 5)
    print(f"sigma {s:3.1f}  centre {k[2, 2]:.4f}  sum {k.sum():.15f}")


# Sigma is kept strictly increasing with depth after every step.

# In[6]:

print(L.project_monotone([0.05, 0.04, 2.0]))
print(L.project_monotone([1.2, 0.9, 0.95]))
