"""
The loss kernels on hand-made inputs
====================================

Each training stage minimizes a small closed-form objective. Feeding them
inputs whose answer is known by hand is the quickest way to build intuition
for their scale and sign.
"""

import math

import numpy as np
import torch

from crossview.contrast import conditional_loss, joint_probability, mutual_info_loss
from crossview.vae import kl_loss, reparameterize

torch.manual_seed(0)

# KL to a standard normal grows with both the mean and the spread
for mu, sigma in [(0.0, 1.0), (1.0, 1.0), (0.0, 2.0), (0.0, 0.1)]:
    kl = float(kl_loss(torch.tensor([mu], dtype=torch.float64), torch.tensor([sigma], dtype=torch.float64)))
    print(f"KL(mu={mu}, sigma={sigma}) = {kl:.4f}")

# Reparameterized samples keep the moments of N(mu, sigma^2)
z = reparameterize(torch.tensor(2.0), torch.tensor(3.0), torch.randn(50_000))
print(f"sample mean {float(z.mean()):.3f}, std {float(z.std()):.3f}")

# The information term rewards confident, agreeing cluster assignments
print("\nalpha  diagonal   uniform")
for alpha in (0.0, 1.0, 9.0):
    d = float(mutual_info_loss(np.diag([0.5, 0.5]), alpha))
    u = float(mutual_info_loss(np.full((2, 2), 0.25), alpha))
    print(f"{alpha:5.1f} {d:9.4f} {u:9.4f}")
print(f"-ln 2 = {-math.log(2):.4f}")

# Logits that agree across views concentrate P on the diagonal
z1 = torch.tensor([[8.0, 0.0], [0.0, 8.0]] * 8)
print("\nagreeing views:\n", joint_probability(z1, z1).P.numpy().round(3))
print("shuffled views:\n", joint_probability(z1, z1.flip(0)[torch.randperm(16)]).P.numpy().round(3))

# The prediction term only looks at directions
e = np.eye(3)
print("\naligned", float(conditional_loss(e[0], 5 * e[0], e[1], e[1])),
      "orthogonal", float(conditional_loss(e[0], e[1], e[1], e[2])),
      "opposed", float(conditional_loss(e[0], -e[0], e[1], -e[1])))
