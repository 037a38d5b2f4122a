"""
Orthogonal projections in a critic block
========================================

A critic block projects an embedding with an orthogonal matrix and applies
a learned leaky ramp per coordinate. Training must keep the matrix
orthogonal, which the Riemannian step guarantees: here we drive it with
random gradients and track the orthogonality error, then fit the block
to a simple target.
"""

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np
import torch

from hw2mp.swd import SwdBlocks, init_orthogonal, orthogonality_error, stiefel_step_, stiefel_update

rng = np.random.default_rng(1)
theta = init_orthogonal(32, seed=0)
errors = []
for _ in range(2000):
    theta = stiefel_update(theta, rng.normal(size=(32, 32)), lr=0.05)
    errors.append(orthogonality_error(theta))
print(f"worst orthogonality error over 2000 random steps: {max(errors):.2e}")

# fit a 2-block critic to score points by their first coordinate
torch.manual_seed(0)
blocks = SwdBlocks(r=4, num_blocks=2, seed=0)
opt = torch.optim.Adam(blocks.euclidean_parameters(), lr=1e-2)
losses = []
for _ in range(300):
    x = torch.randn(64, 4)
    loss = (blocks(x) - x[:, 0]).pow(2).mean()
    blocks.zero_grad()
    loss.backward()
    opt.step()
    stiefel_step_(blocks.theta, 1e-2)
    losses.append(loss.item())
print(f"fit loss {losses[0]:.3f} -> {losses[-1]:.3f}")
print("projection still orthogonal:", [f"{orthogonality_error(t):.1e}" for t in blocks.theta])

fig, (a, b) = plt.subplots(1, 2, figsize=(9, 3.2))
a.semilogy(np.maximum(errors, 1e-17))
a.set_title("orthogonality error")
b.plot(losses)
b.set_title("block fit loss")
fig.tight_layout()
fig.savefig("orthogonal_critic.png")
print("wrote orthogonal_critic.png")
