"""Independent numerical oracles shared by the test modules."""

import torch


def central_difference_grad(f, tensor: torch.Tensor, eps: float = 1e-6) -> torch.Tensor:
    """Gradient of the scalar ``f()`` with respect to ``tensor`` by central differences.

    Grad mode stays on so ``f`` may itself differentiate (gradient penalties).
    """
    grad = torch.zeros_like(tensor)
    flat = tensor.data.view(-1)
    g = grad.view(-1)
    for i in range(flat.numel()):
        orig = flat[i].item()
        flat[i] = orig + eps
        plus = f().item()
        flat[i] = orig - eps
        minus = f().item()
        flat[i] = orig
        g[i] = (plus - minus) / (2 * eps)
    return grad


def relative_error(analytic: torch.Tensor, numeric: torch.Tensor) -> float:
    a = analytic.detach().double().flatten()
    n = numeric.detach().double().flatten()
    scale = max(a.norm().item(), n.norm().item(), 1e-12)
    return (a - n).norm().item() / scale


class TinyEncoder(torch.nn.Module):
    """Smooth single-layer encoder for small differentiable critics."""

    def __init__(self, d_in: int, r: int):
        super().__init__()
        self.lin = torch.nn.Linear(d_in, r)

    def forward(self, x):
        return torch.tanh(self.lin(x.flatten(1)))


def tiny_critic(d_in: int, r: int, blocks: int = 2, seed: int = 0, randomize: bool = True):
    from hw2mp.swd import SwdDiscriminator

    torch.manual_seed(seed)
    disc = SwdDiscriminator(TinyEncoder(d_in, r), r, blocks, seed=seed).double()
    if randomize:
        with torch.no_grad():
            disc.blocks.u.normal_()
            disc.blocks.w.normal_()
            disc.blocks.b.normal_()
    return disc
