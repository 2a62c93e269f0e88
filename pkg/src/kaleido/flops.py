"""Inference FLOPs for sparse fully-connected layers and GRU cells."""
from __future__ import annotations

import math
from fractions import Fraction


def flops_fc(in_dim: int, out_dim: int, sparsity: float = 0.0) -> int:
    """Multiply-adds of a (possibly sparse) dense layer: 2 (1 - sparsity) in out, floored."""
    if not 0.0 <= sparsity <= 1.0:
        raise ValueError(f"sparsity must lie in [0, 1], got {sparsity}")
    # exact rational arithmetic before flooring avoids 4095.999... artefacts
    return math.floor(2 * (1 - Fraction(sparsity)) * in_dim * out_dim)


def flops_gru(in_dim: int, hidden: int) -> int:
    """2 (3 H^2 + 3 In H + 13 H)."""
    if in_dim < 0 or hidden < 0:
        raise ValueError("dimensions must be nonnegative")
    return 2 * (3 * hidden * hidden + 3 * in_dim * hidden + 13 * hidden)


def mlp_flops(dims, sparsities=None) -> int:
    """Sum of layer FLOPs for an MLP with layer sizes ``dims``."""
    n = len(dims) - 1
    sparsities = [0.0] * n if sparsities is None else list(sparsities)
    return sum(flops_fc(dims[l], dims[l + 1], sparsities[l]) for l in range(n))
