"""Spatial regularizers for the topographic fc1 layer and the joint objective.

Three penalties over the unit grid:

* weight similarity: mean L2 distance between afferent weight vectors of
  grid-adjacent units,
* local activation similarity: mean Pearson correlation distance (1 - r)
  between batch activation vectors of grid-adjacent units,
* global activation similarity: mean squared gap between pairwise cosine
  similarity and the inverse-distance target 1/(d+1), over all unit pairs.

All three average over ordered pairs (840 neighbor pairs on the 11x11 grid;
N(N-1) pairs for the global variant) and are registered on the autodiff
tape with hand-derived gradients.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from topolab.grid import TopoGrid
from topolab.tensor import Tensor, add, make_op, scale, softmax_cross_entropy

# a unit whose batch variance falls below this is treated as degenerate:
# its pairs contribute r = 0 (distance 1) with no gradient flow
DEGENERATE_VAR = 1e-12


@dataclass
class LossBreakdown:
    l_ce: float
    l_spatial: float
    lam: float
    l_joint: float


def ws_loss(fc1_weights: Tensor, grid: TopoGrid) -> Tensor:
    """Mean neighbor-pair L2 distance between rows of (units, D) weights."""
    w = fc1_weights.data
    if w.ndim != 2 or w.shape[0] != grid.unit_count:
        raise ValueError(
            f"expected ({grid.unit_count}, D) weight rows, got {fc1_weights.shape}"
        )
    pi, pj = grid.pair_i, grid.pair_j
    pairs = w[pi] - w[pj]
    dist = np.sqrt((pairs**2).sum(axis=1))
    p = float(len(pi))
    loss = dist.sum() / p

    def backward_fn(g):
        gs = float(np.reshape(g, -1)[0]) / p
        # unit direction per pair; zero-distance pairs get zero subgradient
        safe = np.where(dist > 0.0, dist, 1.0)
        unit = pairs / safe[:, None]
        unit[dist == 0.0] = 0.0
        gw = np.zeros_like(w)
        np.add.at(gw, pi, gs * unit)
        np.add.at(gw, pj, -gs * unit)
        return (gw,)

    return make_op(np.asarray(loss), (fc1_weights,), backward_fn, "ws_loss")


def as_loss_local(fc1_pre_relu: Tensor, grid: TopoGrid) -> Tensor:
    """Mean (1 - Pearson r) over ordered neighbor pairs of unit columns.

    Correlation is taken over the batch dimension of (batch, units)
    activations; a batch of at least 2 is required.
    """
    a = fc1_pre_relu.data
    if a.ndim != 2 or a.shape[1] != grid.unit_count:
        raise ValueError(
            f"expected (batch, {grid.unit_count}) activations, got {fc1_pre_relu.shape}"
        )
    b = a.shape[0]
    if b < 2:
        raise ValueError(f"activation-similarity loss needs batch >= 2, got {b}")

    c = a - a.mean(axis=0, keepdims=True)
    sqnorm = (c**2).sum(axis=0)
    valid = sqnorm / b >= DEGENERATE_VAR
    norm = np.sqrt(np.where(valid, sqnorm, 1.0))
    z = np.where(valid[None, :], c / norm[None, :], 0.0)

    pi, pj = grid.pair_i, grid.pair_j
    r = (z[:, pi] * z[:, pj]).sum(axis=0)  # zero wherever an endpoint is degenerate
    p = float(len(pi))
    loss = (1.0 - r).sum() / p

    both_valid = valid[pi] & valid[pj]

    def backward_fn(g):
        gs = float(np.reshape(g, -1)[0]) / p
        # each ordered pair (i, j) contributes d(1-r)/da to both endpoints:
        # -(z_j - r z_i)/|c_i| at i and -(z_i - r z_j)/|c_j| at j
        term_i = (z[:, pj] - r[None, :] * z[:, pi]) / norm[pi][None, :]
        term_j = (z[:, pi] - r[None, :] * z[:, pj]) / norm[pj][None, :]
        mask = both_valid[None, :]
        ga = np.zeros_like(a)
        np.add.at(ga.T, pi, (-gs) * np.where(mask, term_i, 0.0).T)
        np.add.at(ga.T, pj, (-gs) * np.where(mask, term_j, 0.0).T)
        return (ga,)

    return make_op(np.asarray(loss), (fc1_pre_relu,), backward_fn, "as_loss_local")


def as_loss_global(fc1_pre_relu: Tensor, grid: TopoGrid) -> Tensor:
    """Mean squared (cosine - 1/(d+1)) gap over all ordered unit pairs."""
    a = fc1_pre_relu.data
    if a.ndim != 2 or a.shape[1] != grid.unit_count:
        raise ValueError(
            f"expected (batch, {grid.unit_count}) activations, got {fc1_pre_relu.shape}"
        )
    if a.shape[0] < 2:
        raise ValueError(f"activation-similarity loss needs batch >= 2, got {a.shape[0]}")
    n = grid.unit_count

    norm = np.sqrt((a**2).sum(axis=0))
    valid = norm > 0.0
    safe = np.where(valid, norm, 1.0)
    ahat = np.where(valid[None, :], a / safe[None, :], 0.0)

    s = ahat.T @ ahat  # zero-norm columns yield S = 0 for their pairs
    target = 1.0 / (grid.distances + 1.0)
    gap = s - target
    np.fill_diagonal(gap, 0.0)
    denom = float(n * (n - 1))
    loss = (gap**2).sum() / denom

    def backward_fn(g):
        gs = float(np.reshape(g, -1)[0])
        m = np.where(valid[None, :] & valid[:, None], gap, 0.0)
        diag = (m * s).sum(axis=1)
        ga = (4.0 * gs / denom) * (ahat @ m - ahat * diag[None, :]) / safe[None, :]
        ga = np.where(valid[None, :], ga, 0.0)
        return (ga,)

    return make_op(np.asarray(loss), (fc1_pre_relu,), backward_fn, "as_loss_global")


def joint_loss(
    logits: Tensor,
    targets: np.ndarray,
    spatial: Tensor | None = None,
    lam: float = 0.0,
) -> tuple[Tensor, LossBreakdown]:
    """Cross-entropy plus lam * spatial penalty, with a per-batch breakdown."""
    if lam < 0:
        raise ValueError(f"spatial weight must be nonnegative, got {lam}")
    ce = softmax_cross_entropy(logits, targets)
    l_spatial = spatial.item() if spatial is not None else 0.0
    if spatial is None or lam == 0.0:
        joint = ce
    else:
        joint = add(ce, scale(spatial, lam))
    breakdown = LossBreakdown(
        l_ce=ce.item(), l_spatial=l_spatial, lam=lam, l_joint=joint.item()
    )
    return joint, breakdown
