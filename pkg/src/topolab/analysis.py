"""Scalar and matrix analyses of trained models.

Covers prototype-geometry robustness (RSM / second-order isomorphism under
weight noise), unit compactness (entropy, fraction of zero activations),
spatial organization (neighbor correlations, co-localization distances,
Moran's I), effective dimensionality, and calibration.

Correlation conventions: a unit whose variance over the sample axis falls
below 1e-12 is degenerate; its pairs score r = 0 and are flagged rather
than propagating NaNs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from topolab.grid import TopoGrid
from topolab.noise import perturb_weights

DEGENERATE_VAR = 1e-12


# ---------------------------------------------------------------------------
# correlation machinery
# ---------------------------------------------------------------------------


def pearson_matrix(columns: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """All-pairs Pearson correlation of (n_samples, n_units) columns.

    Returns (R, valid): R is (units, units) with unit diagonal for valid
    units; pairs touching a degenerate unit score 0. valid marks units
    with non-vanishing variance.
    """
    x = np.asarray(columns, dtype=np.float64)
    n = x.shape[0]
    c = x - x.mean(axis=0, keepdims=True)
    sq = (c**2).sum(axis=0)
    valid = sq / n >= DEGENERATE_VAR
    norm = np.sqrt(np.where(valid, sq, 1.0))
    z = np.where(valid[None, :], c / norm[None, :], 0.0)
    r = np.clip(z.T @ z, -1.0, 1.0)
    np.fill_diagonal(r, np.where(valid, 1.0, 0.0))
    return r, valid


@dataclass
class CorrelationField:
    """Per-unit mean neighbor correlation plus the all-pairs distribution."""

    kind: str  # "in_weight" | "activation"
    neighbor_mean: np.ndarray  # (units,)
    all_pairs: np.ndarray  # (units * (units - 1) / 2,)
    degenerate_units: np.ndarray  # indices of flagged units


def _correlation_field(columns: np.ndarray, grid: TopoGrid, kind: str) -> CorrelationField:
    r, valid = pearson_matrix(columns)
    neighbor_mean = np.array([r[i, grid.moore(i)].mean() for i in range(grid.unit_count)])
    iu, ju = np.triu_indices(grid.unit_count, k=1)
    return CorrelationField(
        kind=kind,
        neighbor_mean=neighbor_mean,
        all_pairs=r[iu, ju],
        degenerate_units=np.flatnonzero(~valid),
    )


def neighbor_weight_correlation(fc1_weights: np.ndarray, grid: TopoGrid) -> CorrelationField:
    """Pearson r between afferent weight vectors of grid-adjacent units.

    fc1_weights is (units, D); correlations run over the D incoming
    connections, and each unit gets the mean over its Moore neighborhood.
    """
    w = np.asarray(fc1_weights, dtype=np.float64)
    if w.ndim != 2 or w.shape[0] != grid.unit_count:
        raise ValueError(f"expected ({grid.unit_count}, D) weights, got {w.shape}")
    return _correlation_field(w.T, grid, kind="in_weight")


def activation_correlations(acts: np.ndarray, grid: TopoGrid) -> CorrelationField:
    """Pearson r between unit activation profiles over a stimulus set."""
    a = np.asarray(acts, dtype=np.float64)
    if a.ndim != 2 or a.shape[1] != grid.unit_count:
        raise ValueError(f"expected (N, {grid.unit_count}) activations, got {a.shape}")
    return _correlation_field(a, grid, kind="activation")


# ---------------------------------------------------------------------------
# representational geometry
# ---------------------------------------------------------------------------


def compute_rsm(prototypes: np.ndarray, metric: str = "cosine") -> np.ndarray:
    """Pairwise similarity of class prototype rows -> (K, K) matrix.

    Cosine by default; "pearson" is available as a config swap. Zero-norm
    rows get similarity 0 against everything (flagged case).
    """
    w = np.asarray(prototypes, dtype=np.float64)
    if w.ndim != 2:
        raise ValueError(f"prototypes must be a matrix, got shape {w.shape}")
    if metric == "pearson":
        r, _ = pearson_matrix(w.T)
        return r
    if metric != "cosine":
        raise ValueError(f"unknown RSM metric {metric!r}")
    norms = np.sqrt((w**2).sum(axis=1))
    valid = norms > 0
    safe = np.where(valid, norms, 1.0)
    unit = np.where(valid[:, None], w / safe[:, None], 0.0)
    rsm = np.clip(unit @ unit.T, -1.0, 1.0)
    np.fill_diagonal(rsm, np.where(valid, 1.0, 0.0))
    return rsm


def second_order_isomorphism(rsm_a: np.ndarray, rsm_b: np.ndarray) -> float:
    """Cosine similarity of the strict upper triangles of two RSMs."""
    a = np.asarray(rsm_a, dtype=np.float64)
    b = np.asarray(rsm_b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"RSMs must be square and equal-shaped, got {a.shape} and {b.shape}")
    iu, ju = np.triu_indices(a.shape[0], k=1)
    ta, tb = a[iu, ju], b[iu, ju]
    na, nb = np.sqrt((ta**2).sum()), np.sqrt((tb**2).sum())
    if na == 0.0 or nb == 0.0:
        raise ValueError("second-order isomorphism undefined for a zero upper triangle")
    return float((ta * tb).sum() / (na * nb))


def weight_perturbation_rows(
    model,
    test_images: np.ndarray,
    test_labels: np.ndarray,
    sigma_scales=None,
    n_reps: int = 100,
    base_seed: int = 0,
) -> list[dict]:
    """The prototype-robustness protocol: noisy fc2, recomputed RSM, rescored.

    For each noise level and repetition, Gaussian noise scaled by the
    matrix sd is added to the (10, 121) prototype matrix; we record the
    second-order isomorphism against the clean RSM and the classification
    accuracy with the perturbed matrix swapped in. The clean matrix is
    restored afterwards, so baseline behavior is untouched.
    """
    from topolab.noise import WEIGHT_SIGMA_LADDER
    from topolab.train import evaluate
    from topolab.data import Dataset

    if sigma_scales is None:
        sigma_scales = WEIGHT_SIGMA_LADDER
    ds = Dataset(test_images, test_labels, "test", normalization=((0,), (1,)))

    clean = model.class_prototypes()
    baseline_rsm = compute_rsm(clean)
    baseline_acc = evaluate(model, ds)
    fc2 = model.params["fc2_w"].data
    rows = []
    try:
        for level, sigma in enumerate(sigma_scales):
            for rep in range(n_reps):
                seed = int(
                    np.random.SeedSequence([base_seed, level, rep]).generate_state(1)[0]
                )
                noisy = perturb_weights(clean, sigma, seed)
                soi = second_order_isomorphism(baseline_rsm, compute_rsm(noisy))
                fc2[...] = noisy
                acc = evaluate(model, ds)
                rows.append({
                    "sigma_scale": float(sigma),
                    "rep": rep,
                    "soi": soi,
                    "accuracy": acc,
                    "baseline_accuracy": baseline_acc,
                    "drop_pp": (baseline_acc - acc) * 100.0,
                    "drop_rel": (baseline_acc - acc) / baseline_acc if baseline_acc > 0 else 0.0,
                })
    finally:
        fc2[...] = clean
    return rows


# ---------------------------------------------------------------------------
# unit compactness
# ---------------------------------------------------------------------------


def unit_entropy(pre_relu_acts: np.ndarray, bins: int = 30) -> tuple[np.ndarray, float]:
    """Shannon entropy (nats) of each unit's activation histogram.

    Histograms use equal-width bins spanning each unit's observed range;
    a constant unit has zero entropy. Returns per-unit values and the
    grid mean.
    """
    a = np.asarray(pre_relu_acts, dtype=np.float64)
    n, units = a.shape
    ents = np.zeros(units)
    for u in range(units):
        col = a[:, u]
        lo, hi = col.min(), col.max()
        if hi <= lo:
            continue
        counts, _ = np.histogram(col, bins=bins, range=(lo, hi))
        p = counts[counts > 0] / n
        ents[u] = float(-(p * np.log(p)).sum())
    return ents, float(ents.mean())


def poz(post_relu_acts: np.ndarray) -> tuple[np.ndarray, float]:
    """Per-unit fraction of inputs with zero activation, plus the grid mean."""
    a = np.asarray(post_relu_acts, dtype=np.float64)
    frac = (a <= 0.0).mean(axis=0)
    return frac, float(frac.mean())


# ---------------------------------------------------------------------------
# spatial statistics
# ---------------------------------------------------------------------------


@dataclass
class ColocalizationResult:
    alpha: float
    pair_count: int
    mean_distance: float | None  # None when no pair clears the threshold
    control_mean: float | None  # random index-to-grid assignment baseline


COLOCALIZATION_ALPHAS = (0.1, 0.3, 0.5, 0.6, 0.7, 0.8)


def colocalization_distance(
    acts: np.ndarray,
    grid: TopoGrid,
    alpha: float,
    n_control_permutations: int = 1000,
    control_seed: int = 0,
) -> ColocalizationResult:
    """Mean grid distance between unit pairs whose activation correlation
    exceeds alpha, with a random-assignment control baseline."""
    r, _ = pearson_matrix(acts)
    iu, ju = np.triu_indices(grid.unit_count, k=1)
    connected = r[iu, ju] > alpha
    pi, pj = iu[connected], ju[connected]
    count = int(connected.sum())
    if count == 0:
        return ColocalizationResult(alpha, 0, None, None)
    mean_dist = float(grid.distances[pi, pj].mean())

    rng = np.random.default_rng(control_seed)
    control = np.empty(n_control_permutations)
    for k in range(n_control_permutations):
        perm = rng.permutation(grid.unit_count)
        control[k] = grid.distances[perm[pi], perm[pj]].mean()
    return ColocalizationResult(alpha, count, mean_dist, float(control.mean()))


def morans_i(activation_map: np.ndarray, grid: TopoGrid) -> float:
    """Spatial autocorrelation with binary Moore weights, N/W global scaling.

    A constant map has zero variance; it scores 0 (flagged case).
    """
    x = np.asarray(activation_map, dtype=np.float64).ravel()
    if x.size != grid.unit_count:
        raise ValueError(f"map must have {grid.unit_count} cells, got {x.size}")
    xc = x - x.mean()
    denom = (xc**2).sum()
    if denom == 0.0:
        return 0.0
    w = grid.adjacency
    num = xc @ (w @ xc)
    return float(grid.unit_count / grid.pair_count * num / denom)


def morans_i_batch(acts: np.ndarray, grid: TopoGrid) -> np.ndarray:
    """Moran's I per row of (N, units) activation maps, vectorized."""
    a = np.asarray(acts, dtype=np.float64)
    xc = a - a.mean(axis=1, keepdims=True)
    denom = (xc**2).sum(axis=1)
    num = ((xc @ grid.adjacency) * xc).sum(axis=1)
    out = np.zeros(a.shape[0])
    ok = denom > 0
    out[ok] = grid.unit_count / grid.pair_count * num[ok] / denom[ok]
    return out


# ---------------------------------------------------------------------------
# dimensionality and calibration
# ---------------------------------------------------------------------------


def effective_dimensionality(matrix: np.ndarray) -> float:
    """Participation ratio of the column-covariance spectrum.

    ED = (sum eig)^2 / sum(eig^2) over eigenvalues of the covariance of
    the mean-centered columns; equals the count of equally occupied
    latent dimensions for whitened data.
    """
    m = np.asarray(matrix, dtype=np.float64)
    if m.ndim != 2:
        raise ValueError(f"expected a matrix, got shape {m.shape}")
    if not m.any():
        raise ValueError("effective dimensionality undefined for an all-zero matrix")
    c = m - m.mean(axis=0, keepdims=True)
    n = m.shape[0]
    cov = c.T @ c / max(n - 1, 1)
    eig = np.clip(np.linalg.eigvalsh(cov), 0.0, None)
    total = eig.sum()
    if total == 0.0:
        raise ValueError("effective dimensionality undefined for constant columns")
    return float(total**2 / (eig**2).sum())


def calibration(logits: np.ndarray, labels: np.ndarray, n_bins: int = 15) -> tuple[float, float]:
    """(expected calibration error, mean top1-top2 logit gap).

    ECE uses equal-width bins over the top-1 softmax probability.
    """
    z = np.asarray(logits, dtype=np.float64)
    y = np.asarray(labels)
    zs = z - z.max(axis=1, keepdims=True)
    p = np.exp(zs)
    p /= p.sum(axis=1, keepdims=True)
    conf = p.max(axis=1)
    pred = p.argmax(axis=1)
    correct = pred == y

    n = len(y)
    ece = 0.0
    edges = np.linspace(0.0, 1.0, n_bins + 1)
    for lo, hi in zip(edges[:-1], edges[1:]):
        sel = (conf > lo) & (conf <= hi) if lo > 0 else (conf >= lo) & (conf <= hi)
        if not sel.any():
            continue
        ece += sel.sum() / n * abs(correct[sel].mean() - conf[sel].mean())

    part = np.partition(z, -2, axis=1)
    gap = float((part[:, -1] - part[:, -2]).mean())
    return float(ece), gap
