"""Weight-space and image-space noise interventions.

Image noise operates in raw [0, 1] pixel space and is followed by dataset
normalization in the evaluation pipeline (noise first, then normalize).
Per-image randomness comes from counter-based Philox streams keyed by
(base_seed, image_index), so perturbations commute with batching.

Default intensity ladders (config-overridable; the cross-condition
orderings, not the absolute levels, carry the conclusions):

* white/pink scale: 0.2, 0.4, 0.6, 0.8, 1.0
* salt-and-pepper proportion: 0.05, 0.1, 0.2, 0.3, 0.4
* weight noise, in units of sd(W): 0.25, 0.5, 1.0, 2.0
"""

from __future__ import annotations

import numpy as np

WHITE_LADDER = (0.2, 0.4, 0.6, 0.8, 1.0)
PINK_LADDER = (0.2, 0.4, 0.6, 0.8, 1.0)
SALT_PEPPER_LADDER = (0.05, 0.1, 0.2, 0.3, 0.4)
WEIGHT_SIGMA_LADDER = (0.25, 0.5, 1.0, 2.0)

NOISE_KINDS = ("white", "pink", "salt_pepper")

DEFAULT_LADDERS = {
    "white": WHITE_LADDER,
    "pink": PINK_LADDER,
    "salt_pepper": SALT_PEPPER_LADDER,
}


def _image_rng(base_seed: int, index: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=(int(base_seed), int(index))))


def perturb_weights(weights: np.ndarray, sigma_scale: float, seed: int) -> np.ndarray:
    """Additive Gaussian noise scaled by the matrix's own sd; pure copy.

    sigma_scale is in units of sd(weights) so intensities are comparable
    across models; sigma_scale = 0 returns an exact copy.
    """
    if sigma_scale < 0:
        raise ValueError(f"sigma_scale must be nonnegative, got {sigma_scale}")
    out = np.array(weights, dtype=np.float64, copy=True)
    if sigma_scale == 0.0:
        return out
    rng = np.random.default_rng(seed)
    sigma = sigma_scale * weights.std()
    out += rng.normal(0.0, sigma, size=weights.shape)
    return out


def add_white_noise(img: np.ndarray, intensity: float, rng: np.random.Generator) -> np.ndarray:
    """pixel += intensity * N(0, 1), clamped back to [0, 1]."""
    if intensity == 0.0:
        return img.copy()
    out = img + intensity * rng.standard_normal(img.shape)
    return np.clip(out, 0.0, 1.0)


def pink_field(shape: tuple[int, int], rng: np.random.Generator) -> np.ndarray:
    """Zero-mean, unit-variance 2-d field with amplitude ~ 1/f (power ~ 1/f^2).

    White spectral coefficients are shaped by 1/f over radial spatial
    frequency with the DC component removed, then inverse-transformed.
    """
    h, w = shape
    white = rng.standard_normal((h, w))
    spectrum = np.fft.fft2(white)
    fy = np.fft.fftfreq(h)[:, None]
    fx = np.fft.fftfreq(w)[None, :]
    f = np.sqrt(fy**2 + fx**2)
    amp = np.zeros_like(f)
    nonzero = f > 0
    amp[nonzero] = 1.0 / f[nonzero]
    field = np.fft.ifft2(spectrum * amp).real
    std = field.std()
    if std == 0.0:
        return np.zeros(shape)
    return field / std


def add_pink_noise(img: np.ndarray, intensity: float, rng: np.random.Generator) -> np.ndarray:
    """Add an independent unit-variance 1/f field per channel, then clamp."""
    if intensity == 0.0:
        return img.copy()
    c, h, w = img.shape
    noise = np.stack([pink_field((h, w), rng) for _ in range(c)])
    return np.clip(img + intensity * noise, 0.0, 1.0)


def add_salt_pepper(img: np.ndarray, proportion: float, rng: np.random.Generator) -> np.ndarray:
    """Set exactly round(p*H*W) distinct pixel sites to 0 or 1.

    The site mask is shared across channels; each chosen site goes black
    or white with equal probability.
    """
    if not 0.0 <= proportion <= 1.0:
        raise ValueError(f"proportion must be in [0, 1], got {proportion}")
    out = img.copy()
    if proportion == 0.0:
        return out
    c, h, w = img.shape
    k = int(round(proportion * h * w))
    if k == 0:
        return out
    sites = rng.choice(h * w, size=k, replace=False)
    values = (rng.random(k) < 0.5).astype(np.float64)
    flat = out.reshape(c, h * w)
    flat[:, sites] = values[None, :]
    return out


_NOISE_FNS = {
    "white": add_white_noise,
    "pink": add_pink_noise,
    "salt_pepper": add_salt_pepper,
}


def apply_noise(images: np.ndarray, kind: str, intensity: float, base_seed: int) -> np.ndarray:
    """Per-image independent noise over a (N, C, H, W) stack."""
    if kind not in _NOISE_FNS:
        raise ValueError(f"unknown noise kind {kind!r}; expected one of {NOISE_KINDS}")
    fn = _NOISE_FNS[kind]
    out = np.empty_like(images)
    for i in range(images.shape[0]):
        out[i] = fn(images[i], intensity, _image_rng(base_seed, i))
    return out


def noise_accuracy_curve(
    model,
    raw_test_images: np.ndarray,
    test_labels: np.ndarray,
    norm_mean: np.ndarray,
    norm_std: np.ndarray,
    kind: str,
    intensities=None,
    n_reps: int = 3,
    base_seed: int = 0,
) -> list[dict]:
    """Baseline-normalized accuracy per intensity, averaged over noise seeds.

    Images must be raw [0, 1]; each repetition draws fresh per-image noise,
    then the images are normalized and scored. Rows include the clean
    intensity-0 baseline (normalized accuracy exactly 1).
    """
    from topolab.train import evaluate  # local import to avoid a cycle
    from topolab.data import Dataset, normalize

    if intensities is None:
        intensities = DEFAULT_LADDERS[kind]

    def accuracy_of(images01):
        ds = normalize(
            Dataset(images01, test_labels, "test"), norm_mean, norm_std
        )
        return evaluate(model, ds)

    clean = accuracy_of(raw_test_images)
    rows = [{
        "kind": kind, "intensity": 0.0, "accuracy": clean,
        "normalized_accuracy": 1.0, "reps": 1,
    }]
    kind_index = NOISE_KINDS.index(kind)
    for level, intensity in enumerate(intensities):
        accs = []
        for rep in range(n_reps):
            seed = int(
                np.random.SeedSequence([base_seed, kind_index, level, rep]).generate_state(1)[0]
            )
            noisy = apply_noise(raw_test_images, kind, intensity, seed)
            accs.append(accuracy_of(noisy))
        mean_acc = float(np.mean(accs))
        rows.append({
            "kind": kind, "intensity": float(intensity), "accuracy": mean_acc,
            "normalized_accuracy": mean_acc / clean if clean > 0 else 0.0,
            "reps": n_reps,
        })
    return rows
