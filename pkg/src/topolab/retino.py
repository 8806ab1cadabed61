"""Wedge/ring stimulus generation and angular/eccentricity tuning analysis.

Stimuli are binary masks rasterized by pixel-center membership on the
image grid (even sizes only, so no pixel center sits exactly on the
rotation axes). Wedges: 36 positions of 10 degrees each at radius 14;
rings: 13 annuli with outer radii evenly spaced from 1 to 14 pixels and
fixed 1.5 px thickness.

Angular tuning is read from the discrete Fourier spectrum of a unit's
36-point wedge response. Powers are one-sided and normalized so that
DC power + harmonic powers = mean square of the response; the phase
convention recovers phi from cos(c*theta + phi).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import least_squares

from topolab.grid import TopoGrid

WEDGE_COUNT = 36
WEDGE_EXTENT_DEG = 10.0
WEDGE_RADIUS = 14.0
RING_COUNT = 13
RING_THICKNESS = 1.5
HARMONICS = (1, 2, 3, 4, 5)
POWER_TIE_EPS = 1e-9
PHASE_BIN_DEG = 15.0


def _polar_coordinates(img_size: int) -> tuple[np.ndarray, np.ndarray]:
    if img_size % 2:
        raise ValueError(f"stimulus rasterization expects an even image size, got {img_size}")
    center = (img_size - 1) / 2.0
    rows, cols = np.mgrid[0:img_size, 0:img_size].astype(np.float64)
    y = rows - center
    x = cols - center
    radius = np.hypot(y, x)
    angle = np.degrees(np.arctan2(y, x)) % 360.0
    return radius, angle


@dataclass
class WedgeSet:
    img_size: int
    masks: np.ndarray  # (36, H, W) binary float
    angles_deg: np.ndarray  # (36,) wedge start angles


@dataclass
class RingSet:
    img_size: int
    masks: np.ndarray  # (13, H, W) binary float
    outer_radii: np.ndarray  # (13,) strictly increasing


def gen_wedges(img_size: int) -> WedgeSet:
    """36 wedge masks of 10 degrees each, radius 14 px from image center."""
    radius, angle = _polar_coordinates(img_size)
    starts = np.arange(WEDGE_COUNT) * WEDGE_EXTENT_DEG
    masks = np.empty((WEDGE_COUNT, img_size, img_size))
    inside = radius <= WEDGE_RADIUS
    for k, start in enumerate(starts):
        in_angle = ((angle - start) % 360.0) < WEDGE_EXTENT_DEG
        masks[k] = (inside & in_angle).astype(np.float64)
    return WedgeSet(img_size=img_size, masks=masks, angles_deg=starts)


def gen_rings(img_size: int) -> RingSet:
    """13 annuli, outer radii 1..14 evenly spaced, thickness 1.5 px."""
    radius, _ = _polar_coordinates(img_size)
    outer = np.linspace(1.0, WEDGE_RADIUS, RING_COUNT)
    masks = np.empty((RING_COUNT, img_size, img_size))
    for k, r_out in enumerate(outer):
        r_in = max(0.0, r_out - RING_THICKNESS)
        masks[k] = ((radius > r_in) & (radius <= r_out)).astype(np.float64)
    return RingSet(img_size=img_size, masks=masks, outer_radii=outer)


# ---------------------------------------------------------------------------
# harmonic analysis
# ---------------------------------------------------------------------------


def power_spectrum(responses: np.ndarray) -> np.ndarray:
    """One-sided DFT power; powers (incl. DC) sum to the mean square."""
    r = np.asarray(responses, dtype=np.float64)
    n = len(r)
    spec = np.fft.rfft(r)
    power = np.abs(spec) ** 2 / n**2
    if n % 2 == 0:
        power[1:-1] *= 2.0
    else:
        power[1:] *= 2.0
    return power


@dataclass
class HarmonicProfile:
    powers: np.ndarray  # power at cycles 1..5
    dominant_cycle: int | None  # None for a flat (constant) profile
    phase_deg: float | None  # phase of the dominant component
    tie_flag: bool = False


def harmonic_spectrum(responses: np.ndarray) -> HarmonicProfile:
    """Power at cycles 1-5 and the dominant harmonic (DC excluded).

    A constant profile has no harmonic power and is flagged flat
    (dominant None). Ties within 1e-9 go to the lowest cycle, flagged.
    """
    r = np.asarray(responses, dtype=np.float64)
    if r.shape != (WEDGE_COUNT,):
        raise ValueError(f"expected a {WEDGE_COUNT}-point response profile, got {r.shape}")
    spec = np.fft.rfft(r)
    full_power = power_spectrum(r)
    powers = full_power[list(HARMONICS)]
    if powers.max() < POWER_TIE_EPS:
        return HarmonicProfile(powers=powers, dominant_cycle=None, phase_deg=None)
    best = float(powers.max())
    tied = np.flatnonzero(powers >= best - POWER_TIE_EPS)
    dominant = int(HARMONICS[tied[0]])
    tie_flag = len(tied) > 1
    phase = float(np.degrees(np.angle(spec[dominant])))
    return HarmonicProfile(powers=powers, dominant_cycle=dominant, phase_deg=phase,
                           tie_flag=tie_flag)


def peak_angle_deg(profile: HarmonicProfile) -> float:
    """Stimulus angle at which the dominant component peaks, in [0, 360/c)."""
    if profile.dominant_cycle is None:
        raise ValueError("flat profile has no peak angle")
    c = profile.dominant_cycle
    return float((-profile.phase_deg / c) % (360.0 / c))


def classify_phase(profile: HarmonicProfile, cycle: int) -> str:
    """Orientation label from the dominant component's peak angle.

    cycle 2: horizontal / vertical / diagonal / other (+-15 deg bins);
    cycle 4: cardinal / diagonal / other.
    """
    if cycle not in (2, 4):
        raise ValueError(f"phase classification is defined for cycles 2 and 4, got {cycle}")
    if profile.dominant_cycle != cycle:
        raise ValueError(
            f"profile's dominant cycle is {profile.dominant_cycle}, not the requested {cycle}"
        )
    theta = peak_angle_deg(profile)
    tol = PHASE_BIN_DEG
    if cycle == 2:
        if min(theta, 180.0 - theta) <= tol:
            return "horizontal"
        if abs(theta - 90.0) <= tol:
            return "vertical"
        if min(abs(theta - 45.0), abs(theta - 135.0)) <= tol:
            return "diagonal"
        return "other"
    if min(theta, 90.0 - theta) <= tol:
        return "cardinal"
    if abs(theta - 45.0) <= tol:
        return "diagonal"
    return "other"


def neighborhood_agreement(dominant_map: np.ndarray, grid: TopoGrid) -> tuple[float, float]:
    """Mean and sd over units of the Moore-neighbor label agreement."""
    labels = np.asarray(dominant_map).ravel()
    if labels.size != grid.unit_count:
        raise ValueError(f"need one label per grid unit ({grid.unit_count}), got {labels.size}")
    props = np.array([
        (labels[grid.moore(i)] == labels[i]).mean() for i in range(grid.unit_count)
    ])
    return float(props.mean()), float(props.std())


# ---------------------------------------------------------------------------
# eccentricity analysis
# ---------------------------------------------------------------------------


@dataclass
class EccentricityProfile:
    label: str  # increasing | decreasing | bandpass | flat
    linear_r: float
    gauss_params: tuple[float, float, float, float] | None = None  # (a, mu, sigma, b)
    r_squared: float | None = None
    fit_failed: bool = False


def _gaussian(x, a, mu, sigma, b):
    return a * np.exp(-((x - mu) ** 2) / (2.0 * sigma**2)) + b


def fit_eccentricity(responses: np.ndarray) -> EccentricityProfile:
    """Linear-then-Gaussian classification of a 13-ring response profile.

    Pearson |r| > 0.8 labels increasing/decreasing by sign; otherwise a
    bounded four-parameter Gaussian is fit with multiple center starts,
    and R^2 > 0.5 labels bandpass. Everything else is flat.
    """
    y = np.asarray(responses, dtype=np.float64)
    if y.shape != (RING_COUNT,):
        raise ValueError(f"expected a {RING_COUNT}-point response profile, got {y.shape}")
    x = np.arange(1.0, RING_COUNT + 1.0)

    ym = y - y.mean()
    denom = np.sqrt((ym**2).sum() * ((x - x.mean()) ** 2).sum())
    r = float((ym * (x - x.mean())).sum() / denom) if denom > 0 else 0.0
    if abs(r) > 0.8:
        return EccentricityProfile(label="increasing" if r > 0 else "decreasing", linear_r=r)

    ss_tot = float((ym**2).sum())
    if ss_tot == 0.0:
        return EccentricityProfile(label="flat", linear_r=0.0)

    a_max = max(float(np.abs(ym).max()), 1e-12)
    spread = float(y.max() - y.min())
    lower = [-10.0 * a_max, 0.0, 0.3, -np.inf]
    upper = [10.0 * a_max, 14.0, 14.0, np.inf]
    best = None
    for mu0 in (3.0, 6.0, 9.0, 12.0):
        x0 = [spread if spread > 0 else a_max, mu0, 2.0, float(y.min())]
        try:
            res = least_squares(
                lambda p: _gaussian(x, *p) - y, x0=x0, bounds=(lower, upper), method="trf"
            )
        except Exception:
            continue
        sse = float((res.fun**2).sum())
        if best is None or sse < best[0]:
            best = (sse, res.x)
    if best is None:
        return EccentricityProfile(label="flat", linear_r=r, fit_failed=True)

    sse, params = best
    r2 = 1.0 - sse / ss_tot
    if r2 > 0.5:
        return EccentricityProfile(
            label="bandpass", linear_r=r, gauss_params=tuple(params), r_squared=r2
        )
    return EccentricityProfile(
        label="flat", linear_r=r, gauss_params=tuple(params), r_squared=r2
    )


# ---------------------------------------------------------------------------
# per-model tuning report
# ---------------------------------------------------------------------------


@dataclass
class TuningReport:
    dominant: np.ndarray  # (121,) cycle per unit, 0 for flat
    agreement_mean: float
    agreement_sd: float
    cycle_proportions: dict  # cycle (1..5) and 0 (flat) -> fraction of units
    phase_classes: dict  # {2: {...label counts}, 4: {...}}
    ecc_labels: list  # per-unit eccentricity label
    ecc_proportions: dict  # label -> fraction
    bandpass_centers: list = field(default_factory=list)


def stimulus_batch(masks: np.ndarray, channels: int, mean, std) -> np.ndarray:
    """Replicate masks over channels and apply dataset normalization."""
    imgs = np.repeat(masks[:, None, :, :], channels, axis=1)
    mean = np.asarray(mean, dtype=np.float64).reshape(1, -1, 1, 1)
    std = np.asarray(std, dtype=np.float64).reshape(1, -1, 1, 1)
    return (imgs - mean) / std


def tuning_report(model, mean, std) -> TuningReport:
    """Angular and eccentricity tuning of a model's grid units.

    Responses are pre-ReLU fc1 activations to the normalized wedge and
    ring stimuli for the model's input geometry.
    """
    from topolab.models import fc1_activations

    img_size = 28 if model.arch == "mnist" else 32
    channels = 1 if model.arch == "mnist" else 3
    wedges = gen_wedges(img_size)
    rings = gen_rings(img_size)

    wedge_batch = stimulus_batch(wedges.masks, channels, mean, std)
    ring_batch = stimulus_batch(rings.masks, channels, mean, std)
    wedge_acts = fc1_activations(model, wedge_batch, "pre_relu")  # (36, 121)
    ring_acts = fc1_activations(model, ring_batch, "pre_relu")  # (13, 121)

    units = model.grid.unit_count
    dominant = np.zeros(units, dtype=np.int64)
    phase_classes = {2: {}, 4: {}}
    for u in range(units):
        profile = harmonic_spectrum(wedge_acts[:, u])
        if profile.dominant_cycle is None:
            continue
        dominant[u] = profile.dominant_cycle
        if profile.dominant_cycle in (2, 4):
            label = classify_phase(profile, profile.dominant_cycle)
            bucket = phase_classes[profile.dominant_cycle]
            bucket[label] = bucket.get(label, 0) + 1

    agreement_mean, agreement_sd = neighborhood_agreement(dominant, model.grid)
    cycle_proportions = {c: float((dominant == c).mean()) for c in (0, *HARMONICS)}

    ecc_labels = []
    bandpass_centers = []
    for u in range(units):
        prof = fit_eccentricity(ring_acts[:, u])
        ecc_labels.append(prof.label)
        if prof.label == "bandpass":
            bandpass_centers.append(float(prof.gauss_params[1]))
    ecc_proportions = {
        label: ecc_labels.count(label) / units
        for label in ("increasing", "decreasing", "bandpass", "flat")
    }

    return TuningReport(
        dominant=dominant,
        agreement_mean=agreement_mean,
        agreement_sd=agreement_sd,
        cycle_proportions=cycle_proportions,
        phase_classes=phase_classes,
        ecc_labels=ecc_labels,
        ecc_proportions=ecc_proportions,
        bandpass_centers=bandpass_centers,
    )
