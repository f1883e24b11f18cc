"""Anatomy-aware augmentation: recombine donor centerlines and radius profiles.

A synthetic twin takes the centerline of one donor and the radius profile of
another. The centerline is rotated, bent and smoothed, both profiles are
resampled, the radius is perturbed, and a circular section is swept at every
centerline point.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.ndimage import gaussian_filter1d, median_filter
from scipy.spatial.transform import Rotation

from .geometry import (
    Centerline,
    DigitalTwin,
    GeometryError,
    compute_frames,
    normalize_scale,
    resample,
    resample_profile,
)

# Ranges sampled by sample_params for corpus generation.
DEFAULT_RANGES = {
    "bend_amplitude": (0.0, 0.05),
    "bend_frequency": (0.5, 2.0),
    "smoothing_sigma": (0.0, 3.0),
    "radius_noise_sigma": (0.0, 0.05),
}

LESION_WINDOW = 101
LESION_FACTOR = 0.7


@dataclass
class AugmentParams:
    euler_angles: tuple = (0.0, 0.0, 0.0)
    bend_amplitude: float = 0.0
    bend_frequency: float = 0.0
    smoothing_sigma: float = 0.0
    radius_noise_sigma: float = 0.0
    target_n: int = 100
    target_k: int = 16
    seed: int = 0
    absolute_radius_noise: bool = False

    def __post_init__(self):
        self.euler_angles = tuple(float(a) for a in self.euler_angles)
        if len(self.euler_angles) != 3:
            raise ValueError("euler_angles needs 3 values")
        for name in ("bend_amplitude", "bend_frequency", "smoothing_sigma", "radius_noise_sigma"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.target_n < 2:
            raise ValueError("target_n must be >= 2")
        if self.target_k < 3:
            raise ValueError("target_k must be >= 3")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["euler_angles"] = list(self.euler_angles)
        return d


def sample_params(rng: np.random.Generator, target_n: int, target_k: int, seed: int,
                  ranges: dict | None = None) -> AugmentParams:
    r = {**DEFAULT_RANGES, **(ranges or {})}
    angles = (rng.uniform(-np.pi, np.pi), rng.uniform(-np.pi / 2, np.pi / 2), rng.uniform(-np.pi, np.pi))
    return AugmentParams(
        euler_angles=angles,
        bend_amplitude=rng.uniform(*r["bend_amplitude"]),
        bend_frequency=rng.uniform(*r["bend_frequency"]),
        smoothing_sigma=rng.uniform(*r["smoothing_sigma"]),
        radius_noise_sigma=rng.uniform(*r["radius_noise_sigma"]),
        target_n=target_n,
        target_k=target_k,
        seed=seed,
    )


def rotation_matrix(euler_angles) -> np.ndarray:
    """Intrinsic Z-Y-X composition R = Rz(a) Ry(b) Rx(c)."""
    return Rotation.from_euler("ZYX", euler_angles).as_matrix()


def rotate(c: Centerline, euler_angles) -> Centerline:
    R = rotation_matrix(euler_angles)
    centroid = c.points.mean(axis=0)
    return Centerline((c.points - centroid) @ R.T + centroid)


def _random_orthogonal(rng, chord):
    while True:
        v = rng.standard_normal(3)
        v -= v.dot(chord) * chord
        norm = np.linalg.norm(v)
        if norm > 1e-8:
            return v / norm


def bend(c: Centerline, amplitude: float, frequency: float, rng: np.random.Generator) -> Centerline:
    """Add one transverse sine of ``amplitude * L`` along a random direction orthogonal to the chord."""
    if amplitude < 0 or frequency < 0:
        raise ValueError("bend amplitude and frequency must be >= 0")
    chord = c.points[-1] - c.points[0]
    length = c.length
    if np.linalg.norm(chord) <= 1e-9 * max(length, 1e-300):
        raise GeometryError("degenerate chord: centerline endpoints coincide")
    d = _random_orthogonal(rng, chord / np.linalg.norm(chord))
    s = c.arc_length
    shift = amplitude * length * np.sin(2 * np.pi * frequency * s / length)
    return Centerline(c.points + shift[:, None] * d)


def smooth(c: Centerline, sigma: float) -> Centerline:
    if sigma < 0:
        raise ValueError("smoothing sigma must be >= 0")
    if sigma == 0:
        return Centerline(c.points.copy())
    pts = gaussian_filter1d(c.points, sigma, axis=0, mode="reflect", truncate=3.0)
    return Centerline(pts)


def perturb_radius(radii: np.ndarray, sigma: float, rng: np.random.Generator,
                   absolute: bool = False) -> np.ndarray:
    """Multiplicative Gaussian noise (additive with ``absolute``), clamped to 5% of the median."""
    if sigma < 0:
        raise ValueError("radius noise sigma must be >= 0")
    r = np.asarray(radii, dtype=float)
    eps = rng.normal(0.0, sigma, size=r.shape)
    out = r + eps if absolute else r * (1.0 + eps)
    return np.maximum(out, 0.05 * np.median(r))


def derive_lesion_mask(radii: np.ndarray, window: int = LESION_WINDOW,
                       factor: float = LESION_FACTOR) -> np.ndarray:
    """Points whose radius falls below ``factor`` times the moving median."""
    r = np.asarray(radii, dtype=float)
    med = median_filter(r, size=window, mode="reflect")
    return r < factor * med


def sweep(c: Centerline, radii: np.ndarray, k: int, lesion_mask=None, meta=None) -> DigitalTwin:
    """Build circular sections of radius r_i in the (n_i, u_i) plane at every centerline point."""
    radii = np.asarray(radii, dtype=float)
    if len(radii) != len(c):
        raise GeometryError(f"radius profile has {len(radii)} points, centerline {len(c)}")
    if k < 3:
        raise GeometryError("k must be >= 3")
    frames = compute_frames(c)
    theta = 2 * np.pi * np.arange(k) / k
    ring = (np.cos(theta)[None, :, None] * frames.normal[:, None, :]
            + np.sin(theta)[None, :, None] * frames.binormal[:, None, :])
    boundary = c.points[:, None, :] + radii[:, None, None] * ring
    if lesion_mask is None:
        lesion_mask = derive_lesion_mask(radii)
    return DigitalTwin(c, radii, boundary, np.asarray(lesion_mask, dtype=bool), dict(meta or {}))


def _physical(t: DigitalTwin):
    s = t.scale
    return Centerline(t.centerline.points * s), t.radii * s


def synthesize(donor_centerline: DigitalTwin, donor_radius: DigitalTwin, p: AugmentParams) -> DigitalTwin:
    """Recombine two donors into one normalized synthetic twin; deterministic in ``p.seed``."""
    for donor in (donor_centerline, donor_radius):
        if donor.n < 2:
            raise GeometryError("donor twin needs at least 2 centerline points")
    rng = np.random.default_rng(p.seed)
    c, _ = _physical(donor_centerline)
    _, r_src = _physical(donor_radius)

    c = rotate(c, p.euler_angles)
    c = bend(c, p.bend_amplitude, p.bend_frequency, rng)
    c = smooth(c, p.smoothing_sigma)
    c = resample(c, p.target_n)

    s_src = donor_radius.centerline.arc_length
    r = resample_profile(r_src, s_src, p.target_n)
    r = perturb_radius(r, p.radius_noise_sigma, rng, absolute=p.absolute_radius_noise)

    mask = None
    if donor_radius.lesion_mask.any():
        pos = resample_profile(np.arange(donor_radius.n), s_src, p.target_n)
        mask = donor_radius.lesion_mask[np.rint(pos).astype(int)]

    meta = {
        "kind": "synthetic",
        "centerline_donor": donor_centerline.meta.get("id"),
        "radius_donor": donor_radius.meta.get("id"),
        "params": p.to_dict(),
        "seed": int(p.seed),
    }
    return normalize_scale(sweep(c, r, p.target_k, mask, meta))


def phantom_twin(seed: int, n: int = 200, k: int = 32, stenoses: int | None = None,
                 severity: tuple = (0.4, 0.7)) -> DigitalTwin:
    """A smooth coronary-like donor twin in cm with Gaussian-shaped stenoses.

    Stands in for reconstructed patient twins. ``severity`` bounds the diameter
    stenosis fraction of each narrowing.
    """
    rng = np.random.default_rng([seed, 31])
    length = rng.uniform(4.0, 8.0)
    u = np.linspace(0.0, 1.0, 4 * n)
    a1, a2 = rng.uniform(0.08, 0.2, 2) * length
    w1, w2 = rng.uniform(0.5, 1.5, 2)
    ph = rng.uniform(0, np.pi)
    pts = np.column_stack([
        length * u,
        a1 * np.sin(np.pi * w1 * u + ph) - a1 * np.sin(ph),
        a2 * (1 - np.cos(np.pi * w2 * u)),
    ])
    c = resample(Centerline(pts), n)

    s = c.arc_length / c.length
    r0 = rng.uniform(0.12, 0.2)
    radii = r0 * (1.0 - rng.uniform(0.1, 0.3) * s)
    count = int(rng.integers(0, 3)) if stenoses is None else stenoses
    for _ in range(count):
        centre = rng.uniform(0.2, 0.8)
        width = rng.uniform(0.02, 0.05)
        ds = rng.uniform(*severity)
        radii = radii * (1.0 - ds * np.exp(-0.5 * ((s - centre) / width) ** 2))
    twin = sweep(c, radii, k, meta={"id": f"phantom-{seed}", "kind": "synthetic", "seed": int(seed)})
    return twin


@dataclass
class CorpusItem:
    index: int
    seed: int
    centerline_donor: int
    radius_donor: int
    params: AugmentParams = field(repr=False)


def plan_corpus(n_donors: int, count: int, base_seed: int, target_n: int, target_k: int,
                ranges: dict | None = None) -> list[CorpusItem]:
    """Per-twin seeds are ``base_seed + index``, so any subset regenerates identically."""
    if n_donors < 1 and count > 0:
        raise ValueError("need at least one donor")
    items = []
    for i in range(count):
        seed = base_seed + i
        rng = np.random.default_rng([seed, 7919])
        a, b = (int(x) for x in rng.integers(0, n_donors, size=2))
        params = sample_params(rng, target_n, target_k, seed, ranges)
        items.append(CorpusItem(i, seed, a, b, params))
    return items


def generate_corpus(donors: list[DigitalTwin], count: int, base_seed: int, target_n: int,
                    target_k: int, ranges: dict | None = None) -> list[DigitalTwin]:
    out = []
    for item in plan_corpus(len(donors), count, base_seed, target_n, target_k, ranges):
        twin = synthesize(donors[item.centerline_donor], donors[item.radius_donor], item.params)
        twin.meta["id"] = f"synth-{item.seed}"
        out.append(twin)
    return out
