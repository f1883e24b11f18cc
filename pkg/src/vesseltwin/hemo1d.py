"""Steady 1D hemodynamics: segment pressure-drop laws, pressure profiles and FFR.

Every segment drop has the form ``a * Q + b * Q**2``: ``a`` is the viscous
coefficient, ``b`` the kinetic (healthy) or expansion (lesion) coefficient.
Viscous integrals use the trapezoid rule over the segment's closed point
span, so a uniform tube of length L integrates to exactly L.

Segments are stored as half-open point runs ``[start, end)``; a segment's
geometric span closes on the first point of the next segment (or the last
centerline point), so consecutive spans share their boundary point and the
whole vessel is covered without gaps.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .geometry import MMHG, DigitalTwin, GeometryError, section_areas

HEALTHY = "healthy"
LESION = "lesion"
MIN_RUN = 3


class NonPhysiologicalError(ValueError):
    """Pressure fell below zero along the profile."""


@dataclass(frozen=True)
class HemoConstants:
    rho: float = 1.05
    mu: float = 0.035
    zeta: float = 4.31
    kt: float = 1.52

    def __post_init__(self):
        for name in ("rho", "mu", "zeta", "kt"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0")

    @property
    def healthy_viscous(self) -> float:
        return 2 * (self.zeta + 2) * np.pi * self.mu

    @property
    def lesion_viscous(self) -> float:
        return 8 * np.pi * self.mu


class Segment(NamedTuple):
    start: int
    end: int
    kind: str


@dataclass
class Geometry1D:
    """Area (cm^2) and spacing (cm) along a uniformly sampled centerline, plus its segments."""

    area: np.ndarray
    dx: float
    segments: list

    @property
    def n(self) -> int:
        return len(self.area)


@dataclass
class HemoProfile:
    q: np.ndarray
    p: np.ndarray
    area: np.ndarray
    ffr: np.ndarray
    s: np.ndarray


def span(seg: Segment, n: int) -> tuple[int, int]:
    """Closed point range [lo, hi] covered by ``seg`` on an n-point centerline."""
    return seg.start, min(seg.end, n - 1)


def _check_area(area):
    area = np.asarray(area, dtype=float)
    if area.size == 0 or np.any(~(area > 0)):
        raise GeometryError("areas must be positive")
    return area


def _trapz_inv_sq(area, dx):
    inv = 1.0 / area**2
    if len(inv) < 2:
        return 0.0
    return dx * (inv.sum() - 0.5 * (inv[0] + inv[-1]))


def healthy_coefficients(area, dx, c: HemoConstants) -> tuple[float, float]:
    area = _check_area(area)
    a = c.healthy_viscous * _trapz_inv_sq(area, dx)
    b = 0.5 * c.rho * (1 / area[-1] ** 2 - 1 / area[0] ** 2)
    return a, b


def stenosis_coefficients(area, dx, c: HemoConstants) -> tuple[float, float]:
    area = _check_area(area)
    a = c.lesion_viscous * _trapz_inv_sq(area, dx)
    a0 = 0.5 * (area[0] + area[-1])
    a_s = area.min()
    b = c.kt * c.rho / (2 * a0**2) * (a0 / a_s - 1) ** 2
    return a, b


def _check_q(q):
    if not q >= 0:
        raise ValueError(f"flow must be >= 0, got {q}")


def healthy_drop(area, dx: float, q: float, c: HemoConstants = HemoConstants()) -> float:
    _check_q(q)
    a, b = healthy_coefficients(area, dx, c)
    return a * q + b * q * q


def stenosis_drop(area, dx: float, q: float, c: HemoConstants = HemoConstants()) -> float:
    _check_q(q)
    a, b = stenosis_coefficients(area, dx, c)
    return a * q + b * q * q


def clip_segments(segments, lo: int, hi: int, n: int) -> list[tuple[int, int, str]]:
    """Closed spans of ``segments`` intersected with the point range [lo, hi]."""
    out = []
    for seg in segments:
        s_lo, s_hi = span(seg, n)
        a, b = max(s_lo, lo), min(s_hi, hi)
        if b > a:
            out.append((a, b, seg.kind))
    return out


def drop_coefficients(geom: Geometry1D, c: HemoConstants, lo: int = 0, hi: int | None = None):
    """(a, b) such that the physical drop over points [lo, hi] is a*Q + b*Q^2."""
    hi = geom.n - 1 if hi is None else hi
    a_tot = b_tot = 0.0
    for s_lo, s_hi, kind in clip_segments(geom.segments, lo, hi, geom.n):
        law = stenosis_coefficients if kind == LESION else healthy_coefficients
        a, b = law(geom.area[s_lo:s_hi + 1], geom.dx, c)
        a_tot += a
        b_tot += b
    return a_tot, b_tot


def drop_between(geom: Geometry1D, q: float, c: HemoConstants, lo: int = 0, hi: int | None = None) -> float:
    a, b = drop_coefficients(geom, c, lo, hi)
    return a * q + b * q * q


def geometry_1d(t: DigitalTwin, segments=None, n: int | None = None, rtol: float = 1e-2) -> Geometry1D:
    """Physical (cm) area and spacing of a twin, optionally resampled to ``n`` points.

    Requires a uniformly sampled centerline.
    """
    if not t.centerline.is_uniform(rtol):
        raise GeometryError("physics needs a uniformly resampled centerline")
    scale = t.scale
    area = section_areas(t) * scale**2
    mask = t.lesion_mask
    dx = t.centerline.length * scale / (t.n - 1)
    if n is not None and n != t.n:
        frac_src = np.linspace(0, 1, t.n)
        frac = np.linspace(0, 1, n)
        area = np.interp(frac, frac_src, area)
        mask = mask[np.rint(frac * (t.n - 1)).astype(int)]
        dx = t.centerline.length * scale / (n - 1)
    if segments is None:
        segments = derive_segments_from_mask(mask)
    return Geometry1D(area, dx, list(segments))


def total_drop(t: DigitalTwin, seg, q: float, c: HemoConstants = HemoConstants()) -> float:
    return drop_between(geometry_1d(t, seg), q, c)


def _lesion_step(area, lo, hi):
    m = lo + int(np.argmin(area[lo:hi + 1]))
    return m if m < hi else m - 1


def pressure_profile_1d(geom: Geometry1D, q: float, p_in: float,
                        c: HemoConstants = HemoConstants()) -> HemoProfile:
    if not p_in > 0:
        raise ValueError("p_in must be > 0")
    _check_q(q)
    area = _check_area(geom.area)
    n = len(area)
    inv = 1.0 / area**2
    step_drop = np.zeros(n - 1)
    for seg in geom.segments:
        lo, hi = span(seg, n)
        if hi <= lo:
            continue
        idx = np.arange(lo, hi)
        trap = 0.5 * (inv[idx] + inv[idx + 1]) * geom.dx
        if seg.kind == LESION:
            step_drop[idx] += c.lesion_viscous * q * trap
            _, b = stenosis_coefficients(area[lo:hi + 1], geom.dx, c)
            step_drop[_lesion_step(area, lo, hi)] += b * q * q
        else:
            # kinetic term as a per-step Bernoulli change; telescopes to the segment total
            step_drop[idx] += c.healthy_viscous * q * trap + 0.5 * c.rho * q * q * (inv[idx + 1] - inv[idx])
    p = p_in - np.concatenate([[0.0], np.cumsum(step_drop)])
    if np.any(p < 0):
        raise NonPhysiologicalError(f"pressure falls to {p.min():.4g} dyne/cm^2 (< 0)")
    s = np.arange(n) * geom.dx
    prof = HemoProfile(np.full(n, float(q)), p, area.copy(), np.ones(n), s)
    prof.ffr = ffr_curve(prof)
    return prof


def pressure_profile(t: DigitalTwin, seg, q: float, p_in: float = 100 * MMHG,
                     c: HemoConstants = HemoConstants()) -> HemoProfile:
    return pressure_profile_1d(geometry_1d(t, seg), q, p_in, c)


def ffr_curve(h: HemoProfile) -> np.ndarray:
    if not h.p[0] > 0:
        raise ValueError("inlet pressure must be > 0")
    ffr = h.p / h.p[0]
    ffr[0] = 1.0
    return ffr


def _runs(mask):
    mask = np.asarray(mask, dtype=bool)
    edges = np.flatnonzero(np.diff(mask.astype(int))) + 1
    starts = np.concatenate([[0], edges])
    ends = np.concatenate([edges, [len(mask)]])
    return [(int(s), int(e), bool(mask[s])) for s, e in zip(starts, ends)]


def derive_segments_from_mask(mask) -> list[Segment]:
    """Lesion runs become lesion segments; runs shorter than 3 points are absorbed.

    Short lesion runs turn healthy first; short healthy runs left between
    lesions (or at a vessel end next to one) then join the lesion.
    """
    m = np.asarray(mask, dtype=bool).copy()
    if m.size == 0:
        raise ValueError("empty lesion mask")
    for s, e, v in _runs(m):
        if v and e - s < MIN_RUN:
            m[s:e] = False
    runs = _runs(m)
    if len(runs) > 1:
        for s, e, v in runs:
            if not v and e - s < MIN_RUN:
                m[s:e] = True
    return [Segment(s, e, LESION if v else HEALTHY) for s, e, v in _runs(m)]


def derive_segments(t: DigitalTwin) -> list[Segment]:
    return derive_segments_from_mask(t.lesion_mask)
