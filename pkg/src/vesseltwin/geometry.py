"""Vessel geometry: centerlines, rotation-minimizing frames, cross-sections and twins.

All lengths are in cm. A twin that went through :func:`normalize_scale` carries
``meta["scale"]``, the factor that maps its unit-length geometry back to cm.
"""
from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field

import numpy as np

MMHG = 1333.22  # dyne/cm^2 per mmHg

ARC_TOL = 1e-9
FRAME_TOL = 1e-9
PLANE_TOL = 1e-6
RADIUS_TOL = 1e-6


class GeometryError(ValueError):
    """Raised when a geometric construction is undefined for its input."""


def _arc_length(points: np.ndarray) -> np.ndarray:
    seg = np.linalg.norm(np.diff(points, axis=0), axis=1)
    return np.concatenate([[0.0], np.cumsum(seg)])


@dataclass
class Centerline:
    points: np.ndarray
    arc_length: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        pts = np.array(self.points, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise GeometryError(f"centerline points must be (n, 3), got {pts.shape}")
        if len(pts) < 2:
            raise GeometryError("centerline needs at least 2 points")
        if not np.all(np.isfinite(pts)):
            raise GeometryError("centerline has non-finite coordinates")
        self.points = pts
        self.arc_length = _arc_length(pts)

    def __len__(self):
        return len(self.points)

    @property
    def length(self) -> float:
        return float(self.arc_length[-1])

    def spacing(self) -> np.ndarray:
        return np.diff(self.arc_length)

    def is_uniform(self, rtol: float = 1e-2) -> bool:
        ds = self.spacing()
        mean = ds.mean()
        return mean > 0 and bool(np.all(np.abs(ds - mean) <= rtol * mean))


@dataclass(frozen=True)
class Frame:
    tangent: np.ndarray
    normal: np.ndarray
    binormal: np.ndarray


@dataclass
class Frames:
    """Per-point frames stored as three (n, 3) arrays."""

    tangent: np.ndarray
    normal: np.ndarray
    binormal: np.ndarray

    def __len__(self):
        return len(self.tangent)

    def __getitem__(self, i) -> Frame:
        return Frame(self.tangent[i], self.normal[i], self.binormal[i])


@dataclass
class CrossSection:
    center: np.ndarray
    frame: Frame
    boundary: np.ndarray  # (K, 3)


@dataclass
class DigitalTwin:
    centerline: Centerline
    radii: np.ndarray
    boundary: np.ndarray  # (n, K, 3)
    lesion_mask: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.radii = np.asarray(self.radii, dtype=float)
        self.boundary = np.asarray(self.boundary, dtype=float)
        self.lesion_mask = np.asarray(self.lesion_mask, dtype=bool)

    @property
    def n(self) -> int:
        return len(self.centerline)

    @property
    def k(self) -> int:
        return self.boundary.shape[1]

    @property
    def scale(self) -> float:
        return float(self.meta.get("scale", 1.0))

    def frames(self) -> Frames:
        return compute_frames(self.centerline)

    def section(self, i: int, frames: Frames | None = None) -> CrossSection:
        frames = frames if frames is not None else self.frames()
        return CrossSection(self.centerline.points[i], frames[i], self.boundary[i])

    @property
    def sections(self) -> list[CrossSection]:
        frames = self.frames()
        return [self.section(i, frames) for i in range(self.n)]

    def copy(self) -> "DigitalTwin":
        return DigitalTwin(
            Centerline(self.centerline.points.copy()),
            self.radii.copy(),
            self.boundary.copy(),
            self.lesion_mask.copy(),
            copy.deepcopy(self.meta),
        )


def resample(c: Centerline, n: int) -> Centerline:
    """Resample a polyline to ``n`` points equally spaced in arc length."""
    if n < 2:
        raise GeometryError(f"resample needs n >= 2, got {n}")
    s = c.arc_length
    if s[-1] <= 0:
        raise GeometryError("cannot resample a centerline of zero length")
    keep = np.concatenate([[True], np.diff(s) > 0])
    s, pts = s[keep], c.points[keep]
    target = np.linspace(0.0, s[-1], n)
    out = np.column_stack([np.interp(target, s, pts[:, d]) for d in range(3)])
    out[0], out[-1] = pts[0], pts[-1]
    return Centerline(out)


def resample_profile(values: np.ndarray, arc_length: np.ndarray, n: int) -> np.ndarray:
    """Linearly resample a per-point scalar profile onto ``n`` uniform arc-length fractions."""
    s = np.asarray(arc_length, dtype=float)
    frac = s / s[-1]
    return np.interp(np.linspace(0.0, 1.0, n), frac, np.asarray(values, dtype=float))


def _orthogonal_seed(t: np.ndarray) -> np.ndarray:
    axis = np.zeros(3)
    axis[np.argmin(np.abs(t))] = 1.0
    v = axis - axis.dot(t) * t
    return v / np.linalg.norm(v)


def _transport(t: np.ndarray, n0: np.ndarray) -> np.ndarray:
    """Carry n0 along the unit tangents by the minimal rotation between steps.

    Scalar loop on 3-vectors: numpy call overhead dominates at this size.
    """
    out = np.empty_like(t)
    out[0] = n0
    tl = t.tolist()
    vx, vy, vz = n0.tolist()
    for i in range(1, len(tl)):
        ax, ay, az = tl[i - 1]
        bx, by, bz = tl[i]
        # axis = t[i-1] x t[i]
        cx, cy, cz = ay * bz - az * by, az * bx - ax * bz, ax * by - ay * bx
        sin = math.sqrt(cx * cx + cy * cy + cz * cz)
        if sin > 1e-14:
            # Rodrigues rotation about the unit axis
            cx, cy, cz = cx / sin, cy / sin, cz / sin
            angle = math.atan2(sin, ax * bx + ay * by + az * bz)
            co, si = math.cos(angle), math.sin(angle)
            kd = (cx * vx + cy * vy + cz * vz) * (1 - co)
            wx, wy, wz = cy * vz - cz * vy, cz * vx - cx * vz, cx * vy - cy * vx
            vx, vy, vz = vx * co + wx * si + cx * kd, vy * co + wy * si + cy * kd, vz * co + wz * si + cz * kd
        d = vx * bx + vy * by + vz * bz
        vx, vy, vz = vx - d * bx, vy - d * by, vz - d * bz
        m = math.sqrt(vx * vx + vy * vy + vz * vz)
        vx, vy, vz = vx / m, vy / m, vz / m
        out[i] = (vx, vy, vz)
    return out


def compute_frames(c: Centerline) -> Frames:
    """Tangents by finite differences, normals by parallel transport, u = t x n."""
    pts = c.points
    if np.any(np.linalg.norm(np.diff(pts, axis=0), axis=1) == 0):
        raise GeometryError("repeated consecutive centerline points")
    # second order in arc length, one-sided at the ends
    t = np.gradient(pts, c.arc_length, axis=0, edge_order=2 if len(pts) > 2 else 1)
    norm = np.linalg.norm(t, axis=1)
    if np.any(norm < 1e-14):
        raise GeometryError("zero-length tangent")
    t = t / norm[:, None]
    n = _transport(t, _orthogonal_seed(t[0]))
    u = np.cross(t, n)
    return Frames(t, n, u)


def _project(boundary, center, frame):
    rel = boundary - center
    return np.column_stack([rel @ frame.normal, rel @ frame.binormal])


def _shoelace(xy: np.ndarray) -> float:
    x, y = xy[:, 0], xy[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def _segments_cross(p1, p2, p3, p4) -> bool:
    def orient(a, b, c):
        return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])

    d1, d2 = orient(p3, p4, p1), orient(p3, p4, p2)
    d3, d4 = orient(p1, p2, p3), orient(p1, p2, p4)
    return (d1 * d2 < 0) and (d3 * d4 < 0)


def _star_shaped(xy: np.ndarray) -> bool:
    ang = np.arctan2(xy[:, 1] - xy[:, 1].mean(), xy[:, 0] - xy[:, 0].mean())
    step = np.angle(np.exp(1j * np.diff(np.append(ang, ang[0]))))
    return bool(np.all(step > 0) or np.all(step < 0)) and abs(abs(step.sum()) - 2 * np.pi) < 1e-6


def is_simple_polygon(xy: np.ndarray) -> bool:
    if _star_shaped(xy):
        return True
    k = len(xy)
    for i in range(k):
        for j in range(i + 2, k):
            if i == 0 and j == k - 1:
                continue
            if _segments_cross(xy[i], xy[(i + 1) % k], xy[j], xy[(j + 1) % k]):
                return False
    return True


def section_area(s: CrossSection) -> float:
    """Shoelace area of the boundary projected onto the section plane."""
    if len(s.boundary) < 3:
        raise GeometryError("section needs K >= 3 boundary points")
    xy = _project(s.boundary, s.center, s.frame)
    if not is_simple_polygon(xy):
        raise GeometryError("projected section polygon self-intersects")
    return abs(_shoelace(xy))


def section_areas(t: DigitalTwin, frames: Frames | None = None) -> np.ndarray:
    """Vectorised :func:`section_area` over every section of a twin (twin units)."""
    frames = frames if frames is not None else t.frames()
    rel = t.boundary - t.centerline.points[:, None, :]
    x = np.einsum("nkd,nd->nk", rel, frames.normal)
    y = np.einsum("nkd,nd->nk", rel, frames.binormal)
    area = 0.5 * (np.sum(x * np.roll(y, -1, axis=1), axis=1) - np.sum(np.roll(x, -1, axis=1) * y, axis=1))
    return np.abs(area)


def normalize_scale(t: DigitalTwin) -> DigitalTwin:
    """Translate the first centerline point to the origin and scale arc length to 1."""
    length = t.centerline.length
    if length <= 0:
        raise GeometryError("twin has zero centerline length")
    origin = t.centerline.points[0]
    out = t.copy()
    out.centerline = Centerline((t.centerline.points - origin) / length)
    out.radii = t.radii / length
    out.boundary = (t.boundary - origin) / length
    out.meta["scale"] = t.scale * length
    return out


def validate_twin(t: DigitalTwin, synthetic: bool | None = None) -> list[str]:
    """Check every DigitalTwin invariant; return the names of those that fail."""
    problems = []
    c = t.centerline
    n = len(c)
    ds = np.diff(c.arc_length)
    if c.arc_length[0] != 0:
        problems.append("centerline.arc_length[0] == 0")
    if not np.all(ds > 0):
        problems.append("centerline.arc_length strictly increasing")
    seg = np.linalg.norm(np.diff(c.points, axis=0), axis=1)
    if not np.allclose(ds, seg, rtol=ARC_TOL, atol=0):
        problems.append("centerline.arc_length matches point distances")
    if t.radii.shape != (n,):
        problems.append("radii length matches centerline")
    elif not (np.all(np.isfinite(t.radii)) and np.all(t.radii > 0)):
        problems.append("radii positive and finite")
    if t.lesion_mask.shape != (n,):
        problems.append("lesion_mask length matches centerline")
    if t.boundary.ndim != 3 or t.boundary.shape[0] != n or t.boundary.shape[2] != 3:
        problems.append("one section per centerline point with 3D boundary points")
        return problems
    if t.k < 3:
        problems.append("sections have K >= 3")
    if not np.all(np.isfinite(t.boundary)):
        problems.append("boundary finite")
        return problems
    if problems:
        return problems

    try:
        frames = t.frames()
    except GeometryError as exc:
        return problems + [f"frames computable ({exc})"]
    frame_problem = _frame_problem(frames)
    if frame_problem:
        problems.append(frame_problem)

    rel = t.boundary - c.points[:, None, :]
    offplane_cm = np.abs(np.einsum("nkd,nd->nk", rel, frames.tangent)) * t.scale
    if offplane_cm.max() > PLANE_TOL:
        problems.append("boundary lies in the section plane")
    x = np.einsum("nkd,nd->nk", rel, frames.normal)
    y = np.einsum("nkd,nd->nk", rel, frames.binormal)
    ang = np.arctan2(y - y.mean(axis=1, keepdims=True), x - x.mean(axis=1, keepdims=True))
    step = np.angle(np.exp(1j * np.diff(np.concatenate([ang, ang[:, :1]], axis=1), axis=1)))
    monotone = np.all(step > 0, axis=1) | np.all(step < 0, axis=1)
    if not np.all(monotone):
        problems.append("boundary angular order monotone")
    if synthetic is None:
        synthetic = t.meta.get("kind") == "synthetic"
    if synthetic:
        dist = np.linalg.norm(rel, axis=2)
        if np.max(np.abs(dist - t.radii[:, None])) * t.scale > RADIUS_TOL:
            problems.append("boundary points at distance r_i from center")
    return problems


def _frame_problem(frames: Frames) -> str | None:
    t, n, u = frames.tangent, frames.normal, frames.binormal
    for name, v in (("t", t), ("n", n), ("u", u)):
        if np.max(np.abs(np.linalg.norm(v, axis=1) - 1)) > FRAME_TOL:
            return f"frame {name} unit norm"
    dots = np.abs(np.stack([np.sum(t * n, 1), np.sum(t * u, 1), np.sum(n * u, 1)]))
    if dots.max() > FRAME_TOL:
        return "frame vectors orthogonal"
    if np.max(np.abs(np.cross(t, n) - u)) > FRAME_TOL:
        return "frame u = t x n"
    return None


def frame_problems(frames: Frames) -> list[str]:
    p = _frame_problem(frames)
    return [p] if p else []
