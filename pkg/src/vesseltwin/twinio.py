"""Twin file format (versioned JSON) and PLY export.

Layout::

    {"format_version": 1,
     "meta": {...},
     "centerline": [[x, y, z], ...],
     "radii": [...],
     "lesion_mask": [true, false, ...],          # optional on import
     "sections": {"k": K, "boundary": [[[x, y, z] * K] * n]}}   # optional on import

Missing sections are re-swept from centerline and radii; a missing lesion mask
is derived from the radius profile.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .a3m import derive_lesion_mask, sweep
from .geometry import Centerline, DigitalTwin, GeometryError, validate_twin

FORMAT_VERSION = 1


class TwinFormatError(ValueError):
    pass


def _plain(obj):
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.bool_):
        return bool(obj)
    raise TypeError(f"not serializable: {type(obj)}")


def twin_to_dict(t: DigitalTwin, include_sections: bool = True) -> dict:
    d = {
        "format_version": FORMAT_VERSION,
        "meta": t.meta,
        "centerline": t.centerline.points.tolist(),
        "radii": t.radii.tolist(),
        "lesion_mask": t.lesion_mask.tolist(),
    }
    if include_sections:
        d["sections"] = {"k": t.k, "boundary": t.boundary.tolist()}
    return d


def dumps_twin(t: DigitalTwin, include_sections: bool = True) -> str:
    return json.dumps(twin_to_dict(t, include_sections), separators=(",", ":"), default=_plain)


def twin_from_dict(d: dict) -> DigitalTwin:
    if not isinstance(d, dict):
        raise TwinFormatError("twin document must be a JSON object")
    version = d.get("format_version")
    if version != FORMAT_VERSION:
        raise TwinFormatError(f"unsupported format_version {version!r}")
    for key in ("centerline", "radii"):
        if key not in d:
            raise TwinFormatError(f"missing field {key!r}")
    try:
        c = Centerline(np.asarray(d["centerline"], dtype=float))
        radii = np.asarray(d["radii"], dtype=float)
    except (ValueError, TypeError, GeometryError) as exc:
        raise TwinFormatError(f"bad centerline/radii: {exc}") from exc
    mask = d.get("lesion_mask")
    if mask is None:
        mask = derive_lesion_mask(radii)
    mask = np.asarray(mask, dtype=bool)
    meta = dict(d.get("meta") or {})
    sections = d.get("sections")
    if sections is None:
        k = int(meta.get("k", 64))
        return sweep(c, radii, k, mask, meta)
    try:
        boundary = np.asarray(sections["boundary"], dtype=float)
        k = int(sections["k"])
    except (KeyError, ValueError, TypeError) as exc:
        raise TwinFormatError(f"bad sections: {exc}") from exc
    if boundary.ndim != 3 or boundary.shape[1] != k:
        raise TwinFormatError(f"sections.boundary shape {boundary.shape} inconsistent with k={k}")
    return DigitalTwin(c, radii, boundary, mask, meta)


def save_twin(t: DigitalTwin, path, include_sections: bool = True) -> None:
    Path(path).write_text(dumps_twin(t, include_sections))


def load_twin(path) -> DigitalTwin:
    path = Path(path)
    try:
        d = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise TwinFormatError(f"{path}: JSON parse error: {exc}") from exc
    return twin_from_dict(d)


def validate_file(path) -> list[str]:
    """Every invariant violated by the twin stored at ``path`` (parse errors included)."""
    try:
        t = load_twin(path)
    except OSError as exc:
        return [f"unreadable: {exc}"]
    except (TwinFormatError, GeometryError) as exc:
        return [f"parse: {exc}"]
    problems = validate_twin(t)
    if not problems:
        from .vgraph import validate_graph, build_graph

        try:
            problems += validate_graph(build_graph(t))
        except (GeometryError, ValueError) as exc:
            problems.append(f"graph: {exc}")
    return problems


def export_ply(t: DigitalTwin, path, scalar=None, scalar_name: str = "area") -> None:
    """ASCII PLY of the boundary point cloud with one scalar per point.

    ``scalar`` may be per-section (length n) or per-point (length n*K); by
    default each point carries its section's area.
    """
    from .geometry import section_areas

    pts = t.boundary.reshape(-1, 3)
    if scalar is None:
        scalar = section_areas(t)
    scalar = np.asarray(scalar, dtype=float)
    if scalar.shape == (t.n,):
        scalar = np.repeat(scalar, t.k)
    if scalar.shape != (len(pts),):
        raise ValueError(f"scalar has shape {scalar.shape}, need ({t.n},) or ({len(pts)},)")
    lines = [
        "ply",
        "format ascii 1.0",
        f"element vertex {len(pts)}",
        "property double x",
        "property double y",
        "property double z",
        f"property double {scalar_name}",
        "end_header",
    ]
    lines += [f"{x!r} {y!r} {z!r} {s!r}" for (x, y, z), s in zip(pts.tolist(), scalar.tolist())]
    Path(path).write_text("\n".join(lines) + "\n")
