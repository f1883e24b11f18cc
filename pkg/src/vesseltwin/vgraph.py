"""Vascular graph: boundary points as nodes, ring and inter-section KNN edges."""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

from .geometry import Centerline, DigitalTwin, GeometryError, section_areas

KNN = 3


@dataclass
class VascularGraph:
    node_coords: np.ndarray  # (V, 3)
    node_features: np.ndarray  # (V, 5): x, y, z, section area, distance to centerline
    edges: np.ndarray  # (E, 2), i < j, lexicographically sorted
    section_of_node: np.ndarray
    centerline: Centerline
    k: int

    @property
    def num_nodes(self) -> int:
        return len(self.node_coords)

    def adjacency(self) -> sp.csr_matrix:
        v = self.num_nodes
        i, j = self.edges[:, 0], self.edges[:, 1]
        data = np.ones(2 * len(i))
        return sp.csr_matrix((data, (np.concatenate([i, j]), np.concatenate([j, i]))), shape=(v, v))

    def degree(self) -> np.ndarray:
        return np.bincount(self.edges.ravel(), minlength=self.num_nodes)


def knn_between(src: np.ndarray, dst: np.ndarray, k: int = KNN) -> np.ndarray:
    """Indices of the ``k`` nearest ``dst`` points for every ``src`` point; ties go to the lower index.

    Works on stacked inputs of shape (..., K, 3).
    """
    d2 = np.sum((src[..., :, None, :] - dst[..., None, :, :]) ** 2, axis=-1)
    return np.argsort(d2, axis=-1, kind="stable")[..., :k]


def _ring_edges(n: int, k: int) -> np.ndarray:
    base = np.arange(n)[:, None] * k
    j = np.arange(k)[None, :]
    return np.stack([(base + j).ravel(), (base + (j + 1) % k).ravel()], axis=1)


def _inter_edges(boundary: np.ndarray, k_nn: int) -> np.ndarray:
    n, k, _ = boundary.shape
    if n < 2:
        return np.empty((0, 2), dtype=int)
    kk = min(k_nn, k)
    cur, nxt = boundary[:-1], boundary[1:]
    fwd = knn_between(cur, nxt, kk)  # (n-1, K, kk): local index in next section
    bwd = knn_between(nxt, cur, kk)
    sec = np.arange(n - 1)[:, None, None]
    j = np.arange(k)[None, :, None]
    a = np.stack([np.broadcast_to(sec * k + j, fwd.shape).ravel(), ((sec + 1) * k + fwd).ravel()], axis=1)
    b = np.stack([np.broadcast_to((sec + 1) * k + j, bwd.shape).ravel(), (sec * k + bwd).ravel()], axis=1)
    return np.concatenate([a, b])


def _canonical(edges: np.ndarray) -> np.ndarray:
    e = np.sort(edges, axis=1)
    e = e[e[:, 0] != e[:, 1]]
    if len(e) == 0:
        return e.reshape(0, 2)
    # 1-d keys sort in the same lexicographic order as the rows
    v = int(e.max()) + 1
    key = np.unique(e[:, 0].astype(np.int64) * v + e[:, 1])
    return np.stack([key // v, key % v], axis=1)


def polyline_distance(points: np.ndarray, polyline: np.ndarray, chunk: int = 2048) -> np.ndarray:
    """Minimum distance from each point to a 3D polyline (point-to-segment)."""
    a, b = polyline[:-1], polyline[1:]
    ab = b - a
    denom = np.maximum(np.sum(ab * ab, axis=1), 1e-300)
    out = np.empty(len(points))
    for lo in range(0, len(points), chunk):
        q = points[lo:lo + chunk]
        aq = q[:, None, :] - a[None, :, :]
        t = np.clip(np.einsum("psd,sd->ps", aq, ab) / denom, 0.0, 1.0)
        diff = aq - t[..., None] * ab[None]
        out[lo:lo + chunk] = np.sqrt(np.min(np.sum(diff * diff, axis=2), axis=1))
    return out


def compute_features(t: DigitalTwin) -> np.ndarray:
    coords = t.boundary.reshape(-1, 3)
    area = np.repeat(section_areas(t), t.k)
    dist = polyline_distance(coords, t.centerline.points)
    return np.column_stack([coords, area, dist])


def graph_edges(boundary: np.ndarray) -> np.ndarray:
    """Canonical undirected edge list for stacked sections of shape (n, K, 3)."""
    n, k, _ = boundary.shape
    if k < 3:
        raise GeometryError(f"ring topology needs K >= 3, got {k}")
    return _canonical(np.concatenate([_ring_edges(n, k), _inter_edges(boundary, KNN)]))


def build_graph(t: DigitalTwin) -> VascularGraph:
    n, k = t.n, t.k
    edges = graph_edges(t.boundary)
    return VascularGraph(
        node_coords=t.boundary.reshape(-1, 3).copy(),
        node_features=compute_features(t),
        edges=edges,
        section_of_node=np.repeat(np.arange(n), k),
        centerline=t.centerline,
        k=k,
    )


def validate_graph(g: VascularGraph) -> list[str]:
    problems = []
    n_sec = len(g.centerline)
    if g.num_nodes != n_sec * g.k:
        problems.append("|V| = n_sections * K")
    e = g.edges
    if len(e) and np.any(e[:, 0] == e[:, 1]):
        problems.append("no self-loops")
    if len(_canonical(e)) != len(e):
        problems.append("no duplicate undirected edges")
    deg = g.degree()
    first_last = (g.section_of_node == 0) | (g.section_of_node == n_sec - 1)
    if n_sec >= 2:
        if np.any(deg[~first_last] < 8) or np.any(deg[first_last] < 5):
            problems.append("degree >= 8 interior, >= 5 at ends")
        if connected_components(g.adjacency(), directed=False)[0] != 1:
            problems.append("graph connected")
    area = g.node_features[:, 3].reshape(n_sec, g.k)
    if not np.all(area == area[:, :1]):
        problems.append("area feature constant within a section")
    return problems


def graph_to_dict(g: VascularGraph) -> dict:
    return {
        "format_version": 1,
        "num_nodes": g.num_nodes,
        "k": g.k,
        "node_coords": g.node_coords.tolist(),
        "node_features": g.node_features.tolist(),
        "feature_names": ["x", "y", "z", "area", "centerline_distance"],
        "edges": g.edges.tolist(),
        "section_of_node": g.section_of_node.tolist(),
        "centerline": g.centerline.points.tolist(),
    }


def graph_from_dict(d: dict) -> VascularGraph:
    return VascularGraph(
        node_coords=np.asarray(d["node_coords"], dtype=float),
        node_features=np.asarray(d["node_features"], dtype=float),
        edges=np.asarray(d["edges"], dtype=int).reshape(-1, 2),
        section_of_node=np.asarray(d["section_of_node"], dtype=int),
        centerline=Centerline(np.asarray(d["centerline"], dtype=float)),
        k=int(d["k"]),
    )


def save_graph(g: VascularGraph, path) -> None:
    Path(path).write_text(json.dumps(graph_to_dict(g), separators=(",", ":")))


def load_graph(path) -> VascularGraph:
    return graph_from_dict(json.loads(Path(path).read_text()))
