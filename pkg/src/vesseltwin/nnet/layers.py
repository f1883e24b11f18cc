"""Differentiable building blocks as forward/backward pairs on numpy arrays.

Every ``*_forward`` returns ``(out, cache)``; the matching ``*_backward``
takes the upstream gradient and that cache and returns gradients for the
inputs and parameters.
"""
from __future__ import annotations

import math

import numpy as np
import scipy.sparse as sp


def normalized_adjacency(adj: sp.spmatrix) -> sp.csr_matrix:
    """D^-1/2 (A + I) D^-1/2 for a symmetric 0/1 adjacency without self-loops."""
    a = sp.csr_matrix(adj, dtype=float) + sp.identity(adj.shape[0], format="csr")
    deg = np.asarray(a.sum(axis=1)).ravel()
    inv_sqrt = sp.diags(1.0 / np.sqrt(deg))
    return sp.csr_matrix(inv_sqrt @ a @ inv_sqrt)


def relu(x):
    return np.maximum(x, 0.0)


def linear_forward(x, w, b):
    return x @ w + b, x


def linear_backward(dout, x, w):
    return dout @ w.T, x.T @ dout, dout.sum(axis=0)


def gcn_forward(x, ahat, w, b):
    ax = ahat @ x
    z = ax @ w + b
    return relu(z), (ax, z)


def gcn_backward(dout, cache, ahat, w):
    ax, z = cache
    dz = dout * (z > 0)
    dw = ax.T @ dz
    db = dz.sum(axis=0)
    dx = ahat.T @ (dz @ w.T)
    return dx, dw, db


def topk_select(scores: np.ndarray, ratio: float) -> np.ndarray:
    """Indices of the ceil(ratio * n) highest scores (ties to the lower index), ascending."""
    if not 0 < ratio <= 1:
        raise ValueError("pool ratio must be in (0, 1]")
    k = math.ceil(ratio * len(scores))
    order = np.argsort(-scores, kind="stable")[:k]
    return np.sort(order)


def topk_forward(x, proj, ratio):
    """Score nodes by x.p/|p|, keep the top fraction and gate them by tanh(score)."""
    norm = np.linalg.norm(proj)
    y = x @ proj / norm
    kept = topk_select(y, ratio)
    gate = np.tanh(y[kept])
    return x[kept] * gate[:, None], kept, (x, y, kept, gate, norm)


def topk_backward(dout, cache, proj):
    x, y, kept, gate, norm = cache
    dx = np.zeros_like(x)
    dx[kept] += dout * gate[:, None]
    dgate = np.sum(dout * x[kept], axis=1)
    dy = np.zeros(len(x))
    dy[kept] = dgate * (1 - gate**2)
    dx += np.outer(dy, proj / norm)
    dproj = x.T @ dy / norm - (dy @ (x @ proj)) * proj / norm**3
    return dx, dproj


def induced_subgraph(adj: sp.csr_matrix, kept: np.ndarray) -> sp.csr_matrix:
    return sp.csr_matrix(adj[kept][:, kept])


def knn_indices(nodes: np.ndarray, queries: np.ndarray, k: int) -> np.ndarray:
    """For each query point, the ``k`` nearest nodes (ties to the lower index)."""
    if len(nodes) < k:
        raise ValueError(f"need at least {k} nodes for aggregation, have {len(nodes)}")
    d2 = np.sum((queries[:, None, :] - nodes[None, :, :]) ** 2, axis=2)
    return np.argsort(d2, axis=1, kind="stable")[:, :k]


def ca_forward(feats, coords, centerline, nbr, w, b):
    """Gather neighbour features + relative coordinates, mix per neighbour, average."""
    rel = coords[nbr] - centerline[:, None, :]
    h = np.concatenate([feats[nbr], rel], axis=2)
    mixed = h @ w + b
    return mixed.mean(axis=1), (h, nbr, feats.shape)


def ca_backward(dout, cache, w):
    h, nbr, fshape = cache
    k = nbr.shape[1]
    dmixed = np.repeat(dout[:, None, :] / k, k, axis=1)
    dw = np.einsum("nkc,nkd->cd", h, dmixed)
    db = dout.sum(axis=0)
    dh = dmixed @ w.T
    dfeats = np.zeros(fshape)
    np.add.at(dfeats, nbr.ravel(), dh[..., : fshape[1]].reshape(-1, fshape[1]))
    return dfeats, dw, db


def sigmoid(z):
    return 0.5 * (1 + np.tanh(0.5 * z))
