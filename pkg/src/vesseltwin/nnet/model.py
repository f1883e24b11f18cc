"""Hierarchical GCN encoder with Top-K pooling, centerline aggregation and two heads."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from ..geometry import MMHG, Centerline, resample
from ..vgraph import VascularGraph
from . import layers as L

N_BLOCKS = 3
IN_FEATURES = 5
BIAS_INIT = 0.01  # hidden ReLU layers; keeps all-zero rows off the kink


@dataclass
class EncoderConfig:
    d: int = 16
    blocks: int = N_BLOCKS
    layers_per_block: int = 4
    pool_ratio: float = 0.5
    k_ca: int = 8
    n_centerline: int = 100
    seed: int = 0
    pressure_scale: float = 100 * MMHG
    flow_scale: float = 1.5
    flow_output: str = "bounded"
    flow_log_range: float = math.log(2.0)
    head_init_scale: float = 0.01
    pooling: str = "mean"

    def __post_init__(self):
        if self.d < 1:
            raise ValueError("d must be >= 1")
        if self.blocks != N_BLOCKS:
            raise ValueError("the encoder has exactly 3 blocks")
        if self.layers_per_block < 1:
            raise ValueError("layers_per_block must be >= 1")
        if not 0 < self.pool_ratio <= 1:
            raise ValueError("pool_ratio must be in (0, 1]")
        if self.k_ca < 1:
            raise ValueError("k_ca must be >= 1")
        if self.n_centerline < 2:
            raise ValueError("n_centerline must be >= 2")
        if self.flow_output not in ("bounded", "linear"):
            raise ValueError("flow_output must be 'bounded' or 'linear'")
        if not self.flow_log_range > 0:
            raise ValueError("flow_log_range must be > 0")
        if self.pooling not in ("mean", "max"):
            raise ValueError("pooling must be 'mean' or 'max'")

    def widths(self) -> list[int]:
        return [self.d * (b + 1) for b in range(self.blocks)]

    def head_widths(self) -> list[int]:
        d = self.d
        return [3 * d, 2 * d, d, max(d // 2, 2), 2]

    def to_dict(self) -> dict:
        return asdict(self)


def _glorot(rng, fan_in, fan_out):
    lim = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-lim, lim, size=(fan_in, fan_out))


def _he(rng, fan_in, fan_out):
    lim = np.sqrt(6.0 / fan_in)
    return rng.uniform(-lim, lim, size=(fan_in, fan_out))


def init_params(cfg: EncoderConfig) -> dict[str, np.ndarray]:
    rng = np.random.default_rng([cfg.seed, 101])
    params = {}
    widths = cfg.widths()
    fan_in = IN_FEATURES
    for b, width in enumerate(widths):
        if b > 0:
            params[f"pool{b}_p"] = rng.standard_normal(fan_in)
        for layer in range(cfg.layers_per_block):
            params[f"gcn{b}_{layer}_w"] = _he(rng, fan_in, width)
            params[f"gcn{b}_{layer}_b"] = np.full(width, BIAS_INIT)
            fan_in = width
        params[f"ca{b}_w"] = _glorot(rng, width + 3, width)
        params[f"ca{b}_b"] = np.zeros(width)
    d3 = 3 * cfg.d
    params["fuse0_w"] = _he(rng, sum(widths), d3)
    params["fuse0_b"] = np.full(d3, BIAS_INIT)
    params["fuse1_w"] = _he(rng, d3, d3)
    params["fuse1_b"] = np.full(d3, BIAS_INIT)
    hw = cfg.head_widths()
    for i in range(4):
        w = _glorot(rng, hw[i], hw[i + 1])
        if i == 3:
            w *= cfg.head_init_scale
        params[f"head{i}_w"] = w
        params[f"head{i}_b"] = np.zeros(hw[i + 1]) if i == 3 else np.full(hw[i + 1], BIAS_INIT)
    return params


def param_shapes(cfg: EncoderConfig) -> dict[str, tuple]:
    return {k: v.shape for k, v in init_params(cfg).items()}


@dataclass
class GraphInput:
    """Parameter-independent preprocessing of one graph."""

    features: np.ndarray
    coords: np.ndarray
    adjacency: object
    centerline: np.ndarray


def prepare_graph(g: VascularGraph, cfg: EncoderConfig) -> GraphInput:
    """Centred, scale-free inputs.

    Coordinates are taken relative to the node centroid; area and centerline
    distance become relative deviations from their graph means.
    """
    x = g.node_features.copy()
    x[:, :3] -= x[:, :3].mean(axis=0)
    for col in (3, 4):
        mean = x[:, col].mean()
        if mean > 0:
            x[:, col] = x[:, col] / mean - 1.0
    cl = g.centerline
    if len(cl) != cfg.n_centerline:
        cl = resample(Centerline(cl.points), cfg.n_centerline)
    return GraphInput(x, g.node_coords, g.adjacency(), cl.points)


@dataclass
class ForwardResult:
    q: np.ndarray
    p: np.ndarray
    embedding: np.ndarray
    centerline_features: np.ndarray
    cache: dict


def forward(gi: GraphInput, params: dict, cfg: EncoderConfig) -> ForwardResult:
    cache = {"blocks": [], "ca": []}
    x, coords, adj = gi.features, gi.coords, gi.adjacency
    levels = []
    for b in range(cfg.blocks):
        block = {}
        if b > 0:
            x, kept, pcache = L.topk_forward(x, params[f"pool{b}_p"], cfg.pool_ratio)
            adj = L.induced_subgraph(adj, kept)
            coords = coords[kept]
            block["pool"] = pcache
        ahat = L.normalized_adjacency(adj)
        block["ahat"] = ahat
        block["gcn"] = []
        for layer in range(cfg.layers_per_block):
            x, c = L.gcn_forward(x, ahat, params[f"gcn{b}_{layer}_w"], params[f"gcn{b}_{layer}_b"])
            block["gcn"].append(c)
        cache["blocks"].append(block)
        nbr = L.knn_indices(coords, gi.centerline, cfg.k_ca)
        h, c = L.ca_forward(x, coords, gi.centerline, nbr, params[f"ca{b}_w"], params[f"ca{b}_b"])
        cache["ca"].append(c)
        levels.append(h)

    cat = np.concatenate(levels, axis=1)
    z0 = cat @ params["fuse0_w"] + params["fuse0_b"]
    a0 = L.relu(z0)
    z1 = a0 @ params["fuse1_w"] + params["fuse1_b"]
    feats = L.relu(z1)
    cache["fuse"] = (cat, z0, a0, z1)
    cache["widths"] = [lv.shape[1] for lv in levels]

    h = feats
    head = []
    for i in range(4):
        z = h @ params[f"head{i}_w"] + params[f"head{i}_b"]
        head.append((h, z))
        h = L.relu(z) if i < 3 else z
    cache["head"] = head
    out = h
    if cfg.flow_output == "bounded":
        # flow_scale * exp(+-range): zero flow is not reachable
        q = cfg.flow_scale * np.exp(cfg.flow_log_range * np.tanh(out[:, 0]))
    else:
        q = cfg.flow_scale * (1.0 + out[:, 0])
    cache["out"] = out
    p = cfg.pressure_scale * (1.0 + out[:, 1])

    if cfg.pooling == "max":
        emb = feats.max(axis=0)
        cache["pool_arg"] = feats.argmax(axis=0)
    else:
        emb = feats.mean(axis=0)
    cache["feats"] = feats
    return ForwardResult(q, p, emb, feats, cache)


def backward(res: ForwardResult, params: dict, cfg: EncoderConfig, grad_q=None, grad_p=None,
             grad_embedding=None) -> dict[str, np.ndarray]:
    """Gradients of a scalar objective in every parameter, given its partials in Q, P and the embedding."""
    cache = res.cache
    grads = {k: np.zeros_like(v) for k, v in params.items()}
    n = len(res.q)
    dout = np.zeros((n, 2))
    if grad_q is not None:
        if cfg.flow_output == "bounded":
            th = np.tanh(cache["out"][:, 0])
            dout[:, 0] = grad_q * res.q * cfg.flow_log_range * (1.0 - th * th)
        else:
            dout[:, 0] = cfg.flow_scale * grad_q
    if grad_p is not None:
        dout[:, 1] = cfg.pressure_scale * grad_p

    dh = dout
    for i in reversed(range(4)):
        h_in, z = cache["head"][i]
        if i < 3:
            dh = dh * (z > 0)
        grads[f"head{i}_w"] += h_in.T @ dh
        grads[f"head{i}_b"] += dh.sum(axis=0)
        dh = dh @ params[f"head{i}_w"].T
    dfeats = dh

    if grad_embedding is not None:
        if cfg.pooling == "max":
            dmax = np.zeros_like(cache["feats"])
            dmax[cache["pool_arg"], np.arange(dmax.shape[1])] = grad_embedding
            dfeats = dfeats + dmax
        else:
            dfeats = dfeats + np.broadcast_to(grad_embedding / n, dfeats.shape)

    cat, z0, a0, z1 = cache["fuse"]
    dz1 = dfeats * (z1 > 0)
    grads["fuse1_w"] += a0.T @ dz1
    grads["fuse1_b"] += dz1.sum(axis=0)
    dz0 = (dz1 @ params["fuse1_w"].T) * (z0 > 0)
    grads["fuse0_w"] += cat.T @ dz0
    grads["fuse0_b"] += dz0.sum(axis=0)
    dcat = dz0 @ params["fuse0_w"].T
    splits = np.cumsum(cache["widths"])[:-1]
    dlevels = np.split(dcat, splits, axis=1)

    dx = None
    for b in reversed(range(cfg.blocks)):
        dfeat, dw, db = L.ca_backward(dlevels[b], cache["ca"][b], params[f"ca{b}_w"])
        grads[f"ca{b}_w"] += dw
        grads[f"ca{b}_b"] += db
        dx = dfeat if dx is None else dx + dfeat
        block = cache["blocks"][b]
        for layer in reversed(range(cfg.layers_per_block)):
            dx, dw, db = L.gcn_backward(dx, block["gcn"][layer], block["ahat"], params[f"gcn{b}_{layer}_w"])
            grads[f"gcn{b}_{layer}_w"] += dw
            grads[f"gcn{b}_{layer}_b"] += db
        if b > 0:
            dx, dproj = L.topk_backward(dx, block["pool"], params[f"pool{b}_p"])
            grads[f"pool{b}_p"] += dproj
    return grads


# classification head ---------------------------------------------------------

def init_classifier(cfg: EncoderConfig, seed: int = 0) -> dict[str, np.ndarray]:
    rng = np.random.default_rng([seed, 202])
    d3 = 3 * cfg.d
    return {
        "cls0_w": _glorot(rng, d3, cfg.d),
        "cls0_b": np.zeros(cfg.d),
        "cls1_w": _glorot(rng, cfg.d, 1),
        "cls1_b": np.zeros(1),
        "emb_mean": np.zeros(d3),
        "emb_std": np.ones(d3),
    }


CLASSIFIER_TRAINABLE = ("cls0_w", "cls0_b", "cls1_w", "cls1_b")


def classifier_forward(emb: np.ndarray, cp: dict):
    """Event probabilities for a batch of embeddings (rows)."""
    x = (emb - cp["emb_mean"]) / cp["emb_std"]
    z0 = x @ cp["cls0_w"] + cp["cls0_b"]
    a0 = L.relu(z0)
    logit = (a0 @ cp["cls1_w"] + cp["cls1_b"])[:, 0]
    return L.sigmoid(logit), (x, z0, a0, logit)


def bce_loss(prob, logit, labels):
    """Mean binary cross-entropy and its gradient in the logit."""
    y = np.asarray(labels, dtype=float)
    # log(1 + exp(-|z|)) form for stability
    loss = np.mean(np.maximum(logit, 0) - logit * y + np.log1p(np.exp(-np.abs(logit))))
    return float(loss), (prob - y) / len(y)


def classifier_backward(dlogit, cache, cp):
    x, z0, a0, _ = cache
    g = {}
    g["cls1_w"] = a0.T @ dlogit[:, None]
    g["cls1_b"] = np.array([dlogit.sum()])
    da0 = dlogit[:, None] @ cp["cls1_w"].T
    dz0 = da0 * (z0 > 0)
    g["cls0_w"] = x.T @ dz0
    g["cls0_b"] = dz0.sum(axis=0)
    return g
