"""Physics-informed pretraining, frozen-encoder fine-tuning and checkpoint files."""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from .. import hemo1d
from ..geometry import DigitalTwin
from ..physloss import LossConfig, total_loss
from ..vgraph import build_graph
from . import model as M

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1


class TrainingError(RuntimeError):
    pass


@dataclass
class OptimConfig:
    lr: float = 1e-3
    momentum: float = 0.9
    epochs: int = 10
    batch_size: int = 4
    clip_norm: float | None = 1.0
    seed: int = 0


@dataclass
class PreparedTwin:
    twin_id: str
    graph: M.GraphInput
    geom: hemo1d.Geometry1D


def prepare_twin(t: DigitalTwin, cfg: M.EncoderConfig) -> PreparedTwin:
    g = build_graph(t)
    geom = hemo1d.geometry_1d(t, n=cfg.n_centerline)
    return PreparedTwin(str(t.meta.get("id", "?")), M.prepare_graph(g, cfg), geom)


def twin_loss(pt: PreparedTwin, params, cfg: M.EncoderConfig, loss_cfg: LossConfig):
    res = M.forward(pt.graph, params, cfg)
    try:
        rep = total_loss(res.p, res.q, pt.geom, loss_cfg)
    except ValueError as exc:
        raise TrainingError(f"twin {pt.twin_id}: {exc}") from exc
    if not np.isfinite(rep.total):
        raise TrainingError(f"non-finite loss on twin {pt.twin_id}: {rep.as_dict()}")
    return res, rep


def _global_norm(grads) -> float:
    return float(np.sqrt(sum(np.sum(g * g) for g in grads.values())))


class SGD:
    """Plain SGD with heavy-ball momentum and optional global-norm clipping."""

    def __init__(self, params, lr, momentum=0.0, clip_norm=None):
        self.params = params
        self.lr = lr
        self.momentum = momentum
        self.clip_norm = clip_norm
        self.velocity = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, grads):
        norm = _global_norm(grads)
        factor = 1.0
        if self.clip_norm is not None and norm > self.clip_norm:
            factor = self.clip_norm / norm
        for k, g in grads.items():
            v = self.velocity[k]
            v *= self.momentum
            v += factor * g
            self.params[k] -= self.lr * v
        return norm


def evaluate_loss(prepared, params, cfg, loss_cfg) -> float:
    return float(np.mean([twin_loss(pt, params, cfg, loss_cfg)[1].total for pt in prepared]))


def pretrain(prepared: list[PreparedTwin], cfg: M.EncoderConfig, loss_cfg: LossConfig, opt: OptimConfig,
             params=None, on_step=None):
    """Minimise the physics loss over a corpus; returns (params, log records).

    Epoch e visits twins in the order drawn from ``default_rng([opt.seed, e])``.
    """
    if not prepared:
        raise TrainingError("empty corpus")
    params = {k: v.copy() for k, v in (params or M.init_params(cfg)).items()}
    sgd = SGD(params, opt.lr, opt.momentum, opt.clip_norm)
    records = []
    step = 0
    for epoch in range(opt.epochs):
        order = np.random.default_rng([opt.seed, epoch]).permutation(len(prepared))
        for lo in range(0, len(order), opt.batch_size):
            batch = order[lo:lo + opt.batch_size]
            grads = {k: np.zeros_like(v) for k, v in params.items()}
            parts = np.zeros(4)
            gp_norm = gq_norm = 0.0
            for i in batch:
                res, rep = twin_loss(prepared[i], params, cfg, loss_cfg)
                g = M.backward(res, params, cfg, rep.grad_q, rep.grad_p)
                for k in grads:
                    grads[k] += g[k] / len(batch)
                parts += np.array([rep.residual, rep.global_, rep.local, rep.total]) / len(batch)
                gp_norm += np.linalg.norm(rep.grad_p) / len(batch)
                gq_norm += np.linalg.norm(rep.grad_q) / len(batch)
            norm = sgd.step(grads)
            rec = {
                "step": step,
                "epoch": epoch,
                "residual": parts[0],
                "global": parts[1],
                "local": parts[2],
                "total": parts[3],
                "grad_p_norm": gp_norm,
                "grad_q_norm": gq_norm,
                "param_grad_norm": norm,
            }
            records.append(rec)
            if on_step is not None:
                on_step(rec)
            step += 1
        if records:
            log.info("epoch %d: last batch total loss %.4g", epoch, records[-1]["total"])
    return params, records


def predict(pt: PreparedTwin, params, cfg: M.EncoderConfig) -> M.ForwardResult:
    return M.forward(pt.graph, params, cfg)


# fine-tuning -----------------------------------------------------------------

@dataclass
class FinetuneConfig:
    lr: float = 0.05
    momentum: float = 0.9
    epochs: int = 500
    seed: int = 0


def embeddings(prepared, params, cfg: M.EncoderConfig) -> np.ndarray:
    return np.stack([M.forward(pt.graph, params, cfg).embedding for pt in prepared])


def train_classifier(emb: np.ndarray, labels, cfg: M.EncoderConfig, ft: FinetuneConfig):
    """Full-batch cross-entropy training of the classifier head on fixed embeddings."""
    y = np.asarray(labels, dtype=int)
    if len(np.unique(y)) < 2:
        raise TrainingError("fine-tuning needs both classes")
    if min(np.sum(y == 0), np.sum(y == 1)) < 2:
        raise TrainingError("fine-tuning needs at least 2 cases of each class")
    cp = M.init_classifier(cfg, ft.seed)
    cp["emb_mean"] = emb.mean(axis=0)
    std = emb.std(axis=0)
    cp["emb_std"] = np.where(std > 1e-12, std, 1.0)
    trainable = {k: cp[k] for k in M.CLASSIFIER_TRAINABLE}
    sgd = SGD(trainable, ft.lr, ft.momentum)
    history = []
    for _ in range(ft.epochs):
        prob, cache = M.classifier_forward(emb, cp)
        loss, dlogit = M.bce_loss(prob, cache[3], y)
        history.append(loss)
        sgd.step(M.classifier_backward(dlogit, cache, cp))
    return cp, history


def finetune(prepared, labels, params, cfg: M.EncoderConfig, ft: FinetuneConfig):
    """Train the classifier head with the encoder frozen; returns (classifier, probabilities, history)."""
    emb = embeddings(prepared, params, cfg)
    cp, history = train_classifier(emb, labels, cfg, ft)
    prob, _ = M.classifier_forward(emb, cp)
    return cp, prob, history


def predict_proba(prepared, params, cp, cfg: M.EncoderConfig) -> np.ndarray:
    prob, _ = M.classifier_forward(embeddings(prepared, params, cfg), cp)
    return prob


# checkpoints -----------------------------------------------------------------

def save_checkpoint(path, cfg: M.EncoderConfig, params: dict, classifier: dict | None = None,
                    extra: dict | None = None) -> None:
    def pack(d):
        return {k: {"shape": list(v.shape), "data": np.asarray(v, dtype=float).ravel().tolist()}
                for k, v in d.items()}

    doc = {
        "format_version": CHECKPOINT_VERSION,
        "encoder_config": cfg.to_dict(),
        "params": pack(params),
    }
    if classifier is not None:
        doc["classifier"] = pack(classifier)
    if extra:
        doc["extra"] = extra
    Path(path).write_text(json.dumps(doc, separators=(",", ":")))


def _unpack(d):
    return {k: np.asarray(v["data"], dtype=float).reshape(v["shape"]) for k, v in d.items()}


def load_checkpoint(path, expect: M.EncoderConfig | None = None):
    """Returns (config, params, classifier or None). Shape mismatches against ``expect`` raise."""
    doc = json.loads(Path(path).read_text())
    if doc.get("format_version") != CHECKPOINT_VERSION:
        raise TrainingError(f"{path}: unsupported checkpoint version {doc.get('format_version')!r}")
    known = {f.name for f in fields(M.EncoderConfig)}
    cfg = M.EncoderConfig(**{k: v for k, v in doc["encoder_config"].items() if k in known})
    params = _unpack(doc["params"])
    want = M.param_shapes(expect or cfg)
    for name, shape in want.items():
        got = params.get(name)
        if got is None or got.shape != tuple(shape):
            have = None if got is None else got.shape
            raise TrainingError(
                f"checkpoint/config mismatch for {name}: checkpoint has {have}, config expects {tuple(shape)}")
    classifier = _unpack(doc["classifier"]) if "classifier" in doc else None
    return cfg, params, classifier


def optim_from_dict(d: dict) -> OptimConfig:
    return OptimConfig(**{k: d[k] for k in (f.name for f in fields(OptimConfig)) if k in d})


def write_log(records, path) -> None:
    with open(path, "w") as fh:
        for rec in records:
            fh.write(json.dumps({k: (float(v) if isinstance(v, np.floating) else v) for k, v in rec.items()}) + "\n")


