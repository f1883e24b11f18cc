"""Central finite-difference checks for the hand-written backward passes."""
from __future__ import annotations

import hashlib

import numpy as np

from . import model as M


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-12) -> float:
    """max |a - f| / max |f| over a tensor."""
    scale = max(float(np.max(np.abs(numeric))), floor)
    return float(np.max(np.abs(analytic - numeric))) / scale


def numeric_gradient(f, x: np.ndarray, rel_step: float = 1e-6) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    for i in np.ndindex(x.shape):
        h = rel_step * max(1.0, abs(x[i]))
        old = x[i]
        x[i] = old + h
        fp = f(x)
        x[i] = old - h
        fm = f(x)
        x[i] = old
        out[i] = (fp - fm) / (2 * h)
    return out


def forward_signature(res: M.ForwardResult) -> str:
    """Hash of every discrete choice in a forward pass: kept nodes and ReLU patterns."""
    h = hashlib.sha1()
    cache = res.cache
    for block in cache["blocks"]:
        if "pool" in block:
            h.update(block["pool"][2].tobytes())
        for _, z in block["gcn"]:
            h.update(np.packbits(z > 0).tobytes())
    for arr in cache["fuse"][1::2]:
        h.update(np.packbits(arr > 0).tobytes())
    for _, z in cache["head"][:3]:
        h.update(np.packbits(z > 0).tobytes())
    return h.hexdigest()


def check_network(gi, params, cfg, objective, rel_step: float = 1e-5, max_refinements: int = 4):
    """Compare backward() against finite differences for every parameter entry.

    ``objective(res)`` returns ``(value, grad_q, grad_p, grad_embedding)``.
    A central stencil whose evaluations land in a different discrete state
    (a Top-K or ReLU switch) is retried with a 10x smaller step. If one side
    still switches, the point sits on a kink such as an exact Top-K tie, and
    the one-sided difference on the unswitched side is used: that is the
    branch backward() differentiates. Returns ``{name: relative_error}``.
    """
    res = M.forward(gi, params, cfg)
    f0, gq, gp, ge = objective(res)
    grads = M.backward(res, params, cfg, gq, gp, ge)
    base_sig = forward_signature(res)

    def evaluate():
        r = M.forward(gi, params, cfg)
        return objective(r)[0], forward_signature(r)

    errors = {}
    for name, value in params.items():
        fd = np.zeros_like(value)
        for i in np.ndindex(value.shape):
            old = value[i]
            h = rel_step * max(1.0, abs(old))
            for _ in range(max_refinements + 1):
                value[i] = old + h
                fp, sp_ = evaluate()
                value[i] = old - h
                fm, sm = evaluate()
                value[i] = old
                if sp_ == base_sig and sm == base_sig:
                    fd[i] = (fp - fm) / (2 * h)
                    break
                h /= 10
            else:
                h = rel_step * max(1.0, abs(old))
                value[i] = old + h
                fp, sp_ = evaluate()
                value[i] = old - h
                fm, sm = evaluate()
                value[i] = old
                if sp_ == base_sig:
                    fd[i] = (fp - f0) / h
                elif sm == base_sig:
                    fd[i] = (f0 - fm) / h
                else:
                    fd[i] = (fp - fm) / (2 * h)
        errors[name] = relative_error(grads[name], fd)
    return errors
