"""Physics-informed self-supervised losses on predicted pressure P and flow Q.

* residual: mean squared steady 1D momentum + mass residual
* global:   log relative error between predicted and law-based end-to-end drop
* local:    the same over overlapping sliding windows

Each loss returns its value together with analytic gradients in P and Q.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .hemo1d import Geometry1D, HemoConstants, drop_coefficients


@dataclass
class LossConfig:
    epsilon: float = 1e-6
    k_end: int = 5
    window: int = 50
    stride: int = 25
    weights: tuple = (1.0, 1.0, 1.0)
    averaged_window_edges: bool = False
    printed_friction_sign: bool = False
    constants: HemoConstants = field(default_factory=HemoConstants)

    def check(self, n: int) -> None:
        if not self.epsilon > 0:
            raise ValueError("epsilon must be > 0")
        if not 1 <= self.k_end <= n // 2:
            raise ValueError(f"k_end={self.k_end} outside [1, {n // 2}]")
        if not 2 <= self.window <= n:
            raise ValueError(f"window={self.window} outside [2, {n}]")
        if not 1 <= self.stride <= self.window:
            raise ValueError(f"stride={self.stride} outside [1, window]")


@dataclass
class LossReport:
    residual: float
    global_: float
    local: float
    total: float
    grad_p: np.ndarray
    grad_q: np.ndarray

    def as_dict(self) -> dict:
        return {
            "residual": self.residual,
            "global": self.global_,
            "local": self.local,
            "total": self.total,
            "grad_p_norm": float(np.linalg.norm(self.grad_p)),
            "grad_q_norm": float(np.linalg.norm(self.grad_q)),
        }


def ddx(f: np.ndarray, dx: float) -> np.ndarray:
    """Second-order central differences, second-order one-sided at both ends."""
    return np.gradient(f, dx, edge_order=2)


def ddx_adjoint(g: np.ndarray, dx: float) -> np.ndarray:
    """Transpose of :func:`ddx` applied to ``g``."""
    n = len(g)
    out = np.zeros(n)
    h = 2.0 * dx
    # interior rows i: (f[i+1] - f[i-1]) / 2dx
    gi = g[1:-1] / h
    out[2:] += gi
    out[:-2] -= gi
    # first row: (-3 f0 + 4 f1 - f2) / 2dx
    out[0] += -3 * g[0] / h
    out[1] += 4 * g[0] / h
    out[2] += -g[0] / h
    # last row: (3 f[-1] - 4 f[-2] + f[-3]) / 2dx
    out[-1] += 3 * g[-1] / h
    out[-2] += -4 * g[-1] / h
    out[-3] += g[-1] / h
    return out


def momentum_residual(p, q, area, dx, c: HemoConstants = HemoConstants(), printed_sign: bool = False):
    """d(Q^2/A)/dx + (A/rho) dP/dx + friction + dQ/dx at every point.

    The friction term is ``+2(zeta+2)mu*pi/rho * Q/A`` so that flow loses
    pressure; ``printed_sign`` flips it to the subtracted form.
    """
    kappa = c.healthy_viscous / c.rho
    sign = -1.0 if printed_sign else 1.0
    return ddx(q * q / area, dx) + (area / c.rho) * ddx(p, dx) + sign * kappa * q / area + ddx(q, dx)


def residual_loss(p, q, area, dx, c: HemoConstants = HemoConstants(), printed_sign: bool = False):
    """Returns (loss, grad_p, grad_q)."""
    p, q, area = (np.asarray(v, dtype=float) for v in (p, q, area))
    n = len(p)
    if n < 3:
        raise ValueError("residual loss needs N >= 3")
    if not dx > 0 or np.any(area <= 0):
        raise ValueError("need dx > 0 and positive areas")
    r = momentum_residual(p, q, area, dx, c, printed_sign)
    loss = float(np.mean(r * r))
    g = 2.0 * r / n
    kappa = c.healthy_viscous / c.rho
    sign = -1.0 if printed_sign else 1.0
    dt = ddx_adjoint(g, dx)
    grad_p = ddx_adjoint(area / c.rho * g, dx)
    grad_q = 2 * q / area * dt + sign * kappa * g / area + dt
    return loss, grad_p, grad_q


def _log_rel(pred, phys, eps, magnitude=False):
    """Loss term ln(1+|r|)^2 with r = (pred - phys) / den and its partials in pred and phys."""
    den = (abs(phys) if magnitude else phys) + eps
    if not den > 0:
        raise ValueError(f"physical drop + epsilon = {den:.4g} <= 0")
    num = pred - phys
    r = num / den
    a = abs(r)
    loss = np.log1p(a) ** 2
    dl_dr = 2 * np.log1p(a) / (1 + a) * np.sign(r)
    dden_dphys = np.sign(phys) if magnitude else 1.0
    d_pred = dl_dr / den
    d_phys = dl_dr * (-den - num * dden_dphys) / den**2
    return float(loss), float(d_pred), float(d_phys)


def global_drop_loss(p, q, geom: Geometry1D, cfg: LossConfig = LossConfig()):
    """Returns (loss, grad_p, grad_q) for the end-to-end drop consistency term."""
    p, q = np.asarray(p, dtype=float), np.asarray(q, dtype=float)
    n, k = len(p), cfg.k_end
    if n < 2 * k:
        raise ValueError(f"need N >= 2*k_end, got N={n}, k_end={k}")
    pred = p[:k].mean() - p[n - k:].mean()
    qbar = q.mean()
    a, b = drop_coefficients(geom, cfg.constants)
    phys = a * qbar + b * qbar * qbar
    loss, d_pred, d_phys = _log_rel(pred, phys, cfg.epsilon)
    grad_p = np.zeros(n)
    grad_p[:k] += d_pred / k
    grad_p[n - k:] -= d_pred / k
    grad_q = np.full(n, d_phys * (a + 2 * b * qbar) / n)
    return loss, grad_p, grad_q


def window_offsets(n: int, window: int, stride: int) -> list[int]:
    """Window starts m*stride, plus a right-aligned final window when the tail is uncovered."""
    if window > n:
        raise ValueError("window longer than the centerline")
    offsets = list(range(0, n - window + 1, stride))
    if offsets[-1] + window < n:
        offsets.append(n - window)
    return offsets


def local_drop_loss(p, q, geom: Geometry1D, cfg: LossConfig = LossConfig()):
    """Mean sliding-window drop consistency; returns (loss, grad_p, grad_q).

    The denominator uses |drop| + epsilon: a window over post-stenotic
    widening legitimately has a negative law-based drop (pressure recovery).
    """
    p, q = np.asarray(p, dtype=float), np.asarray(q, dtype=float)
    n, w = len(p), cfg.window
    offsets = window_offsets(n, w, cfg.stride)
    k = cfg.k_end if cfg.averaged_window_edges else 1
    if k > w // 2:
        raise ValueError("k_end too large for the window")
    grad_p, grad_q = np.zeros(n), np.zeros(n)
    total = 0.0
    m = len(offsets)
    for lo in offsets:
        hi = lo + w - 1
        pred = p[lo:lo + k].mean() - p[hi - k + 1:hi + 1].mean()
        qbar = q[lo:hi + 1].mean()
        a, b = drop_coefficients(geom, cfg.constants, lo, hi)
        phys = a * qbar + b * qbar * qbar
        loss, d_pred, d_phys = _log_rel(pred, phys, cfg.epsilon, magnitude=True)
        total += loss / m
        grad_p[lo:lo + k] += d_pred / (k * m)
        grad_p[hi - k + 1:hi + 1] -= d_pred / (k * m)
        grad_q[lo:hi + 1] += d_phys * (a + 2 * b * qbar) / (w * m)
    return total, grad_p, grad_q


def total_loss(p, q, geom: Geometry1D, cfg: LossConfig = LossConfig()) -> LossReport:
    cfg.check(len(p))
    w_r, w_g, w_l = cfg.weights
    res, gp_r, gq_r = residual_loss(p, q, geom.area, geom.dx, cfg.constants, cfg.printed_friction_sign)
    glo, gp_g, gq_g = global_drop_loss(p, q, geom, cfg)
    loc, gp_l, gq_l = local_drop_loss(p, q, geom, cfg)
    total = w_r * res + w_g * glo + w_l * loc
    return LossReport(
        residual=res,
        global_=glo,
        local=loc,
        total=float(total),
        grad_p=w_r * gp_r + w_g * gp_g + w_l * gp_l,
        grad_q=w_r * gq_r + w_g * gq_g + w_l * gq_l,
    )
