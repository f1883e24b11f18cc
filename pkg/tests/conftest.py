import numpy as np
import pytest

from vesseltwin.a3m import phantom_twin, sweep
from vesseltwin.geometry import Centerline


def line(n, length=1.0, axis=2):
    pts = np.zeros((n, 3))
    pts[:, axis] = np.linspace(0.0, length, n)
    return Centerline(pts)


def tube(n=50, k=16, r=0.15, length=3.0, radii=None, mask=None):
    """Straight z-axis tube in cm."""
    radii = np.full(n, r) if radii is None else np.asarray(radii, dtype=float)
    return sweep(line(n, length), radii, k, lesion_mask=mask, meta={"kind": "synthetic"})


def quarter_circle(n, radius=1.0):
    th = np.linspace(0, np.pi / 2, n)
    return Centerline(np.column_stack([radius * np.cos(th), radius * np.sin(th), np.zeros(n)]))


@pytest.fixture(scope="session")
def donors():
    return [phantom_twin(s, n=120, k=16) for s in range(4)]


def desk_gradcheck(seed, flow_output="bounded", pooling="mean", embedding=False):
    """Finite-difference check of every network parameter on a 20 x 8 graph with d = 4.

    The objective is the total physics loss, plus a fixed linear function of
    the pooled embedding when ``embedding`` is set. A unit output-layer scale
    keeps the parameter gradients well above finite-difference roundoff.
    """
    from vesseltwin import a3m, hemo1d, physloss, vgraph
    from vesseltwin.nnet import gradcheck as GC
    from vesseltwin.nnet import model as M

    donor = a3m.phantom_twin(2, n=60, k=16, stenoses=1)
    p = a3m.AugmentParams(target_n=20, target_k=8, seed=seed, euler_angles=(seed, 0.3, 0.1),
                          bend_amplitude=0.02, bend_frequency=1)
    t = a3m.synthesize(donor, donor, p)
    cfg = M.EncoderConfig(d=4, n_centerline=20, k_ca=4, seed=seed, head_init_scale=1.0,
                          flow_output=flow_output, pooling=pooling)
    gi = M.prepare_graph(vgraph.build_graph(t), cfg)
    geom = hemo1d.geometry_1d(t)
    lcfg = physloss.LossConfig(k_end=2, window=8, stride=4)
    w = np.random.default_rng(seed).normal(size=3 * cfg.d)

    def objective(r):
        rep = physloss.total_loss(r.p, r.q, geom, lcfg)
        if embedding:
            return rep.total + float(w @ r.embedding), rep.grad_q, rep.grad_p, w
        return rep.total, rep.grad_q, rep.grad_p, None

    return GC.check_network(gi, M.init_params(cfg), cfg, objective)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line_ in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line_)
