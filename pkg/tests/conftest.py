import numpy as np
import pytest

from dfo import selection as sel
from dfo import synthetic as syn
from dfo.geometry import Intrinsics, RigidTransform
from dfo.grids import Pyramid


@pytest.fixture
def K():
    return Intrinsics(200.0, 190.0, 63.5, 47.5)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_twist(rng, max_norm=1.0):
    xi = rng.standard_normal(6)
    return xi * rng.uniform(0, max_norm) / np.linalg.norm(xi)


def scene_pair(seed, height=96, width=128, surface="slanted", motion=True, **kw):
    """Target frame, source frame and the true target-to-source transform."""
    scene = syn.random_scene(seed, surface=surface, height=height, width=width, **kw)
    tgt = syn.render_frame(scene, RigidTransform.identity())
    if motion:
        T = syn.random_motion(np.random.default_rng(1000 + seed), float(tgt[1].depth.data.mean()))
    else:
        T = RigidTransform.identity()
    return scene, tgt, syn.render_frame(scene, T), T


def pyramids(scene, frame, configs=None):
    Ks = [scene.level_intrinsics(l) for l in range(1, 5)]
    kw = {} if configs is None else {"configs": configs}
    feats = Pyramid([v.features for v in frame.views], Ks, **kw)
    depth = Pyramid([v.depth for v in frame.views], Ks, **kw)
    return feats, depth


def gradient_masks(frame, configs, seed):
    return [sel.harden(sel.gumbel_sample(sel.gradient_prior(frame[l].image, configs[l - 1].sparsity),
                                         0.1, seed * 10 + l))
            for l in range(1, 5)]


# acceptance lines collected by test_acceptance.record()
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        parts = ACCEPTANCE[n]
        ok = all(p[0] for p in parts)
        detail = "; ".join(p[1] for p in parts)
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
