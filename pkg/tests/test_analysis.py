import math

import numpy as np
import pytest

from pis.analysis import (
    MiPoint, PcaProjector, evaluate_layouts, kl_entropy, mutual_information,
    nats_to_bits, rmse, ssim, sweep,
)
from pis.autodiff import Tensor
from pis.config import ModelConfig
from pis.fields import generate_dataset
from pis.sensing import NormStats


# ---------------------------------------------------------------------------
# RMSE

def test_rmse_cases():
    a = np.array([[1.0, 2.0], [3.0, 4.0]])
    assert rmse(a, a) == 0.0
    assert rmse(a + 1.0, a) == pytest.approx(1.0)
    b = np.array([[2.0, 0.0], [3.0, 8.0]])
    # hand oracle: sqrt(mean([1, 4, 0, 16]))
    assert rmse(a, b) == pytest.approx(math.sqrt(21.0 / 4.0))
    with pytest.raises(ValueError):
        rmse(a, np.zeros(3))


# ---------------------------------------------------------------------------
# SSIM

def _ssim_loop_oracle(p, t, win=7, sigma=1.5):
    # brute-force per-window reference, independent of the fft implementation
    r = np.arange(win) - (win - 1) / 2
    g = np.exp(-0.5 * (r / sigma) ** 2)
    k = np.outer(g, g)
    k /= k.sum()
    rng_l = t.max() - t.min()
    if rng_l <= 0:
        rng_l = 1e-6
    c1, c2 = (0.01 * rng_l) ** 2, (0.03 * rng_l) ** 2
    h, w = p.shape
    vals = []
    for i in range(h - win + 1):
        for j in range(w - win + 1):
            wp = p[i:i + win, j:j + win]
            wt = t[i:i + win, j:j + win]
            mp, mt = (k * wp).sum(), (k * wt).sum()
            vp = (k * wp * wp).sum() - mp * mp
            vt = (k * wt * wt).sum() - mt * mt
            cov = (k * wp * wt).sum() - mp * mt
            vals.append(((2 * mp * mt + c1) * (2 * cov + c2))
                        / ((mp * mp + mt * mt + c1) * (vp + vt + c2)))
    return float(np.mean(vals))


def test_ssim_identity_and_sign():
    rng = np.random.default_rng(0)
    a = rng.standard_normal((16, 16))
    assert ssim(a, a) == pytest.approx(1.0)
    zm = a - a.mean()
    assert ssim(-zm, zm) < 0


def test_ssim_matches_loop_oracle():
    rng = np.random.default_rng(1)
    truth = rng.standard_normal((20, 20))
    pred = truth + 0.3 * rng.standard_normal((20, 20))
    assert ssim(pred, truth) == pytest.approx(_ssim_loop_oracle(pred, truth),
                                              abs=1e-3)


def test_ssim_constant_truth_floored_range():
    pred = np.zeros((10, 10))
    val = ssim(pred + 1e-9, pred)
    assert np.isfinite(val)


# ---------------------------------------------------------------------------
# entropy estimator

def test_kl_entropy_gaussian_2d():
    rng = np.random.default_rng(2)
    x = rng.standard_normal((2000, 2))
    h = kl_entropy(x, k=3)
    true = math.log(2 * math.pi * math.e)
    assert abs(h - true) / true < 0.05


def test_kl_entropy_uniform_square():
    rng = np.random.default_rng(3)
    x = rng.random((2000, 2))
    assert abs(kl_entropy(x, k=3)) < 0.1


def test_kl_entropy_scaling_identity():
    rng = np.random.default_rng(4)
    x = rng.standard_normal((500, 3))
    c = 2.7
    h1 = kl_entropy(x, k=3)
    h2 = kl_entropy(c * x, k=3)
    assert h2 - h1 == pytest.approx(3 * math.log(c), abs=1e-9)


def test_kl_entropy_errors():
    with pytest.raises(ValueError, match="more than k"):
        kl_entropy(np.zeros((3, 2)), k=3)
    with pytest.raises(ValueError, match="duplicate"):
        kl_entropy(np.zeros((50, 2)), k=3)


def test_nats_to_bits():
    assert nats_to_bits(math.log(2.0)) == pytest.approx(1.0)


# ---------------------------------------------------------------------------
# mutual information machinery

class _PriorStub:
    """Posterior transport that ignores observations: members ~ N(0, 1)."""

    def __init__(self, grid=8):
        self.cfg = ModelConfig(grid=grid, n_channels=1)

    def encode(self, obs_batch):
        return None

    def velocity(self, x_t, t, cond, rng=None, training=False, use_cache=False):
        return Tensor(np.zeros_like(x_t.data))


class _PriorSampler:
    def sample_field(self, rng):
        return rng.standard_normal((8, 8))


def _stub_dataset():
    rng = np.random.default_rng(5)
    obs = rng.standard_normal((3, 1, 8, 8))
    fields = rng.standard_normal((3, 8, 8))
    from pis.fields.dataset import Dataset
    return Dataset(scenario="shm", fields=fields, obs=obs, channels=["c0"],
                   field_stats=NormStats(loc=[0.0], scale=[1.0]),
                   obs_stats=NormStats(loc=[0.0], scale=[1.0]))


def test_mi_prior_equals_posterior_is_near_zero():
    ds = _stub_dataset()
    point = mutual_information(_PriorStub(), ds, _PriorSampler(), budget=5,
                               n_prior=300, n_post=150, n_instances=2, k=3,
                               pca_dim=8, n_steps=2, seed=0)
    assert isinstance(point, MiPoint)
    assert abs(point.raw_nats) < 0.1 * abs(point.prior_entropy)
    assert point.nats >= 0.0
    assert point.bits == pytest.approx(point.nats / math.log(2))


def test_pca_projector_shapes():
    rng = np.random.default_rng(6)
    prior = rng.standard_normal((40, 8, 8))
    proj = PcaProjector(prior, 5)
    out = proj(prior[:7])
    assert out.shape == (7, 5)


# ---------------------------------------------------------------------------
# sweep bookkeeping (stub model: no learning required)

def test_sweep_deterministic_and_recomputable():
    ds = _stub_dataset()
    model = _PriorStub()
    rep1 = sweep(model, ds, budgets=[2, 4], noise_levels=[0.0], layouts_per_point=3,
                 ensemble=2, steps=2, seed=1)
    rep2 = sweep(model, ds, budgets=[2, 4], noise_levels=[0.0], layouts_per_point=3,
                 ensemble=2, steps=2, seed=1)
    assert rep1.as_dict() == rep2.as_dict()
    for cell in rep1.cells:
        per = [r["rmse"] for r in cell.per_layout]
        assert cell.rmse_mean == pytest.approx(float(np.mean(per)))
        assert cell.rmse_std == pytest.approx(float(np.std(per)))


def test_evaluate_layouts_counts():
    ds = _stub_dataset()
    cell = evaluate_layouts(_PriorStub(), ds, budget=3, noise_sigma=0.1,
                            n_layouts=4, ensemble=2, steps=2, seed=0)
    assert len(cell.per_layout) == 4
    assert cell.noise_sigma == 0.1
