import numpy as np
import pytest

from pis.sensing import (
    NormStats, ObservationSet, grid_coords, interpolate_dense, load_sensors,
    rasterize, sample_observation_set, sensors_to_json,
)


@pytest.fixture
def grids():
    rng = np.random.default_rng(0)
    return rng.normal(2.0, 1.0, size=(3, 8, 8))


def _shuffled(obs, rng):
    perm = rng.permutation(len(obs))
    return ObservationSet(obs.coords[perm], obs.values[perm])


def test_exhaustive_sampling_covers_every_pixel(grids):
    obs = sample_observation_set(grids, 64, np.random.default_rng(1))
    assert len(obs) == 64
    cols = np.rint(obs.coords[:, 0] * 7).astype(int)
    rows = np.rint(obs.coords[:, 1] * 7).astype(int)
    assert len({(r, c) for r, c in zip(rows, cols)}) == 64


def test_sampling_deterministic(grids):
    a = sample_observation_set(grids, 10, np.random.default_rng(3), noise_sigma=0.2)
    b = sample_observation_set(grids, 10, np.random.default_rng(3), noise_sigma=0.2)
    np.testing.assert_array_equal(a.coords, b.coords)
    np.testing.assert_array_equal(a.values, b.values)


def test_noise_is_unbiased(grids):
    # CLT oracle: mean of (noisy - clean) over >= 10^4 draws within 3 sigma/sqrt(n)
    sigma = 0.5
    clean = sample_observation_set(grids, 64, np.random.default_rng(6))
    rng = np.random.default_rng(6)
    total = 0.0
    count = 0
    for _ in range(60):
        noisy = sample_observation_set(grids, 64, rng, noise_sigma=sigma)
        # exhaustive sets share the canonical ordering, so values align
        total += (noisy.values - clean.values).sum()
        count += noisy.values.size
    assert count >= 10_000
    assert abs(total / count) < 3 * sigma / np.sqrt(count)


def test_k_obs_bounds(grids):
    with pytest.raises(ValueError):
        sample_observation_set(grids, 0, np.random.default_rng(0))
    with pytest.raises(ValueError):
        sample_observation_set(grids, 65, np.random.default_rng(0))


def test_observation_set_validation():
    with pytest.raises(ValueError, match="unit square"):
        ObservationSet([[1.2, 0.5]], [[1.0]])
    with pytest.raises(ValueError, match="at least one"):
        ObservationSet(np.empty((0, 2)), np.empty((0, 1)))
    obs = ObservationSet([[0.5, 0.25]], [[1.0, 2.0]])
    assert obs.as_elements().shape == (1, 4)  # 2 + V layout per element


def test_rasterize_single_sensor_origin():
    obs = ObservationSet([[0.0, 0.0]], [[3.0]])
    r = rasterize(obs, 8, 8)
    assert r.shape == (2, 8, 8)
    assert r[1].sum() == 1.0
    assert r[1, 0, 0] == 1.0
    assert r[0, 0, 0] == 3.0
    assert np.all(r[0][r[1] == 0] == 0.0)


def test_rasterize_collision_averages():
    # two sensors round to the same pixel
    obs = ObservationSet([[0.49, 0.5], [0.51, 0.5]], [[1.0], [5.0]])
    r = rasterize(obs, 3, 3)
    assert r[1].sum() == 1.0
    assert r[0, 1, 1] == pytest.approx(3.0)


def test_rasterize_mask_counts_distinct_cells(grids):
    obs = sample_observation_set(grids, 17, np.random.default_rng(2))
    r = rasterize(obs, 8, 8)
    assert r[-1].sum() == 17


def test_permutation_invariance_bitwise(grids):
    rng = np.random.default_rng(7)
    obs = sample_observation_set(grids, 12, np.random.default_rng(8))
    for _ in range(20):
        shuf = _shuffled(obs, rng)
        np.testing.assert_array_equal(rasterize(obs, 8, 8), rasterize(shuf, 8, 8))
        np.testing.assert_array_equal(interpolate_dense(obs, 8, 8),
                                      interpolate_dense(shuf, 8, 8))


def test_idw_single_sensor_constant():
    obs = ObservationSet([[0.3, 0.7]], [[4.2]])
    dense = interpolate_dense(obs, 6, 6)
    np.testing.assert_allclose(dense, 4.2)


def test_idw_exact_at_sensor_and_midpoint():
    obs = ObservationSet([[0.0, 0.0], [1.0, 0.0]], [[1.0], [3.0]])
    dense = interpolate_dense(obs, 3, 5)
    assert dense[0, 0, 0] == pytest.approx(1.0)
    assert dense[0, 0, -1] == pytest.approx(3.0)
    # two-point IDW closed form at the midpoint: equal weights -> mean
    assert dense[0, 0, 2] == pytest.approx(2.0)


def test_idw_convexity(grids):
    obs = sample_observation_set(grids, 9, np.random.default_rng(4))
    dense = interpolate_dense(obs, 8, 8)
    for c in range(dense.shape[0]):
        assert dense[c].min() >= obs.values[:, c].min() - 1e-12
        assert dense[c].max() <= obs.values[:, c].max() + 1e-12


def test_normstats_roundtrip():
    rng = np.random.default_rng(0)
    raw = rng.normal(3.0, 2.0, size=(5, 100))
    stats = NormStats.from_samples(raw, axis=1)
    normed = stats.normalize(raw.T)
    assert normed.min() >= -1.0 - 1e-9 and normed.max() <= 1.0 + 1e-9
    np.testing.assert_allclose(stats.denormalize(normed), raw.T, atol=1e-6)


def test_sensors_json_roundtrip():
    stats = NormStats(loc=np.array([2.0]), scale=np.array([4.0]))
    obs = ObservationSet([[0.25, 0.75], [0.5, 0.5]], [[0.5], [-0.25]])
    payload = sensors_to_json(obs, stats)
    assert set(payload) == {"sensors"}
    back = load_sensors(payload, stats, n_channels=1)
    np.testing.assert_allclose(back.coords, obs.coords)
    np.testing.assert_allclose(back.values, obs.values, atol=1e-12)


def test_load_sensors_rejects_bad_payloads():
    with pytest.raises(ValueError):
        load_sensors({"sensors": []})
    with pytest.raises(ValueError, match="outside"):
        load_sensors({"sensors": [{"x": 1.5, "y": 0.0, "values": [1.0]}]})
    with pytest.raises(ValueError, match="expected 2 values"):
        load_sensors({"sensors": [{"x": 0.5, "y": 0.0, "values": [1.0]}]},
                     n_channels=2)
    with pytest.raises(ValueError):
        load_sensors({"wrong": 1})


def test_grid_coords_corners():
    pts = grid_coords(4, 4).reshape(4, 4, 2)
    np.testing.assert_allclose(pts[0, 0], [0.0, 0.0])
    np.testing.assert_allclose(pts[-1, -1], [1.0, 1.0])
