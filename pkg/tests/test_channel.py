import numpy as np
import pytest

from mahbf.channel import (
    ChannelConfig,
    SteeringNorm,
    channel_from_json,
    channel_to_json,
    compose_channel,
    generate_channel,
    load_channels,
    save_channels,
    steering_vector,
)
from mahbf.numerics import ContractError, Rng


def test_steering_zero_angle():
    np.testing.assert_allclose(steering_vector(0.0, 4, 0.5), np.full(4, 0.25))


def test_steering_thirty_degrees():
    g = steering_vector(np.pi / 6, 2, 0.5, SteeringNorm.AS_WRITTEN)
    np.testing.assert_allclose(g, [0.5, 0.5j], atol=1e-15)


@pytest.mark.parametrize("phi", [-1.2, 0.0, 0.3, np.pi / 2])
def test_unit_norm_variant(phi):
    g = steering_vector(phi, 17, 0.5, SteeringNorm.UNIT_NORM)
    assert abs(np.linalg.norm(g) - 1) < 1e-12


def test_single_path_collapse():
    n = 9
    cfg = ChannelConfig(n_tx=n, n_users=1, n_clusters=1, n_rays=1)
    H = compose_channel(cfg, np.ones((1, 1, 1)), np.zeros((1, 1, 1)))
    np.testing.assert_allclose(H[0], np.full(n, 1 / np.sqrt(n)), atol=1e-15)


def test_shape_and_determinism():
    cfg = ChannelConfig(n_tx=16, n_users=4)
    a = generate_channel(cfg, Rng(3))
    b = generate_channel(cfg, Rng(3))
    assert a.shape == (4, 16)
    assert np.all(np.isfinite(a))
    assert a.tobytes() == b.tobytes()
    assert not np.array_equal(a, generate_channel(cfg, Rng(4)))


@pytest.mark.parametrize("norm, per_entry", [(SteeringNorm.UNIT_NORM, 1.0), (SteeringNorm.AS_WRITTEN, 1 / 8)])
def test_second_moment(norm, per_entry):
    # E||h||^2 = N_t * E|alpha|^2 * ||g||^2 ; ||g||^2 = 1 or 1/N_t
    n_tx = 8
    cfg = ChannelConfig(n_tx=n_tx, n_users=2, n_clusters=3, n_rays=2, steering_norm=norm)
    H = generate_channel(cfg, Rng(11), n_draws=100_000)
    norms = np.sum(np.abs(H) ** 2, axis=-1)
    assert abs(norms.mean() / (n_tx * per_entry) - 1) < 0.02
    assert abs(np.mean(np.abs(H) ** 2) / per_entry - 1) < 0.02


def test_users_independent():
    cfg = ChannelConfig(n_tx=4, n_users=2, n_clusters=2, n_rays=2, steering_norm="unit_norm")
    H = generate_channel(cfg, Rng(12), n_draws=100_000)
    h1, h2 = H[:, 0, :], H[:, 1, :]
    cross = np.abs(np.mean(h1 * h2.conj(), axis=0))
    power = np.sqrt(np.mean(np.abs(h1) ** 2, axis=0) * np.mean(np.abs(h2) ** 2, axis=0))
    assert np.max(cross / power) < 0.02


def test_cluster_powers_scale_gains():
    base = ChannelConfig(n_tx=4, n_users=1, n_clusters=2, n_rays=1, steering_norm="unit_norm")
    loud = ChannelConfig(n_tx=4, n_users=1, n_clusters=2, n_rays=1, steering_norm="unit_norm",
                         cluster_powers=[4.0, 4.0])
    a = generate_channel(base, Rng(1))
    b = generate_channel(loud, Rng(1))
    np.testing.assert_allclose(b, 2 * a)


@pytest.mark.parametrize("kwargs", [
    {"n_tx": 0}, {"n_rays": 0}, {"spacing_ratio": 0.0},
    {"n_clusters": 2, "cluster_powers": [1.0]}, {"n_clusters": 2, "cluster_powers": [0.0, 0.0]},
])
def test_invalid_config(kwargs):
    with pytest.raises(ContractError):
        ChannelConfig(**kwargs)


def test_json_round_trip(tmp_path):
    cfg = ChannelConfig(n_tx=6, n_users=3, n_clusters=2, n_rays=2)
    chans = [generate_channel(cfg, Rng(s)) for s in range(3)]
    np.testing.assert_array_equal(channel_from_json(channel_to_json(chans[0])), chans[0])
    path = tmp_path / "h.json"
    save_channels(path, chans)
    for a, b in zip(load_channels(path), chans):
        np.testing.assert_array_equal(a, b)
