import math

import numpy as np
import pytest

from hybridppc.channel import (
    PathTable,
    channel_from_paths,
    draw_paths,
    freq_response,
    freq_response_squint,
    generate_channel,
    raised_cosine,
    rng_from_seed,
    steering_matrix,
    steering_vector,
)
from hybridppc.config import ChannelParams, SystemConfig, preset


def small_cfg(**kw):
    base = dict(n_tx=8, n_rx=4, l_tx=2, l_rx=2, n_streams=2, n_subcarriers=16)
    base.update(kw)
    return SystemConfig(**base)


def small_params(**kw):
    base = dict(n_clusters=2, rays_per_cluster=(3, 2), n_taps=8)
    base.update(kw)
    return ChannelParams(**base)


# ---------------------------------------------------------------- steering

def test_steering_broadside_is_uniform():
    np.testing.assert_allclose(steering_vector(4, math.pi / 2), 0.5 * np.ones(4), atol=1e-15)


def test_steering_endfire_two_elements():
    np.testing.assert_allclose(steering_vector(2, 0.0), np.array([1, -1]) / math.sqrt(2), atol=1e-15)


def test_steering_sixty_degrees():
    m = np.arange(8)
    np.testing.assert_allclose(steering_vector(8, math.pi / 3),
                               np.exp(1j * m * math.pi / 2) / math.sqrt(8), atol=1e-15)


def test_steering_unit_norm_and_matrix_agrees():
    rng = np.random.default_rng(0)
    angles = rng.uniform(0, 2 * math.pi, 5)
    a = steering_matrix(16, angles)
    for i, ang in enumerate(angles):
        v = steering_vector(16, ang)
        assert abs(np.linalg.norm(v) - 1) < 1e-12
        np.testing.assert_allclose(a[:, i], v, atol=1e-14)
    squint = steering_matrix(16, angles, [0.9, 1.1])
    np.testing.assert_allclose(squint[1, :, 2], steering_vector(16, angles[2], 1.1), atol=1e-14)


@pytest.mark.parametrize("bad", [math.nan, math.inf])
def test_steering_rejects_nonfinite_angle(bad):
    with pytest.raises(ValueError):
        steering_vector(4, bad)


def test_steering_rejects_bad_ratio_and_size():
    with pytest.raises(ValueError):
        steering_vector(4, 0.1, freq_ratio=0.0)
    with pytest.raises(ValueError):
        steering_vector(0, 0.1)


# ---------------------------------------------------------------- pulse

@pytest.mark.parametrize("beta", [0.0, 0.3, 0.8, 1.0])
def test_raised_cosine_peak_and_zero_crossings(beta):
    ts = 1e-9
    assert raised_cosine(0.0, ts, beta) == pytest.approx(1.0)
    for m in (1, 2, -3, 7):
        # The zero at T_s/(2 beta) = T_s for beta = 1/2 is not hit by these betas.
        assert abs(raised_cosine(m * ts, ts, beta)) < 1e-12


def test_raised_cosine_singularity_limit():
    ts = 2.0
    assert raised_cosine(ts / 2, ts, 1.0) == pytest.approx(0.5, abs=1e-15)
    # Continuity across the removable point.
    near = raised_cosine(ts / 2 * (1 + 1e-7), ts, 1.0)
    assert near == pytest.approx(0.5, abs=1e-6)


def test_raised_cosine_vectorized():
    out = raised_cosine(np.array([0.0, 1.0, 0.5]), 1.0, 1.0)
    np.testing.assert_allclose(out, [1.0, 0.0, 0.5], atol=1e-15)


# ---------------------------------------------------------------- params

def test_channel_params_validation():
    with pytest.raises(ValueError):
        ChannelParams(n_clusters=2, rays_per_cluster=(1, 2, 3))
    with pytest.raises(ValueError):
        ChannelParams(rolloff=1.5)
    with pytest.raises(ValueError):
        ChannelParams(pathloss=0)
    assert ChannelParams(n_clusters=3, rays_per_cluster=2).rays_per_cluster == (2, 2, 2)
    assert ChannelParams(bandwidth_hz=2e9).ts == pytest.approx(5e-10)


def test_system_config_validation():
    with pytest.raises(ValueError):
        small_cfg(n_subcarriers=12)
    with pytest.raises(ValueError):
        small_cfg(n_streams=3)
    with pytest.raises(ValueError):
        small_cfg(budgets=(1.0,) * 7)
    with pytest.raises(ValueError):
        small_cfg(budgets=(1.0,) * 7 + (0.0,))
    np.testing.assert_allclose(small_cfg().budget_vector, np.full(8, 2.0))


def test_presets_dimensions():
    one, two = preset("System I"), preset("system-ii")
    assert (one.n_tx, one.n_rx, one.l_tx, one.l_rx, one.n_streams) == (64, 32, 4, 4, 4)
    assert (two.n_tx, two.n_rx, two.l_tx, two.l_rx, two.n_streams) == (64, 16, 4, 2, 2)
    assert one.q_bits_tx == one.q_bits_rx == 4 and one.n_subcarriers == 256
    assert ChannelParams().n_taps == 64
    with pytest.raises(ValueError):
        preset("system_iii")


# ---------------------------------------------------------------- generation

def test_single_path_matches_closed_form():
    cfg = small_cfg()
    params = small_params(n_clusters=1, rays_per_cluster=(1,))
    paths = PathTable(gains=[1.0], delays=[0.0], aoa=[0.7], aod=[2.1])
    taps = channel_from_paths(paths, cfg, params)
    outer = np.outer(steering_vector(4, 0.7), steering_vector(8, 2.1).conj())
    np.testing.assert_allclose(taps[0], math.sqrt(32) * outer, atol=1e-12)
    # Integer-sample delay: every other tap sits on a Nyquist zero.
    assert np.max(np.abs(taps[1:])) < 1e-12


def test_generation_is_deterministic():
    cfg, params = small_cfg(), small_params()
    a = generate_channel(cfg, params, 123)
    b = generate_channel(cfg, params, 123)
    assert np.array_equal(a.freq, b.freq) and np.array_equal(a.taps, b.taps)
    c = generate_channel(cfg, params, 124)
    assert not np.array_equal(a.freq, c.freq)


def test_negative_and_large_seeds_accepted():
    cfg, params = small_cfg(), small_params()
    generate_channel(cfg, params, -5)
    generate_channel(cfg, params, 2**63 + 11)
    assert rng_from_seed(-1).integers(1 << 30) == rng_from_seed(2**64 - 1).integers(1 << 30)


def test_delays_inside_support():
    params = small_params()
    for seed in range(50):
        paths = draw_paths(params, rng_from_seed(seed))
        assert np.all(paths.delays >= 0)
        assert np.all(paths.delays <= (params.n_taps - 1) * params.ts * (1 + 1e-12))


def test_delay_outside_support_is_internal_error():
    cfg, params = small_cfg(), small_params(n_clusters=1, rays_per_cluster=(1,))
    paths = PathTable(gains=[1.0], delays=[100 * params.ts], aoa=[0.0], aod=[0.0])
    with pytest.raises(RuntimeError):
        channel_from_paths(paths, cfg, params)


def test_infinite_rician_factor_is_rank_one():
    cfg = small_cfg()
    params = small_params(rician_factor_db=math.inf)
    ch = generate_channel(cfg, params, 9)
    s = np.linalg.svd(ch.freq, compute_uv=False)
    assert np.all(s[:, 1] < 1e-9 * s[:, 0])
    assert np.count_nonzero(ch.path_table.gains) == 1


def test_rician_power_fraction():
    kf_db = 6.0
    kf = 10 ** (kf_db / 10)
    params = small_params(rician_factor_db=kf_db)
    rng = rng_from_seed(77)
    first = total = 0.0
    for _ in range(10_000):
        g = draw_paths(params, rng).gains
        first += abs(g[0]) ** 2
        total += np.sum(np.abs(g) ** 2)
    assert first / total == pytest.approx(kf / (kf + 1), rel=0.02)


def test_parseval_between_taps_and_freq():
    cfg, params = small_cfg(), small_params()
    for seed in range(5):
        ch = generate_channel(cfg, params, seed)
        lhs = np.sum(np.abs(ch.freq) ** 2)
        rhs = cfg.n_subcarriers * np.sum(np.abs(ch.taps) ** 2)
        assert lhs == pytest.approx(rhs, rel=1e-9)


def test_freq_response_impulse_and_shift():
    rng = np.random.default_rng(1)
    h0 = rng.standard_normal((3, 2)) + 1j * rng.standard_normal((3, 2))
    taps = np.zeros((2, 3, 2), dtype=complex)
    taps[0] = h0
    np.testing.assert_allclose(freq_response(taps, 4), np.broadcast_to(h0, (4, 3, 2)))
    taps = np.zeros((2, 3, 2), dtype=complex)
    taps[1] = h0
    out = freq_response(taps, 4)
    for k in range(4):
        np.testing.assert_allclose(out[k], h0 * np.exp(-1j * np.pi * k / 2), atol=1e-14)


def test_freq_response_rejects_short_grid():
    with pytest.raises(ValueError):
        freq_response(np.zeros((8, 2, 2)), 4)


def test_generate_rejects_short_grid():
    with pytest.raises(ValueError):
        generate_channel(small_cfg(n_subcarriers=4), small_params(), 0)


def test_squint_vanishes_for_tiny_bandwidth():
    cfg = small_cfg()
    params = small_params(bandwidth_hz=1e9, sample_period=1e-9)
    paths = draw_paths(params, rng_from_seed(3))
    ref = freq_response(channel_from_paths(paths, cfg, params), cfg.n_subcarriers)
    # Tiny bandwidth for the squint grid, same sampling for the pulse.
    out = freq_response_squint(paths, cfg, params.replace(bandwidth_hz=1e-3))
    assert np.max(np.abs(out - ref)) < 1e-10


def test_squint_centre_subcarrier_unchanged():
    cfg = small_cfg()
    params = small_params(n_clusters=1, rays_per_cluster=(1,), bandwidth_hz=3e9)
    paths = draw_paths(params, rng_from_seed(4))
    ref = freq_response(channel_from_paths(paths, cfg, params), cfg.n_subcarriers)
    out = freq_response_squint(paths, cfg, params)
    k = cfg.n_subcarriers // 2
    np.testing.assert_allclose(out[k], ref[k], atol=1e-12)
    assert np.max(np.abs(out[0] - ref[0])) > 1e-6


def test_squint_flag_routes_generation():
    cfg = small_cfg()
    ch = generate_channel(cfg, small_params(beam_squint=True, bandwidth_hz=3e9), 2)
    assert ch.squint
    direct = freq_response_squint(ch.path_table, cfg, small_params(bandwidth_hz=3e9))
    np.testing.assert_allclose(ch.freq, direct)
