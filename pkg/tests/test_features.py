"""Motion features, quantization, EMA codebook learning, position indices."""

from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bimsim.exceptions import ArgumentError, TrainingError
from bimsim.features import (
    LinearAutoencoder,
    MotionFeature,
    autoencoder_from_dict,
    autoencoder_to_dict,
    codebook_from_dict,
    codebook_to_dict,
    ema_update,
    extract_motion_feature,
    make_codebook,
    position_index_grid,
    position_index,
    quantize,
    save_quantizer,
    load_quantizer,
    train_quantizer,
    vqvae_gradients,
    vqvae_loss,
)
from bimsim.kinematics import interpolate_trajectory


# ---------------------------------------------------------------------------
# Motion features
# ---------------------------------------------------------------------------


def test_single_waypoint_feature():
    from bimsim.kinematics import Trajectory

    traj = Trajectory(waypoints=np.array([[0.1, 0.2, 0.3]]))
    feature = extract_motion_feature(traj)
    assert feature.frames.shape == (1, 3)
    np.testing.assert_array_equal(feature.frames[0], [0.1, 0.2, 0.3])


def test_constant_trajectory_rows_identical():
    q = np.array([0.5, -0.5, 1.0, 0.2])
    traj = interpolate_trajectory(q, q, n=6)
    feature = extract_motion_feature(traj)
    assert feature.length == 6
    assert np.all(feature.frames == q)


def test_feature_rows_match_interpolant():
    # deltas small enough that the step bound does not grow the waypoint count
    q0 = np.array([0.0, 0.2])
    q1 = np.array([0.2, -0.2])
    n = 9
    traj = interpolate_trajectory(q0, q1, n=n)
    assert len(traj) == n
    feature = extract_motion_feature(traj)
    for k in range(n):
        t = k / (n - 1)
        s = 3 * t**2 - 2 * t**3
        np.testing.assert_allclose(feature.frames[k], q0 + s * (q1 - q0), atol=1e-12)


def test_feature_rejects_non_finite():
    with pytest.raises(ArgumentError):
        MotionFeature(frames=np.array([[1.0, np.nan]]))


# ---------------------------------------------------------------------------
# Quantize
# ---------------------------------------------------------------------------


def test_quantize_nearest_by_inspection():
    cb = make_codebook(np.array([[0.0, 0.0], [1.0, 1.0]]))
    idx, code = quantize(np.array([0.2, 0.1]), cb)
    assert idx == 0
    np.testing.assert_array_equal(code, [0.0, 0.0])


def test_quantize_exact_code_is_fixed_point():
    cb = make_codebook(np.array([[0.0, 1.0], [2.0, -1.0], [0.5, 0.5]]))
    idx, code = quantize(np.array([2.0, -1.0]), cb)
    assert idx == 1
    assert np.linalg.norm(code - [2.0, -1.0]) == 0.0


def test_quantize_tie_breaks_to_lowest_index():
    cb = make_codebook(np.array([[0.0, 0.0], [2.0, 0.0]]))
    idx, _ = quantize(np.array([1.0, 0.0]), cb)
    assert idx == 0


def test_quantize_dimension_mismatch():
    cb = make_codebook(np.array([[0.0, 0.0]]))
    with pytest.raises(ArgumentError):
        quantize(np.array([1.0, 2.0, 3.0]), cb)


@given(st.integers(2, 64), st.integers(1, 6), st.integers(0, 10_000))
@settings(max_examples=40, deadline=None)
def test_quantize_is_true_argmin(m, d, seed):
    rng = np.random.default_rng(seed)
    cb = make_codebook(rng.normal(size=(m, d)))
    z = rng.normal(size=d)
    idx, _ = quantize(z, cb)
    # linear scan oracle
    distances = [float(np.sum((row - z) ** 2)) for row in cb.codes]
    assert distances[idx] == min(distances)
    assert idx == distances.index(min(distances))


def test_quantize_argmin_large_codebook():
    rng = np.random.default_rng(123)
    cb = make_codebook(rng.normal(size=(1024, 8)))
    for _ in range(50):
        z = rng.normal(size=8)
        idx, _ = quantize(z, cb)
        distances = [float(np.sum((row - z) ** 2)) for row in cb.codes]
        assert idx == distances.index(min(distances))


# ---------------------------------------------------------------------------
# Loss
# ---------------------------------------------------------------------------


def naive_loss(frames, encoder, decoder, codes, alpha, beta):
    """Independent re-implementation: explicit loops, no vectorization."""
    t = len(frames)
    recon = codebook_term = commit = 0.0
    for frame in frames:
        z = [sum(encoder[i][j] * frame[j] for j in range(len(frame)))
             for i in range(len(encoder))]
        best, best_d = 0, float("inf")
        for k, code in enumerate(codes):
            d = sum((z[i] - code[i]) ** 2 for i in range(len(z)))
            if d < best_d:
                best, best_d = k, d
        e = codes[best]
        decoded = [sum(decoder[i][j] * e[j] for j in range(len(e)))
                   for i in range(len(decoder))]
        recon += sum((decoded[i] - frame[i]) ** 2 for i in range(len(frame)))
        codebook_term += alpha * sum((z[i] - e[i]) ** 2 for i in range(len(z)))
        commit += beta * sum((z[i] - e[i]) ** 2 for i in range(len(z)))
    return (recon + codebook_term + commit) / t, recon / t, codebook_term / t, commit / t


def small_instance(seed=0, t=5, d=4, dp=2, m=3):
    rng = np.random.default_rng(seed)
    frames = rng.normal(size=(t, d))
    ae = LinearAutoencoder(encoder=rng.normal(size=(dp, d)), decoder=rng.normal(size=(d, dp)))
    cb = make_codebook(rng.normal(size=(m, dp)))
    return MotionFeature(frames=frames), ae, cb


def test_loss_matches_independent_oracle():
    m, ae, cb = small_instance()
    total, recon, cterm, commit = vqvae_loss(m, ae, cb, alpha=0.7, beta=0.3)
    expected = naive_loss(
        m.frames.tolist(), ae.encoder.tolist(), ae.decoder.tolist(),
        cb.codes.tolist(), 0.7, 0.3,
    )
    assert total == pytest.approx(expected[0], abs=1e-9)
    assert recon == pytest.approx(expected[1], abs=1e-9)
    assert cterm == pytest.approx(expected[2], abs=1e-9)
    assert commit == pytest.approx(expected[3], abs=1e-9)


def test_loss_zero_terms_when_latent_on_code():
    # encoder maps the frame onto an exact code; decoder reconstructs it
    frames = np.array([[1.0, 2.0]])
    encoder = np.eye(2)
    code = np.array([[1.0, 2.0]])
    decoder = np.eye(2)
    ae = LinearAutoencoder(encoder=encoder, decoder=decoder)
    cb = make_codebook(code)
    total, recon, cterm, commit = vqvae_loss(MotionFeature(frames=frames), ae, cb, 1.0, 0.5)
    assert cterm == 0.0
    assert commit == 0.0
    assert recon == pytest.approx(0.0, abs=1e-12)


def test_loss_alpha_beta_zero_reduces_to_reconstruction():
    m, ae, cb = small_instance(seed=3)
    total, recon, cterm, commit = vqvae_loss(m, ae, cb, alpha=0.0, beta=0.0)
    assert cterm == 0.0 and commit == 0.0
    assert total == recon


def test_loss_components_nonnegative_and_additive():
    for seed in range(5):
        m, ae, cb = small_instance(seed=seed)
        total, recon, cterm, commit = vqvae_loss(m, ae, cb, alpha=1.3, beta=0.2)
        assert recon >= 0 and cterm >= 0 and commit >= 0
        assert total == recon + cterm + commit


def test_loss_rejects_negative_weights():
    m, ae, cb = small_instance()
    with pytest.raises(ArgumentError):
        vqvae_loss(m, ae, cb, alpha=-1.0, beta=0.0)


def frozen_sg_loss(frames, encoder, decoder, cb, alpha, beta, base_encoder):
    """Loss with stop-gradient quantities frozen at the base point.

    Central differences of this function equal the analytic gradient under
    straight-through/stop-gradient semantics: the code assignment e and the
    straight-through residual (e - z_base) stay fixed while the perturbed
    encoder moves z.
    """
    t = frames.shape[0]
    z_base = frames @ base_encoder.T
    d = ((z_base[:, None, :] - cb.codes[None, :, :]) ** 2).sum(axis=2)
    e = cb.codes[np.argmin(d, axis=1)]
    z = frames @ encoder.T
    decoder_in = z + (e - z_base)  # straight-through substitution
    recon = float(np.sum((decoder_in @ decoder.T - frames) ** 2)) / t
    cterm = alpha * float(np.sum((z_base - e) ** 2)) / t  # sg[z]: frozen
    commit = beta * float(np.sum((z - e) ** 2)) / t  # sg[e]: frozen
    return recon + cterm + commit


def test_encoder_gradient_matches_finite_differences():
    rng = np.random.default_rng(8)
    frames = rng.normal(size=(6, 5))
    encoder = rng.normal(size=(3, 5)) * 0.5
    decoder = rng.normal(size=(5, 3)) * 0.5
    cb = make_codebook(rng.normal(size=(4, 3)))
    ae = LinearAutoencoder(encoder=encoder, decoder=decoder)
    alpha, beta = 1.0, 0.25
    g_enc, _ = vqvae_gradients(frames, ae, cb, alpha, beta)
    h = 1e-6
    for i in range(encoder.shape[0]):
        for j in range(encoder.shape[1]):
            e_plus = encoder.copy()
            e_plus[i, j] += h
            e_minus = encoder.copy()
            e_minus[i, j] -= h
            f_plus = frozen_sg_loss(frames, e_plus, decoder, cb, alpha, beta, encoder)
            f_minus = frozen_sg_loss(frames, e_minus, decoder, cb, alpha, beta, encoder)
            fd = (f_plus - f_minus) / (2 * h)
            denom = max(abs(fd), abs(g_enc[i, j]), 1e-8)
            assert abs(fd - g_enc[i, j]) / denom < 1e-5


def test_decoder_gradient_matches_finite_differences():
    rng = np.random.default_rng(9)
    frames = rng.normal(size=(4, 3))
    encoder = rng.normal(size=(2, 3)) * 0.5
    decoder = rng.normal(size=(3, 2)) * 0.5
    cb = make_codebook(rng.normal(size=(3, 2)))
    ae = LinearAutoencoder(encoder=encoder, decoder=decoder)
    _, g_dec = vqvae_gradients(frames, ae, cb, 1.0, 0.25)
    h = 1e-6
    for i in range(decoder.shape[0]):
        for j in range(decoder.shape[1]):
            d_plus = decoder.copy()
            d_plus[i, j] += h
            d_minus = decoder.copy()
            d_minus[i, j] -= h
            f_plus = frozen_sg_loss(frames, encoder, d_plus, cb, 1.0, 0.25, encoder)
            f_minus = frozen_sg_loss(frames, encoder, d_minus, cb, 1.0, 0.25, encoder)
            fd = (f_plus - f_minus) / (2 * h)
            denom = max(abs(fd), abs(g_dec[i, j]), 1e-8)
            assert abs(fd - g_dec[i, j]) / denom < 1e-5


# ---------------------------------------------------------------------------
# EMA
# ---------------------------------------------------------------------------


def test_empty_batch_leaves_codes_unchanged():
    cb = make_codebook(np.array([[1.0, 2.0], [3.0, 4.0]]))
    # prime both entries so counts are nonzero, then decay with an empty batch
    cb = ema_update(cb, [(np.array([1.0, 2.0]), 0), (np.array([3.0, 4.0]), 1)])
    updated = ema_update(cb, [])
    np.testing.assert_allclose(updated.codes, cb.codes, atol=1e-12)
    assert np.all(updated.ema_counts < cb.ema_counts)  # counts decayed


def test_zero_count_entries_keep_their_codes():
    cb = make_codebook(np.array([[1.0, 2.0], [3.0, 4.0]]))
    updated = ema_update(cb, [(np.array([5.0, 5.0]), 0)])
    np.testing.assert_array_equal(updated.codes[1], [3.0, 4.0])  # untouched entry
    np.testing.assert_allclose(updated.codes[0], [5.0, 5.0], atol=1e-12)


def test_repeated_assignment_converges_geometrically():
    cb = make_codebook(np.array([[0.0, 0.0]]), decay=0.99)
    v = np.array([2.0, -1.0])
    for _ in range(100):
        cb = ema_update(cb, [(v, 0)])
    assert np.linalg.norm(cb.codes[0] - v) < 1e-2


def test_two_cluster_codes_match_kmeans_oracle():
    rng = np.random.default_rng(21)
    a = rng.normal(loc=[-2.0, 0.0], scale=0.05, size=(40, 2))
    b = rng.normal(loc=[2.0, 1.0], scale=0.05, size=(40, 2))
    data = np.vstack([a, b])
    seeds = np.array([data[0], data[40]])  # one seed per cluster

    # Lloyd's algorithm as the independent oracle
    centers = seeds.copy()
    for _ in range(50):
        d = ((data[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        assign = np.argmin(d, axis=1)
        for k in range(2):
            if np.any(assign == k):
                centers[k] = data[assign == k].mean(axis=0)

    cb = make_codebook(seeds, decay=0.99)
    for _ in range(100):
        assigns = []
        for z in data:
            idx, _ = quantize(z, cb)
            assigns.append((z, idx))
        cb = ema_update(cb, assigns)
    # order-insensitive match
    errors = [
        min(np.linalg.norm(cb.codes[k] - centers[0]), np.linalg.norm(cb.codes[k] - centers[1]))
        for k in range(2)
    ]
    assert max(errors) < 1e-2


def test_ema_counts_stay_finite_with_epsilon_floor():
    cb = make_codebook(np.array([[5.0, 5.0], [1.0, 1.0]]), decay=0.5)
    for _ in range(200):
        cb = ema_update(cb, [(np.array([1.0, 1.0]), 1)])
    assert np.all(np.isfinite(cb.codes))
    assert cb.codes.shape == (2, 2)


def test_ema_rejects_out_of_range_index():
    cb = make_codebook(np.array([[0.0, 0.0]]))
    with pytest.raises(ArgumentError):
        ema_update(cb, [(np.array([1.0, 1.0]), 5)])


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------


def test_constant_dataset_reconstruction_vanishes():
    frame = np.array([[0.4, -0.2, 0.9]])
    dataset = [MotionFeature(frames=frame)]
    ae, cb, history = train_quantizer(
        dataset, epochs=200, alpha=1.0, beta=0.25, lr=0.05, seed=0,
        n_codes=1, latent_dim=2,
    )
    _, recon, _, _ = vqvae_loss(MotionFeature(frames=frame), ae, cb, 1.0, 0.25)
    assert recon < 1e-4


def test_loss_history_non_increasing_after_warmup():
    rng = np.random.default_rng(17)
    dataset = [MotionFeature(frames=rng.normal(size=(20, 6)) * 0.5) for _ in range(3)]
    _, _, history = train_quantizer(
        dataset, epochs=10, alpha=1.0, beta=0.25, lr=0.05, seed=1,
        n_codes=8, latent_dim=3,
    )
    upticks = sum(
        1 for i in range(3, len(history) - 1) if history[i + 1] > history[i] + 1e-12
    )
    assert upticks <= 1


def test_training_bit_reproducible():
    rng = np.random.default_rng(2)
    dataset = [MotionFeature(frames=rng.normal(size=(10, 4)))]
    a = train_quantizer(dataset, epochs=20, seed=9, n_codes=4, latent_dim=2)
    b = train_quantizer(dataset, epochs=20, seed=9, n_codes=4, latent_dim=2)
    np.testing.assert_array_equal(a[0].encoder, b[0].encoder)
    np.testing.assert_array_equal(a[1].codes, b[1].codes)
    assert a[2] == b[2]


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_training_reports_divergence_epoch():
    rng = np.random.default_rng(2)
    dataset = [MotionFeature(frames=rng.normal(size=(10, 4)) * 100)]
    with pytest.raises(TrainingError) as err:
        train_quantizer(dataset, epochs=200, lr=10.0, seed=0, n_codes=2, latent_dim=2)
    assert err.value.epoch >= 0


def test_empty_dataset_rejected():
    with pytest.raises(ArgumentError):
        train_quantizer([], epochs=1)


# ---------------------------------------------------------------------------
# Position indices
# ---------------------------------------------------------------------------


def test_position_index_centroid_is_zero():
    assert position_index(4, 7, 7, (7, 7)) == position_index(4, 7, 7, (7, 7))
    idx = position_index(4, 7, 7, (7, 7))
    assert (idx.t, idx.sy, idx.sx) == (4, 0, 0)


def test_position_index_direct_evaluation():
    idx = position_index(3, 10, 2, (4, 6))
    assert (idx.t, idx.sy, idx.sx) == (3, -1, 1)


def test_position_index_translation_invariance():
    for dx in (-3, 0, 5):
        for dy in (-2, 0, 7):
            a = position_index(1, 10 + dx, 4 + dy, (6 + dx, 2 + dy))
            b = position_index(1, 10, 4, (6, 2))
            assert (a.sy, a.sx) == (b.sy, b.sx)


@given(st.integers(0, 63), st.integers(0, 63), st.integers(0, 63), st.integers(0, 63),
       st.integers(0, 100))
@settings(max_examples=100, deadline=None)
def test_position_index_properties_hold(x, y, xr, yr, t):
    idx = position_index(t, x, y, (xr, yr))
    assert idx.sx in (-1, 0, 1) and idx.sy in (-1, 0, 1)
    # reflection through the centroid negates spatial components
    rx, ry = 2 * xr - x, 2 * yr - y
    ref = position_index(t, rx, ry, (xr, yr))
    assert ref.sx == -idx.sx and ref.sy == -idx.sy


def test_position_index_grid_shape_and_values():
    grid = position_index_grid(5, 3, 4, (1, 1))
    assert len(grid) == 3 and len(grid[0]) == 4
    assert grid[1][1] == [5, 0, 0]
    assert grid[0][0] == [5, -1, -1]
    assert grid[2][3] == [5, 1, 1]


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------


def test_quantizer_round_trip(tmp_path):
    m, ae, cb = small_instance(seed=5)
    path = tmp_path / "quantizer.json"
    save_quantizer(str(path), ae, cb)
    ae2, cb2 = load_quantizer(str(path))
    np.testing.assert_array_equal(ae.encoder, ae2.encoder)
    np.testing.assert_array_equal(ae.decoder, ae2.decoder)
    np.testing.assert_array_equal(cb.codes, cb2.codes)
    assert cb.decay == cb2.decay
    assert codebook_from_dict(codebook_to_dict(cb)).size == cb.size
    assert autoencoder_from_dict(autoencoder_to_dict(ae)).encoder.shape == ae.encoder.shape
