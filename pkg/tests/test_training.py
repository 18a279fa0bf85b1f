import numpy as np
import pytest
from hypothesis import given, strategies as st

from subsurr import kernels
from subsurr.decomposition import SnapshotSet
from subsurr.pod import compute_pod, combine_orthogonalize
from subsurr.surrogates import hidden_dims, init_theta, stiffness, tril_size
from subsurr.training import (SpsdLlsOptions, TrainConfig, TrajectorySpec, _loss, cosine_ramp,
                              fit_lls, fit_spsd_lls, fit_spsd_nn_with_history, lls_objective,
                              relative_error, train_network, training_error)


def test_cosine_ramp():
    assert cosine_ramp(2.0, 0.0, 1.0, 0.0) == 0.0
    assert cosine_ramp(2.0, 0.0, 1.0, 0.5) == pytest.approx(1.0)
    assert cosine_ramp(2.0, 0.0, 1.0, 1.0) == pytest.approx(2.0)
    with pytest.raises(ValueError):
        cosine_ramp(1.0, 0.0, 1.0, 1.5)
    with pytest.raises(ValueError):
        cosine_ramp(1.0, 1.0, 1.0, 1.0)


@given(b1=st.floats(-1, 1), b2=st.floats(-1, 1))
def test_two_stage_channel_is_continuous_with_flat_joints(b1, b2):
    s = TrajectorySpec({"b_x1": b1, "b_x2": b2}, n_steps=10)
    assert s.channel("b_x", 0.0) == 0.0
    assert s.channel("b_x", 0.5) == pytest.approx(b1)
    assert s.channel("b_x", 1.0) == pytest.approx(b1 + b2)
    h = 1e-6
    slope_l = (s.channel("b_x", 0.5) - s.channel("b_x", 0.5 - h)) / h
    slope_r = (s.channel("b_x", 0.5 + h) - s.channel("b_x", 0.5)) / h
    assert abs(slope_l) < 1e-4 and abs(slope_r) < 1e-4


def test_trajectory_times_and_validation():
    s = TrajectorySpec({}, n_steps=4)
    np.testing.assert_allclose(s.times(), [0.25, 0.5, 0.75, 1.0])
    assert s.times(True)[0] == 0.0
    with pytest.raises(ValueError):
        TrajectorySpec({}, n_steps=0)
    with pytest.raises(ValueError):
        TrajectorySpec({}, breakpoints=(0.0, 2.0))


def test_lr_schedule_and_presets():
    c = TrainConfig()
    assert [c.lr(e) for e in (0, 499, 500, 999, 1000, 4999, 5000, 14999, 15000, 30000)] == \
        [1e-3, 1e-3, 2e-4, 2e-4, 1e-4, 5e-5, 2e-5, 2e-5, 2e-5, 2e-5]
    p = TrainConfig.preset("preload")
    assert p.batch_size == 60 and p.lr(0) == 2.5e-4 and p.lr(600) == 2e-4
    with pytest.raises(ValueError):
        TrainConfig.preset("fast")
    back = TrainConfig.from_dict(__import__("json").loads(p.to_json()))
    assert back == p
    with pytest.raises(ValueError, match="unknown"):
        TrainConfig.from_dict({"epoch": 3})
    with pytest.raises(ValueError):
        TrainConfig(split=(0.5, 0.6))


def _synthetic(seed=0, n=30, N=8, k=3, f0=True):
    rng = np.random.default_rng(seed)
    B = rng.standard_normal((N, N))
    U = rng.standard_normal((N, n))
    f = rng.standard_normal(N) if f0 else np.zeros(N)
    return SnapshotSet(U, B @ U + f[:, None], f, [(i, 0) for i in range(N)])


def test_fit_lls_optimality():
    snap = _synthetic()
    pf, pu = compute_pod(snap.F_star, 3), compute_pod(snap.U, 3)
    m = fit_lls(snap, pf, pu)
    X, Y = pu.columns.T @ snap.U, pf.columns.T @ snap.F_star
    J = lls_objective(m.A_hat, X, Y)
    rng = np.random.default_rng(1)
    for _ in range(10):
        D = rng.standard_normal(m.A_hat.shape)
        assert lls_objective(m.A_hat + 1e-4 * D, X, Y) >= J


def test_fit_lls_exact_on_linear_data():
    snap = _synthetic(n=20, N=6)
    pf, pu = compute_pod(snap.F_star, 6), compute_pod(snap.U, 6)
    assert training_error(fit_lls(snap, pf, pu), snap) < 1e-12


def test_fit_lls_rejects_oversized_basis():
    snap = _synthetic(n=3, N=6)
    with pytest.raises(ValueError):
        fit_lls(snap, compute_pod(np.eye(6), 4), compute_pod(np.eye(6), 4))


def test_spsd_lls_not_better_than_lls_and_psd():
    snap = _synthetic(n=25, N=6)
    pf, pu = compute_pod(snap.F_star, 2), compute_pod(snap.U, 2)
    ps = combine_orthogonalize(pf, pu)
    m, obj = fit_spsd_lls(snap, ps, SpsdLlsOptions(restarts=2, iterations=2000))
    X, Y = ps.columns.T @ snap.U, ps.columns.T @ snap.F_star
    At = np.linalg.lstsq(X.T, Y.T, rcond=None)[0].T
    lls_rel = np.sqrt(lls_objective(At, X, Y)) / np.linalg.norm(Y)
    assert obj >= lls_rel - 1e-12
    K = stiffness(m, snap.U[:, 0]).dense()
    assert np.linalg.eigvalsh(0.5 * (K + K.T)).min() >= -1e-10 * np.abs(K).max()


def test_spsd_lls_zero_targets():
    snap = SnapshotSet(np.eye(4), np.zeros((4, 4)), np.zeros(4), [])
    ps = combine_orthogonalize(compute_pod(np.eye(4), 1), compute_pod(np.eye(4) + 1, 1))
    m, obj = fit_spsd_lls(snap, ps)
    assert obj == 0.0 and not np.any(m.L_hat)


@pytest.mark.parametrize("head", [0, 1])
def test_loss_gradient_matches_finite_differences(backend, head):
    rng = np.random.default_rng(11 + head)
    k = 3
    dims = hidden_dims(k, k if head == 0 else tril_size(k))
    th = init_theta(dims, rng)
    X = rng.standard_normal((5, k))
    T = rng.standard_normal((5, k))
    loss, g = kernels.mlp_loss_grad(th, dims, X, T, head)
    assert loss == pytest.approx(_loss(th, dims, X, T, head), rel=1e-12)
    d = rng.standard_normal(th.size)
    h = 1e-6
    fd = (_loss(th + h * d, dims, X, T, head) - _loss(th - h * d, dims, X, T, head)) / (2 * h)
    assert fd == pytest.approx(g @ d, rel=1e-5)


def _spd_data(seed=0, n=60, k=3):
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((k, k))
    M = A @ A.T + np.eye(k)
    X = rng.standard_normal((n, k))
    return X, X @ M.T


def test_training_reduces_loss_and_early_stopping_record():
    X, T = _spd_data()
    dims = hidden_dims(3, tril_size(3))
    cfg = TrainConfig(epochs=400, batch_size=16, early_stop_window=20, rng_seed=2)
    theta, hist = train_network(X / np.abs(X).max(), T / np.abs(T).max(), dims, 1, cfg)
    assert hist.rows[-1][2] < 0.2 * hist.rows[0][2]
    rm = hist.running_means
    assert hist.best_epoch == int(np.argmin(rm))
    assert hist.best_running_mean == min(rm)
    assert [r[0] for r in hist.rows] == list(range(len(hist.rows)))


def test_early_stopping_triggers():
    X, T = _spd_data(n=20)
    cfg = TrainConfig(epochs=5000, batch_size=8, early_stop_window=5,
                      lr_schedule=(0.5,) * 5, rng_seed=0)
    _, hist = train_network(X, T, hidden_dims(3, tril_size(3)), 1, cfg)
    assert hist.stopped_early and len(hist.rows) < 5000
    assert len(hist.rows) - 1 - hist.best_epoch == 5


def test_training_is_bit_deterministic():
    X, T = _spd_data()
    dims = hidden_dims(3, 3)
    cfg = TrainConfig(epochs=50, batch_size=8, rng_seed=9)
    a, ha = train_network(X, T, dims, 0, cfg)
    b, hb = train_network(X, T, dims, 0, cfg)
    assert a.tobytes() == b.tobytes() and ha.rows == hb.rows
    c, _ = train_network(X, T, dims, 0, TrainConfig(epochs=50, batch_size=8, rng_seed=10))
    assert c.tobytes() != a.tobytes()


def test_training_needs_samples():
    with pytest.raises(ValueError, match="5 samples"):
        train_network(np.ones((3, 2)), np.ones((3, 2)), hidden_dims(2, 2), 0, TrainConfig())


def test_fit_spsd_nn_history_csv(tmp_path):
    snap = _synthetic(n=40, N=6, f0=False)
    ps = combine_orthogonalize(compute_pod(snap.F_star, 2), compute_pod(snap.U, 2))
    m, hist = fit_spsd_nn_with_history(snap, ps, TrainConfig(epochs=30, batch_size=10))
    hist.write_csv(tmp_path / "log.csv")
    lines = (tmp_path / "log.csv").read_text().splitlines()
    assert lines[0] == "epoch,train_loss,val_loss,lr" and len(lines) == 31
    assert np.isfinite(training_error(m, snap))


def test_relative_error():
    assert relative_error(np.ones(2), np.ones(2)) == 0.0
    assert relative_error(np.ones(2), np.zeros(2)) == pytest.approx(np.sqrt(2))
