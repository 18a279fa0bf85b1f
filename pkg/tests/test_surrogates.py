import json
import struct

import numpy as np
import pytest
from hypothesis import given, strategies as st

from subsurr.pod import compute_pod, combine_orthogonalize
from subsurr.surrogates import (FORMS, ChecksumError, LlsModel, LowRankStiffness, ModelFileError,
                                NnModel, SpsdLlsModel, SpsdNnModel, UnsupportedVersionError,
                                deserialize, evaluate, hidden_dims, init_theta, load_model,
                                save_model, serialize, stiffness, tril_size, unpack_tril)

N = 9


def _bases(seed=0, k=2):
    rng = np.random.default_rng(seed)
    pf = compute_pod(rng.standard_normal((N, 6)), k)
    pu = compute_pod(rng.standard_normal((N, 6)), k)
    return pf, pu, combine_orthogonalize(pf, pu)


def make(form, seed=0, k=2):
    rng = np.random.default_rng(seed)
    pf, pu, ps = _bases(seed, k)
    f0 = rng.standard_normal(N)
    order = [(i // 3, i % 3) for i in range(N)]
    ks = ps.K
    if form == "lls":
        return LlsModel(pf, pu, rng.standard_normal((k, k)), f0, order)
    if form == "spsd-lls":
        return SpsdLlsModel(ps, np.tril(rng.standard_normal((ks, ks))), f0, order)
    if form == "nn":
        dims = hidden_dims(k, k)
        return NnModel(pf, pu, init_theta(dims, rng), dims, f0, 2.0, 3.0, order)
    dims = hidden_dims(ks, tril_size(ks))
    return SpsdNnModel(ps, init_theta(dims, rng), dims, f0, 2.0, 3.0, order)


def test_tril_packing_order():
    L = unpack_tril(np.arange(1.0, 7.0), 3)
    np.testing.assert_array_equal(L, [[1, 0, 0], [2, 3, 0], [4, 5, 6]])


def test_hidden_dims():
    assert hidden_dims(4, 10) == (4, 4, 4, 4, 10)


@pytest.mark.parametrize("form", FORMS)
def test_round_trip_bit_identical(form, tmp_path):
    m = make(form)
    save_model(tmp_path / "m.bin", m)
    back = load_model(tmp_path / "m.bin")
    assert back.form == form
    u = np.random.default_rng(5).standard_normal((4, N))
    assert back.evaluate(u).tobytes() == m.evaluate(u).tobytes()
    assert serialize(back) == serialize(m)


@pytest.mark.parametrize("form", FORMS)
def test_truncated_file_rejected(form):
    data = serialize(make(form))
    for cut in (len(data) - 1, len(data) // 2, 20):
        with pytest.raises(ModelFileError):
            deserialize(data[:cut])
    flipped = bytearray(data)
    flipped[-40] ^= 0xFF
    with pytest.raises(ChecksumError):
        deserialize(bytes(flipped))


def test_version_zero_rejected():
    data = serialize(make("lls"))
    (hlen,) = struct.unpack("<Q", data[8:16])
    head = json.loads(data[16:16 + hlen])
    head["version"] = 0
    hb = json.dumps(head, sort_keys=True).encode()
    forged = data[:8] + struct.pack("<Q", len(hb)) + hb + data[16 + hlen:]
    with pytest.raises(UnsupportedVersionError, match="version 0"):
        deserialize(forged)


def test_bad_magic():
    with pytest.raises(ModelFileError, match="magic"):
        deserialize(b"NOTAMODEL" * 10)


@pytest.mark.parametrize("form", FORMS)
def test_input_validation(form):
    m = make(form)
    with pytest.raises(ValueError, match="shape"):
        m.evaluate(np.zeros(N + 1))
    with pytest.raises(ValueError, match="non-finite"):
        m.evaluate(np.full(N, np.nan))
    assert m.evaluate(np.zeros((3, N))).shape == (3, N)


@pytest.mark.parametrize("form", ["spsd-lls", "spsd-nn"])
@given(seed=st.integers(0, 10_000))
def test_spsd_psd_and_column_space(form, seed):
    m = make(form, seed % 7)
    u = np.random.default_rng(seed).standard_normal(N) * 10.0 ** (seed % 5 - 2)
    K = stiffness(m, u)
    assert isinstance(K, LowRankStiffness)
    assert u @ (K @ u) >= -1e-10 * (u @ u)
    # secant property: evaluate(u) = K(u) u + f0
    np.testing.assert_allclose(evaluate(m, u), K @ u + m.f0, rtol=1e-10,
                               atol=1e-12 * np.abs(m.f0).max())
    r = m.evaluate(u) - m.f0
    P = m.phi_star.columns
    assert np.linalg.norm(r - P @ (P.T @ r)) <= 1e-10 * max(np.linalg.norm(r), 1e-300)


@pytest.mark.parametrize("form", ["lls", "nn"])
@given(seed=st.integers(0, 10_000))
def test_direct_column_space(form, seed):
    m = make(form, seed % 7)
    u = np.random.default_rng(seed).standard_normal(N)
    r = m.evaluate(u) - m.f0
    P = m.phi_f.columns
    assert np.linalg.norm(r - P @ (P.T @ r)) <= 1e-10 * max(np.linalg.norm(r), 1e-300)


def test_lls_fd_stiffness_matches_operator():
    m = make("lls")
    J = stiffness(m, np.random.default_rng(0).standard_normal(N))
    np.testing.assert_allclose(J, m.linear_operator(), atol=1e-7 * np.abs(J).max())


def test_spsd_lls_requires_lower_triangle():
    _, _, ps = _bases()
    with pytest.raises(ValueError, match="lower"):
        SpsdLlsModel(ps, np.ones((ps.K, ps.K)), np.zeros(N), [])


def _pattern(m, x):
    h = x / m.in_scale
    pats = []
    for W, b in m.layers[:-1]:
        z = W @ h + b
        pats.append(z > 0)
        h = np.maximum(z, 0)
    return np.concatenate(pats)


def test_spsd_nn_factor_affine_within_activation_region():
    m = make("spsd-nn", 3)
    rng = np.random.default_rng(0)
    x1 = rng.standard_normal(m.phi_star.K)
    x2 = x1 + 1e-7 * rng.standard_normal(x1.size)
    assert np.array_equal(_pattern(m, x1), _pattern(m, x2))
    L1, L2, Lm = m.reduced_factor(x1), m.reduced_factor(x2), m.reduced_factor(0.5 * (x1 + x2))
    np.testing.assert_allclose(L1 + L2, 2 * Lm, rtol=0, atol=1e-13 * np.abs(L1).max())
    np.testing.assert_allclose(L1, L2, atol=1e-5 * np.abs(L1).max())


def test_low_rank_stiffness_restrict():
    F = np.arange(6.0).reshape(3, 2)
    K = LowRankStiffness(F)
    np.testing.assert_allclose(K.dense(), F @ F.T)
    np.testing.assert_allclose(K.restrict([0, 2]).dense(), (F @ F.T)[np.ix_([0, 2], [0, 2])])
