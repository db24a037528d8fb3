import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from magrnn import sim
from magrnn.kernels import loops, vectorized

P = sim.DEFAULT_PARAMS


def test_params_validation():
    with pytest.raises(sim.ParameterError):
        P.replace(tau=0.0)
    with pytest.raises(sim.ParameterError):
        P.replace(n_steps=1)
    with pytest.raises(sim.ParameterError):
        P.replace(gamma_b=0.0)
    with pytest.raises(sim.ParameterError):
        P.replace(sigma_b=-1.0)
    # gamma_b * tau >= 1 would make the Euler step unstable
    with pytest.raises(sim.ParameterError):
        P.replace(gamma_b=100.0, tau=0.01)
    assert P.duration == pytest.approx(1.0)
    assert P.stationary_variance == 1.0
    assert sim.PhysicsParams.from_dict({"kappa2": 18.0}).kappa == pytest.approx(math.sqrt(18.0))


def test_noiseless_decay_is_geometric():
    p = P.replace(sigma_b=0.0)
    path = sim.sample_ou_path(p, np.random.default_rng(0), b0=1.0)
    np.testing.assert_allclose(path, 0.99 ** np.arange(p.n_steps), rtol=1e-13, atol=0)


def test_fixed_increments_match_scalar_recurrence():
    p = P.replace(n_steps=3)
    dw = [0.1, -0.05]
    b = [0.0]
    for w in dw:
        b.append(b[-1] - 1.0 * b[-1] * 0.01 + math.sqrt(2.0) * w)
    got = sim.ou_path_from_increments(p, 0.0, dw)
    np.testing.assert_allclose(got, b, rtol=0, atol=1e-12)


def test_ou_stationary_moments():
    # 10^5 paths, checked at a few time indices
    ds = sim.generate_dataset(P, 100_000, seed=5)
    B = ds.fields
    se_var = math.sqrt(2.0 / len(B))  # SE of a unit-variance sample variance
    for k in (0, 50, 100):
        assert abs(B[:, k].mean()) < 3 * math.sqrt(1.0 / len(B))
        assert abs(B[:, k].var() - 1.0) < 3 * se_var
    for lag_ms in (0.1, 0.5):
        lag = int(round(lag_ms / P.tau))
        rho = np.mean(B[:, 20] * B[:, 20 + lag]) / np.sqrt(np.var(B[:, 20]) * np.var(B[:, 20 + lag]))
        assert abs(rho - math.exp(-lag_ms)) < 3 * (1 - math.exp(-2 * lag_ms)) / math.sqrt(len(B)) + 2e-3


def test_decoupled_signal_is_shot_noise():
    p = P.replace(mu=0.0)
    rng = np.random.default_rng(3)
    x = np.concatenate([sim.simulate_record(p, rng, p0=0.0).signal for _ in range(1000)])
    assert x.size > 100_000 - 1
    se = math.sqrt(2 * 0.25 / x.size)
    assert abs(x.var() - 0.5) < 3 * se


def test_constant_field_gives_linear_ramp():
    p = P.replace(sigma_b=0.0)
    rec = sim.simulate_record(p, np.random.default_rng(1), p0=0.0, b0=1.0, shot_noise=False)
    k = np.arange(p.n_steps)
    gain = p.kappa * math.sqrt(p.tau)
    # field decays as 0.99^k, so p_k = -mu*tau*sum_{j<k} 0.99^j
    expected = gain * (-p.mu * p.tau) * (1 - 0.99 ** k) / 0.01
    np.testing.assert_allclose(rec.signal, expected, rtol=1e-12, atol=1e-12)
    assert rec.field[0] == 1.0


def test_signal_is_deterministic_map_of_path():
    rng = np.random.default_rng(9)
    path = rng.standard_normal(P.n_steps)
    x = sim.record_from_path(P, path, 0.3)
    p = 0.3
    gain = math.sqrt(18.0) * math.sqrt(0.01)
    ref = []
    for b in path:
        ref.append(gain * p)
        p -= 90.0 * 0.01 * b
    np.testing.assert_allclose(x, ref, rtol=0, atol=1e-12)


def test_simulate_record_overrides_share_draws():
    a = sim.simulate_record(P, sim.record_rng(4, 0))
    b = sim.simulate_record(P, sim.record_rng(4, 0), shot_noise=True, p0=None)
    assert np.array_equal(a.signal, b.signal)
    d = sim.generate_dataset(P, 1, seed=4)
    assert np.array_equal(d.signals[0], a.signal)
    assert np.array_equal(d.fields[0], a.field)


def test_generation_deterministic_and_worker_independent():
    a = sim.generate_dataset(P, 10, seed=7)
    b = sim.generate_dataset(P, 10, seed=7)
    c = sim.generate_dataset(P, 10, seed=7, workers=8, block=1)
    assert a == b == c
    assert a.signals.tobytes() == c.signals.tobytes()
    assert not (a == sim.generate_dataset(P, 10, seed=8))


def test_record_i_depends_only_on_seed_and_index():
    big = sim.generate_dataset(P, 12, seed=3)
    small = sim.generate_dataset(P, 5, seed=3)
    assert np.array_equal(big.signals[:5], small.signals)


def test_generate_rejects_zero_count():
    with pytest.raises(ValueError):
        sim.generate_dataset(P, 0, seed=1)


def test_round_trip(tmp_path):
    d = sim.generate_dataset(P, 3, seed=11)
    path = tmp_path / "d.mgsq"
    sim.save_dataset(d, path)
    back = sim.load_dataset(path)
    assert back == d
    raw = path.read_bytes()
    assert raw[:4] == b"MGSQ"
    assert len(raw) == 72 + 3 * 2 * 101 * 8


def test_corrupted_magic(tmp_path):
    path = tmp_path / "d.mgsq"
    sim.save_dataset(sim.generate_dataset(P, 2, seed=1), path)
    raw = bytearray(path.read_bytes())
    raw[:4] = b"XXXX"
    path.write_bytes(bytes(raw))
    with pytest.raises(sim.DatasetFormatError):
        sim.load_dataset(path)


def test_bad_version(tmp_path):
    path = tmp_path / "d.mgsq"
    sim.save_dataset(sim.generate_dataset(P, 2, seed=1), path)
    raw = bytearray(path.read_bytes())
    raw[4] = 9
    path.write_bytes(bytes(raw))
    with pytest.raises(sim.DatasetFormatError):
        sim.load_dataset(path)


def test_truncated_payload(tmp_path):
    path = tmp_path / "d.mgsq"
    sim.save_dataset(sim.generate_dataset(P, 2, seed=1), path)
    raw = bytearray(path.read_bytes())
    raw[8] = 5  # header count 5, payload holds 2
    path.write_bytes(bytes(raw))
    with pytest.raises(sim.DatasetTruncatedError):
        sim.load_dataset(path)


def test_missing_file(tmp_path):
    with pytest.raises(OSError):
        sim.load_dataset(tmp_path / "nope.mgsq")


def test_csv_export(tmp_path):
    d = sim.generate_dataset(P, 1, seed=2)
    out = tmp_path / "r.csv"
    sim.export_record_csv(P, d[0], out)
    lines = out.read_text().splitlines()
    assert lines[0] == "t,signal,field"
    assert len(lines) == P.n_steps + 1
    assert float(lines[-1].split(",")[2]) == d.fields[0, -1]


@settings(max_examples=30, deadline=None)
@given(
    st.floats(0.1, 5.0), st.floats(0.0, 5.0), st.floats(-3, 3),
    st.lists(st.floats(-1, 1), min_size=1, max_size=20),
)
def test_backends_agree_on_ou(gamma, sigma, b0, incs):
    dw = np.array([incs])
    a = loops.ou_paths(np.array([b0]), dw, gamma * 0.01, math.sqrt(sigma))
    b = vectorized.ou_paths(np.array([b0]), dw, gamma * 0.01, math.sqrt(sigma))
    assert np.array_equal(a, b)


def test_backends_agree_on_generation():
    raw = np.random.default_rng(0).standard_normal((4, 2 * 101 + 1))
    f = loops.ou_paths(raw[:, 1], raw[:, 2:102].copy(), 0.01, math.sqrt(2.0))
    g = vectorized.ou_paths(raw[:, 1], raw[:, 2:102].copy(), 0.01, math.sqrt(2.0))
    assert np.array_equal(f, g)
    s1 = loops.measure(f, raw[:, 0].copy(), raw[:, 102:].copy(), 0.42, 0.9)
    s2 = vectorized.measure(f, raw[:, 0].copy(), raw[:, 102:].copy(), 0.42, 0.9)
    assert np.array_equal(s1, s2)
