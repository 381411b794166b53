import numpy as np
import pytest

from hybrid_rl.data import (
    DOMAIN_REAL,
    DOMAIN_SIM,
    Dataset,
    ReplayBuffer,
    Transition,
    collect_dataset,
    load_dataset,
    sample_batch,
    save_dataset,
    state_covariance,
)
from hybrid_rl.envs import PendulumConfig


def make_transition(rng, domain=DOMAIN_REAL):
    return Transition(rng.normal(size=3), rng.normal(size=1), float(rng.normal()),
                      rng.normal(size=3), False, domain)


def test_transition_validation():
    with pytest.raises(ValueError):
        Transition(np.zeros(3), np.zeros(1), np.nan, np.zeros(3), False)
    with pytest.raises(ValueError):
        Transition(np.zeros(3), np.zeros(1), 0.0, np.zeros(2), False)
    with pytest.raises(ValueError):
        Transition(np.zeros(3), np.zeros(1), 0.0, np.zeros(3), False, "other")


def test_replay_buffer_fifo_overwrite():
    buf = ReplayBuffer(5, 1, 1)
    for k in range(12):
        buf.push([float(k)], [0.0], 0.0, [0.0], False)
    assert buf.size == 5
    kept = sorted(buf.s[:, 0].tolist())
    assert kept == [7.0, 8.0, 9.0, 10.0, 11.0]


def test_sample_batch_single_element_and_tags():
    rng = np.random.default_rng(0)
    ds = Dataset.from_transitions([make_transition(rng)])
    batch = sample_batch(ds, 16, rng)
    assert len(batch) == 16
    assert np.all(batch.s == ds.s[0])
    assert all(d == DOMAIN_REAL for d in batch.domain)
    buf = ReplayBuffer(4, 3, 1)
    buf.push(np.zeros(3), np.zeros(1), 0.0, np.zeros(3), False, DOMAIN_SIM)
    assert all(d == DOMAIN_SIM for d in sample_batch(buf, 8, rng).domain)


def test_sample_batch_uniformity():
    rng = np.random.default_rng(1)
    t0 = make_transition(rng)
    t1 = make_transition(rng)
    ds = Dataset.from_transitions([t0, t1])
    batch = sample_batch(ds, 100000, rng)
    frac = np.mean(batch.s[:, 0] == t0.s[0])
    assert abs(frac - 0.5) < 0.01


def test_sample_batch_empty_source_rejected():
    with pytest.raises(ValueError):
        sample_batch(ReplayBuffer(4, 3, 1), 2, np.random.default_rng(0))


def test_state_covariance_degenerate():
    trans = [Transition(np.array([1.0, 2.0, 3.0]), np.zeros(1), 0.0,
                        np.zeros(3), False) for _ in range(5)]
    cov = state_covariance(Dataset.from_transitions(trans))
    assert np.allclose(cov.cov, 0.0)
    assert np.allclose(cov.regularized_cov, 1e-6 * np.eye(3))
    assert np.allclose(cov.cholesky @ cov.cholesky.T, cov.regularized_cov)


def test_state_covariance_hand_case():
    trans = [Transition(np.array([0.0, 0.0, 0.0]), np.zeros(1), 0.0, np.zeros(3), False),
             Transition(np.array([2.0, 0.0, 0.0]), np.zeros(1), 0.0, np.zeros(3), False)]
    cov = state_covariance(Dataset.from_transitions(trans))
    assert cov.cov[0, 0] == pytest.approx(2.0)  # unbiased: ((1)^2+(1)^2)/(2-1)
    assert cov.cov[1, 1] == pytest.approx(0.0)
    assert np.allclose(cov.mean, [1.0, 0.0, 0.0])


def test_state_covariance_monte_carlo():
    rng = np.random.default_rng(2)
    trans = [Transition(rng.standard_normal(3), np.zeros(1), 0.0, np.zeros(3), False)
             for _ in range(10000)]
    cov = state_covariance(Dataset.from_transitions(trans))
    assert np.max(np.abs(np.diag(cov.cov) - 1.0)) < 0.05


def test_collect_dataset_contract_and_determinism():
    cfg = PendulumConfig(max_steps=50)
    zero_policy = lambda obs: np.zeros(1)
    d1 = collect_dataset(cfg, zero_policy, 1000, 0.0, seed=4)
    assert len(d1) == 1000
    assert all(t.domain == DOMAIN_REAL for t in d1)
    assert all(np.all(np.isfinite(t.s)) and np.isfinite(t.r) for t in d1)
    assert not any(t.done for t in d1)  # time-limit only, never stored as done
    d2 = collect_dataset(cfg, zero_policy, 1000, 0.0, seed=4)
    for a, b in zip(d1, d2):
        assert np.array_equal(a.s, b.s) and np.array_equal(a.a, b.a) and a.r == b.r


def test_collect_dataset_noise_changes_actions():
    cfg = PendulumConfig(max_steps=50)
    d = collect_dataset(cfg, lambda obs: np.zeros(1), 200, 0.1, seed=5)
    actions = np.array([t.a[0] for t in d])
    assert np.std(actions) > 0.01
    assert np.max(np.abs(actions)) <= cfg.max_torque


def test_dataset_file_round_trip_bit_exact(tmp_path):
    rng = np.random.default_rng(6)
    trans = [make_transition(rng) for _ in range(50)]
    trans[0].s[0] = 1.0 / 3.0
    trans[1].r = -1e-17
    ds = Dataset.from_transitions(trans)
    path = tmp_path / "data.csv"
    save_dataset(ds, path)
    back = load_dataset(path)
    assert back.size == ds.size
    for arr_a, arr_b in ((ds.s, back.s), (ds.a, back.a), (ds.s_next, back.s_next)):
        assert np.array_equal(arr_a[:ds.size], arr_b[:back.size])
    assert np.array_equal(ds.r[:ds.size], back.r[:back.size])
    assert np.array_equal(ds.done[:ds.size], back.done[:back.size])
    # write-out again must be byte-identical
    path2 = tmp_path / "data2.csv"
    save_dataset(back, path2)
    assert path.read_bytes() == path2.read_bytes()


def test_load_dataset_rejects_malformed(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("3,1\n1,2,3\n")
    with pytest.raises(ValueError):
        load_dataset(p)
    p2 = tmp_path / "empty.csv"
    p2.write_text("")
    with pytest.raises(ValueError):
        load_dataset(p2)
