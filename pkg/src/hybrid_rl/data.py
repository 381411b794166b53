"""Transition storage: offline datasets, replay buffer, batches, covariance.

Both the fixed dataset and the ring buffer store transitions as preallocated
float64 arrays plus a per-row domain tag (real | sim). Dataset files are plain
text with one transition per line so that round-trips are bit-exact.
"""

from dataclasses import dataclass

import numpy as np

from .util import fmt_float

DOMAIN_REAL = "real"
DOMAIN_SIM = "sim"
_DOMAIN_DTYPE = "<U4"


@dataclass
class Transition:
    s: np.ndarray
    a: np.ndarray
    r: float
    s_next: np.ndarray
    done: bool
    domain: str = DOMAIN_REAL

    def __post_init__(self):
        self.s = np.asarray(self.s, dtype=np.float64)
        self.a = np.asarray(self.a, dtype=np.float64)
        self.s_next = np.asarray(self.s_next, dtype=np.float64)
        if self.s.shape != self.s_next.shape:
            raise ValueError("s and s_next must have identical dimension")
        if not (np.all(np.isfinite(self.s)) and np.all(np.isfinite(self.a))
                and np.all(np.isfinite(self.s_next)) and np.isfinite(self.r)):
            raise ValueError("transition entries must be finite")
        if self.domain not in (DOMAIN_REAL, DOMAIN_SIM):
            raise ValueError(f"unknown domain tag {self.domain!r}")


@dataclass
class Batch:
    s: np.ndarray        # (n, s_dim)
    a: np.ndarray        # (n, a_dim)
    r: np.ndarray        # (n,)
    s_next: np.ndarray   # (n, s_dim)
    done: np.ndarray     # (n,) float 0/1
    domain: np.ndarray   # (n,) '<U4'

    def __len__(self):
        return self.s.shape[0]


class TransitionStore:
    """Fixed-capacity struct-of-arrays store; base for Dataset and ReplayBuffer."""

    def __init__(self, capacity: int, s_dim: int, a_dim: int):
        if capacity < 1 or s_dim < 1 or a_dim < 1:
            raise ValueError("capacity and dims must be positive")
        self.capacity = int(capacity)
        self.s = np.zeros((capacity, s_dim))
        self.a = np.zeros((capacity, a_dim))
        self.r = np.zeros(capacity)
        self.s_next = np.zeros((capacity, s_dim))
        self.done = np.zeros(capacity)
        self.domain = np.full(capacity, DOMAIN_REAL, dtype=_DOMAIN_DTYPE)
        self.size = 0

    @property
    def s_dim(self):
        return self.s.shape[1]

    @property
    def a_dim(self):
        return self.a.shape[1]

    def _write(self, i, s, a, r, s_next, done, domain):
        self.s[i] = s
        self.a[i] = a
        self.r[i] = r
        self.s_next[i] = s_next
        self.done[i] = 1.0 if done else 0.0
        self.domain[i] = domain

    def row(self, i: int) -> Transition:
        if not 0 <= i < self.size:
            raise ValueError(f"row {i} out of range (size {self.size})")
        return Transition(self.s[i].copy(), self.a[i].copy(), float(self.r[i]),
                          self.s_next[i].copy(), bool(self.done[i]),
                          str(self.domain[i]))


class Dataset(TransitionStore):
    """Append-once transition set (the offline data D)."""

    def append(self, t: Transition):
        if self.size >= self.capacity:
            raise ValueError("dataset is full")
        self._write(self.size, t.s, t.a, t.r, t.s_next, t.done, t.domain)
        self.size += 1

    @classmethod
    def from_transitions(cls, transitions) -> "Dataset":
        if not transitions:
            raise ValueError("empty transition list")
        first = transitions[0]
        ds = cls(len(transitions), first.s.shape[0], first.a.shape[0])
        for t in transitions:
            ds.append(t)
        return ds


class ReplayBuffer(TransitionStore):
    """FIFO ring buffer (the simulated replay B)."""

    def __init__(self, capacity, s_dim, a_dim):
        super().__init__(capacity, s_dim, a_dim)
        self.cursor = 0

    def push(self, s, a, r, s_next, done, domain=DOMAIN_SIM):
        self._write(self.cursor, s, a, r, s_next, done, domain)
        self.cursor = (self.cursor + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)


def sample_batch(source: TransitionStore, batch_size: int, rng) -> Batch:
    """Uniform sampling with replacement; preserves domain tags."""
    if source.size == 0:
        raise ValueError("cannot sample from an empty source")
    idx = rng.integers(0, source.size, size=batch_size)
    return Batch(source.s[idx].copy(), source.a[idx].copy(), source.r[idx].copy(),
                 source.s_next[idx].copy(), source.done[idx].copy(),
                 source.domain[idx].copy())


@dataclass
class StateCovariance:
    mean: np.ndarray
    cov: np.ndarray
    regularized_cov: np.ndarray
    cholesky: np.ndarray

    @property
    def dim(self):
        return self.mean.shape[0]


COV_RIDGE = 1e-6


def state_covariance(dataset: TransitionStore) -> StateCovariance:
    """Sample mean and unbiased covariance of the dataset states, ridge-regularized.

    The pendulum's (cos, sin) components live on a circle, so the raw
    covariance can be near-singular; the ridge keeps the Cholesky factor well
    defined for the Gaussian proposal used by the gap estimator.
    """
    if dataset.size == 0:
        raise ValueError("empty dataset")
    states = dataset.s[:dataset.size]
    mean = states.mean(axis=0)
    centered = states - mean
    n = states.shape[0]
    if n > 1:
        cov = centered.T @ centered / (n - 1)
    else:
        cov = np.zeros((states.shape[1], states.shape[1]))
    reg = cov + COV_RIDGE * np.eye(states.shape[1])
    chol = np.linalg.cholesky(reg)
    return StateCovariance(mean, cov, reg, chol)


def collect_dataset(env_cfg, policy, n_transitions: int,
                    exploration_noise_std: float, seed: int):
    """Roll episodes in the given env config; returns a list of Transitions.

    `policy` maps an observation to an action; Gaussian exploration noise is
    added on top. All transitions are tagged real — this is the offline data
    generator. Time-limit resets are not recorded as terminal.
    """
    from .envs import PendulumEnv

    if n_transitions < 1:
        raise ValueError("n_transitions must be positive")
    rng = np.random.default_rng(seed)
    env = PendulumEnv(env_cfg, rng)
    out = []
    obs = env.reset()
    while len(out) < n_transitions:
        a = np.asarray(policy(obs), dtype=np.float64).reshape(-1)
        if exploration_noise_std > 0:
            a = a + exploration_noise_std * rng.standard_normal(a.shape)
        a = np.clip(a, -env_cfg.max_torque, env_cfg.max_torque)
        obs_next, r, done = env.step(a)
        out.append(Transition(obs, a, r, obs_next, False, DOMAIN_REAL))
        obs = env.reset() if done else obs_next
    return out


def save_dataset(dataset: TransitionStore, path):
    """Header line "s_dim,a_dim", then one comma-separated transition per line."""
    lines = [f"{dataset.s_dim},{dataset.a_dim}"]
    for i in range(dataset.size):
        fields = ([fmt_float(v) for v in dataset.s[i]]
                  + [fmt_float(v) for v in dataset.a[i]]
                  + [fmt_float(dataset.r[i])]
                  + [fmt_float(v) for v in dataset.s_next[i]]
                  + [str(int(dataset.done[i]))])
        lines.append(",".join(fields))
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")


def load_dataset(path) -> Dataset:
    with open(path) as f:
        lines = f.read().splitlines()
    if not lines:
        raise ValueError(f"{path}: empty dataset file")
    try:
        s_dim, a_dim = (int(tok) for tok in lines[0].split(","))
    except ValueError:
        raise ValueError(f"{path}: malformed header {lines[0]!r}") from None
    rows = [ln for ln in lines[1:] if ln]
    if not rows:
        raise ValueError(f"{path}: no transitions")
    ds = Dataset(len(rows), s_dim, a_dim)
    width = 2 * s_dim + a_dim + 2
    for ln in rows:
        toks = ln.split(",")
        if len(toks) != width:
            raise ValueError(f"{path}: expected {width} fields, got {len(toks)}")
        vals = [float(t) for t in toks[:-1]]
        ds.append(Transition(
            np.array(vals[:s_dim]),
            np.array(vals[s_dim:s_dim + a_dim]),
            vals[s_dim + a_dim],
            np.array(vals[s_dim + a_dim + 1:2 * s_dim + a_dim + 1]),
            toks[-1] == "1",
            DOMAIN_REAL,
        ))
    return ds
