"""Pendulum swing-up with controllable real/sim dynamics gaps, plus tabular MDP pairs.

The "real" environment is a damped torque-limited pendulum integrated with
semi-implicit Euler. Sim variants perturb one dynamics parameter at a time:
doubled gravity, 0.3x damping, or additive torque noise. A fourth variant
scales the torque-noise std with |theta_dot| for gap-diagnostic experiments.
"""

import math
from dataclasses import dataclass, replace

import numpy as np

OBS_DIM = 3
ACTION_DIM = 1
MAX_SPEED = 8.0

GAP_KINDS = ("gravity", "friction", "joint_noise")


@dataclass(frozen=True)
class PendulumConfig:
    gravity: float = 10.0
    mass: float = 1.0
    length: float = 1.0
    damping: float = 0.1
    max_torque: float = 2.0
    dt: float = 0.05
    max_steps: int = 200
    action_noise_std: float = 0.0
    velocity_noise_scale: float = 0.0
    # keeps rewards positive: theta^2 + 0.1*thdot^2 + 0.001*tau^2 < 17
    reward_shift: float = 17.0

    def __post_init__(self):
        if min(self.gravity, self.mass, self.length, self.dt) <= 0:
            raise ValueError("gravity, mass, length, dt must be positive")
        if self.damping < 0 or self.max_torque <= 0:
            raise ValueError("damping must be >= 0 and max_torque > 0")
        if self.action_noise_std < 0 or self.velocity_noise_scale < 0:
            raise ValueError("noise parameters must be >= 0")
        if self.max_steps < 1:
            raise ValueError("max_steps must be >= 1")


@dataclass
class PendulumState:
    theta: float
    theta_dot: float

    def observation(self) -> np.ndarray:
        return np.array([math.cos(self.theta), math.sin(self.theta),
                         self.theta_dot])


def wrap_angle(theta: float) -> float:
    """Wrap to (-pi, pi]; the branch point maps to +pi."""
    return math.pi - (math.pi - theta) % (2.0 * math.pi)


def pendulum_step(state: PendulumState, action, cfg: PendulumConfig, rng=None):
    """One semi-implicit Euler step; returns (next_state, reward).

    The reward uses the commanded (pre-noise, clipped) torque and the
    post-update state. Episode termination is time-limit-only and handled by
    the episode wrapper, not here.
    """
    a = float(np.asarray(action).reshape(-1)[0])
    if not math.isfinite(a):
        raise ValueError(f"non-finite action {a!r}")
    tau_cmd = min(max(a, -cfg.max_torque), cfg.max_torque)
    noise_std = cfg.action_noise_std + cfg.velocity_noise_scale * abs(state.theta_dot)
    tau_eff = tau_cmd
    if noise_std > 0:
        if rng is None:
            raise ValueError("stochastic config requires an rng")
        # disturbance torque enters after command clipping and is external to
        # the motor, so it is not bounded by the actuation limit
        tau_eff = tau_cmd + noise_std * rng.standard_normal()
    g, m, length = cfg.gravity, cfg.mass, cfg.length
    theta_ddot = (1.5 * g / length * math.sin(state.theta)
                  + 3.0 / (m * length * length) * tau_eff
                  - cfg.damping * state.theta_dot)
    theta_dot = state.theta_dot + theta_ddot * cfg.dt
    theta_dot = min(max(theta_dot, -MAX_SPEED), MAX_SPEED)
    theta = wrap_angle(state.theta + theta_dot * cfg.dt)
    reward = cfg.reward_shift - (theta * theta + 0.1 * theta_dot * theta_dot
                                 + 0.001 * tau_cmd * tau_cmd)
    return PendulumState(theta, theta_dot), reward


def pendulum_energy(state: PendulumState, cfg: PendulumConfig) -> float:
    """Mechanical energy of the rod (theta = 0 is upright)."""
    inertia = cfg.mass * cfg.length * cfg.length / 3.0
    kinetic = 0.5 * inertia * state.theta_dot * state.theta_dot
    potential = cfg.mass * cfg.gravity * (cfg.length / 2.0) * math.cos(state.theta)
    return kinetic + potential


def make_gap_variant(base: PendulumConfig, kind: str) -> PendulumConfig:
    """Perturb exactly one dynamics parameter of the real config."""
    if kind == "gravity":
        return replace(base, gravity=base.gravity * 4.0)
    if kind == "friction":
        return replace(base, damping=base.damping * 0.3)
    if kind == "joint_noise":
        return replace(base, action_noise_std=3.0 * base.max_torque)
    raise ValueError(f"unknown gap kind {kind!r}")


def velocity_noise_variant(base: PendulumConfig, scale: float = 1.0) -> PendulumConfig:
    """Sim whose torque-noise std grows with |theta_dot| (diagnostic env)."""
    return replace(base, velocity_noise_scale=scale)


class PendulumEnv:
    """Episode wrapper: reset distribution, step counting, time-limit done."""

    obs_dim = OBS_DIM
    action_dim = ACTION_DIM

    def __init__(self, cfg: PendulumConfig, rng: np.random.Generator):
        self.cfg = cfg
        self.rng = rng
        self.state = None
        self.t = 0

    def reset(self) -> np.ndarray:
        theta = self.rng.uniform(-math.pi, math.pi)
        theta_dot = self.rng.uniform(-1.0, 1.0)
        self.state = PendulumState(theta, theta_dot)
        self.t = 0
        return self.state.observation()

    def step(self, action):
        if self.state is None:
            raise ValueError("step called before reset")
        self.state, reward = pendulum_step(self.state, action, self.cfg, self.rng)
        self.t += 1
        done = self.t >= self.cfg.max_steps
        return self.state.observation(), reward, done


@dataclass
class TabularMdpPair:
    n_states: int
    n_actions: int
    p_real: np.ndarray      # (S, A, S)
    p_sim: np.ndarray       # (S, A, S)
    reward: np.ndarray      # (S, A), entries in [0, r_max]
    gamma: float
    initial_distribution: np.ndarray   # (S,)
    r_max: float = 1.0

    def __post_init__(self):
        S, A = self.n_states, self.n_actions
        for name, p in (("p_real", self.p_real), ("p_sim", self.p_sim)):
            if p.shape != (S, A, S):
                raise ValueError(f"{name} shape {p.shape} != {(S, A, S)}")
            if np.any(p < 0) or np.max(np.abs(p.sum(axis=2) - 1.0)) > 1e-12:
                raise ValueError(f"{name} rows must be distributions")
        if self.reward.shape != (S, A):
            raise ValueError("reward table shape mismatch")
        if np.any(self.reward < 0) or np.any(self.reward > self.r_max):
            raise ValueError("rewards must lie in [0, r_max]")
        if not 0 < self.gamma < 1:
            raise ValueError("gamma must be in (0, 1)")
        rho = self.initial_distribution
        if rho.shape != (S,) or np.any(rho < 0) or abs(rho.sum() - 1.0) > 1e-12:
            raise ValueError("initial_distribution must be a distribution")


def _normalize_rows(p: np.ndarray) -> np.ndarray:
    return p / p.sum(axis=-1, keepdims=True)


def random_tabular_pair(seed, n_states, n_actions, gap_scale,
                        gamma=0.95, r_max=1.0) -> TabularMdpPair:
    """Real dynamics from Dirichlet(1,..,1); sim = mix with an independent draw."""
    if n_states < 2 or n_actions < 2:
        raise ValueError("need n_states >= 2 and n_actions >= 2")
    if not 0.0 <= gap_scale <= 1.0:
        raise ValueError("gap_scale must lie in [0, 1]")
    rng = np.random.default_rng(seed)
    alpha = np.ones(n_states)
    p_real = rng.dirichlet(alpha, size=(n_states, n_actions))
    q = rng.dirichlet(alpha, size=(n_states, n_actions))
    if gap_scale == 0.0:
        p_sim = p_real.copy()
    else:
        p_sim = _normalize_rows((1.0 - gap_scale) * p_real + gap_scale * q)
    reward = rng.uniform(0.0, r_max, size=(n_states, n_actions))
    rho = rng.dirichlet(np.ones(n_states))
    return TabularMdpPair(n_states, n_actions, p_real, p_sim, reward,
                          gamma, rho, r_max)


def tabular_sample(p: np.ndarray, reward: np.ndarray, s: int, a: int, rng):
    """Draw (s', r) from one (s, a) row of an explicit MDP."""
    S, A = reward.shape
    if not (0 <= s < S and 0 <= a < A):
        raise ValueError(f"state/action ({s},{a}) out of range ({S},{A})")
    s_next = int(rng.choice(S, p=p[s, a]))
    return s_next, float(reward[s, a])
