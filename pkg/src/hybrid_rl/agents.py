"""Actor-critic agents: SAC backbone and the hybrid offline/online variants.

One training-step contract covers six algorithms: sac (online only), cql
(offline only), darc / darc_plus (reward-corrected sim training), and h2o /
h2o_v (dynamics-gap-weighted value regularization with importance-weighted
Bellman errors). All critic losses are pure functions of the critic
parameters given a frozen context (targets, omega, importance weights), which
keeps them finite-difference checkable; the training step wires them to Adam.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .data import sample_batch
from .gap import (
    batch_omega,
    gap_measure_u,
    gap_measure_u_reverse,
    importance_weight,
    log_dynamics_ratio,
    train_discriminators,
)
from .nn import (
    AdamState,
    MlpParams,
    adam_step,
    add_grads,
    blend_params,
    init_adam,
    init_mlp,
    mlp_backward,
    mlp_forward,
    scale_grads,
)

LOG_STD_MIN = -20.0
LOG_STD_MAX = 2.0
LOG_2PI = math.log(2.0 * math.pi)

ALGORITHMS = ("sac", "cql", "darc", "darc_plus", "h2o", "h2o_v")


class TrainingError(RuntimeError):
    """Raised when a training step produces a non-finite loss."""


@dataclass
class VariantConfig:
    algorithm: str = "h2o"
    beta: float = 0.01
    alpha_cql: float = 2.0
    adaptive_omega: bool = True
    use_dynamics_ratio: bool = True
    use_regularization: bool = True
    delta_r_clip: float = 10.0
    n_cql_actions: int = 10
    kl_samples: int = 10
    real_fraction: float = 0.5
    batch_size: int = 256
    real_batch_size: int = 0      # 0 -> same as batch_size
    disc_update_every: int = 1
    reverse_kl: bool = False

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"unknown algorithm {self.algorithm!r}")
        if not 0.0 <= self.real_fraction <= 1.0:
            raise ValueError("real_fraction must lie in [0, 1]")
        if self.batch_size < 1 or self.n_cql_actions < 1 or self.kl_samples < 1:
            raise ValueError("batch_size, n_cql_actions, kl_samples must be >= 1")
        if self.real_batch_size < 0:
            raise ValueError("real_batch_size must be >= 0")
        if self.disc_update_every < 1:
            raise ValueError("disc_update_every must be >= 1")

    @property
    def effective_real_batch(self) -> int:
        return self.real_batch_size or self.batch_size

    @property
    def uses_sim_env(self) -> bool:
        return self.algorithm != "cql"

    @property
    def uses_dataset(self) -> bool:
        return self.algorithm != "sac"

    @property
    def uses_discriminators(self) -> bool:
        return self.algorithm in ("darc", "darc_plus", "h2o", "h2o_v")


@dataclass
class AgentState:
    actor: MlpParams
    critic1: MlpParams
    critic2: MlpParams
    target1: MlpParams
    target2: MlpParams
    adam_actor: AdamState
    adam_critic1: AdamState
    adam_critic2: AdamState
    obs_dim: int
    action_dim: int
    max_action: float
    log_temperature: float = 0.0
    gamma: float = 0.99
    tau: float = 5e-3
    target_update_period: int = 1
    temp_lr: float = 3e-4
    temp_m: float = 0.0
    temp_v: float = 0.0
    temp_steps: int = 0

    @property
    def temperature(self) -> float:
        return math.exp(self.log_temperature)


def init_agent(obs_dim, action_dim, hidden, rng, lr=3e-4, gamma=0.99, tau=5e-3,
               max_action=1.0, n_hidden_layers=2, target_update_period=1) -> AgentState:
    hid = [hidden] * n_hidden_layers
    actor = init_mlp([obs_dim, *hid, 2 * action_dim], rng)
    critic1 = init_mlp([obs_dim + action_dim, *hid, 1], rng)
    critic2 = init_mlp([obs_dim + action_dim, *hid, 1], rng)
    return AgentState(
        actor=actor, critic1=critic1, critic2=critic2,
        target1=critic1.copy(), target2=critic2.copy(),
        adam_actor=init_adam(actor, lr),
        adam_critic1=init_adam(critic1, lr),
        adam_critic2=init_adam(critic2, lr),
        obs_dim=obs_dim, action_dim=action_dim, max_action=max_action,
        gamma=gamma, tau=tau, temp_lr=lr,
        target_update_period=target_update_period,
    )


def _obs_rows(agent, obs):
    obs = np.asarray(obs, dtype=np.float64)
    squeeze = obs.ndim == 1
    if squeeze:
        obs = obs[None, :]
    if obs.shape[1] != agent.obs_dim:
        raise ValueError(f"observation width {obs.shape[1]} != {agent.obs_dim}")
    return obs, squeeze


def actor_distribution(agent: AgentState, obs):
    """Returns (mu, clamped log_std, clamp mask) of the pre-squash Gaussian."""
    out = mlp_forward(agent.actor, obs)
    mu = out[..., :agent.action_dim]
    raw = out[..., agent.action_dim:]
    log_std = np.clip(raw, LOG_STD_MIN, LOG_STD_MAX)
    mask = (raw > LOG_STD_MIN) & (raw < LOG_STD_MAX)
    return mu, log_std, mask


def squash_sample(mu, log_std, xi, max_action):
    """Action and log-density of a = max_action * tanh(mu + std*xi).

    log(1 - tanh(z)^2) is evaluated as 2*(log 2 - z - softplus(-2z)) to stay
    finite for saturated z.
    """
    std = np.exp(log_std)
    z = mu + std * xi
    t = np.tanh(z)
    a = max_action * t
    log1m_t2 = 2.0 * (math.log(2.0) - z - np.logaddexp(0.0, -2.0 * z))
    log_prob = np.sum(-0.5 * xi * xi - log_std - 0.5 * LOG_2PI
                      - log1m_t2 - math.log(max_action), axis=-1)
    return a, log_prob, t, z


def policy_sample(agent: AgentState, obs, rng):
    """Stochastic tanh-Gaussian action and its log-probability."""
    obs2, squeeze = _obs_rows(agent, obs)
    mu, log_std, _ = actor_distribution(agent, obs2)
    xi = rng.standard_normal(mu.shape)
    a, log_prob, _, _ = squash_sample(mu, log_std, xi, agent.max_action)
    return (a[0], log_prob[0]) if squeeze else (a, log_prob)


def policy_mean(agent: AgentState, obs):
    """Deterministic action mode used for evaluation."""
    obs2, squeeze = _obs_rows(agent, obs)
    mu, _, _ = actor_distribution(agent, obs2)
    a = agent.max_action * np.tanh(mu)
    return a[0] if squeeze else a


def policy_log_prob(agent: AgentState, obs, actions):
    """Log-density of given env-scale actions under the current policy."""
    obs2, squeeze = _obs_rows(agent, obs)
    mu, log_std, _ = actor_distribution(agent, obs2)
    actions = np.asarray(actions, dtype=np.float64)
    if squeeze:
        actions = actions[None, :]
    t = np.clip(actions / agent.max_action, -1.0 + 1e-12, 1.0 - 1e-12)
    z = np.arctanh(t)
    std = np.exp(log_std)
    xi = (z - mu) / std
    log1m_t2 = 2.0 * (math.log(2.0) - z - np.logaddexp(0.0, -2.0 * z))
    log_prob = np.sum(-0.5 * xi * xi - log_std - 0.5 * LOG_2PI
                      - log1m_t2 - math.log(agent.max_action), axis=-1)
    return log_prob[0] if squeeze else log_prob


def _q_values(critic: MlpParams, s, a):
    return mlp_forward(critic, np.concatenate([s, a], axis=1))[:, 0]


def sac_target(agent: AgentState, batch, rng, reward=None):
    """Entropy-regularized double-Q bootstrap target; gradients are stopped
    by construction (targets are plain numbers)."""
    r = batch.r if reward is None else reward
    a2, log_p2 = policy_sample(agent, batch.s_next, rng)
    q1 = _q_values(agent.target1, batch.s_next, a2)
    q2 = _q_values(agent.target2, batch.s_next, a2)
    v = np.minimum(q1, q2) - agent.temperature * log_p2
    return r + agent.gamma * (1.0 - batch.done) * v


# ---------------------------------------------------------------------------
# Critic losses. Each *_loss_single is a pure function of one critic's
# parameters given a frozen context, returning (loss, grads, terms).
# ---------------------------------------------------------------------------


@dataclass
class H2OContext:
    """Stop-gradient inputs to the h2o/h2o_v critic loss."""
    y_real: np.ndarray
    y_sim: np.ndarray
    omega: np.ndarray
    weights: np.ndarray
    mean_u: float
    mean_w: float


def h2o_critic_context(agent, pair, cov, cfg: VariantConfig,
                       real_batch, sim_batch, rng, gap_model=None) -> H2OContext:
    y_real = sac_target(agent, real_batch, rng)
    y_sim = sac_target(agent, sim_batch, rng)
    n_sim = len(sim_batch)
    if cfg.adaptive_omega:
        if cfg.reverse_kl:
            if gap_model is None:
                raise ValueError("reverse_kl requires a fitted dynamics model")
            u = gap_measure_u_reverse(gap_model, pair, sim_batch.s, sim_batch.a,
                                      cfg.kl_samples, rng)
        else:
            u = gap_measure_u(pair, sim_batch.s, sim_batch.a, sim_batch.s_next,
                              cov, cfg.kl_samples, rng)
        omega = batch_omega(u)
        mean_u = float(np.mean(u))
    else:
        omega = np.full(n_sim, 1.0 / n_sim)
        mean_u = 0.0
    if cfg.use_dynamics_ratio:
        w = importance_weight(pair, sim_batch.s, sim_batch.a, sim_batch.s_next)
    else:
        w = np.ones(n_sim)
    return H2OContext(y_real, y_sim, omega, w, mean_u, float(np.mean(w)))


def h2o_critic_loss_single(critic: MlpParams, real_batch, sim_batch,
                           ctx: H2OContext, cfg: VariantConfig):
    """beta * (value regularizer) + half-and-half Bellman errors.

    The regularizer is logsumexp(log omega + Q_sim) - mean(Q_real) for h2o
    and sum(omega * Q_sim) - mean(Q_real) for h2o_v; the sim Bellman residual
    is scaled by the importance weight inside the square.
    """
    if len(real_batch) == 0 or len(sim_batch) == 0:
        raise ValueError("batches must be non-empty")
    n_r, n_s = len(real_batch), len(sim_batch)
    x = np.concatenate([
        np.concatenate([real_batch.s, real_batch.a], axis=1),
        np.concatenate([sim_batch.s, sim_batch.a], axis=1),
    ])
    q = mlp_forward(critic, x)[:, 0]
    q_r, q_s = q[:n_r], q[n_r:]
    up_r = np.zeros(n_r)
    up_s = np.zeros(n_s)
    terms = {}

    if cfg.use_regularization:
        if cfg.algorithm == "h2o":
            scores = np.log(ctx.omega) + q_s
            m = scores.max()
            lse = m + math.log(np.sum(np.exp(scores - m)))
            reg = lse - float(np.mean(q_r))
            up_s += cfg.beta * np.exp(scores - m) / np.sum(np.exp(scores - m))
        else:  # h2o_v
            reg = float(np.sum(ctx.omega * q_s)) - float(np.mean(q_r))
            up_s += cfg.beta * ctx.omega
        up_r += -cfg.beta / n_r
        terms["regularizer"] = cfg.beta * reg
    else:
        terms["regularizer"] = 0.0

    resid_r = q_r - ctx.y_real
    resid_s = q_s - ctx.y_sim
    w2 = ctx.weights * ctx.weights
    bell_r = 0.5 * float(np.mean(resid_r * resid_r))
    bell_s = 0.5 * float(np.mean(w2 * resid_s * resid_s))
    up_r += resid_r / n_r
    up_s += w2 * resid_s / n_s
    terms["bellman_real"] = bell_r
    terms["bellman_sim"] = bell_s

    loss = terms["regularizer"] + bell_r + bell_s
    grads, _ = mlp_backward(critic, x, np.concatenate([up_r, up_s])[:, None])
    terms["mean_q"] = float(np.mean(q))
    return loss, grads, terms


def h2o_critic_loss(real_batch, sim_batch, agent, pair, cov,
                    cfg: VariantConfig, rng, gap_model=None):
    """Both-critic h2o/h2o_v loss; returns (loss, grads1, grads2, terms, ctx)."""
    ctx = h2o_critic_context(agent, pair, cov, cfg, real_batch, sim_batch, rng,
                             gap_model=gap_model)
    l1, g1, t1 = h2o_critic_loss_single(agent.critic1, real_batch, sim_batch, ctx, cfg)
    l2, g2, t2 = h2o_critic_loss_single(agent.critic2, real_batch, sim_batch, ctx, cfg)
    terms = {k: (t1[k], t2[k]) for k in t1}
    return l1 + l2, g1, g2, terms, ctx


def bellman_loss_single(critic: MlpParams, s, a, y):
    """Plain mean squared Bellman error on one batch of rows."""
    n = s.shape[0]
    if n == 0:
        raise ValueError("empty batch")
    x = np.concatenate([s, a], axis=1)
    q = mlp_forward(critic, x)[:, 0]
    resid = q - y
    loss = float(np.mean(resid * resid))
    grads, _ = mlp_backward(critic, x, (2.0 * resid / n)[:, None])
    return loss, grads, {"bellman": loss, "mean_q": float(np.mean(q))}


def sac_critic_loss(batch, agent, rng, reward=None):
    """Double-critic SAC Bellman loss; returns (loss, grads1, grads2, terms, y)."""
    y = sac_target(agent, batch, rng, reward=reward)
    l1, g1, t1 = bellman_loss_single(agent.critic1, batch.s, batch.a, y)
    l2, g2, t2 = bellman_loss_single(agent.critic2, batch.s, batch.a, y)
    terms = {k: (t1[k], t2[k]) for k in t1}
    return l1 + l2, g1, g2, terms, y


def cql_regularizer_single(critic: MlpParams, s, actions, log_q, a_data, volume):
    """Importance-corrected soft-maximum of Q minus the data Q.

    actions: (n, m, a_dim) sampled proposals with densities exp(log_q);
    the estimate is logsumexp_j(Q(s, a_j) - log_q_j) - log m - log volume,
    which vanishes against mean Q(s, a_data) when Q is constant and the
    proposals are exactly uniform. Returns (value, d/dQ upstream pieces).
    """
    n, m, a_dim = actions.shape
    x_data = np.concatenate([s, a_data], axis=1)
    s_rep = np.repeat(s, m, axis=0)
    x_samp = np.concatenate([s_rep, actions.reshape(n * m, a_dim)], axis=1)
    q_data = mlp_forward(critic, x_data)[:, 0]
    q_samp = mlp_forward(critic, x_samp)[:, 0].reshape(n, m)
    scores = q_samp - log_q
    mx = scores.max(axis=1, keepdims=True)
    lse = mx[:, 0] + np.log(np.sum(np.exp(scores - mx), axis=1))
    est = lse - math.log(m) - math.log(volume)
    value = float(np.mean(est)) - float(np.mean(q_data))
    soft = np.exp(scores - mx)
    soft /= soft.sum(axis=1, keepdims=True)
    up_samp = soft / n          # d mean(est) / d q_samp
    up_data = -np.ones(n) / n   # d (-mean q_data) / d q_data
    return value, x_data, x_samp, up_data, up_samp, q_data


def cql_critic_loss_single(critic: MlpParams, batch, y, actions, log_q,
                           alpha, volume):
    value, x_data, x_samp, up_data, up_samp, q_data = cql_regularizer_single(
        critic, batch.s, actions, log_q, batch.a, volume)
    n = len(batch)
    resid = q_data - y
    bell = float(np.mean(resid * resid))
    loss = alpha * value + bell
    up_data_total = alpha * up_data + 2.0 * resid / n
    x = np.concatenate([x_data, x_samp])
    upstream = np.concatenate([up_data_total, alpha * up_samp.reshape(-1)])
    grads, _ = mlp_backward(critic, x, upstream[:, None])
    terms = {"cql_gap": alpha * value, "bellman": bell,
             "mean_q": float(np.mean(q_data))}
    return loss, grads, terms


def cql_action_proposals(agent: AgentState, s, n_each, rng):
    """Policy samples and uniform samples with their log-densities."""
    n = s.shape[0]
    mu, log_std, _ = actor_distribution(agent, s)
    mu_rep = np.repeat(mu, n_each, axis=0)
    ls_rep = np.repeat(log_std, n_each, axis=0)
    xi = rng.standard_normal(mu_rep.shape)
    a_pi, logp_pi, _, _ = squash_sample(mu_rep, ls_rep, xi, agent.max_action)
    k = agent.max_action
    a_unif = rng.uniform(-k, k, size=(n * n_each, agent.action_dim))
    logq_unif = np.full(n * n_each, -agent.action_dim * math.log(2.0 * k))
    actions = np.concatenate([a_pi.reshape(n, n_each, -1),
                              a_unif.reshape(n, n_each, -1)], axis=1)
    log_q = np.concatenate([logp_pi.reshape(n, n_each),
                            logq_unif.reshape(n, n_each)], axis=1)
    return actions, log_q


def cql_critic_loss(real_batch, agent, cfg: VariantConfig, rng):
    """CQL(H) with double critics; proposals shared across both critics."""
    if len(real_batch) == 0:
        raise ValueError("empty batch")
    y = sac_target(agent, real_batch, rng)
    actions, log_q = cql_action_proposals(agent, real_batch.s,
                                          cfg.n_cql_actions, rng)
    volume = (2.0 * agent.max_action) ** agent.action_dim
    l1, g1, t1 = cql_critic_loss_single(agent.critic1, real_batch, y, actions,
                                        log_q, cfg.alpha_cql, volume)
    l2, g2, t2 = cql_critic_loss_single(agent.critic2, real_batch, y, actions,
                                        log_q, cfg.alpha_cql, volume)
    terms = {k: (t1[k], t2[k]) for k in t1}
    return l1 + l2, g1, g2, terms


def darc_reward_correction(pair, s, a, s_next, clip=10.0):
    """Delta r = log(real/sim dynamics ratio), clipped to [-clip, clip]."""
    return np.clip(-log_dynamics_ratio(pair, s, a, s_next), -clip, clip)


def actor_loss(agent: AgentState, s, xi):
    """mean(temperature * log pi - min Q) with reparameterized actions.

    xi is the frozen standard-normal draw, so the loss is a deterministic
    function of the actor parameters (finite-difference checkable). Gradients
    flow into the actor only; the critics supply dQ/da.
    """
    n = s.shape[0]
    mu, log_std, clamp_mask = actor_distribution(agent, s)
    a, log_prob, t, z = squash_sample(mu, log_std, xi, agent.max_action)
    lam = agent.temperature
    x = np.concatenate([s, a], axis=1)
    q1 = mlp_forward(agent.critic1, x)[:, 0]
    q2 = mlp_forward(agent.critic2, x)[:, 0]
    first = q1 <= q2
    q_min = np.where(first, q1, q2)
    loss = float(np.mean(lam * log_prob - q_min))

    up1 = np.where(first, -1.0 / n, 0.0)[:, None]
    up2 = np.where(~first, -1.0 / n, 0.0)[:, None]
    _, xg1 = mlp_backward(agent.critic1, x, up1)
    _, xg2 = mlp_backward(agent.critic2, x, up2)
    dloss_da = (xg1 + xg2)[:, agent.obs_dim:]   # (n, action_dim)

    std = np.exp(log_std)
    da_dz = agent.max_action * (1.0 - t * t)
    dlogp_dz = 2.0 * t                      # from the tanh Jacobian term
    dmu = (lam / n) * dlogp_dz + dloss_da * da_dz
    dls = ((lam / n) * (-1.0 + dlogp_dz * std * xi)
           + dloss_da * da_dz * std * xi) * clamp_mask
    upstream = np.concatenate([dmu, dls], axis=1)
    grads, _ = mlp_backward(agent.actor, s, upstream)
    metrics = {"entropy_est": float(np.mean(-log_prob)),
               "mean_q_pi": float(np.mean(q_min))}
    return loss, grads, metrics


def temperature_update(agent: AgentState, s, rng, target_entropy):
    """One scalar-Adam step on temperature * (entropy estimate - target)."""
    _, log_prob = policy_sample(agent, s, rng)
    lam = agent.temperature
    grad = lam * float(np.mean(-log_prob) - target_entropy)
    agent.temp_steps += 1
    t = agent.temp_steps
    agent.temp_m = 0.9 * agent.temp_m + 0.1 * grad
    agent.temp_v = 0.999 * agent.temp_v + 0.001 * grad * grad
    m_hat = agent.temp_m / (1.0 - 0.9 ** t)
    v_hat = agent.temp_v / (1.0 - 0.999 ** t)
    agent.log_temperature -= agent.temp_lr * m_hat / (math.sqrt(v_hat) + 1e-8)
    return agent.log_temperature


class SimRollout:
    """Tracks the current online episode inside training."""

    def __init__(self, env):
        self.env = env
        self.obs = None

    def step(self, agent: AgentState, rng):
        """One policy step; returns (s, a, r, s_next) with time-limit resets."""
        if self.obs is None:
            self.obs = self.env.reset()
        s = self.obs
        a, _ = policy_sample(agent, s, rng)
        obs_next, r, done = self.env.step(a)
        self.obs = None if done else obs_next
        return s, a, r, obs_next


@dataclass
class StepMetrics:
    step: int
    loss_critic: float = 0.0
    loss_actor: float = 0.0
    loss_disc_sas: float = 0.0
    loss_disc_sa: float = 0.0
    mean_q: float = 0.0
    mean_u: float = 0.0
    mean_w: float = 1.0
    omega_entropy: float = 0.0
    entropy_est: float = 0.0
    temperature: float = 1.0
    real_batch_reads: int = 0
    env_steps: int = 0
    terms: dict = field(default_factory=dict)


def _actor_states(cfg: VariantConfig, real_batch, sim_batch):
    """States for policy improvement/temperature per the variant's source."""
    if cfg.algorithm == "cql":
        return real_batch.s
    if cfg.algorithm in ("sac", "darc"):
        return sim_batch.s
    # h2o, h2o_v, darc_plus: real/sim mix controlled by real_fraction
    n = cfg.batch_size
    k = int(round(cfg.real_fraction * n))
    k = min(k, len(real_batch))
    return np.concatenate([real_batch.s[:k], sim_batch.s[:n - k]])


def train_step(agent: AgentState, cfg: VariantConfig, rollout, dataset, buffer,
               pair, cov, streams, t: int, gap_model=None) -> StepMetrics:
    """One full training iteration: rollout, discriminators, critic, actor,
    temperature, soft target update — in that order."""
    metrics = StepMetrics(step=t)

    if cfg.uses_sim_env:
        s, a, r, s_next = rollout.step(agent, streams.policy)
        buffer.push(s, a, r, s_next, False)
        metrics.env_steps = 1

    real_batch = sim_batch = None
    if cfg.algorithm in ("cql", "darc_plus", "h2o", "h2o_v"):
        real_batch = sample_batch(dataset, cfg.effective_real_batch, streams.batch)
        metrics.real_batch_reads = 1
    if cfg.uses_sim_env:
        sim_batch = sample_batch(buffer, cfg.batch_size, streams.batch)

    if cfg.uses_discriminators and (t - 1) % cfg.disc_update_every == 0:
        disc_real = sample_batch(dataset, cfg.batch_size, streams.disc)
        disc_sim = sample_batch(buffer, cfg.batch_size, streams.disc)
        metrics.loss_disc_sas, metrics.loss_disc_sa = train_discriminators(
            pair, disc_real, disc_sim)
        metrics.real_batch_reads += 1

    if cfg.algorithm in ("h2o", "h2o_v"):
        loss, g1, g2, terms, ctx = h2o_critic_loss(
            real_batch, sim_batch, agent, pair, cov, cfg, streams.batch,
            gap_model=gap_model)
        metrics.mean_u = ctx.mean_u
        metrics.mean_w = ctx.mean_w
        metrics.omega_entropy = float(-np.sum(ctx.omega * np.log(ctx.omega)))
    elif cfg.algorithm == "cql":
        loss, g1, g2, terms = cql_critic_loss(real_batch, agent, cfg, streams.batch)
    elif cfg.algorithm == "sac":
        loss, g1, g2, terms, _ = sac_critic_loss(sim_batch, agent, streams.batch)
    elif cfg.algorithm == "darc":
        dr = darc_reward_correction(pair, sim_batch.s, sim_batch.a,
                                    sim_batch.s_next, cfg.delta_r_clip)
        loss, g1, g2, terms, _ = sac_critic_loss(sim_batch, agent, streams.batch,
                                                 reward=sim_batch.r + dr)
    else:  # darc_plus: union Bellman, sim rewards corrected
        dr = darc_reward_correction(pair, sim_batch.s, sim_batch.a,
                                    sim_batch.s_next, cfg.delta_r_clip)
        y_real = sac_target(agent, real_batch, streams.batch)
        y_sim = sac_target(agent, sim_batch, streams.batch, reward=sim_batch.r + dr)
        loss = 0.0
        terms = {"bellman_real": [], "bellman_sim": [], "mean_q": []}
        gs = []
        for critic in (agent.critic1, agent.critic2):
            lr_, gr_, tr_ = bellman_loss_single(critic, real_batch.s,
                                                real_batch.a, y_real)
            ls_, gs_, ts_ = bellman_loss_single(critic, sim_batch.s,
                                                sim_batch.a, y_sim)
            loss += 0.5 * lr_ + 0.5 * ls_
            gs.append((gr_, gs_))
            terms["bellman_real"].append(0.5 * lr_)
            terms["bellman_sim"].append(0.5 * ls_)
            terms["mean_q"].append(0.5 * (tr_["mean_q"] + ts_["mean_q"]))
        terms = {k: tuple(v) for k, v in terms.items()}
        g1 = add_grads(scale_grads(gs[0][0], 0.5), scale_grads(gs[0][1], 0.5))
        g2 = add_grads(scale_grads(gs[1][0], 0.5), scale_grads(gs[1][1], 0.5))

    if not math.isfinite(loss):
        raise TrainingError(f"non-finite critic loss at step {t}")
    adam_step(agent.critic1, g1, agent.adam_critic1)
    adam_step(agent.critic2, g2, agent.adam_critic2)
    metrics.loss_critic = float(loss)
    metrics.terms = terms
    if isinstance(terms.get("mean_q"), tuple):
        metrics.mean_q = 0.5 * (terms["mean_q"][0] + terms["mean_q"][1])

    states = _actor_states(cfg, real_batch, sim_batch)
    xi = streams.policy.standard_normal((states.shape[0], agent.action_dim))
    a_loss, a_grads, a_metrics = actor_loss(agent, states, xi)
    if not math.isfinite(a_loss):
        raise TrainingError(f"non-finite actor loss at step {t}")
    adam_step(agent.actor, a_grads, agent.adam_actor)
    metrics.loss_actor = float(a_loss)
    metrics.entropy_est = a_metrics["entropy_est"]

    temperature_update(agent, states, streams.policy, -float(agent.action_dim))
    metrics.temperature = agent.temperature

    if t % agent.target_update_period == 0:
        blend_params(agent.target1, agent.critic1, agent.tau)
        blend_params(agent.target2, agent.critic2, agent.tau)
    return metrics
