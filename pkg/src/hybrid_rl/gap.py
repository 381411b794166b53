"""Dynamics-gap estimation from real-vs-sim discriminators.

Two coupled classifiers estimate p(real | s, a) and p(real | s, a, s').
The pre-softmax logits of the (s, a, s') net are soft-clipped to [-2, 2]
(tanh2 output) and added to the (s, a) net's logits, so the smaller net
carries the marginal real/sim signal and the larger one only the next-state
residual. The sim/real dynamics ratio, the importance weight on simulated TD
errors, and the sampled KL gap measure u(s, a) all derive from these logits.
"""

from dataclasses import dataclass

import numpy as np

from .nn import AdamState, MlpParams, add_grads, adam_step, init_adam, init_mlp, mlp_forward, mlp_backward

CLASS_REAL = 0
CLASS_SIM = 1

U_CLIP_LO = 1e-45
U_CLIP_HI = 10.0
WEIGHT_CLIP_LO = 1e-5
WEIGHT_CLIP_HI = 1.0


@dataclass
class DiscriminatorPair:
    d_sa: MlpParams
    d_sas: MlpParams
    adam_sa: AdamState
    adam_sas: AdamState
    s_dim: int
    a_dim: int
    # optional per-dimension input standardization (state stats reused for s')
    norm_mean: np.ndarray = None    # (s_dim + a_dim,)
    norm_scale: np.ndarray = None   # (s_dim + a_dim,)


def init_discriminator_pair(s_dim, a_dim, hidden, rng, lr=3e-4,
                            norm_mean=None, norm_scale=None) -> DiscriminatorPair:
    """One hidden layer each; final layers zeroed so fresh pairs output 0.5."""
    d_sa = init_mlp([s_dim + a_dim, hidden, 2], rng,
                    output_activation="tanh2", zero_final_layer=True)
    d_sas = init_mlp([2 * s_dim + a_dim, hidden, 2], rng,
                     output_activation="tanh2", zero_final_layer=True)
    return DiscriminatorPair(d_sa, d_sas, init_adam(d_sa, lr), init_adam(d_sas, lr),
                             s_dim, a_dim, norm_mean, norm_scale)


def _rows(x, dim, what):
    x = np.asarray(x, dtype=np.float64)
    squeeze = x.ndim == 1
    if squeeze:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != dim:
        raise ValueError(f"{what} shape {x.shape} incompatible with dim {dim}")
    return x, squeeze


def _inputs(pair: DiscriminatorPair, s, a, s_next=None):
    s, sq1 = _rows(s, pair.s_dim, "s")
    a, sq2 = _rows(a, pair.a_dim, "a")
    if s.shape[0] != a.shape[0]:
        raise ValueError("s and a row counts differ")
    if pair.norm_mean is not None:
        s = (s - pair.norm_mean[:pair.s_dim]) / pair.norm_scale[:pair.s_dim]
        a = (a - pair.norm_mean[pair.s_dim:]) / pair.norm_scale[pair.s_dim:]
    x_sa = np.concatenate([s, a], axis=1)
    if s_next is None:
        return x_sa, None, sq1 and sq2
    sn, sq3 = _rows(s_next, pair.s_dim, "s_next")
    if sn.shape[0] != s.shape[0]:
        raise ValueError("s_next row count differs")
    if pair.norm_mean is not None:
        sn = (sn - pair.norm_mean[:pair.s_dim]) / pair.norm_scale[:pair.s_dim]
    x_sas = np.concatenate([s, a, sn], axis=1)
    return x_sa, x_sas, sq1 and sq2 and sq3


def pair_logits(pair: DiscriminatorPair, s, a, s_next):
    """Returns (coupled sas logits, sa logits), each (n, 2) [real, sim]."""
    x_sa, x_sas, squeeze = _inputs(pair, s, a, s_next)
    logits_sa = mlp_forward(pair.d_sa, x_sa)
    logits_sas = mlp_forward(pair.d_sas, x_sas) + logits_sa
    if squeeze:
        return logits_sas[0], logits_sa[0]
    return logits_sas, logits_sa


def _p_real(logits):
    # two-class softmax, "real" component
    return 1.0 / (1.0 + np.exp(logits[..., CLASS_SIM] - logits[..., CLASS_REAL]))


def discriminator_probs(pair: DiscriminatorPair, s, a, s_next):
    logits_sas, logits_sa = pair_logits(pair, s, a, s_next)
    return _p_real(logits_sas), _p_real(logits_sa)


def log_dynamics_ratio(pair: DiscriminatorPair, s, a, s_next):
    """log of the sim/real dynamics ratio, computed in logit space.

    log[(1-p_sas)/p_sas] - log[(1-p_sa)/p_sa] equals the difference of the
    (sim - real) logit gaps; with the additive coupling this reduces to the
    soft-clipped residual head alone, so it is bounded in [-4, 4].
    """
    logits_sas, logits_sa = pair_logits(pair, s, a, s_next)
    gap_sas = logits_sas[..., CLASS_SIM] - logits_sas[..., CLASS_REAL]
    gap_sa = logits_sa[..., CLASS_SIM] - logits_sa[..., CLASS_REAL]
    return gap_sas - gap_sa


def dynamics_ratio(pair: DiscriminatorPair, s, a, s_next):
    """P_sim(s'|s,a) / P_real(s'|s,a) estimate, strictly positive."""
    return np.exp(log_dynamics_ratio(pair, s, a, s_next))


def importance_weight(pair: DiscriminatorPair, s, a, s_next):
    """Clipped real/sim ratio applied to simulated TD errors (never > 1)."""
    return np.clip(np.exp(-log_dynamics_ratio(pair, s, a, s_next)),
                   WEIGHT_CLIP_LO, WEIGHT_CLIP_HI)


def _cross_entropy_and_grad(logits, labels):
    """Mean CE over rows and d(loss)/d(logits); labels are class indices."""
    n = logits.shape[0]
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    probs = e / e.sum(axis=1, keepdims=True)
    picked = probs[np.arange(n), labels]
    loss = float(-np.mean(np.log(picked)))
    grad = probs.copy()
    grad[np.arange(n), labels] -= 1.0
    return loss, grad / n


def train_discriminators(pair: DiscriminatorPair, real_batch, sim_batch):
    """One Adam step per net on the real-vs-sim cross-entropies.

    The sas loss backpropagates into d_sa through the additive coupling, on
    top of d_sa's own loss, so both nets see the joint objective.
    """
    if len(real_batch) == 0 or len(sim_batch) == 0:
        raise ValueError("discriminator batches must be non-empty")
    s = np.concatenate([real_batch.s, sim_batch.s])
    a = np.concatenate([real_batch.a, sim_batch.a])
    sn = np.concatenate([real_batch.s_next, sim_batch.s_next])
    labels = np.concatenate([np.full(len(real_batch), CLASS_REAL),
                             np.full(len(sim_batch), CLASS_SIM)])
    x_sa, x_sas, _ = _inputs(pair, s, a, sn)
    out_sa = mlp_forward(pair.d_sa, x_sa)
    out_sas_raw = mlp_forward(pair.d_sas, x_sas)
    loss_sas, g_sas = _cross_entropy_and_grad(out_sas_raw + out_sa, labels)
    loss_sa, g_sa = _cross_entropy_and_grad(out_sa, labels)
    grads_sas, _ = mlp_backward(pair.d_sas, x_sas, g_sas)
    coupled, _ = mlp_backward(pair.d_sa, x_sa, g_sas)
    own, _ = mlp_backward(pair.d_sa, x_sa, g_sa)
    adam_step(pair.d_sas, grads_sas, pair.adam_sas)
    adam_step(pair.d_sa, add_grads(own, coupled), pair.adam_sa)
    return loss_sas, loss_sa


def gap_measure_u(pair: DiscriminatorPair, s, a, s_next, cov, n_samples, rng):
    """Sampled KL gap measure u(s,a), elementwise clipped to [1e-45, 10].

    Draws n_samples next states from Normal(s_next, cov.regularized_cov) and
    sums the log sim/real ratios at those draws.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    s, squeeze = _rows(s, pair.s_dim, "s")
    a, _ = _rows(a, pair.a_dim, "a")
    sn, _ = _rows(s_next, pair.s_dim, "s_next")
    if cov.dim != pair.s_dim:
        raise ValueError("covariance dimension mismatch")
    n = s.shape[0]
    z = rng.standard_normal((n, n_samples, pair.s_dim))
    draws = sn[:, None, :] + z @ cov.cholesky.T
    rep = np.repeat(np.arange(n), n_samples)
    logs = log_dynamics_ratio(pair, s[rep], a[rep], draws.reshape(-1, pair.s_dim))
    u = np.clip(logs.reshape(n, n_samples).sum(axis=1), U_CLIP_LO, U_CLIP_HI)
    return u[0] if squeeze else u


def batch_omega(u_values) -> np.ndarray:
    """Normalize clipped gap measures into the minibatch distribution omega."""
    u = np.asarray(u_values, dtype=np.float64)
    if u.size == 0:
        raise ValueError("empty u vector")
    if np.any(u < U_CLIP_LO):
        raise ValueError("u entries must be clipped to >= 1e-45 first")
    return u / u.sum()


@dataclass
class GaussianDynamicsModel:
    """Linear-Gaussian forward model s' ~ Normal(W^T [s, a, 1], diag(std^2))."""
    coef: np.ndarray = None       # (s_dim + a_dim + 1, s_dim)
    noise_std: np.ndarray = None  # (s_dim,)

    @property
    def fitted(self) -> bool:
        return self.coef is not None


def fit_gaussian_dynamics(dataset, ridge=1e-6) -> GaussianDynamicsModel:
    if dataset.size == 0:
        raise ValueError("empty dataset")
    n = dataset.size
    x = np.concatenate([dataset.s[:n], dataset.a[:n], np.ones((n, 1))], axis=1)
    y = dataset.s_next[:n]
    coef = np.linalg.solve(x.T @ x + ridge * np.eye(x.shape[1]), x.T @ y)
    resid = y - x @ coef
    noise_std = np.sqrt(np.mean(resid * resid, axis=0) + 1e-12)
    return GaussianDynamicsModel(coef, noise_std)


def gap_measure_u_reverse(model: GaussianDynamicsModel, pair: DiscriminatorPair,
                          s, a, n_samples, rng):
    """Reverse-direction gap measure: next states drawn from the learned model,
    log ratios taken real-over-sim; same clipping as gap_measure_u."""
    if not model.fitted:
        raise ValueError("dynamics model is not fitted")
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    s, squeeze = _rows(s, pair.s_dim, "s")
    a, _ = _rows(a, pair.a_dim, "a")
    n = s.shape[0]
    x = np.concatenate([s, a, np.ones((n, 1))], axis=1)
    mean = x @ model.coef
    z = rng.standard_normal((n, n_samples, pair.s_dim))
    draws = mean[:, None, :] + z * model.noise_std
    rep = np.repeat(np.arange(n), n_samples)
    logs = -log_dynamics_ratio(pair, s[rep], a[rep], draws.reshape(-1, pair.s_dim))
    u = np.clip(logs.reshape(n, n_samples).sum(axis=1), U_CLIP_LO, U_CLIP_HI)
    return u[0] if squeeze else u
