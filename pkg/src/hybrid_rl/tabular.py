"""Exact tabular verification of the value-regularization mathematics.

Everything here is computed in closed form on explicit tables: the
soft-maximum sampling distribution induced by the critic regularizer, the
sharpened-Jensen bounds that sandwich it, the equivalent per-pair reward
adjustment nu, its damped policy-evaluation fixed point, and the state-level
condition under which that fixed point provably underestimates the true
value. No function approximation or sampling enters this module.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .envs import TabularMdpPair

DP_TOL = 1e-10
DP_MAX_ITERS = 10 ** 6


@dataclass(frozen=True)
class TabularDistributions:
    """Joint (s,a) distributions entering the reward-adjustment analysis.

    omega: normalized dynamics-gap weight; d_data: data policy occupancy under
    real dynamics; d_sim: learned policy occupancy under sim dynamics;
    pi_data / pi: the corresponding conditionals.
    """

    omega: np.ndarray
    d_data: np.ndarray
    d_sim: np.ndarray
    pi_data: np.ndarray
    pi: np.ndarray

    def __post_init__(self):
        arrs = (self.omega, self.d_data, self.d_sim, self.pi_data, self.pi)
        shape = self.omega.shape
        if any(a.shape != shape for a in arrs) or len(shape) != 2:
            raise ValueError("all tables must share one (n_states, n_actions) shape")
        for name, a in (("omega", self.omega), ("d_data", self.d_data),
                        ("d_sim", self.d_sim)):
            if np.any(a < 0) or abs(a.sum() - 1.0) > 1e-12:
                raise ValueError(f"{name} must be a distribution over (s,a)")
        for name, p in (("pi_data", self.pi_data), ("pi", self.pi)):
            if np.any(p < 0) or np.max(np.abs(p.sum(axis=1) - 1.0)) > 1e-12:
                raise ValueError(f"{name} rows must be per-state distributions")
        for name, d, p in (("d_data", self.d_data, self.pi_data),
                           ("d_sim", self.d_sim, self.pi)):
            marg = d.sum(axis=1, keepdims=True)
            if np.max(np.abs(d - marg * p)) > 1e-12:
                raise ValueError(f"{name} is not consistent with its conditional")

    @property
    def n_states(self):
        return self.omega.shape[0]


def state_occupancy(p, pi, gamma, rho=None):
    """Discounted state occupancy (1-gamma)(I - gamma P_pi^T)^{-1} rho."""
    n_states = p.shape[0]
    if rho is None:
        rho = np.full(n_states, 1.0 / n_states)
    p_pi = np.einsum("sa,sat->st", pi, p)
    mu = (1.0 - gamma) * np.linalg.solve(np.eye(n_states) - gamma * p_pi.T, rho)
    return mu / mu.sum()


def exact_kl_omega(pair: TabularMdpPair):
    """Per-pair KL(P_sim || P_real), normalized into a distribution over (s,a)."""
    ps, pr = pair.p_sim, pair.p_real
    with np.errstate(divide="ignore", invalid="ignore"):
        logs = np.where(ps > 0, np.log(np.where(ps > 0, ps, 1.0))
                        - np.log(np.where(pr > 0, pr, 1.0)), 0.0)
    if np.any((ps > 0) & (pr == 0)):
        raise ValueError("sim visits a successor the real dynamics forbids")
    u = np.sum(ps * logs, axis=2)
    u = np.maximum(u, 0.0)  # exact KL is nonnegative; clip rounding residue
    total = u.sum()
    if total <= 0:
        raise ValueError("zero total dynamics gap; omega undefined")
    return u / total


def build_distributions(pair: TabularMdpPair, pi_data, pi,
                        rho=None) -> TabularDistributions:
    """Assemble the exact distributions for a policy pair on an MDP pair."""
    pi_data = np.asarray(pi_data, dtype=np.float64)
    pi = np.asarray(pi, dtype=np.float64)
    if rho is None:
        rho = pair.initial_distribution
    mu_data = state_occupancy(pair.p_real, pi_data, pair.gamma, rho)
    mu_sim = state_occupancy(pair.p_sim, pi, pair.gamma, rho)
    return TabularDistributions(
        omega=exact_kl_omega(pair),
        d_data=mu_data[:, None] * pi_data,
        d_sim=mu_sim[:, None] * pi,
        pi_data=pi_data,
        pi=pi,
    )


def closed_form_dphi(omega, q):
    """Soft-maximum sampling distribution omega*exp(Q) / sum(omega*exp(Q))."""
    omega = np.asarray(omega, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if omega.shape != q.shape:
        raise ValueError("omega and Q shapes differ")
    if np.any(omega <= 0):
        raise ValueError("omega must be strictly positive")
    scores = np.log(omega) + q
    scores = scores - scores.max()
    e = np.exp(scores)
    return e / e.sum()


def logsumexp_bounds(omega, q, q_min):
    """(weighted mean, log weighted exp-mean, sharpened-Jensen upper bound)."""
    omega = np.asarray(omega, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if omega.shape != q.shape:
        raise ValueError("omega and Q shapes differ")
    if np.any(omega < 0) or abs(omega.sum() - 1.0) > 1e-9:
        raise ValueError("omega must be a distribution")
    if not q_min > 0:
        raise ValueError("Q_min must be positive")
    if np.any(q < q_min):
        raise ValueError("all Q entries must be >= Q_min")
    lhs = float(np.sum(omega * q))
    scores = np.log(np.where(omega > 0, omega, 1.0)) + q
    scores = np.where(omega > 0, scores, -np.inf)
    m = scores.max()
    mid = float(m + np.log(np.sum(np.exp(scores - m))))
    ex = np.exp(q)
    mean_ex = float(np.sum(omega * ex))
    var_ex = float(np.sum(omega * ex * ex)) - mean_ex * mean_ex
    rhs = lhs + max(var_ex, 0.0) / (2.0 * math.exp(2.0 * q_min))
    return lhs, mid, rhs


def exact_nu(dist: TabularDistributions, s: int, a: int) -> float:
    """Equivalent reward adjustment (omega - d_data)/(d_data + d_sim)."""
    denom = dist.d_data[s, a] + dist.d_sim[s, a]
    if denom <= 0:
        raise ValueError(f"pair ({s},{a}) is unreachable by both data sources")
    return float((dist.omega[s, a] - dist.d_data[s, a]) / denom)


def nu_table(dist: TabularDistributions):
    denom = dist.d_data + dist.d_sim
    if np.any(denom <= 0):
        bad = np.argwhere(denom <= 0)[0]
        raise ValueError(f"pair ({bad[0]},{bad[1]}) is unreachable by both data sources")
    return (dist.omega - dist.d_data) / denom


def policy_evaluation_q(p, reward, pi, gamma):
    """Exact Q^pi by linear solve: (I - gamma * P Pi) Q = r."""
    n_states, n_actions = reward.shape
    n = n_states * n_actions
    p_pi = np.einsum("sat,tb->satb", p, pi).reshape(n, n)
    q = np.linalg.solve(np.eye(n) - gamma * p_pi, reward.reshape(n))
    return q.reshape(n_states, n_actions)


def dp_fixed_point(pair: TabularMdpPair, pi, nu, beta, tol=DP_TOL,
                   max_iters=DP_MAX_ITERS, return_residuals=False):
    """Iterate Q <- r - beta*nu + gamma * P_real E_pi Q to its fixed point.

    The Bellman backup uses the real dynamics; the adjustment enters as a
    constant reward shift. Successive sup-norm residuals must contract by at
    least gamma (checked on every sweep, with float-rounding slack).
    """
    pi = np.asarray(pi, dtype=np.float64)
    nu = np.asarray(nu, dtype=np.float64)
    base = pair.reward - beta * nu
    q = np.zeros_like(base)
    residuals = []
    prev = None
    for _ in range(max_iters):
        v = np.sum(pi * q, axis=1)
        q_next = base + pair.gamma * (pair.p_real @ v)
        resid = float(np.max(np.abs(q_next - q)))
        residuals.append(resid)
        scale = max(1.0, float(np.max(np.abs(q_next))))
        if prev is not None and resid > pair.gamma * prev + 1e-13 * scale:
            raise RuntimeError(
                f"contraction violated: residual {resid} after {prev}")
        prev = resid
        q = q_next
        if resid < tol:
            return (q, residuals) if return_residuals else q
    raise RuntimeError(f"no convergence in {max_iters} sweeps; residual {prev}")


def zeta_values(dist: TabularDistributions, s: int):
    """Per-action policy-mismatch inflation at state s; (values, data_absent).

    When the state has no data mass the data terms vanish from both the
    numerator and denominator, so the inflation factor is identically 1.
    """
    dd_s = float(dist.d_data[s].sum())
    ds_s = float(dist.d_sim[s].sum())
    n_actions = dist.pi.shape[1]
    if dd_s == 0.0:
        return np.ones(n_actions), True
    pd, p = dist.pi_data[s], dist.pi[s]
    if np.any((pd > 0) & (p == 0)):
        raise ValueError(f"pi assigns zero mass where pi_data is supported at s={s}")
    ratio = np.divide(pd, p, out=np.zeros(n_actions), where=pd > 0)
    denom = dd_s * ratio + ds_s
    if np.any(denom <= 0):
        raise ValueError(f"degenerate mixture denominator at s={s}")
    return (dd_s * ratio.max() + ds_s) / denom, False


def theorem1_condition(dist: TabularDistributions, s: int):
    """Whether the state's gap mass strictly exceeds its inflated data mass.

    Returns (holds, margin) with margin = sum_a omega - sum_a d_data * zeta.
    """
    zeta, _ = zeta_values(dist, s)
    lhs = float(dist.omega[s].sum())
    rhs = float(np.sum(dist.d_data[s] * zeta))
    margin = lhs - rhs
    return margin > 0.0, margin


def theorem2_condition(dist: TabularDistributions, s: int, beta, gamma, count,
                       c_pdelta=1.0, r_max=1.0):
    """Finite-count variant: the margin shrinks by a sampling-error term that
    decays as 1/sqrt(count), recovering the exact condition as count -> inf."""
    if count <= 0 or beta <= 0 or not 0 < gamma < 1:
        raise ValueError("count and beta must be positive, gamma in (0,1)")
    holds1, margin1 = theorem1_condition(dist, s)
    dd_s = float(dist.d_data[s].sum())
    ds_s = float(dist.d_sim[s].sum())
    if dd_s > 0:
        zeta, _ = zeta_values(dist, s)
        pd, p = dist.pi_data[s], dist.pi[s]
        ratio_max = float(np.max(np.divide(pd, p, out=np.zeros_like(pd),
                                           where=pd > 0)))
    else:
        ratio_max = 0.0
    sampling = (gamma * c_pdelta * r_max * (dd_s * ratio_max + ds_s)
                / (beta * (1.0 - gamma) * math.sqrt(count)))
    margin = margin1 - sampling
    return margin > 0.0, margin


@dataclass
class UnderestimationReport:
    """Per-instance summary of the exact-DP underestimation check."""

    n_states: int
    condition_holds: np.ndarray     # bool per state
    margins: np.ndarray             # Theorem-1 margins per state
    v_hat: np.ndarray               # damped fixed-point state values
    v_true: np.ndarray              # exact policy evaluation values
    violations: list = field(default_factory=list)
    data_absent_states: list = field(default_factory=list)

    @property
    def n_condition_states(self) -> int:
        return int(np.sum(self.condition_holds))

    @property
    def max_violation(self) -> float:
        """Largest overestimation among condition states (0 when none)."""
        excess = self.v_hat - self.v_true
        if not np.any(self.condition_holds):
            return 0.0
        return float(max(0.0, np.max(excess[self.condition_holds])))

    def summary_line(self, seed) -> str:
        return (f"seed={seed} condition_states={self.n_condition_states} "
                f"max_violation={self.max_violation:.3e}")


def verify_underestimation(pair: TabularMdpPair, pi, dist: TabularDistributions,
                           beta, tol=1e-8) -> UnderestimationReport:
    """Check that the damped fixed point lower-bounds exact policy evaluation
    at every state satisfying the gap-mass condition."""
    pi = np.asarray(pi, dtype=np.float64)
    nu = nu_table(dist)
    q_hat = dp_fixed_point(pair, pi, nu, beta)
    v_hat = np.sum(pi * q_hat, axis=1)
    q_true = policy_evaluation_q(pair.p_real, pair.reward, pi, pair.gamma)
    v_true = np.sum(pi * q_true, axis=1)

    n_states = pair.p_real.shape[0]
    holds = np.zeros(n_states, dtype=bool)
    margins = np.zeros(n_states)
    absent = []
    for s in range(n_states):
        _, defaulted = zeta_values(dist, s)
        if defaulted:
            absent.append(s)
        holds[s], margins[s] = theorem1_condition(dist, s)
    report = UnderestimationReport(n_states, holds, margins, v_hat, v_true,
                                   data_absent_states=absent)
    for s in range(n_states):
        if holds[s] and v_hat[s] > v_true[s] + tol:
            report.violations.append((s, float(v_hat[s]), float(v_true[s])))
    return report
