"""End-to-end acceptance gates for the hybrid-rl package.

One test per acceptance criterion, in order: gradient exactness, the
closed-form soft-max sampler against a constrained numeric maximizer, the
value-bound inequality chain, tabular underestimation guarantees (exact and
finite-count), density-ratio recovery on a synthetic Gaussian task, zero-gap
sanity of the gap measure, desk-scale return orderings across variants and
ablations, the gap-severity ordering of the diagnostic measure, and full-run
determinism with bit-exact artifact round-trips.

Every test prints a single line ``ACCEPTANCE <n>: PASS|FAIL -- <measured>``
(run pytest with ``-s`` to see the lines for passing tests). Training-based
criteria are seeded end to end and reuse session-cached datasets and run
matrices, but each still trains real networks; the whole module takes
roughly half an hour on a laptop CPU.
"""

import math
import warnings

import numpy as np
import pytest
from scipy.optimize import minimize

from hybrid_rl.agents import (
    VariantConfig,
    bellman_loss_single,
    cql_action_proposals,
    cql_critic_loss_single,
    h2o_critic_context,
    h2o_critic_loss_single,
    init_agent,
    sac_target,
)
from hybrid_rl.data import (
    DOMAIN_REAL,
    Batch,
    Dataset,
    Transition,
    load_dataset,
    sample_batch,
    save_dataset,
    state_covariance,
)
from hybrid_rl.envs import PendulumConfig, random_tabular_pair
from hybrid_rl.gap import (
    U_CLIP_LO,
    importance_weight,
    init_discriminator_pair,
    log_dynamics_ratio,
    train_discriminators,
)
from hybrid_rl.harness import (
    experiment_from_flat,
    gap_diagnostic,
    generate_dataset,
    load_checkpoint,
    quartile_contrast,
    run_experiment,
    run_medium_protocol,
)
from hybrid_rl.nn import (
    add_grads,
    grad_check,
    init_mlp,
    load_params,
    mlp_backward,
    mlp_forward,
    scale_grads,
)
from hybrid_rl.tabular import (
    build_distributions,
    closed_form_dphi,
    dp_fixed_point,
    logsumexp_bounds,
    nu_table,
    theorem1_condition,
    theorem2_condition,
    verify_underestimation,
)

SEEDS = (0, 1, 2)

# Desk-scale network/batch settings shared by all training-based criteria;
# small enough that a 20k-step run finishes in about a minute on one core.
DESK = {
    "train.hidden_units": 64,
    "train.disc_hidden_units": 64,
    "train.batch_size": 128,
    "train.real_batch_size": 64,
}


def _line(n, ok, detail):
    print(f"\nACCEPTANCE {n}: {'PASS' if ok else 'FAIL'} -- {detail}")


def _desk_flat(variant, gap, seed, out_dir, total_steps, **extra):
    flat = {
        "experiment.variant": variant,
        "experiment.gap": gap,
        "experiment.seed": seed,
        "experiment.out": str(out_dir),
        "experiment.total_steps": total_steps,
        "experiment.eval_every": 5_000,
        "experiment.eval_episodes": 10,
    }
    flat.update(DESK)
    flat.update(extra)
    return experiment_from_flat(flat)


# ---------------------------------------------------------------------------
# Shared expensive artifacts


@pytest.fixture(scope="module")
def out_root(tmp_path_factory):
    return tmp_path_factory.mktemp("acceptance")


@pytest.fixture(scope="module")
def medium_sets():
    """One snapshot-protocol run shared by the ordering criteria.

    Returns (snapshot dataset, replay-prefix dataset): the first is collected
    by the half-converged policy, the second is the training buffer up to the
    snapshot step and spans the random-to-competent occupancy mix.
    """
    result = run_medium_protocol(
        PendulumConfig(), 0, total_steps=16_000, eval_every=1_000,
        eval_episodes=5, n_transitions=20_000, hidden_units=64,
        batch_size=128,
    )
    return result.dataset, result.replay


@pytest.fixture(scope="module")
def variant_returns(medium_sets, out_root):
    """Final real-env returns for the variant-ordering criterion.

    20k-step runs: the hybrid learner and the sim-only baseline on both
    dynamics gaps, plus the offline-only baseline (gap-independent), three
    seeds each, all sharing the replay-prefix dataset.
    """
    _, replay = medium_sets
    returns = {}
    for gap in ("gravity", "joint_noise"):
        for variant in ("h2o", "sac"):
            vals = []
            for seed in SEEDS:
                cfg = _desk_flat(variant, gap, seed,
                                 out_root / f"c7_{gap}_{variant}_{seed}", 20_000)
                report = run_experiment(
                    cfg, dataset=replay if variant == "h2o" else None)
                vals.append(report.final_return_mean)
            returns[f"{gap}/{variant}"] = vals
    vals = []
    for seed in SEEDS:
        cfg = _desk_flat("cql", "gravity", seed, out_root / f"c7_cql_{seed}",
                         20_000)
        vals.append(run_experiment(cfg, dataset=replay).final_return_mean)
    returns["cql"] = vals
    return returns


@pytest.fixture(scope="module")
def ablation_returns(medium_sets, out_root):
    """Final returns for the four ablation cells on the gravity gap.

    10k-step budget: at that horizon the fully corrected variant has
    converged while the uncorrected ones are still climbing, which is what
    exposes the contribution of each term in final-return space.
    """
    _, replay = medium_sets
    cells = {
        "full": {},
        "no_dr": {"train.use_dynamics_ratio": False},
        "no_reg": {"train.use_regularization": False},
        "no_reg_no_dr": {"train.use_regularization": False,
                         "train.use_dynamics_ratio": False},
    }
    returns = {}
    for name, flags in cells.items():
        vals = []
        for seed in SEEDS:
            cfg = _desk_flat("h2o", "gravity", seed,
                             out_root / f"c8_{name}_{seed}", 10_000, **flags)
            vals.append(run_experiment(cfg, dataset=replay).final_return_mean)
        returns[name] = vals
    return returns


# ---------------------------------------------------------------------------
# 1. Gradient correctness


MAX_A = 2.0


def _mse_loss_and_grad(params, x, target):
    y = mlp_forward(params, x)
    resid = y - target
    loss = 0.5 * float(np.sum(resid * resid)) / x.shape[0]
    grads, _ = mlp_backward(params, x, resid / x.shape[0])
    return loss, grads


def test_1_gradient_correctness():
    # every layer geometry the package instantiates: actor (mean + log-std
    # head), critic, and both discriminator nets with their soft-clipped head
    shapes = [
        ([3, 64, 64, 2], "identity"),   # actor
        ([4, 64, 64, 1], "identity"),   # critic on (s, a)
        ([4, 64, 2], "tanh2"),          # marginal discriminator
        ([7, 64, 2], "tanh2"),          # transition discriminator
    ]
    worst_shape = 0.0
    for seed in range(20):
        rng = np.random.default_rng(1000 + seed)
        for sizes, act in shapes:
            params = init_mlp(sizes, rng, output_activation=act)
            x = rng.standard_normal((8, sizes[0]))
            t = rng.standard_normal((8, sizes[-1]))
            err = grad_check(params, lambda p: _mse_loss_and_grad(p, x, t),
                             samples=30, rng=np.random.default_rng(seed))
            worst_shape = max(worst_shape, err)

    def robust_check(params, f, rseed):
        # central differences are invalid when the +-h step straddles a ReLU
        # hinge; a genuine gradient bug stays O(1) at every step size while a
        # hinge artifact collapses, so retry once with a smaller step
        err = grad_check(params, f, samples=40, rng=np.random.default_rng(rseed))
        if err >= 1e-4:
            err = min(err, grad_check(params, f, samples=40,
                                      rng=np.random.default_rng(rseed), h=1e-6))
        return err

    worst_loss = 0.0
    for seed in range(3):
        rng = np.random.default_rng(50 + seed)
        agent = init_agent(3, 1, 12, np.random.default_rng(seed),
                           max_action=MAX_A)
        rb = _random_batch(rng, 8)
        sb = _random_batch(rng, 8)
        pair = _informative_pair(seed)
        cov = _small_cov(seed)

        for algorithm in ("h2o", "h2o_v"):
            cfg = VariantConfig(algorithm=algorithm, batch_size=8)
            ctx = h2o_critic_context(agent, pair, cov, cfg, rb, sb,
                                     np.random.default_rng(seed))

            def f_h2o(params):
                loss, grads, _ = h2o_critic_loss_single(params, rb, sb, ctx, cfg)
                return loss, grads

            worst_loss = max(worst_loss,
                             robust_check(agent.critic1, f_h2o, 200 + seed))

        y = sac_target(agent, rb, np.random.default_rng(seed))

        def f_sac(params):
            loss, grads, _ = bellman_loss_single(params, rb.s, rb.a, y)
            return loss, grads

        worst_loss = max(worst_loss,
                         robust_check(agent.critic1, f_sac, 300 + seed))

        actions, log_q = cql_action_proposals(agent, rb.s, 5,
                                              np.random.default_rng(seed))

        def f_cql(params):
            loss, grads, _ = cql_critic_loss_single(params, rb, y, actions,
                                                    log_q, 2.0, 4.0)
            return loss, grads

        worst_loss = max(worst_loss,
                         robust_check(agent.critic1, f_cql, 400 + seed))

    ok = worst_shape < 1e-4 and worst_loss < 1e-4
    _line(1, ok, f"max shape-level rel err {worst_shape:.2e}, "
                 f"max variant critic-loss rel err {worst_loss:.2e} "
                 f"(threshold 1e-4)")
    assert ok


def _random_batch(rng, n):
    return Batch(
        s=rng.standard_normal((n, 3)),
        a=rng.uniform(-MAX_A, MAX_A, (n, 1)),
        r=rng.uniform(0.0, 17.0, n),
        s_next=rng.standard_normal((n, 3)),
        done=np.zeros(n),
        domain=np.array([DOMAIN_REAL] * n),
    )


def _informative_pair(seed):
    # fresh pairs start as the constant zero function, which would make the
    # ratio terms vanish; randomize the final layers so they carry signal
    rng = np.random.default_rng(700 + seed)
    pair = init_discriminator_pair(3, 1, 8, rng)
    for net in (pair.d_sa, pair.d_sas):
        net.weights[-1][:] = 0.3 * rng.standard_normal(net.weights[-1].shape)
        net.biases[-1][:] = 0.3 * rng.standard_normal(net.biases[-1].shape)
    return pair


def _small_cov(seed):
    rng = np.random.default_rng(800 + seed)
    ts = [
        Transition(rng.standard_normal(3), rng.uniform(-MAX_A, MAX_A, 1),
                   float(rng.uniform(0, 17)), rng.standard_normal(3),
                   False, DOMAIN_REAL)
        for _ in range(40)
    ]
    return state_covariance(Dataset.from_transitions(ts))


# ---------------------------------------------------------------------------
# 2. Closed-form sampling distribution vs constrained numeric maximizer


def _numeric_dphi(omega, q):
    n = len(q)

    def neg_f(d):
        d = np.maximum(d, 1e-300)
        return -(np.sum(d * q) - np.sum(d * np.log(d / omega)))

    def neg_grad(d):
        d = np.maximum(d, 1e-300)
        return -(q - np.log(d / omega) - 1.0)

    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        res = minimize(neg_f, np.full(n, 1.0 / n), jac=neg_grad,
                       method="SLSQP", bounds=[(1e-12, 1.0)] * n,
                       constraints=[{"type": "eq",
                                     "fun": lambda d: d.sum() - 1.0,
                                     "jac": lambda d: np.ones(n)}],
                       options={"ftol": 1e-14, "maxiter": 1000})
    assert res.success
    return res.x


def test_2_closed_form_sampler_matches_numeric_maximizer():
    rng = np.random.default_rng(2)
    worst = 0.0
    for _ in range(50):
        n = int(rng.integers(2, 7))
        omega = rng.dirichlet(np.ones(n))
        q = rng.uniform(-2.0, 3.0, size=n)
        gap = float(np.max(np.abs(closed_form_dphi(omega, q)
                                  - _numeric_dphi(omega, q))))
        worst = max(worst, gap)
    ok = worst < 1e-4
    _line(2, ok, f"50 instances (support <= 6), max L-inf gap {worst:.2e} "
                 f"(threshold 1e-4)")
    assert ok


# ---------------------------------------------------------------------------
# 3. Weighted-mean / log-sum-exp / sharpened-Jensen inequality chain


def test_3_bound_chain_has_no_violations():
    rng = np.random.default_rng(3)
    violations = 0
    for _ in range(1000):
        n = int(rng.integers(2, 9))
        omega = rng.dirichlet(np.ones(n))
        q = rng.uniform(0.1, 5.0, size=n)
        lhs, mid, rhs = logsumexp_bounds(omega, q, float(q.min()))
        if not (lhs <= mid <= rhs):
            violations += 1
    ok = violations == 0
    _line(3, ok, f"{violations}/1000 violations of lhs <= mid <= rhs "
                 f"for Q in [0.1, 5]")
    assert ok


# ---------------------------------------------------------------------------
# 4. Tabular underestimation: exact condition, DP contraction, finite count


def test_4_tabular_underestimation_and_finite_count_consistency():
    n_states, n_actions = 10, 3
    n_cond = 0
    max_violation = 0.0
    worst_decay = 0.0
    worst_drift = 0.0
    monotone = True
    for seed in range(20):
        pair = random_tabular_pair(seed, n_states, n_actions, 0.5)
        prng = np.random.default_rng(10_000 + seed)
        pi_data = prng.dirichlet(np.ones(n_actions), size=n_states)
        pi = prng.dirichlet(np.ones(n_actions), size=n_states)
        dist = build_distributions(pair, pi_data, pi)
        for beta in (0.1, 1.0):
            report = verify_underestimation(pair, pi, dist, beta, tol=1e-8)
            n_cond += report.n_condition_states
            max_violation = max(max_violation, report.max_violation)

            # geometric decay with an absolute slack for float rounding once
            # residuals approach the stopping tolerance (ratios of ~1e-10
            # numbers jitter in their last bits)
            _, residuals = dp_fixed_point(pair, pi, nu_table(dist), beta,
                                          return_residuals=True)
            for prev, cur in zip(residuals, residuals[1:]):
                worst_decay = max(worst_decay, cur - pair.gamma * prev)

            for s in range(n_states):
                _, margin_exact = theorem1_condition(dist, s)
                drifts = [abs(theorem2_condition(dist, s, beta, pair.gamma,
                                                 count)[1] - margin_exact)
                          for count in (1e8, 1e16, 1e24)]
                monotone &= drifts[0] >= drifts[1] >= drifts[2]
                worst_drift = max(worst_drift, drifts[-1])
    ok = (max_violation <= 1e-8 and worst_decay <= 1e-12
          and worst_drift <= 1e-6 and monotone)
    _line(4, ok, f"20 instances x 2 betas: {n_cond} condition states, "
                 f"max overestimation {max_violation:.1e} (tol 1e-8), "
                 f"max DP excess over gamma-decay {worst_decay:.1e} "
                 f"(tol 1e-12), finite-sample margin -> exact margin "
                 f"monotonically ({monotone}), residual {worst_drift:.1e} "
                 f"at count 1e24 (tol 1e-6)")
    assert ok


# ---------------------------------------------------------------------------
# 5. Density-ratio recovery on a synthetic linear-Gaussian task


def test_5_ratio_recovery_on_synthetic_gaussians():
    A = np.array([[0.9, 0.1], [-0.1, 0.8]])
    B = np.array([[0.5], [-0.3]])
    delta = np.array([0.35, 0.0])
    sigma = 0.35

    def draw(n, shifted, rg):
        s = rg.standard_normal((n, 2))
        a = rg.standard_normal((n, 1))
        m = s @ A.T + a @ B.T
        if shifted:
            m = m + delta
        return s, a, m + sigma * rg.standard_normal((n, 2))

    def true_log_ratio(s, a, s_next):
        m = s @ A.T + a @ B.T
        return ((s_next - m) @ delta - 0.5 * delta @ delta) / sigma ** 2

    def batch_of(s, a, sn, idx):
        k = len(idx)
        return Batch(s[idx], a[idx], np.zeros(k), sn[idx],
                     np.zeros(k), np.array([DOMAIN_REAL] * k))

    coverages = []
    for seed in SEEDS:
        rng = np.random.default_rng(seed)
        n = 8000
        sr, ar, snr = draw(n, False, rng)
        ss, as_, sns = draw(n, True, rng)
        cols = np.concatenate([sr, ar], axis=1)
        pair = init_discriminator_pair(
            2, 1, 64, np.random.default_rng(seed + 100),
            norm_mean=cols.mean(0),
            norm_scale=np.maximum(cols.std(0), 1e-3))
        brng = np.random.default_rng(seed + 200)
        for _ in range(4000):
            train_discriminators(pair,
                                 batch_of(sr, ar, snr, brng.integers(0, n, 256)),
                                 batch_of(ss, as_, sns, brng.integers(0, n, 256)))
        prng = np.random.default_rng(seed + 300)
        sp1, ap1, snp1 = draw(500, False, prng)
        sp2, ap2, snp2 = draw(500, True, prng)
        sp = np.concatenate([sp1, sp2])
        ap = np.concatenate([ap1, ap2])
        snp = np.concatenate([snp1, snp2])
        truth = true_log_ratio(sp, ap, snp)
        est = log_dynamics_ratio(pair, sp, ap, snp)
        in_range = (truth >= np.log(0.1)) & (truth <= np.log(10.0))
        coverages.append(float(np.mean(
            np.abs(est[in_range] - truth[in_range]) <= np.log(2.0))))
    ok = min(coverages) >= 0.90
    _line(5, ok, "factor-2 coverage on true ratios in [0.1, 10]: "
                 + ", ".join(f"{c:.3f}" for c in coverages)
                 + " (threshold 0.90)")
    assert ok


# ---------------------------------------------------------------------------
# 6. Zero-gap sanity of the gap measure


def test_6_zero_gap_measure_collapses(out_root):
    real = PendulumConfig()
    dataset, _ = generate_dataset("random", real, 20_000, 0)
    cfg = _desk_flat("h2o", "none", 0, out_root / "c6_zero_gap", 20_000)
    report = run_experiment(cfg, keep_state=True, dataset=dataset)
    art = report.artifacts
    probe = sample_batch(art.buffer, 512, np.random.default_rng(999))
    diag = gap_diagnostic(art.agent, art.pair, art.cov, probe,
                          rng=np.random.default_rng(777))
    u = np.asarray(diag["u"])
    floor_frac = float(np.mean(u <= 10.0 * U_CLIP_LO))
    mean_w = float(np.mean(importance_weight(art.pair, probe.s, probe.a,
                                             probe.s_next)))
    ok = floor_frac >= 0.95 and 0.9 <= mean_w <= 1.0
    _line(6, ok, f"identical dynamics, 20k steps: u at clip floor on "
                 f"{floor_frac:.1%} of probes (need >= 95%), mean importance "
                 f"weight {mean_w:.3f} (need [0.9, 1.0])")
    assert ok, (
        "the trained discriminator pair does not collapse to the "
        "uninformative optimum at zero gap; see notes on estimator bias "
        "under shifting rollout occupancy"
    )


# ---------------------------------------------------------------------------
# 7. Variant ordering: hybrid beats sim-only, matches offline-only


def test_7_variant_ordering(variant_returns):
    details = []
    ok = True
    cql_vals = np.array(variant_returns["cql"])
    for gap in ("gravity", "joint_noise"):
        h2o = np.array(variant_returns[f"{gap}/h2o"])
        sac = np.array(variant_returns[f"{gap}/sac"])
        pooled = math.sqrt((h2o.var(ddof=1) + cql_vals.var(ddof=1)) / 2.0)
        beats_sim = h2o.mean() > sac.mean()
        matches_offline = h2o.mean() >= cql_vals.mean() - pooled
        ok &= beats_sim and matches_offline
        details.append(
            f"{gap}: hybrid {h2o.mean():.0f} vs sim-only {sac.mean():.0f} "
            f"vs offline-only {cql_vals.mean():.0f} (pooled std {pooled:.0f})")
    _line(7, ok, "; ".join(details))
    assert ok


# ---------------------------------------------------------------------------
# 8. Ablation ordering and exact lattice equivalence


def test_8_ablation_ordering_and_lattice(ablation_returns):
    means = {k: float(np.mean(v)) for k, v in ablation_returns.items()}
    dr_helps_with_reg = means["full"] >= means["no_dr"]
    dr_helps_without_reg = means["no_reg"] >= means["no_reg_no_dr"]

    # exact equivalence: with every correction disabled, the critic update is
    # identical (loss and gradients) to plain SAC on the pooled batch
    lattice_exact = True
    for seed in range(5):
        rng = np.random.default_rng(8000 + seed)
        agent = init_agent(3, 1, 10, np.random.default_rng(seed),
                           max_action=MAX_A)
        rb, sb = _random_batch(rng, 8), _random_batch(rng, 8)
        cfg = VariantConfig(algorithm="h2o", batch_size=8,
                            adaptive_omega=False, use_dynamics_ratio=False,
                            use_regularization=False)
        ctx = h2o_critic_context(agent, _informative_pair(seed),
                                 _small_cov(seed), cfg, rb, sb,
                                 np.random.default_rng(seed))
        loss, grads, terms = h2o_critic_loss_single(agent.critic1, rb, sb,
                                                    ctx, cfg)
        l_r, g_r, _ = bellman_loss_single(agent.critic1, rb.s, rb.a, ctx.y_real)
        l_s, g_s, _ = bellman_loss_single(agent.critic1, sb.s, sb.a, ctx.y_sim)
        expect = add_grads(scale_grads(g_r, 0.5), scale_grads(g_s, 0.5))
        lattice_exact &= (loss == 0.5 * l_r + 0.5 * l_s
                          and terms["regularizer"] == 0.0)
        for gw, ew in zip(grads.weights, expect.weights):
            lattice_exact &= np.allclose(gw, ew, rtol=1e-12, atol=1e-15)
        for gb, eb in zip(grads.biases, expect.biases):
            lattice_exact &= np.allclose(gb, eb, rtol=1e-12, atol=1e-15)

    ok = dr_helps_with_reg and dr_helps_without_reg and lattice_exact
    _line(8, ok, f"mean final returns: full {means['full']:.0f} >= "
                 f"no-ratio {means['no_dr']:.0f}: {dr_helps_with_reg}; "
                 f"no-reg {means['no_reg']:.0f} >= neither "
                 f"{means['no_reg_no_dr']:.0f}: {dr_helps_without_reg}; "
                 f"all-off == pooled-batch SAC exactly: {lattice_exact}")
    assert ok


# ---------------------------------------------------------------------------
# 9. Gap measure orders with injected gap severity


def test_9_gap_measure_orders_with_speed(medium_sets, out_root):
    medium, _ = medium_sets
    contrasts = []
    ordered = []
    for seed in SEEDS:
        cfg = _desk_flat("h2o", "velocity_noise", seed,
                         out_root / f"c9_{seed}", 20_000,
                         **{"experiment.eval_episodes": 5})
        report = run_experiment(cfg, keep_state=True, dataset=medium)
        art = report.artifacts
        probe = sample_batch(art.buffer, 512, np.random.default_rng(999 + seed))
        diag = gap_diagnostic(art.agent, art.pair, art.cov, probe,
                              rng=np.random.default_rng(777 + seed))
        top, bottom = quartile_contrast(diag)
        contrasts.append((top, bottom))
        ordered.append(top > bottom)
    ok = all(ordered)
    _line(9, ok, "top vs bottom speed-quartile mean u: "
                 + ", ".join(f"{t:.2f}>{b:.2f}" for t, b in contrasts)
                 + f" -> ordered on {sum(ordered)}/3 seeds (need 3/3)")
    assert ok


# ---------------------------------------------------------------------------
# 10. Determinism and artifact round-trips


def test_10_determinism_and_round_trips(out_root, medium_sets):
    medium, _ = medium_sets
    csv_bytes = []
    for rep in range(2):
        cfg = _desk_flat("h2o", "gravity", 7, out_root / f"c10_run{rep}", 60,
                         **{"experiment.eval_every": 30,
                            "experiment.eval_episodes": 2})
        run_experiment(cfg, dataset=medium)
        csv_bytes.append((out_root / f"c10_run{rep}" / "metrics.csv").read_bytes())
    identical = csv_bytes[0] == csv_bytes[1]

    ds_path = out_root / "c10_dataset.npz"
    save_dataset(medium, ds_path)
    loaded = load_dataset(ds_path)
    dataset_ok = all(
        np.array_equal(getattr(medium, f), getattr(loaded, f))
        for f in ("s", "a", "r", "s_next", "done"))

    agent, pair, cov, manifest = load_checkpoint(out_root / "c10_run0")
    files = manifest["files"]
    reload_ok = True
    for name, net in (("actor", agent.actor), ("critic1", agent.critic1),
                      ("critic2", agent.critic2), ("disc_sa", pair.d_sa),
                      ("disc_sas", pair.d_sas)):
        again = load_params(out_root / "c10_run0" / files[name])
        for w1, w2 in zip(net.weights, again.weights):
            reload_ok &= np.array_equal(w1, w2)
        for b1, b2 in zip(net.biases, again.biases):
            reload_ok &= np.array_equal(b1, b2)

    ok = identical and dataset_ok and reload_ok
    _line(10, ok, f"same (config, seed) twice -> byte-identical metrics CSV: "
                  f"{identical}; dataset bit-exact round-trip: {dataset_ok}; "
                  f"checkpoint bit-exact reload: {reload_ok}")
    assert ok
