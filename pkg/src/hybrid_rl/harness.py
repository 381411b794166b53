"""Experiment harness: flat-file configuration, seeded end-to-end runs,
real-environment evaluation, CSV/SVG artifacts, dataset-generation
protocols, the dynamics-gap diagnostic, and the tabular verification driver.

One master seed is split into named independent streams (env, policy, batch,
disc, eval, data) so that adding or removing an evaluation point can never
perturb the training trajectory, and the same (config, seed) always yields
byte-identical metric files.
"""

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .agents import (
    AgentState,
    SimRollout,
    VariantConfig,
    init_agent,
    policy_mean,
    policy_sample,
    train_step,
)
from .data import (
    COV_RIDGE,
    DOMAIN_REAL,
    DOMAIN_SIM,
    Batch,
    Dataset,
    ReplayBuffer,
    StateCovariance,
    collect_dataset,
    load_dataset,
    state_covariance,
)
from .envs import (
    ACTION_DIM,
    OBS_DIM,
    PendulumConfig,
    PendulumEnv,
    make_gap_variant,
    random_tabular_pair,
    velocity_noise_variant,
)
from .gap import (
    DiscriminatorPair,
    fit_gaussian_dynamics,
    gap_measure_u,
    init_discriminator_pair,
)
from .nn import init_adam, load_params, mlp_forward, save_params
from .tabular import (
    build_distributions,
    closed_form_dphi,
    logsumexp_bounds,
    theorem1_condition,
    theorem2_condition,
    verify_underestimation,
)
from .util import RngStreams, fmt_float, parse_float


class ConfigError(ValueError):
    """Raised for malformed configuration files or invalid settings."""


GAP_CHOICES = ("gravity", "friction", "joint_noise", "none", "velocity_noise")
DATASET_PROTOCOLS = ("random", "medium", "medium_replay")

METRICS_HEADER = "step,return_mean,return_std,loss_critic,loss_actor,mean_u,mean_w"

# Single source of truth for config keys and defaults; unknown keys are
# hard errors so typos cannot silently fall back to defaults.
CONFIG_DEFAULTS = {
    "experiment.variant": "h2o",
    "experiment.env": "pendulum",
    "experiment.gap": "gravity",
    "experiment.total_steps": 100_000,
    "experiment.eval_every": 2_000,
    "experiment.eval_episodes": 10,
    "experiment.seed": 0,
    "experiment.dataset": "",            # path; empty -> generate per protocol
    "experiment.dataset_protocol": "random",
    "experiment.dataset_size": 50_000,
    "experiment.out": "runs/out",
    "train.hidden_units": 256,
    "train.n_hidden_layers": 2,
    "train.disc_hidden_units": 256,
    "train.learning_rate": 3e-4,
    "train.gamma": 0.99,
    "train.tau": 5e-3,
    "train.batch_size": 256,
    "train.real_batch_size": 32,
    "train.buffer_size": 0,              # 0 -> variant-dependent default
    "train.beta": 0.01,
    "train.alpha_cql": 2.0,
    "train.delta_r_clip": 10.0,
    "train.n_cql_actions": 10,
    "train.kl_samples": 10,
    "train.real_fraction": 0.5,
    "train.adaptive_omega": True,
    "train.use_dynamics_ratio": True,
    "train.use_regularization": True,
    "train.disc_update_every": 1,
    "train.reverse_kl": False,
}

SAC_BUFFER_DEFAULT = 1_000_000
H2O_BUFFER_MULTIPLE = 10


def _coerce(key: str, text: str):
    default = CONFIG_DEFAULTS[key]
    if isinstance(default, bool):
        low = text.lower()
        if low in ("true", "1", "yes", "on"):
            return True
        if low in ("false", "0", "no", "off"):
            return False
        raise ConfigError(f"{key}: expected a boolean, got {text!r}")
    if isinstance(default, int):
        try:
            return int(text)
        except ValueError:
            raise ConfigError(f"{key}: expected an integer, got {text!r}") from None
    if isinstance(default, float):
        try:
            return parse_float(text)
        except ValueError:
            raise ConfigError(f"{key}: expected a number, got {text!r}") from None
    return text


def parse_config_text(text: str) -> dict:
    """Parse flat `section.key = value` lines; '#' starts a comment."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if key not in CONFIG_DEFAULTS:
            raise ConfigError(f"line {lineno}: unknown config key {key!r}")
        out[key] = _coerce(key, value)
    return out


def load_config_file(path) -> dict:
    with open(path) as f:
        return parse_config_text(f.read())


@dataclass
class ExperimentConfig:
    """Fully resolved run description; `seed` determines everything."""

    variant: VariantConfig
    env: str = "pendulum"
    gap: str = "gravity"
    total_steps: int = 100_000
    eval_every: int = 2_000
    eval_episodes: int = 10
    seed: int = 0
    dataset_path: str = ""
    dataset_protocol: str = "random"
    dataset_size: int = 50_000
    out_dir: str = "runs/out"
    hidden_units: int = 256
    n_hidden_layers: int = 2
    disc_hidden_units: int = 256
    learning_rate: float = 3e-4
    gamma: float = 0.99
    tau: float = 5e-3
    buffer_size: int = 0

    def __post_init__(self):
        if self.env != "pendulum":
            raise ConfigError(f"unknown env {self.env!r}")
        if self.gap not in GAP_CHOICES:
            raise ConfigError(f"unknown gap kind {self.gap!r}; choices: {GAP_CHOICES}")
        if self.dataset_protocol not in DATASET_PROTOCOLS:
            raise ConfigError(f"unknown dataset protocol {self.dataset_protocol!r}")
        if self.total_steps < 0:
            raise ConfigError("total_steps must be >= 0")
        if self.eval_every < 1 or self.eval_episodes < 1:
            raise ConfigError("eval_every and eval_episodes must be >= 1")
        if self.dataset_size < 1:
            raise ConfigError("dataset_size must be >= 1")
        if self.hidden_units < 1 or self.n_hidden_layers < 1 or self.disc_hidden_units < 1:
            raise ConfigError("network sizes must be >= 1")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be > 0")
        if not 0.0 < self.gamma < 1.0:
            raise ConfigError("gamma must lie in (0, 1)")
        if not 0.0 < self.tau <= 1.0:
            raise ConfigError("tau must lie in (0, 1]")
        if self.buffer_size < 0:
            raise ConfigError("buffer_size must be >= 0")

    def to_flat(self) -> dict:
        v = self.variant
        return {
            "experiment.variant": v.algorithm,
            "experiment.env": self.env,
            "experiment.gap": self.gap,
            "experiment.total_steps": self.total_steps,
            "experiment.eval_every": self.eval_every,
            "experiment.eval_episodes": self.eval_episodes,
            "experiment.seed": self.seed,
            "experiment.dataset": self.dataset_path,
            "experiment.dataset_protocol": self.dataset_protocol,
            "experiment.dataset_size": self.dataset_size,
            "experiment.out": self.out_dir,
            "train.hidden_units": self.hidden_units,
            "train.n_hidden_layers": self.n_hidden_layers,
            "train.disc_hidden_units": self.disc_hidden_units,
            "train.learning_rate": self.learning_rate,
            "train.gamma": self.gamma,
            "train.tau": self.tau,
            "train.batch_size": v.batch_size,
            "train.real_batch_size": v.real_batch_size,
            "train.buffer_size": self.buffer_size,
            "train.beta": v.beta,
            "train.alpha_cql": v.alpha_cql,
            "train.delta_r_clip": v.delta_r_clip,
            "train.n_cql_actions": v.n_cql_actions,
            "train.kl_samples": v.kl_samples,
            "train.real_fraction": v.real_fraction,
            "train.adaptive_omega": v.adaptive_omega,
            "train.use_dynamics_ratio": v.use_dynamics_ratio,
            "train.use_regularization": v.use_regularization,
            "train.disc_update_every": v.disc_update_every,
            "train.reverse_kl": v.reverse_kl,
        }


def experiment_from_flat(flat: dict) -> ExperimentConfig:
    """Merge a flat key dict over the defaults and build a run description."""
    merged = dict(CONFIG_DEFAULTS)
    for key, value in flat.items():
        if key not in CONFIG_DEFAULTS:
            raise ConfigError(f"unknown config key {key!r}")
        merged[key] = value
    try:
        variant = VariantConfig(
            algorithm=merged["experiment.variant"],
            beta=merged["train.beta"],
            alpha_cql=merged["train.alpha_cql"],
            adaptive_omega=merged["train.adaptive_omega"],
            use_dynamics_ratio=merged["train.use_dynamics_ratio"],
            use_regularization=merged["train.use_regularization"],
            delta_r_clip=merged["train.delta_r_clip"],
            n_cql_actions=merged["train.n_cql_actions"],
            kl_samples=merged["train.kl_samples"],
            real_fraction=merged["train.real_fraction"],
            batch_size=merged["train.batch_size"],
            real_batch_size=merged["train.real_batch_size"],
            disc_update_every=merged["train.disc_update_every"],
            reverse_kl=merged["train.reverse_kl"],
        )
    except ValueError as e:
        raise ConfigError(str(e)) from None
    return ExperimentConfig(
        variant=variant,
        env=merged["experiment.env"],
        gap=merged["experiment.gap"],
        total_steps=merged["experiment.total_steps"],
        eval_every=merged["experiment.eval_every"],
        eval_episodes=merged["experiment.eval_episodes"],
        seed=merged["experiment.seed"],
        dataset_path=merged["experiment.dataset"],
        dataset_protocol=merged["experiment.dataset_protocol"],
        dataset_size=merged["experiment.dataset_size"],
        out_dir=merged["experiment.out"],
        hidden_units=merged["train.hidden_units"],
        n_hidden_layers=merged["train.n_hidden_layers"],
        disc_hidden_units=merged["train.disc_hidden_units"],
        learning_rate=merged["train.learning_rate"],
        gamma=merged["train.gamma"],
        tau=merged["train.tau"],
        buffer_size=merged["train.buffer_size"],
    )


def sim_config_for(real_cfg: PendulumConfig, gap: str) -> PendulumConfig:
    """The simulator config implied by a named sim-to-real gap."""
    if gap == "none":
        return real_cfg
    if gap == "velocity_noise":
        return velocity_noise_variant(real_cfg)
    return make_gap_variant(real_cfg, gap)


# ---------------------------------------------------------------------------
# Evaluation


def evaluate_policy(env_cfg: PendulumConfig, agent: AgentState, episodes: int,
                    seed: int):
    """Mean and std of undiscounted returns under the deterministic policy.

    Builds its own environment and generator from `seed`, so calling it can
    never disturb training state.
    """
    if episodes < 1:
        raise ValueError("episodes must be >= 1")
    rng = np.random.default_rng(seed)
    env = PendulumEnv(env_cfg, rng)
    returns = np.empty(episodes)
    for ep in range(episodes):
        obs = env.reset()
        total = 0.0
        while True:
            obs, r, done = env.step(policy_mean(agent, obs))
            total += r
            if done:
                break
        returns[ep] = total
    return float(np.mean(returns)), float(np.std(returns))


# ---------------------------------------------------------------------------
# Reports and artifacts


@dataclass
class RunArtifacts:
    """Live training state kept only when the caller asks for it."""

    agent: AgentState
    pair: object
    cov: object
    buffer: object
    dataset: object
    sim_cfg: PendulumConfig
    real_cfg: PendulumConfig


@dataclass
class RunReport:
    seed: int
    eval_steps: list
    return_mean: list
    return_std: list
    train_steps: list
    loss_critic: list
    loss_actor: list
    mean_u: list
    mean_w: list
    omega_entropy: list
    manifest: dict = field(default_factory=dict)
    config: dict = field(default_factory=dict)
    artifacts: RunArtifacts = None

    def __post_init__(self):
        if not self.eval_steps:
            raise ValueError("a report needs at least one evaluation point")
        steps = list(self.eval_steps)
        if any(b <= a for a, b in zip(steps, steps[1:])):
            raise ValueError("evaluation steps must be strictly increasing")

    @property
    def final_return_mean(self):
        return self.return_mean[-1]

    @property
    def final_return_std(self):
        return self.return_std[-1]

    def window_means(self):
        """Per-eval-point means of the training metrics since the previous
        eval point; the pre-training row gets neutral values."""
        rows = []
        prev = 0
        for step in self.eval_steps:
            lo, hi = prev, step          # train_steps[j] == j + 1
            if hi > lo:
                sl = slice(lo, hi)
                rows.append((
                    float(np.mean(self.loss_critic[sl])),
                    float(np.mean(self.loss_actor[sl])),
                    float(np.mean(self.mean_u[sl])),
                    float(np.mean(self.mean_w[sl])),
                ))
            else:
                rows.append((0.0, 0.0, 0.0, 1.0))
            prev = step
        return rows


def write_metrics_csv(report: RunReport, path):
    lines = [METRICS_HEADER]
    for (step, rm, rs), (lc, la, mu, mw) in zip(
            zip(report.eval_steps, report.return_mean, report.return_std),
            report.window_means()):
        cells = [str(step)] + [fmt_float(v) for v in (rm, rs, lc, la, mu, mw)]
        lines.append(",".join(cells))
    Path(path).write_text("\n".join(lines) + "\n")


def read_metrics_csv(path) -> dict:
    text = Path(path).read_text().splitlines()
    if not text or text[0] != METRICS_HEADER:
        raise ValueError(f"{path}: not a metrics CSV")
    cols = METRICS_HEADER.split(",")
    out = {c: [] for c in cols}
    for line in text[1:]:
        parts = line.split(",")
        if len(parts) != len(cols):
            raise ValueError(f"{path}: malformed row {line!r}")
        out["step"].append(int(parts[0]))
        for c, p in zip(cols[1:], parts[1:]):
            out[c].append(parse_float(p))
    return out


# ---------------------------------------------------------------------------
# SVG emission

SVG_WIDTH = 640
SVG_HEIGHT = 400
_MARGIN_L, _MARGIN_R, _MARGIN_T, _MARGIN_B = 64, 16, 16, 44
_PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#8c564b", "#e377c2")


def _axis_range(values):
    lo, hi = float(min(values)), float(max(values))
    if hi == lo:
        lo, hi = lo - 1.0, hi + 1.0
    pad = 0.05 * (hi - lo)
    return lo - pad, hi + pad


def write_curve_svg(path, series, labels=None, x_label="step", y_label="return"):
    """Self-contained line chart; `series` is a list of (xs, ys) pairs."""
    if not series or any(len(xs) == 0 for xs, _ in series):
        raise ValueError("series must be non-empty")
    xlo, xhi = _axis_range([x for xs, _ in series for x in xs])
    ylo, yhi = _axis_range([y for _, ys in series for y in ys])
    px0, px1 = _MARGIN_L, SVG_WIDTH - _MARGIN_R
    py0, py1 = SVG_HEIGHT - _MARGIN_B, _MARGIN_T

    def sx(x):
        return px0 + (x - xlo) / (xhi - xlo) * (px1 - px0)

    def sy(y):
        return py0 + (y - ylo) / (yhi - ylo) * (py1 - py0)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{SVG_WIDTH}" '
        f'height="{SVG_HEIGHT}" viewBox="0 0 {SVG_WIDTH} {SVG_HEIGHT}">',
        f'<rect width="{SVG_WIDTH}" height="{SVG_HEIGHT}" fill="white"/>',
        f'<rect x="{px0}" y="{py1}" width="{px1 - px0}" height="{py0 - py1}" '
        'fill="none" stroke="#444444"/>',
    ]
    for i in range(5):
        fx = xlo + (xhi - xlo) * i / 4
        fy = ylo + (yhi - ylo) * i / 4
        x, y = sx(fx), sy(fy)
        parts.append(f'<line x1="{x:.2f}" y1="{py0}" x2="{x:.2f}" y2="{py0 + 4}" '
                     'stroke="#444444"/>')
        parts.append(f'<text x="{x:.2f}" y="{py0 + 18}" font-size="11" '
                     f'text-anchor="middle" fill="#222222">{fx:.6g}</text>')
        parts.append(f'<line x1="{px0 - 4}" y1="{y:.2f}" x2="{px0}" y2="{y:.2f}" '
                     'stroke="#444444"/>')
        parts.append(f'<text x="{px0 - 7}" y="{y + 4:.2f}" font-size="11" '
                     f'text-anchor="end" fill="#222222">{fy:.6g}</text>')
    parts.append(f'<text x="{(px0 + px1) / 2:.2f}" y="{SVG_HEIGHT - 8}" '
                 f'font-size="12" text-anchor="middle" fill="#222222">{x_label}</text>')
    parts.append(f'<text x="14" y="{(py0 + py1) / 2:.2f}" font-size="12" '
                 f'text-anchor="middle" fill="#222222" '
                 f'transform="rotate(-90 14 {(py0 + py1) / 2:.2f})">{y_label}</text>')
    for k, (xs, ys) in enumerate(series):
        color = _PALETTE[k % len(_PALETTE)]
        pts = " ".join(f"{sx(x):.2f},{sy(y):.2f}" for x, y in zip(xs, ys))
        if len(xs) > 1:
            parts.append(f'<polyline points="{pts}" fill="none" stroke="{color}" '
                         'stroke-width="1.5"/>')
        for x, y in zip(xs, ys):
            parts.append(f'<circle cx="{sx(x):.2f}" cy="{sy(y):.2f}" r="3" '
                         f'fill="{color}"/>')
    if labels:
        for k, label in enumerate(labels):
            color = _PALETTE[k % len(_PALETTE)]
            y = py1 + 16 + 16 * k
            parts.append(f'<line x1="{px0 + 8}" y1="{y - 4}" x2="{px0 + 28}" '
                         f'y2="{y - 4}" stroke="{color}" stroke-width="2"/>')
            parts.append(f'<text x="{px0 + 33}" y="{y}" font-size="11" '
                         f'fill="#222222">{label}</text>')
    parts.append("</svg>")
    Path(path).write_text("\n".join(parts) + "\n")


def emit_curves(report: RunReport, out_dir):
    """Write metrics.csv and curve.svg for one run; returns their paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    csv_path = out / "metrics.csv"
    svg_path = out / "curve.svg"
    write_metrics_csv(report, csv_path)
    write_curve_svg(svg_path, [(report.eval_steps, report.return_mean)])
    return {"csv": str(csv_path), "svg": str(svg_path)}


def write_overlay_svg(csv_paths, out_path, labels=None):
    """One polyline per metrics CSV (multi-seed overlay of return vs step)."""
    series = []
    names = []
    for p in csv_paths:
        table = read_metrics_csv(p)
        series.append((table["step"], table["return_mean"]))
        names.append(Path(p).parent.name or Path(p).stem)
    write_curve_svg(out_path, series, labels=labels if labels else names)


# ---------------------------------------------------------------------------
# Dataset generation protocols


def _zero_policy(_obs):
    return np.zeros(ACTION_DIM)


@dataclass
class MediumProtocolResult:
    dataset: Dataset
    replay: Dataset
    snapshot_step: int
    random_return: float
    converged_return: float
    threshold: float
    snapshot_return: float
    eval_steps: list
    eval_returns: list

    def meta(self) -> dict:
        return {
            "snapshot_step": self.snapshot_step,
            "random_return": self.random_return,
            "converged_return": self.converged_return,
            "threshold": self.threshold,
            "snapshot_return": self.snapshot_return,
            "eval_steps": list(self.eval_steps),
            "eval_returns": list(self.eval_returns),
        }


def _store_prefix_dataset(store, n, domain=DOMAIN_REAL) -> Dataset:
    """Copy the first n stored rows into an immutable Dataset."""
    if n < 1 or n > store.size:
        raise ValueError("bad prefix length")
    ds = Dataset(n, store.s_dim, store.a_dim)
    ds.s[:] = store.s[:n]
    ds.a[:] = store.a[:n]
    ds.r[:] = store.r[:n]
    ds.s_next[:] = store.s_next[:n]
    ds.done[:] = store.done[:n]
    ds.domain[:] = domain
    ds.size = n
    return ds


def run_medium_protocol(real_cfg: PendulumConfig, seed: int, *,
                        total_steps=100_000, eval_every=2_000, eval_episodes=10,
                        n_transitions=50_000, exploration_noise_std=0.1,
                        hidden_units=256, n_hidden_layers=2, batch_size=256,
                        learning_rate=3e-4) -> MediumProtocolResult:
    """Train an online agent on the real environment; snapshot its policy the
    first time evaluation return crosses halfway between the initial (random)
    and final (converged) returns, then collect a noisy medium-quality
    dataset from the snapshot. The replay prefix up to the snapshot moment
    becomes the medium-replay dataset.
    """
    if total_steps < 1:
        raise ValueError("total_steps must be >= 1")
    streams = RngStreams(seed)
    agent = init_agent(OBS_DIM, ACTION_DIM, hidden_units, streams.init,
                       lr=learning_rate, max_action=real_cfg.max_torque,
                       n_hidden_layers=n_hidden_layers)
    cfg = VariantConfig(algorithm="sac", batch_size=batch_size)
    buffer = ReplayBuffer(total_steps, OBS_DIM, ACTION_DIM)
    rollout = SimRollout(PendulumEnv(real_cfg, streams.env))

    evals = []        # (step, return, actor copy, buffer rows at that moment)

    def do_eval(step):
        ev_seed = int(streams.eval.integers(2 ** 63 - 1))
        mean, _ = evaluate_policy(real_cfg, agent, eval_episodes, ev_seed)
        evals.append((step, mean, agent.actor.copy(), buffer.size))

    do_eval(0)
    for t in range(1, total_steps + 1):
        train_step(agent, cfg, rollout, None, buffer, None, None, streams, t)
        if t % eval_every == 0:
            do_eval(t)
    if evals[-1][0] != total_steps:
        do_eval(total_steps)

    random_return = evals[0][1]
    converged_return = evals[-1][1]
    threshold = random_return + 0.5 * (converged_return - random_return)
    pick = next((e for e in evals[1:] if e[1] >= threshold), evals[-1])
    step_at, return_at, actor_at, rows_at = pick

    snap_agent = dataclasses.replace(agent, actor=actor_at)
    data_seed = int(streams.data.integers(2 ** 63 - 1))
    transitions = collect_dataset(real_cfg, lambda obs: policy_mean(snap_agent, obs),
                                  n_transitions, exploration_noise_std, data_seed)
    medium = Dataset.from_transitions(transitions)
    replay = _store_prefix_dataset(buffer, max(rows_at, 1))
    return MediumProtocolResult(
        dataset=medium, replay=replay, snapshot_step=step_at,
        random_return=random_return, converged_return=converged_return,
        threshold=threshold, snapshot_return=return_at,
        eval_steps=[e[0] for e in evals], eval_returns=[e[1] for e in evals],
    )


def generate_dataset(protocol: str, real_cfg: PendulumConfig, size: int,
                     seed: int, **medium_kwargs):
    """Returns (Dataset, meta dict) for a named generation protocol.

    `random`: zero policy plus full-scale exploration noise.
    `medium` / `medium_replay`: see run_medium_protocol.
    """
    if protocol == "random":
        transitions = collect_dataset(real_cfg, _zero_policy, size,
                                      real_cfg.max_torque, seed)
        return Dataset.from_transitions(transitions), {"protocol": "random"}
    if protocol in ("medium", "medium_replay"):
        result = run_medium_protocol(real_cfg, seed, n_transitions=size,
                                     **medium_kwargs)
        meta = result.meta()
        meta["protocol"] = protocol
        ds = result.dataset if protocol == "medium" else result.replay
        return ds, meta
    raise ConfigError(f"unknown dataset protocol {protocol!r}")


# ---------------------------------------------------------------------------
# Checkpoints


def write_checkpoint(out_dir, cfg: ExperimentConfig, agent: AgentState, pair,
                     cov, step: int) -> dict:
    ck = Path(out_dir) / "checkpoints"
    ck.mkdir(parents=True, exist_ok=True)
    files = {}
    for name, params in (("actor", agent.actor), ("critic1", agent.critic1),
                         ("critic2", agent.critic2)):
        save_params(params, ck / f"{name}.txt")
        files[name] = f"checkpoints/{name}.txt"
    if pair is not None:
        save_params(pair.d_sa, ck / "disc_sa.txt")
        save_params(pair.d_sas, ck / "disc_sas.txt")
        files["disc_sa"] = "checkpoints/disc_sa.txt"
        files["disc_sas"] = "checkpoints/disc_sas.txt"
    manifest = {
        "algorithm": cfg.variant.algorithm,
        "gap": cfg.gap,
        "seed": cfg.seed,
        "step": step,
        "obs_dim": agent.obs_dim,
        "action_dim": agent.action_dim,
        "max_action": agent.max_action,
        "gamma": agent.gamma,
        "tau": agent.tau,
        "learning_rate": cfg.learning_rate,
        "log_temperature": agent.log_temperature,
        "files": files,
    }
    if pair is not None and pair.norm_mean is not None:
        manifest["norm_mean"] = [float(v) for v in pair.norm_mean]
        manifest["norm_scale"] = [float(v) for v in pair.norm_scale]
    if cov is not None:
        manifest["state_mean"] = [float(v) for v in cov.mean]
        manifest["state_cov"] = [[float(v) for v in row] for row in cov.cov]
    with open(Path(out_dir) / "manifest.json", "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
    return manifest


def load_checkpoint(out_dir):
    """Rebuild (agent, pair-or-None, cov-or-None, manifest) for evaluation.

    Optimizer moments and target networks are not persisted; loaded agents
    are for evaluation and diagnostics, not resuming training.
    """
    out = Path(out_dir)
    with open(out / "manifest.json") as f:
        manifest = json.load(f)
    files = manifest["files"]
    actor = load_params(out / files["actor"])
    critic1 = load_params(out / files["critic1"])
    critic2 = load_params(out / files["critic2"])
    lr = manifest["learning_rate"]
    agent = AgentState(
        actor=actor, critic1=critic1, critic2=critic2,
        target1=critic1.copy(), target2=critic2.copy(),
        adam_actor=init_adam(actor, lr),
        adam_critic1=init_adam(critic1, lr),
        adam_critic2=init_adam(critic2, lr),
        obs_dim=manifest["obs_dim"], action_dim=manifest["action_dim"],
        max_action=manifest["max_action"],
        log_temperature=manifest["log_temperature"],
        gamma=manifest["gamma"], tau=manifest["tau"], temp_lr=lr,
    )
    pair = None
    if "disc_sa" in files:
        d_sa = load_params(out / files["disc_sa"])
        d_sas = load_params(out / files["disc_sas"])
        norm_mean = norm_scale = None
        if "norm_mean" in manifest:
            norm_mean = np.array(manifest["norm_mean"])
            norm_scale = np.array(manifest["norm_scale"])
        pair = DiscriminatorPair(d_sa, d_sas, init_adam(d_sa, lr),
                                 init_adam(d_sas, lr),
                                 manifest["obs_dim"], manifest["action_dim"],
                                 norm_mean, norm_scale)
    cov = None
    if "state_mean" in manifest:
        mean = np.array(manifest["state_mean"])
        raw = np.array(manifest["state_cov"])
        reg = raw + COV_RIDGE * np.eye(raw.shape[0])
        cov = StateCovariance(mean, raw, reg, np.linalg.cholesky(reg))
    return agent, pair, cov, manifest


def covariance_from_states(states) -> StateCovariance:
    """Ridge-regularized covariance of raw state rows (diagnostic fallback
    when no offline dataset is at hand)."""
    states = np.asarray(states, dtype=np.float64)
    mean = states.mean(axis=0)
    centered = states - mean
    n = states.shape[0]
    cov = (centered.T @ centered / (n - 1) if n > 1
           else np.zeros((states.shape[1], states.shape[1])))
    reg = cov + COV_RIDGE * np.eye(states.shape[1])
    return StateCovariance(mean, cov, reg, np.linalg.cholesky(reg))


# ---------------------------------------------------------------------------
# Main run loop


def _discriminator_norm(dataset):
    """Per-dimension standardization stats for discriminator inputs."""
    n = dataset.size
    cols = np.concatenate([dataset.s[:n], dataset.a[:n]], axis=1)
    mean = cols.mean(axis=0)
    scale = np.maximum(cols.std(axis=0), 1e-3)
    return mean, scale


def run_experiment(cfg: ExperimentConfig, keep_state=False,
                   dataset=None) -> RunReport:
    """Execute one fully seeded training run and write its artifacts.

    Evaluation happens before training, every `eval_every` steps, and at the
    final step; all evaluation randomness comes from a dedicated stream so
    the training trajectory is identical regardless of evaluation cadence.
    An already-loaded `dataset` may be passed to skip disk/generation work.
    """
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    streams = RngStreams(cfg.seed)
    variant = cfg.variant
    real_cfg = PendulumConfig()
    sim_cfg = sim_config_for(real_cfg, cfg.gap)

    if variant.uses_dataset and dataset is None:
        if cfg.dataset_path:
            dataset = load_dataset(cfg.dataset_path)
        else:
            gen_seed = int(streams.data.integers(2 ** 63 - 1))
            dataset, _ = generate_dataset(cfg.dataset_protocol, real_cfg,
                                          cfg.dataset_size, gen_seed)
    if not variant.uses_dataset:
        dataset = None

    agent = init_agent(OBS_DIM, ACTION_DIM, cfg.hidden_units, streams.init,
                       lr=cfg.learning_rate, gamma=cfg.gamma, tau=cfg.tau,
                       max_action=real_cfg.max_torque,
                       n_hidden_layers=cfg.n_hidden_layers)
    pair = None
    if variant.uses_discriminators:
        norm_mean, norm_scale = _discriminator_norm(dataset)
        pair = init_discriminator_pair(OBS_DIM, ACTION_DIM, cfg.disc_hidden_units,
                                       streams.init, lr=cfg.learning_rate,
                                       norm_mean=norm_mean, norm_scale=norm_scale)
    cov = None
    gap_model = None
    if variant.algorithm in ("h2o", "h2o_v") and variant.adaptive_omega:
        cov = state_covariance(dataset)
        if variant.reverse_kl:
            gap_model = fit_gaussian_dynamics(dataset)

    buffer = rollout = None
    if variant.uses_sim_env:
        capacity = cfg.buffer_size
        if capacity == 0:
            capacity = (H2O_BUFFER_MULTIPLE * dataset.size
                        if variant.algorithm in ("h2o", "h2o_v")
                        else SAC_BUFFER_DEFAULT)
        buffer = ReplayBuffer(capacity, OBS_DIM, ACTION_DIM)
        rollout = SimRollout(PendulumEnv(sim_cfg, streams.env))

    eval_steps, return_mean, return_std = [], [], []
    train_steps, loss_critic, loss_actor = [], [], []
    mean_u, mean_w, omega_entropy = [], [], []
    last_metrics = None

    def do_eval(step):
        ev_seed = int(streams.eval.integers(2 ** 63 - 1))
        mean, std = evaluate_policy(real_cfg, agent, cfg.eval_episodes, ev_seed)
        eval_steps.append(step)
        return_mean.append(mean)
        return_std.append(std)

    try:
        do_eval(0)
        for t in range(1, cfg.total_steps + 1):
            m = train_step(agent, variant, rollout, dataset, buffer, pair, cov,
                           streams, t, gap_model=gap_model)
            last_metrics = m
            train_steps.append(t)
            loss_critic.append(m.loss_critic)
            loss_actor.append(m.loss_actor)
            mean_u.append(m.mean_u)
            mean_w.append(m.mean_w)
            omega_entropy.append(m.omega_entropy)
            if t % cfg.eval_every == 0:
                do_eval(t)
        if eval_steps[-1] != cfg.total_steps and cfg.total_steps > 0:
            do_eval(cfg.total_steps)
    except Exception as e:
        bundle = {
            "error": f"{type(e).__name__}: {e}",
            "step": len(train_steps),
            "config": cfg.to_flat(),
            "last_metrics": dataclasses.asdict(last_metrics) if last_metrics else None,
        }
        with open(out / "diagnostic.json", "w") as f:
            json.dump(bundle, f, indent=2, sort_keys=True, default=str)
        raise

    manifest = write_checkpoint(cfg.out_dir, cfg, agent, pair, cov,
                                cfg.total_steps)
    report = RunReport(
        seed=cfg.seed, eval_steps=eval_steps, return_mean=return_mean,
        return_std=return_std, train_steps=train_steps,
        loss_critic=loss_critic, loss_actor=loss_actor, mean_u=mean_u,
        mean_w=mean_w, omega_entropy=omega_entropy, manifest=manifest,
        config=cfg.to_flat(),
    )
    if keep_state:
        report.artifacts = RunArtifacts(agent, pair, cov, buffer, dataset,
                                        sim_cfg, real_cfg)
    emit_curves(report, cfg.out_dir)
    summary = {
        "seed": cfg.seed,
        "variant": variant.algorithm,
        "gap": cfg.gap,
        "eval_steps": eval_steps,
        "return_mean": return_mean,
        "return_std": return_std,
        "final_return_mean": report.final_return_mean,
        "final_return_std": report.final_return_std,
    }
    with open(out / "report.json", "w") as f:
        json.dump(summary, f, indent=2, sort_keys=True)
    return report


# ---------------------------------------------------------------------------
# Dynamics-gap diagnostic


def gap_diagnostic(agent: AgentState, pair, cov, probe_batch: Batch,
                   n_samples=10, rng=None, feature_fn=None) -> dict:
    """Per-probe scalar feature, gap measure u, and conservative Q.

    The default feature is the pendulum's absolute angular velocity (third
    observation component), matching the diagnostic scatter the estimator is
    expected to expose: probes in fast regimes should receive larger u when
    noise scales with speed.
    """
    if rng is None:
        rng = np.random.default_rng(0)
    if feature_fn is None:
        feature_fn = lambda s: np.abs(s[:, 2])
    s, a = probe_batch.s, probe_batch.a
    u = gap_measure_u(pair, s, a, probe_batch.s_next, cov, n_samples, rng)
    x = np.concatenate([s, a], axis=1)
    q = np.minimum(mlp_forward(agent.critic1, x)[:, 0],
                   mlp_forward(agent.critic2, x)[:, 0])
    return {"feature": feature_fn(s), "u": u, "q": q}


def write_diagnostic_csv(table: dict, path):
    lines = ["feature,u,q"]
    for f, u, q in zip(table["feature"], table["u"], table["q"]):
        lines.append(",".join(fmt_float(v) for v in (f, u, q)))
    Path(path).write_text("\n".join(lines) + "\n")


def quartile_contrast(table: dict):
    """Mean u over the top feature quartile minus the bottom quartile."""
    feature = np.asarray(table["feature"])
    u = np.asarray(table["u"])
    lo_cut, hi_cut = np.quantile(feature, [0.25, 0.75])
    lo = u[feature <= lo_cut]
    hi = u[feature >= hi_cut]
    return float(np.mean(hi)), float(np.mean(lo))


def collect_probe_batch(agent: AgentState, env_cfg: PendulumConfig, n: int,
                        seed: int) -> Batch:
    """Roll the stochastic policy in the given env to gather probe rows."""
    rng = np.random.default_rng(seed)
    env = PendulumEnv(env_cfg, rng)
    s = np.empty((n, OBS_DIM))
    a = np.empty((n, ACTION_DIM))
    r = np.empty(n)
    s_next = np.empty((n, OBS_DIM))
    obs = env.reset()
    for i in range(n):
        act, _ = policy_sample(agent, obs, rng)
        obs_next, rew, done = env.step(act)
        s[i], a[i], r[i], s_next[i] = obs, act, rew, obs_next
        obs = env.reset() if done else obs_next
    return Batch(s, a, r, s_next, np.zeros(n, dtype=bool),
                 np.full(n, DOMAIN_SIM, dtype="<U4"))


# ---------------------------------------------------------------------------
# Tabular-theory verification driver


def _random_policy(n_states, n_actions, rng):
    return rng.dirichlet(np.ones(n_actions), size=n_states)


def verify_theory(n_instances=20, betas=(0.1, 1.0), seed0=0, n_states=10,
                  n_actions=3, gap_scale=0.5, bound_draws=1000,
                  dphi_instances=50, tol=1e-8):
    """Numeric check of the closed-form results on random instances.

    Returns (ok, lines): underestimation certificates per instance and beta,
    the inequality chain over random draws, the closed-form maximizer
    dominating random candidate distributions, and the finite-count margins
    approaching the asymptotic ones. Everything here must hold exactly
    (within stated tolerances) for `ok` to be True.
    """
    ok = True
    lines = []

    rng = np.random.default_rng(seed0 + 90_000)
    violations = 0
    for _ in range(bound_draws):
        k = int(rng.integers(2, 7))
        omega = rng.dirichlet(np.ones(k))
        q = rng.uniform(0.1, 5.0, size=k)
        lhs, mid, rhs = logsumexp_bounds(omega, q, float(q.min()))
        if not (lhs <= mid + 1e-12 and mid <= rhs + 1e-12):
            violations += 1
    lines.append(f"inequality chain: {violations}/{bound_draws} violations")
    ok &= violations == 0

    rng = np.random.default_rng(seed0 + 91_000)
    dphi_bad = 0
    for _ in range(dphi_instances):
        k = int(rng.integers(2, 7))
        omega = rng.dirichlet(np.ones(k))
        q = rng.uniform(-2.0, 3.0, size=k)
        d_star = closed_form_dphi(omega, q)

        def objective(d):
            return float(np.sum(d * q) - np.sum(d * np.log(d / omega)))

        best = objective(d_star)
        for _ in range(200):
            cand = rng.dirichlet(np.ones(k))
            if objective(cand) > best + 1e-9:
                dphi_bad += 1
                break
    lines.append(f"closed-form maximizer dominates random candidates: "
                 f"{dphi_instances - dphi_bad}/{dphi_instances} instances")
    ok &= dphi_bad == 0

    for i in range(n_instances):
        seed = seed0 + i
        pair = random_tabular_pair(seed, n_states, n_actions, gap_scale)
        prng = np.random.default_rng(10_000 + seed)
        pi_data = _random_policy(n_states, n_actions, prng)
        pi = _random_policy(n_states, n_actions, prng)
        dist = build_distributions(pair, pi_data, pi)
        for beta in betas:
            report = verify_underestimation(pair, pi, dist, beta, tol=tol)
            lines.append(f"beta={beta:g} {report.summary_line(seed)}")
            ok &= not report.violations
        for s in range(n_states):
            holds, margin1 = theorem1_condition(dist, s)
            if not holds:
                continue
            _, m_lo = theorem2_condition(dist, s, betas[0], pair.gamma, 1e8)
            _, m_hi = theorem2_condition(dist, s, betas[0], pair.gamma, 1e16)
            drift = abs(m_hi - margin1)
            monotone = m_hi >= m_lo - 1e-15
            if drift > 1e-6 or not monotone:
                ok = False
                lines.append(f"seed={seed} s={s} finite-count margin drift "
                             f"{drift:.3e} monotone={monotone}")
            break
    lines.append("RESULT " + ("OK" if ok else "FAIL"))
    return bool(ok), lines
