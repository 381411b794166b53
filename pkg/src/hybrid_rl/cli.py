"""Command-line entry point.

Verbs: gen-data (offline dataset files), train (one seeded run), eval
(checkpoint return in the real environment), diagnose (per-probe gap table),
verify-theory (numeric certificates for the closed-form results), plot
(multi-run learning-curve overlay). Exit codes: 0 success, 2 configuration,
3 training failure, 4 verification failure, 5 I/O.
"""

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .agents import TrainingError
from .data import save_dataset
from .envs import PendulumConfig
from .harness import (
    ConfigError,
    DATASET_PROTOCOLS,
    GAP_CHOICES,
    collect_probe_batch,
    covariance_from_states,
    evaluate_policy,
    experiment_from_flat,
    gap_diagnostic,
    generate_dataset,
    load_checkpoint,
    load_config_file,
    quartile_contrast,
    run_experiment,
    sim_config_for,
    verify_theory,
    write_diagnostic_csv,
    write_overlay_svg,
)
from .nn import GradientError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_TRAINING = 3
EXIT_VERIFY = 4
EXIT_IO = 5


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="hybrid-rl",
        description="Hybrid offline-and-online RL with dynamics-gap-aware "
                    "value regularization.")
    sub = p.add_subparsers(dest="verb", required=True)

    t = sub.add_parser("train", help="run one seeded training experiment")
    t.add_argument("--config", help="flat key=value configuration file")
    t.add_argument("--seed", type=int, help="override experiment.seed")
    t.add_argument("--out", help="override experiment.out")
    t.add_argument("--variant", help="override experiment.variant")
    t.add_argument("--gap", help="override experiment.gap", choices=GAP_CHOICES)

    g = sub.add_parser("gen-data", help="generate an offline dataset file")
    g.add_argument("--out", required=True, help="dataset file to write")
    g.add_argument("--protocol", default="random", choices=DATASET_PROTOCOLS)
    g.add_argument("--size", type=int, default=50_000)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--steps", type=int, default=100_000,
                   help="online training budget for the medium protocols")
    g.add_argument("--eval-every", type=int, default=2_000)
    g.add_argument("--hidden-units", type=int, default=256)
    g.add_argument("--batch-size", type=int, default=256)

    e = sub.add_parser("eval", help="evaluate a run checkpoint in the real env")
    e.add_argument("--run", required=True, help="run directory (manifest.json)")
    e.add_argument("--episodes", type=int, default=10)
    e.add_argument("--seed", type=int, default=0)

    d = sub.add_parser("diagnose",
                       help="emit the per-probe (feature, u, Q) gap table")
    d.add_argument("--run", required=True, help="run directory (manifest.json)")
    d.add_argument("--out", help="CSV path (default: <run>/diagnostic.csv)")
    d.add_argument("--gap", choices=GAP_CHOICES,
                   help="override the sim gap recorded in the manifest")
    d.add_argument("--probes", type=int, default=512)
    d.add_argument("--seed", type=int, default=0)
    d.add_argument("--kl-samples", type=int, default=10)

    v = sub.add_parser("verify-theory",
                       help="check the closed-form results on random instances")
    v.add_argument("--instances", type=int, default=20)
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--out", help="also write the report lines to this file")

    pl = sub.add_parser("plot", help="overlay learning curves from metrics CSVs")
    pl.add_argument("csv", nargs="+", help="metrics.csv files")
    pl.add_argument("--out", required=True, help="SVG file to write")
    return p


def cmd_train(args) -> int:
    flat = load_config_file(args.config) if args.config else {}
    if args.seed is not None:
        flat["experiment.seed"] = args.seed
    if args.out:
        flat["experiment.out"] = args.out
    if args.variant:
        flat["experiment.variant"] = args.variant
    if args.gap:
        flat["experiment.gap"] = args.gap
    cfg = experiment_from_flat(flat)
    report = run_experiment(cfg)
    print(f"final_return_mean={report.final_return_mean:.3f} "
          f"final_return_std={report.final_return_std:.3f}")
    print(f"artifacts written to {cfg.out_dir}")
    return EXIT_OK


def cmd_gen_data(args) -> int:
    real_cfg = PendulumConfig()
    kwargs = {}
    if args.protocol in ("medium", "medium_replay"):
        kwargs = {"total_steps": args.steps, "eval_every": args.eval_every,
                  "hidden_units": args.hidden_units,
                  "batch_size": args.batch_size}
    dataset, meta = generate_dataset(args.protocol, real_cfg, args.size,
                                     args.seed, **kwargs)
    save_dataset(dataset, args.out)
    with open(args.out + ".meta.json", "w") as f:
        json.dump(meta, f, indent=2, sort_keys=True)
    print(f"wrote {dataset.size} transitions to {args.out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    agent, _, _, manifest = load_checkpoint(args.run)
    mean, std = evaluate_policy(PendulumConfig(), agent, args.episodes,
                                args.seed)
    print(f"variant={manifest['algorithm']} step={manifest['step']} "
          f"return_mean={mean:.3f} return_std={std:.3f}")
    return EXIT_OK


def cmd_diagnose(args) -> int:
    agent, pair, cov, manifest = load_checkpoint(args.run)
    if pair is None:
        raise ConfigError("checkpoint has no discriminators to diagnose")
    gap = args.gap or manifest["gap"]
    sim_cfg = sim_config_for(PendulumConfig(), gap)
    probes = collect_probe_batch(agent, sim_cfg, args.probes, args.seed)
    if cov is None:
        cov = covariance_from_states(probes.s)
    table = gap_diagnostic(agent, pair, cov, probes, args.kl_samples,
                           np.random.default_rng(args.seed + 1))
    out = args.out or str(Path(args.run) / "diagnostic.csv")
    write_diagnostic_csv(table, out)
    hi, lo = quartile_contrast(table)
    print(f"wrote {len(table['u'])} probes to {out}")
    print(f"mean_u top_quartile={hi:.6g} bottom_quartile={lo:.6g}")
    return EXIT_OK


def cmd_verify_theory(args) -> int:
    ok, lines = verify_theory(n_instances=args.instances, seed0=args.seed)
    text = "\n".join(lines)
    print(text)
    if args.out:
        Path(args.out).write_text(text + "\n")
    return EXIT_OK if ok else EXIT_VERIFY


def cmd_plot(args) -> int:
    write_overlay_svg(args.csv, args.out)
    print(f"wrote {args.out}")
    return EXIT_OK


_COMMANDS = {
    "train": cmd_train,
    "gen-data": cmd_gen_data,
    "eval": cmd_eval,
    "diagnose": cmd_diagnose,
    "verify-theory": cmd_verify_theory,
    "plot": cmd_plot,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.verb](args)
    except ConfigError as e:
        print(f"configuration error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (TrainingError, GradientError) as e:
        print(f"training failure: {e}", file=sys.stderr)
        return EXIT_TRAINING
    except OSError as e:
        print(f"i/o error: {e}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
