"""Command-line pipeline: gen-data, fit-bins, train, eval, oracle-check, plot.

Every command writes its artifacts under ``--out`` and exits 0 on success.
Validation failures exit 1 with a one-line ``error: ...`` message on
stderr; argparse usage errors exit 2.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import checkpoint as ckpt_io
from . import clinical, data, evaluation, oracle, plotting, qnet, sim, train
from .errors import SepsiqError


def _ensure_out(path_str: str) -> Path:
    out = Path(path_str)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _fit_binners(dataset: data.OfflineDataset) -> clinical.DoseBinners:
    return clinical.DoseBinners(
        iv=clinical.fit_bins(dataset.raw_iv_doses[dataset.raw_iv_doses > 0]),
        vp=clinical.fit_bins(dataset.raw_vp_doses[dataset.raw_vp_doses > 0]),
    )


def cmd_gen_data(args) -> int:
    out = _ensure_out(args.out)
    if args.sim_config:
        params = sim.SimParams.from_text(Path(args.sim_config).read_text(encoding="utf-8"))
    else:
        params = sim.SimParams()
    params.seed = args.seed
    params.cohort_size = args.patients
    params.validate()
    rewards = clinical.RewardParams()
    spec = data.SplitSpec(
        train_fraction=args.train_fraction,
        validation_fraction=args.validation_fraction,
        test_fraction=args.test_fraction,
        seed=args.split_seed if args.split_seed is not None else args.seed,
    )

    trajectories = sim.generate_cohort(params, rewards)
    records = [rec for traj in trajectories for rec in traj.records]
    full = data.from_records(records)
    train_set, val_set, test_set = data.split(full, spec)

    binners = _fit_binners(train_set)
    clinical.save_binners(out / "bins.txt", binners)
    (out / "sim_params.cfg").write_text(params.to_text(), encoding="utf-8")

    for name, part in (("train", train_set), ("validation", val_set), ("test", test_set)):
        data.save(data.with_binned_actions(part, binners), out / f"{name}.csv")

    died = sum(t.died for t in trajectories)
    print(
        f"gen-data: {len(trajectories)} patients, {len(full)} transitions, "
        f"mortality {died / len(trajectories):.3f}; wrote train/validation/test CSVs to {out}"
    )
    return 0


def cmd_fit_bins(args) -> int:
    out = _ensure_out(args.out)
    dataset = data.load(args.data)
    binners = _fit_binners(dataset)
    clinical.save_binners(out / "bins.txt", binners)
    print(
        f"fit-bins: IV cut-points {binners.iv.cutpoints}, "
        f"VP cut-points {binners.vp.cutpoints}; wrote {out / 'bins.txt'}"
    )
    for path_str in args.rebin:
        target = data.load(path_str)
        rebinned = data.with_binned_actions(target, binners)
        dest = out / Path(path_str).name
        data.save(rebinned, dest)
        print(f"fit-bins: rebinned {path_str} -> {dest}")
    return 0


def cmd_train(args) -> int:
    out = _ensure_out(args.out)
    config = train.TrainConfig.from_text(Path(args.config).read_text(encoding="utf-8"))
    raw_train = data.load(args.data)
    stats = data.fit_norm_stats(raw_train)
    train_set = data.normalize(raw_train, stats)
    validation = None
    if args.val:
        validation = data.normalize(data.load(args.val), stats)
    binners = clinical.load_binners(args.bins) if args.bins else None

    result = train.train_offline(
        train_set,
        config,
        validation=validation,
        norm_stats=stats,
        binners=binners,
        out_dir=out,
    )
    last = result.metrics.rows[-1] if result.metrics.rows else None
    loss_note = f", final loss {last.total_loss:.4f}" if last else ""
    print(
        f"train: {config.total_steps} steps on {len(train_set)} transitions"
        f"{loss_note}; wrote {out / 'final.ckpt'}"
    )
    return 0


def cmd_eval(args) -> int:
    out = _ensure_out(args.out)
    ckpt = ckpt_io.load_checkpoint(args.checkpoint)
    test_set = data.load(args.data)
    policy = evaluation.greedy_policy(ckpt.net, ckpt.norm_stats)
    paths = evaluation.write_all_analyses(out, test_set, policy)
    print(f"eval: wrote {len(paths)} analysis CSVs to {out}")
    return 0


def cmd_oracle_check(args) -> int:
    mdp = oracle.load_mdp(args.fixture)
    dataset = oracle.rollout_dataset(mdp, args.transitions, args.seed)
    stats = data.fit_norm_stats(dataset)
    normalized = data.normalize(dataset, stats)

    rng = np.random.default_rng(np.random.SeedSequence([args.seed]))
    net = qnet.build_qnet(rng, n_actions=mdp.n_actions)
    config = train.TrainConfig(
        gamma=mdp.gamma,
        alpha=args.alpha,
        learning_rate=args.learning_rate,
        batch_size=args.batch_size,
        total_steps=args.steps,
        target_sync_period=args.target_sync_period,
        seed=args.seed,
        log_every=0,
    )
    result = train.train_offline(normalized, config, net=net)

    learned = oracle.q_table_from_net(result.net, mdp.n_states, stats)
    exact = oracle.value_iteration(mdp)
    error = float(np.abs(learned - exact).max())
    status = "PASS" if error < args.tolerance else "FAIL"
    print(
        f"oracle-check {status}: max|Q_net - Q*| = {error:.6f} "
        f"(tolerance {args.tolerance}) after {args.steps} steps on "
        f"{args.transitions} transitions"
    )
    if args.out:
        out = _ensure_out(args.out)
        np.savetxt(out / "q_net.txt", learned)
        np.savetxt(out / "q_star.txt", exact)
    return 0 if error < args.tolerance else 1


def cmd_plot(args) -> int:
    out = _ensure_out(args.out)
    rendered = plotting.render_directory(args.data, out)
    print(f"plot: rendered {len(rendered)} SVGs to {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sepsiq",
        description=(
            "Offline conservative Q-learning pipeline for septic treatment "
            "policies: simulate a cohort, fit dose bins, train, evaluate, "
            "and plot."
        ),
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="simulate a cohort and write split CSVs + bins")
    p.add_argument("--seed", type=int, required=True, help="master seed for the cohort")
    p.add_argument("--patients", type=int, required=True, help="number of patients")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--sim-config", help="SimParams key=value file (seed/patients flags win)")
    p.add_argument("--train-fraction", type=float, default=0.70)
    p.add_argument("--validation-fraction", type=float, default=0.15)
    p.add_argument("--test-fraction", type=float, default=0.15)
    p.add_argument("--split-seed", type=int, default=None, help="defaults to --seed")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("fit-bins", help="fit dose quartile bins from a dataset CSV")
    p.add_argument("--data", required=True, help="CSV to fit the quartiles on")
    p.add_argument("--out", required=True, help="output directory for bins.txt")
    p.add_argument(
        "--rebin",
        nargs="*",
        default=[],
        help="additional CSVs to rewrite with action_index from the fitted bins",
    )
    p.set_defaults(func=cmd_fit_bins)

    p = sub.add_parser("train", help="train the dueling net with the conservative loss")
    p.add_argument("--config", required=True, help="TrainConfig key=value file")
    p.add_argument("--data", required=True, help="training-split CSV")
    p.add_argument("--val", help="validation-split CSV (adds validation metrics)")
    p.add_argument("--bins", help="bins.txt to embed in checkpoints")
    p.add_argument("--out", required=True, help="output directory for checkpoints/metrics")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="write histogram and mortality-curve CSVs")
    p.add_argument("--checkpoint", required=True, help="checkpoint from train")
    p.add_argument("--data", required=True, help="test-split CSV")
    p.add_argument("--out", required=True, help="output directory for analysis CSVs")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser(
        "oracle-check",
        help="train on a tabular fixture and compare against value iteration",
    )
    p.add_argument("--fixture", required=True, help="tabular MDP fixture file")
    p.add_argument("--transitions", type=int, default=12000, help="rollout size")
    p.add_argument("--steps", type=int, default=30000, help="training budget")
    p.add_argument("--seed", type=int, default=11)
    p.add_argument("--alpha", type=float, default=0.0, help="conservative penalty weight")
    p.add_argument("--learning-rate", type=float, default=5e-4)
    p.add_argument("--batch-size", type=int, default=384)
    p.add_argument("--target-sync-period", type=int, default=750)
    p.add_argument("--tolerance", type=float, default=0.05)
    p.add_argument("--out", help="optionally dump Q tables here")
    p.set_defaults(func=cmd_oracle_check)

    p = sub.add_parser("plot", help="render emitted analysis CSVs to SVG")
    p.add_argument("--data", required=True, help="directory containing hist_/curve_ CSVs")
    p.add_argument("--out", required=True, help="output directory for SVGs")
    p.set_defaults(func=cmd_plot)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except SepsiqError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"error: file not found: {exc.filename}", file=sys.stderr)
        return 1


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
