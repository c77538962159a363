"""Command-line entry point.

All randomness flows from explicit --seed flags; identical invocations
produce byte-identical artifacts.
"""

from __future__ import annotations

import argparse
import json
import sys

from . import checks, metrics, theory, training, world
from .constructor import (
    RuleBasedOracle,
    assemble_nsft_sample,
    balance_yes_no,
    construct_conversation,
    conversation_to_llava_record,
    load_default_codebook,
    write_llava_jsonl,
)
from .data import Conversation, Turn
from .model import load_checkpoint, save_checkpoint


def _build_parser():
    parser = argparse.ArgumentParser(prog="prefalign",
                                     description="preference-alignment desk laboratory")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("check-theory", help="run the loss/gradient identity suite")
    p.add_argument("--seeds", type=int, default=100)

    p = sub.add_parser("gen-world", help="generate a synthetic preference dataset")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("construct", help="build negative-supervision conversations")
    p.add_argument("--in", dest="input", required=True, help="dataset JSONL from gen-world")
    p.add_argument("--out", required=True, help="LLaVA-style conversation JSONL")
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--mode", choices=["append", "concat_separate"], default="concat_separate")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--balance-low", type=float, default=0.4)
    p.add_argument("--balance-high", type=float, default=0.6)

    p = sub.add_parser("train", help="train one continual-alignment method")
    p.add_argument("--config", help="JSON file of TrainConfig overrides")
    p.add_argument("--data", required=True, help="dataset JSONL from gen-world")
    p.add_argument("--method", choices=training.METHODS)
    p.add_argument("--steps", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--beta", type=float)
    p.add_argument("--kl-weight", type=float)
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--log-csv", help="trajectory CSV path")

    p = sub.add_parser("compare", help="run several methods from a shared init")
    p.add_argument("--data", required=True)
    p.add_argument("--methods", default="cont_sft,gt_dpo,nsft")
    p.add_argument("--steps", type=int, default=500)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--dim", type=int, default=16)
    p.add_argument("--pretrain-steps", type=int, default=300)
    p.add_argument("--eval-n", type=int, default=100)
    p.add_argument("--eval-seed", type=int, default=777)
    p.add_argument("--out-prefix", required=True)

    p = sub.add_parser("experiment", help="full continual-alignment comparison")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--train-n", type=int, default=500)
    p.add_argument("--steps", type=int, default=500)
    p.add_argument("--dim", type=int, default=64)
    p.add_argument("--object-pool-size", type=int, default=12)
    p.add_argument("--eval-n", type=int, default=1000)
    p.add_argument("--eval-seed", type=int, default=31337)
    p.add_argument("--pretrain-n", type=int, default=2000)
    p.add_argument("--pretrain-steps", type=int, default=8000)
    p.add_argument("--base-ckpt", help="existing base checkpoint; skips pretraining")
    p.add_argument("--save-base", help="write the pretrained base checkpoint here")
    p.add_argument("--out", required=True, help="experiment report JSON")

    p = sub.add_parser("chair", help="CHAIR metrics from caption evals JSONL")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("aggregate-scores", help="judge-score aggregation from JSONL")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)

    return parser


def _cmd_check_theory(args):
    results = checks.run_all_checks(seeds=args.seeds)
    all_ok = True
    for name, ok, detail in results:
        print(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")
        all_ok = all_ok and ok
    return 0 if all_ok else 1


def _cmd_gen_world(args):
    records = world.make_preference_dataset(args.n, args.seed)
    world.write_dataset_jsonl(records, args.out)
    print(f"wrote {len(records)} samples to {args.out}")
    return 0


def _cmd_construct(args):
    records = world.read_dataset_jsonl(args.input)
    oracle = RuleBasedOracle()
    codebook = load_default_codebook()
    out_records = []
    for rec in records:
        errors = oracle.identify(rec.rejected, rec.chosen, codebook)
        conv = construct_conversation(errors, rec.chosen, rec.scene, k=args.k)
        conv = balance_yes_no(conv, args.balance_low, args.balance_high, seed=args.seed + rec.seed)
        gt = Conversation(world.featurize(rec.scene),
                          [Turn(list(world.CAPTION_QUESTION), list(rec.chosen))],
                          provenance="gt")
        assembled = assemble_nsft_sample(gt, conv, args.mode)
        if args.mode == "append":
            out_records.append(conversation_to_llava_record(assembled, f"scene-{rec.seed}",
                                                            f"seed://{rec.seed}"))
        else:
            gt_conv, constructed = assembled
            out_records.append(conversation_to_llava_record(gt_conv, f"scene-{rec.seed}/gt",
                                                            f"seed://{rec.seed}"))
            out_records.append(conversation_to_llava_record(constructed, f"scene-{rec.seed}/constructed",
                                                            f"seed://{rec.seed}"))
    write_llava_jsonl(out_records, args.out)
    print(f"wrote {len(out_records)} conversations to {args.out}")
    return 0


def _load_train_config(args):
    overrides = {}
    if args.config:
        with open(args.config) as fh:
            overrides.update(json.load(fh))
    for key in ("method", "steps", "seed", "beta"):
        v = getattr(args, key, None)
        if v is not None:
            overrides[key] = v
    if args.kl_weight is not None:
        overrides["kl_weight"] = args.kl_weight
    if "yes_no_band" in overrides:
        overrides["yes_no_band"] = tuple(overrides["yes_no_band"])
    return training.TrainConfig(**overrides)


def _cmd_train(args):
    config = _load_train_config(args)
    records = world.read_dataset_jsonl(args.data)
    params, log = training.train(config, records)
    save_checkpoint(params, args.out)
    if args.log_csv:
        training.write_trajectory_log_csv(log, args.log_csv)
    print(f"trained {config.method} for {config.steps} steps; checkpoint at {args.out}")
    return 0


def _cmd_compare(args):
    records = world.read_dataset_jsonl(args.data)
    methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    configs = [training.TrainConfig(method=m, steps=args.steps, seed=args.seed, dim=args.dim)
               for m in methods]
    eval_records = world.make_preference_dataset(args.eval_n, args.eval_seed)
    init_model = training.make_base_model(records, dim=args.dim,
                                          steps=args.pretrain_steps)
    report = training.compare_methods(configs, records, eval_records, init_model)
    training.write_comparison_csv(report, args.out_prefix + ".csv")
    training.write_comparison_json(report, args.out_prefix + ".json")
    if "gt_dpo" in report["logs"]:
        bias = theory.bias_trajectory_report(report["logs"]["gt_dpo"])
        theory.write_trajectory_csv(bias, args.out_prefix + ".bias.csv")
        theory.write_trajectory_summary(bias, args.out_prefix + ".bias.json")
    print(f"comparison written to {args.out_prefix}.csv / .json")
    return 0


def _cmd_experiment(args):
    spec = training.ExperimentSpec(
        seed=args.seed, train_n=args.train_n, steps=args.steps, dim=args.dim,
        object_pool_size=args.object_pool_size, eval_n=args.eval_n,
        eval_seed=args.eval_seed, pretrain_n=args.pretrain_n,
        pretrain_steps=args.pretrain_steps,
    )
    base = load_checkpoint(args.base_ckpt) if args.base_ckpt else None
    if base is None:
        pre = world.make_preference_dataset(spec.pretrain_n, spec.pretrain_seed)
        base = training.make_base_model(pre, dim=spec.dim, n_blocks=spec.n_blocks,
                                        steps=spec.pretrain_steps,
                                        batch_size=spec.batch_size)
        if args.save_base:
            save_checkpoint(base, args.save_base)
    result = training.run_experiment(spec, base_model=base)
    training.write_experiment_json(result, args.out)
    print(f"experiment report written to {args.out}")
    return 0


def _cmd_chair(args):
    evals = metrics.read_caption_evals_jsonl(args.input)
    result = metrics.chair(evals)
    metrics.write_chair_csv(result, args.out)
    print(f"chair metrics written to {args.out}")
    return 0


def _cmd_aggregate_scores(args):
    sheet = metrics.read_score_sheet_jsonl(args.input)
    agg = metrics.aggregate_scores(sheet)
    metrics.write_aggregate_csv(agg, args.out)
    print(f"aggregates written to {args.out}")
    return 0


_COMMANDS = {
    "check-theory": _cmd_check_theory,
    "gen-world": _cmd_gen_world,
    "construct": _cmd_construct,
    "train": _cmd_train,
    "compare": _cmd_compare,
    "experiment": _cmd_experiment,
    "chair": _cmd_chair,
    "aggregate-scores": _cmd_aggregate_scores,
}


def dispatch(argv):
    """Run one subcommand; returns the process exit code."""
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse already printed usage
        return int(exc.code) if exc.code is not None else 2
    try:
        return _COMMANDS[args.command](args)
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}),
              file=sys.stderr)
        return 1


def main():
    raise SystemExit(dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
