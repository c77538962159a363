"""Continual-alignment training loop on the synthetic world.

Runs cont-SFT, GT-DPO, nSFT and the KL-regularized variants from a
shared initialization with plain SGD and a cosine schedule, logging the
per-step quantities the theory probes consume.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import backward
from .constructor import (
    RuleBasedOracle,
    balance_yes_no,
    construct_conversation,
    load_default_codebook,
    qa_turns_from_clauses,
)
from .data import Conversation, StepRecord, TrajectoryLog, Turn
from .losses import (
    conversation_sft_loss,
    log_sigmoid,
    per_token_kl,
    sequence_logprob,
)
from .metrics import CaptionEval, chair
from .theory import bias_trajectory_report
from .model import encode_context, greedy_decode, init_params, params_hash
from .world import (
    CAPTION_QUESTION,
    OBJECT_TOKEN_BASE,
    OBJECTS,
    VOCAB_SIZE,
    PreferenceRecord,
    diff_captions,
    featurize,
    latent_dim,
    make_preference_dataset,
    parse_caption,
)

__all__ = [
    "METHODS",
    "TrainConfig",
    "PAPER_SCALE_PRESET",
    "TrainingDivergedError",
    "cosine_lr",
    "build_training_views",
    "train",
    "make_base_model",
    "self_response_records",
    "mean_sequence_logprobs",
    "evaluate_model",
    "default_experiment_configs",
    "ExperimentSpec",
    "run_experiment",
    "compare_methods",
    "write_experiment_json",
    "write_comparison_csv",
    "write_comparison_json",
    "write_trajectory_log_csv",
]

METHODS = ("cont_sft", "gt_dpo", "nsft", "sft_kl", "nsft_kl")

# the published large-model recipe, kept only as a labeled preset
PAPER_SCALE_PRESET = {"batch_size": 128, "lr": 2e-6, "weight_decay": 0.0}

_OBJECT_TOKEN_RANGE = range(OBJECT_TOKEN_BASE, OBJECT_TOKEN_BASE + len(OBJECTS))


class TrainingDivergedError(RuntimeError):
    def __init__(self, step):
        super().__init__(f"non-finite loss at step {step}")
        self.step = step


@dataclass
class TrainConfig:
    method: str = "cont_sft"
    batch_size: int = 16
    lr: float = 1e-2
    weight_decay: float = 0.0
    beta: float = 0.1
    kl_weight: float = 0.1
    steps: int = 500
    seed: int = 0
    lr_schedule: str = "cosine"  # "cosine" | "constant"
    dim: int = 16
    n_blocks: int = 2
    construct_k: int = 5
    yes_no_band: tuple = (0.4, 0.6)

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; choose from {METHODS}")
        if self.steps < 0 or self.batch_size < 1 or self.lr < 0:
            raise ValueError("need steps >= 0, batch_size >= 1, lr >= 0")


def cosine_lr(step, total, base_lr):
    """base_lr * (1 + cos(pi * step / total)) / 2, nonincreasing in step."""
    if not 0 <= step <= total:
        raise ValueError("need 0 <= step <= total")
    return base_lr * (1.0 + math.cos(math.pi * step / total)) / 2.0


@dataclass
class _SampleView:
    sample: object                    # PreferenceSample
    gt_conversation: Conversation
    constructed: Conversation | None = None
    ref_logprob_chosen: float | None = None
    ref_logprob_rejected: float | None = None


def build_training_views(records, config: TrainConfig, reference=None):
    """Precompute per-record training material.

    nSFT methods get a rule-based constructed conversation (yes/no
    balanced); DPO gets frozen-reference sequence log-probs.
    """
    needs_construct = config.method in ("nsft", "nsft_kl")
    oracle = RuleBasedOracle()
    codebook = load_default_codebook()
    views = []
    for rec in records:
        sample = rec.to_sample()
        gt_conv = Conversation(featurize(rec.scene),
                               [Turn(list(CAPTION_QUESTION), list(rec.chosen))],
                               provenance="gt")
        view = _SampleView(sample=sample, gt_conversation=gt_conv)
        if needs_construct:
            errors = oracle.identify(rec.rejected, rec.chosen, codebook)
            conv = construct_conversation(errors, rec.chosen, rec.scene, k=config.construct_k)
            lo, hi = config.yes_no_band
            view.constructed = balance_yes_no(conv, lo, hi, seed=rec.seed)
        if config.method == "gt_dpo" and reference is not None:
            view.ref_logprob_chosen = sequence_logprob(reference, sample.context, sample.chosen).item()
            view.ref_logprob_rejected = sequence_logprob(reference, sample.context, sample.rejected).item()
        views.append(view)
    return views


def _sample_loss(params, reference, view: _SampleView, config: TrainConfig):
    """Per-sample loss graph plus logging scalars."""
    method = config.method
    sample = view.sample
    lp_c = sequence_logprob(params, sample.context, sample.chosen)
    lp_r = sequence_logprob(params, sample.context, sample.rejected)
    stats = {"lp_c": lp_c.item(), "lp_r": lp_r.item(), "t1": None, "t2": None, "p_dpo": None}

    if method == "gt_dpo":
        p = (lp_c - view.ref_logprob_chosen) - (lp_r - view.ref_logprob_rejected)
        loss = -log_sigmoid(config.beta * p)
        stats["p_dpo"] = p.item()
        stats["t1"] = math.exp(lp_c.item() - view.ref_logprob_chosen)
        stats["t2"] = math.exp(lp_r.item() - view.ref_logprob_rejected)
        return loss, stats

    if method in ("cont_sft", "sft_kl"):
        loss = conversation_sft_loss(params, view.gt_conversation)
    else:  # nsft, nsft_kl
        loss = ad.add(conversation_sft_loss(params, view.gt_conversation),
                      conversation_sft_loss(params, view.constructed))
    if method in ("sft_kl", "nsft_kl"):
        kl = per_token_kl(params, reference, sample.context, sample.chosen)
        loss = ad.add(loss, config.kl_weight * kl)
    return loss, stats


def _mean_kl(params, reference, views, indices):
    total = 0.0
    for i in indices:
        sample = views[i].sample
        total += per_token_kl(params, reference, sample.context, sample.chosen).item()
    return total / len(indices)


def train(config: TrainConfig, records, init_model=None):
    """Train one method; deterministic in (config, records, init_model).

    Returns (final ModelParams, TrajectoryLog). The reference model is a
    frozen copy of the initial parameters and is never mutated.
    """
    if init_model is None:
        init_model = init_params(VOCAB_SIZE, config.dim, latent_dim(),
                                 n_blocks=config.n_blocks, seed=config.seed)
    params = init_model.clone(requires_grad=True)
    reference = init_model.clone(requires_grad=False)
    ref_hash = params_hash(reference)

    views = build_training_views(records, config, reference=reference)
    tensors = params.tensors()
    rng = np.random.default_rng(config.seed)
    log = TrajectoryLog()

    for step in range(config.steps):
        lr = cosine_lr(step, config.steps, config.lr) if config.lr_schedule == "cosine" else config.lr
        idx = rng.integers(0, len(views), size=config.batch_size)
        losses, stats = [], []
        for i in idx:
            loss_i, stats_i = _sample_loss(params, reference, views[int(i)], config)
            losses.append(loss_i)
            stats.append(stats_i)
        total = losses[0]
        for l in losses[1:]:
            total = ad.add(total, l)
        total = total / len(losses)
        loss_value = total.item()
        if not math.isfinite(loss_value):
            raise TrainingDivergedError(step)
        grads = backward(total, tensors)
        for t in tensors:
            g = grads[t]
            if config.weight_decay:
                g = g + config.weight_decay * t.values
            t.values -= lr * g

        def _mean(key):
            vals = [s[key] for s in stats if s[key] is not None]
            return sum(vals) / len(vals) if vals else None

        log.append(StepRecord(
            step=step,
            loss=loss_value,
            lr=lr,
            mean_chosen_logprob=_mean("lp_c"),
            mean_rejected_logprob=_mean("lp_r"),
            t1=_mean("t1"),
            t2=_mean("t2"),
            p_dpo=_mean("p_dpo"),
            kl_to_reference=_mean_kl(params, reference, views, [int(i) for i in idx[:4]]),
        ))

    assert params_hash(reference) == ref_hash  # the frozen reference stays frozen
    return params, log


def make_base_model(records, dim=64, n_blocks=2, lr=0.05, steps=8000,
                    noisy_frac=0.5, qa_frac=0.4, seed=1234, batch_size=16):
    """Pretrained starting point with knowledge-level hallucination habits.

    Each record carries two belief states: the true scene and a noisy
    one (the parse of its corrupted caption). With probability
    `noisy_frac` a training item is generated from the noisy belief,
    and that choice drives captions and QA answers alike, so the base
    model's mistakes are consistent wrong beliefs rather than surface
    noise. `qa_frac` of items are short multi-turn QA conversations,
    which keeps corrective QA turns in-distribution later.
    """
    params = init_params(VOCAB_SIZE, dim, latent_dim(), n_blocks=n_blocks, seed=seed)
    rng = np.random.default_rng(seed)
    tensors = params.tensors()
    noisy_clauses = [parse_caption(rec.rejected) for rec in records]
    clean_clauses = [list(rec.scene.objects) for rec in records]
    for step in range(steps):
        step_lr = cosine_lr(step, steps, lr)
        idx = rng.integers(0, len(records), size=batch_size)
        losses = []
        for i in idx:
            i = int(i)
            rec = records[i]
            lat = featurize(rec.scene)
            noisy = rng.random() < noisy_frac
            clauses = noisy_clauses[i] if noisy else clean_clauses[i]
            if rng.random() < qa_frac:
                turns = qa_turns_from_clauses(clauses, rng, int(rng.integers(2, 5)))
                conv = Conversation(lat, turns)
            else:
                y = rec.rejected if noisy else rec.chosen
                conv = Conversation(lat, [Turn(list(CAPTION_QUESTION), list(y))])
            losses.append(conversation_sft_loss(params, conv))
        total = losses[0]
        for l in losses[1:]:
            total = ad.add(total, l)
        total = total / len(losses)
        if not math.isfinite(total.item()):
            raise TrainingDivergedError(step)
        grads = backward(total, tensors)
        for t in tensors:
            t.values -= step_lr * grads[t]
    return params


def self_response_records(params, records, max_decode_len=16):
    """Replace injected rejected captions with the model's own mistakes.

    Each record's greedy decode becomes the rejected side when it is
    parseable, differs from the chosen caption, and names no object
    twice (the caption-diff oracle needs unique objects); otherwise the
    original record is kept as a fallback.
    """
    out = []
    for rec in records:
        sample = rec.to_sample()
        x = encode_context(params, sample.context.image_latent, sample.context.question)
        decoded = greedy_decode(params, x, max_decode_len)
        usable = False
        if decoded != rec.chosen:
            try:
                clauses = parse_caption(decoded)
                usable = len({cl.obj for cl in clauses}) == len(clauses)
            except ValueError:
                pass
        if usable:
            corruptions = diff_captions(parse_caption(rec.chosen), clauses)
            out.append(PreferenceRecord(rec.seed, rec.scene, rec.chosen, decoded, corruptions))
        else:
            out.append(rec)
    return out


def evaluate_model(params, eval_records, initial_model=None, max_decode_len=16):
    """Held-out metrics: decoded-caption chair_i, mean chosen/rejected
    sequence log-probs, and per-token KL drift from the initial model."""
    evals = []
    lp_c_total, lp_r_total, kl_total = 0.0, 0.0, 0.0
    for rec in eval_records:
        sample = rec.to_sample()
        x = encode_context(params, sample.context.image_latent, sample.context.question)
        decoded = greedy_decode(params, x, max_decode_len)
        mentioned = {t - OBJECT_TOKEN_BASE for t in decoded if t in _OBJECT_TOKEN_RANGE}
        evals.append(CaptionEval([mentioned], rec.scene.object_ids()))
        lp_c_total += sequence_logprob(params, sample.context, sample.chosen).item()
        lp_r_total += sequence_logprob(params, sample.context, sample.rejected).item()
        if initial_model is not None:
            kl_total += per_token_kl(params, initial_model, sample.context, rec.chosen).item()
    n = len(eval_records)
    result = chair(evals)
    return {
        "chair_i": result.chair_i if result.chair_i is not None else 0.0,
        "chair_s": result.chair_s,
        "mean_chosen_logprob": lp_c_total / n,
        "mean_rejected_logprob": lp_r_total / n,
        "kl_drift": (kl_total / n) if initial_model is not None else 0.0,
    }


def mean_sequence_logprobs(params, records):
    """Mean chosen/rejected sequence log-probs over preference records."""
    c_total, r_total = 0.0, 0.0
    for rec in records:
        sample = rec.to_sample()
        c_total += sequence_logprob(params, sample.context, sample.chosen).item()
        r_total += sequence_logprob(params, sample.context, sample.rejected).item()
    n = len(records)
    return c_total / n, r_total / n


@dataclass
class ExperimentSpec:
    """Sizes and seeds for the continual-alignment experiment.

    The continual data is drawn from a restricted object pool while the
    evaluation set spans the full vocabulary, so plain continued SFT
    forgets out-of-pool captioning and the held-out hallucination gap
    between methods becomes visible.
    """
    seed: int = 0
    train_n: int = 500
    steps: int = 500
    dim: int = 64
    n_blocks: int = 2
    batch_size: int = 16
    object_pool_size: int = 12
    eval_n: int = 1000
    eval_seed: int = 31337
    pretrain_n: int = 2000
    pretrain_seed: int = 999
    pretrain_steps: int = 8000
    max_decode_len: int = 16

    def __post_init__(self):
        if not 1 <= self.object_pool_size <= len(OBJECTS):
            raise ValueError("object_pool_size out of range")


def default_experiment_configs(spec: ExperimentSpec):
    """One TrainConfig per compared method, each at its stable recipe.

    Step sizes differ per method on purpose: the nSFT loss sums two
    conversations (roughly triple the token count of plain SFT), and
    preference-logit losses are conventionally trained with much
    smaller steps than SFT, so a shared learning rate would compare a
    tuned method against broken ones.
    """
    common = dict(steps=spec.steps, dim=spec.dim, n_blocks=spec.n_blocks,
                  seed=spec.seed, batch_size=spec.batch_size)
    return [
        TrainConfig(method="cont_sft", lr=1e-2, **common),
        TrainConfig(method="gt_dpo", lr=5e-4, beta=2.0, **common),
        TrainConfig(method="nsft", lr=2e-3, **common),
        TrainConfig(method="sft_kl", lr=1e-2, kl_weight=1.0, **common),
    ]


def run_experiment(spec: ExperimentSpec, base_model=None, configs=None):
    """Full continual-alignment comparison, deterministic in `spec`.

    Pretrains (or accepts) a base model with hallucination habits,
    replaces injected negatives with the base model's own mistakes,
    trains every method from the shared base, and reports held-out
    metrics plus chosen/rejected log-prob movement on the training set.
    """
    if base_model is None:
        pretrain_records = make_preference_dataset(spec.pretrain_n, spec.pretrain_seed)
        base_model = make_base_model(pretrain_records, dim=spec.dim, n_blocks=spec.n_blocks,
                                     steps=spec.pretrain_steps, batch_size=spec.batch_size)
    pool = set(range(spec.object_pool_size))
    injected = make_preference_dataset(spec.train_n, spec.seed, object_pool=pool)
    records = self_response_records(base_model, injected, max_decode_len=spec.max_decode_len)
    eval_records = make_preference_dataset(spec.eval_n, spec.eval_seed)
    if configs is None:
        configs = default_experiment_configs(spec)

    base_eval = evaluate_model(base_model, eval_records, initial_model=base_model,
                               max_decode_len=spec.max_decode_len)
    base_c, base_r = mean_sequence_logprobs(base_model, records)
    methods, logs = {}, {}
    for config in configs:
        params, log = train(config, records, init_model=base_model)
        ev = evaluate_model(params, eval_records, initial_model=base_model,
                            max_decode_len=spec.max_decode_len)
        train_c, train_r = mean_sequence_logprobs(params, records)
        entry = {
            "eval": ev,
            "train_delta_chosen_logprob": train_c - base_c,
            "train_delta_rejected_logprob": train_r - base_r,
        }
        if config.method == "gt_dpo":
            report = bias_trajectory_report(log)
            entry["fraction_ratio_below_1"] = report["summary"]["fraction_ratio_below_1"]
        methods[config.method] = entry
        logs[config.method] = log
    n_self = sum(1 for a, b in zip(records, injected) if a.rejected != b.rejected)
    return {
        "spec": asdict(spec),
        "n_self_response": n_self,
        "base_eval": base_eval,
        "methods": methods,
        "logs": logs,
    }


def write_experiment_json(result, path):
    """Serialize an experiment report (without the step logs)."""
    payload = {k: v for k, v in result.items() if k != "logs"}
    with open(path, "w") as fh:
        json.dump(payload, fh, sort_keys=True, separators=(",", ":"))


def compare_methods(configs, records, eval_records, init_model):
    """Train each config from the shared initialization and report
    held-out metrics plus deltas against the untrained baseline."""
    base = evaluate_model(init_model, eval_records, initial_model=init_model)
    rows = [{
        "method": "baseline",
        "chair_i": base["chair_i"],
        "delta_chosen_logprob": 0.0,
        "delta_rejected_logprob": 0.0,
        "kl_drift": 0.0,
    }]
    logs = {}
    for config in configs:
        params, log = train(config, records, init_model=init_model)
        m = evaluate_model(params, eval_records, initial_model=init_model)
        rows.append({
            "method": config.method,
            "chair_i": m["chair_i"],
            "delta_chosen_logprob": m["mean_chosen_logprob"] - base["mean_chosen_logprob"],
            "delta_rejected_logprob": m["mean_rejected_logprob"] - base["mean_rejected_logprob"],
            "kl_drift": m["kl_drift"],
        })
        logs[config.method] = log
    return {"rows": rows, "logs": logs}


_REPORT_COLUMNS = ["method", "chair_i", "delta_chosen_logprob", "delta_rejected_logprob", "kl_drift"]


def write_comparison_csv(report, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(_REPORT_COLUMNS)
        for row in report["rows"]:
            writer.writerow([row["method"]] + [repr(row[c]) for c in _REPORT_COLUMNS[1:]])


def write_comparison_json(report, path):
    with open(path, "w") as fh:
        json.dump({"rows": report["rows"]}, fh, sort_keys=True, separators=(",", ":"))


def write_trajectory_log_csv(log: TrajectoryLog, path):
    cols = ["step", "loss", "lr", "mean_chosen_logprob", "mean_rejected_logprob",
            "t1", "t2", "p_dpo", "kl_to_reference"]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(cols)
        for r in log:
            writer.writerow(["" if getattr(r, c) is None else repr(getattr(r, c)) for c in cols])
