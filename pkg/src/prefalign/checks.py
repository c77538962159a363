"""Numerical identity checks tying the losses to their closed forms.

Each check returns (name, passed, detail). The CLI's check-theory
subcommand and the acceptance tests both run these, so a tolerance
lives in exactly one place.
"""

from __future__ import annotations

import math

import numpy as np

from . import autodiff as ad
from .autodiff import backward, finite_diff, relative_error
from .data import InputContext, PreferenceSample
from .losses import (
    DpoConfig,
    bt_probability,
    dpo_logit,
    dpo_logit_noref,
    dpo_loss,
    implicit_reward,
    per_token_kl,
    sft_loss,
)
from .model import init_params
from .theory import RatioPoint, dpo_loss_t, dpo_partials, update_rate_ratio

__all__ = ["tiny_instance", "run_all_checks", "CHECKS"]

# tiny-instance geometry: smallest shapes the model contract allows
_V, _D, _K = 16, 8, 4


def tiny_instance(seed, seq_len=3):
    """Random policy/reference pair with one preference sample."""
    rng = np.random.default_rng(seed)
    policy = init_params(_V, _D, _K, n_blocks=1, seed=seed, scale=0.5)
    reference = init_params(_V, _D, _K, n_blocks=1, seed=seed + 10_000, scale=0.5, requires_grad=False)
    context = InputContext(rng.normal(size=_K), list(rng.integers(0, _V, size=2)))
    chosen = [int(t) for t in rng.integers(0, _V, size=seq_len)]
    rejected = [int(t) for t in rng.integers(0, _V, size=seq_len)]
    if rejected == chosen:
        rejected[0] = (rejected[0] + 1) % _V
    sample = PreferenceSample(context, chosen, rejected)
    return policy, reference, sample


def check_logit_sft_identity(seeds=200, tol=1e-10):
    """p'_dpo + (L_sft(y_c) - L_sft(y_r)) == 0 with full masks."""
    worst = 0.0
    for s in range(seeds):
        policy, _, sample = tiny_instance(s)
        p = dpo_logit_noref(policy, sample).item()
        l_c = sft_loss(policy, sample.context, sample.chosen).item()
        l_r = sft_loss(policy, sample.context, sample.rejected).item()
        worst = max(worst, abs(p + (l_c - l_r)))
    return worst <= tol, f"max |p'_dpo + dL_sft| = {worst:.3e} (tol {tol:g})"


def check_frozen_reference_gradients(seeds=100, tol=1e-10):
    """grad of dpo_logit equals grad of dpo_logit_noref: the reference
    contributes constants only."""
    worst = 0.0
    for s in range(seeds):
        policy, reference, sample = tiny_instance(s)
        cfg = DpoConfig(beta=0.1, reference=reference)
        g_ref = backward(dpo_logit(policy, cfg, sample), policy.tensors())
        g_noref = backward(dpo_logit_noref(policy, sample), policy.tensors())
        for t in policy.tensors():
            worst = max(worst, float(np.max(np.abs(g_ref[t] - g_noref[t]))))
    return worst <= tol, f"max |grad diff| = {worst:.3e} (tol {tol:g})"


def check_gradient_decomposition(seeds=100, tol=1e-6):
    """grad dpo_loss == beta * sigma(-beta p_dpo) * (grad sft_c - grad sft_r)."""
    worst = 0.0
    for s in range(seeds):
        policy, reference, sample = tiny_instance(s)
        beta = 0.1 + 0.4 * (s % 5) / 5.0
        cfg = DpoConfig(beta=beta, reference=reference)
        p = dpo_logit(policy, cfg, sample).item()
        scale = beta / (1.0 + math.exp(beta * p))  # beta * sigma(-beta p)
        g_dpo = backward(dpo_loss(policy, cfg, sample), policy.tensors())
        g_c = backward(sft_loss(policy, sample.context, sample.chosen), policy.tensors())
        g_r = backward(sft_loss(policy, sample.context, sample.rejected), policy.tensors())
        for t in policy.tensors():
            worst = max(worst, relative_error(g_dpo[t], scale * (g_c[t] - g_r[t])))
    return worst <= tol, f"max componentwise rel err = {worst:.3e} (tol {tol:g})"


def check_losses_vs_finite_diff(seeds=100, tol=1e-5, eps=1e-4):
    """backward matches the central-difference oracle for every loss."""
    worst = 0.0
    for s in range(seeds):
        policy, reference, sample = tiny_instance(s)
        cfg = DpoConfig(beta=0.2, reference=reference)
        tensors = policy.tensors()
        losses = {
            "sft": lambda: sft_loss(policy, sample.context, sample.chosen),
            "dpo": lambda: dpo_loss(policy, cfg, sample),
            "kl": lambda: per_token_kl(policy, reference, sample.context, sample.chosen),
        }
        for make in losses.values():
            g_b = backward(make(), tensors)
            g_fd = finite_diff(lambda: make().item(), tensors, eps=eps)
            for t in tensors:
                # floor=1e-6: below that the FD oracle's roundoff dominates
                worst = max(worst, relative_error(g_b[t], g_fd[t], floor=1e-6))
    return worst <= tol, f"max rel err vs finite differences = {worst:.3e} (tol {tol:g})"


def check_update_rate_ratio(points=1000, tol=1e-10, seed=0):
    """|dL/dt1 / dL/dt2| == t2/t1 over a random sweep of (t1, t2, beta)."""
    rng = np.random.default_rng(seed)
    betas = [0.1, 0.5, 1.0, 2.0]
    worst = 0.0
    for i in range(points):
        pt = RatioPoint(float(rng.uniform(0.05, 20.0)), float(rng.uniform(0.05, 20.0)),
                        betas[i % len(betas)])
        worst = max(worst, abs(update_rate_ratio(pt) - pt.t2 / pt.t1))
    return worst <= tol, f"max |ratio - t2/t1| = {worst:.3e} (tol {tol:g})"


def check_partials_vs_finite_diff(points=200, tol=1e-7, seed=1):
    rng = np.random.default_rng(seed)
    h = 1e-6
    worst = 0.0
    for i in range(points):
        pt = RatioPoint(float(rng.uniform(0.2, 5.0)), float(rng.uniform(0.2, 5.0)),
                        [0.1, 0.5, 1.0, 2.0][i % 4])
        d1, d2 = dpo_partials(pt)
        fd1 = (dpo_loss_t(RatioPoint(pt.t1 + h, pt.t2, pt.beta))
               - dpo_loss_t(RatioPoint(pt.t1 - h, pt.t2, pt.beta))) / (2 * h)
        fd2 = (dpo_loss_t(RatioPoint(pt.t1, pt.t2 + h, pt.beta))
               - dpo_loss_t(RatioPoint(pt.t1, pt.t2 - h, pt.beta))) / (2 * h)
        worst = max(worst, relative_error(d1, fd1), relative_error(d2, fd2))
    return worst <= tol, f"max rel err of partials = {worst:.3e} (tol {tol:g})"


def check_closed_form_anchors():
    """ln 2 at policy==reference; L ln V for a uniform model; KL(pi,pi)=0."""
    policy, _, sample = tiny_instance(7)
    frozen = policy.clone(requires_grad=False)
    cfg = DpoConfig(beta=0.1, reference=frozen)
    e1 = abs(dpo_loss(policy, cfg, sample).item() - math.log(2.0))

    uniform = init_params(_V, _D, _K, n_blocks=1, seed=0, scale=0.0)
    for t in uniform.tensors():
        t.values[...] = 0.0
    L = len(sample.chosen)
    e2 = abs(sft_loss(uniform, sample.context, sample.chosen).item() - L * math.log(_V))

    e3 = abs(per_token_kl(policy, frozen, sample.context, sample.chosen).item())
    ok = e1 <= 1e-12 and e2 <= 1e-10 and e3 == 0.0
    return ok, f"|dpo-ln2|={e1:.3e} (tol 1e-12), |sft-LlnV|={e2:.3e} (tol 1e-10), kl={e3:.3e} (exact 0)"


def check_softmax_row_gradient(seeds=50, tol=1e-12):
    """Cross-entropy gradients through a softmax row sum to zero."""
    rng = np.random.default_rng(0)
    worst = 0.0
    for _ in range(seeds):
        logits = ad.Tensor(rng.normal(size=(4, _V)), requires_grad=True)
        targets = [int(t) for t in rng.integers(0, _V, size=4)]
        loss = -ad.tsum(ad.take_along_rows(ad.log_softmax(logits), targets))
        g = backward(loss, [logits])[logits]
        worst = max(worst, float(np.max(np.abs(g.sum(axis=1)))))
    return worst <= tol, f"max |row grad sum| = {worst:.3e} (tol {tol:g})"


def check_implicit_reward_identity(seeds=100, tol=1e-10):
    """BT probability of the two implicit rewards equals sigma(beta p_dpo)."""
    worst = 0.0
    for s in range(seeds):
        policy, reference, sample = tiny_instance(s)
        cfg = DpoConfig(beta=0.3, reference=reference)
        r_c = implicit_reward(policy, cfg, sample.context, sample.chosen).item()
        r_r = implicit_reward(policy, cfg, sample.context, sample.rejected).item()
        p = dpo_logit(policy, cfg, sample).item()
        sigma = 1.0 / (1.0 + math.exp(-cfg.beta * p))
        worst = max(worst, abs(bt_probability(r_c, r_r) - sigma))
    return worst <= tol, f"max |BT - sigma(beta p)| = {worst:.3e} (tol {tol:g})"


CHECKS = [
    ("logit-sft-identity", check_logit_sft_identity),
    ("frozen-reference-gradients", check_frozen_reference_gradients),
    ("gradient-decomposition", check_gradient_decomposition),
    ("losses-vs-finite-diff", check_losses_vs_finite_diff),
    ("update-rate-ratio", check_update_rate_ratio),
    ("partials-vs-finite-diff", check_partials_vs_finite_diff),
    ("closed-form-anchors", check_closed_form_anchors),
    ("softmax-row-gradient", check_softmax_row_gradient),
    ("implicit-reward-identity", check_implicit_reward_identity),
]


def run_all_checks(seeds=None):
    """Run every identity check; `seeds` overrides the per-check default
    instance count where applicable."""
    results = []
    for name, fn in CHECKS:
        if seeds is not None and "seeds" in fn.__code__.co_varnames[:fn.__code__.co_argcount]:
            ok, detail = fn(seeds=seeds)
        else:
            ok, detail = fn()
        results.append((name, ok, detail))
    return results
