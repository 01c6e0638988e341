"""Unified single-stage training: diffusion loss + zeta * sequence-model loss.

Both parameter groups are updated jointly from the first step; the diffusion
loss conditions on the newest coarse action so its gradient reaches the
sequence model through the condition path even at zeta = 0.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import DArray
from .bundle import fresh_bundle, save_bundle
from .diffusion import diffusion_loss, vp_schedule
from .dt3 import ContextBatch, predict_coarse_actions_batch
from .envs import make_env, make_env_spec, rollout, normalized_score
from .config import EvalConfig


class TrainingAborted(RuntimeError):
    """Raised when the loss turns non-finite; the last checkpoint survives."""


@dataclass
class MetricsLog:
    updates: list = field(default_factory=list)   # (idx, l_diff, l_dt3, l_total)
    evals: list = field(default_factory=list)     # (epoch, mean_ret, succ, norm)

    def log_update(self, idx, l_diff, l_dt3, l_total):
        for v in (l_diff, l_dt3, l_total):
            if not np.isfinite(v):
                raise TrainingAborted(f"non-finite loss at update {idx}")
        self.updates.append((idx, float(l_diff), float(l_dt3), float(l_total)))

    def log_eval(self, epoch, mean_ret, succ, norm):
        self.evals.append((epoch, float(mean_ret), float(succ), float(norm)))

    @classmethod
    def read_csv(cls, out_dir):
        log = cls()
        with open(os.path.join(out_dir, "updates.csv"), newline="") as fh:
            for row in list(csv.reader(fh))[1:]:
                log.updates.append((int(row[0]), float(row[1]),
                                    float(row[2]), float(row[3])))
        evals_path = os.path.join(out_dir, "evals.csv")
        if os.path.exists(evals_path):
            with open(evals_path, newline="") as fh:
                for row in list(csv.reader(fh))[1:]:
                    log.evals.append((int(row[0]), float(row[1]),
                                      float(row[2]), float(row[3])))
        return log

    def write_csv(self, out_dir):
        with open(os.path.join(out_dir, "updates.csv"), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["update_idx", "l_diff", "l_dt3", "l_total"])
            w.writerows(
                (i, repr(a), repr(b), repr(c)) for i, a, b, c in self.updates
            )
        with open(os.path.join(out_dir, "evals.csv"), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "mean_return", "success_rate", "norm_score"])
            w.writerows(
                (e, repr(a), repr(b), repr(c)) for e, a, b, c in self.evals
            )


# ---------------------------------------------------------------------------
# Losses
# ---------------------------------------------------------------------------

def dt3_loss(pred, target, pad_mask, a_max, norm="l1"):
    """Masked sequence action loss, scaled by 1 / (K * a_max).

    pred/target: (K, d_a) or (B, K, d_a) with pad_mask (K,) or (B, K);
    batched inputs average over the batch.
    """
    if a_max <= 0:
        raise ValueError("a_max must be positive")
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ad.ShapeError(f"pred {pred.shape} vs target {target.shape}")
    pad_mask = np.asarray(pad_mask, dtype=bool)
    k = pred.shape[-2]
    batch = pred.shape[0] if pred.ndim == 3 else 1
    diff = pred - DArray(target)
    penalty = ad.absval(diff) if norm == "l1" else ad.square(diff)
    masked = ad.mul(penalty, DArray(pad_mask[..., None].astype(np.float64)))
    return ad.scale(ad.sum_all(masked), 1.0 / (k * a_max * batch))


def unified_loss(l_diff, l_dt3, zeta):
    return l_diff + ad.scale(l_dt3, zeta)


# ---------------------------------------------------------------------------
# Optimizer
# ---------------------------------------------------------------------------

class AdamW:
    """Adaptive-moment update with decoupled weight decay."""

    def __init__(self, params, lr, betas=(0.9, 0.999), eps=1e-8,
                 weight_decay=0.0):
        self.params = list(params)
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self, grads=None):
        grads = [p.grad for p in self.params] if grads is None else grads
        for g in grads:
            if g is None or not np.all(np.isfinite(g)):
                raise TrainingAborted("non-finite or missing gradient")
        self.t += 1
        bc1 = 1.0 - self.b1 ** self.t
        bc2 = 1.0 - self.b2 ** self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            if self.weight_decay:
                p.data -= self.lr * self.weight_decay * p.data
            p.data -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


def clip_grad_norm(params, max_norm):
    total = np.sqrt(sum(float((p.grad ** 2).sum()) for p in params))
    if total > max_norm > 0:
        scale = max_norm / (total + 1e-12)
        for p in params:
            p.grad *= scale
    return total


# ---------------------------------------------------------------------------
# Batch sampling
# ---------------------------------------------------------------------------

def sample_context_batch(store, k, batch_size, rng, spec):
    """Subtrajectory batch: trajectory chosen proportional to its length,
    end index uniform; windows near episode start get a zero-padded prefix."""
    lengths = np.array([t.length for t in store.trajectories], dtype=np.float64)
    probs = lengths / lengths.sum()
    b = batch_size
    rtgs = np.zeros((b, k))
    states = np.zeros((b, k, store.d_s))
    actions = np.zeros((b, k, store.d_a))
    timesteps = np.zeros((b, k), dtype=np.int64)
    mask = np.zeros((b, k), dtype=bool)
    targets = np.zeros((b, k, store.d_a))
    for j in range(b):
        ti = rng.choice(len(store.trajectories), p=probs)
        traj = store.trajectories[ti]
        end = int(rng.integers(traj.length))          # inclusive end index
        start = max(0, end - k + 1)
        n = end - start + 1
        pad = k - n
        rtg = traj.rtgs
        rtgs[j, pad:] = rtg[start:end + 1] / store.max_abs_return
        states[j, pad:] = (traj.states[start:end + 1] - store.state_mean) \
            / store.state_std
        actions[j, pad:] = traj.actions[start:end + 1]
        timesteps[j, pad:] = np.arange(start, end + 1)
        mask[j, pad:] = True
        targets[j, pad:] = traj.actions[start:end + 1]
    # The current step's action is unknown at prediction time.
    actions[:, -1, :] = 0.0
    batch = ContextBatch(rtgs, states, actions, timesteps, mask)
    return batch, targets


# ---------------------------------------------------------------------------
# Training loop
# ---------------------------------------------------------------------------

def evaluate_bundle(bundle, episodes, seed, rtg_scale=1.0, mode="drdt3"):
    """Mean return, success rate, and normalized score over seeded episodes."""
    spec = make_env_spec(bundle.env_id)
    returns = []
    for ep in range(episodes):
        env = make_env(bundle.env_id)
        rng = np.random.default_rng((seed, ep))
        ret, _, _ = rollout(
            bundle, env, EvalConfig(rtg_scale=rtg_scale, episodes=1, seed=seed),
            rng, mode=mode,
        )
        returns.append(ret)
    returns = np.array(returns)
    success = float(np.mean(returns > 0.0)) if spec.reward_kind == "sparse" \
        else float(np.mean(returns >= spec.expert_score))
    return float(returns.mean()), success, normalized_score(returns.mean(), spec)


def train(config, store, out_dir=None, log_every=1, eval_each_epoch=True,
          bundle=None, log=None):
    """Joint single-stage training per the unified objective.

    Returns (PolicyBundle, MetricsLog). With objective="dt3_only" the loss is
    zeta * L_dt3 alone and the diffusion parameters are left at
    initialization; combined with condition_on_rtg=False this is a
    behavior-cloning-style ablation (no return conditioning at all).

    Pass an existing (bundle, log) pair to resume from a checkpoint:
    update indices and epoch numbers continue from where the log stops.
    """
    config.validate()
    if store.count == 0:
        raise ValueError("dataset is empty")
    spec = make_env_spec(store.env_id)
    if store.max_length() > config.max_episode_len:
        raise ValueError(
            f"max_episode_len {config.max_episode_len} is shorter than the "
            f"longest trajectory ({store.max_length()})"
        )
    resuming = bundle is not None
    log = log if log is not None else MetricsLog()
    update_idx = log.updates[-1][0] + 1 if log.updates else 0
    epoch0 = update_idx // config.updates_per_epoch
    rng = np.random.default_rng(
        config.seed if update_idx == 0 else (config.seed, update_idx)
    )
    if not resuming:
        bundle = fresh_bundle(config, store)
    sched = vp_schedule(config.n_diffusion_steps, config.beta_min,
                        config.beta_max)
    if config.objective == "dt3_only":
        # Leave the untouched diffusion parameters at initialization
        # (weight decay would otherwise shrink them without gradients).
        params = [p for name, p in bundle.named_params()
                  if name.startswith("dt3.")]
    else:
        params = bundle.parameters()
    opt = AdamW(params, config.learning_rate,
                weight_decay=config.weight_decay)
    k = config.context_len
    n = config.n_diffusion_steps

    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)

    def checkpoint():
        if out_dir is not None:
            save_bundle(bundle, os.path.join(out_dir, "bundle.drdt3"))
            log.write_csv(out_dir)

    for epoch in range(epoch0, epoch0 + config.epochs):
        for _ in range(config.updates_per_epoch):
            batch, targets = sample_context_batch(
                store, k, config.batch_size, rng, spec
            )
            if not config.condition_on_rtg:
                batch.rtgs[:] = 0.0
            pred = predict_coarse_actions_batch(batch, bundle.dt3)
            l_dt3 = dt3_loss(pred, targets, batch.pad_mask, spec.a_max,
                             norm=config.dt3_loss_norm)

            if config.objective == "unified":
                # Condition only on the newest coarse action of each window.
                cond = ad.reshape(
                    pred[:, k - 1, :], (config.batch_size, store.d_a)
                )
                a0 = targets[:, -1, :]
                i = rng.integers(1, n + 1, size=config.batch_size)
                eps = rng.standard_normal(a0.shape)
                l_diff = diffusion_loss(a0, cond, i, eps, bundle.noise, sched)
                loss = unified_loss(l_diff, l_dt3, config.zeta)
                l_diff_val = float(l_diff.data)
            else:
                loss = ad.scale(l_dt3, config.zeta)
                l_diff_val = 0.0

            ad.zero_grads(params)
            ad.backward(loss)
            clip_grad_norm(params, config.grad_clip)
            try:
                opt.step()
                log.log_update(update_idx, l_diff_val, float(l_dt3.data),
                               float(loss.data))
            except TrainingAborted:
                checkpoint()
                raise
            update_idx += 1

        if eval_each_epoch and config.eval_episodes > 0:
            mean_ret, succ, norm = evaluate_bundle(
                bundle, config.eval_episodes, seed=config.seed,
                rtg_scale=config.rtg_scale,
                mode="drdt3" if config.objective == "unified" else "dt3-only",
            )
            log.log_eval(epoch, mean_ret, succ, norm)
        checkpoint()

    return bundle, log
