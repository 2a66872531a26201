"""Two-stage training: dense warmup, then the cosine sparsity curriculum.

Stage 1 trains on the dense budget with the plain flow-matching loss;
stage 2 anneals the per-iteration observation budget along a cosine from
dense to sparse while adding the mask-consistency variance penalty.
"""

from __future__ import annotations

import math
import time

import numpy as np

from . import autodiff as ad
from .autodiff import GradTape, NonFiniteError, Tensor, backward
from .optim import AdamState, adam_step
from .sensing import sample_observation_set


def casc_budget(k, k_total, budget_max, budget_min):
    """Cosine-annealed observation budget at iteration k of k_total."""
    if not 0 <= k <= k_total:
        raise ValueError(f"iteration {k} outside [0, {k_total}]")
    frac = 0.5 * (1.0 + math.cos(math.pi * k / k_total)) if k_total else 1.0
    return int(round(budget_min + (budget_max - budget_min) * frac))


def warm_restart_lr(epoch, lr0, lr_min, first_cycle, mult=2):
    """Cosine-annealing learning rate with period-doubling warm restarts."""
    start, length = 0, first_cycle
    while epoch >= start + length:
        start += length
        length *= mult
    frac = (epoch - start) / length
    return lr_min + 0.5 * (lr0 - lr_min) * (1.0 + math.cos(math.pi * frac))


class FlowBatch:
    """Linear-interpolant batch: x_t = (1-t) x0 + t x1, target x1 - x0."""

    def __init__(self, x1, rng):
        b = x1.shape[0]
        self.x1 = x1.astype(np.float32)
        self.x0 = rng.standard_normal(x1.shape).astype(np.float32)
        self.t = rng.random(b).astype(np.float32)
        tb = self.t[:, None, None]
        self.x_t = (1.0 - tb) * self.x0 + tb * self.x1
        self.target = self.x1 - self.x0


def cfm_loss(model, batch, obs_list, rng=None, training=True):
    """Mean squared error between predicted and target velocities."""
    cond = model.encode(obs_list)
    xt = Tensor(batch.x_t[..., None])
    v = model.velocity(xt, batch.t, cond, rng=rng, training=training)
    diff = ad.sub(v, Tensor(batch.target[..., None]))
    return ad.mean(ad.mul(diff, diff))


def velocity_variance(v, n_fields, k_masks, across_batch=False):
    """Mean per-pixel variance of velocities across observation masks.

    v is the (n_fields * k_masks, H, W, 1) velocity Tensor laid out
    field-major. With across_batch, the variance is taken over the whole
    row dimension instead (the ablation form).
    """
    b = v.shape[0]
    hw = v.shape[1] * v.shape[2]
    flat = ad.reshape(v, (b, hw))
    if across_batch:
        return ad.mean(ad.variance(flat, axis=0, ddof=1))
    grouped = ad.reshape(flat, (n_fields, k_masks, hw))
    return ad.mean(ad.variance(grouped, axis=1, ddof=1))


def masked_cfm_loss(model, batch, obs_groups, lambda_var, rng=None,
                    across_batch=False):
    """CFM loss over all masks plus the weighted mask-variance penalty.

    obs_groups is a list of k_masks observation sets per field; the batch
    rows are repeated field-major to match.
    """
    n_fields = batch.x1.shape[0]
    k_masks = len(obs_groups[0])
    flat_obs = [o for group in obs_groups for o in group]
    rep = np.repeat(np.arange(n_fields), k_masks)
    xt = Tensor(batch.x_t[rep][..., None])
    cond = model.encode(flat_obs)
    v = model.velocity(xt, batch.t[rep], cond, rng=rng, training=True)
    diff = ad.sub(v, Tensor(batch.target[rep][..., None]))
    loss = ad.mean(ad.mul(diff, diff))
    if lambda_var > 0 and k_masks >= 2:
        var = velocity_variance(v, n_fields, k_masks, across_batch)
        loss = ad.add(loss, ad.scale(var, lambda_var))
    return loss


def _probe_rmse(model, dataset, cfg, train_cfg):
    """Validation RMSE at the frozen probe budget (cheap, rank-only)."""
    from .sampling import integrate

    _, val_idx = dataset.split(train_cfg.val_fraction)
    if len(val_idx) == 0:
        return float("nan")
    idx = val_idx[:train_cfg.val_samples]
    errs = []
    for j, i in enumerate(idx):
        rng = np.random.default_rng(np.random.SeedSequence([train_cfg.seed, 7700, j]))
        obs = sample_observation_set(dataset.obs[i], train_cfg.val_budget, rng,
                                     stats=dataset.obs_stats)
        cond = model.encode([obs] * train_cfg.val_members)
        x0 = rng.standard_normal(
            (train_cfg.val_members,) + dataset.grid).astype(np.float32)
        fields = integrate(model, cond, x0, train_cfg.val_steps)
        mean_norm = fields.mean(axis=0)
        truth_norm = (dataset.fields[i] - dataset.field_stats.loc[0]) \
            / dataset.field_stats.scale[0]
        errs.append(float(np.sqrt(np.mean((mean_norm - truth_norm) ** 2))))
    return float(np.mean(errs))


def _snapshot(params):
    return {k: p.data.copy() for k, p in params.items()}


def _restore(params, snap):
    for k, p in params.items():
        p.data[...] = snap[k]


def train(dataset, model, cfg, log_cb=None, checkpoint_cb=None):
    """Run both stages; returns the training log (list of dict rows).

    The model is trained in place; the best-validation parameters are
    restored at the end. log_cb receives each epoch row; checkpoint_cb
    (params, label) is invoked periodically and for 'best'/'final'.
    """
    train_idx, _ = dataset.split(cfg.val_fraction)
    fields_norm = dataset.normalized_fields()[train_idx]
    n_train = len(train_idx)
    h, w = dataset.grid
    budget_max = cfg.budget_max if cfg.budget_max else (h * w) // 4
    budget_min = cfg.budget_min
    if budget_min > budget_max:
        raise ValueError(f"budget_min {budget_min} > budget_max {budget_max}")

    state = AdamState(model.params, lr=cfg.lr)
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 11]))
    drop_rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 13]))

    log = []
    best = {"rmse": float("inf"), "snap": _snapshot(model.params)}
    last_good = _snapshot(model.params)
    recoveries = 0
    lr_scale = 1.0
    total_epochs = cfg.stage1_epochs + cfg.stage2_epochs
    steps_per_epoch = max(1, n_train // cfg.batch)
    stage2_total = max(1, cfg.stage2_epochs * steps_per_epoch)
    stage2_k = 0
    t_start = time.time()

    for epoch in range(total_epochs):
        stage = 1 if epoch < cfg.stage1_epochs else 2
        lr = warm_restart_lr(epoch, cfg.lr, cfg.lr_min, cfg.restart_epochs) * lr_scale
        order = rng.permutation(n_train)
        epoch_losses = []
        budget = budget_max
        for step in range(steps_per_epoch):
            take = order[step * cfg.batch:(step + 1) * cfg.batch]
            if len(take) == 0:
                continue
            x1 = fields_norm[take]
            batch = FlowBatch(x1, rng)
            if stage == 1:
                budget = budget_max
                k_masks, lam = 1, 0.0
            else:
                if cfg.uniform_budget_ablation:
                    budget = int(rng.integers(budget_min, budget_max + 1))
                else:
                    budget = casc_budget(stage2_k, stage2_total, budget_max, budget_min)
                stage2_k += 1
                k_masks, lam = cfg.k_masks, cfg.lambda_var
            obs_groups = [
                [sample_observation_set(dataset.obs[train_idx[i]], budget, rng,
                                        noise_sigma=cfg.noise_sigma,
                                        stats=dataset.obs_stats)
                 for _ in range(k_masks)]
                for i in take]
            try:
                model.params.zero_grads()
                with GradTape() as tape:
                    if k_masks == 1:
                        loss = cfm_loss(model, batch, [g[0] for g in obs_groups],
                                        rng=drop_rng, training=True)
                    else:
                        loss = masked_cfm_loss(model, batch, obs_groups, lam,
                                               rng=drop_rng,
                                               across_batch=cfg.variance_across_batch)
                    loss_val = float(loss.data)
                    if not np.isfinite(loss_val):
                        raise NonFiniteError("loss is not finite")
                    backward(tape, loss)
                adam_step(model.params, state, lr=lr, clip=cfg.grad_clip)
            except NonFiniteError as exc:
                recoveries += 1
                if recoveries > cfg.max_recoveries:
                    raise NonFiniteError(
                        f"training diverged {recoveries} times; giving up: {exc}")
                _restore(model.params, last_good)
                lr_scale *= 0.5
                lr *= 0.5
                continue
            epoch_losses.append(loss_val)
        last_good = _snapshot(model.params)

        val_rmse = _probe_rmse(model, dataset, model.cfg, cfg)
        row = {"epoch": epoch, "stage": stage,
               "loss": float(np.mean(epoch_losses)) if epoch_losses else None,
               "val_rmse": val_rmse, "budget": int(budget), "lr": lr,
               "elapsed_s": round(time.time() - t_start, 2)}
        log.append(row)
        if log_cb:
            log_cb(row)
        if np.isfinite(val_rmse) and val_rmse < best["rmse"]:
            best = {"rmse": val_rmse, "snap": _snapshot(model.params)}
            if checkpoint_cb:
                checkpoint_cb(model.params, "best")
        if checkpoint_cb and (epoch + 1) % cfg.checkpoint_every == 0:
            checkpoint_cb(model.params, f"epoch{epoch + 1}")

    if np.isfinite(best["rmse"]):
        _restore(model.params, best["snap"])
    if checkpoint_cb:
        checkpoint_cb(model.params, "final")
    return log
