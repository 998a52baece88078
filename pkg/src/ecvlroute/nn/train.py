"""Training loop: BCE on logits, Adam, one-cycle LR, per-epoch threshold
calibration on the validation split.

After every epoch the model is scored on the validation set via the RCS grid
search over the decision threshold; the epoch snapshot with the best
(threshold, RCS) pair is the one returned.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ..evaluation import grid_search_tau
from ..features import FeatureBundle, Normalizer
from ..rsd import PairRecord, ScenarioConfig
from .backend import kernels as K
from .model import RouterModel, VariantConfig, make_batch
from .state import RouterState

log = logging.getLogger(__name__)


class TrainError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 50
    batch_size: int = 64
    peak_lr: float = 1e-3
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    grad_clip: float | None = None

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1 or self.peak_lr <= 0:
            raise ValueError("epochs >= 1, batch_size >= 1, peak_lr > 0 required")


@dataclass(frozen=True)
class EpochStats:
    epoch: int
    loss: float
    tau_star: float
    rcs_star: float


def one_cycle_lr(step: int, total_steps: int, peak: float) -> float:
    """Linear warm-up from peak/25 over the first 30% of steps, then cosine
    decay to peak/1e4."""
    if total_steps <= 0:
        raise ValueError("total_steps must be positive")
    if not (0 <= step < total_steps):
        raise ValueError(f"step {step} outside [0, {total_steps})")
    if total_steps == 1:
        return peak
    start = peak / 25.0
    floor = peak / 1e4
    warm = max(1, int(round(0.3 * total_steps)))
    if step <= warm:
        return start + (peak - start) * (step / warm)
    span = (total_steps - 1) - warm
    progress = (step - warm) / span if span > 0 else 1.0
    return floor + (peak - floor) * 0.5 * (1.0 + math.cos(math.pi * progress))


class Adam:
    def __init__(self, model: RouterModel, cfg: TrainConfig):
        self.cfg = cfg
        self.m = {k: np.zeros_like(v) for k, v in model.params.items()}
        self.v = {k: np.zeros_like(v) for k, v in model.params.items()}
        self.t = 0

    def step(self, model: RouterModel, grads, lr: float):
        self.t += 1
        if self.cfg.grad_clip is not None:
            total = math.sqrt(sum(float((g * g).sum()) for g in grads.values()))
            if total > self.cfg.grad_clip:
                scale = self.cfg.grad_clip / (total + 1e-12)
                grads = {k: g * scale for k, g in grads.items()}
        for name, p in model.params.items():
            K.adam_step(p.reshape(-1), np.ascontiguousarray(grads[name].reshape(-1)),
                        self.m[name].reshape(-1), self.v[name].reshape(-1),
                        lr, self.cfg.beta1, self.cfg.beta2, self.cfg.eps, self.t)


def train(
    variant: VariantConfig,
    train_bundles: Sequence[FeatureBundle],
    train_labels: Sequence[int],
    valid_bundles: Sequence[FeatureBundle],
    valid_pairs: Sequence[PairRecord],
    config: TrainConfig,
    scenario: ScenarioConfig,
    k_text: int,
    k_image: int,
    normalizer: Normalizer | None = None,
    mask: tuple[int, int, int] = (1, 1, 1),
) -> RouterState:
    """Train a router variant and return the best validated snapshot.

    Deterministic for fixed (data, config, seed): batch shuffling and dropout
    draw from generators derived from the seed alone.
    """
    if not train_bundles:
        raise TrainError("empty train set")
    if len(train_bundles) != len(train_labels):
        raise TrainError("labels do not align with train bundles")
    y_all = np.asarray(train_labels, dtype=np.float64)
    if y_all.min() == y_all.max():
        log.warning("degenerate training labels (all %d)", int(y_all[0]))

    model = RouterModel(variant, k_text, k_image, seed=config.seed)
    log.info("training %s variant, %d parameters", variant.variant, model.param_count())
    optimizer = Adam(model, config)
    shuffle_rng = np.random.default_rng(np.random.SeedSequence([config.seed, 1]))
    dropout_rng = np.random.default_rng(np.random.SeedSequence([config.seed, 2]))

    n = len(train_bundles)
    batch_all = make_batch(train_bundles, k_text, k_image)
    steps_per_epoch = math.ceil(n / config.batch_size)
    total_steps = steps_per_epoch * config.epochs

    best = None  # (rcs_star, tau_star, params, epoch)
    history: list[EpochStats] = []
    step = 0
    for epoch in range(config.epochs):
        perm = shuffle_rng.permutation(n)
        epoch_loss = 0.0
        for bi in range(steps_per_epoch):
            idx = perm[bi * config.batch_size:(bi + 1) * config.batch_size]
            batch = {k: np.ascontiguousarray(v[idx]) for k, v in batch_all.items()}
            logits, cache = model.forward(batch, train=True, rng=dropout_rng)
            loss, dlogits = K.sigmoid_bce(np.ascontiguousarray(logits),
                                          np.ascontiguousarray(y_all[idx]))
            if not math.isfinite(loss):
                raise TrainError(f"non-finite loss at epoch {epoch} batch {bi}")
            grads = model.backward(cache, dlogits)
            lr = one_cycle_lr(step, total_steps, config.peak_lr)
            optimizer.step(model, grads, lr)
            epoch_loss += loss * len(idx)
            step += 1
        epoch_loss /= n

        p_valid = model.predict_proba(valid_bundles)
        tau_star, rcs_star = grid_search_tau(p_valid, valid_pairs, scenario)
        history.append(EpochStats(epoch, epoch_loss, tau_star, rcs_star))
        if best is None or rcs_star > best[0]:
            best = (rcs_star, tau_star, model.clone_params(), epoch)
        log.debug("epoch %d loss %.4f tau* %.2f rcs* %.4f", epoch, epoch_loss,
                  tau_star, rcs_star)

    rcs_star, tau_star, params, best_epoch = best
    model.load_params(params)
    log.info("retained epoch %d snapshot: tau*=%.2f rcs*=%.4f", best_epoch,
             tau_star, rcs_star)
    return RouterState(
        model=model,
        tau=tau_star,
        scenario=scenario,
        history=history,
        normalizer=normalizer,
        mask=mask,
    )
