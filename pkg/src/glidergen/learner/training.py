"""Mini-batch training with Adam (or plain SGD) and linear KL warm-up."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .model import DivergenceError, LearnerConfig, LearnerParams, as_batch, init_params, loss_and_gradients

log = logging.getLogger(__name__)

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


@dataclass
class EpochRecord:
    epoch: int
    reconstruction: float
    kl: float
    total: float


@dataclass
class TrainResult:
    params: LearnerParams
    history: list = field(default_factory=list)
    checkpoints: dict = field(default_factory=dict)


def kl_schedule(epoch: int, config: LearnerConfig) -> float:
    """KL weight for a 1-based epoch: linear ramp over the warm-up fraction."""
    warm = math.ceil(config.kl_warmup * config.epochs)
    if warm <= 0:
        return config.kl_weight
    return config.kl_weight * min(1.0, epoch / warm)


class _Adam:
    def __init__(self, weights, lr):
        self.lr = lr
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in weights.items()}
        self.v = {k: np.zeros_like(v) for k, v in weights.items()}

    def step(self, weights, grads):
        self.t += 1
        c1 = 1.0 - ADAM_BETA1 ** self.t
        c2 = 1.0 - ADAM_BETA2 ** self.t
        for k, g in grads.items():
            m = self.m[k]
            v = self.v[k]
            m *= ADAM_BETA1
            m += (1.0 - ADAM_BETA1) * g
            v *= ADAM_BETA2
            v += (1.0 - ADAM_BETA2) * g * g
            weights[k] -= self.lr * (m / c1) / (np.sqrt(v / c2) + ADAM_EPS)


class _Sgd:
    def __init__(self, weights, lr):
        self.lr = lr

    def step(self, weights, grads):
        for k, g in grads.items():
            weights[k] -= self.lr * g


def _update_running(state, stats, momentum):
    for name, (mean, var) in stats.items():
        rm = state[f"{name}.running_mean"]
        rv = state[f"{name}.running_var"]
        rm *= momentum
        rm += (1.0 - momentum) * mean
        rv *= momentum
        rv += (1.0 - momentum) * var


def train(dataset, config: LearnerConfig, params: LearnerParams | None = None, progress=None) -> TrainResult:
    """Fit the VAE to normalized grids.

    Mini-batches are near-equal splits of a per-epoch permutation so no batch
    degenerates to a single sample.  Raises :class:`DivergenceError` carrying
    the last good checkpoint when a loss or gradient becomes non-finite.
    """
    x_all = as_batch(list(dataset) if not isinstance(dataset, np.ndarray) else dataset, config)
    n = len(x_all)
    if n == 0:
        raise ValueError("empty dataset")
    rng = np.random.default_rng(config.seed)
    params = init_params(config, seed=int(rng.integers(2 ** 63))) if params is None else params.copy()
    opt = (_Adam if config.optimizer == "adam" else _Sgd)(params.weights, config.learning_rate)
    n_batches = max(1, math.ceil(n / config.batch_size))
    result = TrainResult(params=params)
    last_good = params.copy()
    for epoch in range(1, config.epochs + 1):
        wkl = kl_schedule(epoch, config)
        perm = rng.permutation(n)
        sums = np.zeros(3)
        for bi, idx in enumerate(np.array_split(perm, n_batches)):
            noise_seed = int(rng.integers(2 ** 63))
            try:
                _, parts, grads, stats = loss_and_gradients(x_all[idx], params, noise_seed, kl_weight=wkl)
            except DivergenceError as exc:
                bad = None if exc.batch_index is None else int(idx[exc.batch_index])
                raise DivergenceError(f"divergence at epoch {epoch}, batch {bi}: {exc}",
                                      last_good=last_good, batch_index=bad) from exc
            opt.step(params.weights, grads)
            _update_running(params.state, stats, config.bn_momentum)
            sums += len(idx) * np.array([parts["reconstruction"], parts["kl"], parts["total"]])
        rec = EpochRecord(epoch, *(sums / n))
        result.history.append(rec)
        if not all(np.all(np.isfinite(v)) for v in params.weights.values()):
            raise DivergenceError(f"non-finite weights after epoch {epoch}", last_good=last_good)
        if config.checkpoint_every and epoch % config.checkpoint_every == 0:
            last_good = params.copy()
            result.checkpoints[epoch] = last_good
        if progress is not None:
            progress(rec)
        if epoch == 1 or epoch == config.epochs or epoch % max(1, config.epochs // 10) == 0:
            log.info("epoch %d recon %.4f kl %.4f total %.4f", epoch, rec.reconstruction, rec.kl, rec.total)
    return result
